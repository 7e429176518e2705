//! Image quality and instance segmentation metrics.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::losses::MaskMatrix;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Domain(format!("image sizes differ or are empty: {} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (*x - *y).dot(*x - *y)).sum::<f64>() / (3 * a.len()) as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m > 0.0 { (-10.0 * m.log10()).min(PSNR_CAP) } else { PSNR_CAP })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w x h` plane.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut rows = vec![0.0; ow * h];
    for j in 0..h {
        for i in 0..ow {
            rows[j * ow + i] = (0..n).map(|t| k[t] * x[j * w + i + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for j in 0..oh {
        for i in 0..ow {
            out[j * ow + i] = (0..n).map(|t| k[t] * rows[(j + t) * ow + i]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// over valid window positions, averaged over the three channels.
pub fn ssim(a: &[Vec3], b: &[Vec3], width: usize, height: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != width * height {
        return Err(Error::Domain("SSIM inputs must share the stated shape".into()));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Domain(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, width, height, &k);
        let (my, _, _) = filter_valid(&y, width, height, &k);
        let (sxx, _, _) = filter_valid(&xx, width, height, &k);
        let (syy, _, _) = filter_valid(&yy, width, height, &k);
        let (sxy, ow, oh) = filter_valid(&xy, width, height, &k);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let vx = sxx[i] - mu_x * mu_x;
            let vy = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            acc += ((2.0 * mu_x * mu_y + C1) * (2.0 * cov + C2)) / ((mu_x * mu_x + mu_y * mu_y + C1) * (vx + vy + C2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / 3.0)
}

pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Binary masks of the solid channels of a `pixels x (H + 1)` code map,
/// thresholded strictly above 0.5; empty channels are dropped.
pub fn detections(codes: &MaskMatrix) -> Vec<Vec<bool>> {
    (0..codes.cols.saturating_sub(1))
        .map(|h| (0..codes.rows).map(|r| codes.get(r, h) > 0.5).collect::<Vec<bool>>())
        .filter(|m| m.iter().any(|v| *v))
        .collect()
}

/// Ground-truth instance masks of a label image, one per non-zero label.
pub fn gt_instances(labels: &[u16]) -> Vec<Vec<bool>> {
    let mut ids: Vec<u16> = labels.iter().copied().filter(|l| *l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().map(|id| labels.iter().map(|l| *l == id).collect()).collect()
}

/// Average precision in percent over detections pooled from all images.
///
/// Each detection is scored by its IoU with the best ground-truth instance
/// of its image. In descending score order, a detection is a true positive
/// when its highest-IoU still-unmatched ground truth reaches the threshold.
/// The precision envelope is integrated over every recall step.
pub fn average_precision(preds: &[MaskMatrix], gts: &[Vec<u16>], iou_threshold: f64) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::Domain("one prediction per ground-truth image required".into()));
    }
    struct Det {
        image: usize,
        ious: Vec<f64>,
        score: f64,
    }
    let mut dets = Vec::new();
    let mut gt_counts = Vec::with_capacity(gts.len());
    for (image, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.rows != g.len() {
            return Err(Error::Domain(format!("image {image}: prediction and labels differ in size")));
        }
        let gt = gt_instances(g);
        gt_counts.push(gt.len());
        for d in detections(p) {
            let ious: Vec<f64> = gt.iter().map(|m| mask_iou(&d, m)).collect();
            let score = ious.iter().copied().fold(0.0, f64::max);
            dets.push(Det { image, ious, score });
        }
    }
    let total_gt: usize = gt_counts.iter().sum();
    if total_gt == 0 {
        return Err(Error::Domain("average precision is undefined without ground-truth objects".into()));
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut matched: Vec<Vec<bool>> = gt_counts.iter().map(|n| vec![false; *n]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(dets.len());
    for (rank, d) in dets.iter().enumerate() {
        let best = d
            .ious
            .iter()
            .enumerate()
            .filter(|(j, iou)| !matched[d.image][*j] && **iou >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(b.1));
        if let Some((j, _)) = best {
            matched[d.image][j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..curve.len() {
        let (recall, _) = curve[i];
        if recall > prev_recall {
            let envelope = curve[i..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    Ok(100.0 * ap)
}

/// One-hot code map of a label image, for scoring labels as predictions.
pub fn labels_to_codes(labels: &[u16], h: usize) -> MaskMatrix {
    let mut m = MaskMatrix::zeros(labels.len(), h + 1);
    for (r, l) in labels.iter().enumerate() {
        let col = if *l == 0 { h } else { *l as usize - 1 };
        m.data[r * (h + 1) + col] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct summation over every window position, written independently of
    /// the separable filter.
    fn ssim_direct(a: &[Vec3], b: &[Vec3], w: usize, h: usize) -> f64 {
        let n = SSIM_WINDOW;
        let c = (n as f64 - 1.0) / 2.0;
        let mut g = vec![vec![0.0; n]; n];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        for ch in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=h - n {
                for x0 in 0..=w - n {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..n {
                        for dx in 0..n {
                            let wgt = g[dy][dx] / s;
                            let p = a[(y0 + dy) * w + x0 + dx][ch];
                            let q = b[(y0 + dy) * w + x0 + dx][ch];
                            mx += wgt * p;
                            my += wgt * q;
                            sxx += wgt * p * p;
                            syy += wgt * q * q;
                            sxy += wgt * p * q;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    acc += ((2.0 * mx * my + C1) * (2.0 * cov + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect()
    }

    #[test]
    fn psnr_examples() {
        let a = vec![Vec3::splat(0.5); 16];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b: Vec<Vec3> = a.iter().map(|c| *c + Vec3::splat(0.1)).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c: Vec<Vec3> = a.iter().map(|v| *v + Vec3::splat(0.01)).collect();
        assert!((psnr(&a, &c).unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &b[..4]).is_err());
    }

    #[test]
    fn ssim_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let (w, h) = (rng.gen_range(11..20), rng.gen_range(11..20));
            let a = random_image(&mut rng, w * h);
            let b: Vec<Vec3> = a.iter().map(|p| *p * 0.7 + Vec3::splat(rng.gen_range(0.0..0.3))).collect();
            let fast = ssim(&a, &b, w, h).unwrap();
            assert!((fast - ssim_direct(&a, &b, w, h)).abs() < 1e-6);
            assert!((fast - ssim(&b, &a, w, h).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 144);
        assert!((ssim(&a, &a, 12, 12).unwrap() - 1.0).abs() < 1e-12);
        let flat = vec![Vec3::splat(0.5); 144];
        assert!((ssim(&flat, &flat, 12, 12).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a[..100], &a[..100], 10, 10).is_err());
    }

    #[test]
    fn ap_examples() {
        let gt = vec![vec![1u16, 1, 0, 2, 2, 0, 3, 3]];
        let perfect = [labels_to_codes(&gt[0], 3)];
        for t in [0.5, 0.75, 0.9] {
            assert_eq!(average_precision(&perfect, &gt, t).unwrap(), 100.0);
        }
        let bg = [labels_to_codes(&[0; 8], 3)];
        assert_eq!(average_precision(&bg, &gt, 0.5).unwrap(), 0.0);
        assert!(average_precision(&bg, &[vec![0; 8]], 0.5).is_err());
    }

    #[test]
    fn ap_one_hit_one_miss_is_fifty() {
        // two objects; one channel reproduces object 1, another covers only empty pixels
        let gt = vec![vec![1u16, 1, 2, 2, 0, 0]];
        let pred = labels_to_codes(&[1, 1, 0, 0, 2, 2], 2);
        assert!((average_precision(&[pred], &gt, 0.75).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn ap_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let gt: Vec<Vec<u16>> = (0..3).map(|_| (0..40).map(|_| rng.gen_range(0..4)).collect()).collect();
            let preds: Vec<MaskMatrix> = gt
                .iter()
                .map(|g| {
                    let noisy: Vec<u16> = g.iter().map(|l| if rng.gen_bool(0.2) { rng.gen_range(0..4) } else { *l }).collect();
                    labels_to_codes(&noisy, 3)
                })
                .collect();
            let a = average_precision(&preds, &gt, 0.5).unwrap();
            let b = average_precision(&preds, &gt, 0.75).unwrap();
            let c = average_precision(&preds, &gt, 0.9).unwrap();
            assert!(a >= b && b >= c);
        }
    }
}
