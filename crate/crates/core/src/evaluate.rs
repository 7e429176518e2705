//! Held-out evaluation of a field against a dataset split.

use crate::dataset::{code_label, SceneDataset};
use crate::error::Result;
use crate::field::{argmax, Field};
use crate::geometry::{Camera, Vec3};
use crate::losses::MaskMatrix;
use crate::metrics::{average_precision, psnr, ssim};
use crate::render::{composite_ray, estimate_depth, for_chunks, mix_seed, pixel_rays, sample_rays, surface_scores, RenderOptions, RenderOutput};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub render: RenderOptions,
    pub delta_d: f64,
    pub ap_thresholds: Vec<f64>,
    /// Samples with emptiness above this count as deep-empty.
    pub deep_empty: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            render: RenderOptions { k_coarse: 32, k_fine: 32, jitter: true, seed: 0 },
            delta_d: 0.05,
            ap_thresholds: vec![0.5, 0.75, 0.9],
            deep_empty: 0.9,
        }
    }
}

/// Counts of deep-empty samples and of those whose hard code is the empty slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmptySpaceStats {
    pub deep_empty: usize,
    pub coded_empty: usize,
}

impl EmptySpaceStats {
    pub fn fraction(&self) -> f64 {
        if self.deep_empty == 0 {
            0.0
        } else {
            self.coded_empty as f64 / self.deep_empty as f64
        }
    }

    fn add(&mut self, o: EmptySpaceStats) {
        self.deep_empty += o.deep_empty;
        self.coded_empty += o.coded_empty;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrediction {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Vec3>,
    /// `pixels x (H + 1)` projected codes, residual in the empty slot.
    pub codes: MaskMatrix,
    pub depth: Vec<f64>,
}

impl ViewPrediction {
    /// Hard labels: `h` for slot `h - 1`, 0 for the empty slot.
    pub fn labels(&self) -> Vec<u16> {
        (0..self.codes.rows).map(|r| code_label(&self.codes.data[r * self.codes.cols..(r + 1) * self.codes.cols])).collect()
    }
}

/// Renders every pixel of `camera` (same seeds as `render_view`) and tallies
/// the deep-empty samples along the way.
pub fn predict_view<F: Field + ?Sized>(field: &F, camera: &Camera, opts: &EvalOptions) -> Result<(ViewPrediction, EmptySpaceStats)> {
    let h = field.num_objects();
    let code_len = field.code_len();
    let background = field.background();
    let rays: Vec<(usize, crate::geometry::Ray)> = pixel_rays(camera).into_iter().enumerate().collect();
    let per_pixel = for_chunks(rays, 256, |chunk| {
        let (idx, rays): (Vec<usize>, Vec<_>) = chunk.into_iter().unzip();
        let seeds: Vec<u64> = idx.iter().map(|i| mix_seed(opts.render.seed, *i as u64)).collect();
        let sampled = sample_rays(field, &rays, &opts.render, &seeds)?;
        let mut out = Vec::with_capacity(rays.len());
        for (ray, s) in rays.iter().zip(sampled) {
            let mut stats = EmptySpaceStats::default();
            let rendered = match s {
                Some((samples, values)) => {
                    let r = composite_ray(samples, &values, background, code_len);
                    let d = estimate_depth(&r.samples, &r.weights);
                    let scores = surface_scores(&r.samples, d, opts.delta_d)?;
                    for (e, v) in scores.empty.iter().zip(&values) {
                        if *e > opts.deep_empty {
                            stats.deep_empty += 1;
                            stats.coded_empty += usize::from(argmax(&v.code) == h);
                        }
                    }
                    r
                }
                None => RenderOutput::vacuum(background, code_len, ray.t_far),
            };
            out.push((rendered.color, rendered.code_hat, rendered.depth, stats));
        }
        Ok(out)
    })?;
    let mut stats = EmptySpaceStats::default();
    let mut codes = MaskMatrix::zeros(per_pixel.len(), code_len);
    let mut color = Vec::with_capacity(per_pixel.len());
    let mut depth = Vec::with_capacity(per_pixel.len());
    for (r, (c, code, d, s)) in per_pixel.into_iter().enumerate() {
        color.push(c);
        codes.data[r * code_len..(r + 1) * code_len].copy_from_slice(&code);
        depth.push(d);
        stats.add(s);
    }
    Ok((ViewPrediction { width: camera.width, height: camera.height, color, codes, depth }, stats))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over views.
    pub psnr: f64,
    /// Mean over views; `None` when the views are smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// `(threshold, AP in percent)`
    pub ap: Vec<(f64, f64)>,
    pub empty_space: EmptySpaceStats,
}

impl EvalReport {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap.iter().find(|(t, _)| (*t - threshold).abs() < 1e-12).map(|(_, a)| *a)
    }
}

pub fn evaluate_field<F: Field + ?Sized>(field: &F, data: &SceneDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(data.views.len());
    let mut psnr_sum = 0.0;
    let mut ssim_sum = Some(0.0);
    let mut empty_space = EmptySpaceStats::default();
    for v in &data.views {
        let (p, stats) = predict_view(field, &v.camera, opts)?;
        psnr_sum += psnr(&p.color, &v.color)?;
        ssim_sum = match (ssim_sum, ssim(&p.color, &v.color, p.width as usize, p.height as usize)) {
            (Some(acc), Ok(s)) => Some(acc + s),
            _ => None,
        };
        empty_space.add(stats);
        preds.push(p.codes);
    }
    let n = data.views.len().max(1) as f64;
    let gts = data.masks();
    let ap = opts
        .ap_thresholds
        .iter()
        .map(|t| Ok((*t, average_precision(&preds, &gts, *t)?)))
        .collect::<Result<_>>()?;
    Ok(EvalReport { psnr: psnr_sum / n, ssim: ssim_sum.map(|s| s / n), ap, empty_space })
}
