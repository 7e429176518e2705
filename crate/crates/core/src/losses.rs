//! Object supervision: soft-IoU and cross-entropy association costs, optimal
//! mask association, the 2D object loss, the two empty-space losses on sample
//! codes, and the photometric loss. Every loss returns its exact gradient.

use crate::assign::{hungarian, Association};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::render::SurfaceScores;

/// Guards the soft-IoU denominator.
pub const SIOU_EPS: f64 = 1e-9;
/// Clamp for probabilities entering a logarithm.
pub const LOG_EPS: f64 = 1e-7;

/// Row-major `rows x cols` matrix of per-pixel mask values.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MaskMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MaskMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("mask rows differ in length".into()));
        }
        Ok(MaskMatrix { rows: rows.len(), cols, data: rows.concat() })
    }

    /// One-hot ground-truth columns, one per entry of `ids`; pixels whose
    /// label is not listed stay all-zero.
    pub fn from_labels(labels: &[u16], ids: &[u16]) -> Self {
        let mut m = MaskMatrix::zeros(labels.len(), ids.len());
        for (n, l) in labels.iter().enumerate() {
            if let Some(t) = ids.iter().position(|id| id == l) {
                m.data[n * ids.len() + t] = 1.0;
            }
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Keeps the first `cols` columns.
    pub fn leading_columns(&self, cols: usize) -> MaskMatrix {
        let mut m = MaskMatrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            m.data[r * cols..(r + 1) * cols].copy_from_slice(&self.data[r * self.cols..r * self.cols + cols]);
        }
        m
    }

    /// Column-permuted copy: output column `j` is input column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> MaskMatrix {
        let mut m = MaskMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (j, &src) in perm.iter().enumerate() {
                m.data[r * self.cols + j] = self.get(r, src);
            }
        }
        m
    }
}

fn siou_parts(pred: &[f64], gt: &[f64]) -> (f64, f64) {
    let inter: f64 = pred.iter().zip(gt).map(|(m, g)| m * g).sum();
    let union = pred.iter().sum::<f64>() + gt.iter().sum::<f64>() - inter + SIOU_EPS;
    (inter, union)
}

/// Negative soft IoU, in `[-1, 0]`.
pub fn siou_cost(pred: &[f64], gt: &[f64]) -> f64 {
    let (inter, union) = siou_parts(pred, gt);
    -inter / union
}

pub fn siou_grad(pred: &[f64], gt: &[f64]) -> Vec<f64> {
    let (inter, union) = siou_parts(pred, gt);
    gt.iter()
        .map(|g| -(g * union - inter * (1.0 - g)) / (union * union))
        .collect()
}

fn clamp_log(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

fn in_clamp(p: f64) -> bool {
    p > LOG_EPS && p < 1.0 - LOG_EPS
}

/// Mean binary cross-entropy of `pred` against the binary `gt`.
pub fn ces_cost(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    -pred
        .iter()
        .zip(gt)
        .map(|(m, g)| {
            let m = clamp_log(*m);
            g * m.ln() + (1.0 - g) * (1.0 - m).ln()
        })
        .sum::<f64>()
        / n
}

pub fn ces_grad(pred: &[f64], gt: &[f64]) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(gt)
        .map(|(m, g)| if in_clamp(*m) { -(g / m - (1.0 - g) / (1.0 - m)) / n } else { 0.0 })
        .collect()
}

/// `T x H` matrix of `sIoU + CES` between every ground-truth and predicted column.
pub fn association_costs(pred: &MaskMatrix, gt: &MaskMatrix) -> Vec<Vec<f64>> {
    let pred_cols: Vec<Vec<f64>> = (0..pred.cols).map(|h| pred.column(h)).collect();
    (0..gt.cols)
        .map(|t| {
            let g = gt.column(t);
            pred_cols.iter().map(|p| siou_cost(p, &g) + ces_cost(p, &g)).collect()
        })
        .collect()
}

/// Assigns each ground-truth column of `gt` (`N x T`) to a distinct predicted
/// column of `pred` (`N x H`) at minimum total cost.
pub fn associate(pred: &MaskMatrix, gt: &MaskMatrix) -> Result<Association> {
    if pred.rows != gt.rows {
        return Err(Error::Domain(format!("{} predicted pixels vs {} labelled", pred.rows, gt.rows)));
    }
    if gt.cols > pred.cols {
        return Err(Error::Config(format!(
            "{} ground-truth objects exceed H = {}; raise H",
            gt.cols, pred.cols
        )));
    }
    hungarian(&association_costs(pred, gt))
}

#[derive(Clone, Debug)]
pub struct ObjectLoss2d {
    pub value: f64,
    /// Gradient with respect to each `N x (H + 1)` prediction.
    pub grads: Vec<MaskMatrix>,
    pub associations: Vec<Association>,
}

/// Average over images of the matched `sIoU + CES` costs divided by each
/// image's object count. Predictions are `N x (H + 1)`; the last column is
/// ignored. Images without ground-truth objects contribute zero.
pub fn loss_2d_obj(preds: &[MaskMatrix], gts: &[MaskMatrix]) -> Result<ObjectLoss2d> {
    if preds.len() != gts.len() {
        return Err(Error::Domain("one ground truth per prediction required".into()));
    }
    let l = preds.len().max(1) as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    let mut associations = Vec::with_capacity(preds.len());
    for (pred, gt) in preds.iter().zip(gts) {
        if pred.cols < 2 {
            return Err(Error::Domain("predictions need H + 1 >= 2 columns".into()));
        }
        let h = pred.cols - 1;
        let mut grad = MaskMatrix::zeros(pred.rows, pred.cols);
        if gt.cols == 0 {
            grads.push(grad);
            associations.push(Association { pairs: vec![], total_cost: 0.0 });
            continue;
        }
        let solid = pred.leading_columns(h);
        let assoc = associate(&solid, gt)?;
        let t = gt.cols as f64;
        for &(gt_col, pred_col) in &assoc.pairs {
            let p = solid.column(pred_col);
            let g = gt.column(gt_col);
            value += (siou_cost(&p, &g) + ces_cost(&p, &g)) / (t * l);
            let ds = siou_grad(&p, &g);
            let dc = ces_grad(&p, &g);
            for n in 0..pred.rows {
                grad.data[n * pred.cols + pred_col] += (ds[n] + dc[n]) / (t * l);
            }
        }
        grads.push(grad);
        associations.push(assoc);
    }
    Ok(ObjectLoss2d { value, grads, associations })
}

/// `-(1/K) sum_k (e_k log o_k + s_k log(1 - o_k))` on the empty-slot codes.
pub fn loss_3d_empty(empty_codes: &[f64], scores: &SurfaceScores) -> (f64, Vec<f64>) {
    let k = empty_codes.len().max(1) as f64;
    let mut value = 0.0;
    let grad = empty_codes
        .iter()
        .zip(scores.empty.iter().zip(&scores.surface))
        .map(|(&o, (&e, &s))| {
            let oc = clamp_log(o);
            value -= (e * oc.ln() + s * (1.0 - oc).ln()) / k;
            if in_clamp(o) {
                -(e / o - s / (1.0 - o)) / k
            } else {
                0.0
            }
        })
        .collect();
    (value, grad)
}

/// `-(1/K) sum_k e_k sum_h log(1 - o_k^h)` over the solid slots of each code.
/// Codes may carry the trailing empty slot; it receives zero gradient.
pub fn loss_3d_obj(codes: &[Vec<f64>], emptiness: &[f64], h: usize) -> (f64, Vec<Vec<f64>>) {
    let k = codes.len().max(1) as f64;
    let mut value = 0.0;
    let grads = codes
        .iter()
        .zip(emptiness)
        .map(|(code, &e)| {
            code.iter()
                .enumerate()
                .map(|(i, &o)| {
                    if i >= h {
                        return 0.0;
                    }
                    value -= e * (1.0 - clamp_log(o)).ln() / k;
                    if in_clamp(o) {
                        e / ((1.0 - o) * k)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (value, grads)
}

/// Unweighted sum of the three object-field losses.
pub fn total_object_loss(loss_2d: f64, loss_empty: f64, loss_obj: f64) -> f64 {
    loss_2d + loss_empty + loss_obj
}

/// Mean squared error over rays and channels.
pub fn photometric_loss(rendered: &[Vec3], gt: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    if rendered.len() != gt.len() {
        return Err(Error::Domain("rendered and target colors differ in count".into()));
    }
    let count = (3 * rendered.len()).max(1) as f64;
    let mut value = 0.0;
    let grads = rendered
        .iter()
        .zip(gt)
        .map(|(r, g)| {
            let d = *r - *g;
            value += d.dot(d) / count;
            d * (2.0 / count)
        })
        .collect();
    Ok((value, grads))
}
