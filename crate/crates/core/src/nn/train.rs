//! Joint training of the radiance and object branches.
//!
//! Each iteration draws `images_per_batch` images and `rays_per_image` pixels
//! from each, renders them coarse-then-fine with shared weights, and
//! backpropagates the photometric loss (coarse plus fine) into the shared
//! parameters and the object losses into the object head. The object losses
//! see the rendering weights as constants. The 2D association runs on the
//! rays of each image separately, against the objects labelled among those
//! rays.
//!
//! Several object heads can be trained over one backbone at once. Because
//! nothing flows from the object branch into the backbone, each head ends up
//! exactly where a separate run with the same seed would put it.

use super::adam::{decayed_lr, Adam, AdamConfig};
use super::network::{FieldNetwork, NetworkConfig, ObjectTape, SharedTape};
use crate::dataset::SceneDataset;
use crate::error::{Error, Result};
use crate::geometry::{sample_pdf, stratified_samples_with, Ray, RaySamples, Vec3};
use crate::losses::{loss_2d_obj, loss_3d_empty, loss_3d_obj, MaskMatrix};
use crate::render::{compute_weights, estimate_depth_with, surface_scores, weights_backward, DepthEstimator, RayWeights};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSwitches {
    pub photometric: bool,
    pub object_2d: bool,
    pub object_3d: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        LossSwitches { photometric: true, object_2d: true, object_3d: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub iterations: usize,
    pub images_per_batch: usize,
    pub rays_per_image: usize,
    pub k_coarse: usize,
    pub k_fine: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam: AdamConfig,
    /// Margin of the emptiness indicator, metres.
    pub delta_d: f64,
    pub depth_estimator: DepthEstimator,
    pub seed: u64,
    pub losses: LossSwitches,
}

impl TrainConfig {
    /// 1024 rays per batch as 8 images x 128 rays, 64 + 128 samples.
    pub fn standard(h: usize, iterations: usize) -> Self {
        TrainConfig {
            network: NetworkConfig::standard(h),
            iterations,
            images_per_batch: 8,
            rays_per_image: 128,
            k_coarse: 64,
            k_fine: 128,
            lr_start: 5e-4,
            lr_end: 5e-5,
            adam: AdamConfig::default(),
            delta_d: 0.05,
            depth_estimator: DepthEstimator::default(),
            seed: 0,
            losses: LossSwitches::default(),
        }
    }

    /// Compact network, 512 rays as 4 images x 128 rays, 32 + 32 samples,
    /// learning rate 3e-3 decayed to 3e-4.
    pub fn compact(h: usize, iterations: usize) -> Self {
        TrainConfig {
            network: NetworkConfig::compact(h),
            images_per_batch: 4,
            rays_per_image: 128,
            k_coarse: 32,
            k_fine: 32,
            lr_start: 3e-3,
            lr_end: 3e-4,
            ..Self::standard(h, iterations)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.iterations == 0 || self.images_per_batch == 0 || self.rays_per_image == 0 || self.k_coarse == 0 {
            return Err(Error::Config("iterations, batch sizes and k_coarse must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.delta_d > 0.0) {
            return Err(Error::Config("learning rates and delta_d must be positive".into()));
        }
        Ok(())
    }
}

/// One object head's supervision: its masks (one per training view) and
/// which object losses are active.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTask {
    pub masks: Vec<Vec<u16>>,
    pub object_2d: bool,
    pub object_3d: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub colors: Vec<Vec3>,
    /// `labels[task][ray]`
    pub labels: Vec<Vec<u16>>,
    /// Ray ranges that come from one image.
    pub groups: Vec<Range<usize>>,
}

/// Where the fine samples of each ray come from.
#[derive(Clone, Debug, PartialEq)]
pub enum FineSamples {
    /// Explicit extra distances per ray.
    Fixed(Vec<Vec<f64>>),
    /// This many draws from the coarse weights.
    Importance(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectLosses {
    pub object_2d: f64,
    pub empty_3d: f64,
    pub object_3d: f64,
}

impl ObjectLosses {
    pub fn total(&self) -> f64 {
        crate::losses::total_object_loss(self.object_2d, self.empty_3d, self.object_3d)
    }
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    /// Coarse plus fine mean squared error.
    pub photometric: f64,
    pub fine_mse: f64,
    pub objects: Vec<ObjectLosses>,
    pub shared_grad: Vec<f64>,
    pub object_grads: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct BatchSettings {
    pub photometric: bool,
    /// `(object_2d, object_3d)` per head.
    pub heads: Vec<(bool, bool)>,
    pub delta_d: f64,
    pub depth_estimator: DepthEstimator,
}

struct Points {
    pts: Vec<Vec3>,
    dirs: Vec<Vec3>,
    offsets: Vec<usize>,
}

fn gather(rays: &[Ray], distances: impl Iterator<Item = Option<Vec<f64>>>) -> Points {
    let mut p = Points { pts: vec![], dirs: vec![], offsets: vec![] };
    for (ray, d) in rays.iter().zip(distances) {
        p.offsets.push(p.pts.len());
        for t in d.unwrap_or_default() {
            p.pts.push(ray.at(t));
            p.dirs.push(ray.direction);
        }
    }
    p
}

fn color_of(tape: &SharedTape, i: usize) -> Vec3 {
    Vec3::new(tape.color[3 * i], tape.color[3 * i + 1], tape.color[3 * i + 2])
}

/// Gradient buffers for one forward tape.
struct OutputGrads {
    sigma: Vec<f64>,
    color: Vec<f64>,
    code: Vec<Vec<f64>>,
}

impl OutputGrads {
    fn new(n: usize, heads: usize, code_len: usize) -> Self {
        OutputGrads { sigma: vec![0.0; n], color: vec![0.0; 3 * n], code: vec![vec![0.0; n * code_len]; heads] }
    }
}

/// Photometric loss of one composite and its backward pass onto per-sample
/// density and color gradients, delivered through `sink(sample, d_sigma, d_color)`.
fn photometric_ray(
    deltas: &[f64],
    rw: &RayWeights,
    colors: &[Vec3],
    background: Vec3,
    target: Vec3,
    scale: f64,
    backprop: bool,
    mut sink: impl FnMut(usize, f64, Vec3),
) -> f64 {
    let mut c = background * rw.residual;
    for (w, col) in rw.weights.iter().zip(colors) {
        c += *col * *w;
    }
    let d = c - target;
    if backprop {
        let g = d * (2.0 * scale);
        let dw: Vec<f64> = colors.iter().map(|col| g.dot(*col)).collect();
        let d_sigma = weights_backward(deltas, rw, &dw, g.dot(background));
        for (k, (ds, w)) in d_sigma.iter().zip(&rw.weights).enumerate() {
            sink(k, *ds, g * *w);
        }
    }
    d.dot(d)
}

/// Losses and exact gradients for one batch. `coarse[r]` holds the coarse
/// samples of ray `r`, or `None` when the ray misses the field bounds.
pub fn evaluate_batch(
    net: &FieldNetwork,
    heads: &[&[f64]],
    settings: &BatchSettings,
    batch: &RayBatch,
    coarse: &[Option<RaySamples>],
    fine: &FineSamples,
    rng: &mut ChaCha8Rng,
) -> Result<BatchOutcome> {
    let n_rays = batch.rays.len();
    let h = net.config.h;
    let code_len = h + 1;
    let bg = net.background;
    if coarse.len() != n_rays || batch.colors.len() != n_rays || heads.len() != settings.heads.len() {
        return Err(Error::Domain("batch, samples and heads disagree in size".into()));
    }

    let cp = gather(&batch.rays, coarse.iter().map(|c| c.as_ref().map(|s| s.distances.clone())));
    let tape_c = net.forward_shared(&cp.pts, &cp.dirs);
    let heads_c: Vec<ObjectTape> = heads.iter().map(|o| net.forward_object_with(o, &tape_c)).collect();

    let mut coarse_w: Vec<Option<RayWeights>> = Vec::with_capacity(n_rays);
    for (r, s) in coarse.iter().enumerate() {
        coarse_w.push(match s {
            Some(s) => Some(compute_weights(&tape_c.sigma[cp.offsets[r]..cp.offsets[r] + s.len()], &s.deltas)?),
            None => None,
        });
    }
    let extras: Vec<Vec<f64>> = match fine {
        FineSamples::Fixed(v) => {
            if v.len() != n_rays {
                return Err(Error::Domain("one fine sample list per ray required".into()));
            }
            v.clone()
        }
        FineSamples::Importance(k) => coarse
            .iter()
            .zip(&coarse_w)
            .map(|(s, w)| match (s, w) {
                (Some(s), Some(w)) if *k > 0 => sample_pdf(&s.bin_edges(), &w.weights, *k, rng),
                _ => vec![],
            })
            .collect(),
    };
    let fp = gather(&batch.rays, extras.iter().map(|e| Some(e.clone())));
    let tape_f = net.forward_shared(&fp.pts, &fp.dirs);
    let heads_f: Vec<ObjectTape> = heads.iter().map(|o| net.forward_object_with(o, &tape_f)).collect();

    let mut gc = OutputGrads::new(tape_c.n, heads.len(), code_len);
    let mut gf = OutputGrads::new(tape_f.n, heads.len(), code_len);
    let scale = 1.0 / (3 * n_rays.max(1)) as f64;
    let live = coarse.iter().filter(|c| c.is_some()).count().max(1) as f64;
    let mut photometric = 0.0;
    let mut fine_mse = 0.0;
    let mut objects = vec![ObjectLosses::default(); heads.len()];
    let mut code_hat = vec![vec![0.0; n_rays * code_len]; heads.len()];
    // merged-sample sources and weights per ray, for the 2D backward pass
    let mut ray_sources: Vec<Vec<((bool, usize), f64)>> = vec![vec![]; n_rays];

    for r in 0..n_rays {
        let target = batch.colors[r];
        let (Some(s), Some(rw_c)) = (&coarse[r], &coarse_w[r]) else {
            let d = bg - target;
            photometric += 2.0 * d.dot(d) * scale;
            fine_mse += d.dot(d) * scale;
            continue;
        };
        let c0 = cp.offsets[r];
        let cols_c: Vec<Vec3> = (0..s.len()).map(|k| color_of(&tape_c, c0 + k)).collect();
        photometric += scale
            * photometric_ray(&s.deltas, rw_c, &cols_c, bg, target, scale, settings.photometric, |k, ds, dc| {
                gc.sigma[c0 + k] += ds;
                for j in 0..3 {
                    gc.color[3 * (c0 + k) + j] += dc[j];
                }
            });

        let (merged, order) = s.merged(&extras[r]);
        let f0 = fp.offsets[r];
        let src: Vec<(bool, usize)> =
            order.iter().map(|&i| if i < s.len() { (false, c0 + i) } else { (true, f0 + i - s.len()) }).collect();
        let tape_of = |fine: bool| if fine { &tape_f } else { &tape_c };
        let sig_m: Vec<f64> = src.iter().map(|&(f, i)| tape_of(f).sigma[i]).collect();
        let cols_m: Vec<Vec3> = src.iter().map(|&(f, i)| color_of(tape_of(f), i)).collect();
        let rw_m = compute_weights(&sig_m, &merged.deltas)?;
        let err = photometric_ray(&merged.deltas, &rw_m, &cols_m, bg, target, scale, settings.photometric, |k, ds, dc| {
            let (f, i) = src[k];
            let g = if f { &mut gf } else { &mut gc };
            g.sigma[i] += ds;
            for j in 0..3 {
                g.color[3 * i + j] += dc[j];
            }
        });
        photometric += scale * err;
        fine_mse += scale * err;

        let depth = estimate_depth_with(&merged, &rw_m, settings.depth_estimator);
        let scores = surface_scores(&merged, depth, settings.delta_d)?;
        for (t, &(_, use_3d)) in settings.heads.iter().enumerate() {
            let codes: Vec<&[f64]> = src
                .iter()
                .map(|&(f, i)| {
                    let tape = if f { &heads_f[t] } else { &heads_c[t] };
                    &tape.code[i * code_len..(i + 1) * code_len]
                })
                .collect();
            let row = &mut code_hat[t][r * code_len..(r + 1) * code_len];
            for (code, w) in codes.iter().zip(&rw_m.weights) {
                for j in 0..code_len {
                    row[j] += w * code[j];
                }
            }
            if use_3d {
                let empty: Vec<f64> = codes.iter().map(|c| c[h]).collect();
                let (le, ge) = loss_3d_empty(&empty, &scores);
                let owned: Vec<Vec<f64>> = codes.iter().map(|c| c.to_vec()).collect();
                let (lo, go) = loss_3d_obj(&owned, &scores.empty, h);
                objects[t].empty_3d += le / live;
                objects[t].object_3d += lo / live;
                for (k, &(f, i)) in src.iter().enumerate() {
                    let g = if f { &mut gf.code[t] } else { &mut gc.code[t] };
                    let row = &mut g[i * code_len..(i + 1) * code_len];
                    for j in 0..code_len {
                        row[j] += go[k][j] / live;
                    }
                    row[h] += ge[k] / live;
                }
            }
        }
        ray_sources[r] = src.into_iter().zip(rw_m.weights.iter().copied()).collect();
    }

    for (t, &(use_2d, _)) in settings.heads.iter().enumerate() {
        if !use_2d {
            continue;
        }
        let mut preds = Vec::with_capacity(batch.groups.len());
        let mut gts = Vec::with_capacity(batch.groups.len());
        for g in &batch.groups {
            let rows = g.len();
            preds.push(MaskMatrix { rows, cols: code_len, data: code_hat[t][g.start * code_len..g.end * code_len].to_vec() });
            let labels = &batch.labels[t][g.clone()];
            let mut ids: Vec<u16> = labels.iter().copied().filter(|l| *l != 0).collect();
            ids.sort_unstable();
            ids.dedup();
            gts.push(MaskMatrix::from_labels(labels, &ids));
        }
        let out = loss_2d_obj(&preds, &gts)?;
        objects[t].object_2d = out.value;
        for (g, grad) in batch.groups.iter().zip(&out.grads) {
            for (row, r) in g.clone().enumerate() {
                let d_hat = &grad.data[row * code_len..(row + 1) * code_len];
                for &((f, i), w) in &ray_sources[r] {
                    let buf = if f { &mut gf.code[t] } else { &mut gc.code[t] };
                    for j in 0..code_len {
                        buf[i * code_len + j] += w * d_hat[j];
                    }
                }
            }
        }
    }

    let mut shared_grad = vec![0.0; net.shared.len()];
    if settings.photometric {
        net.backward_shared(&tape_c, &gc.sigma, &gc.color, &mut shared_grad);
        net.backward_shared(&tape_f, &gf.sigma, &gf.color, &mut shared_grad);
    }
    let object_grads = heads
        .iter()
        .enumerate()
        .map(|(t, head)| {
            let mut g = vec![0.0; head.len()];
            net.backward_object_with(head, &tape_c, &heads_c[t], &gc.code[t], &mut g);
            net.backward_object_with(head, &tape_f, &heads_f[t], &gf.code[t], &mut g);
            g
        })
        .collect();
    Ok(BatchOutcome { photometric, fine_mse, objects, shared_grad, object_grads })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub photometric: f64,
    /// PSNR of the fine composite over the batch.
    pub psnr: f64,
    /// One entry per object head.
    pub objects: Vec<ObjectLosses>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

pub struct Trainer<'a> {
    data: &'a SceneDataset,
    pub config: TrainConfig,
    tasks: Vec<ObjectTask>,
    net: FieldNetwork,
    heads: Vec<Vec<f64>>,
    shared_adam: Adam,
    head_adams: Vec<Adam>,
    rng: ChaCha8Rng,
    pub iteration: usize,
    pub log: TrainLog,
}

impl<'a> Trainer<'a> {
    /// Single head supervised by the dataset's own masks.
    pub fn new(data: &'a SceneDataset, config: TrainConfig) -> Result<Self> {
        let task = ObjectTask { masks: data.masks(), object_2d: config.losses.object_2d, object_3d: config.losses.object_3d };
        Self::with_tasks(data, config, vec![task])
    }

    pub fn with_tasks(data: &'a SceneDataset, config: TrainConfig, tasks: Vec<ObjectTask>) -> Result<Self> {
        config.validate()?;
        if config.network.h != data.h() {
            return Err(Error::Config(format!("network H = {} but the dataset has H = {}", config.network.h, data.h())));
        }
        if data.views.is_empty() || tasks.is_empty() {
            return Err(Error::Config("need at least one view and one object head".into()));
        }
        for v in &data.views {
            let px = v.camera.width as usize * v.camera.height as usize;
            if v.color.len() != px || v.mask.len() != px {
                return Err(Error::Config("view images do not match their camera".into()));
            }
        }
        for t in &tasks {
            if t.masks.len() != data.views.len() || t.masks.iter().zip(&data.views).any(|(m, v)| m.len() != v.mask.len()) {
                return Err(Error::Config("object task masks do not match the views".into()));
            }
            if t.masks.iter().flatten().any(|l| *l as usize > data.h()) {
                return Err(Error::Config(format!("mask labels exceed H = {}", data.h())));
            }
        }
        let net = FieldNetwork::new(config.network.clone(), data.scene.bounds, data.scene.background, config.seed)?;
        let heads = vec![net.object.clone(); tasks.len()];
        let shared_adam = Adam::new(net.shared.len(), config.adam);
        let head_adams = vec![Adam::new(net.object.len(), config.adam); tasks.len()];
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_7973);
        Ok(Trainer { data, config, tasks, net, heads, shared_adam, head_adams, rng, iteration: 0, log: TrainLog::default() })
    }

    fn draw_batch(&mut self) -> Result<(RayBatch, Vec<Option<RaySamples>>)> {
        let views = &self.data.views;
        let p = self.config.images_per_batch.min(views.len());
        let mut batch = RayBatch { rays: vec![], colors: vec![], labels: vec![vec![]; self.tasks.len()], groups: vec![] };
        let mut coarse = Vec::new();
        for vi in sample(&mut self.rng, views.len(), p) {
            let v = &views[vi];
            let w = v.camera.width as usize;
            let px = w * v.camera.height as usize;
            let start = batch.rays.len();
            for n in sample(&mut self.rng, px, self.config.rays_per_image.min(px)) {
                let ray = v.camera.pixel_ray((n % w) as u32, (n / w) as u32)?;
                coarse.push(match ray.clipped(&self.net.bounds) {
                    Some(c) => Some(stratified_samples_with(&c, self.config.k_coarse, true, &mut self.rng)?),
                    None => None,
                });
                batch.rays.push(ray);
                batch.colors.push(v.color[n]);
                for (t, task) in self.tasks.iter().enumerate() {
                    batch.labels[t].push(task.masks[vi][n]);
                }
            }
            batch.groups.push(start..batch.rays.len());
        }
        Ok((batch, coarse))
    }

    pub fn step(&mut self) -> Result<&LogEntry> {
        let lr = decayed_lr(self.config.lr_start, self.config.lr_end, self.iteration, self.config.iterations);
        let (batch, coarse) = self.draw_batch()?;
        let settings = BatchSettings {
            photometric: self.config.losses.photometric,
            heads: self.tasks.iter().map(|t| (t.object_2d, t.object_3d)).collect(),
            delta_d: self.config.delta_d,
            depth_estimator: self.config.depth_estimator,
        };
        let heads: Vec<&[f64]> = self.heads.iter().map(Vec::as_slice).collect();
        let out = evaluate_batch(&self.net, &heads, &settings, &batch, &coarse, &FineSamples::Importance(self.config.k_fine), &mut self.rng)?;
        self.shared_adam.step(&mut self.net.shared, &out.shared_grad, lr);
        for ((head, adam), g) in self.heads.iter_mut().zip(&mut self.head_adams).zip(&out.object_grads) {
            adam.step(head, g, lr);
        }
        self.iteration += 1;
        let psnr = if out.fine_mse > 0.0 { -10.0 * out.fine_mse.log10() } else { crate::metrics::PSNR_CAP };
        self.log.entries.push(LogEntry { iteration: self.iteration, lr, photometric: out.photometric, psnr, objects: out.objects });
        Ok(self.log.entries.last().expect("just pushed"))
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    /// The network with the object head of `task`.
    pub fn network(&self, task: usize) -> FieldNetwork {
        FieldNetwork { object: self.heads[task].clone(), ..self.net.clone() }
    }

    pub fn networks(&self) -> Vec<FieldNetwork> {
        (0..self.heads.len()).map(|t| self.network(t)).collect()
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains a field on `data` with its own masks.
pub fn train_scene(data: &SceneDataset, config: &TrainConfig) -> Result<(FieldNetwork, TrainLog)> {
    let mut trainer = Trainer::new(data, config.clone())?;
    trainer.run()?;
    Ok((trainer.network(0), trainer.log))
}
