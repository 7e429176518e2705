//! Discrete volume rendering over any [`Field`]: transmittance and alpha
//! weights, compositing of colors and object codes, expected-depth estimation
//! and the surfaceness/emptiness scores that supervise empty space.
//!
//! Every differentiable quantity here has a matching `*_backward` that maps an
//! upstream gradient to a gradient with respect to the densities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{Field, FieldSample};
use crate::geometry::{sample_pdf, stratified_samples_with, Camera, Ray, RaySamples, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct RayWeights {
    pub transmittance: Vec<f64>,
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
    /// Transmittance past the last sample.
    pub residual: f64,
}

impl RayWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn compute_weights(sigmas: &[f64], deltas: &[f64]) -> Result<RayWeights> {
    if sigmas.len() != deltas.len() {
        return Err(Error::Domain("one delta per density required".into()));
    }
    let k = sigmas.len();
    let mut transmittance = Vec::with_capacity(k);
    let mut alpha = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    let mut optical_depth = 0.0f64;
    for (&sigma, &delta) in sigmas.iter().zip(deltas) {
        if !(sigma >= 0.0) {
            return Err(Error::Domain(format!("density must be non-negative, got {sigma}")));
        }
        let t = (-optical_depth).exp();
        let a = -(-sigma * delta).exp_m1();
        transmittance.push(t);
        alpha.push(a);
        weights.push(t * a);
        optical_depth += sigma * delta;
    }
    Ok(RayWeights { transmittance, alpha, weights, residual: (-optical_depth).exp() })
}

/// Gradient with respect to the densities given `grad_weights[k] = dL/dw_k`
/// and `grad_residual = dL/dT_{K+1}`.
pub fn weights_backward(deltas: &[f64], rw: &RayWeights, grad_weights: &[f64], grad_residual: f64) -> Vec<f64> {
    let k = rw.len();
    let mut out = vec![0.0; k];
    // suffix[j] = sum_{i > j} g_i w_i
    let mut suffix = 0.0;
    for j in (0..k).rev() {
        let t_next = if j + 1 < k { rw.transmittance[j + 1] } else { rw.residual };
        let d_tau = grad_weights[j] * t_next - suffix - grad_residual * rw.residual;
        out[j] = d_tau * deltas[j];
        suffix += grad_weights[j] * rw.weights[j];
    }
    out
}

/// `sum_k w_k * values[k]` for D-dimensional values.
pub fn composite<V: AsRef<[f64]>>(values: &[V], rw: &RayWeights) -> Result<Vec<f64>> {
    if values.len() != rw.len() {
        return Err(Error::Domain(format!("{} values for {} weights", values.len(), rw.len())));
    }
    let dim = values.first().map_or(0, |v| v.as_ref().len());
    let mut out = vec![0.0; dim];
    for (v, w) in values.iter().zip(&rw.weights) {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::Domain("composite values differ in dimension".into()));
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(out)
}

fn composite_colors(values: &[FieldSample], rw: &RayWeights) -> Vec3 {
    values.iter().zip(&rw.weights).fold(Vec3::ZERO, |acc, (s, w)| acc + s.color * *w)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthEstimator {
    /// `sum_k w_k d_k`, the expected termination distance.
    #[default]
    ExpectedDistance,
    /// `sum_k w_k delta_k`, the literal spacing-weighted form.
    SpacingWeighted,
}

/// Truncated expected hit distance `sum_k w_k d_k`; falls short of the true
/// expectation by the residual transmittance.
pub fn estimate_depth(samples: &RaySamples, rw: &RayWeights) -> f64 {
    estimate_depth_with(samples, rw, DepthEstimator::ExpectedDistance)
}

pub fn estimate_depth_with(samples: &RaySamples, rw: &RayWeights, mode: DepthEstimator) -> f64 {
    let per_sample = match mode {
        DepthEstimator::ExpectedDistance => &samples.distances,
        DepthEstimator::SpacingWeighted => &samples.deltas,
    };
    per_sample.iter().zip(&rw.weights).map(|(d, w)| d * w).sum()
}

pub fn estimate_depth_backward(samples: &RaySamples, rw: &RayWeights, grad_depth: f64) -> Vec<f64> {
    let g: Vec<f64> = samples.distances.iter().map(|d| grad_depth * d).collect();
    weights_backward(&samples.deltas, rw, &g, 0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceScores {
    pub surface: Vec<f64>,
    pub empty: Vec<f64>,
}

/// `s_k = exp(-(d_k - d)^2)`, `e_k = (1 - s_k) [d - delta_d - d_k > 0]`.
pub fn surface_scores(samples: &RaySamples, depth: f64, delta_d: f64) -> Result<SurfaceScores> {
    if !(delta_d > 0.0) {
        return Err(Error::Domain("delta_d must be positive".into()));
    }
    let (surface, empty) = samples
        .distances
        .iter()
        .map(|&dk| {
            let s = (-(dk - depth).powi(2)).exp();
            let e = if depth - delta_d - dk > 0.0 { 1.0 - s } else { 0.0 };
            (s, e)
        })
        .unzip();
    Ok(SurfaceScores { surface, empty })
}

/// Derivative of the scores with respect to the depth, `(ds_k/dd, de_k/dd)`,
/// treating the indicator as locally constant.
pub fn surface_scores_depth_grad(samples: &RaySamples, depth: f64, delta_d: f64) -> (Vec<f64>, Vec<f64>) {
    samples
        .distances
        .iter()
        .map(|&dk| {
            let s = (-(dk - depth).powi(2)).exp();
            let ds = 2.0 * (dk - depth) * s;
            let de = if depth - delta_d - dk > 0.0 { -ds } else { 0.0 };
            (ds, de)
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    /// Composited color with the residual transmittance filled by the background.
    pub color: Vec3,
    /// Composited object code with the residual transmittance in the empty slot.
    pub code_hat: Vec<f64>,
    /// Expected hit distance with the residual transmittance terminating at `t_far`.
    pub depth: f64,
    pub weights: RayWeights,
    pub samples: RaySamples,
}

impl RenderOutput {
    /// Output for a ray that never enters the field's bounds.
    pub fn vacuum(background: Vec3, code_len: usize, t_far: f64) -> Self {
        let mut code_hat = vec![0.0; code_len];
        code_hat[code_len - 1] = 1.0;
        RenderOutput {
            color: background,
            code_hat,
            depth: t_far,
            weights: RayWeights { transmittance: vec![], alpha: vec![], weights: vec![], residual: 1.0 },
            samples: RaySamples { distances: vec![], deltas: vec![], t_near: 0.0, t_far, base_count: 1 },
        }
    }

    /// Object code without the residual fill, as used by the losses.
    pub fn raw_code(&self) -> Vec<f64> {
        let mut code = self.code_hat.clone();
        if let Some(last) = code.last_mut() {
            *last -= self.weights.residual;
        }
        code
    }
}

/// Composites evaluated samples along one ray.
pub fn composite_ray(samples: RaySamples, values: &[FieldSample], background: Vec3, code_len: usize) -> RenderOutput {
    let sigmas: Vec<f64> = values.iter().map(|v| v.sigma).collect();
    let weights = compute_weights(&sigmas, &samples.deltas).expect("field densities are non-negative");
    let codes: Vec<&[f64]> = values.iter().map(|v| v.code.as_slice()).collect();
    let mut code_hat = if codes.is_empty() { vec![0.0; code_len] } else { composite(&codes, &weights).expect("codes share a length") };
    code_hat[code_len - 1] += weights.residual;
    let color = composite_colors(values, &weights) + background * weights.residual;
    let depth = estimate_depth(&samples, &weights) + weights.residual * samples.t_far;
    RenderOutput { color, code_hat, depth, weights, samples }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RenderOptions {
    pub k_coarse: usize,
    pub k_fine: usize,
    pub jitter: bool,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { k_coarse: 64, k_fine: 128, jitter: true, seed: 0 }
    }
}

/// Stateless 64-bit mixer used to derive per-ray seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample distances a coarse-then-fine render of `ray` would use, without the
/// final composite. `ray` must already be clipped.
fn plan_and_query<F: Field + ?Sized>(
    field: &F,
    rays: &[(Ray, u64)],
    opts: &RenderOptions,
) -> Result<Vec<(RaySamples, Vec<FieldSample>)>> {
    let mut rngs: Vec<ChaCha8Rng> = rays.iter().map(|(_, s)| ChaCha8Rng::seed_from_u64(*s)).collect();
    let coarse: Vec<RaySamples> = rays
        .iter()
        .zip(rngs.iter_mut())
        .map(|((ray, _), rng)| stratified_samples_with(ray, opts.k_coarse, opts.jitter, rng))
        .collect::<Result<_>>()?;
    let coarse_values = query_samples(field, rays, &coarse);
    if opts.k_fine == 0 {
        return Ok(coarse.into_iter().zip(coarse_values).collect());
    }
    let mut extras = Vec::with_capacity(rays.len());
    for ((c, vals), rng) in coarse.iter().zip(&coarse_values).zip(rngs.iter_mut()) {
        let sigmas: Vec<f64> = vals.iter().map(|v| v.sigma).collect();
        let rw = compute_weights(&sigmas, &c.deltas)?;
        extras.push(sample_pdf(&c.bin_edges(), &rw.weights, opts.k_fine, rng));
    }
    let extra_samples: Vec<RaySamples> = extras
        .iter()
        .map(|e| RaySamples { distances: e.clone(), deltas: vec![0.0; e.len()], t_near: 0.0, t_far: 0.0, base_count: 1 })
        .collect();
    let extra_values = query_samples(field, rays, &extra_samples);
    let mut out = Vec::with_capacity(rays.len());
    for ((c, cv), (e, ev)) in coarse.into_iter().zip(coarse_values).zip(extras.iter().zip(extra_values)) {
        let (merged, order) = c.merged(e);
        let n = cv.len();
        let mut pool: Vec<Option<FieldSample>> = cv.into_iter().chain(ev).map(Some).collect();
        let values = order.iter().map(|&i| pool[i].take().expect("merged indices are unique")).collect();
        debug_assert!(order.iter().all(|&i| i < n + e.len()));
        out.push((merged, values));
    }
    Ok(out)
}

fn query_samples<F: Field + ?Sized>(field: &F, rays: &[(Ray, u64)], samples: &[RaySamples]) -> Vec<Vec<FieldSample>> {
    let mut points = Vec::new();
    let mut dirs = Vec::new();
    for ((ray, _), s) in rays.iter().zip(samples) {
        for d in &s.distances {
            points.push(ray.at(*d));
            dirs.push(ray.direction);
        }
    }
    let mut values = field.query_batch(&points, &dirs).into_iter();
    samples.iter().map(|s| values.by_ref().take(s.len()).collect()).collect()
}

/// Evaluates the field along the sample sets a render of `rays` would use;
/// `None` for rays that miss the field bounds.
pub fn sample_rays<F: Field + ?Sized>(
    field: &F,
    rays: &[Ray],
    opts: &RenderOptions,
    seeds: &[u64],
) -> Result<Vec<Option<(RaySamples, Vec<FieldSample>)>>> {
    let bounds = field.bounds();
    let clipped: Vec<Option<Ray>> = rays.iter().map(|r| r.clipped(&bounds)).collect();
    let live: Vec<(Ray, u64)> = clipped.iter().zip(seeds).filter_map(|(r, s)| r.map(|r| (r, *s))).collect();
    let mut planned = plan_and_query(field, &live, opts)?.into_iter();
    Ok(clipped.iter().map(|c| c.and_then(|_| planned.next())).collect())
}

/// Evaluates the field along the sample set a render of `ray` would use.
/// Returns `None` when the ray misses the field bounds.
pub fn sample_ray<F: Field + ?Sized>(
    field: &F,
    ray: &Ray,
    opts: &RenderOptions,
    seed: u64,
) -> Result<Option<(Ray, RaySamples, Vec<FieldSample>)>> {
    let Some(clipped) = ray.clipped(&field.bounds()) else { return Ok(None) };
    let mut planned = plan_and_query(field, &[(clipped, seed)], opts)?;
    let (s, v) = planned.pop().expect("one ray planned");
    Ok(Some((clipped, s, v)))
}

/// Coarse stratified pass, importance resampling on the coarse weights, and a
/// final composite over the merged samples.
pub fn render_pixel<F: Field + ?Sized>(field: &F, ray: &Ray, opts: &RenderOptions) -> Result<RenderOutput> {
    Ok(render_rays(field, &[*ray], opts, &[opts.seed])?.pop().expect("one ray rendered"))
}

/// Renders a batch of rays; `seeds[i]` drives the jitter of ray `i`.
pub fn render_rays<F: Field + ?Sized>(field: &F, rays: &[Ray], opts: &RenderOptions, seeds: &[u64]) -> Result<Vec<RenderOutput>> {
    let bounds = field.bounds();
    let code_len = field.code_len();
    let background = field.background();
    let clipped: Vec<Option<Ray>> = rays.iter().map(|r| r.clipped(&bounds)).collect();
    let live: Vec<(Ray, u64)> = clipped
        .iter()
        .zip(seeds)
        .filter_map(|(r, s)| r.map(|r| (r, *s)))
        .collect();
    let planned = plan_and_query(field, &live, opts)?;
    let mut planned = planned.into_iter();
    Ok(rays
        .iter()
        .zip(&clipped)
        .map(|(ray, c)| match c {
            Some(_) => {
                let (samples, values) = planned.next().expect("planned per live ray");
                composite_ray(samples, &values, background, code_len)
            }
            None => RenderOutput::vacuum(background, code_len, ray.t_far),
        })
        .collect())
}

pub(crate) fn pixel_rays(camera: &Camera) -> Vec<Ray> {
    (0..camera.height)
        .flat_map(|j| (0..camera.width).map(move |i| (i, j)))
        .map(|(i, j)| camera.pixel_ray(i, j).expect("pixel centers are inside the image"))
        .collect()
}

pub(crate) fn for_chunks<T: Send, R: Send>(items: Vec<T>, chunk: usize, f: impl Fn(Vec<T>) -> Result<Vec<R>> + Sync + Send) -> Result<Vec<R>> {
    let mut chunks: Vec<Vec<T>> = Vec::new();
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        chunks.push(it.by_ref().take(chunk).collect());
    }
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<R>>> = {
        use rayon::prelude::*;
        chunks.into_par_iter().map(&f).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<R>>> = chunks.into_iter().map(&f).collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Renders every pixel of `camera`, row-major. Pixel `n` uses seed
/// `mix_seed(opts.seed, n)`.
pub fn render_view<F: Field + ?Sized>(field: &F, camera: &Camera, opts: &RenderOptions) -> Result<Vec<RenderOutput>> {
    let rays: Vec<(usize, Ray)> = pixel_rays(camera).into_iter().enumerate().collect();
    for_chunks(rays, 256, |chunk| {
        let (idx, rays): (Vec<usize>, Vec<Ray>) = chunk.into_iter().unzip();
        let seeds: Vec<u64> = idx.iter().map(|i| mix_seed(opts.seed, *i as u64)).collect();
        render_rays(field, &rays, opts, &seeds)
    })
}
