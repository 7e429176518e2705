//! The two-branch field network.
//!
//! A ReLU backbone over the encoded position produces a feature vector. The
//! density head (shifted softplus) and the color head (feature plus encoded
//! direction, sigmoid) read it directly. The object head reads it through a
//! stop-gradient and ends in a softmax over `H + 1` slots. Backbone, density
//! and color parameters live in `shared`; the object head lives in `object`.

use super::dense::{relu_backward, relu_in_place, sigmoid, softmax_backward, softmax_rows, softplus, Dense};
use super::encoding::{encode_batch, encoded_len};
use crate::error::{Error, Result};
use crate::field::{Field, FieldSample};
use crate::geometry::{Aabb, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Offset subtracted before the density softplus, so a zero pre-activation
/// gives `ln(1 + e^-1)`.
pub const DENSITY_SHIFT: f64 = 1.0;

/// Density produced by a zero pre-activation.
pub fn density_at_zero() -> f64 {
    softplus(-DENSITY_SHIFT)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Solid object slots; the code has `h + 1` entries.
    pub h: usize,
    pub l_pos: usize,
    pub l_dir: usize,
    pub width: usize,
    /// Number of backbone layers.
    pub depth: usize,
    pub color_width: usize,
    pub object_width: usize,
}

impl NetworkConfig {
    /// Four 128-wide backbone layers with 10 position and 4 direction frequencies.
    pub fn standard(h: usize) -> Self {
        NetworkConfig { h, l_pos: 10, l_dir: 4, width: 128, depth: 4, color_width: 64, object_width: 128 }
    }

    /// The small network used for single-core training runs.
    pub fn compact(h: usize) -> Self {
        NetworkConfig { h, l_pos: 6, l_dir: 2, width: 64, depth: 3, color_width: 32, object_width: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.width == 0 || self.depth == 0 || self.color_width == 0 || self.object_width == 0 {
            return Err(Error::Config("network sizes and H must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut take = |fan_in, fan_out| {
            let d = Dense { fan_in, fan_out, offset };
            offset = d.end();
            d
        };
        let mut backbone = vec![take(encoded_len(self.l_pos), self.width)];
        for _ in 1..self.depth {
            backbone.push(take(self.width, self.width));
        }
        let density = take(self.width, 1);
        let color_hidden = take(self.width + encoded_len(self.l_dir), self.color_width);
        let color_out = take(self.color_width, 3);
        let shared_len = offset;
        offset = 0;
        let mut take = |fan_in, fan_out| {
            let d = Dense { fan_in, fan_out, offset };
            offset = d.end();
            d
        };
        let object_hidden = take(self.width, self.object_width);
        let object_out = take(self.object_width, self.h + 1);
        Layout { backbone, density, color_hidden, color_out, shared_len, object_hidden, object_out, object_len: offset }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub backbone: Vec<Dense>,
    pub density: Dense,
    pub color_hidden: Dense,
    pub color_out: Dense,
    pub shared_len: usize,
    pub object_hidden: Dense,
    pub object_out: Dense,
    pub object_len: usize,
}

/// Activations of the shared branch for one batch.
#[derive(Clone, Debug)]
pub struct SharedTape {
    pub n: usize,
    pos_enc: Vec<f64>,
    /// Output of each backbone layer after the ReLU; the last is the feature.
    acts: Vec<Vec<f64>>,
    density_pre: Vec<f64>,
    pub sigma: Vec<f64>,
    color_in: Vec<f64>,
    color_hidden: Vec<f64>,
    /// `n x 3`
    pub color: Vec<f64>,
}

impl SharedTape {
    pub fn feature(&self) -> &[f64] {
        self.acts.last().expect("backbone has at least one layer")
    }
}

#[derive(Clone, Debug)]
pub struct ObjectTape {
    hidden: Vec<f64>,
    /// `n x (H + 1)`, rows on the simplex.
    pub code: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldNetwork {
    pub config: NetworkConfig,
    pub shared: Vec<f64>,
    pub object: Vec<f64>,
    pub bounds: Aabb,
    pub background: Vec3,
}

fn init_layer(params: &mut [f64], d: &Dense, rng: &mut ChaCha8Rng, relu: bool) {
    let fan = if relu { d.fan_in as f64 } else { 0.5 * (d.fan_in + d.fan_out) as f64 };
    let bound = (6.0 / fan.max(1.0)).sqrt();
    for w in &mut params[d.offset..d.offset + d.fan_in * d.fan_out] {
        *w = rng.gen_range(-bound..bound);
    }
}

impl FieldNetwork {
    /// Uniform He/Glorot initialisation with zero biases.
    pub fn new(config: NetworkConfig, bounds: Aabb, background: Vec3, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shared = vec![0.0; layout.shared_len];
        for d in &layout.backbone {
            init_layer(&mut shared, d, &mut rng, true);
        }
        init_layer(&mut shared, &layout.density, &mut rng, false);
        init_layer(&mut shared, &layout.color_hidden, &mut rng, true);
        init_layer(&mut shared, &layout.color_out, &mut rng, false);
        let object = Self::init_object_head(&config, &mut rng);
        Ok(FieldNetwork { config, shared, object, bounds, background })
    }

    fn init_object_head(config: &NetworkConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let layout = config.layout();
        let mut object = vec![0.0; layout.object_len];
        init_layer(&mut object, &layout.object_hidden, rng, true);
        init_layer(&mut object, &layout.object_out, rng, false);
        object
    }

    /// A freshly initialised object head, independent of the shared weights.
    pub fn fresh_object_head(&self, seed: u64) -> Vec<f64> {
        Self::init_object_head(&self.config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn param_count(&self) -> usize {
        self.shared.len() + self.object.len()
    }

    pub fn forward_shared(&self, points: &[Vec3], dirs: &[Vec3]) -> SharedTape {
        let layout = self.layout();
        let n = points.len();
        let pos_enc = encode_batch(points, self.config.l_pos);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layout.backbone.len());
        for d in &layout.backbone {
            let input = acts.last().unwrap_or(&pos_enc);
            let mut y = d.forward(&self.shared, input, n);
            relu_in_place(&mut y);
            acts.push(y);
        }
        let feature = acts.last().expect("depth >= 1");
        let density_pre = layout.density.forward(&self.shared, feature, n);
        let sigma = density_pre.iter().map(|x| softplus(x - DENSITY_SHIFT)).collect();

        let dir_len = encoded_len(self.config.l_dir);
        let dir_enc = encode_batch(dirs, self.config.l_dir);
        let w = self.config.width;
        let mut color_in = Vec::with_capacity(n * (w + dir_len));
        for r in 0..n {
            color_in.extend_from_slice(&feature[r * w..(r + 1) * w]);
            color_in.extend_from_slice(&dir_enc[r * dir_len..(r + 1) * dir_len]);
        }
        let mut color_hidden = layout.color_hidden.forward(&self.shared, &color_in, n);
        relu_in_place(&mut color_hidden);
        let mut color = layout.color_out.forward(&self.shared, &color_hidden, n);
        for c in &mut color {
            *c = sigmoid(*c);
        }
        SharedTape { n, pos_enc, acts, density_pre, sigma, color_in, color_hidden, color }
    }

    /// Object head on the (detached) backbone feature, with explicit head weights.
    pub fn forward_object_with(&self, object: &[f64], tape: &SharedTape) -> ObjectTape {
        let layout = self.layout();
        let mut hidden = layout.object_hidden.forward(object, tape.feature(), tape.n);
        relu_in_place(&mut hidden);
        let mut code = layout.object_out.forward(object, &hidden, tape.n);
        softmax_rows(&mut code, self.config.h + 1);
        ObjectTape { hidden, code }
    }

    pub fn forward_object(&self, tape: &SharedTape) -> ObjectTape {
        self.forward_object_with(&self.object, tape)
    }

    /// Accumulates gradients of the shared parameters from upstream gradients
    /// on density (`n`) and color (`n x 3`).
    pub fn backward_shared(&self, tape: &SharedTape, d_sigma: &[f64], d_color: &[f64], grads: &mut [f64]) {
        let layout = self.layout();
        let n = tape.n;
        let w = self.config.width;
        let mut d_color_pre: Vec<f64> = d_color.iter().zip(&tape.color).map(|(g, c)| g * c * (1.0 - c)).collect();
        let d_hidden = layout.color_out.backward(&self.shared, grads, &tape.color_hidden, &d_color_pre, n, true);
        let mut d_hidden = d_hidden.expect("requested");
        relu_backward(&tape.color_hidden, &mut d_hidden);
        let d_color_in = layout.color_hidden.backward(&self.shared, grads, &tape.color_in, &d_hidden, n, true).expect("requested");
        d_color_pre.clear();

        let d_density_pre: Vec<f64> = d_sigma
            .iter()
            .zip(&tape.density_pre)
            .map(|(g, x)| g * sigmoid(x - DENSITY_SHIFT))
            .collect();
        let mut d_feat = layout.density.backward(&self.shared, grads, tape.feature(), &d_density_pre, n, true).expect("requested");
        let stride = w + encoded_len(self.config.l_dir);
        for r in 0..n {
            for j in 0..w {
                d_feat[r * w + j] += d_color_in[r * stride + j];
            }
        }

        let mut d_out = d_feat;
        for (i, d) in layout.backbone.iter().enumerate().rev() {
            relu_backward(&tape.acts[i], &mut d_out);
            let input = if i == 0 { &tape.pos_enc } else { &tape.acts[i - 1] };
            match d.backward(&self.shared, grads, input, &d_out, n, i > 0) {
                Some(dx) => d_out = dx,
                None => break,
            }
        }
    }

    /// Accumulates object-head gradients from an upstream gradient on the code.
    /// Nothing flows into the backbone.
    pub fn backward_object_with(&self, object: &[f64], shared: &SharedTape, tape: &ObjectTape, d_code: &[f64], grads: &mut [f64]) {
        let layout = self.layout();
        let d_logits = softmax_backward(&tape.code, d_code, self.config.h + 1);
        let mut d_hidden = layout
            .object_out
            .backward(object, grads, &tape.hidden, &d_logits, shared.n, true)
            .expect("requested");
        relu_backward(&tape.hidden, &mut d_hidden);
        layout.object_hidden.backward(object, grads, shared.feature(), &d_hidden, shared.n, false);
    }

    /// Evaluates the network at a batch of points, in bounded-size chunks.
    pub fn evaluate(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<FieldSample> {
        const CHUNK: usize = 8192;
        let width = self.config.h + 1;
        let mut out = Vec::with_capacity(points.len());
        for (p, d) in points.chunks(CHUNK).zip(dirs.chunks(CHUNK)) {
            let tape = self.forward_shared(p, d);
            let obj = self.forward_object(&tape);
            for r in 0..tape.n {
                out.push(FieldSample {
                    sigma: tape.sigma[r],
                    color: Vec3::new(tape.color[3 * r], tape.color[3 * r + 1], tape.color[3 * r + 2]),
                    code: obj.code[r * width..(r + 1) * width].to_vec(),
                });
            }
        }
        out
    }

    /// Forward pass at a single point.
    pub fn forward(&self, p: Vec3, dir: Vec3) -> FieldSample {
        self.evaluate(&[p], &[dir]).pop().expect("one sample")
    }
}

impl Field for FieldNetwork {
    fn num_objects(&self) -> usize {
        self.config.h
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn background(&self) -> Vec3 {
        self.background
    }

    fn query(&self, p: Vec3, dir: Vec3) -> FieldSample {
        self.forward(p, dir)
    }

    fn query_batch(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<FieldSample> {
        self.evaluate(points, dirs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FieldNetwork {
        let cfg = NetworkConfig { h: 3, l_pos: 2, l_dir: 1, width: 8, depth: 2, color_width: 6, object_width: 5 };
        FieldNetwork::new(cfg, Aabb { min: Vec3::splat(-1.0), max: Vec3::splat(1.0) }, Vec3::ZERO, 7).unwrap()
    }

    #[test]
    fn zero_density_layer_gives_activation_constant() {
        let mut net = tiny();
        let d = net.layout().density;
        for v in &mut net.shared[d.offset..d.end()] {
            *v = 0.0;
        }
        let s = net.forward(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(s.sigma, density_at_zero());
        assert!((s.sigma - 0.31326168751822286).abs() < 1e-15);
    }

    #[test]
    fn equal_logits_give_uniform_code() {
        let mut net = tiny();
        let o = net.layout().object_out;
        for v in &mut net.object[o.offset..o.end()] {
            *v = 0.0;
        }
        let s = net.forward(Vec3::new(0.4, -0.2, 0.9), Vec3::new(1.0, 0.0, 0.0));
        assert!(s.code.iter().all(|c| (c - 0.25).abs() < 1e-15));
    }

    #[test]
    fn outputs_in_range() {
        let net = tiny();
        let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.37 - 9.0, (i as f64).sin() * 5.0, 2.0)).collect();
        let dirs = vec![Vec3::new(0.0, 1.0, 0.0); 50];
        for s in net.evaluate(&pts, &dirs) {
            assert!(s.sigma >= 0.0);
            assert!([s.color.x, s.color.y, s.color.z].iter().all(|c| (0.0..=1.0).contains(c)));
            assert!((s.code.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn density_and_code_ignore_direction() {
        let net = tiny();
        let p = Vec3::new(0.2, 0.1, -0.3);
        let a = net.forward(p, Vec3::new(1.0, 0.0, 0.0));
        let b = net.forward(p, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.code, b.code);
        assert_ne!(a.color, b.color);
    }
}
