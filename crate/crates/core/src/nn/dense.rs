//! Fully connected layers over row-major batches, backed by `dgemm`.

use matrixmultiply::dgemm;
use serde::{Deserialize, Serialize};

/// A dense layer whose weights (`fan_in x fan_out`, row-major) and bias live
/// at `offset` inside a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let w_end = self.offset + self.fan_in * self.fan_out;
        (&params[self.offset..w_end], &params[w_end..self.end()])
    }

    /// `y = x W + b` for `n` rows.
    pub fn forward(&self, params: &[f64], x: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), n * self.fan_in);
        let (w, b) = self.split(params);
        let mut y = Vec::with_capacity(n * self.fan_out);
        for _ in 0..n {
            y.extend_from_slice(b);
        }
        if n == 0 || self.fan_in == 0 {
            return y;
        }
        // SAFETY: every slice spans exactly the extents implied by the strides.
        unsafe {
            dgemm(
                n,
                self.fan_in,
                self.fan_out,
                1.0,
                x.as_ptr(),
                self.fan_in as isize,
                1,
                w.as_ptr(),
                self.fan_out as isize,
                1,
                1.0,
                y.as_mut_ptr(),
                self.fan_out as isize,
                1,
            );
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and, when asked, returns
    /// the gradient with respect to the input.
    pub fn backward(&self, params: &[f64], grads: &mut [f64], x: &[f64], dy: &[f64], n: usize, want_dx: bool) -> Option<Vec<f64>> {
        debug_assert_eq!(dy.len(), n * self.fan_out);
        if n == 0 {
            return want_dx.then(Vec::new);
        }
        let w_end = self.offset + self.fan_in * self.fan_out;
        {
            let (gw, gb) = grads[self.offset..self.end()].split_at_mut(w_end - self.offset);
            if self.fan_in > 0 {
                // SAFETY: x is viewed transposed (fan_in x n); extents match the slices.
                unsafe {
                    dgemm(
                        self.fan_in,
                        n,
                        self.fan_out,
                        1.0,
                        x.as_ptr(),
                        1,
                        self.fan_in as isize,
                        dy.as_ptr(),
                        self.fan_out as isize,
                        1,
                        1.0,
                        gw.as_mut_ptr(),
                        self.fan_out as isize,
                        1,
                    );
                }
            }
            for row in dy.chunks(self.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        if !want_dx {
            return None;
        }
        let w = &params[self.offset..w_end];
        let mut dx = vec![0.0; n * self.fan_in];
        if self.fan_in > 0 {
            // SAFETY: W is viewed transposed (fan_out x fan_in).
            unsafe {
                dgemm(
                    n,
                    self.fan_out,
                    self.fan_in,
                    1.0,
                    dy.as_ptr(),
                    self.fan_out as isize,
                    1,
                    w.as_ptr(),
                    1,
                    self.fan_out as isize,
                    0.0,
                    dx.as_mut_ptr(),
                    self.fan_in as isize,
                    1,
                );
            }
        }
        Some(dx)
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward(out: &[f64], grad: &mut [f64]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Row-wise softmax of an `n x width` matrix, in place.
pub fn softmax_rows(x: &mut [f64], width: usize) {
    for row in x.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Gradient through a row-wise softmax given its output `p`.
pub fn softmax_backward(p: &[f64], grad: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for ((pr, gr), or) in p.chunks(width).zip(grad.chunks(width)).zip(out.chunks_mut(width)) {
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..width {
            or[j] = pr[j] * (gr[j] - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(w: &[f64], b: &[f64], x: &[f64], n: usize, fi: usize, fo: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * fo];
        for r in 0..n {
            for o in 0..fo {
                y[r * fo + o] = b[o] + (0..fi).map(|i| x[r * fi + i] * w[i * fo + o]).sum::<f64>();
            }
        }
        y
    }

    #[test]
    fn forward_and_backward_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, fi, fo) = (7, 5, 4);
        let layer = Dense { fan_in: fi, fan_out: fo, offset: 2 };
        let params: Vec<f64> = (0..layer.end()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n * fi).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = layer.forward(&params, &x, n);
        let w = &params[2..2 + fi * fo];
        let b = &params[2 + fi * fo..layer.end()];
        for (a, e) in y.iter().zip(naive(w, b, &x, n, fi, fo)) {
            assert!((a - e).abs() < 1e-12);
        }
        // L = sum(dy . y): gradients are closed form
        let dy: Vec<f64> = (0..n * fo).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grads = vec![0.0; params.len()];
        let dx = layer.backward(&params, &mut grads, &x, &dy, n, true).unwrap();
        for i in 0..fi {
            for o in 0..fo {
                let want: f64 = (0..n).map(|r| x[r * fi + i] * dy[r * fo + o]).sum();
                assert!((grads[2 + i * fo + o] - want).abs() < 1e-12);
            }
        }
        for r in 0..n {
            for i in 0..fi {
                let want: f64 = (0..fo).map(|o| dy[r * fo + o] * w[i * fo + o]).sum();
                assert!((dx[r * fi + i] - want).abs() < 1e-12);
            }
        }
        assert_eq!(grads[0], 0.0);
    }

    #[test]
    fn softmax_is_on_simplex() {
        let mut x = vec![1000.0, -1000.0, 3.0, 0.0, 0.0, 0.0];
        softmax_rows(&mut x, 3);
        for row in x.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((x[3] - 1.0 / 3.0).abs() < 1e-15);
    }
}
