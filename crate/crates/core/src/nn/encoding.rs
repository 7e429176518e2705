//! Sinusoidal positional encoding.
//!
//! Layout for `L` frequencies: `[x, y, z]` followed, for each `i < L`, by
//! `sin(2^i pi x), sin(2^i pi y), sin(2^i pi z), cos(2^i pi x), cos(2^i pi y), cos(2^i pi z)`.

use crate::geometry::Vec3;
use std::f64::consts::PI;

pub fn encoded_len(l: usize) -> usize {
    3 + 6 * l
}

pub fn encode_into(x: Vec3, l: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_len(l));
    let c = x.to_array();
    out[..3].copy_from_slice(&c);
    let mut freq = PI;
    for i in 0..l {
        let base = 3 + 6 * i;
        for j in 0..3 {
            let (s, co) = (freq * c[j]).sin_cos();
            out[base + j] = s;
            out[base + 3 + j] = co;
        }
        freq *= 2.0;
    }
}

pub fn positional_encoding(x: Vec3, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(l)];
    encode_into(x, l, &mut out);
    out
}

/// Row-major `n x encoded_len(l)` encoding of a batch.
pub fn encode_batch(xs: &[Vec3], l: usize) -> Vec<f64> {
    let width = encoded_len(l);
    let mut out = vec![0.0; xs.len() * width];
    for (x, row) in xs.iter().zip(out.chunks_mut(width)) {
        encode_into(*x, l, row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let p = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(positional_encoding(p, 0), vec![0.3, -1.0, 2.0]);
        let zero = positional_encoding(Vec3::ZERO, 3);
        for i in 0..3 {
            assert!(zero[3 + 6 * i..6 + 6 * i].iter().all(|v| *v == 0.0));
            assert!(zero[6 + 6 * i..9 + 6 * i].iter().all(|v| *v == 1.0));
        }
        let e = positional_encoding(Vec3::new(1.0, 0.0, 0.0), 1);
        assert_eq!(e.len(), 9);
        assert!(e[3].abs() < 1e-15);
        assert_eq!(e[6], -1.0);
    }
}
