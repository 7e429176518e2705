//! The field abstraction shared by the analytic oracle and the neural field.

use crate::geometry::{Aabb, Vec3};

/// Value of a field at one query point.
///
/// `code` has `H + 1` entries: index `h - 1` holds object `h` and the last
/// index is the empty-space slot.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: Vec3,
    pub code: Vec<f64>,
}

impl FieldSample {
    /// The all-zero sample used for removed points.
    pub fn removed(code_len: usize) -> Self {
        FieldSample { sigma: 0.0, color: Vec3::ZERO, code: vec![0.0; code_len] }
    }
}

pub trait Field: Sync {
    /// `H`, the number of solid object slots.
    fn num_objects(&self) -> usize;

    /// Region outside of which the field is treated as empty.
    fn bounds(&self) -> Aabb;

    fn background(&self) -> Vec3;

    fn query(&self, p: Vec3, dir: Vec3) -> FieldSample;

    /// Batched query; implementations may override for throughput.
    fn query_batch(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<FieldSample> {
        points.iter().zip(dirs).map(|(p, d)| self.query(*p, *d)).collect()
    }

    fn code_len(&self) -> usize {
        self.num_objects() + 1
    }
}

impl<F: Field + ?Sized> Field for &F {
    fn num_objects(&self) -> usize {
        (**self).num_objects()
    }
    fn bounds(&self) -> Aabb {
        (**self).bounds()
    }
    fn background(&self) -> Vec3 {
        (**self).background()
    }
    fn query(&self, p: Vec3, dir: Vec3) -> FieldSample {
        (**self).query(p, dir)
    }
    fn query_batch(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<FieldSample> {
        (**self).query_batch(points, dirs)
    }
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax(code: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in code.iter().enumerate() {
        if *v > code[best] {
            best = i;
        }
    }
    best
}
