//! Vectors, similarity transforms, pinhole cameras, rays and along-ray sampling.
//!
//! World frame is right-handed with +z up. Cameras look down their local -z
//! axis with +x to the right and +y up; pixel rows grow downwards and pixel
//! centers sit at half-integer coordinates.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self / self.norm()
    }

    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        self.into()
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Mat3 { rows }
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3 {
            rows: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    /// Right-handed rotation of `angle` radians about a unit `axis`.
    pub fn rotation(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3::from_rows([
            [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
            [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
            [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
        ])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.rows[0][j], self.rows[1][j], self.rows[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3::from_rows([
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, out) in row.iter_mut().enumerate() {
                *out = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Mat3 { rows }
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Orthonormal with determinant +1, within `tol`.
    pub fn is_rotation(&self, tol: f64) -> bool {
        let rrt = self.mul_mat(&self.transpose());
        let ortho = (0..3).all(|i| {
            (0..3).all(|j| {
                let want = if i == j { 1.0 } else { 0.0 };
                (rrt.rows[i][j] - want).abs() <= tol
            })
        });
        ortho && (self.determinant() - 1.0).abs() <= tol
    }

    /// True when every row and column holds exactly one +-1 entry, up to
    /// 1e-12 per entry.
    pub fn is_axis_permutation(&self) -> bool {
        const TOL: f64 = 1e-12;
        let zero = |x: f64| x.abs() <= TOL;
        let unit = |x: f64| zero(x) || (x.abs() - 1.0).abs() <= TOL;
        let rows_ok = self.rows.iter().all(|r| {
            r.iter().all(|&x| unit(x)) && r.iter().filter(|x| !zero(**x)).count() == 1
        });
        let cols_ok = (0..3).all(|j| (0..3).filter(|&i| !zero(self.rows[i][j])).count() == 1);
        rows_ok && cols_ok
    }

    pub fn to_flat(&self) -> [f64; 9] {
        let r = &self.rows;
        [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]]
    }

    pub fn from_flat(a: [f64; 9]) -> Mat3 {
        Mat3::from_rows([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }
}

/// Applies `p -> scale * R p + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
        scale: 1.0,
    };

    pub fn new(rotation: Mat3, translation: Vec3, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("similarity scale must be > 0, got {scale}")));
        }
        if !rotation.is_rotation(1e-9) {
            return Err(Error::Domain("rotation must be orthonormal with det +1".into()));
        }
        if !translation.is_finite() {
            return Err(Error::Domain("translation must be finite".into()));
        }
        Ok(SimilarityTransform { rotation, translation, scale })
    }

    pub fn translation(delta: Vec3) -> Self {
        SimilarityTransform { translation: delta, ..Self::IDENTITY }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) * self.scale + self.translation
    }

    /// `(1/t) R^T (p - translation)`; the pre-image of `p`.
    pub fn apply_inverse(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.translation) * (1.0 / self.scale)
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        SimilarityTransform {
            rotation: rt,
            translation: -(rt.mul_vec(self.translation) * inv_scale),
            scale: inv_scale,
        }
    }

    /// `next` applied after `self`.
    pub fn then(&self, next: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: next.rotation.mul_mat(&self.rotation),
            translation: next.apply(self.translation),
            scale: next.scale * self.scale,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Mat3::IDENTITY && self.translation == Vec3::ZERO && self.scale == 1.0
    }
}

pub fn apply_similarity(t: &SimilarityTransform, p: Vec3) -> Vec3 {
    t.apply(p)
}

pub fn invert_similarity(t: &SimilarityTransform) -> SimilarityTransform {
    t.inverse()
}

/// World-from-camera rigid motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidPose {
    pub const IDENTITY: RigidPose = RigidPose { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    /// Pose of a camera at `eye` looking at `target`, with world +z as the up hint.
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::Domain("look_at eye and target coincide".into()));
        }
        let forward = forward.normalized();
        let mut up = Vec3::new(0.0, 0.0, 1.0);
        if forward.cross(up).norm() < 1e-9 {
            up = Vec3::new(0.0, 1.0, 0.0);
        }
        let right = forward.cross(up).normalized();
        let cam_up = right.cross(forward);
        Ok(RigidPose {
            rotation: Mat3::from_columns(right, cam_up, -forward),
            translation: eye,
        })
    }

    pub fn to_matrix(&self) -> [f64; 16] {
        let r = &self.rotation.rows;
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix(m: [f64; 16]) -> Result<Self> {
        let rotation = Mat3::from_rows([[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]]);
        if !rotation.is_rotation(1e-6) {
            return Err(Error::Domain("camera pose rotation block is not a rotation".into()));
        }
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::Domain("camera pose last row must be [0, 0, 0, 1]".into()));
        }
        Ok(RigidPose { rotation, translation: Vec3::new(m[3], m[7], m[11]) })
    }
}

/// A 4x4 matrix accepted either flat (16 numbers, row-major) or as 4 rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Matrix4Repr {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl Matrix4Repr {
    fn into_flat(self) -> Result<[f64; 16]> {
        let flat: Vec<f64> = match self {
            Matrix4Repr::Flat(v) => v,
            Matrix4Repr::Rows(rows) => rows.into_iter().flatten().collect(),
        };
        flat.try_into()
            .map_err(|v: Vec<f64>| Error::Domain(format!("pose needs 16 entries, got {}", v.len())))
    }
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    pose: Matrix4Repr,
}

/// Pinhole camera. Serialized as `{fx, fy, cx, cy, width, height, pose}` with
/// `pose` the 4x4 row-major world-from-camera matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub pose: RigidPose,
}

impl TryFrom<CameraRepr> for Camera {
    type Error = Error;
    fn try_from(r: CameraRepr) -> Result<Self> {
        let pose = RigidPose::from_matrix(r.pose.into_flat()?)?;
        Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, pose)
    }
}

impl From<Camera> for CameraRepr {
    fn from(c: Camera) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            pose: Matrix4Repr::Flat(c.pose.to_matrix().to_vec()),
        }
    }
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, pose: RigidPose) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Domain("focal lengths must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Domain("image size must be positive".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::Domain("principal point outside the image".into()));
        }
        Ok(Camera { fx, fy, cx, cy, width, height, pose })
    }

    /// Square-pixel camera with the given horizontal field of view and the
    /// principal point at the image center.
    pub fn with_fov(fov_deg: f64, width: u32, height: u32, pose: RigidPose) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        Camera::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, pose)
    }

    pub fn look_at(eye: Vec3, target: Vec3, fov_deg: f64, width: u32, height: u32) -> Result<Self> {
        Camera::with_fov(fov_deg, width, height, RigidPose::look_at(eye, target)?)
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }

    /// Ray through sub-pixel position `(u, v)`; `t_near = 0`, `t_far = +inf`.
    pub fn generate_ray(&self, u: f64, v: f64) -> Result<Ray> {
        if !(0.0..self.width as f64).contains(&u) || !(0.0..self.height as f64).contains(&v) {
            return Err(Error::Domain(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let local = Vec3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0);
        let direction = self.pose.rotation.mul_vec(local).normalized();
        Ok(Ray { origin: self.center(), direction, t_near: 0.0, t_far: f64::INFINITY })
    }

    /// Ray through the center of pixel `(i, j)` (column, row).
    pub fn pixel_ray(&self, i: u32, j: u32) -> Result<Ray> {
        self.generate_ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Projects a world point to pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64)> {
        let local = self.pose.rotation.transpose().mul_vec(p - self.center());
        if local.z >= 0.0 {
            return None;
        }
        let depth = -local.z;
        Some((self.cx + self.fx * local.x / depth, self.cy - self.fy * local.y / depth))
    }
}

pub fn generate_ray(camera: &Camera, u: f64, v: f64) -> Result<Ray> {
    camera.generate_ray(u, v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::Domain("box min must be < max componentwise".into()));
        }
        Ok(Aabb { min, max })
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Slab test; returns the parametric interval where `origin + t dir` is inside.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let (o, d, lo, hi) = (origin[axis], dir[axis], self.min[axis], self.max[axis]);
            if d.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (a, b) = ((lo - o) / d, (hi - o) / d);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if !(t_near >= 0.0 && t_near < t_far) {
            return Err(Error::Domain(format!("ray needs 0 <= t_near < t_far, got [{t_near}, {t_far}]")));
        }
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Domain("ray direction must be non-zero".into()));
        }
        Ok(Ray { origin, direction: direction / n, t_near, t_far })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Restricts the ray's interval to its overlap with `bounds`.
    pub fn clipped(&self, bounds: &Aabb) -> Option<Ray> {
        let (a, b) = bounds.intersect(self.origin, self.direction)?;
        let near = a.max(self.t_near);
        let far = b.min(self.t_far);
        (near < far).then_some(Ray { t_near: near, t_far: far, ..*self })
    }
}

/// Ordered sample distances along a ray with their forward deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub distances: Vec<f64>,
    pub deltas: Vec<f64>,
    pub t_near: f64,
    pub t_far: f64,
    /// Sample count of the stratified pass the samples descend from; fixes the
    /// final delta at `(t_far - t_near) / base_count`.
    pub base_count: usize,
}

impl RaySamples {
    fn from_sorted(distances: Vec<f64>, t_near: f64, t_far: f64, base_count: usize) -> Self {
        let cap = (t_far - t_near) / base_count as f64;
        let deltas = distances
            .windows(2)
            .map(|w| w[1] - w[0])
            .chain(distances.last().map(|_| cap))
            .collect();
        RaySamples { distances, deltas, t_near, t_far, base_count }
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    /// Bin edges used for importance resampling: the ray bounds and the midpoints
    /// between consecutive samples.
    pub fn bin_edges(&self) -> Vec<f64> {
        let mut edges = Vec::with_capacity(self.len() + 1);
        edges.push(self.t_near);
        edges.extend(self.distances.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        edges.push(self.t_far);
        edges
    }

    /// Merges extra distances in, returning the merged samples and, for each
    /// merged sample, its index in `self.distances ++ extra`.
    pub fn merged(&self, extra: &[f64]) -> (RaySamples, Vec<usize>) {
        let mut tagged: Vec<(f64, usize)> = self
            .distances
            .iter()
            .chain(extra)
            .copied()
            .enumerate()
            .map(|(i, d)| (d, i))
            .collect();
        tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        tagged.dedup_by(|b, a| a.0 == b.0);
        let (distances, order): (Vec<f64>, Vec<usize>) = tagged.into_iter().unzip();
        let base = self.base_count.max(1);
        (RaySamples::from_sorted(distances, self.t_near, self.t_far, base), order)
    }
}

pub fn stratified_samples_with<R: Rng>(ray: &Ray, count: usize, jitter: bool, rng: &mut R) -> Result<RaySamples> {
    if count == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    if !ray.t_far.is_finite() {
        return Err(Error::Domain("cannot sample an unbounded ray; clip it first".into()));
    }
    let width = (ray.t_far - ray.t_near) / count as f64;
    let distances = (0..count)
        .map(|k| {
            let offset = if jitter { rng.gen::<f64>() } else { 0.5 };
            ray.t_near + (k as f64 + offset) * width
        })
        .collect::<Vec<_>>();
    let mut samples = RaySamples::from_sorted(distances, ray.t_near, ray.t_far, count);
    // Jitter can produce a zero offset in consecutive bins only with measure zero,
    // but keep strict ordering regardless.
    samples.distances.dedup();
    if samples.distances.len() != count {
        samples = RaySamples::from_sorted(samples.distances, ray.t_near, ray.t_far, count);
    }
    Ok(samples)
}

pub fn stratified_samples(ray: &Ray, count: usize, jitter: bool, seed: u64) -> Result<RaySamples> {
    stratified_samples_with(ray, count, jitter, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Draws `count` distances by inverse CDF over the piecewise-constant density
/// on `edges` proportional to `weights`; uniform when the weights are all zero.
pub fn sample_pdf<R: Rng>(edges: &[f64], weights: &[f64], count: usize, rng: &mut R) -> Vec<f64> {
    debug_assert_eq!(edges.len(), weights.len() + 1);
    let clean: Vec<f64> = weights.iter().map(|w| if w.is_finite() && *w > 0.0 { *w } else { 0.0 }).collect();
    let total: f64 = clean.iter().sum();
    let n = clean.len();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in &clean {
        acc += if total > 0.0 { w / total } else { 1.0 / n as f64 };
        cdf.push(acc);
    }
    cdf[n] = 1.0;
    (0..count)
        .map(|_| {
            let u: f64 = rng.gen();
            // first bin whose upper cdf exceeds u, skipping empty bins
            let bin = cdf[1..].partition_point(|&c| c <= u).min(n - 1);
            let (c0, c1) = (cdf[bin], cdf[bin + 1]);
            let frac = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.5 };
            let d = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
            // keep strictly inside the bin so containment checks are exact
            d.clamp(edges[bin], edges[bin + 1])
        })
        .collect()
}

pub fn hierarchical_resample_with<R: Rng>(
    coarse: &RaySamples,
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<RaySamples> {
    if weights.len() != coarse.len() {
        return Err(Error::Domain("one weight per coarse sample required".into()));
    }
    if weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Domain("resampling weights must be non-negative".into()));
    }
    let extra = sample_pdf(&coarse.bin_edges(), weights, count, rng);
    Ok(coarse.merged(&extra).0)
}

pub fn hierarchical_resample(coarse: &RaySamples, weights: &[f64], count: usize, seed: u64) -> Result<RaySamples> {
    hierarchical_resample_with(coarse, weights, count, &mut ChaCha8Rng::seed_from_u64(seed))
}
