//! Analytic scenes of solid primitives with flat albedo and piecewise-constant
//! density. They serve as training-data generator, ground-truth field, and
//! closed-form oracle for the renderer and the manipulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldSample};
use crate::geometry::{Aabb, Ray, SimilarityTransform, Vec3};

/// Density that makes a 0.1 m thick primitive nearly opaque.
pub const DEFAULT_DENSITY: f64 = 40.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
    /// Solid half-space `normal . p <= offset`.
    Plane { normal: Vec3, offset: f64 },
}

impl Shape {
    pub fn contains(&self, p: Vec3) -> bool {
        match *self {
            Shape::Sphere { center, radius } => (p - center).dot(p - center) <= radius * radius,
            Shape::Box { min, max } => {
                p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z && p.z <= max.z
            }
            Shape::Plane { normal, offset } => normal.dot(p) <= offset,
        }
    }

    /// Parametric interval of `origin + t dir` inside the shape (unbounded for
    /// half-spaces).
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                Some(((-b - sq) / a, (-b + sq) / a))
            }
            Shape::Box { min, max } => Aabb { min, max }.intersect(origin, dir),
            Shape::Plane { normal, offset } => {
                let nd = normal.dot(dir);
                let no = normal.dot(origin);
                if nd.abs() < 1e-15 {
                    return (no <= offset).then_some((f64::NEG_INFINITY, f64::INFINITY));
                }
                let t = (offset - no) / nd;
                if nd > 0.0 {
                    Some((f64::NEG_INFINITY, t))
                } else {
                    Some((t, f64::INFINITY))
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::Sphere { center, radius } => {
                if !(radius > 0.0) || !center.is_finite() {
                    return Err(Error::Domain("sphere needs a finite center and radius > 0".into()));
                }
            }
            Shape::Box { min, max } => {
                Aabb::new(min, max)?;
            }
            Shape::Plane { normal, offset } => {
                if !(normal.norm() > 0.0) || !offset.is_finite() {
                    return Err(Error::Domain("plane needs a non-zero normal".into()));
                }
            }
        }
        Ok(())
    }

    fn transformed(&self, t: &SimilarityTransform) -> Result<Shape> {
        Ok(match *self {
            Shape::Sphere { center, radius } => Shape::Sphere { center: t.apply(center), radius: radius * t.scale },
            Shape::Box { min, max } => {
                if !t.rotation.is_axis_permutation() {
                    return Err(Error::UnsupportedShape(
                        "boxes only support rotations that permute the axes".into(),
                    ));
                }
                let (a, b) = (t.apply(min), t.apply(max));
                Shape::Box { min: a.min(b), max: a.max(b) }
            }
            Shape::Plane { normal, offset } => {
                let n = t.rotation.mul_vec(normal);
                Shape::Plane { normal: n, offset: t.scale * offset + n.dot(t.translation) }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "default_density")]
    pub density: f64,
    pub albedo: Vec3,
    pub object_id: usize,
}

fn default_density() -> f64 {
    DEFAULT_DENSITY
}

impl Primitive {
    pub fn new(shape: Shape, albedo: Vec3, object_id: usize) -> Self {
        Primitive { shape, density: DEFAULT_DENSITY, albedo, object_id }
    }

    pub fn with_density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }
}

/// A list of primitives; where primitives overlap the first listed wins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    #[serde(rename = "H")]
    pub h: usize,
    pub background: Vec3,
    pub bounds: Aabb,
    pub primitives: Vec<Primitive>,
}

/// Closed-form pixel value of an analytic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticPixel {
    /// Composited against the background for the residual transmittance.
    pub color: Vec3,
    /// Expected termination distance; the residual transmittance terminates at `t_far`.
    pub depth: f64,
    /// Composited object code; the residual transmittance goes to the empty slot.
    pub code: Vec<f64>,
    pub residual: f64,
}

impl AnalyticScene {
    pub fn new(h: usize, background: Vec3, bounds: Aabb, primitives: Vec<Primitive>) -> Result<Self> {
        let scene = AnalyticScene { h, background, bounds, primitives };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(Error::Config("H must be >= 1".into()));
        }
        Aabb::new(self.bounds.min, self.bounds.max)?;
        for p in &self.primitives {
            p.shape.validate()?;
            if p.object_id == 0 || p.object_id > self.h {
                return Err(Error::Config(format!("object_id {} outside [1, H={}]", p.object_id, self.h)));
            }
            if !(p.density >= 0.0 && p.density.is_finite()) {
                return Err(Error::Domain("primitive density must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: AnalyticScene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// Sorted, deduplicated object ids present in the scene.
    pub fn object_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.primitives.iter().map(|p| p.object_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Three primitives (two spheres and a box) floating in a 2.4 m cube, with
    /// one spare object slot.
    pub fn toy3() -> Self {
        AnalyticScene::new(
            4,
            Vec3::new(0.05, 0.05, 0.08),
            Aabb { min: Vec3::new(-1.2, -1.2, -1.2), max: Vec3::new(1.2, 1.2, 1.2) },
            vec![
                Primitive::new(
                    Shape::Sphere { center: Vec3::new(-0.45, -0.35, 0.1), radius: 0.4 },
                    Vec3::new(0.9, 0.2, 0.15),
                    1,
                ),
                Primitive::new(
                    Shape::Box { min: Vec3::new(0.1, -0.25, -0.5), max: Vec3::new(0.7, 0.35, 0.1) },
                    Vec3::new(0.2, 0.75, 0.3),
                    2,
                ),
                Primitive::new(
                    Shape::Sphere { center: Vec3::new(0.0, 0.6, 0.45), radius: 0.3 },
                    Vec3::new(0.2, 0.35, 0.95),
                    3,
                ),
            ],
        )
        .expect("toy scene is valid")
    }

    /// Random non-overlapping spheres and boxes inside a 3 m cube.
    pub fn random(seed: u64, count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut primitives: Vec<Primitive> = Vec::new();
        let mut placed: Vec<(Vec3, f64)> = Vec::new();
        let mut attempts = 0;
        while primitives.len() < count && attempts < 10_000 {
            attempts += 1;
            let center = Vec3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9));
            let size = rng.gen_range(0.15..0.45);
            if placed.iter().any(|(c, r)| (*c - center).norm() < r + size * 1.8) {
                continue;
            }
            let shape = if rng.gen_bool(0.5) {
                Shape::Sphere { center, radius: size }
            } else {
                let half = Vec3::new(rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)) * size;
                Shape::Box { min: center - half, max: center + half }
            };
            let albedo = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let density = rng.gen_range(20.0..80.0);
            placed.push((center, size * 1.8));
            primitives.push(Primitive::new(shape, albedo, primitives.len() + 1).with_density(density));
        }
        let h = primitives.len().max(1) + 1;
        AnalyticScene::new(
            h,
            Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            Aabb { min: Vec3::splat(-1.5), max: Vec3::splat(1.5) },
            primitives,
        )
        .expect("random scene is valid")
    }

    pub fn empty_code(&self) -> Vec<f64> {
        one_hot(self.h + 1, self.h)
    }

    pub fn query(&self, p: Vec3) -> FieldSample {
        match self.primitives.iter().find(|prim| prim.shape.contains(p)) {
            Some(prim) => FieldSample {
                sigma: prim.density,
                color: prim.albedo,
                code: one_hot(self.h + 1, prim.object_id - 1),
            },
            None => FieldSample { sigma: 0.0, color: self.background, code: self.empty_code() },
        }
    }

    /// Exact volume rendering integral along `ray` (clipped to the scene bounds).
    pub fn analytic_pixel(&self, ray: &Ray) -> AnalyticPixel {
        let Some(ray) = ray.clipped(&self.bounds) else {
            return AnalyticPixel { color: self.background, depth: ray.t_far, code: self.empty_code(), residual: 1.0 };
        };
        let (near, far) = (ray.t_near, ray.t_far);
        let intervals: Vec<Option<(f64, f64)>> = self
            .primitives
            .iter()
            .map(|prim| {
                prim.shape
                    .intersect(ray.origin, ray.direction)
                    .map(|(a, b)| (a.max(near), b.min(far)))
                    .filter(|(a, b)| a < b)
            })
            .collect();
        let mut cuts: Vec<f64> = vec![near, far];
        for (a, b) in intervals.iter().flatten() {
            cuts.push(*a);
            cuts.push(*b);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut transmittance = 1.0;
        let mut color = Vec3::ZERO;
        let mut depth = 0.0;
        let mut code = vec![0.0; self.h + 1];
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let mid = 0.5 * (a + b);
            let owner = intervals
                .iter()
                .position(|iv| iv.is_some_and(|(s, e)| s <= mid && mid <= e));
            let Some(idx) = owner else { continue };
            let prim = &self.primitives[idx];
            let sigma = prim.density;
            if sigma == 0.0 {
                continue;
            }
            let len = b - a;
            let absorbed = -(-sigma * len).exp_m1();
            let weight = transmittance * absorbed;
            color += prim.albedo * weight;
            code[prim.object_id - 1] += weight;
            // integral of sigma e^{-sigma (t-a)} t over [a, b]
            let moment = a * absorbed + (absorbed - sigma * len * (-sigma * len).exp()) / sigma;
            depth += transmittance * moment;
            transmittance *= (-sigma * len).exp();
        }
        color += self.background * transmittance;
        code[self.h] += transmittance;
        depth += transmittance * far;
        AnalyticPixel { color, depth, code, residual: transmittance }
    }

    /// Copy of the scene with every primitive of `object_id` mapped by `t`.
    pub fn transform_object(&self, object_id: usize, t: &SimilarityTransform) -> Result<Self> {
        if !self.primitives.iter().any(|p| p.object_id == object_id) {
            return Err(Error::Domain(format!("object {object_id} is not in the scene")));
        }
        let mut out = self.clone();
        for prim in out.primitives.iter_mut().filter(|p| p.object_id == object_id) {
            prim.shape = prim.shape.transformed(t)?;
        }
        Ok(out)
    }
}

pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

pub fn query_oracle_field(scene: &AnalyticScene, p: Vec3, _view_dir: Vec3) -> FieldSample {
    scene.query(p)
}

pub fn analytic_pixel(scene: &AnalyticScene, ray: &Ray) -> AnalyticPixel {
    scene.analytic_pixel(ray)
}

pub fn transform_primitive(scene: &AnalyticScene, object_id: usize, t: &SimilarityTransform) -> Result<AnalyticScene> {
    scene.transform_object(object_id, t)
}

impl Field for AnalyticScene {
    fn num_objects(&self) -> usize {
        self.h
    }

    fn bounds(&self) -> Aabb {
        self.bounds
    }

    fn background(&self) -> Vec3 {
        self.background
    }

    fn query(&self, p: Vec3, _dir: Vec3) -> FieldSample {
        AnalyticScene::query(self, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use approx::assert_abs_diff_eq;

    fn big_bounds() -> Aabb {
        Aabb { min: Vec3::splat(-10.0), max: Vec3::splat(10.0) }
    }

    fn sphere_scene() -> AnalyticScene {
        AnalyticScene::new(
            4,
            Vec3::new(0.1, 0.2, 0.3),
            big_bounds(),
            vec![
                Primitive::new(Shape::Sphere { center: Vec3::ZERO, radius: 1.0 }, Vec3::new(1.0, 0.0, 0.0), 3),
                Primitive::new(Shape::Sphere { center: Vec3::new(0.5, 0.0, 0.0), radius: 1.0 }, Vec3::new(0.0, 1.0, 0.0), 1)
                    .with_density(7.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn oracle_field_values() {
        let s = sphere_scene();
        let inside = s.query(Vec3::new(-0.5, 0.0, 0.0));
        assert_eq!(inside.sigma, 40.0);
        assert_eq!(inside.code, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let outside = s.query(Vec3::new(5.0, 5.0, 5.0));
        assert_eq!(outside.sigma, 0.0);
        assert_eq!(outside.code, s.empty_code());
        assert_eq!(outside.color, s.background);
        // overlap region: first listed wins
        let both = s.query(Vec3::new(0.6, 0.0, 0.0));
        assert_eq!(both.sigma, 40.0);
        assert_eq!(both.code[2], 1.0);
    }

    #[test]
    fn vacuum_ray_returns_background() {
        let s = sphere_scene();
        let ray = Ray::new(Vec3::new(0.0, 5.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 0.0, 3.0).unwrap();
        let px = s.analytic_pixel(&ray);
        assert_eq!(px.color, s.background);
        assert_eq!(px.code, s.empty_code());
        assert_eq!(px.depth, 3.0);
    }

    fn slab(min_x: f64, max_x: f64, density: f64, albedo: Vec3, id: usize) -> Primitive {
        Primitive::new(Shape::Box { min: Vec3::new(min_x, -1.0, -1.0), max: Vec3::new(max_x, 1.0, 1.0) }, albedo, id)
            .with_density(density)
    }

    #[test]
    fn opaque_slab_limit() {
        let s = AnalyticScene::new(2, Vec3::ZERO, big_bounds(), vec![slab(2.0, 3.0, 1e8, Vec3::new(1.0, 0.0, 0.0), 1)])
            .unwrap();
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 0.0, 9.0).unwrap();
        let px = s.analytic_pixel(&ray);
        assert_abs_diff_eq!(px.color.x, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(px.depth, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(px.code[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn half_transparent_slab_then_opaque() {
        // sigma * len = ln 2 over [1, 2], then an opaque slab over [3, 4]
        let s = AnalyticScene::new(
            2,
            Vec3::ZERO,
            big_bounds(),
            vec![
                slab(1.0, 2.0, std::f64::consts::LN_2, Vec3::new(1.0, 0.0, 0.0), 1),
                slab(3.0, 4.0, 1e6, Vec3::new(0.0, 1.0, 0.0), 2),
            ],
        )
        .unwrap();
        let ray = Ray::new(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 0.0, 9.0).unwrap();
        let px = s.analytic_pixel(&ray);
        // hand evaluation: w1 = 1 - e^{-ln 2} = 0.5, w2 = 0.5 (1 - e^{-1e6}) = 0.5
        assert_abs_diff_eq!(px.code[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(px.code[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(px.color.x, 0.5, epsilon = 1e-12);
        // depth oracle: midpoint quadrature of the first slab's moment, plus the
        // opaque slab stopping at its entry (t = 3) with weight 0.5
        let n = 200_000;
        let mut first = 0.0;
        for i in 0..n {
            let t = 1.0 + (i as f64 + 0.5) / n as f64;
            first += std::f64::consts::LN_2 * (-(std::f64::consts::LN_2) * (t - 1.0)).exp() * t / n as f64;
        }
        assert_abs_diff_eq!(px.depth, first + 0.5 * 3.0, epsilon = 1e-5);
        let sum: f64 = px.code.iter().sum();
        assert!(sum <= 1.0 + 1e-9);
    }

    #[test]
    fn transform_examples() {
        let scene = AnalyticScene::new(
            2,
            Vec3::ZERO,
            big_bounds(),
            vec![Primitive::new(Shape::Sphere { center: Vec3::new(0.0, 0.0, 1.0), radius: 0.5 }, Vec3::splat(1.0), 1)],
        )
        .unwrap();
        let moved = scene.transform_object(1, &SimilarityTransform::translation(Vec3::new(0.3, 0.0, 0.0))).unwrap();
        assert_eq!(
            moved.primitives[0].shape,
            Shape::Sphere { center: Vec3::new(0.3, 0.0, 1.0), radius: 0.5 }
        );
        let scaled = scene
            .transform_object(1, &SimilarityTransform::new(Mat3::IDENTITY, Vec3::ZERO, 0.8).unwrap())
            .unwrap();
        match scaled.primitives[0].shape {
            Shape::Sphere { radius, .. } => assert_abs_diff_eq!(radius, 0.4, epsilon = 1e-15),
            _ => unreachable!(),
        }
        let same = scene.transform_object(1, &SimilarityTransform::IDENTITY).unwrap();
        assert_eq!(same, scene);
        assert!(scene.transform_object(2, &SimilarityTransform::IDENTITY).is_err());
    }

    #[test]
    fn box_rotation_rules() {
        let scene = AnalyticScene::new(2, Vec3::ZERO, big_bounds(), vec![slab(1.0, 2.0, 10.0, Vec3::splat(1.0), 1)]).unwrap();
        let quarter = SimilarityTransform::new(
            Mat3::rotation(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2),
            Vec3::ZERO,
            1.0,
        )
        .unwrap();
        let turned = scene.transform_object(1, &quarter).unwrap();
        match turned.primitives[0].shape {
            Shape::Box { min, max } => {
                assert!((min - Vec3::new(-1.0, 1.0, -1.0)).norm() < 1e-12);
                assert!((max - Vec3::new(1.0, 2.0, 1.0)).norm() < 1e-12);
            }
            _ => unreachable!(),
        }
        let oblique = SimilarityTransform::new(
            Mat3::rotation(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_6),
            Vec3::ZERO,
            1.0,
        )
        .unwrap();
        assert!(matches!(scene.transform_object(1, &oblique), Err(Error::UnsupportedShape(_))));
        let exact = SimilarityTransform::new(
            Mat3::from_rows([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
            Vec3::ZERO,
            1.0,
        )
        .unwrap();
        let rotated = scene.transform_object(1, &exact).unwrap();
        assert_eq!(
            rotated.primitives[0].shape,
            Shape::Box { min: Vec3::new(-1.0, 1.0, -1.0), max: Vec3::new(1.0, 2.0, 1.0) }
        );
    }

    #[test]
    fn plane_transform_keeps_membership() {
        let plane = Shape::Plane { normal: Vec3::new(0.0, 0.0, 1.0), offset: 0.5 };
        let t = SimilarityTransform::new(
            Mat3::rotation(Vec3::new(1.0, 1.0, 0.0), 0.7),
            Vec3::new(0.2, -0.3, 0.4),
            1.3,
        )
        .unwrap();
        let moved = plane.transformed(&t).unwrap();
        for p in [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0, 2.0, 0.9), Vec3::new(3.0, 0.0, -2.0)] {
            assert_eq!(plane.contains(p), moved.contains(t.apply(p)));
        }
    }

    #[test]
    fn scene_json_schema() {
        let text = r#"{
            "H": 3, "background": [0, 0, 0],
            "bounds": {"min": [-1, -1, -1], "max": [1, 1, 1]},
            "primitives": [
                {"shape": "sphere", "center": [0, 0, 0], "radius": 0.5, "density": 40, "albedo": [1, 0, 0], "object_id": 1},
                {"shape": "box", "min": [0.6, 0, 0], "max": [0.9, 0.2, 0.2], "albedo": [0, 1, 0], "object_id": 2},
                {"shape": "plane", "normal": [0, 0, 1], "offset": -0.9, "density": 5, "albedo": [0, 0, 1], "object_id": 3}
            ]
        }"#;
        let scene = AnalyticScene::from_json(text).unwrap();
        assert_eq!(scene.primitives.len(), 3);
        assert_eq!(scene.primitives[1].density, DEFAULT_DENSITY);
        let back = AnalyticScene::from_json(&scene.to_json()).unwrap();
        assert_eq!(back, scene);
        let bad = text.replace("\"object_id\": 3", "\"object_id\": 4");
        assert!(matches!(AnalyticScene::from_json(&bad), Err(Error::Config(_))));
    }
}
