//! Object-level editing by inverse queries.
//!
//! Every sample along a query ray is looked up twice: at its own position and
//! at its pre-image under the edit. Comparing the hard object codes of the two
//! lookups with the target code decides whether the sample is kept, replaced
//! by the pre-image values, emptied, or whether the edit collides with another
//! object.

use serde::{Deserialize, Serialize};

use crate::dataset::code_label;
use crate::error::{Error, Result};
use crate::field::{argmax, Field, FieldSample};
use crate::geometry::{Camera, Mat3, Ray, RaySamples, SimilarityTransform, Vec3};
use crate::losses::MaskMatrix;
use crate::render::{composite_ray, for_chunks, mix_seed, pixel_rays, sample_rays, RenderOptions, RenderOutput};
use crate::scene::one_hot;

/// A rigid-plus-scale edit of one object.
///
/// `target` is the 1-based object id; its code is the one-hot vector at slot
/// `target - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct ManipulationSpec {
    pub target: usize,
    pub transform: SimilarityTransform,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RotationRepr {
    Flat([f64; 9]),
    Nested([[f64; 3]; 3]),
}

fn identity_rotation() -> RotationRepr {
    RotationRepr::Flat(Mat3::IDENTITY.to_flat())
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRepr {
    target: usize,
    #[serde(default)]
    translate: [f64; 3],
    /// Row-major.
    #[serde(default = "identity_rotation")]
    rotate: RotationRepr,
    #[serde(default = "unit_scale")]
    scale: f64,
}

impl TryFrom<SpecRepr> for ManipulationSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let rotation = match r.rotate {
            RotationRepr::Flat(a) => Mat3::from_flat(a),
            RotationRepr::Nested(rows) => Mat3::from_rows(rows),
        };
        ManipulationSpec::new(r.target, SimilarityTransform::new(rotation, r.translate.into(), r.scale)?)
    }
}

impl From<ManipulationSpec> for SpecRepr {
    fn from(s: ManipulationSpec) -> Self {
        SpecRepr {
            target: s.target,
            translate: s.transform.translation.into(),
            rotate: RotationRepr::Flat(s.transform.rotation.to_flat()),
            scale: s.transform.scale,
        }
    }
}

impl ManipulationSpec {
    pub fn new(target: usize, transform: SimilarityTransform) -> Result<Self> {
        if target == 0 {
            return Err(Error::Domain("target ids start at 1; 0 is the empty slot".into()));
        }
        SimilarityTransform::new(transform.rotation, transform.translation, transform.scale)?;
        Ok(ManipulationSpec { target, transform })
    }

    pub fn translation(target: usize, delta: Vec3) -> Result<Self> {
        ManipulationSpec::new(target, SimilarityTransform::translation(delta))
    }

    /// Rotation by `angle` radians about the axis through `pivot`.
    pub fn rotation_about(target: usize, axis: Vec3, angle: f64, pivot: Vec3) -> Result<Self> {
        let r = Mat3::rotation(axis, angle);
        ManipulationSpec::new(target, SimilarityTransform::new(r, pivot - r.mul_vec(pivot), 1.0)?)
    }

    /// Uniform scaling by `scale` about `pivot`.
    pub fn scaling_about(target: usize, scale: f64, pivot: Vec3) -> Result<Self> {
        ManipulationSpec::new(target, SimilarityTransform::new(Mat3::IDENTITY, pivot * (1.0 - scale), scale)?)
    }

    /// Checks the target against a field with `h` object slots.
    pub fn validate(&self, h: usize) -> Result<()> {
        if self.target == 0 || self.target > h {
            return Err(Error::Config(format!("target {} is outside 1..={h}", self.target)));
        }
        Ok(())
    }

    /// Code slot of the target.
    pub fn slot(&self) -> usize {
        self.target - 1
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// `(1/t) R^-1 (p - dp)`.
pub fn inverse_point(p: Vec3, spec: &ManipulationSpec) -> Vec3 {
    spec.transform.apply_inverse(p)
}

/// One-hot vector at the argmax; ties go to the lowest index.
pub fn hard_code(code: &[f64]) -> Vec<f64> {
    one_hot(code.len(), argmax(code))
}

/// Neighbour vote on slot indices. The center is replaced only if it differs
/// from every neighbour and one code holds a strict majority of them.
pub fn vote_label(center: usize, neighbours: &[usize]) -> usize {
    if neighbours.is_empty() || neighbours.contains(&center) {
        return center;
    }
    let mut best = (center, 0);
    for &n in neighbours {
        let count = neighbours.iter().filter(|&&m| m == n).count();
        if count > best.1 {
            best = (n, count);
        }
    }
    if 2 * best.1 > neighbours.len() {
        best.0
    } else {
        center
    }
}

/// [`vote_label`] on one-hot codes.
pub fn vote_code(center: &[f64], neighbours: &[Vec<f64>]) -> Vec<f64> {
    let labels: Vec<usize> = neighbours.iter().map(|n| argmax(n)).collect();
    one_hot(center.len(), vote_label(argmax(center), &labels))
}

/// One voting pass over a row-major slot map. Border pixels vote among the
/// neighbours that exist.
pub fn vote_map(slots: &[usize], width: usize, height: usize) -> Vec<usize> {
    assert_eq!(slots.len(), width * height, "slot map size");
    let mut out = Vec::with_capacity(slots.len());
    let mut neighbours = Vec::with_capacity(8);
    for y in 0..height {
        for x in 0..width {
            neighbours.clear();
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    neighbours.push(slots[ny as usize * width + nx as usize]);
                }
            }
            out.push(vote_label(slots[y * width + x], &neighbours));
        }
    }
    out
}

/// Post-edit values of one sample point. The all-zero sample is the legal
/// "removed" state.
pub type EditedSample = FieldSample;

/// A sample occupied by another solid object whose pre-image lies in the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// `(u, v)` pixel of the ray when the ray belongs to a view.
    pub pixel: Option<(u32, u32)>,
    /// Index of the sample along the ray.
    pub sample: usize,
    /// Object id being moved.
    pub target: usize,
    /// Object id already occupying the sample.
    pub occupying: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RayEdit {
    Rendered(RenderOutput),
    Collision(CollisionReport),
}

impl RayEdit {
    pub fn rendered(self) -> Option<RenderOutput> {
        match self {
            RayEdit::Rendered(r) => Some(r),
            RayEdit::Collision(_) => None,
        }
    }

    pub fn collision(&self) -> Option<&CollisionReport> {
        match self {
            RayEdit::Collision(c) => Some(c),
            RayEdit::Rendered(_) => None,
        }
    }
}

fn check_specs(specs: &[ManipulationSpec], h: usize) -> Result<()> {
    for (i, s) in specs.iter().enumerate() {
        s.validate(h)?;
        if specs[..i].iter().any(|o| o.target == s.target) {
            return Err(Error::Config(format!("object {} is targeted by more than one spec", s.target)));
        }
    }
    Ok(())
}

/// Applies the specs jointly to one ray's samples.
///
/// `values` are the field values at the samples and `o_hat` the slot of the
/// ray's projected code before editing. Specs are tried in order and the
/// first one that edits a sample claims it. Codes in the output are hard.
pub fn edit_samples<F: Field + ?Sized>(
    field: &F,
    ray: &Ray,
    samples: &RaySamples,
    values: &[FieldSample],
    o_hat: usize,
    specs: &[ManipulationSpec],
) -> std::result::Result<Vec<EditedSample>, CollisionReport> {
    let code_len = field.code_len();
    let empty = code_len - 1;
    let n = samples.len();
    let mut points = Vec::with_capacity(n * specs.len());
    let mut dirs = Vec::with_capacity(n * specs.len());
    for s in specs {
        let dir = s.transform.rotation.transpose().mul_vec(ray.direction);
        for d in &samples.distances {
            points.push(inverse_point(ray.at(*d), s));
            dirs.push(dir);
        }
    }
    let inverse = if points.is_empty() { Vec::new() } else { field.query_batch(&points, &dirs) };

    let mut out = Vec::with_capacity(n);
    for (k, v) in values.iter().enumerate() {
        let own = argmax(&v.code);
        let mut kept = own;
        let mut edited = None;
        for (si, s) in specs.iter().enumerate() {
            let t = s.slot();
            let q = &inverse[si * n + k];
            let pre = argmax(&q.code);
            // The code behind a visible surface is less reliable than the
            // projected code of the ray.
            let o_k = if own == t && o_hat != t { o_hat } else { own };
            if own == t {
                kept = o_k;
            }
            match (o_k == t, pre == t) {
                (false, true) if o_k != empty => {
                    return Err(CollisionReport { pixel: None, sample: k, target: s.target, occupying: o_k + 1 });
                }
                (_, true) => {
                    edited = Some(FieldSample { sigma: q.sigma, color: q.color, code: one_hot(code_len, pre) });
                    break;
                }
                (true, false) => {
                    edited = Some(FieldSample::removed(code_len));
                    break;
                }
                (false, false) => {}
            }
        }
        out.push(edited.unwrap_or_else(|| FieldSample { sigma: v.sigma, color: v.color, code: one_hot(code_len, kept) }));
    }
    Ok(out)
}

/// Edits and renders one ray. The ray is sampled exactly as [`crate::render::render_rays`]
/// would with `seed`; `o_hat` overrides the slot of the projected code (for a
/// voted map), otherwise the hardened composite of the unedited ray is used.
pub fn manipulate_ray_with<F: Field + ?Sized>(
    field: &F,
    ray: &Ray,
    specs: &[ManipulationSpec],
    opts: &RenderOptions,
    seed: u64,
    o_hat: Option<usize>,
) -> Result<RayEdit> {
    check_specs(specs, field.num_objects())?;
    let code_len = field.code_len();
    let background = field.background();
    let Some((samples, values)) = sample_rays(field, std::slice::from_ref(ray), opts, &[seed])?.pop().flatten() else {
        return Ok(RayEdit::Rendered(RenderOutput::vacuum(background, code_len, ray.t_far)));
    };
    let o_hat = match o_hat {
        Some(s) => s,
        None => argmax(&composite_ray(samples.clone(), &values, background, code_len).code_hat),
    };
    Ok(match edit_samples(field, ray, &samples, &values, o_hat, specs) {
        Ok(edited) => RayEdit::Rendered(composite_ray(samples, &edited, background, code_len)),
        Err(c) => RayEdit::Collision(c),
    })
}

/// [`manipulate_ray_with`] with the ray's own projected code.
pub fn manipulate_ray<F: Field + ?Sized>(
    field: &F,
    ray: &Ray,
    spec: &ManipulationSpec,
    opts: &RenderOptions,
    seed: u64,
) -> Result<RayEdit> {
    manipulate_ray_with(field, ray, std::slice::from_ref(spec), opts, seed, None)
}

/// An edited image.
#[derive(Clone, Debug, PartialEq)]
pub struct ManipulatedView {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Vec3>,
    /// `pixels x (H + 1)` projected codes, residual in the empty slot.
    pub codes: MaskMatrix,
    pub depth: Vec<f64>,
    /// Hard label per pixel (`0` = empty).
    pub labels: Vec<u16>,
    /// Labels after one voting pass over `labels`.
    pub voted_labels: Vec<u16>,
    /// One report per colliding pixel, in row-major order.
    pub collisions: Vec<CollisionReport>,
}

fn slot_to_label(slot: usize, code_len: usize) -> u16 {
    if slot + 1 == code_len {
        0
    } else {
        (slot + 1) as u16
    }
}

/// Renders `camera` with `specs` applied jointly.
///
/// The projected code map of the unedited view is voted once and the voted
/// slot of each pixel drives its ray edit. Colliding pixels keep the
/// unedited render and are reported. Pixel `n` uses seed
/// `mix_seed(opts.seed, n)`, so an empty spec list reproduces `render_view`.
pub fn render_manipulated_view<F: Field + ?Sized>(
    field: &F,
    camera: &Camera,
    specs: &[ManipulationSpec],
    opts: &RenderOptions,
) -> Result<ManipulatedView> {
    check_specs(specs, field.num_objects())?;
    let code_len = field.code_len();
    let background = field.background();
    let (w, h) = (camera.width as usize, camera.height as usize);
    let rays: Vec<(usize, Ray)> = pixel_rays(camera).into_iter().enumerate().collect();

    let plain = |chunk: &[(usize, Ray)]| -> Result<Vec<(RaySamples, Vec<FieldSample>)>> {
        let seeds: Vec<u64> = chunk.iter().map(|(i, _)| mix_seed(opts.seed, *i as u64)).collect();
        let rs: Vec<Ray> = chunk.iter().map(|(_, r)| *r).collect();
        Ok(sample_rays(field, &rs, opts, &seeds)?
            .into_iter()
            .zip(&rs)
            .map(|(s, r)| s.unwrap_or_else(|| (RaySamples { distances: vec![], deltas: vec![], t_near: 0.0, t_far: r.t_far, base_count: 1 }, vec![])))
            .collect())
    };
    let render = |samples: RaySamples, values: &[FieldSample]| {
        if samples.is_empty() {
            RenderOutput::vacuum(background, code_len, samples.t_far)
        } else {
            composite_ray(samples, values, background, code_len)
        }
    };

    let o_hat: Vec<usize> = for_chunks(rays.clone(), 256, |chunk| {
        Ok(plain(&chunk)?.into_iter().map(|(s, v)| argmax(&render(s, &v).code_hat)).collect())
    })?;
    let voted = if specs.is_empty() { o_hat } else { vote_map(&o_hat, w, h) };

    let per_pixel: Vec<(RenderOutput, Option<CollisionReport>)> = for_chunks(rays, 256, |chunk| {
        let sampled = plain(&chunk)?;
        Ok(chunk
            .iter()
            .zip(sampled)
            .map(|((i, ray), (samples, values))| {
                if specs.is_empty() || samples.is_empty() {
                    return (render(samples, &values), None);
                }
                match edit_samples(field, ray, &samples, &values, voted[*i], specs) {
                    Ok(edited) => (render(samples, &edited), None),
                    Err(mut c) => {
                        c.pixel = Some(((*i % w) as u32, (*i / w) as u32));
                        (render(samples, &values), Some(c))
                    }
                }
            })
            .collect())
    })?;

    let mut view = ManipulatedView {
        width: camera.width,
        height: camera.height,
        color: Vec::with_capacity(w * h),
        codes: MaskMatrix::zeros(w * h, code_len),
        depth: Vec::with_capacity(w * h),
        labels: Vec::with_capacity(w * h),
        voted_labels: Vec::new(),
        collisions: Vec::new(),
    };
    let mut slots = Vec::with_capacity(w * h);
    for (r, (out, collision)) in per_pixel.into_iter().enumerate() {
        view.color.push(out.color);
        view.codes.data[r * code_len..(r + 1) * code_len].copy_from_slice(&out.code_hat);
        view.depth.push(out.depth);
        view.labels.push(code_label(&out.code_hat));
        slots.push(argmax(&out.code_hat));
        view.collisions.extend(collision);
    }
    view.voted_labels = vote_map(&slots, w, h).into_iter().map(|s| slot_to_label(s, code_len)).collect();
    Ok(view)
}
