//! Interactive editing sessions: one field, a camera, the applied edits and
//! the last rendered frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, FieldSample};
use crate::geometry::{Aabb, Camera, Vec3};
use crate::imageio::{base64_png, depth_png, label_png, rgb_png};
use crate::manipulate::{render_manipulated_view, CollisionReport, ManipulatedView, ManipulationSpec};
use crate::nn::{Checkpoint, FieldNetwork};
use crate::render::RenderOptions;
use crate::scene::AnalyticScene;

/// Either the analytic oracle of a scene or a trained network.
#[derive(Clone, Debug)]
pub enum LoadedField {
    Oracle(AnalyticScene),
    Network(FieldNetwork),
}

impl LoadedField {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        LoadedField::Network(ckpt.network)
    }

    pub fn as_field(&self) -> &dyn Field {
        match self {
            LoadedField::Oracle(s) => s,
            LoadedField::Network(n) => n,
        }
    }
}

impl Field for LoadedField {
    fn num_objects(&self) -> usize {
        self.as_field().num_objects()
    }
    fn bounds(&self) -> Aabb {
        self.as_field().bounds()
    }
    fn background(&self) -> Vec3 {
        self.as_field().background()
    }
    fn query(&self, p: Vec3, dir: Vec3) -> FieldSample {
        self.as_field().query(p, dir)
    }
    fn query_batch(&self, points: &[Vec3], dirs: &[Vec3]) -> Vec<FieldSample> {
        self.as_field().query_batch(points, dirs)
    }
}

/// Camera on a sphere around the center of the field bounds, looking at it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
}

impl Default for Orbit {
    fn default() -> Self {
        Orbit { azimuth_deg: 40.0, elevation_deg: 35.0, radius: 4.0 }
    }
}

impl Orbit {
    pub fn camera(&self, bounds: &Aabb, fov_deg: f64, resolution: u32) -> Result<Camera> {
        if !(self.radius > 0.0) || self.elevation_deg.abs() >= 89.9 {
            return Err(Error::Domain("orbit needs radius > 0 and |elevation| < 89.9 degrees".into()));
        }
        let (az, el) = (self.azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let center = bounds.center();
        let eye = center + Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * self.radius;
        Camera::look_at(eye, center, fov_deg, resolution, resolution)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub render: RenderOptions,
    pub resolution: u32,
    pub fov_deg: f64,
}

impl SessionOptions {
    /// 96 x 96 frames with 32 + 32 samples per ray.
    pub fn interactive() -> Self {
        SessionOptions { render: RenderOptions { k_coarse: 32, k_fine: 32, jitter: true, seed: 0 }, resolution: 96, fov_deg: 50.0 }
    }
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self::interactive()
    }
}

/// What a client receives after every render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramePayload {
    pub frame_id: u64,
    pub width: u32,
    pub height: u32,
    /// Base64 PNG, 8-bit RGB.
    pub color_png: String,
    /// Base64 PNG, 16-bit object labels (0 = empty).
    pub mask_png: String,
    /// Base64 PNG, 16-bit depth in millimetres.
    pub depth_png: String,
    /// Voted object label per pixel, row-major.
    pub labels: Vec<u16>,
    /// Non-empty when the last requested edit collided and was not applied.
    pub collisions: Vec<CollisionReport>,
    /// False when the last requested edit was rejected.
    pub applied: bool,
    /// Base64 PNG of the rejected edit, rendered with colliding pixels unedited.
    pub rejected_color_png: Option<String>,
    pub edits: Vec<ManipulationSpec>,
}

fn encode_color(view: &ManipulatedView) -> Result<String> {
    Ok(base64_png(&rgb_png(&view.color, view.width, view.height)?))
}

#[derive(Clone, Debug)]
struct Frame {
    id: u64,
    view: ManipulatedView,
}

#[derive(Clone, Debug)]
pub struct Session {
    field: LoadedField,
    options: SessionOptions,
    camera: Camera,
    edits: Vec<ManipulationSpec>,
    history: Vec<Vec<ManipulationSpec>>,
    frame: Option<Frame>,
    next_frame: u64,
}

impl Session {
    pub fn new(field: LoadedField, options: SessionOptions) -> Result<Self> {
        let camera = Orbit::default().camera(&field.bounds(), options.fov_deg, options.resolution)?;
        Ok(Session { field, options, camera, edits: Vec::new(), history: Vec::new(), frame: None, next_frame: 1 })
    }

    pub fn field(&self) -> &LoadedField {
        &self.field
    }

    pub fn num_objects(&self) -> usize {
        self.field.num_objects()
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn edits(&self) -> &[ManipulationSpec] {
        &self.edits
    }

    /// Replaces the camera; the cached frame becomes stale.
    pub fn set_camera(&mut self, camera: Camera) {
        self.camera = camera;
        self.frame = None;
    }

    pub fn set_orbit(&mut self, orbit: &Orbit) -> Result<()> {
        let cam = orbit.camera(&self.field.bounds(), self.options.fov_deg, self.options.resolution)?;
        self.set_camera(cam);
        Ok(())
    }

    fn render_edits(&self, edits: &[ManipulationSpec]) -> Result<ManipulatedView> {
        render_manipulated_view(&self.field, &self.camera, edits, &self.options.render)
    }

    fn ensure_frame(&mut self) -> Result<&Frame> {
        if self.frame.is_none() {
            let view = self.render_edits(&self.edits)?;
            self.frame = Some(Frame { id: self.next_frame, view });
            self.next_frame += 1;
        }
        Ok(self.frame.as_ref().expect("frame rendered"))
    }

    fn payload(&mut self, collisions: Vec<CollisionReport>, rejected: Option<&ManipulatedView>) -> Result<FramePayload> {
        let edits = self.edits.clone();
        let rejected_color_png = rejected.map(encode_color).transpose()?;
        let frame = self.ensure_frame()?;
        let v = &frame.view;
        Ok(FramePayload {
            frame_id: frame.id,
            width: v.width,
            height: v.height,
            color_png: encode_color(v)?,
            mask_png: base64_png(&label_png(&v.labels, v.width, v.height)?),
            depth_png: base64_png(&depth_png(&v.depth, v.width, v.height)?),
            labels: v.voted_labels.clone(),
            applied: collisions.is_empty(),
            collisions,
            rejected_color_png,
            edits,
        })
    }

    /// The current frame, rendered if the cache is stale.
    pub fn frame(&mut self) -> Result<FramePayload> {
        self.payload(Vec::new(), None)
    }

    /// Object under pixel `(u, v)` of the cached frame after voting; `None`
    /// for empty space.
    pub fn pick(&self, u: u32, v: u32) -> Result<Option<usize>> {
        let Some(frame) = &self.frame else {
            return Err(Error::StaleFrame("the camera or the edits changed since the last frame; fetch a new frame before picking".into()));
        };
        if u >= frame.view.width || v >= frame.view.height {
            return Err(Error::Domain(format!("pixel ({u}, {v}) is outside the {}x{} frame", frame.view.width, frame.view.height)));
        }
        let label = frame.view.voted_labels[(v * frame.view.width + u) as usize];
        Ok((label != 0).then_some(label as usize))
    }

    /// Edits with `spec` folded in: a second edit of the same object composes
    /// with the first.
    fn with_edit(&self, spec: &ManipulationSpec) -> Vec<ManipulationSpec> {
        let mut edits = self.edits.clone();
        match edits.iter_mut().find(|e| e.target == spec.target) {
            Some(e) => e.transform = e.transform.then(&spec.transform),
            None => edits.push(*spec),
        }
        edits
    }

    /// Renders the scene with `spec` added. A colliding edit is not applied:
    /// the payload keeps the previous frame, lists the collisions and carries
    /// the rejected render for inspection.
    pub fn apply_and_render(&mut self, spec: &ManipulationSpec) -> Result<FramePayload> {
        spec.validate(self.num_objects())?;
        let edits = self.with_edit(spec);
        let view = self.render_edits(&edits)?;
        if !view.collisions.is_empty() {
            let collisions = view.collisions.clone();
            return self.payload(collisions, Some(&view));
        }
        self.history.push(std::mem::replace(&mut self.edits, edits));
        self.frame = Some(Frame { id: self.next_frame, view });
        self.next_frame += 1;
        self.frame()
    }

    /// Reverts the last applied edit. Returns false when there is none.
    pub fn undo(&mut self) -> bool {
        match self.history.pop() {
            Some(prev) => {
                self.edits = prev;
                self.frame = None;
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::render_view_exact;
    use crate::geometry::SimilarityTransform;

    fn small() -> SessionOptions {
        SessionOptions { resolution: 32, ..SessionOptions::interactive() }
    }

    fn session() -> Session {
        Session::new(LoadedField::Oracle(AnalyticScene::toy3()), small()).unwrap()
    }

    #[test]
    fn pick_needs_a_fresh_frame() {
        let mut s = session();
        assert!(matches!(s.pick(0, 0), Err(Error::StaleFrame(_))));
        s.frame().unwrap();
        assert!(s.pick(0, 0).is_ok());
        s.set_orbit(&Orbit { azimuth_deg: 10.0, ..Orbit::default() }).unwrap();
        assert!(matches!(s.pick(0, 0), Err(Error::StaleFrame(_))));
        assert!(matches!(s.frame().map(|_| s.pick(99, 0)), Ok(Err(Error::Domain(_)))));
    }

    #[test]
    fn pick_matches_oracle_masks() {
        let mut s = session();
        s.frame().unwrap();
        let exact = render_view_exact(&AnalyticScene::toy3(), s.camera()).unwrap();
        let w = s.camera().width;
        // Pixels whose whole 3x3 neighbourhood agrees are unaffected by voting.
        let mut checked = 0;
        for v in 1..w - 1 {
            for u in 1..w - 1 {
                let at = |du: i64, dv: i64| exact.mask[((v as i64 + dv) as u32 * w + (u as i64 + du) as u32) as usize];
                let l = at(0, 0);
                if (-1..=1).all(|dv| (-1..=1).all(|du| at(du, dv) == l)) {
                    assert_eq!(s.pick(u, v).unwrap(), (l != 0).then_some(l as usize), "pixel {u} {v}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn identity_edit_keeps_the_image() {
        let mut s = session();
        let before = s.frame().unwrap();
        let after = s.apply_and_render(&ManipulationSpec::new(3, SimilarityTransform::IDENTITY).unwrap()).unwrap();
        assert!(after.applied);
        assert_eq!(before.color_png, after.color_png);
        assert!(after.frame_id > before.frame_id);
    }

    #[test]
    fn colliding_edit_is_rejected() {
        let mut s = session();
        let before = s.frame().unwrap();
        let spec = ManipulationSpec::translation(3, Vec3::new(0.35, -0.45, -0.45)).unwrap();
        let out = s.apply_and_render(&spec).unwrap();
        assert!(!out.applied);
        assert!(!out.collisions.is_empty());
        assert!(out.collisions.iter().all(|c| c.occupying == 2));
        assert_eq!(out.color_png, before.color_png);
        assert!(out.rejected_color_png.is_some());
        assert!(s.edits().is_empty());
    }

    #[test]
    fn repeated_edits_compose_and_undo() {
        let mut s = session();
        let step = ManipulationSpec::translation(3, Vec3::new(0.1, 0.0, 0.0)).unwrap();
        s.apply_and_render(&step).unwrap();
        let twice = s.apply_and_render(&step).unwrap();
        assert_eq!(twice.edits.len(), 1);
        assert!((twice.edits[0].transform.translation - Vec3::new(0.2, 0.0, 0.0)).norm() < 1e-12);
        assert!(s.undo());
        assert_eq!(s.edits()[0].transform.translation, Vec3::new(0.1, 0.0, 0.0));
        assert!(s.undo());
        assert!(!s.undo());
    }

    #[test]
    fn invalid_target_is_rejected() {
        let mut s = session();
        let spec = ManipulationSpec::translation(9, Vec3::ZERO).unwrap();
        assert!(matches!(s.apply_and_render(&spec), Err(Error::Config(_))));
    }
}
