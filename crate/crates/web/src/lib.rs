//! WebAssembly bindings for the in-browser editor. The editor owns one
//! session on the built-in three-object scene; every call returns JSON.

use objfield::manipulate::ManipulationSpec;
use objfield::session::{FramePayload, LoadedField, Orbit, Session, SessionOptions};
use objfield::scene::Shape;
use objfield::{AnalyticScene, Mat3, SimilarityTransform, Vec3};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(frame: &FramePayload) -> Result<String, JsError> {
    serde_json::to_string(frame).map_err(js_err)
}

#[wasm_bindgen]
pub struct Editor {
    scene: AnalyticScene,
    session: Session,
}

/// Mean of the primitive centres of an object; half-spaces are skipped.
fn object_center(scene: &AnalyticScene, object: usize) -> Option<Vec3> {
    let centers: Vec<Vec3> = scene
        .primitives
        .iter()
        .filter(|p| p.object_id == object)
        .filter_map(|p| match p.shape {
            Shape::Sphere { center, .. } => Some(center),
            Shape::Box { min, max } => Some((min + max) * 0.5),
            Shape::Plane { .. } => None,
        })
        .collect();
    (!centers.is_empty()).then(|| centers.iter().fold(Vec3::ZERO, |a, c| a + *c) * (1.0 / centers.len() as f64))
}

#[wasm_bindgen]
impl Editor {
    /// Editor on the built-in scene rendering `resolution` x `resolution`
    /// frames with `samples` coarse and `samples` fine samples per ray.
    #[wasm_bindgen(constructor)]
    pub fn new(resolution: u32, samples: usize) -> Result<Editor, JsError> {
        let mut options = SessionOptions::interactive();
        options.resolution = resolution.clamp(8, 256);
        options.render.k_coarse = samples.max(1);
        options.render.k_fine = samples;
        let scene = AnalyticScene::toy3();
        let session = Session::new(LoadedField::Oracle(scene.clone()), options).map_err(js_err)?;
        Ok(Editor { scene, session })
    }

    #[wasm_bindgen(js_name = numObjects)]
    pub fn num_objects(&self) -> usize {
        self.session.num_objects()
    }

    /// Moves the orbit camera and renders the frame.
    pub fn render(&mut self, azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Result<String, JsError> {
        self.session.set_orbit(&Orbit { azimuth_deg, elevation_deg, radius }).map_err(js_err)?;
        to_json(&self.session.frame().map_err(js_err)?)
    }

    /// Object id under the pixel of the last frame, or 0 for empty space.
    pub fn pick(&self, u: u32, v: u32) -> Result<u32, JsError> {
        Ok(self.session.pick(u, v).map_err(js_err)?.map_or(0, |o| o as u32))
    }

    /// Applies a manipulation spec given as JSON and renders the result.
    pub fn manipulate(&mut self, spec_json: &str) -> Result<String, JsError> {
        let spec = ManipulationSpec::from_json(spec_json).map_err(js_err)?;
        to_json(&self.session.apply_and_render(&spec).map_err(js_err)?)
    }

    /// Moves object `target` by `(tx, ty, tz)`, turns it by yaw, pitch and
    /// roll (degrees, about z, y and x) and scales it, all about its centre.
    #[allow(clippy::too_many_arguments)]
    pub fn edit(&mut self, target: usize, tx: f64, ty: f64, tz: f64, yaw: f64, pitch: f64, roll: f64, scale: f64) -> Result<String, JsError> {
        let pivot = object_center(&self.scene, target).ok_or_else(|| JsError::new(&format!("object {target} has no centre")))?;
        let r = Mat3::rotation(Vec3::new(0.0, 0.0, 1.0), yaw.to_radians())
            .mul_mat(&Mat3::rotation(Vec3::new(0.0, 1.0, 0.0), pitch.to_radians()))
            .mul_mat(&Mat3::rotation(Vec3::new(1.0, 0.0, 0.0), roll.to_radians()));
        let translation = pivot + Vec3::new(tx, ty, tz) - r.mul_vec(pivot) * scale;
        let transform = SimilarityTransform::new(r, translation, scale).map_err(js_err)?;
        let spec = ManipulationSpec::new(target, transform).map_err(js_err)?;
        to_json(&self.session.apply_and_render(&spec).map_err(js_err)?)
    }

    /// Reverts the last applied edit; returns the frame, or an error when
    /// there is nothing to undo.
    pub fn undo(&mut self) -> Result<String, JsError> {
        if !self.session.undo() {
            return Err(JsError::new("nothing to undo"));
        }
        to_json(&self.session.frame().map_err(js_err)?)
    }
}
