//! Multi-view datasets rendered from analytic scenes, label corruption, and
//! the on-disk layout:
//!
//! ```text
//! scene.json            the AnalyticScene
//! cameras.json          {"train": [Camera..], "test": [Camera..]}
//! labels.json           {"0": "empty", "1": "object_1", ..}
//! train/color_0000.png  8-bit RGB
//! train/mask_0000.png   16-bit grayscale labels, 0 = empty
//! test/...              same naming
//! ```

use crate::error::{Error, Result};
use crate::field::argmax;
use crate::geometry::{Camera, Vec3};
use crate::imageio;
use crate::render::{for_chunks, pixel_rays};
use crate::scene::AnalyticScene;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

pub const DEFAULT_FOV_DEG: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    /// Row-major colors.
    pub color: Vec<Vec3>,
    /// Row-major labels in `[0, H]`.
    pub mask: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub split: Split,
    pub scene: AnalyticScene,
    pub views: Vec<View>,
}

impl SceneDataset {
    pub fn h(&self) -> usize {
        self.scene.h
    }

    pub fn masks(&self) -> Vec<Vec<u16>> {
        self.views.iter().map(|v| v.mask.clone()).collect()
    }

    pub fn with_masks(&self, masks: Vec<Vec<u16>>) -> Result<Self> {
        if masks.len() != self.views.len() || masks.iter().zip(&self.views).any(|(m, v)| m.len() != v.mask.len()) {
            return Err(Error::Domain("mask set does not match the views".into()));
        }
        let mut out = self.clone();
        for (v, m) in out.views.iter_mut().zip(masks) {
            v.mask = m;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub n_train: usize,
    pub n_test: usize,
    pub resolution: u32,
    pub seed: u64,
    pub fov_deg: f64,
    /// Camera distance from the centre of the scene bounds.
    pub radius: f64,
}

impl GenerateOptions {
    pub fn new(n_train: usize, n_test: usize, resolution: u32, seed: u64) -> Self {
        GenerateOptions { n_train, n_test, resolution, seed, fov_deg: DEFAULT_FOV_DEG, radius: 4.0 }
    }
}

/// Elevation band for hemisphere cameras, as `z / radius`. The pole is
/// excluded because the look-at frame uses `+z` as its up hint.
const MIN_HEIGHT: f64 = 0.05;
const MAX_HEIGHT: f64 = 0.95;

/// Cameras uniform on the upper hemisphere band (uniform in height and
/// azimuth, which is uniform in area), all looking at the bounds centre.
pub fn hemisphere_cameras(scene: &AnalyticScene, opts: &GenerateOptions) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let target = scene.bounds.center();
    (0..opts.n_train)
        .map(|_| {
            let z: f64 = rng.gen_range(MIN_HEIGHT..MAX_HEIGHT);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let r = (1.0 - z * z).sqrt();
            let eye = target + Vec3::new(r * phi.cos(), r * phi.sin(), z) * opts.radius;
            Camera::look_at(eye, target, opts.fov_deg, opts.resolution, opts.resolution)
        })
        .collect()
}

/// One turn of a spiral: azimuth sweeps a full circle while elevation
/// oscillates between 20 and 50 degrees.
pub fn spiral_cameras(scene: &AnalyticScene, opts: &GenerateOptions) -> Result<Vec<Camera>> {
    let target = scene.bounds.center();
    let n = opts.n_test.max(1) as f64;
    (0..opts.n_test)
        .map(|i| {
            let s = i as f64 / n;
            let phi = 2.0 * PI * s + 0.3;
            let elev = (35.0 + 15.0 * (4.0 * PI * s).sin()).to_radians();
            let eye = target + Vec3::new(elev.cos() * phi.cos(), elev.cos() * phi.sin(), elev.sin()) * opts.radius;
            Camera::look_at(eye, target, opts.fov_deg, opts.resolution, opts.resolution)
        })
        .collect()
}

/// Label of an analytic code: `h` for slot `h - 1`, 0 for the empty slot.
pub fn code_label(code: &[f64]) -> u16 {
    let i = argmax(code);
    if i + 1 == code.len() {
        0
    } else {
        (i + 1) as u16
    }
}

/// Exact color and label image of `scene` from `camera`.
pub fn render_view_exact(scene: &AnalyticScene, camera: &Camera) -> Result<View> {
    let rays = pixel_rays(camera);
    let px = for_chunks(rays, 512, |chunk| Ok(chunk.iter().map(|r| scene.analytic_pixel(r)).collect()))?;
    Ok(View {
        camera: camera.clone(),
        color: px.iter().map(|p| p.color).collect(),
        mask: px.iter().map(|p| code_label(&p.code)).collect(),
    })
}

pub fn generate_dataset_with(scene: &AnalyticScene, opts: &GenerateOptions) -> Result<(SceneDataset, SceneDataset)> {
    scene.validate()?;
    let render = |cams: Vec<Camera>, split| -> Result<SceneDataset> {
        let views = cams.iter().map(|c| render_view_exact(scene, c)).collect::<Result<_>>()?;
        Ok(SceneDataset { split, scene: scene.clone(), views })
    };
    Ok((
        render(hemisphere_cameras(scene, opts)?, Split::Train)?,
        render(spiral_cameras(scene, opts)?, Split::Test)?,
    ))
}

/// Train views on the upper hemisphere and test views on a spiral, 50 degree
/// field of view, rendered exactly.
pub fn generate_dataset(
    scene: &AnalyticScene,
    n_train: usize,
    n_test: usize,
    resolution: u32,
    seed: u64,
) -> Result<(SceneDataset, SceneDataset)> {
    generate_dataset_with(scene, &GenerateOptions::new(n_train, n_test, resolution, seed))
}

/// Reassigns exactly `floor(fraction * pixels)` pixels of every mask to a
/// uniformly drawn label in `[0, h]` different from the current one.
pub fn corrupt_labels(masks: &[Vec<u16>], h: usize, fraction: f64, seed: u64) -> Result<Vec<Vec<u16>>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Domain(format!("corruption fraction must lie in [0, 1), got {fraction}")));
    }
    if h == 0 {
        return Err(Error::Domain("need at least one object slot".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(masks
        .iter()
        .map(|mask| {
            let mut out = mask.clone();
            let count = (fraction * mask.len() as f64).floor() as usize;
            for idx in sample(&mut rng, mask.len(), count) {
                let current = out[idx];
                let r = rng.gen_range(0..h as u16);
                out[idx] = if r >= current { r + 1 } else { r };
            }
            out
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    train: Vec<Camera>,
    test: Vec<Camera>,
}

pub fn label_names(scene: &AnalyticScene) -> BTreeMap<String, String> {
    let mut names = BTreeMap::new();
    names.insert("0".to_string(), "empty".to_string());
    for h in 1..=scene.h {
        names.insert(h.to_string(), format!("object_{h}"));
    }
    names
}

fn view_paths(root: &Path, split: Split, i: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let dir = root.join(split.dir_name());
    (dir.join(format!("color_{i:04}.png")), dir.join(format!("mask_{i:04}.png")))
}

pub fn write_dataset(root: impl AsRef<Path>, train: &SceneDataset, test: &SceneDataset) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root.join("train"))?;
    std::fs::create_dir_all(root.join("test"))?;
    std::fs::write(root.join("scene.json"), train.scene.to_json())?;
    let cams = CameraFile {
        train: train.views.iter().map(|v| v.camera.clone()).collect(),
        test: test.views.iter().map(|v| v.camera.clone()).collect(),
    };
    std::fs::write(root.join("cameras.json"), serde_json::to_string_pretty(&cams)?)?;
    std::fs::write(root.join("labels.json"), serde_json::to_string_pretty(&label_names(&train.scene))?)?;
    for ds in [train, test] {
        for (i, v) in ds.views.iter().enumerate() {
            let (c, m) = view_paths(root, ds.split, i);
            imageio::write_rgb(c, &v.color, v.camera.width, v.camera.height)?;
            imageio::write_labels(m, &v.mask, v.camera.width, v.camera.height)?;
        }
    }
    Ok(())
}

pub fn read_scene(root: impl AsRef<Path>) -> Result<AnalyticScene> {
    AnalyticScene::from_json(&std::fs::read_to_string(root.as_ref().join("scene.json"))?)
}

/// Loads one split; colors come back 8-bit quantised.
pub fn read_split(root: impl AsRef<Path>, split: Split) -> Result<SceneDataset> {
    let root = root.as_ref();
    let scene = read_scene(root)?;
    let cams: CameraFile = serde_json::from_str(&std::fs::read_to_string(root.join("cameras.json"))?)?;
    let cameras = match split {
        Split::Train => cams.train,
        Split::Test => cams.test,
    };
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let (c, m) = view_paths(root, split, i);
            let (color, w, h) = imageio::read_rgb(c)?;
            let (mask, mw, mh) = imageio::read_labels(m)?;
            if (w, h) != (camera.width, camera.height) || (mw, mh) != (w, h) {
                return Err(Error::Config(format!("view {i} does not match its camera resolution")));
            }
            if mask.iter().any(|l| *l as usize > scene.h) {
                return Err(Error::Config(format!("view {i} has labels above H = {}", scene.h)));
            }
            Ok(View { camera, color, mask })
        })
        .collect::<Result<_>>()?;
    Ok(SceneDataset { split, scene, views })
}
