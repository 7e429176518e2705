//! Object radiance fields: rendering, object supervision, training and
//! object-level scene editing by inverse queries.
//!
//! ```
//! use objfield::manipulate::{render_manipulated_view, ManipulationSpec};
//! use objfield::render::RenderOptions;
//! use objfield::session::Orbit;
//! use objfield::{AnalyticScene, Field, Vec3};
//!
//! let scene = AnalyticScene::toy3();
//! let cam = Orbit::default().camera(&scene.bounds(), 50.0, 16)?;
//! let spec = ManipulationSpec::translation(3, Vec3::new(0.3, 0.0, 0.0))?;
//! let opts = RenderOptions { k_coarse: 16, k_fine: 16, ..RenderOptions::default() };
//! let view = render_manipulated_view(&scene, &cam, &[spec], &opts)?;
//! assert!(view.collisions.is_empty());
//! # Ok::<(), objfield::Error>(())
//! ```

pub mod assign;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod field;
pub mod geometry;
pub mod imageio;
pub mod losses;
pub mod manipulate;
pub mod metrics;
pub mod nn;
pub mod render;
pub mod scene;
pub mod session;

pub use error::{Error, Result};
pub use field::{argmax, Field, FieldSample};
pub use geometry::{Aabb, Camera, Mat3, Ray, RigidPose, SimilarityTransform, Vec3};
pub use scene::AnalyticScene;
