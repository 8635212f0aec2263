//! Sparse 3D lane geometry, training ground-truth generation with endpoint
//! patching, lane evaluation, and a reference point-lane attention kernel.

pub mod attention;
pub mod ep;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gt;
pub mod io;
pub mod lane;
pub mod scene;
pub mod synth;
pub mod table;

pub use ep::{ep_patch_inference, loss_ep, EpPrediction, PatchOutcome, PatchStatus};
pub use error::{Error, Result};
pub use eval::{evaluate_scene, EvalConfig, EvalLane, EvalReport};
pub use experiment::{run_experiment, ExperimentManifest};
pub use gt::{generate_training_gt, visibility_mask, GtMode};
pub use lane::{interpolate, lane_length, make_grid, DenseLane, PatchDeltas, Point3, PresetGrid, SparseLane};
pub use scene::{Scene, SceneSet};
pub use synth::{generate_scene_set, Preset, SynthConfig};
