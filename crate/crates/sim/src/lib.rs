//! Deterministic tabletop world for exercising the grasp tracker: primitive
//! objects, scripted motion, a ray-cast wrist depth camera, ground-truth
//! flow and a geometric grasp oracle.

pub mod camera;
pub mod family;
pub mod motion;
pub mod negatives;
pub mod oracle;
pub mod scene;

pub use camera::{render_depth, CameraConfig, SyntheticFlowProvider};
pub use family::{oracle_best_grasp, OracleQuery};
pub use motion::{step_scene, MotionScript};
pub use negatives::generate_hard_negatives;
pub use oracle::{adjudicate_grasp, Adjudication, OracleConfig, OracleEvaluator};
pub use scene::{resting, Primitive, Scene, SceneObject};
