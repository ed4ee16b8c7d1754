//! Scene domain types, synthetic scenes and the on-disk container.

mod gaussian;
mod io;
mod sampling;
pub mod synthetic;
mod view;

pub use gaussian::{layout, logit, sigmoid, Gaussian, GaussianCloud, ParamGroup, PARAM_COUNT, SH_COEFFS};
pub use io::{load_cloud, load_scene, load_scene_set, read_points, save_cloud, save_scene, sfm_init};
pub use sampling::{filter_black_points, fps_indices, select_views_fps, subsample_points};
pub use synthetic::{generate_synthetic_scene, generate_synthetic_scene_with_truth, CameraArc, SceneSpec};
pub use view::{look_at, Camera, Role, SceneDataset, View};
