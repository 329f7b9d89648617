//! Checkerboard-based calibration of a multi-camera fisheye rig.

pub mod board;
pub mod bundle;
pub mod init;
pub mod lm;
pub mod pnp;

pub use board::{CheckerboardSpec, CornerObservation, ObservationSet};
pub use bundle::{bundle_adjust, calibrate, BundleConfig, CalibrationReport, RigCalibration};
pub use init::{init_rig, RigInit};
pub use lm::LmConfig;
pub use pnp::estimate_board_pose;
