pub mod calib;
pub mod camera;
pub mod cost;
pub mod error;
pub mod image;
pub mod io;
pub mod pose;
pub mod render;
pub mod sgm;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
