pub mod ablation;
pub mod cfse;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod losses;
pub mod model;
pub mod motion_model;
pub mod nn;
pub mod oracle;
pub mod rdfl;
pub mod regressor;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
