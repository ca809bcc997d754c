pub mod blur;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod psf;
pub mod refine;
pub mod solver;
pub mod synthetic;
pub mod view;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use optics::{BlurSize, CameraMeta};
pub use pipeline::{run_estimate, Report};
pub use psf::{Patch, PsfKernel};
pub use view::{DepthMap, DpView, Image};
