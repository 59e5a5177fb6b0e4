pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod langevin;
pub mod losses;
pub mod nn;
pub mod training;
pub mod util;

pub use error::{DespError, Result};
