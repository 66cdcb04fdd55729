pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod emf;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod lstm;
pub mod pipeline;

pub use error::{Error, Result};
