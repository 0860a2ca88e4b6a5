pub mod distill;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod param;
pub mod real;
pub mod schedule;
pub mod special;
pub mod teacher;

pub use error::{Error, Result};
pub use real::Real;
