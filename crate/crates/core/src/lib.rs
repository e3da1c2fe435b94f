pub mod analysis;
pub mod cases;
pub mod comp;
pub mod error;
pub mod fields;
pub mod harness;
pub mod incomp;
pub mod linsolve;
pub mod mesh;
pub mod ops;
pub mod quadrature;

pub use error::{Error, Result};
