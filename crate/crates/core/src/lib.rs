//! Matrix-product-state simulation of a cavity-optomechanical system with
//! delayed coherent feedback, and the CPHASE protocol built on it.

pub mod checkpoint;
pub mod dense;
pub mod dynamics;
pub mod linalg;
pub mod mps;
pub mod protocol;
pub mod semiclassical;
pub mod state_prep;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
