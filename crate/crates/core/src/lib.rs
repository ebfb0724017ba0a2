//! Simplicial partitioning of the parameter space of multiparametric
//! mixed-integer conic programs.

pub mod conic;
pub mod geometry;
pub mod hexfloat;
pub mod instance;
pub mod mi;
pub mod phase1;
pub mod phase2;
pub mod problem;
pub mod tree;
pub mod verify;
mod textio;

pub use textio::FormatError;
