//! Numerical construction of approximate Lagrangian translating solitons by
//! gluing scaled Lawlor necks into pairs of Grim Reaper cylinders.

pub mod ambient;
pub mod cone;
pub mod demo;
pub mod error;
pub mod grim;
pub mod lawlor;
pub mod quadrature;
pub mod reduced;
pub mod weighted;

pub use error::{GlueError, Result};
