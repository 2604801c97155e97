//! Symmetry-reduced discretization of the glued surface: the linearized
//! translator operator, its weighted smallest singular value, and the
//! perturbation of the immersion by a Hamiltonian potential.

pub mod mesh;
pub mod norms;
pub mod operator;
pub mod perturb;
pub mod solver;

pub use mesh::{Boundary, MeshKind, MeshNode, MeshResolution, ReducedMesh};
