//! Finite element solver on interface-fitted meshes.

pub mod fem;
pub mod field;
pub mod mesh;
pub mod radial;
pub mod sparse;

pub use fem::{solve_dirichlet, solve_transmission, DirichletSolver, SolverError};
pub use field::{FieldError, FieldValue, Side, SolutionField};
pub use mesh::{build_mesh, Mesh, MeshError};
