//! Jacobian-admissible solution families for piecewise-smooth elliptic
//! operators, and conductivity reconstruction from them.

pub mod coefficients;
pub mod construct;
pub mod frames;
pub mod geometry;
pub mod jacobian;
pub mod linalg;
pub mod recon;
pub mod solver;
