//! Piecewise-linear finite elements for `Lu = -div(A Du + b u) + c·Du + q u`.
//!
//! The bilinear form is
//! `a(u, v) = ∫ A Du·Dv + u b·Dv + (c·Du) v + q u v`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use super::field::SolutionField;
use super::mesh::Mesh;
use super::sparse::{bicgstab, dense_solve, pcg, relative_residual, Csr, SolveError, SolveStats};
use crate::coefficients::OperatorSpec;
use crate::geometry::{Interface, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("linear solve failed: {0}")]
    Linear(#[from] SolveError),
    #[error("interface Γ({0},{1}) is not an interface of the mesh")]
    NotInterface(usize, usize),
    #[error("relative residual {0:e} above tolerance")]
    Residual(f64),
}

/// Relative residual tolerance for every linear solve.
pub const SOLVE_TOL: f64 = 1e-10;
const KRYLOV_TOL: f64 = 1e-12;
const DENSE_LIMIT: usize = 6000;

/// Boundary or interface data as a function of position.
pub type Trace<'a> = &'a (dyn Fn(&Vec2) -> f64 + Sync);

/// Local 3×3 element matrix of `a(φ_j, φ_i)` at `[i][j]`.
pub fn element_matrix(op: &OperatorSpec, mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let g = mesh.basis_gradients(t);
    let area = mesh.area(t);
    let region = mesh.region[t];
    let [a, b, c] = mesh.triangles[t];
    let pts = [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]];
    let mut k = [[0.0; 3]; 3];
    if op.region_coeffs(region).is_constant() {
        let f = op.eval(region, &mesh.centroid(t));
        for i in 0..3 {
            for j in 0..3 {
                let m = if i == j { area / 6.0 } else { area / 12.0 };
                k[i][j] = area * (f.a * g[j]).dot(&g[i])
                    + area / 3.0 * f.b.dot(&g[i])
                    + area / 3.0 * f.c.dot(&g[j])
                    + f.q * m;
            }
        }
        return k;
    }
    // edge-midpoint rule, exact for quadratics
    for e in 0..3 {
        let (p, q) = (e, (e + 1) % 3);
        let x = 0.5 * (pts[p] + pts[q]);
        let mut phi = [0.0; 3];
        phi[p] = 0.5;
        phi[q] = 0.5;
        let f = op.eval(region, &x);
        let w = area / 3.0;
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] += w
                    * ((f.a * g[j]).dot(&g[i])
                        + phi[j] * f.b.dot(&g[i])
                        + f.c.dot(&g[j]) * phi[i]
                        + f.q * phi[i] * phi[j]);
            }
        }
    }
    k
}

/// Full stiffness matrix over all vertices.
pub fn assemble(op: &OperatorSpec, mesh: &Mesh) -> Csr {
    let locals: Vec<[[f64; 3]; 3]> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| element_matrix(op, mesh, t))
        .collect();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, k) in locals.iter().enumerate() {
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], k[i][j]));
            }
        }
    }
    Csr::from_triplets(mesh.n_vertices(), trip)
}

pub fn assemble_mass(mesh: &Mesh) -> Csr {
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.area(t);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], if i == j { area / 6.0 } else { area / 12.0 }));
            }
        }
    }
    Csr::from_triplets(mesh.n_vertices(), trip)
}

/// Stiffness of `-Δ` (the `H¹₀` inner product).
pub fn assemble_laplace(mesh: &Mesh) -> Csr {
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let g = mesh.basis_gradients(t);
        let area = mesh.area(t);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], area * g[i].dot(&g[j])));
            }
        }
    }
    Csr::from_triplets(mesh.n_vertices(), trip)
}

pub fn interior_vertices(mesh: &Mesh) -> (Vec<usize>, Vec<Option<usize>>) {
    let mut map = vec![None; mesh.n_vertices()];
    let mut interior = Vec::new();
    for v in 0..mesh.n_vertices() {
        if !mesh.on_boundary[v] {
            map[v] = Some(interior.len());
            interior.push(v);
        }
    }
    (interior, map)
}

/// Dense interior block (Dirichlet rows and columns removed).
pub fn dense_interior(k: &Csr, mesh: &Mesh) -> DMatrix<f64> {
    let (interior, map) = interior_vertices(mesh);
    k.submatrix(&interior, &map).to_dense()
}

/// Factored-once Dirichlet problem for one operator on one mesh; solves for
/// many boundary traces share the assembled matrix.
pub struct DirichletSolver {
    pub mesh: Arc<Mesh>,
    pub op: OperatorSpec,
    pub k: Csr,
    interior: Vec<usize>,
    map: Vec<Option<usize>>,
    kii: Csr,
    symmetric: bool,
    tol: f64,
}

impl DirichletSolver {
    pub fn new(op: &OperatorSpec, mesh: Arc<Mesh>) -> DirichletSolver {
        let k = assemble(op, &mesh);
        let (interior, map) = interior_vertices(&mesh);
        let kii = k.submatrix(&interior, &map);
        let symmetric = op.is_symmetric();
        DirichletSolver {
            mesh,
            op: op.clone(),
            k,
            interior,
            map,
            kii,
            symmetric,
            tol: KRYLOV_TOL,
        }
    }

    /// Relative residual target of the Krylov iteration (default `1e-12`).
    /// A solve is accepted up to the larger of `100 tol` and [`SOLVE_TOL`].
    pub fn with_tol(mut self, tol: f64) -> DirichletSolver {
        self.tol = tol;
        self
    }

    pub fn n_unknowns(&self) -> usize {
        self.interior.len()
    }

    /// Boundary values of `g` at boundary vertices, zero elsewhere.
    pub fn boundary_vector(&self, g: Trace) -> Vec<f64> {
        self.mesh
            .vertices
            .iter()
            .zip(&self.mesh.on_boundary)
            .map(|(p, &b)| if b { g(p) } else { 0.0 })
            .collect()
    }

    /// Solves `K u = load` in the interior with `u = boundary` on boundary
    /// vertices. `boundary` and `load` are full-length vertex vectors.
    pub fn solve_vectors(&self, boundary: &[f64], load: Option<&[f64]>) -> Result<(Vec<f64>, SolveStats), SolverError> {
        let kb = self.k.mul(boundary);
        let rhs: Vec<f64> = self
            .interior
            .iter()
            .map(|&v| load.map_or(0.0, |l| l[v]) - kb[v])
            .collect();
        let (x, stats) = self.linear_solve(&rhs)?;
        let mut u: Vec<f64> = boundary.to_vec();
        for (k, &v) in self.interior.iter().enumerate() {
            u[v] = x[k];
        }
        Ok((u, stats))
    }

    fn linear_solve(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats), SolverError> {
        let n = self.kii.n;
        let cap = (20 * n).max(1000);
        let attempt = if self.symmetric {
            pcg(&self.kii, rhs, self.tol, cap).or_else(|_| bicgstab(&self.kii, rhs, self.tol, cap))
        } else {
            bicgstab(&self.kii, rhs, self.tol, cap)
        };
        let (x, stats) = match attempt {
            Ok(r) => r,
            Err(e) if n <= DENSE_LIMIT => {
                let x = dense_solve(&self.kii, rhs).map_err(|_| SolverError::Linear(e))?;
                let residual = relative_residual(&self.kii, &x, rhs);
                (
                    x,
                    SolveStats {
                        iterations: 0,
                        residual,
                    },
                )
            }
            Err(e) => return Err(e.into()),
        };
        if stats.residual > SOLVE_TOL.max(100.0 * self.tol) {
            return Err(SolverError::Residual(stats.residual));
        }
        Ok((x, stats))
    }

    pub fn solve(&self, g: Trace) -> Result<SolutionField, SolverError> {
        let (u, stats) = self.solve_vectors(&self.boundary_vector(g), None)?;
        Ok(SolutionField::new(self.mesh.clone(), u).with_stats(stats))
    }

    /// Independent solves run concurrently; each is bitwise reproducible.
    pub fn solve_many(&self, traces: &[Vec<f64>]) -> Result<Vec<SolutionField>, SolverError> {
        traces
            .par_iter()
            .map(|b| {
                let (u, st) = self.solve_vectors(b, None)?;
                Ok(SolutionField::new(self.mesh.clone(), u).with_stats(st))
            })
            .collect()
    }

    /// Max over interior test functions of `|a(u_h, φ_i) - ℓ(φ_i)|`, relative
    /// to the matrix scale times the solution scale.
    pub fn galerkin_residual(&self, u: &[f64], load: Option<&[f64]>) -> f64 {
        let ku = self.k.mul(u);
        let scale = self.k.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            * u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        self.interior
            .iter()
            .map(|&v| (ku[v] - load.map_or(0.0, |l| l[v])).abs())
            .fold(0.0, f64::max)
            / scale
    }

    pub fn map(&self) -> &[Option<usize>] {
        &self.map
    }
}

/// Dirichlet solve `Lu = 0`, `u = g` on `∂Ω`.
pub fn solve_dirichlet(op: &OperatorSpec, mesh: &Arc<Mesh>, g: Trace) -> Result<SolutionField, SolverError> {
    DirichletSolver::new(op, mesh.clone()).solve(g)
}

/// Transmission solve across the interface `sigma`: `LS = 0` on each side,
/// `S_j - S_i = jump_u` and `(A DS + b S)_j·n - (A DS + b S)_i·n = jump_flux` on
/// the circle, with `n` pointing from `Ω_i` into `Ω_j`, and `S = g` on `∂Ω`.
///
/// The value jump is imposed exactly at the interface vertices by a lifting
/// supported on the `Ω_j`-side triangles; the flux jump enters weakly as
/// `a(S, v) = -∫_Σ jump_flux · v`.
pub fn solve_transmission(
    op: &OperatorSpec,
    mesh: &Arc<Mesh>,
    sigma: &Interface,
    jump_u: Trace,
    jump_flux: Trace,
    g: Trace,
) -> Result<SolutionField, SolverError> {
    let solver = DirichletSolver::new(op, mesh.clone());
    solver.solve_transmission(sigma, jump_u, jump_flux, g)
}

impl DirichletSolver {
    pub fn solve_transmission(
        &self,
        sigma: &Interface,
        jump_u: Trace,
        jump_flux: Trace,
        g: Trace,
    ) -> Result<SolutionField, SolverError> {
        let mesh = &self.mesh;
        let k = sigma.inner - 1;
        if k >= mesh.circles.len() || mesh.circles[k] != sigma.circle {
            return Err(SolverError::NotInterface(sigma.i, sigma.j));
        }
        let side = sigma.j;
        let mut offsets = BTreeMap::new();
        for &v in &mesh.interface_vertices[k] {
            offsets.insert((side, v), jump_u(&mesh.vertices[v]));
        }
        let n = mesh.n_vertices();
        let mut load = vec![0.0; n];
        // lifting: a(E, φ_i) over side-j triangles touching Σ
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if mesh.region[t] != side {
                continue;
            }
            let e: Vec<f64> = tri.iter().map(|&v| *offsets.get(&(side, v)).unwrap_or(&0.0)).collect();
            if e.iter().all(|&x| x == 0.0) {
                continue;
            }
            let km = element_matrix(&self.op, mesh, t);
            for i in 0..3 {
                load[tri[i]] -= (0..3).map(|j| km[i][j] * e[j]).sum::<f64>();
            }
        }
        // flux jump, exact for linear data along each edge
        for [a, b] in mesh.interface_edges(k) {
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let len = (pb - pa).norm();
            let (fa, fb) = (jump_flux(&pa), jump_flux(&pb));
            load[a] -= len * (fa / 3.0 + fb / 6.0);
            load[b] -= len * (fa / 6.0 + fb / 3.0);
        }
        let boundary = self.boundary_vector(g);
        let (u, stats) = self.solve_vectors(&boundary, Some(&load))?;
        Ok(SolutionField::with_offsets(mesh.clone(), u, offsets).with_stats(stats))
    }
}
