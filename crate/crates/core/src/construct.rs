//! Construction of admissible families: closed-form local seeds, Runge fits
//! against a dictionary of global solves, ball covers and certification.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{CoefficientSet, Frozen, OperatorSpec, ShiftReport};
use crate::geometry::{Outer, RegionId, SampleSet, Scene, Vec2};
use crate::jacobian::{multilinear_bound, p_star, whitney_reduce_table, JacobianError, JacobianTable, Reduction, D};
use crate::linalg::{det3, truncated_lstsq};
use crate::solver::{DirichletSolver, FieldError, Mesh, Side, SolutionField, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructError {
    #[error("A_{i}{i}(x) = {value} is not positive")]
    NotElliptic { i: usize, value: f64 },
    #[error("dictionary size {0} below 8")]
    SmallDictionary(usize),
    #[error("point ({0}, {1}) is not inside a region")]
    Outside(f64, f64),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Characteristic-root regime of the frozen ODE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RootKind {
    RealDistinct,
    Double,
    Complex,
}

/// `-a f'' + β f' + γ f = 0` with `a > 0`, written as `f = e^{pt} S(t)` where
/// `S'' = μ S`, `p = β / 2a`, `μ = p² + γ / a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ode1D {
    pub a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub p: f64,
    pub mu: f64,
}

impl Ode1D {
    pub fn new(a: f64, beta: f64, gamma: f64) -> Ode1D {
        let p = beta / (2.0 * a);
        Ode1D {
            a,
            beta,
            gamma,
            p,
            mu: p * p + gamma / a,
        }
    }

    pub fn kind(&self) -> RootKind {
        if self.mu > 0.0 {
            RootKind::RealDistinct
        } else if self.mu == 0.0 {
            RootKind::Double
        } else {
            RootKind::Complex
        }
    }

    /// `S(t)` and `C(t) = S'(t)` with `S(0) = 0`, `S'(0) = 1`.
    fn sc(&self, t: f64) -> (f64, f64) {
        match self.kind() {
            RootKind::RealDistinct => {
                let w = self.mu.sqrt();
                ((w * t).sinh() / w, (w * t).cosh())
            }
            RootKind::Double => (t, 1.0),
            RootKind::Complex => {
                let w = (-self.mu).sqrt();
                ((w * t).sin() / w, (w * t).cos())
            }
        }
    }

    /// `(f, f', f'')` with `f(0) = 0`, `f'(0) = 1`.
    pub fn f(&self, t: f64) -> [f64; 3] {
        let (s, c) = self.sc(t);
        let e = (self.p * t).exp();
        let p = self.p;
        [e * s, e * (p * s + c), e * (p * p * s + 2.0 * p * c + self.mu * s)]
    }

    /// `(f̃, f̃', f̃'')` with `f̃(0) = 1`, `f̃'(0) = 0`.
    pub fn f_tilde(&self, t: f64) -> [f64; 3] {
        let (s, c) = self.sc(t);
        let e = (self.p * t).exp();
        let p = self.p;
        let k = self.mu - p * p;
        [e * (c - p * s), e * k * s, e * k * (p * s + c)]
    }

    pub fn residual(&self, v: [f64; 3]) -> f64 {
        -self.a * v[2] + self.beta * v[1] + self.gamma * v[0]
    }
}

/// Closed-form solutions of the frozen-coefficient equation around `anchor`:
/// `u_i(y) = f_i(y_i - x_i)` for `i = 1, 2` and `u_3(y) = f̃_1(y_1 - x_1)`.
#[derive(Clone, Debug, Serialize)]
pub struct LocalSeed {
    pub anchor: Vec2,
    pub region: RegionId,
    #[serde(skip)]
    pub frozen: Frozen,
    pub odes: [Ode1D; 2],
}

impl LocalSeed {
    /// Value, gradient and Hessian of component `k`.
    pub fn jet(&self, k: usize, y: &Vec2) -> (f64, Vec2, Matrix2<f64>) {
        let t = y - self.anchor;
        let (dir, v) = match k {
            0 => (0, self.odes[0].f(t.x)),
            1 => (1, self.odes[1].f(t.y)),
            _ => (0, self.odes[0].f_tilde(t.x)),
        };
        let mut g = Vec2::zeros();
        g[dir] = v[1];
        let mut h = Matrix2::zeros();
        h[(dir, dir)] = v[2];
        (v[0], g, h)
    }

    /// `3 × 3` generalized Jacobian at `y`.
    pub fn jacobian(&self, y: &Vec2) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let (v, g, _) = self.jet(k, y);
            j[(k, 0)] = g.x;
            j[(k, 1)] = g.y;
            j[(k, 2)] = v;
        }
        j
    }

    /// Jacobian at `y` of the piecewise-linear interpolant of the seed on
    /// element `t`.
    pub fn interpolated_jacobian(&self, mesh: &Mesh, t: usize, y: &Vec2) -> DMatrix<f64> {
        let l = mesh.barycentric(t, y);
        let g = mesh.basis_gradients(t);
        let verts = mesh.triangles[t].map(|v| mesh.vertices[v]);
        let mut j = DMatrix::zeros(3, 3);
        for k in 0..3 {
            let u = verts.map(|p| self.jet(k, &p).0);
            let du = g[0] * u[0] + g[1] * u[1] + g[2] * u[2];
            j[(k, 0)] = du.x;
            j[(k, 1)] = du.y;
            j[(k, 2)] = l[0] * u[0] + l[1] * u[1] + l[2] * u[2];
        }
        j
    }

    pub fn det(&self, y: &Vec2) -> f64 {
        let j = self.jacobian(y);
        Matrix3::from_fn(|r, c| j[(r, c)]).determinant()
    }

    /// `L₀ u_k (y) = -A:D²u - b·Du + c·Du + q u` with frozen coefficients.
    pub fn residual(&self, k: usize, y: &Vec2) -> f64 {
        let (v, g, h) = self.jet(k, y);
        let f = &self.frozen;
        -(f.a.component_mul(&h)).sum() - f.b.dot(&g) + f.c.dot(&g) + f.q * v
    }
}

/// Seeds for the operator `op` frozen at `x` in `region` (the operator's `κ`
/// is included in `q`).
pub fn local_ode_solutions(op: &OperatorSpec, region: RegionId, x: &Vec2) -> Result<LocalSeed, ConstructError> {
    let f = op.eval(region, x);
    let mut odes = [Ode1D::new(1.0, 0.0, 0.0); 2];
    for (i, ode) in odes.iter_mut().enumerate() {
        let a = f.a[(i, i)];
        if !(a > 0.0) {
            return Err(ConstructError::NotElliptic { i: i + 1, value: a });
        }
        *ode = Ode1D::new(a, f.c[i] - f.b[i], f.q);
    }
    Ok(LocalSeed {
        anchor: *x,
        region,
        frozen: f,
        odes,
    })
}

/// Dirichlet trace of one dictionary member.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "k", rename_all = "lowercase")]
pub enum FourierTrace {
    Const,
    Cos(usize),
    Sin(usize),
}

impl FourierTrace {
    pub fn eval(&self, outer: &Outer, p: &Vec2) -> f64 {
        let th = outer.angle_of(p);
        match *self {
            FourierTrace::Const => 1.0,
            FourierTrace::Cos(k) => (k as f64 * th).cos(),
            FourierTrace::Sin(k) => (k as f64 * th).sin(),
        }
    }
}

/// `1, cos kθ, sin kθ` for `k ≤ m / 2`.
pub fn fourier_traces(m: usize) -> Vec<FourierTrace> {
    let mut t = vec![FourierTrace::Const];
    for k in 1..=m / 2 {
        t.push(FourierTrace::Cos(k));
        t.push(FourierTrace::Sin(k));
    }
    t
}

/// Global solutions of one operator for the Fourier traces.
#[derive(Clone, Debug)]
pub struct Dictionary {
    pub traces: Vec<FourierTrace>,
    pub fields: Vec<SolutionField>,
}

impl Dictionary {
    pub fn build(solver: &DirichletSolver, outer: &Outer, m: usize) -> Result<Dictionary, ConstructError> {
        let traces = fourier_traces(m);
        let vecs: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| solver.boundary_vector(&|p: &Vec2| t.eval(outer, p)))
            .collect();
        let fields = solver.solve_many(&vecs)?;
        Ok(Dictionary { traces, fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Leading `n` members (a smaller dictionary is a prefix of a larger one).
    pub fn prefix(&self, n: usize) -> Dictionary {
        Dictionary {
            traces: self.traces[..n].to_vec(),
            fields: self.fields[..n].to_vec(),
        }
    }

    /// `Σ_k c_k w_k`.
    pub fn combine(&self, c: &[f64]) -> SolutionField {
        let terms: Vec<(f64, &SolutionField)> = c.iter().copied().zip(&self.fields).collect();
        SolutionField::combine(&terms)
    }

    /// Jacobian rows of all members at every sample: one `n × 3` block per
    /// sample.
    pub fn table(&self, samples: &SampleSet) -> Result<Vec<DMatrix<f64>>, ConstructError> {
        Ok(JacobianTable::new(&self.fields, samples)?.jacobians)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RungeFit {
    /// Dictionary weights, one column per seed component.
    #[serde(skip)]
    pub coeffs: DMatrix<f64>,
    /// Largest Euclidean error of a Jacobian row `(Du, u)` over the fit points.
    pub max_error: f64,
    pub rms_error: f64,
    pub points: usize,
    pub kept: usize,
}

/// Relative singular-value cutoff of the fit.
pub const FIT_CUTOFF: f64 = 1e-8;

/// Least-squares fit of `(u, Du)` of every seed component by dictionary
/// combinations over the element centroids of the seed's region inside
/// `B(x, radius)`.
pub fn fit_seed(dict: &Dictionary, seed: &LocalSeed, radius: f64) -> RungeFit {
    let mesh = &dict.fields[0].mesh;
    let tris: Vec<usize> = mesh
        .triangles_near(&seed.anchor, radius)
        .into_iter()
        .filter(|&t| mesh.region[t] == seed.region && (mesh.centroid(t) - seed.anchor).norm() <= radius)
        .collect();
    let n = dict.len();
    let rows = 3 * tris.len();
    let mut phi = DMatrix::zeros(rows, n);
    let mut target = DMatrix::zeros(rows, 3);
    for (i, &t) in tris.iter().enumerate() {
        let y = mesh.centroid(t);
        for (k, w) in dict.fields.iter().enumerate() {
            let (_, v, g) = w.value_grad_in(t, &y);
            phi[(3 * i, k)] = g.x;
            phi[(3 * i + 1, k)] = g.y;
            phi[(3 * i + 2, k)] = v;
        }
        for c in 0..3 {
            let (v, g, _) = seed.jet(c, &y);
            target[(3 * i, c)] = g.x;
            target[(3 * i + 1, c)] = g.y;
            target[(3 * i + 2, c)] = v;
        }
    }
    if rows == 0 {
        return RungeFit {
            coeffs: DMatrix::zeros(n, 3),
            max_error: f64::INFINITY,
            rms_error: f64::INFINITY,
            points: 0,
            kept: 0,
        };
    }
    let (coeffs, kept) = truncated_lstsq(&phi, &target, FIT_CUTOFF);
    let resid = &phi * &coeffs - &target;
    let mut max_error = 0.0f64;
    for i in 0..tris.len() {
        for c in 0..3 {
            let e = (resid[(3 * i, c)].powi(2) + resid[(3 * i + 1, c)].powi(2) + resid[(3 * i + 2, c)].powi(2)).sqrt();
            max_error = max_error.max(e);
        }
    }
    RungeFit {
        coeffs,
        max_error,
        rms_error: resid.norm() / (rows as f64).sqrt(),
        points: tris.len(),
        kept,
    }
}

/// Builds the dictionary of size `m` for `op` and fits `seed`; returns the
/// three global fields and the fit.
pub fn runge_fit(
    op: &OperatorSpec,
    mesh: &Arc<Mesh>,
    outer: &Outer,
    seed: &LocalSeed,
    m: usize,
    radius: f64,
) -> Result<(Vec<SolutionField>, RungeFit), ConstructError> {
    if m < 8 {
        return Err(ConstructError::SmallDictionary(m));
    }
    let solver = DirichletSolver::new(op, mesh.clone());
    let dict = Dictionary::build(&solver, outer, m)?;
    let fit = fit_seed(&dict, seed, radius);
    let fields = (0..3).map(|c| dict.combine(fit.coeffs.column(c).as_slice())).collect();
    Ok((fields, fit))
}

/// Centers of a square lattice of pitch `ε√2`; every sample lies in a cell
/// whose center is within `ε`. Only cells containing samples are kept.
pub fn ball_cover(scene: &Scene, samples: &SampleSet, eps: f64) -> Vec<Vec2> {
    let pitch = eps * 2f64.sqrt();
    let (lo, hi) = scene.outer.bounding_box();
    let nx = (((hi[0] - lo[0]) / pitch).ceil() as usize).max(1);
    let ny = (((hi[1] - lo[1]) / pitch).ceil() as usize).max(1);
    // center the lattice on the bounding box
    let ox = 0.5 * (lo[0] + hi[0]) - 0.5 * nx as f64 * pitch;
    let oy = 0.5 * (lo[1] + hi[1]) - 0.5 * ny as f64 * pitch;
    let mut used = vec![false; nx * ny];
    for s in &samples.samples {
        let i = (((s.p.x - ox) / pitch).floor() as isize).clamp(0, nx as isize - 1) as usize;
        let j = (((s.p.y - oy) / pitch).floor() as isize).clamp(0, ny as isize - 1) as usize;
        used[j * nx + i] = true;
    }
    let mut centers = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if used[j * nx + i] {
                centers.push(Vec2::new(ox + (i as f64 + 0.5) * pitch, oy + (j as f64 + 0.5) * pitch));
            }
        }
    }
    centers
}

/// `(diam Ω / ε)^d + 1`.
pub fn cover_bound(scene: &Scene, eps: f64) -> f64 {
    (scene.outer.diameter() / eps).powi(D as i32) + 1.0
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructConfig {
    pub sigma: f64,
    pub dict_size: usize,
    pub fit_radius: f64,
    /// Upper limit of the per-center certified radius.
    pub eps_max: f64,
    /// Points per interface for probe pairs.
    pub probes: usize,
    /// Grid spacing of the sample set (default: mesh size).
    pub spacing: Option<f64>,
    /// Probe offset and tube half-width (default: twice the mesh size).
    pub probe_offset: Option<f64>,
    pub reduce: bool,
    pub seed: u64,
    pub retry_cap: usize,
    /// Stop placing centers after this many (default: four times the cover
    /// bound at `eps_max / 2`).
    pub max_centers: Option<usize>,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        ConstructConfig {
            sigma: 0.5,
            dict_size: 32,
            fit_radius: 0.3,
            eps_max: 0.3,
            probes: 64,
            spacing: None,
            probe_offset: None,
            reduce: true,
            seed: 0,
            retry_cap: 50,
            max_centers: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CenterReport {
    pub x: f64,
    pub y: f64,
    pub region: RegionId,
    pub epsilon: f64,
    pub fit_radius: f64,
    pub fit: RungeFit,
    /// Smallest `det J` of the shifted fit over the certified ball.
    pub margin_shifted: f64,
    /// Smallest `|det J|` after the shift-back over the certified ball.
    pub margin: f64,
    /// Largest `|det J_shifted - det J_original|` over the certified ball.
    pub shift_change: f64,
    /// Largest `|coefficient - frozen|` over samples in the ball.
    pub frozen_discrepancy: f64,
    pub newly_covered: usize,
    pub certified: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub member: usize,
    pub center: usize,
    pub component: usize,
    /// Dictionary weights of the shift-back solve.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibleFamily {
    #[serde(skip)]
    pub fields: Vec<SolutionField>,
    /// Dictionary weights of each final member.
    pub weights: Vec<Vec<f64>>,
    pub traces: Vec<FourierTrace>,
    pub kappa: f64,
    pub sigma: f64,
    pub centers: Vec<CenterReport>,
    pub provenance: Vec<Provenance>,
    /// Size of the certified union before reduction.
    pub union_size: usize,
    /// Per sample, the largest `|det|` over the center triples; its minimum
    /// bounds the union margin from below.
    #[serde(skip)]
    pub union_bounds: Vec<f64>,
    pub union_margin: f64,
    pub uncovered: usize,
    pub certified: bool,
    /// `max |Δ det| / κ` over certified balls.
    pub shift_constant: f64,
    pub reductions: Vec<Reduction>,
    pub p_star: usize,
    pub final_margin: f64,
    pub final_min_rank: usize,
    pub admissible: bool,
    #[serde(skip)]
    pub samples: SampleSet,
}

fn weights_jacobian(table: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    w.transpose() * table
}

fn coeff_distance(a: &Frozen, b: &Frozen) -> f64 {
    (a.a - b.a)
        .abs()
        .max()
        .max((a.b - b.b).abs().max())
        .max((a.c - b.c).abs().max())
        .max((a.q - b.q).abs())
}

struct Certifier<'a> {
    samples: &'a SampleSet,
    shifted: &'a OperatorSpec,
    dict_s: &'a Dictionary,
    table_s: &'a [DMatrix<f64>],
    table_o: &'a [DMatrix<f64>],
    /// Element each sample is evaluated in.
    elements: &'a [usize],
    cfg: &'a ConstructConfig,
}

struct CenterOutcome {
    report: CenterReport,
    weights: DMatrix<f64>,
    covered: Vec<usize>,
}

impl Certifier<'_> {
    /// Certifies a center at sample `anchor`, halving the fit radius up to
    /// twice if the anchor itself does not certify.
    fn process(&self, anchor: usize) -> Result<CenterOutcome, ConstructError> {
        let mut radius = self.cfg.fit_radius;
        loop {
            let o = self.attempt(anchor, radius)?;
            if o.report.certified || radius < 0.3 * self.cfg.fit_radius {
                return Ok(o);
            }
            radius *= 0.5;
        }
    }

    fn attempt(&self, anchor: usize, radius: f64) -> Result<CenterOutcome, ConstructError> {
        let s0 = &self.samples.samples[anchor];
        let x = s0.p;
        let seed = local_ode_solutions(self.shifted, s0.region, &x)?;
        let fit = fit_seed(self.dict_s, &seed, radius);
        let mesh = &self.dict_s.fields[0].mesh;
        let sigma = self.cfg.sigma;
        let mut cand: Vec<(usize, f64, bool, f64, f64)> = Vec::new();
        let mut frozen_discrepancy = 0.0f64;
        for (i, s) in self.samples.samples.iter().enumerate() {
            let r = (s.p - x).norm();
            if s.region != s0.region || r > self.cfg.eps_max {
                continue;
            }
            let js = seed.interpolated_jacobian(mesh, self.elements[i], &s.p);
            let jf = weights_jacobian(&self.table_s[i], &fit.coeffs);
            let jo = weights_jacobian(&self.table_o[i], &fit.coeffs);
            let dseed = det3x3(&js);
            let dfit = det3x3(&jf);
            let dorig = det3x3(&jo);
            let pre = dseed - multilinear_bound(&jf, &js) >= sigma;
            let post = dorig.abs() > 0.5 * sigma;
            cand.push((i, r, pre && post, dfit, dorig));
            frozen_discrepancy =
                frozen_discrepancy.max(coeff_distance(&self.shifted.eval(s.region, &s.p), &seed.frozen));
        }
        let ok_within = |eps: f64| cand.iter().filter(|c| c.1 <= eps).all(|c| c.2);
        let certified = ok_within(0.0);
        let mut eps = 0.0;
        if certified {
            if ok_within(self.cfg.eps_max) {
                eps = self.cfg.eps_max;
            } else {
                let (mut lo, mut hi) = (0.0, self.cfg.eps_max);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if ok_within(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                eps = lo;
            }
        }
        let inside: Vec<&(usize, f64, bool, f64, f64)> = cand.iter().filter(|c| certified && c.1 <= eps).collect();
        let margin_shifted = inside.iter().map(|c| c.3).fold(f64::INFINITY, f64::min);
        let margin = inside.iter().map(|c| c.4.abs()).fold(f64::INFINITY, f64::min);
        let shift_change = inside.iter().map(|c| (c.3 - c.4).abs()).fold(0.0, f64::max);
        Ok(CenterOutcome {
            report: CenterReport {
                x: x.x,
                y: x.y,
                region: s0.region,
                epsilon: eps,
                fit_radius: radius,
                fit: fit.clone(),
                margin_shifted,
                margin,
                shift_change,
                frozen_discrepancy,
                newly_covered: 0,
                certified,
            },
            weights: fit.coeffs,
            covered: inside.iter().map(|c| c.0).collect(),
        })
    }
}

/// Scales every member (weight column, Jacobian row) to unit largest row
/// norm over the samples.
fn normalize_members(w: &mut DMatrix<f64>, table: &mut JacobianTable) {
    for k in 0..w.ncols() {
        let s = table.jacobians.iter().map(|j| j.row(k).norm()).fold(0.0, f64::max);
        if s > 0.0 {
            w.column_mut(k).scale_mut(1.0 / s);
            for j in table.jacobians.iter_mut() {
                j.row_mut(k).scale_mut(1.0 / s);
            }
        }
    }
}

fn det3x3(j: &DMatrix<f64>) -> f64 {
    det3(
        &[j[(0, 0)], j[(0, 1)], j[(0, 2)]],
        &[j[(1, 0)], j[(1, 1)], j[(1, 2)]],
        &[j[(2, 0)], j[(2, 1)], j[(2, 2)]],
    )
}

/// Builds and certifies an admissible family on `mesh`.
///
/// Centers are placed at uncovered samples (first near the lattice points of
/// [`ball_cover`], then greedily); each center fits its seeds under `L + κ`,
/// re-solves under `L` with the same traces and certifies the radius where the
/// determinant of the seed's mesh interpolant minus the multilinearity bound
/// against the fit stays above `σ` and the shifted-back determinant above
/// `σ/2`. The union of all center triples is
/// then Whitney-reduced towards `P*`.
pub fn build_admissible_family(
    scene: &Scene,
    coeffs: &Arc<CoefficientSet>,
    shift: &ShiftReport,
    mesh: &Arc<Mesh>,
    cfg: &ConstructConfig,
) -> Result<AdmissibleFamily, ConstructError> {
    if cfg.dict_size < 8 {
        return Err(ConstructError::SmallDictionary(cfg.dict_size));
    }
    let h = mesh.h;
    let spacing = cfg.spacing.unwrap_or(h);
    let offset = cfg.probe_offset.unwrap_or(2.0 * h);
    let samples = SampleSet::new(scene, spacing, offset, cfg.probes);
    let original = OperatorSpec::original(coeffs.clone());
    let shifted = original.with_kappa(shift.kappa);
    let solver_s = DirichletSolver::new(&shifted, mesh.clone());
    let solver_o = DirichletSolver::new(&original, mesh.clone());
    let dict_s = Dictionary::build(&solver_s, &scene.outer, cfg.dict_size)?;
    let dict_o = Dictionary::build(&solver_o, &scene.outer, cfg.dict_size)?;
    let table_s = dict_s.table(&samples)?;
    let table_o = dict_o.table(&samples)?;
    let elements = samples
        .samples
        .iter()
        .map(|s| dict_s.fields[0].element(&s.p, Side::Region(s.region)))
        .collect::<Result<Vec<usize>, FieldError>>()?;
    let cert = Certifier {
        samples: &samples,
        elements: &elements,
        shifted: &shifted,
        dict_s: &dict_s,
        table_s: &table_s,
        table_o: &table_o,
        cfg,
    };
    let n = samples.len();
    let mut covered = vec![false; n];
    let mut tried = vec![false; n];
    let mut outcomes: Vec<CenterOutcome> = Vec::new();
    let accept = |o: CenterOutcome, covered: &mut Vec<bool>, outcomes: &mut Vec<CenterOutcome>| {
        let mut o = o;
        let mut fresh = 0;
        for &i in &o.covered {
            if !covered[i] {
                covered[i] = true;
                fresh += 1;
            }
        }
        o.report.newly_covered = fresh;
        outcomes.push(o);
    };
    // lattice-guided pass
    for c in ball_cover(scene, &samples, 0.5 * cfg.eps_max) {
        for region in 1..=scene.n_regions() {
            let best = samples
                .samples
                .iter()
                .enumerate()
                .filter(|(i, s)| s.region == region && !covered[*i] && !tried[*i])
                .map(|(i, s)| (i, (s.p - c).norm()))
                .filter(|&(_, d)| d <= 0.5 * cfg.eps_max)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = best {
                tried[i] = true;
                let o = cert.process(i)?;
                accept(o, &mut covered, &mut outcomes);
            }
        }
    }
    // greedy pass over what is left
    let cap = cfg
        .max_centers
        .unwrap_or_else(|| 4 * cover_bound(scene, 0.5 * cfg.eps_max) as usize);
    while let Some(i) = (0..n).find(|&i| !covered[i] && !tried[i]) {
        if outcomes.len() >= cap {
            break;
        }
        tried[i] = true;
        let o = cert.process(i)?;
        accept(o, &mut covered, &mut outcomes);
    }
    let uncovered = covered.iter().filter(|c| !**c).count();
    let certified_centers: Vec<&CenterOutcome> = outcomes.iter().filter(|o| o.report.certified).collect();

    // union of certified triples, as dictionary weights (columns)
    let m1 = dict_o.len();
    let p_union = 3 * certified_centers.len();
    let mut w_union = DMatrix::zeros(m1, p_union);
    let mut provenance = Vec::new();
    for (ci, o) in certified_centers.iter().enumerate() {
        for c in 0..3 {
            w_union.set_column(3 * ci + c, &o.weights.column(c));
            provenance.push(Provenance {
                member: 3 * ci + c,
                center: ci,
                component: c,
                weights: o.weights.column(c).iter().copied().collect(),
            });
        }
    }
    let union_bounds: Vec<f64> = table_o
        .par_iter()
        .map(|t| {
            certified_centers
                .iter()
                .map(|o| det3x3(&weights_jacobian(t, &o.weights)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let union_margin = union_bounds.iter().copied().fold(f64::INFINITY, f64::min);

    // Whitney reduction on the Jacobian table of the union
    let pstar = p_star(D, D, coeffs.alpha);
    let mut table = JacobianTable {
        samples: samples.samples.clone(),
        jacobians: table_o.iter().map(|t| weights_jacobian(t, &w_union)).collect(),
    };
    normalize_members(&mut w_union, &mut table);
    // member k of the current family = Σ_j mix[k, j] · union member j
    let mut mix = DMatrix::<f64>::identity(p_union, p_union);
    let mut reductions = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.reduce {
        while mix.nrows() > pstar {
            match whitney_reduce_table(&table, &mut rng, cfg.retry_cap) {
                Ok(red) => {
                    table = table.reduced(&red.a);
                    let p = mix.nrows();
                    let last = mix.row(p - 1).into_owned();
                    let mut next = mix.rows(0, p - 1).into_owned();
                    for i in 0..p - 1 {
                        let r = next.row(i) - red.a[i] * &last;
                        next.set_row(i, &r);
                    }
                    mix = next;
                    reductions.push(red);
                }
                Err(_) => break,
            }
        }
    }
    let mut w_final = &w_union * mix.transpose();
    normalize_members(&mut w_final, &mut table);
    let fields: Vec<SolutionField> = (0..w_final.ncols())
        .map(|k| dict_o.combine(w_final.column(k).as_slice()))
        .collect();
    let report = table.report();
    let final_margin = report.margin;
    let shift_constant = if shift.kappa > 0.0 {
        outcomes
            .iter()
            .filter(|o| o.report.certified)
            .map(|o| o.report.shift_change)
            .fold(0.0, f64::max)
            / shift.kappa
    } else {
        0.0
    };
    let centers: Vec<CenterReport> = outcomes.into_iter().map(|o| o.report).collect();
    let certified = uncovered == 0 && union_margin >= 0.5 * cfg.sigma;
    Ok(AdmissibleFamily {
        weights: (0..w_final.ncols())
            .map(|k| w_final.column(k).iter().copied().collect())
            .collect(),
        fields,
        traces: dict_o.traces.clone(),
        kappa: shift.kappa,
        sigma: cfg.sigma,
        centers,
        provenance,
        union_size: p_union,
        union_bounds,
        union_margin,
        uncovered,
        certified,
        shift_constant,
        reductions,
        p_star: pstar,
        final_margin,
        final_min_rank: report.min_rank,
        admissible: report.admissible,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::build_mesh;
    use rand::Rng;

    fn laplace() -> OperatorSpec {
        OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[1.0])))
    }

    #[test]
    fn laplace_seeds_are_linear() {
        let s = local_ode_solutions(&laplace(), 1, &Vec2::new(0.2, 0.1)).unwrap();
        let y = Vec2::new(0.5, -0.3);
        assert!((s.jet(0, &y).0 - 0.3).abs() < 1e-15);
        assert!((s.jet(1, &y).0 + 0.4).abs() < 1e-15);
        assert_eq!(s.jet(2, &y).0, 1.0);
        assert_eq!(s.odes[0].kind(), RootKind::Double);
    }

    #[test]
    fn shifted_laplace_seeds_are_hyperbolic() {
        let op = laplace().with_kappa(0.7);
        let s = local_ode_solutions(&op, 1, &Vec2::zeros()).unwrap();
        let w = 0.7f64.sqrt();
        let y = Vec2::new(0.4, 0.0);
        assert!((s.jet(0, &y).0 - (w * 0.4).sinh() / w).abs() < 1e-14);
        assert!((s.jet(2, &y).0 - (w * 0.4).cosh()).abs() < 1e-14);
        assert!((s.det(&Vec2::new(0.3, 0.2)) - (w * 0.2).cosh()).abs() < 1e-13);
    }

    #[test]
    fn all_root_branches_solve_the_ode() {
        for (a, beta, gamma) in [(1.0, 0.5, 2.0), (1.0, 2.0, -1.0), (2.0, 0.3, -3.0)] {
            let ode = Ode1D::new(a, beta, gamma);
            for t in [-0.3, 0.0, 0.2, 0.7] {
                assert!(ode.residual(ode.f(t)).abs() < 1e-12);
                assert!(ode.residual(ode.f_tilde(t)).abs() < 1e-12);
            }
            assert_eq!(ode.f(0.0)[..2], [0.0, 1.0]);
            assert_eq!(ode.f_tilde(0.0)[..2], [1.0, 0.0]);
        }
        assert_eq!(Ode1D::new(1.0, 2.0, -1.0).kind(), RootKind::Double);
        assert_eq!(Ode1D::new(2.0, 0.3, -3.0).kind(), RootKind::Complex);
        assert_eq!(Ode1D::new(1.0, 0.5, 2.0).kind(), RootKind::RealDistinct);
    }

    #[test]
    fn random_seeds_have_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a11 = rng.gen_range(0.5..2.0);
            let a22 = rng.gen_range(0.5..2.0);
            let off = rng.gen_range(-0.2..0.2);
            let coeffs = CoefficientSet {
                lambda: 0.2,
                alpha: 1.0,
                regions: vec![crate::coefficients::RegionCoeffs::constant(
                    1,
                    [[a11, off], [off, a22]],
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    rng.gen_range(-1.0..2.0),
                )],
            };
            let op = OperatorSpec::original(Arc::new(coeffs));
            let x = Vec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let s = local_ode_solutions(&op, 1, &x).unwrap();
            assert!((s.det(&x) - 1.0).abs() < 1e-10);
            for _ in 0..5 {
                let y = x + Vec2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
                for k in 0..3 {
                    assert!(s.residual(k, &y).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn interpolated_linear_seed_is_exact() {
        let scene = Scene::concentric(&[]).unwrap();
        let mesh = build_mesh(&scene, 0.1).unwrap();
        let x = Vec2::new(0.1, -0.2);
        let s = local_ode_solutions(&laplace(), 1, &x).unwrap();
        let y = Vec2::new(0.33, 0.21);
        let t = mesh.locate(&y).unwrap();
        assert!((s.interpolated_jacobian(&mesh, t, &y) - s.jacobian(&y)).abs().max() < 1e-12);
    }

    #[test]
    fn ball_cover_covers_and_respects_bound() {
        let scene = Scene::concentric(&[0.5]).unwrap();
        let samples = SampleSet::new(&scene, 0.05, 0.05, 16);
        for eps in [1.0, 0.5, 0.3, 0.2, 0.1] {
            let c = ball_cover(&scene, &samples, eps);
            assert!(c.len() as f64 <= cover_bound(&scene, eps), "eps {eps}: {}", c.len());
            for s in &samples.samples {
                let d = c.iter().map(|c| (c - s.p).norm()).fold(f64::INFINITY, f64::min);
                assert!(d <= eps + 1e-12);
            }
        }
        assert!(ball_cover(&scene, &samples, 1.0).len() <= 5);
    }

    #[test]
    fn linear_seed_fit_is_exact_for_laplace() {
        let scene = Scene::concentric(&[]).unwrap();
        let mesh = Arc::new(build_mesh(&scene, 0.1).unwrap());
        let seed = local_ode_solutions(&laplace(), 1, &Vec2::new(0.1, 0.2)).unwrap();
        let (fields, fit) = runge_fit(&laplace(), &mesh, &scene.outer, &seed, 8, 0.3).unwrap();
        assert!(fit.max_error < 1e-8, "{}", fit.max_error);
        let (_, v, _) = fields[0]
            .value_grad(&Vec2::new(0.3, 0.3), crate::solver::Side::Auto)
            .unwrap();
        assert!((v - 0.2).abs() < 1e-8);
    }

    #[test]
    fn fit_error_nonincreasing_in_dictionary_size() {
        let scene = Scene::concentric(&[0.5]).unwrap();
        let mesh = Arc::new(build_mesh(&scene, 0.05).unwrap());
        let op = OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[2.0, 1.0]))).with_kappa(0.5);
        let solver = DirichletSolver::new(&op, mesh.clone());
        let dict = Dictionary::build(&solver, &scene.outer, 32).unwrap();
        let seed = local_ode_solutions(&op, 2, &Vec2::new(0.7, 0.1)).unwrap();
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&m| fit_seed(&dict.prefix(m + 1), &seed, 0.2).rms_error)
            .collect();
        assert!(
            errs[1] <= errs[0] * (1.0 + 1e-9) && errs[2] <= errs[1] * (1.0 + 1e-9),
            "{errs:?}"
        );
    }
}
