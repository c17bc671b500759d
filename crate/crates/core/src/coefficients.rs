//! Piecewise coefficients `(A_i, b_i, c_i, q_i)`, coefficient-swap operators
//! `L[i_1..i_{N+1}] + κ`, and the well-posedness shift.
//!
//! The operator is `Lu = -div(A Du + b u) + c·Du + q u`.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RegionId, Scene, Vec2};
use crate::solver::fem;
use crate::solver::mesh::Mesh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("assignment has length {got}, expected {expected}")]
    AssignmentLength { got: usize, expected: usize },
    #[error("assignment entry {entry} at position {pos} is not a region id in 1..={max}")]
    AssignmentEntry { pos: usize, entry: usize, max: usize },
    #[error("shift must be non-negative, got {0}")]
    NegativeShift(f64),
    #[error("coefficients: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("no shift in (0, {theta}) makes every probed system invertible")]
    ShiftFailed { theta: f64 },
}

/// Closed-form smooth scalar function of position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarFn {
    Const(f64),
    Expr(FnExpr),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FnExpr {
    /// `c + g·x`
    Affine {
        c: f64,
        g: [f64; 2],
    },
    /// `offset + amp · exp(k·x)`
    Exp {
        amp: f64,
        k: [f64; 2],
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amp · sin(k·x + phase)`
    Trig {
        amp: f64,
        k: [f64; 2],
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `Σ a x^i y^j` over `[a, i, j]` triples.
    Poly {
        terms: Vec<(f64, u32, u32)>,
    },
    Sum(Vec<ScalarFn>),
}

impl Default for ScalarFn {
    fn default() -> Self {
        ScalarFn::Const(0.0)
    }
}

impl From<f64> for ScalarFn {
    fn from(v: f64) -> Self {
        ScalarFn::Const(v)
    }
}

fn powi(x: f64, n: u32) -> f64 {
    x.powi(n as i32)
}

impl ScalarFn {
    pub fn value(&self, p: &Vec2) -> f64 {
        match self {
            ScalarFn::Const(v) => *v,
            ScalarFn::Expr(e) => match e {
                FnExpr::Affine { c, g } => c + g[0] * p.x + g[1] * p.y,
                FnExpr::Exp { amp, k, offset } => offset + amp * (k[0] * p.x + k[1] * p.y).exp(),
                FnExpr::Trig { amp, k, phase, offset } => offset + amp * (k[0] * p.x + k[1] * p.y + phase).sin(),
                FnExpr::Poly { terms } => terms.iter().map(|&(a, i, j)| a * powi(p.x, i) * powi(p.y, j)).sum(),
                FnExpr::Sum(fs) => fs.iter().map(|f| f.value(p)).sum(),
            },
        }
    }

    pub fn grad(&self, p: &Vec2) -> Vec2 {
        match self {
            ScalarFn::Const(_) => Vec2::zeros(),
            ScalarFn::Expr(e) => match e {
                FnExpr::Affine { g, .. } => Vec2::new(g[0], g[1]),
                FnExpr::Exp { amp, k, .. } => {
                    let v = amp * (k[0] * p.x + k[1] * p.y).exp();
                    Vec2::new(k[0] * v, k[1] * v)
                }
                FnExpr::Trig { amp, k, phase, .. } => {
                    let v = amp * (k[0] * p.x + k[1] * p.y + phase).cos();
                    Vec2::new(k[0] * v, k[1] * v)
                }
                FnExpr::Poly { terms } => {
                    let mut g = Vec2::zeros();
                    for &(a, i, j) in terms {
                        if i > 0 {
                            g.x += a * i as f64 * powi(p.x, i - 1) * powi(p.y, j);
                        }
                        if j > 0 {
                            g.y += a * j as f64 * powi(p.x, i) * powi(p.y, j - 1);
                        }
                    }
                    g
                }
                FnExpr::Sum(fs) => fs.iter().map(|f| f.grad(p)).sum(),
            },
        }
    }

    /// `c · self`.
    pub fn scaled(&self, c: f64) -> ScalarFn {
        match self {
            ScalarFn::Const(v) => ScalarFn::Const(c * v),
            ScalarFn::Expr(e) => ScalarFn::Expr(match e {
                FnExpr::Affine { c: c0, g } => FnExpr::Affine {
                    c: c * c0,
                    g: [c * g[0], c * g[1]],
                },
                FnExpr::Exp { amp, k, offset } => FnExpr::Exp {
                    amp: c * amp,
                    k: *k,
                    offset: c * offset,
                },
                FnExpr::Trig { amp, k, phase, offset } => FnExpr::Trig {
                    amp: c * amp,
                    k: *k,
                    phase: *phase,
                    offset: c * offset,
                },
                FnExpr::Poly { terms } => FnExpr::Poly {
                    terms: terms.iter().map(|&(a, i, j)| (c * a, i, j)).collect(),
                },
                FnExpr::Sum(fs) => FnExpr::Sum(fs.iter().map(|f| f.scaled(c)).collect()),
            }),
        }
    }

    pub fn is_const(&self) -> bool {
        match self {
            ScalarFn::Const(_) => true,
            ScalarFn::Expr(FnExpr::Sum(fs)) => fs.iter().all(|f| f.is_const()),
            ScalarFn::Expr(FnExpr::Poly { terms }) => terms.iter().all(|t| t.1 == 0 && t.2 == 0),
            _ => false,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Const(v) if *v == 0.0)
    }
}

/// Coefficients frozen at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frozen {
    pub a: Matrix2<f64>,
    pub b: Vec2,
    pub c: Vec2,
    pub q: f64,
}

/// Coefficients of one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionCoeffsSpec", into = "RegionCoeffsSpec")]
pub struct RegionCoeffs {
    pub id: RegionId,
    pub a: [[ScalarFn; 2]; 2],
    pub b: [ScalarFn; 2],
    pub c: [ScalarFn; 2],
    pub q: ScalarFn,
}

/// Config form: either `A` (2x2) or `A_scalar` (γ, meaning γ·I).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionCoeffsSpec {
    pub id: RegionId,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[[ScalarFn; 2]; 2]>,
    #[serde(rename = "A_scalar", default, skip_serializing_if = "Option::is_none")]
    pub a_scalar: Option<ScalarFn>,
    #[serde(default)]
    pub b: [ScalarFn; 2],
    #[serde(default)]
    pub c: [ScalarFn; 2],
    #[serde(default)]
    pub q: ScalarFn,
}

impl TryFrom<RegionCoeffsSpec> for RegionCoeffs {
    type Error = String;

    fn try_from(s: RegionCoeffsSpec) -> Result<Self, String> {
        let a = match (s.a, s.a_scalar) {
            (Some(a), None) => a,
            (None, Some(g)) => [[g.clone(), 0.0.into()], [0.0.into(), g]],
            (Some(_), Some(_)) => return Err(format!("region {}: give either \"A\" or \"A_scalar\", not both", s.id)),
            (None, None) => return Err(format!("region {}: missing \"A\" or \"A_scalar\"", s.id)),
        };
        Ok(RegionCoeffs {
            id: s.id,
            a,
            b: s.b,
            c: s.c,
            q: s.q,
        })
    }
}

impl From<RegionCoeffs> for RegionCoeffsSpec {
    fn from(r: RegionCoeffs) -> Self {
        RegionCoeffsSpec {
            id: r.id,
            a: Some(r.a),
            a_scalar: None,
            b: r.b,
            c: r.c,
            q: r.q,
        }
    }
}

impl RegionCoeffs {
    /// `γ I` with no lower-order terms.
    pub fn isotropic(id: RegionId, gamma: impl Into<ScalarFn>) -> Self {
        let g = gamma.into();
        RegionCoeffs {
            id,
            a: [[g.clone(), 0.0.into()], [0.0.into(), g]],
            b: Default::default(),
            c: Default::default(),
            q: 0.0.into(),
        }
    }

    pub fn constant(id: RegionId, a: [[f64; 2]; 2], b: [f64; 2], c: [f64; 2], q: f64) -> Self {
        RegionCoeffs {
            id,
            a: [[a[0][0].into(), a[0][1].into()], [a[1][0].into(), a[1][1].into()]],
            b: [b[0].into(), b[1].into()],
            c: [c[0].into(), c[1].into()],
            q: q.into(),
        }
    }

    pub fn eval(&self, p: &Vec2) -> Frozen {
        Frozen {
            a: Matrix2::new(
                self.a[0][0].value(p),
                self.a[0][1].value(p),
                self.a[1][0].value(p),
                self.a[1][1].value(p),
            ),
            b: Vec2::new(self.b[0].value(p), self.b[1].value(p)),
            c: Vec2::new(self.c[0].value(p), self.c[1].value(p)),
            q: self.q.value(p),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.a.iter().flatten().all(ScalarFn::is_const)
            && self.b.iter().all(ScalarFn::is_const)
            && self.c.iter().all(ScalarFn::is_const)
            && self.q.is_const()
    }

    /// No first-order terms, so the bilinear form is symmetric.
    pub fn no_drift(&self) -> bool {
        self.b.iter().chain(self.c.iter()).all(ScalarFn::is_zero)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub regions: Vec<RegionCoeffs>,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoeffAudit {
    pub violations: Vec<String>,
    /// Minimum over samples of the smallest eigenvalue of `A`.
    pub min_eigenvalue: f64,
    /// Largest sampled sup-norm among all coefficients.
    pub max_sup: f64,
    /// Largest sampled Hölder quotient among all coefficients.
    pub max_holder: f64,
    pub max_asymmetry: f64,
}

impl CoefficientSet {
    /// Isotropic `γ_i I` in each region, listed by region id.
    pub fn isotropic(lambda: f64, gammas: &[f64]) -> Self {
        CoefficientSet {
            lambda,
            alpha: 1.0,
            regions: gammas
                .iter()
                .enumerate()
                .map(|(k, &g)| RegionCoeffs::isotropic(k + 1, g))
                .collect(),
        }
    }

    pub fn region(&self, id: RegionId) -> &RegionCoeffs {
        &self.regions[id - 1]
    }

    /// Structural checks against a scene: one entry per region, ids in order,
    /// `λ > 0`, `α ∈ (0, 1]`.
    pub fn check_shape(&self, scene: &Scene) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lambda > 0.0) {
            v.push(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            v.push(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        let ids: Vec<_> = self.regions.iter().map(|r| r.id).collect();
        let want: Vec<_> = (1..=scene.n_regions()).collect();
        if ids != want {
            v.push(format!(
                "coefficient regions must be listed as {want:?} in order, found {ids:?}"
            ));
        }
        v
    }

    /// Samples ellipticity, symmetry, sup norms and Hölder quotients of each
    /// region's coefficients over the bounding box of `scene`.
    pub fn audit(&self, scene: &Scene, samples: usize, seed: u64) -> CoeffAudit {
        let mut out = CoeffAudit {
            violations: self.check_shape(scene),
            min_eigenvalue: f64::INFINITY,
            ..Default::default()
        };
        if !out.violations.is_empty() {
            return out;
        }
        let (lo, hi) = scene.outer.bounding_box();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pt = |rng: &mut ChaCha8Rng| Vec2::new(rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1]));
        let diam = scene.outer.diameter();
        for r in &self.regions {
            let mut min_eig = f64::INFINITY;
            let mut sup = 0.0f64;
            let mut hold = 0.0f64;
            let mut asym = 0.0f64;
            for _ in 0..samples {
                let x = pt(&mut rng);
                let fx = r.eval(&x);
                asym = asym.max((fx.a[(0, 1)] - fx.a[(1, 0)]).abs());
                let sym = (fx.a + fx.a.transpose()) * 0.5;
                let eig = sym.symmetric_eigenvalues();
                min_eig = min_eig.min(eig.min());
                sup = sup.max(coeff_norms(&fx).into_iter().fold(0.0, f64::max));
                // Hölder quotient against a nearby and a far partner point
                for scale in [1e-3 * diam, 0.25 * diam] {
                    let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let y = x + scale * Vec2::new(dir.cos(), dir.sin());
                    let fy = r.eval(&y);
                    let d = diff(&fx, &fy);
                    let q = coeff_norms(&d).into_iter().fold(0.0, f64::max) / (x - y).norm().powf(self.alpha);
                    hold = hold.max(q);
                }
            }
            if asym > 1e-14 {
                out.violations.push(format!("region {}: A is not symmetric", r.id));
            }
            if !(min_eig > self.lambda) {
                out.violations.push(format!(
                    "region {}: ellipticity λ|ζ|² < Aζ·ζ fails (min eigenvalue {min_eig:.4} ≤ λ = {})",
                    r.id, self.lambda
                ));
            }
            if sup + hold > 1.0 / self.lambda * (1.0 + 1e-12) {
                out.violations.push(format!(
                    "region {}: Hölder norm {:.4} exceeds 1/λ = {:.4}",
                    r.id,
                    sup + hold,
                    1.0 / self.lambda
                ));
            }
            out.min_eigenvalue = out.min_eigenvalue.min(min_eig);
            out.max_sup = out.max_sup.max(sup);
            out.max_holder = out.max_holder.max(hold);
            out.max_asymmetry = out.max_asymmetry.max(asym);
        }
        out
    }
}

fn coeff_norms(f: &Frozen) -> [f64; 4] {
    [spectral(&f.a), f.b.norm(), f.c.norm(), f.q.abs()]
}

fn spectral(a: &Matrix2<f64>) -> f64 {
    a.singular_values().max()
}

fn diff(a: &Frozen, b: &Frozen) -> Frozen {
    Frozen {
        a: a.a - b.a,
        b: a.b - b.b,
        c: a.c - b.c,
        q: a.q - b.q,
    }
}

/// `L[i_1..i_{N+1}] + κ`: region `j` uses the coefficients of region
/// `assignment[j - 1]`, with `q` replaced by `q + κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub coeffs: Arc<CoefficientSet>,
    pub assignment: Vec<RegionId>,
    pub kappa: f64,
}

pub fn make_operator(
    coeffs: Arc<CoefficientSet>,
    assignment: &[RegionId],
    kappa: f64,
) -> Result<OperatorSpec, CoeffError> {
    let n = coeffs.regions.len();
    if assignment.len() != n {
        return Err(CoeffError::AssignmentLength {
            got: assignment.len(),
            expected: n,
        });
    }
    for (pos, &e) in assignment.iter().enumerate() {
        if e == 0 || e > n {
            return Err(CoeffError::AssignmentEntry { pos, entry: e, max: n });
        }
    }
    if !(kappa >= 0.0) {
        return Err(CoeffError::NegativeShift(kappa));
    }
    Ok(OperatorSpec {
        coeffs,
        assignment: assignment.to_vec(),
        kappa,
    })
}

impl OperatorSpec {
    /// The original operator `L` (identity assignment, no shift).
    pub fn original(coeffs: Arc<CoefficientSet>) -> Self {
        let n = coeffs.regions.len();
        OperatorSpec {
            coeffs,
            assignment: (1..=n).collect(),
            kappa: 0.0,
        }
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        OperatorSpec { kappa, ..self.clone() }
    }

    pub fn region_coeffs(&self, region: RegionId) -> &RegionCoeffs {
        self.coeffs.region(self.assignment[region - 1])
    }

    /// Coefficients acting at `p`, which lies in `region`.
    pub fn eval(&self, region: RegionId, p: &Vec2) -> Frozen {
        let mut f = self.region_coeffs(region).eval(p);
        f.q += self.kappa;
        f
    }

    pub fn is_symmetric(&self) -> bool {
        self.assignment.iter().all(|&r| self.coeffs.region(r).no_drift())
    }

    pub fn n_regions(&self) -> usize {
        self.assignment.len()
    }
}

/// Output of the well-posedness shift search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftReport {
    pub m: f64,
    pub aleph: f64,
    pub theta: f64,
    pub kappa: f64,
    pub assignments: Vec<Vec<RegionId>>,
    /// Relative smallest singular value of each probed system at the chosen κ.
    pub probe_sigma: Vec<f64>,
    pub bisections: usize,
}

pub fn coercivity_constant(lambda: f64) -> f64 {
    1.0 / lambda + lambda.powi(-3) + 1.0
}

pub fn theta_from(aleph: f64, m: f64) -> f64 {
    aleph * m * m / (1.0 + aleph * m)
}

/// Relative smallest-singular-value threshold for the invertibility probe.
pub const PROBE_TOL: f64 = 1e-10;

/// Assignments from the index maps of every construction map, one per start.
pub fn index_map_assignments(scene: &Scene) -> Vec<Vec<RegionId>> {
    let mut set = BTreeSet::new();
    for start in 1..=scene.n_regions() {
        if let Ok(cm) = scene.construction_map(start) {
            set.extend(cm.index_maps);
        }
    }
    set.into_iter().collect()
}

/// Chooses one shift `κ ∈ (0, ϑ)` that makes every probed Dirichlet system
/// `L[i] + κ` invertible on `mesh`.
///
/// `ℵ` is half the smallest distance from `1/M` to a discrete eigenvalue of
/// `(L_i + M)^{-1}` over the probed assignments.
pub fn coercivity_shift(coeffs: &Arc<CoefficientSet>, scene: &Scene, mesh: &Mesh) -> Result<ShiftReport, CoeffError> {
    let m = coercivity_constant(coeffs.lambda);
    let assignments = index_map_assignments(scene);
    let mut aleph = f64::INFINITY;
    let mass = fem::dense_interior(&fem::assemble_mass(mesh), mesh);
    for a in &assignments {
        let op = make_operator(coeffs.clone(), a, 0.0)?;
        let k = fem::dense_interior(&fem::assemble(&op, mesh), mesh);
        aleph = aleph.min(0.5 * resolvent_gap(&k, &mass, m));
    }
    let theta = theta_from(aleph, m);
    let mut kappa = 0.5 * theta;
    let mut bisections = 0;
    loop {
        let mut sig = Vec::with_capacity(assignments.len());
        for a in &assignments {
            let op = make_operator(coeffs.clone(), a, kappa)?;
            let k = fem::dense_interior(&fem::assemble(&op, mesh), mesh);
            let sv = k.singular_values();
            sig.push(sv.min() / sv.max());
        }
        if sig.iter().all(|&s| s > PROBE_TOL) {
            return Ok(ShiftReport {
                m,
                aleph,
                theta,
                kappa,
                assignments,
                probe_sigma: sig,
                bisections,
            });
        }
        bisections += 1;
        kappa *= 0.5;
        if bisections > 40 {
            return Err(CoeffError::ShiftFailed { theta });
        }
    }
}

/// Distance from `1/M` to the nearest eigenvalue of `(L + M)^{-1}`, where the
/// discrete eigenvalues `μ` of `L` solve `K v = μ Mass v`. A zero eigenvalue
/// (ill-posed `L`) is skipped so the gap to the next one is returned.
fn resolvent_gap(k: &DMatrix<f64>, mass: &DMatrix<f64>, m: f64) -> f64 {
    let chol = mass.clone().cholesky().expect("mass matrix is SPD");
    let mk = chol.solve(k);
    let inv_m = 1.0 / m;
    let scale = k.amax().max(1.0);
    mk.complex_eigenvalues()
        .iter()
        .filter(|mu| mu.norm() > 1e-12 * scale)
        .map(|mu| {
            let z = (*mu + m).inv();
            (z - inv_m).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_phase() -> Arc<CoefficientSet> {
        Arc::new(CoefficientSet::isotropic(0.5, &[2.0, 1.0]))
    }

    #[test]
    fn m_and_theta_arithmetic() {
        assert_eq!(coercivity_constant(1.0), 3.0);
        assert!((theta_from(0.1, 3.0) - 0.9 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn constant_assignment_uses_one_region() {
        let c = two_phase();
        let op = make_operator(c.clone(), &[1, 1], 0.0).unwrap();
        let p = Vec2::new(0.9, 0.0);
        assert_eq!(op.eval(2, &p).a, Matrix2::identity() * 2.0);
    }

    #[test]
    fn identity_assignment_is_original() {
        let c = two_phase();
        let op = make_operator(c.clone(), &[1, 2], 0.0).unwrap();
        assert_eq!(op, OperatorSpec::original(c));
    }

    #[test]
    fn shift_enters_q() {
        let op = make_operator(two_phase(), &[1, 2], 0.25).unwrap();
        assert_eq!(op.eval(2, &Vec2::zeros()).q, 0.25);
    }

    #[test]
    fn bad_assignments_rejected() {
        let c = two_phase();
        assert!(matches!(
            make_operator(c.clone(), &[1], 0.0),
            Err(CoeffError::AssignmentLength { .. })
        ));
        assert!(matches!(
            make_operator(c.clone(), &[1, 3], 0.0),
            Err(CoeffError::AssignmentEntry { .. })
        ));
        assert!(make_operator(c, &[1, 2], -1.0).is_err());
    }

    #[test]
    fn config_shorthand_parses() {
        let v: CoefficientSet = serde_json::from_str(
            r#"{"lambda": 0.5, "regions": [
                {"id": 1, "A_scalar": 2.0},
                {"id": 2, "A": [[1.0, 0.0], [0.0, 1.0]], "q": 0.1,
                 "b": [{"affine": {"c": 0.0, "g": [0.1, 0.0]}}, 0.0]}
            ]}"#,
        )
        .unwrap();
        assert_eq!(v.alpha, 1.0);
        assert_eq!(v.regions[0].a[1][1], ScalarFn::Const(2.0));
        assert!((v.regions[1].b[0].value(&Vec2::new(2.0, 0.0)) - 0.2).abs() < 1e-15);
        let missing: Result<CoefficientSet, _> = serde_json::from_str(r#"{"lambda": 0.5, "regions": [{"id": 1}]}"#);
        assert!(missing.unwrap_err().to_string().contains("A_scalar"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = ScalarFn::Expr(FnExpr::Sum(vec![
            ScalarFn::Expr(FnExpr::Exp {
                amp: 0.3,
                k: [1.0, -0.5],
                offset: 1.0,
            }),
            ScalarFn::Expr(FnExpr::Trig {
                amp: 0.1,
                k: [2.0, 3.0],
                phase: 0.4,
                offset: 0.0,
            }),
            ScalarFn::Expr(FnExpr::Poly {
                terms: vec![(0.2, 2, 1), (-0.1, 0, 3)],
            }),
        ]));
        let p = Vec2::new(0.3, -0.2);
        let h = 1e-6;
        let fd = Vec2::new(
            (f.value(&(p + Vec2::new(h, 0.0))) - f.value(&(p - Vec2::new(h, 0.0)))) / (2.0 * h),
            (f.value(&(p + Vec2::new(0.0, h))) - f.value(&(p - Vec2::new(0.0, h)))) / (2.0 * h),
        );
        assert!((f.grad(&p) - fd).norm() < 1e-8);
    }

    #[test]
    fn audit_flags_weak_ellipticity() {
        let scene = Scene::concentric(&[0.5]).unwrap();
        let good = CoefficientSet::isotropic(0.5, &[2.0, 1.0]);
        let a = good.audit(&scene, 200, 1);
        assert!(a.violations.is_empty(), "{:?}", a.violations);
        assert_eq!(a.max_holder, 0.0);
        let bad = CoefficientSet::isotropic(1.0, &[2.0, 1.0]);
        let b = bad.audit(&scene, 200, 1);
        assert!(b.violations.iter().any(|v| v.contains("ellipticity")));
        assert!(b.violations.iter().any(|v| v.contains("Hölder")));
    }
}
