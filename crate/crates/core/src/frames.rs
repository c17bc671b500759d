//! Sphere frames, the `H_d` matrix, the Lipschitz frame field around circular
//! interfaces, and the current matrix `T`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::OperatorSpec;
use crate::geometry::{RegionId, Scene, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("frame input must be a unit vector, |x| = {0}")]
    NonUnit(f64),
    #[error("dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("annuli around Γ{0} and Γ{1} overlap")]
    AnnulusOverlap(RegionId, RegionId),
    #[error("annulus around Γ{0} touches another interface or the outer boundary")]
    AnnulusTouches(RegionId),
    #[error("expected {expected} vectors, got {got}")]
    BadZetas { expected: usize, got: usize },
}

const UNIT_TOL: f64 = 1e-12;

/// `d*`: `d` when the sphere `S^{d-1}` is parallelizable, `d + 1` otherwise.
pub fn d_star(d: usize) -> usize {
    if matches!(d, 2 | 4 | 8) {
        d
    } else {
        d + 1
    }
}

// Signed 1-based coordinate tables: entry `s` means `sign(s) · x[|s|]`.
const FRAME4: [[i8; 4]; 3] = [[-2, 1, -4, 3], [3, -4, -1, 2], [4, 3, -2, -1]];
const FRAME8: [[i8; 8]; 7] = [
    [-2, 1, -4, 3, -6, 5, 8, -7],
    [-3, 4, 1, -2, -7, -8, 5, 6],
    [-4, -3, 2, 1, -8, 7, -6, 5],
    [-5, 6, 7, 8, 1, -2, -3, -4],
    [-6, -5, 8, -7, 2, 1, 4, -3],
    [-7, -8, -5, 6, 3, -4, 1, 2],
    [-8, 7, -6, -5, 4, 3, -2, 1],
];

fn signed(x: &[f64], table: &[i8]) -> DVector<f64> {
    DVector::from_iterator(
        table.len(),
        table
            .iter()
            .map(|&s| s.signum() as f64 * x[s.unsigned_abs() as usize - 1]),
    )
}

fn check_unit(x: &[f64]) -> Result<(), FrameError> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        Err(FrameError::NonUnit(n))
    } else {
        Ok(())
    }
}

/// Frame vectors at a unit `x ∈ S^{d-1}`: `h_1 = x` followed by `d - 1`
/// orthonormal tangents for `d ∈ {2, 4, 8}`, or by `d` tangents spanning the
/// tangent space otherwise.
pub fn sphere_frame(d: usize, x: &[f64]) -> Result<Vec<DVector<f64>>, FrameError> {
    if d < 2 || x.len() != d {
        return Err(FrameError::BadDimension(d));
    }
    check_unit(x)?;
    let mut out = vec![DVector::from_column_slice(x)];
    match d {
        2 => out.push(signed(x, &[-2, 1])),
        4 => out.extend(FRAME4.iter().map(|t| signed(x, t))),
        8 => out.extend(FRAME8.iter().map(|t| signed(x, t))),
        _ => {
            let h = hd_frame(d, x)?;
            for r in 1..=d {
                out.push(h.row(r).columns(0, d).transpose());
            }
        }
    }
    Ok(out)
}

/// The `(d+1)×(d+1)` matrix with rows `(h_1, 1)` and `(h_k, x_{d+2-k})`, where
/// `h_k = x_{d+2-k} x - e_{d+2-k}`, before any sign correction.
pub fn hd_matrix(d: usize, x: &[f64]) -> Result<DMatrix<f64>, FrameError> {
    if d < 2 || x.len() != d {
        return Err(FrameError::BadDimension(d));
    }
    check_unit(x)?;
    let mut h = DMatrix::zeros(d + 1, d + 1);
    for j in 0..d {
        h[(0, j)] = x[j];
    }
    h[(0, d)] = 1.0;
    for k in 2..=d + 1 {
        let m = d + 2 - k; // 1-based coordinate
        for j in 0..d {
            h[(k - 1, j)] = x[j] * x[m - 1] - if j == m - 1 { 1.0 } else { 0.0 };
        }
        h[(k - 1, d)] = x[m - 1];
    }
    Ok(h)
}

/// `(-1)^{d(d+3)/2}`, the determinant of the uncorrected matrix.
pub fn hd_sign(d: usize) -> f64 {
    if (d * (d + 3) / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `H_d` with its last row multiplied by `(-1)^{d(d+3)/2}`, so `det = +1`.
pub fn hd_frame(d: usize, x: &[f64]) -> Result<DMatrix<f64>, FrameError> {
    let mut h = hd_matrix(d, x)?;
    let s = hd_sign(d);
    h.row_mut(d).scale_mut(s);
    Ok(h)
}

/// The current matrix `T(x, ζ_1, …, ζ_{d*+1})` for given `A(x)` and `b(x)`.
///
/// Column 1 is `(Aᵀ P ζ_1, b·P ζ_1)`, columns `2..d*` are `(P ζ_k, 0)`, and the
/// last column is `(P ζ_{d*+1}, 1)`.
pub fn t_matrix_raw(a: &DMatrix<f64>, b: &DVector<f64>, zetas: &[DVector<f64>]) -> Result<DMatrix<f64>, FrameError> {
    let d = a.nrows();
    let ds = d_star(d);
    if zetas.len() != ds + 1 {
        return Err(FrameError::BadZetas {
            expected: ds + 1,
            got: zetas.len(),
        });
    }
    let mut t = DMatrix::zeros(d + 1, ds + 1);
    let p = |z: &DVector<f64>| z.rows(0, d).into_owned();
    let z1 = p(&zetas[0]);
    let top = a.transpose() * &z1;
    t.view_mut((0, 0), (d, 1)).copy_from(&top);
    t[(d, 0)] = b.dot(&z1);
    for k in 1..=ds {
        t.view_mut((0, k), (d, 1)).copy_from(&p(&zetas[k]));
    }
    t[(d, ds)] = 1.0;
    Ok(t)
}

/// `T` for a 2D operator evaluated at `x` in `region`.
pub fn t_matrix(
    op: &OperatorSpec,
    region: RegionId,
    x: &Vec2,
    zetas: &[DVector<f64>],
) -> Result<DMatrix<f64>, FrameError> {
    let f = op.eval(region, x);
    let a = DMatrix::from_iterator(2, 2, f.a.iter().copied());
    let b = DVector::from_column_slice(f.b.as_slice());
    t_matrix_raw(&a, &b, zetas)
}

/// `E ξ`: embeds `ξ ∈ ℝ^d` into `ℝ^{d+1}` with a trailing zero.
pub fn embed(xi: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(xi.len() + 1);
    z.rows_mut(0, xi.len()).copy_from(xi);
    z
}

/// `e_{d+1}` in `ℝ^{d+1}`.
pub fn e_last(d: usize) -> DVector<f64> {
    let mut z = DVector::zeros(d + 1);
    z[d] = 1.0;
    z
}

/// Transition annulus around one interface circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Annulus {
    pub id: RegionId,
    pub center: [f64; 2],
    pub radius: f64,
    pub r_in: f64,
    pub r_out: f64,
}

impl Annulus {
    fn rel(&self, p: &Vec2) -> (f64, f64) {
        let v = p - Vec2::new(self.center[0], self.center[1]);
        (v.norm(), v.y.atan2(v.x))
    }

    /// Rotation angle at `p`: the polar angle on the circle, scaled down
    /// linearly in the radius to zero at both annulus edges.
    fn angle(&self, p: &Vec2) -> Option<f64> {
        let (r, th) = self.rel(p);
        if r <= self.r_in || r >= self.r_out {
            return None;
        }
        let s = if r <= self.radius {
            (r - self.r_in) / (self.radius - self.r_in)
        } else {
            (self.r_out - r) / (self.r_out - self.radius)
        };
        Some(s * th)
    }

    fn width(&self) -> f64 {
        self.radius - self.r_in
    }
}

/// Frame field `(f_1, f_2)` on a 2D scene: a rotation of the identity, equal to
/// (outward normal, tangent) on each interface and to the identity outside the
/// annuli.
///
/// The rotation angle is the shortest angle to the normal, which has a branch
/// cut on the ray `θ = π` inside each annulus (except on the circle itself,
/// where both limits agree). A continuous choice does not exist, since the
/// normal field has winding number one.
#[derive(Clone, Debug, Serialize)]
pub struct FrameField {
    pub annuli: Vec<Annulus>,
    /// Largest sampled difference quotient away from the branch cuts.
    pub lipschitz: f64,
    /// `π / w + 1 / r_in`, maximized over annuli.
    pub lipschitz_bound: f64,
    /// Largest jump of `f_1` across a branch cut.
    pub cut_jump: f64,
}

impl FrameField {
    pub fn identity() -> FrameField {
        FrameField {
            annuli: Vec::new(),
            lipschitz: 0.0,
            lipschitz_bound: 0.0,
            cut_jump: 0.0,
        }
    }

    pub fn d_star(&self) -> usize {
        2
    }

    /// Rotation angle at `p` (zero outside the annuli).
    pub fn angle(&self, p: &Vec2) -> f64 {
        self.annuli.iter().find_map(|a| a.angle(p)).unwrap_or(0.0)
    }

    /// `(f_1, f_2)` at `p`.
    pub fn eval(&self, p: &Vec2) -> [Vec2; 2] {
        let t = self.angle(p);
        let (s, c) = t.sin_cos();
        [Vec2::new(c, s), Vec2::new(-s, c)]
    }

    pub fn matrix(&self, p: &Vec2) -> Matrix2<f64> {
        let [f1, f2] = self.eval(p);
        Matrix2::from_columns(&[f1, f2])
    }

    /// True when the segment `p`–`q` crosses a branch cut.
    pub fn crosses_cut(&self, p: &Vec2, q: &Vec2) -> bool {
        self.annuli.iter().any(|a| {
            let (rp, tp) = a.rel(p);
            let (rq, tq) = a.rel(q);
            let inside = |r: f64| r > a.r_in && r < a.r_out;
            (inside(rp) || inside(rq)) && tp.signum() != tq.signum() && tp.abs() > PI / 2.0
        })
    }
}

/// Builds the frame field with annulus half-width `min(d0, R) / 4`.
pub fn build_frame_field(scene: &Scene) -> Result<FrameField, FrameError> {
    let mut annuli = Vec::new();
    for s in &scene.subdomains {
        let w = scene.d0.min(s.circle.radius) / 4.0;
        annuli.push(Annulus {
            id: s.id,
            center: s.circle.center,
            radius: s.circle.radius,
            r_in: s.circle.radius - w,
            r_out: s.circle.radius + w,
        });
    }
    for (k, a) in annuli.iter().enumerate() {
        let ca = Vec2::new(a.center[0], a.center[1]);
        for b in &annuli[k + 1..] {
            let cb = Vec2::new(b.center[0], b.center[1]);
            let dc = (ca - cb).norm();
            let disjoint = dc >= a.r_out + b.r_out;
            let nested = dc + a.r_out <= b.r_in || dc + b.r_out <= a.r_in;
            if !(disjoint || nested) {
                return Err(FrameError::AnnulusOverlap(a.id, b.id));
            }
        }
        for s in &scene.subdomains {
            if s.id != a.id {
                let d = (s.circle.c() - ca).norm();
                // distances from the annulus center to points of circle s
                let lo = (d - s.circle.radius).abs();
                let hi = d + s.circle.radius;
                if lo.max(a.r_in) <= hi.min(a.r_out) {
                    return Err(FrameError::AnnulusTouches(a.id));
                }
            }
        }
        if scene.outer.boundary_distance(&ca) <= a.r_out {
            return Err(FrameError::AnnulusTouches(a.id));
        }
    }
    let mut field = FrameField {
        lipschitz_bound: annuli.iter().map(|a| PI / a.width() + 1.0 / a.r_in).fold(0.0, f64::max),
        cut_jump: if annuli.is_empty() { 0.0 } else { 2.0 },
        annuli,
        lipschitz: 0.0,
    };
    field.lipschitz = sampled_lipschitz(&field, 4000, 7);
    Ok(field)
}

/// Max difference quotient of `(f_1, f_2)` over random close pairs in the
/// annuli that do not straddle a branch cut.
pub fn sampled_lipschitz(field: &FrameField, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for a in &field.annuli {
        let c = Vec2::new(a.center[0], a.center[1]);
        let delta = a.width() * 1e-2;
        for _ in 0..pairs {
            let r = rng.gen_range(a.r_in..a.r_out);
            let t = rng.gen_range(-PI..PI);
            let p = c + r * Vec2::new(t.cos(), t.sin());
            let dir = rng.gen_range(0.0..2.0 * PI);
            let q = p + delta * Vec2::new(dir.cos(), dir.sin());
            if field.crosses_cut(&p, &q) {
                continue;
            }
            let d = (field.matrix(&p) - field.matrix(&q))
                .column_iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max);
            best = best.max(d / delta);
        }
    }
    best
}
