//! Annulus eigenvalues, Poincaré checks and thin-annulus coercivity.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::fem::{assemble, assemble_laplace, dense_interior};
use super::mesh::Mesh;
use crate::coefficients::OperatorSpec;
use crate::geometry::{RegionId, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadialError {
    #[error("need 0 < t < s, got t = {t}, s = {s}")]
    BadAnnulus { t: f64, s: f64 },
    #[error("eigenvalue did not converge to {tol:e} (last change {change:e})")]
    NoConvergence { tol: f64, change: f64 },
    #[error("matrix not positive definite")]
    NotPositive,
}

/// Smallest tridiagonal generalized eigenvalue on `n` interior nodes.
fn fd_eigenvalue(t: f64, s: f64, n: usize) -> f64 {
    let dr = (s - t) / (n + 1) as f64;
    let r = |i: usize| t + dr * i as f64;
    // T f = ρ W f, T symmetric tridiagonal, W = diag(r_i)
    let diag: Vec<f64> = (1..=n)
        .map(|i| (r(i) - 0.5 * dr + r(i) + 0.5 * dr) / (dr * dr))
        .collect();
    let off: Vec<f64> = (1..n).map(|i| -(r(i) + 0.5 * dr) / (dr * dr)).collect();
    let w: Vec<f64> = (1..=n).map(r).collect();
    // similarity with W^{-1/2}: symmetric tridiagonal standard problem, Sturm bisection
    let d: Vec<f64> = (0..n).map(|i| diag[i] / w[i]).collect();
    let e: Vec<f64> = (0..n - 1).map(|i| off[i] / (w[i] * w[i + 1]).sqrt()).collect();
    let count_below = |x: f64| {
        let mut c = 0;
        let mut q = d[0] - x;
        if q < 0.0 {
            c += 1;
        }
        for i in 1..n {
            let qq = if q == 0.0 { 1e-300 } else { q };
            q = d[i] - x - e[i - 1] * e[i - 1] / qq;
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    let mut lo = 0.0;
    let mut hi = d
        .iter()
        .zip(0..)
        .map(|(di, i)| {
            let l = if i > 0 { e[i - 1].abs() } else { 0.0 };
            let r = if i + 1 < n { e[i].abs() } else { 0.0 };
            di + l + r
        })
        .fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// First Dirichlet eigenvalue `ρ₁(t, s)` of `-(r f')' = ρ r f` on `[t, s]`,
/// by second-order finite differences with Richardson extrapolation, refined
/// until successive extrapolants agree to `tol` (relative).
pub fn annulus_eigenvalue(t: f64, s: f64, tol: f64) -> Result<f64, RadialError> {
    if !(t > 0.0 && s > t) {
        return Err(RadialError::BadAnnulus { t, s });
    }
    let mut n = 64;
    let mut prev_fd = fd_eigenvalue(t, s, n);
    let mut prev_ext = f64::NAN;
    let mut change = f64::INFINITY;
    while n < 1 << 17 {
        n = 2 * n + 1;
        let fd = fd_eigenvalue(t, s, n);
        let ext = fd + (fd - prev_fd) / 3.0;
        if prev_ext.is_finite() {
            change = ((ext - prev_ext) / ext).abs();
            if change <= tol {
                return Ok(ext);
            }
        }
        prev_fd = fd;
        prev_ext = ext;
    }
    Err(RadialError::NoConvergence { tol, change })
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareSample {
    pub l2_sq: f64,
    pub grad_sq: f64,
    /// `‖∇u‖² / ‖u‖²`, which must be at least `ρ₁`.
    pub ratio: f64,
}

/// Random smooth functions vanishing on both circles of the annulus
/// `t < |x| < s`; their Rayleigh quotients bound `ρ₁(t, s)` from above.
pub fn poincare_samples(t: f64, s: f64, count: usize, seed: u64) -> Vec<PoincareSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nr, nt) = (96, 96);
    let gl = gauss_legendre(nr);
    (0..count)
        .map(|_| {
            let coef: Vec<(f64, f64)> = (0..9)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            let (mut l2, mut gr) = (0.0, 0.0);
            for &(xi, wi) in &gl {
                let r = t + (s - t) * 0.5 * (xi + 1.0);
                let wr = wi * 0.5 * (s - t) * r;
                for j in 0..nt {
                    let th = 2.0 * PI * j as f64 / nt as f64;
                    let wt = 2.0 * PI / nt as f64;
                    let (mut u, mut ur, mut ut) = (0.0, 0.0, 0.0);
                    for (idx, &(a, ph)) in coef.iter().enumerate() {
                        let k = (idx / 3 + 1) as f64;
                        let m = (idx % 3) as f64;
                        let z = k * PI * (r - t) / (s - t);
                        let (sz, cz) = z.sin_cos();
                        let (st, ct) = (m * th + ph).sin_cos();
                        u += a * sz * ct;
                        ur += a * k * PI / (s - t) * cz * ct;
                        ut += -a * m * sz * st;
                    }
                    l2 += wr * wt * u * u;
                    gr += wr * wt * (ur * ur + ut * ut / (r * r));
                }
            }
            PoincareSample {
                l2_sq: l2,
                grad_sq: gr,
                ratio: gr / l2,
            }
        })
        .collect()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Smallest `μ` with `sym(K) v = μ G v`, `G` the Dirichlet Laplacian, over the
/// annulus `r_in < |x - c| < r_out` with the coefficients of `region`. This is
/// the best constant in `a(u, u) ≥ μ ‖∇u‖²` on that annulus.
pub fn annulus_coercivity(
    op: &OperatorSpec,
    region: RegionId,
    center: Vec2,
    r_in: f64,
    r_out: f64,
) -> Result<f64, RadialError> {
    let nr = 4;
    let dr = (r_out - r_in) / nr as f64;
    let ntheta = ((2.0 * PI * r_out / (2.0 * dr)).ceil() as usize).clamp(32, 256);
    let mesh = Mesh::annulus(center, r_in, r_out, nr, ntheta, region);
    let k = dense_interior(&assemble(op, &mesh), &mesh);
    let g = dense_interior(&assemble_laplace(&mesh), &mesh);
    generalized_min(&(0.5 * (&k + k.transpose())), &g)
}

/// Smallest eigenvalue of the symmetric pencil `(a, g)`, `g` positive definite.
pub fn generalized_min(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<f64, RadialError> {
    let l = g.clone().cholesky().ok_or(RadialError::NotPositive)?.l();
    let li = l.clone().try_inverse().ok_or(RadialError::NotPositive)?;
    let c = &li * a * li.transpose();
    let c = 0.5 * (&c + c.transpose());
    Ok(c.symmetric_eigenvalues().min())
}

#[derive(Clone, Debug, Serialize)]
pub struct AnnulusCheck {
    pub width: f64,
    pub mu: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Checks `μ ≥ λ/3` on the annulus `R < |x - c| < R + w` for each width.
pub fn thin_annulus_checks(
    op: &OperatorSpec,
    region: RegionId,
    center: Vec2,
    radius: f64,
    widths: &[f64],
    lambda: f64,
) -> Result<Vec<AnnulusCheck>, RadialError> {
    widths
        .iter()
        .map(|&w| {
            let mu = annulus_coercivity(op, region, center, radius, radius + w)?;
            Ok(AnnulusCheck {
                width: w,
                mu,
                bound: lambda / 3.0,
                ok: mu >= lambda / 3.0,
            })
        })
        .collect()
}

/// Largest width (to relative precision 1e-3) for which the `λ/3` bound holds,
/// searched in `(0, w_max]`.
pub fn eta0(
    op: &OperatorSpec,
    region: RegionId,
    center: Vec2,
    radius: f64,
    w_max: f64,
    lambda: f64,
) -> Result<f64, RadialError> {
    let holds = |w: f64| -> Result<bool, RadialError> {
        Ok(annulus_coercivity(op, region, center, radius, radius + w)? >= lambda / 3.0)
    };
    if holds(w_max)? {
        return Ok(w_max);
    }
    let (mut lo, mut hi) = (0.0, w_max);
    while hi - lo > 1e-3 * w_max {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSet, RegionCoeffs};
    use std::sync::Arc;

    #[test]
    fn thin_annulus_limit() {
        let rho = annulus_eigenvalue(1.0, 1.01, 1e-8).unwrap();
        let flat = PI * PI / (0.01 * 0.01);
        assert!((rho - flat).abs() / flat < 0.01);
    }

    #[test]
    fn scaling_by_four() {
        let a = annulus_eigenvalue(0.5, 0.75, 1e-10).unwrap();
        let b = annulus_eigenvalue(1.0, 1.5, 1e-10).unwrap();
        assert!((a / b - 4.0).abs() < 1e-6, "{}", a / b);
    }

    #[test]
    fn rayleigh_quotients_exceed_eigenvalue() {
        let rho = annulus_eigenvalue(0.5, 1.0, 1e-9).unwrap();
        for s in poincare_samples(0.5, 1.0, 8, 3) {
            assert!(s.ratio >= rho * (1.0 - 1e-9), "{} < {rho}", s.ratio);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let q = gauss_legendre(6);
        let s: f64 = q.iter().map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn isotropic_coercivity_is_gamma() {
        let coeffs = CoefficientSet {
            lambda: 0.5,
            alpha: 1.0,
            regions: vec![RegionCoeffs::isotropic(1, 2.0)],
        };
        let op = OperatorSpec::original(Arc::new(coeffs));
        let mu = annulus_coercivity(&op, 1, Vec2::zeros(), 0.5, 0.55).unwrap();
        assert!((mu - 2.0).abs() < 1e-8, "{mu}");
    }
}
