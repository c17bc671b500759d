//! Generalized and flux Jacobians, admissibility margins and Whitney reduction.
//!
//! For a family `u_1..u_P` the generalized Jacobian at `x` is the `P × (d+1)`
//! matrix with rows `(∂_1 u_ℓ, ∂_2 u_ℓ, u_ℓ)`. Its margin is the sum of the
//! absolute values of all `(d+1)`-minors.

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::OperatorSpec;
use crate::frames::{e_last, embed, t_matrix, FrameField};
use crate::geometry::{RegionId, Sample, SampleKind, SampleSet, Vec2};
use crate::linalg::{det3, rank, subsets};
use crate::solver::{FieldError, Side, SolutionField};

pub const D: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JacobianError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("empty sample set")]
    NoSamples,
    #[error("empty family")]
    NoFields,
    #[error("rank {rank} < {need} at ({x}, {y})")]
    RankDeficient { x: f64, y: f64, rank: usize, need: usize },
    #[error("family of {p} fields cannot be reduced below {min}")]
    TooSmall { p: usize, min: usize },
    #[error("reduction failed after {attempts} draws (worst rank deficit at {failures} samples)")]
    RetriesExhausted { attempts: usize, failures: usize },
}

/// `P* = ⌊(d + d* + 1) / α⌋`.
pub fn p_star(d: usize, d_star: usize, alpha: f64) -> usize {
    ((d + d_star + 1) as f64 / alpha).floor() as usize
}

/// `P × 3` generalized Jacobian at `x`, and the region it was evaluated in.
pub fn jac_matrix(us: &[SolutionField], x: &Vec2, side: Side) -> Result<(RegionId, DMatrix<f64>), JacobianError> {
    let first = us.first().ok_or(JacobianError::NoFields)?;
    let t = first.element(x, side)?;
    let mut j = DMatrix::zeros(us.len(), D + 1);
    let mut region = 0;
    for (l, u) in us.iter().enumerate() {
        let (r, v, du) = u.value_grad_in(t, x);
        region = r;
        j[(l, 0)] = du.x;
        j[(l, 1)] = du.y;
        j[(l, 2)] = v;
    }
    Ok((region, j))
}

/// `Σ |det|` over all 3-row minors.
pub fn det_margin(j: &DMatrix<f64>) -> f64 {
    let p = j.nrows();
    if p < D + 1 {
        return 0.0;
    }
    let rows: Vec<[f64; 3]> = (0..p).map(|i| [j[(i, 0)], j[(i, 1)], j[(i, 2)]]).collect();
    let mut s = 0.0;
    for a in 0..p {
        for b in a + 1..p {
            for c in b + 1..p {
                s += det3(&rows[a], &rows[b], &rows[c]).abs();
            }
        }
    }
    s
}

/// Largest `|det|` over the given row triples; a lower bound of `det_margin`.
pub fn triple_bound(j: &DMatrix<f64>, triples: &[[usize; 3]]) -> f64 {
    let row = |i: usize| [j[(i, 0)], j[(i, 1)], j[(i, 2)]];
    triples
        .iter()
        .map(|t| det3(&row(t[0]), &row(t[1]), &row(t[2])).abs())
        .fold(0.0, f64::max)
}

/// `|det J(u) - det J(v)| ≤ (d+1) (Σ_i |J_i(u)| + |J_i(v)|)^d max_i |J_i(u) - J_i(v)|`
/// for square Jacobians, with `|·|` the Euclidean row norm.
pub fn multilinear_bound(ju: &DMatrix<f64>, jv: &DMatrix<f64>) -> f64 {
    let n = ju.nrows();
    let mut sum = 0.0;
    let mut diff = 0.0f64;
    for i in 0..n {
        sum += ju.row(i).norm() + jv.row(i).norm();
        diff = diff.max((ju.row(i) - jv.row(i)).norm());
    }
    (n as f64) * sum.powi(n as i32 - 1) * diff
}

pub fn det_square(j: &DMatrix<f64>) -> f64 {
    Matrix3::from_fn(|r, c| j[(r, c)]).determinant()
}

/// Flux-Jacobian row `((A Du + b u)·f_1, Du·f_2, u)`.
pub fn flux_jac(
    u: &SolutionField,
    frames: &FrameField,
    op: &OperatorSpec,
    x: &Vec2,
    side: Side,
) -> Result<[f64; 3], JacobianError> {
    let (region, v, du) = u.value_grad(x, side)?;
    Ok(flux_row(frames, op, region, x, v, &du))
}

pub fn flux_row(frames: &FrameField, op: &OperatorSpec, region: RegionId, x: &Vec2, v: f64, du: &Vec2) -> [f64; 3] {
    let f = op.eval(region, x);
    let [f1, f2] = frames.eval(x);
    [(f.a * du + f.b * v).dot(&f1), du.dot(&f2), v]
}

/// `(Du, u) · T(x, E f_1, E f_2, e_3)`; agrees with [`flux_jac`].
pub fn flux_jac_via_t(
    u: &SolutionField,
    frames: &FrameField,
    op: &OperatorSpec,
    x: &Vec2,
    side: Side,
) -> Result<[f64; 3], JacobianError> {
    let (region, v, du) = u.value_grad(x, side)?;
    let [f1, f2] = frames.eval(x);
    let z = |w: Vec2| embed(&DVector::from_column_slice(w.as_slice()));
    let t = t_matrix(op, region, x, &[z(f1), z(f2), e_last(D)]).expect("three ζ for d = 2");
    let row = DMatrix::from_row_slice(1, 3, &[du.x, du.y, v]);
    let r = row * t;
    Ok([r[(0, 0)], r[(0, 1)], r[(0, 2)]])
}

/// Generalized Jacobians of one family at every sample.
#[derive(Clone, Debug)]
pub struct JacobianTable {
    pub samples: Vec<Sample>,
    pub jacobians: Vec<DMatrix<f64>>,
}

impl JacobianTable {
    pub fn new(us: &[SolutionField], samples: &SampleSet) -> Result<JacobianTable, JacobianError> {
        if samples.is_empty() {
            return Err(JacobianError::NoSamples);
        }
        if us.is_empty() {
            return Err(JacobianError::NoFields);
        }
        let jacobians = samples
            .samples
            .par_iter()
            .map(|s| jac_matrix(us, &s.p, Side::Region(s.region)).map(|(_, j)| j))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(JacobianTable {
            samples: samples.samples.clone(),
            jacobians,
        })
    }

    pub fn n_fields(&self) -> usize {
        self.jacobians.first().map_or(0, |j| j.nrows())
    }

    /// Rows `i < P-1` replaced by `J_i - a_i J_{P-1}`.
    pub fn reduced(&self, a: &[f64]) -> JacobianTable {
        let jacobians = self.jacobians.iter().map(|j| reduce_rows(j, a)).collect();
        JacobianTable {
            samples: self.samples.clone(),
            jacobians,
        }
    }

    pub fn report(&self) -> JacobianReport {
        let rows: Vec<SampleReport> = self
            .samples
            .par_iter()
            .zip(self.jacobians.par_iter())
            .map(|(s, j)| SampleReport::new(s, j))
            .collect();
        JacobianReport::from_rows(self.n_fields(), rows)
    }
}

pub fn reduce_rows(j: &DMatrix<f64>, a: &[f64]) -> DMatrix<f64> {
    let p = j.nrows();
    let last = j.row(p - 1).into_owned();
    let mut out = j.rows(0, p - 1).into_owned();
    for i in 0..p - 1 {
        let r = out.row(i) - a[i] * &last;
        out.set_row(i, &r);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleReport {
    pub x: f64,
    pub y: f64,
    pub region: RegionId,
    /// 0 for grid samples, ±1 for the two sides of a probe pair.
    pub side: i8,
    pub rank: usize,
    pub margin: f64,
}

impl SampleReport {
    fn new(s: &Sample, j: &DMatrix<f64>) -> SampleReport {
        let side = match s.kind {
            SampleKind::Grid => 0,
            SampleKind::Probe { side, .. } => side,
        };
        SampleReport {
            x: s.p.x,
            y: s.p.y,
            region: s.region,
            side,
            rank: rank(j),
            margin: if j.nrows() <= MARGIN_MAX_P {
                det_margin(j)
            } else {
                f64::NAN
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct JacobianReport {
    pub p: usize,
    pub samples: Vec<SampleReport>,
    /// Infimum of the margin over samples (`NaN` above [`MARGIN_MAX_P`]
    /// members, where only ranks are checked).
    pub margin: f64,
    pub min_rank: usize,
    pub max_rank: usize,
    /// Samples with rank below `d + 1`.
    pub deficient: usize,
    pub admissible: bool,
}

impl JacobianReport {
    fn from_rows(p: usize, samples: Vec<SampleReport>) -> JacobianReport {
        let margin = if p <= MARGIN_MAX_P {
            samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min)
        } else {
            f64::NAN
        };
        let min_rank = samples.iter().map(|s| s.rank).min().unwrap_or(0);
        let max_rank = samples.iter().map(|s| s.rank).max().unwrap_or(0);
        let deficient = samples.iter().filter(|s| s.rank < D + 1).count();
        JacobianReport {
            p,
            margin,
            min_rank,
            max_rank,
            deficient,
            admissible: p > D && deficient == 0 && (margin.is_nan() || margin > 0.0),
            samples,
        }
    }
}

/// Margins of the family at every sample (grid points and both sides of each
/// probe pair).
pub fn admissibility_margin(us: &[SolutionField], samples: &SampleSet) -> Result<JacobianReport, JacobianError> {
    Ok(JacobianTable::new(us, samples)?.report())
}

/// Flux-Jacobian margin at the interface probes: `|det|` of the 3 × 3 flux
/// Jacobian for the first three fields, minimized over probes.
pub fn flux_probe_margin(
    us: &[SolutionField],
    samples: &SampleSet,
    frames: &FrameField,
    op: &OperatorSpec,
) -> Result<f64, JacobianError> {
    let mut m = f64::INFINITY;
    for s in samples.probes() {
        let mut rows = DMatrix::zeros(us.len(), 3);
        for (l, u) in us.iter().enumerate() {
            let r = flux_jac(u, frames, op, &s.p, Side::Region(s.region))?;
            rows.set_row(l, &nalgebra::RowVector3::from_row_slice(&r));
        }
        m = m.min(det_margin(&rows));
    }
    Ok(m)
}

#[derive(Clone, Debug, Serialize)]
pub struct Reduction {
    pub a: Vec<f64>,
    pub margin: f64,
    pub attempts: usize,
    /// Draws rejected before `a` was accepted.
    pub failures: usize,
    pub min_rank: usize,
}

/// Families larger than this report a `NaN` margin from [`check_reduction`].
pub const MARGIN_MAX_P: usize = 16;

/// Outcome of one reduction draw on a table.
pub fn check_reduction(table: &JacobianTable, a: &[f64]) -> (bool, f64, usize, usize) {
    let p = table.n_fields() - 1;
    // minors are only enumerated for small families
    let with_margin = p <= MARGIN_MAX_P;
    let per: Vec<(usize, f64)> = table
        .jacobians
        .par_iter()
        .map(|j| {
            let r = reduce_rows(j, a);
            let m = if with_margin { det_margin(&r) } else { f64::NAN };
            (rank(&r), m)
        })
        .collect();
    let min_rank = per.iter().map(|x| x.0).min().unwrap_or(0);
    let max_rank = per.iter().map(|x| x.0).max().unwrap_or(0);
    let margin = if with_margin {
        per.iter().map(|x| x.1).fold(f64::INFINITY, f64::min)
    } else {
        f64::NAN
    };
    (p > D && min_rank == D + 1, margin, min_rank, max_rank)
}

/// Draws `a ∈ [-1, 1]^{P-1}` until the reduced family has rank `d + 1` at every
/// sample, at most `retry_cap` times.
pub fn whitney_reduce_table(
    table: &JacobianTable,
    rng: &mut impl Rng,
    retry_cap: usize,
) -> Result<Reduction, JacobianError> {
    let p = table.n_fields();
    if p < D + 2 {
        return Err(JacobianError::TooSmall { p, min: D + 2 });
    }
    let mut worst = 0;
    for attempt in 1..=retry_cap {
        let a: Vec<f64> = (0..p - 1).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let (ok, margin, min_rank, _) = check_reduction(table, &a);
        if ok {
            return Ok(Reduction {
                a,
                margin,
                attempts: attempt,
                failures: attempt - 1,
                min_rank,
            });
        }
        worst = worst.max(
            table
                .jacobians
                .iter()
                .filter(|j| rank(&reduce_rows(j, &a)) < D + 1)
                .count(),
        );
    }
    Err(JacobianError::RetriesExhausted {
        attempts: retry_cap,
        failures: worst,
    })
}

/// `v_i = u_i - a_i u_P`.
pub fn apply_reduction(us: &[SolutionField], a: &[f64]) -> Vec<SolutionField> {
    let last = us.last().expect("nonempty family");
    us[..us.len() - 1]
        .iter()
        .zip(a)
        .map(|(u, &ai)| SolutionField::combine(&[(1.0, u), (-ai, last)]))
        .collect()
}

/// Seeded Whitney reduction of a family by one member.
pub fn whitney_reduce(
    us: &[SolutionField],
    samples: &SampleSet,
    seed: u64,
    retry_cap: usize,
) -> Result<(Vec<SolutionField>, Reduction), JacobianError> {
    let table = JacobianTable::new(us, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let red = whitney_reduce_table(&table, &mut rng, retry_cap)?;
    Ok((apply_reduction(us, &red.a), red))
}

/// Indices of the `d` fields with the largest `|det(Du_i, Du_j)|` at `x`.
pub fn gradient_subfamily(us: &[SolutionField], x: &Vec2, side: Side) -> Result<(Vec<usize>, f64), JacobianError> {
    let (_, j) = jac_matrix(us, x, side)?;
    gradient_subfamily_of(&j).ok_or_else(|| JacobianError::RankDeficient {
        x: x.x,
        y: x.y,
        rank: rank(&j),
        need: D + 1,
    })
}

pub fn gradient_subfamily_of(j: &DMatrix<f64>) -> Option<(Vec<usize>, f64)> {
    if rank(j) < D + 1 {
        return None;
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in subsets(j.nrows(), D) {
        let d = (j[(s[0], 0)] * j[(s[1], 1)] - j[(s[0], 1)] * j[(s[1], 0)]).abs();
        if best.as_ref().map_or(true, |(_, b)| d > *b) {
            best = Some((s, d));
        }
    }
    best.filter(|(_, d)| *d > 0.0)
}
