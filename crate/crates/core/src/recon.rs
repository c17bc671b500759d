//! Conductivity reconstruction from internal data: interface jumps of `ln γ`
//! from flux continuity, `D ln γ` from `D ln γ · Du = -Δu`, and a stitched
//! potential normalized at an anchor.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::{CoefficientSet, RegionCoeffs, ScalarFn};
use crate::geometry::{Interface, RegionId, Scene, Vec2};
use crate::linalg::rank;
use crate::solver::sparse::{pcg, Csr};
use crate::solver::{FieldError, Mesh, Side, SolutionField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("phantom: {0}")]
    Phantom(String),
    #[error("no usable samples on interface Γ({i},{j}): every normal derivative is below threshold")]
    NoUsableSamples { i: RegionId, j: RegionId },
    #[error("empty family")]
    NoFields,
    #[error("region {0} has no reconstruction points")]
    EmptyRegion(RegionId),
    #[error("missing jump for interface Γ({0},{1})")]
    MissingJump(RegionId, RegionId),
    #[error("potential solve failed in region {0}")]
    Potential(RegionId),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Scalar conductivity per region with a normalization anchor.
#[derive(Clone, Debug, Serialize)]
pub struct Phantom {
    #[serde(skip)]
    pub scene: Scene,
    /// `γ` of region `k + 1`.
    pub gamma: Vec<ScalarFn>,
    pub lambda: f64,
    pub anchor: Vec2,
    pub anchor_value: f64,
}

impl Phantom {
    pub fn new(
        scene: Scene,
        gamma: Vec<ScalarFn>,
        lambda: f64,
        anchor: Vec2,
        anchor_value: f64,
    ) -> Result<Phantom, ReconError> {
        if gamma.len() != scene.n_regions() {
            return Err(ReconError::Phantom(format!(
                "{} conductivities for {} regions",
                gamma.len(),
                scene.n_regions()
            )));
        }
        if scene.region_of(&anchor).is_none() {
            return Err(ReconError::Phantom("anchor lies outside the domain".into()));
        }
        if scene.interface_distance(&anchor) < 1e-9 {
            return Err(ReconError::Phantom("anchor lies on an interface".into()));
        }
        if !(anchor_value > 0.0) {
            return Err(ReconError::Phantom(format!(
                "anchor value {anchor_value} is not positive"
            )));
        }
        Ok(Phantom {
            scene,
            gamma,
            lambda,
            anchor,
            anchor_value,
        })
    }

    /// Piecewise-constant phantom.
    pub fn piecewise(scene: Scene, values: &[f64], lambda: f64, anchor: Vec2) -> Result<Phantom, ReconError> {
        let g: Vec<ScalarFn> = values.iter().map(|&v| ScalarFn::Const(v)).collect();
        let value = scene.region_of(&anchor).map(|r| g[r - 1].value(&anchor)).unwrap_or(1.0);
        Phantom::new(scene, g, lambda, anchor, value)
    }

    pub fn coefficients(&self) -> CoefficientSet {
        CoefficientSet {
            lambda: self.lambda,
            alpha: 1.0,
            regions: self
                .gamma
                .iter()
                .enumerate()
                .map(|(k, g)| RegionCoeffs::isotropic(k + 1, g.clone()))
                .collect(),
        }
    }

    pub fn gamma_in(&self, region: RegionId, p: &Vec2) -> f64 {
        self.gamma[region - 1].value(p)
    }

    pub fn gamma_at(&self, p: &Vec2) -> Option<f64> {
        self.scene.region_of(p).map(|r| self.gamma_in(r, p))
    }

    /// `c γ`, keeping the anchor value.
    pub fn scaled(&self, c: f64) -> Phantom {
        let gamma = self.gamma.iter().map(|g| g.scaled(c)).collect();
        Phantom {
            gamma,
            lambda: self.lambda * c.min(1.0),
            ..self.clone()
        }
    }
}

/// Recovered `[ln γ]_{ij} = ln γ_j - ln γ_i` on one interface.
#[derive(Clone, Debug, Serialize)]
pub struct JumpEstimate {
    pub i: RegionId,
    pub j: RegionId,
    /// Median over the usable samples.
    pub value: f64,
    /// Median absolute deviation of the per-sample values.
    pub dispersion: f64,
    pub used: usize,
    pub excluded: usize,
    pub probe_offset: f64,
    /// Per-sample estimates (`NaN` where excluded).
    pub samples: Vec<f64>,
    /// Field index selected at each sample.
    pub selected: Vec<Option<usize>>,
}

/// A normal derivative below this fraction of the largest gradient at the
/// sample excludes the sample.
pub const NORMAL_THRESHOLD: f64 = 1e-3;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Jump of `ln γ` across `f` from `k` probe pairs at distance `offset`.
///
/// At each point the field with the largest `|Du|` on the inner side of the
/// circle is selected (the same choice for both orientations), and
/// `-(ln|Du·n|(x + t n) - ln|Du·n|(x - t n))` is recorded.
pub fn recover_jumps(us: &[SolutionField], f: &Interface, k: usize, offset: f64) -> Result<JumpEstimate, ReconError> {
    if us.is_empty() {
        return Err(ReconError::NoFields);
    }
    let per: Vec<Result<(f64, Option<usize>), ReconError>> = f
        .sample_points(k)
        .par_iter()
        .map(|x| {
            let n = f.normal(x);
            let (xp, xm) = (x + offset * n, x - offset * n);
            let mut grads = Vec::with_capacity(us.len());
            for u in us {
                let (_, _, gp) = u.value_grad(&xp, Side::Region(f.j))?;
                let (_, _, gm) = u.value_grad(&xm, Side::Region(f.i))?;
                grads.push((gp, gm));
            }
            // selection side: inside the circle
            let inner = |g: &(Vec2, Vec2)| if f.j == f.inner { g.0 } else { g.1 };
            let (p, gmax) = grads
                .iter()
                .enumerate()
                .map(|(l, g)| (l, inner(g).norm()))
                .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            let (gp, gm) = grads[p];
            let (np, nm) = (gp.dot(&n).abs(), gm.dot(&n).abs());
            let floor = NORMAL_THRESHOLD * gmax.max(gp.norm()).max(gm.norm());
            if !(gmax > 0.0) || np <= floor || nm <= floor {
                return Ok((f64::NAN, None));
            }
            Ok((-(np.ln() - nm.ln()), Some(p)))
        })
        .collect();
    let mut samples = Vec::with_capacity(per.len());
    let mut selected = Vec::with_capacity(per.len());
    for r in per {
        let (v, s) = r?;
        samples.push(v);
        selected.push(s);
    }
    let mut used: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if used.is_empty() {
        return Err(ReconError::NoUsableSamples { i: f.i, j: f.j });
    }
    let value = median(&mut used);
    let mut dev: Vec<f64> = used.iter().map(|v| (v - value).abs()).collect();
    let dispersion = median(&mut dev);
    Ok(JumpEstimate {
        i: f.i,
        j: f.j,
        value,
        dispersion,
        used: used.len(),
        excluded: samples.len() - used.len(),
        probe_offset: offset,
        samples,
        selected,
    })
}

/// Per-point least-squares solution of `Du_ℓ · g = -Δu_ℓ`.
#[derive(Clone, Debug, Serialize)]
pub struct LogGradient {
    pub region: RegionId,
    pub points: Vec<Vec2>,
    pub g: Vec<Vec2>,
    /// Root-mean-square residual of the stacked system.
    pub residual: Vec<f64>,
    pub rank: Vec<usize>,
    /// Rank-deficient stacks; `g` is zero there.
    pub flagged: Vec<bool>,
    /// Radius of the quadratic fits behind `Δu`.
    pub lap_radius: f64,
}

impl LogGradient {
    pub fn n_flagged(&self) -> usize {
        self.flagged.iter().filter(|f| **f).count()
    }
}

/// `D ln γ` at `points` of `region`.
pub fn recover_log_gradient(
    us: &[SolutionField],
    region: RegionId,
    points: &[Vec2],
    lap_radius: f64,
) -> Result<LogGradient, ReconError> {
    if us.is_empty() {
        return Err(ReconError::NoFields);
    }
    let rows: Vec<Result<(Vec2, f64, usize), ReconError>> = points
        .par_iter()
        .map(|x| {
            let p = us.len();
            let mut a = DMatrix::zeros(p, 2);
            let mut b = DVector::zeros(p);
            for (l, u) in us.iter().enumerate() {
                let (_, _, du) = u.value_grad(x, Side::Region(region))?;
                let lap = u.laplacian(x, region, lap_radius)?;
                a[(l, 0)] = du.x;
                a[(l, 1)] = du.y;
                b[l] = -lap;
            }
            let r = rank(&a);
            if r < 2 {
                return Ok((Vec2::zeros(), f64::NAN, r));
            }
            let g = a.clone().svd(true, true).solve(&b, 1e-12).expect("thin SVD solve");
            let res = (&a * &g - &b).norm() / (p as f64).sqrt();
            Ok((Vec2::new(g[0], g[1]), res, r))
        })
        .collect();
    let mut out = LogGradient {
        region,
        points: points.to_vec(),
        g: Vec::with_capacity(points.len()),
        residual: Vec::with_capacity(points.len()),
        rank: Vec::with_capacity(points.len()),
        flagged: Vec::with_capacity(points.len()),
        lap_radius,
    };
    for r in rows {
        let (g, res, k) = r?;
        out.g.push(g);
        out.residual.push(res);
        out.rank.push(k);
        out.flagged.push(k < 2);
    }
    Ok(out)
}

/// Regular raster of `Ω` excluding interface tubes, split by region.
#[derive(Clone, Debug, Serialize)]
pub struct ReconGrid {
    pub spacing: f64,
    pub tube: f64,
    pub origin: Vec2,
    pub nx: usize,
    pub ny: usize,
    /// Region of each raster node, `None` outside `Ω` or inside a tube.
    pub region: Vec<Option<RegionId>>,
}

impl ReconGrid {
    pub fn new(scene: &Scene, spacing: f64, tube: f64) -> ReconGrid {
        let (lo, hi) = scene.outer.bounding_box();
        let nx = ((hi[0] - lo[0]) / spacing).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / spacing).floor() as usize + 1;
        let origin = Vec2::new(
            0.5 * (lo[0] + hi[0]) - 0.5 * (nx - 1) as f64 * spacing,
            0.5 * (lo[1] + hi[1]) - 0.5 * (ny - 1) as f64 * spacing,
        );
        let mut region = vec![None; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let p = origin + Vec2::new(ix as f64 * spacing, iy as f64 * spacing);
                // keep clear of the outer boundary by a fraction of a cell
                if scene.outer.boundary_distance(&p) < 0.25 * spacing || scene.interface_distance(&p) < tube {
                    continue;
                }
                region[iy * nx + ix] = scene.region_of(&p);
            }
        }
        ReconGrid {
            spacing,
            tube,
            origin,
            nx,
            ny,
            region,
        }
    }

    pub fn point(&self, idx: usize) -> Vec2 {
        self.origin
            + Vec2::new(
                (idx % self.nx) as f64 * self.spacing,
                (idx / self.nx) as f64 * self.spacing,
            )
    }

    /// Node indices of `region`.
    pub fn nodes(&self, region: RegionId) -> Vec<usize> {
        (0..self.region.len())
            .filter(|&i| self.region[i] == Some(region))
            .collect()
    }
}

/// Per-region potential `φ` with `Dφ ≈ g` on the raster.
#[derive(Clone, Debug, Serialize)]
pub struct Potential {
    pub region: RegionId,
    pub nodes: Vec<usize>,
    pub phi: Vec<f64>,
    pub g: Vec<Vec2>,
}

/// Least-squares potential: `φ_b - φ_a = (g_a + g_b)/2 · (b - a)` over raster
/// edges inside the region, `φ = 0` at the first node.
pub fn fit_potential(grid: &ReconGrid, lg: &LogGradient, nodes: &[usize]) -> Result<Potential, ReconError> {
    let n = nodes.len();
    if n == 0 {
        return Err(ReconError::EmptyRegion(lg.region));
    }
    let mut local = BTreeMap::new();
    for (k, &v) in nodes.iter().enumerate() {
        local.insert(v, k);
    }
    let h = grid.spacing;
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; n];
    let mut link = |a: usize, b: usize, d: f64| {
        trip.push((a, a, 1.0));
        trip.push((b, b, 1.0));
        trip.push((a, b, -1.0));
        trip.push((b, a, -1.0));
        rhs[b] += d;
        rhs[a] -= d;
    };
    for (ka, &va) in nodes.iter().enumerate() {
        let (ix, iy) = (va % grid.nx, va / grid.nx);
        let mut try_pair = |vb: usize, dir: usize| {
            if let Some(&kb) = local.get(&vb) {
                if !lg.flagged[ka] && !lg.flagged[kb] {
                    let d = 0.5 * (lg.g[ka][dir] + lg.g[kb][dir]) * h;
                    link(ka, kb, d);
                }
            }
        };
        if ix + 1 < grid.nx {
            try_pair(va + 1, 0);
        }
        if iy + 1 < grid.ny {
            try_pair(va + grid.nx, 1);
        }
    }
    // pin node 0
    trip.push((0, 0, 1.0));
    let a = Csr::from_triplets(n, trip);
    let phi = if rhs.iter().all(|v| *v == 0.0) {
        vec![0.0; n]
    } else {
        pcg(&a, &rhs, 1e-12, 20 * n + 100)
            .map_err(|_| ReconError::Potential(lg.region))?
            .0
    };
    let phi0 = phi[0];
    Ok(Potential {
        region: lg.region,
        nodes: nodes.to_vec(),
        phi: phi.iter().map(|v| v - phi0).collect(),
        g: lg.g.clone(),
    })
}

impl Potential {
    /// `φ(x)` from the nearest raster node plus a gradient step.
    pub fn eval(&self, grid: &ReconGrid, x: &Vec2) -> f64 {
        let (k, _) = self
            .nodes
            .iter()
            .enumerate()
            .map(|(k, &v)| (k, (grid.point(v) - x).norm_squared()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        self.phi[k] + self.g[k].dot(&(x - grid.point(self.nodes[k])))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconErrors {
    /// Relative `L²` error of `γ` over raster nodes (tubes excluded).
    pub gamma_rel_l2: f64,
    pub gamma_max_rel: f64,
    /// `recovered - true` per interface.
    pub jump_errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconResult {
    pub jumps: Vec<JumpEstimate>,
    pub gradients: Vec<LogGradient>,
    #[serde(skip)]
    pub potentials: Vec<Potential>,
    /// Per-region additive constant of `ln γ` before normalization.
    pub offsets: Vec<f64>,
    /// Global additive constant set by the anchor.
    pub normalization: f64,
    pub anchor: Vec2,
    pub anchor_value: f64,
    #[serde(skip)]
    pub grid: ReconGrid,
    /// `γ` at raster nodes (`NaN` where excluded).
    #[serde(skip)]
    pub gamma: Vec<f64>,
    pub errors: Option<ReconErrors>,
}

impl ReconResult {
    /// `ln γ` before normalization at `x` in `region`.
    pub fn raw_log_gamma(&self, region: RegionId, x: &Vec2) -> f64 {
        self.potentials[region - 1].eval(&self.grid, x) + self.offsets[region - 1]
    }

    pub fn gamma_at(&self, region: RegionId, x: &Vec2) -> f64 {
        (self.raw_log_gamma(region, x) + self.normalization).exp()
    }
}

/// Stitches per-region potentials with the jumps along the nesting tree and
/// normalizes at the anchor.
pub fn assemble_conductivity(
    scene: &Scene,
    grid: ReconGrid,
    jumps: Vec<JumpEstimate>,
    gradients: Vec<LogGradient>,
    anchor: Vec2,
    anchor_value: f64,
) -> Result<ReconResult, ReconError> {
    let nr = scene.n_regions();
    let mut potentials = Vec::with_capacity(nr);
    for lg in &gradients {
        let nodes = grid.nodes(lg.region);
        potentials.push(fit_potential(&grid, lg, &nodes)?);
    }
    let mut offsets = vec![f64::NAN; nr];
    let root = scene.background_id();
    offsets[root - 1] = 0.0;
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        for c in scene.children_of(p) {
            let jump = jumps
                .iter()
                .find_map(|e| {
                    if (e.i, e.j) == (p, c) {
                        Some(e.value)
                    } else if (e.i, e.j) == (c, p) {
                        Some(-e.value)
                    } else {
                        None
                    }
                })
                .ok_or(ReconError::MissingJump(p, c))?;
            let circle = scene.circle(c).expect("child region has a circle");
            let t = grid.tube;
            let pts: Vec<Vec2> = (0..64)
                .map(|k| circle.point_at(2.0 * std::f64::consts::PI * (k as f64 + 0.5) / 64.0))
                .collect();
            let mut diff = 0.0;
            for x in &pts {
                let n = circle.outward_normal(x);
                // inner side carries the child potential
                diff += potentials[c - 1].eval(&grid, &(x - t * n)) - potentials[p - 1].eval(&grid, &(x + t * n));
            }
            diff /= pts.len() as f64;
            offsets[c - 1] = offsets[p - 1] + jump - diff;
            stack.push(c);
        }
    }
    let mut result = ReconResult {
        jumps,
        gradients,
        potentials,
        offsets,
        normalization: 0.0,
        anchor,
        anchor_value,
        grid,
        gamma: Vec::new(),
        errors: None,
    };
    let ra = scene
        .region_of(&anchor)
        .ok_or_else(|| ReconError::Phantom("anchor lies outside the domain".into()))?;
    result.normalization = anchor_value.ln() - result.raw_log_gamma(ra, &anchor);
    result.gamma = (0..result.grid.region.len())
        .map(|i| match result.grid.region[i] {
            Some(r) => result.gamma_at(r, &result.grid.point(i)),
            None => f64::NAN,
        })
        .collect();
    Ok(result)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconConfig {
    /// Raster spacing for `D ln γ` and the potential.
    pub spacing: f64,
    /// Probe offset and excluded tube half-width.
    pub offset: f64,
    /// Interface probe points per circle.
    pub probes: usize,
    pub lap_radius: f64,
}

impl ReconConfig {
    /// Defaults for mesh size `h`.
    pub fn for_mesh(h: f64) -> ReconConfig {
        ReconConfig {
            spacing: (2.0 * h).max(1.0 / 64.0),
            offset: 2.0 * h,
            probes: 128,
            lap_radius: (6.0 * h).max(0.05),
        }
    }
}

/// Jumps, gradients and assembly in one pass.
pub fn reconstruct(
    scene: &Scene,
    us: &[SolutionField],
    cfg: &ReconConfig,
    anchor: Vec2,
    anchor_value: f64,
) -> Result<ReconResult, ReconError> {
    let jumps = scene
        .interfaces(cfg.offset)
        .iter()
        .map(|f| recover_jumps(us, f, cfg.probes, cfg.offset))
        .collect::<Result<Vec<_>, _>>()?;
    // the raster keeps clear of the Laplacian fits' one-sided zone
    let grid = ReconGrid::new(scene, cfg.spacing, cfg.offset);
    let gradients = (1..=scene.n_regions())
        .map(|r| {
            let pts: Vec<Vec2> = grid.nodes(r).iter().map(|&i| grid.point(i)).collect();
            recover_log_gradient(us, r, &pts, cfg.lap_radius)
        })
        .collect::<Result<Vec<_>, _>>()?;
    assemble_conductivity(scene, grid, jumps, gradients, anchor, anchor_value)
}

/// Errors against a phantom; nodes within `tube` of an interface are skipped.
pub fn compare(result: &mut ReconResult, phantom: &Phantom, tube: f64) {
    let (mut num, mut den, mut worst) = (0.0, 0.0, 0.0f64);
    for i in 0..result.grid.region.len() {
        let Some(r) = result.grid.region[i] else { continue };
        let p = result.grid.point(i);
        if phantom.scene.interface_distance(&p) < tube {
            continue;
        }
        let t = phantom.gamma_in(r, &p);
        let e = result.gamma[i] - t;
        num += e * e;
        den += t * t;
        worst = worst.max((e / t).abs());
    }
    let jump_errors = result
        .jumps
        .iter()
        .map(|e| {
            let x = phantom
                .scene
                .interface_between(e.i, e.j, tube)
                .map(|f| f.sample_points(1)[0]);
            let truth = x
                .map(|x| (phantom.gamma_in(e.j, &x) / phantom.gamma_in(e.i, &x)).ln())
                .unwrap_or(f64::NAN);
            e.value - truth
        })
        .collect();
    result.errors = Some(ReconErrors {
        gamma_rel_l2: (num / den).sqrt(),
        gamma_max_rel: worst,
        jump_errors,
    });
}

/// Gradient discontinuity across each interface against a control circle
/// inside the outer region.
#[derive(Clone, Debug, Serialize)]
pub struct JumpSetReport {
    pub i: RegionId,
    pub j: RegionId,
    /// Median over samples of `max_ℓ |Du_ℓ(x⁺) - Du_ℓ(x⁻)|`, the one-sided
    /// limits extrapolated from offsets `t` and `2t`.
    pub magnitude: f64,
    /// Same statistic across a concentric circle with no interface.
    pub control: f64,
}

pub fn jump_set_diagnostic(
    us: &[SolutionField],
    scene: &Scene,
    offset: f64,
    k: usize,
) -> Result<Vec<JumpSetReport>, ReconError> {
    let mut out = Vec::new();
    for f in scene.interfaces(offset) {
        let stat = |circle_r: f64, ri: RegionId, rj: RegionId| -> Result<f64, ReconError> {
            let mut v = Vec::with_capacity(k);
            for s in 0..k {
                let th = 2.0 * std::f64::consts::PI * (s as f64 + 0.5) / k as f64;
                let c = f.circle.c();
                let x = c + circle_r * Vec2::new(th.cos(), th.sin());
                let n = (x - c).normalize();
                let mut m = 0.0f64;
                for u in us {
                    let mut d = [Vec2::zeros(); 2];
                    for (k, t) in [offset, 2.0 * offset].into_iter().enumerate() {
                        let (_, _, gi) = u.value_grad(&(x + t * n), Side::Region(ri))?;
                        let (_, _, gj) = u.value_grad(&(x - t * n), Side::Region(rj))?;
                        d[k] = gi - gj;
                    }
                    // linear extrapolation to zero offset removes the smooth part
                    m = m.max((2.0 * d[0] - d[1]).norm());
                }
                v.push(m);
            }
            Ok(median(&mut v))
        };
        let outer = f.outer_region();
        let magnitude = stat(f.circle.radius, outer, f.inner)?;
        // control circle halfway to the nearest other curve in the outer region
        let r = f.circle.radius;
        let mut room = f64::INFINITY;
        for s in 0..16 {
            let th = 2.0 * std::f64::consts::PI * s as f64 / 16.0;
            let mut step = 0.0;
            while step < 1.0 {
                step += 0.01;
                let p = f.circle.c() + (r + step) * Vec2::new(th.cos(), th.sin());
                if scene.region_of(&p) != Some(outer) || scene.interface_distance(&p) < 0.5 * step {
                    break;
                }
            }
            room = room.min(step);
        }
        let rc = r + 0.5 * room;
        let control = if 0.5 * room > 3.0 * offset {
            stat(rc, outer, outer)?
        } else {
            f64::NAN
        };
        out.push(JumpSetReport {
            i: f.i,
            j: f.j,
            magnitude,
            control,
        });
    }
    Ok(out)
}

/// Dirichlet data of the forward family for `phantom`.
pub fn forward_family(
    phantom: &Phantom,
    mesh: &Arc<Mesh>,
    traces: &[&(dyn Fn(&Vec2) -> f64 + Sync)],
) -> Result<Vec<SolutionField>, crate::solver::SolverError> {
    let op = crate::coefficients::OperatorSpec::original(Arc::new(phantom.coefficients()));
    let solver = crate::solver::DirichletSolver::new(&op, mesh.clone());
    let vecs: Vec<Vec<f64>> = traces.iter().map(|g| solver.boundary_vector(*g)).collect();
    solver.solve_many(&vecs)
}
