use std::sync::Arc;

use jaclab::coefficients::{coercivity_shift, OperatorSpec};
use jaclab::construct::{build_admissible_family, ConstructConfig};
use jaclab::frames::{d_star, hd_frame, sphere_frame};
use jaclab::geometry::{SampleSet, Vec2};
use jaclab::jacobian::{whitney_reduce_table, JacobianReport, JacobianTable, D};
use jaclab::linalg::rank;
use jaclab::recon::{compare, forward_family, reconstruct, Phantom, ReconConfig};
use jaclab::solver::radial::{annulus_eigenvalue, poincare_samples};
use jaclab::solver::{build_mesh, DirichletSolver, Mesh, Side, SolutionField};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::expr::Expr;
use crate::output::{finite_range, pgm, Cell, Csv, Outputs};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    /// One line per violated config clause.
    Config(Vec<String>),
    Numerical(String),
    Io(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

fn numerical(e: impl std::fmt::Display) -> Failure {
    Failure::Numerical(e.to_string())
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(vec![msg.into()])
}

/// Artifacts, plus a numerical failure to report once they are written.
pub struct Run {
    pub outputs: Outputs,
    pub failed: Option<String>,
}

pub fn require_seed(seed: Option<u64>, command: &str) -> Result<u64, Failure> {
    seed.ok_or_else(|| {
        config_err(format!(
            "seed: {command} is randomized; pass --seed or set \"seed\" in the config"
        ))
    })
}

pub fn frames_check(dim: usize, samples: usize, seed: Option<u64>) -> Result<Run, Failure> {
    let mut errs = Vec::new();
    if !(2..=16).contains(&dim) {
        errs.push(format!("--dim: must lie in 2..=16, got {dim}"));
    }
    if samples == 0 {
        errs.push("--samples: must be at least 1".into());
    }
    if seed.is_none() {
        errs.push("seed: frames check is randomized; pass --seed".into());
    }
    if !errs.is_empty() {
        return Err(Failure::Config(errs));
    }
    let seed = seed.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parallelizable = matches!(dim, 2 | 4 | 8);
    let mut csv = Csv::new(&["sample", "gram_error", "det", "rank"]);
    let (mut worst_gram, mut worst_det) = (0.0f64, 0.0f64);
    let (mut min_rank, mut max_rank) = (usize::MAX, 0);
    for k in 0..samples {
        let x = loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n > 0.1 && n <= 1.0 {
                break v.iter().map(|a| a / n).collect::<Vec<f64>>();
            }
        };
        let h = sphere_frame(dim, &x).map_err(numerical)?;
        let m = DMatrix::from_columns(&h);
        let (gram, det) = if parallelizable {
            let g = (m.transpose() * &m - DMatrix::identity(dim, dim)).abs().max();
            (g, m.determinant())
        } else {
            // tangency of h_2..h_{d+1}
            let xv = DVector::from_column_slice(&x);
            let t = h[1..].iter().map(|v| v.dot(&xv).abs()).fold(0.0, f64::max);
            (t, hd_frame(dim, &x).map_err(numerical)?.determinant())
        };
        let r = rank(&m);
        worst_gram = worst_gram.max(gram);
        worst_det = worst_det.max((det - 1.0).abs());
        min_rank = min_rank.min(r);
        max_rank = max_rank.max(r);
        csv.row(&[Cell::U(k), Cell::F(gram), Cell::F(det), Cell::U(r)]);
    }
    let det_tol = if parallelizable { 1e-12 } else { 1e-9 };
    let pass = worst_gram <= 1e-12 && worst_det <= det_tol && min_rank == dim && max_rank == dim;
    let summary = json!({
        "dim": dim,
        "d_star": d_star(dim),
        "samples": samples,
        "seed": seed,
        "gram_error_kind": if parallelizable { "max |G - I|" } else { "max |<h_i, x>|" },
        "max_gram_error": worst_gram,
        "max_det_error": worst_det,
        "min_rank": min_rank,
        "max_rank": max_rank,
        "gram_tolerance": 1e-12,
        "det_tolerance": det_tol,
        "pass": pass,
    });
    let mut out = Outputs::new("frames check", Some(seed), None);
    out.add("frames.csv", csv.finish());
    out.add_json("summary.json", &summary)?;
    Ok(Run {
        outputs: out,
        failed: (!pass).then(|| format!("frame check failed: gram {worst_gram:.2e}, det {worst_det:.2e}")),
    })
}

fn operator(cfg: &ExperimentConfig) -> OperatorSpec {
    OperatorSpec::original(Arc::new(cfg.coefficients.clone()))
}

fn mesh(cfg: &ExperimentConfig, h: f64) -> Result<Arc<Mesh>, Failure> {
    Ok(Arc::new(build_mesh(cfg.scene(), h).map_err(numerical)?))
}

/// Pixel-center raster over the bounding box, row 0 at the top.
fn raster(cfg: &ExperimentConfig, n: usize, f: impl Fn(&Vec2) -> f64) -> (usize, usize, Vec<f64>) {
    let (lo, hi) = cfg.scene().outer.bounding_box();
    let step = (hi[0] - lo[0]).max(hi[1] - lo[1]) / n as f64;
    let w = ((hi[0] - lo[0]) / step).round() as usize;
    let h = ((hi[1] - lo[1]) / step).round() as usize;
    let mut v = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let p = Vec2::new(lo[0] + (col as f64 + 0.5) * step, hi[1] - (row as f64 + 0.5) * step);
            v.push(f(&p));
        }
    }
    (w, h, v)
}

fn vertex_region(m: &Mesh, v: usize) -> usize {
    m.region[m.vertex_tris[v][0]]
}

pub fn solve(cfg: &ExperimentConfig, h: f64, bc: &str) -> Result<Run, Failure> {
    let e = Expr::parse(bc).map_err(|e| config_err(format!("--bc: {e}")))?;
    let m = mesh(cfg, h)?;
    let solver = DirichletSolver::new(&operator(cfg), m.clone()).with_tol(cfg.solver.tol);
    let u = solver.solve(&|p: &Vec2| e.eval(p.x, p.y)).map_err(numerical)?;
    let mut csv = Csv::new(&["x", "y", "region", "u"]);
    for (v, p) in m.vertices.iter().enumerate() {
        let r = vertex_region(&m, v);
        csv.row(&[Cell::F(p.x), Cell::F(p.y), Cell::U(r), Cell::F(u.vertex_value(v, r))]);
    }
    let (w, ht, img) = raster(cfg, 128, |p| u.eval(p, Side::Auto).map_or(f64::NAN, |f| f.u));
    let stats = m.stats();
    let summary = json!({
        "h": h,
        "bc": e.source(),
        "mesh": stats,
        "solve": u.stats,
        "l2_norm": u.l2_norm(),
        "galerkin_residual": solver.galerkin_residual(&u.values, None),
    });
    let mut out = Outputs::new("solve", None, Some(&cfg.source));
    out.add("nodes.csv", csv.finish());
    out.add("u.pgm", pgm(w, ht, &img, None, &format!("u for trace {}", e.source())));
    out.add_json("solve.json", &summary)?;
    Ok(Run {
        outputs: out,
        failed: None,
    })
}

pub fn construct(
    cfg: &ExperimentConfig,
    h: f64,
    sigma: Option<f64>,
    dict_size: Option<usize>,
    seed: Option<u64>,
) -> Result<Run, Failure> {
    let b = &cfg.construct;
    let mut cc = ConstructConfig::default();
    if let Some(s) = sigma.or(b.sigma) {
        if !(s > 0.0) {
            return Err(config_err(format!("--sigma: must be positive, got {s}")));
        }
        cc.sigma = s;
    }
    if let Some(n) = dict_size.or(b.dict_size) {
        if n == 0 {
            return Err(config_err("--dict-size: must be at least 1"));
        }
        cc.dict_size = n;
    }
    cc.fit_radius = b.fit_radius.unwrap_or(cc.fit_radius);
    cc.eps_max = b.eps_max.unwrap_or(cc.eps_max);
    cc.probes = b.probes.unwrap_or(cc.probes);
    cc.reduce = b.reduce.unwrap_or(cc.reduce);
    cc.retry_cap = b.retry_cap.unwrap_or(cc.retry_cap);
    cc.max_centers = b.max_centers;
    if cc.reduce {
        cc.seed = require_seed(seed, "construct")?;
    }
    let coeffs = Arc::new(cfg.coefficients.clone());
    let scene = cfg.scene();
    let coarse = build_mesh(scene, b.shift_h.unwrap_or(0.1)).map_err(numerical)?;
    let shift = coercivity_shift(&coeffs, scene, &coarse).map_err(numerical)?;
    let m = mesh(cfg, h)?;
    let fam = build_admissible_family(scene, &coeffs, &shift, &m, &cc).map_err(numerical)?;
    let mut csv = Csv::new(&[
        "center",
        "x",
        "y",
        "region",
        "epsilon",
        "fit_radius",
        "fit_error",
        "margin_shifted",
        "margin",
        "shift_change",
        "newly_covered",
        "certified",
    ]);
    for (k, c) in fam.centers.iter().enumerate() {
        csv.row(&[
            Cell::U(k),
            Cell::F(c.x),
            Cell::F(c.y),
            Cell::U(c.region),
            Cell::F(c.epsilon),
            Cell::F(c.fit_radius),
            Cell::F(c.fit.max_error),
            Cell::F(c.margin_shifted),
            Cell::F(c.margin),
            Cell::F(c.shift_change),
            Cell::U(c.newly_covered),
            Cell::B(c.certified),
        ]);
    }
    let mut out = Outputs::new("construct", cc.reduce.then_some(cc.seed), Some(&cfg.source));
    out.add_json(
        "family.json",
        &json!({ "h": h, "config": cc, "shift": shift, "family": fam }),
    )?;
    out.add("balls.csv", csv.finish());
    let failed = if !fam.certified {
        Some(format!("certification failed: {} samples uncovered", fam.uncovered))
    } else if !fam.admissible {
        Some(format!("final family not admissible (min rank {})", fam.final_min_rank))
    } else {
        None
    };
    Ok(Run { outputs: out, failed })
}

fn family(cfg: &ExperimentConfig, h: f64) -> Result<(Vec<SolutionField>, SampleSet), Failure> {
    let m = mesh(cfg, h)?;
    let solver = DirichletSolver::new(&operator(cfg), m).with_tol(cfg.solver.tol);
    let vecs: Vec<Vec<f64>> = cfg
        .traces
        .iter()
        .map(|e| solver.boundary_vector(&|p: &Vec2| e.eval(p.x, p.y)))
        .collect();
    let us = solver.solve_many(&vecs).map_err(numerical)?;
    let spacing = cfg.family.spacing.unwrap_or(h);
    let samples = SampleSet::new(cfg.scene(), spacing, 2.0 * h, cfg.family.probes);
    Ok((us, samples))
}

#[derive(Serialize)]
struct ReportSummary {
    p: usize,
    samples: usize,
    margin: f64,
    min_rank: usize,
    max_rank: usize,
    deficient: usize,
    admissible: bool,
}

impl From<&JacobianReport> for ReportSummary {
    fn from(r: &JacobianReport) -> Self {
        ReportSummary {
            p: r.p,
            samples: r.samples.len(),
            margin: r.margin,
            min_rank: r.min_rank,
            max_rank: r.max_rank,
            deficient: r.deficient,
            admissible: r.admissible,
        }
    }
}

/// Grid-sample margins as an image, row 0 at the top.
fn margin_image(rep: &JacobianReport, spacing: f64) -> (usize, usize, Vec<f64>) {
    let grid: Vec<_> = rep.samples.iter().filter(|s| s.side == 0).collect();
    let x0 = grid.iter().map(|s| s.x).fold(f64::INFINITY, f64::min);
    let y0 = grid.iter().map(|s| s.y).fold(f64::INFINITY, f64::min);
    let idx = |v: f64, o: f64| ((v - o) / spacing).round() as usize;
    let w = grid.iter().map(|s| idx(s.x, x0)).max().map_or(0, |m| m + 1);
    let h = grid.iter().map(|s| idx(s.y, y0)).max().map_or(0, |m| m + 1);
    let mut img = vec![f64::NAN; w * h];
    for s in grid {
        let (c, r) = (idx(s.x, x0), h - 1 - idx(s.y, y0));
        img[r * w + c] = s.margin.log10();
    }
    (w, h, img)
}

pub fn jac_report(cfg: &ExperimentConfig, h: f64) -> Result<Run, Failure> {
    let (us, samples) = family(cfg, h)?;
    let rep = JacobianTable::new(&us, &samples).map_err(numerical)?.report();
    let mut csv = Csv::new(&["x", "y", "side", "region", "rank", "margin"]);
    for s in &rep.samples {
        csv.row(&[
            Cell::F(s.x),
            Cell::F(s.y),
            Cell::I(s.side as i64),
            Cell::U(s.region),
            Cell::U(s.rank),
            Cell::F(s.margin),
        ]);
    }
    let (w, ht, img) = margin_image(&rep, samples.spacing);
    let mut out = Outputs::new("jac report", None, Some(&cfg.source));
    out.add("samples.csv", csv.finish());
    out.add("margin.pgm", pgm(w, ht, &img, None, "log10 margin at grid samples"));
    out.add_json(
        "report.json",
        &json!({ "h": h, "traces": cfg.family.traces, "report": ReportSummary::from(&rep) }),
    )?;
    let failed = (!rep.admissible).then(|| format!("family not admissible: {} deficient samples", rep.deficient));
    Ok(Run { outputs: out, failed })
}

#[derive(Serialize)]
struct Stage {
    from: usize,
    to: usize,
    a: Vec<f64>,
    margin: f64,
    attempts: usize,
    failures: usize,
    min_rank: usize,
}

pub fn jac_reduce(cfg: &ExperimentConfig, h: f64, seed: Option<u64>) -> Result<Run, Failure> {
    let seed = require_seed(seed.or(cfg.reduce.seed), "reduce")?;
    let target = cfg.reduce.target;
    let p = cfg.traces.len();
    if target < D + 1 || target >= p {
        return Err(config_err(format!(
            "reduce.target: must lie in {}..{p} for a family of {p} traces, got {target}",
            D + 1
        )));
    }
    let (us, samples) = family(cfg, h)?;
    let mut table = JacobianTable::new(&us, &samples).map_err(numerical)?;
    let initial = ReportSummary::from(&table.report());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::new();
    while table.n_fields() > target {
        let from = table.n_fields();
        let red = whitney_reduce_table(&table, &mut rng, cfg.reduce.draws)
            .map_err(|e| Failure::Numerical(format!("reduction {from} → {}: {e}", from - 1)))?;
        table = table.reduced(&red.a);
        stages.push(Stage {
            from,
            to: from - 1,
            a: red.a,
            margin: red.margin,
            attempts: red.attempts,
            failures: red.failures,
            min_rank: red.min_rank,
        });
    }
    let fin = table.report();
    let mut out = Outputs::new("jac reduce", Some(seed), Some(&cfg.source));
    out.add_json(
        "reduce.json",
        &json!({
            "h": h,
            "seed": seed,
            "traces": cfg.family.traces,
            "initial": initial,
            "stages": stages,
            "final": ReportSummary::from(&fin),
        }),
    )?;
    let failed = (!fin.admissible).then(|| "reduced family not admissible".to_string());
    Ok(Run { outputs: out, failed })
}

pub fn recon(cfg: &ExperimentConfig, h: f64) -> Result<Run, Failure> {
    let mut errs = Vec::new();
    let gamma = cfg.phantom_gamma().map_err(|e| errs.push(e)).ok();
    if cfg.recon.anchor.is_none() {
        errs.push("recon.anchor: missing field (a point inside the domain)".into());
    }
    if !errs.is_empty() {
        return Err(Failure::Config(errs));
    }
    let [ax, ay] = cfg.recon.anchor.unwrap();
    let ph = Phantom::new(
        cfg.scene().clone(),
        gamma.unwrap(),
        cfg.coefficients.lambda,
        Vec2::new(ax, ay),
        cfg.recon.anchor_value,
    )
    .map_err(|e| config_err(format!("recon: {e}")))?;
    let m = mesh(cfg, h)?;
    let traces: Vec<Box<dyn Fn(&Vec2) -> f64 + Sync + '_>> = cfg
        .traces
        .iter()
        .map(|e| Box::new(move |p: &Vec2| e.eval(p.x, p.y)) as Box<dyn Fn(&Vec2) -> f64 + Sync>)
        .collect();
    let refs: Vec<&(dyn Fn(&Vec2) -> f64 + Sync)> = traces.iter().map(|b| b.as_ref()).collect();
    let us = forward_family(&ph, &m, &refs).map_err(numerical)?;
    let mut rc = ReconConfig::for_mesh(h);
    rc.spacing = cfg.recon.spacing.unwrap_or(rc.spacing);
    rc.probes = cfg.recon.probes.unwrap_or(rc.probes);
    rc.lap_radius = cfg.recon.lap_radius.unwrap_or(rc.lap_radius);
    let mut r = reconstruct(cfg.scene(), &us, &rc, ph.anchor, ph.anchor_value).map_err(numerical)?;
    compare(&mut r, &ph, rc.offset);
    let errors = r.errors.clone().expect("compared");

    let mut jumps = serde_json::Map::new();
    for (j, err) in r.jumps.iter().zip(&errors.jump_errors) {
        jumps.insert(
            format!("{}->{}", j.i, j.j),
            json!({
                "value": j.value,
                "true": j.value - err,
                "error": err,
                "dispersion": j.dispersion,
                "used": j.used,
                "excluded": j.excluded,
            }),
        );
    }
    let gradients: Vec<_> = r
        .gradients
        .iter()
        .map(|g| {
            json!({
                "region": g.region,
                "points": g.points.len(),
                "flagged": g.n_flagged(),
                "max_residual": g.residual.iter().cloned().fold(0.0, f64::max),
            })
        })
        .collect();
    let report = json!({
        "h": h,
        "config": rc,
        "jumps": jumps,
        "errors": errors,
        "offsets": r.offsets,
        "normalization": r.normalization,
        "anchor": [ax, ay],
        "anchor_value": ph.anchor_value,
        "gradients": gradients,
    });

    let g = &r.grid;
    let mut csv = Csv::new(&["x", "y", "region", "gamma_true", "gamma_recovered"]);
    let (mut truth, mut rec) = (vec![f64::NAN; g.nx * g.ny], vec![f64::NAN; g.nx * g.ny]);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let k = iy * g.nx + ix;
            let Some(region) = g.region[k] else { continue };
            let p = g.point(k);
            let t = ph.gamma_in(region, &p);
            csv.row(&[
                Cell::F(p.x),
                Cell::F(p.y),
                Cell::U(region),
                Cell::F(t),
                Cell::F(r.gamma[k]),
            ]);
            // image row 0 at the top
            let px = (g.ny - 1 - iy) * g.nx + ix;
            truth[px] = t;
            rec[px] = r.gamma[k];
        }
    }
    let (lo1, hi1) = finite_range(&truth);
    let (lo2, hi2) = finite_range(&rec);
    let range = Some((lo1.min(lo2), hi1.max(hi2)));
    let mut out = Outputs::new("recon", None, Some(&cfg.source));
    out.add_json("report.json", &report)?;
    out.add("gamma.csv", csv.finish());
    out.add("gamma_true.pgm", pgm(g.nx, g.ny, &truth, range, "true conductivity"));
    out.add(
        "gamma_recovered.pgm",
        pgm(g.nx, g.ny, &rec, range, "recovered conductivity"),
    );
    Ok(Run {
        outputs: out,
        failed: None,
    })
}

pub fn poincare(inner: f64, outer: f64, samples: usize, seed: Option<u64>) -> Result<Run, Failure> {
    let mut errs = Vec::new();
    if !(inner > 0.0 && outer > inner && outer.is_finite()) {
        errs.push(format!("--inner/--outer: need 0 < inner < outer, got {inner}, {outer}"));
    }
    if seed.is_none() && samples > 0 {
        errs.push("seed: poincare draws random test functions; pass --seed".into());
    }
    if !errs.is_empty() {
        return Err(Failure::Config(errs));
    }
    let rho = annulus_eigenvalue(inner, outer, 1e-10).map_err(numerical)?;
    let rho2 = annulus_eigenvalue(2.0 * inner, 2.0 * outer, 1e-10).map_err(numerical)?;
    let thin = (std::f64::consts::PI / (outer - inner)).powi(2);
    let seed = seed.unwrap_or(0);
    let draws = poincare_samples(inner, outer, samples, seed);
    let mut csv = Csv::new(&["sample", "l2_sq", "grad_sq", "ratio"]);
    for (k, s) in draws.iter().enumerate() {
        csv.row(&[Cell::U(k), Cell::F(s.l2_sq), Cell::F(s.grad_sq), Cell::F(s.ratio)]);
    }
    let min_ratio = draws.iter().map(|s| s.ratio).fold(f64::INFINITY, f64::min);
    let violations = draws.iter().filter(|s| s.ratio < rho * (1.0 - 1e-9)).count();
    let summary = json!({
        "inner": inner,
        "outer": outer,
        "rho1": rho,
        "rho1_doubled": rho2,
        "scaling_ratio": rho / rho2,
        "thin_annulus_limit": thin,
        "rho1_over_limit": rho / thin,
        "samples": samples,
        "min_rayleigh_quotient": min_ratio,
        "violations": violations,
    });
    let mut out = Outputs::new("poincare", (samples > 0).then_some(seed), None);
    out.add_json("poincare.json", &summary)?;
    out.add("rayleigh.csv", csv.finish());
    let failed = (violations > 0).then(|| format!("{violations} Rayleigh quotients below ρ₁ = {rho}"));
    Ok(Run { outputs: out, failed })
}
