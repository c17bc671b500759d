//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use jaclab::coefficients::{coercivity_shift, CoefficientSet, OperatorSpec, RegionCoeffs};
use jaclab::construct::{build_admissible_family, local_ode_solutions, ConstructConfig};
use jaclab::frames::{
    build_frame_field, d_star, e_last, embed, hd_frame, hd_matrix, hd_sign, sphere_frame, t_matrix_raw,
};
use jaclab::geometry::{SampleSet, Scene, Vec2};
use jaclab::jacobian::{check_reduction, flux_jac, JacobianTable, D};
use jaclab::linalg::rank;
use jaclab::recon::{compare, forward_family, reconstruct, Phantom, ReconConfig};
use jaclab::solver::radial::annulus_eigenvalue;
use jaclab::solver::{build_mesh, solve_dirichlet, solve_transmission, Mesh, Side, SolutionField};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn unit_point(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn two_phase_scene() -> (Scene, OperatorSpec) {
    let scene = Scene::concentric(&[0.5]).unwrap();
    let op = OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[2.0, 1.0])));
    (scene, op)
}

/// `u_in = A r cosθ`, `u_out = (B r + C / r) cosθ` for trace `x_1`.
fn two_phase_oracle(g_in: f64, g_out: f64, r: f64) -> (f64, f64, f64) {
    let m = Matrix3::new(r, -r, -1.0 / r, g_in, -g_out, g_out / (r * r), 0.0, 1.0, 1.0);
    let x = m.lu().solve(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
    (x[0], x[1], x[2])
}

fn traces6() -> Vec<Box<dyn Fn(&Vec2) -> f64 + Sync>> {
    vec![
        Box::new(|p: &Vec2| p.x),
        Box::new(|p: &Vec2| p.y),
        Box::new(|p: &Vec2| p.x * p.x - p.y * p.y),
        Box::new(|p: &Vec2| 2.0 * p.x * p.y),
        Box::new(|_: &Vec2| 1.0),
        Box::new(|p: &Vec2| p.x.powi(3) - 3.0 * p.x * p.y * p.y),
    ]
}

fn family(ph: &Phantom, mesh: &Arc<Mesh>, n: usize) -> Vec<SolutionField> {
    let t = traces6();
    let refs: Vec<&(dyn Fn(&Vec2) -> f64 + Sync)> = t.iter().take(n).map(|b| b.as_ref()).collect();
    forward_family(ph, mesh, &refs).unwrap()
}

fn two_phase_phantom() -> Phantom {
    Phantom::piecewise(
        Scene::concentric(&[0.5]).unwrap(),
        &[2.0, 1.0],
        0.5,
        Vec2::new(0.75, 0.0),
    )
    .unwrap()
}

fn frames() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut gram, mut det_err, mut tang, mut sign_err, mut rank_bad) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0);
    for d in [2, 4, 8] {
        for _ in 0..10_000 {
            let x = unit_point(&mut rng, d);
            let h = sphere_frame(d, &x).unwrap();
            let m = DMatrix::from_columns(&h);
            gram = gram.max((m.transpose() * &m - DMatrix::identity(d, d)).abs().max());
            det_err = det_err.max((m.determinant() - 1.0).abs());
        }
    }
    for d in [3, 5, 6, 7] {
        for _ in 0..10_000 {
            let x = unit_point(&mut rng, d);
            let xv = DVector::from_column_slice(&x);
            let h = sphere_frame(d, &x).unwrap();
            for hi in &h[1..] {
                tang = tang.max(hi.dot(&xv).abs());
            }
            sign_err = sign_err.max((hd_matrix(d, &x).unwrap().determinant() - hd_sign(d)).abs());
            sign_err = sign_err.max((hd_frame(d, &x).unwrap().determinant() - 1.0).abs());
            if rank(&DMatrix::from_columns(&h)) != d {
                rank_bad += 1;
            }
        }
    }
    let ok = gram <= 1e-12 && det_err <= 1e-12 && tang <= 1e-12 && sign_err <= 1e-9 && rank_bad == 0;
    (
        ok,
        format!(
            "gram {gram:.1e}, det {det_err:.1e}, tangency {tang:.1e}, sign {sign_err:.1e}, rank failures {rank_bad}"
        ),
    )
}

/// `k` vectors in `ℝ^d` spanning a random subspace of dimension `r`.
fn xi_set(rng: &mut impl Rng, d: usize, k: usize, r: usize) -> Vec<DVector<f64>> {
    let basis: Vec<DVector<f64>> = (0..r)
        .map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    (0..k)
        .map(|_| {
            let mut v = DVector::zeros(d);
            for b in &basis {
                v += b * rng.gen_range(-1.0..1.0);
            }
            v
        })
        .collect()
}

fn t_rank() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut bad, mut deficient) = (0, 0);
    for n in 0..1000 {
        let d = rng.gen_range(2..=8);
        let ds = d_star(d);
        let b = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        // rank-deficient sets with A = γ I, full-rank sets with a general A
        let (a, r) = if n % 2 == 0 {
            (DMatrix::identity(d, d) * rng.gen_range(0.5..2.0), rng.gen_range(0..d))
        } else {
            let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            (&m * m.transpose() + DMatrix::identity(d, d) * 0.5, d)
        };
        let xi = xi_set(&mut rng, d, ds, r);
        let want = rank(&DMatrix::from_columns(&xi)) + 1;
        if want < d + 1 {
            deficient += 1;
        }
        let mut z: Vec<DVector<f64>> = xi.iter().map(embed).collect();
        z.push(e_last(d));
        let t = t_matrix_raw(&a, &b, &z).unwrap();
        if rank(&t) != want {
            bad += 1;
        }
    }
    (
        bad == 0,
        format!("1000 draws ({deficient} rank-deficient), mismatches {bad}"),
    )
}

fn solver() -> Outcome {
    let (scene, op) = two_phase_scene();
    let abc = two_phase_oracle(2.0, 1.0, 0.5);
    let exact = |p: &Vec2, region: usize| {
        let r = p.norm();
        if region == 1 {
            abc.0 * p.x
        } else {
            (abc.1 * r + abc.2 / r) * p.x / r
        }
    };
    let f = scene.interfaces(0.1)[0];
    let jf_radius: f64 = 0.5;
    let jump_exact = |p: &Vec2, region: usize| {
        // radial oracle for value jump 1 and flux jump 1
        let a = jf_radius;
        if region == f.inner {
            a * jf_radius.ln() + 1.0
        } else {
            a * p.norm().ln()
        }
    };
    let unit = OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[1.0, 1.0])));
    let (mut e2, mut ej, mut defect) = (Vec::new(), Vec::new(), Vec::new());
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let mesh = Arc::new(build_mesh(&scene, h).unwrap());
        let u = solve_dirichlet(&op, &mesh, &|p: &Vec2| p.x).unwrap();
        e2.push(u.l2_error(exact));
        let fi = scene.interfaces(2.0 * h)[0];
        let mut dmax = 0.0f64;
        for x in fi.sample_points(64) {
            let n = fi.normal(&x);
            let (_, _, di) = u.value_grad(&(x - 2.0 * h * n), Side::Region(fi.i)).unwrap();
            let (_, _, dj) = u.value_grad(&(x + 2.0 * h * n), Side::Region(fi.j)).unwrap();
            let gi = op.eval(fi.i, &x).a[(0, 0)];
            let gj = op.eval(fi.j, &x).a[(0, 0)];
            dmax = dmax.max((gj * dj.dot(&n) - gi * di.dot(&n)).abs());
        }
        defect.push(dmax / h);
        let s = solve_transmission(&unit, &mesh, &f, &|_| 1.0, &|_| 1.0, &|_| 0.0).unwrap();
        ej.push(s.l2_error(jump_exact));
    }
    let ratios = |e: &[f64]| e.windows(2).map(|w| w[0] / w[1]).collect::<Vec<_>>();
    let (r2, rj) = (ratios(&e2), ratios(&ej));
    let in_band = |r: &[f64]| r.iter().all(|x| (3.2..=4.8).contains(x));
    let c = defect.iter().cloned().fold(0.0, f64::max);
    let ok = in_band(&r2) && in_band(&rj) && defect[2] <= 1.5 * defect[0];
    (
        ok,
        format!("two-phase ratios {r2:.2?}, jump ratios {rj:.2?}, defect/h {defect:.2?} (C = {c:.2})"),
    )
}

fn annulus() -> Outcome {
    let a = annulus_eigenvalue(0.5, 0.75, 1e-10).unwrap();
    let b = annulus_eigenvalue(1.0, 1.5, 1e-10).unwrap();
    let ratio = a / b;
    let (t, s) = (1.0, 1.01);
    let thin = annulus_eigenvalue(t, s, 1e-10).unwrap() / (std::f64::consts::PI / (s - t)).powi(2);
    let ok = (ratio / 4.0 - 1.0).abs() <= 0.01 && (thin - 1.0).abs() <= 0.01;
    (ok, format!("ratio {ratio:.6}, thin limit / (π/(s-t))² {thin:.6}"))
}

fn seeds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut det_err, mut res) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let a = &m * m.transpose() + DMatrix::identity(2, 2) * 0.5;
        let mut g = || rng.gen_range(-2.0..2.0);
        let region = RegionCoeffs::constant(
            1,
            [[a[(0, 0)], a[(0, 1)]], [a[(1, 0)], a[(1, 1)]]],
            [g(), g()],
            [g(), g()],
            g(),
        );
        let op = OperatorSpec::original(Arc::new(CoefficientSet {
            lambda: 0.1,
            alpha: 1.0,
            regions: vec![region],
        }));
        let x = Vec2::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7));
        let seed = local_ode_solutions(&op, 1, &x).unwrap();
        det_err = det_err.max((seed.det(&x) - 1.0).abs());
        for y in [x, x + Vec2::new(0.05, -0.03), x + Vec2::new(-0.02, 0.04)] {
            for k in 0..3 {
                res = res.max(seed.residual(k, &y).abs());
            }
        }
    }
    (
        det_err <= 1e-10 && res <= 1e-10,
        format!("max |det - 1| {det_err:.1e}, max |L₀ seed| {res:.1e}"),
    )
}

fn construction() -> Outcome {
    let t0 = Instant::now();
    let scene = Scene::concentric(&[0.5]).unwrap();
    let coeffs = Arc::new(CoefficientSet::isotropic(0.5, &[2.0, 1.0]));
    let shift = coercivity_shift(&coeffs, &scene, &build_mesh(&scene, 0.1).unwrap()).unwrap();
    let mesh = Arc::new(build_mesh(&scene, 1.0 / 64.0).unwrap());
    let fam = build_admissible_family(&scene, &coeffs, &shift, &mesh, &ConstructConfig::default()).unwrap();
    let elapsed = t0.elapsed();
    let worst = fam.union_bounds.iter().cloned().fold(f64::INFINITY, f64::min);
    let probes = fam.samples.probes().count();
    let ok = worst >= 0.25 && fam.uncovered == 0 && fam.certified && elapsed <= Duration::from_secs(300);
    (
        ok,
        format!(
            "{} samples ({probes} probe sides), min margin {worst:.3}, uncovered {}, {} centers, final P {} admissible {}, {:.0?}",
            fam.samples.len(),
            fam.uncovered,
            fam.centers.len(),
            fam.fields.len(),
            fam.admissible,
            elapsed
        ),
    )
}

fn reduction() -> Outcome {
    let ph = two_phase_phantom();
    let h = 1.0 / 32.0;
    let mesh = Arc::new(build_mesh(&ph.scene, h).unwrap());
    let us = family(&ph, &mesh, 6);
    let samples = SampleSet::new(&ph.scene, h, 2.0 * h, 64);
    let table = JacobianTable::new(&us, &samples).unwrap();
    let base = table.report();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut fail5, mut fail4, mut tried4, mut sandwich) = (0, 0, 0, 0);
    for _ in 0..1000 {
        let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let (ok, _, lo, hi) = check_reduction(&table, &a);
        if lo < D || hi > D + 1 {
            sandwich += 1;
        }
        if !ok {
            fail5 += 1;
            continue;
        }
        let t5 = table.reduced(&a);
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let (ok, _, lo, hi) = check_reduction(&t5, &b);
        tried4 += 1;
        if lo < D || hi > D + 1 {
            sandwich += 1;
        }
        if !ok {
            fail4 += 1;
        }
    }
    let rate5 = fail5 as f64 / 1000.0;
    let rate4 = fail4 as f64 / tried4.max(1) as f64;
    let ok = base.admissible && rate5 < 0.01 && rate4 < 0.01 && sandwich == 0;
    (
        ok,
        format!(
            "{} samples, 6→5 failures {fail5}/1000, 5→4 failures {fail4}/{tried4}, sandwich violations {sandwich}",
            samples.len()
        ),
    )
}

fn flux_continuity() -> Outcome {
    let (scene, op) = two_phase_scene();
    let frames = build_frame_field(&scene).unwrap();
    let (a, b, c) = two_phase_oracle(2.0, 1.0, 0.5);
    // inward normal: Du_in·n = -A cosθ, Du_out·n = -(B - C / r²) cosθ
    let amp = b - c / 0.25 - a;
    let (mut fdiff, mut raw_min, mut raw_err) = (Vec::new(), Vec::new(), Vec::new());
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    for h in hs {
        let mesh = Arc::new(build_mesh(&scene, h).unwrap());
        let u = solve_dirichlet(&op, &mesh, &|p: &Vec2| p.x).unwrap();
        let f = scene.interfaces(2.0 * h)[0];
        let (mut df, mut peak, mut err) = (0.0f64, 0.0f64, 0.0f64);
        for x in f.sample_points(64) {
            let ri = flux_jac(&u, &frames, &op, &x, Side::Region(f.i)).unwrap();
            let rj = flux_jac(&u, &frames, &op, &x, Side::Region(f.j)).unwrap();
            df = df.max((0..3).map(|k| (ri[k] - rj[k]).powi(2)).sum::<f64>().sqrt());
            let n = f.normal(&x);
            let (_, _, gi) = u.value_grad(&x, Side::Region(f.i)).unwrap();
            let (_, _, gj) = u.value_grad(&x, Side::Region(f.j)).unwrap();
            let jump = (gj - gi).dot(&n);
            let cos = x.x / x.norm();
            peak = peak.max(jump.abs());
            err = err.max((jump - amp * cos).abs());
        }
        fdiff.push(df);
        raw_min.push(peak);
        raw_err.push(err);
    }
    let scaled: Vec<f64> = fdiff.iter().zip(hs).map(|(d, h)| d / h).collect();
    let ok = fdiff[2] < fdiff[1]
        && fdiff[1] < fdiff[0]
        && scaled[2] <= 1.5 * scaled[0]
        && (amp - 8.0 / 11.0).abs() < 1e-12
        && raw_min.iter().all(|&p| p >= 0.5 * amp)
        && raw_err[2] <= 0.1 * amp;
    (
        ok,
        format!(
            "J_f one-sided gap {fdiff:.3?} (gap/h {scaled:.2?}); raw normal jump peak {raw_min:.3?}, \
             oracle 8/11 cosθ error {raw_err:.3?}"
        ),
    )
}

fn reconstruction() -> Outcome {
    let h = 1.0 / 128.0;
    let ph = two_phase_phantom();
    let mesh = Arc::new(build_mesh(&ph.scene, h).unwrap());
    let cfg = ReconConfig::for_mesh(h);
    let us = family(&ph, &mesh, 5);
    let mut r = reconstruct(&ph.scene, &us, &cfg, ph.anchor, ph.anchor_value).unwrap();
    compare(&mut r, &ph, cfg.offset);
    let e = r.errors.clone().unwrap();
    let ln2 = 2f64.ln();
    let jump_rel = e.jump_errors[0].abs() / ln2;

    let ph2 = ph.scaled(2.0);
    let r2 = reconstruct(&ph2.scene, &family(&ph2, &mesh, 5), &cfg, ph2.anchor, ph2.anchor_value).unwrap();
    let mut inv = (r.jumps[0].value - r2.jumps[0].value).abs() + (r.normalization - r2.normalization).abs();
    for (a, b) in r.offsets.iter().zip(&r2.offsets) {
        inv = inv.max((a - b).abs());
    }
    for (ga, gb) in r.gradients.iter().zip(&r2.gradients) {
        for (x, y) in ga.g.iter().zip(&gb.g) {
            inv = inv.max((x - y).norm());
        }
    }
    let region = ph.scene.region_of(&ph.anchor).unwrap();
    let anchor_err = (r.gamma_at(region, &ph.anchor) - ph.anchor_value).abs();
    let ok = jump_rel <= 0.05 && e.gamma_rel_l2 <= 0.05 && inv <= 1e-8 && anchor_err <= 1e-12;
    (
        ok,
        format!(
            "jump {:.4} (ln 2 = {ln2:.4}, rel err {:.2}%), γ rel L² {:.2}%, scaling deviation {inv:.1e}, anchor error {anchor_err:.1e}",
            r.jumps[0].value,
            100.0 * jump_rel,
            100.0 * e.gamma_rel_l2
        ),
    )
}

fn h1_norm(values: &[f64], mesh: &Mesh) -> f64 {
    let mut s = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let g = mesh.basis_gradients(t);
        let u = tri.map(|v| values[v]);
        let du = g[0] * u[0] + g[1] * u[1] + g[2] * u[2];
        let mean_sq = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2] + u[0] * u[1] + u[1] * u[2] + u[0] * u[2]) / 6.0;
        s += mesh.area(t) * (du.norm_squared() + mean_sq);
    }
    s.sqrt()
}

fn openness() -> Outcome {
    let ph = two_phase_phantom();
    let h = 1.0 / 32.0;
    let mesh = Arc::new(build_mesh(&ph.scene, h).unwrap());
    let us = family(&ph, &mesh, 5);
    let samples = SampleSet::new(&ph.scene, h, 2.0 * h, 64);
    let c = JacobianTable::new(&us, &samples).unwrap().report().margin;
    let mut worst = f64::INFINITY;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pert: Vec<SolutionField> = us
            .iter()
            .map(|u| {
                let noise: Vec<f64> = (0..u.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let scale = 1e-3 * h1_norm(&u.values, &mesh) / h1_norm(&noise, &mesh);
                let values = u.values.iter().zip(&noise).map(|(v, n)| v + scale * n).collect();
                SolutionField::with_offsets(mesh.clone(), values, u.offsets.clone())
            })
            .collect();
        let m = JacobianTable::new(&pert, &samples).unwrap().report().margin;
        worst = worst.min(m);
    }
    (
        worst >= 0.5 * c,
        format!("C = {c:.4}, worst perturbed margin {worst:.4} over 100 draws"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("frame formulas", frames),
        ("T-matrix rank identity", t_rank),
        ("solver convergence", solver),
        ("annulus eigenvalue scaling", annulus),
        ("local seeds", seeds),
        ("construction at h = 1/64", construction),
        ("Whitney reduction 6 → 5 → 4", reduction),
        ("flux-Jacobian continuity", flux_continuity),
        ("two-phase reconstruction at h = 1/128", reconstruction),
        ("openness of the margin", openness),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = run();
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {detail} [{:.1?}]",
            if ok { "PASS" } else { "FAIL" },
            k + 1,
            t0.elapsed()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
