use std::sync::Arc;

use jaclab::coefficients::{CoefficientSet, OperatorSpec, RegionCoeffs};
use jaclab::geometry::{Scene, Vec2};
use jaclab::solver::{build_mesh, solve_dirichlet, solve_transmission, Side};
use nalgebra::{Matrix3, Vector3};

/// Coefficients of `u_in = A r cosθ`, `u_out = (B r + C / r) cosθ` from
/// continuity, flux balance and `u = cosθ` on the unit circle.
fn two_phase_oracle(g_in: f64, g_out: f64, r: f64) -> (f64, f64, f64) {
    let m = Matrix3::new(r, -r, -1.0 / r, g_in, -g_out, g_out / (r * r), 0.0, 1.0, 1.0);
    let x = m.lu().solve(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
    (x[0], x[1], x[2])
}

fn exact(p: &Vec2, region: usize, abc: (f64, f64, f64)) -> f64 {
    let r = p.norm();
    let c = if r > 0.0 { p.x / r } else { 0.0 };
    if region == 1 {
        abc.0 * p.x
    } else {
        (abc.1 * r + abc.2 / r) * c
    }
}

#[test]
fn oracle_matches_hand_solution() {
    let (a, b, c) = two_phase_oracle(2.0, 1.0, 0.5);
    assert!((a - 8.0 / 11.0).abs() < 1e-14);
    assert!((b - 12.0 / 11.0).abs() < 1e-14);
    assert!((c + 1.0 / 11.0).abs() < 1e-14);
}

#[test]
fn two_phase_converges_at_second_order() {
    let scene = Scene::concentric(&[0.5]).unwrap();
    let op = OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[2.0, 1.0])));
    let abc = two_phase_oracle(2.0, 1.0, 0.5);
    let mut errs = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let mesh = Arc::new(build_mesh(&scene, h).unwrap());
        let u = solve_dirichlet(&op, &mesh, &|p: &Vec2| p.x).unwrap();
        errs.push(u.l2_error(|p, r| exact(p, r, abc)));
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.2..=4.8).contains(&ratio), "errors {errs:?}");
    }
}

#[test]
fn flux_defect_shrinks_linearly() {
    let scene = Scene::concentric(&[0.5]).unwrap();
    let op = OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[2.0, 1.0])));
    let mut defects = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let mesh = Arc::new(build_mesh(&scene, h).unwrap());
        let u = solve_dirichlet(&op, &mesh, &|p: &Vec2| p.x).unwrap();
        let f = scene.interfaces(2.0 * h)[0];
        let mut d = 0.0f64;
        for x in f.sample_points(64) {
            let n = f.normal(&x);
            let (_, _, di) = u.value_grad(&(x - 2.0 * h * n), Side::Region(f.i)).unwrap();
            let (_, _, dj) = u.value_grad(&(x + 2.0 * h * n), Side::Region(f.j)).unwrap();
            let gi = op.eval(f.i, &x).a[(0, 0)];
            let gj = op.eval(f.j, &x).a[(0, 0)];
            d = d.max((gj * dj.dot(&n) - gi * di.dot(&n)).abs());
        }
        defects.push(d / h);
    }
    // C = defect / h stays bounded
    assert!(defects.iter().all(|&c| c < 10.0), "{defects:?}");
    assert!(defects[2] < 1.5 * defects[0], "{defects:?}");
}

#[test]
fn shifted_laplace_matches_radial_solve() {
    let scene = Scene::concentric(&[]).unwrap();
    let coeffs = CoefficientSet {
        lambda: 0.5,
        alpha: 1.0,
        regions: vec![RegionCoeffs::constant(
            1,
            [[1.0, 0.0], [0.0, 1.0]],
            [0.0; 2],
            [0.0; 2],
            1.0,
        )],
    };
    let op = OperatorSpec::original(Arc::new(coeffs));
    let mesh = Arc::new(build_mesh(&scene, 1.0 / 64.0).unwrap());
    let u = solve_dirichlet(&op, &mesh, &|_: &Vec2| 1.0).unwrap();
    // u = I0(r) / I0(1) from a fine 1D shooting of u'' + u'/r = u
    let radial = radial_reference(2000);
    let mut err = 0.0f64;
    for (v, p) in mesh.vertices.iter().enumerate() {
        err = err.max((u.values[v] - radial(p.norm())).abs());
    }
    assert!(err < 1e-4, "{err}");
}

/// `I0(r) / I0(1)` by series.
fn radial_reference(terms: usize) -> impl Fn(f64) -> f64 {
    let i0 = move |r: f64| {
        let mut s = 0.0;
        let mut t = 1.0;
        for k in 0..terms.min(60) {
            s += t;
            let k1 = (k + 1) as f64;
            t *= (r * r / 4.0) / (k1 * k1);
        }
        s
    };
    move |r| i0(r) / i0(1.0)
}

#[test]
fn unit_value_jump_matches_radial_oracle() {
    // S = 0 outside, jump 1 into the disk r < 0.5 means S_in = 1 (harmonic,
    // flux balanced: both sides constant).
    let scene = Scene::concentric(&[0.5]).unwrap();
    let op = OperatorSpec::original(Arc::new(CoefficientSet::isotropic(0.5, &[1.0, 1.0])));
    let f = scene.interfaces(0.1)[0];
    let mut errs = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let mesh = Arc::new(build_mesh(&scene, h).unwrap());
        // jump_u = 1, jump_flux = 1 (sign: from outer i to inner j)
        let s = solve_transmission(&op, &mesh, &f, &|_| 1.0, &|_| 1.0, &|_| 0.0).unwrap();
        let oracle = jump_oracle(1.0, 1.0, 0.5);
        errs.push(s.l2_error(|p, r| oracle(p.norm(), r == f.inner)));
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.2..=4.8).contains(&ratio), "errors {errs:?}");
    }
}

/// Radial piecewise-harmonic `S` with `S = 0` on the unit circle, value jump
/// `ju` and flux jump `jf` (inner minus outer, normal pointing inward).
fn jump_oracle(ju: f64, jf: f64, radius: f64) -> impl Fn(f64, bool) -> f64 {
    // outside: a ln r; inside: const. Inward normal n = -e_r.
    // flux jump: DS_in·n - DS_out·n = 0 - (-a / R) = a / R = jf
    let a = jf * radius;
    move |r, inside| {
        if inside {
            a * radius.ln() + ju
        } else {
            a * r.ln()
        }
    }
}
