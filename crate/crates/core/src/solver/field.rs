//! Discrete solutions with one-sided evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::mesh::Mesh;
use super::sparse::SolveStats;
use crate::geometry::{RegionId, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("point ({0}, {1}) lies outside the mesh")]
    Outside(f64, f64),
    #[error("side mismatch: ({x}, {y}) is not in the closure of region {region}")]
    SideMismatch { x: f64, y: f64, region: RegionId },
    #[error("too few same-side vertices near ({0}, {1}) for a Laplacian fit")]
    TooFewPoints(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Whatever region contains the point.
    Auto,
    /// The limit from inside the given region.
    Region(RegionId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldValue {
    pub region: RegionId,
    pub u: f64,
    pub du: Vec2,
    pub lap: f64,
}

/// Piecewise-linear field. A vertex on an interface carries its base value
/// plus, for each region listed in `offsets`, a one-sided correction.
#[derive(Clone, Debug)]
pub struct SolutionField {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
    pub offsets: BTreeMap<(RegionId, usize), f64>,
    pub stats: Option<SolveStats>,
}

/// Degree-5 seven-point rule on the reference triangle (barycentric, weight).
const DUNAVANT5: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W1: f64 = 0.132_394_152_788_506;
    const W2: f64 = 0.125_939_180_544_827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

impl SolutionField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> SolutionField {
        SolutionField {
            mesh,
            values,
            offsets: BTreeMap::new(),
            stats: None,
        }
    }

    pub fn with_offsets(mesh: Arc<Mesh>, values: Vec<f64>, offsets: BTreeMap<(RegionId, usize), f64>) -> SolutionField {
        SolutionField {
            mesh,
            values,
            offsets,
            stats: None,
        }
    }

    pub fn with_stats(mut self, stats: SolveStats) -> SolutionField {
        self.stats = Some(stats);
        self
    }

    /// Value at vertex `v` as seen from `region`.
    pub fn vertex_value(&self, v: usize, region: RegionId) -> f64 {
        self.values[v] + self.offsets.get(&(region, v)).copied().unwrap_or(0.0)
    }

    pub fn local_values(&self, t: usize) -> [f64; 3] {
        let r = self.mesh.region[t];
        self.mesh.triangles[t].map(|v| self.vertex_value(v, r))
    }

    /// Element used for evaluation at `x` on `side`.
    pub fn element(&self, x: &Vec2, side: Side) -> Result<usize, FieldError> {
        match side {
            Side::Auto => self.mesh.locate(x).ok_or(FieldError::Outside(x.x, x.y)),
            Side::Region(r) => {
                let t = self.mesh.locate_in_region(x, r).ok_or(FieldError::SideMismatch {
                    x: x.x,
                    y: x.y,
                    region: r,
                })?;
                let l = self.mesh.barycentric(t, x);
                // extrapolation allowed only a fraction of a cell across an edge
                if l.iter().cloned().fold(f64::INFINITY, f64::min) < -0.5 {
                    return Err(FieldError::SideMismatch {
                        x: x.x,
                        y: x.y,
                        region: r,
                    });
                }
                Ok(t)
            }
        }
    }

    /// `u` and `Du` from the element on the requested side.
    pub fn value_grad(&self, x: &Vec2, side: Side) -> Result<(RegionId, f64, Vec2), FieldError> {
        let t = self.element(x, side)?;
        Ok(self.value_grad_in(t, x))
    }

    /// `u` and `Du` of the element `t` polynomial at `x`.
    pub fn value_grad_in(&self, t: usize, x: &Vec2) -> (RegionId, f64, Vec2) {
        let l = self.mesh.barycentric(t, x);
        let g = self.mesh.basis_gradients(t);
        let u = self.local_values(t);
        let val = l[0] * u[0] + l[1] * u[1] + l[2] * u[2];
        let du = g[0] * u[0] + g[1] * u[1] + g[2] * u[2];
        (self.mesh.region[t], val, du)
    }

    /// Least-squares quadratic fit over same-side vertices within `radius`;
    /// returns the fitted Laplacian.
    pub fn laplacian(&self, x: &Vec2, region: RegionId, radius: f64) -> Result<f64, FieldError> {
        let mut rho = radius;
        for _ in 0..4 {
            let pts = self.region_vertices_near(x, region, rho);
            if pts.len() >= 10 {
                return Ok(quadratic_laplacian(x, rho, &pts));
            }
            rho *= 1.5;
        }
        Err(FieldError::TooFewPoints(x.x, x.y))
    }

    fn region_vertices_near(&self, x: &Vec2, region: RegionId, rho: f64) -> Vec<(Vec2, f64)> {
        let mut seen = std::collections::BTreeSet::new();
        let mut pts = Vec::new();
        for t in self.mesh.triangles_near(x, rho) {
            if self.mesh.region[t] != region {
                continue;
            }
            for &v in &self.mesh.triangles[t] {
                let p = self.mesh.vertices[v];
                if (p - x).norm() <= rho && seen.insert(v) {
                    pts.push((p, self.vertex_value(v, region)));
                }
            }
        }
        pts
    }

    pub fn eval(&self, x: &Vec2, side: Side) -> Result<FieldValue, FieldError> {
        let (region, u, du) = self.value_grad(x, side)?;
        let lap = self.laplacian(x, region, 2.0 * self.mesh.h)?;
        Ok(FieldValue { region, u, du, lap })
    }

    /// `Σ c_k f_k` over fields sharing one mesh.
    pub fn combine(terms: &[(f64, &SolutionField)]) -> SolutionField {
        let mesh = terms[0].1.mesh.clone();
        let mut values = vec![0.0; mesh.n_vertices()];
        let mut offsets: BTreeMap<(RegionId, usize), f64> = BTreeMap::new();
        for (c, f) in terms {
            debug_assert!(Arc::ptr_eq(&mesh, &f.mesh));
            for (v, x) in values.iter_mut().zip(&f.values) {
                *v += c * x;
            }
            for (k, o) in &f.offsets {
                *offsets.entry(*k).or_insert(0.0) += c * o;
            }
        }
        SolutionField::with_offsets(mesh, values, offsets)
    }

    /// `‖u_h - u‖_{L²}` with `u(x, region)` evaluated in each element's own
    /// region.
    pub fn l2_error(&self, exact: impl Fn(&Vec2, RegionId) -> f64) -> f64 {
        let mut s = 0.0;
        for t in 0..self.mesh.triangles.len() {
            let [a, b, c] = self.mesh.triangles[t];
            let (pa, pb, pc) = (self.mesh.vertices[a], self.mesh.vertices[b], self.mesh.vertices[c]);
            let u = self.local_values(t);
            let r = self.mesh.region[t];
            let area = self.mesh.area(t);
            for (l, w) in DUNAVANT5.iter() {
                let p = pa * l[0] + pb * l[1] + pc * l[2];
                let uh = u[0] * l[0] + u[1] * l[1] + u[2] * l[2];
                let e = uh - exact(&p, r);
                s += w * area * e * e;
            }
        }
        s.sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_error(|_, _| 0.0)
    }
}

fn quadratic_laplacian(x: &Vec2, rho: f64, pts: &[(Vec2, f64)]) -> f64 {
    let n = pts.len();
    let mut a = DMatrix::zeros(n, 6);
    let mut b = DVector::zeros(n);
    for (i, (p, v)) in pts.iter().enumerate() {
        let d = (p - x) / rho;
        a.row_mut(i)
            .copy_from_slice(&[1.0, d.x, d.y, d.x * d.x, d.x * d.y, d.y * d.y]);
        b[i] = *v;
    }
    let svd = a.svd(true, true);
    let c = svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(6));
    2.0 * (c[3] + c[5]) / (rho * rho)
}
