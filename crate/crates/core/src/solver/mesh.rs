//! Interface-fitted triangular meshes.
//!
//! Every interface circle is replaced by a regular polygon whose vertices lie
//! exactly on the circle; the polygon edges are constraint edges of a
//! constrained Delaunay triangulation which is then refined for angle and size.

use std::f64::consts::PI;

use serde::Serialize;
use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};
use thiserror::Error;

use crate::geometry::{circle_points, Circle, RegionId, Scene, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh size h = {h} must be positive and below d0/4 = {limit}")]
    BadSize { h: f64, limit: f64 },
    #[error("triangulation failed: {0}")]
    Triangulation(String),
}

/// Minimum angle targeted by refinement, in degrees.
pub const ANGLE_LIMIT_DEG: f64 = 25.0;

#[derive(Clone, Debug)]
pub struct Mesh {
    pub h: f64,
    pub vertices: Vec<Vec2>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Region of each triangle.
    pub region: Vec<RegionId>,
    pub on_boundary: Vec<bool>,
    /// Interface index (subdomain id - 1) of vertices lying on an interface.
    pub interface_of: Vec<Option<usize>>,
    /// Ordered polygon vertices of each interface.
    pub interface_vertices: Vec<Vec<usize>>,
    /// Circle of each interface.
    pub circles: Vec<Circle>,
    /// Triangles incident to each vertex.
    pub vertex_tris: Vec<Vec<usize>>,
    locator: Locator,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshStats {
    pub h: f64,
    pub vertices: usize,
    pub triangles: usize,
    pub min_angle_deg: f64,
    pub max_edge: f64,
    pub max_chord_error: f64,
}

/// Bucket grid over triangle bounding boxes.
#[derive(Clone, Debug)]
struct Locator {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn new(vertices: &[Vec2], triangles: &[[usize; 3]], cell: f64) -> Locator {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for v in vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let origin = lo - Vec2::new(cell, cell) * 1e-6;
        let nx = (((hi.x - origin.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - origin.y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut loc = Locator {
            origin,
            cell,
            nx,
            ny,
            buckets: Vec::new(),
        };
        for (t, tri) in triangles.iter().enumerate() {
            let mut a = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut b = -a;
            for &k in tri {
                a = a.inf(&vertices[k]);
                b = b.sup(&vertices[k]);
            }
            let (i0, j0) = loc.cell_of(&a);
            let (i1, j1) = loc.cell_of(&b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t as u32);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell_of(&self, p: &Vec2) -> (usize, usize) {
        let i = ((p.x - self.origin.x) / self.cell).floor();
        let j = ((p.y - self.origin.y) / self.cell).floor();
        (
            (i.max(0.0) as usize).min(self.nx - 1),
            (j.max(0.0) as usize).min(self.ny - 1),
        )
    }

    /// Triangles in buckets overlapping the square of half-width `r` at `p`.
    fn near(&self, p: &Vec2, r: f64) -> Vec<usize> {
        let (i0, j0) = self.cell_of(&(p - Vec2::new(r, r)));
        let (i1, j1) = self.cell_of(&(p + Vec2::new(r, r)));
        let mut out = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                out.extend(self.buckets[j * self.nx + i].iter().map(|&t| t as usize));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Region of `p` with each interface replaced by its inscribed polygon with
/// `n` vertices starting at angle 0.
fn polygonal_region(scene: &Scene, polys: &[usize], p: &Vec2) -> Option<RegionId> {
    if !scene.outer.contains(p) {
        return None;
    }
    let mut best: Option<(RegionId, f64)> = None;
    for (s, &n) in scene.subdomains.iter().zip(polys) {
        let v = p - s.circle.c();
        let r = v.norm();
        let th = v.y.atan2(v.x).rem_euclid(2.0 * PI);
        let step = 2.0 * PI / n as f64;
        let mid = (th / step).floor() * step + 0.5 * step;
        let inside = r * (th - mid).cos() < s.circle.radius * (0.5 * step).cos();
        if inside && best.map_or(true, |(_, rr)| s.circle.radius < rr) {
            best = Some((s.id, s.circle.radius));
        }
    }
    Some(best.map_or(scene.background_id(), |(id, _)| id))
}

/// Interface-fitted mesh with target edge length `h` (requires `h < d0/4`).
pub fn build_mesh(scene: &Scene, h: f64) -> Result<Mesh, MeshError> {
    let limit = scene.d0 / 4.0;
    if !(h > 0.0 && h < limit) {
        return Err(MeshError::BadSize { h, limit });
    }
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let err = |e: &dyn std::fmt::Debug| MeshError::Triangulation(format!("{e:?}"));
    let mut insert_loop = |pts: &[Vec2]| -> Result<Vec<usize>, MeshError> {
        let mut hs = Vec::with_capacity(pts.len());
        for p in pts {
            hs.push(cdt.insert(Point2::new(p.x, p.y)).map_err(|e| err(&e))?);
        }
        for k in 0..hs.len() {
            cdt.add_constraint(hs[k], hs[(k + 1) % hs.len()]);
        }
        Ok(hs.iter().map(|h| h.index()).collect())
    };
    let boundary = insert_loop(&scene.outer.boundary_points(h))?;
    let mut interface_vertices = Vec::new();
    for s in &scene.subdomains {
        interface_vertices.push(insert_loop(&circle_points(&s.circle, h))?);
    }
    let params = RefinementParameters::<f64>::new()
        .with_angle_limit(AngleLimit::from_deg(ANGLE_LIMIT_DEG))
        .with_max_allowed_area(0.5 * h * h)
        .keep_constraint_edges()
        .with_max_additional_vertices(50_000_000);
    cdt.refine(params);

    let vertices: Vec<Vec2> = cdt
        .vertices()
        .map(|v| {
            let p = v.position();
            Vec2::new(p.x, p.y)
        })
        .collect();
    // Constraint points keep their handles, so the exact circle coordinates
    // survive refinement unchanged.
    let polys: Vec<usize> = interface_vertices.iter().map(|v| v.len()).collect();
    let mut triangles = Vec::new();
    let mut region = Vec::new();
    for f in cdt.inner_faces() {
        let tri = f.vertices().map(|v| v.fix().index());
        let c = (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]) / 3.0;
        let r = polygonal_region(scene, &polys, &c)
            .ok_or_else(|| MeshError::Triangulation(format!("triangle centroid {c:?} outside domain")))?;
        triangles.push(tri);
        region.push(r);
    }
    let n = vertices.len();
    let mut on_boundary = vec![false; n];
    for &v in &boundary {
        on_boundary[v] = true;
    }
    let mut interface_of = vec![None; n];
    for (k, vs) in interface_vertices.iter().enumerate() {
        for &v in vs {
            interface_of[v] = Some(k);
        }
    }
    let circles = scene.subdomains.iter().map(|s| s.circle).collect();
    Ok(Mesh::assemble_parts(
        h,
        vertices,
        triangles,
        region,
        on_boundary,
        interface_of,
        interface_vertices,
        circles,
    ))
}

impl Mesh {
    #[allow(clippy::too_many_arguments)]
    fn assemble_parts(
        h: f64,
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        region: Vec<RegionId>,
        on_boundary: Vec<bool>,
        interface_of: Vec<Option<usize>>,
        interface_vertices: Vec<Vec<usize>>,
        circles: Vec<Circle>,
    ) -> Mesh {
        let mut vertex_tris = vec![Vec::new(); vertices.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_tris[v].push(t);
            }
        }
        let locator = Locator::new(&vertices, &triangles, 2.0 * h);
        Mesh {
            h,
            vertices,
            triangles,
            region,
            on_boundary,
            interface_of,
            interface_vertices,
            circles,
            vertex_tris,
            locator,
        }
    }

    /// Structured mesh of the annulus `r_in < |x - c| < r_out`, both circles
    /// Dirichlet boundary, all triangles tagged `region`.
    pub fn annulus(center: Vec2, r_in: f64, r_out: f64, nr: usize, ntheta: usize, region: RegionId) -> Mesh {
        let mut vertices = Vec::with_capacity((nr + 1) * ntheta);
        let mut on_boundary = Vec::new();
        for i in 0..=nr {
            let r = r_in + (r_out - r_in) * i as f64 / nr as f64;
            for j in 0..ntheta {
                // stagger alternate rings to avoid long thin cells
                let t = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / ntheta as f64;
                vertices.push(center + r * Vec2::new(t.cos(), t.sin()));
                on_boundary.push(i == 0 || i == nr);
            }
        }
        let id = |i: usize, j: usize| i * ntheta + (j % ntheta);
        let mut triangles = Vec::new();
        for i in 0..nr {
            for j in 0..ntheta {
                let (a, b) = (id(i, j), id(i, j + 1));
                let (c, d) = (id(i + 1, j), id(i + 1, j + 1));
                if i % 2 == 0 {
                    triangles.push([a, b, c]);
                    triangles.push([b, d, c]);
                } else {
                    triangles.push([a, d, c]);
                    triangles.push([a, b, d]);
                }
            }
        }
        for t in triangles.iter_mut() {
            let [a, b, c] = *t;
            if orient(&vertices[a], &vertices[b], &vertices[c]) < 0.0 {
                *t = [a, c, b];
            }
        }
        let region = vec![region; triangles.len()];
        let h = (r_out - r_in) / nr as f64;
        let n = vertices.len();
        Mesh::assemble_parts(
            h,
            vertices,
            triangles,
            region,
            on_boundary,
            vec![None; n],
            Vec::new(),
            Vec::new(),
        )
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * orient(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangles[t];
        (self.vertices[a] + self.vertices[b] + self.vertices[c]) / 3.0
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: &Vec2) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let det = orient(&pa, &pb, &pc);
        let l0 = orient(p, &pb, &pc) / det;
        let l1 = orient(&pa, p, &pc) / det;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Gradients of the three barycentric basis functions on `t`.
    pub fn basis_gradients(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let det = orient(&pa, &pb, &pc);
        let perp = |u: Vec2| Vec2::new(-u.y, u.x) / det;
        [perp(pc - pb), perp(pa - pc), perp(pb - pa)]
    }

    /// A triangle containing `p` (boundary ties broken by lowest index).
    pub fn locate(&self, p: &Vec2) -> Option<usize> {
        self.best_triangle(p, None)
    }

    /// The triangle of `region` containing `p`, or the nearest triangle of
    /// that region within one cell of the locator.
    pub fn locate_in_region(&self, p: &Vec2, region: RegionId) -> Option<usize> {
        self.best_triangle(p, Some(region))
    }

    fn best_triangle(&self, p: &Vec2, region: Option<RegionId>) -> Option<usize> {
        let tol = -1e-12;
        let mut best: Option<(usize, f64)> = None;
        for t in self.locator.near(p, 0.0) {
            if region.map_or(false, |r| self.region[t] != r) {
                continue;
            }
            let l = self.barycentric(t, p);
            let m = l[0].min(l[1]).min(l[2]);
            if m >= tol {
                return Some(t);
            }
            if region.is_some() && best.map_or(true, |(_, bm)| m > bm) {
                best = Some((t, m));
            }
        }
        if region.is_none() {
            return None;
        }
        // widen the search for one-sided evaluation just across a polygon edge
        for t in self.locator.near(p, self.locator.cell) {
            if region.map_or(false, |r| self.region[t] != r) {
                continue;
            }
            let m = {
                let l = self.barycentric(t, p);
                l[0].min(l[1]).min(l[2])
            };
            if best.map_or(true, |(_, bm)| m > bm) {
                best = Some((t, m));
            }
        }
        best.filter(|&(_, m)| m > -1.0).map(|(t, _)| t)
    }

    /// Triangles whose bounding boxes come within `r` of `p`.
    pub fn triangles_near(&self, p: &Vec2, r: f64) -> Vec<usize> {
        self.locator.near(p, r)
    }

    pub fn min_angle_deg(&self) -> f64 {
        let mut m = 180.0f64;
        for tri in &self.triangles {
            for k in 0..3 {
                let a = self.vertices[tri[k]];
                let b = self.vertices[tri[(k + 1) % 3]];
                let c = self.vertices[tri[(k + 2) % 3]];
                let u = b - a;
                let w = c - a;
                let cos = (u.dot(&w) / (u.norm() * w.norm())).clamp(-1.0, 1.0);
                m = m.min(cos.acos().to_degrees());
            }
        }
        m
    }

    pub fn stats(&self) -> MeshStats {
        let mut max_edge = 0.0f64;
        for tri in &self.triangles {
            for k in 0..3 {
                max_edge = max_edge.max((self.vertices[tri[k]] - self.vertices[tri[(k + 1) % 3]]).norm());
            }
        }
        let mut chord = 0.0f64;
        for (k, vs) in self.interface_vertices.iter().enumerate() {
            let c = self.circles[k];
            for e in 0..vs.len() {
                let m = 0.5 * (self.vertices[vs[e]] + self.vertices[vs[(e + 1) % vs.len()]]);
                chord = chord.max(c.signed_distance(&m).abs());
            }
        }
        MeshStats {
            h: self.h,
            vertices: self.vertices.len(),
            triangles: self.triangles.len(),
            min_angle_deg: self.min_angle_deg(),
            max_edge,
            max_chord_error: chord,
        }
    }

    /// Interface polygon edges of interface `k`.
    pub fn interface_edges(&self, k: usize) -> Vec<[usize; 2]> {
        let vs = &self.interface_vertices[k];
        (0..vs.len()).map(|e| [vs[e], vs[(e + 1) % vs.len()]]).collect()
    }
}

#[inline]
pub(crate) fn orient(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)
}
