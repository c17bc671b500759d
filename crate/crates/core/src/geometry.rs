//! Piecewise domains with circular interfaces, sampling sets, and the ordering
//! combinatorics (construction maps and index maps) used to sweep across
//! subdomains.
//!
//! Region ids are 1-based. Subdomain `k` is the open disk bounded by circle `k`
//! minus the disks it contains; the background region has id `N + 1`.

use std::f64::consts::PI;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type RegionId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid scene: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("no admissible next region after {placed:?}")]
    NoConstructionStep { placed: Vec<RegionId> },
    #[error("region {0} does not exist")]
    UnknownRegion(RegionId),
    #[error("{0:?} is not a construction map")]
    NotConstructionMap(Vec<RegionId>),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn new(center: [f64; 2], radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn c(&self) -> Vec2 {
        Vec2::new(self.center[0], self.center[1])
    }

    /// `|p - c| - R`, negative inside.
    pub fn signed_distance(&self, p: &Vec2) -> f64 {
        (p - self.c()).norm() - self.radius
    }

    pub fn point_at(&self, theta: f64) -> Vec2 {
        self.c() + self.radius * Vec2::new(theta.cos(), theta.sin())
    }

    /// Outward radial unit vector at `p` (e_1 at the center).
    pub fn outward_normal(&self, p: &Vec2) -> Vec2 {
        let r = p - self.c();
        let n = r.norm();
        if n == 0.0 {
            Vec2::new(1.0, 0.0)
        } else {
            r / n
        }
    }

    /// Radial chart `x -> (x - c) / R` onto the unit circle.
    pub fn chart(&self, p: &Vec2) -> Vec2 {
        (p - self.c()) / self.radius
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.signed_distance(p) < 0.0
    }

    /// Distance between the two circles as curves when they are nested or
    /// disjoint; zero or negative when they touch or cross.
    pub fn gap(&self, other: &Circle) -> f64 {
        let dc = (other.c() - self.c()).norm();
        let disjoint = dc - self.radius - other.radius;
        let nested = (self.radius - other.radius).abs() - dc;
        disjoint.max(nested)
    }

    fn strictly_contains(&self, other: &Circle) -> bool {
        other.radius < self.radius && (other.c() - self.c()).norm() + other.radius < self.radius
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outer {
    Disk(Circle),
    Rect { min: [f64; 2], max: [f64; 2] },
}

impl Outer {
    pub fn unit_disk() -> Self {
        Outer::Disk(Circle::new([0.0, 0.0], 1.0))
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        self.boundary_distance(p) > 0.0
    }

    /// Distance to the boundary, positive inside and negative outside.
    pub fn boundary_distance(&self, p: &Vec2) -> f64 {
        match self {
            Outer::Disk(c) => -c.signed_distance(p),
            Outer::Rect { min, max } => {
                let dx = (p.x - min[0]).min(max[0] - p.x);
                let dy = (p.y - min[1]).min(max[1] - p.y);
                dx.min(dy)
            }
        }
    }

    pub fn center(&self) -> Vec2 {
        match self {
            Outer::Disk(c) => c.c(),
            Outer::Rect { min, max } => Vec2::new(0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1])),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Outer::Disk(c) => 2.0 * c.radius,
            Outer::Rect { min, max } => (max[0] - min[0]).hypot(max[1] - min[1]),
        }
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match self {
            Outer::Disk(c) => (
                [c.center[0] - c.radius, c.center[1] - c.radius],
                [c.center[0] + c.radius, c.center[1] + c.radius],
            ),
            Outer::Rect { min, max } => (*min, *max),
        }
    }

    /// Polar angle of a boundary point around the domain center.
    pub fn angle_of(&self, p: &Vec2) -> f64 {
        let v = p - self.center();
        v.y.atan2(v.x)
    }

    /// Closed boundary polygon with edge length at most `h`.
    pub fn boundary_points(&self, h: f64) -> Vec<Vec2> {
        match self {
            Outer::Disk(c) => circle_points(c, h),
            Outer::Rect { min, max } => {
                let corners = [
                    Vec2::new(min[0], min[1]),
                    Vec2::new(max[0], min[1]),
                    Vec2::new(max[0], max[1]),
                    Vec2::new(min[0], max[1]),
                ];
                let mut pts = Vec::new();
                for k in 0..4 {
                    let a = corners[k];
                    let b = corners[(k + 1) % 4];
                    let n = (((b - a).norm() / h).ceil() as usize).max(1);
                    for s in 0..n {
                        pts.push(a + (b - a) * (s as f64 / n as f64));
                    }
                }
                pts
            }
        }
    }

    fn degenerate(&self) -> bool {
        match self {
            Outer::Disk(c) => !(c.radius > 0.0),
            Outer::Rect { min, max } => !(max[0] > min[0] && max[1] > min[1]),
        }
    }

    /// Gap between a circle and the outer boundary (<= 0 if touching or outside).
    fn circle_gap(&self, c: &Circle) -> f64 {
        self.boundary_distance(&c.c()) - c.radius
    }
}

/// Equally spaced points on a circle, edge length at most `h`, at least 8 points.
pub fn circle_points(c: &Circle, h: f64) -> Vec<Vec2> {
    let n = ((2.0 * PI * c.radius / h).ceil() as usize).max(8);
    (0..n).map(|k| c.point_at(2.0 * PI * k as f64 / n as f64)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub id: RegionId,
    pub circle: Circle,
}

/// Config-level description of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub outer: Outer,
    #[serde(default)]
    pub subdomains: Vec<Subdomain>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const VIOLATION_INTERSECT: &str = "interfaces intersect";
pub const VIOLATION_OUTER: &str = "d(∪Ω_i, ℝ²∖Ω) = 0";

/// Checks every scene clause and names each violation. Never fails.
pub fn validate_scene(spec: &SceneSpec) -> ValidationReport {
    let mut v = Vec::new();
    if spec.outer.degenerate() {
        v.push("outer domain is degenerate".to_string());
    }
    let n = spec.subdomains.len();
    let mut ids: Vec<usize> = spec.subdomains.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids != (1..=n).collect::<Vec<_>>() {
        v.push(format!("subdomain ids must be exactly 1..={n}, found {ids:?}"));
    }
    for s in &spec.subdomains {
        if !(s.circle.radius > 0.0) || !s.circle.center.iter().all(|x| x.is_finite()) {
            v.push(format!("subdomain {}: circle radius must be positive and finite", s.id));
        }
    }
    for (a, sa) in spec.subdomains.iter().enumerate() {
        for sb in &spec.subdomains[a + 1..] {
            if sa.circle.gap(&sb.circle) <= 0.0 {
                v.push(format!("{VIOLATION_INTERSECT}: Γ{} and Γ{}", sa.id, sb.id));
            }
        }
        if !spec.outer.degenerate() && spec.outer.circle_gap(&sa.circle) <= 0.0 {
            v.push(format!("{VIOLATION_OUTER}: Γ{} reaches the outer boundary", sa.id));
        }
    }
    ValidationReport { violations: v }
}

/// An interface circle between regions `i` and `j`. The normal points from
/// `Ω_i` into `Ω_j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interface {
    pub i: RegionId,
    pub j: RegionId,
    pub circle: Circle,
    /// Region enclosed by the circle.
    pub inner: RegionId,
    pub tube_halfwidth: f64,
}

impl Interface {
    /// Unit normal pointing from `Ω_i` into `Ω_j`.
    pub fn normal(&self, p: &Vec2) -> Vec2 {
        let out = self.circle.outward_normal(p);
        if self.j == self.inner {
            -out
        } else {
            out
        }
    }

    pub fn flipped(&self) -> Interface {
        Interface {
            i: self.j,
            j: self.i,
            ..*self
        }
    }

    pub fn outer_region(&self) -> RegionId {
        if self.i == self.inner {
            self.j
        } else {
            self.i
        }
    }

    pub fn in_tube(&self, p: &Vec2) -> bool {
        self.circle.signed_distance(p).abs() < self.tube_halfwidth
    }

    /// `K` equally spaced points on the interface.
    pub fn sample_points(&self, k: usize) -> Vec<Vec2> {
        (0..k)
            .map(|s| self.circle.point_at(2.0 * PI * (s as f64 + 0.5) / k as f64))
            .collect()
    }
}

/// A validated scene with the nesting tree and separation computed.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub outer: Outer,
    /// Indexed by `id - 1`.
    pub subdomains: Vec<Subdomain>,
    /// `parent[id - 1]` is the enclosing region of subdomain `id`.
    pub parent: Vec<RegionId>,
    pub d0: f64,
    /// Number of circles strictly inside circle `id` (indexed by `id - 1`).
    pub contained: Vec<usize>,
}

impl Scene {
    pub fn new(spec: SceneSpec) -> Result<Scene, GeometryError> {
        let report = validate_scene(&spec);
        if !report.ok() {
            return Err(GeometryError::Invalid(report.violations));
        }
        let mut subs = spec.subdomains;
        subs.sort_by_key(|s| s.id);
        let n = subs.len();
        let mut parent = vec![n + 1; n];
        let mut contained = vec![0; n];
        for a in 0..n {
            let mut best: Option<usize> = None;
            for b in 0..n {
                if a != b && subs[b].circle.strictly_contains(&subs[a].circle) {
                    contained[b] += 1;
                    if best.map_or(true, |k| subs[b].circle.radius < subs[k].circle.radius) {
                        best = Some(b);
                    }
                }
            }
            if let Some(b) = best {
                parent[a] = b + 1;
            }
        }
        let mut d0 = spec.outer.diameter();
        for a in 0..n {
            d0 = d0.min(spec.outer.circle_gap(&subs[a].circle));
            for b in a + 1..n {
                d0 = d0.min(subs[a].circle.gap(&subs[b].circle));
            }
        }
        Ok(Scene {
            outer: spec.outer,
            subdomains: subs,
            parent,
            d0,
            contained,
        })
    }

    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            outer: self.outer.clone(),
            subdomains: self.subdomains.clone(),
        }
    }

    /// Unit disk with concentric inclusions of the given radii, outermost first.
    pub fn concentric(radii: &[f64]) -> Result<Scene, GeometryError> {
        Scene::new(SceneSpec {
            outer: Outer::unit_disk(),
            subdomains: radii
                .iter()
                .enumerate()
                .map(|(k, &r)| Subdomain {
                    id: k + 1,
                    circle: Circle::new([0.0, 0.0], r),
                })
                .collect(),
        })
    }

    pub fn n_inclusions(&self) -> usize {
        self.subdomains.len()
    }

    pub fn n_regions(&self) -> usize {
        self.subdomains.len() + 1
    }

    pub fn background_id(&self) -> RegionId {
        self.subdomains.len() + 1
    }

    pub fn circle(&self, id: RegionId) -> Option<&Circle> {
        self.subdomains.get(id.wrapping_sub(1)).map(|s| &s.circle)
    }

    pub fn parent_of(&self, id: RegionId) -> Option<RegionId> {
        self.parent.get(id.wrapping_sub(1)).copied()
    }

    pub fn children_of(&self, id: RegionId) -> Vec<RegionId> {
        (1..=self.n_inclusions())
            .filter(|&k| self.parent[k - 1] == id)
            .collect()
    }

    /// Two regions share an interface iff one is the parent of the other.
    pub fn adjacent(&self, a: RegionId, b: RegionId) -> bool {
        self.parent_of(a) == Some(b) || self.parent_of(b) == Some(a)
    }

    /// Region containing `p`, or `None` outside the domain or on a circle.
    pub fn region_of(&self, p: &Vec2) -> Option<RegionId> {
        if !self.outer.contains(p) {
            return None;
        }
        let mut best: Option<(RegionId, f64)> = None;
        for s in &self.subdomains {
            let sd = s.circle.signed_distance(p);
            if sd == 0.0 {
                return None;
            }
            if sd < 0.0 && best.map_or(true, |(_, r)| s.circle.radius < r) {
                best = Some((s.id, s.circle.radius));
            }
        }
        Some(best.map_or(self.background_id(), |(id, _)| id))
    }

    /// Number of inclusion circles lying strictly inside the disk `u`.
    pub fn contained_count(&self, u: &Circle) -> usize {
        self.subdomains
            .iter()
            .filter(|s| u.strictly_contains(&s.circle))
            .count()
    }

    /// Distance from `p` to the nearest interface circle.
    pub fn interface_distance(&self, p: &Vec2) -> f64 {
        self.subdomains
            .iter()
            .map(|s| s.circle.signed_distance(p).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Canonically oriented interfaces: `i` = enclosing region, `j` = the
    /// inclusion, so the normal points inward.
    pub fn interfaces(&self, tube_halfwidth: f64) -> Vec<Interface> {
        self.subdomains
            .iter()
            .map(|s| Interface {
                i: self.parent[s.id - 1],
                j: s.id,
                circle: s.circle,
                inner: s.id,
                tube_halfwidth,
            })
            .collect()
    }

    pub fn interface_between(&self, a: RegionId, b: RegionId, tube: f64) -> Option<Interface> {
        self.interfaces(tube).into_iter().find_map(|f| {
            if f.i == a && f.j == b {
                Some(f)
            } else if f.i == b && f.j == a {
                Some(f.flipped())
            } else {
                None
            }
        })
    }

    fn check_region(&self, id: RegionId) -> Result<(), GeometryError> {
        if id == 0 || id > self.n_regions() {
            Err(GeometryError::UnknownRegion(id))
        } else {
            Ok(())
        }
    }

    /// Construction map starting at `start`, choosing the smallest admissible id
    /// at every step.
    pub fn construction_map(&self, start: RegionId) -> Result<ConstructionMap, GeometryError> {
        self.check_region(start)?;
        let total = self.n_regions();
        let mut perm = vec![start];
        let mut attach = vec![0];
        while perm.len() < total {
            let next = (1..=total)
                .filter(|r| !perm.contains(r))
                .find_map(|r| self.unique_attachment(&perm, r).map(|k| (r, k)));
            match next {
                Some((r, k)) => {
                    perm.push(r);
                    attach.push(k);
                }
                None => return Err(GeometryError::NoConstructionStep { placed: perm }),
            }
        }
        let index_maps = index_maps_from(&perm, &attach);
        Ok(ConstructionMap {
            perm,
            attach,
            index_maps,
        })
    }

    /// Validates an arbitrary permutation, returning the full construction map.
    pub fn check_construction_map(&self, perm: &[RegionId]) -> Result<ConstructionMap, GeometryError> {
        let total = self.n_regions();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (1..=total).collect::<Vec<_>>() {
            return Err(GeometryError::NotConstructionMap(perm.to_vec()));
        }
        let mut attach = vec![0];
        for j in 1..total {
            match self.unique_attachment(&perm[..j], perm[j]) {
                Some(k) => attach.push(k),
                None => return Err(GeometryError::NotConstructionMap(perm.to_vec())),
            }
        }
        let index_maps = index_maps_from(perm, &attach);
        Ok(ConstructionMap {
            perm: perm.to_vec(),
            attach,
            index_maps,
        })
    }

    /// Position (0-based) of the unique placed region sharing an interface
    /// with `r`, if exactly one exists.
    fn unique_attachment(&self, placed: &[RegionId], r: RegionId) -> Option<usize> {
        let mut hits = placed.iter().enumerate().filter(|(_, &p)| self.adjacent(p, r));
        match (hits.next(), hits.next()) {
            (Some((k, _)), None) => Some(k),
            _ => None,
        }
    }
}

/// A construction map with its attach map and index maps. Positions are
/// 0-based: `perm[0]` is the start region and `attach[j] < j` for `j >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstructionMap {
    pub perm: Vec<RegionId>,
    pub attach: Vec<usize>,
    /// `index_maps[s][r - 1]` is the region whose coefficients act on `Ω_r`
    /// at stage `s + 1`.
    pub index_maps: Vec<Vec<RegionId>>,
}

fn index_maps_from(perm: &[RegionId], attach: &[usize]) -> Vec<Vec<RegionId>> {
    let n = perm.len();
    let mut maps: Vec<Vec<RegionId>> = Vec::with_capacity(n);
    maps.push(vec![perm[0]; n]);
    for s in 1..n {
        let mut cur = vec![0; n];
        for l in 0..s {
            cur[perm[l] - 1] = maps[s - 1][perm[l] - 1];
        }
        cur[perm[s] - 1] = perm[s];
        for l in s + 1..n {
            cur[perm[l] - 1] = cur[perm[attach[l]] - 1];
        }
        maps.push(cur);
    }
    maps
}

/// Index maps of a construction map.
pub fn index_maps(cmap: &ConstructionMap) -> Vec<Vec<RegionId>> {
    index_maps_from(&cmap.perm, &cmap.attach)
}

/// Where a sample sits relative to interfaces.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum SampleKind {
    Grid,
    /// One side of an interface probe pair: interface index, point index,
    /// and `+1` on the side the normal points to (`Ω_j`), `-1` on `Ω_i`.
    Probe {
        interface: usize,
        point: usize,
        side: i8,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub p: Vec2,
    pub region: RegionId,
    pub kind: SampleKind,
}

/// Grid points of `Ω` outside all interface tubes plus probe pairs `x ± t n`.
#[derive(Clone, Debug, Serialize)]
pub struct SampleSet {
    pub spacing: f64,
    pub tube_halfwidth: f64,
    pub probe_offset: f64,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    /// `spacing`: grid step; `tube`: excluded half-width around each circle;
    /// `probes`: points per interface, placed at distance `tube` on each side.
    pub fn new(scene: &Scene, spacing: f64, tube: f64, probes: usize) -> SampleSet {
        let (lo, hi) = scene.outer.bounding_box();
        let nx = ((hi[0] - lo[0]) / spacing).floor() as usize;
        let ny = ((hi[1] - lo[1]) / spacing).floor() as usize;
        let ox = lo[0] + 0.5 * (hi[0] - lo[0] - nx as f64 * spacing);
        let oy = lo[1] + 0.5 * (hi[1] - lo[1] - ny as f64 * spacing);
        let edge = 1e-9 * scene.outer.diameter();
        let mut samples = Vec::new();
        for iy in 0..=ny {
            for ix in 0..=nx {
                let p = Vec2::new(ox + ix as f64 * spacing, oy + iy as f64 * spacing);
                if scene.outer.boundary_distance(&p) <= edge {
                    continue;
                }
                if scene.interface_distance(&p) < tube {
                    continue;
                }
                if let Some(region) = scene.region_of(&p) {
                    samples.push(Sample {
                        p,
                        region,
                        kind: SampleKind::Grid,
                    });
                }
            }
        }
        for (fi, f) in scene.interfaces(tube).iter().enumerate() {
            for (k, x) in f.sample_points(probes).into_iter().enumerate() {
                let n = f.normal(&x);
                for (side, region) in [(-1i8, f.i), (1i8, f.j)] {
                    samples.push(Sample {
                        p: x + (side as f64) * tube * n,
                        region,
                        kind: SampleKind::Probe {
                            interface: fi,
                            point: k,
                            side,
                        },
                    });
                }
            }
        }
        SampleSet {
            spacing,
            tube_halfwidth: tube,
            probe_offset: tube,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(|s| matches!(s.kind, SampleKind::Grid))
    }

    pub fn probes(&self) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .filter(|s| matches!(s.kind, SampleKind::Probe { .. }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(id: usize, c: [f64; 2], r: f64) -> Subdomain {
        Subdomain {
            id,
            circle: Circle::new(c, r),
        }
    }

    /// Background 5 holds 1 and 4; 2 sits in 1; 3 sits in 2.
    pub(crate) fn five_pieces() -> Scene {
        Scene::new(SceneSpec {
            outer: Outer::Rect {
                min: [-3.0, -1.5],
                max: [3.0, 1.5],
            },
            subdomains: vec![
                sub(1, [1.0, 0.0], 1.0),
                sub(2, [1.0, 0.0], 0.6),
                sub(3, [1.0, 0.0], 0.2),
                sub(4, [-1.6, 0.0], 0.8),
            ],
        })
        .unwrap()
    }

    #[test]
    fn nested_disks_validate() {
        let s = Scene::concentric(&[0.5, 0.2]).unwrap();
        assert_eq!(s.n_inclusions(), 2);
        assert_eq!(s.background_id(), 3);
        assert_eq!(s.parent, vec![3, 1]);
        assert!((s.d0 - 0.3).abs() < 1e-12);
        assert_eq!(s.contained, vec![1, 0]);
    }

    #[test]
    fn overlapping_circles_are_named() {
        let spec = SceneSpec {
            outer: Outer::unit_disk(),
            subdomains: vec![sub(1, [-0.4, 0.0], 0.5), sub(2, [0.4, 0.0], 0.5)],
        };
        let r = validate_scene(&spec);
        assert!(r.violations.iter().any(|v| v.starts_with(VIOLATION_INTERSECT)));
    }

    #[test]
    fn tangent_to_outer_is_named() {
        let spec = SceneSpec {
            outer: Outer::unit_disk(),
            subdomains: vec![sub(1, [0.5, 0.0], 0.5)],
        };
        let r = validate_scene(&spec);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].starts_with(VIOLATION_OUTER));
        assert!(Scene::new(spec).is_err());
    }

    #[test]
    fn region_lookup() {
        let s = Scene::concentric(&[0.5, 0.2]).unwrap();
        assert_eq!(s.region_of(&Vec2::new(0.0, 0.0)), Some(2));
        assert_eq!(s.region_of(&Vec2::new(0.3, 0.0)), Some(1));
        assert_eq!(s.region_of(&Vec2::new(0.7, 0.0)), Some(3));
        assert_eq!(s.region_of(&Vec2::new(1.2, 0.0)), None);
    }

    #[test]
    fn paper_five_piece_map_is_valid() {
        let s = five_pieces();
        assert_eq!(s.parent, vec![5, 1, 2, 5]);
        let cm = s.check_construction_map(&[2, 3, 1, 5, 4]).unwrap();
        assert_eq!(
            cm.index_maps,
            vec![
                vec![2, 2, 2, 2, 2],
                vec![2, 2, 3, 2, 2],
                vec![1, 2, 3, 1, 1],
                vec![1, 2, 3, 5, 5],
                vec![1, 2, 3, 4, 5],
            ]
        );
        let cm2 = s.check_construction_map(&[2, 1, 5, 4, 3]).unwrap();
        assert_eq!(
            cm2.index_maps,
            vec![
                vec![2, 2, 2, 2, 2],
                vec![1, 2, 2, 1, 1],
                vec![1, 2, 2, 5, 5],
                vec![1, 2, 2, 4, 5],
                vec![1, 2, 3, 4, 5],
            ]
        );
        assert!(s.check_construction_map(&[2, 5, 1, 3, 4]).is_err());
    }

    #[test]
    fn smallest_id_tie_break() {
        let s = five_pieces();
        assert_eq!(s.construction_map(2).unwrap().perm, vec![2, 1, 3, 5, 4]);
    }

    #[test]
    fn no_inclusions_single_map() {
        let s = Scene::concentric(&[]).unwrap();
        let cm = s.construction_map(1).unwrap();
        assert_eq!(cm.index_maps, vec![vec![1]]);
    }

    #[test]
    fn interface_normal_antisymmetry() {
        let s = Scene::concentric(&[0.5]).unwrap();
        let f = s.interfaces(0.02)[0];
        let p = Vec2::new(0.3, 0.4);
        assert!((f.normal(&p) + f.flipped().normal(&p)).norm() < 1e-15);
        // canonical orientation points into the inclusion
        assert!((f.normal(&p) + Vec2::new(0.6, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn samples_avoid_tubes() {
        let s = Scene::concentric(&[0.5]).unwrap();
        let set = SampleSet::new(&s, 0.05, 0.04, 16);
        for smp in set.grid() {
            assert!(s.interface_distance(&smp.p) >= 0.04);
            assert_eq!(s.region_of(&smp.p), Some(smp.region));
        }
        assert_eq!(set.probes().count(), 32);
        for smp in set.probes() {
            assert_eq!(s.region_of(&smp.p), Some(smp.region));
        }
    }
}
