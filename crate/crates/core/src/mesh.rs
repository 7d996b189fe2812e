//! Conforming graded triangulations and the nested ε-ladder.
//!
//! Boundary curves are discretized with a size law
//! `h(x) = h_max · clamp(|x|, r_floor, 1)^grading`; interior points come from
//! staggered rings centred at the origin. A constrained Delaunay
//! triangulation (spade) then connects everything, and the triangles are
//! classified into regions by flood fill across non-constraint edges.

use crate::geometry::{
    self, cut_domain, dist, norm, BoundaryCurve, CurveRole, CutDomainSpec, DomainSpec, GeometryError, Point,
    Region,
};
use serde::{Deserialize, Serialize};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};
use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("MESH_FAILURE: {0}")]
    MeshFailure(String),
    #[error("LADDER_CONFLICT: cut radii {rho_a} and {rho_b} are closer than the local mesh size {h}")]
    LadderConflict { rho_a: f64, rho_b: f64, h: f64 },
    #[error("invalid mesh argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("mesh file parse error: {0}")]
    Parse(String),
    #[error("NO_PARENT_MAP: mesh is not a sub-mesh")]
    NoParentMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FacetTag {
    OuterGamma0,
    NearDegenerate,
    ArtificialCut,
}

impl FacetTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FacetTag::OuterGamma0 => "OUTER_GAMMA0",
            FacetTag::NearDegenerate => "NEAR_DEGENERATE",
            FacetTag::ArtificialCut => "ARTIFICIAL_CUT",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "OUTER_GAMMA0" => Some(FacetTag::OuterGamma0),
            "NEAR_DEGENERATE" => Some(FacetTag::NearDegenerate),
            "ARTIFICIAL_CUT" => Some(FacetTag::ArtificialCut),
            _ => None,
        }
    }
}

/// Boundary edge. Vertices are ordered so the attached triangle lies on the
/// left, hence the outward normal is `(dy, -dx)/len`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Facet {
    pub vertices: [usize; 2],
    pub triangle: usize,
    pub tag: FacetTag,
}

/// Constrained edge together with the boundary curve it discretizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintEdge {
    pub vertices: [usize; 2],
    pub role: CurveRole,
    /// x·ν of the source curve at the edge's middle parameter.
    pub curve_support: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParentMap {
    pub vertex_map: Vec<usize>,
    pub triangle_map: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_facets: Vec<Facet>,
    pub constraints: Vec<ConstraintEdge>,
    pub h_max: f64,
    pub grading_exponent: f64,
    pub parent_map: Option<ParentMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshOptions {
    pub h_max: f64,
    pub grading: f64,
    /// Radius below which the size law stops shrinking.
    pub r_floor: f64,
    pub smoothing_passes: usize,
    /// Largest angle subtended by a boundary chord, radians.
    pub max_arc_angle: f64,
}

impl MeshOptions {
    pub fn new(h_max: f64, grading: f64) -> Self {
        Self {
            h_max,
            grading,
            r_floor: 0.005,
            smoothing_passes: 4,
            max_arc_angle: TAU / 12.0,
        }
    }

    /// Target edge length at `p`.
    pub fn size(&self, p: Point) -> f64 {
        self.h_max * norm(p).clamp(self.r_floor, 1.0).powf(self.grading)
    }

    fn validate(&self) -> Result<(), MeshError> {
        if !(self.h_max > 0.0) || !self.h_max.is_finite() {
            return Err(MeshError::MeshFailure(format!("h_max must be positive, got {}", self.h_max)));
        }
        if !(0.0..=2.0).contains(&self.grading) {
            return Err(MeshError::InvalidArgument(format!("grading must lie in [0, 2], got {}", self.grading)));
        }
        if !(self.r_floor > 0.0) {
            return Err(MeshError::InvalidArgument("r_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Minimum-angle floor, degrees.
pub const MIN_ANGLE_DEG: f64 = 20.0;

impl TriMesh {
    pub fn area_tol(&self) -> f64 {
        1e-14 * self.h_max * self.h_max
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    pub fn min_angle_deg(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| triangle_min_angle(self.triangles[t].map(|i| self.vertices[i])))
            .fold(180.0, f64::min)
    }

    /// Flags of vertices lying on a boundary facet.
    pub fn boundary_vertex_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.vertices.len()];
        for f in &self.boundary_facets {
            flags[f.vertices[0]] = true;
            flags[f.vertices[1]] = true;
        }
        flags
    }

    pub fn has_vertex_at_origin(&self) -> bool {
        self.vertices.iter().any(|p| norm(*p) == 0.0)
    }

    /// Outward unit normal and length of a facet.
    pub fn facet_normal(&self, f: &Facet) -> (Point, f64) {
        let a = self.vertices[f.vertices[0]];
        let b = self.vertices[f.vertices[1]];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len = norm(d);
        ([d[1] / len, -d[0] / len], len)
    }

    pub fn facet_midpoint(&self, f: &Facet) -> Point {
        let a = self.vertices[f.vertices[0]];
        let b = self.vertices[f.vertices[1]];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Checks the structural invariants: orientation, area floor, closed
    /// facet loops, facet/triangle consistency.
    pub fn validate(&self) -> Result<(), MeshError> {
        let tol = self.area_tol();
        for t in 0..self.triangles.len() {
            let a = self.signed_area(t);
            if !(a >= tol) {
                return Err(MeshError::MeshFailure(format!("triangle {t} has signed area {a:e}")));
            }
        }
        let mut degree = vec![(0usize, 0usize); self.vertices.len()];
        for f in &self.boundary_facets {
            degree[f.vertices[0]].0 += 1;
            degree[f.vertices[1]].1 += 1;
            let tri = self.triangles[f.triangle];
            let has = (0..3).any(|k| tri[k] == f.vertices[0] && tri[(k + 1) % 3] == f.vertices[1]);
            if !has {
                return Err(MeshError::MeshFailure(format!("facet {:?} not an edge of its triangle", f.vertices)));
            }
        }
        if degree.iter().any(|&(o, i)| o != i || o > 1) {
            return Err(MeshError::MeshFailure("boundary facets do not form closed simple loops".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "VERTICES {}", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
        }
        let _ = writeln!(s, "TRIANGLES {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "FACETS {}", self.boundary_facets.len());
        for f in &self.boundary_facets {
            let _ = writeln!(s, "{} {} {}", f.vertices[0], f.vertices[1], f.tag.as_str());
        }
        if let Some(pm) = &self.parent_map {
            let _ = writeln!(s, "PARENT_VERTICES {}", pm.vertex_map.len());
            for v in &pm.vertex_map {
                let _ = writeln!(s, "{v}");
            }
            let _ = writeln!(s, "PARENT_TRIANGLES {}", pm.triangle_map.len());
            for t in &pm.triangle_map {
                let _ = writeln!(s, "{t}");
            }
        }
        s
    }

    /// Parses [`TriMesh::to_text`] output. Constraint provenance is not
    /// stored; `h_max` is recovered as the longest edge.
    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let all: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut idx = 0;
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| MeshError::Parse(e.to_string()));
        let parse_u = |s: &str| s.parse::<usize>().map_err(|e| MeshError::Parse(e.to_string()));
        let section = |idx: &mut usize, name: &str| -> Result<usize, MeshError> {
            let line = all.get(*idx).ok_or_else(|| MeshError::Parse(format!("missing {name}")))?;
            let w: Vec<&str> = line.split_whitespace().collect();
            if w.len() != 2 || w[0] != name {
                return Err(MeshError::Parse(format!("expected {name}, got {line}")));
            }
            *idx += 1;
            parse_u(w[1])
        };
        let nv = section(&mut idx, "VERTICES")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let w: Vec<&str> = all.get(idx).ok_or_else(|| MeshError::Parse("truncated".into()))?.split_whitespace().collect();
            if w.len() != 2 {
                return Err(MeshError::Parse(format!("bad vertex line {}", all[idx])));
            }
            vertices.push([parse_f(w[0])?, parse_f(w[1])?]);
            idx += 1;
        }
        let nt = section(&mut idx, "TRIANGLES")?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let w: Vec<&str> = all.get(idx).ok_or_else(|| MeshError::Parse("truncated".into()))?.split_whitespace().collect();
            if w.len() != 3 {
                return Err(MeshError::Parse(format!("bad triangle line {}", all[idx])));
            }
            let t = [parse_u(w[0])?, parse_u(w[1])?, parse_u(w[2])?];
            if t.iter().any(|&i| i >= nv) {
                return Err(MeshError::Parse("triangle index out of range".into()));
            }
            triangles.push(t);
            idx += 1;
        }
        let nf = section(&mut idx, "FACETS")?;
        let mut raw_facets = Vec::with_capacity(nf);
        for _ in 0..nf {
            let w: Vec<&str> = all.get(idx).ok_or_else(|| MeshError::Parse("truncated".into()))?.split_whitespace().collect();
            if w.len() != 3 {
                return Err(MeshError::Parse(format!("bad facet line {}", all[idx])));
            }
            let tag = FacetTag::parse(w[2]).ok_or_else(|| MeshError::Parse(format!("unknown tag {}", w[2])))?;
            raw_facets.push(([parse_u(w[0])?, parse_u(w[1])?], tag));
            idx += 1;
        }
        let mut parent_map = None;
        if idx < all.len() {
            let n = section(&mut idx, "PARENT_VERTICES")?;
            let mut vm = Vec::with_capacity(n);
            for _ in 0..n {
                vm.push(parse_u(all.get(idx).ok_or_else(|| MeshError::Parse("truncated".into()))?.trim())?);
                idx += 1;
            }
            let n = section(&mut idx, "PARENT_TRIANGLES")?;
            let mut tm = Vec::with_capacity(n);
            for _ in 0..n {
                tm.push(parse_u(all.get(idx).ok_or_else(|| MeshError::Parse("truncated".into()))?.trim())?);
                idx += 1;
            }
            parent_map = Some(ParentMap { vertex_map: vm, triangle_map: tm });
        }
        let edge_tri = directed_edge_owner(&triangles);
        let boundary_facets = raw_facets
            .into_iter()
            .map(|(v, tag)| {
                edge_tri
                    .get(&(v[0], v[1]))
                    .map(|&triangle| Facet { vertices: v, triangle, tag })
                    .ok_or_else(|| MeshError::Parse(format!("facet {v:?} is not a triangle edge")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut mesh = TriMesh {
            vertices,
            triangles,
            boundary_facets,
            constraints: Vec::new(),
            h_max: 0.0,
            grading_exponent: f64::NAN,
            parent_map,
        };
        mesh.h_max = mesh.max_edge_length();
        Ok(mesh)
    }
}

fn triangle_min_angle(p: [Point; 3]) -> f64 {
    let mut best = 180.0f64;
    for k in 0..3 {
        let a = p[k];
        let b = p[(k + 1) % 3];
        let c = p[(k + 2) % 3];
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let cross = u[0] * v[1] - u[1] * v[0];
        let dotp = u[0] * v[0] + u[1] * v[1];
        best = best.min(cross.abs().atan2(dotp).to_degrees());
    }
    best
}

fn directed_edge_owner(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut m = HashMap::with_capacity(3 * triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            m.insert((tri[k], tri[(k + 1) % 3]), t);
        }
    }
    m
}

fn key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

// ---------------------------------------------------------------------------
// planar straight-line graph

/// Curve piece to be resolved by mesh edges.
struct Piece {
    curve: BoundaryCurve,
    role: CurveRole,
}

#[derive(Default)]
struct Pslg {
    points: Vec<Point>,
    n_fixed: usize,
    edges: Vec<ConstraintEdge>,
    junctions: Vec<usize>,
}

impl Pslg {
    fn junction(&mut self, p: Point) -> usize {
        // the degenerate point is stored exactly
        let p = if norm(p) <= 1e-12 { [0.0, 0.0] } else { p };
        for &j in &self.junctions {
            if dist(self.points[j], p) <= 1e-10 {
                return j;
            }
        }
        self.points.push(p);
        let id = self.points.len() - 1;
        self.junctions.push(id);
        id
    }

    fn add_piece(&mut self, piece: &Piece, opts: &MeshOptions) {
        let params = discretize(&piece.curve, opts);
        let a = self.junction(piece.curve.position(0.0));
        let b = self.junction(piece.curve.position(1.0));
        let mut ids = vec![a];
        for &s in &params[1..params.len() - 1] {
            self.points.push(piece.curve.position(s));
            ids.push(self.points.len() - 1);
        }
        ids.push(b);
        for k in 0..ids.len() - 1 {
            let mid = 0.5 * (params[k] + params[k + 1]);
            self.edges.push(ConstraintEdge {
                vertices: [ids[k], ids[k + 1]],
                role: piece.role,
                curve_support: piece.curve.support(mid),
            });
        }
    }
}

/// Parameter values equidistributing `∫ ds / h_eff`.
fn discretize(curve: &BoundaryCurve, opts: &MeshOptions) -> Vec<f64> {
    let length = curve.length();
    let h_floor = opts.h_max * opts.r_floor.min(1.0).powf(opts.grading);
    let k = ((8.0 * length / h_floor).ceil() as usize).clamp(2000, 2_000_000);
    let (radius, sweep) = match curve {
        BoundaryCurve::CircularArc(a) => (a.radius, a.sweep().abs()),
        BoundaryCurve::ParametricC2(_) => (f64::INFINITY, 0.0),
    };
    // sagitta h²/(8r) ≤ h_max² and angle limit
    let chord_cap = (opts.h_max * (8.0 * radius).sqrt()).min(radius * opts.max_arc_angle);
    let density = |s: f64| 1.0 / opts.size(curve.position(s)).min(chord_cap);
    let ds = length / k as f64;
    let mut cum = vec![0.0; k + 1];
    let mut prev = density(0.0);
    for i in 1..=k {
        let cur = density(i as f64 / k as f64);
        cum[i] = cum[i - 1] + 0.5 * (prev + cur) * ds;
        prev = cur;
    }
    let total = cum[k];
    let min_n = if sweep > 0.0 {
        (sweep / opts.max_arc_angle).ceil() as usize
    } else {
        1
    };
    let n = (total.ceil() as usize).max(min_n).max(1);
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut j = 0;
    for m in 1..n {
        let target = total * m as f64 / n as f64;
        while cum[j + 1] < target {
            j += 1;
        }
        let frac = (target - cum[j]) / (cum[j + 1] - cum[j]);
        out.push((j as f64 + frac) / k as f64);
    }
    out.push(1.0);
    out
}

/// Distance from `p` to the nearest constraint segment.
fn constraint_distance(p: Point, segs: &[(Point, Point)]) -> f64 {
    segs.iter()
        .map(|(a, b)| geometry::point_segment_distance(p, *a, *b))
        .fold(f64::INFINITY, f64::min)
}

/// Staggered rings about the origin following the size law.
fn ring_points(opts: &MeshOptions, r_max: f64) -> Vec<Point> {
    let mut pts = Vec::new();
    let h0 = opts.size([0.0, 0.0]);
    let mut r = 0.5 * h0;
    let mut ring = 0usize;
    while r <= r_max {
        let h = opts.size([r, 0.0]);
        let n = ((TAU * r / h).round() as usize).max(6);
        let offset = if ring % 2 == 1 { 0.5 } else { 0.0 };
        for j in 0..n {
            let th = (j as f64 + offset) * TAU / n as f64;
            pts.push([r * th.cos(), r * th.sin()]);
        }
        let h_next = opts.size([r + 0.866 * h, 0.0]);
        r += 0.866 * 0.5 * (h + h_next);
        ring += 1;
    }
    pts
}

/// Region classifier for triangles and smoothing moves.
trait Label: Sync {
    /// Region index of a point; `None` means outside the meshed domain.
    fn label(&self, p: Point) -> Option<usize>;
}

struct SingleRegion<'a>(&'a dyn Region);

impl Label for SingleRegion<'_> {
    fn label(&self, p: Point) -> Option<usize> {
        self.0.contains(p).then_some(0)
    }
}

/// Layers of the parent domain separated by the ladder cuts: label k counts
/// how many cut domains contain the point.
struct LadderRegions<'a> {
    parent: &'a DomainSpec,
    cuts: &'a [CutDomainSpec],
}

impl Label for LadderRegions<'_> {
    fn label(&self, p: Point) -> Option<usize> {
        if !self.parent.contains(p) {
            return None;
        }
        Some(self.cuts.iter().filter(|c| c.contains(p)).count())
    }
}

struct RawMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    labels: Vec<usize>,
    constraints: Vec<ConstraintEdge>,
}

fn cdt(points: &[Point], edges: &[ConstraintEdge]) -> Result<Vec<[usize; 3]>, MeshError> {
    let verts: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let e: Vec<[usize; 2]> = edges.iter().map(|c| c.vertices).collect();
    let mut conflicts = Vec::new();
    let tri = ConstrainedDelaunayTriangulation::<Point2<f64>>::try_bulk_load_cdt(verts, e, |c| conflicts.push(c))
        .map_err(|err| MeshError::MeshFailure(format!("triangulation insertion failed: {err:?}")))?;
    if !conflicts.is_empty() {
        return Err(MeshError::MeshFailure(format!("{} conflicting constraint edges", conflicts.len())));
    }
    if tri.num_vertices() != points.len() {
        return Err(MeshError::MeshFailure("duplicate mesh points".into()));
    }
    if tri.num_constraints() != edges.len() {
        return Err(MeshError::MeshFailure("constraint edges were split".into()));
    }
    Ok(tri
        .inner_faces()
        .map(|f| {
            let v = f.vertices().map(|v| v.fix().index());
            let a = points[v[0]];
            let b = points[v[1]];
            let c = points[v[2]];
            let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            if area < 0.0 {
                [v[0], v[2], v[1]]
            } else {
                v
            }
        })
        .collect())
}

/// Flood-fills triangles across non-constraint edges and labels every
/// component by majority vote of its centroids.
fn classify(
    points: &[Point],
    triangles: &[[usize; 3]],
    edges: &[ConstraintEdge],
    labeler: &dyn Label,
) -> Vec<Option<usize>> {
    let constrained: std::collections::HashSet<(usize, usize)> =
        edges.iter().map(|c| key(c.vertices[0], c.vertices[1])).collect();
    let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            edge_tris.entry(key(tri[k], tri[(k + 1) % 3])).or_default().push(t);
        }
    }
    let mut comp = vec![usize::MAX; triangles.len()];
    let mut ncomp = 0;
    for seed in 0..triangles.len() {
        if comp[seed] != usize::MAX {
            continue;
        }
        let mut stack = vec![seed];
        comp[seed] = ncomp;
        while let Some(t) = stack.pop() {
            let tri = triangles[t];
            for k in 0..3 {
                let e = key(tri[k], tri[(k + 1) % 3]);
                if constrained.contains(&e) {
                    continue;
                }
                for &n in &edge_tris[&e] {
                    if comp[n] == usize::MAX {
                        comp[n] = ncomp;
                        stack.push(n);
                    }
                }
            }
        }
        ncomp += 1;
    }
    let mut votes: Vec<HashMap<Option<usize>, usize>> = vec![HashMap::new(); ncomp];
    for (t, tri) in triangles.iter().enumerate() {
        let [a, b, c] = tri.map(|i| points[i]);
        let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
        *votes[comp[t]].entry(labeler.label(centroid)).or_default() += 1;
    }
    let winner: Vec<Option<usize>> = votes
        .into_iter()
        .map(|v| {
            let mut v: Vec<_> = v.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            v[0].0
        })
        .collect();
    comp.iter().map(|&c| winner[c]).collect()
}

fn generate(
    pieces: &[Piece],
    region: &dyn Region,
    labeler: &dyn Label,
    opts: &MeshOptions,
) -> Result<RawMesh, MeshError> {
    opts.validate()?;
    let mut pslg = Pslg::default();
    for p in pieces {
        pslg.add_piece(p, opts);
    }
    pslg.n_fixed = pslg.points.len();
    let segs: Vec<(Point, Point)> = pslg
        .edges
        .iter()
        .map(|e| (pslg.points[e.vertices[0]], pslg.points[e.vertices[1]]))
        .collect();
    let r_max = geometry::sup_norm(region).0 + opts.h_max;
    let candidates = ring_points(opts, r_max);
    {
        use rayon::prelude::*;
        let keep: Vec<bool> = candidates
            .par_iter()
            .map(|&p| region.contains(p) && constraint_distance(p, &segs) >= 0.55 * opts.size(p))
            .collect();
        for (p, k) in candidates.into_iter().zip(keep) {
            if k {
                pslg.points.push(p);
            }
        }
    }
    let mut points = pslg.points;
    let edges = pslg.edges;
    let n_fixed = pslg.n_fixed;
    for _ in 0..opts.smoothing_passes {
        let tris = cdt(&points, &edges)?;
        let labels = classify(&points, &tris, &edges, labeler);
        let mut sum = vec![[0.0, 0.0]; points.len()];
        let mut cnt = vec![0usize; points.len()];
        for (t, tri) in tris.iter().enumerate() {
            if labels[t].is_none() {
                continue;
            }
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                sum[a][0] += points[b][0];
                sum[a][1] += points[b][1];
                cnt[a] += 1;
            }
        }
        let moved: Vec<Point> = {
            use rayon::prelude::*;
            (0..points.len())
                .into_par_iter()
                .map(|i| {
                    let old = points[i];
                    if i < n_fixed || cnt[i] == 0 {
                        return old;
                    }
                    let new = [sum[i][0] / cnt[i] as f64, sum[i][1] / cnt[i] as f64];
                    let ok = labeler.label(new) == labeler.label(old)
                        && constraint_distance(new, &segs) >= 0.25 * opts.size(new);
                    if ok {
                        new
                    } else {
                        old
                    }
                })
                .collect()
        };
        points = moved;
    }
    let tris = cdt(&points, &edges)?;
    let labels = classify(&points, &tris, &edges, labeler);
    // drop exterior triangles and orphan vertices
    let mut used = vec![false; points.len()];
    let mut kept = Vec::new();
    let mut kept_labels = Vec::new();
    for (t, l) in tris.iter().zip(labels) {
        if let Some(l) = l {
            kept.push(*t);
            kept_labels.push(l);
            for &v in t {
                used[v] = true;
            }
        }
    }
    let mut remap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if used[i] || i < n_fixed {
            remap[i] = vertices.len();
            vertices.push(*p);
        }
    }
    let triangles = kept.iter().map(|t| t.map(|v| remap[v])).collect();
    let constraints = edges
        .iter()
        .map(|e| ConstraintEdge {
            vertices: e.vertices.map(|v| remap[v]),
            ..*e
        })
        .collect();
    Ok(RawMesh {
        vertices,
        triangles,
        labels: kept_labels,
        constraints,
    })
}

/// Builds the final mesh from kept triangles, with facets derived from the
/// triangle set and tagged from the constraint provenance.
fn finish(
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    constraints: Vec<ConstraintEdge>,
    opts: &MeshOptions,
    parent_map: Option<ParentMap>,
) -> Result<TriMesh, MeshError> {
    let owner = directed_edge_owner(&triangles);
    let source: HashMap<(usize, usize), &ConstraintEdge> =
        constraints.iter().map(|c| (key(c.vertices[0], c.vertices[1]), c)).collect();
    let mut facets = Vec::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if owner.contains_key(&(b, a)) {
                continue;
            }
            let c = source.get(&key(a, b)).ok_or_else(|| {
                MeshError::MeshFailure(format!("boundary edge ({a}, {b}) does not follow a boundary curve"))
            })?;
            let tag = match c.role {
                CurveRole::Cut | CurveRole::Fillet => FacetTag::ArtificialCut,
                CurveRole::Original if c.curve_support > 0.0 => FacetTag::OuterGamma0,
                CurveRole::Original => FacetTag::NearDegenerate,
            };
            facets.push(Facet {
                vertices: [a, b],
                triangle: t,
                tag,
            });
        }
    }
    let mesh = TriMesh {
        vertices,
        triangles,
        boundary_facets: facets,
        constraints,
        h_max: opts.h_max,
        grading_exponent: opts.grading,
        parent_map,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn region_pieces(region: &dyn Region) -> Vec<Piece> {
    region
        .segments()
        .into_iter()
        .map(|(_, _, s)| Piece {
            curve: s.curve.clone(),
            role: s.role,
        })
        .collect()
}

/// Triangulates a domain or cut domain with the default options.
pub fn triangulate(region: &dyn Region, h_max: f64, grading: f64) -> Result<TriMesh, MeshError> {
    triangulate_with(region, &MeshOptions::new(h_max, grading))
}

pub fn triangulate_with(region: &dyn Region, opts: &MeshOptions) -> Result<TriMesh, MeshError> {
    opts.validate()?;
    let mut pieces = region_pieces(region);
    // the origin must be a vertex whenever it is on the boundary
    pieces = split_pieces(pieces, &[[0.0, 0.0]]);
    let raw = generate(&pieces, region, &SingleRegion(region), opts)?;
    finish(raw.vertices, raw.triangles, raw.constraints, opts, None)
}

/// Splits circular-arc pieces at the given points when they lie on them.
fn split_pieces(pieces: Vec<Piece>, points: &[Point]) -> Vec<Piece> {
    let mut out = Vec::new();
    for p in pieces {
        let Some(arc) = p.curve.as_arc() else {
            out.push(p);
            continue;
        };
        let mut cuts: Vec<f64> = points
            .iter()
            .filter(|q| (dist(**q, arc.center) - arc.radius).abs() <= 1e-10)
            .filter_map(|q| arc.param_of_point(*q))
            .filter(|s| *s > 1e-12 && *s < 1.0 - 1e-12)
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut bounds = vec![0.0];
        bounds.extend(cuts);
        bounds.push(1.0);
        for w in bounds.windows(2) {
            out.push(Piece {
                curve: if w[0] == 0.0 && w[1] == 1.0 {
                    p.curve.clone()
                } else {
                    p.curve.sub_curve(w[0], w[1])
                },
                role: p.role,
            });
        }
    }
    out
}

/// The parent Ω mesh and the nested Ω_ε meshes, in the order of `epsilons`.
#[derive(Clone, Debug)]
pub struct EpsilonLadder {
    pub parent: TriMesh,
    pub cuts: Vec<CutDomainSpec>,
    pub meshes: Vec<TriMesh>,
}

impl EpsilonLadder {
    /// Points where the fillets meet ∂Ω tangentially.
    pub fn junction_points(&self) -> Vec<Point> {
        self.cuts
            .iter()
            .flat_map(|c| [c.blend_arcs[0].position(0.0), c.blend_arcs[1].position(1.0)])
            .collect()
    }
}

pub fn build_epsilon_ladder(
    domain: &DomainSpec,
    epsilons: &[f64],
    opts: &MeshOptions,
) -> Result<EpsilonLadder, MeshError> {
    opts.validate()?;
    if epsilons.is_empty() {
        return Err(MeshError::InvalidArgument("empty ε list".into()));
    }
    if epsilons.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(MeshError::InvalidArgument("ε list must be strictly descending".into()));
    }
    let cuts = epsilons
        .iter()
        .map(|&e| cut_domain(domain, e))
        .collect::<Result<Vec<_>, _>>()?;
    for i in 0..cuts.len() {
        for j in i + 1..cuts.len() {
            let (a, b) = (cuts[i].cut_radius, cuts[j].cut_radius);
            let h = opts.size([a.max(b), 0.0]);
            if (a - b).abs() < h {
                return Err(MeshError::LadderConflict { rho_a: a, rho_b: b, h });
            }
        }
    }
    let junctions: Vec<Point> = cuts
        .iter()
        .flat_map(|c| [c.blend_arcs[0].position(0.0), c.blend_arcs[1].position(1.0)])
        .chain(std::iter::once([0.0, 0.0]))
        .collect();
    let mut pieces = split_pieces(region_pieces(domain), &junctions);
    for c in &cuts {
        for s in c.cut_chain() {
            pieces.push(Piece {
                curve: s.curve,
                role: s.role,
            });
        }
    }
    let labeler = LadderRegions { parent: domain, cuts: &cuts };
    let raw = generate(&pieces, domain, &labeler, opts)?;

    // boundary of the parent: only Original pieces
    let parent_constraints: Vec<ConstraintEdge> = raw.constraints.clone();
    let parent = finish(raw.vertices.clone(), raw.triangles.clone(), parent_constraints, opts, None)?;

    let mut meshes = Vec::with_capacity(cuts.len());
    for (i, _) in cuts.iter().enumerate() {
        // cut i is contained in cuts 0..=i when ε descends, so points of Ω_εi
        // carry label ≥ cuts.len() - i
        let depth = cuts.len() - i;
        let keep: Vec<bool> = raw.labels.iter().map(|&l| l >= depth).collect();
        meshes.push(submesh(&parent, &keep, opts)?);
    }
    Ok(EpsilonLadder { parent, cuts, meshes })
}

/// Sub-mesh of the kept triangles, renumbered in increasing parent order.
pub fn submesh(parent: &TriMesh, keep: &[bool], opts: &MeshOptions) -> Result<TriMesh, MeshError> {
    let mut vmap = vec![usize::MAX; parent.vertices.len()];
    let mut used = vec![false; parent.vertices.len()];
    let mut triangle_map = Vec::new();
    for (t, tri) in parent.triangles.iter().enumerate() {
        if keep[t] {
            triangle_map.push(t);
            for &v in tri {
                used[v] = true;
            }
        }
    }
    if triangle_map.is_empty() {
        return Err(MeshError::MeshFailure("empty sub-mesh".into()));
    }
    let mut vertex_map = Vec::new();
    for (i, u) in used.iter().enumerate() {
        if *u {
            vmap[i] = vertex_map.len();
            vertex_map.push(i);
        }
    }
    let vertices = vertex_map.iter().map(|&i| parent.vertices[i]).collect();
    let triangles = triangle_map.iter().map(|&t| parent.triangles[t].map(|v| vmap[v])).collect();
    let constraints = parent
        .constraints
        .iter()
        .filter(|c| used[c.vertices[0]] && used[c.vertices[1]])
        .map(|c| ConstraintEdge {
            vertices: c.vertices.map(|v| vmap[v]),
            ..*c
        })
        .collect();
    finish(
        vertices,
        triangles,
        constraints,
        opts,
        Some(ParentMap {
            vertex_map,
            triangle_map,
        }),
    )
}

/// Extension by zero of a vertex vector of `child` to its parent mesh.
pub fn extend_by_zero(child: &TriMesh, values: &[f64], parent_len: usize) -> Result<Vec<f64>, MeshError> {
    let pm = child
        .parent_map
        .as_ref()
        .ok_or(MeshError::NoParentMap)?;
    let mut out = vec![0.0; parent_len];
    for (i, &p) in pm.vertex_map.iter().enumerate() {
        out[p] = values[i];
    }
    Ok(out)
}

/// Restriction of a parent vertex vector to `child`.
pub fn restrict(child: &TriMesh, parent_values: &[f64]) -> Result<Vec<f64>, MeshError> {
    let pm = child
        .parent_map
        .as_ref()
        .ok_or(MeshError::NoParentMap)?;
    Ok(pm.vertex_map.iter().map(|&p| parent_values[p]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_pinched_annulus, DomainSpec};

    fn fixture_mesh(h: f64) -> TriMesh {
        triangulate(&make_pinched_annulus(), h, 1.0).unwrap()
    }

    #[test]
    fn origin_is_a_vertex() {
        let m = fixture_mesh(0.1);
        let min_r = m.vertices.iter().map(|p| norm(*p)).fold(f64::INFINITY, f64::min);
        assert_eq!(min_r, 0.0);
        assert!(m.has_vertex_at_origin());
    }

    #[test]
    fn mesh_invariants_hold() {
        let m = fixture_mesh(0.1);
        m.validate().unwrap();
        assert!(m.min_angle_deg() >= MIN_ANGLE_DEG, "min angle {}", m.min_angle_deg());
        assert!(m.max_edge_length() <= 1.5 * m.h_max, "longest edge {}", m.max_edge_length());
        // total area matches the exact domain area up to chord error
        let area: f64 = (0..m.triangles.len()).map(|t| m.signed_area(t)).sum();
        let exact = std::f64::consts::PI * (4.0 - 0.0625);
        assert!((area - exact).abs() < 0.01 * exact, "area {area} vs {exact}");
    }

    #[test]
    fn facet_tags_follow_geometry() {
        let m = fixture_mesh(0.1);
        let mut n_outer = 0;
        for f in &m.boundary_facets {
            let (nu, _) = m.facet_normal(f);
            let mid = m.facet_midpoint(f);
            let support = mid[0] * nu[0] + mid[1] * nu[1];
            match f.tag {
                FacetTag::OuterGamma0 => {
                    n_outer += 1;
                    assert!(support > 0.0);
                    assert!((norm([mid[0], mid[1] - 1.0]) - 2.0).abs() < 0.01);
                }
                FacetTag::NearDegenerate => assert!(support <= 1e-15),
                FacetTag::ArtificialCut => panic!("uncut mesh has a cut facet"),
            }
        }
        assert!(n_outer > 100);
    }

    #[test]
    fn chord_tolerance_respected() {
        let m = fixture_mesh(0.1);
        let d = make_pinched_annulus();
        for f in &m.boundary_facets {
            let mid = m.facet_midpoint(f);
            assert!(d.distance_to_boundary(mid) <= 0.01 + 1e-15);
        }
    }

    #[test]
    fn cut_mesh_avoids_cut_ball() {
        let d = make_pinched_annulus();
        let cut = cut_domain(&d, 0.04).unwrap();
        let m = triangulate(&cut, 0.1, 1.0).unwrap();
        let min_r = m.vertices.iter().map(|p| norm(*p)).fold(f64::INFINITY, f64::min);
        assert!(min_r >= 0.06 - 1e-12, "vertex at |x| = {min_r}");
        assert!(!m.has_vertex_at_origin());
        for f in &m.boundary_facets {
            if f.tag == FacetTag::ArtificialCut {
                let (nu, _) = m.facet_normal(f);
                let mid = m.facet_midpoint(f);
                assert!(mid[0] * nu[0] + mid[1] * nu[1] < 0.0);
            }
        }
        assert!(m.boundary_facets.iter().any(|f| f.tag == FacetTag::ArtificialCut));
    }

    #[test]
    fn zero_h_is_mesh_failure() {
        let d = make_pinched_annulus();
        assert!(matches!(triangulate(&d, 0.0, 1.0), Err(MeshError::MeshFailure(_))));
        assert!(matches!(triangulate(&d, 0.1, 2.5), Err(MeshError::InvalidArgument(_))));
    }

    #[test]
    fn triangulation_is_deterministic() {
        assert_eq!(fixture_mesh(0.15).to_text(), fixture_mesh(0.15).to_text());
    }

    #[test]
    fn text_roundtrip() {
        let m = fixture_mesh(0.2);
        let back = TriMesh::from_text(&m.to_text()).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.triangles, m.triangles);
        assert_eq!(back.boundary_facets, m.boundary_facets);
    }

    fn check_nesting(parent: &TriMesh, child: &TriMesh) {
        let pm = child.parent_map.as_ref().unwrap();
        let mut seen = std::collections::HashSet::new();
        for (i, &p) in pm.vertex_map.iter().enumerate() {
            assert!(seen.insert(p), "vertex map not injective");
            assert_eq!(child.vertices[i], parent.vertices[p]);
        }
        let mut seen = std::collections::HashSet::new();
        for (t, &pt) in pm.triangle_map.iter().enumerate() {
            assert!(seen.insert(pt));
            assert_eq!(child.triangles[t].map(|v| pm.vertex_map[v]), parent.triangles[pt]);
        }
        assert!(pm.vertex_map.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn ladder_is_nested() {
        let d = make_pinched_annulus();
        let ladder = build_epsilon_ladder(&d, &[0.04, 0.02, 0.01], &MeshOptions::new(0.1, 1.0)).unwrap();
        assert_eq!(ladder.meshes.len(), 3);
        assert!(ladder.parent.has_vertex_at_origin());
        let mut prev_tris = 0;
        for (m, c) in ladder.meshes.iter().zip(&ladder.cuts) {
            check_nesting(&ladder.parent, m);
            let min_r = m.vertices.iter().map(|p| norm(*p)).fold(f64::INFINITY, f64::min);
            assert!(min_r >= c.cut_radius - 1e-12);
            assert!(m.triangles.len() > prev_tris, "smaller ε must keep more triangles");
            prev_tris = m.triangles.len();
            // every kept centroid is inside the cut domain
            for t in 0..m.triangles.len() {
                assert!(c.contains(m.centroid(t)));
            }
        }
        // parent triangles not in the coarsest cut mesh lie in B(0, 2ε)
        let kept: std::collections::HashSet<usize> =
            ladder.meshes[0].parent_map.as_ref().unwrap().triangle_map.iter().copied().collect();
        for t in 0..ladder.parent.triangles.len() {
            if !kept.contains(&t) {
                assert!(norm(ladder.parent.centroid(t)) < 0.08);
            }
        }
    }

    #[test]
    fn ladder_quality_outside_tangent_cusps() {
        let d = make_pinched_annulus();
        let opts = MeshOptions::new(0.1, 1.0);
        let ladder = build_epsilon_ladder(&d, &[0.04, 0.02, 0.01], &opts).unwrap();
        let js = ladder.junction_points();
        let m = &ladder.parent;
        for t in 0..m.triangles.len() {
            let c = m.centroid(t);
            if js.iter().all(|j| dist(*j, c) >= 3.0 * opts.size(*j)) {
                let a = triangle_min_angle(m.triangles[t].map(|i| m.vertices[i]));
                assert!(a >= MIN_ANGLE_DEG, "angle {a} at {c:?}");
            }
        }
        assert!(ladder.meshes[0].min_angle_deg() >= MIN_ANGLE_DEG);
    }

    #[test]
    fn single_epsilon_ladder() {
        let d = make_pinched_annulus();
        let ladder = build_epsilon_ladder(&d, &[0.03], &MeshOptions::new(0.2, 1.0)).unwrap();
        assert_eq!(ladder.meshes.len(), 1);
        check_nesting(&ladder.parent, &ladder.meshes[0]);
    }

    #[test]
    fn ladder_conflict_detected() {
        let d = make_pinched_annulus();
        let r = build_epsilon_ladder(&d, &[0.04, 0.0399], &MeshOptions::new(0.1, 1.0));
        assert!(matches!(r, Err(MeshError::LadderConflict { .. })), "{r:?}");
        let r = build_epsilon_ladder(&d, &[0.01, 0.02], &MeshOptions::new(0.1, 1.0));
        assert!(matches!(r, Err(MeshError::InvalidArgument(_))));
        let r = build_epsilon_ladder(&d, &[0.07], &MeshOptions::new(0.1, 1.0));
        assert!(matches!(r, Err(MeshError::Geometry(GeometryError::EpsilonTooLarge { .. }))));
    }

    #[test]
    fn extension_by_zero_roundtrip() {
        let d = make_pinched_annulus();
        let ladder = build_epsilon_ladder(&d, &[0.02], &MeshOptions::new(0.2, 1.0)).unwrap();
        let child = &ladder.meshes[0];
        let vals: Vec<f64> = (0..child.vertices.len()).map(|i| (i as f64).sin()).collect();
        let ext = extend_by_zero(child, &vals, ladder.parent.vertices.len()).unwrap();
        assert_eq!(restrict(child, &ext).unwrap(), vals);
        assert!(extend_by_zero(&ladder.parent, &vals, 3).is_err());
    }

    #[test]
    fn uniform_square_like_disk() {
        // a domain away from the origin works with grading 0
        let c = crate::geometry::CircularArc::full_circle([0.0, 1.0], 1.0, -std::f64::consts::FRAC_PI_2, crate::geometry::Orientation::Ccw);
        let d = DomainSpec::new(
            "disk",
            vec![crate::geometry::BoundaryLoop::new(vec![crate::geometry::Segment {
                curve: BoundaryCurve::CircularArc(c),
                role: CurveRole::Original,
            }])],
            0.0,
        )
        .unwrap();
        let m = triangulate(&d, 0.2, 0.0).unwrap();
        m.validate().unwrap();
        assert!(m.min_angle_deg() >= MIN_ANGLE_DEG);
    }
}
