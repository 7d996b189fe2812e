//! Admissible planar domains with a degenerate boundary point at the origin.
//!
//! Boundaries are loops of curve segments. Each loop is traversed with the
//! domain on its left, so the outward normal is the tangent rotated by -90°.
//! Circular arcs are the certified curve class; parametric C² curves are
//! accepted and handled by sampling only.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

pub type Point = [f64; 2];

/// Default floating-point allowance for the sign condition.
pub const DEFAULT_SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("DEGENERATE_POINT_OFF_BOUNDARY: origin is {distance:e} away from the boundary")]
    DegeneratePointOffBoundary { distance: f64 },
    #[error("EPSILON_TOO_LARGE: epsilon = {epsilon} must be below R0/8 = {limit}")]
    EpsilonTooLarge { epsilon: f64, limit: f64 },
    #[error("CUT_DISCONNECTS_DOMAIN: {0}")]
    CutDisconnectsDomain(String),
    #[error("GAMMA0_MEETS_DEGENERATE_BALL: observation arc reaches |x| = {min_radius} < R0 = {r0}")]
    Gamma0MeetsDegenerateBall { min_radius: f64, r0: f64 },
    #[error("invalid geometry argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Orientation {
    Ccw,
    Cw,
}

/// Arc of the circle `center + radius·(cos φ, sin φ)`, traversed from
/// `angle_start` to `angle_end`. CCW arcs have the domain inside the circle,
/// CW arcs have it outside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircularArc {
    pub center: Point,
    pub radius: f64,
    pub angle_start: f64,
    pub angle_end: f64,
    pub orientation: Orientation,
}

impl CircularArc {
    pub fn new(
        center: Point,
        radius: f64,
        angle_start: f64,
        angle_end: f64,
        orientation: Orientation,
    ) -> Result<Self, GeometryError> {
        let arc = Self {
            center,
            radius,
            angle_start,
            angle_end,
            orientation,
        };
        arc.validate()?;
        Ok(arc)
    }

    pub fn full_circle(center: Point, radius: f64, angle_start: f64, orientation: Orientation) -> Self {
        let angle_end = match orientation {
            Orientation::Ccw => angle_start + TAU,
            Orientation::Cw => angle_start - TAU,
        };
        Self {
            center,
            radius,
            angle_start,
            angle_end,
            orientation,
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(GeometryError::InvalidArgument(format!(
                "arc radius must be positive, got {}",
                self.radius
            )));
        }
        let sweep = self.sweep();
        let ok = match self.orientation {
            Orientation::Ccw => sweep > 0.0,
            Orientation::Cw => sweep < 0.0,
        };
        if !ok || sweep.abs() > TAU + 1e-12 {
            return Err(GeometryError::InvalidArgument(format!(
                "arc sweep {sweep} inconsistent with orientation {:?}",
                self.orientation
            )));
        }
        Ok(())
    }

    /// Signed angular sweep.
    pub fn sweep(&self) -> f64 {
        self.angle_end - self.angle_start
    }

    pub fn length(&self) -> f64 {
        self.radius * self.sweep().abs()
    }

    pub fn angle_at(&self, s: f64) -> f64 {
        self.angle_start + s * self.sweep()
    }

    pub fn position(&self, s: f64) -> Point {
        let phi = self.angle_at(s);
        [
            self.center[0] + self.radius * phi.cos(),
            self.center[1] + self.radius * phi.sin(),
        ]
    }

    /// Sub-arc for the parameter window `[s0, s1]`.
    pub fn sub_arc(&self, s0: f64, s1: f64) -> Self {
        Self {
            center: self.center,
            radius: self.radius,
            angle_start: self.angle_at(s0),
            angle_end: self.angle_at(s1),
            orientation: self.orientation,
        }
    }

    /// Parameter of the point of the circle at polar angle `phi` (about the
    /// center), if it lies on the arc. Returns values in `[0, 1]`.
    pub fn param_of_angle(&self, phi: f64) -> Option<f64> {
        let sweep = self.sweep();
        let offset = match self.orientation {
            Orientation::Ccw => (phi - self.angle_start).rem_euclid(TAU),
            Orientation::Cw => (self.angle_start - phi).rem_euclid(TAU),
        };
        let s = offset / sweep.abs();
        if s <= 1.0 + 1e-13 {
            Some(s.min(1.0))
        } else if (TAU - offset) < 1e-12 {
            // numerically at the start point
            Some(0.0)
        } else {
            None
        }
    }

    pub fn param_of_point(&self, p: Point) -> Option<f64> {
        let phi = (p[1] - self.center[1]).atan2(p[0] - self.center[0]);
        self.param_of_angle(phi)
    }

    fn distance(&self, p: Point) -> f64 {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let rho = d[0].hypot(d[1]);
        if rho > 0.0 && self.param_of_angle(d[1].atan2(d[0])).is_some() {
            return (rho - self.radius).abs();
        }
        if rho == 0.0 {
            return self.radius;
        }
        let a = self.position(0.0);
        let b = self.position(1.0);
        dist(p, a).min(dist(p, b))
    }

    /// Largest |x| over the arc (closed form).
    pub fn max_norm(&self) -> (f64, Point) {
        let cn = norm(self.center);
        let mut best = (norm(self.position(0.0)), self.position(0.0));
        let end = self.position(1.0);
        if norm(end) > best.0 {
            best = (norm(end), end);
        }
        if cn > 0.0 {
            let phi = self.center[1].atan2(self.center[0]);
            if let Some(s) = self.param_of_angle(phi) {
                let p = self.position(s);
                if norm(p) > best.0 {
                    best = (norm(p), p);
                }
            }
        } else {
            let p = self.position(0.5);
            best = (self.radius, p);
        }
        best
    }

    fn ray_crossings(&self, p: Point) -> usize {
        let dy = p[1] - self.center[1];
        if dy.abs() >= self.radius {
            return 0;
        }
        let dx = (self.radius * self.radius - dy * dy).sqrt();
        let mut count = 0;
        for xc in [self.center[0] - dx, self.center[0] + dx] {
            if xc > p[0] {
                let phi = dy.atan2(xc - self.center[0]);
                if let Some(s) = self.param_of_angle(phi) {
                    if s < 1.0 {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

/// Evaluator returning (position, first derivative, second derivative).
pub type CurveEval = Arc<dyn Fn(f64) -> (Point, Point, Point) + Send + Sync>;

/// Twice-differentiable parametric curve on `[t0, t1]`. With orientation
/// CCW the domain lies to the left of increasing `t`.
#[derive(Clone)]
pub struct ParametricCurve {
    pub label: String,
    pub t0: f64,
    pub t1: f64,
    pub orientation: Orientation,
    pub eval: CurveEval,
}

impl fmt::Debug for ParametricCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricCurve")
            .field("label", &self.label)
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("orientation", &self.orientation)
            .finish()
    }
}

impl PartialEq for ParametricCurve {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.t0 == other.t0
            && self.t1 == other.t1
            && self.orientation == other.orientation
            && Arc::ptr_eq(&self.eval, &other.eval)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryCurve {
    CircularArc(CircularArc),
    ParametricC2(ParametricCurve),
}

/// Point data of a curve at one parameter value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub position: Point,
    pub tangent: Point,
    pub normal: Point,
    pub curvature: f64,
}

impl BoundaryCurve {
    /// Evaluate at normalized parameter `s ∈ [0, 1]`, tangent in traversal
    /// direction, outward normal, signed curvature (positive when the domain
    /// is on the concave side).
    pub fn eval(&self, s: f64) -> CurvePoint {
        match self {
            BoundaryCurve::CircularArc(a) => {
                let phi = a.angle_at(s);
                let (sn, cs) = phi.sin_cos();
                let sign = match a.orientation {
                    Orientation::Ccw => 1.0,
                    Orientation::Cw => -1.0,
                };
                let tangent = [-sn * sign, cs * sign];
                CurvePoint {
                    position: a.position(s),
                    tangent,
                    normal: [tangent[1], -tangent[0]],
                    curvature: sign / a.radius,
                }
            }
            BoundaryCurve::ParametricC2(c) => {
                let t = c.t0 + s * (c.t1 - c.t0);
                let (p, d1, d2) = (c.eval)(t);
                let speed = norm(d1);
                let mut tangent = [d1[0] / speed, d1[1] / speed];
                let mut curvature = (d1[0] * d2[1] - d1[1] * d2[0]) / speed.powi(3);
                if c.orientation == Orientation::Cw {
                    tangent = [-tangent[0], -tangent[1]];
                    curvature = -curvature;
                }
                // tangent now follows the traversal, domain on its left
                let normal = [tangent[1], -tangent[0]];
                CurvePoint {
                    position: p,
                    tangent,
                    normal,
                    curvature,
                }
            }
        }
    }

    pub fn position(&self, s: f64) -> Point {
        match self {
            BoundaryCurve::CircularArc(a) => a.position(s),
            BoundaryCurve::ParametricC2(_) => self.eval(s).position,
        }
    }

    /// x·ν at parameter `s`.
    pub fn support(&self, s: f64) -> f64 {
        let cp = self.eval(s);
        dot(cp.position, cp.normal)
    }

    pub fn length(&self) -> f64 {
        match self {
            BoundaryCurve::CircularArc(a) => a.length(),
            BoundaryCurve::ParametricC2(_) => {
                let n = 512;
                (0..n)
                    .map(|i| {
                        dist(
                            self.position(i as f64 / n as f64),
                            self.position((i + 1) as f64 / n as f64),
                        )
                    })
                    .sum()
            }
        }
    }

    pub fn as_arc(&self) -> Option<&CircularArc> {
        match self {
            BoundaryCurve::CircularArc(a) => Some(a),
            BoundaryCurve::ParametricC2(_) => None,
        }
    }

    pub fn sub_curve(&self, s0: f64, s1: f64) -> Self {
        match self {
            BoundaryCurve::CircularArc(a) => BoundaryCurve::CircularArc(a.sub_arc(s0, s1)),
            BoundaryCurve::ParametricC2(c) => {
                let span = c.t1 - c.t0;
                BoundaryCurve::ParametricC2(ParametricCurve {
                    label: c.label.clone(),
                    t0: c.t0 + s0 * span,
                    t1: c.t0 + s1 * span,
                    orientation: c.orientation,
                    eval: Arc::clone(&c.eval),
                })
            }
        }
    }

    fn distance(&self, p: Point) -> f64 {
        match self {
            BoundaryCurve::CircularArc(a) => a.distance(p),
            BoundaryCurve::ParametricC2(_) => {
                let n = 1024;
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let a = self.position(i as f64 / n as f64);
                    let b = self.position((i + 1) as f64 / n as f64);
                    best = best.min(point_segment_distance(p, a, b));
                }
                best
            }
        }
    }

    fn ray_crossings(&self, p: Point) -> usize {
        match self {
            BoundaryCurve::CircularArc(a) => a.ray_crossings(p),
            BoundaryCurve::ParametricC2(_) => {
                let n = 1024;
                let mut count = 0;
                for i in 0..n {
                    let a = self.position(i as f64 / n as f64);
                    let b = self.position((i + 1) as f64 / n as f64);
                    if segment_ray_cross(p, a, b) {
                        count += 1;
                    }
                }
                count
            }
        }
    }
}

/// Provenance of a boundary segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CurveRole {
    /// Part of the original boundary ∂Ω.
    Original,
    /// The artificial arc |x| = 1.5ε.
    Cut,
    /// Tangent blend between the cut arc and ∂Ω.
    Fillet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub curve: BoundaryCurve,
    pub role: CurveRole,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryLoop {
    pub segments: Vec<Segment>,
}

impl BoundaryLoop {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    /// Largest gap between consecutive segment endpoints.
    pub fn closure_gap(&self) -> f64 {
        let n = self.segments.len();
        (0..n)
            .map(|i| {
                let end = self.segments[i].curve.position(1.0);
                let next = self.segments[(i + 1) % n].curve.position(0.0);
                dist(end, next)
            })
            .fold(0.0, f64::max)
    }
}

/// Anything bounded by curve loops: the original domain or a cut domain.
pub trait Region: Sync {
    fn loops(&self) -> &[BoundaryLoop];
    fn r0(&self) -> f64;
    fn name(&self) -> String;

    /// Even-odd containment test (open set: boundary points are undecided).
    fn contains(&self, p: Point) -> bool {
        let crossings: usize = self
            .loops()
            .iter()
            .flat_map(|l| l.segments.iter())
            .map(|s| s.curve.ray_crossings(p))
            .sum();
        crossings % 2 == 1
    }

    fn distance_to_boundary(&self, p: Point) -> f64 {
        self.loops()
            .iter()
            .flat_map(|l| l.segments.iter())
            .map(|s| s.curve.distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    fn segments(&self) -> Vec<(usize, usize, &Segment)> {
        self.loops()
            .iter()
            .enumerate()
            .flat_map(|(li, l)| l.segments.iter().enumerate().map(move |(si, s)| (li, si, s)))
            .collect()
    }
}

/// Sub-arc of ∂Ω where x·ν > 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Gamma0Arc {
    pub loop_index: usize,
    pub segment_index: usize,
    pub s_start: f64,
    pub s_end: f64,
    pub curve: BoundaryCurve,
}

#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub name: String,
    pub boundary_loops: Vec<BoundaryLoop>,
    pub r0: f64,
    /// sup |x| over Ω plus one.
    pub m: f64,
    pub gamma0: Vec<Gamma0Arc>,
}

impl DomainSpec {
    /// Builds a domain; M and Γ₀ are computed, the degenerate point is the
    /// origin. The Γ₀/ball clause is not enforced here (see
    /// [`certify_assumption`]).
    pub fn new(name: &str, boundary_loops: Vec<BoundaryLoop>, r0: f64) -> Result<Self, GeometryError> {
        if !(r0 >= 0.0) || !r0.is_finite() {
            return Err(GeometryError::InvalidArgument(format!("R0 must be >= 0, got {r0}")));
        }
        if boundary_loops.is_empty() || boundary_loops.iter().any(|l| l.segments.is_empty()) {
            return Err(GeometryError::InvalidArgument("empty boundary loop".into()));
        }
        for l in &boundary_loops {
            for s in &l.segments {
                if let BoundaryCurve::CircularArc(a) = &s.curve {
                    a.validate()?;
                }
            }
        }
        let mut domain = Self {
            name: name.to_string(),
            boundary_loops,
            r0,
            m: 0.0,
            gamma0: Vec::new(),
        };
        domain.m = sup_norm(&domain).0 + 1.0;
        domain.gamma0 = gamma0_arcs(&domain, 4096);
        Ok(domain)
    }

    /// A copy with a different sign-condition radius.
    pub fn with_r0(&self, r0: f64) -> Result<Self, GeometryError> {
        Self::new(&self.name, self.boundary_loops.clone(), r0)
    }
}

impl Region for DomainSpec {
    fn loops(&self) -> &[BoundaryLoop] {
        &self.boundary_loops
    }
    fn r0(&self) -> f64 {
        self.r0
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Ω_ε: the parent domain with a neighbourhood of the origin removed.
#[derive(Clone, Debug)]
pub struct CutDomainSpec {
    pub parent: DomainSpec,
    pub epsilon: f64,
    pub cut_radius: f64,
    pub fillet_radius: f64,
    pub cut_arc: CircularArc,
    pub blend_arcs: [CircularArc; 2],
    pub boundary_loops: Vec<BoundaryLoop>,
    /// Parent boundary pieces inside the removed region.
    pub removed_pieces: Vec<BoundaryCurve>,
    /// Index of the loop that was cut.
    pub cut_loop: usize,
}

impl Region for CutDomainSpec {
    fn loops(&self) -> &[BoundaryLoop] {
        &self.boundary_loops
    }
    fn r0(&self) -> f64 {
        self.parent.r0
    }
    fn name(&self) -> String {
        format!("{}_eps{}", self.parent.name, self.epsilon)
    }
}

impl CutDomainSpec {
    /// The chain fillet → cut arc → fillet, in traversal order.
    pub fn cut_chain(&self) -> Vec<Segment> {
        vec![
            Segment {
                curve: BoundaryCurve::CircularArc(self.blend_arcs[0].clone()),
                role: CurveRole::Fillet,
            },
            Segment {
                curve: BoundaryCurve::CircularArc(self.cut_arc.clone()),
                role: CurveRole::Cut,
            },
            Segment {
                curve: BoundaryCurve::CircularArc(self.blend_arcs[1].clone()),
                role: CurveRole::Fillet,
            },
        ]
    }

    /// Whether `p` lies in the removed set Ω − Ω_ε (closure-insensitive).
    pub fn in_removed_region(&self, p: Point) -> bool {
        self.parent.contains(p) && !self.contains(p)
    }
}

// ---------------------------------------------------------------------------
// fixtures

/// Outer circle B((0,1),2) minus the closed disk B̄((0,0.25),0.25), which
/// touches the origin from above. R0 = 0.5.
pub fn make_pinched_annulus() -> DomainSpec {
    let outer = CircularArc::full_circle([0.0, 1.0], 2.0, -PI / 2.0, Orientation::Ccw);
    // starts at the origin, heads left, CW around the hole
    let inner = CircularArc::full_circle([0.0, 0.25], 0.25, -PI / 2.0, Orientation::Cw);
    DomainSpec::new(
        "pinched_annulus",
        vec![
            BoundaryLoop::new(vec![Segment {
                curve: BoundaryCurve::CircularArc(outer),
                role: CurveRole::Original,
            }]),
            BoundaryLoop::new(vec![Segment {
                curve: BoundaryCurve::CircularArc(inner),
                role: CurveRole::Original,
            }]),
        ],
        0.5,
    )
    .expect("pinched annulus fixture is valid")
}

/// The disk B((0,1),1) whose boundary passes through the origin with the
/// wrong curvature sign: the counterexample to the sign condition.
pub fn make_convex_disk() -> DomainSpec {
    let circle = CircularArc::full_circle([0.0, 1.0], 1.0, -PI / 2.0, Orientation::Ccw);
    DomainSpec::new(
        "convex_disk",
        vec![BoundaryLoop::new(vec![Segment {
            curve: BoundaryCurve::CircularArc(circle),
            role: CurveRole::Original,
        }])],
        0.5,
    )
    .expect("convex disk fixture is valid")
}

pub fn fixture_by_name(name: &str) -> Option<DomainSpec> {
    match name {
        "pinched_annulus" => Some(make_pinched_annulus()),
        "convex_disk" => Some(make_convex_disk()),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// sampling helpers

/// Deterministic parameter-uniform samples: `(loop, segment, s)` triples,
/// distributed over segments proportionally to length.
pub fn boundary_samples(region: &dyn Region, samples: usize) -> Vec<(usize, usize, f64)> {
    let segs = region.segments();
    let lengths: Vec<f64> = segs.iter().map(|(_, _, s)| s.curve.length()).collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(samples + 2 * segs.len());
    for ((li, si, _), len) in segs.iter().zip(&lengths) {
        let n = ((samples as f64) * len / total).ceil().max(16.0) as usize;
        for k in 0..=n {
            out.push((*li, *si, k as f64 / n as f64));
        }
    }
    out
}

fn segment_at<'a>(region: &'a dyn Region, li: usize, si: usize) -> &'a Segment {
    &region.loops()[li].segments[si]
}

/// sup |x| over the boundary with its location.
pub fn sup_norm(region: &dyn Region) -> (f64, Point) {
    let mut best = (0.0, [0.0, 0.0]);
    for (_, _, seg) in region.segments() {
        let cand = match &seg.curve {
            BoundaryCurve::CircularArc(a) => a.max_norm(),
            c @ BoundaryCurve::ParametricC2(_) => {
                let f = |s: f64| norm(c.position(s));
                let (s, v) = sampled_max(f, 4096);
                (v, c.position(s))
            }
        };
        if cand.0 > best.0 {
            best = cand;
        }
    }
    best
}

/// Maximum of `f` on [0,1]: uniform sampling then golden-section refinement
/// around the best sample.
pub fn sampled_max(f: impl Fn(f64) -> f64, n: usize) -> (f64, f64) {
    let mut best_k = 0;
    let mut best_v = f64::NEG_INFINITY;
    for k in 0..=n {
        let v = f(k as f64 / n as f64);
        if v > best_v {
            best_v = v;
            best_k = k;
        }
    }
    let lo = (best_k.saturating_sub(1)) as f64 / n as f64;
    let hi = ((best_k + 1).min(n)) as f64 / n as f64;
    let (s, v) = golden_max(&f, lo, hi, 1e-13);
    if v > best_v {
        (s, v)
    } else {
        (best_k as f64 / n as f64, best_v)
    }
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let s = 0.5 * (a + b);
    (s, f(s))
}

// ---------------------------------------------------------------------------
// certification

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub clause: String,
    pub pass: bool,
    pub worst_value: Option<f64>,
    pub worst_location: Option<Point>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationResult {
    pub domain: String,
    pub samples: usize,
    pub sign_tol: f64,
    pub pass: bool,
    pub clauses: Vec<ClauseResult>,
}

impl CertificationResult {
    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.clause == name)
    }

    pub fn failed_clauses(&self) -> Vec<&str> {
        self.clauses.iter().filter(|c| !c.pass).map(|c| c.clause.as_str()).collect()
    }
}

pub const CLAUSE_DEGENERATE_POINT: &str = "degenerate_point_on_one_loop";
pub const CLAUSE_SIGN: &str = "sign_condition_near_origin";
pub const CLAUSE_GAMMA0: &str = "gamma0_outside_ball";
pub const CLAUSE_M: &str = "m_bound";
pub const CLAUSE_CLOSED: &str = "loops_closed";

/// Checks the geometric hypotheses by deterministic dense sampling.
pub fn certify_assumption(
    domain: &DomainSpec,
    samples: usize,
    sign_tol: f64,
) -> Result<CertificationResult, GeometryError> {
    if samples < 1000 {
        return Err(GeometryError::InvalidArgument(format!(
            "certification needs at least 1000 samples, got {samples}"
        )));
    }
    if !(sign_tol >= 0.0) {
        return Err(GeometryError::InvalidArgument("sign_tol must be >= 0".into()));
    }
    let origin = [0.0, 0.0];
    let loop_dist: Vec<f64> = domain
        .boundary_loops
        .iter()
        .map(|l| {
            l.segments
                .iter()
                .map(|s| s.curve.distance(origin))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let min_dist = loop_dist.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_dist > sign_tol {
        return Err(GeometryError::DegeneratePointOffBoundary { distance: min_dist });
    }
    let touching = loop_dist.iter().filter(|d| **d <= sign_tol).count();
    let mut clauses = vec![ClauseResult {
        clause: CLAUSE_DEGENERATE_POINT.into(),
        pass: touching == 1,
        worst_value: Some(min_dist),
        worst_location: Some(origin),
    }];

    let pts = boundary_samples(domain, samples);
    let r0 = domain.r0;

    // sign condition on ∂Ω ∩ B(0, R0)
    let mut worst_sign: Option<(f64, Point)> = None;
    let mut consider = |v: f64, p: Point| {
        if worst_sign.map_or(true, |(w, _)| v > w) {
            worst_sign = Some((v, p));
        }
    };
    for &(li, si, s) in &pts {
        let seg = segment_at(domain, li, si);
        let cp = seg.curve.eval(s);
        if norm(cp.position) < r0 {
            consider(dot(cp.position, cp.normal), cp.position);
        }
    }
    // refine every sampled local maximum inside the ball
    for w in pts.windows(3) {
        let (l0, s0i, a) = w[0];
        let (l1, s1i, b) = w[1];
        let (l2, s2i, c) = w[2];
        if !(l0 == l1 && l1 == l2 && s0i == s1i && s1i == s2i) {
            continue;
        }
        let seg = segment_at(domain, l1, s1i);
        let fb = seg.curve.support(b);
        if fb >= seg.curve.support(a) && fb >= seg.curve.support(c) {
            let f = |s: f64| {
                let cp = seg.curve.eval(s);
                if norm(cp.position) < r0 {
                    dot(cp.position, cp.normal)
                } else {
                    f64::NEG_INFINITY
                }
            };
            let (s, v) = golden_max(&f, a, c, 1e-14);
            if v.is_finite() {
                consider(v, seg.curve.position(s));
            }
        }
    }
    clauses.push(match worst_sign {
        Some((v, p)) => ClauseResult {
            clause: CLAUSE_SIGN.into(),
            pass: v <= sign_tol,
            worst_value: Some(v),
            worst_location: Some(p),
        },
        None => ClauseResult {
            clause: CLAUSE_SIGN.into(),
            pass: true,
            worst_value: None,
            worst_location: None,
        },
    });

    // Γ₀ ∩ B(0, R0) = ∅
    let mut closest: Option<(f64, Point)> = None;
    for &(li, si, s) in &pts {
        let cp = segment_at(domain, li, si).curve.eval(s);
        if dot(cp.position, cp.normal) > sign_tol {
            let r = norm(cp.position);
            if closest.map_or(true, |(c, _)| r < c) {
                closest = Some((r, cp.position));
            }
        }
    }
    clauses.push(match closest {
        Some((r, p)) => ClauseResult {
            clause: CLAUSE_GAMMA0.into(),
            pass: r >= r0,
            worst_value: Some(r),
            worst_location: Some(p),
        },
        None => ClauseResult {
            clause: CLAUSE_GAMMA0.into(),
            pass: true,
            worst_value: None,
            worst_location: None,
        },
    });

    // M ≥ sup|x| + 1, sampled independently of the closed form used for M
    let mut sampled_sup = (0.0, origin);
    for &(li, si, s) in &pts {
        let p = segment_at(domain, li, si).curve.position(s);
        if norm(p) > sampled_sup.0 {
            sampled_sup = (norm(p), p);
        }
    }
    let margin = domain.m - (sampled_sup.0 + 1.0);
    clauses.push(ClauseResult {
        clause: CLAUSE_M.into(),
        pass: margin >= -1e-9,
        worst_value: Some(margin),
        worst_location: Some(sampled_sup.1),
    });

    let gap = domain
        .boundary_loops
        .iter()
        .map(|l| l.closure_gap())
        .fold(0.0, f64::max);
    clauses.push(ClauseResult {
        clause: CLAUSE_CLOSED.into(),
        pass: gap <= 1e-9,
        worst_value: Some(gap),
        worst_location: None,
    });

    let pass = clauses.iter().all(|c| c.pass);
    Ok(CertificationResult {
        domain: domain.name.clone(),
        samples,
        sign_tol,
        pass,
        clauses,
    })
}

// ---------------------------------------------------------------------------
// Γ₀

/// Sub-arcs with x·ν > 0 without the ball check.
pub fn gamma0_arcs(region: &dyn Region, samples: usize) -> Vec<Gamma0Arc> {
    let mut out = Vec::new();
    let segs = region.segments();
    let lengths: Vec<f64> = segs.iter().map(|(_, _, s)| s.curve.length()).collect();
    let total: f64 = lengths.iter().sum();
    for ((li, si, seg), len) in segs.iter().zip(lengths) {
        let n = ((samples as f64) * len / total).ceil().max(16.0) as usize;
        let f = |s: f64| seg.curve.support(s);
        let vals: Vec<f64> = (0..=n).map(|k| f(k as f64 / n as f64)).collect();
        let mut k = 0;
        while k <= n {
            if vals[k] > 0.0 {
                let start_k = k;
                while k < n && vals[k + 1] > 0.0 {
                    k += 1;
                }
                let end_k = k;
                let s_start = if start_k == 0 {
                    0.0
                } else {
                    bisect_sign(&f, (start_k - 1) as f64 / n as f64, start_k as f64 / n as f64)
                };
                let s_end = if end_k == n {
                    1.0
                } else {
                    bisect_sign(&f, end_k as f64 / n as f64, (end_k + 1) as f64 / n as f64)
                };
                if s_end > s_start {
                    out.push(Gamma0Arc {
                        loop_index: *li,
                        segment_index: *si,
                        s_start,
                        s_end,
                        curve: seg.curve.sub_curve(s_start, s_end),
                    });
                }
            }
            k += 1;
        }
    }
    out
}

/// Root of `f` in [a, b] where signs differ, to 1e-10 in parameter.
fn bisect_sign(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    while b - a > 1e-10 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == fa_pos {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Observation boundary Γ₀, checked to stay outside B(0, R0).
pub fn compute_gamma0(region: &dyn Region, samples: usize) -> Result<Vec<Gamma0Arc>, GeometryError> {
    if samples < 1000 {
        return Err(GeometryError::InvalidArgument(format!(
            "Γ₀ extraction needs at least 1000 samples, got {samples}"
        )));
    }
    let arcs = gamma0_arcs(region, samples);
    let r0 = region.r0();
    for arc in &arcs {
        let min_r = (0..=256)
            .map(|k| norm(arc.curve.position(k as f64 / 256.0)))
            .fold(f64::INFINITY, f64::min);
        if min_r < r0 {
            return Err(GeometryError::Gamma0MeetsDegenerateBall { min_radius: min_r, r0 });
        }
    }
    Ok(arcs)
}

/// Original-boundary arcs clipped to |x| ≥ r. Used for the structural
/// equality of ∂Ω_ε and ∂Ω away from the origin.
pub fn far_boundary(region: &dyn Region, r: f64) -> Vec<CircularArc> {
    let mut out = Vec::new();
    for (_, _, seg) in region.segments() {
        if seg.role != CurveRole::Original {
            continue;
        }
        let Some(arc) = seg.curve.as_arc() else { continue };
        // (parameter, exact intersection point if this is a clip point)
        let mut cuts: Vec<(f64, Option<Point>)> = vec![(0.0, None), (1.0, None)];
        for p in circle_intersections(arc.center, arc.radius, [0.0, 0.0], r) {
            if let Some(s) = arc.param_of_point(p) {
                cuts.push((s, Some(p)));
            }
        }
        cuts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in cuts.windows(2) {
            if w[1].0 - w[0].0 < 1e-12 {
                continue;
            }
            let mid = arc.position(0.5 * (w[0].0 + w[1].0));
            if norm(mid) >= r {
                out.push(arc_clip(arc, w[0], w[1]));
            }
        }
    }
    out
}

/// Clipped sub-arc. Clip-point angles come from atan2 of the intersection
/// point, so equal circles clipped at equal points give identical arcs.
fn arc_clip(arc: &CircularArc, a: (f64, Option<Point>), b: (f64, Option<Point>)) -> CircularArc {
    if a.1.is_none() && b.1.is_none() {
        return arc.sub_arc(a.0, b.0);
    }
    let angle = |end: (f64, Option<Point>)| match end.1 {
        Some(p) => (p[1] - arc.center[1]).atan2(p[0] - arc.center[0]),
        None => arc.angle_at(end.0),
    };
    let start = angle(a);
    let mut stop = angle(b);
    let step = match arc.orientation {
        Orientation::Ccw => TAU,
        Orientation::Cw => -TAU,
    };
    while (stop - start) * step.signum() <= 0.0 {
        stop += step;
    }
    while (stop - start).abs() > TAU {
        stop -= step;
    }
    CircularArc {
        angle_start: start,
        angle_end: stop,
        ..arc.clone()
    }
}

// ---------------------------------------------------------------------------
// cut domains

/// Removes B(0, 1.5ε) ∩ Ω and blends the cut arc into ∂Ω with fillets of
/// radius 0.25ε.
pub fn cut_domain(domain: &DomainSpec, epsilon: f64) -> Result<CutDomainSpec, GeometryError> {
    if !(epsilon > 0.0) {
        return Err(GeometryError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let limit = domain.r0 / 8.0;
    if epsilon >= limit {
        return Err(GeometryError::EpsilonTooLarge { epsilon, limit });
    }
    let rho = 1.5 * epsilon;
    let rf = 0.25 * epsilon;
    let origin = [0.0, 0.0];

    let loop_index = domain
        .boundary_loops
        .iter()
        .position(|l| l.segments.iter().any(|s| s.curve.distance(origin) <= 1e-9))
        .ok_or(GeometryError::DegeneratePointOffBoundary {
            distance: domain.distance_to_boundary(origin),
        })?;
    for (li, l) in domain.boundary_loops.iter().enumerate() {
        if li != loop_index
            && l.segments.iter().any(|s| s.curve.distance(origin) <= 2.0 * epsilon)
        {
            return Err(GeometryError::CutDisconnectsDomain(format!(
                "loop {li} enters B(0, 2ε)"
            )));
        }
    }
    let lp = &domain.boundary_loops[loop_index];
    let nseg = lp.segments.len();

    // crossings of |x| = rho with the loop
    let mut crossings: Vec<(usize, f64, Point)> = Vec::new();
    for (si, seg) in lp.segments.iter().enumerate() {
        let arc = seg.curve.as_arc().ok_or_else(|| {
            GeometryError::InvalidArgument("cutting requires circular-arc segments near the origin".into())
        })?;
        for p in circle_intersections(arc.center, arc.radius, origin, rho) {
            if let Some(s) = arc.param_of_point(p) {
                if !crossings.iter().any(|(_, _, q)| dist(*q, p) < 1e-14) {
                    crossings.push((si, s, p));
                }
            }
        }
    }
    if crossings.len() != 2 {
        return Err(GeometryError::CutDisconnectsDomain(format!(
            "cut circle meets the degenerate loop {} times (expected 2)",
            crossings.len()
        )));
    }
    // the origin's position along the loop
    let (o_seg, o_s) = lp
        .segments
        .iter()
        .enumerate()
        .find_map(|(si, s)| {
            let a = s.curve.as_arc()?;
            if a.distance(origin) <= 1e-9 {
                a.param_of_point(origin).map(|t| (si, t))
            } else {
                None
            }
        })
        .ok_or_else(|| GeometryError::InvalidArgument("origin not on an arc".into()))?;

    // order along the loop: position = seg + s
    let pos = |si: usize, s: f64| si as f64 + s;
    let o_pos = pos(o_seg, o_s);
    let c0 = pos(crossings[0].0, crossings[0].1);
    let c1 = pos(crossings[1].0, crossings[1].1);
    // removed portion runs from `enter` to `leave` (cyclically) through the origin
    let fwd = |from: f64, to: f64| (to - from).rem_euclid(nseg as f64);
    let (enter, leave) = if fwd(c0, o_pos) <= fwd(c0, c1) {
        (crossings[0], crossings[1])
    } else {
        (crossings[1], crossings[0])
    };

    let seg_arc = |si: usize| lp.segments[si].curve.as_arc().unwrap();

    // fillet tangent to the arc carrying `cross` and externally to |x| = rho
    let fillet = |cross: (usize, f64, Point)| -> Result<(Point, Point, f64), GeometryError> {
        let arc = seg_arc(cross.0);
        let dist_to_center = match arc.orientation {
            Orientation::Cw => arc.radius + rf,
            Orientation::Ccw => arc.radius - rf,
        };
        let cands = circle_intersections(origin, rho + rf, arc.center, dist_to_center);
        let c = cands
            .into_iter()
            .min_by(|a, b| dist(*a, cross.2).partial_cmp(&dist(*b, cross.2)).unwrap())
            .ok_or_else(|| GeometryError::CutDisconnectsDomain("no fillet circle exists".into()))?;
        let d = [c[0] - arc.center[0], c[1] - arc.center[1]];
        let dn = norm(d);
        let t_arc = [arc.center[0] + arc.radius * d[0] / dn, arc.center[1] + arc.radius * d[1] / dn];
        let cn = norm(c);
        let t_cut = [rho * c[0] / cn, rho * c[1] / cn];
        let s_arc = arc
            .param_of_point(t_arc)
            .ok_or_else(|| GeometryError::CutDisconnectsDomain("fillet leaves its arc".into()))?;
        Ok((c, t_cut, s_arc))
    };

    let (c_in, tcut_in, s_in) = fillet(enter)?;
    let (c_out, tcut_out, s_out) = fillet(leave)?;
    // the tangent point on the entering arc precedes the crossing
    let s_in = if s_in > enter.1 + 1e-12 { s_in - 1.0 } else { s_in };
    let s_out = if s_out < leave.1 - 1e-12 { s_out + 1.0 } else { s_out };
    if !(0.0..=1.0).contains(&s_in) || !(0.0..=1.0).contains(&s_out) {
        return Err(GeometryError::CutDisconnectsDomain(
            "fillet tangent point falls on a neighbouring segment".into(),
        ));
    }

    let fillet_arc = |c: Point, from: Point, to: Point| -> Result<CircularArc, GeometryError> {
        let a0 = (from[1] - c[1]).atan2(from[0] - c[0]);
        let mut a1 = (to[1] - c[1]).atan2(to[0] - c[0]);
        while a1 <= a0 {
            a1 += TAU;
        }
        if a1 - a0 >= PI {
            return Err(GeometryError::CutDisconnectsDomain("reflex corner cannot be filleted".into()));
        }
        CircularArc::new(c, rf, a0, a1, Orientation::Ccw)
    };
    let t_in_arc = seg_arc(enter.0).position(s_in);
    let t_out_arc = seg_arc(leave.0).position(s_out);
    let blend_in = fillet_arc(c_in, t_in_arc, tcut_in)?;
    let blend_out = fillet_arc(c_out, tcut_out, t_out_arc)?;
    let cut_start = tcut_in[1].atan2(tcut_in[0]);
    let mut cut_end = tcut_out[1].atan2(tcut_out[0]);
    while cut_end >= cut_start {
        cut_end -= TAU;
    }
    let cut_arc = CircularArc::new(origin, rho, cut_start, cut_end, Orientation::Cw)?;

    // kept portion: from (leave.seg, s_out) forward to (enter.seg, s_in)
    let mut kept: Vec<Segment> = Vec::new();
    let mut removed: Vec<BoundaryCurve> = Vec::new();
    let piece = |si: usize, a: f64, b: f64| Segment {
        curve: BoundaryCurve::CircularArc(seg_arc(si).sub_arc(a, b)),
        role: lp.segments[si].role,
    };
    if leave.0 == enter.0 && s_out < s_in {
        kept.push(piece(leave.0, s_out, s_in));
        if s_out > 0.0 {
            removed.push(piece(leave.0, 0.0, s_out).curve);
        }
        if s_in < 1.0 {
            removed.push(piece(enter.0, s_in, 1.0).curve);
        }
    } else {
        kept.push(piece(leave.0, s_out, 1.0));
        let mut si = (leave.0 + 1) % nseg;
        while si != enter.0 {
            kept.push(lp.segments[si].clone());
            si = (si + 1) % nseg;
        }
        kept.push(piece(enter.0, 0.0, s_in));
        removed.push(piece(enter.0, s_in, 1.0).curve);
        let mut si = (enter.0 + 1) % nseg;
        while si != leave.0 {
            removed.push(lp.segments[si].curve.clone());
            si = (si + 1) % nseg;
        }
        removed.push(piece(leave.0, 0.0, s_out).curve);
    }
    kept.push(Segment {
        curve: BoundaryCurve::CircularArc(blend_in.clone()),
        role: CurveRole::Fillet,
    });
    kept.push(Segment {
        curve: BoundaryCurve::CircularArc(cut_arc.clone()),
        role: CurveRole::Cut,
    });
    kept.push(Segment {
        curve: BoundaryCurve::CircularArc(blend_out.clone()),
        role: CurveRole::Fillet,
    });

    let mut loops = domain.boundary_loops.clone();
    loops[loop_index] = BoundaryLoop::new(kept);

    let cut = CutDomainSpec {
        parent: domain.clone(),
        epsilon,
        cut_radius: rho,
        fillet_radius: rf,
        cut_arc,
        blend_arcs: [blend_in, blend_out],
        boundary_loops: loops,
        removed_pieces: removed,
        cut_loop: loop_index,
    };
    verify_cut(&cut)?;
    Ok(cut)
}

/// Sampling check of the containment and sign clauses of a cut domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutDiagnostics {
    /// min |x| over ∂Ω_ε (must be ≥ ε).
    pub min_boundary_radius: f64,
    /// max |x| over the boundary of the removed set (must be ≤ 2ε).
    pub max_removed_radius: f64,
    /// max x·ν over ∂Ω_ε ∩ B(0, R0).
    pub max_support_near: f64,
    pub loop_gap: f64,
}

pub fn cut_diagnostics(cut: &CutDomainSpec, samples: usize) -> CutDiagnostics {
    let mut min_r = f64::INFINITY;
    let mut max_sup = f64::NEG_INFINITY;
    for (li, si, s) in boundary_samples(cut, samples) {
        let cp = segment_at(cut, li, si).curve.eval(s);
        let r = norm(cp.position);
        min_r = min_r.min(r);
        if r < cut.parent.r0 {
            max_sup = max_sup.max(dot(cp.position, cp.normal));
        }
    }
    let mut max_removed = 0.0f64;
    let chain = cut.cut_chain();
    let removed_boundary = cut.removed_pieces.iter().chain(chain.iter().map(|s| &s.curve));
    for c in removed_boundary {
        for k in 0..=512 {
            max_removed = max_removed.max(norm(c.position(k as f64 / 512.0)));
        }
    }
    CutDiagnostics {
        min_boundary_radius: min_r,
        max_removed_radius: max_removed,
        max_support_near: max_sup,
        loop_gap: cut.boundary_loops.iter().map(|l| l.closure_gap()).fold(0.0, f64::max),
    }
}

fn verify_cut(cut: &CutDomainSpec) -> Result<(), GeometryError> {
    let d = cut_diagnostics(cut, 8192);
    let eps = cut.epsilon;
    if d.min_boundary_radius < eps || cut.contains([0.0, 0.0]) {
        return Err(GeometryError::CutDisconnectsDomain(format!(
            "cut boundary reaches |x| = {} < ε",
            d.min_boundary_radius
        )));
    }
    if d.max_removed_radius >= 2.0 * eps {
        return Err(GeometryError::CutDisconnectsDomain(format!(
            "removed set reaches |x| = {} ≥ 2ε",
            d.max_removed_radius
        )));
    }
    if d.loop_gap > 1e-9 {
        return Err(GeometryError::CutDisconnectsDomain(format!("open loop, gap {}", d.loop_gap)));
    }
    if d.max_support_near > DEFAULT_SIGN_TOL {
        return Err(GeometryError::CutDisconnectsDomain(format!(
            "sign condition violated on the cut boundary: x·ν = {}",
            d.max_support_near
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// domain description files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcDescription {
    pub kind: String,
    pub center: Point,
    pub radius: f64,
    pub angle_start: f64,
    pub angle_end: f64,
    pub orientation: Orientation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainDescription {
    pub name: String,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub loops: Vec<Vec<ArcDescription>>,
}

impl DomainDescription {
    pub fn from_domain(domain: &DomainSpec) -> Option<Self> {
        let loops = domain
            .boundary_loops
            .iter()
            .map(|l| {
                l.segments
                    .iter()
                    .map(|s| {
                        s.curve.as_arc().map(|a| ArcDescription {
                            kind: "CIRCULAR_ARC".into(),
                            center: a.center,
                            radius: a.radius,
                            angle_start: a.angle_start,
                            angle_end: a.angle_end,
                            orientation: a.orientation,
                        })
                    })
                    .collect::<Option<Vec<_>>>()
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            name: domain.name.clone(),
            r0: domain.r0,
            loops,
        })
    }

    pub fn build(&self) -> Result<DomainSpec, GeometryError> {
        let loops = self
            .loops
            .iter()
            .map(|l| {
                l.iter()
                    .map(|a| {
                        if a.kind != "CIRCULAR_ARC" {
                            return Err(GeometryError::InvalidArgument(format!(
                                "unsupported curve kind {} in domain file",
                                a.kind
                            )));
                        }
                        Ok(Segment {
                            curve: BoundaryCurve::CircularArc(CircularArc::new(
                                a.center,
                                a.radius,
                                a.angle_start,
                                a.angle_end,
                                a.orientation,
                            )?),
                            role: CurveRole::Original,
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(BoundaryLoop::new)
            })
            .collect::<Result<Vec<_>, _>>()?;
        DomainSpec::new(&self.name, loops, self.r0)
    }
}

// ---------------------------------------------------------------------------
// small vector helpers

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(ap, ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

fn segment_ray_cross(p: Point, a: Point, b: Point) -> bool {
    if (a[1] > p[1]) == (b[1] > p[1]) {
        return false;
    }
    let t = (p[1] - a[1]) / (b[1] - a[1]);
    a[0] + t * (b[0] - a[0]) > p[0]
}

/// Intersection points of two circles (0, 1 or 2 points).
pub fn circle_intersections(c0: Point, r0: f64, c1: Point, r1: f64) -> Vec<Point> {
    let d = dist(c0, c1);
    if d == 0.0 || d > r0 + r1 || d < (r0 - r1).abs() {
        return Vec::new();
    }
    let a = (r0 * r0 - r1 * r1 + d * d) / (2.0 * d);
    let h2 = r0 * r0 - a * a;
    let h = if h2 > 0.0 { h2.sqrt() } else { 0.0 };
    let u = [(c1[0] - c0[0]) / d, (c1[1] - c0[1]) / d];
    let m = [c0[0] + a * u[0], c0[1] + a * u[1]];
    if h == 0.0 {
        return vec![m];
    }
    vec![
        [m[0] - h * u[1], m[1] + h * u[0]],
        [m[0] + h * u[1], m[1] - h * u[0]],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinched_annulus_support_closed_forms() {
        let d = make_pinched_annulus();
        let outer = &d.boundary_loops[0].segments[0].curve;
        let inner = &d.boundary_loops[1].segments[0].curve;
        for k in 0..=10_000 {
            let s = k as f64 / 10_000.0;
            let p = inner.position(s);
            assert!((inner.support(s) + p[1]).abs() < 1e-14);
            let q = outer.position(s);
            let v = outer.support(s);
            assert!((v - (3.0 + q[1]) / 2.0).abs() < 1e-13);
            assert!(v >= 1.0 - 1e-13);
        }
    }

    #[test]
    fn pinched_annulus_m_is_four() {
        let d = make_pinched_annulus();
        assert!((d.m - 4.0).abs() < 1e-14);
        // brute force over samples
        let brute = boundary_samples(&d, 100_000)
            .into_iter()
            .map(|(l, s, t)| norm(d.boundary_loops[l].segments[s].curve.position(t)))
            .fold(0.0, f64::max);
        assert!((brute - 3.0).abs() < 1e-8);
        assert_eq!(d.r0, 0.5);
    }

    #[test]
    fn certification_of_fixture_passes() {
        let d = make_pinched_annulus();
        let cert = certify_assumption(&d, 10_000, DEFAULT_SIGN_TOL).unwrap();
        assert!(cert.pass, "{cert:?}");
        let sign = cert.clause(CLAUSE_SIGN).unwrap();
        let worst = sign.worst_value.unwrap();
        assert!(worst.abs() <= 1e-12, "worst x·ν = {worst}");
        assert!(norm(sign.worst_location.unwrap()) < 1e-6);
    }

    #[test]
    fn convex_disk_fails_sign_clause() {
        let d = make_convex_disk();
        let cert = certify_assumption(&d, 10_000, DEFAULT_SIGN_TOL).unwrap();
        assert!(!cert.pass);
        let sign = cert.clause(CLAUSE_SIGN).unwrap();
        assert!(!sign.pass);
        assert!(sign.worst_value.unwrap() > 0.0);
        assert!(cert.failed_clauses().contains(&CLAUSE_GAMMA0));
    }

    #[test]
    fn zero_radius_passes_vacuously() {
        let d = make_pinched_annulus().with_r0(0.0).unwrap();
        let cert = certify_assumption(&d, 2000, DEFAULT_SIGN_TOL).unwrap();
        let sign = cert.clause(CLAUSE_SIGN).unwrap();
        assert!(sign.pass);
        assert!(sign.worst_value.is_none());
    }

    #[test]
    fn certification_rejects_few_samples_and_detached_origin() {
        let d = make_pinched_annulus();
        assert!(matches!(
            certify_assumption(&d, 999, 1e-9),
            Err(GeometryError::InvalidArgument(_))
        ));
        let shifted = DomainSpec::new(
            "shifted",
            vec![BoundaryLoop::new(vec![Segment {
                curve: BoundaryCurve::CircularArc(CircularArc::full_circle([5.0, 5.0], 1.0, 0.0, Orientation::Ccw)),
                role: CurveRole::Original,
            }])],
            0.5,
        )
        .unwrap();
        assert!(matches!(
            certify_assumption(&shifted, 1000, 1e-9),
            Err(GeometryError::DegeneratePointOffBoundary { .. })
        ));
    }

    #[test]
    fn gamma0_is_the_outer_circle() {
        let d = make_pinched_annulus();
        let g = compute_gamma0(&d, 4096).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].loop_index, g[0].segment_index), (0, 0));
        assert_eq!((g[0].s_start, g[0].s_end), (0.0, 1.0));
        // querying the inner circle alone gives nothing
        let inner_only = DomainSpec::new("inner", vec![d.boundary_loops[1].clone()], 0.5).unwrap();
        assert!(compute_gamma0(&inner_only, 2000).unwrap().is_empty());
    }

    #[test]
    fn gamma0_of_convex_disk_meets_ball() {
        let d = make_convex_disk();
        assert!(matches!(
            compute_gamma0(&d, 4096),
            Err(GeometryError::Gamma0MeetsDegenerateBall { .. })
        ));
    }

    #[test]
    fn gamma0_endpoints_bisected() {
        // hole of radius 1 at (2,0): x·ν = (x·c - |x|²)/r, positive on the
        // part of the circle facing the origin
        let c =BoundaryCurve::CircularArc(CircularArc::full_circle([2.0, 0.0], 1.0, 0.0, Orientation::Cw));
        let d = DomainSpec::new(
            "hole",
            vec![BoundaryLoop::new(vec![Segment { curve: c, role: CurveRole::Original }])],
            0.0,
        )
        .unwrap();
        let arcs = gamma0_arcs(&d, 4096);
        assert_eq!(arcs.len(), 1);
        let f = |s: f64| d.boundary_loops[0].segments[0].curve.support(s);
        assert!(f(arcs[0].s_start - 2e-10) <= 1e-9 && f(arcs[0].s_end + 2e-10) <= 1e-9);
    }

    #[test]
    fn cut_domain_fixture_geometry() {
        let d = make_pinched_annulus();
        let cut = cut_domain(&d, 0.04).unwrap();
        assert!((cut.cut_radius - 0.06).abs() < 1e-15);
        for k in 0..=100 {
            let s = k as f64 / 100.0;
            let c = BoundaryCurve::CircularArc(cut.cut_arc.clone());
            assert!((c.support(s) + 0.06).abs() < 1e-14);
        }
        let diag = cut_diagnostics(&cut, 20_000);
        assert!(diag.min_boundary_radius >= 0.04);
        assert!(diag.max_removed_radius <= 0.08);
        assert!(diag.max_support_near <= 1e-9);
        assert!(diag.loop_gap < 1e-12);
        for f in &cut.blend_arcs {
            assert!(f.radius <= 0.25 * 0.04 + 1e-15);
        }
    }

    #[test]
    fn cut_domain_rejects_large_epsilon() {
        let d = make_pinched_annulus();
        assert!(matches!(
            cut_domain(&d, 0.07),
            Err(GeometryError::EpsilonTooLarge { .. })
        ));
        assert!(matches!(cut_domain(&d, 0.0625), Err(GeometryError::EpsilonTooLarge { .. })));
        assert!(cut_domain(&d, -1.0).is_err());
    }

    #[test]
    fn cut_domain_excludes_small_ball_by_sampling() {
        let d = make_pinched_annulus();
        let cut = cut_domain(&d, 0.02).unwrap();
        let n = 200;
        for i in 0..=n {
            for j in 0..=n {
                let p = [-0.05 + 0.1 * i as f64 / n as f64, -0.05 + 0.1 * j as f64 / n as f64];
                let r = norm(p);
                if r < 0.02 {
                    assert!(!cut.contains(p), "{p:?} inside Ω_ε");
                }
                if cut.in_removed_region(p) {
                    assert!(r < 0.04, "removed point {p:?} outside B(0,2ε)");
                }
            }
        }
    }

    #[test]
    fn far_boundary_is_structurally_equal_across_cuts() {
        let d = make_pinched_annulus();
        let a = cut_domain(&d, 0.04).unwrap();
        let b = cut_domain(&d, 0.01).unwrap();
        let fa = far_boundary(&a, d.r0);
        let fb = far_boundary(&b, d.r0);
        assert_eq!(fa, fb);
        assert_eq!(fa, far_boundary(&d, d.r0));
        assert_eq!(fa.len(), 1);
    }

    #[test]
    fn gamma0_invariant_under_cut() {
        let d = make_pinched_annulus();
        let cut = cut_domain(&d, 0.02).unwrap();
        let g0 = compute_gamma0(&d, 4096).unwrap();
        let g1 = compute_gamma0(&cut, 4096).unwrap();
        assert_eq!(g1.len(), 1);
        assert_eq!(g0[0].curve, g1[0].curve);
    }

    #[test]
    fn containment_of_fixture() {
        let d = make_pinched_annulus();
        assert!(d.contains([0.0, 1.5]));
        assert!(d.contains([0.0, -0.5]));
        assert!(!d.contains([0.0, 0.25]));
        assert!(!d.contains([0.0, 3.5]));
        assert!((d.distance_to_boundary([0.0, 1.5]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn domain_description_roundtrip() {
        let d = make_pinched_annulus();
        let desc = DomainDescription::from_domain(&d).unwrap();
        let text = serde_json::to_string(&desc).unwrap();
        let back: DomainDescription = serde_json::from_str(&text).unwrap();
        let rebuilt = back.build().unwrap();
        assert_eq!(rebuilt.boundary_loops, d.boundary_loops);
        assert_eq!(rebuilt.m, d.m);
    }

    #[test]
    fn certification_serializes_with_named_fields() {
        let cert = certify_assumption(&make_pinched_annulus(), 1000, 1e-9).unwrap();
        let v = serde_json::to_value(&cert.clauses[1]).unwrap();
        for key in ["clause", "pass", "worst_value", "worst_location"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
