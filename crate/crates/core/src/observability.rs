//! Boundary observation energies on cut-domain trajectories, the
//! observability quotient and its lower bound 2(aT − 2b)/(θ M^{2α}).
//!
//! Normal derivatives come from the constant P1 gradient of the facet's
//! triangle. Time integrals use composite Simpson on the output grid through
//! the modal time Gram matrix, so each facet costs one m×m quadratic form.

use crate::geometry::{dot, norm, CutDomainSpec};
use crate::mesh::{triangulate, FacetTag, MeshError, TriMesh};
use crate::riemann_multiplier::{compute_constants, MultiplierConstants, MultiplierError, MIN_CONSTANT_SAMPLES};
use crate::wave_solver::{quad_form, solve_modal, time_gram, InitialData, ModalModel, WaveError, WaveProblem, WaveTrajectory};
use crate::weighted_assembly::{mesh_id, p1_gradients};
use crate::quadrature::triangle7;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_OBS_SLACK: f64 = 0.15;
/// Relative allowance on the energy-identity bound |(v, H(y) + ½Py)| ≤ b E(0).
pub const PAIRING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservabilityError {
    #[error("EMPTY_FACET_SET: no boundary facet matches {0}")]
    EmptyFacetSet(String),
    #[error("invalid observability argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error(transparent)]
    Multiplier(#[from] MultiplierError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Facet filter for trace integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FacetSet {
    /// Facets of the original boundary with x·ν > 0.
    Gamma0,
    /// Original-boundary facets whose midpoint satisfies |x| ≥ r0.
    AwayFromOrigin { r0: f64 },
    Tags(Vec<FacetTag>),
}

impl FacetSet {
    pub fn contains(&self, mesh: &TriMesh, facet: usize) -> bool {
        let f = &mesh.boundary_facets[facet];
        match self {
            FacetSet::Gamma0 => f.tag == FacetTag::OuterGamma0,
            FacetSet::AwayFromOrigin { r0 } => f.tag != FacetTag::ArtificialCut && norm(mesh.facet_midpoint(f)) >= *r0,
            FacetSet::Tags(tags) => tags.contains(&f.tag),
        }
    }

    fn describe(&self) -> String {
        match self {
            FacetSet::Gamma0 => "GAMMA0".into(),
            FacetSet::AwayFromOrigin { r0 } => format!("|x| >= {r0}"),
            FacetSet::Tags(t) => t.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("|"),
        }
    }
}

/// Selected facets with their length, midpoint weight and the normal
/// derivative ∂Φₙ/∂ν of every mode.
#[derive(Clone, Debug)]
pub struct FacetFluxes {
    pub facets: Vec<usize>,
    pub lengths: Vec<f64>,
    pub weights: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
}

pub fn facet_fluxes(model: &ModalModel, set: &FacetSet) -> Result<FacetFluxes, ObservabilityError> {
    let mesh = &model.mesh;
    let facets: Vec<usize> = (0..mesh.boundary_facets.len()).filter(|&i| set.contains(mesh, i)).collect();
    if facets.is_empty() {
        return Err(ObservabilityError::EmptyFacetSet(set.describe()));
    }
    let mut out = FacetFluxes {
        facets: facets.clone(),
        lengths: Vec::with_capacity(facets.len()),
        weights: Vec::with_capacity(facets.len()),
        coeffs: Vec::with_capacity(facets.len()),
    };
    for &i in &facets {
        let f = &mesh.boundary_facets[i];
        let (nu, len) = mesh.facet_normal(f);
        out.lengths.push(len);
        out.weights.push(norm(mesh.facet_midpoint(f)).powf(model.op.alpha));
        out.coeffs.push(model.mode_gradients(f.triangle).iter().map(|g| dot(*g, nu)).collect());
    }
    Ok(out)
}

/// Simpson weights on a trajectory's output grid.
pub fn trajectory_weights(traj: &WaveTrajectory) -> Result<Vec<f64>, ObservabilityError> {
    let n = traj.times.len().saturating_sub(1);
    if n < 2 || n % 2 == 1 {
        return Err(ObservabilityError::InvalidArgument(format!("Simpson needs an even number of output steps, got {n}")));
    }
    Ok(crate::quadrature::simpson_weights(n, traj.times[1] - traj.times[0]))
}

/// ∫₀ᵀ Σ_f |f| (∂y/∂ν)² dt, or with (w ∂y/∂ν)² when `weighted`.
pub fn trace_energy(traj: &WaveTrajectory, model: &ModalModel, set: &FacetSet, weighted: bool) -> Result<f64, ObservabilityError> {
    let fl = facet_fluxes(model, set)?;
    if traj.y.first().map_or(0, |y| y.len()) != model.basis.m {
        return Err(ObservabilityError::InvalidArgument("trajectory and basis disagree on m".into()));
    }
    let c = time_gram(&traj.y, &trajectory_weights(traj)?);
    Ok(fl
        .coeffs
        .iter()
        .zip(fl.lengths.iter().zip(&fl.weights))
        .map(|(a, (len, w))| {
            let s = if weighted { w * w } else { 1.0 };
            len * s * quad_form(a, &c)
        })
        .sum())
}

/// max(0, 2(aT − 2b)/(θ M^{2α})).
pub fn observability_bound(c: &MultiplierConstants, m_const: f64, t_final: f64) -> f64 {
    let num = c.a * t_final - 2.0 * c.b;
    if num <= 0.0 {
        0.0
    } else {
        2.0 * num / (c.theta * m_const.powf(2.0 * c.alpha))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

/// (v, x·∇y + ½Py) at t = 0 and t = T against b·E(0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyPairingCheck {
    pub at_zero: f64,
    pub at_final: f64,
    pub bound: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityReport {
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
    pub obs_energy: f64,
    pub quotient: f64,
    pub bound: f64,
    pub margin: f64,
    pub verdict: Verdict,
    pub obs_slack: f64,
    pub epsilon: Option<f64>,
    pub mesh_id: String,
    pub h_max: f64,
    pub m: usize,
    pub n_gamma0_facets: usize,
    pub constants: MultiplierConstants,
    pub pairing: EnergyPairingCheck,
}

/// ∫_Ω v (x·∇y) dx + ½P ∫_Ω v y dx for modal coordinates `y`, `v`.
pub fn energy_pairing(model: &ModalModel, y: &[f64], v: &[f64], p: f64) -> f64 {
    let mesh = &model.mesh;
    let ny = model.nodal(y);
    let nv = model.nodal(v);
    let mut hy = 0.0;
    for tri in &mesh.triangles {
        let pts = tri.map(|i| mesh.vertices[i]);
        let (g, area) = p1_gradients(pts);
        let mut grad = [0.0; 2];
        for k in 0..3 {
            grad[0] += ny[tri[k]] * g[k][0];
            grad[1] += ny[tri[k]] * g[k][1];
        }
        for (l, wq) in triangle7() {
            let x = [
                l[0] * pts[0][0] + l[1] * pts[1][0] + l[2] * pts[2][0],
                l[0] * pts[0][1] + l[1] * pts[1][1] + l[2] * pts[2][1],
            ];
            let vx = l[0] * nv[tri[0]] + l[1] * nv[tri[1]] + l[2] * nv[tri[2]];
            hy += wq * area * vx * dot(x, grad);
        }
    }
    // modes are mass-orthonormal
    let vy: f64 = y.iter().zip(v).map(|(a, b)| a * b).sum();
    hy + 0.5 * p * vy
}

/// Builds the report for an unforced trajectory on a cut-domain model.
pub fn report_from_trajectory(
    traj: &WaveTrajectory,
    model: &ModalModel,
    constants: &MultiplierConstants,
    m_const: f64,
    obs_slack: f64,
    epsilon: Option<f64>,
) -> Result<ObservabilityReport, ObservabilityError> {
    if !(obs_slack >= 0.0 && obs_slack < 1.0) {
        return Err(ObservabilityError::InvalidArgument(format!("obs_slack must lie in [0, 1), got {obs_slack}")));
    }
    let t_final = *traj.times.last().unwrap_or(&0.0);
    let e0 = traj.energy[0];
    let obs_energy = trace_energy(traj, model, &FacetSet::Gamma0, false)?;
    let quotient = if e0 > 0.0 { obs_energy / e0 } else { 0.0 };
    let bound = observability_bound(constants, m_const, t_final);
    let verdict = if constants.a * t_final - 2.0 * constants.b <= 0.0 {
        Verdict::Inconclusive
    } else if quotient >= bound * (1.0 - obs_slack) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let n = traj.times.len() - 1;
    let at_zero = energy_pairing(model, &traj.y[0], &traj.v[0], constants.p);
    let at_final = energy_pairing(model, &traj.y[n], &traj.v[n], constants.p);
    let pb = constants.b * e0;
    let pairing = EnergyPairingCheck {
        at_zero,
        at_final,
        bound: pb,
        tol: PAIRING_TOL,
        pass: at_zero.abs() <= pb * (1.0 + PAIRING_TOL) && at_final.abs() <= pb * (1.0 + PAIRING_TOL),
    };
    let n_gamma0_facets = (0..model.mesh.boundary_facets.len()).filter(|&i| FacetSet::Gamma0.contains(&model.mesh, i)).count();
    Ok(ObservabilityReport {
        t_final,
        e0,
        obs_energy,
        quotient,
        bound,
        margin: quotient - bound,
        verdict,
        obs_slack,
        epsilon,
        mesh_id: mesh_id(&model.mesh),
        h_max: model.mesh.h_max,
        m: model.basis.m,
        n_gamma0_facets,
        constants: constants.clone(),
        pairing,
    })
}

/// A built cut-domain model with its multiplier constants and modal data.
#[derive(Clone, Debug)]
pub struct ObservationSetup {
    pub model: ModalModel,
    pub constants: MultiplierConstants,
    pub m_const: f64,
    pub epsilon: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl ObservationSetup {
    pub fn build(cut: &CutDomainSpec, alpha: f64, initial: &InitialData, m: usize, h_max: f64, grading: f64) -> Result<Self, ObservabilityError> {
        let mesh = triangulate(cut, h_max, grading)?;
        let model = ModalModel::build(mesh, alpha, m)?;
        let constants = compute_constants(&cut.parent, cut, alpha, MIN_CONSTANT_SAMPLES)?;
        let y0 = model.coordinates(&initial.y0, cut)?;
        let y1 = model.coordinates(&initial.y1, cut)?;
        Ok(Self {
            model,
            constants,
            m_const: cut.parent.m,
            epsilon: cut.epsilon,
            y0,
            y1,
        })
    }

    pub fn trajectory(&self, t_final: f64) -> Result<WaveTrajectory, ObservabilityError> {
        let p = WaveProblem::unforced(&self.model.basis, self.y0.clone(), self.y1.clone(), t_final);
        Ok(solve_modal(&p)?)
    }

    pub fn report(&self, t_final: f64, obs_slack: f64) -> Result<ObservabilityReport, ObservabilityError> {
        if !(t_final > 0.0) {
            return Err(ObservabilityError::InvalidArgument(format!("T must be positive, got {t_final}")));
        }
        let traj = self.trajectory(t_final)?;
        report_from_trajectory(&traj, &self.model, &self.constants, self.m_const, obs_slack, Some(self.epsilon))
    }
}

/// Solves on Ω_ε and reports the Γ₀ observation quotient at time `t_final`.
#[allow(clippy::too_many_arguments)]
pub fn observability_report(
    cut: &CutDomainSpec,
    alpha: f64,
    initial: &InitialData,
    t_final: f64,
    m: usize,
    h_max: f64,
    grading: f64,
    obs_slack: f64,
) -> Result<ObservabilityReport, ObservabilityError> {
    ObservationSetup::build(cut, alpha, initial, m, h_max, grading)?.report(t_final, obs_slack)
}

/// Weighted trace energy on ∂Ω − B(0, r0) over Σλₙ(yₙ⁰)² + Σ(yₙ¹)².
pub fn hidden_regularity_check(traj: &WaveTrajectory, model: &ModalModel, r0: f64) -> Result<f64, ObservabilityError> {
    let data: f64 = traj.y[0]
        .iter()
        .zip(&traj.v[0])
        .zip(&model.basis.eigenvalues)
        .map(|((a, b), l)| l * a * a + b * b)
        .sum();
    if data == 0.0 {
        return Ok(0.0);
    }
    Ok(trace_energy(traj, model, &FacetSet::AwayFromOrigin { r0 }, true)? / data)
}

/// Rows `T,quotient,bound,margin,verdict`.
pub fn summary_csv(reports: &[ObservabilityReport]) -> String {
    let mut s = String::from("T,quotient,bound,margin,verdict\n");
    for r in reports {
        s.push_str(&format!("{},{:.12e},{:.12e},{:.12e},{}\n", r.t_final, r.quotient, r.bound, r.margin, r.verdict.as_str()));
    }
    s
}

/// E(0) = ½(‖y¹‖² + ‖∇_g y⁰‖²) in modal Parseval form.
pub fn initial_energy(lambdas: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
    0.5 * lambdas.iter().zip(y0.iter().zip(y1)).map(|(l, (a, b))| l * a * a + b * b).sum::<f64>()
}
