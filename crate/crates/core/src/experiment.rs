//! Config-driven experiment pipelines with content-hashed artifacts.
//!
//! Each command produces in-memory artifacts keyed by relative path plus a
//! list of pass/fail gates. Nothing time-dependent enters an artifact, so an
//! identical config yields identical bytes and an identical MANIFEST.

use crate::geometry::{certify_assumption, cut_domain, fixture_by_name, DomainDescription, DomainSpec, GeometryError};
use crate::mesh::{triangulate, MeshError};
use crate::observability::{hidden_regularity_check, summary_csv, ObservabilityError, ObservationSetup, Verdict};
use crate::riemann_multiplier::{check_prop45, compute_constants, Identity, IdentityResidual, MultiplierError, MIN_CONSTANT_SAMPLES};
use crate::shape_design::{run_sweep, ShapeError};
use crate::spectral;
use crate::wave_solver::{solve_modal, InitialData, ModalModel, WaveError, WaveProblem};
use crate::weighted_assembly::{check_hardy, check_poincare, lambda_bar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

pub const CERTIFY_SAMPLES: usize = 20_000;
pub const HARDY_RANDOM_VECTORS: usize = 1000;
pub const HARDY_EIGENVECTORS: usize = 16;
pub const DEFAULT_SEED: u64 = 20240601;
pub const OUTPUT_DIR_ENV: &str = "DEGWAVE_OUT";

/// Named tolerances and their defaults.
pub const TOLERANCES: &[(&str, f64)] = &[
    ("sign_tol", 1e-9),
    ("hardy_tol", 1e-8),
    ("residual_tol", 1e-9),
    ("ortho_mass_tol", 1e-10),
    ("ortho_stiffness_tol", 1e-8),
    ("energy_tol", 1e-10),
    ("identity_tol", 0.02),
    ("trace_tol", 0.05),
    ("extension_tol", 1e-14),
    ("obs_slack", 0.15),
    ("pairing_tol", 1e-6),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Certify,
    Spectrum,
    Wave,
    Identities,
    Sweep,
    Observe,
    All,
}

impl Command {
    pub const STAGES: [Command; 6] = [
        Command::Certify,
        Command::Spectrum,
        Command::Wave,
        Command::Identities,
        Command::Sweep,
        Command::Observe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Spectrum => "spectrum",
            Command::Wave => "wave",
            Command::Identities => "identities",
            Command::Sweep => "sweep",
            Command::Observe => "observe",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Command::STAGES
            .iter()
            .chain(std::iter::once(&Command::All))
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown command {s}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveSettings {
    pub epsilon: Option<f64>,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
}

fn default_t_grid() -> Vec<f64> {
    vec![4.0, 6.0, 8.0, 10.0, 12.0]
}

impl Default for ObserveSettings {
    fn default() -> Self {
        Self {
            epsilon: None,
            t_grid: default_t_grid(),
        }
    }
}

/// The identities run on the single-mode trajectory y⁰ = Φ_mode, y¹ = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySettings {
    pub epsilon: Option<f64>,
    /// Coarse to fine; defaults to (2h, 1.4h, h).
    #[serde(default)]
    pub h_levels: Vec<f64>,
    /// One-based mode index.
    #[serde(default = "default_mode")]
    pub mode: usize,
}

fn default_mode() -> usize {
    1
}

impl Default for IdentitySettings {
    fn default() -> Self {
        Self {
            epsilon: None,
            h_levels: Vec::new(),
            mode: default_mode(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Fixture name or path to a domain description file.
    pub domain: String,
    pub alpha: f64,
    pub epsilons: Vec<f64>,
    pub h_max: f64,
    #[serde(default = "default_grading")]
    pub grading: f64,
    pub m: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default = "default_outputs")]
    pub outputs: String,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub observe: ObserveSettings,
    #[serde(default)]
    pub identities: IdentitySettings,
}

fn default_grading() -> f64 {
    1.0
}

fn default_outputs() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldDiagnostic {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("CONFIG_INVALID: {}", format_diagnostics(.0))]
    ConfigInvalid(Vec<FieldDiagnostic>),
    #[error("{module}: {context}: {message}")]
    Module { module: &'static str, context: String, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

fn format_diagnostics(d: &[FieldDiagnostic]) -> String {
    d.iter().map(|d| format!("{}: {}", d.field, d.message)).collect::<Vec<_>>().join("; ")
}

fn invalid(field: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::ConfigInvalid(vec![FieldDiagnostic {
        field: field.into(),
        message: message.into(),
    }])
}

macro_rules! module_err {
    ($module:literal, $ty:ty) => {
        impl From<(&str, $ty)> for ExperimentError {
            fn from((context, e): (&str, $ty)) -> Self {
                ExperimentError::Module {
                    module: $module,
                    context: context.into(),
                    message: e.to_string(),
                }
            }
        }
    };
}

module_err!("geometry", GeometryError);
module_err!("mesh", MeshError);
module_err!("wave_solver", WaveError);
module_err!("spectral", spectral::SpectralError);
module_err!("riemann_multiplier", MultiplierError);
module_err!("shape_design", ShapeError);
module_err!("observability", ObservabilityError);

trait Ctx<T, E> {
    fn ctx(self, context: &str) -> Result<T, ExperimentError>;
}

impl<T, E> Ctx<T, E> for Result<T, E>
where
    ExperimentError: for<'a> From<(&'a str, E)>,
{
    fn ctx(self, context: &str) -> Result<T, ExperimentError> {
        self.map_err(|e| ExperimentError::from((context, e)))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances
            .get(name)
            .copied()
            .or_else(|| TOLERANCES.iter().find(|(n, _)| *n == name).map(|(_, v)| *v))
            .unwrap_or_else(|| panic!("unknown tolerance {name}"))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let mut d = Vec::new();
        let mut push = |field: &str, message: String| d.push(FieldDiagnostic { field: field.into(), message });
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            push("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        if self.epsilons.is_empty() {
            push("epsilons", "must not be empty".into());
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) {
            push("epsilons", "entries must be positive".into());
        }
        if self.epsilons.windows(2).any(|w| !(w[0] > w[1])) {
            push("epsilons", "must be strictly descending".into());
        }
        if !(self.h_max > 0.0 && self.h_max.is_finite()) {
            push("h_max", format!("must be positive, got {}", self.h_max));
        }
        if !(self.grading > 0.0 && self.grading <= 1.0) {
            push("grading", format!("must lie in (0, 1], got {}", self.grading));
        }
        if self.m == 0 {
            push("m", "must be at least 1".into());
        }
        if self.identities.mode == 0 || self.identities.mode > self.m {
            push("identities.mode", format!("must lie in 1..={}, got {}", self.m, self.identities.mode));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            push("T", format!("must be positive, got {}", self.t_final));
        }
        for (k, v) in &self.tolerances {
            if !TOLERANCES.iter().any(|(n, _)| n == k) {
                push("tolerances", format!("unknown tolerance {k}"));
            } else if !(*v > 0.0) {
                push("tolerances", format!("{k} must be positive, got {v}"));
            }
        }
        if self.tolerance("obs_slack") >= 1.0 {
            push("tolerances", "obs_slack must be below 1".into());
        }
        if self.observe.t_grid.iter().any(|t| !(*t > 0.0)) {
            push("observe.t_grid", "times must be positive".into());
        }
        if let Some(e) = self.observe.epsilon {
            if !(e > 0.0) {
                push("observe.epsilon", format!("must be positive, got {e}"));
            }
        }
        if let Some(e) = self.identities.epsilon {
            if !(e > 0.0) {
                push("identities.epsilon", format!("must be positive, got {e}"));
            }
        }
        if self.identities.h_levels.iter().any(|h| !(*h > 0.0)) || self.identities.h_levels.windows(2).any(|w| !(w[0] > w[1])) {
            push("identities.h_levels", "must be positive and strictly decreasing".into());
        }
        for (name, list) in [("initial.y0", &self.initial.y0), ("initial.y1", &self.initial.y1)] {
            if list.iter().any(|b| !(b.radius > 0.0) || !b.amplitude.is_finite()) {
                push(name, "bump radius must be positive and amplitude finite".into());
            }
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(ExperimentError::ConfigInvalid(d))
        }
    }

    pub fn observe_epsilon(&self) -> f64 {
        self.observe.epsilon.unwrap_or(*self.epsilons.last().unwrap_or(&0.02))
    }

    pub fn identity_epsilon(&self) -> f64 {
        self.identities.epsilon.unwrap_or(self.epsilons[0])
    }

    pub fn identity_levels(&self) -> Vec<f64> {
        if self.identities.h_levels.is_empty() {
            vec![2.0 * self.h_max, 1.4 * self.h_max, self.h_max]
        } else {
            self.identities.h_levels.clone()
        }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ExperimentConfig::from_json(&text)
}

/// Resolves `domain` as a fixture name, else as a description file relative
/// to `base`.
pub fn resolve_domain(cfg: &ExperimentConfig, base: &Path) -> Result<DomainSpec, ExperimentError> {
    if let Some(d) = fixture_by_name(&cfg.domain) {
        return Ok(d);
    }
    let p: PathBuf = base.join(&cfg.domain);
    let text = std::fs::read_to_string(&p).map_err(|e| invalid("domain", format!("not a fixture name and {} is unreadable: {e}", p.display())))?;
    let desc: DomainDescription = serde_json::from_str(&text).map_err(|e| invalid("domain", format!("{}: {e}", p.display())))?;
    desc.build().map_err(|e| invalid("domain", e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub command: String,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub artifacts: BTreeMap<String, Vec<u8>>,
    pub gates: Vec<Gate>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|g| g.pass)
    }

    /// `<relative-path> <sha-256-hex>` per artifact, sorted by path.
    pub fn manifest(&self) -> String {
        self.artifacts.iter().map(|(p, b)| format!("{p} {}\n", sha256_hex(b))).collect()
    }

    pub fn gates_csv(&self) -> String {
        let mut s = String::from("command,gate,pass,detail\n");
        for g in &self.gates {
            s.push_str(&format!("{},{},{},\"{}\"\n", g.command, g.name, g.pass, g.detail.replace('"', "'")));
        }
        s
    }

    /// Writes every artifact, `gates.csv` and `MANIFEST` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        let io = |p: &Path, e: std::io::Error| ExperimentError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let mut all = self.artifacts.clone();
        all.insert("gates.csv".into(), self.gates_csv().into_bytes());
        let full = RunOutput {
            artifacts: all,
            gates: Vec::new(),
        };
        for (rel, bytes) in &full.artifacts {
            let p = dir.join(rel);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
            }
            std::fs::write(&p, bytes).map_err(|e| io(&p, e))?;
        }
        let mp = dir.join("MANIFEST");
        std::fs::write(&mp, full.manifest()).map_err(|e| io(&mp, e))
    }

    fn put(&mut self, path: &str, bytes: impl Into<Vec<u8>>) {
        self.artifacts.insert(path.into(), bytes.into());
    }

    fn gate(&mut self, command: Command, name: &str, pass: bool, detail: String) {
        self.gates.push(Gate {
            command: command.as_str().into(),
            name: name.into(),
            pass,
            detail,
        });
    }
}

fn series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(" > ")
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

/// Intermediate results shared between the stages of one run.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    domain: &'a DomainSpec,
    seed: u64,
    parent: Option<ModalModel>,
}

impl Context<'_> {
    fn parent_model(&mut self) -> Result<&ModalModel, ExperimentError> {
        if self.parent.is_none() {
            let mesh = triangulate(self.domain, self.cfg.h_max, self.cfg.grading).ctx("triangulating the domain")?;
            self.parent = Some(ModalModel::build(mesh, self.cfg.alpha, self.cfg.m).ctx("building the modal basis")?);
        }
        Ok(self.parent.as_ref().expect("parent model"))
    }
}

/// Runs one command (or `all`) and collects artifacts and gates.
pub fn run(command: Command, cfg: &ExperimentConfig, domain: &DomainSpec, seed: Option<u64>) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let mut ctx = Context {
        cfg,
        domain,
        seed: seed.or_else(|| cfg.seeds.first().copied()).unwrap_or(DEFAULT_SEED),
        parent: None,
    };
    let mut out = RunOutput::default();
    out.put("config.json", cfg.to_json().into_bytes());
    let stages: Vec<Command> = if command == Command::All { Command::STAGES.to_vec() } else { vec![command] };
    for stage in stages {
        match stage {
            Command::Certify => {
                certify(&ctx, &mut out)?;
                if command == Command::All && !out.passed() {
                    break;
                }
            }
            Command::Spectrum => spectrum(&mut ctx, &mut out)?,
            Command::Wave => wave(&mut ctx, &mut out)?,
            Command::Identities => identities(&ctx, &mut out)?,
            Command::Sweep => sweep(&ctx, &mut out)?,
            Command::Observe => observe(&ctx, &mut out)?,
            Command::All => unreachable!(),
        }
    }
    Ok(out)
}

fn certify(ctx: &Context, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let c = Command::Certify;
    let cert = certify_assumption(ctx.domain, CERTIFY_SAMPLES, ctx.cfg.tolerance("sign_tol")).ctx("certifying the domain")?;
    out.put("certify/certification.json", json(&cert));
    for clause in &cert.clauses {
        let detail = match clause.worst_value {
            Some(v) => format!("worst value {v:.3e}"),
            None => String::new(),
        };
        out.gate(c, &clause.clause, clause.pass, detail);
    }
    if cert.pass {
        let cut = cut_domain(ctx.domain, ctx.cfg.observe_epsilon()).ctx("cutting the domain")?;
        let k = compute_constants(ctx.domain, &cut, ctx.cfg.alpha, MIN_CONSTANT_SAMPLES).ctx("multiplier constants")?;
        out.put("certify/constants.json", json(&k));
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumChecks {
    mesh_id: String,
    n_vertices: usize,
    n_interior: usize,
    m: usize,
    lambda1: f64,
    lambda_bar: f64,
    max_residual: f64,
    mass_orthogonality_defect: f64,
    stiffness_orthogonality_defect: f64,
    hardy_vectors: usize,
    hardy_failures: usize,
    hardy_max_ratio: f64,
    poincare_failures: usize,
    poincare_max_ratio: f64,
    seed: u64,
}

fn spectrum(ctx: &mut Context, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let c = Command::Spectrum;
    let (seed, m_const) = (ctx.seed, ctx.domain.m);
    let (hardy_tol, res_tol) = (ctx.cfg.tolerance("hardy_tol"), ctx.cfg.tolerance("residual_tol"));
    let (om_tol, ok_tol) = (ctx.cfg.tolerance("ortho_mass_tol"), ctx.cfg.tolerance("ortho_stiffness_tol"));
    let model = ctx.parent_model()?;
    let basis = &model.basis;
    let op = &model.op;
    let (dm, dk) = spectral::orthogonality_defects(basis, op);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<Vec<f64>> = basis.eigenvectors.iter().take(HARDY_EIGENVECTORS).cloned().collect();
    for _ in 0..HARDY_RANDOM_VECTORS {
        vectors.push((0..op.n_interior()).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let (mut hf, mut hr, mut pf, mut pr) = (0, 0.0f64, 0, 0.0f64);
    for v in &vectors {
        let h = check_hardy(op, v, hardy_tol);
        let p = check_poincare(op, v, m_const, hardy_tol);
        hf += usize::from(!h.pass);
        pf += usize::from(!p.pass);
        hr = hr.max(h.ratio);
        pr = pr.max(p.ratio);
    }
    let max_res = basis.residuals.iter().cloned().fold(0.0, f64::max);
    let lb = lambda_bar(op.alpha, m_const);
    let checks = SpectrumChecks {
        mesh_id: op.mesh_ref.clone(),
        n_vertices: op.n_vertices,
        n_interior: op.n_interior(),
        m: basis.m,
        lambda1: basis.eigenvalues[0],
        lambda_bar: lb,
        max_residual: max_res,
        mass_orthogonality_defect: dm,
        stiffness_orthogonality_defect: dk,
        hardy_vectors: vectors.len(),
        hardy_failures: hf,
        hardy_max_ratio: hr,
        poincare_failures: pf,
        poincare_max_ratio: pr,
        seed,
    };
    out.put("spectrum/eigenvalues.csv", spectral::to_csv(basis));
    out.put("spectrum/checks.json", json(&checks));
    out.gate(c, "lambda1_lower_bound", checks.lambda1 >= lb, format!("lambda1 {:.6} vs {lb}", checks.lambda1));
    out.gate(c, "eigen_residuals", max_res <= res_tol, format!("max residual {max_res:.3e}"));
    out.gate(c, "orthogonality", dm <= om_tol && dk <= ok_tol, format!("mass {dm:.3e}, stiffness {dk:.3e}"));
    out.gate(c, "hardy", hf == 0, format!("{hf} of {} fail, max ratio {hr:.6}", vectors.len()));
    out.gate(c, "poincare", pf == 0, format!("{pf} of {} fail, max ratio {pr:.6}", vectors.len()));
    Ok(())
}

fn wave(ctx: &mut Context, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let c = Command::Wave;
    let (t_final, domain, tol) = (ctx.cfg.t_final, ctx.domain, ctx.cfg.tolerance("energy_tol"));
    let initial = ctx.cfg.initial.clone();
    let model = ctx.parent_model()?;
    let y0 = model.coordinates(&initial.y0, domain).ctx("projecting y0")?;
    let y1 = model.coordinates(&initial.y1, domain).ctx("projecting y1")?;
    let traj = solve_modal(&WaveProblem::unforced(&model.basis, y0, y1, t_final)).ctx("time integration")?;
    let drift = traj.energy_drift();
    out.put("wave/energy.csv", traj.energy_csv());
    out.put("wave/states.txt", traj.states_text());
    out.gate(c, "energy_conservation", drift <= tol, format!("max relative drift {drift:.3e}"));
    Ok(())
}

fn identities(ctx: &Context, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let c = Command::Identities;
    let cfg = ctx.cfg;
    let cut = cut_domain(ctx.domain, cfg.identity_epsilon()).ctx("cutting the domain")?;
    let levels = cfg.identity_levels();
    let mut rows: Vec<IdentityResidual> = Vec::new();
    for &h in &levels {
        let mesh = triangulate(&cut, h, cfg.grading).ctx("triangulating the cut domain")?;
        let model = ModalModel::build(mesh, cfg.alpha, cfg.m).ctx("cut-domain modal basis")?;
        let mut y0 = vec![0.0; cfg.m];
        y0[cfg.identities.mode - 1] = 1.0;
        let traj = solve_modal(&WaveProblem::unforced(&model.basis, y0, vec![0.0; cfg.m], cfg.t_final)).ctx("time integration")?;
        for which in [Identity::One, Identity::Two] {
            rows.push(check_prop45(&traj, &model.basis, &model.op, &model.mesh, which).ctx("multiplier identity")?);
        }
    }
    let mut csv = String::from("h_max,identity,lhs,rhs,residual,relative\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.h_max,
            if r.which == Identity::One { "IDENTITY_1" } else { "IDENTITY_2" },
            r.lhs_total,
            r.rhs_total,
            r.residual,
            r.relative
        ));
    }
    out.put("identities/residuals.csv", csv);
    out.put("identities/terms.json", json(&rows));
    let tol = cfg.tolerance("identity_tol");
    for (which, name) in [(Identity::One, "identity_1"), (Identity::Two, "identity_2")] {
        let rel: Vec<f64> = rows.iter().filter(|r| r.which == which).map(|r| r.relative).collect();
        let finest = *rel.last().expect("at least one level");
        let decreasing = rel.windows(2).all(|w| w[1] < w[0]);
        out.gate(c, &format!("{name}_finest"), finest <= tol, format!("relative residual {finest:.4e} (tol {tol})"));
        out.gate(c, &format!("{name}_decreasing"), decreasing, series(&rel));
    }
    Ok(())
}

fn sweep(ctx: &Context, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let c = Command::Sweep;
    let cfg = ctx.cfg;
    let r = run_sweep(ctx.domain, &cfg.epsilons, cfg.alpha, &cfg.initial, cfg.t_final, cfg.m, cfg.h_max, cfg.grading).ctx("epsilon sweep")?;
    out.put("sweep/sweep.csv", r.to_csv());
    out.put("sweep/plot_data.csv", r.plot_data());
    out.put("sweep/result.json", json(&r));
    let tol = cfg.tolerance("trace_tol");
    let ext = cfg.tolerance("extension_tol");
    let final_trace = *r.trace_gap_rel.last().expect("non-empty sweep");
    let worst_ext = r.extension_defect.iter().cloned().fold(0.0, f64::max);
    out.gate(c, "energy_gap_decreasing", r.energy_decreasing, series(&r.energy_gap_rel));
    out.gate(c, "trace_gap_decreasing", r.trace_decreasing, series(&r.trace_gap_rel));
    out.gate(c, "final_trace_gap", final_trace <= tol, format!("{final_trace:.4e} of the reference trace norm (tol {tol})"));
    out.gate(c, "extension_norm", worst_ext <= ext, format!("max defect {worst_ext:.3e}"));
    Ok(())
}

#[derive(Serialize)]
struct HiddenRegularity {
    r0: f64,
    ratio: f64,
}

fn observe(ctx: &Context, out: &mut RunOutput) -> Result<(), ExperimentError> {
    let c = Command::Observe;
    let cfg = ctx.cfg;
    let cut = cut_domain(ctx.domain, cfg.observe_epsilon()).ctx("cutting the domain")?;
    let setup = ObservationSetup::build(&cut, cfg.alpha, &cfg.initial, cfg.m, cfg.h_max, cfg.grading).ctx("observation setup")?;
    let slack = cfg.tolerance("obs_slack");
    let mut ts = cfg.observe.t_grid.clone();
    if !ts.contains(&cfg.t_final) {
        ts.push(cfg.t_final);
    }
    ts.sort_by(|a, b| a.total_cmp(b));
    let reports = ts.iter().map(|&t| setup.report(t, slack)).collect::<Result<Vec<_>, _>>().ctx("observability report")?;
    let main = reports.iter().find(|r| r.t_final == cfg.t_final).expect("T is on the grid");
    let traj = setup.trajectory(cfg.t_final).ctx("time integration")?;
    let hidden = HiddenRegularity {
        r0: ctx.domain.r0,
        ratio: hidden_regularity_check(&traj, &setup.model, ctx.domain.r0).ctx("hidden regularity")?,
    };
    out.put("observe/summary.csv", summary_csv(&reports));
    out.put("observe/report.json", json(main));
    out.put("observe/reports.json", json(&reports));
    out.put("observe/hidden_regularity.json", json(&hidden));
    let ptol = cfg.tolerance("pairing_tol");
    for r in &reports {
        let expected = if r.t_final > r.constants.t_min { Verdict::Pass } else { Verdict::Inconclusive };
        out.gate(
            c,
            &format!("verdict_T{}", r.t_final),
            r.verdict == expected,
            format!("quotient {:.4} vs bound {:.4}: {}", r.quotient, r.bound, r.verdict.as_str()),
        );
        let p = &r.pairing;
        let ok = p.at_zero.abs() <= p.bound * (1.0 + ptol) && p.at_final.abs() <= p.bound * (1.0 + ptol);
        out.gate(c, &format!("pairing_T{}", r.t_final), ok, format!("|{:.4e}|, |{:.4e}| vs {:.4e}", p.at_zero, p.at_final, p.bound));
    }
    Ok(())
}
