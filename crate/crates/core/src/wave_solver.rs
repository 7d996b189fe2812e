//! Modal time integration of `ÿₙ + λₙ yₙ = fₙ(t)`.
//!
//! Each mode is an exact oscillator. Forcing enters by Duhamel's formula with
//! the trapezoidal rule on a sampled table; the unforced path is closed form.

use crate::geometry::{Point, Region};
use crate::mesh::TriMesh;
use crate::quadrature::simpson_weights;
use crate::spectral::{project, solve_eigs, ModalBasis, SpectralError};
use crate::weighted_assembly::{assemble, p1_gradients, AssemblyError, WeightedOperator};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_OUTPUT_STEPS: usize = 1024;
pub const DEFAULT_FORCING_STEPS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("NEGATIVE_EIGENVALUE: mode {mode} has lambda = {value}")]
    NegativeEigenvalue { mode: usize, value: f64 },
    #[error("BUMP_TOUCHES_BOUNDARY: distance {distance} from center to boundary, need at least {required}")]
    BumpTouchesBoundary { distance: f64, required: f64 },
    #[error("invalid wave problem: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Mesh, weighted operator and modal basis of one discretization.
#[derive(Clone, Debug)]
pub struct ModalModel {
    pub mesh: TriMesh,
    pub op: WeightedOperator,
    pub basis: ModalBasis,
}

impl ModalModel {
    pub fn build(mesh: TriMesh, alpha: f64, m: usize) -> Result<Self, WaveError> {
        let op = assemble(&mesh, alpha)?;
        let basis = solve_eigs(&op, m)?;
        Ok(Self { mesh, op, basis })
    }

    /// Modal coordinates of the nodal interpolant of a bump sum.
    pub fn coordinates(&self, bumps: &[Bump], region: &dyn Region) -> Result<Vec<f64>, WaveError> {
        let nodal = bump_sum(bumps, &self.mesh, region)?;
        Ok(project(&self.basis, &self.op, &self.op.restrict(&nodal)))
    }

    /// Constant gradient of every mode on triangle `t`.
    pub fn mode_gradients(&self, t: usize) -> Vec<[f64; 2]> {
        let tri = self.mesh.triangles[t];
        let (g, _) = p1_gradients(tri.map(|i| self.mesh.vertices[i]));
        let local: Vec<Option<usize>> = tri.iter().map(|v| self.op.interior_dofs.binary_search(v).ok()).collect();
        self.basis
            .eigenvectors
            .iter()
            .map(|phi| {
                let mut s = [0.0; 2];
                for (k, d) in local.iter().enumerate() {
                    if let Some(d) = d {
                        s[0] += phi[*d] * g[k][0];
                        s[1] += phi[*d] * g[k][1];
                    }
                }
                s
            })
            .collect()
    }

    /// Full vertex vector Σ cₙ Φₙ.
    pub fn nodal(&self, coords: &[f64]) -> Vec<f64> {
        self.op.extend(&crate::spectral::reconstruct(&self.basis, coords))
    }
}

/// Smooth bump `amplitude · exp(1 − 1/(1 − |x−c|²/ρ²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub radius: f64,
    #[serde(default = "unit_amplitude")]
    pub amplitude: f64,
}

fn unit_amplitude() -> f64 {
    1.0
}

/// Initial displacement and velocity as bump sums.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    #[serde(default)]
    pub y0: Vec<Bump>,
    #[serde(default)]
    pub y1: Vec<Bump>,
}

/// Nodal values of a bump sum on all mesh vertices.
pub fn bump_sum(bumps: &[Bump], mesh: &TriMesh, region: &dyn Region) -> Result<Vec<f64>, WaveError> {
    let mut out = vec![0.0; mesh.vertices.len()];
    for b in bumps {
        let v = sample_initial_bump(b.center, b.radius, mesh, region)?;
        for (o, x) in out.iter_mut().zip(v) {
            *o += b.amplitude * x;
        }
    }
    Ok(out)
}

/// Cᵢⱼ = ∫ sᵢ(t) sⱼ(t) dt with the given quadrature weights.
pub fn time_gram(series: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let m = series.first().map_or(0, |s| s.len());
    let mut c = vec![vec![0.0; m]; m];
    for (s, wk) in series.iter().zip(weights) {
        for i in 0..m {
            let si = wk * s[i];
            for j in 0..m {
                c[i][j] += si * s[j];
            }
        }
    }
    c
}

/// Cᵢⱼ = ∫ aᵢ(t) bⱼ(t) dt; the two series may have different lengths.
pub fn time_cross(a: &[Vec<f64>], b: &[Vec<f64>], weights: &[f64]) -> Vec<Vec<f64>> {
    let (ma, mb) = (a.first().map_or(0, |s| s.len()), b.first().map_or(0, |s| s.len()));
    let mut c = vec![vec![0.0; mb]; ma];
    for ((x, y), wk) in a.iter().zip(b).zip(weights) {
        for i in 0..ma {
            let xi = wk * x[i];
            for j in 0..mb {
                c[i][j] += xi * y[j];
            }
        }
    }
    c
}

/// aᵀ C b.
pub fn bilinear_form(a: &[f64], c: &[Vec<f64>], b: &[f64]) -> f64 {
    a.iter().zip(c).map(|(ai, row)| ai * row.iter().zip(b).map(|(r, x)| r * x).sum::<f64>()).sum()
}

/// aᵀ C a.
pub fn quad_form(a: &[f64], c: &[Vec<f64>]) -> f64 {
    a.iter().zip(c).map(|(ai, row)| ai * row.iter().zip(a).map(|(r, x)| r * x).sum::<f64>()).sum()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Forcing {
    Zero,
    /// `values[k]` holds the modal forcing at t = k·T/`values.len() - 1`.
    Table { values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveProblem {
    pub eigenvalues: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub forcing: Forcing,
    pub t_final: f64,
    /// Output step is `t_final / n_out`.
    pub n_out: usize,
}

impl WaveProblem {
    pub fn unforced(basis: &ModalBasis, y0: Vec<f64>, y1: Vec<f64>, t_final: f64) -> Self {
        Self {
            eigenvalues: basis.eigenvalues.clone(),
            y0,
            y1,
            forcing: Forcing::Zero,
            t_final,
            n_out: DEFAULT_OUTPUT_STEPS,
        }
    }

    pub fn dt_output(&self) -> f64 {
        self.t_final / self.n_out as f64
    }

    /// Simpson weights on the output grid.
    pub fn time_weights(&self) -> Vec<f64> {
        simpson_weights(self.n_out, self.dt_output())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveTrajectory {
    pub times: Vec<f64>,
    /// Modal displacement per output time.
    pub y: Vec<Vec<f64>>,
    /// Modal velocity per output time.
    pub v: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// ½ Σ (vₙ² + λₙ yₙ²).
pub fn modal_energy(lambdas: &[f64], y: &[f64], v: &[f64]) -> f64 {
    0.5 * lambdas
        .iter()
        .zip(y.iter().zip(v))
        .map(|(l, (a, b))| b * b + l * a * a)
        .sum::<f64>()
}

/// Builds a forcing table with `n_steps` intervals on [0, T].
pub fn sample_forcing(f: impl Fn(f64) -> Vec<f64>, t_final: f64, n_steps: usize) -> Forcing {
    let dt = t_final / n_steps as f64;
    Forcing::Table {
        values: (0..=n_steps).map(|k| f(k as f64 * dt)).collect(),
    }
}

pub fn solve_modal(problem: &WaveProblem) -> Result<WaveTrajectory, WaveError> {
    let m = problem.eigenvalues.len();
    if problem.y0.len() != m || problem.y1.len() != m {
        return Err(WaveError::InvalidArgument(format!(
            "initial data has {} / {} coordinates for {m} modes",
            problem.y0.len(),
            problem.y1.len()
        )));
    }
    if !(problem.t_final > 0.0) || problem.n_out == 0 {
        return Err(WaveError::InvalidArgument("need T > 0 and at least one output step".into()));
    }
    if let Some((mode, &value)) = problem.eigenvalues.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(WaveError::NegativeEigenvalue { mode: mode + 1, value });
    }
    let omega: Vec<f64> = problem.eigenvalues.iter().map(|l| l.sqrt()).collect();
    let dt_out = problem.dt_output();
    let times: Vec<f64> = (0..=problem.n_out).map(|k| k as f64 * dt_out).collect();
    let mut ys = Vec::with_capacity(times.len());
    let mut vs = Vec::with_capacity(times.len());
    for &t in &times {
        let mut y = vec![0.0; m];
        let mut v = vec![0.0; m];
        for n in 0..m {
            let (s, c) = (omega[n] * t).sin_cos();
            y[n] = problem.y0[n] * c + problem.y1[n] / omega[n] * s;
            v[n] = -problem.y0[n] * omega[n] * s + problem.y1[n] * c;
        }
        ys.push(y);
        vs.push(v);
    }
    if let Forcing::Table { values } = &problem.forcing {
        let n_steps = values.len().saturating_sub(1);
        if n_steps == 0 || n_steps % problem.n_out != 0 || values.iter().any(|f| f.len() != m) {
            return Err(WaveError::InvalidArgument(format!(
                "forcing table needs a multiple of {} intervals with {m} modes each",
                problem.n_out
            )));
        }
        let stride = n_steps / problem.n_out;
        let dt = problem.t_final / n_steps as f64;
        for n in 0..m {
            // I(t) = ∫₀ᵗ e^{iω(t−s)} f(s) ds by trapezoid; y = Im I / ω, ẏ = Re I
            let (sr, cr) = (omega[n] * dt).sin_cos();
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..n_steps {
                let f0 = values[k][n];
                let f1 = values[k + 1][n];
                let nre = cr * re - sr * im + 0.5 * dt * (cr * f0 + f1);
                let nim = sr * re + cr * im + 0.5 * dt * (sr * f0);
                re = nre;
                im = nim;
                if (k + 1) % stride == 0 {
                    let out = (k + 1) / stride;
                    ys[out][n] += im / omega[n];
                    vs[out][n] += re;
                }
            }
        }
    }
    let energy = ys
        .iter()
        .zip(&vs)
        .map(|(y, v)| modal_energy(&problem.eigenvalues, y, v))
        .collect();
    Ok(WaveTrajectory {
        times,
        y: ys,
        v: vs,
        energy,
        eigenvalues: problem.eigenvalues.clone(),
    })
}

impl WaveTrajectory {
    /// max_t |E(t) − E(0)| / E(0); zero for the zero trajectory.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energy[0];
        let d = self.energy.iter().fold(0.0f64, |a, e| a.max((e - e0).abs()));
        if e0 > 0.0 {
            d / e0
        } else {
            d
        }
    }

    /// CSV with columns t, E.
    pub fn energy_csv(&self) -> String {
        let mut s = String::from("t,E\n");
        for (t, e) in self.times.iter().zip(&self.energy) {
            s.push_str(&format!("{t:.10e},{e:.17e}\n"));
        }
        s
    }

    /// Text dump: one line per time, `t y_1 .. y_m v_1 .. v_m`.
    pub fn states_text(&self) -> String {
        let mut s = String::new();
        for ((t, y), v) in self.times.iter().zip(&self.y).zip(&self.v) {
            s.push_str(&format!("{t:.10e}"));
            for x in y.iter().chain(v) {
                s.push_str(&format!(" {x:.17e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Nodal interpolant of exp(1 − 1/(1 − |x−c|²/ρ²)) on all mesh vertices.
///
/// Requires `dist(center, ∂Ω) ≥ 1.5 ρ` so the support keeps ρ/2 from the boundary.
pub fn sample_initial_bump(center: Point, radius: f64, mesh: &TriMesh, region: &dyn Region) -> Result<Vec<f64>, WaveError> {
    if !(radius > 0.0) {
        return Err(WaveError::InvalidArgument(format!("bump radius must be positive, got {radius}")));
    }
    let required = 1.5 * radius;
    let distance = if region.contains(center) { region.distance_to_boundary(center) } else { 0.0 };
    if distance < required {
        return Err(WaveError::BumpTouchesBoundary { distance, required });
    }
    Ok(mesh.vertices.iter().map(|&x| bump_value(center, radius, x)).collect())
}

pub fn bump_value(center: Point, radius: f64, x: Point) -> f64 {
    let r2 = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)) / (radius * radius);
    if r2 < 1.0 {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// Modal test function ψ(t) = (T − t)² Σ cₙ qₙ(t)Φₙ with qₙ(t) = aₙ + bₙ t.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl TestFunction {
    fn eval(&self, n: usize, t: f64, t_final: f64) -> (f64, f64, f64) {
        let s = t_final - t;
        let q = self.a[n] + self.b[n] * t;
        let qd = self.b[n];
        let p = s * s * q;
        let pd = -2.0 * s * q + s * s * qd;
        let pdd = 2.0 * q - 4.0 * s * qd;
        (p, pd, pdd)
    }
}

/// Relative residual of the weak form
/// ∬ y ψ_tt + ∬ w∇y·∇ψ = ∬ fψ − ∫ y⁰ ψ_t(0) + ∫ y¹ ψ(0),
/// time integrals by composite Simpson on the output grid.
pub fn weak_form_residual(problem: &WaveProblem, traj: &WaveTrajectory, psi: &TestFunction) -> f64 {
    let m = problem.eigenvalues.len();
    let t_final = problem.t_final;
    let w = simpson_weights(problem.n_out, problem.dt_output());
    let forcing_at = |k: usize, n: usize| -> f64 {
        match &problem.forcing {
            Forcing::Zero => 0.0,
            Forcing::Table { values } => values[k * ((values.len() - 1) / problem.n_out)][n],
        }
    };
    let (mut acc, mut stiff, mut force) = (0.0, 0.0, 0.0);
    for (k, (&t, wk)) in traj.times.iter().zip(&w).enumerate() {
        for n in 0..m {
            let (p, _, pdd) = psi.eval(n, t, t_final);
            acc += wk * traj.y[k][n] * pdd;
            stiff += wk * problem.eigenvalues[n] * traj.y[k][n] * p;
            force += wk * forcing_at(k, n) * p;
        }
    }
    let (mut init_v, mut init_y) = (0.0, 0.0);
    for n in 0..m {
        let (p0, pd0, _) = psi.eval(n, 0.0, t_final);
        init_y += problem.y0[n] * pd0;
        init_v += problem.y1[n] * p0;
    }
    let lhs = acc + stiff;
    let rhs = force - init_y + init_v;
    let scale = acc.abs() + stiff.abs() + force.abs() + init_y.abs() + init_v.abs();
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_pinched_annulus;
    use crate::mesh::triangulate;
    use proptest::prelude::*;

    fn lambdas() -> Vec<f64> {
        vec![2.65, 5.1, 7.3, 9.9, 12.4]
    }

    fn unit(m: usize, i: usize) -> Vec<f64> {
        (0..m).map(|k| if k == i { 1.0 } else { 0.0 }).collect()
    }

    fn problem(y0: Vec<f64>, y1: Vec<f64>, t: f64) -> WaveProblem {
        WaveProblem {
            eigenvalues: lambdas(),
            y0,
            y1,
            forcing: Forcing::Zero,
            t_final: t,
            n_out: 256,
        }
    }

    #[test]
    fn single_mode_standing_wave() {
        let l = lambdas();
        let traj = solve_modal(&problem(unit(5, 0), vec![0.0; 5], 8.0)).unwrap();
        for (k, &t) in traj.times.iter().enumerate() {
            assert!((traj.y[k][0] - (l[0].sqrt() * t).cos()).abs() < 1e-14);
            assert!(traj.y[k][1..].iter().all(|&x| x == 0.0));
            assert!((traj.energy[k] - l[0] / 2.0).abs() <= 1e-13);
        }
    }

    #[test]
    fn zero_data_zero_trajectory() {
        let traj = solve_modal(&problem(vec![0.0; 5], vec![0.0; 5], 4.0)).unwrap();
        assert!(traj.y.iter().chain(&traj.v).flatten().all(|&x| x == 0.0));
        assert_eq!(traj.energy_drift(), 0.0);
    }

    #[test]
    fn velocity_mode_energy_half() {
        let traj = solve_modal(&problem(vec![0.0; 5], unit(5, 1), 8.0)).unwrap();
        assert!((traj.energy[0] - 0.5).abs() <= 1e-12);
        assert!(traj.energy.iter().all(|e| (e - 0.5).abs() <= 1e-12));
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        let mut p = problem(vec![0.0; 5], vec![0.0; 5], 1.0);
        p.eigenvalues[2] = -1.0;
        assert!(matches!(solve_modal(&p), Err(WaveError::NegativeEigenvalue { mode: 3, .. })));
    }

    #[test]
    fn manufactured_forcing_second_order() {
        // y = sin(t) e₁ solves ÿ + λ₁ y = (λ₁ − 1) sin(t) e₁ with y(0) = 0, ẏ(0) = e₁
        let l = lambdas();
        let t_final = 6.0;
        let err = |n_steps: usize| {
            let p = WaveProblem {
                eigenvalues: l.clone(),
                y0: vec![0.0; 5],
                y1: unit(5, 0),
                forcing: sample_forcing(|t| (0..5).map(|n| if n == 0 { (l[0] - 1.0) * t.sin() } else { 0.0 }).collect(), t_final, n_steps),
                t_final,
                n_out: 64,
            };
            let traj = solve_modal(&p).unwrap();
            traj.times
                .iter()
                .zip(&traj.y)
                .map(|(t, y)| (y[0] - t.sin()).abs())
                .fold(0.0, f64::max)
        };
        let e1 = err(512);
        let e2 = err(1024);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "{e1} {e2} {order}");
        assert!(e2 < 1e-4);
    }

    #[test]
    fn weak_form_holds() {
        let p = problem(vec![0.3, -0.2, 0.1, 0.05, 0.0], vec![0.0, 0.4, -0.1, 0.0, 0.2], 5.0);
        let traj = solve_modal(&p).unwrap();
        let psi = TestFunction {
            a: vec![0.5, -1.0, 0.7, 0.2, -0.3],
            b: vec![0.1, 0.3, -0.2, 0.4, 0.05],
        };
        assert!(weak_form_residual(&p, &traj, &psi) <= 1e-6);
    }

    #[test]
    fn weak_form_with_forcing() {
        let l = lambdas();
        let mut p = problem(vec![0.0; 5], unit(5, 0), 6.0);
        p.forcing = sample_forcing(|t| (0..5).map(|n| if n == 0 { (l[0] - 1.0) * t.sin() } else { 0.0 }).collect(), 6.0, 2048);
        let traj = solve_modal(&p).unwrap();
        let psi = TestFunction {
            a: vec![1.0; 5],
            b: vec![0.2; 5],
        };
        assert!(weak_form_residual(&p, &traj, &psi) <= 1e-6);
    }

    #[test]
    fn forcing_table_must_align() {
        let mut p = problem(vec![0.0; 5], vec![0.0; 5], 1.0);
        p.forcing = sample_forcing(|_| vec![0.0; 5], 1.0, 300);
        assert!(matches!(solve_modal(&p), Err(WaveError::InvalidArgument(_))));
    }

    #[test]
    fn bump_examples() {
        let dom = make_pinched_annulus();
        let mesh = triangulate(&dom, 0.2, 1.0).unwrap();
        let u = sample_initial_bump([0.0, 1.5], 0.4, &mesh, &dom).unwrap();
        let flags = mesh.boundary_vertex_flags();
        assert!(u.iter().zip(&flags).all(|(x, &b)| !b || *x == 0.0));
        assert!(u.iter().any(|&x| x > 0.0));
        assert_eq!(bump_value([0.0, 1.5], 0.4, [0.0, 1.5]), 1.0);
        assert!(matches!(
            sample_initial_bump([0.0, 0.0], 0.1, &mesh, &dom),
            Err(WaveError::BumpTouchesBoundary { .. })
        ));
    }

    #[test]
    fn csv_and_dump() {
        let traj = solve_modal(&problem(unit(5, 0), vec![0.0; 5], 1.0)).unwrap();
        let csv = traj.energy_csv();
        assert!(csv.starts_with("t,E\n"));
        assert_eq!(csv.lines().count(), 258);
        let dump = traj.states_text();
        assert_eq!(dump.lines().next().unwrap().split(' ').count(), 11);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn energy_conserved(y0 in prop::collection::vec(-1.0f64..1.0, 5), y1 in prop::collection::vec(-1.0f64..1.0, 5), t in 0.5f64..20.0) {
            let traj = solve_modal(&problem(y0, y1, t)).unwrap();
            prop_assert!(traj.energy_drift() <= 1e-10);
        }

        #[test]
        fn linear_in_data(y0 in prop::collection::vec(-1.0f64..1.0, 5), y1 in prop::collection::vec(-1.0f64..1.0, 5), a in -5.0f64..5.0) {
            let base = solve_modal(&problem(y0.clone(), y1.clone(), 3.0)).unwrap();
            let scaled = solve_modal(&problem(y0.iter().map(|x| a * x).collect(), y1.iter().map(|x| a * x).collect(), 3.0)).unwrap();
            for (ys, yb) in scaled.y.iter().zip(&base.y) {
                for (s, b) in ys.iter().zip(yb) {
                    prop_assert!((s - a * b).abs() <= 1e-14 * (1.0 + a.abs()));
                }
            }
        }
    }
}
