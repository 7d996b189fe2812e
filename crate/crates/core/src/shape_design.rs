//! ε-sweep: solve on each Ω_ε, extend by zero to the Ω mesh and compare with
//! a direct degenerate solve on Ω.
//!
//! All gaps are assembled on the parent mesh from modal time Gram matrices,
//! e.g. ∫‖E y_ε − y_ref‖²_K dt = tr(K_rr C_rr) − 2 tr(K_rc C_rcᵀ) + tr(K_cc C_cc).

use crate::geometry::{norm, DomainSpec, Region};
use crate::mesh::{build_epsilon_ladder, extend_by_zero, restrict, FacetTag, MeshError, MeshOptions, TriMesh};
use crate::sparse::{dot, CsrMatrix};
use crate::spectral::project;
use crate::wave_solver::{bump_sum, solve_modal, time_cross, time_gram, InitialData, ModalModel, WaveError, WaveProblem, WaveTrajectory};
use crate::weighted_assembly::mesh_id;
use crate::quadrature::simpson_weights;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

pub const EXTENSION_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error("FACET_MISMATCH: {0}")]
    FacetMismatch(String),
    #[error("invalid sweep argument: {0}")]
    InvalidArgument(String),
}

/// The direct solve on the Ω mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDescriptor {
    pub mesh_id: String,
    pub n_vertices: usize,
    pub h_max: f64,
    pub m: usize,
    pub lambda1: f64,
    /// (∫₀ᵀ ‖y_ref‖²_K dt)^½.
    pub energy_norm: f64,
    /// (∫₀ᵀ ‖∂ₜy_ref‖²_M dt)^½.
    pub dt_norm: f64,
    /// (∫₀ᵀ ∫ (∂y_ref/∂ν)² dS dt)^½ over ∂Ω − B(0, R₀).
    pub trace_norm: f64,
    pub n_trace_facets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub epsilons: Vec<f64>,
    pub energy_gap: Vec<f64>,
    pub dt_gap: Vec<f64>,
    pub trace_gap: Vec<f64>,
    pub energy_gap_rel: Vec<f64>,
    pub dt_gap_rel: Vec<f64>,
    pub trace_gap_rel: Vec<f64>,
    /// max relative |(Eu)ᵀK(Eu) − uᵀK_εu| over the probe vectors of each level.
    pub extension_defect: Vec<f64>,
    pub mesh_ids: Vec<String>,
    pub reference: ReferenceDescriptor,
    pub energy_decreasing: bool,
    pub dt_decreasing: bool,
    pub trace_decreasing: bool,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

impl SweepResult {
    /// `epsilon,energy_gap,dt_gap,trace_gap` followed by the relative gaps.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,energy_gap,dt_gap,trace_gap,energy_gap_rel,dt_gap_rel,trace_gap_rel\n");
        for i in 0..self.epsilons.len() {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                self.epsilons[i], self.energy_gap[i], self.dt_gap[i], self.trace_gap[i], self.energy_gap_rel[i], self.dt_gap_rel[i], self.trace_gap_rel[i]
            ));
        }
        s
    }

    /// Plot data with log-scaled ε on the x axis.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("log10_epsilon,log10_energy_gap_rel,log10_dt_gap_rel,log10_trace_gap_rel\n");
        for i in 0..self.epsilons.len() {
            s.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{:.12e}\n",
                self.epsilons[i].log10(),
                self.energy_gap_rel[i].log10(),
                self.dt_gap_rel[i].log10(),
                self.trace_gap_rel[i].log10()
            ));
        }
        s
    }
}

/// Extension by zero of a child coefficient vector to the parent mesh.
pub fn extend_coefficients(child: &TriMesh, u: &[f64], parent_len: usize) -> Result<Vec<f64>, ShapeError> {
    Ok(extend_by_zero(child, u, parent_len)?)
}

/// Relative |(Eu)ᵀK(Eu) − uᵀK_εu| for a full-vertex child vector `u`.
pub fn extension_defect(parent_k: &CsrMatrix, child_k: &CsrMatrix, child: &TriMesh, u: &[f64]) -> Result<f64, ShapeError> {
    let eu = extend_by_zero(child, u, parent_k.n_rows)?;
    let lhs = parent_k.quad_form(&eu);
    let rhs = child_k.quad_form(u);
    Ok(if rhs == 0.0 && lhs == 0.0 { 0.0 } else { (lhs - rhs).abs() / rhs.abs().max(lhs.abs()) })
}

/// Parent facets of ∂Ω − B(0, r0) keyed by their parent vertex pair.
fn far_facets(mesh: &TriMesh, to_parent: impl Fn(usize) -> usize, r0: f64) -> HashMap<(usize, usize), (usize, FacetTag)> {
    mesh.boundary_facets
        .iter()
        .enumerate()
        .filter(|(_, f)| f.tag != FacetTag::ArtificialCut && norm(mesh.facet_midpoint(f)) >= r0)
        .map(|(i, f)| {
            let (a, b) = (to_parent(f.vertices[0]), to_parent(f.vertices[1]));
            ((a.min(b), a.max(b)), (i, f.tag))
        })
        .collect()
}

/// For each parent facet on ∂Ω − B(0, r0), the matching child facet index.
/// Fails unless both facet sets coincide.
pub fn match_far_facets(parent: &TriMesh, child: &TriMesh, r0: f64) -> Result<Vec<(usize, usize)>, ShapeError> {
    let pm = child.parent_map.as_ref().ok_or(MeshError::NoParentMap)?;
    let pf = far_facets(parent, |v| v, r0);
    let cf = far_facets(child, |v| pm.vertex_map[v], r0);
    if pf.len() != cf.len() {
        return Err(ShapeError::FacetMismatch(format!("parent has {} facets beyond R0, child has {}", pf.len(), cf.len())));
    }
    let mut out = Vec::with_capacity(pf.len());
    for (key, (pi, ptag)) in &pf {
        match cf.get(key) {
            Some((ci, ctag)) if ctag == ptag => out.push((*pi, *ci)),
            _ => return Err(ShapeError::FacetMismatch(format!("parent facet {pi} has no child counterpart"))),
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Child modes extended by zero, as parent interior vectors.
fn extended_modes(parent: &ModalModel, child: &ModalModel) -> Result<Vec<Vec<f64>>, ShapeError> {
    child
        .basis
        .eigenvectors
        .iter()
        .map(|phi| Ok(parent.op.restrict(&extend_by_zero(&child.mesh, &child.op.extend(phi), parent.mesh.vertices.len())?)))
        .collect()
}

fn gram(a: &[Vec<f64>], mat: &CsrMatrix, b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mb: Vec<Vec<f64>> = b.par_iter().map(|x| mat.matvec(x)).collect();
    a.par_iter().map(|x| mb.iter().map(|y| dot(x, y)).collect()).collect()
}

/// Σᵢⱼ Aᵢⱼ Bᵢⱼ.
fn frobenius(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).sum()
}

fn gap_squared(self_r: f64, cross: f64, self_c: f64) -> f64 {
    (self_r - 2.0 * cross + self_c).max(0.0)
}

struct Level {
    model: ModalModel,
    traj: WaveTrajectory,
}

fn solve_level(mesh: TriMesh, alpha: f64, m: usize, y0: &[f64], y1: &[f64], t_final: f64) -> Result<Level, ShapeError> {
    let model = ModalModel::build(mesh, alpha, m)?;
    let c0 = project(&model.basis, &model.op, &model.op.restrict(y0));
    let c1 = project(&model.basis, &model.op, &model.op.restrict(y1));
    let traj = solve_modal(&WaveProblem::unforced(&model.basis, c0, c1, t_final))?;
    Ok(Level { model, traj })
}

/// Flux coefficient of each mode on a facet, ∂Φₙ/∂ν.
fn facet_coeffs(model: &ModalModel, facet: usize) -> (Vec<f64>, f64) {
    let f = &model.mesh.boundary_facets[facet];
    let (nu, len) = model.mesh.facet_normal(f);
    (model.mode_gradients(f.triangle).iter().map(|g| g[0] * nu[0] + g[1] * nu[1]).collect(), len)
}

#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    domain: &DomainSpec,
    epsilons: &[f64],
    alpha: f64,
    initial: &InitialData,
    t_final: f64,
    m: usize,
    h_max: f64,
    grading: f64,
) -> Result<SweepResult, ShapeError> {
    if !(t_final > 0.0) {
        return Err(ShapeError::InvalidArgument(format!("T must be positive, got {t_final}")));
    }
    let ladder = build_epsilon_ladder(domain, epsilons, &MeshOptions::new(h_max, grading))?;
    // smallest Ω_ε first: bumps must sit inside it so restriction is trivial
    let y0 = bump_sum(&initial.y0, &ladder.parent, &ladder.cuts[0])?;
    let y1 = bump_sum(&initial.y1, &ladder.parent, &ladder.cuts[0])?;
    let parent_len = ladder.parent.vertices.len();

    let mut jobs: Vec<TriMesh> = vec![ladder.parent.clone()];
    jobs.extend(ladder.meshes.iter().cloned());
    let mut levels: Vec<Level> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(i, mesh)| {
            if i == 0 {
                solve_level(mesh, alpha, m, &y0, &y1, t_final)
            } else {
                let (a, b) = (restrict(&mesh, &y0)?, restrict(&mesh, &y1)?);
                solve_level(mesh, alpha, m, &a, &b, t_final)
            }
        })
        .collect::<Result<_, _>>()?;
    let children = levels.split_off(1);
    let reference = levels.pop().expect("reference level");
    let r = &reference.model;

    let w = simpson_weights(reference.traj.times.len() - 1, reference.traj.times[1]);
    let cy_rr = time_gram(&reference.traj.y, &w);
    let cv_rr = time_gram(&reference.traj.v, &w);
    let k_rr = gram(&r.basis.eigenvectors, &r.op.k_ii, &r.basis.eigenvectors);
    let m_rr = gram(&r.basis.eigenvectors, &r.op.m_ii, &r.basis.eigenvectors);
    let e_rr = frobenius(&k_rr, &cy_rr);
    let d_rr = frobenius(&m_rr, &cv_rr);

    let ref_far = far_facets(&r.mesh, |v| v, domain.r0());
    let mut ref_facets: Vec<usize> = ref_far.values().map(|(i, _)| *i).collect();
    ref_facets.sort_unstable();
    let ref_coeffs: BTreeMap<usize, (Vec<f64>, f64)> = ref_facets.iter().map(|&i| (i, facet_coeffs(r, i))).collect();
    let t_rr: f64 = ref_coeffs.values().map(|(a, len)| len * crate::wave_solver::quad_form(a, &cy_rr)).sum();

    let mut out = SweepResult {
        epsilons: epsilons.to_vec(),
        energy_gap: Vec::new(),
        dt_gap: Vec::new(),
        trace_gap: Vec::new(),
        energy_gap_rel: Vec::new(),
        dt_gap_rel: Vec::new(),
        trace_gap_rel: Vec::new(),
        extension_defect: Vec::new(),
        mesh_ids: Vec::new(),
        reference: ReferenceDescriptor {
            mesh_id: mesh_id(&r.mesh),
            n_vertices: parent_len,
            h_max: r.mesh.h_max,
            m,
            lambda1: r.basis.eigenvalues[0],
            energy_norm: e_rr.sqrt(),
            dt_norm: d_rr.sqrt(),
            trace_norm: t_rr.sqrt(),
            n_trace_facets: ref_facets.len(),
        },
        energy_decreasing: false,
        dt_decreasing: false,
        trace_decreasing: false,
    };

    for ch in &children {
        let c = &ch.model;
        let ext = extended_modes(r, c)?;
        let k_rc = gram(&r.basis.eigenvectors, &r.op.k_ii, &ext);
        let k_cc = gram(&ext, &r.op.k_ii, &ext);
        let m_rc = gram(&r.basis.eigenvectors, &r.op.m_ii, &ext);
        let m_cc = gram(&ext, &r.op.m_ii, &ext);
        let cy_rc = time_cross(&reference.traj.y, &ch.traj.y, &w);
        let cy_cc = time_gram(&ch.traj.y, &w);
        let cv_rc = time_cross(&reference.traj.v, &ch.traj.v, &w);
        let cv_cc = time_gram(&ch.traj.v, &w);
        let e2 = gap_squared(e_rr, frobenius(&k_rc, &cy_rc), frobenius(&k_cc, &cy_cc));
        let d2 = gap_squared(d_rr, frobenius(&m_rc, &cv_rc), frobenius(&m_cc, &cv_cc));

        let pairs = match_far_facets(&r.mesh, &c.mesh, domain.r0())?;
        let mut t2 = 0.0;
        for (pi, ci) in pairs {
            let (ar, len) = &ref_coeffs[&pi];
            let (ac, _) = facet_coeffs(c, ci);
            t2 += len
                * (crate::wave_solver::quad_form(ar, &cy_rr) - 2.0 * crate::wave_solver::bilinear_form(ar, &cy_rc, &ac)
                    + crate::wave_solver::quad_form(&ac, &cy_cc));
        }
        let t2 = t2.max(0.0);

        let n = ch.traj.times.len() - 1;
        let child_k = c.op.stiffness.clone();
        let mut defect = 0.0f64;
        for coords in [&ch.traj.y[0], &ch.traj.y[n / 2], &ch.traj.y[n]] {
            defect = defect.max(extension_defect(&r.op.stiffness, &child_k, &c.mesh, &c.nodal(coords))?);
        }
        defect = defect.max(extension_defect(&r.op.stiffness, &child_k, &c.mesh, &c.op.extend(&c.basis.eigenvectors[0]))?);

        out.energy_gap.push(e2.sqrt());
        out.dt_gap.push(d2.sqrt());
        out.trace_gap.push(t2.sqrt());
        out.energy_gap_rel.push(rel(e2.sqrt(), out.reference.energy_norm));
        out.dt_gap_rel.push(rel(d2.sqrt(), out.reference.dt_norm));
        out.trace_gap_rel.push(rel(t2.sqrt(), out.reference.trace_norm));
        out.extension_defect.push(defect);
        out.mesh_ids.push(mesh_id(&c.mesh));
    }
    out.energy_decreasing = strictly_decreasing(&out.energy_gap);
    out.dt_decreasing = strictly_decreasing(&out.dt_gap);
    out.trace_decreasing = strictly_decreasing(&out.trace_gap);
    Ok(out)
}

fn rel(gap: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        gap / norm
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_pinched_annulus;
    use crate::mesh::triangulate;
    use crate::wave_solver::Bump;
    use crate::weighted_assembly::assemble;
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn ladder() -> &'static crate::mesh::EpsilonLadder {
        static L: OnceLock<crate::mesh::EpsilonLadder> = OnceLock::new();
        L.get_or_init(|| build_epsilon_ladder(&make_pinched_annulus(), &[0.06, 0.03], &MeshOptions::new(0.15, 1.0)).unwrap())
    }

    fn ops() -> &'static (CsrMatrix, Vec<CsrMatrix>) {
        static O: OnceLock<(CsrMatrix, Vec<CsrMatrix>)> = OnceLock::new();
        O.get_or_init(|| {
            let l = ladder();
            let p = assemble(&l.parent, 0.5).unwrap().stiffness;
            let c = l.meshes.iter().map(|m| assemble(m, 0.5).unwrap().stiffness).collect();
            (p, c)
        })
    }

    #[test]
    fn zero_extends_to_zero() {
        let l = ladder();
        let child = &l.meshes[1];
        let e = extend_coefficients(child, &vec![0.0; child.vertices.len()], l.parent.vertices.len()).unwrap();
        assert!(e.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn extension_needs_parent_map() {
        let l = ladder();
        let u = vec![0.0; l.parent.vertices.len()];
        assert_eq!(extend_coefficients(&l.parent, &u, u.len()), Err(ShapeError::Mesh(MeshError::NoParentMap)));
        let standalone = triangulate(&make_pinched_annulus(), 0.3, 1.0).unwrap();
        assert!(match_far_facets(&l.parent, &standalone, 0.5).is_err());
    }

    #[test]
    fn extension_vanishes_in_removed_region() {
        let l = ladder();
        for (child, cut) in l.meshes.iter().zip(&l.cuts) {
            // indicator of the child vertices closest to the cut
            let u: Vec<f64> = child.vertices.iter().map(|p| if norm(*p) < 3.0 * cut.epsilon { 1.0 } else { 0.0 }).collect();
            let e = extend_coefficients(child, &u, l.parent.vertices.len()).unwrap();
            let kept: std::collections::HashSet<usize> = child.parent_map.as_ref().unwrap().vertex_map.iter().copied().collect();
            let mut n_removed = 0;
            for (i, (p, v)) in l.parent.vertices.iter().zip(&e).enumerate() {
                if cut.in_removed_region(*p) && cut.distance_to_boundary(*p) > 1e-9 {
                    assert!(!kept.contains(&i));
                    n_removed += 1;
                }
                if !kept.contains(&i) {
                    assert_eq!(*v, 0.0);
                }
            }
            assert!(n_removed > 0);
        }
    }

    #[test]
    fn far_facets_coincide_across_ladder() {
        let l = ladder();
        let n_parent = far_facets(&l.parent, |v| v, 0.5).len();
        assert!(n_parent > 50);
        for child in &l.meshes {
            let pairs = match_far_facets(&l.parent, child, 0.5).unwrap();
            assert_eq!(pairs.len(), n_parent);
            let pm = child.parent_map.as_ref().unwrap();
            for (pi, ci) in pairs {
                let pf = &l.parent.boundary_facets[pi];
                let cf = &child.boundary_facets[ci];
                assert_eq!(pm.triangle_map[cf.triangle], pf.triangle);
                assert_eq!(child.facet_normal(cf), l.parent.facet_normal(pf));
            }
        }
    }

    #[test]
    fn sweep_with_zero_data_has_zero_gaps() {
        let r = run_sweep(&make_pinched_annulus(), &[0.06, 0.03], 0.5, &InitialData::default(), 2.0, 8, 0.15, 1.0).unwrap();
        for v in [&r.energy_gap, &r.dt_gap, &r.trace_gap, &r.energy_gap_rel, &r.trace_gap_rel] {
            assert!(v.iter().all(|x| *x == 0.0), "{v:?}");
        }
        assert!(r.to_csv().starts_with("epsilon,energy_gap,dt_gap,trace_gap"));
    }

    #[test]
    fn small_sweep_reports_consistent_fields() {
        let data = InitialData {
            y0: vec![Bump { center: [0.0, 1.5], radius: 0.4, amplitude: 1.0 }],
            y1: vec![],
        };
        let r = run_sweep(&make_pinched_annulus(), &[0.06, 0.03], 0.5, &data, 3.0, 16, 0.15, 1.0).unwrap();
        assert_eq!(r.energy_gap.len(), 2);
        assert!(r.reference.energy_norm > 0.0 && r.reference.trace_norm > 0.0);
        assert!(r.trace_gap_rel.iter().all(|g| *g < 0.5));
        assert!(r.extension_defect.iter().all(|d| *d <= EXTENSION_TOL), "{:?}", r.extension_defect);
        assert_eq!(r.plot_data().lines().count(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn extension_preserves_energy(seed in any::<u64>(), level in 0usize..2) {
            use rand::{Rng, SeedableRng};
            let l = ladder();
            let (pk, cks) = ops();
            let child = &l.meshes[level];
            let flags = child.boundary_vertex_flags();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = flags.iter().map(|b| if *b { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
            let d = extension_defect(pk, &cks[level], child, &u).unwrap();
            prop_assert!(d <= EXTENSION_TOL, "defect {d}");
        }
    }
}
