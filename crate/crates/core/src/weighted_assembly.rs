//! P1 assembly of the weighted stiffness `∫ w ∇φᵢ·∇φⱼ` (w = |x|^α), the
//! mass matrix and the Hardy Gram matrix `∫ |x|^{α-2} φᵢφⱼ`, plus the
//! discrete Hardy and Poincaré checks.
//!
//! Triangles with a vertex at the origin are integrated in the collapsed
//! coordinates `x = s(A + t(B - A))`, where the radial factor `s^α` is
//! integrated exactly.

use crate::geometry::{norm, Point};
use crate::mesh::TriMesh;
use crate::quadrature::{gl32, triangle64, triangle7};
use crate::sparse::CsrMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Spatial dimension.
pub const N_DIM: f64 = 2.0;

/// Subdivision budget for the Hardy Gram quadrature.
pub const MAX_LEVELS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("QUADRATURE_OVERFLOW: Hardy Gram integral on triangle {triangle} did not converge within {levels} levels")]
    QuadratureOverflow { triangle: usize, levels: usize },
    #[error("invalid assembly argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug)]
pub struct WeightedOperator {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    pub hardy_gram: CsrMatrix,
    pub alpha: f64,
    pub mesh_ref: String,
    /// Vertex indices not on the boundary, ascending.
    pub interior_dofs: Vec<usize>,
    pub n_vertices: usize,
    pub k_ii: CsrMatrix,
    pub m_ii: CsrMatrix,
    pub g_ii: CsrMatrix,
}

/// Identifier of a mesh by size and a checksum of its coordinates.
pub fn mesh_id(mesh: &TriMesh) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in &mesh.vertices {
        for c in p {
            for b in c.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
    }
    format!("mesh-v{}-t{}-{:016x}", mesh.vertices.len(), mesh.triangles.len(), h)
}

/// Gradients of the three P1 basis functions and the triangle area.
pub fn p1_gradients(p: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        g[i] = [(p[j][1] - p[k][1]) / det, (p[k][0] - p[j][0]) / det];
    }
    (g, 0.5 * det)
}

/// Rotates a triangle so the origin vertex (if any) comes first. Returns the
/// rotation offset.
fn origin_vertex(p: &[Point; 3]) -> Option<usize> {
    p.iter().position(|q| q[0] == 0.0 && q[1] == 0.0)
}

/// ∫_T |x|^α dx.
pub fn weight_integral(p: [Point; 3], alpha: f64) -> f64 {
    let (_, area) = p1_gradients(p);
    match origin_vertex(&p) {
        Some(o) => {
            let a = p[(o + 1) % 3];
            let b = p[(o + 2) % 3];
            let det = (a[0] * b[1] - a[1] * b[0]).abs();
            let ang = gl32(
                &|t: f64| norm([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]).powf(alpha),
                0.0,
                1.0,
            );
            det / (2.0 + alpha) * ang
        }
        None => {
            area * triangle7()
                .iter()
                .map(|(l, w)| w * norm(bary_point(&p, l)).powf(alpha))
                .sum::<f64>()
        }
    }
}

fn bary_point(p: &[Point; 3], l: &[f64; 3]) -> Point {
    [
        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
    ]
}

/// ∫₀¹ s^{α-1+p} (1-s)^k ds.
fn beta_sum(alpha: f64, p: u32, k: u32) -> f64 {
    let mut binom = 1.0;
    let mut s = 0.0;
    for j in 0..=k {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        s += sign * binom / (alpha + p as f64 + j as f64);
        binom = binom * (k - j) as f64 / (j + 1) as f64;
    }
    s
}

fn adaptive_gl(f: &impl Fn(f64) -> [f64; 3], a: f64, b: f64, whole: [f64; 3], level: usize, tol: f64) -> Option<[f64; 3]> {
    let m = 0.5 * (a + b);
    let left = gl3(f, a, m);
    let right = gl3(f, m, b);
    let sum = [left[0] + right[0], left[1] + right[1], left[2] + right[2]];
    let err = (0..3).map(|k| (sum[k] - whole[k]).abs()).fold(0.0, f64::max);
    let size = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if err <= tol || err <= 64.0 * f64::EPSILON * size {
        return Some(sum);
    }
    if level >= MAX_LEVELS {
        return None;
    }
    let l = adaptive_gl(f, a, m, left, level + 1, 0.5 * tol)?;
    let r = adaptive_gl(f, m, b, right, level + 1, 0.5 * tol)?;
    Some([l[0] + r[0], l[1] + r[1], l[2] + r[2]])
}

fn gl3(f: &impl Fn(f64) -> [f64; 3], a: f64, b: f64) -> [f64; 3] {
    let (x, w) = crate::quadrature::gl32_unit();
    let h = b - a;
    let mut s = [0.0; 3];
    for (t, wt) in x.iter().zip(w) {
        let v = f(a + h * t);
        for k in 0..3 {
            s[k] += wt * v[k] * h;
        }
    }
    s
}

/// Element Hardy Gram matrix, entries ordered as the triangle's vertices.
pub fn hardy_element(p: [Point; 3], alpha: f64, triangle: usize) -> Result<[[f64; 3]; 3], AssemblyError> {
    let beta = alpha - 2.0;
    let mut g = [[0.0; 3]; 3];
    if let Some(o) = origin_vertex(&p) {
        let ia = (o + 1) % 3;
        let ib = (o + 2) % 3;
        let a = p[ia];
        let b = p[ib];
        let det = (a[0] * b[1] - a[1] * b[0]).abs();
        // φ_o = 1-s, φ_a = s(1-t), φ_b = st; measure s·det ds dt; |x|^β = s^β |q(t)|^β
        let q = |t: f64| norm([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]).powf(beta);
        let t_moments = |t: f64| {
            let v = q(t);
            [v, v * t, v * t * t]
        };
        let whole = gl3(&t_moments, 0.0, 1.0);
        let scale = whole[0].abs().max(1e-300);
        let m = adaptive_gl(&t_moments, 0.0, 1.0, whole, 0, 1e-14 * scale)
            .ok_or(AssemblyError::QuadratureOverflow { triangle, levels: MAX_LEVELS })?;
        // ∫q, ∫q t, ∫q t²; (1-t) moments follow by linearity
        let q0 = m[0];
        let q1 = m[1];
        let q2 = m[2];
        let one_minus_t = q0 - q1;
        let one_minus_t_sq = q0 - 2.0 * q1 + q2;
        let t_one_minus_t = q1 - q2;
        let s00 = beta_sum(alpha, 0, 2);
        let s01 = beta_sum(alpha, 1, 1);
        let s11 = beta_sum(alpha, 2, 0);
        g[o][o] = det * s00 * q0;
        g[o][ia] = det * s01 * one_minus_t;
        g[o][ib] = det * s01 * q1;
        g[ia][ia] = det * s11 * one_minus_t_sq;
        g[ia][ib] = det * s11 * t_one_minus_t;
        g[ib][ib] = det * s11 * q2;
        g[ia][o] = g[o][ia];
        g[ib][o] = g[o][ib];
        g[ib][ia] = g[ia][ib];
        return Ok(g);
    }
    let (_, area) = p1_gradients(p);
    let rule = |tri: &[[f64; 3]; 3]| -> [f64; 6] {
        // tri holds barycentric coordinates (w.r.t. p) of the sub-triangle corners
        // dyadic barycentric corners make this determinant exact
        let bary_det = (tri[1][1] - tri[0][1]) * (tri[2][2] - tri[0][2]) - (tri[2][1] - tri[0][1]) * (tri[1][2] - tri[0][2]);
        let sub_area = area * bary_det;
        let mut s = [0.0; 6];
        for (l, w) in triangle64() {
            let lam = [
                l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
                l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
                l[0] * tri[0][2] + l[1] * tri[1][2] + l[2] * tri[2][2],
            ];
            let v = w * sub_area * norm(bary_point(&p, &lam)).powf(beta);
            s[0] += v * lam[0] * lam[0];
            s[1] += v * lam[0] * lam[1];
            s[2] += v * lam[0] * lam[2];
            s[3] += v * lam[1] * lam[1];
            s[4] += v * lam[1] * lam[2];
            s[5] += v * lam[2] * lam[2];
        }
        s
    };
    let root = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let whole = rule(&root);
    let scale = whole.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let s = adaptive_tri(&rule, root, whole, 0, 1e-13 * scale)
        .ok_or(AssemblyError::QuadratureOverflow { triangle, levels: MAX_LEVELS })?;
    let idx = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = s[idx[i][j]];
        }
    }
    Ok(g)
}

fn adaptive_tri(
    rule: &impl Fn(&[[f64; 3]; 3]) -> [f64; 6],
    tri: [[f64; 3]; 3],
    whole: [f64; 6],
    level: usize,
    tol: f64,
) -> Option<[f64; 6]> {
    let mid = |a: [f64; 3], b: [f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    let m01 = mid(tri[0], tri[1]);
    let m12 = mid(tri[1], tri[2]);
    let m20 = mid(tri[2], tri[0]);
    let kids = [
        [tri[0], m01, m20],
        [m01, tri[1], m12],
        [m20, m12, tri[2]],
        [m01, m12, m20],
    ];
    let vals: Vec<[f64; 6]> = kids.iter().map(rule).collect();
    let mut sum = [0.0; 6];
    for v in &vals {
        for k in 0..6 {
            sum[k] += v[k];
        }
    }
    let err = (0..6).map(|k| (sum[k] - whole[k]).abs()).fold(0.0, f64::max);
    let size = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if err <= tol || err <= 64.0 * f64::EPSILON * size {
        return Some(sum);
    }
    if level >= MAX_LEVELS {
        return None;
    }
    let mut out = [0.0; 6];
    for (kid, v) in kids.iter().zip(vals) {
        let r = adaptive_tri(rule, *kid, v, level + 1, 0.25 * tol)?;
        for k in 0..6 {
            out[k] += r[k];
        }
    }
    Some(out)
}

fn mass_element(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Per-triangle ∫_T w for every triangle of the mesh.
pub fn triangle_weights(mesh: &TriMesh, alpha: f64) -> Vec<f64> {
    mesh.triangles
        .par_iter()
        .map(|t| weight_integral(t.map(|i| mesh.vertices[i]), alpha))
        .collect()
}

struct Elements {
    k: Vec<[[f64; 3]; 3]>,
    m: Vec<[[f64; 3]; 3]>,
    g: Vec<[[f64; 3]; 3]>,
}

fn element_matrices(mesh: &TriMesh, alpha: f64, with_gram: bool) -> Result<Elements, AssemblyError> {
    let per: Vec<Result<([[f64; 3]; 3], [[f64; 3]; 3], [[f64; 3]; 3]), AssemblyError>> = mesh
        .triangles
        .par_iter()
        .enumerate()
        .map(|(ti, t)| {
            let p = t.map(|i| mesh.vertices[i]);
            let (grad, area) = p1_gradients(p);
            let wt = if alpha == 0.0 { area } else { weight_integral(p, alpha) };
            let mut k = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    k[i][j] = wt * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]);
                }
            }
            let g = if with_gram { hardy_element(p, alpha, ti)? } else { [[0.0; 3]; 3] };
            Ok((k, mass_element(area), g))
        })
        .collect();
    let mut e = Elements {
        k: Vec::with_capacity(per.len()),
        m: Vec::with_capacity(per.len()),
        g: Vec::with_capacity(per.len()),
    };
    for r in per {
        let (k, m, g) = r?;
        e.k.push(k);
        e.m.push(m);
        e.g.push(g);
    }
    Ok(e)
}

fn scatter(mesh: &TriMesh, local: &[[[f64; 3]; 3]], mask: Option<&[bool]>) -> CsrMatrix {
    let n = mesh.vertices.len();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (ti, t) in mesh.triangles.iter().enumerate() {
        if mask.is_some_and(|m| !m[ti]) {
            continue;
        }
        for i in 0..3 {
            for j in 0..3 {
                trip.push((t[i], t[j], local[ti][i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}

pub fn assemble(mesh: &TriMesh, alpha: f64) -> Result<WeightedOperator, AssemblyError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AssemblyError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    build(mesh, alpha, true, None)
}

/// Same as [`assemble`] restricted to a subset of triangles.
pub fn assemble_masked(mesh: &TriMesh, alpha: f64, mask: &[bool]) -> Result<WeightedOperator, AssemblyError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AssemblyError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    build(mesh, alpha, true, Some(mask))
}

/// Unweighted Laplacian stiffness (w ≡ 1) and mass on the same mesh; the
/// Hardy Gram matrix is left empty.
pub fn assemble_unweighted(mesh: &TriMesh) -> Result<WeightedOperator, AssemblyError> {
    build(mesh, 0.0, false, None)
}

fn build(mesh: &TriMesh, alpha: f64, with_gram: bool, mask: Option<&[bool]>) -> Result<WeightedOperator, AssemblyError> {
    let e = element_matrices(mesh, alpha, with_gram)?;
    let stiffness = scatter(mesh, &e.k, mask);
    let mass = scatter(mesh, &e.m, mask);
    let hardy_gram = scatter(mesh, &e.g, mask);
    let boundary = mesh.boundary_vertex_flags();
    let interior_dofs: Vec<usize> = (0..mesh.vertices.len()).filter(|&i| !boundary[i]).collect();
    let k_ii = stiffness.principal_submatrix(&interior_dofs);
    let m_ii = mass.principal_submatrix(&interior_dofs);
    let g_ii = hardy_gram.principal_submatrix(&interior_dofs);
    Ok(WeightedOperator {
        stiffness,
        mass,
        hardy_gram,
        alpha,
        mesh_ref: mesh_id(mesh),
        interior_dofs,
        n_vertices: mesh.vertices.len(),
        k_ii,
        m_ii,
        g_ii,
    })
}

impl WeightedOperator {
    pub fn n_interior(&self) -> usize {
        self.interior_dofs.len()
    }

    /// Full vertex vector from interior coefficients (zero on the boundary).
    pub fn extend(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_vertices];
        for (k, &i) in self.interior_dofs.iter().enumerate() {
            full[i] = u[k];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.interior_dofs.iter().map(|&i| full[i]).collect()
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.k_ii.quad_form(u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardyCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// N - 2 + α
    pub constant: f64,
    pub tol: f64,
    pub pass: bool,
}

/// (N−2+α)·‖|x|^{α/2−1}u‖ ≤ 2‖∇u‖_w on interior coefficients.
pub fn check_hardy(op: &WeightedOperator, u: &[f64], tol: f64) -> HardyCheck {
    let constant = N_DIM - 2.0 + op.alpha;
    let lhs = constant * op.g_ii.quad_form(u).max(0.0).sqrt();
    let rhs = 2.0 * op.k_ii.quad_form(u).max(0.0).sqrt();
    HardyCheck {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        constant,
        tol,
        pass: lhs <= rhs * (1.0 + tol),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// 4 M^{2−α} / (N−2+α)²
    pub constant: f64,
    pub m: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Lower bound (N−2+α)²/(4M^{2−α}) for the first eigenvalue.
pub fn lambda_bar(alpha: f64, m: f64) -> f64 {
    (N_DIM - 2.0 + alpha).powi(2) / (4.0 * m.powf(2.0 - alpha))
}

/// ∫u² ≤ 4M^{2−α}/(N−2+α)² ∫ w|∇u|².
pub fn check_poincare(op: &WeightedOperator, u: &[f64], m: f64, tol: f64) -> PoincareCheck {
    let constant = 1.0 / lambda_bar(op.alpha, m);
    let lhs = op.m_ii.quad_form(u);
    let rhs = constant * op.k_ii.quad_form(u);
    PoincareCheck {
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        constant,
        m,
        tol,
        pass: lhs <= rhs * (1.0 + tol),
    }
}
