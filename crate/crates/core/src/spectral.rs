//! Smallest eigenpairs of `K Φ = λ M Φ` on interior dofs.
//!
//! Shift-invert Lanczos with shift 0 in the M inner product and full
//! reorthogonalization. K is factored once by the envelope Cholesky.

use crate::sparse::{dot, CsrMatrix, EnvelopeCholesky, SparseError};
use crate::weighted_assembly::WeightedOperator;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MODES: usize = 64;
pub const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("EIGS_NO_CONVERGE: {converged} of {requested} pairs converged after {iterations} Lanczos steps (worst residual {worst_residual:e})")]
    NoConverge {
        requested: usize,
        converged: usize,
        iterations: usize,
        worst_residual: f64,
    },
    #[error("invalid eigensolver argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModalBasis {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal interior coefficient vectors.
    pub eigenvectors: Vec<Vec<f64>>,
    pub m: usize,
    /// ‖KΦ − λMΦ‖ / ‖MΦ‖ per pair.
    pub residuals: Vec<f64>,
    pub lanczos_steps: usize,
}

#[derive(Clone, Debug)]
pub struct EigOptions {
    pub tol: f64,
    pub seed: u64,
    /// Krylov dimension cap; 0 means min(n, 6m + 60).
    pub max_steps: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: RESIDUAL_TOL,
            seed: 0x5eed,
            max_steps: 0,
        }
    }
}

pub fn solve_eigs(op: &WeightedOperator, m: usize) -> Result<ModalBasis, SpectralError> {
    solve_generalized(&op.k_ii, &op.m_ii, m, &EigOptions::default())
}

/// Smallest `m` eigenpairs of the pencil (k, mass), both symmetric positive definite.
pub fn solve_generalized(k: &CsrMatrix, mass: &CsrMatrix, m: usize, opts: &EigOptions) -> Result<ModalBasis, SpectralError> {
    let n = k.n_rows;
    if m == 0 || m > n {
        return Err(SpectralError::InvalidArgument(format!("need 1 <= m <= {n}, got {m}")));
    }
    let chol = EnvelopeCholesky::factor(k)?;
    let max_steps = if opts.max_steps == 0 { n.min(6 * m + 60) } else { opts.max_steps.min(n) };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut v: Vec<Vec<f64>> = Vec::new();
    let mut mv: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    let mut start = random_orthogonal(&mut rng, n, &v, &mv, mass);
    let mut worst = f64::INFINITY;
    let mut converged = 0;
    loop {
        let (vj, mvj) = start;
        let mut w = chol.solve(&mvj);
        let a = dot(&w, &mvj);
        for (wi, x) in w.iter_mut().zip(&vj) {
            *wi -= a * x;
        }
        if let (Some(b), Some(prev)) = (beta.last(), v.last()) {
            if *b > 0.0 {
                for (wi, x) in w.iter_mut().zip(prev) {
                    *wi -= b * x;
                }
            }
        }
        v.push(vj);
        mv.push(mvj);
        alpha.push(a);
        for _ in 0..2 {
            for (vi, mvi) in v.iter().zip(&mv) {
                let c = dot(&w, mvi);
                for (wi, x) in w.iter_mut().zip(vi) {
                    *wi -= c * x;
                }
            }
        }
        let mw = mass.matvec(&w);
        let b = dot(&w, &mw).max(0.0).sqrt();
        let j = v.len();

        let check = j >= m && (j % 8 == 0 || j == max_steps);
        if check || j >= max_steps {
            let (conv, est) = ritz_estimates(&alpha, &beta, b, m, opts.tol, k, &w, &mv);
            converged = conv;
            worst = est;
            if conv == m {
                break;
            }
        }
        if j >= max_steps {
            break;
        }
        let scale = alpha.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        if b <= 1e-13 * scale {
            beta.push(0.0);
            start = random_orthogonal(&mut rng, n, &v, &mv, mass);
        } else {
            beta.push(b);
            let inv = 1.0 / b;
            start = (w.iter().map(|x| x * inv).collect(), mw.iter().map(|x| x * inv).collect());
        }
    }

    let steps = v.len();
    let (_, s) = tridiag_eig(&alpha, &beta);
    let ritz: Vec<Vec<f64>> = (0..steps)
        .rev()
        .take(m)
        .map(|idx| combine(&v, s.column(idx).iter().copied()))
        .collect();
    drop(v);
    let (eigenvalues, eigenvectors) = rayleigh_ritz(k, mass, &ritz);
    let residuals: Vec<f64> = eigenvalues
        .iter()
        .zip(&eigenvectors)
        .map(|(&l, phi)| residual(k, mass, l, phi))
        .collect();
    let worst_true = residuals.iter().fold(0.0f64, |a, &r| a.max(r));
    let ok = residuals.iter().filter(|&&r| r <= opts.tol).count();
    if ok < m || converged < m {
        return Err(SpectralError::NoConverge {
            requested: m,
            converged: ok.min(converged),
            iterations: steps,
            worst_residual: worst_true.max(if converged < m { worst } else { 0.0 }),
        });
    }
    Ok(ModalBasis {
        eigenvalues,
        eigenvectors,
        m,
        residuals,
        lanczos_steps: steps,
    })
}

fn combine<'a>(basis: &'a [Vec<f64>], coeffs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0; basis[0].len()];
    for (c, b) in coeffs.zip(basis) {
        for (o, x) in out.iter_mut().zip(b) {
            *o += c * x;
        }
    }
    out
}

/// Projects the pencil onto span(q) with the assembled matrices and returns
/// ascending eigenvalues with mass-normalized, sign-fixed vectors.
fn rayleigh_ritz(k: &CsrMatrix, mass: &CsrMatrix, q: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = q.len();
    let kq: Vec<Vec<f64>> = q.iter().map(|x| k.matvec(x)).collect();
    let mq: Vec<Vec<f64>> = q.iter().map(|x| mass.matvec(x)).collect();
    let mut kp = DMatrix::zeros(p, p);
    let mut mp = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let kij = 0.5 * (dot(&q[i], &kq[j]) + dot(&q[j], &kq[i]));
            let mij = 0.5 * (dot(&q[i], &mq[j]) + dot(&q[j], &mq[i]));
            kp[(i, j)] = kij;
            kp[(j, i)] = kij;
            mp[(i, j)] = mij;
            mp[(j, i)] = mij;
        }
    }
    let l = nalgebra::Cholesky::new(mp).expect("Ritz vectors are independent").l();
    let li = l.try_inverse().expect("triangular factor is invertible");
    let c = &li * kp * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let y = li.transpose() * &eig.eigenvectors;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = Vec::with_capacity(p);
    let mut vectors = Vec::with_capacity(p);
    for &i in &order {
        let mut phi = combine(q, y.column(i).iter().copied());
        let nrm = mass.quad_form(&phi).sqrt();
        phi.iter_mut().for_each(|x| *x /= nrm);
        fix_sign(&mut phi);
        values.push(eig.eigenvalues[i]);
        vectors.push(phi);
    }
    (values, vectors)
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize, v: &[Vec<f64>], mv: &[Vec<f64>], mass: &CsrMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    for _ in 0..2 {
        for (vi, mvi) in v.iter().zip(mv) {
            let c = dot(&x, mvi);
            for (xi, y) in x.iter_mut().zip(vi) {
                *xi -= c * y;
            }
        }
    }
    let mx = mass.matvec(&x);
    let nrm = dot(&x, &mx).sqrt();
    (x.iter().map(|a| a / nrm).collect(), mx.iter().map(|a| a / nrm).collect())
}

/// Eigen-decomposition of the Lanczos tridiagonal, ascending in θ.
fn tridiag_eig(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let j = alpha.len();
    let mut t = DMatrix::zeros(j, j);
    for i in 0..j {
        t[(i, i)] = alpha[i];
        if i + 1 < j {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let theta = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut s = DMatrix::zeros(j, j);
    for (c, &i) in order.iter().enumerate() {
        s.set_column(c, &eig.eigenvectors.column(i));
    }
    (theta, s)
}

/// Converged count among the top `m` Ritz pairs and the worst estimate.
///
/// With r = β sⱼ v₊ the shift-invert residual, KΦ − λMΦ = −λ K r.
fn ritz_estimates(alpha: &[f64], beta: &[f64], b_next: f64, m: usize, tol: f64, k: &CsrMatrix, w: &[f64], mv: &[Vec<f64>]) -> (usize, f64) {
    let j = alpha.len();
    let (theta, s) = tridiag_eig(alpha, beta);
    let kw = if b_next > 0.0 { k.matvec(w) } else { vec![0.0; w.len()] };
    // w is unnormalized: ‖K v₊‖ β = ‖K w‖
    let kw_norm = dot(&kw, &kw).sqrt();
    let mut worst = 0.0f64;
    let mut conv = 0;
    for idx in (0..j).rev().take(m) {
        let lam = 1.0 / theta[idx];
        let last = s[(j - 1, idx)].abs();
        let mut mphi = vec![0.0; w.len()];
        for (c, col) in s.column(idx).iter().zip(mv) {
            for (p, x) in mphi.iter_mut().zip(col) {
                *p += c * x;
            }
        }
        let est = lam * last * kw_norm / dot(&mphi, &mphi).sqrt();
        worst = worst.max(est);
        if est <= 0.1 * tol {
            conv += 1;
        }
    }
    (conv, worst)
}

pub fn residual(k: &CsrMatrix, mass: &CsrMatrix, lambda: f64, phi: &[f64]) -> f64 {
    let kp = k.matvec(phi);
    let mp = mass.matvec(phi);
    let r: f64 = kp.iter().zip(&mp).map(|(a, b)| (a - lambda * b).powi(2)).sum();
    r.sqrt() / dot(&mp, &mp).sqrt()
}

/// First coefficient above 1e-8 of the maximum made positive.
pub fn fix_sign(phi: &mut [f64]) {
    let big = phi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(first) = phi.iter().find(|x| x.abs() > 1e-8 * big) {
        if *first < 0.0 {
            phi.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Modal coordinates cₙ = Φₙᵀ M u.
pub fn project(basis: &ModalBasis, op: &WeightedOperator, u: &[f64]) -> Vec<f64> {
    let mu = op.m_ii.matvec(u);
    basis.eigenvectors.iter().map(|phi| dot(phi, &mu)).collect()
}

/// Σ cₙ Φₙ.
pub fn reconstruct(basis: &ModalBasis, coords: &[f64]) -> Vec<f64> {
    let n = basis.eigenvectors.first().map_or(0, |p| p.len());
    let mut u = vec![0.0; n];
    for (c, phi) in coords.iter().zip(&basis.eigenvectors) {
        for (x, p) in u.iter_mut().zip(phi) {
            *x += c * p;
        }
    }
    u
}

/// Largest |ΦᵢᵀMΦⱼ − δᵢⱼ| and largest |ΦᵢᵀKΦⱼ − δᵢⱼλᵢ| / λᵢ over i, j.
pub fn orthogonality_defects(basis: &ModalBasis, op: &WeightedOperator) -> (f64, f64) {
    let mphi: Vec<Vec<f64>> = basis.eigenvectors.iter().map(|p| op.m_ii.matvec(p)).collect();
    let kphi: Vec<Vec<f64>> = basis.eigenvectors.iter().map(|p| op.k_ii.matvec(p)).collect();
    let mut dm = 0.0f64;
    let mut dk = 0.0f64;
    for (i, pi) in basis.eigenvectors.iter().enumerate() {
        for j in 0..basis.m {
            let delta = if i == j { 1.0 } else { 0.0 };
            dm = dm.max((dot(pi, &mphi[j]) - delta).abs());
            dk = dk.max((dot(pi, &kphi[j]) - delta * basis.eigenvalues[i]).abs() / basis.eigenvalues[i]);
        }
    }
    (dm, dk)
}

/// Eigenvalue report with columns n, lambda, residual.
pub fn to_csv(basis: &ModalBasis) -> String {
    let mut s = String::from("n,lambda,residual\n");
    for (i, (l, r)) in basis.eigenvalues.iter().zip(&basis.residuals).enumerate() {
        s.push_str(&format!("{},{:.17e},{:.6e}\n", i + 1, l, r));
    }
    s
}
