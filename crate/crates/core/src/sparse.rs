//! Compressed sparse rows, reverse Cuthill–McKee ordering and an envelope
//! (skyline) Cholesky factorization for SPD systems.

use rayon::prelude::*;
use std::collections::VecDeque;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Sorts triplets by (row, col) and sums duplicates in input order, so
    /// identical input yields bit-identical values.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .into_par_iter()
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Self::from_triplets(self.n_cols, self.n_rows, trip)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |A - Aᵀ|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Principal submatrix on `keep` (indices in ascending order).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.n_cols];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k;
        }
        let mut row_ptr = vec![0usize; keep.len() + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (k, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    col_idx.push(map[j]);
                    values.push(v);
                }
            }
            row_ptr[k + 1] = col_idx.len();
        }
        Self {
            n_rows: keep.len(),
            n_cols: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Coordinate text export, one `row col value` line per stored entry.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let _ = writeln!(s, "{i} {j} {v:e}");
            }
        }
        s
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reverse Cuthill–McKee permutation: `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows;
    let degree: Vec<usize> = (0..n).map(|i| a.row_ptr[i + 1] - a.row_ptr[i]).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // (eccentricity, a node in the last level with minimal degree)
        let mut dist = vec![usize::MAX; n];
        let mut q = VecDeque::new();
        dist[start] = 0;
        q.push_back(start);
        let mut last = start;
        while let Some(u) = q.pop_front() {
            if dist[u] > dist[last] || (dist[u] == dist[last] && degree[u] < degree[last]) {
                last = u;
            }
            for (v, _) in a.row(u) {
                if !visited[v] && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        (dist[last], last)
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start node
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(start, &visited);
        for _ in 0..8 {
            let (e2, f2) = bfs_levels(far, &visited);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = f2;
        }
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a.row(u).map(|(v, _)| v).filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                q.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored row-wise over the envelope.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    /// first stored column of each (permuted) row
    first: Vec<usize>,
    /// row offsets into `data`; row i holds columns first[i]..=i
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, SparseError> {
        if a.n_rows != a.n_cols {
            return Err(SparseError::Dimension("Cholesky needs a square matrix".into()));
        }
        let n = a.n_rows;
        let perm = rcm_ordering(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for (c, _) in a.row(old) {
                let j = inv[c];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for old in 0..n {
            let i = inv[old];
            for (c, v) in a.row(old) {
                let j = inv[c];
                if j <= i {
                    data[offset[i] + j - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..=i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let mut s = data[offset[i] + j - fi];
                let ri = &data[offset[i] + k0 - fi..offset[i] + j - fi];
                let rj = &data[offset[j] + k0 - fj..offset[j] + j - fj];
                s -= dot(ri, rj);
                if j < i {
                    let d = data[offset[j + 1] - 1];
                    data[offset[i] + j - fi] = s / d;
                } else {
                    if !(s > 0.0) {
                        return Err(SparseError::NotPositiveDefinite { row: perm[i], pivot: s });
                    }
                    data[offset[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let s = y[i] - dot(&row[..i - fi], &y[fi..i]);
            y[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0), (1, 1, 5.0)]);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn cholesky_solves_tridiagonal() {
        let a = laplacian_1d(50);
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).cos()).collect();
        let b = a.matvec(&x_true);
        let x = f.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(EnvelopeCholesky::factor(&m), Err(SparseError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let a = laplacian_1d(30);
        let mut p = rcm_ordering(&a);
        p.sort();
        assert_eq!(p, (0..30).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn cholesky_matches_dense(seed in 0u64..500, n in 2usize..25) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // random sparse SPD: B Bᵀ + n I with sparse B
            let mut trip = Vec::new();
            for i in 0..n {
                trip.push((i, i, 4.0 * n as f64 + 1.0));
                for _ in 0..2 {
                    let j = rng.random_range(0..n);
                    let v: f64 = rng.random_range(-1.0..1.0);
                    if i != j {
                        trip.push((i, j, v));
                        trip.push((j, i, v));
                    }
                }
            }
            let a = CsrMatrix::from_triplets(n, n, trip);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = EnvelopeCholesky::factor(&a).unwrap().solve(&b);
            let dense = a.to_dense().cholesky().unwrap();
            let xd = dense.solve(&nalgebra::DVector::from_vec(b.clone()));
            for i in 0..n {
                prop_assert!((x[i] - xd[i]).abs() < 1e-10 * (1.0 + xd[i].abs()));
            }
        }
    }

    #[test]
    fn submatrix_and_coo() {
        let a = laplacian_1d(4);
        let s = a.principal_submatrix(&[1, 2]);
        assert_eq!(s.to_dense(), nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        let text = a.to_coo_text();
        assert!(text.starts_with("4 4 10\n"));
        assert_eq!(a.asymmetry(), 0.0);
        assert_eq!(a.transpose(), a);
    }
}
