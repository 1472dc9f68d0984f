//! Small dense solves and a banded sparse LU.
//!
//! The sparse path reorders unknowns with reverse Cuthill-McKee, then runs
//! banded Gaussian elimination with partial pivoting. Generators built from
//! nearest-neighbour moves on grids or queue lattices have narrow bandwidth
//! after reordering, so this is a direct solver that scales to desk-sized
//! state spaces.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Solves `a x = b` in place for a row-major `n x n` matrix; `b` receives `x`.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<(), LinalgError> {
    if a.len() != n * n {
        return Err(LinalgError::Dimension { expected: n * n, got: a.len() });
    }
    if b.len() != n {
        return Err(LinalgError::Dimension { expected: n, got: b.len() });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        let pivot = a[p * n + k];
        if pivot.abs() <= 1e-13 * scale {
            return Err(LinalgError::Singular { column: k, pivot });
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        for i in k + 1..n {
            let f = a[i * n + k] / a[k * n + k];
            if f == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            b[i] -= f * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
    Ok(())
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets; duplicate entries are summed, columns sorted per row.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let at = fill[i];
            cols[at] = j;
            vals[at] = v;
            fill[i] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n_rows {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|e| e.0);
            for &(j, v) in scratch.iter() {
                match col_idx.last() {
                    Some(&last) if col_idx.len() > row_ptr[i] && last == j => {
                        *values.last_mut().unwrap() += v;
                    }
                    _ => {
                        col_idx.push(j);
                        values.push(v);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
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

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                trip.push((j, i, v));
            }
        }
        Self::from_triplets(self.n_cols, self.n_rows, &trip)
    }

    /// Row vector times matrix: `(x^T A)_j = sum_i x_i A_ij`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += xi * v;
            }
        }
        y
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized sparsity pattern.
///
/// Returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, v) in a.row(i) {
            if i != j && v != 0.0 {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for nb in adj.iter_mut() {
        nb.sort_unstable();
        nb.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    loop {
        // start each component from an unvisited node of minimum degree
        let start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]);
        let Some(start) = start else { break };
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            next.sort_by_key(|&v| degree[v]);
            for v in next {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Banded LU factorization with partial pivoting.
struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    // row i stores columns i - kl ..= i + kl + ku
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn factor(a: &CsrMatrix) -> Result<Self, LinalgError> {
        let n = a.n_rows();
        let (mut kl, mut ku) = (0usize, 0usize);
        for i in 0..n {
            for (j, _) in a.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        let width = 2 * kl + ku + 1;
        let mut lu = Self { n, kl, width, data: vec![0.0; n * width], pivots: vec![0; n] };
        let mut scale = 0.0f64;
        for i in 0..n {
            for (j, v) in a.row(i) {
                let k = lu.idx(i, j);
                lu.data[k] = v;
                scale = scale.max(v.abs());
            }
        }
        let scale = scale.max(f64::MIN_POSITIVE);
        let upper = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.data[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(LinalgError::Singular { column: k, pivot: best });
            }
            lu.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (x, y) = (lu.idx(k, j), lu.idx(p, j));
                    lu.data.swap(x, y);
                }
            }
            let d = lu.data[lu.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = lu.idx(i, k);
                let f = lu.data[ik] / d;
                lu.data[ik] = f;
                if f == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = lu.data[lu.idx(k, j)];
                    if kj != 0.0 {
                        let ij = lu.idx(i, j);
                        lu.data[ij] -= f * kj;
                    }
                }
            }
        }
        Ok(lu)
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let upper = self.width - self.kl - 1;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.data[self.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + upper).min(n - 1) {
                s -= self.data[self.idx(k, j)] * b[j];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }
}

/// Direct sparse solve of `a x = b` with bandwidth-reducing reordering and
/// one step of iterative refinement.
pub fn solve_sparse(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(LinalgError::Dimension { expected: n, got: a.n_cols() });
    }
    if b.len() != n {
        return Err(LinalgError::Dimension { expected: n, got: b.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let perm = rcm_ordering(a);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut trip = Vec::with_capacity(a.nnz());
    for i in 0..n {
        for (j, v) in a.row(i) {
            trip.push((inv[i], inv[j], v));
        }
    }
    let pa = CsrMatrix::from_triplets(n, n, &trip);
    let lu = BandLu::factor(&pa)?;
    let mut pb: Vec<f64> = perm.iter().map(|&old| b[old]).collect();
    lu.solve(&mut pb);
    // refinement: r = b - A x, solve A d = r
    let ax = pa.mul_vec(&pb);
    let mut r: Vec<f64> = perm.iter().enumerate().map(|(new, &old)| b[old] - ax[new]).collect();
    lu.solve(&mut r);
    let mut x = vec![0.0; n];
    for (new, &old) in perm.iter().enumerate() {
        x[old] = pb[new] + r[new];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solve_2x2() {
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        solve_dense(&mut a, &mut b, 2).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-14);
        assert!((b[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn dense_singular_detected() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(matches!(solve_dense(&mut a, &mut b, 2), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn csr_sums_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 0), 4.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn sparse_matches_dense_on_grid_laplacian() {
        // 2-D shifted Laplacian on a 12 x 9 grid, scrambled right-hand side
        let (nx, ny) = (12usize, 9usize);
        let n = nx * ny;
        let mut trip = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                let k = i * ny + j;
                trip.push((k, k, 4.5));
                if i > 0 {
                    trip.push((k, k - ny, -1.0));
                }
                if i + 1 < nx {
                    trip.push((k, k + ny, -1.1));
                }
                if j > 0 {
                    trip.push((k, k - 1, -0.9));
                }
                if j + 1 < ny {
                    trip.push((k, k + 1, -1.0));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip);
        let b: Vec<f64> = (0..n).map(|k| ((k * 37) % 11) as f64 - 5.0).collect();
        let x = solve_sparse(&a, &b).unwrap();
        let mut dense: Vec<f64> = a.to_dense().into_iter().flatten().collect();
        let mut xd = b.clone();
        solve_dense(&mut dense, &mut xd, n).unwrap();
        for k in 0..n {
            assert!((x[k] - xd[k]).abs() < 1e-12, "{} vs {}", x[k], xd[k]);
        }
    }

    #[test]
    fn sparse_needs_pivoting() {
        // zero leading diagonal forces a row swap
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0), (2, 2, 2.0), (0, 2, 1.0)]);
        let x = solve_sparse(&a, &[3.0, 3.0, 4.0]).unwrap();
        let ax = a.mul_vec(&x);
        for (l, r) in ax.iter().zip([3.0, 3.0, 4.0]) {
            assert!((l - r).abs() < 1e-13);
        }
    }

    #[test]
    fn rcm_is_permutation() {
        let a = CsrMatrix::from_triplets(5, 5, &[(0, 4, 1.0), (4, 2, 1.0), (2, 1, 1.0), (3, 3, 1.0)]);
        let mut p = rcm_ordering(&a);
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2, 3, 4]);
    }
}
