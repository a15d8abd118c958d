//! Compressed sparse row storage and the two linear solvers used by the
//! pipeline: Jacobi-preconditioned CG for one-off solves and a sparse
//! Cholesky factorization for systems solved many times.

use std::collections::VecDeque;

use super::FemError;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n × n` matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, c, _) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..n {
            let row = &mut entries[counts[r]..counts[r + 1]];
            row.sort_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self { n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
    }
}

/// Symmetric positive definite system over a set of degrees of freedom.
#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `‖Ax − b‖ / ‖b‖`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn cg_solve(system: &SparseSystem, tol: f64, max_iter: usize) -> Result<CgSolution, FemError> {
    let a = &system.matrix;
    let b = &system.rhs;
    let n = a.dim();
    assert_eq!(b.len(), n);
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution { x, iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FemError::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if residual <= tol {
            return Ok(CgSolution { x, iterations: it, relative_residual: residual });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(FemError::NotConverged { iterations: max_iter, residual })
}

/// Nested-dissection fill-reducing ordering of the adjacency graph of `a`:
/// `perm[new] = old`.
///
/// Each subgraph is split by the middle level of a breadth-first level
/// structure rooted at a pseudo-peripheral vertex; both halves are ordered
/// recursively before the separator. Small subgraphs keep breadth-first order.
pub fn nested_dissection(a: &CsrMatrix) -> Vec<usize> {
    const LEAF: usize = 64;
    let n = a.dim();
    let mut stamp = vec![usize::MAX; n];
    let mut level = vec![usize::MAX; n];
    let mut tag = 0usize;
    let mut order = Vec::with_capacity(n);
    // pending subsets; a subset ending in the marker gets its separator appended afterwards
    let mut stack: Vec<Task> = vec![Task::Split((0..n).collect())];

    enum Task {
        Split(Vec<usize>),
        Emit(Vec<usize>),
    }

    while let Some(task) = stack.pop() {
        let subset = match task {
            Task::Emit(sep) => {
                order.extend(sep);
                continue;
            }
            Task::Split(s) => s,
        };
        tag += 1;
        for &v in &subset {
            stamp[v] = tag;
            level[v] = usize::MAX;
        }
        // breadth-first sweep inside the subset, from `start`, writing levels
        let sweep = |start: usize, level: &mut [usize]| -> Vec<usize> {
            for &v in &subset {
                level[v] = usize::MAX;
            }
            let mut queue = VecDeque::from([start]);
            level[start] = 0;
            let mut seen = vec![start];
            while let Some(v) = queue.pop_front() {
                for (c, _) in a.row(v) {
                    if stamp[c] == tag && level[c] == usize::MAX {
                        level[c] = level[v] + 1;
                        seen.push(c);
                        queue.push_back(c);
                    }
                }
            }
            seen
        };
        let seen = sweep(subset[0], &mut level);
        if seen.len() < subset.len() {
            // disconnected: peel off the component and queue the rest
            let rest: Vec<usize> = subset.iter().copied().filter(|&v| level[v] == usize::MAX).collect();
            stack.push(Task::Split(rest));
            stack.push(Task::Split(seen));
            continue;
        }
        if subset.len() <= LEAF {
            order.extend(seen);
            continue;
        }
        let far = *seen.last().unwrap();
        let seen = sweep(far, &mut level);
        let depth = level[*seen.last().unwrap()];
        if depth < 2 {
            order.extend(seen);
            continue;
        }
        // separator: the smallest level among those splitting off 40–60% of the vertices
        let mut sizes = vec![0usize; depth + 1];
        for &v in &seen {
            sizes[level[v]] += 1;
        }
        let total = seen.len();
        let mut below = 0;
        let mut mid = level[seen[total / 2]].clamp(1, depth - 1);
        let mut best = usize::MAX;
        for l in 1..depth {
            below += sizes[l - 1];
            let balanced = 5 * below >= 2 * total && 5 * (below + sizes[l]) <= 3 * total;
            if balanced && sizes[l] < best {
                best = sizes[l];
                mid = l;
            }
        }
        let (mut low, mut high, mut sep) = (Vec::new(), Vec::new(), Vec::new());
        for &v in &seen {
            match level[v].cmp(&mid) {
                std::cmp::Ordering::Less => low.push(v),
                std::cmp::Ordering::Greater => high.push(v),
                std::cmp::Ordering::Equal => sep.push(v),
            }
        }
        stack.push(Task::Emit(sep));
        stack.push(Task::Split(high));
        stack.push(Task::Split(low));
    }
    order
}

/// Sparse Cholesky factor `PAPᵀ = LLᵀ`, `L` stored by columns with the
/// diagonal first. Up-looking factorization over the elimination tree.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCholesky {
    /// Factorizes a symmetric positive definite matrix under a nested-dissection ordering.
    pub fn factor(a: &CsrMatrix) -> Result<Self, FemError> {
        Self::factor_with(a, nested_dissection(a))
    }

    /// Factorizes with a given ordering, `perm[new] = old`.
    pub fn factor_with(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self, FemError> {
        let n = a.dim();
        assert_eq!(perm.len(), n);
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        // upper part of the permuted matrix, by columns
        let upper: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|k| a.row(perm[k]).map(|(c, v)| (inverse[c], v)).filter(|&(i, _)| i <= k).collect())
            .collect();

        const NONE: usize = usize::MAX;
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &(mut i, _) in &upper[k] {
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut mark = vec![NONE; n];
        let mut stack = vec![0; n];
        let mut path = vec![0; n];
        // row pattern of L in topological order, written to stack[top..]
        let mut reach = |k: usize, mark: &mut [usize], stack: &mut [usize]| -> usize {
            let mut top = n;
            mark[k] = k;
            for &(i0, _) in &upper[k] {
                let mut i = i0;
                let mut len = 0;
                while mark[i] != k {
                    path[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    stack[top] = path[len];
                }
            }
            top
        };

        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = reach(k, &mut mark, &mut stack);
            for &i in &stack[top..] {
                counts[i] += 1;
            }
        }
        let mut col_ptr = vec![0; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + counts[k];
        }
        let nnz = col_ptr[n];
        let mut row_idx = vec![0; nnz];
        let mut values = vec![0.0; nnz];
        let mut next: Vec<usize> = col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        mark.iter_mut().for_each(|m| *m = NONE);

        for k in 0..n {
            let top = reach(k, &mut mark, &mut stack);
            for &(i, v) in &upper[k] {
                x[i] += v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / values[col_ptr[i]];
                x[i] = 0.0;
                for p in col_ptr[i] + 1..next[i] {
                    x[row_idx[p]] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                row_idx[p] = k;
                values[p] = lki;
            }
            if !(d > 0.0) {
                return Err(FemError::NotPositiveDefinite);
            }
            let p = next[k];
            next[k] += 1;
            row_idx[p] = k;
            values[p] = d.sqrt();
        }
        Ok(Self { perm, col_ptr, row_idx, values })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Number of stored entries of `L`.
    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            y[j] /= self.values[range.start];
            let yj = y[j];
            for p in range.start + 1..range.end {
                y[self.row_idx[p]] -= self.values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            let mut s = y[j];
            for p in range.start + 1..range.end {
                s -= self.values[p] * y[self.row_idx[p]];
            }
            y[j] = s / self.values[range.start];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Solves for two right-hand sides at once, stored as pairs.
    pub fn solve_pairs(&self, b: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut y: Vec<[f64; 2]> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            let d = self.values[range.start];
            let yj = [y[j][0] / d, y[j][1] / d];
            y[j] = yj;
            for p in range.start + 1..range.end {
                let (r, l) = (self.row_idx[p], self.values[p]);
                y[r][0] -= l * yj[0];
                y[r][1] -= l * yj[1];
            }
        }
        for j in (0..n).rev() {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            let mut s = y[j];
            for p in range.start + 1..range.end {
                let (r, l) = (self.row_idx[p], self.values[p]);
                s[0] -= l * y[r][0];
                s[1] -= l * y[r][1];
            }
            let d = self.values[range.start];
            y[j] = [s[0] / d, s[1] / d];
        }
        let mut x = vec![[0.0; 2]; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
