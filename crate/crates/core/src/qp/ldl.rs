//! Envelope (profile) LDL^T factorization of symmetric quasi-definite matrices.
//!
//! The matrix is permuted with reverse Cuthill-McKee, after which all fill-in
//! stays inside the row envelopes. Planner KKT systems are banded in stage
//! order, so the envelope is narrow. No pivoting is performed: quasi-definite
//! matrices have a signed LDL^T for every symmetric permutation.

use std::collections::VecDeque;

use crate::sparse::CscMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("zero pivot at row {row} (value {value:e})")]
pub struct SingularPivot {
    pub row: usize,
    pub value: f64,
}

/// Reverse Cuthill-McKee ordering of the symmetric sparsity pattern of `m`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(m: &CscMatrix) -> Vec<usize> {
    let n = m.ncols;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in m.iter() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(seed, &adj, &degree);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Repeated BFS from the farthest low-degree node (George-Liu heuristic).
fn pseudo_peripheral(seed: usize, adj: &[Vec<usize>], degree: &[usize]) -> usize {
    let mut start = seed;
    let mut eccentricity = 0;
    for _ in 0..8 {
        let levels = bfs_levels(start, adj);
        let depth = *levels.iter().filter_map(|l| l.as_ref()).max().unwrap();
        if depth <= eccentricity && start != seed {
            break;
        }
        eccentricity = depth;
        let candidate = levels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Some(depth))
            .map(|(v, _)| v)
            .min_by_key(|&v| (degree[v], v))
            .unwrap();
        if candidate == start {
            break;
        }
        start = candidate;
    }
    start
}

fn bfs_levels(start: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap();
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

/// Symbolic analysis plus numeric factors. Call [`EnvelopeLdl::factor`] again
/// with new values on the same pattern to refactorize.
#[derive(Debug, Clone)]
pub struct EnvelopeLdl {
    n: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl EnvelopeLdl {
    /// Analyzes the pattern of `m` (full symmetric storage, or either triangle).
    pub fn analyze(m: &CscMatrix) -> Self {
        assert_eq!(m.nrows, m.ncols);
        let n = m.ncols;
        let perm = reverse_cuthill_mckee(m);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (r, c, _) in m.iter() {
            let (i, j) = (inv_perm[r], inv_perm[c]);
            let (hi, lo) = if i > j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut row_start = vec![0; n + 1];
        for i in 0..n {
            row_start[i + 1] = row_start[i] + (i - first[i]);
        }
        Self {
            n,
            lower: vec![0.0; row_start[n]],
            diag: vec![0.0; n],
            perm,
            inv_perm,
            first,
            row_start,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored strictly-lower entries.
    pub fn envelope_size(&self) -> usize {
        self.row_start[self.n]
    }

    /// Numeric factorization. Entries of `m` outside the analyzed pattern are
    /// a logic error. Only the lower triangle (after permutation) is read, so
    /// full symmetric storage works as long as both halves agree.
    pub fn factor(&mut self, m: &CscMatrix) -> Result<(), SingularPivot> {
        self.factor_impl(m, None).map(|_| ())
    }

    /// Factorization with dynamic regularization: a pivot whose sign differs
    /// from `signs[row]` (+1 or -1, original numbering) or whose magnitude is
    /// below `eps` is replaced by `signs[row] * delta`. Returns how many pivots
    /// were replaced.
    pub fn factor_regularized(&mut self, m: &CscMatrix, signs: &[i8], eps: f64, delta: f64) -> Result<usize, SingularPivot> {
        assert_eq!(signs.len(), self.n);
        self.factor_impl(m, Some((signs, eps, delta)))
    }

    fn factor_impl(&mut self, m: &CscMatrix, regularize: Option<(&[i8], f64, f64)>) -> Result<usize, SingularPivot> {
        self.lower.iter_mut().for_each(|v| *v = 0.0);
        self.diag.iter_mut().for_each(|v| *v = 0.0);
        for (r, c, v) in m.iter() {
            let (i, j) = (self.inv_perm[r], self.inv_perm[c]);
            if i == j {
                self.diag[i] += v;
            } else if i > j {
                assert!(j >= self.first[i], "entry outside analyzed envelope");
                self.lower[self.row_start[i] + j - self.first[i]] += v;
            }
        }

        // Row-by-row Doolittle inside the envelope. During the sweep over row i
        // the stored value at (i, j) holds L_ij * D_j, then is divided by D_j.
        let mut replaced = 0;
        let mut scaled = Vec::new();
        for i in 0..self.n {
            let fi = self.first[i];
            let ri = self.row_start[i];
            scaled.clear();
            for j in fi..i {
                let fj = self.first[j];
                let rj = self.row_start[j];
                let k0 = fi.max(fj);
                let mut s = self.lower[ri + j - fi];
                if k0 < j {
                    let li = &scaled[k0 - fi..j - fi];
                    let lj = &self.lower[rj + k0 - fj..rj + j - fj];
                    s -= li.iter().zip(lj).map(|(a, b)| a * b).sum::<f64>();
                }
                scaled.push(s);
            }
            let mut d = self.diag[i];
            for (idx, j) in (fi..i).enumerate() {
                let l = scaled[idx] / self.diag[j];
                self.lower[ri + idx] = l;
                d -= l * scaled[idx];
            }
            if let Some((signs, eps, delta)) = regularize {
                let sign = f64::from(signs[self.perm[i]]);
                if d * sign < eps || !d.is_finite() {
                    d = sign * delta;
                    replaced += 1;
                }
            }
            if d == 0.0 || !d.is_finite() {
                return Err(SingularPivot { row: self.perm[i], value: d });
            }
            self.diag[i] = d;
        }
        Ok(replaced)
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.lower[self.row_start[i]..self.row_start[i + 1]];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for (v, d) in y.iter_mut().zip(&self.diag) {
            *v /= d;
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let xi = y[i];
            if xi != 0.0 {
                let row = &self.lower[self.row_start[i]..self.row_start[i + 1]];
                for (v, l) in y[fi..i].iter_mut().zip(row) {
                    *v -= l * xi;
                }
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    /// Number of negative pivots (the inertia's negative count).
    pub fn negative_pivots(&self) -> usize {
        self.diag.iter().filter(|d| **d < 0.0).count()
    }
}
