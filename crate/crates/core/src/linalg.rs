//! Cholesky factorizations: a dense one for small systems and an envelope
//! (profile) one for sparse precision matrices on region graphs.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::graph::RegionGraph;

/// Lower Cholesky factor of a dense row-major SPD matrix. On failure returns
/// the index of the first pivot that is not positive relative to its
/// diagonal entry (a column dependent on the earlier ones).
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>, usize> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 1e-10 * a[i * n + i].abs()) || !s.is_finite() {
                    return Err(i);
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` in place.
pub fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `L^T x = y` in place.
pub fn backward_solve(l: &[f64], n: usize, y: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
}

/// Reverse Cuthill-McKee ordering: `order[new] = old`.
pub fn reverse_cuthill_mckee(graph: &RegionGraph) -> Vec<usize> {
    let n = graph.n_regions();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (graph.degree(v), v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = graph.neighbors(u).iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (graph.degree(v), v));
            for v in nb {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Envelope Cholesky for symmetric matrices whose off-diagonal pattern is a
/// region graph's adjacency. Rows are stored from their first structurally
/// non-zero column (after RCM permutation) to the diagonal.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    order: Vec<usize>,
    position: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
    factored: bool,
}

impl EnvelopeCholesky {
    pub fn for_graph(graph: &RegionGraph) -> Self {
        let n = graph.n_regions();
        let order = reverse_cuthill_mckee(graph);
        let mut position = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for &(a, b) in graph.edges() {
            let (pa, pb) = (position[a], position[b]);
            let (lo, hi) = (pa.min(pb), pa.max(pb));
            first[hi] = first[hi].min(lo);
        }
        // Fill-in stays inside the envelope; no extra structure needed.
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for i in 0..n {
            offset.push(total);
            total += i - first[i] + 1;
        }
        offset.push(total);
        EnvelopeCholesky {
            n,
            order,
            position,
            first,
            offset,
            values: vec![0.0; total],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries, a measure of factorization cost.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offset[i] + j - self.first[i]
    }

    /// Adds `v` to the diagonal entry of region `r`.
    pub fn add_diag(&mut self, r: usize, v: f64) {
        let p = self.position[r];
        let k = self.idx(p, p);
        self.values[k] += v;
    }

    /// Adds `v` to the symmetric entry for adjacent regions `a`, `b`.
    pub fn add_offdiag(&mut self, a: usize, b: usize, v: f64) {
        let (pa, pb) = (self.position[a], self.position[b]);
        let k = self.idx(pa.max(pb), pa.min(pb));
        self.values[k] += v;
    }

    /// Factors in place. On failure returns the region whose pivot failed.
    pub fn factor(&mut self) -> Result<(), usize> {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.values[self.idx(i, j)];
                let (ri, rj) = (self.offset[i] - fi, self.offset[j] - fj);
                for k in start..j {
                    s -= self.values[ri + k] * self.values[rj + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(self.order[i]);
                    }
                    let k = self.idx(i, i);
                    self.values[k] = s.sqrt();
                } else {
                    let k = self.idx(i, j);
                    self.values[k] = s / self.values[self.idx(j, j)];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = self.offset[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[row + k] * y[k];
            }
            y[i] = s / self.values[row + i];
        }
    }

    fn backward(&self, x: &mut [f64]) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = self.offset[i] - fi;
            x[i] /= self.values[row + i];
            let xi = x[i];
            for k in fi..i {
                x[k] -= self.values[row + k] * xi;
            }
        }
    }

    /// Solves `A x = b` with region-indexed vectors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert!(self.factored, "solve before factor");
        let mut y: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        self.unpermute(&y)
    }

    /// Draws from `N(A^{-1} b, A^{-1})` where `A` is the factored matrix.
    pub fn sample_canonical<R: Rng + ?Sized>(&self, b: &[f64], rng: &mut R) -> Vec<f64> {
        assert!(self.factored, "sample before factor");
        let mut mean: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        self.forward(&mut mean);
        // L^T x = (L^{-1} b + z) gives mean A^{-1} b and covariance A^{-1}.
        for m in mean.iter_mut() {
            *m += rng.sample::<f64, _>(StandardNormal);
        }
        self.backward(&mut mean);
        self.unpermute(&mean)
    }

    /// `log det A` from the factor.
    pub fn log_det(&self) -> f64 {
        assert!(self.factored);
        2.0 * (0..self.n).map(|i| self.values[self.idx(i, i)].ln()).sum::<f64>()
    }

    fn unpermute(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (new, &old) in self.order.iter().enumerate() {
            out[old] = v[new];
        }
        out
    }
}
