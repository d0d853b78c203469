//! Interaction matrices: sparse row-stochastic aggregation structures,
//! graph-derived constructors, and the two density measures (local and
//! spectral) that control how well mean-field approximations track the
//! stochastic process.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Tolerance on row sums used when validating a matrix.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Largest matrix written by [`InteractionMatrix::to_dense_csv`].
pub const DENSE_EXPORT_LIMIT: usize = 256;

const POWER_ITERATION_SEED: u64 = 0x5EED_0FD0_5E17;

#[derive(Debug, Clone)]
struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl Csr {
    fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.indices[a..b], &self.weights[a..b])
    }

    fn transpose(&self, n: usize) -> Csr {
        let mut counts = vec![0usize; n + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let mut fill = counts.clone();
        let mut indices = vec![0usize; self.indices.len()];
        let mut weights = vec![0f64; self.weights.len()];
        for i in 0..n {
            let (cols, ws) = self.row(i);
            for (&j, &w) in cols.iter().zip(ws) {
                let slot = fill[j];
                indices[slot] = i;
                weights[slot] = w;
                fill[j] += 1;
            }
        }
        Csr {
            offsets: counts,
            indices,
            weights,
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    /// W = 11ᵀ/N, never materialized.
    Homogeneous,
    Sparse(Csr),
}

/// A row of an interaction matrix.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a> {
    /// Every entry equals `1/n`.
    Uniform(usize),
    Sparse(&'a [usize], &'a [f64]),
}

impl<'a> Row<'a> {
    pub fn iter(&self) -> Box<dyn Iterator<Item = (usize, f64)> + 'a> {
        match *self {
            Row::Uniform(n) => {
                let w = 1.0 / n as f64;
                Box::new((0..n).map(move |j| (j, w)))
            }
            Row::Sparse(cols, ws) => Box::new(cols.iter().copied().zip(ws.iter().copied())),
        }
    }

    pub fn support(&self) -> usize {
        match *self {
            Row::Uniform(n) => n,
            Row::Sparse(cols, _) => cols.len(),
        }
    }
}

/// Sparse N×N aggregation matrix W.
///
/// Rows are stored in compressed form; a column index is built on the
/// first column query. The homogeneous matrix 11ᵀ/N carries no storage at
/// all and every query answers as if `w_ij = 1/N`.
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    n: usize,
    storage: Storage,
    row_tolerance: f64,
    validated: bool,
    columns: OnceLock<Csr>,
}

/// λ(W) as computed by power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDensity {
    pub lambda: f64,
    /// ‖Av − ⟨v, Av⟩v‖₂ for the final unit iterate v, where A = ΠWᵀWΠ.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityReport {
    pub theta: f64,
    pub lambda: f64,
    pub max_col_sum: f64,
    pub lambda_iterations: usize,
    pub lambda_residual: f64,
}

impl InteractionMatrix {
    /// The homogeneous matrix W = 11ᵀ/N.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("complete graph needs n >= 1"));
        }
        Ok(Self {
            n,
            storage: Storage::Homogeneous,
            row_tolerance: ROW_TOLERANCE,
            validated: true,
            columns: OnceLock::new(),
        })
    }

    /// Random-walk matrix of an undirected graph: `w_ij = 1/deg(i)` on edges.
    pub fn from_adjacency(edges: &[(usize, usize)], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("graph needs n >= 1"));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for n = {n}"
                )));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop at vertex {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::invalid(format!("duplicate edge ({u}, {v})")));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        let rows = neighbors
            .into_iter()
            .enumerate()
            .map(|(i, nb)| {
                if nb.is_empty() {
                    return Err(Error::DegreeZero { vertex: i });
                }
                let w = 1.0 / nb.len() as f64;
                Ok(nb.into_iter().map(|j| (j, w)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(n, rows)
    }

    /// Degree of the nearest-neighbor ring graph: the even number closest to
    /// `density * n`, rounding ties down.
    pub fn nearest_neighbor_degree(n: usize, density: f64) -> Result<usize> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::invalid(format!(
                "density {density} outside (0, 1]"
            )));
        }
        let half = density * n as f64 / 2.0;
        let floor = half.floor();
        let frac = half - floor;
        let k = if (frac - 0.5).abs() <= 1e-9 || frac < 0.5 {
            floor
        } else {
            floor + 1.0
        };
        let d = 2 * k as usize;
        if d < 2 || d + 1 > n {
            return Err(Error::invalid(format!(
                "nearest-neighbor degree {d} outside [2, {}] for n = {n}, density = {density}",
                n.saturating_sub(1)
            )));
        }
        Ok(d)
    }

    /// Random-walk matrix of the ring graph where each vertex links to its
    /// `d/2` closest neighbors on either side.
    pub fn nearest_neighbor(n: usize, density: f64) -> Result<Self> {
        let d = Self::nearest_neighbor_degree(n, density)?;
        let half = d / 2;
        let w = 1.0 / d as f64;
        let rows = (0..n)
            .map(|i| {
                (1..=half)
                    .flat_map(|k| [(i + n - k) % n, (i + k) % n])
                    .map(|j| (j, w))
                    .collect()
            })
            .collect();
        Self::from_rows(n, rows)
    }

    /// Complete graph without self-loops where agent `i` ignores the agents
    /// in `failures[i]`.
    pub fn with_link_failures(n: usize, failures: &[Vec<usize>]) -> Result<Self> {
        if failures.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} failure sets for n = {n}",
                failures.len()
            )));
        }
        let mut rows = Vec::with_capacity(n);
        let mut excluded = vec![false; n];
        for (i, failed) in failures.iter().enumerate() {
            excluded.iter_mut().for_each(|e| *e = false);
            for &j in failed {
                if j >= n {
                    return Err(Error::invalid(format!("failed link ({i}, {j}) out of range")));
                }
                if j == i {
                    return Err(Error::invalid(format!("vertex {i} lists itself as a failed link")));
                }
                excluded[j] = true;
            }
            excluded[i] = true;
            let count = excluded.iter().filter(|&&e| e).count();
            if count >= n {
                return Err(Error::EmptyNeighborhood {
                    vertex: i,
                    failed: count - 1,
                });
            }
            let w = 1.0 / (n - count) as f64;
            rows.push(
                (0..n)
                    .filter(|&j| !excluded[j])
                    .map(|j| (j, w))
                    .collect(),
            );
        }
        Self::from_rows(n, rows)
    }

    /// Validated construction from explicit rows of `(column, weight)`.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let m = Self::build(n, rows)?;
        m.validate()?;
        Ok(Self {
            validated: true,
            ..m
        })
    }

    /// Raw matrix that is not required to be row-stochastic. Only the
    /// density measures accept it; models and simulators reject it.
    pub fn from_rows_unchecked(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        Self::build(n, rows)
    }

    /// Raw matrix from dense rows (zeros dropped), not validated.
    pub fn from_dense_unchecked(dense: &[Vec<f64>]) -> Result<Self> {
        let n = dense.len();
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect()
            })
            .collect();
        Self::build(n, rows)
    }

    /// Validated matrix from dense rows.
    pub fn from_dense(dense: &[Vec<f64>]) -> Result<Self> {
        let m = Self::from_dense_unchecked(dense)?;
        m.validate()?;
        Ok(Self {
            validated: true,
            ..m
        })
    }

    fn build(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix needs n >= 1"));
        }
        if rows.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for n = {n}",
                rows.len()
            )));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            for pair in row.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::invalid(format!(
                        "duplicate entry ({i}, {}) in row",
                        pair[0].0
                    )));
                }
            }
            for (j, w) in row {
                if j >= n {
                    return Err(Error::DimensionMismatch(format!(
                        "column {j} out of range in row {i}"
                    )));
                }
                if !w.is_finite() {
                    return Err(Error::invalid(format!("non-finite weight at ({i}, {j})")));
                }
                indices.push(j);
                weights.push(w);
            }
            offsets.push(indices.len());
        }
        Ok(Self {
            n,
            storage: Storage::Sparse(Csr {
                offsets,
                indices,
                weights,
            }),
            row_tolerance: ROW_TOLERANCE,
            validated: false,
            columns: OnceLock::new(),
        })
    }

    fn validate(&self) -> Result<()> {
        let Storage::Sparse(csr) = &self.storage else {
            return Ok(());
        };
        for i in 0..self.n {
            let (cols, ws) = csr.row(i);
            for (&j, &w) in cols.iter().zip(ws) {
                if w < 0.0 {
                    return Err(Error::NegativeWeight {
                        row: i,
                        col: j,
                        weight: w,
                    });
                }
            }
            let sum: f64 = ws.iter().sum();
            if (sum - 1.0).abs() > self.row_tolerance {
                return Err(Error::NotRowStochastic { row: i, sum });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self.storage, Storage::Homogeneous)
    }

    /// Whether the matrix passed row-stochastic validation.
    pub fn is_validated(&self) -> bool {
        self.validated
    }

    pub fn row_tolerance(&self) -> f64 {
        self.row_tolerance
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Homogeneous => self.n * self.n,
            Storage::Sparse(csr) => csr.indices.len(),
        }
    }

    pub fn row(&self, i: usize) -> Row<'_> {
        match &self.storage {
            Storage::Homogeneous => Row::Uniform(self.n),
            Storage::Sparse(csr) => {
                let (c, w) = csr.row(i);
                Row::Sparse(c, w)
            }
        }
    }

    /// Column `j` as (row, weight) pairs.
    pub fn column(&self, j: usize) -> Row<'_> {
        match &self.storage {
            Storage::Homogeneous => Row::Uniform(self.n),
            Storage::Sparse(csr) => {
                let t = self.columns.get_or_init(|| csr.transpose(self.n));
                let (r, w) = t.row(j);
                Row::Sparse(r, w)
            }
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Homogeneous => 1.0 / self.n as f64,
            Storage::Sparse(csr) => {
                let (cols, ws) = csr.row(i);
                cols.binary_search(&j).map(|k| ws[k]).unwrap_or(0.0)
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                let mut r = vec![0.0; self.n];
                for (j, w) in self.row(i).iter() {
                    r[j] = w;
                }
                r
            })
            .collect()
    }

    /// out = W x.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        match &self.storage {
            Storage::Homogeneous => {
                let mean = x.iter().sum::<f64>() / self.n as f64;
                out.iter_mut().for_each(|o| *o = mean);
            }
            Storage::Sparse(csr) => {
                for (i, o) in out.iter_mut().enumerate() {
                    let (cols, ws) = csr.row(i);
                    *o = cols.iter().zip(ws).map(|(&j, &w)| w * x[j]).sum();
                }
            }
        }
    }

    /// out = Wᵀ x.
    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        match &self.storage {
            Storage::Homogeneous => self.matvec(x, out),
            Storage::Sparse(csr) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (i, &xi) in x.iter().enumerate() {
                    let (cols, ws) = csr.row(i);
                    for (&j, &w) in cols.iter().zip(ws) {
                        out[j] += w * xi;
                    }
                }
            }
        }
    }

    /// Block aggregation: for `y` holding N consecutive blocks of length
    /// `block`, writes `out_i = Σ_j w_ij y_j`.
    pub fn aggregate(&self, y: &[f64], block: usize, out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n * block);
        debug_assert_eq!(out.len(), self.n * block);
        match &self.storage {
            Storage::Homogeneous => {
                let mut mean = vec![0.0; block];
                for yj in y.chunks_exact(block) {
                    for (m, v) in mean.iter_mut().zip(yj) {
                        *m += v;
                    }
                }
                let inv = 1.0 / self.n as f64;
                mean.iter_mut().for_each(|m| *m *= inv);
                for oi in out.chunks_exact_mut(block) {
                    oi.copy_from_slice(&mean);
                }
            }
            Storage::Sparse(csr) => {
                for (i, oi) in out.chunks_exact_mut(block).enumerate() {
                    oi.iter_mut().for_each(|o| *o = 0.0);
                    let (cols, ws) = csr.row(i);
                    for (&j, &w) in cols.iter().zip(ws) {
                        let yj = &y[j * block..(j + 1) * block];
                        for (o, v) in oi.iter_mut().zip(yj) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
    }

    /// θ(W) = ‖W‖_F / √N.
    pub fn local_density(&self) -> f64 {
        match &self.storage {
            Storage::Homogeneous => 1.0 / (self.n as f64).sqrt(),
            Storage::Sparse(csr) => {
                let sq = neumaier_sum(csr.weights.iter().map(|w| w * w));
                (sq / self.n as f64).sqrt()
            }
        }
    }

    /// λ(W): the largest singular value of WΠ with Π = I − 11ᵀ/N, by power
    /// iteration on ΠWᵀWΠ. Stops once the Rayleigh quotient moves by less
    /// than `tol` between iterations.
    pub fn spectral_density(&self, tol: f64, max_iter: usize) -> Result<SpectralDensity> {
        if self.n < 2 {
            return Err(Error::invalid("spectral density needs n >= 2"));
        }
        if !(tol > 0.0) || max_iter == 0 {
            return Err(Error::invalid("spectral density needs tol > 0 and max_iter >= 1"));
        }
        if self.is_homogeneous() {
            return Ok(SpectralDensity {
                lambda: 0.0,
                residual: 0.0,
                iterations: 0,
                converged: true,
            });
        }
        let n = self.n;
        let mut rng = rng_from_seed(POWER_ITERATION_SEED);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        center(&mut v);
        if normalize(&mut v) == 0.0 {
            v.iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = if i % 2 == 0 { 1.0 } else { -1.0 });
            center(&mut v);
            normalize(&mut v);
        }
        let mut wv = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut rq_prev = f64::NAN;
        let mut residual = f64::INFINITY;
        let mut rq = 0.0;
        for it in 1..=max_iter {
            self.matvec(&v, &mut wv);
            self.matvec_transpose(&wv, &mut next);
            center(&mut next);
            rq = dot(&v, &next);
            residual = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - rq * b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm = normalize(&mut next);
            if norm == 0.0 {
                return Ok(SpectralDensity {
                    lambda: 0.0,
                    residual: 0.0,
                    iterations: it,
                    converged: true,
                });
            }
            std::mem::swap(&mut v, &mut next);
            if (rq - rq_prev).abs() < tol {
                return Ok(SpectralDensity {
                    lambda: rq.max(0.0).sqrt(),
                    residual,
                    iterations: it,
                    converged: true,
                });
            }
            rq_prev = rq;
        }
        Ok(SpectralDensity {
            lambda: rq.max(0.0).sqrt(),
            residual,
            iterations: max_iter,
            converged: false,
        })
    }

    /// R = max_j Σ_i w_ij.
    pub fn max_column_sum(&self) -> f64 {
        match &self.storage {
            Storage::Homogeneous => 1.0,
            Storage::Sparse(csr) => {
                let mut sums = vec![0.0; self.n];
                for (&j, &w) in csr.indices.iter().zip(&csr.weights) {
                    sums[j] += w;
                }
                sums.into_iter().fold(0.0, f64::max)
            }
        }
    }

    pub fn density_report(&self, tol: f64, max_iter: usize) -> Result<DensityReport> {
        let spectral = self.spectral_density(tol, max_iter)?;
        Ok(DensityReport {
            theta: self.local_density(),
            lambda: spectral.lambda,
            max_col_sum: self.max_column_sum(),
            lambda_iterations: spectral.iterations,
            lambda_residual: spectral.residual,
        })
    }

    /// Dense CSV dump for debugging small matrices. The first line is
    /// `n=<N>`, followed by one comma-separated line per row.
    pub fn to_dense_csv(&self) -> Result<String> {
        if self.n > DENSE_EXPORT_LIMIT {
            return Err(Error::invalid(format!(
                "dense export limited to n <= {DENSE_EXPORT_LIMIT}, got {}",
                self.n
            )));
        }
        let mut s = format!("n={}\n", self.n);
        for row in self.to_dense() {
            let line: Vec<String> = row.iter().map(|w| w.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        Ok(s)
    }
}

/// Eigenvalues μ_0..μ_{N−1} of the nearest-neighbor random-walk matrix,
/// from the Dirichlet-kernel closed form
/// `μ_k = (sin(πk(d+1)/N) / sin(πk/N) − 1) / d`, with μ_0 = 1.
pub fn circulant_spectrum(n: usize, density: f64) -> Result<Vec<f64>> {
    let d = InteractionMatrix::nearest_neighbor_degree(n, density)?;
    let (nf, df) = (n as f64, d as f64);
    Ok((0..n)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                let x = std::f64::consts::PI * k as f64 / nf;
                ((x * (df + 1.0)).sin() / x.sin() - 1.0) / df
            }
        })
        .collect())
}

/// An edge read from an edge-list file, with optional weight (default 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Parses the plain-text edge list format: one `u v` (optionally `u v w`)
/// per line, 0-indexed; blank lines and `#` comments are skipped.
pub fn parse_edge_list(text: &str, origin: &Path) -> Result<Vec<WeightedEdge>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(err(format!("expected `u v [w]`, got `{line}`")));
        }
        let parse_idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| err(format!("bad vertex `{s}`: {e}")))
        };
        let u = parse_idx(fields[0])?;
        let v = parse_idx(fields[1])?;
        let weight = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|e| err(format!("bad weight `{s}`: {e}")))?,
            None => 1.0,
        };
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(err(format!("weight {weight} must be finite and nonnegative")));
        }
        edges.push(WeightedEdge { u, v, weight });
    }
    Ok(edges)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<WeightedEdge>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, path)
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_sums(w: &InteractionMatrix) -> Vec<f64> {
        (0..w.n()).map(|i| w.row(i).iter().map(|(_, x)| x).sum()).collect()
    }

    #[test]
    fn triangle_random_walk() {
        let w = InteractionMatrix::from_adjacency(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert_eq!(w.entry(i, j), expect);
            }
        }
    }

    #[test]
    fn path_random_walk() {
        let w = InteractionMatrix::from_adjacency(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(w.to_dense()[1], vec![0.5, 0.0, 0.5]);
        assert_eq!(w.to_dense()[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(w.to_dense()[2], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn star_random_walk_and_column_sum() {
        let edges: Vec<_> = (1..5).map(|k| (0, k)).collect();
        let w = InteractionMatrix::from_adjacency(&edges, 5).unwrap();
        for k in 1..5 {
            assert_eq!(w.entry(0, k), 0.25);
            assert_eq!(w.entry(k, 0), 1.0);
        }
        assert_eq!(w.max_column_sum(), 4.0);
    }

    #[test]
    fn isolated_vertex_rejected() {
        let err = InteractionMatrix::from_adjacency(&[(0, 1)], 3).unwrap_err();
        assert!(matches!(err, Error::DegreeZero { vertex: 2 }));
    }

    #[test]
    fn self_loops_and_duplicates_rejected() {
        assert!(InteractionMatrix::from_adjacency(&[(0, 0), (0, 1)], 2).is_err());
        assert!(InteractionMatrix::from_adjacency(&[(0, 1), (1, 0)], 2).is_err());
    }

    #[test]
    fn complete_graph_queries() {
        let w = InteractionMatrix::complete(4).unwrap();
        assert!(w.is_homogeneous());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w.entry(i, j), 0.25);
            }
        }
        let one = InteractionMatrix::complete(1).unwrap();
        assert_eq!(one.entry(0, 0), 1.0);
        assert_eq!(w.max_column_sum(), 1.0);
        let w100 = InteractionMatrix::complete(100).unwrap();
        assert_eq!(w100.local_density(), 0.1);
        assert!(w100.spectral_density(1e-14, 100).unwrap().lambda < 1e-10);
    }

    #[test]
    fn nearest_neighbor_rounding() {
        assert_eq!(InteractionMatrix::nearest_neighbor_degree(1000, 0.1).unwrap(), 100);
        assert_eq!(InteractionMatrix::nearest_neighbor_degree(6, 0.34).unwrap(), 2);
        // γN = 5 is equidistant from 4 and 6
        assert_eq!(InteractionMatrix::nearest_neighbor_degree(10, 0.5).unwrap(), 4);
        // γN = 7 is equidistant from 6 and 8
        assert_eq!(InteractionMatrix::nearest_neighbor_degree(70, 0.1).unwrap(), 6);
        assert_eq!(InteractionMatrix::nearest_neighbor_degree(100, 0.051).unwrap(), 6);
        assert!(InteractionMatrix::nearest_neighbor_degree(10, 0.05).is_err());
        assert!(InteractionMatrix::nearest_neighbor_degree(4, 1.0).is_err());
        assert!(InteractionMatrix::nearest_neighbor_degree(10, 0.0).is_err());
    }

    #[test]
    fn ring_of_six() {
        let w = InteractionMatrix::nearest_neighbor(6, 0.34).unwrap();
        for i in 0..6 {
            assert_eq!(w.entry(i, (i + 1) % 6), 0.5);
            assert_eq!(w.entry(i, (i + 5) % 6), 0.5);
            assert_eq!(w.row(i).support(), 2);
        }
    }

    #[test]
    fn nearest_neighbor_densities() {
        let w = InteractionMatrix::nearest_neighbor(1000, 0.1).unwrap();
        assert!((w.local_density() - 0.1).abs() <= 1e-15);
        assert!((w.max_column_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn link_failures() {
        let w = InteractionMatrix::with_link_failures(3, &[vec![], vec![], vec![]]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w.entry(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
        let w = InteractionMatrix::with_link_failures(4, &[vec![1], vec![], vec![], vec![]])
            .unwrap();
        assert_eq!(w.to_dense()[0], vec![0.0, 0.0, 0.5, 0.5]);
        for i in 1..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((w.entry(i, j) - expect).abs() < 1e-15);
            }
        }
        let err = InteractionMatrix::with_link_failures(3, &[vec![1, 2], vec![], vec![]])
            .unwrap_err();
        assert!(matches!(err, Error::EmptyNeighborhood { vertex: 0, .. }));
    }

    #[test]
    fn identity_densities() {
        let rows = (0..8).map(|i| vec![(i, 1.0)]).collect();
        let eye = InteractionMatrix::from_rows_unchecked(8, rows).unwrap();
        assert_eq!(eye.local_density(), 1.0);
        let sd = eye.spectral_density(1e-14, 1000).unwrap();
        assert!((sd.lambda - 1.0).abs() < 1e-12);
        assert!(sd.converged);
    }

    #[test]
    fn unchecked_matrix_is_not_validated() {
        let raw = InteractionMatrix::from_dense_unchecked(&[vec![2.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
        assert!(!raw.is_validated());
        assert!(matches!(
            InteractionMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 1.0]]),
            Err(Error::NotRowStochastic { row: 0, .. })
        ));
    }

    #[test]
    fn constructor_rows_sum_to_one() {
        for w in [
            InteractionMatrix::nearest_neighbor(101, 0.37).unwrap(),
            InteractionMatrix::from_adjacency(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4)
                .unwrap(),
        ] {
            for s in row_sums(&w) {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn column_index_matches_rows() {
        let w = InteractionMatrix::from_adjacency(&[(0, 1), (1, 2), (2, 3), (0, 2)], 4).unwrap();
        let dense = w.to_dense();
        for j in 0..4 {
            let col: Vec<(usize, f64)> = w.column(j).iter().collect();
            let expect: Vec<(usize, f64)> = (0..4)
                .filter(|&i| dense[i][j] != 0.0)
                .map(|i| (i, dense[i][j]))
                .collect();
            assert_eq!(col, expect);
        }
    }

    #[test]
    fn circulant_spectrum_k0() {
        let mu = circulant_spectrum(1000, 0.1).unwrap();
        assert_eq!(mu[0], 1.0);
        assert_eq!(mu.len(), 1000);
    }

    #[test]
    fn circulant_closed_form_matches_cosine_sum() {
        // μ_k = (1/d) Σ_{j=1}^{d/2} 2 cos(2πkj/N)
        let (n, density) = (50, 0.2);
        let d = InteractionMatrix::nearest_neighbor_degree(n, density).unwrap();
        let mu = circulant_spectrum(n, density).unwrap();
        for (k, m) in mu.iter().enumerate() {
            let direct: f64 = (1..=d / 2)
                .map(|j| {
                    2.0 * (2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64).cos()
                })
                .sum::<f64>()
                / d as f64;
            assert!((m - direct).abs() < 1e-12, "k={k}: {m} vs {direct}");
        }
    }

    #[test]
    fn dense_csv_export() {
        let w = InteractionMatrix::from_adjacency(&[(0, 1), (1, 2)], 3).unwrap();
        assert_eq!(w.to_dense_csv().unwrap(), "n=3\n0,1,0\n0.5,0,0.5\n0,1,0\n");
        let big = InteractionMatrix::complete(300).unwrap();
        assert!(big.to_dense_csv().is_err());
    }

    #[test]
    fn edge_list_parsing() {
        let text = "# ring\n0 1\n\n1 2  # trailing\n2 0 0.5\n";
        let edges = parse_edge_list(text, Path::new("mem")).unwrap();
        assert_eq!(edges.len(), 3);
        assert_eq!(edges[2].weight, 0.5);
        assert!(parse_edge_list("0 x\n", Path::new("mem")).is_err());
        let err = parse_edge_list("0 1\n1\n", Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
