//! Mesh-connectivity graphs, their Laplacian `L = D - A`, the Fiedler pair,
//! and the small dense/geodesic tools used to check spectral properties.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::sparse::{conjugate_gradient, CgOptions, CsrMatrix};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;

/// Block size of the subspace iteration behind [`Graph::fiedler`].
const BLOCK: usize = 3;
const START_SEED: u64 = 0x6669_6564;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("graph is disconnected ({components} components); the Fiedler vector is undefined")]
    Disconnected { components: usize },
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("vertex {vertex} out of range for a graph with {n} vertices")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("vector length {got} does not match vertex count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Rayleigh quotient of the zero vector")]
    ZeroVector,
    #[error("graph needs at least two vertices")]
    TooSmall,
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

/// Undirected, unweighted simple graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

/// Smallest non-zero Laplacian eigenvalue and its unit, sign-fixed eigenvector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPair {
    pub lambda2: f64,
    pub fiedler: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiedlerOutcome {
    pub pair: SpectralPair,
    /// Ritz estimate of the next eigenvalue.
    pub lambda3: f64,
    /// Set when `lambda3 - lambda2 < tol`; the Fiedler vector is then one
    /// choice out of a higher-dimensional eigenspace.
    pub degenerate: bool,
    pub iterations: usize,
}

/// Full eigendecomposition, ascending eigenvalues, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl DenseSpectrum {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatMethod {
    /// Full dense eigendecomposition; small graphs only.
    Spectral,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphHeatState {
    pub values: Vec<f64>,
    pub time: f64,
}

impl Graph {
    /// Build from an edge list; self loops are dropped and duplicates merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut list: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for v in [a, b] {
                if v >= n {
                    return Err(GraphError::VertexOutOfRange { vertex: v, n });
                }
            }
            if a != b {
                list.push((a.min(b), a.max(b)));
            }
        }
        list.sort_unstable();
        list.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &list {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(Graph {
            n,
            edges: list,
            neighbors,
        })
    }

    /// Vertices are mesh nodes, edges the deduplicated element edges.
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let edges: Vec<(usize, usize)> = mesh
            .elements()
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        Self::from_edges(mesh.n_nodes(), &edges).expect("mesh indices validated")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).unwrap()
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n, &edges).unwrap()
    }

    /// `nx x ny` lattice, vertex `(i, j)` at index `j * nx + i`.
    pub fn grid(nx: usize, ny: usize) -> Self {
        let mut edges = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let v = j * nx + i;
                if i + 1 < nx {
                    edges.push((v, v + 1));
                }
                if j + 1 < ny {
                    edges.push((v, v + nx));
                }
            }
        }
        Self::from_edges(nx * ny, &edges).unwrap()
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn adjacency(&self) -> CsrMatrix {
        let t: Vec<_> = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)])
            .collect();
        CsrMatrix::from_triplets(self.n, self.n, &t)
    }

    pub fn laplacian(&self) -> CsrMatrix {
        let mut t: Vec<_> = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [(a, b, -1.0), (b, a, -1.0)])
            .collect();
        t.extend(
            self.neighbors
                .iter()
                .enumerate()
                .map(|(v, nb)| (v, v, nb.len() as f64)),
        );
        CsrMatrix::from_triplets(self.n, self.n, &t)
    }

    pub fn bfs_distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &self.neighbors[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Hop count between `v` and `w`; `None` when unreachable.
    pub fn bfs_distance(&self, v: usize, w: usize) -> Result<Option<usize>, GraphError> {
        for x in [v, w] {
            if x >= self.n {
                return Err(GraphError::VertexOutOfRange { vertex: x, n: self.n });
            }
        }
        Ok(self.bfs_distances_from(v)[w])
    }

    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                for &w in &self.neighbors[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }

    fn check_len(&self, v: &[f64]) -> Result<(), GraphError> {
        if v.len() != self.n {
            return Err(GraphError::LengthMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Rayleigh quotient as a sum over edges, `1/2 sum_mn A_mn (v_n - v_m)^2 / |v|^2`.
    pub fn rayleigh(&self, v: &[f64]) -> Result<f64, GraphError> {
        self.check_len(v)?;
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        if norm2 == 0.0 {
            return Err(GraphError::ZeroVector);
        }
        // Each undirected edge appears twice in the double sum.
        let s: f64 = self
            .edges
            .iter()
            .map(|&(a, b)| (v[b] - v[a]).powi(2))
            .sum();
        Ok(s / norm2)
    }

    /// Rayleigh quotient as the quadratic form `v^T L v / v^T v`.
    pub fn rayleigh_quadratic(&self, v: &[f64]) -> Result<f64, GraphError> {
        self.check_len(v)?;
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        if norm2 == 0.0 {
            return Err(GraphError::ZeroVector);
        }
        let lv = self.laplacian().mul(v);
        Ok(v.iter().zip(&lv).map(|(a, b)| a * b).sum::<f64>() / norm2)
    }

    /// Dense eigendecomposition of `L`.
    pub fn dense_spectrum(&self) -> DenseSpectrum {
        let lap = self.laplacian();
        let mut m = DMatrix::<f64>::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in lap.row(r) {
                m[(r, c)] = v;
            }
        }
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.n, self.n, |r, c| eig.eigenvectors[(r, order[c])]);
        DenseSpectrum { values, vectors }
    }

    /// Smallest non-zero eigenpair of `L` by block inverse iteration on the
    /// complement of the constant vector, with conjugate-gradient inner solves
    /// and Rayleigh–Ritz extraction. The result is sign-fixed so that the
    /// entry of largest magnitude (lowest index on ties) is positive.
    pub fn fiedler(&self, tol: f64) -> Result<FiedlerOutcome, GraphError> {
        if self.n < 2 {
            return Err(GraphError::TooSmall);
        }
        let components = self.component_count();
        if components > 1 {
            return Err(GraphError::Disconnected { components });
        }
        let n = self.n;
        let p = BLOCK.min(n - 1);
        let lap = self.laplacian();

        let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
        let mut q: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        orthonormalize(&mut q);
        let (mut q, mut theta) = rayleigh_ritz(&lap, &q);

        let cg = CgOptions {
            rel_tol: 1e-14,
            max_iter: 10 * n + 1000,
            deflate_constant: true,
        };
        let mut residual = f64::INFINITY;
        for it in 0..=MAX_ITERATIONS {
            let u = &q[0];
            let lu = lap.mul(u);
            residual = lu
                .iter()
                .zip(u)
                .map(|(a, b)| (a - theta[0] * b).abs())
                .fold(0.0, f64::max);
            if residual < tol {
                let mut fiedler = u.clone();
                fix_sign(&mut fiedler);
                let lambda3 = theta.get(1).copied().unwrap_or(f64::INFINITY);
                let degenerate = lambda3 - theta[0] < tol;
                if degenerate {
                    log::warn!(
                        "degenerate spectrum: lambda2 = {:.6e}, lambda3 = {:.6e}; Fiedler vector is not unique",
                        theta[0],
                        lambda3
                    );
                }
                return Ok(FiedlerOutcome {
                    pair: SpectralPair {
                        lambda2: theta[0],
                        fiedler,
                    },
                    lambda3,
                    degenerate,
                    iterations: it,
                });
            }
            if it == MAX_ITERATIONS {
                break;
            }
            let mut y = Vec::with_capacity(p);
            for (qj, &tj) in q.iter().zip(&theta) {
                let mut x: Vec<f64> = qj.iter().map(|v| v / tj.max(1e-300)).collect();
                conjugate_gradient(&lap, qj, &mut x, cg);
                y.push(x);
            }
            orthonormalize(&mut y);
            (q, theta) = rayleigh_ritz(&lap, &y);
        }
        Err(GraphError::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual,
        })
    }

    /// Evolve `df/dt = -L f` from `f0` to time `t`.
    pub fn heat_evolve(
        &self,
        f0: &[f64],
        t: f64,
        method: HeatMethod,
    ) -> Result<GraphHeatState, GraphError> {
        self.check_len(f0)?;
        if !(t >= 0.0) {
            return Err(GraphError::NegativeTime(t));
        }
        let components = self.component_count();
        if components > 1 {
            return Err(GraphError::Disconnected { components });
        }
        let values = match method {
            HeatMethod::Spectral => {
                let spec = self.dense_spectrum();
                let mut f = vec![0.0; self.n];
                for (k, &lam) in spec.values.iter().enumerate() {
                    let u = spec.vectors.column(k);
                    let c: f64 = u.iter().zip(f0).map(|(a, b)| a * b).sum();
                    let decay = c * (-lam.max(0.0) * t).exp();
                    for (fi, ui) in f.iter_mut().zip(u.iter()) {
                        *fi += decay * ui;
                    }
                }
                f
            }
            HeatMethod::Rk4 => {
                let lap = self.laplacian();
                // Gershgorin: lambda_max <= 2 * max degree.
                let lam_max = 2.0 * self.degrees().into_iter().max().unwrap_or(1).max(1) as f64;
                let h_max = 0.05 / lam_max;
                let steps = (t / h_max).ceil().max(1.0) as usize;
                let dt = t / steps as f64;
                let mut f = f0.to_vec();
                let rhs = |x: &[f64]| -> Vec<f64> { lap.mul(x).into_iter().map(|v| -v).collect() };
                let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
                    x.iter().zip(k).map(|(x, k)| x + a * k).collect()
                };
                for _ in 0..steps {
                    let k1 = rhs(&f);
                    let k2 = rhs(&axpy(&f, 0.5 * dt, &k1));
                    let k3 = rhs(&axpy(&f, 0.5 * dt, &k2));
                    let k4 = rhs(&axpy(&f, dt, &k3));
                    for i in 0..f.len() {
                        f[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                    }
                }
                f
            }
        };
        Ok(GraphHeatState { values, time: t })
    }
}

/// Make the entry of largest magnitude positive; near-ties (relative 1e-9)
/// go to the lowest index.
pub fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(k) = v.iter().position(|x| x.abs() >= max * (1.0 - 1e-9)) {
        if v[k] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram–Schmidt against the constant vector and each other.
fn orthonormalize(vs: &mut [Vec<f64>]) {
    for j in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(j);
        let v = &mut rest[0];
        for _ in 0..2 {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            for u in done.iter() {
                let c = dot(u, v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = dot(v, v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Ritz pairs of `lap` on the span of the orthonormal block `q`, ascending.
fn rayleigh_ritz(lap: &CsrMatrix, q: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let p = q.len();
    let lq: Vec<Vec<f64>> = q.iter().map(|v| lap.mul(v)).collect();
    let t = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&q[i], &lq[j]) + dot(&q[j], &lq[i])));
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = q[0].len();
    let mut vecs = Vec::with_capacity(p);
    let mut vals = Vec::with_capacity(p);
    for &k in &order {
        let mut v = vec![0.0; n];
        for (i, qi) in q.iter().enumerate() {
            let c = eig.eigenvectors[(i, k)];
            v.iter_mut().zip(qi).for_each(|(x, y)| *x += c * y);
        }
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        vecs.push(v);
        vals.push(eig.eigenvalues[k]);
    }
    (vecs, vals)
}
