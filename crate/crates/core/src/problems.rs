//! The two model problems: steady heat conduction `Δu = f` with a collocation
//! loss, and linear elasticity with a potential-energy loss. Both are assembled
//! from batched network jets so their parameter gradients come from one
//! reverse sweep per point set.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{DifferentiationMode, EmbeddingField};
use crate::geometry::HouseConfig;
use crate::loss::{LossBreakdown, LossWeights};
use crate::mesh::{BoundaryTag, DomainRule, EdgeRule, Mesh, Point};
use crate::nn::{Jets, NnError, Network};

pub type Tensor2 = [[f64; 2]; 2];

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("interior batch is empty")]
    EmptyInterior,
    #[error("{0} boundary points requested but the mesh has no {0} edges")]
    MissingBoundary(&'static str),
    #[error("energy loss needs traction boundary points")]
    MissingTraction,
    #[error("data points carry {values} target values for {points} points")]
    DataMismatch { points: usize, values: usize },
    #[error("invalid problem parameters: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Right-hand side `f` of `Δu = f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeatSource {
    /// `strength` inside the disc, zero outside; a positive `edge_width`
    /// blends the rim as `½ (1 - tanh((r - radius) / edge_width))`.
    Disc {
        center: Point,
        radius: f64,
        strength: f64,
        #[serde(default)]
        edge_width: f64,
    },
    /// `f = -2π² sin(πx) sin(πy)`, whose solution with zero Dirichlet data on
    /// the unit square is `sin(πx) sin(πy)`.
    Sines,
}

impl HeatSource {
    pub fn value(&self, x: Point) -> f64 {
        match *self {
            HeatSource::Disc {
                center,
                radius,
                strength,
                edge_width,
            } => {
                let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                if edge_width > 0.0 {
                    strength * 0.5 * (1.0 - ((d2.sqrt() - radius) / edge_width).tanh())
                } else if d2 <= radius * radius {
                    strength
                } else {
                    0.0
                }
            }
            HeatSource::Sines => {
                let pi = std::f64::consts::PI;
                -2.0 * pi * pi * (pi * x[0]).sin() * (pi * x[1]).sin()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatProblemSpec {
    pub source: HeatSource,
    /// Temperature on Dirichlet edges.
    pub dirichlet_value: f64,
    /// Normal flux `∇u·n` on Neumann edges.
    pub neumann_value: f64,
}

impl Default for HeatProblemSpec {
    fn default() -> Self {
        let house = HouseConfig::default();
        HeatProblemSpec {
            source: HeatSource::Disc {
                center: house.source_center,
                radius: house.source_radius,
                strength: 1.0,
                edge_width: 0.0,
            },
            dirichlet_value: 0.0,
            neumann_value: 0.0,
        }
    }
}

impl HeatProblemSpec {
    pub fn manufactured_sines() -> Self {
        HeatProblemSpec {
            source: HeatSource::Sines,
            dirichlet_value: 0.0,
            neumann_value: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneModel {
    #[default]
    PlaneStress,
    PlaneStrain,
}

/// How the Dirichlet edges hold the body.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirichletMode {
    /// Both displacement components prescribed.
    #[default]
    Clamped,
    /// Only `u_y` prescribed on the edges; `u_x` is pinned at a single anchor
    /// node (the Dirichlet node with the smallest `x`, then `y`). This leaves
    /// lateral contraction free, so uniform tension gives uniform stress.
    Roller,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticityProblemSpec {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub model: PlaneModel,
    /// Traction applied on Neumann edges.
    pub traction: [f64; 2],
    pub dirichlet_displacement: [f64; 2],
    pub dirichlet_mode: DirichletMode,
}

impl Default for ElasticityProblemSpec {
    fn default() -> Self {
        ElasticityProblemSpec {
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            model: PlaneModel::PlaneStress,
            traction: [0.0, 1.0],
            dirichlet_displacement: [0.0, 0.0],
            dirichlet_mode: DirichletMode::Clamped,
        }
    }
}

impl ElasticityProblemSpec {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if !(self.youngs_modulus > 0.0) {
            return Err(ProblemError::InvalidSpec("Young's modulus must be positive".into()));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(ProblemError::InvalidSpec("Poisson ratio must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// Coefficients `(2μ, λ)` of `σ = 2μ ε + λ tr(ε) I` for the chosen model.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs_modulus, self.poisson_ratio);
        match self.model {
            PlaneModel::PlaneStress => (e / (1.0 + nu), e * nu / (1.0 - nu * nu)),
            PlaneModel::PlaneStrain => (e / (1.0 + nu), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))),
        }
    }
}

pub fn stress(spec: &ElasticityProblemSpec, eps: Tensor2) -> Tensor2 {
    let (two_mu, lambda) = spec.lame();
    let tr = eps[0][0] + eps[1][1];
    [
        [two_mu * eps[0][0] + lambda * tr, two_mu * eps[0][1]],
        [two_mu * eps[1][0], two_mu * eps[1][1] + lambda * tr],
    ]
}

fn symmetrize(g: Tensor2) -> Tensor2 {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

fn contract(a: Tensor2, b: Tensor2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Network input at `x`: `[x1, x2]` for a plain PINN, `[x1, x2, z(x)]` with an
/// embedding. Also returns `grad z` when it enters spatial derivatives.
fn point_input(field: Option<&EmbeddingField>, x: Point) -> (Vec<f64>, Option<Point>) {
    match field {
        None => (vec![x[0], x[1]], None),
        Some(f) => {
            let loc = f.mesh().locate_point(x);
            let z = f.eval_at(&loc);
            let g = (f.mode() == DifferentiationMode::ChainRule).then(|| f.grad_at(&loc));
            (vec![x[0], x[1], z], g)
        }
    }
}

/// `Δu(x) - f(x)` from a single exact per-point evaluation.
pub fn heat_residual(
    net: &Network,
    field: Option<&EmbeddingField>,
    x: Point,
    spec: &HeatProblemSpec,
) -> Result<f64, ProblemError> {
    let (input, g) = point_input(field, x);
    let bundle = net.evaluate(&input, 2)?;
    let h = &bundle.hessians.expect("order 2 requested")[0];
    let mut lap = h[0][0] + h[1][1];
    if let Some(g) = g {
        for k in 0..2 {
            lap += 2.0 * g[k] * h[k][2] + g[k] * g[k] * h[2][2];
        }
    }
    Ok(lap - spec.source.value(x))
}

/// Spatial displacement gradient `G[i][j] = ∂u_i/∂x_j` at `x`.
fn displacement_gradient(
    net: &Network,
    field: Option<&EmbeddingField>,
    x: Point,
) -> Result<Tensor2, ProblemError> {
    let (input, g) = point_input(field, x);
    let j = net.evaluate(&input, 1)?.jacobian.expect("order 1 requested");
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for k in 0..2 {
            out[i][k] = j[i][k] + g.map_or(0.0, |g| j[i][2] * g[k]);
        }
    }
    Ok(out)
}

/// Small-strain tensor `½(∇u + ∇uᵀ)` of a two-output network.
pub fn strain(net: &Network, field: Option<&EmbeddingField>, x: Point) -> Result<Tensor2, ProblemError> {
    Ok(symmetrize(displacement_gradient(net, field, x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    UniformRandom,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleCounts {
    pub interior: usize,
    pub data: usize,
    pub dirichlet: usize,
    pub neumann: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        SampleCounts {
            interior: 4096,
            data: 0,
            dirichlet: 512,
            neumann: 512,
        }
    }
}

/// Points at which the loss terms are evaluated. Interior and Neumann points
/// carry integration weights (summing to the area and the Neumann length) so
/// the same batch serves both the mean-square and the energy losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollocationBatch {
    pub interior: Vec<Point>,
    pub interior_weights: Vec<f64>,
    pub data: Vec<Point>,
    pub data_values: Vec<Vec<f64>>,
    pub dirichlet: Vec<Point>,
    pub dirichlet_normals: Vec<Point>,
    pub neumann: Vec<Point>,
    pub neumann_normals: Vec<Point>,
    pub neumann_weights: Vec<f64>,
    /// Pin point for [`DirichletMode::Roller`].
    pub anchor: Option<Point>,
}

/// The Dirichlet node with the smallest `x` (then `y`).
pub fn roller_anchor(mesh: &Mesh) -> Option<Point> {
    mesh.nodes_with_tag(BoundaryTag::Dirichlet)
        .into_iter()
        .map(|n| mesh.nodes()[n])
        .min_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])))
}

fn cumulative(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn pick(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= r).min(cum.len() - 1)
}

fn interior_uniform(mesh: &Mesh, n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let cum = cumulative((0..mesh.n_elements()).map(|e| mesh.area(e)));
    (0..n)
        .map(|_| {
            let e = pick(&cum, rng);
            let [a, b, c] = mesh.vertices(e);
            let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            [
                a[0] + r1 * (b[0] - a[0]) + r2 * (c[0] - a[0]),
                a[1] + r1 * (b[1] - a[1]) + r2 * (c[1] - a[1]),
            ]
        })
        .collect()
}

/// `(points, normals, total length)` sampled on edges with `tag`.
fn boundary_uniform(
    mesh: &Mesh,
    tag: BoundaryTag,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Point>, Vec<Point>, f64) {
    let edges: Vec<_> = mesh.edges_with_tag(tag).collect();
    if edges.is_empty() || n == 0 {
        return (Vec::new(), Vec::new(), edges.iter().map(|e| e.length).sum());
    }
    let cum = cumulative(edges.iter().map(|e| e.length));
    let mut pts = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let e = edges[pick(&cum, rng)];
        let t = rng.random::<f64>();
        let (a, b) = (mesh.nodes()[e.nodes[0]], mesh.nodes()[e.nodes[1]]);
        pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        normals.push(e.normal);
    }
    (pts, normals, cum[cum.len() - 1])
}

/// Draw a collocation batch. `target` supplies data values when data points
/// are requested; without it they stay empty and must be filled by the caller.
pub fn sample_batch(
    mesh: &Mesh,
    counts: SampleCounts,
    seed: u64,
    strategy: SamplingStrategy,
    target: Option<&dyn Fn(Point) -> Vec<f64>>,
) -> Result<CollocationBatch, ProblemError> {
    if counts.dirichlet > 0 && !mesh.has_tag(BoundaryTag::Dirichlet) {
        return Err(ProblemError::MissingBoundary("dirichlet"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = CollocationBatch {
        anchor: roller_anchor(mesh),
        ..Default::default()
    };
    match strategy {
        SamplingStrategy::UniformRandom => {
            if counts.interior == 0 {
                return Err(ProblemError::EmptyInterior);
            }
            batch.interior = interior_uniform(mesh, counts.interior, &mut rng);
            let w = mesh.total_area() / counts.interior as f64;
            batch.interior_weights = vec![w; counts.interior];
            let (p, n, _) = boundary_uniform(mesh, BoundaryTag::Dirichlet, counts.dirichlet, &mut rng);
            batch.dirichlet = p;
            batch.dirichlet_normals = n;
            let (p, n, len) = boundary_uniform(mesh, BoundaryTag::Neumann, counts.neumann, &mut rng);
            batch.neumann_weights = vec![len / p.len().max(1) as f64; p.len()];
            batch.neumann = p;
            batch.neumann_normals = n;
        }
        SamplingStrategy::Quadrature => {
            let q = mesh.domain_quadrature(DomainRule::ThreePoint);
            batch.interior = q.points;
            batch.interior_weights = q.weights;
            if counts.dirichlet > 0 {
                let q = mesh.boundary_quadrature(EdgeRule::GaussLegendre2, BoundaryTag::Dirichlet);
                batch.dirichlet = q.points;
                batch.dirichlet_normals = q.normals;
            }
            if counts.neumann > 0 {
                let q = mesh.boundary_quadrature(EdgeRule::GaussLegendre2, BoundaryTag::Neumann);
                batch.neumann = q.points;
                batch.neumann_normals = q.normals;
                batch.neumann_weights = q.weights;
            }
        }
    }
    if counts.data > 0 {
        batch.data = interior_uniform(mesh, counts.data, &mut rng);
        if let Some(f) = target {
            batch.data_values = batch.data.iter().map(|&x| f(x)).collect();
        }
    }
    Ok(batch)
}

/// Network inputs for a point set plus the directions along which spatial
/// derivatives are taken.
#[derive(Debug, Clone)]
pub struct Features {
    inputs: Array2<f64>,
    grad_z: Option<Vec<Point>>,
}

impl Features {
    pub fn new(points: &[Point], field: Option<&EmbeddingField>) -> Self {
        let n_in = if field.is_some() { 3 } else { 2 };
        let mut inputs = Array2::zeros((n_in, points.len()));
        let mut grad_z = None;
        if let Some(f) = field {
            let chain = f.mode() == DifferentiationMode::ChainRule;
            let mut grads = Vec::new();
            for (p, &x) in points.iter().enumerate() {
                let loc = f.mesh().locate_point(x);
                inputs[(2, p)] = f.eval_at(&loc);
                if chain {
                    grads.push(f.grad_at(&loc));
                }
            }
            if chain {
                grad_z = Some(grads);
            }
        }
        for (p, x) in points.iter().enumerate() {
            inputs[(0, p)] = x[0];
            inputs[(1, p)] = x[1];
        }
        Features { inputs, grad_z }
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    /// Direction of `∂/∂x_k` in input space, one column per point.
    fn axis_direction(&self, k: usize) -> Array2<f64> {
        let mut d = Array2::zeros(self.inputs.dim());
        d.row_mut(k).fill(1.0);
        if let Some(g) = &self.grad_z {
            for (p, g) in g.iter().enumerate() {
                d[(2, p)] = g[k];
            }
        }
        d
    }

    fn spatial_directions(&self) -> [Array2<f64>; 2] {
        [self.axis_direction(0), self.axis_direction(1)]
    }

    /// Direction of the outward normal derivative.
    fn normal_direction(&self, normals: &[Point]) -> Array2<f64> {
        let mut d = Array2::zeros(self.inputs.dim());
        for (p, n) in normals.iter().enumerate() {
            d[(0, p)] = n[0];
            d[(1, p)] = n[1];
            if let Some(g) = &self.grad_z {
                d[(2, p)] = g[p][0] * n[0] + g[p][1] * n[1];
            }
        }
        d
    }
}

/// A batch with its network inputs precomputed, reusable until the next
/// resampling.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub batch: CollocationBatch,
    interior: Features,
    data: Features,
    dirichlet: Features,
    neumann: Features,
    anchor: Option<Features>,
}

impl PreparedBatch {
    pub fn new(batch: CollocationBatch, field: Option<&EmbeddingField>) -> Self {
        PreparedBatch {
            interior: Features::new(&batch.interior, field),
            data: Features::new(&batch.data, field),
            dirichlet: Features::new(&batch.dirichlet, field),
            neumann: Features::new(&batch.neumann, field),
            anchor: batch.anchor.map(|a| Features::new(&[a], field)),
            batch,
        }
    }
}

/// Forward pass, loss closure, and (optionally) reverse pass on one point set.
fn term<F>(
    net: &Network,
    feats: &Features,
    dirs: &[Array2<f64>],
    second: bool,
    grad: Option<&mut [f64]>,
    loss: F,
) -> f64
where
    F: FnOnce(&Jets) -> (f64, Jets),
{
    let views: Vec<_> = dirs.iter().map(|d| d.view()).collect();
    let (jets, tape) = net.forward_jets(feats.inputs(), &views, second);
    let (value, adjoint) = loss(&jets);
    if let Some(g) = grad {
        net.backward_jets(&tape, &adjoint, g);
    }
    value
}

fn check_data(batch: &CollocationBatch) -> Result<(), ProblemError> {
    if batch.data_values.len() != batch.data.len() {
        return Err(ProblemError::DataMismatch {
            points: batch.data.len(),
            values: batch.data_values.len(),
        });
    }
    Ok(())
}

/// Mean squared misfit of the network value against per-point targets; the
/// adjoint is scaled by `scale`.
fn value_misfit(jets: &Jets, targets: impl Fn(usize, usize) -> f64, scale: f64) -> (f64, Jets) {
    let n = jets.batch().max(1) as f64;
    let mut adj = Jets::zeros_like(jets);
    let mut sum = 0.0;
    for ((o, p), &u) in jets.value.indexed_iter() {
        let r = u - targets(o, p);
        sum += r * r;
        adj.value[(o, p)] = scale * 2.0 * r / n;
    }
    (sum / n, adj)
}

fn heat_impl(
    net: &Network,
    prep: &PreparedBatch,
    spec: &HeatProblemSpec,
    weights: LossWeights,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown, ProblemError> {
    let b = &prep.batch;
    if b.interior.is_empty() {
        return Err(ProblemError::EmptyInterior);
    }
    check_data(b)?;
    let f: Vec<f64> = b.interior.iter().map(|&x| spec.source.value(x)).collect();
    let pde = term(
        net,
        &prep.interior,
        &prep.interior.spatial_directions(),
        true,
        grad.as_deref_mut(),
        |j| {
            let n = j.batch() as f64;
            let mut adj = Jets::zeros_like(j);
            let mut sum = 0.0;
            for p in 0..j.batch() {
                let r = j.second[0][(0, p)] + j.second[1][(0, p)] - f[p];
                sum += r * r;
                let a = weights.pde * 2.0 * r / n;
                adj.second[0][(0, p)] = a;
                adj.second[1][(0, p)] = a;
            }
            (sum / n, adj)
        },
    );
    let data = if b.data.is_empty() {
        0.0
    } else {
        term(net, &prep.data, &[], false, grad.as_deref_mut(), |j| {
            value_misfit(j, |o, p| b.data_values[p][o], weights.data)
        })
    };
    let mut bc = 0.0;
    if !b.dirichlet.is_empty() {
        bc += term(net, &prep.dirichlet, &[], false, grad.as_deref_mut(), |j| {
            value_misfit(j, |_, _| spec.dirichlet_value, weights.bc)
        });
    }
    if !b.neumann.is_empty() {
        let dir = [prep.neumann.normal_direction(&b.neumann_normals)];
        bc += term(net, &prep.neumann, &dir, false, grad.as_deref_mut(), |j| {
            let n = j.batch() as f64;
            let mut adj = Jets::zeros_like(j);
            let mut sum = 0.0;
            for p in 0..j.batch() {
                let r = j.first[0][(0, p)] - spec.neumann_value;
                sum += r * r;
                adj.first[0][(0, p)] = weights.bc * 2.0 * r / n;
            }
            (sum / n, adj)
        });
    }
    Ok(LossBreakdown::combine(pde, data, 0.0, bc, weights))
}

pub fn heat_loss(
    net: &Network,
    field: Option<&EmbeddingField>,
    batch: &CollocationBatch,
    spec: &HeatProblemSpec,
    weights: LossWeights,
) -> Result<LossBreakdown, ProblemError> {
    heat_impl(net, &PreparedBatch::new(batch.clone(), field), spec, weights, None)
}

/// Heat loss and its gradient with respect to the network parameters.
pub fn heat_loss_and_gradient(
    net: &Network,
    prep: &PreparedBatch,
    spec: &HeatProblemSpec,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), ProblemError> {
    let mut grad = vec![0.0; net.n_params()];
    let loss = heat_impl(net, prep, spec, weights, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Displacement gradients `G[i][j]` of a two-output jet with spatial
/// directions `[∂x, ∂y]`.
fn jet_gradient(j: &Jets, p: usize) -> Tensor2 {
    [
        [j.first[0][(0, p)], j.first[1][(0, p)]],
        [j.first[0][(1, p)], j.first[1][(1, p)]],
    ]
}

/// Store the adjoint of a symmetric tensor with respect to the displacement
/// gradient of point `p`.
fn set_gradient_adjoint(adj: &mut Jets, p: usize, s: Tensor2) {
    for i in 0..2 {
        for k in 0..2 {
            adj.first[k][(i, p)] += s[i][k];
        }
    }
}

fn energy_impl(
    net: &Network,
    prep: &PreparedBatch,
    spec: &ElasticityProblemSpec,
    weights: LossWeights,
    mut grad: Option<&mut [f64]>,
) -> Result<LossBreakdown, ProblemError> {
    let b = &prep.batch;
    if b.interior.is_empty() {
        return Err(ProblemError::EmptyInterior);
    }
    if b.neumann.is_empty() {
        return Err(ProblemError::MissingTraction);
    }
    check_data(b)?;
    let t = spec.traction;

    let strain_energy = term(
        net,
        &prep.interior,
        &prep.interior.spatial_directions(),
        false,
        grad.as_deref_mut(),
        |j| {
            let mut adj = Jets::zeros_like(j);
            let mut sum = 0.0;
            for p in 0..j.batch() {
                let w = b.interior_weights[p];
                let eps = symmetrize(jet_gradient(j, p));
                let sig = stress(spec, eps);
                sum += w * 0.5 * contract(sig, eps);
                let s = sig.map(|r| r.map(|v| weights.pde * w * v));
                set_gradient_adjoint(&mut adj, p, s);
            }
            (sum, adj)
        },
    );

    // Traction work and traction residual share one pass on Neumann points.
    let mut traction_penalty = 0.0;
    let work = {
        let penalty = &mut traction_penalty;
        term(
            net,
            &prep.neumann,
            &prep.neumann.spatial_directions(),
            false,
            grad.as_deref_mut(),
            |j| {
                let n = j.batch() as f64;
                let mut adj = Jets::zeros_like(j);
                let mut work = 0.0;
                for p in 0..j.batch() {
                    let w = b.neumann_weights[p];
                    for i in 0..2 {
                        work += w * t[i] * j.value[(i, p)];
                        adj.value[(i, p)] = -weights.pde * w * t[i];
                    }
                    let nrm = b.neumann_normals[p];
                    let sig = stress(spec, symmetrize(jet_gradient(j, p)));
                    let r = [
                        sig[0][0] * nrm[0] + sig[0][1] * nrm[1] - t[0],
                        sig[1][0] * nrm[0] + sig[1][1] * nrm[1] - t[1],
                    ];
                    *penalty += (r[0] * r[0] + r[1] * r[1]) / n;
                    // d/dσ of |σn - t|² is r ⊗ n; pull back through ℂ.
                    let c = weights.bc * 2.0 / n;
                    let rn = [[r[0] * nrm[0], r[0] * nrm[1]], [r[1] * nrm[0], r[1] * nrm[1]]];
                    let s = stress(spec, symmetrize(rn)).map(|row| row.map(|v| c * v));
                    set_gradient_adjoint(&mut adj, p, s);
                }
                (work, adj)
            },
        )
    };

    let ubc = spec.dirichlet_displacement;
    let mut dirichlet = 0.0;
    if !b.dirichlet.is_empty() {
        dirichlet += term(net, &prep.dirichlet, &[], false, grad.as_deref_mut(), |j| {
            let n = j.batch() as f64;
            let mut adj = Jets::zeros_like(j);
            let mut sum = 0.0;
            let comps: &[usize] = match spec.dirichlet_mode {
                DirichletMode::Clamped => &[0, 1],
                DirichletMode::Roller => &[1],
            };
            for p in 0..j.batch() {
                for &i in comps {
                    let r = j.value[(i, p)] - ubc[i];
                    sum += r * r;
                    adj.value[(i, p)] = weights.bc * 2.0 * r / n;
                }
            }
            (sum / n, adj)
        });
        if spec.dirichlet_mode == DirichletMode::Roller {
            if let Some(anchor) = &prep.anchor {
                dirichlet += term(net, anchor, &[], false, grad.as_deref_mut(), |j| {
                    let mut adj = Jets::zeros_like(j);
                    let r = j.value[(0, 0)] - ubc[0];
                    adj.value[(0, 0)] = weights.bc * 2.0 * r;
                    (r * r, adj)
                });
            }
        }
    }

    let data = if b.data.is_empty() {
        0.0
    } else {
        term(net, &prep.data, &[], false, grad.as_deref_mut(), |j| {
            value_misfit(j, |o, p| b.data_values[p][o], weights.data)
        })
    };

    Ok(LossBreakdown::combine(
        strain_energy - work,
        data,
        0.0,
        dirichlet + traction_penalty,
        weights,
    ))
}

pub fn energy_loss(
    net: &Network,
    field: Option<&EmbeddingField>,
    batch: &CollocationBatch,
    spec: &ElasticityProblemSpec,
    weights: LossWeights,
) -> Result<LossBreakdown, ProblemError> {
    energy_impl(net, &PreparedBatch::new(batch.clone(), field), spec, weights, None)
}

pub fn energy_loss_and_gradient(
    net: &Network,
    prep: &PreparedBatch,
    spec: &ElasticityProblemSpec,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>), ProblemError> {
    let mut grad = vec![0.0; net.n_params()];
    let loss = energy_impl(net, prep, spec, weights, Some(&mut grad))?;
    Ok((loss, grad))
}

const PREDICT_CHUNK: usize = 8192;

/// Network values at `points`, one `Vec` of outputs per point.
pub fn predict(net: &Network, field: Option<&EmbeddingField>, points: &[Point]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(PREDICT_CHUNK) {
        let feats = Features::new(chunk, field);
        let (jets, _) = net.forward_jets(feats.inputs(), &[], false);
        for p in 0..chunk.len() {
            out.push(jets.value.column(p).to_vec());
        }
    }
    out
}

/// Stress of a displacement network at `points` (spatial derivatives honour
/// the field's differentiation mode).
pub fn predict_stress(
    net: &Network,
    field: Option<&EmbeddingField>,
    spec: &ElasticityProblemSpec,
    points: &[Point],
) -> Vec<Tensor2> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(PREDICT_CHUNK) {
        let feats = Features::new(chunk, field);
        let dirs = feats.spatial_directions();
        let views: Vec<_> = dirs.iter().map(|d| d.view()).collect();
        let (jets, _) = net.forward_jets(feats.inputs(), &views, false);
        for p in 0..chunk.len() {
            out.push(stress(spec, symmetrize(jet_gradient(&jets, p))));
        }
    }
    out
}
