//! Ground truth: linear-triangle finite-element solvers for both model
//! problems, a manufactured Poisson solution, and the relative-error metric
//! `RE = |u - u*| / max|u*|`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::{BoundaryTag, DomainRule, Mesh, Point};
use crate::problems::{DirichletMode, ElasticityProblemSpec, HeatProblemSpec, HeatSource, Tensor2};
use crate::sparse::{conjugate_gradient, CgOptions, CsrMatrix};

/// Relative residual demanded of the finite-element linear solves.
pub const SOLVER_REL_TOL: f64 = 1e-13;

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error("mesh has no dirichlet edges; the system is singular")]
    NoDirichlet,
    #[error("linear solve stopped after {iterations} iterations at residual {residual:e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("unknown manufactured case '{0}'")]
    UnknownCase(String),
    #[error("reference field is identically zero in component {0}")]
    ZeroReference(usize),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in field at entry {0}")]
    NonFinite(usize),
    #[error("cannot parse field: {0}")]
    Parse(String),
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetadata {
    pub solver: String,
    /// Mean edge length of the mesh.
    pub h: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl SolutionMetadata {
    pub fn now(solver: &str, mesh: &Mesh) -> Self {
        SolutionMetadata {
            solver: solver.to_string(),
            h: mesh.mean_edge_length(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

/// Nodal field on a mesh; `values[node * components + c]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSolution {
    pub metadata: SolutionMetadata,
    pub components: usize,
    pub mesh: Mesh,
    pub values: Vec<f64>,
}

pub fn component_names(components: usize) -> Vec<String> {
    match components {
        1 => vec!["u".into()],
        2 => vec!["u_x".into(), "u_y".into()],
        n => (0..n).map(|c| format!("u{c}")).collect(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ReferenceError {
    if source.kind() == std::io::ErrorKind::NotFound {
        ReferenceError::NotFound(path.display().to_string())
    } else {
        ReferenceError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl FieldSolution {
    pub fn new(
        mesh: Mesh,
        components: usize,
        values: Vec<f64>,
        metadata: SolutionMetadata,
    ) -> Result<Self, ReferenceError> {
        let expected = mesh.n_nodes() * components;
        if values.len() != expected {
            return Err(ReferenceError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ReferenceError::NonFinite(i));
        }
        Ok(FieldSolution {
            metadata,
            components,
            mesh,
            values,
        })
    }

    pub fn node_value(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    /// Component `c` of every node.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.components).copied().collect()
    }

    /// Linear interpolation at `x` (clamped extrapolation outside the mesh).
    pub fn evaluate(&self, x: Point) -> Vec<f64> {
        let loc = self.mesh.locate_point(x);
        let tri = self.mesh.elements()[loc.element()];
        let bary = loc.bary();
        (0..self.components)
            .map(|c| (0..3).map(|k| bary[k] * self.values[tri[k] * self.components + c]).sum())
            .collect()
    }

    pub fn evaluate_many(&self, points: &[Point]) -> Vec<Vec<f64>> {
        points.iter().map(|&x| self.evaluate(x)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("field serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReferenceError> {
        let f: FieldSolution =
            serde_json::from_str(text).map_err(|e| ReferenceError::Parse(e.to_string()))?;
        FieldSolution::new(f.mesh, f.components, f.values, f.metadata)
    }

    /// Columns `node,x,y,<components>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,x,y");
        for name in component_names(self.components) {
            out.push(',');
            out.push_str(&name);
        }
        out.push('\n');
        for (i, p) in self.mesh.nodes().iter().enumerate() {
            write!(out, "{i},{},{}", p[0], p[1]).unwrap();
            for v in self.node_value(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Read nodal values written by [`FieldSolution::to_csv`] onto `mesh`.
    pub fn from_csv(text: &str, mesh: Mesh, metadata: SolutionMetadata) -> Result<Self, ReferenceError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| ReferenceError::Parse("empty file".into()))?;
        let cols = header.split(',').count();
        if cols < 4 {
            return Err(ReferenceError::Parse("expected node,x,y and values".into()));
        }
        let components = cols - 3;
        let mut values = vec![f64::NAN; mesh.n_nodes() * components];
        let mut seen = 0;
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(ReferenceError::Parse(format!("line {}: wrong column count", ln + 2)));
            }
            let node: usize = fields[0]
                .parse()
                .map_err(|_| ReferenceError::Parse(format!("line {}: bad node index", ln + 2)))?;
            if node >= mesh.n_nodes() {
                return Err(ReferenceError::Parse(format!("line {}: node out of range", ln + 2)));
            }
            for c in 0..components {
                values[node * components + c] = fields[3 + c]
                    .trim()
                    .parse()
                    .map_err(|_| ReferenceError::Parse(format!("line {}: bad number", ln + 2)))?;
            }
            seen += 1;
        }
        if seen != mesh.n_nodes() {
            return Err(ReferenceError::LengthMismatch {
                expected: mesh.n_nodes(),
                got: seen,
            });
        }
        FieldSolution::new(mesh, components, values, metadata)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReferenceError> {
        let text = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.to_csv(),
            _ => self.to_json(),
        };
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    /// Load a JSON field (which embeds its mesh).
    pub fn load(path: &Path) -> Result<Self, ReferenceError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text)
    }
}

/// Solve the reduced SPD system after eliminating `fixed` dofs with values
/// `fixed_values` (indexed by dof).
fn solve_constrained(
    n_dofs: usize,
    triplets: &[(usize, usize, f64)],
    rhs: &[f64],
    fixed: &[bool],
    fixed_values: &[f64],
) -> Result<Vec<f64>, ReferenceError> {
    let mut map = vec![usize::MAX; n_dofs];
    let mut n_free = 0;
    for d in 0..n_dofs {
        if !fixed[d] {
            map[d] = n_free;
            n_free += 1;
        }
    }
    let mut b: Vec<f64> = (0..n_dofs).filter(|&d| !fixed[d]).map(|d| rhs[d]).collect();
    let mut reduced = Vec::with_capacity(triplets.len());
    for &(r, c, v) in triplets {
        if fixed[r] {
            continue;
        }
        if fixed[c] {
            b[map[r]] -= v * fixed_values[c];
        } else {
            reduced.push((map[r], map[c], v));
        }
    }
    let k = CsrMatrix::from_triplets(n_free, n_free, &reduced);
    let mut x = vec![0.0; n_free];
    let outcome = conjugate_gradient(
        &k,
        &b,
        &mut x,
        CgOptions {
            rel_tol: SOLVER_REL_TOL,
            max_iter: 20 * n_free + 1000,
            deflate_constant: false,
        },
    );
    if !outcome.converged {
        return Err(ReferenceError::NotConverged {
            iterations: outcome.iterations,
            residual: outcome.residual_norm,
        });
    }
    let mut u = fixed_values.to_vec();
    for d in 0..n_dofs {
        if !fixed[d] {
            u[d] = x[map[d]];
        }
    }
    Ok(u)
}

/// P1 Galerkin solution of `Δu = f` with Dirichlet value `u_∂` and Neumann
/// flux `∇u·n = v_∂`.
pub fn solve_poisson_fem(mesh: &Mesh, spec: &HeatProblemSpec) -> Result<FieldSolution, ReferenceError> {
    let n = mesh.n_nodes();
    let dirichlet = mesh.nodes_with_tag(BoundaryTag::Dirichlet);
    if dirichlet.is_empty() {
        return Err(ReferenceError::NoDirichlet);
    }
    let mut triplets = Vec::with_capacity(9 * mesh.n_elements());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let g = mesh.shape_gradients(e);
        let a = mesh.area(e);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], a * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
            }
        }
    }
    // Weak form of -Δu = -f: ∫∇u·∇v = -∫ f v + ∫ v_∂ v.
    let mut rhs = vec![0.0; n];
    let q = mesh.domain_quadrature(DomainRule::ThreePoint);
    for ((x, w), &e) in q.points.iter().zip(&q.weights).zip(&q.owner) {
        let f = spec.source.value(*x);
        if f == 0.0 {
            continue;
        }
        let bary = mesh.barycentric(e, *x);
        for (k, &node) in mesh.elements()[e].iter().enumerate() {
            rhs[node] -= w * f * bary[k];
        }
    }
    if spec.neumann_value != 0.0 {
        for edge in mesh.edges_with_tag(BoundaryTag::Neumann) {
            for &node in &edge.nodes {
                rhs[node] += 0.5 * edge.length * spec.neumann_value;
            }
        }
    }
    let mut fixed = vec![false; n];
    let mut fixed_values = vec![0.0; n];
    for &node in &dirichlet {
        fixed[node] = true;
        fixed_values[node] = spec.dirichlet_value;
    }
    let u = solve_constrained(n, &triplets, &rhs, &fixed, &fixed_values)?;
    FieldSolution::new(mesh.clone(), 1, u, SolutionMetadata::now("fem-p1-poisson", mesh))
}

/// Voigt strain-displacement rows of element `e`: `[ε_xx, ε_yy, γ_xy]` in
/// terms of dofs `(u_x, u_y)` of its three nodes.
fn b_matrix(mesh: &Mesh, e: usize) -> [[f64; 6]; 3] {
    let g = mesh.shape_gradients(e);
    let mut b = [[0.0; 6]; 3];
    for k in 0..3 {
        b[0][2 * k] = g[k][0];
        b[1][2 * k + 1] = g[k][1];
        b[2][2 * k] = g[k][1];
        b[2][2 * k + 1] = g[k][0];
    }
    b
}

fn voigt_d(spec: &ElasticityProblemSpec) -> [[f64; 3]; 3] {
    let (two_mu, lambda) = spec.lame();
    [
        [two_mu + lambda, lambda, 0.0],
        [lambda, two_mu + lambda, 0.0],
        [0.0, 0.0, 0.5 * two_mu],
    ]
}

/// P1 plane elasticity with traction on Neumann edges and the problem's
/// Dirichlet treatment; other boundary edges are traction free.
pub fn solve_elasticity_fem(
    mesh: &Mesh,
    spec: &ElasticityProblemSpec,
) -> Result<FieldSolution, ReferenceError> {
    let n = mesh.n_nodes();
    let dirichlet = mesh.nodes_with_tag(BoundaryTag::Dirichlet);
    if dirichlet.is_empty() {
        return Err(ReferenceError::NoDirichlet);
    }
    let d = voigt_d(spec);
    let mut triplets = Vec::with_capacity(36 * mesh.n_elements());
    for (e, tri) in mesh.elements().iter().enumerate() {
        let b = b_matrix(mesh, e);
        let a = mesh.area(e);
        let mut db = [[0.0; 6]; 3];
        for r in 0..3 {
            for c in 0..6 {
                db[r][c] = (0..3).map(|k| d[r][k] * b[k][c]).sum();
            }
        }
        for i in 0..6 {
            for j in 0..6 {
                let v: f64 = (0..3).map(|k| b[k][i] * db[k][j]).sum();
                triplets.push((2 * tri[i / 2] + i % 2, 2 * tri[j / 2] + j % 2, a * v));
            }
        }
    }
    let mut rhs = vec![0.0; 2 * n];
    for edge in mesh.edges_with_tag(BoundaryTag::Neumann) {
        for &node in &edge.nodes {
            for c in 0..2 {
                rhs[2 * node + c] += 0.5 * edge.length * spec.traction[c];
            }
        }
    }
    let mut fixed = vec![false; 2 * n];
    let mut fixed_values = vec![0.0; 2 * n];
    let ubc = spec.dirichlet_displacement;
    match spec.dirichlet_mode {
        DirichletMode::Clamped => {
            for &node in &dirichlet {
                for c in 0..2 {
                    fixed[2 * node + c] = true;
                    fixed_values[2 * node + c] = ubc[c];
                }
            }
        }
        DirichletMode::Roller => {
            for &node in &dirichlet {
                fixed[2 * node + 1] = true;
                fixed_values[2 * node + 1] = ubc[1];
            }
            let anchor = *dirichlet
                .iter()
                .min_by(|&&a, &&b| {
                    let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
                    pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1]))
                })
                .expect("non-empty");
            fixed[2 * anchor] = true;
            fixed_values[2 * anchor] = ubc[0];
        }
    }
    let u = solve_constrained(2 * n, &triplets, &rhs, &fixed, &fixed_values)?;
    FieldSolution::new(mesh.clone(), 2, u, SolutionMetadata::now("fem-p1-elasticity", mesh))
}

/// Constant stress of each element of a displacement solution.
pub fn element_stresses(solution: &FieldSolution, spec: &ElasticityProblemSpec) -> Vec<Tensor2> {
    let mesh = &solution.mesh;
    (0..mesh.n_elements())
        .map(|e| {
            let g = mesh.shape_gradients(e);
            let mut grad = [[0.0; 2]; 2];
            for (k, &node) in mesh.elements()[e].iter().enumerate() {
                let u = solution.node_value(node);
                for i in 0..2 {
                    for j in 0..2 {
                        grad[i][j] += u[i] * g[k][j];
                    }
                }
            }
            let off = 0.5 * (grad[0][1] + grad[1][0]);
            crate::problems::stress(spec, [[grad[0][0], off], [off, grad[1][1]]])
        })
        .collect()
}

/// Area-weighted average of element stresses around each node.
pub fn nodal_stresses(solution: &FieldSolution, spec: &ElasticityProblemSpec) -> Vec<Tensor2> {
    let mesh = &solution.mesh;
    let elem = element_stresses(solution, spec);
    let mut acc = vec![[[0.0; 2]; 2]; mesh.n_nodes()];
    let mut wsum = vec![0.0; mesh.n_nodes()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let a = mesh.area(e);
        for &node in tri {
            wsum[node] += a;
            for i in 0..2 {
                for j in 0..2 {
                    acc[node][i][j] += a * elem[e][i][j];
                }
            }
        }
    }
    for (s, w) in acc.iter_mut().zip(&wsum) {
        if *w > 0.0 {
            s.iter_mut().flatten().for_each(|v| *v /= w);
        }
    }
    acc
}

/// Analytic Poisson solution with its matching source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ManufacturedPoisson {
    /// `u* = sin(πx) sin(πy)` on the unit square.
    Sines,
}

pub fn manufactured_poisson(id: &str) -> Result<ManufacturedPoisson, ReferenceError> {
    match id {
        "sines" => Ok(ManufacturedPoisson::Sines),
        other => Err(ReferenceError::UnknownCase(other.to_string())),
    }
}

impl ManufacturedPoisson {
    pub fn u(&self, x: Point) -> f64 {
        let pi = std::f64::consts::PI;
        (pi * x[0]).sin() * (pi * x[1]).sin()
    }

    pub fn grad(&self, x: Point) -> Point {
        let pi = std::f64::consts::PI;
        [
            pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
            pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
        ]
    }

    pub fn f(&self, x: Point) -> f64 {
        HeatSource::Sines.value(x)
    }

    pub fn spec(&self) -> HeatProblemSpec {
        HeatProblemSpec::manufactured_sines()
    }
}

/// `(∫ (u_h - u)² dΩ)^½` for a scalar field, by 3-point quadrature.
pub fn l2_error(solution: &FieldSolution, exact: &dyn Fn(Point) -> f64) -> f64 {
    let q = solution.mesh.domain_quadrature(DomainRule::ThreePoint);
    q.points
        .iter()
        .zip(&q.weights)
        .map(|(&x, w)| w * (solution.evaluate(x)[0] - exact(x)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Pointwise RE of one component (or of the Euclidean norm) with summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentError {
    pub name: String,
    pub re: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    /// Root mean square of the pointwise RE.
    pub l2: f64,
}

impl ComponentError {
    fn from_values(name: String, re: Vec<f64>) -> Self {
        let n = re.len().max(1) as f64;
        ComponentError {
            max: re.iter().copied().fold(0.0, f64::max),
            mean: re.iter().sum::<f64>() / n,
            l2: (re.iter().map(|r| r * r).sum::<f64>() / n).sqrt(),
            name,
            re,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// What the evaluation points are, e.g. `grid:64x64`.
    pub points: String,
    pub components: Vec<ComponentError>,
    /// `|u - u*| / max|u*|` with Euclidean norms; only for vector fields.
    pub norm: Option<ComponentError>,
}

impl ErrorReport {
    /// The headline error: the norm variant for vectors, else the only
    /// component.
    pub fn primary(&self) -> &ComponentError {
        self.norm.as_ref().unwrap_or(&self.components[0])
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `RE = |u - u*| / max|u*|` at every point, per component and (for vector
/// fields) on the Euclidean norm.
pub fn relative_error(
    candidate: &[Vec<f64>],
    reference: &[Vec<f64>],
    points: &str,
) -> Result<ErrorReport, ReferenceError> {
    if candidate.len() != reference.len() {
        return Err(ReferenceError::LengthMismatch {
            expected: reference.len(),
            got: candidate.len(),
        });
    }
    let nc = reference.first().map_or(1, |r| r.len());
    let names = component_names(nc);
    let mut components = Vec::with_capacity(nc);
    for c in 0..nc {
        let scale = reference.iter().map(|r| r[c].abs()).fold(0.0, f64::max);
        if !(scale > 0.0) {
            return Err(ReferenceError::ZeroReference(c));
        }
        let re = candidate
            .iter()
            .zip(reference)
            .map(|(u, r)| (u[c] - r[c]).abs() / scale)
            .collect();
        components.push(ComponentError::from_values(names[c].clone(), re));
    }
    let norm = (nc > 1).then(|| {
        let scale = reference.iter().map(|r| norm(r)).fold(0.0, f64::max);
        let re = candidate
            .iter()
            .zip(reference)
            .map(|(u, r)| {
                let d: Vec<f64> = u.iter().zip(r).map(|(a, b)| a - b).collect();
                norm(&d) / scale
            })
            .collect();
        ComponentError::from_values("norm".into(), re)
    });
    Ok(ErrorReport {
        points: points.to_string(),
        components,
        norm,
    })
}

/// Discrete relative L2 error `‖u - u*‖ / ‖u*‖` over a point set.
pub fn relative_l2(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (u, r) in candidate.iter().zip(reference) {
        for (a, b) in u.iter().zip(r) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_domain, DomainKind, GeometryConfig};

    #[test]
    fn trivial_poisson_is_zero() {
        let mesh = generate_domain(&GeometryConfig::with_h(0.25), DomainKind::UnitSquare).unwrap();
        let spec = HeatProblemSpec {
            source: HeatSource::Disc {
                center: [0.5, 0.5],
                radius: 0.1,
                strength: 0.0,
                edge_width: 0.0,
            },
            ..Default::default()
        };
        let u = solve_poisson_fem(&mesh, &spec).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn manufactured_values() {
        let m = manufactured_poisson("sines").unwrap();
        assert!((m.u([0.5, 0.5]) - 1.0).abs() < 1e-15);
        let pi = std::f64::consts::PI;
        assert!((m.f([0.5, 0.5]) + 2.0 * pi * pi).abs() < 1e-12);
        assert!(m.u([0.0, 0.3]).abs() < 1e-15 && m.u([0.7, 1.0]).abs() < 1e-15);
        assert!(matches!(manufactured_poisson("cosines"), Err(ReferenceError::UnknownCase(_))));
    }

    #[test]
    fn relative_error_formula() {
        let r = vec![vec![1.0], vec![-2.0], vec![0.5]];
        let same = relative_error(&r, &r, "t").unwrap();
        assert!(same.components[0].re.iter().all(|&v| v == 0.0));
        let shifted: Vec<_> = r.iter().map(|v| vec![v[0] + 0.2]).collect();
        let e = relative_error(&shifted, &r, "t").unwrap();
        assert!(e.components[0].re.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let zero = vec![vec![0.0]; 3];
        let e = relative_error(&zero, &r, "t").unwrap();
        assert_eq!(e.components[0].re[1], 1.0);
        assert!(matches!(
            relative_error(&r, &zero, "t"),
            Err(ReferenceError::ZeroReference(0))
        ));
    }

    #[test]
    fn poisson_without_dirichlet_is_rejected() {
        let mesh = Mesh::from_json(r#"{"nodes":[[0,0],[1,0],[0,1]],"elements":[[0,1,2]]}"#).unwrap();
        assert!(matches!(
            solve_poisson_fem(&mesh, &HeatProblemSpec::default()),
            Err(ReferenceError::NoDirichlet)
        ));
    }
}
