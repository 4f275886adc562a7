//! The extra network input `z(x)`: the Fiedler vector of the mesh graph,
//! rescaled to `[-1, 1]` and extended over the domain by linear finite-element
//! interpolation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::graph::SpectralPair;
use crate::mesh::{Location, Mesh, Point};

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("spectral vector has {got} entries but the mesh has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("Fiedler vector is constant; cannot normalize")]
    ZeroRange,
}

/// How PDE derivatives treat the embedding coordinate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferentiationMode {
    /// Spatial derivatives hold `z` fixed.
    #[default]
    Frozen,
    /// Spatial derivatives include `du/dz * grad z` (the Hessian of the
    /// piecewise-linear `z` is zero inside elements and is dropped).
    ChainRule,
}

/// Affine map `z = scale * u + offset` applied to the raw Fiedler vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingField {
    mesh: Arc<Mesh>,
    node_values: Vec<f64>,
    normalization: Normalization,
    mode: DifferentiationMode,
    zero_gradients: bool,
}

/// Rescale `values` so the minimum maps to -1 and the maximum to +1 (both
/// attained exactly).
pub fn normalize_to_unit_range(values: &[f64]) -> Result<(Vec<f64>, Normalization), EmbeddingError> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut arg_lo, mut arg_hi) = (0, 0);
    for (i, &v) in values.iter().enumerate() {
        if v < lo {
            lo = v;
            arg_lo = i;
        }
        if v > hi {
            hi = v;
            arg_hi = i;
        }
    }
    if values.is_empty() || !(hi > lo) {
        return Err(EmbeddingError::ZeroRange);
    }
    let scale = 2.0 / (hi - lo);
    let offset = -1.0 - scale * lo;
    let mut out: Vec<f64> = values
        .iter()
        .map(|&v| (scale * v + offset).clamp(-1.0, 1.0))
        .collect();
    out[arg_lo] = -1.0;
    out[arg_hi] = 1.0;
    Ok((out, Normalization { scale, offset }))
}

impl EmbeddingField {
    pub fn build(
        mesh: Arc<Mesh>,
        spectral: &SpectralPair,
        mode: DifferentiationMode,
    ) -> Result<Self, EmbeddingError> {
        if spectral.fiedler.len() != mesh.n_nodes() {
            return Err(EmbeddingError::SizeMismatch {
                expected: mesh.n_nodes(),
                got: spectral.fiedler.len(),
            });
        }
        let (node_values, normalization) = normalize_to_unit_range(&spectral.fiedler)?;
        Ok(EmbeddingField {
            mesh,
            node_values,
            normalization,
            mode,
            zero_gradients: false,
        })
    }

    /// A field with explicit nodal values and the identity normalization.
    pub fn from_node_values(
        mesh: Arc<Mesh>,
        node_values: Vec<f64>,
        mode: DifferentiationMode,
    ) -> Result<Self, EmbeddingError> {
        if node_values.len() != mesh.n_nodes() {
            return Err(EmbeddingError::SizeMismatch {
                expected: mesh.n_nodes(),
                got: node_values.len(),
            });
        }
        Ok(EmbeddingField {
            mesh,
            node_values,
            normalization: Normalization {
                scale: 1.0,
                offset: 0.0,
            },
            mode,
            zero_gradients: false,
        })
    }

    pub fn with_mode(mut self, mode: DifferentiationMode) -> Self {
        self.mode = mode;
        self
    }

    /// Make [`EmbeddingField::grad_z`] return zero everywhere.
    pub fn with_zeroed_gradients(mut self) -> Self {
        self.zero_gradients = true;
        self
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn node_values(&self) -> &[f64] {
        &self.node_values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn mode(&self) -> DifferentiationMode {
        self.mode
    }

    /// Number of extra input dimensions. Only one eigenvector is used.
    pub fn d_z(&self) -> usize {
        1
    }

    pub fn eval_at(&self, loc: &Location) -> f64 {
        self.mesh.interpolate(&self.node_values, loc)
    }

    pub fn eval_z(&self, x: Point) -> f64 {
        self.eval_at(&self.mesh.locate_point(x))
    }

    /// Gradient of the linear interpolant on the element `loc` points into.
    pub fn grad_at(&self, loc: &Location) -> Point {
        if self.zero_gradients {
            return [0.0, 0.0];
        }
        let e = loc.element();
        let t = self.mesh.elements()[e];
        let g = self.mesh.shape_gradients(e);
        let mut out = [0.0, 0.0];
        for k in 0..3 {
            out[0] += self.node_values[t[k]] * g[k][0];
            out[1] += self.node_values[t[k]] * g[k][1];
        }
        out
    }

    pub fn grad_z(&self, x: Point) -> Point {
        self.grad_at(&self.mesh.locate_point(x))
    }

    /// Network input `[x1, x2, z(x)]`.
    pub fn augment(&self, x: Point) -> Vec<f64> {
        vec![x[0], x[1], self.eval_z(x)]
    }

    /// Row-per-point batch of augmented inputs.
    pub fn augment_batch(&self, xs: &[Point]) -> Vec<[f64; 3]> {
        xs.iter().map(|&x| [x[0], x[1], self.eval_z(x)]).collect()
    }

    /// Value and gradient of `z` at `x` from a single point location.
    pub fn value_and_grad(&self, x: Point) -> (f64, Point) {
        let loc = self.mesh.locate_point(x);
        (self.eval_at(&loc), self.grad_at(&loc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn triangle() -> Arc<Mesh> {
        Arc::new(
            Mesh::from_json(r#"{"nodes":[[0,0],[1,0],[0,1]],"elements":[[0,1,2]]}"#).unwrap(),
        )
    }

    #[test]
    fn path3_normalizes_to_unit_range() {
        let pair = Graph::path(3).fiedler(1e-12).unwrap().pair;
        let (z, _) = normalize_to_unit_range(&pair.fiedler).unwrap();
        assert_eq!(z[0], 1.0);
        assert!(z[1].abs() < 1e-12);
        assert_eq!(z[2], -1.0);
    }

    #[test]
    fn constant_vector_is_rejected() {
        let pair = SpectralPair {
            lambda2: 0.0,
            fiedler: vec![0.5; 3],
        };
        assert!(matches!(
            EmbeddingField::build(triangle(), &pair, DifferentiationMode::Frozen),
            Err(EmbeddingError::ZeroRange)
        ));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let pair = SpectralPair {
            lambda2: 1.0,
            fiedler: vec![1.0, 0.0],
        };
        assert!(matches!(
            EmbeddingField::build(triangle(), &pair, DifferentiationMode::Frozen),
            Err(EmbeddingError::SizeMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn gradients_of_shape_functions() {
        let f = EmbeddingField::from_node_values(triangle(), vec![0.0, 0.0, 1.0], Default::default())
            .unwrap();
        let g = f.grad_z([0.2, 0.2]);
        assert!((g[0]).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
        let f = EmbeddingField::from_node_values(triangle(), vec![0.0, 1.0, 0.0], Default::default())
            .unwrap();
        assert_eq!(f.grad_z([0.2, 0.2]), [1.0, 0.0]);
        let f = EmbeddingField::from_node_values(triangle(), vec![0.7; 3], Default::default())
            .unwrap();
        assert_eq!(f.grad_z([0.2, 0.2]), [0.0, 0.0]);
    }

    #[test]
    fn node_and_centroid_values() {
        let f = EmbeddingField::from_node_values(triangle(), vec![0.3, -0.6, 0.9], Default::default())
            .unwrap();
        assert_eq!(f.eval_z([1.0, 0.0]), -0.6);
        assert!((f.eval_z([1.0 / 3.0, 1.0 / 3.0]) - 0.2).abs() < 1e-15);
        assert_eq!(f.augment([0.0, 1.0]), vec![0.0, 1.0, 0.9]);
    }
}
