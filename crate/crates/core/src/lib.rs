//! Physics-informed neural networks whose inputs are augmented with the
//! Fiedler vector of the mesh graph, plus the mesh, spectral, reference-solver
//! and training machinery around them.

pub mod embedding;
pub mod geometry;
pub mod graph;
pub mod loss;
pub mod mesh;
pub mod nn;
pub mod optim;
pub mod problems;
pub mod reference;
pub mod sparse;
pub mod training;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Problem(#[from] problems::ProblemError),
    #[error(transparent)]
    Reference(#[from] reference::ReferenceError),
    #[error("non-finite loss at iteration {iteration} (pde {pde:e}, data {data:e}, bc {bc:e})")]
    NonFiniteLoss {
        iteration: usize,
        pde: f64,
        data: f64,
        bc: f64,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
