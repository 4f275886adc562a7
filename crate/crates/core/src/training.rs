//! End-to-end experiments: mesh, cached embedding, batches, optimization,
//! run-directory artifacts, and PINN-versus-GPINN comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{DifferentiationMode, EmbeddingField};
use crate::geometry::{generate_domain, DomainKind, GeometryConfig};
use crate::graph::{Graph, SpectralPair, DEFAULT_TOL};
use crate::loss::{LossBreakdown, LossWeights};
use crate::mesh::{Mesh, Point};
use crate::nn::Network;
use crate::optim::{optimize, AdamConfig, HistoryRow, LbfgsConfig, LossProvider, OptimizerConfig};
use crate::problems::{
    energy_loss_and_gradient, heat_loss_and_gradient, predict, predict_stress, sample_batch,
    ElasticityProblemSpec, HeatProblemSpec, HeatSource, PreparedBatch, SampleCounts,
    SamplingStrategy, Tensor2,
};
use crate::reference::{
    component_names, relative_error, solve_elasticity_fem, solve_poisson_fem, ErrorReport,
    FieldSolution, SolutionMetadata,
};
use crate::{Error, Result};

pub const CACHE_ENV: &str = "GPINN_CACHE_DIR";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    Heat,
    Elasticity,
}

impl ProblemKind {
    pub fn n_outputs(self) -> usize {
        match self {
            ProblemKind::Heat => 1,
            ProblemKind::Elasticity => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    #[default]
    Pinn,
    Gpinn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![32, 32, 32],
        }
    }
}

/// Adam for `adam_iterations`, then L-BFGS on the last batch for
/// `lbfgs_iterations` (0 skips it).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub adam: AdamConfig,
    pub adam_iterations: usize,
    pub lbfgs: LbfgsConfig,
    pub lbfgs_iterations: usize,
    /// Stop a phase when the best loss improves by less than this over 100
    /// iterations; 0 disables the check.
    pub tol: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            adam: AdamConfig::default(),
            adam_iterations: 20_000,
            lbfgs: LbfgsConfig::default(),
            lbfgs_iterations: 2_000,
            tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    pub counts: SampleCounts,
    /// Draw a fresh batch every this many Adam iterations (0: never).
    pub resample_every: usize,
    pub strategy: SamplingStrategy,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            counts: SampleCounts::default(),
            resample_every: 500,
            strategy: SamplingStrategy::UniformRandom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemKind,
    pub mode: ModelMode,
    pub domain: DomainKind,
    pub geometry: GeometryConfig,
    pub heat: HeatProblemSpec,
    pub elasticity: ElasticityProblemSpec,
    pub network: NetworkConfig,
    /// Master seed; see [`derive_seed`].
    pub seed: u64,
    pub optimizer: ScheduleConfig,
    pub batch: BatchConfig,
    pub weights: LossWeights,
    pub differentiation_mode: DifferentiationMode,
    /// Run directory; nothing is written when absent.
    pub output_dir: Option<PathBuf>,
    /// Embedding cache location; falls back to `GPINN_CACHE_DIR`, then to a
    /// directory under the system temp dir.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            problem: ProblemKind::Heat,
            mode: ModelMode::Pinn,
            domain: DomainKind::House,
            geometry: GeometryConfig::default(),
            heat: HeatProblemSpec::default(),
            elasticity: ElasticityProblemSpec::default(),
            network: NetworkConfig::default(),
            seed: 0,
            optimizer: ScheduleConfig::default(),
            batch: BatchConfig::default(),
            weights: LossWeights::default(),
            differentiation_mode: DifferentiationMode::Frozen,
            output_dir: None,
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
            return bad("network needs at least one non-empty hidden layer");
        }
        let c = self.batch.counts;
        if self.batch.strategy == SamplingStrategy::UniformRandom && c.interior == 0 {
            return bad("at least one interior point is required");
        }
        match self.problem {
            ProblemKind::Heat => {
                if self.batch.strategy == SamplingStrategy::Quadrature {
                    return bad("the heat problem samples collocation points at random");
                }
                if c.dirichlet == 0 {
                    return bad("the heat problem needs dirichlet points");
                }
                if c.data > 0 && self.heat.source != HeatSource::Sines {
                    return bad("data points need an analytic target (sines source)");
                }
            }
            ProblemKind::Elasticity => {
                self.elasticity.validate()?;
                if c.neumann == 0 {
                    return bad("the elasticity problem needs traction points");
                }
                if c.data > 0 {
                    return bad("the elasticity problem has no analytic data target");
                }
            }
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        match self.mode {
            ModelMode::Pinn => 2,
            ModelMode::Gpinn => 3,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_inputs()];
        s.extend(&self.network.hidden);
        s.push(self.problem.n_outputs());
        s
    }

    /// Cache directory: the config's, else [`CACHE_ENV`], else the temp dir.
    pub fn resolved_cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(default_cache_dir)
    }

    /// Manufactured Poisson problem `u* = sin(πx) sin(πy)` on the unit square.
    pub fn manufactured_poisson() -> Self {
        ExperimentConfig {
            name: "manufactured-pinn".into(),
            domain: DomainKind::UnitSquare,
            heat: HeatProblemSpec::manufactured_sines(),
            network: NetworkConfig {
                hidden: vec![24, 24, 24],
            },
            optimizer: ScheduleConfig {
                adam: AdamConfig {
                    lr: 2e-3,
                    ..Default::default()
                },
                adam_iterations: 3_000,
                lbfgs_iterations: 1_000,
                ..Default::default()
            },
            batch: BatchConfig {
                counts: SampleCounts {
                    interior: 512,
                    data: 0,
                    dirichlet: 256,
                    neumann: 0,
                },
                resample_every: 500,
                strategy: SamplingStrategy::UniformRandom,
            },
            ..Default::default()
        }
    }

    /// Heat conduction in the two-room house.
    pub fn house(mode: ModelMode) -> Self {
        ExperimentConfig {
            name: format!("house-{}", mode_name(mode)),
            mode,
            domain: DomainKind::House,
            network: NetworkConfig {
                hidden: vec![32, 32, 32],
            },
            optimizer: ScheduleConfig {
                adam: AdamConfig {
                    lr: 2e-3,
                    ..Default::default()
                },
                adam_iterations: 5_000,
                lbfgs_iterations: 15_000,
                ..Default::default()
            },
            batch: BatchConfig {
                counts: SampleCounts {
                    interior: 1024,
                    data: 0,
                    dirichlet: 128,
                    neumann: 512,
                },
                resample_every: 500,
                strategy: SamplingStrategy::UniformRandom,
            },
            // At unit weight the short Dirichlet window barely pins the
            // field against the PDE term.
            weights: LossWeights {
                bc: 100.0,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Uniform tension of the uncracked plate on rollers.
    pub fn patch_test(mode: ModelMode) -> Self {
        let mut c = Self::elasticity(mode, DomainKind::Plate);
        c.name = format!("patch-{}", mode_name(mode));
        c.elasticity.dirichlet_mode = crate::problems::DirichletMode::Roller;
        c
    }

    /// Tension of the single-edge-cracked plate clamped at the bottom.
    pub fn crack(mode: ModelMode) -> Self {
        let mut c = Self::elasticity(mode, DomainKind::CrackPlate);
        c.name = format!("crack-{}", mode_name(mode));
        c
    }

    fn elasticity(mode: ModelMode, domain: DomainKind) -> Self {
        ExperimentConfig {
            problem: ProblemKind::Elasticity,
            mode,
            domain,
            network: NetworkConfig {
                hidden: vec![32, 32, 32],
            },
            optimizer: ScheduleConfig {
                adam: AdamConfig {
                    lr: 2e-3,
                    ..Default::default()
                },
                adam_iterations: 3_000,
                lbfgs_iterations: 2_000,
                ..Default::default()
            },
            batch: BatchConfig {
                counts: SampleCounts {
                    interior: 1,
                    data: 0,
                    dirichlet: 1,
                    neumann: 1,
                },
                resample_every: 0,
                strategy: SamplingStrategy::Quadrature,
            },
            weights: LossWeights {
                bc: 100.0,
                ..Default::default()
            },
            // With z frozen, any g(z) adds traction work but no strain energy,
            // so the energy loss is unbounded below.
            differentiation_mode: DifferentiationMode::ChainRule,
            ..Default::default()
        }
    }
}

fn mode_name(mode: ModelMode) -> &'static str {
    match mode {
        ModelMode::Pinn => "pinn",
        ModelMode::Gpinn => "gpinn",
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-purpose seed: stream 0 initializes the network, stream `1 + k` draws
/// the `k`-th collocation batch.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream))
}

pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gpinn-cache"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CachedSpectrum {
    pub mesh_hash: String,
    pub lambda3: f64,
    pub degenerate: bool,
    pub pair: SpectralPair,
}

/// The Fiedler pair of the mesh graph, read from `<dir>/<mesh hash>.json` when
/// present. The flag reports a cache hit.
pub fn cached_fiedler(mesh: &Mesh, dir: &Path) -> Result<(CachedSpectrum, bool)> {
    let hash = mesh.content_hash();
    let path = dir.join(format!("{hash}.json"));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(c) = serde_json::from_str::<CachedSpectrum>(&text) {
            if c.mesh_hash == hash && c.pair.fiedler.len() == mesh.n_nodes() {
                log::info!("embedding cache hit: {}", path.display());
                return Ok((c, true));
            }
        }
    }
    let outcome = Graph::from_mesh(mesh).fiedler(DEFAULT_TOL)?;
    let cached = CachedSpectrum {
        mesh_hash: hash,
        lambda3: outcome.lambda3,
        degenerate: outcome.degenerate,
        pair: outcome.pair,
    };
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!("{}.tmp{}", cached.mesh_hash, std::process::id()));
    std::fs::write(&tmp, serde_json::to_string(&cached)?)?;
    std::fs::rename(&tmp, &path)?;
    log::info!("embedding computed and cached: {}", path.display());
    Ok((cached, false))
}

/// A network together with everything needed to evaluate it in space.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ExperimentConfig,
    pub mesh: Arc<Mesh>,
    pub network: Network,
    pub field: Option<EmbeddingField>,
}

impl TrainedModel {
    pub fn components(&self) -> usize {
        self.config.problem.n_outputs()
    }

    pub fn predict(&self, points: &[Point]) -> Vec<Vec<f64>> {
        predict(&self.network, self.field.as_ref(), points)
    }

    pub fn predict_stress(&self, points: &[Point]) -> Vec<Tensor2> {
        predict_stress(&self.network, self.field.as_ref(), &self.config.elasticity, points)
    }

    /// Embedding coordinate at `points`, when the model has one.
    pub fn z(&self, points: &[Point]) -> Option<Vec<f64>> {
        self.field
            .as_ref()
            .map(|f| points.iter().map(|&x| f.eval_z(x)).collect())
    }

    /// Load a run directory written by [`run_experiment`].
    pub fn load(run_dir: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(&run_dir.join("config.json"))?;
        let mesh = Arc::new(Mesh::from_json(&read_text(&run_dir.join("mesh.json"))?)?);
        let network = Network::from_json(&read_text(&run_dir.join("checkpoint.json"))?)?;
        let field = match config.mode {
            ModelMode::Pinn => None,
            ModelMode::Gpinn => {
                let values: Vec<f64> =
                    serde_json::from_str(&read_text(&run_dir.join("embedding.json"))?)?;
                Some(EmbeddingField::from_node_values(
                    mesh.clone(),
                    values,
                    config.differentiation_mode,
                )?)
            }
        };
        Ok(TrainedModel {
            config,
            mesh,
            network,
            field,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Adam,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: LossBreakdown,
}

pub fn history_csv(history: &[TrainingRecord]) -> String {
    let mut out = String::from("iteration,phase,total,pde,data,ic,bc\n");
    for r in history {
        let phase = match r.phase {
            Phase::Adam => "adam",
            Phase::Lbfgs => "lbfgs",
        };
        let l = r.loss;
        writeln!(out, "{},{phase},{},{},{},{},{}", r.iteration, l.total, l.pde, l.data, l.ic, l.bc).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub history: Vec<TrainingRecord>,
    /// Files written to the run directory (empty without one).
    pub checkpoint_paths: Vec<PathBuf>,
    pub embedding_cache_hit: bool,
}

struct Trainer<'a> {
    config: &'a ExperimentConfig,
    mesh: &'a Mesh,
    field: Option<&'a EmbeddingField>,
    net: Network,
    prepared: Option<PreparedBatch>,
    epoch: Option<u64>,
    frozen: bool,
}

impl Trainer<'_> {
    fn resample(&mut self, epoch: u64) -> Result<()> {
        let cfg = self.config;
        let target = |x: Point| vec![crate::reference::ManufacturedPoisson::Sines.u(x)];
        let target_ref: Option<&dyn Fn(Point) -> Vec<f64>> =
            (cfg.batch.counts.data > 0).then_some(&target as &dyn Fn(Point) -> Vec<f64>);
        let batch = sample_batch(
            self.mesh,
            cfg.batch.counts,
            derive_seed(cfg.seed, 1 + epoch),
            cfg.batch.strategy,
            target_ref,
        )?;
        self.prepared = Some(PreparedBatch::new(batch, self.field));
        self.epoch = Some(epoch);
        Ok(())
    }
}

impl LossProvider for Trainer<'_> {
    fn evaluate(&mut self, params: &[f64], iteration: usize) -> Result<(LossBreakdown, Vec<f64>)> {
        let every = self.config.batch.resample_every as u64;
        let epoch = if every == 0 || self.config.batch.strategy == SamplingStrategy::Quadrature {
            0
        } else {
            iteration as u64 / every
        };
        if self.prepared.is_none() || (!self.frozen && self.epoch != Some(epoch)) {
            self.resample(epoch)?;
        }
        self.net.set_parameters(params);
        let prep = self.prepared.as_ref().expect("batch prepared");
        let out = match self.config.problem {
            ProblemKind::Heat => {
                heat_loss_and_gradient(&self.net, prep, &self.config.heat, self.config.weights)?
            }
            ProblemKind::Elasticity => {
                energy_loss_and_gradient(&self.net, prep, &self.config.elasticity, self.config.weights)?
            }
        };
        Ok(out)
    }
}

fn tag_rows(rows: Vec<HistoryRow>, phase: Phase) -> impl Iterator<Item = TrainingRecord> {
    rows.into_iter().map(move |r| TrainingRecord {
        phase,
        iteration: r.iteration,
        loss: r.loss,
    })
}

fn write_file(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

/// Train one model as configured. Deterministic for a given config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mesh = Arc::new(generate_domain(&config.geometry, config.domain)?);
    let (field, cache_hit) = match config.mode {
        ModelMode::Pinn => (None, false),
        ModelMode::Gpinn => {
            let (spec, hit) = cached_fiedler(&mesh, &config.resolved_cache_dir())?;
            let f = EmbeddingField::build(mesh.clone(), &spec.pair, config.differentiation_mode)?;
            (Some(f), hit)
        }
    };
    let net = Network::new(&config.layer_sizes(), derive_seed(config.seed, 0))?;

    let mut trainer = Trainer {
        config,
        mesh: &mesh,
        field: field.as_ref(),
        net: net.clone(),
        prepared: None,
        epoch: None,
        frozen: false,
    };
    let mut net = net;
    let sched = config.optimizer;
    let mut history = Vec::new();

    let mut written = Vec::new();
    let run_dir = config.output_dir.clone();
    if let Some(dir) = &run_dir {
        std::fs::create_dir_all(dir.join("fields"))?;
        write_file(dir.join("config.json"), &config.to_json(), &mut written)?;
        write_file(dir.join("mesh.json"), &mesh.to_json(), &mut written)?;
        if let Some(f) = &field {
            write_file(
                dir.join("embedding.json"),
                &serde_json::to_string(f.node_values())?,
                &mut written,
            )?;
        }
    }

    let adam = optimize(
        &mut net,
        &mut trainer,
        &OptimizerConfig::Adam(sched.adam),
        sched.adam_iterations,
        sched.tol,
        0,
    )?;
    let next = adam.last().map_or(0, |r| r.iteration + 1);
    history.extend(tag_rows(adam, Phase::Adam));
    if let Some(dir) = &run_dir {
        write_file(dir.join("checkpoint_adam.json"), &net.to_json(), &mut written)?;
    }
    if sched.lbfgs_iterations > 0 {
        trainer.frozen = true;
        let rows = optimize(
            &mut net,
            &mut trainer,
            &OptimizerConfig::Lbfgs(sched.lbfgs),
            sched.lbfgs_iterations,
            sched.tol,
            next,
        )?;
        history.extend(tag_rows(rows, Phase::Lbfgs));
    }
    if let Some(dir) = &run_dir {
        write_file(dir.join("checkpoint.json"), &net.to_json(), &mut written)?;
        write_file(dir.join("history.csv"), &history_csv(&history), &mut written)?;
        let values = predict(&net, field.as_ref(), mesh.nodes()).concat();
        let metadata = SolutionMetadata {
            solver: mode_name(config.mode).into(),
            h: config.geometry.h,
            timestamp: 0,
        };
        let prediction =
            FieldSolution::new((*mesh).clone(), config.problem.n_outputs(), values, metadata)?;
        write_file(dir.join("fields").join("prediction.csv"), &prediction.to_csv(), &mut written)?;
    }
    log::info!(
        "{}: {} iterations, final loss {:e}",
        config.name,
        history.len(),
        history.last().map_or(f64::NAN, |r| r.loss.total)
    );

    Ok(RunOutcome {
        model: TrainedModel {
            config: config.clone(),
            mesh,
            network: net,
            field,
        },
        history,
        checkpoint_paths: written,
        embedding_cache_hit: cache_hit,
    })
}

/// Element size of the built-in FEM reference (a 256 x 256 grid equivalent).
pub const REFERENCE_H: f64 = 1.0 / 256.0;

/// FEM solution of the configured problem on the same geometry meshed at `h`.
pub fn reference_solution(config: &ExperimentConfig, h: f64) -> Result<FieldSolution> {
    let geometry = GeometryConfig {
        h,
        ..config.geometry.clone()
    };
    let mesh = generate_domain(&geometry, config.domain)?;
    Ok(match config.problem {
        ProblemKind::Heat => solve_poisson_fem(&mesh, &config.heat)?,
        ProblemKind::Elasticity => solve_elasticity_fem(&mesh, &config.elasticity)?,
    })
}

/// `n x n` grid over the mesh bounding box, keeping points inside the mesh.
pub fn grid_points_inside(mesh: &Mesh, n: usize) -> Vec<Point> {
    grid_points(mesh, n, n)
        .into_iter()
        .filter(|&x| !mesh.locate_point(x).is_extrapolated())
        .collect()
}

/// Regular `nx x ny` grid spanning the mesh bounding box, row by row.
pub fn grid_points(mesh: &Mesh, nx: usize, ny: usize) -> Vec<Point> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in mesh.nodes() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let coord = |k: usize, i: usize, n: usize| {
        if n <= 1 {
            0.5 * (lo[k] + hi[k])
        } else {
            lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            out.push([coord(0, i, nx), coord(1, j, ny)]);
        }
    }
    out
}

/// Side-by-side relative errors of two models against one reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub points: Vec<Point>,
    pub a: ErrorReport,
    pub b: ErrorReport,
    /// `RE_a - RE_b` per point (norm variant for vector fields).
    pub difference: Vec<f64>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,re_a,re_b,difference\n");
        let (ra, rb) = (&self.a.primary().re, &self.b.primary().re);
        for (i, p) in self.points.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", p[0], p[1], ra[i], rb[i], self.difference[i]).unwrap();
        }
        out
    }
}

pub fn evaluate_model(
    model: &TrainedModel,
    reference: &FieldSolution,
    points: &[Point],
    descriptor: &str,
) -> Result<ErrorReport> {
    if model.components() != reference.components {
        return Err(Error::Config(format!(
            "model has {} components but the reference has {}",
            model.components(),
            reference.components
        )));
    }
    let truth = reference.evaluate_many(points);
    Ok(relative_error(&model.predict(points), &truth, descriptor)?)
}

pub fn compare_runs(
    a: &TrainedModel,
    b: &TrainedModel,
    reference: &FieldSolution,
    points: &[Point],
    descriptor: &str,
) -> Result<Comparison> {
    if a.config.problem != b.config.problem {
        return Err(Error::Config("runs solve different problems".into()));
    }
    let ra = evaluate_model(a, reference, points, descriptor)?;
    let rb = evaluate_model(b, reference, points, descriptor)?;
    let difference = ra
        .primary()
        .re
        .iter()
        .zip(&rb.primary().re)
        .map(|(x, y)| x - y)
        .collect();
    Ok(Comparison {
        points: points.to_vec(),
        a: ra,
        b: rb,
        difference,
    })
}

/// Column names of a grid export for a model.
pub fn export_columns(model: &TrainedModel) -> Vec<String> {
    let mut cols = vec!["x".to_string(), "y".to_string()];
    cols.extend(component_names(model.components()));
    if model.field.is_some() {
        cols.push("z".into());
    }
    cols
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_stream() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }

    #[test]
    fn config_round_trips_with_defaults() {
        let c = ExperimentConfig::crack(ModelMode::Gpinn);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let sparse: ExperimentConfig = serde_json::from_str(r#"{"mode":"gpinn"}"#).unwrap();
        assert_eq!(sparse.mode, ModelMode::Gpinn);
        assert_eq!(sparse.batch.counts.interior, 4096);
    }

    #[test]
    fn heat_without_dirichlet_points_is_rejected() {
        let mut c = ExperimentConfig::house(ModelMode::Pinn);
        c.batch.counts.dirichlet = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
