//! `gpinn` command-line driver: mesh generation, Fiedler embeddings, training,
//! evaluation against reference fields, and grid exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpinn::geometry::{generate_domain, DomainKind, GeometryConfig};
use gpinn::graph::{Graph, GraphError, DEFAULT_TOL};
use gpinn::mesh::{Mesh, MeshFormat, Point};
use gpinn::reference::{
    component_names, ErrorReport, FieldSolution, ReferenceError, SolutionMetadata,
};
use gpinn::training::{
    compare_runs, evaluate_model, export_columns, grid_points, grid_points_inside,
    reference_solution, run_experiment, ExperimentConfig, ModelMode, TrainedModel, REFERENCE_H,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    User(String),
    #[error(transparent)]
    Lib(#[from] gpinn::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use gpinn::Error as E;
        match self {
            CliError::Lib(
                E::NonFiniteLoss { .. }
                | E::Graph(GraphError::NoConvergence { .. })
                | E::Reference(ReferenceError::NotConverged { .. }),
            ) => 2,
            _ => 1,
        }
    }
}

impl From<gpinn::mesh::MeshError> for CliError {
    fn from(e: gpinn::mesh::MeshError) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<ReferenceError> for CliError {
    fn from(e: ReferenceError) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "gpinn", version, about = "Physics-informed networks with a Fiedler-vector input")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a built-in triangular mesh.
    MeshGen(MeshGenArgs),
    /// Compute the Fiedler pair of a mesh graph.
    Embed(EmbedArgs),
    /// Train a PINN or GPINN and write a run directory.
    Train(TrainArgs),
    /// Relative errors of a run against a reference field.
    Evaluate(EvaluateArgs),
    /// Sample a run or a stored field on a grid (or at mesh nodes) as CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct MeshGenArgs {
    /// house, crack_plate, plate or unit_square.
    #[arg(long)]
    kind: DomainKind,
    /// Target element size.
    #[arg(long)]
    h: f64,
    #[arg(long)]
    out: PathBuf,
    /// JSON geometry overrides (any subset of the geometry config).
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, value_parser = parse_point)]
    source_center: Option<Point>,
    #[arg(long)]
    source_radius: Option<f64>,
    #[arg(long)]
    wall_thickness: Option<f64>,
    #[arg(long, value_parser = parse_point)]
    crack_tip: Option<Point>,
}

#[derive(Args)]
struct EmbedArgs {
    /// Mesh file (native JSON, or Gmsh v2 ASCII for `.msh`).
    #[arg(long)]
    mesh: PathBuf,
    /// Eigenpair residual tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    /// Output JSON `{lambda2, fiedler}`; printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the normalized field `{node_values, normalization}`.
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config JSON.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment: manufactured, house, patch or crack.
    #[arg(long)]
    preset: Option<String>,
    /// Model for presets.
    #[arg(long, default_value = "gpinn", value_parser = parse_mode)]
    mode: ModelMode,
    /// Run directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Reference field (JSON, or CSV with `--reference-mesh`), or `fem` /
    /// `fem:<h>` to solve the built-in FEM reference for the run's config.
    #[arg(long, default_value = "fem")]
    reference: String,
    #[arg(long)]
    reference_mesh: Option<PathBuf>,
    /// Save the reference field used (JSON or CSV by extension).
    #[arg(long)]
    save_reference: Option<PathBuf>,
    /// `grid:NxN` (points inside the mesh) or `file:<path>` (x,y rows).
    #[arg(long, default_value = "grid:256x256")]
    points: String,
    /// Second run to compare against on the same points.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Report JSON; defaults to `<run>/fields/evaluation.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory to sample.
    #[arg(long, conflicts_with = "solution", required_unless_present = "solution")]
    run: Option<PathBuf>,
    /// Stored field to sample.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Mesh for a CSV `--solution`.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Regular grid `NxM` over the mesh bounding box.
    #[arg(long, value_parser = parse_grid, conflicts_with = "nodes", required_unless_present = "nodes")]
    grid: Option<(usize, usize)>,
    /// Write the nodal field instead (JSON or CSV by `--out` extension).
    #[arg(long)]
    nodes: bool,
    /// Output path; CSV is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [x, y] => Ok([
            x.trim().parse().map_err(|_| format!("bad coordinate '{x}'"))?,
            y.trim().parse().map_err(|_| format!("bad coordinate '{y}'"))?,
        ]),
        _ => Err(format!("expected 'x,y', got '{s}'")),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected 'NxM', got '{s}'"))?;
    let n: usize = a.parse().map_err(|_| format!("bad grid size '{a}'"))?;
    let m: usize = b.parse().map_err(|_| format!("bad grid size '{b}'"))?;
    if n == 0 || m == 0 {
        return Err("grid sizes must be positive".into());
    }
    Ok((n, m))
}

fn parse_mode(s: &str) -> Result<ModelMode, String> {
    match s {
        "pinn" => Ok(ModelMode::Pinn),
        "gpinn" => Ok(ModelMode::Gpinn),
        _ => Err(format!("unknown mode '{s}' (pinn or gpinn)")),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            gpinn::Error::NotFound(path.display().to_string()).into()
        } else {
            e.into()
        }
    })
}

fn write_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn mesh_gen(args: MeshGenArgs) -> CliResult<()> {
    let mut geometry: GeometryConfig = match &args.geometry {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => GeometryConfig::default(),
    };
    geometry.h = args.h;
    if let Some(c) = args.source_center {
        geometry.house.source_center = c;
    }
    if let Some(r) = args.source_radius {
        geometry.house.source_radius = r;
    }
    if let Some(t) = args.wall_thickness {
        geometry.house.wall_thickness = t;
    }
    if let Some(t) = args.crack_tip {
        geometry.plate.crack_tip = t;
    }
    let mesh = generate_domain(&geometry, args.kind)?;
    write_output(Some(&args.out), &mesh.to_json())?;
    println!(
        "{} nodes, {} elements, {} boundary edges",
        mesh.n_nodes(),
        mesh.n_elements(),
        mesh.boundary().len()
    );
    Ok(())
}

fn load_mesh(path: &Path) -> CliResult<Mesh> {
    Ok(Mesh::load(path, MeshFormat::from_path(path))?)
}

fn embed(args: EmbedArgs) -> CliResult<()> {
    if !(args.tol > 0.0) {
        return Err(CliError::User("--tol must be positive".into()));
    }
    let mesh = load_mesh(&args.mesh)?;
    let outcome = Graph::from_mesh(&mesh).fiedler(args.tol)?;
    if outcome.degenerate {
        log::warn!(
            "near-degenerate spectrum (lambda2 {:e}, lambda3 {:e}); the embedding is not unique",
            outcome.pair.lambda2,
            outcome.lambda3
        );
    }
    let doc = serde_json::json!({
        "lambda2": outcome.pair.lambda2,
        "fiedler": outcome.pair.fiedler,
    });
    write_output(args.out.as_deref(), &(serde_json::to_string(&doc)? + "\n"))?;
    if let Some(path) = &args.field {
        let (values, normalization) =
            gpinn::embedding::normalize_to_unit_range(&outcome.pair.fiedler)
                .map_err(gpinn::Error::from)?;
        let doc = serde_json::json!({ "node_values": values, "normalization": normalization });
        write_output(Some(path), &serde_json::to_string(&doc)?)?;
    }
    eprintln!(
        "lambda2 = {:e} after {} iterations",
        outcome.pair.lambda2, outcome.iterations
    );
    Ok(())
}

fn preset(name: &str, mode: ModelMode) -> CliResult<ExperimentConfig> {
    Ok(match name {
        "manufactured" => ExperimentConfig::manufactured_poisson(),
        "house" => ExperimentConfig::house(mode),
        "patch" => ExperimentConfig::patch_test(mode),
        "crack" => ExperimentConfig::crack(mode),
        other => {
            return Err(CliError::User(format!(
                "unknown preset '{other}' (manufactured, house, patch, crack)"
            )))
        }
    })
}

fn train(args: TrainArgs) -> CliResult<()> {
    let mut config = match (&args.config, &args.preset) {
        (Some(p), _) => ExperimentConfig::from_json(&read_text(p)?)?,
        (None, Some(name)) => preset(name, args.mode)?,
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.cache_dir.is_some() {
        config.cache_dir = args.cache_dir;
    }
    let Some(dir) = config.output_dir.clone() else {
        return Err(CliError::User(
            "no run directory: pass --out or set output_dir in the config".into(),
        ));
    };
    let outcome = run_experiment(&config)?;
    let last = outcome.history.last().map(|r| r.loss);
    println!("run {} ({:?}, {:?})", config.name, config.problem, config.mode);
    if let Some(l) = last {
        println!(
            "final loss {:e} (pde {:e}, data {:e}, bc {:e}) after {} records",
            l.total,
            l.pde,
            l.data,
            l.bc,
            outcome.history.len()
        );
    }
    if config.mode == ModelMode::Gpinn {
        println!(
            "embedding {}",
            if outcome.embedding_cache_hit { "cache hit" } else { "computed" }
        );
    }
    println!("run directory {}", dir.display());
    Ok(())
}

fn load_reference(spec: &str, mesh: Option<&Path>, config: &ExperimentConfig) -> CliResult<FieldSolution> {
    if spec == "fem" || spec.starts_with("fem:") {
        let h = match spec.strip_prefix("fem:") {
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|h| *h > 0.0)
                .ok_or_else(|| CliError::User(format!("bad reference element size '{v}'")))?,
            None => REFERENCE_H,
        };
        return Ok(reference_solution(config, h)?);
    }
    load_solution(Path::new(spec), mesh)
}

fn load_solution(path: &Path, mesh: Option<&Path>) -> CliResult<FieldSolution> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let mesh_path = mesh
            .ok_or_else(|| CliError::User("a CSV field needs its mesh (--mesh or --reference-mesh)".into()))?;
        let mesh = load_mesh(mesh_path)?;
        let metadata = SolutionMetadata::now("import", &mesh);
        return Ok(FieldSolution::from_csv(&read_text(path)?, mesh, metadata)?);
    }
    Ok(FieldSolution::from_json(&read_text(path)?)?)
}

fn evaluation_points(spec: &str, mesh: &Mesh) -> CliResult<Vec<Point>> {
    if let Some(g) = spec.strip_prefix("grid:") {
        let (n, m) = parse_grid(g).map_err(CliError::User)?;
        if n != m {
            return Err(CliError::User("evaluation grids are square (grid:NxN)".into()));
        }
        return Ok(grid_points_inside(mesh, n));
    }
    if let Some(p) = spec.strip_prefix("file:") {
        let text = read_text(Path::new(p))?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match parse_point(line) {
                Ok(x) => points.push(x),
                Err(_) if i == 0 => {} // header
                Err(e) => return Err(CliError::User(format!("{p}:{}: {e}", i + 1))),
            }
        }
        if points.is_empty() {
            return Err(CliError::User(format!("{p}: no points")));
        }
        return Ok(points);
    }
    Err(CliError::User(format!(
        "unknown point set '{spec}' (grid:NxN or file:<path>)"
    )))
}

fn summarize(label: &str, report: &ErrorReport) -> String {
    let mut s = String::new();
    for c in report.components.iter().chain(report.norm.as_ref()) {
        writeln!(
            s,
            "{label} {:>5}: mean RE {:.4e}  max RE {:.4e}  rms RE {:.4e}",
            c.name, c.mean, c.max, c.l2
        )
        .unwrap();
    }
    s
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let model = TrainedModel::load(&args.run)?;
    let reference = load_reference(&args.reference, args.reference_mesh.as_deref(), &model.config)?;
    if let Some(p) = &args.save_reference {
        reference.save(p)?;
    }
    let points = evaluation_points(&args.points, &model.mesh)?;
    let fields = args.run.join("fields");
    std::fs::create_dir_all(&fields)?;
    let out = args.out.unwrap_or_else(|| fields.join("evaluation.json"));
    match &args.compare {
        None => {
            let report = evaluate_model(&model, &reference, &points, &args.points)?;
            print!("{}", summarize(&model.config.name, &report));
            let mut csv = String::from("x,y,re\n");
            for (p, r) in points.iter().zip(&report.primary().re) {
                writeln!(csv, "{},{},{r}", p[0], p[1]).unwrap();
            }
            write_output(Some(&fields.join("re.csv")), &csv)?;
            write_output(Some(&out), &serde_json::to_string(&report)?)?;
        }
        Some(other) => {
            let b = TrainedModel::load(other)?;
            let cmp = compare_runs(&model, &b, &reference, &points, &args.points)?;
            print!("{}", summarize(&model.config.name, &cmp.a));
            print!("{}", summarize(&b.config.name, &cmp.b));
            write_output(Some(&fields.join("comparison.csv")), &cmp.to_csv())?;
            write_output(Some(&out), &serde_json::to_string(&cmp)?)?;
        }
    }
    Ok(())
}

fn export(args: ExportArgs) -> CliResult<()> {
    type Sampler = Box<dyn Fn(&[Point]) -> Vec<Vec<f64>>>;
    let (mesh, components, columns, sample): (Mesh, usize, Vec<String>, Sampler) =
        match (&args.run, &args.solution) {
            (Some(run), _) => {
                let model = TrainedModel::load(run)?;
                let columns = export_columns(&model);
                let mesh = (*model.mesh).clone();
                let components = model.components();
                let sample = move |pts: &[Point]| {
                    let values = model.predict(pts);
                    match model.z(pts) {
                        Some(z) => values
                            .into_iter()
                            .zip(z)
                            .map(|(mut v, z)| {
                                v.push(z);
                                v
                            })
                            .collect(),
                        None => values,
                    }
                };
                (mesh, components, columns, Box::new(sample))
            }
            (None, Some(path)) => {
                let solution = load_solution(path, args.mesh.as_deref())?;
                let mut columns = vec!["x".to_string(), "y".to_string()];
                columns.extend(component_names(solution.components));
                let (mesh, components) = (solution.mesh.clone(), solution.components);
                let sample = move |pts: &[Point]| solution.evaluate_many(pts);
                (mesh, components, columns, Box::new(sample))
            }
            (None, None) => unreachable!("clap requires one of --run and --solution"),
        };

    if args.nodes {
        let values: Vec<f64> = sample(mesh.nodes())
            .into_iter()
            .flat_map(|v| v.into_iter().take(components))
            .collect();
        let metadata = SolutionMetadata::now("export", &mesh);
        let field = FieldSolution::new(mesh, components, values, metadata)?;
        let text = match args.out.as_deref().and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some("json") => field.to_json(),
            _ => field.to_csv(),
        };
        return write_output(args.out.as_deref(), &text);
    }

    let (nx, ny) = args.grid.expect("clap requires --grid without --nodes");
    let points = grid_points(&mesh, nx, ny);
    let mut csv = columns.join(",");
    csv.push('\n');
    for (p, row) in points.iter().zip(sample(&points)) {
        write!(csv, "{},{}", p[0], p[1]).unwrap();
        for v in row {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    write_output(args.out.as_deref(), &csv)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::MeshGen(a) => mesh_gen(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Export(a) => export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
