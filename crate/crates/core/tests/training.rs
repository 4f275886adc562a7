use gpinn::geometry::{generate_domain, DomainKind, GeometryConfig};
use gpinn::graph::{Graph, DEFAULT_TOL};
use gpinn::problems::SampleCounts;
use gpinn::training::{
    cached_fiedler, compare_runs, grid_points_inside, reference_solution, run_experiment,
    ExperimentConfig, ModelMode, Phase, TrainedModel,
};

fn tiny(mode: ModelMode, cache: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        mode,
        geometry: GeometryConfig::with_h(0.1),
        cache_dir: Some(cache.to_path_buf()),
        ..Default::default()
    };
    c.network.hidden = vec![8, 8];
    c.optimizer.adam_iterations = 40;
    c.optimizer.lbfgs_iterations = 30;
    c.batch.counts = SampleCounts {
        interior: 64,
        data: 0,
        dirichlet: 16,
        neumann: 32,
    };
    c.batch.resample_every = 10;
    c
}

#[test]
fn cached_spectrum_is_bit_identical_to_a_fresh_solve() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate_domain(&GeometryConfig::with_h(0.1), DomainKind::House).unwrap();
    let (first, hit) = cached_fiedler(&mesh, dir.path()).unwrap();
    assert!(!hit);
    let (second, hit) = cached_fiedler(&mesh, dir.path()).unwrap();
    assert!(hit);
    let fresh = Graph::from_mesh(&mesh).fiedler(DEFAULT_TOL).unwrap();
    assert_eq!(first.pair, fresh.pair);
    assert_eq!(second.pair, fresh.pair);
    // A different mesh gets its own entry.
    let other = generate_domain(&GeometryConfig::with_h(0.2), DomainKind::House).unwrap();
    assert!(!cached_fiedler(&other, dir.path()).unwrap().1);
}

#[test]
fn gpinn_runs_reuse_the_embedding_and_are_deterministic() {
    let cache = tempfile::tempdir().unwrap();
    let runs = tempfile::tempdir().unwrap();
    let mut config = tiny(ModelMode::Gpinn, cache.path());
    config.output_dir = Some(runs.path().join("a"));
    let a = run_experiment(&config).unwrap();
    config.output_dir = Some(runs.path().join("b"));
    let b = run_experiment(&config).unwrap();
    assert!(!a.embedding_cache_hit);
    assert!(b.embedding_cache_hit);
    assert_eq!(a.model.network.parameters(), b.model.network.parameters());
    assert_eq!(a.history, b.history);
    for f in ["checkpoint.json", "history.csv", "fields/prediction.csv"] {
        let read = |d: &str| std::fs::read(runs.path().join(d).join(f)).unwrap();
        assert_eq!(read("a"), read("b"), "{f}");
    }
    let reloaded = TrainedModel::load(&runs.path().join("a")).unwrap();
    assert_eq!(reloaded.network.parameters(), a.model.network.parameters());
}

#[test]
fn loss_history_contracts() {
    let cache = tempfile::tempdir().unwrap();
    let out = run_experiment(&tiny(ModelMode::Pinn, cache.path())).unwrap();
    let adam: Vec<f64> = out.history.iter().filter(|r| r.phase == Phase::Adam).map(|r| r.loss.total).collect();
    let lbfgs: Vec<f64> = out.history.iter().filter(|r| r.phase == Phase::Lbfgs).map(|r| r.loss.total).collect();
    assert!(!adam.is_empty() && !lbfgs.is_empty());
    let mut best = f64::INFINITY;
    for l in &adam {
        let next = best.min(*l);
        assert!(next <= best);
        best = next;
    }
    for w in lbfgs.windows(2) {
        assert!(w[1] <= w[0], "L-BFGS accepted an increase: {} -> {}", w[0], w[1]);
    }
    for r in &out.history {
        let l = r.loss;
        let w = l.weights;
        assert!((l.total - (w.pde * l.pde + w.data * l.data + w.ic * l.ic + w.bc * l.bc)).abs() <= 1e-12 * l.total.max(1.0));
        assert_eq!(l.ic, 0.0);
    }
}

#[test]
fn comparing_a_run_with_itself_gives_zero_difference() {
    let cache = tempfile::tempdir().unwrap();
    let config = tiny(ModelMode::Gpinn, cache.path());
    let model = run_experiment(&config).unwrap().model;
    let reference = reference_solution(&config, 0.05).unwrap();
    let points = grid_points_inside(&model.mesh, 24);
    let cmp = compare_runs(&model, &model, &reference, &points, "grid:24x24").unwrap();
    assert!(cmp.difference.iter().all(|&d| d == 0.0));
    assert_eq!(cmp.a, cmp.b);
    assert_eq!(cmp.to_csv().lines().count(), points.len() + 1);

    let mut elasticity = ExperimentConfig::crack(ModelMode::Pinn);
    elasticity.network.hidden = vec![4];
    elasticity.optimizer.adam_iterations = 1;
    elasticity.optimizer.lbfgs_iterations = 0;
    elasticity.geometry = GeometryConfig::with_h(0.2);
    let other = run_experiment(&elasticity).unwrap().model;
    assert!(compare_runs(&model, &other, &reference, &points, "grid").is_err());
}
