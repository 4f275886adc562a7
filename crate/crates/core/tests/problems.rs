use std::sync::Arc;

use gpinn::embedding::{DifferentiationMode, EmbeddingField};
use gpinn::geometry::{generate_domain, structured_unit_square, DomainKind, GeometryConfig, HouseConfig};
use gpinn::graph::Graph;
use gpinn::loss::LossWeights;
use gpinn::mesh::{BoundaryTag, Mesh};
use gpinn::nn::Network;
use gpinn::problems::{
    energy_loss, heat_loss, sample_batch, DirichletMode, ElasticityProblemSpec, HeatProblemSpec,
    HeatSource, SampleCounts, SamplingStrategy,
};
use gpinn::reference::{element_stresses, solve_elasticity_fem};
use proptest::prelude::*;

fn counts(interior: usize, dirichlet: usize, neumann: usize) -> SampleCounts {
    SampleCounts {
        interior,
        data: 0,
        dirichlet,
        neumann,
    }
}

fn house(h: f64) -> Mesh {
    generate_domain(&GeometryConfig::with_h(h), DomainKind::House).unwrap()
}

fn house_field(mesh: &Mesh, mode: DifferentiationMode) -> EmbeddingField {
    let pair = Graph::from_mesh(mesh).fiedler(1e-10).unwrap().pair;
    EmbeddingField::build(Arc::new(mesh.clone()), &pair, mode).unwrap()
}

#[test]
fn zero_network_pde_loss_counts_points_in_the_source() {
    let mesh = house(0.05);
    let batch = sample_batch(&mesh, counts(2000, 16, 16), 7, SamplingStrategy::UniformRandom, None).unwrap();
    let mut net = Network::new(&[2, 8, 1], 0).unwrap();
    net.parameters_mut().fill(0.0);
    let spec = HeatProblemSpec::default();
    let inside = HouseConfig::default();
    let k = batch.interior.iter().filter(|&&x| inside.in_source(x)).count();
    assert!(k > 0);
    let loss = heat_loss(&net, None, &batch, &spec, LossWeights::default()).unwrap();
    assert_eq!(loss.pde, k as f64 / batch.interior.len() as f64);
    assert_eq!(loss.bc, 0.0);

    let zero_source = HeatProblemSpec {
        source: HeatSource::Disc {
            center: [0.1, 0.85],
            radius: 0.08,
            strength: 0.0,
            edge_width: 0.0,
        },
        ..spec
    };
    assert_eq!(heat_loss(&net, None, &batch, &zero_source, LossWeights::default()).unwrap().total, 0.0);
}

#[test]
fn uniform_interior_points_fill_the_quadrants_evenly() {
    let mesh = structured_unit_square(16).unwrap();
    let batch = sample_batch(&mesh, counts(1000, 0, 0), 42, SamplingStrategy::UniformRandom, None).unwrap();
    let mut quadrants = [0usize; 4];
    for p in &batch.interior {
        assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        quadrants[(p[0] >= 0.5) as usize + 2 * (p[1] >= 0.5) as usize] += 1;
    }
    // Binomial(1000, 1/4): sigma = sqrt(1000 * 0.25 * 0.75).
    let sigma = (1000.0f64 * 0.25 * 0.75).sqrt();
    for q in quadrants {
        assert!((q as f64 - 250.0).abs() < 4.0 * sigma, "{quadrants:?}");
    }
}

#[test]
fn no_interior_point_falls_inside_a_wall() {
    let mesh = house(0.05);
    let walls = HouseConfig::default().wall_rects();
    let batch = sample_batch(&mesh, counts(5000, 32, 32), 3, SamplingStrategy::UniformRandom, None).unwrap();
    for p in &batch.interior {
        for r in &walls {
            let strictly_inside = r[0] < p[0] && p[0] < r[1] && r[2] < p[1] && p[1] < r[3];
            assert!(!strictly_inside, "{p:?} inside wall {r:?}");
        }
    }
}

#[test]
fn boundary_points_lie_on_their_tagged_edges() {
    let mesh = house(0.1);
    let batch = sample_batch(&mesh, counts(10, 64, 64), 9, SamplingStrategy::UniformRandom, None).unwrap();
    let on_tag = |x: [f64; 2], tag: BoundaryTag| {
        mesh.edges_with_tag(tag).any(|e| {
            let (a, b) = (mesh.nodes()[e.nodes[0]], mesh.nodes()[e.nodes[1]]);
            let cross = (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]);
            let dot = (x[0] - a[0]) * (b[0] - a[0]) + (x[1] - a[1]) * (b[1] - a[1]);
            cross.abs() < 1e-12 && dot >= -1e-12 && dot <= e.length * e.length + 1e-12
        })
    };
    assert_eq!(batch.dirichlet.len(), 64);
    assert!(batch.dirichlet.iter().all(|&x| on_tag(x, BoundaryTag::Dirichlet)));
    assert!(batch.neumann.iter().all(|&x| on_tag(x, BoundaryTag::Neumann)));
}

#[test]
fn pinn_and_gpinn_agree_when_z_is_a_dead_input() {
    let mesh = house(0.1);
    let batch = sample_batch(&mesh, counts(200, 32, 32), 5, SamplingStrategy::UniformRandom, None).unwrap();
    let field = EmbeddingField::from_node_values(Arc::new(mesh.clone()), vec![0.0; mesh.n_nodes()], DifferentiationMode::Frozen).unwrap();
    let hidden = 10;
    let mut gpinn = Network::new(&[3, hidden, hidden, 1], 17).unwrap();
    let mut pinn_params = Vec::new();
    // First-layer weights are stored row-major (out x in); drop the z column.
    for r in 0..hidden {
        gpinn.parameters_mut()[3 * r + 2] = 0.0;
        pinn_params.extend_from_slice(&gpinn.parameters()[3 * r..3 * r + 2]);
    }
    pinn_params.extend_from_slice(&gpinn.parameters()[3 * hidden..]);
    let pinn = Network::from_parts(&[2, hidden, hidden, 1], 17, pinn_params).unwrap();
    let spec = HeatProblemSpec::default();
    let w = LossWeights::default();
    let a = heat_loss(&gpinn, Some(&field), &batch, &spec, w).unwrap();
    let b = heat_loss(&pinn, None, &batch, &spec, w).unwrap();
    assert!((a.total - b.total).abs() <= 1e-12 * b.total.abs().max(1.0), "{a:?} vs {b:?}");
}

#[test]
fn frozen_mode_ignores_embedding_gradients() {
    let mesh = house(0.1);
    let batch = sample_batch(&mesh, counts(300, 32, 32), 8, SamplingStrategy::UniformRandom, None).unwrap();
    let frozen = house_field(&mesh, DifferentiationMode::Frozen);
    let zeroed = frozen.clone().with_zeroed_gradients();
    let net = Network::new(&[3, 12, 12, 1], 4).unwrap();
    let spec = HeatProblemSpec::default();
    let w = LossWeights::default();
    let a = heat_loss(&net, Some(&frozen), &batch, &spec, w).unwrap();
    let b = heat_loss(&net, Some(&zeroed), &batch, &spec, w).unwrap();
    assert_eq!(a, b);
    // The chain rule does see grad z.
    let chain = frozen.with_mode(DifferentiationMode::ChainRule);
    assert_ne!(heat_loss(&net, Some(&chain), &batch, &spec, w).unwrap(), a);
}

#[test]
fn traction_work_is_linear_in_the_load() {
    let mesh = generate_domain(&GeometryConfig::with_h(0.1), DomainKind::CrackPlate).unwrap();
    let batch = sample_batch(&mesh, counts(1, 1, 1), 0, SamplingStrategy::Quadrature, None).unwrap();
    let net = Network::new(&[2, 10, 2], 21).unwrap();
    let at = |tau: f64| {
        let spec = ElasticityProblemSpec {
            traction: [0.0, tau],
            ..Default::default()
        };
        energy_loss(&net, None, &batch, &spec, LossWeights::default()).unwrap().pde
    };
    let strain_energy = at(0.0);
    let (w1, w2) = (strain_energy - at(1.0), strain_energy - at(2.0));
    assert!(w1 != 0.0);
    assert!((w2 - 2.0 * w1).abs() <= 1e-12 * w1.abs().max(1.0));
}

/// Strain energy and traction work of a FEM displacement field.
fn fem_energy_and_work(mesh: &Mesh, spec: &ElasticityProblemSpec) -> (f64, f64) {
    let sol = solve_elasticity_fem(mesh, spec).unwrap();
    let stresses = element_stresses(&sol, spec);
    let (two_mu, lambda) = spec.lame();
    let mut energy = 0.0;
    for (e, s) in stresses.iter().enumerate() {
        // Invert the isotropic law for the element strain.
        let tr_s = s[0][0] + s[1][1];
        let tr_e = tr_s / (two_mu + 2.0 * lambda);
        let eps = |i: usize, j: usize| (s[i][j] - if i == j { lambda * tr_e } else { 0.0 }) / two_mu;
        let contraction: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| s[i][j] * eps(i, j)).sum();
        energy += 0.5 * mesh.area(e) * contraction;
    }
    let mut work = 0.0;
    for edge in mesh.edges_with_tag(BoundaryTag::Neumann) {
        for &n in &edge.nodes {
            let u = sol.node_value(n);
            work += 0.5 * edge.length * (spec.traction[0] * u[0] + spec.traction[1] * u[1]);
        }
    }
    (energy, work)
}

#[test]
fn fem_field_satisfies_clapeyron() {
    for kind in [DomainKind::Plate, DomainKind::CrackPlate] {
        let mesh = generate_domain(&GeometryConfig::with_h(0.05), kind).unwrap();
        let (energy, work) = fem_energy_and_work(&mesh, &ElasticityProblemSpec::default());
        assert!(work > 0.0);
        assert!((energy - 0.5 * work).abs() < 0.02 * 0.5 * work, "{kind:?}: {energy} vs {work}");
    }
}

#[test]
fn potential_energy_converges_under_refinement() {
    let spec = ElasticityProblemSpec {
        dirichlet_mode: DirichletMode::Roller,
        ..Default::default()
    };
    // Uniform tension: u_y = tau y / E, so the exact potential energy is
    // -tau^2 / (2E) per unit area. P1 reproduces it at every refinement.
    let exact = -0.5 * spec.traction[1].powi(2) / spec.youngs_modulus;
    for h in [0.25, 0.125, 0.0625] {
        let mesh = generate_domain(&GeometryConfig::with_h(h), DomainKind::Plate).unwrap();
        let (energy, work) = fem_energy_and_work(&mesh, &spec);
        assert!((energy - work - exact).abs() < 1e-10, "h = {h}");
    }
    // Clamped plate: nested conforming refinements lower the discrete
    // potential energy monotonically towards the exact one.
    let clamped = ElasticityProblemSpec::default();
    let mut previous = f64::INFINITY;
    for h in [0.25, 0.125, 0.0625, 0.03125] {
        let mesh = generate_domain(&GeometryConfig::with_h(h), DomainKind::Plate).unwrap();
        let (energy, work) = fem_energy_and_work(&mesh, &clamped);
        let potential = energy - work;
        assert!(potential < previous, "h = {h}: {potential} after {previous}");
        previous = potential;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_recombines_from_its_terms(pde in 0.0f64..5.0, data in 0.0f64..5.0, bc in 0.0f64..5.0, seed in 0u64..1000) {
        let mesh = house(0.1);
        let mut batch = sample_batch(&mesh, counts(64, 16, 16), seed, SamplingStrategy::UniformRandom, None).unwrap();
        batch.data = batch.interior[..8].to_vec();
        batch.data_values = vec![vec![0.25]; 8];
        let net = Network::new(&[2, 6, 1], seed).unwrap();
        let spec = HeatProblemSpec::default();
        let w = LossWeights { pde, data, ic: 0.0, bc };
        let l = heat_loss(&net, None, &batch, &spec, w).unwrap();
        prop_assert!((l.total - (pde * l.pde + data * l.data + bc * l.bc)).abs() <= 1e-12 * l.total.abs().max(1.0));
        prop_assert!(l.pde >= 0.0 && l.data > 0.0 && l.bc >= 0.0 && l.ic == 0.0);
        let doubled = heat_loss(&net, None, &batch, &spec, LossWeights { bc: 2.0 * bc, ..w }).unwrap();
        prop_assert_eq!(doubled.pde, l.pde);
        prop_assert_eq!(doubled.bc, l.bc);
        prop_assert!((doubled.total - l.total - bc * l.bc).abs() <= 1e-12 * doubled.total.abs().max(1.0));
    }
}
