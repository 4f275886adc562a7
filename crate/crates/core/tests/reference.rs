use gpinn::geometry::{generate_domain, structured_unit_square, DomainKind, GeometryConfig, HouseConfig};
use gpinn::mesh::{BoundaryTag, Mesh};
use gpinn::problems::{DirichletMode, ElasticityProblemSpec, HeatProblemSpec};
use gpinn::reference::{
    element_stresses, l2_error, manufactured_poisson, nodal_stresses, relative_error,
    solve_elasticity_fem, solve_poisson_fem, FieldSolution, ReferenceError, SolutionMetadata,
};
use proptest::prelude::*;

fn roller() -> ElasticityProblemSpec {
    ElasticityProblemSpec {
        dirichlet_mode: DirichletMode::Roller,
        ..Default::default()
    }
}

/// `n x n` grid on the unit square with interior nodes moved by `jitter`
/// (fractions of the cell size); bottom edge dirichlet, top edge neumann.
fn jittered_plate(n: usize, jitter: &[(f64, f64)]) -> Mesh {
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let mut p = [i as f64 * h, j as f64 * h];
            if 0 < i && i < n && 0 < j && j < n {
                let (dx, dy) = jitter[id(i, j) % jitter.len()];
                p[0] += dx * h;
                p[1] += dy * h;
            }
            nodes.push(p);
        }
    }
    let mut elements = Vec::new();
    for j in 0..n {
        for i in 0..n {
            elements.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            elements.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let mut boundary = Vec::new();
    for i in 0..n {
        boundary.push((id(i, 0), id(i + 1, 0), BoundaryTag::Dirichlet));
        boundary.push((id(i + 1, n), id(i, n), BoundaryTag::Neumann));
    }
    Mesh::new(nodes, elements, boundary).unwrap()
}

#[test]
fn poisson_fem_converges_at_second_order() {
    let case = manufactured_poisson("sines").unwrap();
    let errors: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let mesh = structured_unit_square(n).unwrap();
            let sol = solve_poisson_fem(&mesh, &case.spec()).unwrap();
            l2_error(&sol, &|x| case.u(x))
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "order {order} from {errors:?}");
    }
}

#[test]
fn zero_data_gives_zero_fields() {
    let square = structured_unit_square(8).unwrap();
    let mut spec = HeatProblemSpec::manufactured_sines();
    spec.source = gpinn::problems::HeatSource::Disc {
        center: [0.5, 0.5],
        radius: 0.2,
        strength: 0.0,
        edge_width: 0.0,
    };
    assert!(solve_poisson_fem(&square, &spec).unwrap().values.iter().all(|&v| v == 0.0));

    let plate = generate_domain(&GeometryConfig::with_h(0.1), DomainKind::Plate).unwrap();
    let unloaded = ElasticityProblemSpec {
        traction: [0.0, 0.0],
        ..Default::default()
    };
    assert!(solve_elasticity_fem(&plate, &unloaded).unwrap().values.iter().all(|&v| v == 0.0));
}

#[test]
fn patch_test_reproduces_uniform_tension() {
    let mesh = generate_domain(&GeometryConfig::with_h(0.05), DomainKind::Plate).unwrap();
    let spec = roller();
    let sol = solve_elasticity_fem(&mesh, &spec).unwrap();
    for s in element_stresses(&sol, &spec) {
        assert!((s[1][1] - 1.0).abs() < 1e-10, "sigma_yy {}", s[1][1]);
        assert!(s[0][0].abs() < 1e-10 && s[0][1].abs() < 1e-10);
    }
}

#[test]
fn crack_tip_concentrates_stress() {
    let mesh = generate_domain(&GeometryConfig::with_h(0.02), DomainKind::CrackPlate).unwrap();
    let spec = ElasticityProblemSpec::default();
    let sol = solve_elasticity_fem(&mesh, &spec).unwrap();
    let top = mesh.nodes_with_tag(BoundaryTag::CrackTop);
    let bottom = mesh.nodes_with_tag(BoundaryTag::CrackBottom);
    let tip = *top.iter().find(|n| bottom.contains(n)).unwrap();
    let stresses = nodal_stresses(&sol, &spec);
    // Far field: the loaded top edge, where sigma_yy equals the traction.
    let far = stresses[mesh
        .nodes()
        .iter()
        .position(|p| (p[0] - 0.5).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12)
        .unwrap()][1][1];
    assert!((far - 1.0).abs() < 0.2, "far field {far}");
    assert!(stresses[tip][1][1] > 2.0 * far, "tip {} vs far {far}", stresses[tip][1][1]);
}

#[test]
fn house_temperature_peaks_in_the_source_room() {
    let mesh = generate_domain(&GeometryConfig::with_h(0.05), DomainKind::House).unwrap();
    let sol = solve_poisson_fem(&mesh, &HeatProblemSpec::default()).unwrap();
    let argmax = (0..mesh.n_nodes())
        .max_by(|&a, &b| sol.values[a].abs().total_cmp(&sol.values[b].abs()))
        .unwrap();
    let house = HouseConfig::default();
    assert!(mesh.nodes()[argmax][0] < house.left_wall.x, "peak at {:?}", mesh.nodes()[argmax]);
}

#[test]
fn relative_error_examples() {
    let reference: Vec<Vec<f64>> = vec![vec![1.0], vec![-4.0], vec![2.0]];
    let same = relative_error(&reference, &reference, "test").unwrap();
    assert!(same.primary().re.iter().all(|&r| r == 0.0));
    let shifted: Vec<Vec<f64>> = reference.iter().map(|r| vec![r[0] + 0.4]).collect();
    let re = relative_error(&shifted, &reference, "test").unwrap();
    assert!(re.primary().re.iter().all(|&r| (r - 0.1).abs() < 1e-15));
    let zero = vec![vec![0.0]; 3];
    assert_eq!(relative_error(&zero, &reference, "test").unwrap().primary().re[1], 1.0);
    assert!(matches!(relative_error(&reference, &zero, "test"), Err(ReferenceError::ZeroReference(0))));

    let vector = vec![vec![3.0, 0.0], vec![0.0, 4.0]];
    let report = relative_error(&vec![vec![0.0, 0.0]; 2], &vector, "test").unwrap();
    assert_eq!(report.components.len(), 2);
    assert_eq!(report.norm.as_ref().unwrap().re, vec![0.75, 1.0]);
    assert!(report.primary().max >= report.primary().mean);
}

#[test]
fn field_solution_round_trips() {
    let mesh = generate_domain(&GeometryConfig::with_h(0.1), DomainKind::Plate).unwrap();
    let sol = solve_elasticity_fem(&mesh, &ElasticityProblemSpec::default()).unwrap();
    let json = FieldSolution::from_json(&sol.to_json()).unwrap();
    assert_eq!(json.values, sol.values);
    assert_eq!(json.metadata, sol.metadata);
    let meta = SolutionMetadata {
        solver: "import".into(),
        h: 0.1,
        timestamp: 0,
    };
    let csv = FieldSolution::from_csv(&sol.to_csv(), mesh.clone(), meta).unwrap();
    assert_eq!(csv.values, sol.values);
    assert_eq!(csv.to_csv(), sol.to_csv());
    assert!(FieldSolution::from_csv("node,x,y,u_x,u_y\n0,0,0,1,2\n", mesh, sol.metadata.clone()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn patch_test_holds_on_distorted_meshes(
        n in 3usize..9,
        jitter in proptest::collection::vec((-0.3f64..0.3, -0.3f64..0.3), 1..40),
    ) {
        let mesh = jittered_plate(n, &jitter);
        let spec = roller();
        let sol = solve_elasticity_fem(&mesh, &spec).unwrap();
        for s in element_stresses(&sol, &spec) {
            prop_assert!((s[1][1] - 1.0).abs() < 1e-10);
            prop_assert!(s[0][0].abs() < 1e-10 && s[0][1].abs() < 1e-10);
        }
    }

    #[test]
    fn relative_error_is_scale_free(
        pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50),
        c in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
    ) {
        prop_assume!(pairs.iter().any(|p| p.1 != 0.0));
        let cand: Vec<Vec<f64>> = pairs.iter().map(|p| vec![p.0]).collect();
        let refr: Vec<Vec<f64>> = pairs.iter().map(|p| vec![p.1]).collect();
        let scaled = |v: &[Vec<f64>]| v.iter().map(|r| vec![c * r[0]]).collect::<Vec<_>>();
        let a = relative_error(&cand, &refr, "a").unwrap();
        let b = relative_error(&scaled(&cand), &scaled(&refr), "b").unwrap();
        for (x, y) in a.primary().re.iter().zip(&b.primary().re) {
            prop_assert!(*x >= 0.0);
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
