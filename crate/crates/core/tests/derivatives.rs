//! Analytic derivatives against central finite differences.

use std::sync::Arc;

use gpinn::embedding::{DifferentiationMode, EmbeddingField};
use gpinn::geometry::{generate_domain, DomainKind, GeometryConfig};
use gpinn::graph::Graph;
use gpinn::loss::LossWeights;
use gpinn::nn::Network;
use gpinn::problems::{
    energy_loss, energy_loss_and_gradient, heat_loss, heat_loss_and_gradient, heat_residual,
    sample_batch, strain, CollocationBatch, ElasticityProblemSpec, HeatProblemSpec, HeatSource,
    PreparedBatch, SampleCounts, SamplingStrategy,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-12);
    num / den
}

fn random_net(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize) -> Network {
    let width = rng.random_range(2..8);
    let depth = rng.random_range(1..4);
    let mut sizes = vec![n_in];
    sizes.extend(std::iter::repeat_n(width, depth));
    sizes.push(n_out);
    let mut net = Network::new(&sizes, rng.random()).unwrap();
    // Non-zero biases exercise more of the activation curve.
    for p in net.parameters_mut() {
        *p += 0.1 * (rng.random::<f64>() - 0.5);
    }
    net
}

#[test]
fn input_jacobian_and_hessian_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n_in = rng.random_range(1..4);
        let n_out = rng.random_range(1..3);
        let net = random_net(&mut rng, n_in, n_out);
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = net.evaluate(&x, 2).unwrap();
        let (jac, hess) = (b.jacobian.unwrap(), b.hessians.unwrap());
        let h = 1e-5;
        for k in 0..n_in {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let (bp, bm) = (net.evaluate(&xp, 1).unwrap(), net.evaluate(&xm, 1).unwrap());
            for o in 0..n_out {
                let fd = (bp.value[o] - bm.value[o]) / (2.0 * h);
                assert!((fd - jac[o][k]).abs() < 1e-8, "jacobian");
                let (jp, jm) = (bp.jacobian.as_ref().unwrap(), bm.jacobian.as_ref().unwrap());
                let fd_h: Vec<f64> = (0..n_in).map(|j| (jp[o][j] - jm[o][j]) / (2.0 * h)).collect();
                for j in 0..n_in {
                    let err = (hess[o][k][j] - fd_h[j]).abs();
                    assert!(err < 1e-5 * fd_h[j].abs().max(1.0), "hessian {err:e}");
                }
            }
        }
    }
}

#[test]
fn batched_jets_agree_with_per_point_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let net = random_net(&mut rng, 3, 2);
        let batch = 7;
        let inputs = Array2::from_shape_fn((3, batch), |_| rng.random_range(-1.0..1.0));
        let dirs: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((3, batch), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let views: Vec<_> = dirs.iter().map(|d| d.view()).collect();
        let (jets, _) = net.forward_jets(inputs.view(), &views, true);
        for p in 0..batch {
            let x: Vec<f64> = inputs.column(p).to_vec();
            let b = net.evaluate(&x, 2).unwrap();
            let (jac, hess) = (b.jacobian.unwrap(), b.hessians.unwrap());
            for o in 0..2 {
                assert!((jets.value[(o, p)] - b.value[o]).abs() < 1e-13);
                for (k, d) in dirs.iter().enumerate() {
                    let d = d.column(p);
                    let first: f64 = (0..3).map(|i| jac[o][i] * d[i]).sum();
                    let second: f64 = (0..3)
                        .flat_map(|i| (0..3).map(move |j| (i, j)))
                        .map(|(i, j)| d[i] * hess[o][i][j] * d[j])
                        .sum();
                    assert!((jets.first[k][(o, p)] - first).abs() < 1e-12);
                    assert!((jets.second[k][(o, p)] - second).abs() < 1e-12);
                }
            }
        }
    }
}

fn fd_gradient(net: &Network, f: &dyn Fn(&Network) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut work = net.clone();
    (0..net.n_params())
        .map(|i| {
            let orig = work.parameters()[i];
            work.parameters_mut()[i] = orig + h;
            let fp = f(&work);
            work.parameters_mut()[i] = orig - h;
            let fm = f(&work);
            work.parameters_mut()[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn house_field(mode: DifferentiationMode) -> EmbeddingField {
    let mesh = Arc::new(generate_domain(&GeometryConfig::with_h(0.1), DomainKind::House).unwrap());
    let pair = Graph::from_mesh(&mesh).fiedler(1e-10).unwrap().pair;
    EmbeddingField::build(mesh, &pair, mode).unwrap()
}

#[test]
fn heat_loss_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights = LossWeights {
        pde: 1.0,
        data: 0.7,
        ic: 0.0,
        bc: 2.0,
    };
    for mode in [None, Some(DifferentiationMode::Frozen), Some(DifferentiationMode::ChainRule)] {
        let field = mode.map(house_field);
        let mesh = generate_domain(&GeometryConfig::with_h(0.1), DomainKind::House).unwrap();
        let counts = SampleCounts {
            interior: 40,
            data: 6,
            dirichlet: 10,
            neumann: 12,
        };
        let mut batch =
            sample_batch(&mesh, counts, 9, SamplingStrategy::UniformRandom, None).unwrap();
        batch.data_values = batch.data.iter().map(|x| vec![x[0] * x[1]]).collect();
        let spec = HeatProblemSpec {
            neumann_value: 0.3,
            dirichlet_value: -0.2,
            ..Default::default()
        };
        let net = random_net(&mut rng, if field.is_some() { 3 } else { 2 }, 1);
        let prep = PreparedBatch::new(batch.clone(), field.as_ref());
        let (loss, grad) = heat_loss_and_gradient(&net, &prep, &spec, weights).unwrap();
        let plain = heat_loss(&net, field.as_ref(), &batch, &spec, weights).unwrap();
        assert_eq!(loss, plain);
        let fd = fd_gradient(&net, &|n| {
            heat_loss(n, field.as_ref(), &batch, &spec, weights).unwrap().total
        });
        assert!(rel_inf(&grad, &fd) < 1e-5, "mode {mode:?}: {}", rel_inf(&grad, &fd));
    }
}

#[test]
fn batched_residual_matches_per_point_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for mode in [DifferentiationMode::Frozen, DifferentiationMode::ChainRule] {
        let field = house_field(mode);
        let net = random_net(&mut rng, 3, 1);
        let spec = HeatProblemSpec::default();
        for x in [[0.2, 0.3], [0.5, 0.9], [0.11, 0.86]] {
            let r = heat_residual(&net, Some(&field), x, &spec).unwrap();
            let batch = CollocationBatch {
                interior: vec![x],
                interior_weights: vec![1.0],
                ..Default::default()
            };
            let l = heat_loss(&net, Some(&field), &batch, &spec, LossWeights::default()).unwrap();
            assert!((l.pde - r * r).abs() < 1e-12 * (1.0 + r * r));
        }
    }
}

#[test]
fn residual_is_fd_laplacian_minus_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = HeatProblemSpec {
        source: HeatSource::Sines,
        ..Default::default()
    };
    for _ in 0..10 {
        let net = random_net(&mut rng, 2, 1);
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let u = |p: [f64; 2]| net.evaluate(&p, 0).unwrap().value[0];
        let h = 1e-4;
        let lap = (u([x[0] + h, x[1]]) + u([x[0] - h, x[1]]) + u([x[0], x[1] + h])
            + u([x[0], x[1] - h])
            - 4.0 * u(x))
            / (h * h);
        let r = heat_residual(&net, None, x, &spec).unwrap();
        let expect = lap - spec.source.value(x);
        assert!((r - expect).abs() < 1e-5 * expect.abs().max(1.0));
    }
}

#[test]
fn strain_is_symmetrized_fd_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let net = random_net(&mut rng, 2, 2);
        let x = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let u = |p: [f64; 2]| net.evaluate(&p, 0).unwrap().value;
        let h = 1e-6;
        let mut g = [[0.0; 2]; 2];
        for j in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += h;
            xm[j] -= h;
            let (up, um) = (u(xp), u(xm));
            for i in 0..2 {
                g[i][j] = (up[i] - um[i]) / (2.0 * h);
            }
        }
        let e = strain(&net, None, x).unwrap();
        assert_eq!(e[0][1], e[1][0]);
        assert!((e[0][0] - g[0][0]).abs() < 1e-5);
        assert!((e[1][1] - g[1][1]).abs() < 1e-5);
        assert!((e[0][1] - 0.5 * (g[0][1] + g[1][0])).abs() < 1e-5);
    }
}

#[test]
fn energy_loss_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mesh = generate_domain(&GeometryConfig::with_h(0.2), DomainKind::CrackPlate).unwrap();
    let weights = LossWeights {
        pde: 1.0,
        data: 0.5,
        ic: 0.0,
        bc: 3.0,
    };
    for mode in [gpinn::problems::DirichletMode::Clamped, gpinn::problems::DirichletMode::Roller] {
        for chain in [false, true] {
            let field = chain.then(|| {
                let pair = Graph::from_mesh(&mesh).fiedler(1e-10).unwrap().pair;
                EmbeddingField::build(Arc::new(mesh.clone()), &pair, DifferentiationMode::ChainRule)
                    .unwrap()
            });
            let counts = SampleCounts {
                interior: 1,
                data: 5,
                dirichlet: 1,
                neumann: 1,
            };
            let mut batch =
                sample_batch(&mesh, counts, 2, SamplingStrategy::Quadrature, None).unwrap();
            batch.data_values = batch.data.iter().map(|x| vec![x[0], -x[1]]).collect();
            let spec = ElasticityProblemSpec {
                dirichlet_mode: mode,
                traction: [0.2, 1.0],
                dirichlet_displacement: [0.01, -0.02],
                ..Default::default()
            };
            let net = random_net(&mut rng, if chain { 3 } else { 2 }, 2);
            let prep = PreparedBatch::new(batch.clone(), field.as_ref());
            let (loss, grad) = energy_loss_and_gradient(&net, &prep, &spec, weights).unwrap();
            assert_eq!(loss, energy_loss(&net, field.as_ref(), &batch, &spec, weights).unwrap());
            let fd = fd_gradient(&net, &|n| {
                energy_loss(n, field.as_ref(), &batch, &spec, weights).unwrap().total
            });
            assert!(rel_inf(&grad, &fd) < 1e-5, "{mode:?} chain {chain}: {}", rel_inf(&grad, &fd));
        }
    }
}
