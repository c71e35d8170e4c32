use edmc::geometry::{relative_error, PointSet};
use edmc::map_solver::{descend, map_gradient, solve_map, MapConfig};
use edmc::model::map_objective;
use edmc::synthesis::{generate_points, generate_trial, NoiseSpec};
use nalgebra::DMatrix;

fn central_difference(
    p: &PointSet,
    obs: &edmc::ObservationSet,
    lambda: f64,
    h: f64,
) -> DMatrix<f64> {
    let (n, d) = (p.n(), p.dim());
    DMatrix::from_fn(n, d, |i, k| {
        let mut plus = p.matrix().clone();
        let mut minus = p.matrix().clone();
        plus[(i, k)] += h;
        minus[(i, k)] -= h;
        let fp = map_objective(&PointSet::new(plus).unwrap(), obs, lambda);
        let fm = map_objective(&PointSet::new(minus).unwrap(), obs, lambda);
        (fp - fm) / (2.0 * h)
    })
}

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..50 {
        let t = generate_trial(6, 3, 0.7, NoiseSpec::SnrDb(10.0), seed).unwrap();
        let p = generate_points(6, 3, seed + 1000).unwrap();
        let lambda = [0.1, 1.0, 10.0][seed as usize % 3];
        let g = map_gradient(&p, &t.observations, lambda);
        let fd = central_difference(&p, &t.observations, lambda, 1e-6);
        for (a, b) in g.iter().zip(fd.iter()) {
            assert!(
                (a - b).abs() <= 1e-5 * b.abs().max(1.0),
                "seed {seed}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn objective_trace_never_increases() {
    for seed in 0..10 {
        let t = generate_trial(20, 3, 0.4, NoiseSpec::SnrDb(20.0), seed).unwrap();
        for lambda in [1.0, 100.0] {
            let cfg = MapConfig {
                lambda,
                seed,
                ..MapConfig::default()
            };
            let r = solve_map(&t.observations, 3, &cfg).unwrap();
            assert!(
                r.objective_trace.windows(2).all(|w| w[1] <= w[0]),
                "seed {seed}, lambda {lambda}"
            );
            assert_eq!(r.objective_trace.len(), r.iterations + 1);
        }
    }
}

#[test]
fn large_weight_recovers_noiseless_full_observations() {
    let t = generate_trial(30, 3, 1.0, NoiseSpec::Noiseless, 3).unwrap();
    let cfg = MapConfig {
        lambda: 1e4,
        ..MapConfig::default()
    };
    let r = solve_map(&t.observations, 3, &cfg).unwrap();
    let err = relative_error(&r.edm, &t.truth).unwrap();
    assert!(err < 5e-2, "{err}");
}

#[test]
fn descent_from_the_truth_stays_close() {
    let t = generate_trial(15, 2, 0.8, NoiseSpec::Noiseless, 4).unwrap();
    let cfg = MapConfig {
        lambda: 1e3,
        ..MapConfig::default()
    };
    let r = descend(t.points.clone(), &t.observations, &cfg).unwrap();
    assert!(r.objective() <= map_objective(&t.points, &t.observations, 1e3));
    assert!(relative_error(&r.edm, &t.truth).unwrap() < 5e-2);
}

#[test]
fn solver_is_deterministic() {
    let t = generate_trial(12, 2, 0.5, NoiseSpec::SnrDb(20.0), 5).unwrap();
    let cfg = MapConfig {
        seed: 9,
        ..MapConfig::default()
    };
    assert_eq!(
        solve_map(&t.observations, 2, &cfg).unwrap(),
        solve_map(&t.observations, 2, &cfg).unwrap()
    );
}
