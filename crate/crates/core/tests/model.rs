use std::f64::consts::PI;

use edmc::geometry::{gram_from_points, PointSet};
use edmc::model::{
    log_conditional_point, log_likelihood, log_point_prior, map_objective, residual_sum_squares,
    ChainState,
};
use edmc::synthesis::{generate_points, generate_trial, NoiseSpec, ObservationSet, Trial};
use nalgebra::{DMatrix, DVector};

fn noisy_trial(n: usize, seed: u64) -> Trial {
    generate_trial(n, 3, 0.5, NoiseSpec::SnrDb(15.0), seed).unwrap()
}

fn spd(d: usize, seed: u64) -> DMatrix<f64> {
    let a = generate_points(d + 2, d, seed).unwrap().into_matrix();
    a.transpose() * a + DMatrix::identity(d, d) * 0.5
}

fn replace_point(p: &PointSet, i: usize, x: &[f64]) -> PointSet {
    let mut m = p.matrix().clone();
    for (k, v) in x.iter().enumerate() {
        m[(i, k)] = *v;
    }
    PointSet::new(m).unwrap()
}

fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let quad = (diff.transpose() * precision * &diff)[(0, 0)];
    -0.5 * d * (2.0 * PI).ln() + 0.5 * precision.determinant().ln() - 0.5 * quad
}

#[test]
fn log_likelihood_matches_per_pair_sum() {
    let t = noisy_trial(15, 1);
    let p = generate_points(15, 3, 99).unwrap();
    let alpha = 0.37;
    let mut oracle = 0.0;
    for e in t.observations.pairs() {
        let mut sq = 0.0;
        for k in 0..3 {
            sq += (p.matrix()[(e.i, k)] - p.matrix()[(e.j, k)]).powi(2);
        }
        let r = e.value - sq;
        oracle += 0.5 * (alpha / (2.0 * PI)).ln() - 0.5 * alpha * r * r;
    }
    let got = log_likelihood(&p, &t.observations, alpha);
    assert!(
        (got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
        "{got} vs {oracle}"
    );
}

#[test]
fn log_likelihood_at_truth_without_noise() {
    let t = generate_trial(10, 2, 0.6, NoiseSpec::Noiseless, 3).unwrap();
    let m = t.observations.pair_count() as f64;
    let got = log_likelihood(&t.points, &t.observations, 1.0);
    assert!((got - m * 0.5 * (1.0 / (2.0 * PI)).ln()).abs() < 1e-12);
    let empty = ObservationSet::new(10, vec![], None, 0).unwrap();
    assert_eq!(log_likelihood(&t.points, &empty, 1.0), 0.0);
}

#[test]
fn log_point_prior_matches_multivariate_normal() {
    let p = generate_points(12, 3, 5).unwrap();
    let mean = DVector::from_vec(vec![0.3, -0.2, 1.0]);
    let prec = spd(3, 6);
    let oracle: f64 = (0..12)
        .map(|i| mvn_log_density(&p.point(i), &mean, &prec))
        .sum();
    let got = log_point_prior(&p, &mean, &prec).unwrap();
    assert!(
        (got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0),
        "{got} vs {oracle}"
    );
}

#[test]
fn log_point_prior_scaling_identity() {
    let (n, d) = (7, 3);
    let p = generate_points(n, d, 8).unwrap();
    let mean = DVector::zeros(d);
    let prec = spd(d, 9);
    let base = log_point_prior(&p, &mean, &prec).unwrap();
    let doubled = log_point_prior(&p, &mean, &(&prec * 2.0)).unwrap();
    let quad: f64 = (0..n)
        .map(|i| (p.point(i).transpose() * &prec * p.point(i))[(0, 0)])
        .sum();
    let expected = base + n as f64 * d as f64 * 0.5 * 2f64.ln() - 0.5 * quad;
    assert!((doubled - expected).abs() < 1e-10);

    let at_mean = PointSet::new(DMatrix::zeros(4, 3)).unwrap();
    let v = log_point_prior(&at_mean, &DVector::zeros(3), &DMatrix::identity(3, 3)).unwrap();
    assert!((v - 4.0 * 1.5 * (1.0 / (2.0 * PI)).ln()).abs() < 1e-12);
}

#[test]
fn log_point_prior_rejects_indefinite_precision() {
    let p = generate_points(3, 2, 0).unwrap();
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(log_point_prior(&p, &DVector::zeros(2), &bad).is_err());
}

#[test]
fn conditional_differences_equal_joint_differences() {
    for seed in 0..10 {
        let t = noisy_trial(12, seed);
        let state = ChainState {
            points: generate_points(12, 3, seed + 100).unwrap(),
            mean: DVector::from_vec(vec![0.1, 0.0, -0.4]),
            precision: spd(3, seed + 200),
            noise_precision: 0.8,
            iteration: 0,
            accept_count: 0,
        };
        let cands = generate_points(2, 3, seed + 300).unwrap();
        let (x, y) = (cands.point(0), cands.point(1));
        for i in [0, 5, 11] {
            let joint = |c: &DVector<f64>| {
                let p = replace_point(&state.points, i, c.as_slice());
                log_likelihood(&p, &t.observations, state.noise_precision)
                    + log_point_prior(&p, &state.mean, &state.precision).unwrap()
            };
            let cond_diff = log_conditional_point(i, x.as_slice(), &state, &t.observations)
                - log_conditional_point(i, y.as_slice(), &state, &t.observations);
            let joint_diff = joint(&x) - joint(&y);
            assert!(
                (cond_diff - joint_diff).abs() <= 1e-10 * joint_diff.abs().max(1.0),
                "{cond_diff} vs {joint_diff}"
            );
        }
    }
}

#[test]
fn conditional_without_neighbours_is_the_prior_quadratic() {
    let p = generate_points(4, 2, 1).unwrap();
    let obs = ObservationSet::new(4, vec![], None, 0).unwrap();
    let state = ChainState {
        points: p,
        mean: DVector::zeros(2),
        precision: DMatrix::identity(2, 2),
        noise_precision: 1.0,
        iteration: 0,
        accept_count: 0,
    };
    let v = log_conditional_point(2, &[3.0, 4.0], &state, &obs);
    assert!((v + 12.5).abs() < 1e-12);
}

#[test]
fn map_objective_matches_trace_regularized_form() {
    for seed in 0..10 {
        let t = noisy_trial(14, seed);
        let p = generate_points(14, 3, seed + 50).unwrap();
        let lambda = 3.7;
        let g = gram_from_points(&p).into_matrix();
        let mut data = 0.0;
        for e in t.observations.pairs() {
            let dist = g[(e.i, e.i)] + g[(e.j, e.j)] - 2.0 * g[(e.i, e.j)];
            data += (e.value - dist).powi(2);
        }
        let oracle = g.trace() + 0.5 * lambda * data;
        let got = map_objective(&p, &t.observations, lambda);
        assert!(
            (got - oracle).abs() <= 1e-12 * oracle.abs(),
            "{got} vs {oracle}"
        );
    }
}

#[test]
fn map_objective_trivial_cases() {
    let t = generate_trial(8, 2, 0.7, NoiseSpec::Noiseless, 4).unwrap();
    let f = map_objective(&t.points, &t.observations, 10.0);
    assert!((f - t.points.frobenius_norm_squared()).abs() < 1e-10);

    let zero = PointSet::new(DMatrix::zeros(8, 2)).unwrap();
    let sum_sq: f64 = t
        .observations
        .pairs()
        .iter()
        .map(|e| e.value * e.value)
        .sum();
    assert!((map_objective(&zero, &t.observations, 10.0) - 5.0 * sum_sq).abs() < 1e-10);
}

#[test]
fn map_objective_ranks_candidates_like_the_negative_log_posterior() {
    let t = noisy_trial(10, 7);
    let (sigma_p2, sigma2) = (1.5, 0.25);
    let lambda = 2.0 * sigma_p2 / sigma2;
    let neg_log_post = |p: &PointSet| {
        -(log_likelihood(p, &t.observations, 1.0 / sigma2)
            + log_point_prior(p, &DVector::zeros(3), &(DMatrix::identity(3, 3) / sigma_p2))
                .unwrap())
    };
    let a = generate_points(10, 3, 70).unwrap();
    let dir = generate_points(10, 3, 71).unwrap();
    let along = |s: f64| PointSet::new(a.matrix() + dir.matrix() * s).unwrap();
    let steps: Vec<f64> = (-20..=20).map(|k| k as f64 * 0.05).collect();
    for &s in &steps {
        for &u in &steps {
            let (x, y) = (along(s), along(u));
            let df = map_objective(&x, &t.observations, lambda)
                - map_objective(&y, &t.observations, lambda);
            let dn = neg_log_post(&x) - neg_log_post(&y);
            // The two differ by the positive factor 2 sigma_p^2.
            assert!((df - 2.0 * sigma_p2 * dn).abs() <= 1e-8 * df.abs().max(1.0));
        }
    }
}

#[test]
fn translation_leaves_residuals_unchanged() {
    let t = noisy_trial(12, 2);
    let p = generate_points(12, 3, 21).unwrap();
    let shifted = PointSet::new(p.matrix().map(|v| v + 2.5)).unwrap();
    let a = residual_sum_squares(&p, &t.observations);
    let b = residual_sum_squares(&shifted, &t.observations);
    assert!((a - b).abs() <= 1e-10 * a);
    let prec = DMatrix::identity(3, 3);
    let mean = DVector::zeros(3);
    assert!(
        log_point_prior(&p, &mean, &prec).unwrap()
            != log_point_prior(&shifted, &mean, &prec).unwrap()
    );
}
