use edmc::geometry::{
    edm_from_gram, edm_from_points, gram_from_edm_centered, gram_from_points, numerical_rank,
    relative_error, DistanceMatrix, EdmReport, GramMatrix, PointSet, RANK_TOLERANCE,
};
use edmc::synthesis::generate_points;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn brute_force_edm(p: &PointSet) -> DMatrix<f64> {
    let n = p.n();
    DMatrix::from_fn(n, n, |i, j| {
        let mut s = 0.0;
        for k in 0..p.dim() {
            let diff = p.matrix()[(i, k)] - p.matrix()[(j, k)];
            s += diff * diff;
        }
        s
    })
}

/// Rank by counting singular values above `tol * largest`, computed
/// independently of the library's eigenvalue-based rank.
fn svd_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * max).count()
}

fn rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let raw = generate_points(d + 1, d, seed).unwrap().into_matrix();
    raw.rows(0, d).into_owned().qr().q()
}

#[test]
fn edm_matches_brute_force() {
    for seed in 0..20 {
        let p = generate_points(5 + seed as usize, 1 + seed as usize % 3, seed).unwrap();
        let edm = edm_from_points(&p);
        assert!((edm.matrix() - brute_force_edm(&p)).amax() < 1e-12);
    }
}

#[test]
fn edm_from_gram_agrees_with_points() {
    let p = generate_points(12, 3, 5).unwrap();
    let via_gram = edm_from_gram(&gram_from_points(&p));
    assert!(relative_error(&via_gram, &edm_from_points(&p)).unwrap() < 1e-12);
}

#[test]
fn ranks_agree_with_svd() {
    for (n, d, seed) in [(10, 1, 1), (20, 2, 2), (50, 3, 3)] {
        let p = generate_points(n, d, seed).unwrap();
        let edm = edm_from_points(&p);
        let centered = gram_from_edm_centered(&edm);
        assert_eq!(
            numerical_rank(edm.matrix(), RANK_TOLERANCE),
            svd_rank(edm.matrix(), RANK_TOLERANCE)
        );
        assert_eq!(svd_rank(edm.matrix(), RANK_TOLERANCE), d + 2);
        assert_eq!(svd_rank(centered.gram.matrix(), RANK_TOLERANCE), d);
        assert_eq!(numerical_rank(centered.gram.matrix(), RANK_TOLERANCE), d);
    }
}

#[test]
fn centered_gram_is_the_gram_of_centered_points() {
    let p = generate_points(15, 3, 8).unwrap();
    let m = p.matrix();
    let centroid = m.row_mean();
    let centered = DMatrix::from_fn(15, 3, |i, k| m[(i, k)] - centroid[k]);
    let oracle = &centered * centered.transpose();
    let got = gram_from_edm_centered(&edm_from_points(&p));
    assert!(got.is_psd);
    assert!((got.gram.matrix() - oracle).amax() < 1e-10);
}

#[test]
fn report_on_non_euclidean_matrix() {
    // Violates the triangle inequality for squared distances -> indefinite Gram.
    let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 9.0, 1.0, 0.0, 1.0, 9.0, 1.0, 0.0]);
    let r = EdmReport::analyze(&m);
    assert!(r.violations.is_empty());
    assert_eq!(r.gram_is_psd, Some(false));
    assert!(r.gram_min_eigenvalue.unwrap() < 0.0);
    assert!(DistanceMatrix::new(m).is_ok());
}

#[test]
fn gram_requires_square_input() {
    assert!(GramMatrix::new(DMatrix::zeros(2, 3)).is_err());
}

fn points_strategy() -> impl Strategy<Value = (usize, usize, u64)> {
    (5usize..=50, 1usize..=3, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edm_is_symmetric_hollow_nonnegative((n, d, seed) in points_strategy()) {
        let edm = edm_from_points(&generate_points(n, d, seed).unwrap());
        let m = edm.matrix();
        for i in 0..n {
            prop_assert_eq!(m[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                prop_assert!(m[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn edm_is_invariant_under_rigid_motion((n, d, seed) in points_strategy(), shift in -10.0f64..10.0) {
        let p = generate_points(n, d, seed).unwrap();
        let q = rotation(d, seed ^ 1);
        let t = DVector::from_element(d, shift);
        let moved = p.matrix() * q.transpose() + DMatrix::from_fn(n, d, |_, k| t[k]);
        let a = edm_from_points(&p);
        let b = edm_from_points(&PointSet::new(moved).unwrap());
        prop_assert!(relative_error(&b, &a).unwrap() <= 1e-9);
    }

    #[test]
    fn gram_round_trip((n, d, seed) in points_strategy()) {
        let edm = edm_from_points(&generate_points(n, d, seed).unwrap());
        let back = edm_from_gram(&gram_from_edm_centered(&edm).gram);
        prop_assert!(relative_error(&back, &edm).unwrap() <= 1e-9);
    }

    #[test]
    fn rank_bounds_hold((n, d, seed) in points_strategy()) {
        let edm = edm_from_points(&generate_points(n, d, seed).unwrap());
        let r = EdmReport::analyze(edm.matrix());
        prop_assert!(r.is_valid());
        prop_assert!(r.edm_rank.unwrap() <= d + 2);
        prop_assert!(r.gram_rank.unwrap() <= d);
        prop_assert!(r.within_rank_bounds(d));
    }
}
