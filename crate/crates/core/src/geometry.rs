//! Point sets, Euclidean distance matrices and Gram matrices.
//!
//! A distance matrix here always stores *squared* distances,
//! `D[i][j] = |p_i - p_j|^2`. The Gram matrix of a point set is `G = P P^T`
//! and the two are linked by `D = diag(G) 1^T - 2 G + 1 diag(G)^T`.
//! Going back from `D` to a Gram matrix requires fixing the translation,
//! which double centering does by pinning the centroid at the origin.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{EdmError, Result};

/// Relative cutoff used for PSD checks (scaled by the largest eigenvalue magnitude).
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// `n` points in `d` dimensions, one point per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet(DMatrix<f64>);

impl PointSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(EdmError::InvalidParameter(format!(
                "point set must be at least 1x1, got {}x{}",
                points.nrows(),
                points.ncols()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(EdmError::InvalidParameter(
                "point coordinates must be finite".into(),
            ));
        }
        Ok(Self(points))
    }

    /// Builds a point set from row-major coordinates.
    pub fn from_row_slice(n: usize, d: usize, coords: &[f64]) -> Result<Self> {
        if coords.len() != n * d {
            return Err(EdmError::ShapeMismatch {
                expected: format!("{} coordinates", n * d),
                actual: format!("{}", coords.len()),
            });
        }
        Self::new(DMatrix::from_row_slice(n, d, coords))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.0.row(i).transpose()
    }

    /// Coordinates flattened row by row.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (n, d) = self.0.shape();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            for k in 0..d {
                out.push(self.0[(i, k)]);
            }
        }
        out
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        (0..self.dim())
            .map(|k| {
                let diff = self.0[(i, k)] - self.0[(j, k)];
                diff * diff
            })
            .sum()
    }

    /// Squared Frobenius norm, equal to `trace(P P^T)`.
    pub fn frobenius_norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }
}

/// Symmetric, hollow, nonnegative matrix of squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(DMatrix<f64>);

impl DistanceMatrix {
    /// Checks every invariant exactly: square, symmetric, zero diagonal,
    /// finite and nonnegative entries.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let report = EdmReport::inspect(&entries);
        if !report.is_square {
            return Err(EdmError::ShapeMismatch {
                expected: "square matrix".into(),
                actual: format!("{}x{}", entries.nrows(), entries.ncols()),
            });
        }
        if let Some(v) = report.violations.first() {
            return Err(EdmError::InvalidParameter(format!(
                "not a distance matrix: {v}"
            )));
        }
        Ok(Self(entries))
    }

    /// Wraps a matrix the caller already knows to be a valid EDM.
    pub(crate) fn from_trusted(entries: DMatrix<f64>) -> Self {
        Self(entries)
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        row_major(&self.0)
    }
}

/// Symmetric positive semidefinite inner-product matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(EdmError::ShapeMismatch {
                expected: "square matrix".into(),
                actual: format!("{}x{}", entries.nrows(), entries.ncols()),
            });
        }
        Ok(Self(entries))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn edm_from_points(p: &PointSet) -> DistanceMatrix {
    let n = p.n();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = p.squared_distance(i, j);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    DistanceMatrix(out)
}

pub fn gram_from_points(p: &PointSet) -> GramMatrix {
    let m = p.matrix();
    GramMatrix(m * m.transpose())
}

/// `D[i][j] = G[i][i] - 2 G[i][j] + G[j][j]`.
///
/// Roundoff can leave tiny negative off-diagonal values for points that
/// nearly coincide; those are clamped to zero, and the output is
/// symmetrized and given an exact zero diagonal.
pub fn edm_from_gram(g: &GramMatrix) -> DistanceMatrix {
    let m = g.matrix();
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let gij = 0.5 * (m[(i, j)] + m[(j, i)]);
            let v = (m[(i, i)] - 2.0 * gij + m[(j, j)]).max(0.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    DistanceMatrix(out)
}

/// Result of double-centering a distance matrix.
#[derive(Debug, Clone)]
pub struct CenteredGram {
    pub gram: GramMatrix,
    /// Most negative (smallest) eigenvalue of the centered Gram matrix.
    pub min_eigenvalue: f64,
    /// False when `min_eigenvalue < -PSD_TOLERANCE * max|eigenvalue|`,
    /// i.e. the input was not the EDM of any point set.
    pub is_psd: bool,
}

/// `G = -1/2 J D J` with `J = I - (1/n) 1 1^T`.
pub fn gram_from_edm_centered(d: &DistanceMatrix) -> CenteredGram {
    let gram = double_center(d.matrix());
    let (min_eigenvalue, is_psd) = psd_check(&gram);
    CenteredGram {
        gram: GramMatrix(gram),
        min_eigenvalue,
        is_psd,
    }
}

fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| m.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| m.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut g = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (m[(i, j)] - row_means[i] - col_means[j] + grand)
    });
    symmetrize(&mut g);
    g
}

fn psd_check(g: &DMatrix<f64>) -> (f64, bool) {
    if g.nrows() == 0 {
        return (0.0, true);
    }
    let eig = g.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax();
    (min, min >= -PSD_TOLERANCE * scale)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `|estimate - truth|_F / |truth|_F`.
pub fn relative_error(estimate: &DistanceMatrix, truth: &DistanceMatrix) -> Result<f64> {
    relative_frobenius_error(estimate.matrix(), truth.matrix())
}

pub fn relative_frobenius_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(EdmError::ShapeMismatch {
            expected: format!("{:?}", truth.shape()),
            actual: format!("{:?}", estimate.shape()),
        });
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(EdmError::ZeroReference);
    }
    Ok((estimate - truth).norm() / denom)
}

/// Number of singular values strictly above `tolerance * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tolerance: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let largest = sv.max();
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tolerance * largest).count()
}

/// One structural problem found in a candidate distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Asymmetric {
        i: usize,
        j: usize,
        upper: f64,
        lower: f64,
    },
    NonzeroDiagonal {
        i: usize,
        value: f64,
    },
    Negative {
        i: usize,
        j: usize,
        value: f64,
    },
    NonFinite {
        i: usize,
        j: usize,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Asymmetric { i, j, upper, lower } => {
                write!(f, "asymmetric entry ({i},{j}): {upper} vs {lower}")
            }
            Violation::NonzeroDiagonal { i, value } => {
                write!(f, "nonzero diagonal ({i},{i}): {value}")
            }
            Violation::Negative { i, j, value } => write!(f, "negative entry ({i},{j}): {value}"),
            Violation::NonFinite { i, j } => write!(f, "non-finite entry ({i},{j})"),
        }
    }
}

/// Structural and spectral diagnostics for a candidate EDM.
#[derive(Debug, Clone, Serialize)]
pub struct EdmReport {
    pub n: usize,
    pub is_square: bool,
    pub violations: Vec<Violation>,
    /// Populated by [`EdmReport::analyze`]; `None` from [`EdmReport::inspect`].
    pub edm_rank: Option<usize>,
    pub gram_rank: Option<usize>,
    pub gram_min_eigenvalue: Option<f64>,
    pub gram_is_psd: Option<bool>,
}

impl EdmReport {
    /// Structural checks only. Asymmetry is reported once per unordered pair.
    pub fn inspect(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let is_square = m.is_square();
        let mut violations = Vec::new();
        if is_square {
            for i in 0..n {
                for j in 0..n {
                    let v = m[(i, j)];
                    if !v.is_finite() {
                        violations.push(Violation::NonFinite { i, j });
                        continue;
                    }
                    if i == j {
                        if v != 0.0 {
                            violations.push(Violation::NonzeroDiagonal { i, value: v });
                        }
                        continue;
                    }
                    if v < 0.0 {
                        violations.push(Violation::Negative { i, j, value: v });
                    }
                    if i < j && m[(j, i)].is_finite() && v != m[(j, i)] {
                        violations.push(Violation::Asymmetric {
                            i,
                            j,
                            upper: v,
                            lower: m[(j, i)],
                        });
                    }
                }
            }
        }
        Self {
            n,
            is_square,
            violations,
            edm_rank: None,
            gram_rank: None,
            gram_min_eigenvalue: None,
            gram_is_psd: None,
        }
    }

    /// Structural checks plus ranks of the matrix and of its double-centered Gram.
    pub fn analyze(m: &DMatrix<f64>) -> Self {
        let mut report = Self::inspect(m);
        if !report.is_square || m.iter().any(|x| !x.is_finite()) {
            return report;
        }
        let gram = double_center(m);
        let (min, psd) = psd_check(&gram);
        report.edm_rank = Some(numerical_rank(m, RANK_TOLERANCE));
        report.gram_rank = Some(numerical_rank(&gram, RANK_TOLERANCE));
        report.gram_min_eigenvalue = Some(min);
        report.gram_is_psd = Some(psd);
        report
    }

    pub fn is_valid(&self) -> bool {
        self.is_square && self.violations.is_empty() && self.gram_is_psd.unwrap_or(true)
    }

    /// Whether the ranks respect the bounds for points in `d` dimensions:
    /// rank(D) <= d + 2 and rank(G) <= d.
    pub fn within_rank_bounds(&self, d: usize) -> bool {
        self.edm_rank.is_none_or(|r| r <= d + 2) && self.gram_rank.is_none_or(|r| r <= d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn pts(rows: &[&[f64]]) -> PointSet {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        PointSet::from_row_slice(rows.len(), d, &flat).unwrap()
    }

    #[test]
    fn coincident_points_give_zero_edm() {
        let p = pts(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(edm_from_points(&p).matrix(), &DMatrix::zeros(2, 2));
    }

    #[test]
    fn three_four_five() {
        let p = pts(&[&[0.0, 0.0], &[3.0, 4.0]]);
        assert_eq!(
            edm_from_points(&p).matrix(),
            &dmatrix![0.0, 25.0; 25.0, 0.0]
        );
        let g = gram_from_points(&p);
        assert_eq!(edm_from_gram(&g).matrix(), &dmatrix![0.0, 25.0; 25.0, 0.0]);
    }

    #[test]
    fn gram_small_cases() {
        let p = pts(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(gram_from_points(&p).matrix(), &DMatrix::identity(2, 2));
        let p = pts(&[&[2.0, 0.0]]);
        assert_eq!(gram_from_points(&p).matrix(), &dmatrix![4.0]);
    }

    #[test]
    fn zero_gram_and_zero_edm() {
        let g = GramMatrix::new(DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(edm_from_gram(&g), DistanceMatrix::zeros(4));
        let c = gram_from_edm_centered(&DistanceMatrix::zeros(4));
        assert_eq!(c.gram.matrix(), &DMatrix::zeros(4, 4));
        assert!(c.is_psd);
    }

    #[test]
    fn centered_round_trip_small() {
        let p = pts(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let d = edm_from_points(&p);
        let c = gram_from_edm_centered(&d);
        let back = edm_from_gram(&c.gram);
        assert!((back.matrix() - d.matrix()).amax() <= 1e-10);
    }

    #[test]
    fn relative_error_identities() {
        let truth = edm_from_points(&pts(&[&[0.0, 0.0], &[3.0, 4.0], &[1.0, -1.0]]));
        assert_eq!(relative_error(&truth, &truth).unwrap(), 0.0);
        let zero = DistanceMatrix::zeros(3);
        assert!((relative_error(&zero, &truth).unwrap() - 1.0).abs() < 1e-15);
        let doubled = DistanceMatrix::from_trusted(truth.matrix() * 2.0);
        assert!((relative_error(&doubled, &truth).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            relative_error(&truth, &zero),
            Err(EdmError::ZeroReference)
        ));
    }

    #[test]
    fn rank_of_identity() {
        assert_eq!(numerical_rank(&DMatrix::identity(3, 3), RANK_TOLERANCE), 3);
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), RANK_TOLERANCE), 0);
    }

    #[test]
    fn invalid_point_sets_rejected() {
        assert!(PointSet::new(DMatrix::zeros(0, 3)).is_err());
        assert!(PointSet::new(dmatrix![f64::NAN, 1.0]).is_err());
        assert!(PointSet::from_row_slice(2, 2, &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn report_flags_asymmetry_and_diagonal() {
        let mut m = dmatrix![0.0, 1.0, 4.0; 1.0, 0.0, 1.0; 4.0, 1.0, 0.0];
        assert!(EdmReport::analyze(&m).violations.is_empty());
        m[(0, 2)] = 5.0;
        let r = EdmReport::analyze(&m);
        assert_eq!(
            r.violations,
            vec![Violation::Asymmetric {
                i: 0,
                j: 2,
                upper: 5.0,
                lower: 4.0
            }]
        );
        let r = EdmReport::analyze(&DMatrix::identity(3, 3));
        assert_eq!(r.violations.len(), 3);
        assert!(matches!(
            r.violations[0],
            Violation::NonzeroDiagonal { i: 0, .. }
        ));
    }

    #[test]
    fn non_edm_fails_psd_check() {
        // Triangle inequality broken on the unsquared distances 1, 1, 3.
        let m = dmatrix![0.0, 1.0, 9.0; 1.0, 0.0, 1.0; 9.0, 1.0, 0.0];
        let c = gram_from_edm_centered(&DistanceMatrix::new(m).unwrap());
        assert!(!c.is_psd);
        assert!(c.min_eigenvalue < 0.0);
    }
}
