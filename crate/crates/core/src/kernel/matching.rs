use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RIDGE_START: f64 = 1e-8;
const INVERTIBLE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    /// Row of a group-1 unit.
    pub target: usize,
    /// Row of the group-0 unit it is matched to.
    pub matched: usize,
    pub distance: f64,
}

/// Nearest-neighbour matches of every group-1 unit to a group-0 unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    /// One pair per group-1 row, in row order.
    pub pairs: Vec<MatchPair>,
    /// Times each row is used as a match (zero for unused and group-1 rows).
    pub multiplicity: Vec<usize>,
    /// Inverse of the (possibly ridged) pooled covariance.
    pub inverse_covariance: Vec<Vec<f64>>,
    /// Ridge added to the covariance diagonal; zero when none was needed.
    pub ridge: f64,
}

impl MatchSet {
    /// Distinct group-0 rows used at least once.
    pub fn distinct_matched(&self) -> usize {
        self.multiplicity.iter().filter(|&&m| m > 0).count()
    }
}

fn pooled_covariance(features: &DMatrix<f64>) -> DMatrix<f64> {
    let n = features.nrows() as f64;
    let means = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    (&cov + cov.transpose()) * 0.5
}

/// Returns the Cholesky factor of the covariance (ridged if needed) and the
/// ridge used.
fn regularized_factor(cov: &DMatrix<f64>) -> (nalgebra::Cholesky<f64, nalgebra::Dyn>, f64) {
    let k = cov.nrows();
    let invertible = |m: &DMatrix<f64>| {
        let eig = m.clone().symmetric_eigenvalues();
        let max = eig.max();
        max > 0.0 && eig.min() > INVERTIBLE_RATIO * max
    };
    if invertible(cov) {
        if let Some(ch) = cov.clone().cholesky() {
            return (ch, 0.0);
        }
    }
    let mean_diag = cov.trace() / k as f64;
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut eps = RIDGE_START;
    loop {
        let ridge = eps * base;
        let m = cov + DMatrix::identity(k, k) * ridge;
        if invertible(&m) {
            if let Some(ch) = m.cholesky() {
                return (ch, ridge);
            }
        }
        eps *= 10.0;
    }
}

/// Matches every row with `group = 1` to its Mahalanobis-nearest row with
/// `group = 0`, with replacement.
///
/// The metric uses the inverse sample covariance of all rows. A singular
/// covariance gets a ridge `ε · mean(diag)` with ε starting at 1e-8 and
/// growing tenfold until the matrix is invertible. Ties go to the lowest row
/// index.
pub fn mahalanobis_match(features: &DMatrix<f64>, group: &[u8], with_replacement: bool) -> Result<MatchSet> {
    if !with_replacement {
        return Err(Error::Unsupported("matching without replacement".into()));
    }
    let (n, k) = (features.nrows(), features.ncols());
    if group.len() != n {
        return Err(Error::LengthMismatch {
            column: "group".into(),
            expected: n,
            found: group.len(),
        });
    }
    if n < 2 {
        return Err(Error::InsufficientRows { rows: n, params: 2 });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("matching needs at least one feature".into()));
    }
    let controls: Vec<usize> = (0..n).filter(|&i| group[i] == 0).collect();
    let targets: Vec<usize> = (0..n).filter(|&i| group[i] == 1).collect();
    if controls.is_empty() || targets.is_empty() {
        return Err(Error::InvalidArgument("matching needs both groups non-empty".into()));
    }

    let cov = pooled_covariance(features);
    let (chol, ridge) = regularized_factor(&cov);
    // whitened rows: z = L⁻¹ x, so that ‖z_i − z_j‖ is the Mahalanobis distance
    let whitened = chol
        .l()
        .solve_lower_triangular(&features.transpose())
        .expect("Cholesky factor is non-singular");
    let inverse = chol.inverse();

    let mut multiplicity = vec![0usize; n];
    let mut pairs = Vec::with_capacity(targets.len());
    for &i in &targets {
        let zi = whitened.column(i);
        let mut best = (f64::INFINITY, usize::MAX);
        for &j in &controls {
            let d2 = (zi - whitened.column(j)).norm_squared();
            if d2 < best.0 {
                best = (d2, j);
            }
        }
        multiplicity[best.1] += 1;
        pairs.push(MatchPair {
            target: i,
            matched: best.1,
            distance: best.0.sqrt(),
        });
    }

    Ok(MatchSet {
        pairs,
        multiplicity,
        inverse_covariance: inverse.row_iter().map(|r| r.iter().copied().collect()).collect(),
        ridge,
    })
}
