use serde::{Deserialize, Serialize};

use super::{CellCounts, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{logistic_fit, with_intercept};

pub const DEFAULT_SUPPORT_EPSILON: f64 = 0.01;

/// Overlap diagnostics for the moderator within each treatment subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub cell_counts: CellCounts,
    pub epsilon: f64,
    /// Estimated `P(S = 1 | X)` range in the `T = 0` and `T = 1` subsets;
    /// `None` when no propensity model could be fit.
    pub propensity_range: [Option<(f64, f64)>; 2],
    pub any_empty_cell: bool,
    /// Every estimated propensity lies in `[ε, 1 − ε]`.
    pub within_bounds: bool,
    pub separation: [bool; 2],
    pub notes: Vec<String>,
}

/// Checks that every (T, S) cell is populated and that the moderator
/// propensity stays away from 0 and 1 within each treatment subset.
///
/// Never fails on weak support; the flags are for the caller to act on.
pub fn check_common_support(ds: &Dataset, epsilon: f64) -> Result<SupportReport> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    let cell_counts = ds.cell_counts();
    let mut report = SupportReport {
        cell_counts,
        epsilon,
        propensity_range: [None, None],
        any_empty_cell: cell_counts.first_empty().is_some(),
        within_bounds: true,
        separation: [false, false],
        notes: Vec::new(),
    };

    let (d0, d1) = ds.split_by_treatment();
    for (arm, sub) in [(0usize, &d0), (1, &d1)] {
        let n1 = sub.s().iter().filter(|&&s| s == 1).count();
        if ds.k() == 0 || n1 == 0 || n1 == sub.n() {
            let share = n1 as f64 / sub.n() as f64;
            report.propensity_range[arm] = Some((share, share));
            continue;
        }
        match logistic_fit(&with_intercept(sub.x()), sub.s()) {
            Ok(fit) => {
                let probs = fit.fitted_probabilities(&with_intercept(sub.x()));
                let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                report.propensity_range[arm] = Some((lo, hi));
                if !fit.converged {
                    report
                        .notes
                        .push(format!("propensity fit in T = {arm} did not converge"));
                }
            }
            Err(Error::Separation { .. }) => {
                report.separation[arm] = true;
                report
                    .notes
                    .push(format!("covariates separate the moderator in T = {arm}"));
            }
            Err(e) => report.notes.push(format!("propensity fit in T = {arm} failed: {e}")),
        }
    }
    report.within_bounds = report
        .propensity_range
        .iter()
        .all(|r| matches!(r, Some((lo, hi)) if *lo >= epsilon && *hi <= 1.0 - epsilon));
    Ok(report)
}
