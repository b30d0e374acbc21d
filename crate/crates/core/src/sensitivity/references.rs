use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{parallel_regression, EstimatorOptions};
use crate::kernel::{logistic_fit, with_intercept};

/// Reference lines for reading a level curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReferences {
    /// Largest `|coefficient|` of an observed binary covariate in the
    /// logistic selection fit of `S` on all covariates.
    pub max_observed_selection: Option<f64>,
    pub selection_covariate: Option<String>,
    /// Unadjusted parallel-regression estimate; `None` when that fit fails
    /// (see `atme_reference_error`).
    pub atme_reference: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atme_reference_error: Option<String>,
    pub no_binary_covariates: bool,
    pub separation: bool,
}

fn is_binary(values: impl Iterator<Item = f64>) -> bool {
    let mut seen = [false; 2];
    for v in values {
        if v == 0.0 {
            seen[0] = true;
        } else if v == 1.0 {
            seen[1] = true;
        } else {
            return false;
        }
    }
    seen[0] && seen[1]
}

/// Observed-confounder benchmarks. The selection fit pools both treatment
/// subsets, since `α̃` is shared between them. Failures of either fit are
/// recorded in the result rather than returned.
pub fn benchmark_references(ds: &Dataset) -> Result<BenchmarkReferences> {
    let (atme_reference, atme_reference_error) = match parallel_regression(ds, &EstimatorOptions::default()) {
        Ok(r) => (Some(r.estimate), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let binary: Vec<usize> = (0..ds.k())
        .filter(|&j| is_binary(ds.x().column(j).iter().copied()))
        .collect();
    let mut out = BenchmarkReferences {
        max_observed_selection: None,
        selection_covariate: None,
        atme_reference,
        atme_reference_error,
        no_binary_covariates: binary.is_empty(),
        separation: false,
    };
    if binary.is_empty() {
        return Ok(out);
    }
    match logistic_fit(&with_intercept(ds.x()), ds.s()) {
        Ok(fit) => {
            let (j, c) = binary.iter().map(|&j| (j, fit.coefficients[j + 1].abs())).fold(
                (binary[0], f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
            out.max_observed_selection = Some(c);
            out.selection_covariate = Some(ds.covariate_names()[j].clone());
        }
        Err(Error::Separation { .. }) => out.separation = true,
        Err(e) => return Err(e),
    }
    Ok(out)
}
