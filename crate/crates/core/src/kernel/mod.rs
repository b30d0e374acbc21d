//! Numerical primitives shared by the estimators: least squares with
//! classical/robust/clustered covariance, logistic regression, Mahalanobis
//! matching and the latent-confounder mixture likelihood.
//!
//! Everything here is a pure function of its inputs.

mod logistic;
mod matching;
mod mixture;
mod ols;

pub use logistic::{logistic_fit, logistic_fit_weighted, LogisticFit, LogisticOptions};
pub use matching::{mahalanobis_match, MatchPair, MatchSet};
pub use mixture::{
    mixture_log_likelihood, mixture_mle, mixture_mle_with, MixtureMLEResult, MixtureOptions, MixtureParams,
};
pub use ols::{least_squares_fit, Design, LinearFit, VarianceMode};

use nalgebra::DMatrix;

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Numerically stable `1 / (1 + e^{-z})`.
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn log1p_exp(z: f64) -> f64 {
    if z > 35.0 {
        z
    } else if z < -35.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// `log(e^a + e^b)`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Neumaier-compensated sum; the result depends only on the order of `values`.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
