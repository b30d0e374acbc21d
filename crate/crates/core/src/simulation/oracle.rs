use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{generate, DgpConfig, XModel};
use crate::error::{Error, Result};
use crate::estimators::{controlled_interaction, EstimatorOptions};
use crate::kernel::{sigmoid, VarianceMode};

const HERMITE_NODES: usize = 96;
const LEGENDRE_NODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OraclePath {
    /// Finite covariate support summed exactly.
    Enumeration,
    /// Gaussian quadrature over a continuous covariate.
    Quadrature,
    /// Least squares on one large simulated draw.
    Simulation,
}

/// Probability limit of the controlled-interaction coefficient minus `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBias {
    pub bias: f64,
    /// Population coefficient on `T·S`.
    pub limit: f64,
    pub path: OraclePath,
    /// Quadrature nodes, support points or simulated rows.
    pub points: usize,
    /// Sampling standard error of `limit`; zero for the exact paths.
    pub std_error: f64,
}

/// Golub–Welsch: nodes and weights from the symmetric Jacobi matrix of a
/// three-term recurrence with zero diagonal.
fn golub_welsch(off_diagonal: impl Fn(usize) -> f64, m: usize, mass: f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(m, m);
    for i in 1..m {
        let b = off_diagonal(i);
        j[(i - 1, i)] = b;
        j[(i, i - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mass * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and probability weights for `E[f(X)]`, `X ~ N(0, 1)`.
pub(crate) fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    golub_welsch(|i| (i as f64).sqrt(), m, 1.0)
}

/// Nodes and probability weights for `E[f(X)]`, `X ~ U(lo, hi)`.
pub(crate) fn gauss_legendre(m: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = golub_welsch(
        |i| {
            let k = i as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        m,
        1.0,
    );
    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    (nodes.iter().map(|z| mid + half * z).collect(), weights)
}

/// Coefficient on `T·S` of the population projection of `Y` on
/// `(1, T, S, X, T·S)`, integrating `T`, `U` and `S` exactly and `X` over the
/// given nodes.
fn projection(cfg: &DgpConfig, nodes: &[f64], weights: &[f64]) -> Result<f64> {
    let mut m = DMatrix::<f64>::zeros(5, 5);
    let mut v = DVector::<f64>::zeros(5);
    let latent: &[(f64, f64)] = if cfg.confounder.is_some() {
        &[(0.0, 0.5), (1.0, 0.5)]
    } else {
        &[(0.0, 1.0)]
    };
    for (&x, &wx) in nodes.iter().zip(weights) {
        for t in 0..2u8 {
            let pt = if t == 1 { cfg.p_treat } else { 1.0 - cfg.p_treat };
            for &(u, pu) in latent {
                let (shift, kappa) = match cfg.confounder {
                    Some(c) => (c.alpha_u * u, if t == 1 { c.kappa1 } else { c.kappa0 }),
                    None => (0.0, 0.0),
                };
                let q = sigmoid(cfg.s_model.a + cfg.s_model.b * x + shift);
                for s in 0..2u8 {
                    let ps = if s == 1 { q } else { 1.0 - q };
                    let w = wx * pt * pu * ps;
                    if w == 0.0 {
                        continue;
                    }
                    let (tf, sf) = (f64::from(t), f64::from(s));
                    let row = DVector::from_vec(vec![1.0, tf, sf, x, tf * sf]);
                    let mean = cfg.alpha
                        + cfg.tau * tf
                        + cfg.omega * sf
                        + cfg.beta * x
                        + cfg.delta * tf * sf
                        + cfg.xi * tf * x
                        + kappa * u;
                    m += &row * row.transpose() * w;
                    v += &row * (w * mean);
                }
            }
        }
    }
    let chol = m.cholesky().ok_or_else(|| Error::RankDeficient {
        columns: vec!["population design".into()],
    })?;
    Ok(chol.solve(&v)[4])
}

/// Population bias of the controlled-interaction estimator for `cfg`.
///
/// A discrete covariate is enumerated exactly. Normal and uniform covariates
/// use 96-node Gauss–Hermite and 64-node Gauss–Legendre quadrature; the
/// integrand is smooth, so the error is far below Monte Carlo resolution.
/// [`population_projection_by_simulation`] offers a large-draw check.
pub fn oracle_controlled_interaction_bias(cfg: &DgpConfig) -> Result<OracleBias> {
    cfg.validate()?;
    let (nodes, weights, path) = match &cfg.x_model {
        XModel::StandardNormal => {
            let (n, w) = gauss_hermite(HERMITE_NODES);
            (n, w, OraclePath::Quadrature)
        }
        XModel::Uniform { lo, hi } => {
            let (n, w) = gauss_legendre(LEGENDRE_NODES, *lo, *hi);
            (n, w, OraclePath::Quadrature)
        }
        XModel::Discrete { levels, probs } => (levels.clone(), probs.clone(), OraclePath::Enumeration),
    };
    let limit = projection(cfg, &nodes, &weights)?;
    Ok(OracleBias {
        bias: limit - cfg.delta,
        limit,
        path,
        points: nodes.len(),
        std_error: 0.0,
    })
}

/// Controlled-interaction coefficient on one simulated draw of `rows` units
/// (seeded by `cfg.seed`), with its HC1 standard error.
pub fn population_projection_by_simulation(cfg: &DgpConfig, rows: usize) -> Result<OracleBias> {
    let ds = generate(&cfg.clone().with_n(rows))?;
    let opts = EstimatorOptions {
        variance: Some(VarianceMode::HeteroskedasticityRobust),
        ..EstimatorOptions::default()
    };
    let r = controlled_interaction(&ds, &opts)?;
    Ok(OracleBias {
        bias: r.estimate - cfg.delta,
        limit: r.estimate,
        path: OraclePath::Simulation,
        points: rows,
        std_error: r.std_error,
    })
}
