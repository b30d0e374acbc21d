//! Maximum likelihood for the binary latent-confounder model used by the
//! sensitivity analysis, fitted within one treatment subset:
//!
//! ```text
//! U ~ Bernoulli(1/2)
//! P(S = 1 | X, U) = logistic(ζ + Xη + αU)
//! Y | S, X, U ~ Normal(ξ + γS + Xβ + κU, σ²)
//! ```
//!
//! `α` and `κ` are fixed by the analyst; the remaining parameters are found
//! by expectation-maximization with `U` marginalized out.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use super::{
    least_squares_fit, log1p_exp, log_add_exp, logistic_fit, logistic_fit_weighted, with_intercept, Design,
    LogisticOptions, VarianceMode,
};
use crate::data::Dataset;
use crate::error::{Error, Result};

const LN_HALF: f64 = -std::f64::consts::LN_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    /// Selection intercept.
    pub zeta: f64,
    /// Selection slopes on the covariates.
    pub eta: Vec<f64>,
    /// Outcome intercept.
    pub xi: f64,
    /// Moderator coefficient in the outcome equation.
    pub gamma: f64,
    /// Outcome slopes on the covariates.
    pub beta: Vec<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOptions {
    /// Stop once the log-likelihood changes by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Warm start; `None` starts from the fits that ignore `U`.
    pub init: Option<MixtureParams>,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMLEResult {
    pub params: MixtureParams,
    pub alpha: f64,
    pub kappa: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// EM steps at which the log-likelihood fell (beyond rounding); zero for
    /// a healthy run.
    pub ll_decreases: usize,
}

struct Problem<'a> {
    y: &'a [f64],
    s: Vec<f64>,
    alpha: f64,
    kappa: f64,
    /// `[1, X]`, n × (k+1)
    selection: DMatrix<f64>,
    /// `[1, X; 1, X]` for the two values of `U`
    stacked: DMatrix<f64>,
    stacked_s: Vec<f64>,
    stacked_offset: Vec<f64>,
    /// `[1, S, X]`, n × (k+2)
    outcome: DMatrix<f64>,
    /// Pseudo-inverse of `outcome`.
    projector: DMatrix<f64>,
    variance_floor: f64,
}

impl Problem<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn outcome_mean(&self, p: &MixtureParams) -> DVector<f64> {
        let mut theta = Vec::with_capacity(p.beta.len() + 2);
        theta.push(p.xi);
        theta.push(p.gamma);
        theta.extend(&p.beta);
        &self.outcome * DVector::from_vec(theta)
    }

    fn selection_index(&self, p: &MixtureParams) -> DVector<f64> {
        let mut coef = Vec::with_capacity(p.eta.len() + 1);
        coef.push(p.zeta);
        coef.extend(&p.eta);
        &self.selection * DVector::from_vec(coef)
    }

    /// Observed-data log-likelihood and posterior `P(U = 1 | data)` per row.
    fn e_step(&self, p: &MixtureParams) -> (f64, Vec<f64>) {
        let mu = self.outcome_mean(p);
        let idx = self.selection_index(p);
        let var = p.sigma * p.sigma;
        let log_norm = -HALF_LN_2PI - p.sigma.ln();
        let mut ll = 0.0;
        let mut w = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let s = self.s[i];
            let sel0 = s * idx[i] - log1p_exp(idx[i]);
            let e1 = idx[i] + self.alpha;
            let sel1 = s * e1 - log1p_exp(e1);
            let r0 = self.y[i] - mu[i];
            let r1 = r0 - self.kappa;
            let l0 = sel0 + log_norm - r0 * r0 / (2.0 * var);
            let l1 = sel1 + log_norm - r1 * r1 / (2.0 * var);
            let total = log_add_exp(l0, l1);
            ll += LN_HALF + total;
            w.push((l1 - total).exp());
        }
        (ll, w)
    }

    fn m_step(&self, w: &[f64], prev: &MixtureParams) -> Result<MixtureParams> {
        let n = self.n();
        let mut weights = Vec::with_capacity(2 * n);
        weights.extend(w.iter().map(|wi| 1.0 - wi));
        weights.extend_from_slice(w);
        let mut init = Vec::with_capacity(prev.eta.len() + 1);
        init.push(prev.zeta);
        init.extend(&prev.eta);
        let sel = logistic_fit_weighted(
            &self.stacked,
            &self.stacked_s,
            &weights,
            &self.stacked_offset,
            Some(&DVector::from_vec(init)),
            LogisticOptions {
                gradient_tolerance: 1e-11,
                max_iterations: 100,
            },
        )?;

        // Σ_u w_iu (y_i − κu − z_iθ)² = (y_i − κw_i − z_iθ)² + κ² w_i(1 − w_i)
        let target = DVector::from_fn(n, |i, _| self.y[i] - self.kappa * w[i]);
        let theta = &self.projector * &target;
        let resid = &target - &self.outcome * &theta;
        let spread: f64 = w.iter().map(|wi| wi * (1.0 - wi)).sum();
        let var = (resid.norm_squared() + self.kappa * self.kappa * spread) / n as f64;
        if !(var > self.variance_floor) {
            return Err(Error::DegenerateOutcome);
        }
        Ok(MixtureParams {
            zeta: sel.coefficients[0],
            eta: sel.coefficients.iter().skip(1).copied().collect(),
            xi: theta[0],
            gamma: theta[1],
            beta: theta.iter().skip(2).copied().collect(),
            sigma: var.sqrt(),
        })
    }
}

/// Observed-data log-likelihood of `params` on `subset` at fixed `(α, κ)`.
pub fn mixture_log_likelihood(subset: &Dataset, alpha: f64, kappa: f64, params: &MixtureParams) -> Result<f64> {
    let problem = build_problem(subset, alpha, kappa)?;
    Ok(problem.e_step(params).0)
}

fn build_problem(subset: &Dataset, alpha: f64, kappa: f64) -> Result<Problem<'_>> {
    if !alpha.is_finite() || !kappa.is_finite() {
        return Err(Error::InvalidArgument("sensitivity parameters must be finite".into()));
    }
    let n = subset.n();
    let k = subset.k();
    if n <= k + 2 {
        return Err(Error::InsufficientRows { rows: n, params: k + 2 });
    }
    let ones = subset.s().iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleLevelModerator {
            treatment: subset.t().first().copied().unwrap_or(0),
        });
    }
    let y = subset.y();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var_y = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if !(var_y > 0.0) {
        return Err(Error::DegenerateOutcome);
    }

    let s: Vec<f64> = subset.s().iter().map(|&v| f64::from(v)).collect();
    let selection = with_intercept(subset.x());
    let mut stacked = DMatrix::zeros(2 * n, k + 1);
    stacked.rows_mut(0, n).copy_from(&selection);
    stacked.rows_mut(n, n).copy_from(&selection);
    let mut stacked_s = s.clone();
    stacked_s.extend_from_slice(&s);
    let mut stacked_offset = vec![0.0; n];
    stacked_offset.extend(std::iter::repeat_n(alpha, n));

    let outcome = selection.clone().insert_column(1, 0.0);
    let mut outcome = outcome;
    for i in 0..n {
        outcome[(i, 1)] = s[i];
    }
    let projector = SVD::new(outcome.clone(), true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    Ok(Problem {
        y,
        s,
        alpha,
        kappa,
        selection,
        stacked,
        stacked_s,
        stacked_offset,
        outcome,
        projector,
        variance_floor: var_y * 1e-14,
    })
}

fn outcome_design(subset: &Dataset) -> Design {
    let mut d = Design::new(subset.n())
        .intercept()
        .column("S", subset.s().iter().map(|&v| f64::from(v)));
    for (j, name) in subset.covariate_names().iter().enumerate() {
        d = d.column(name.clone(), subset.x().column(j).iter().copied());
    }
    d
}

/// Starting values from the selection and outcome fits that ignore `U`.
fn cold_start(subset: &Dataset) -> Result<MixtureParams> {
    let sel = logistic_fit(&with_intercept(subset.x()), subset.s())?;
    let ols = least_squares_fit(&outcome_design(subset), subset.y(), VarianceMode::Classical, None)?;
    let sigma = (ols.rss() / subset.n() as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::DegenerateOutcome);
    }
    Ok(MixtureParams {
        zeta: sel.coefficients[0],
        eta: sel.coefficients.iter().skip(1).copied().collect(),
        xi: ols.coefficients[0],
        gamma: ols.coefficients[1],
        beta: ols.coefficients.iter().skip(2).copied().collect(),
        sigma,
    })
}

/// [`mixture_mle_with`] using default options and a cold start.
pub fn mixture_mle(subset: &Dataset, alpha: f64, kappa: f64) -> Result<MixtureMLEResult> {
    mixture_mle_with(subset, alpha, kappa, &MixtureOptions::default())
}

/// Maximizes the mixture likelihood over `(ζ, η, ξ, γ, β, σ)` at fixed
/// `(α, κ)`.
///
/// Each M-step solves a weighted logistic regression on the rows duplicated
/// for `U = 0, 1` (offset `αU`) and a least-squares fit of `y − κ·E[U]`. A
/// cold start runs the first M-step with posterior weights ½. Returns
/// `converged = false` when the iteration cap is hit first.
pub fn mixture_mle_with(subset: &Dataset, alpha: f64, kappa: f64, opts: &MixtureOptions) -> Result<MixtureMLEResult> {
    let problem = build_problem(subset, alpha, kappa)?;
    let mut params = match &opts.init {
        Some(p) => {
            if p.eta.len() != subset.k() || p.beta.len() != subset.k() {
                return Err(Error::InvalidArgument("warm start has the wrong dimension".into()));
            }
            p.clone()
        }
        None => {
            let start = cold_start(subset)?;
            problem.m_step(&vec![0.5; subset.n()], &start)?
        }
    };

    let (mut ll, mut w) = problem.e_step(&params);
    let mut converged = false;
    let mut iterations = 0;
    let mut ll_decreases = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        params = problem.m_step(&w, &params)?;
        let (next_ll, next_w) = problem.e_step(&params);
        let slack = 1e-9 * ll.abs().max(1.0);
        if next_ll < ll - slack {
            ll_decreases += 1;
        }
        debug_assert!(next_ll >= ll - slack, "EM log-likelihood decreased: {ll} -> {next_ll}");
        let change = (next_ll - ll).abs();
        ll = next_ll;
        w = next_w;
        if change < opts.tolerance {
            converged = true;
            break;
        }
    }

    Ok(MixtureMLEResult {
        params,
        alpha,
        kappa,
        log_likelihood: ll,
        iterations,
        converged,
        ll_decreases,
    })
}
