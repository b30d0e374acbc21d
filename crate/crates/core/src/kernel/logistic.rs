use nalgebra::{DMatrix, DVector};

use super::{log1p_exp, sigmoid};
use crate::error::{Error, Result};

/// Linear predictors beyond this magnitude, reached without convergence,
/// are taken as evidence that the coefficients diverge.
const SEPARATION_ETA: f64 = 20.0;
const PROB_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    /// Bound on the norm of the mean score.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Binary logistic regression fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Euclidean norm of the weighted-mean score at the final coefficients.
    pub gradient_norm: f64,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(self.coefficients.iter()).map(|(a, b)| a * b).sum()
    }

    /// `P(S = 1 | row)`, kept strictly inside (0, 1).
    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(row)).clamp(PROB_FLOOR, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn fitted_probabilities(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (x * &self.coefficients)
            .iter()
            .map(|&eta| sigmoid(eta).clamp(PROB_FLOOR, 1.0 - f64::EPSILON / 2.0))
            .collect()
    }
}

/// Unweighted logistic regression of `s` on `x` (intercept column included
/// by the caller) by Newton/IRLS iterations.
///
/// Fails with [`Error::Separation`] when the coefficients diverge, carrying
/// the last iterate.
pub fn logistic_fit(x: &DMatrix<f64>, s: &[u8]) -> Result<LogisticFit> {
    let n = x.nrows();
    if s.len() != n {
        return Err(Error::LengthMismatch {
            column: "moderator".into(),
            expected: n,
            found: s.len(),
        });
    }
    if n <= x.ncols() + 1 {
        return Err(Error::InsufficientRows {
            rows: n,
            params: x.ncols(),
        });
    }
    let ones = s.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::InvalidArgument("logistic fit needs both outcome classes".into()));
    }
    let sf: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
    logistic_fit_weighted(x, &sf, &vec![1.0; n], &vec![0.0; n], None, LogisticOptions::default())
}

fn weighted_log_likelihood(eta: &DVector<f64>, s: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(s)
        .zip(w)
        .map(|((&e, &si), &wi)| if wi == 0.0 { 0.0 } else { wi * (si * e - log1p_exp(e)) })
        .sum()
}

/// Weighted logistic regression with a fixed per-row offset in the linear
/// predictor: maximizes `Σ wᵢ [sᵢ ηᵢ − log(1 + e^{ηᵢ})]`, `ηᵢ = xᵢβ + offsetᵢ`.
///
/// `s` may hold fractional responses in [0, 1]. Each Newton step is halved
/// until the objective does not decrease.
pub fn logistic_fit_weighted(
    x: &DMatrix<f64>,
    s: &[f64],
    weights: &[f64],
    offset: &[f64],
    init: Option<&DVector<f64>>,
    opts: LogisticOptions,
) -> Result<LogisticFit> {
    let (n, d) = (x.nrows(), x.ncols());
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return Err(Error::InvalidArgument("logistic fit with zero total weight".into()));
    }
    let off = DVector::from_column_slice(offset);
    let mut beta = init.cloned().unwrap_or_else(|| DVector::zeros(d));
    let mut eta = x * &beta + &off;
    let mut ll = weighted_log_likelihood(&eta, s, weights);
    let mut grad_norm = f64::INFINITY;

    let partial = |beta: &DVector<f64>, iterations: usize, grad_norm: f64, ll: f64| LogisticFit {
        coefficients: beta.clone(),
        converged: false,
        iterations,
        gradient_norm: grad_norm,
        log_likelihood: ll,
    };
    let max_abs_index = |beta: &DVector<f64>| (x * beta).amax();

    for iter in 0..opts.max_iterations {
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        let mut xw = x.clone();
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let r = weights[i] * (s[i] - p);
            let h = weights[i] * p * (1.0 - p);
            for j in 0..d {
                grad[j] += r * x[(i, j)];
            }
            xw.row_mut(i).scale_mut(h.sqrt());
        }
        grad /= total_w;
        hess.gemm_tr(1.0 / total_w, &xw, &xw, 0.0);
        grad_norm = grad.norm();

        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                if max_abs_index(&beta) > SEPARATION_ETA {
                    return Err(Error::Separation {
                        partial: Box::new(partial(&beta, iter, grad_norm, ll)),
                    });
                }
                // fall back to a pseudo-inverse step on a singular but bounded problem
                match hess.clone().pseudo_inverse(1e-12) {
                    Ok(pinv) => pinv * &grad,
                    Err(_) => {
                        return Err(Error::RankDeficient {
                            columns: vec!["logistic design".into()],
                        })
                    }
                }
            }
        };

        let step_size = step.amax();
        if grad_norm < opts.gradient_tolerance && step_size < 1e-6 * (1.0 + beta.amax()) {
            return Ok(LogisticFit {
                coefficients: beta,
                converged: true,
                iterations: iter,
                gradient_norm: grad_norm,
                log_likelihood: ll,
            });
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let cand_eta = x * &cand + &off;
            let cand_ll = weighted_log_likelihood(&cand_eta, s, weights);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if max_abs_index(&beta) > SEPARATION_ETA {
        return Err(Error::Separation {
            partial: Box::new(partial(&beta, opts.max_iterations, grad_norm, ll)),
        });
    }
    Ok(LogisticFit {
        coefficients: beta,
        converged: grad_norm < opts.gradient_tolerance,
        iterations: opts.max_iterations,
        gradient_norm: grad_norm,
        log_likelihood: ll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::with_intercept;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intercept_only_closed_form() {
        let s = [1, 0, 0, 0, 1, 0, 0, 0];
        let x = DMatrix::from_element(8, 1, 1.0);
        let fit = logistic_fit(&x, &s).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - (0.25f64 / 0.75).ln()).abs() < 1e-10);
    }

    #[test]
    fn perfect_separation_detected() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        let x = with_intercept(&DMatrix::from_column_slice(8, 1, &xs));
        let err = logistic_fit(&x, &s).unwrap_err();
        match err {
            Error::Separation { partial } => assert!(partial.coefficients[1] > 1.0),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn binary_duplicate_separates() {
        let xs = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let s = [0, 1, 0, 1, 1, 0];
        let x = with_intercept(&DMatrix::from_column_slice(6, 1, &xs));
        assert!(matches!(logistic_fit(&x, &s), Err(Error::Separation { .. })));
    }

    #[test]
    fn quasi_separation_detected() {
        // x ≤ 0 ⇒ s = 0 except a tie at x = 0 carrying both classes
        let xs = [-3.0, -2.0, -1.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        let s = [0, 0, 0, 0, 1, 1, 1, 1];
        let x = with_intercept(&DMatrix::from_column_slice(8, 1, &xs));
        assert!(matches!(logistic_fit(&x, &s), Err(Error::Separation { .. })));
    }

    /// Bernoulli log-likelihood on two parameters.
    fn ll2(a: f64, b: f64, xs: &[f64], s: &[u8]) -> f64 {
        xs.iter()
            .zip(s)
            .map(|(&x, &y)| {
                let e = a + b * x;
                f64::from(y) * e - log1p_exp(e)
            })
            .sum()
    }

    /// Independent maximizer: coarse grid, then coordinate-wise golden
    /// section refinement, then Newton with a finite-difference Hessian.
    fn grid_newton_oracle(xs: &[f64], s: &[u8]) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in -60..=60 {
            for j in -60..=60 {
                let (a, b) = (i as f64 * 0.1, j as f64 * 0.1);
                let v = ll2(a, b, xs, s);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (mut a, mut b) = (best.1, best.2);
        let h = 1e-4;
        for _ in 0..50 {
            let f = |a: f64, b: f64| ll2(a, b, xs, s);
            let ga = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
            let gb = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
            let haa = (f(a + h, b) - 2.0 * f(a, b) + f(a - h, b)) / (h * h);
            let hbb = (f(a, b + h) - 2.0 * f(a, b) + f(a, b - h)) / (h * h);
            let hab = (f(a + h, b + h) - f(a + h, b - h) - f(a - h, b + h) + f(a - h, b - h)) / (4.0 * h * h);
            let det = haa * hbb - hab * hab;
            let da = (hbb * ga - hab * gb) / det;
            let db = (haa * gb - hab * ga) / det;
            a -= da;
            b -= db;
            if da.abs().max(db.abs()) < 1e-13 {
                break;
            }
        }
        (a, b)
    }

    #[test]
    fn matches_likelihood_maximizer_oracle() {
        let xs = [
            -1.8, -1.2, -0.9, -0.7, -0.4, -0.3, -0.1, 0.0, 0.2, 0.3, 0.5, 0.6, 0.8, 1.0, 1.1, 1.3, 1.6, 1.9, 2.2, 2.5,
        ];
        let s = [0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1];
        let (a, b) = grid_newton_oracle(&xs, &s);
        let fit = logistic_fit(&with_intercept(&DMatrix::from_column_slice(20, 1, &xs)), &s).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] - a).abs() < 1e-6, "{} vs {a}", fit.coefficients[0]);
        assert!((fit.coefficients[1] - b).abs() < 1e-6, "{} vs {b}", fit.coefficients[1]);
    }

    #[test]
    fn offset_shifts_intercept() {
        let s = [1.0, 0.0, 0.0, 1.0, 0.0];
        let x = DMatrix::from_element(5, 1, 1.0);
        let fit = logistic_fit_weighted(&x, &s, &[1.0; 5], &[0.7; 5], None, LogisticOptions::default()).unwrap();
        assert!((fit.coefficients[0] + 0.7 - (0.4f64 / 0.6).ln()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn score_equation_for_intercept(seed in 0u64..5_000, n in 30usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: Vec<u8> = xs.iter().map(|&x| u8::from(rng.random::<f64>() < sigmoid(0.3 + 0.8 * x))).collect();
            prop_assume!(s.contains(&1) && s.contains(&0));
            let x = with_intercept(&DMatrix::from_column_slice(n, 1, &xs));
            match logistic_fit(&x, &s) {
                Ok(fit) => {
                    prop_assert!(fit.converged);
                    let probs = fit.fitted_probabilities(&x);
                    let mp = probs.iter().sum::<f64>() / n as f64;
                    let ms = s.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
                    prop_assert!((mp - ms).abs() <= 1e-8);
                    prop_assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
                }
                Err(Error::Separation { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
