use std::fmt;
use std::sync::Arc;

use crate::data::{Dataset, EstimateResult, Method};
use crate::error::{Error, Result};
use crate::kernel::{compensated_sum, logistic_fit, with_intercept};

use super::{bootstrap_variance, EstimatorOptions};

/// Treatment assignment probability `p`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TreatmentProbability {
    /// Design probability known from the randomization.
    Known(f64),
    /// Sample share of treated units.
    #[default]
    EstimateFromData,
}

/// Known propensity function, evaluated on one row of covariates.
pub type PropensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Moderator propensity `π(X) = P(S = 1 | X)`.
#[derive(Clone, Default)]
pub enum ModeratorPropensity {
    /// Evaluated on each row's covariate vector.
    Known(PropensityFn),
    /// Logistic regression of `S` on `(1, X)` over all rows.
    #[default]
    LogisticOnX,
}

impl fmt::Debug for ModeratorPropensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeratorPropensity::Known(_) => f.write_str("Known(<fn>)"),
            ModeratorPropensity::LogisticOnX => f.write_str("LogisticOnX"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PropensityOptions {
    pub treatment: TreatmentProbability,
    pub moderator: ModeratorPropensity,
    /// Clamp `π̂` into `[lo, hi]`; `None` rejects values outside `(0, 1)`.
    pub trim: Option<(f64, f64)>,
}

impl Default for PropensityOptions {
    fn default() -> Self {
        Self {
            treatment: TreatmentProbability::default(),
            moderator: ModeratorPropensity::default(),
            trim: Some((0.01, 0.99)),
        }
    }
}

struct Summands {
    values: Vec<f64>,
    p: f64,
    trimmed: usize,
}

fn moderator_propensities(ds: &Dataset, spec: &ModeratorPropensity) -> Result<Vec<f64>> {
    match spec {
        ModeratorPropensity::Known(f) => Ok((0..ds.n())
            .map(|i| {
                let row: Vec<f64> = ds.x().row(i).iter().copied().collect();
                f(&row)
            })
            .collect()),
        ModeratorPropensity::LogisticOnX if ds.k() == 0 => {
            let share = ds.s().iter().map(|&s| f64::from(s)).sum::<f64>() / ds.n() as f64;
            Ok(vec![share; ds.n()])
        }
        ModeratorPropensity::LogisticOnX => {
            let design = with_intercept(ds.x());
            Ok(logistic_fit(&design, ds.s())?.fitted_probabilities(&design))
        }
    }
}

fn summands(ds: &Dataset, opts: &PropensityOptions) -> Result<Summands> {
    let n = ds.n() as f64;
    let p = match opts.treatment {
        TreatmentProbability::Known(p) => p,
        TreatmentProbability::EstimateFromData => ds.t().iter().map(|&t| f64::from(t)).sum::<f64>() / n,
    };
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "treatment probability {p} outside (0, 1)"
        )));
    }
    if let Some((lo, hi)) = opts.trim {
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::InvalidArgument(format!("trimming bounds [{lo}, {hi}] invalid")));
        }
    }
    let mut pi = moderator_propensities(ds, &opts.moderator)?;
    let mut trimmed = 0;
    for (row, v) in pi.iter_mut().enumerate() {
        match opts.trim {
            Some((lo, hi)) => {
                if v.is_nan() {
                    return Err(Error::PropensityOutOfBounds {
                        row: ds.row_ids()[row],
                        value: *v,
                        lower: lo,
                        upper: hi,
                    });
                }
                if *v < lo || *v > hi {
                    *v = v.clamp(lo, hi);
                    trimmed += 1;
                }
            }
            None => {
                if !(*v > 0.0 && *v < 1.0) {
                    return Err(Error::PropensityOutOfBounds {
                        row: ds.row_ids()[row],
                        value: *v,
                        lower: 0.0,
                        upper: 1.0,
                    });
                }
            }
        }
    }
    let values = (0..ds.n())
        .map(|i| {
            let (t, s) = (f64::from(ds.t()[i]), f64::from(ds.s()[i]));
            ds.y()[i] * (t - p) * (s - pi[i]) / (p * (1.0 - p) * pi[i] * (1.0 - pi[i]))
        })
        .collect();
    Ok(Summands { values, p, trimmed })
}

/// Weighting estimator
/// `(1/N) Σ Y (T − p)(S − π̂(X)) / [p(1 − p) π̂(X)(1 − π̂(X))]`.
///
/// The analytic variance is the sample variance of the summand over `N` and
/// treats `p` and `π̂` as known.
pub fn propensity_weighting(ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let spec = &opts.propensity;
    let z = summands(ds, spec)?;
    let n = z.values.len() as f64;
    let estimate = compensated_sum(z.values.iter().copied()) / n;
    let analytic = compensated_sum(z.values.iter().map(|v| (v - estimate).powi(2))) / (n - 1.0) / n;

    let (variance, source, boot) = match opts.bootstrap {
        Some(b) => {
            let stat = |d: &Dataset| {
                let z = summands(d, spec)?;
                Ok(compensated_sum(z.values.iter().copied()) / z.values.len() as f64)
            };
            let s = bootstrap_variance(ds, b, stat)?;
            (s.variance, "bootstrap", Some((s.successes, s.failures)))
        }
        None => (analytic, "summand_variance", None),
    };
    let mut r = EstimateResult::new(
        Method::PropensityWeighting,
        estimate,
        variance,
        opts.level,
        ds.cell_counts(),
    )?
    .with_diagnostic("treatment_probability", z.p)
    .with_diagnostic("trimmed_rows", z.trimmed)
    .with_diagnostic(
        "moderator_propensity",
        match spec.moderator {
            ModeratorPropensity::Known(_) => "known",
            ModeratorPropensity::LogisticOnX => "logistic",
        },
    )
    .with_diagnostic("variance_source", source);
    if let Some((ok, failed)) = boot {
        r = r
            .with_diagnostic("bootstrap_replications", ok)
            .with_diagnostic("bootstrap_failures", failed);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::estimators::BootstrapOptions;

    fn four_units() -> Dataset {
        Dataset::new(
            vec![5.0, 2.0, 3.0, 1.0],
            vec![1, 0, 1, 0],
            vec![1, 1, 0, 0],
            DMatrix::zeros(4, 0),
            vec![],
            None,
        )
        .unwrap()
    }

    fn with(spec: PropensityOptions) -> EstimatorOptions {
        EstimatorOptions {
            propensity: spec,
            ..EstimatorOptions::default()
        }
    }

    #[test]
    fn one_unit_per_cell_hand_value() {
        // each summand is ±Y·(1/4)/(1/16) = ±4Y; (20 − 8 − 12 + 4)/4 = 1
        let r = propensity_weighting(&four_units(), &EstimatorOptions::default()).unwrap();
        assert_eq!(r.estimate, 1.0);
        let known = with(PropensityOptions {
            treatment: TreatmentProbability::Known(0.5),
            moderator: ModeratorPropensity::Known(Arc::new(|_| 0.5)),
            trim: None,
        });
        let r = propensity_weighting(&four_units(), &known).unwrap();
        assert_eq!(r.estimate, 1.0);
        // summands 20, −8, −12, 4 around mean 1: sample variance 620/3 over N = 4
        assert!((r.variance - 620.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn constant_outcome_on_balanced_cells_is_zero() {
        let ds = Dataset::new(
            vec![7.0; 4],
            vec![1, 0, 1, 0],
            vec![1, 1, 0, 0],
            DMatrix::zeros(4, 0),
            vec![],
            None,
        )
        .unwrap();
        assert_eq!(
            propensity_weighting(&ds, &EstimatorOptions::default())
                .unwrap()
                .estimate,
            0.0
        );
    }

    #[test]
    fn trimming_counts_and_disabled_trimming_rejects() {
        let ds = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![1, 0, 1, 0],
            vec![1, 1, 0, 0],
            DMatrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]),
            vec!["x".into()],
            None,
        )
        .unwrap();
        let extreme = ModeratorPropensity::Known(Arc::new(|x| if x[0] < 1.5 { 0.999 } else { 0.3 }));
        let r = propensity_weighting(
            &ds,
            &with(PropensityOptions {
                moderator: extreme.clone(),
                ..PropensityOptions::default()
            }),
        )
        .unwrap();
        assert_eq!(r.diagnostics["trimmed_rows"], 2);
        let strict = with(PropensityOptions {
            moderator: ModeratorPropensity::Known(Arc::new(|x| if x[0] < 1.5 { 1.0 } else { 0.3 })),
            trim: None,
            ..PropensityOptions::default()
        });
        assert!(matches!(
            propensity_weighting(&ds, &strict),
            Err(Error::PropensityOutOfBounds { row: 0, .. })
        ));
        let bad_p = with(PropensityOptions {
            treatment: TreatmentProbability::Known(1.0),
            ..PropensityOptions::default()
        });
        assert!(matches!(
            propensity_weighting(&ds, &bad_p),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn logistic_propensity_matches_direct_formula() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 - 20.0) / 10.0).collect();
        let s: Vec<u8> = (0..40).map(|i| u8::from((i * 7) % 5 < 2 + (i / 20))).collect();
        let t: Vec<u8> = (0..40).map(|i| u8::from((i * 3) % 4 < 2)).collect();
        let y: Vec<f64> = (0..40).map(|i| x[i] + f64::from(t[i] * s[i]) * 2.0).collect();
        let ds = Dataset::new(y, t, s, DMatrix::from_vec(40, 1, x), vec!["x".into()], None).unwrap();
        let design = with_intercept(ds.x());
        let pi = logistic_fit(&design, ds.s()).unwrap().fitted_probabilities(&design);
        let p = ds.t().iter().filter(|&&t| t == 1).count() as f64 / 40.0;
        let want: f64 = (0..40)
            .map(|i| {
                let (t, s) = (f64::from(ds.t()[i]), f64::from(ds.s()[i]));
                ds.y()[i] * (t - p) * (s - pi[i]) / (p * (1.0 - p) * pi[i] * (1.0 - pi[i]))
            })
            .sum::<f64>()
            / 40.0;
        let r = propensity_weighting(&ds, &EstimatorOptions::default()).unwrap();
        assert!((r.estimate - want).abs() < 1e-10);
        assert_eq!(r.diagnostics["trimmed_rows"], 0);
    }

    #[test]
    fn label_swaps_negate() {
        let x: Vec<f64> = (0..30).map(|i| (i as f64) / 10.0).collect();
        let t: Vec<u8> = (0..30).map(|i| u8::from(i % 2 == 0)).collect();
        let s: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let y: Vec<f64> = (0..30).map(|i| (i as f64).sin() + 2.0).collect();
        let ds = Dataset::new(y, t, s, DMatrix::from_vec(30, 1, x), vec!["x".into()], None).unwrap();
        let base = propensity_weighting(&ds, &EstimatorOptions::default())
            .unwrap()
            .estimate;
        for flipped in [ds.with_flipped_moderator(), ds.with_flipped_treatment()] {
            let e = propensity_weighting(&flipped, &EstimatorOptions::default())
                .unwrap()
                .estimate;
            assert!((e + base).abs() < 1e-9, "{e} vs {base}");
        }
    }

    #[test]
    fn bootstrap_replaces_variance() {
        let x: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64 / 30.0 - 1.0).collect();
        let t: Vec<u8> = (0..60).map(|i| u8::from(i % 2 == 0)).collect();
        let s: Vec<u8> = (0..60).map(|i| u8::from((i * 11) % 7 < 3)).collect();
        let y: Vec<f64> = (0..60).map(|i| x[i] + f64::from(s[i])).collect();
        let ds = Dataset::new(y, t, s, DMatrix::from_vec(60, 1, x), vec!["x".into()], None).unwrap();
        let o = EstimatorOptions {
            bootstrap: Some(BootstrapOptions {
                replications: 30,
                seed: 1,
            }),
            ..EstimatorOptions::default()
        };
        let r = propensity_weighting(&ds, &o).unwrap();
        assert_eq!(r.diagnostics["variance_source"], "bootstrap");
        assert!(r.variance > 0.0);
    }
}
