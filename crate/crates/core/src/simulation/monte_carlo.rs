use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, true_atme, DgpConfig};
use crate::data::{Dataset, Method};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, propensity_weighting, EstimatorOptions, ModeratorPropensity, PropensityFn, PropensityOptions,
    TreatmentProbability,
};
use crate::kernel::{compensated_sum, sigmoid};
use crate::seed::derive_seed;

/// Estimator evaluated by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum McEstimator {
    Standard(Method),
    /// Propensity weighting with the true `p` and `π(X)` of the generating
    /// model.
    PropensityOracle,
}

const ORACLE_NAME: &str = "propensity-weighting-oracle";

impl McEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            McEstimator::Standard(m) => m.name(),
            McEstimator::PropensityOracle => ORACLE_NAME,
        }
    }

    fn run(&self, cfg: &DgpConfig, ds: &Dataset, opts: &EstimatorOptions) -> Result<(f64, f64, bool)> {
        let truth = true_atme(cfg);
        let r = match self {
            McEstimator::Standard(m) => estimate(ds, *m, opts)?,
            McEstimator::PropensityOracle => {
                let (a, b) = (cfg.s_model.a, cfg.s_model.b);
                let alpha_u = cfg.confounder.map(|c| c.alpha_u);
                let pi: PropensityFn = Arc::new(move |x: &[f64]| {
                    let idx = a + b * x[0];
                    match alpha_u {
                        Some(au) => 0.5 * (sigmoid(idx) + sigmoid(idx + au)),
                        None => sigmoid(idx),
                    }
                });
                let o = EstimatorOptions {
                    propensity: PropensityOptions {
                        treatment: TreatmentProbability::Known(cfg.p_treat),
                        moderator: ModeratorPropensity::Known(pi),
                        trim: None,
                    },
                    ..opts.clone()
                };
                propensity_weighting(ds, &o)?
            }
        };
        Ok((r.estimate, r.std_error, r.covers(truth)))
    }
}

impl fmt::Display for McEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for McEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().replace('_', "-").eq_ignore_ascii_case(ORACLE_NAME) {
            Ok(McEstimator::PropensityOracle)
        } else {
            s.parse().map(McEstimator::Standard)
        }
    }
}

impl Serialize for McEstimator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for McEstimator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    pub replications: usize,
    pub estimators: Vec<McEstimator>,
    pub estimator_options: EstimatorOptions,
}

/// Aggregates for one estimator over the successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: McEstimator,
    pub replications: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub empirical_sd: f64,
    /// `empirical_sd / √replications`.
    pub mc_std_error: f64,
    pub mean_std_error: f64,
    /// Share of intervals (at the configured level) containing the true value.
    pub coverage: f64,
    /// First failure message, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: DgpConfig,
    pub true_atme: f64,
    pub requested_replications: usize,
    pub level: f64,
    pub seed: u64,
    pub seed_rule: String,
    pub estimators: Vec<EstimatorSummary>,
}

pub const SEED_RULE: &str = "replication r uses seed = SplitMix64 output r+1 from state `seed`; \
                             data drawn with ChaCha20Rng::seed_from_u64";

type Draw = std::result::Result<(f64, f64, bool), String>;

/// Runs `opts.replications` independent draws of `cfg` and every requested
/// estimator on each.
///
/// Replications run in parallel; their results are gathered in replication
/// order and summed with compensation, so the report does not depend on the
/// thread count. Failed replications are counted, never imputed.
pub fn monte_carlo(cfg: &DgpConfig, opts: &MonteCarloOptions) -> Result<MonteCarloReport> {
    cfg.validate()?;
    if opts.replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    if opts.estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators requested".into()));
    }
    let truth = true_atme(cfg);
    let draws: Vec<Vec<Draw>> = (0..opts.replications)
        .into_par_iter()
        .map(|r| {
            let rep_cfg = cfg.clone().with_seed(derive_seed(cfg.seed, r as u64));
            match generate(&rep_cfg) {
                Ok(ds) => opts
                    .estimators
                    .iter()
                    .map(|e| e.run(cfg, &ds, &opts.estimator_options).map_err(|err| err.to_string()))
                    .collect(),
                Err(err) => vec![Err(err.to_string()); opts.estimators.len()],
            }
        })
        .collect();

    let mut summaries = Vec::with_capacity(opts.estimators.len());
    for (j, &est) in opts.estimators.iter().enumerate() {
        let ok: Vec<(f64, f64, bool)> = draws.iter().filter_map(|d| d[j].as_ref().ok().copied()).collect();
        let first_failure = draws.iter().find_map(|d| d[j].as_ref().err().cloned());
        let m = ok.len();
        let (mean, sd, mean_se, coverage) = if m == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mf = m as f64;
            let mean = compensated_sum(ok.iter().map(|o| o.0)) / mf;
            let sd = if m > 1 {
                (compensated_sum(ok.iter().map(|o| (o.0 - mean).powi(2))) / (mf - 1.0)).sqrt()
            } else {
                0.0
            };
            let mean_se = compensated_sum(ok.iter().map(|o| o.1)) / mf;
            let coverage = ok.iter().filter(|o| o.2).count() as f64 / mf;
            (mean, sd, mean_se, coverage)
        };
        summaries.push(EstimatorSummary {
            estimator: est,
            replications: m,
            failures: opts.replications - m,
            mean_estimate: mean,
            bias: mean - truth,
            empirical_sd: sd,
            mc_std_error: sd / (m as f64).sqrt(),
            mean_std_error: mean_se,
            coverage,
            first_failure,
        });
    }
    if summaries.iter().all(|s| s.replications == 0) {
        return Err(Error::AllReplicationsFailed {
            reps: opts.replications,
        });
    }
    Ok(MonteCarloReport {
        config: cfg.clone(),
        true_atme: truth,
        requested_replications: opts.replications,
        level: opts.estimator_options.level,
        seed: cfg.seed,
        seed_rule: SEED_RULE.into(),
        estimators: summaries,
    })
}

impl MonteCarloReport {
    pub fn summary(&self, estimator: McEstimator) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == estimator)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cfg: &DgpConfig, reps: usize, estimators: Vec<McEstimator>) -> MonteCarloReport {
        monte_carlo(
            cfg,
            &MonteCarloOptions {
                replications: reps,
                estimators,
                estimator_options: EstimatorOptions::default(),
            },
        )
        .unwrap()
    }

    #[test]
    fn thread_count_does_not_change_the_report() {
        let cfg = DgpConfig::baseline().with_n(200).with_seed(17);
        let est = vec![
            McEstimator::Standard(Method::ParallelRegression),
            McEstimator::Standard(Method::ParallelMatching),
            McEstimator::PropensityOracle,
        ];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run(&cfg, 40, est.clone()));
        let b = four.install(|| run(&cfg, 40, est.clone()));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        // with n = 6 some draws miss a cell
        let cfg = DgpConfig::baseline().with_n(6).with_seed(3);
        let r = run(&cfg, 200, vec![McEstimator::Standard(Method::SubsetDifference)]);
        let s = &r.estimators[0];
        assert!(s.failures > 0);
        assert_eq!(s.replications + s.failures, 200);
        assert!(s.first_failure.is_some());
        assert!((0.0..=1.0).contains(&s.coverage));
    }

    #[test]
    fn all_failures_is_an_error() {
        let cfg = DgpConfig::baseline().with_n(2);
        let r = monte_carlo(
            &cfg,
            &MonteCarloOptions {
                replications: 5,
                estimators: vec![McEstimator::Standard(Method::ParallelRegression)],
                estimator_options: EstimatorOptions::default(),
            },
        );
        assert!(matches!(r, Err(Error::AllReplicationsFailed { reps: 5 })));
    }

    #[test]
    fn sign_of_delta_propagates() {
        let mut cfg = DgpConfig::baseline().with_n(400).with_seed(5);
        let pr = McEstimator::Standard(Method::ParallelRegression);
        let up = run(&cfg, 100, vec![pr]);
        cfg.delta = -2.0;
        let down = run(&cfg, 100, vec![pr]);
        let (u, d) = (&up.estimators[0], &down.estimators[0]);
        assert!(u.mean_estimate > 0.0 && d.mean_estimate < 0.0);
        assert!(u.bias.abs() < 3.0 * u.mc_std_error + 1e-12);
        assert!(d.bias.abs() < 3.0 * d.mc_std_error + 1e-12);
    }

    #[test]
    fn estimator_names_parse() {
        assert_eq!(
            "propensity_weighting_oracle".parse::<McEstimator>().unwrap(),
            McEstimator::PropensityOracle
        );
        assert_eq!(
            "parallel-regression".parse::<McEstimator>().unwrap(),
            McEstimator::Standard(Method::ParallelRegression)
        );
        let json = serde_json::to_string(&McEstimator::PropensityOracle).unwrap();
        assert_eq!(json, "\"propensity-weighting-oracle\"");
        assert!("nope".parse::<McEstimator>().is_err());
    }
}
