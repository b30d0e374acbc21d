//! The two conventional baselines (subset difference, controlled interaction)
//! and the four moderation-effect estimators (parallel regression, full
//! interaction, parallel matching, propensity weighting).
//!
//! Every estimator takes a [`Dataset`] and [`EstimatorOptions`] and returns an
//! [`EstimateResult`]. The two per-treatment fits of the parallel estimators
//! run concurrently; results do not depend on which finishes first.

mod balance;
mod matching;
mod regression;
mod weighting;

pub use balance::{balance_table, BalanceFlag, BalanceReport, CovariateBalance, SubsetBalance};
pub use matching::parallel_matching;
pub use regression::{controlled_interaction, full_interaction, parallel_regression, subset_difference};
pub use weighting::{propensity_weighting, ModeratorPropensity, PropensityFn, PropensityOptions, TreatmentProbability};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, EstimateResult, Method};
use crate::error::{Error, Result};
use crate::kernel::VarianceMode;
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    /// `None` picks cluster-robust when the dataset has cluster labels and
    /// HC1 otherwise.
    pub variance: Option<VarianceMode>,
    pub level: f64,
    pub propensity: PropensityOptions,
    /// Replaces the analytic variance of the matching and weighting
    /// estimators with a (cluster) bootstrap when set.
    pub bootstrap: Option<BootstrapOptions>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            variance: None,
            level: 0.95,
            propensity: PropensityOptions::default(),
            bootstrap: None,
        }
    }
}

impl EstimatorOptions {
    pub(crate) fn variance_mode(&self, ds: &Dataset) -> VarianceMode {
        self.variance.unwrap_or(if ds.cluster_ids().is_some() {
            VarianceMode::ClusterRobust
        } else {
            VarianceMode::HeteroskedasticityRobust
        })
    }
}

/// Uniform estimator signature. New within-subset strategies implement this
/// and are added to a [`Registry`].
pub trait Estimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult>;
}

struct Builtin(Method);

impl Estimator for Builtin {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn estimate(&self, ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
        estimate(ds, self.0, opts)
    }
}

/// Name-keyed collection of estimators.
pub struct Registry {
    entries: Vec<Box<dyn Estimator>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    /// The six estimators shipped with the library.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for m in Method::ALL {
            r.register(Box::new(Builtin(m))).expect("builtin names are unique");
        }
        r
    }

    pub fn register(&mut self, estimator: Box<dyn Estimator>) -> Result<()> {
        if self.get(estimator.name()).is_some() {
            return Err(Error::InvalidArgument(format!(
                "estimator `{}` already registered",
                estimator.name()
            )));
        }
        self.entries.push(estimator);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn Estimator> {
        self.entries.iter().find(|e| e.name() == name).map(|e| e.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name())
    }
}

/// Dispatches to the estimator for `method`.
pub fn estimate(ds: &Dataset, method: Method, opts: &EstimatorOptions) -> Result<EstimateResult> {
    match method {
        Method::SubsetDifference => subset_difference(ds, opts),
        Method::ControlledInteraction => controlled_interaction(ds, opts),
        Method::ParallelRegression => parallel_regression(ds, opts),
        Method::FullInteraction => full_interaction(ds, opts),
        Method::ParallelMatching => parallel_matching(ds, opts),
        Method::PropensityWeighting => propensity_weighting(ds, opts),
    }
}

/// Runs `f` on each `T` subset concurrently.
pub(crate) fn per_treatment<R: Send>(ds: &Dataset, f: impl Fn(u8, &Dataset) -> Result<R> + Sync) -> Result<(R, R)> {
    let (d0, d1) = ds.split_by_treatment();
    let (r0, r1) = rayon::join(|| f(0, &d0), || f(1, &d1));
    let wrap = |t: u8, e: Error| match e {
        e @ Error::SingleLevelModerator { .. } => e,
        e => Error::Subset {
            treatment: t,
            source: Box::new(e),
        },
    };
    Ok((r0.map_err(|e| wrap(0, e))?, r1.map_err(|e| wrap(1, e))?))
}

pub(crate) struct BootstrapSummary {
    pub variance: f64,
    pub successes: usize,
    pub failures: usize,
}

/// Resamples clusters (rows when unclustered) with replacement and returns
/// the sample variance of `stat` over the successful replicates.
pub(crate) fn bootstrap_variance(
    ds: &Dataset,
    opts: BootstrapOptions,
    stat: impl Fn(&Dataset) -> Result<f64> + Sync,
) -> Result<BootstrapSummary> {
    if opts.replications < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least two replications".into(),
        ));
    }
    let groups: Vec<Vec<usize>> = match ds.cluster_ids() {
        Some(ids) => {
            let g = ids.iter().max().map_or(0, |m| m + 1);
            let mut groups = vec![Vec::new(); g];
            for (i, &c) in ids.iter().enumerate() {
                groups[c].push(i);
            }
            groups
        }
        None => (0..ds.n()).map(|i| vec![i]).collect(),
    };
    let draws: Vec<Option<f64>> = (0..opts.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from_seed(derive_seed(opts.seed, r as u64));
            let mut rows = Vec::with_capacity(ds.n());
            for _ in 0..groups.len() {
                rows.extend_from_slice(&groups[rng.random_range(0..groups.len())]);
            }
            stat(&ds.subset(&rows)).ok().filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<f64> = draws.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(Error::AllReplicationsFailed {
            reps: opts.replications,
        });
    }
    let m = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / m;
    let variance = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(BootstrapSummary {
        variance,
        successes: ok.len(),
        failures: opts.replications - ok.len(),
    })
}
