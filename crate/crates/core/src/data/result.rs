use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Estimators known to the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SubsetDifference,
    ControlledInteraction,
    ParallelRegression,
    FullInteraction,
    ParallelMatching,
    PropensityWeighting,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SubsetDifference,
        Method::ControlledInteraction,
        Method::ParallelRegression,
        Method::FullInteraction,
        Method::ParallelMatching,
        Method::PropensityWeighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SubsetDifference => "subset-difference",
            Method::ControlledInteraction => "controlled-interaction",
            Method::ParallelRegression => "parallel-regression",
            Method::FullInteraction => "full-interaction",
            Method::ParallelMatching => "parallel-matching",
            Method::PropensityWeighting => "propensity-weighting",
        }
    }

    /// Parallel methods estimate the moderator effect separately within each
    /// treatment subset and difference the two.
    pub fn is_parallel(self) -> bool {
        matches!(self, Method::ParallelRegression | Method::ParallelMatching)
    }

    /// Conventional baselines that do not target the moderation effect.
    pub fn is_baseline(self) -> bool {
        matches!(self, Method::SubsetDifference | Method::ControlledInteraction)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Row counts of the four (T, S) cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCounts {
    pub t0_s0: usize,
    pub t0_s1: usize,
    pub t1_s0: usize,
    pub t1_s1: usize,
}

impl CellCounts {
    pub fn tally(t: &[u8], s: &[u8]) -> Self {
        let mut c = CellCounts::default();
        for (&ti, &si) in t.iter().zip(s) {
            *c.get_mut(ti, si) += 1;
        }
        c
    }

    pub fn get(&self, t: u8, s: u8) -> usize {
        match (t, s) {
            (0, 0) => self.t0_s0,
            (0, _) => self.t0_s1,
            (_, 0) => self.t1_s0,
            _ => self.t1_s1,
        }
    }

    fn get_mut(&mut self, t: u8, s: u8) -> &mut usize {
        match (t, s) {
            (0, 0) => &mut self.t0_s0,
            (0, _) => &mut self.t0_s1,
            (_, 0) => &mut self.t1_s0,
            _ => &mut self.t1_s1,
        }
    }

    pub fn total(&self) -> usize {
        self.t0_s0 + self.t0_s1 + self.t1_s0 + self.t1_s1
    }

    /// First empty cell in (T, S) lexical order.
    pub fn first_empty(&self) -> Option<(u8, u8)> {
        [(0, 0), (0, 1), (1, 0), (1, 1)]
            .into_iter()
            .find(|&(t, s)| self.get(t, s) == 0)
    }
}

/// Moderator effects and their variances within the two treatment subsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetComponents {
    pub gamma0: f64,
    pub var0: f64,
    pub gamma1: f64,
    pub var1: f64,
}

/// Uniform output of every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub estimate: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub subset_components: Option<SubsetComponents>,
    pub cell_counts: CellCounts,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

/// Two-sided standard-normal critical value for a confidence level.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

impl EstimateResult {
    /// Normal-approximation interval around `estimate` at `level`.
    pub fn new(method: Method, estimate: f64, variance: f64, level: f64, cell_counts: CellCounts) -> Result<Self> {
        let z = normal_critical_value(level)?;
        let variance = variance.max(0.0);
        let std_error = variance.sqrt();
        Ok(Self {
            method,
            estimate,
            variance,
            std_error,
            ci_lower: estimate - z * std_error,
            ci_upper: estimate + z * std_error,
            level,
            subset_components: None,
            cell_counts,
            diagnostics: BTreeMap::new(),
        })
    }

    /// Parallel result: `estimate = γ̂₁ − γ̂₀`, `variance = Var(γ̂₀) + Var(γ̂₁)`.
    pub fn from_components(
        method: Method,
        components: SubsetComponents,
        level: f64,
        cell_counts: CellCounts,
    ) -> Result<Self> {
        let mut r = Self::new(
            method,
            components.gamma1 - components.gamma0,
            components.var0 + components.var1,
            level,
            cell_counts,
        )?;
        r.subset_components = Some(components);
        Ok(r)
    }

    pub fn with_diagnostic(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.diagnostics.insert(key.to_string(), value.into());
        self
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_symmetric_and_se_is_sqrt_variance() {
        let r = EstimateResult::new(Method::ParallelRegression, 1.5, 0.04, 0.95, CellCounts::default()).unwrap();
        assert_eq!(r.std_error, 0.2);
        assert!(((r.ci_upper - r.estimate) - (r.estimate - r.ci_lower)).abs() < 1e-15);
        assert!((r.ci_upper - r.estimate - 1.959963984540054 * 0.2).abs() < 1e-12);
    }

    #[test]
    fn components_define_estimate() {
        let c = SubsetComponents {
            gamma0: 0.5,
            var0: 0.01,
            gamma1: 2.0,
            var1: 0.02,
        };
        let r = EstimateResult::from_components(Method::ParallelRegression, c, 0.9, CellCounts::default()).unwrap();
        assert_eq!(r.estimate, 1.5);
        assert_eq!(r.variance, 0.01 + 0.02);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("parallel_regression".parse::<Method>().is_ok());
        assert!("ols".parse::<Method>().is_err());
    }

    #[test]
    fn bad_level_rejected() {
        assert!(normal_critical_value(1.0).is_err());
        assert!(normal_critical_value(0.0).is_err());
    }

    #[test]
    fn cell_tally() {
        let c = CellCounts::tally(&[1, 0, 1, 0, 1], &[1, 1, 0, 0, 1]);
        assert_eq!((c.t0_s0, c.t0_s1, c.t1_s0, c.t1_s1), (1, 1, 1, 2));
        assert_eq!(c.first_empty(), None);
        assert_eq!(CellCounts::tally(&[0, 1], &[0, 0]).first_empty(), Some((0, 1)));
    }
}
