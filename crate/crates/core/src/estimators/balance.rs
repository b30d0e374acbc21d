use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::MatchSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceFlag {
    /// Covariate is constant across both groups; SMD reported as 0.
    ZeroVarianceEqualMeans,
    /// Covariate has zero pooled variance but different group means.
    NonComputable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub name: String,
    pub smd_before: Option<f64>,
    /// Present only when matches were supplied.
    pub smd_after: Option<f64>,
    pub flag: Option<BalanceFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetBalance {
    pub treatment: u8,
    /// Units with `S = 1`.
    pub n_moderated: usize,
    /// Units with `S = 0`.
    pub n_unmoderated: usize,
    pub distinct_matched_controls: Option<usize>,
    /// Kish effective size `(ΣK)² / ΣK²` of the matched controls.
    pub effective_controls: Option<f64>,
    pub covariates: Vec<CovariateBalance>,
}

/// Standardized mean differences between `S = 1` and `S = 0` within each
/// treatment subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub matched: bool,
    pub subsets: Vec<SubsetBalance>,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn smd(diff: f64, sd: f64) -> (Option<f64>, Option<BalanceFlag>) {
    if sd > 0.0 {
        (Some(diff / sd), None)
    } else if diff == 0.0 {
        (Some(0.0), Some(BalanceFlag::ZeroVarianceEqualMeans))
    } else {
        (None, Some(BalanceFlag::NonComputable))
    }
}

fn subset_balance(treatment: u8, sub: &Dataset, matches: Option<&MatchSet>) -> Result<SubsetBalance> {
    let treated: Vec<usize> = (0..sub.n()).filter(|&i| sub.s()[i] == 1).collect();
    let controls: Vec<usize> = (0..sub.n()).filter(|&i| sub.s()[i] == 0).collect();
    if treated.is_empty() || controls.is_empty() {
        return Err(Error::SingleLevelModerator { treatment });
    }
    if let Some(m) = matches {
        if m.multiplicity.len() != sub.n() {
            return Err(Error::LengthMismatch {
                column: "match multiplicity".into(),
                expected: sub.n(),
                found: m.multiplicity.len(),
            });
        }
    }
    let mut covariates = Vec::with_capacity(sub.k());
    for (j, name) in sub.covariate_names().iter().enumerate() {
        let col = sub.x().column(j);
        let (m1, v1) = mean_var(&treated.iter().map(|&i| col[i]).collect::<Vec<_>>());
        let (m0, v0) = mean_var(&controls.iter().map(|&i| col[i]).collect::<Vec<_>>());
        let sd = ((v1 + v0) / 2.0).sqrt();
        let (smd_before, flag_before) = smd(m1 - m0, sd);
        let (smd_after, flag_after) = match matches {
            Some(m) => {
                let total: usize = m.multiplicity.iter().sum();
                let weighted = m
                    .multiplicity
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| k as f64 * col[i])
                    .sum::<f64>()
                    / total as f64;
                let matched_treated = m.pairs.iter().map(|p| col[p.target]).sum::<f64>() / m.pairs.len() as f64;
                smd(matched_treated - weighted, sd)
            }
            None => (None, None),
        };
        covariates.push(CovariateBalance {
            name: name.clone(),
            smd_before,
            smd_after,
            flag: flag_before.or(flag_after),
        });
    }
    let (distinct, effective) = match matches {
        Some(m) => {
            let s: f64 = m.multiplicity.iter().map(|&k| k as f64).sum();
            let s2: f64 = m.multiplicity.iter().map(|&k| (k * k) as f64).sum();
            (Some(m.distinct_matched()), Some(s * s / s2))
        }
        None => (None, None),
    };
    Ok(SubsetBalance {
        treatment,
        n_moderated: treated.len(),
        n_unmoderated: controls.len(),
        distinct_matched_controls: distinct,
        effective_controls: effective,
        covariates,
    })
}

/// Balance of every covariate before and, when `matches` (for the `T = 0`
/// and `T = 1` subsets, in that order) are given, after matching.
///
/// The SMD denominator is the pooled standard deviation before matching in
/// both columns, so the two are comparable. Matched controls are weighted by
/// how many times they were used.
pub fn balance_table(ds: &Dataset, matches: Option<(&MatchSet, &MatchSet)>) -> Result<BalanceReport> {
    if ds.k() == 0 {
        return Err(Error::InvalidArgument("balance needs at least one covariate".into()));
    }
    let (d0, d1) = ds.split_by_treatment();
    let subsets = vec![
        subset_balance(0, &d0, matches.map(|m| m.0))?,
        subset_balance(1, &d1, matches.map(|m| m.1))?,
    ];
    Ok(BalanceReport {
        matched: matches.is_some(),
        subsets,
    })
}
