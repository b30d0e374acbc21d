use crate::data::{Dataset, EstimateResult, Method, SubsetComponents};
use crate::error::{Error, Result};
use crate::kernel::{mahalanobis_match, MatchSet};

use super::{balance_table, bootstrap_variance, per_treatment, EstimatorOptions};

struct ArmMatch {
    effect: f64,
    /// `None` with fewer than two matched pairs.
    variance: Option<f64>,
    set: MatchSet,
}

/// Matches every `S = 1` unit in one treatment subset to its nearest `S = 0`
/// unit and averages the matched differences.
///
/// Variance: with `D_i = Y_i − Y_m(i)` and control `j` reused `K_j` times,
/// `Var(mean D) ≈ σ² (n₁ + Σ K_j²) / n₁²` where `σ² = s²_D / 2` assumes equal
/// outcome variance in both groups.
fn match_arm(treatment: u8, sub: &Dataset) -> Result<ArmMatch> {
    let ones = sub.s().iter().filter(|&&s| s == 1).count();
    if ones == 0 || ones == sub.n() {
        return Err(Error::SingleLevelModerator { treatment });
    }
    let set = mahalanobis_match(sub.x(), sub.s(), true)?;
    let y = sub.y();
    let diffs: Vec<f64> = set.pairs.iter().map(|p| y[p.target] - y[p.matched]).collect();
    let n1 = diffs.len() as f64;
    let effect = diffs.iter().sum::<f64>() / n1;
    let variance = (diffs.len() >= 2).then(|| {
        let s2 = diffs.iter().map(|d| (d - effect).powi(2)).sum::<f64>() / (n1 - 1.0);
        let reuse: f64 = set.multiplicity.iter().map(|&k| (k * k) as f64).sum();
        s2 / 2.0 * (n1 + reuse) / (n1 * n1)
    });
    Ok(ArmMatch { effect, variance, set })
}

fn point_estimate(ds: &Dataset) -> Result<f64> {
    let (a0, a1) = per_treatment(ds, match_arm)?;
    Ok(a1.effect - a0.effect)
}

/// Nearest-neighbour Mahalanobis matching (with replacement) of `S = 1` to
/// `S = 0` units within each treatment subset, differenced across subsets.
///
/// The target is the moderation effect among units with `S = 1`. The
/// optional bootstrap re-matches within each replicate; bootstrapping
/// matching estimators with replacement is known to be unreliable, so the
/// analytic variance is the default.
pub fn parallel_matching(ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    if ds.k() == 0 {
        return Err(Error::InvalidArgument("matching needs at least one covariate".into()));
    }
    let (a0, a1) = per_treatment(ds, match_arm)?;
    let mut missing = Vec::new();
    for (t, a) in [(0, &a0), (1, &a1)] {
        if a.variance.is_none() {
            missing.push(t);
        }
    }
    let components = SubsetComponents {
        gamma0: a0.effect,
        var0: a0.variance.unwrap_or(0.0),
        gamma1: a1.effect,
        var1: a1.variance.unwrap_or(0.0),
    };
    let balance = balance_table(ds, Some((&a0.set, &a1.set)))?;

    let mut result = match opts.bootstrap {
        Some(b) => {
            let boot = bootstrap_variance(ds, b, point_estimate)?;
            let mut r = EstimateResult::new(
                Method::ParallelMatching,
                components.gamma1 - components.gamma0,
                boot.variance,
                opts.level,
                ds.cell_counts(),
            )?
            .with_diagnostic("variance_source", "bootstrap")
            .with_diagnostic("bootstrap_replications", boot.successes)
            .with_diagnostic("bootstrap_failures", boot.failures);
            r.subset_components = Some(components);
            r
        }
        None => EstimateResult::from_components(Method::ParallelMatching, components, opts.level, ds.cell_counts())?
            .with_diagnostic("variance_source", "matched_differences"),
    };
    if !missing.is_empty() {
        result = result.with_diagnostic("subsets_without_variance", missing);
    }
    result = result
        .with_diagnostic("estimand", "atme_moderated")
        .with_diagnostic("ridge", vec![a0.set.ridge, a1.set.ridge])
        .with_diagnostic("balance", serde_json::to_value(&balance).expect("serializable"));
    Ok(result)
}
