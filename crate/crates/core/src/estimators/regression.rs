use crate::data::{CellCounts, Dataset, EstimateResult, Method, SubsetComponents};
use crate::error::{Error, Result};
use crate::kernel::{least_squares_fit, Design, VarianceMode};

use super::{per_treatment, EstimatorOptions};

fn require_full_cells(counts: &CellCounts) -> Result<()> {
    match counts.first_empty() {
        Some((t, s)) => Err(Error::EmptyCell { t, s }),
        None => Ok(()),
    }
}

fn f64s(v: &[u8]) -> impl Iterator<Item = f64> + '_ {
    v.iter().map(|&b| f64::from(b))
}

fn with_covariates(mut d: Design, ds: &Dataset) -> Design {
    for (j, name) in ds.covariate_names().iter().enumerate() {
        d = d.column(name.clone(), ds.x().column(j).iter().copied());
    }
    d
}

/// Mean of `values` and the variance of that mean; `None` variance when a
/// single observation (or cluster) makes it unidentified.
fn mean_and_variance(values: &[f64], clusters: Option<&[usize]>) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    match clusters {
        None => {
            if values.len() < 2 {
                return (mean, None);
            }
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (mean, Some(ss / (n - 1.0) / n))
        }
        Some(ids) => {
            let mut sums: std::collections::BTreeMap<usize, f64> = Default::default();
            for (v, &c) in values.iter().zip(ids) {
                *sums.entry(c).or_default() += v - mean;
            }
            let g = sums.len() as f64;
            if sums.len() < 2 {
                return (mean, None);
            }
            let meat: f64 = sums.values().map(|s| s * s).sum();
            (mean, Some(g / (g - 1.0) * meat / (n * n)))
        }
    }
}

/// Difference of the treatment effects estimated within `S = 1` and `S = 0`.
///
/// This compares conditional average treatment effects; it describes
/// heterogeneity and is not an unbiased estimator of the moderation effect
/// when `S` is confounded.
pub fn subset_difference(ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let counts = ds.cell_counts();
    require_full_cells(&counts)?;
    let clustered = match opts.variance_mode(ds) {
        VarianceMode::ClusterRobust => Some(ds.cluster_ids().ok_or(Error::MissingClusters)?),
        _ => None,
    };
    let mut means = [[0.0; 2]; 2];
    let mut vars = [[0.0; 2]; 2];
    let mut unidentified = Vec::new();
    for t in 0..2u8 {
        for s in 0..2u8 {
            let rows: Vec<usize> = (0..ds.n()).filter(|&i| ds.t()[i] == t && ds.s()[i] == s).collect();
            let y: Vec<f64> = rows.iter().map(|&i| ds.y()[i]).collect();
            let ids: Option<Vec<usize>> = clustered.map(|c| rows.iter().map(|&i| c[i]).collect());
            let (m, v) = mean_and_variance(&y, ids.as_deref());
            means[t as usize][s as usize] = m;
            vars[t as usize][s as usize] = v.unwrap_or_else(|| {
                unidentified.push(format!("t{t}s{s}"));
                0.0
            });
        }
    }
    let components = SubsetComponents {
        gamma0: means[0][1] - means[0][0],
        var0: vars[0][1] + vars[0][0],
        gamma1: means[1][1] - means[1][0],
        var1: vars[1][1] + vars[1][0],
    };
    let mut r = EstimateResult::from_components(Method::SubsetDifference, components, opts.level, counts)?
        .with_diagnostic("biased_for_atme", true)
        .with_diagnostic(
            "cell_means",
            serde_json::json!({
                "t0_s0": means[0][0], "t0_s1": means[0][1],
                "t1_s0": means[1][0], "t1_s1": means[1][1],
            }),
        );
    if !unidentified.is_empty() {
        r = r.with_diagnostic("cells_without_variance", unidentified);
    }
    Ok(r)
}

/// Coefficient on `T·S` in one regression on `(1, T, S, X, T·S)`.
///
/// Omits the `T·X` interactions, so it is biased for the moderation effect
/// whenever `X` both modifies the treatment effect and correlates with `S`.
pub fn controlled_interaction(ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let counts = ds.cell_counts();
    require_full_cells(&counts)?;
    let mode = opts.variance_mode(ds);
    let (tn, sn) = (ds.treatment_name(), ds.moderator_name());
    let ts = format!("{tn}:{sn}");
    let design = with_covariates(
        Design::new(ds.n())
            .intercept()
            .column(tn, f64s(ds.t()))
            .column(sn, f64s(ds.s())),
        ds,
    )
    .column(ts.clone(), ds.t().iter().zip(ds.s()).map(|(&t, &s)| f64::from(t * s)));
    let fit = least_squares_fit(&design, ds.y(), mode, ds.cluster_ids())?;
    let j = design.index_of(&ts).expect("interaction column");
    Ok(EstimateResult::new(
        Method::ControlledInteraction,
        fit.coefficients[j],
        fit.covariance[(j, j)],
        opts.level,
        counts,
    )?
    .with_diagnostic("biased_for_atme", true)
    .with_diagnostic("variance_mode", serde_json::to_value(mode).expect("serializable")))
}

/// `(γ̂, Var γ̂)` for `S` in `Y ~ 1 + S + X` within one treatment subset.
fn moderator_effect(treatment: u8, sub: &Dataset, mode: VarianceMode) -> Result<(f64, f64)> {
    let ones = sub.s().iter().filter(|&&s| s == 1).count();
    if ones == 0 || ones == sub.n() {
        return Err(Error::SingleLevelModerator { treatment });
    }
    let design = with_covariates(
        Design::new(sub.n())
            .intercept()
            .column(sub.moderator_name(), f64s(sub.s())),
        sub,
    );
    let fit = least_squares_fit(&design, sub.y(), mode, sub.cluster_ids())?;
    Ok((fit.coefficients[1], fit.covariance[(1, 1)]))
}

/// Fits `Y ~ 1 + S + X` separately for `T = 0` and `T = 1` and differences
/// the `S` coefficients; the variance is the sum of the two subset variances.
pub fn parallel_regression(ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let mode = opts.variance_mode(ds);
    if mode == VarianceMode::ClusterRobust && ds.cluster_ids().is_none() {
        return Err(Error::MissingClusters);
    }
    let ((gamma0, var0), (gamma1, var1)) = per_treatment(ds, |t, sub| moderator_effect(t, sub, mode))?;
    let components = SubsetComponents {
        gamma0,
        var0,
        gamma1,
        var1,
    };
    Ok(
        EstimateResult::from_components(Method::ParallelRegression, components, opts.level, ds.cell_counts())?
            .with_diagnostic("variance_mode", serde_json::to_value(mode).expect("serializable")),
    )
}

/// Coefficient on `T·S` in one regression on `(1, T, S, X, T·S, T·X)`.
///
/// Algebraically identical to [`parallel_regression`]; only the variance
/// differs, because it is computed from the pooled fit.
pub fn full_interaction(ds: &Dataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let mode = opts.variance_mode(ds);
    let (tn, sn) = (ds.treatment_name(), ds.moderator_name());
    let ts = format!("{tn}:{sn}");
    let mut design = with_covariates(
        Design::new(ds.n())
            .intercept()
            .column(tn, f64s(ds.t()))
            .column(sn, f64s(ds.s())),
        ds,
    )
    .column(ts.clone(), ds.t().iter().zip(ds.s()).map(|(&t, &s)| f64::from(t * s)));
    for (j, name) in ds.covariate_names().iter().enumerate() {
        let col = ds.x().column(j);
        let tx = ds.t().iter().zip(col.iter()).map(|(&t, &x)| f64::from(t) * x);
        design = design.column(format!("{tn}:{name}"), tx);
    }
    let fit = least_squares_fit(&design, ds.y(), mode, ds.cluster_ids())?;
    let j = design.index_of(&ts).expect("interaction column");
    let estimate = fit.coefficients[j];

    if cfg!(debug_assertions) {
        if let Ok(pr) = parallel_regression(ds, opts) {
            let gap = (estimate - pr.estimate).abs() / pr.estimate.abs().max(1.0);
            debug_assert!(gap <= 1e-8, "full interaction {estimate} vs parallel {}", pr.estimate);
        }
    }

    Ok(EstimateResult::new(
        Method::FullInteraction,
        estimate,
        fit.covariance[(j, j)],
        opts.level,
        ds.cell_counts(),
    )?
    .with_diagnostic("variance_mode", serde_json::to_value(mode).expect("serializable")))
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::estimators::fixtures::cell_means;

    fn opts() -> EstimatorOptions {
        EstimatorOptions::default()
    }

    /// Gaussian elimination with partial pivoting on the normal equations.
    fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let d = rows[0].len();
        let mut a = vec![vec![0.0; d + 1]; d];
        for (r, &yi) in rows.iter().zip(y) {
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += r[i] * r[j];
                }
                a[i][d] += r[i] * yi;
            }
        }
        for c in 0..d {
            let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            for r in c + 1..d {
                let f = a[r][c] / a[c][c];
                for j in c..=d {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
        let mut b = vec![0.0; d];
        for i in (0..d).rev() {
            let s: f64 = (i + 1..d).map(|j| a[i][j] * b[j]).sum();
            b[i] = (a[i][d] - s) / a[i][i];
        }
        b
    }

    fn random_dataset(seed: u64, n: usize, k: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let x = DMatrix::from_fn(n, k, |_, _| rng.random_range(-2.0..2.0));
            let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
            let s: Vec<u8> = (0..n)
                .map(|i| {
                    let lin: f64 = if k > 0 { x[(i, 0)] } else { 0.0 };
                    u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-lin).exp()))
                })
                .collect();
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let xs: f64 = (0..k).map(|j| x[(i, j)] * (j as f64 + 0.5)).sum();
                    let ti = f64::from(t[i]);
                    let si = f64::from(s[i]);
                    1.0 + ti + si + 2.0 * ti * si + xs * (1.0 + 1.5 * ti) + rng.random_range(-1.0..1.0)
                })
                .collect();
            let names = (0..k).map(|j| format!("x{j}")).collect();
            let ds = Dataset::new(y, t, s, x, names, None).unwrap();
            let c = ds.cell_counts();
            if [c.t0_s0, c.t0_s1, c.t1_s0, c.t1_s1].iter().all(|&m| m > k + 2) {
                return ds;
            }
        }
    }

    #[test]
    fn saturated_designs_reproduce_cell_means() {
        let ds = cell_means();
        for m in [
            Method::SubsetDifference,
            Method::ControlledInteraction,
            Method::ParallelRegression,
            Method::FullInteraction,
        ] {
            let r = crate::estimators::estimate(&ds, m, &opts()).unwrap();
            assert!((r.estimate - 2.0).abs() < 1e-12, "{m}: {}", r.estimate);
        }
    }

    #[test]
    fn subset_difference_variance_is_sum_of_cell_variances() {
        // cell sample variances 2, 0, 0, 2 over two rows each
        let r = subset_difference(&cell_means(), &opts()).unwrap();
        assert!((r.variance - 2.0).abs() < 1e-12);
        assert_eq!(r.diagnostics["biased_for_atme"], true);
        let c = r.subset_components.unwrap();
        assert_eq!((c.gamma0, c.gamma1), (0.0, 2.0));
    }

    #[test]
    fn subset_difference_clustered_cell_variance() {
        // T1S1 cell {3, 5} in two clusters: G/(G−1)·((−1)² + 1²)/2² = 1
        // T0S0 cell {0, 2, 4} with clusters {a, a, b}: deviations −2, 0 | 2 → 2/1·(4 + 4)/9
        let y = vec![3.0, 5.0, 1.0, 1.0, 2.0, 2.0, 0.0, 2.0, 4.0];
        let t = vec![1, 1, 0, 0, 1, 1, 0, 0, 0];
        let s = vec![1, 1, 1, 1, 0, 0, 0, 0, 0];
        let cl = ["p", "q", "r", "s", "u", "v", "a", "a", "b"].map(String::from).to_vec();
        let ds = Dataset::new(y, t, s, DMatrix::zeros(9, 0), vec![], Some(cl)).unwrap();
        let r = subset_difference(&ds, &opts()).unwrap();
        let want = 1.0 + 2.0 * 8.0 / 9.0;
        assert!((r.variance - want).abs() < 1e-12, "{} vs {want}", r.variance);
    }

    #[test]
    fn singleton_cells_have_flagged_zero_variance() {
        let ds = Dataset::new(
            vec![5.0, 2.0, 3.0, 1.0],
            vec![1, 0, 1, 0],
            vec![1, 1, 0, 0],
            DMatrix::zeros(4, 0),
            vec![],
            None,
        )
        .unwrap();
        let r = subset_difference(&ds, &opts()).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.diagnostics["cells_without_variance"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn constant_outcome_gives_zero() {
        let ds = random_dataset(3, 60, 1);
        let flat = Dataset::new(
            vec![4.0; ds.n()],
            ds.t().to_vec(),
            ds.s().to_vec(),
            ds.x().clone(),
            ds.covariate_names().to_vec(),
            None,
        )
        .unwrap();
        let r = subset_difference(&flat, &opts()).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(parallel_regression(&flat, &opts()).unwrap().estimate.abs() < 1e-12);
    }

    #[test]
    fn parallel_regression_matches_normal_equations() {
        let ds = random_dataset(40, 40, 2);
        let r = parallel_regression(&ds, &opts()).unwrap();
        let mut gammas = [0.0; 2];
        for t in 0..2u8 {
            let idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.t()[i] == t).collect();
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .map(|&i| vec![1.0, f64::from(ds.s()[i]), ds.x()[(i, 0)], ds.x()[(i, 1)]])
                .collect();
            let y: Vec<f64> = idx.iter().map(|&i| ds.y()[i]).collect();
            gammas[t as usize] = normal_equations(&rows, &y)[1];
        }
        let c = r.subset_components.unwrap();
        assert!((c.gamma0 - gammas[0]).abs() < 1e-8);
        assert!((c.gamma1 - gammas[1]).abs() < 1e-8);
        assert!((r.estimate - (gammas[1] - gammas[0])).abs() < 1e-8);
        assert!((r.variance - (c.var0 + c.var1)).abs() < 1e-15);
    }

    #[test]
    fn controlled_interaction_matches_normal_equations() {
        let ds = random_dataset(41, 80, 1);
        let rows: Vec<Vec<f64>> = (0..ds.n())
            .map(|i| {
                let (t, s) = (f64::from(ds.t()[i]), f64::from(ds.s()[i]));
                vec![1.0, t, s, ds.x()[(i, 0)], t * s]
            })
            .collect();
        let want = normal_equations(&rows, ds.y())[4];
        let r = controlled_interaction(&ds, &opts()).unwrap();
        assert!((r.estimate - want).abs() < 1e-8);
        assert_eq!(r.diagnostics["biased_for_atme"], true);
    }

    #[test]
    fn label_swaps_negate_estimates() {
        let ds = random_dataset(5, 120, 2);
        for m in [
            Method::SubsetDifference,
            Method::ControlledInteraction,
            Method::ParallelRegression,
            Method::FullInteraction,
        ] {
            let base = crate::estimators::estimate(&ds, m, &opts()).unwrap().estimate;
            for flipped in [ds.with_flipped_moderator(), ds.with_flipped_treatment()] {
                let e = crate::estimators::estimate(&flipped, m, &opts()).unwrap().estimate;
                assert!((e + base).abs() < 1e-9 * base.abs().max(1.0), "{m}: {e} vs {base}");
            }
        }
    }

    #[test]
    fn preconditions_surface_as_errors() {
        let ds = Dataset::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![0, 0, 1, 1, 1],
            vec![0, 0, 0, 1, 1],
            DMatrix::zeros(5, 0),
            vec![],
            None,
        )
        .unwrap();
        assert!(matches!(
            subset_difference(&ds, &opts()),
            Err(Error::EmptyCell { t: 0, s: 1 })
        ));
        assert!(matches!(
            controlled_interaction(&ds, &opts()),
            Err(Error::EmptyCell { .. })
        ));
        assert!(matches!(
            parallel_regression(&ds, &opts()),
            Err(Error::SingleLevelModerator { treatment: 0 })
        ));
        let collinear = random_dataset(9, 50, 1);
        let dup = collinear.x().column(0).iter().copied().collect::<Vec<_>>();
        let collinear = collinear.with_covariate("x0_copy", &dup).unwrap();
        match parallel_regression(&collinear, &opts()) {
            Err(Error::Subset { source, .. }) => {
                assert!(matches!(*source, Error::RankDeficient { ref columns } if columns == &["x0", "x0_copy"]))
            }
            other => panic!("{other:?}"),
        }
        let clustered = EstimatorOptions {
            variance: Some(VarianceMode::ClusterRobust),
            ..opts()
        };
        assert!(matches!(
            parallel_regression(&cell_means(), &clustered),
            Err(Error::MissingClusters)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn full_interaction_equals_parallel_regression(seed in 0u64..1_000_000, n in 50usize..300, k in 0usize..4) {
            let ds = random_dataset(seed, n, k);
            let pr = parallel_regression(&ds, &opts()).unwrap().estimate;
            let fr = full_interaction(&ds, &opts()).unwrap().estimate;
            prop_assert!((fr - pr).abs() / pr.abs().max(1.0) <= 1e-8);
        }
    }
}
