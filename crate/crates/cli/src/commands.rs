use atme_core::data::{check_common_support, DEFAULT_SUPPORT_EPSILON};
use atme_core::estimators::{balance_table, BootstrapOptions, PropensityOptions, TreatmentProbability};
use atme_core::sensitivity::{
    benchmark_references, danger_zone, level_curve, sensitivity_grid, LevelCurveOptions, SensitivityOptions,
};
use atme_core::simulation::{
    generate_with_latent, monte_carlo, oracle_controlled_interaction_bias, DgpConfig, McEstimator, MonteCarloOptions,
    PlantedConfounder, XModel,
};
use atme_core::{estimate, BindOptions, Dataset, EstimateResult, EstimatorOptions, Method, Roles};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{DataArgs, DiagnoseArgs, EstimateArgs, Format, RunArgs, SensitivityArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::io::{cell, emit, opt_cell, read_csv, to_csv, to_json};

pub const TOOL_VERSION: &str = concat!("atme ", env!("CARGO_PKG_VERSION"));

/// Column contract of level-curve and grid CSV output.
pub const CURVE_HEADER: [&str; 5] = ["alpha_tilde", "kappa_diff", "delta_adjusted", "converged", "residual"];

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn format_of(run: &RunArgs) -> Format {
    run.format.unwrap_or_else(|| match &run.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => Format::Csv,
        _ => Format::Json,
    })
}

fn log(run: &RunArgs, msg: impl AsRef<str>) {
    if run.verbose {
        eprintln!("atme: {}", msg.as_ref());
    }
}

fn warn(run: &RunArgs, msg: impl AsRef<str>) {
    if !run.quiet {
        eprintln!("atme: warning: {}", msg.as_ref());
    }
}

fn load(data: &DataArgs, run: &RunArgs) -> CliResult<(Dataset, Vec<usize>)> {
    let path = data.data.as_deref().ok_or_else(|| usage("--data is required"))?;
    let need = |v: &Option<String>, flag: &str| v.clone().ok_or_else(|| usage(format!("--{flag} is required")));
    let mut roles = Roles::new(
        need(&data.outcome, "outcome")?,
        need(&data.treatment, "treatment")?,
        need(&data.moderator, "moderator")?,
    )
    .covariates(data.covariates.iter().filter(|c| !c.is_empty()).cloned());
    if let Some(c) = &data.cluster {
        roles = roles.cluster(c.clone());
    }
    let mut names: Vec<&str> = vec![&roles.outcome, &roles.treatment, &roles.moderator];
    names.extend(roles.covariates.iter().map(String::as_str));
    names.extend(roles.cluster.as_deref());
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(usage(format!("column `{n}` is given more than one role")));
        }
    }
    let bound = read_csv(
        path,
        &roles,
        BindOptions {
            drop_missing: data.drop_missing,
        },
    )?;
    log(
        run,
        format!(
            "read {} rows from {}",
            bound.dataset.n() + bound.dropped_rows.len(),
            path.display()
        ),
    );
    if !bound.dropped_rows.is_empty() {
        warn(
            run,
            format!("dropped {} rows with missing values", bound.dropped_rows.len()),
        );
    }
    Ok((bound.dataset, bound.dropped_rows))
}

/// Report object with the version and seed stamped in.
fn stamped<T: Serialize>(value: &T, seed: Option<u64>) -> Value {
    let mut v = serde_json::to_value(value).expect("reports serialize");
    if let Value::Object(m) = &mut v {
        m.insert("tool_version".into(), TOOL_VERSION.into());
        m.insert("seed".into(), seed.map_or(Value::Null, Value::from));
    }
    v
}

fn parse_trim(text: &str) -> CliResult<Option<(f64, f64)>> {
    if text.trim().eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--trim expects LO,HI or none, got `{text}`")))?;
    match parts.as_slice() {
        [lo, hi] if 0.0 < *lo && lo < hi && *hi < 1.0 => Ok(Some((*lo, *hi))),
        _ => Err(usage(format!("--trim bounds `{text}` must satisfy 0 < LO < HI < 1"))),
    }
}

/// `START:STOP:STEP` (inclusive of `STOP` up to rounding) or `v1,v2,..`.
pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let bad = || usage(format!("cannot parse grid `{text}`"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad())
            .and_then(|v| if v.is_finite() { Ok(v) } else { Err(bad()) })
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h) = (num(start)?, num(stop)?, num(step)?);
            if !(h > 0.0) || b < a {
                return Err(usage(format!("grid `{text}` needs STEP > 0 and STOP >= START")));
            }
            let count = ((b - a) / h + 1e-9).floor() as usize + 1;
            if count > 100_000 {
                return Err(usage(format!("grid `{text}` has too many points")));
            }
            Ok((0..count).map(|i| a + i as f64 * h).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn estimate_csv(r: &EstimateResult, seed: Option<u64>) -> Vec<u8> {
    let c = r.subset_components;
    let cc = r.cell_counts;
    let row = vec![
        r.method.name().to_string(),
        cell(r.estimate),
        cell(r.variance),
        cell(r.std_error),
        cell(r.ci_lower),
        cell(r.ci_upper),
        cell(r.level),
        opt_cell(c.map(|c| c.gamma0)),
        opt_cell(c.map(|c| c.var0)),
        opt_cell(c.map(|c| c.gamma1)),
        opt_cell(c.map(|c| c.var1)),
        cc.t0_s0.to_string(),
        cc.t0_s1.to_string(),
        cc.t1_s0.to_string(),
        cc.t1_s1.to_string(),
        serde_json::to_string(&r.diagnostics).expect("diagnostics serialize"),
        TOOL_VERSION.into(),
        seed.map(|s| s.to_string()).unwrap_or_default(),
    ];
    to_csv(
        &[
            "method",
            "estimate",
            "variance",
            "std_error",
            "ci_lower",
            "ci_upper",
            "level",
            "gamma0",
            "var0",
            "gamma1",
            "var1",
            "n_t0_s0",
            "n_t0_s1",
            "n_t1_s0",
            "n_t1_s1",
            "diagnostics",
            "tool_version",
            "seed",
        ],
        &[row],
    )
}

pub fn estimate_cmd(a: &EstimateArgs) -> CliResult<()> {
    let (ds, _) = load(&a.data, &a.run)?;
    let method = a.method.unwrap_or(Method::ParallelRegression);
    let mut propensity = PropensityOptions::default();
    if let Some(t) = &a.trim {
        propensity.trim = parse_trim(t)?;
    }
    if let Some(p) = a.treatment_prob {
        propensity.treatment = TreatmentProbability::Known(p);
    }
    if a.bootstrap.is_some() && !matches!(method, Method::ParallelMatching | Method::PropensityWeighting) {
        return Err(usage(
            "--bootstrap applies only to parallel-matching and propensity-weighting",
        ));
    }
    if (a.trim.is_some() || a.treatment_prob.is_some()) && method != Method::PropensityWeighting {
        return Err(usage("--trim and --treatment-prob apply only to propensity-weighting"));
    }
    let opts = EstimatorOptions {
        variance: a.variance,
        level: a.level.unwrap_or(0.95),
        propensity,
        bootstrap: a.bootstrap.map(|replications| BootstrapOptions {
            replications,
            seed: a.run.seed.unwrap_or(0),
        }),
    };
    let r = estimate(&ds, method, &opts)?;
    let bytes = match format_of(&a.run) {
        Format::Json => to_json(&stamped(&r, a.run.seed)),
        Format::Csv => estimate_csv(&r, a.run.seed),
    };
    emit(a.run.out.as_deref(), &bytes)
}

fn dgp_from(a: &SimulateArgs) -> CliResult<DgpConfig> {
    let mut cfg = match &a.dgp_config {
        Some(p) => DgpConfig::from_kv(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
        None => DgpConfig::baseline(),
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut cfg.alpha, a.alpha);
    set(&mut cfg.tau, a.tau);
    set(&mut cfg.omega, a.omega);
    set(&mut cfg.beta, a.beta);
    set(&mut cfg.delta, a.delta);
    set(&mut cfg.xi, a.xi);
    set(&mut cfg.sigma_eps, a.sigma);
    set(&mut cfg.p_treat, a.p_treat);
    set(&mut cfg.s_model.a, a.sa);
    set(&mut cfg.s_model.b, a.sb);
    if let Some(x) = &a.x_model {
        cfg.x_model = x.parse::<XModel>()?;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if let Some(s) = a.run.seed {
        cfg.seed = s;
    }
    match (a.u_alpha, a.u_kappa0, a.u_kappa1, cfg.confounder.as_mut()) {
        (None, None, None, _) => {}
        (Some(alpha_u), Some(kappa0), Some(kappa1), _) => {
            cfg.confounder = Some(PlantedConfounder {
                alpha_u,
                kappa0,
                kappa1,
            });
        }
        (u_alpha, k0, k1, Some(c)) => {
            set(&mut c.alpha_u, u_alpha);
            set(&mut c.kappa0, k0);
            set(&mut c.kappa1, k1);
        }
        _ => return Err(usage("--u-alpha, --u-kappa0 and --u-kappa1 must be given together")),
    }
    cfg.validate()?;
    Ok(cfg)
}

const MC_HEADER: [&str; 13] = [
    "estimator",
    "replications",
    "failures",
    "mean_estimate",
    "bias",
    "empirical_sd",
    "mc_std_error",
    "mean_std_error",
    "coverage",
    "true_atme",
    "level",
    "seed",
    "tool_version",
];

pub fn simulate_cmd(a: &SimulateArgs) -> CliResult<()> {
    let cfg = dgp_from(a)?;
    let estimators = if a.methods.is_empty() {
        vec![
            McEstimator::Standard(Method::ParallelRegression),
            McEstimator::Standard(Method::ControlledInteraction),
        ]
    } else {
        a.methods.clone()
    };
    let opts = MonteCarloOptions {
        replications: a.reps.unwrap_or(1000),
        estimators,
        estimator_options: EstimatorOptions {
            level: a.level.unwrap_or(0.95),
            ..EstimatorOptions::default()
        },
    };
    if let Some(p) = &a.emit_data {
        let (hidden, full) = generate_with_latent(&cfg)?;
        let ds = if cfg.confounder.is_some() { full } else { hidden };
        std::fs::write(p, dataset_csv(&ds)).map_err(|e| CliError::io(p, e))?;
        log(&a.run, format!("wrote the master-seed draw to {}", p.display()));
    }
    log(
        &a.run,
        format!("running {} replications of n = {}", opts.replications, cfg.n),
    );
    let report = monte_carlo(&cfg, &opts)?;
    for s in &report.estimators {
        if s.failures > 0 {
            warn(
                &a.run,
                format!(
                    "{}: {} of {} replications failed",
                    s.estimator, s.failures, report.requested_replications
                ),
            );
        }
    }
    let bytes = match format_of(&a.run) {
        Format::Json => {
            let mut v = stamped(&report, Some(cfg.seed));
            let oracle = match oracle_controlled_interaction_bias(&cfg) {
                Ok(o) => serde_json::to_value(o).expect("oracle serializes"),
                Err(e) => json!({ "error": e.to_string() }),
            };
            v["controlled_interaction_oracle"] = oracle;
            to_json(&v)
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .estimators
                .iter()
                .map(|s| {
                    vec![
                        s.estimator.name().to_string(),
                        s.replications.to_string(),
                        s.failures.to_string(),
                        cell(s.mean_estimate),
                        cell(s.bias),
                        cell(s.empirical_sd),
                        cell(s.mc_std_error),
                        cell(s.mean_std_error),
                        cell(s.coverage),
                        cell(report.true_atme),
                        cell(report.level),
                        report.seed.to_string(),
                        TOOL_VERSION.into(),
                    ]
                })
                .collect();
            to_csv(&MC_HEADER, &rows)
        }
    };
    emit(a.run.out.as_deref(), &bytes)
}

fn dataset_csv(ds: &Dataset) -> Vec<u8> {
    let mut header = vec![ds.outcome_name(), ds.treatment_name(), ds.moderator_name()];
    header.extend(ds.covariate_names().iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..ds.n())
        .map(|i| {
            let mut r = vec![cell(ds.y()[i]), ds.t()[i].to_string(), ds.s()[i].to_string()];
            r.extend(ds.x().row(i).iter().map(|&v| cell(v)));
            r
        })
        .collect();
    to_csv(&header, &rows)
}

fn curve_row(alpha: f64, kappa: f64, delta: Option<f64>, converged: bool, residual: Option<f64>) -> Vec<String> {
    vec![
        cell(alpha),
        cell(kappa),
        opt_cell(delta),
        converged.to_string(),
        opt_cell(residual),
    ]
}

pub fn sensitivity_cmd(a: &SensitivityArgs) -> CliResult<()> {
    let (ds, _) = load(&a.data, &a.run)?;
    let alphas = parse_grid(a.alpha_grid.as_deref().unwrap_or("0:2:0.1"))?;
    let mut em = SensitivityOptions::default();
    if let Some(t) = a.em_tolerance {
        em.tolerance = t;
    }
    if let Some(m) = a.em_max_iter {
        em.max_iterations = m;
    }
    let split = a.split.unwrap_or_default();
    let format = format_of(&a.run);

    if let Some(kg) = &a.kappa_grid {
        if a.fraction.is_some() || a.tolerance.is_some() || a.max_kappa.is_some() {
            return Err(usage(
                "--fraction, --tolerance and --max-kappa apply to level curves, not --kappa-grid",
            ));
        }
        let kappas = parse_grid(kg)?;
        let grid = sensitivity_grid(&ds, &alphas, &kappas, split, em)?;
        let failed = grid.cells.iter().filter(|c| c.error.is_some() || !c.converged).count();
        if failed > 0 {
            warn(&a.run, format!("{failed} grid cells failed or did not converge"));
        }
        let bytes = match format {
            Format::Json => {
                let mut v = stamped(&json!({ "grid": grid }), a.run.seed);
                v["references"] = serde_json::to_value(benchmark_references(&ds)?).expect("serializes");
                to_json(&v)
            }
            Format::Csv => {
                let rows: Vec<Vec<String>> = grid
                    .cells
                    .iter()
                    .map(|c| curve_row(c.alpha_tilde, c.kappa_diff, c.delta_adjusted, c.converged, c.residual))
                    .collect();
                to_csv(&CURVE_HEADER, &rows)
            }
        };
        return emit(a.run.out.as_deref(), &bytes);
    }

    let opts = LevelCurveOptions {
        fraction: a.fraction.unwrap_or(0.5),
        tolerance: a.tolerance.unwrap_or(1e-4),
        split,
        max_abs_kappa: a.max_kappa,
        em,
        ..LevelCurveOptions::default()
    };
    let curve = level_curve(&ds, &alphas, &opts)?;
    if !curve.unbracketed_alphas.is_empty() {
        warn(
            &a.run,
            format!(
                "no level-curve point for {} alpha values",
                curve.unbracketed_alphas.len()
            ),
        );
    }
    for (alpha, e) in &curve.failed_alphas {
        warn(&a.run, format!("alpha {alpha}: {e}"));
    }
    let bytes = match format {
        Format::Json => {
            let zone = danger_zone(&curve);
            to_json(&stamped(
                &json!({ "level_curve": curve, "danger_zone": zone }),
                a.run.seed,
            ))
        }
        Format::Csv => {
            let rows: Vec<Vec<String>> = curve
                .points
                .iter()
                .map(|p| {
                    curve_row(
                        p.alpha_tilde,
                        p.kappa_diff,
                        Some(p.delta_adjusted),
                        p.converged,
                        Some(p.residual),
                    )
                })
                .collect();
            to_csv(&CURVE_HEADER, &rows)
        }
    };
    emit(a.run.out.as_deref(), &bytes)
}

fn or_error<T: Serialize>(r: atme_core::Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).expect("serializes"),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

/// Leaf paths of a JSON value as `(path, value)` rows.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<Vec<String>>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(a) => a
            .iter()
            .enumerate()
            .for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        Value::Null => out.push(vec![prefix.into(), String::new()]),
        Value::String(s) => out.push(vec![prefix.into(), s.clone()]),
        Value::Number(n) => out.push(vec![
            prefix.into(),
            n.as_f64().filter(|_| n.is_f64()).map_or(n.to_string(), cell),
        ]),
        Value::Bool(b) => out.push(vec![prefix.into(), b.to_string()]),
    }
}

/// Never fails once the data bind; each check records its own error.
pub fn diagnose_cmd(a: &DiagnoseArgs) -> CliResult<()> {
    let (ds, dropped) = load(&a.data, &a.run)?;
    let report = json!({
        "n": ds.n(),
        "dropped_rows": dropped,
        "cell_counts": ds.cell_counts(),
        "support": or_error(check_common_support(&ds, a.epsilon.unwrap_or(DEFAULT_SUPPORT_EPSILON))),
        "balance": or_error(balance_table(&ds, None)),
        "references": or_error(benchmark_references(&ds)),
    });
    let report = stamped(&report, a.run.seed);
    let bytes = match format_of(&a.run) {
        Format::Json => to_json(&report),
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", &report, &mut rows);
            to_csv(&["key", "value"], &rows)
        }
    };
    emit(a.run.out.as_deref(), &bytes)
}

pub fn threads_pool(n: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| usage(format!("cannot start thread pool: {e}")))
}
