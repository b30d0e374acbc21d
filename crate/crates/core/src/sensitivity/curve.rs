use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{benchmark_references, Arms, BenchmarkReferences, KappaSplit, SensitivityOptions, SensitivitySpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{parallel_regression, EstimatorOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCurveOptions {
    /// Target `c` in `δ̃ = c·δ̂`, in `(0, 1]`.
    pub fraction: f64,
    /// Accepted `|δ̃ − c·δ̂|`.
    pub tolerance: f64,
    pub split: KappaSplit,
    /// Largest `|κ_diff|` searched; defaults to `20·max(|δ̂|, sd(Y))`.
    pub max_abs_kappa: Option<f64>,
    pub em: SensitivityOptions,
    /// Root-finding iterations per `α̃` after bracketing.
    pub max_iterations: usize,
}

impl Default for LevelCurveOptions {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            tolerance: 1e-4,
            split: KappaSplit::Symmetric,
            max_abs_kappa: None,
            em: SensitivityOptions::default(),
            max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha_tilde: f64,
    pub kappa_diff: f64,
    pub delta_adjusted: f64,
    pub converged: bool,
    /// `δ̃ − c·δ̂`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCurve {
    pub fraction: f64,
    pub delta_hat: f64,
    /// `c·δ̂`.
    pub target: f64,
    pub tolerance: f64,
    pub split: KappaSplit,
    pub max_abs_kappa: f64,
    /// Sorted by `alpha_tilde`.
    pub points: Vec<CurvePoint>,
    /// `α̃` values with no sign change of `δ̃ − c·δ̂` inside the search bound,
    /// or where the root could not be pinned within tolerance.
    pub unbracketed_alphas: Vec<f64>,
    /// `α̃` values where a mixture fit failed, with the error.
    pub failed_alphas: Vec<(f64, String)>,
    pub references: BenchmarkReferences,
}

enum Outcome {
    Point(CurvePoint),
    Unbracketed,
    Failed(String),
}

struct Search<'a> {
    arms: &'a Arms,
    alpha: f64,
    target: f64,
    opts: &'a LevelCurveOptions,
}

impl Search<'_> {
    /// `(δ̃ − target, δ̃, converged)` from a cold start.
    fn eval(&self, kappa_diff: f64) -> Result<(f64, f64, bool)> {
        let spec = SensitivitySpec::from_diff(self.alpha, kappa_diff, self.opts.split)?;
        let p = self.arms.evaluate(spec, self.opts.em, None)?;
        Ok((p.delta_adjusted - self.target, p.delta_adjusted, p.converged))
    }

    fn point(&self, kappa_diff: f64, v: (f64, f64, bool)) -> Outcome {
        Outcome::Point(CurvePoint {
            alpha_tilde: self.alpha,
            kappa_diff,
            delta_adjusted: v.1,
            converged: v.2,
            residual: v.0,
        })
    }

    fn run(&self, bound: f64) -> Result<Outcome> {
        let tol = self.opts.tolerance;
        let f0 = self.eval(0.0)?;
        if f0.0.abs() <= tol {
            return Ok(self.point(0.0, f0));
        }
        // geometric expansion on both sides; the smallest |κ_diff| sign change wins
        let mut last = [(0.0, f0), (0.0, f0)];
        let mut h = bound / 64.0;
        let bracket = loop {
            if h > bound * (1.0 + 1e-12) {
                return Ok(Outcome::Unbracketed);
            }
            let mut found = None;
            for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
                let d = sign * h;
                let v = self.eval(d)?;
                if v.0.abs() <= tol {
                    return Ok(self.point(d, v));
                }
                if found.is_none() && (v.0 > 0.0) != (last[side].1 .0 > 0.0) {
                    found = Some((last[side], (d, v)));
                }
                last[side] = (d, v);
            }
            if let Some(b) = found {
                break b;
            }
            h *= 2.0;
        };

        // Illinois variant of regula falsi
        let ((mut a, mut fa), (mut b, mut fb)) = ((bracket.0 .0, bracket.0 .1), (bracket.1 .0, bracket.1 .1));
        let mut best = if fa.0.abs() < fb.0.abs() { (a, fa) } else { (b, fb) };
        let mut side = 0i8;
        for _ in 0..self.opts.max_iterations {
            let c = (a * fb.0 - b * fa.0) / (fb.0 - fa.0);
            let c = if c.is_finite() && c > a.min(b) && c < a.max(b) {
                c
            } else {
                0.5 * (a + b)
            };
            let fc = self.eval(c)?;
            if fc.0.abs() < best.1 .0.abs() {
                best = (c, fc);
            }
            if fc.0.abs() <= tol {
                return Ok(self.point(c, fc));
            }
            if (fc.0 > 0.0) == (fb.0 > 0.0) {
                b = c;
                fb = fc;
                if side == -1 {
                    fa.0 /= 2.0;
                }
                side = -1;
            } else {
                a = c;
                fa = fc;
                if side == 1 {
                    fb.0 /= 2.0;
                }
                side = 1;
            }
            if (b - a).abs() <= 1e-12 * bound {
                break;
            }
        }
        if best.1 .0.abs() <= tol {
            Ok(self.point(best.0, best.1))
        } else {
            Ok(Outcome::Unbracketed)
        }
    }
}

/// Pairs `(α̃, κ_diff)` with `δ̃ = fraction·δ̂`, one per `α̃`.
///
/// For each `α̃`, `κ_diff` is bracketed by doubling steps away from zero in
/// both directions up to `max_abs_kappa`, then refined by regula falsi. Every
/// evaluation starts EM cold, so re-evaluating a point through
/// [`super::sensitivity_point`] with the same EM options reproduces its
/// residual exactly. `α̃` values are processed in parallel.
pub fn level_curve(ds: &Dataset, alpha_grid: &[f64], opts: &LevelCurveOptions) -> Result<LevelCurve> {
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {} outside (0, 1]",
            opts.fraction
        )));
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("alpha grid must be non-empty and finite".into()));
    }
    let delta_hat = parallel_regression(ds, &EstimatorOptions::default())?.estimate;
    if delta_hat == 0.0 {
        return Err(Error::UndefinedLevelCurve);
    }
    let references = benchmark_references(ds)?;
    let bound = match opts.max_abs_kappa {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(Error::InvalidArgument(format!("kappa bound {b} must be positive"))),
        None => {
            let n = ds.n() as f64;
            let mean = ds.y().iter().sum::<f64>() / n;
            let sd = (ds.y().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            20.0 * delta_hat.abs().max(sd)
        }
    };
    let target = opts.fraction * delta_hat;
    let arms = Arms::new(ds);

    let mut alphas = alpha_grid.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let outcomes: Vec<(f64, Outcome)> = alphas
        .par_iter()
        .map(|&alpha| {
            let search = Search {
                arms: &arms,
                alpha,
                target,
                opts,
            };
            let o = search.run(bound).unwrap_or_else(|e| Outcome::Failed(e.to_string()));
            (alpha, o)
        })
        .collect();

    let mut points = Vec::new();
    let mut unbracketed_alphas = Vec::new();
    let mut failed_alphas = Vec::new();
    for (alpha, o) in outcomes {
        match o {
            Outcome::Point(p) => points.push(p),
            Outcome::Unbracketed => unbracketed_alphas.push(alpha),
            Outcome::Failed(e) => failed_alphas.push((alpha, e)),
        }
    }
    if points.is_empty() {
        return Err(Error::NoBracket);
    }
    Ok(LevelCurve {
        fraction: opts.fraction,
        delta_hat,
        target,
        tolerance: opts.tolerance,
        split: opts.split,
        max_abs_kappa: bound,
        points,
        unbracketed_alphas,
        failed_alphas,
        references,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DangerAssessment {
    /// A confounder no stronger in selection than the strongest observed
    /// binary covariate, with a moderation effect no larger than the
    /// estimate itself, reaches the target: the finding is fragile.
    InsideBox,
    OutsideBox,
    /// A benchmark is missing or the curve does not span it.
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DangerZone {
    pub assessment: DangerAssessment,
    pub alpha_benchmark: Option<f64>,
    pub atme_reference: Option<f64>,
    /// Curve `κ_diff` at `alpha_benchmark`, interpolated linearly.
    pub kappa_at_benchmark: Option<f64>,
}

/// Places the curve relative to the box spanned by the two reference lines.
pub fn danger_zone(curve: &LevelCurve) -> DangerZone {
    let refs = &curve.references;
    let mut out = DangerZone {
        assessment: DangerAssessment::Undetermined,
        alpha_benchmark: refs.max_observed_selection,
        atme_reference: refs.atme_reference,
        kappa_at_benchmark: None,
    };
    let (Some(a), Some(r)) = (refs.max_observed_selection, refs.atme_reference) else {
        return out;
    };
    let pts = &curve.points;
    let kappa = pts
        .iter()
        .find(|p| p.alpha_tilde == a)
        .map(|p| p.kappa_diff)
        .or_else(|| {
            pts.windows(2)
                .find(|w| w[0].alpha_tilde < a && a < w[1].alpha_tilde)
                .map(|w| {
                    let s = (a - w[0].alpha_tilde) / (w[1].alpha_tilde - w[0].alpha_tilde);
                    w[0].kappa_diff + s * (w[1].kappa_diff - w[0].kappa_diff)
                })
        });
    if let Some(k) = kappa {
        out.kappa_at_benchmark = Some(k);
        out.assessment = if k.abs() <= r.abs() {
            DangerAssessment::InsideBox
        } else {
            DangerAssessment::OutsideBox
        };
    }
    out
}
