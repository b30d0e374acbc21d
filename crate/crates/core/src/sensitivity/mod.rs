//! Sensitivity of the moderation estimate to a binary unobserved confounder
//! `U ~ Bernoulli(½)`.
//!
//! Within each treatment subset the latent-confounder model is fitted at a
//! fixed selection effect `α̃` (shared by both subsets) and outcome effect
//! `κ̃_t`; the adjusted estimate is `δ̃ = γ̃₁ − γ̃₀`. Sweeping `(α̃, κ̃₁ − κ̃₀)`
//! gives a grid, and the pairs at which `δ̃` equals a fraction of the
//! unadjusted estimate form a level curve.

mod curve;
mod references;

pub use curve::{danger_zone, level_curve, CurvePoint, DangerAssessment, DangerZone, LevelCurve, LevelCurveOptions};
pub use references::{benchmark_references, BenchmarkReferences};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{parallel_regression, EstimatorOptions};
use crate::kernel::{mixture_mle_with, MixtureMLEResult, MixtureOptions, MixtureParams};

/// How `(κ̃₀, κ̃₁)` are recovered from `κ_diff = κ̃₁ − κ̃₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSplit {
    /// `κ̃₀ = −κ_diff / 2`, `κ̃₁ = κ_diff / 2`.
    #[default]
    Symmetric,
    /// `κ̃₀ = 0`, `κ̃₁ = κ_diff`.
    Anchored,
}

impl KappaSplit {
    pub fn split(self, kappa_diff: f64) -> (f64, f64) {
        match self {
            KappaSplit::Symmetric => (-kappa_diff / 2.0, kappa_diff / 2.0),
            KappaSplit::Anchored => (0.0, kappa_diff),
        }
    }
}

impl std::str::FromStr for KappaSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "symmetric" => Ok(KappaSplit::Symmetric),
            "anchored" => Ok(KappaSplit::Anchored),
            _ => Err(Error::InvalidArgument(format!("unknown kappa split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub alpha_tilde: f64,
    pub kappa0_tilde: f64,
    pub kappa1_tilde: f64,
}

impl SensitivitySpec {
    pub fn new(alpha_tilde: f64, kappa0_tilde: f64, kappa1_tilde: f64) -> Result<Self> {
        if [alpha_tilde, kappa0_tilde, kappa1_tilde].iter().all(|v| v.is_finite()) {
            Ok(Self {
                alpha_tilde,
                kappa0_tilde,
                kappa1_tilde,
            })
        } else {
            Err(Error::InvalidArgument("sensitivity parameters must be finite".into()))
        }
    }

    pub fn from_diff(alpha_tilde: f64, kappa_diff: f64, split: KappaSplit) -> Result<Self> {
        let (k0, k1) = split.split(kappa_diff);
        Self::new(alpha_tilde, k0, k1)
    }

    pub fn kappa_diff(&self) -> f64 {
        self.kappa1_tilde - self.kappa0_tilde
    }
}

/// EM settings for every mixture fit in this module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub spec: SensitivitySpec,
    /// `fit1.params.gamma − fit0.params.gamma`.
    pub delta_adjusted: f64,
    pub fit0: MixtureMLEResult,
    pub fit1: MixtureMLEResult,
    pub converged: bool,
}

/// The two treatment subsets, split once and reused across evaluations.
pub(crate) struct Arms {
    pub d0: Dataset,
    pub d1: Dataset,
}

impl Arms {
    pub fn new(ds: &Dataset) -> Self {
        let (d0, d1) = ds.split_by_treatment();
        Self { d0, d1 }
    }

    /// Fits both subsets; `warm` holds starting values for `(T = 0, T = 1)`.
    pub fn evaluate(
        &self,
        spec: SensitivitySpec,
        opts: SensitivityOptions,
        warm: Option<(&MixtureParams, &MixtureParams)>,
    ) -> Result<SensitivityPoint> {
        let fit = |t: u8, sub: &Dataset, kappa: f64, init: Option<&MixtureParams>| {
            let o = MixtureOptions {
                tolerance: opts.tolerance,
                max_iterations: opts.max_iterations,
                init: init.cloned(),
            };
            mixture_mle_with(sub, spec.alpha_tilde, kappa, &o).map_err(|e| Error::Subset {
                treatment: t,
                source: Box::new(e),
            })
        };
        let (f0, f1) = rayon::join(
            || fit(0, &self.d0, spec.kappa0_tilde, warm.map(|w| w.0)),
            || fit(1, &self.d1, spec.kappa1_tilde, warm.map(|w| w.1)),
        );
        let (fit0, fit1) = (f0?, f1?);
        Ok(SensitivityPoint {
            spec,
            delta_adjusted: fit1.params.gamma - fit0.params.gamma,
            converged: fit0.converged && fit1.converged,
            fit0,
            fit1,
        })
    }
}

/// Adjusted estimate at one specification; fails if either subset fit does
/// not converge.
pub fn sensitivity_point(ds: &Dataset, spec: SensitivitySpec, opts: SensitivityOptions) -> Result<SensitivityPoint> {
    let p = Arms::new(ds).evaluate(spec, opts, None)?;
    for (t, f) in [(0, &p.fit0), (1, &p.fit1)] {
        if !f.converged {
            return Err(Error::Subset {
                treatment: t,
                source: Box::new(Error::NotConverged {
                    iterations: f.iterations,
                }),
            });
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha_tilde: f64,
    pub kappa_diff: f64,
    pub kappa0_tilde: f64,
    pub kappa1_tilde: f64,
    pub delta_adjusted: Option<f64>,
    pub converged: bool,
    /// `δ̃ − δ̂`.
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub split: KappaSplit,
    /// Unadjusted parallel-regression estimate.
    pub delta_hat: f64,
    pub alpha_grid: Vec<f64>,
    pub kappa_diff_grid: Vec<f64>,
    /// Row-major: all `kappa_diff` values for the first `alpha`, then the next.
    pub cells: Vec<GridCell>,
}

impl SensitivityGrid {
    pub fn cell(&self, alpha_index: usize, kappa_index: usize) -> &GridCell {
        &self.cells[alpha_index * self.kappa_diff_grid.len() + kappa_index]
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} grid has non-finite values")));
    }
    Ok(())
}

/// Full Cartesian sweep over `alpha_grid × kappa_diff_grid`.
///
/// Rows (one `α̃` each) run in parallel; along a row each cell starts EM from
/// its left neighbour's solution. Failed or non-converged cells are flagged,
/// not fatal.
pub fn sensitivity_grid(
    ds: &Dataset,
    alpha_grid: &[f64],
    kappa_diff_grid: &[f64],
    split: KappaSplit,
    opts: SensitivityOptions,
) -> Result<SensitivityGrid> {
    check_grid("alpha", alpha_grid)?;
    check_grid("kappa_diff", kappa_diff_grid)?;
    let delta_hat = parallel_regression(ds, &EstimatorOptions::default())?.estimate;
    let arms = Arms::new(ds);
    let rows: Vec<Vec<GridCell>> = alpha_grid
        .par_iter()
        .map(|&alpha| {
            let mut warm: Option<(MixtureParams, MixtureParams)> = None;
            kappa_diff_grid
                .iter()
                .map(|&d| {
                    let (k0, k1) = split.split(d);
                    let spec = SensitivitySpec {
                        alpha_tilde: alpha,
                        kappa0_tilde: k0,
                        kappa1_tilde: k1,
                    };
                    let base = GridCell {
                        alpha_tilde: alpha,
                        kappa_diff: d,
                        kappa0_tilde: k0,
                        kappa1_tilde: k1,
                        delta_adjusted: None,
                        converged: false,
                        residual: None,
                        error: None,
                    };
                    match arms.evaluate(spec, opts, warm.as_ref().map(|(a, b)| (a, b))) {
                        Ok(p) => {
                            warm = Some((p.fit0.params.clone(), p.fit1.params.clone()));
                            GridCell {
                                delta_adjusted: Some(p.delta_adjusted),
                                converged: p.converged,
                                residual: Some(p.delta_adjusted - delta_hat),
                                ..base
                            }
                        }
                        Err(e) => {
                            warm = None;
                            GridCell {
                                error: Some(e.to_string()),
                                ..base
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok(SensitivityGrid {
        split,
        delta_hat,
        alpha_grid: alpha_grid.to_vec(),
        kappa_diff_grid: kappa_diff_grid.to_vec(),
        cells: rows.into_iter().flatten().collect(),
    })
}

/// Largest `|δ̃_warm − δ̃_cold|` over every `stride`-th grid cell, re-solving
/// those cells from a cold start.
pub fn cold_start_gap(ds: &Dataset, grid: &SensitivityGrid, stride: usize, opts: SensitivityOptions) -> Result<f64> {
    let arms = Arms::new(ds);
    let stride = stride.max(1);
    let gaps: Vec<f64> = grid
        .cells
        .par_iter()
        .step_by(stride)
        .filter_map(|c| {
            let warm = c.delta_adjusted?;
            let spec = SensitivitySpec {
                alpha_tilde: c.alpha_tilde,
                kappa0_tilde: c.kappa0_tilde,
                kappa1_tilde: c.kappa1_tilde,
            };
            arms.evaluate(spec, opts, None)
                .ok()
                .map(|p| (p.delta_adjusted - warm).abs())
        })
        .collect();
    Ok(gaps.into_iter().fold(0.0, f64::max))
}
