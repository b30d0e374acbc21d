//! Structural data-generating process
//!
//! ```text
//! Y = α + τT + ωS + βX + δTS + ξTX + ε,   ε ~ N(0, σ²)
//! T ~ Bernoulli(p),  S ~ Bernoulli(logistic(a + bX))
//! ```
//!
//! with an optional planted binary confounder `U ~ Bernoulli(½)` that adds
//! `α_U·U` to the moderator's linear index and `κ_T·U` to the outcome.
//! Also the Monte Carlo harness and the population bias oracle.

mod config;
mod monte_carlo;
mod oracle;

pub use config::{DgpConfig, PlantedConfounder, SModel, XModel};
pub use monte_carlo::{monte_carlo, EstimatorSummary, McEstimator, MonteCarloOptions, MonteCarloReport};
pub use oracle::{oracle_controlled_interaction_bias, population_projection_by_simulation, OracleBias, OraclePath};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::Result;
use crate::kernel::sigmoid;
use crate::seed::rng_from_seed;

/// One simulated unit with everything needed to rebuild its potential
/// outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimUnit {
    pub x: f64,
    pub t: u8,
    pub s: u8,
    /// Latent confounder; 0 when none is planted.
    pub u: u8,
    pub eps: f64,
}

impl SimUnit {
    /// Outcome the unit would have under `(t, s)`.
    pub fn potential_outcome(&self, cfg: &DgpConfig, t: u8, s: u8) -> f64 {
        let (tf, sf) = (f64::from(t), f64::from(s));
        let kappa = cfg.confounder.map_or(0.0, |c| if t == 1 { c.kappa1 } else { c.kappa0 });
        cfg.alpha
            + cfg.tau * tf
            + cfg.omega * sf
            + cfg.beta * self.x
            + cfg.delta * tf * sf
            + cfg.xi * tf * self.x
            + kappa * f64::from(self.u)
            + self.eps
    }

    pub fn outcome(&self, cfg: &DgpConfig) -> f64 {
        self.potential_outcome(cfg, self.t, self.s)
    }
}

/// Draws `cfg.n` units from a ChaCha20 stream seeded with `cfg.seed`.
///
/// Per unit the draw order is: `X`, `T`, `U` (only when a confounder is
/// planted), `S`, `ε`.
pub fn generate_units(cfg: &DgpConfig) -> Result<Vec<SimUnit>> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut units = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x = cfg.x_model.draw(&mut rng);
        let t = u8::from(rng.random::<f64>() < cfg.p_treat);
        let (u, shift) = match cfg.confounder {
            Some(c) => {
                let u = u8::from(rng.random::<bool>());
                (u, c.alpha_u * f64::from(u))
            }
            None => (0, 0.0),
        };
        let s = u8::from(rng.random::<f64>() < sigmoid(cfg.s_model.a + cfg.s_model.b * x + shift));
        let z: f64 = StandardNormal.sample(&mut rng);
        units.push(SimUnit {
            x,
            t,
            s,
            u,
            eps: cfg.sigma_eps * z,
        });
    }
    Ok(units)
}

/// Dataset with outcome `y`, treatment `t`, moderator `s` and covariate `x`.
///
/// Fails with an empty-arm error when a draw misses a level of `T` or `S`.
pub fn generate(cfg: &DgpConfig) -> Result<Dataset> {
    let units = generate_units(cfg)?;
    units_to_dataset(cfg, &units, false)
}

/// Like [`generate`] but also returns the latent confounder as a covariate
/// column named `u` (after `x`), for oracle fits.
pub fn generate_with_latent(cfg: &DgpConfig) -> Result<(Dataset, Dataset)> {
    let units = generate_units(cfg)?;
    Ok((
        units_to_dataset(cfg, &units, false)?,
        units_to_dataset(cfg, &units, true)?,
    ))
}

fn units_to_dataset(cfg: &DgpConfig, units: &[SimUnit], with_u: bool) -> Result<Dataset> {
    let n = units.len();
    let k = if with_u { 2 } else { 1 };
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { units[i].x } else { f64::from(units[i].u) });
    let mut names = vec!["x".to_string()];
    if with_u {
        names.push("u".into());
    }
    Dataset::new(
        units.iter().map(|u| u.outcome(cfg)).collect(),
        units.iter().map(|u| u.t).collect(),
        units.iter().map(|u| u.s).collect(),
        x,
        names,
        None,
    )
}

/// The moderation effect of the model, which is `δ` for every unit.
pub fn true_atme(cfg: &DgpConfig) -> f64 {
    cfg.delta
}
