use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of the scalar covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XModel {
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
    Discrete { levels: Vec<f64>, probs: Vec<f64> },
}

impl XModel {
    pub(crate) fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            XModel::StandardNormal => StandardNormal.sample(rng),
            XModel::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            XModel::Discrete { levels, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (level, p) in levels.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *level;
                    }
                }
                *levels.last().expect("validated non-empty")
            }
        }
    }

    /// Mean zero and symmetric about it.
    pub fn is_symmetric(&self) -> bool {
        match self {
            XModel::StandardNormal => true,
            XModel::Uniform { lo, hi } => lo + hi == 0.0,
            XModel::Discrete { levels, probs } => levels.iter().zip(probs).all(|(l, p)| {
                levels
                    .iter()
                    .zip(probs)
                    .any(|(m, q)| *m == -*l && (q - p).abs() < 1e-15)
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            XModel::StandardNormal => Ok(()),
            XModel::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("uniform bounds [{lo}, {hi}] invalid")))
                }
            }
            XModel::Discrete { levels, probs } => {
                if levels.is_empty() || levels.len() != probs.len() {
                    return Err(Error::InvalidArgument(
                        "discrete covariate needs one probability per level".into(),
                    ));
                }
                if levels.iter().any(|l| !l.is_finite()) || probs.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "discrete covariate levels/probabilities invalid".into(),
                    ));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "discrete probabilities sum to {total}, not 1"
                    )));
                }
                Ok(())
            }
        }
    }

    fn to_kv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        match self {
            XModel::StandardNormal => "standard_normal".into(),
            XModel::Uniform { lo, hi } => format!("uniform {lo:?} {hi:?}"),
            XModel::Discrete { levels, probs } => format!("discrete {} {}", join(levels), join(probs)),
        }
    }

    fn from_kv(value: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse x_model `{value}`"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let list = |s: &str| s.split(',').map(num).collect::<Result<Vec<_>>>();
        let parts: Vec<&str> = value.split_whitespace().collect();
        match parts.as_slice() {
            ["standard_normal"] => Ok(XModel::StandardNormal),
            ["uniform", lo, hi] => Ok(XModel::Uniform {
                lo: num(lo)?,
                hi: num(hi)?,
            }),
            ["discrete", levels, probs] => Ok(XModel::Discrete {
                levels: list(levels)?,
                probs: list(probs)?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Accepts the `x_model` value syntax of the key-value config:
/// `standard_normal`, `uniform LO HI` or `discrete L1,L2,.. P1,P2,..`.
impl std::str::FromStr for XModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = Self::from_kv(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// `P(S = 1 | X) = logistic(a + bX)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SModel {
    pub a: f64,
    pub b: f64,
}

/// Binary `U ~ Bernoulli(½)` entering the moderator index with `alpha_u` and
/// the outcome with `kappa0` (untreated) or `kappa1` (treated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfounder {
    pub alpha_u: f64,
    pub kappa0: f64,
    pub kappa1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub alpha: f64,
    pub tau: f64,
    pub omega: f64,
    pub beta: f64,
    pub delta: f64,
    pub xi: f64,
    pub sigma_eps: f64,
    pub p_treat: f64,
    pub s_model: SModel,
    pub x_model: XModel,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confounder: Option<PlantedConfounder>,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self::baseline()
    }
}

impl DgpConfig {
    /// δ = 2, ξ = 1.5, ω = τ = β = 1, S ~ logistic(X), σ = 1, p = ½,
    /// X ~ N(0, 1), n = 1000.
    pub fn baseline() -> Self {
        Self {
            alpha: 0.0,
            tau: 1.0,
            omega: 1.0,
            beta: 1.0,
            delta: 2.0,
            xi: 1.5,
            sigma_eps: 1.0,
            p_treat: 0.5,
            s_model: SModel { a: 0.0, b: 1.0 },
            x_model: XModel::StandardNormal,
            n: 1000,
            seed: 0,
            confounder: None,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let coefs = [
            self.alpha,
            self.tau,
            self.omega,
            self.beta,
            self.delta,
            self.xi,
            self.s_model.a,
            self.s_model.b,
        ];
        if coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("model coefficients must be finite".into()));
        }
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_eps = {} must be positive",
                self.sigma_eps
            )));
        }
        if !(self.p_treat > 0.0 && self.p_treat < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "p_treat = {} outside (0, 1)",
                self.p_treat
            )));
        }
        if let Some(c) = self.confounder {
            if ![c.alpha_u, c.kappa0, c.kappa1].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument("confounder parameters must be finite".into()));
            }
        }
        self.x_model.validate()
    }

    /// `key = value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("alpha", self.alpha),
            ("tau", self.tau),
            ("omega", self.omega),
            ("beta", self.beta),
            ("delta", self.delta),
            ("xi", self.xi),
            ("sigma_eps", self.sigma_eps),
            ("p_treat", self.p_treat),
            ("s_a", self.s_model.a),
            ("s_b", self.s_model.b),
        ] {
            writeln!(out, "{k} = {v:?}").expect("string write");
        }
        writeln!(out, "x_model = {}", self.x_model.to_kv()).expect("string write");
        writeln!(out, "n = {}", self.n).expect("string write");
        writeln!(out, "seed = {}", self.seed).expect("string write");
        if let Some(c) = self.confounder {
            writeln!(out, "u_alpha = {:?}", c.alpha_u).expect("string write");
            writeln!(out, "u_kappa0 = {:?}", c.kappa0).expect("string write");
            writeln!(out, "u_kappa1 = {:?}", c.kappa1).expect("string write");
        }
        out
    }

    /// Parses `key = value` lines over the baseline. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::baseline();
        let mut u = [None::<f64>; 3];
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("line {}: `{key}` needs a number", lineno + 1)))
            };
            let count = || {
                value
                    .parse::<u64>()
                    .map_err(|_| Error::InvalidArgument(format!("line {}: `{key}` needs an integer", lineno + 1)))
            };
            match key {
                "alpha" => cfg.alpha = real()?,
                "tau" => cfg.tau = real()?,
                "omega" => cfg.omega = real()?,
                "beta" => cfg.beta = real()?,
                "delta" => cfg.delta = real()?,
                "xi" => cfg.xi = real()?,
                "sigma_eps" => cfg.sigma_eps = real()?,
                "p_treat" => cfg.p_treat = real()?,
                "s_a" => cfg.s_model.a = real()?,
                "s_b" => cfg.s_model.b = real()?,
                "x_model" => cfg.x_model = XModel::from_kv(value)?,
                "n" => cfg.n = count()? as usize,
                "seed" => cfg.seed = count()?,
                "u_alpha" => u[0] = Some(real()?),
                "u_kappa0" => u[1] = Some(real()?),
                "u_kappa1" => u[2] = Some(real()?),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.confounder = match u {
            [None, None, None] => None,
            [Some(alpha_u), Some(kappa0), Some(kappa1)] => Some(PlantedConfounder {
                alpha_u,
                kappa0,
                kappa1,
            }),
            _ => {
                return Err(Error::InvalidArgument(
                    "u_alpha, u_kappa0 and u_kappa1 must be given together".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
