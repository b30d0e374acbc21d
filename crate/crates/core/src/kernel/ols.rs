use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest singular value below this multiple of the largest (after column
/// equilibration) marks the design as rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// `σ̂² (XᵀX)⁻¹`.
    Classical,
    /// HC1 sandwich.
    #[default]
    #[serde(rename = "hc1")]
    HeteroskedasticityRobust,
    /// Clustered sandwich with the `G/(G−1) · (n−1)/(n−d)` correction.
    #[serde(rename = "cluster")]
    ClusterRobust,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classical" | "ols" => Ok(VarianceMode::Classical),
            "hc1" | "robust" => Ok(VarianceMode::HeteroskedasticityRobust),
            "cluster" | "clustered" => Ok(VarianceMode::ClusterRobust),
            other => Err(Error::InvalidArgument(format!("unknown variance mode `{other}`"))),
        }
    }
}

/// A named design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

impl Design {
    /// Empty design with `n` rows and no columns.
    pub fn new(n: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(n, 0),
            names: Vec::new(),
        }
    }

    pub fn intercept(self) -> Self {
        let n = self.matrix.nrows();
        self.column("(intercept)", std::iter::repeat_n(1.0, n))
    }

    pub fn column<I: IntoIterator<Item = f64>>(mut self, name: impl Into<String>, values: I) -> Self {
        let d = self.matrix.ncols();
        let n = self.matrix.nrows();
        let mut m = self.matrix.insert_column(d, 0.0);
        let mut filled = 0;
        for (dst, v) in m.column_mut(d).iter_mut().zip(values) {
            *dst = v;
            filled += 1;
        }
        assert_eq!(filled, n, "design column length mismatch");
        self.matrix = m;
        self.names.push(name.into());
        self
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Least-squares coefficients, covariance and residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub design_column_names: Vec<String>,
    pub variance_mode: VarianceMode,
    pub n_clusters: Option<usize>,
}

impl LinearFit {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.design_column_names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.coefficients[i])
    }

    pub fn variance(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.covariance[(i, i)])
    }

    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn rss(&self) -> f64 {
        self.residuals.norm_squared()
    }
}

/// Ordinary least squares through a singular value decomposition of the
/// column-equilibrated design.
///
/// `clusters` holds dense cluster ids per row and is required for
/// [`VarianceMode::ClusterRobust`].
pub fn least_squares_fit(
    design: &Design,
    y: &[f64],
    mode: VarianceMode,
    clusters: Option<&[usize]>,
) -> Result<LinearFit> {
    let (n, d) = (design.nrows(), design.ncols());
    if y.len() != n {
        return Err(Error::LengthMismatch {
            column: "outcome".into(),
            expected: n,
            found: y.len(),
        });
    }
    if n <= d {
        return Err(Error::InsufficientRows { rows: n, params: d });
    }
    if mode == VarianceMode::ClusterRobust {
        match clusters {
            None => return Err(Error::MissingClusters),
            Some(c) if c.len() != n => {
                return Err(Error::LengthMismatch {
                    column: "cluster".into(),
                    expected: n,
                    found: c.len(),
                })
            }
            _ => {}
        }
    }

    let x = &design.matrix;
    let scale: Vec<f64> = (0..d).map(|j| x.column(j).norm()).collect();
    let zero_cols: Vec<String> = (0..d)
        .filter(|&j| scale[j] == 0.0)
        .map(|j| design.names[j].clone())
        .collect();
    if !zero_cols.is_empty() {
        return Err(Error::RankDeficient { columns: zero_cols });
    }
    let mut xs = x.clone();
    for (j, &c) in scale.iter().enumerate() {
        xs.column_mut(j).unscale_mut(c);
    }

    let svd = SVD::new(xs, true, true);
    let u = svd.u.as_ref().expect("U requested");
    let v_t = svd.v_t.as_ref().expect("V requested");
    let sv = &svd.singular_values;
    let smax = sv.max();
    let collinear: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] <= RANK_TOLERANCE * smax).collect();
    if !collinear.is_empty() {
        let mut involved = vec![false; d];
        for &i in &collinear {
            for j in 0..d {
                if v_t[(i, j)].abs() > 1e-6 {
                    involved[j] = true;
                }
            }
        }
        let columns = (0..d)
            .filter(|&j| involved[j])
            .map(|j| design.names[j].clone())
            .collect();
        return Err(Error::RankDeficient { columns });
    }

    let yv = DVector::from_column_slice(y);
    // β_s = V Σ⁻¹ Uᵀ y, then undo the column scaling
    let uty = u.transpose() * &yv;
    let inv_sv = sv.map(|s| 1.0 / s);
    let beta_s = v_t.transpose() * uty.component_mul(&inv_sv);
    let coefficients = DVector::from_fn(d, |j, _| beta_s[j] / scale[j]);
    // (XᵀX)⁻¹ = D V Σ⁻² Vᵀ D
    let v = v_t.transpose();
    let mut v_scaled = v.clone();
    for (i, mut col) in v_scaled.column_iter_mut().enumerate() {
        col *= inv_sv[i] * inv_sv[i];
    }
    let mut bread = &v_scaled * v.transpose();
    for i in 0..d {
        for j in 0..d {
            bread[(i, j)] /= scale[i] * scale[j];
        }
    }

    let fitted = x * &coefficients;
    let residuals = &yv - fitted;
    let (nf, df) = (n as f64, d as f64);

    let (mut covariance, n_clusters) = match mode {
        VarianceMode::Classical => {
            let sigma2 = residuals.norm_squared() / (nf - df);
            (&bread * sigma2, None)
        }
        VarianceMode::HeteroskedasticityRobust => {
            let mut scores = x.clone();
            for (i, mut row) in scores.row_iter_mut().enumerate() {
                row *= residuals[i];
            }
            let meat = scores.transpose() * &scores;
            (&bread * meat * &bread * (nf / (nf - df)), None)
        }
        VarianceMode::ClusterRobust => {
            let ids = clusters.expect("checked above");
            let mut sums: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
            for i in 0..n {
                let entry = sums.entry(ids[i]).or_insert_with(|| DVector::zeros(d));
                for j in 0..d {
                    entry[j] += x[(i, j)] * residuals[i];
                }
            }
            let g = sums.len();
            if g < 2 {
                return Err(Error::InvalidArgument(
                    "cluster-robust variance needs at least two clusters".into(),
                ));
            }
            let mut meat = DMatrix::zeros(d, d);
            for s in sums.values() {
                meat += s * s.transpose();
            }
            let gf = g as f64;
            let factor = gf / (gf - 1.0) * (nf - 1.0) / (nf - df);
            (&bread * meat * &bread * factor, Some(g))
        }
    };
    covariance = (&covariance + covariance.transpose()) * 0.5;

    Ok(LinearFit {
        coefficients,
        covariance,
        residuals,
        design_column_names: design.names.clone(),
        variance_mode: mode,
        n_clusters,
    })
}
