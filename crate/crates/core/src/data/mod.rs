//! Tabular data model: column binding, validation and treatment-level subsetting.
//!
//! A [`Dataset`] holds an outcome `y`, a binary treatment `t`, a binary
//! moderator `s`, an `n × k` covariate matrix and optional cluster labels.
//! Every value is immutable after construction.

mod result;
mod support;

pub use result::{CellCounts, EstimateResult, Method, SubsetComponents};
pub use support::{check_common_support, SupportReport, DEFAULT_SUPPORT_EPSILON};

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A raw input column prior to role binding.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Numeric values; NaN marks a missing cell.
    Real(Vec<f64>),
    /// String labels; the empty string marks a missing cell.
    Label(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Real(v) => v.len(),
            Column::Label(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Real(v) => !v[row].is_finite(),
            Column::Label(v) => v[row].trim().is_empty(),
        }
    }
}

/// Named columns in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnTable {
    columns: Vec<(String, Column)>,
}

impl ColumnTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a column.
    pub fn insert(&mut self, name: impl Into<String>, column: Column) {
        let name = name.into();
        if let Some(slot) = self.columns.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = column;
        } else {
            self.columns.push((name, column));
        }
    }

    pub fn with(mut self, name: impl Into<String>, column: Column) -> Self {
        self.insert(name, column);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.columns.iter().map(|(n, c)| (n.as_str(), c))
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Maps column names onto the roles an estimator needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles {
    pub outcome: String,
    pub treatment: String,
    pub moderator: String,
    pub covariates: Vec<String>,
    pub cluster: Option<String>,
}

impl Roles {
    pub fn new(outcome: impl Into<String>, treatment: impl Into<String>, moderator: impl Into<String>) -> Self {
        Self {
            outcome: outcome.into(),
            treatment: treatment.into(),
            moderator: moderator.into(),
            covariates: Vec::new(),
            cluster: None,
        }
    }

    pub fn covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariates = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn cluster(mut self, name: impl Into<String>) -> Self {
        self.cluster = Some(name.into());
        self
    }

    fn validate(&self) -> Result<()> {
        let mut seen: Vec<&str> = vec![&self.outcome, &self.treatment, &self.moderator];
        if let Some(c) = &self.cluster {
            seen.push(c);
        }
        seen.extend(self.covariates.iter().map(String::as_str));
        for (i, a) in seen.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidArgument("empty column name in role mapping".into()));
            }
            if seen[..i].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "conflicting roles: column `{a}` is assigned more than once"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BindOptions {
    /// Drop rows with a missing value in any role column instead of failing.
    pub drop_missing: bool,
}

/// A bound dataset plus the original row indices dropped for missingness.
#[derive(Debug, Clone)]
pub struct Bound {
    pub dataset: Dataset,
    pub dropped_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct RoleNames {
    outcome: String,
    treatment: String,
    moderator: String,
    cluster: Option<String>,
}

impl Default for RoleNames {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            treatment: "t".into(),
            moderator: "s".into(),
            cluster: None,
        }
    }
}

/// Validated outcome, treatment, moderator, covariates and optional clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    t: Vec<u8>,
    s: Vec<u8>,
    x: DMatrix<f64>,
    covariate_names: Vec<String>,
    cluster: Option<Vec<String>>,
    cluster_ids: Option<Vec<usize>>,
    rows: Vec<usize>,
    names: RoleNames,
}

impl Dataset {
    /// Builds a dataset from already-typed columns, enforcing every invariant:
    /// finite values, binary `t`/`s` with both levels present, equal lengths.
    pub fn new(
        y: Vec<f64>,
        t: Vec<u8>,
        s: Vec<u8>,
        x: DMatrix<f64>,
        covariate_names: Vec<String>,
        cluster: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = y.len();
        let check_len = |column: &str, found: usize| {
            if found == n {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    column: column.to_string(),
                    expected: n,
                    found,
                })
            }
        };
        check_len("t", t.len())?;
        check_len("s", s.len())?;
        check_len("x", x.nrows())?;
        if covariate_names.len() != x.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{} covariate names for {} covariate columns",
                covariate_names.len(),
                x.ncols()
            )));
        }
        if let Some(c) = &cluster {
            check_len("cluster", c.len())?;
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                role: "outcome",
                column: "y".into(),
                row,
            });
        }
        for j in 0..x.ncols() {
            if let Some(row) = x.column(j).iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    role: "covariate",
                    column: covariate_names[j].clone(),
                    row,
                });
            }
        }
        for (role, column, values) in [("treatment", "t", &t), ("moderator", "s", &s)] {
            if let Some(row) = values.iter().position(|&v| v > 1) {
                return Err(Error::NonBinary {
                    role,
                    column: column.into(),
                    row,
                    value: values[row].to_string(),
                });
            }
            for level in [0u8, 1] {
                if !values.contains(&level) {
                    return Err(Error::EmptyArm { role, level });
                }
            }
        }
        let names = RoleNames {
            cluster: cluster.as_ref().map(|_| "cluster".to_string()),
            ..RoleNames::default()
        };
        Ok(Self::assemble(
            y,
            t,
            s,
            x,
            covariate_names,
            cluster,
            (0..n).collect(),
            names,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        y: Vec<f64>,
        t: Vec<u8>,
        s: Vec<u8>,
        x: DMatrix<f64>,
        covariate_names: Vec<String>,
        cluster: Option<Vec<String>>,
        rows: Vec<usize>,
        names: RoleNames,
    ) -> Self {
        let cluster_ids = cluster.as_ref().map(|labels| intern(labels));
        Self {
            y,
            t,
            s,
            x,
            covariate_names,
            cluster,
            cluster_ids,
            rows,
            names,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    /// Covariate matrix, `n × k`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn cluster_labels(&self) -> Option<&[String]> {
        self.cluster.as_deref()
    }

    /// Dense cluster identifiers in order of first appearance.
    pub fn cluster_ids(&self) -> Option<&[usize]> {
        self.cluster_ids.as_deref()
    }

    /// Row indices into the table this dataset was bound from.
    pub fn row_ids(&self) -> &[usize] {
        &self.rows
    }

    pub fn outcome_name(&self) -> &str {
        &self.names.outcome
    }

    pub fn treatment_name(&self) -> &str {
        &self.names.treatment
    }

    pub fn moderator_name(&self) -> &str {
        &self.names.moderator
    }

    pub fn cell_counts(&self) -> CellCounts {
        CellCounts::tally(&self.t, &self.s)
    }

    /// Restricts to the given positions (in this dataset's own indexing),
    /// preserving their order. Subsets need not contain both levels of
    /// `t` or `s`.
    pub fn subset(&self, positions: &[usize]) -> Dataset {
        let pick_f = |v: &[f64]| positions.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_u = |v: &[u8]| positions.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let x = self.x.select_rows(positions);
        let cluster = self
            .cluster
            .as_ref()
            .map(|c| positions.iter().map(|&i| c[i].clone()).collect());
        Self::assemble(
            pick_f(&self.y),
            pick_u(&self.t),
            pick_u(&self.s),
            x,
            self.covariate_names.clone(),
            cluster,
            positions.iter().map(|&i| self.rows[i]).collect(),
            self.names.clone(),
        )
    }

    /// Splits into the `T = 0` and `T = 1` subsets, each keeping the original
    /// row order.
    pub fn split_by_treatment(&self) -> (Dataset, Dataset) {
        let mut arms: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &t) in self.t.iter().enumerate() {
            arms[t as usize].push(i);
        }
        (self.subset(&arms[0]), self.subset(&arms[1]))
    }

    /// Copy with the moderator recoded `S → 1 − S`.
    pub fn with_flipped_moderator(&self) -> Dataset {
        let mut out = self.clone();
        out.s.iter_mut().for_each(|s| *s = 1 - *s);
        out
    }

    /// Copy with the treatment recoded `T → 1 − T`.
    pub fn with_flipped_treatment(&self) -> Dataset {
        let mut out = self.clone();
        out.t.iter_mut().for_each(|t| *t = 1 - *t);
        out
    }

    /// Copy with an extra covariate column appended.
    pub fn with_covariate(&self, name: impl Into<String>, values: &[f64]) -> Result<Dataset> {
        if values.len() != self.n() {
            return Err(Error::LengthMismatch {
                column: "covariate".into(),
                expected: self.n(),
                found: values.len(),
            });
        }
        let k = self.k();
        let x = DMatrix::from_fn(self.n(), k + 1, |i, j| if j < k { self.x[(i, j)] } else { values[i] });
        let mut names = self.covariate_names.clone();
        names.push(name.into());
        let mut out = self.clone();
        out.x = x;
        out.covariate_names = names;
        Ok(out)
    }

    /// Exports the role columns under their bound names.
    pub fn to_columns(&self) -> ColumnTable {
        let mut table = ColumnTable::new();
        table.insert(self.names.outcome.clone(), Column::Real(self.y.clone()));
        table.insert(
            self.names.treatment.clone(),
            Column::Real(self.t.iter().map(|&v| f64::from(v)).collect()),
        );
        table.insert(
            self.names.moderator.clone(),
            Column::Real(self.s.iter().map(|&v| f64::from(v)).collect()),
        );
        for (j, name) in self.covariate_names.iter().enumerate() {
            table.insert(name.clone(), Column::Real(self.x.column(j).iter().copied().collect()));
        }
        if let (Some(name), Some(labels)) = (&self.names.cluster, &self.cluster) {
            table.insert(name.clone(), Column::Label(labels.clone()));
        }
        table
    }
}

fn intern(labels: &[String]) -> Vec<usize> {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.as_str()).or_insert(next)
        })
        .collect()
}

fn coerce_binary(role: &'static str, column: &str, values: &[f64]) -> Result<Vec<u8>> {
    values
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::NonBinary {
                    role,
                    column: column.to_string(),
                    row,
                    value: v.to_string(),
                })
            }
        })
        .collect()
}

fn real_column<'a>(table: &'a ColumnTable, name: &str) -> Result<&'a [f64]> {
    match table.get(name) {
        Some(Column::Real(v)) => Ok(v),
        Some(Column::Label(_)) => Err(Error::InvalidArgument(format!(
            "column `{name}` holds labels where numbers are required"
        ))),
        None => Err(Error::MissingColumn(name.to_string())),
    }
}

/// Binds named columns to roles and validates the result.
///
/// Treatment and moderator values must be exactly `0.0` or `1.0`. Missing
/// cells (NaN, infinities, empty labels) in any role column are an error
/// unless `opts.drop_missing` is set, in which case the offending rows are
/// removed and reported in [`Bound::dropped_rows`].
pub fn bind_dataset(columns: &ColumnTable, roles: &Roles, opts: BindOptions) -> Result<Bound> {
    roles.validate()?;

    let mut role_columns: Vec<(&'static str, &str, &Column)> = Vec::new();
    let lookup = |name: &str| columns.get(name).ok_or_else(|| Error::MissingColumn(name.into()));
    role_columns.push(("outcome", &roles.outcome, lookup(&roles.outcome)?));
    role_columns.push(("treatment", &roles.treatment, lookup(&roles.treatment)?));
    role_columns.push(("moderator", &roles.moderator, lookup(&roles.moderator)?));
    for c in &roles.covariates {
        role_columns.push(("covariate", c, lookup(c)?));
    }
    if let Some(c) = &roles.cluster {
        role_columns.push(("cluster", c, lookup(c)?));
    }
    // type check before anything is indexed
    real_column(columns, &roles.outcome)?;
    real_column(columns, &roles.treatment)?;
    real_column(columns, &roles.moderator)?;
    for c in &roles.covariates {
        real_column(columns, c)?;
    }

    let n = role_columns[0].2.len();
    for (_, name, col) in &role_columns {
        if col.len() != n {
            return Err(Error::LengthMismatch {
                column: name.to_string(),
                expected: n,
                found: col.len(),
            });
        }
    }

    let mut keep = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    for row in 0..n {
        match role_columns.iter().find(|(_, _, col)| col.is_missing(row)) {
            None => keep.push(row),
            Some(_) if opts.drop_missing => dropped.push(row),
            Some((role, name, _)) => {
                return Err(Error::NonFinite {
                    role,
                    column: name.to_string(),
                    row,
                })
            }
        }
    }

    let take = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let y = take(real_column(columns, &roles.outcome)?);
    let t = coerce_binary(
        "treatment",
        &roles.treatment,
        &take(real_column(columns, &roles.treatment)?),
    )
    .map_err(|e| remap_row(e, &keep))?;
    let s = coerce_binary(
        "moderator",
        &roles.moderator,
        &take(real_column(columns, &roles.moderator)?),
    )
    .map_err(|e| remap_row(e, &keep))?;

    let k = roles.covariates.len();
    let mut x = DMatrix::zeros(keep.len(), k);
    for (j, name) in roles.covariates.iter().enumerate() {
        let values = take(real_column(columns, name)?);
        x.column_mut(j).iter_mut().zip(values).for_each(|(d, v)| *d = v);
    }

    let cluster = match &roles.cluster {
        None => None,
        Some(name) => Some(match lookup(name)? {
            Column::Label(v) => keep.iter().map(|&i| v[i].clone()).collect(),
            Column::Real(v) => keep.iter().map(|&i| v[i].to_string()).collect(),
        }),
    };

    for (role, values) in [("treatment", &t), ("moderator", &s)] {
        for level in [0u8, 1] {
            if !values.contains(&level) {
                return Err(Error::EmptyArm { role, level });
            }
        }
    }

    let names = RoleNames {
        outcome: roles.outcome.clone(),
        treatment: roles.treatment.clone(),
        moderator: roles.moderator.clone(),
        cluster: roles.cluster.clone(),
    };
    let dataset = Dataset::assemble(y, t, s, x, roles.covariates.clone(), cluster, keep, names);
    Ok(Bound {
        dataset,
        dropped_rows: dropped,
    })
}

fn remap_row(e: Error, keep: &[usize]) -> Error {
    match e {
        Error::NonBinary {
            role,
            column,
            row,
            value,
        } => Error::NonBinary {
            role,
            column,
            row: keep[row],
            value,
        },
        other => other,
    }
}
