//! Estimation of average treatment moderation effects when the treatment is
//! randomized but the moderator is not.

pub mod data;
pub mod error;
pub mod estimators;
pub mod kernel;
pub mod seed;
pub mod sensitivity;
pub mod simulation;

pub use data::{
    bind_dataset, BindOptions, Bound, CellCounts, Column, ColumnTable, Dataset, EstimateResult, Method, Roles,
    SubsetComponents,
};
pub use error::{Error, Result};
pub use estimators::{estimate, EstimatorOptions};
