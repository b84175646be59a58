//! Forecasting multidimensional time series on graphs.
//!
//! The crate covers the graph VAR model family (G-VAR, per-feature G-VAR,
//! PG-VAR, PG-G-VAR and MIMO G-VAR), least-squares and joint
//! coefficient/feature-graph estimation, and a sliding-window evaluation
//! harness scored by RNMSE.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod data;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod filters;
pub mod graph;
pub mod models;
pub mod panel;

pub use error::{Error, Result};
pub use evaluation::{
    evaluate, grid_search, plan_windows, rnmse, EstimationMode, EvaluationConfig, EvaluationReport, WindowPlan,
};
pub use filters::{apply_filter, mimo_shift_apply, FilterTaps};
pub use graph::{
    correlation_feature_graph, knn_gaussian_graph, normalized_laplacian, product_gso, Bandwidth,
    DistanceMatrix, GraphShiftOperator, GsoKind, ProductGraph, ProductGraphSpec,
};
pub use models::{param_count, CoefficientSet, FittedModel, ModelFamily, ModelSpec};
pub use panel::SignalPanel;
