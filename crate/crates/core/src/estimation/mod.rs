//! Coefficient estimation: multivariate least squares and joint
//! coefficient / feature-graph estimation.

pub mod joint;
pub mod lstsq;
pub mod regression;

pub use regression::{
    build_regression, column_map, fit_least_squares, ls_fit, training_objective, Branch, ColumnInfo,
    FitReport, LsFit, RegressionSystem,
};
pub use joint::{
    joint_fit, joint_objective, sf_objective_gradient, sf_objective_gradient_fd, sf_step, GradientMode, JointFit,
    JointFitConfig, JointFitReport, SfStepConfig, SupportGradient, SupportedGraph,
};
