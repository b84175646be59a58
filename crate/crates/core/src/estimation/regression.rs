//! Linear regression form of the graph VAR models.
//!
//! Every model is linear in its coefficients. Each free coefficient multiplies
//! one regressor signal, and stacking those signals over the target times
//! gives the design matrix `A`; the targets stacked the same way give `b`.
//! Rows follow the time index first, then the stacked signal index `f*N + v`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lstsq::{solve_least_squares, QrAccumulator};
use crate::error::{Error, Result};
use crate::filters::shift_sequence;
use crate::graph::{GraphShiftOperator, ProductGraph};
use crate::models::{param_count, CoefficientSet, FittedModel, ModelFamily, ModelSpec};
use crate::panel::SignalPanel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Shared scalar tap on `S^k X`.
    Graph,
    /// Per-feature tap on column `f` of `S^k X`.
    PerFeature,
    /// Scalar tap on `S_prod^k x`.
    Product,
    /// Entry `(input, output)` of `H_kp`.
    Mimo,
}

/// What one design-matrix column multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    /// One-based lag `p`.
    pub lag: usize,
    pub tap: usize,
    pub branch: Branch,
    pub input_feature: Option<usize>,
    pub output_feature: Option<usize>,
}

/// Column layout: lag-major, then tap, then feature index.
pub fn column_map(spec: &ModelSpec, f: usize) -> Vec<ColumnInfo> {
    let mut cols = Vec::with_capacity(param_count(spec, f));
    for lag in 1..=spec.p {
        for tap in 0..spec.k {
            let col = |branch, input_feature, output_feature| ColumnInfo {
                lag,
                tap,
                branch,
                input_feature,
                output_feature,
            };
            match spec.family {
                ModelFamily::GVar => cols.push(col(Branch::Graph, None, None)),
                ModelFamily::PgVar => cols.push(col(Branch::Product, None, None)),
                ModelFamily::PerFeatureGVar => {
                    cols.extend((0..f).map(|fi| col(Branch::PerFeature, Some(fi), Some(fi))))
                }
                ModelFamily::PgGVar => {
                    cols.extend((0..f).map(|fi| col(Branch::PerFeature, Some(fi), Some(fi))));
                    cols.push(col(Branch::Product, None, None));
                }
                ModelFamily::MimoGVar => {
                    for fin in 0..f {
                        cols.extend((0..f).map(|fout| col(Branch::Mimo, Some(fin), Some(fout))));
                    }
                }
            }
        }
    }
    cols
}

/// Dense system `b ~ A h`.
#[derive(Clone, Debug)]
pub struct RegressionSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub columns: Vec<ColumnInfo>,
    pub targets: Range<usize>,
}

impl RegressionSystem {
    /// Fewer rows than unknowns cannot give a unique fit.
    pub fn is_underdetermined(&self) -> bool {
        self.a.nrows() < self.a.ncols()
    }
}

/// Precomputed graph shifts of every slice a fit needs.
pub(crate) struct ShiftCache {
    first: usize,
    graph: Vec<Vec<DMatrix<f64>>>,
    product: Vec<Vec<DMatrix<f64>>>,
}

impl ShiftCache {
    pub(crate) fn new(
        spec: &ModelSpec,
        s: &GraphShiftOperator,
        product: Option<&ProductGraph>,
        panel: &SignalPanel,
        targets: &Range<usize>,
    ) -> Self {
        let first = targets.start - spec.p;
        let need_graph = !matches!(spec.family, ModelFamily::PgVar);
        let mut graph = Vec::new();
        let mut prod = Vec::new();
        for tau in first..targets.end - 1 {
            let x = panel.matrix(tau).clone_owned();
            if need_graph {
                graph.push(shift_sequence(s, &x, spec.k));
            }
            if let Some(pg) = product {
                let mut seq = Vec::with_capacity(spec.k);
                seq.push(x);
                for k in 1..spec.k {
                    let next = pg.shift(&seq[k - 1]);
                    seq.push(next);
                }
                prod.push(seq);
            }
        }
        Self {
            first,
            graph,
            product: prod,
        }
    }

    /// `S^k X_tau`.
    pub(crate) fn graph(&self, tau: usize, k: usize) -> &DMatrix<f64> {
        &self.graph[tau - self.first][k]
    }

    /// `S_prod^k X_tau` in matrix form.
    pub(crate) fn product(&self, tau: usize, k: usize) -> &DMatrix<f64> {
        &self.product[tau - self.first][k]
    }

    /// Value of a column's regressor at target time `t`, node `v`, feature `f`.
    fn value(&self, col: &ColumnInfo, t: usize, v: usize, f: usize) -> f64 {
        let tau = t - col.lag;
        match col.branch {
            Branch::Graph => self.graph(tau, col.tap)[(v, f)],
            Branch::Product => self.product(tau, col.tap)[(v, f)],
            Branch::PerFeature => {
                if col.output_feature == Some(f) {
                    self.graph(tau, col.tap)[(v, f)]
                } else {
                    0.0
                }
            }
            Branch::Mimo => {
                if col.output_feature == Some(f) {
                    self.graph(tau, col.tap)[(v, col.input_feature.unwrap())]
                } else {
                    0.0
                }
            }
        }
    }
}

fn check_inputs(
    spec: &ModelSpec,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    panel: &SignalPanel,
    targets: &Range<usize>,
) -> Result<Option<ProductGraph>> {
    if s.n() != panel.nodes() {
        return Err(Error::dims(format!("{}-node graph", panel.nodes()), s.n()));
    }
    if targets.end > panel.len() {
        return Err(Error::InvalidParameter(format!(
            "target range {targets:?} exceeds panel length {}",
            panel.len()
        )));
    }
    if targets.start < spec.p {
        return Err(Error::InvalidParameter(format!(
            "target range must start at or after P={} (got {})",
            spec.p, targets.start
        )));
    }
    if targets.is_empty() {
        return Err(Error::InsufficientSamples(format!("empty target range {targets:?}")));
    }
    if spec.family.uses_product_graph() {
        let sf = sf.ok_or_else(|| Error::MissingFeatureGraph {
            family: spec.family.to_string(),
        })?;
        if sf.n() != panel.features() {
            return Err(Error::dims(format!("{}-node feature graph", panel.features()), sf.n()));
        }
        Ok(Some(ProductGraph::new(s.clone(), sf.clone(), spec.product)?))
    } else {
        Ok(None)
    }
}

/// Dense design matrix and targets for the one-step-ahead fit over `targets`.
pub fn build_regression(
    spec: &ModelSpec,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    panel: &SignalPanel,
    targets: Range<usize>,
) -> Result<RegressionSystem> {
    let product = check_inputs(spec, s, sf, panel, &targets)?;
    let cache = ShiftCache::new(spec, s, product.as_ref(), panel, &targets);
    let (n, f) = (panel.nodes(), panel.features());
    let nf = n * f;
    let columns = column_map(spec, f);
    let rows = targets.len() * nf;
    let mut a = DMatrix::zeros(rows, columns.len());
    let mut b = DVector::zeros(rows);
    for (ti, t) in targets.clone().enumerate() {
        b.rows_mut(ti * nf, nf).copy_from_slice(panel.x(t));
        for (ci, col) in columns.iter().enumerate() {
            for fi in 0..f {
                for v in 0..n {
                    a[(ti * nf + fi * n + v, ci)] = cache.value(col, t, v, fi);
                }
            }
        }
    }
    Ok(RegressionSystem {
        a,
        b,
        columns,
        targets,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LsFit {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
    pub condition_estimate: f64,
    pub residual_sum_squares: f64,
}

/// Minimizes `||b - A h||^2` by orthogonal factorization.
pub fn ls_fit(system: &RegressionSystem) -> Result<LsFit> {
    let b = DMatrix::from_column_slice(system.b.len(), 1, system.b.as_slice());
    let sol = solve_least_squares(&system.a, &b)?;
    let h = sol.x.column(0).into_owned();
    let resid = &system.b - &system.a * &h;
    Ok(LsFit {
        coefficients: h.as_slice().to_vec(),
        rank: sol.rank,
        rank_deficient: sol.rank_deficient,
        condition_estimate: sol.condition_estimate,
        residual_sum_squares: resid.norm_squared(),
    })
}

/// Diagnostics of a least-squares fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: ModelFamily,
    pub p: usize,
    pub k: usize,
    /// Scalar equations (`T * N * F`).
    pub rows: usize,
    pub columns: usize,
    pub rank: usize,
    pub rank_deficient: bool,
    pub condition_estimate: f64,
    /// Sum of squared one-step-ahead residuals over the targets.
    pub objective: f64,
}

/// Least-squares fit that streams the regression rows through a QR
/// accumulator instead of materializing `A`. Per-feature G-VAR and MIMO G-VAR
/// separate into independent problems per output feature, which are solved
/// as such.
pub fn fit_least_squares(
    spec: &ModelSpec,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    panel: &SignalPanel,
    targets: Range<usize>,
) -> Result<(FittedModel, FitReport)> {
    let product = check_inputs(spec, s, sf, panel, &targets)?;
    let cache = ShiftCache::new(spec, s, product.as_ref(), panel, &targets);
    let (n, f) = (panel.nodes(), panel.features());
    let q = param_count(spec, f);
    let (p, k) = (spec.p, spec.k);

    let (vector, rank, rank_deficient, condition, rss) = match spec.family {
        ModelFamily::PerFeatureGVar => {
            let mut coef = vec![0.0; q];
            let (mut rank, mut deficient, mut cond, mut rss) = (0, false, 0.0f64, 0.0);
            for fi in 0..f {
                let mut acc = QrAccumulator::new(p * k, 1);
                let mut row = vec![0.0; p * k];
                for t in targets.clone() {
                    for v in 0..n {
                        for lag in 1..=p {
                            for tap in 0..k {
                                row[(lag - 1) * k + tap] = cache.graph(t - lag, tap)[(v, fi)];
                            }
                        }
                        acc.push_row(&row, &[panel.get(t, v, fi)]);
                    }
                }
                let out = acc.solve()?;
                for (j, h) in out.solution.x.column(0).iter().enumerate() {
                    coef[j * f + fi] = *h;
                }
                rank += out.solution.rank;
                deficient |= out.solution.rank_deficient;
                cond = cond.max(out.solution.condition_estimate);
                rss += out.residual_sum_squares[0];
            }
            (coef, rank, deficient, cond, rss)
        }
        ModelFamily::MimoGVar => {
            let mut acc = QrAccumulator::new(p * k * f, f);
            let mut row = vec![0.0; p * k * f];
            let mut rhs = vec![0.0; f];
            for t in targets.clone() {
                for v in 0..n {
                    for lag in 1..=p {
                        for tap in 0..k {
                            let z = cache.graph(t - lag, tap);
                            for fin in 0..f {
                                row[((lag - 1) * k + tap) * f + fin] = z[(v, fin)];
                            }
                        }
                    }
                    for (g, r) in rhs.iter_mut().enumerate() {
                        *r = panel.get(t, v, g);
                    }
                    acc.push_row(&row, &rhs);
                }
            }
            let out = acc.solve()?;
            // solution rows are (lag, tap, input), columns the output feature
            let x = &out.solution.x;
            let coef = (0..q).map(|j| x[(j / f, j % f)]).collect();
            (
                coef,
                out.solution.rank * f,
                out.solution.rank_deficient,
                out.solution.condition_estimate,
                out.residual_sum_squares.iter().sum(),
            )
        }
        ModelFamily::GVar | ModelFamily::PgVar | ModelFamily::PgGVar => {
            let columns = column_map(spec, f);
            let mut acc = QrAccumulator::new(q, 1);
            let mut row = vec![0.0; q];
            for t in targets.clone() {
                for fi in 0..f {
                    for v in 0..n {
                        for (ci, col) in columns.iter().enumerate() {
                            row[ci] = cache.value(col, t, v, fi);
                        }
                        acc.push_row(&row, &[panel.get(t, v, fi)]);
                    }
                }
            }
            let out = acc.solve()?;
            (
                out.solution.x.column(0).iter().copied().collect(),
                out.solution.rank,
                out.solution.rank_deficient,
                out.solution.condition_estimate,
                out.residual_sum_squares[0],
            )
        }
    };

    let coeffs = CoefficientSet::from_vector(spec, f, &vector)?;
    let model = FittedModel::new(*spec, coeffs, s.clone(), sf.cloned(), f)?;
    let report = FitReport {
        family: spec.family,
        p,
        k,
        rows: targets.len() * n * f,
        columns: q,
        rank,
        rank_deficient,
        condition_estimate: condition,
        objective: rss,
    };
    if rank_deficient {
        log::warn!(
            "{} fit with P={p}, K={k} is rank deficient (rank {rank} of {q}); using the minimum-norm solution",
            spec.family
        );
    }
    Ok((model, report))
}

/// `sum_t ||X_t - X_hat_t||_F^2` over the target range.
pub fn training_objective(model: &FittedModel, panel: &SignalPanel, targets: Range<usize>) -> Result<f64> {
    let mut total = 0.0;
    for t in targets {
        let pred = model.predict_at(panel, t)?;
        total += (panel.matrix(t) - pred).norm_squared();
    }
    Ok(total)
}
