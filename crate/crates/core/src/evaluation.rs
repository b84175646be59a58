//! Sliding-window evaluation: RNMSE scoring, window planning, hyperparameter
//! grid search and the per-family sweep.
//!
//! Every forecast is one step ahead with observed history. Each window is
//! z-scored per `(node, feature)` series with statistics of its in-sample
//! part only, and hyperparameters are chosen on a temporal train/validation
//! split of the in-sample part, so nothing at or after the out-of-sample
//! start informs a prediction.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_least_squares, joint_fit, JointFitConfig};
use crate::graph::{GraphShiftOperator, ProductGraphSpec};
use crate::models::{FittedModel, ModelFamily, ModelSpec};
use crate::panel::SignalPanel;

/// `sqrt(sum ||pred - actual||^2 / sum ||actual||^2)` over equally shaped
/// slices.
pub fn rnmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    let mut acc = RnmseAccumulator::default();
    acc.push(predicted, actual)?;
    acc.value()
}

/// RNMSE between two panels of identical shape.
pub fn rnmse_panels(predicted: &SignalPanel, actual: &SignalPanel) -> Result<f64> {
    if (predicted.len(), predicted.nodes(), predicted.features()) != (actual.len(), actual.nodes(), actual.features()) {
        return Err(Error::dims(
            format!("{}x{}x{} panel", actual.len(), actual.nodes(), actual.features()),
            predicted.len() * predicted.slice_len(),
        ));
    }
    rnmse(predicted.as_slice(), actual.as_slice())
}

/// Running sums for a pooled RNMSE; pooling several windows gives the RNMSE
/// of their concatenation, not the mean of per-window values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RnmseAccumulator {
    pub error_energy: f64,
    pub signal_energy: f64,
}

impl RnmseAccumulator {
    pub fn push(&mut self, predicted: &[f64], actual: &[f64]) -> Result<()> {
        if predicted.len() != actual.len() {
            return Err(Error::dims(format!("{} values", actual.len()), predicted.len()));
        }
        for (p, a) in predicted.iter().zip(actual) {
            self.error_energy += (p - a) * (p - a);
            self.signal_energy += a * a;
        }
        Ok(())
    }

    pub fn push_matrix(&mut self, predicted: &DMatrix<f64>, actual: DMatrixView<'_, f64>) -> Result<()> {
        if predicted.shape() != actual.shape() {
            return Err(Error::dims(format!("{:?} matrix", actual.shape()), predicted.len()));
        }
        for (p, a) in predicted.iter().zip(actual.iter()) {
            self.error_energy += (p - a) * (p - a);
            self.signal_energy += a * a;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &RnmseAccumulator) {
        self.error_energy += other.error_energy;
        self.signal_energy += other.signal_energy;
    }

    pub fn value(&self) -> Result<f64> {
        if !(self.signal_energy > 0.0) {
            return Err(Error::DegenerateReference);
        }
        Ok((self.error_energy / self.signal_energy).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub in_sample_len: usize,
    pub out_sample_len: usize,
    pub n_iterations: usize,
    pub stride: usize,
    pub train_fraction: f64,
}

impl WindowPlan {
    /// 168-step out-of-sample blocks, 20 iterations, stride equal to the
    /// out-of-sample length and a 70/30 train/validation split.
    pub fn new(in_sample_len: usize) -> Self {
        Self {
            in_sample_len,
            out_sample_len: 168,
            n_iterations: 20,
            stride: 168,
            train_fraction: 0.7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_sample_len == 0 || self.out_sample_len == 0 || self.n_iterations == 0 || self.stride == 0 {
            return Err(Error::InvalidParameter(format!("window plan lengths must be positive: {self:?}")));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Exclusive end of the last window.
    pub fn span(&self) -> usize {
        (self.n_iterations - 1) * self.stride + self.in_sample_len + self.out_sample_len
    }

    /// Largest iteration count that fits in `t_total` samples.
    pub fn max_iterations(&self, t_total: usize) -> usize {
        let one = self.in_sample_len + self.out_sample_len;
        if t_total < one {
            0
        } else {
            (t_total - one) / self.stride + 1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub in_sample: Range<usize>,
    pub out_sample: Range<usize>,
}

/// Windows `i = 0..n_iterations`: in-sample `[i*stride, i*stride + in)`,
/// followed by `out` out-of-sample indices.
pub fn plan_windows(t_total: usize, plan: &WindowPlan) -> Result<Vec<Window>> {
    plan.validate()?;
    if plan.span() > t_total {
        return Err(Error::PlanOverflow {
            reason: format!("plan spans {} samples but the series has {t_total}", plan.span()),
            max_iterations: plan.max_iterations(t_total),
        });
    }
    Ok((0..plan.n_iterations)
        .map(|i| {
            let start = i * plan.stride;
            let mid = start + plan.in_sample_len;
            Window {
                index: i,
                in_sample: start..mid,
                out_sample: mid..mid + plan.out_sample_len,
            }
        })
        .collect())
}

/// All `(P, K)` pairs with `1 <= P <= p_max`, `1 <= K <= k_max`.
pub fn full_grid(p_max: usize, k_max: usize) -> Vec<(usize, usize)> {
    (1..=p_max).flat_map(|p| (1..=k_max).map(move |k| (p, k))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p: usize,
    pub k: usize,
    /// `+inf` when the fit failed.
    pub validation_rnmse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub p: usize,
    pub k: usize,
    pub validation_rnmse: f64,
    pub cells: Vec<GridCell>,
}

/// Fits every grid cell on the first `train_fraction` of `in_sample` and
/// scores one-step-ahead RNMSE on the rest. Ties go to the smaller `P*K`,
/// then the smaller `P`.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    family: ModelFamily,
    product: ProductGraphSpec,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    panel: &SignalPanel,
    in_sample: Range<usize>,
    grid: &[(usize, usize)],
    train_fraction: f64,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty hyperparameter grid".into()));
    }
    if in_sample.end > panel.len() || in_sample.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "in-sample range {in_sample:?} outside panel of length {}",
            panel.len()
        )));
    }
    let split = in_sample.start + ((in_sample.len() as f64) * train_fraction).floor() as usize;
    let cells: Vec<GridCell> = grid
        .par_iter()
        .map(|&(p, k)| {
            let scored = ModelSpec::new(family, p, k).and_then(|spec| {
                let spec = spec.with_product(product);
                if split >= in_sample.end || split < in_sample.start + p + 1 {
                    return Err(Error::InsufficientSamples(format!(
                        "in-sample length {} too short for P={p}",
                        in_sample.len()
                    )));
                }
                let (model, _) = fit_least_squares(&spec, s, sf, panel, in_sample.start + p..split)?;
                one_step_rnmse(&model, panel, split..in_sample.end, None)?.value()
            });
            match scored {
                Ok(v) if v.is_finite() => GridCell {
                    p,
                    k,
                    validation_rnmse: v,
                    error: None,
                },
                Ok(v) => GridCell {
                    p,
                    k,
                    validation_rnmse: f64::INFINITY,
                    error: Some(format!("non-finite validation score {v}")),
                },
                Err(e) => GridCell {
                    p,
                    k,
                    validation_rnmse: f64::INFINITY,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = cells
        .iter()
        .min_by(|a, b| {
            a.validation_rnmse
                .total_cmp(&b.validation_rnmse)
                .then((a.p * a.k).cmp(&(b.p * b.k)))
                .then(a.p.cmp(&b.p))
        })
        .expect("grid is nonempty");
    Ok(GridSearchResult {
        p: best.p,
        k: best.k,
        validation_rnmse: best.validation_rnmse,
        cells,
    })
}

/// Accumulates one-step-ahead errors over `targets`. With a normalizer the
/// predictions and observations are mapped back to the raw scale first.
fn one_step_rnmse(
    model: &FittedModel,
    panel: &SignalPanel,
    targets: Range<usize>,
    raw: Option<&Normalizer>,
) -> Result<RnmseAccumulator> {
    let mut acc = RnmseAccumulator::default();
    for t in targets {
        let mut pred = model.predict_at(panel, t)?;
        match raw {
            None => acc.push_matrix(&pred, panel.matrix(t))?,
            Some(norm) => {
                let mut actual = panel.matrix(t).clone_owned();
                norm.invert_matrix(&mut pred);
                norm.invert_matrix(&mut actual);
                acc.push_matrix(&pred, actual.as_view())?;
            }
        }
    }
    Ok(acc)
}

/// Per-`(node, feature)` z-scoring. Constant series are only centered.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    n: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Statistics over the time indices in `range`.
    pub fn fit(panel: &SignalPanel, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > panel.len() {
            return Err(Error::InvalidParameter(format!("normalization range {range:?} invalid")));
        }
        let m = panel.slice_len();
        let len = range.len() as f64;
        let mut mean = vec![0.0; m];
        for t in range.clone() {
            for (acc, v) in mean.iter_mut().zip(panel.x(t)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= len);
        let mut var = vec![0.0; m];
        for t in range {
            for ((acc, v), mu) in var.iter_mut().zip(panel.x(t)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let sd = (v / len).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            n: panel.nodes(),
            mean,
            std,
        })
    }

    pub fn apply(&self, panel: &SignalPanel) -> SignalPanel {
        let mut out = panel.clone();
        for t in 0..out.len() {
            for ((v, mu), sd) in out.x_mut(t).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd;
            }
        }
        out
    }

    /// Maps a normalized `N x F` slice back to the raw scale in place.
    pub fn invert_matrix(&self, x: &mut DMatrix<f64>) {
        for f in 0..x.ncols() {
            for v in 0..x.nrows() {
                let i = f * self.n + v;
                x[(v, f)] = x[(v, f)] * self.std[i] + self.mean[i];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    /// Least squares with the feature graph held fixed.
    Fixed,
    /// Joint coefficient and feature-graph estimation for the product-graph
    /// families; other families fall back to least squares.
    Joint,
}

impl std::str::FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(EstimationMode::Fixed),
            "joint" => Ok(EstimationMode::Joint),
            other => Err(Error::Parse(format!("unknown estimation mode '{other}' (expected fixed or joint)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub families: Vec<ModelFamily>,
    pub product: ProductGraphSpec,
    pub grid: Vec<(usize, usize)>,
    pub in_sample_lens: Vec<usize>,
    pub out_sample_len: usize,
    pub n_iterations: usize,
    pub stride: usize,
    pub train_fraction: f64,
    pub mode: EstimationMode,
    pub joint: JointFitConfig,
    /// z-score each window with its in-sample statistics.
    pub normalize: bool,
    /// Report RNMSE on the original scale instead of the normalized one.
    pub raw_scale_rnmse: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            families: ModelFamily::ALL.to_vec(),
            product: ProductGraphSpec::cartesian(),
            grid: full_grid(5, 5),
            in_sample_lens: (1..=10).map(|i| i * 200).collect(),
            out_sample_len: 168,
            n_iterations: 20,
            stride: 168,
            train_fraction: 0.7,
            mode: EstimationMode::Fixed,
            joint: JointFitConfig::default(),
            normalize: true,
            raw_scale_rnmse: false,
        }
    }
}

impl EvaluationConfig {
    pub fn plan(&self, in_sample_len: usize) -> WindowPlan {
        WindowPlan {
            in_sample_len,
            out_sample_len: self.out_sample_len,
            n_iterations: self.n_iterations,
            stride: self.stride,
            train_fraction: self.train_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::InvalidParameter("no model families selected".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("empty hyperparameter grid".into()));
        }
        if self.in_sample_lens.is_empty() {
            return Err(Error::InvalidParameter("no in-sample lengths given".into()));
        }
        if self.grid.iter().any(|&(p, k)| p == 0 || k == 0) {
            return Err(Error::InvalidParameter("grid entries need P, K >= 1".into()));
        }
        self.product.validate()?;
        if self.mode == EstimationMode::Joint {
            self.joint.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::models::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Outcome of one `(family, in_sample_len, window)` task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub family: ModelFamily,
    pub in_sample_len: usize,
    pub window: usize,
    pub p: usize,
    pub k: usize,
    pub rnmse: Option<f64>,
    /// Sum of squared one-step residuals over the in-sample targets of the
    /// refit, on the fitting scale.
    pub training_objective: Option<f64>,
    /// Training objective of the least-squares fit with the initial feature
    /// graph (joint mode only).
    pub fixed_objective: Option<f64>,
    pub outer_iterations: Option<usize>,
    pub final_objective: Option<f64>,
    pub rank_deficient: Option<bool>,
    pub error: Option<String>,
    pub grid: Vec<GridCell>,
    #[serde(skip)]
    accumulator: RnmseAccumulator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub family: ModelFamily,
    pub in_sample_len: usize,
    /// RNMSE over the concatenated out-of-sample data of all successful
    /// windows.
    pub pooled_rnmse: Option<f64>,
    pub windows: usize,
    pub failed_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: String,
    pub mode: EstimationMode,
    pub windows: Vec<WindowResult>,
    pub summaries: Vec<SweepSummary>,
}

impl EvaluationReport {
    pub fn summary(&self, family: ModelFamily, in_sample_len: usize) -> Option<&SweepSummary> {
        self.summaries
            .iter()
            .find(|s| s.family == family && s.in_sample_len == in_sample_len)
    }

    pub fn windows_for(&self, family: ModelFamily, in_sample_len: usize) -> impl Iterator<Item = &WindowResult> {
        self.windows
            .iter()
            .filter(move |w| w.family == family && w.in_sample_len == in_sample_len)
    }

    /// True when every window failed.
    pub fn total_failure(&self) -> bool {
        self.windows.iter().all(|w| w.error.is_some())
    }

    /// One row per `(family, in_sample_len, window)`; joint mode adds the
    /// outer iteration count and final objective.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let joint = self.mode == EstimationMode::Joint;
        let mut header = vec!["family", "in_sample_len", "window", "P", "K", "rnmse"];
        if joint {
            header.extend(["outer_iterations", "final_objective"]);
        }
        out.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        for r in &self.windows {
            let mut rec = vec![
                r.family.to_string(),
                r.in_sample_len.to_string(),
                r.window.to_string(),
                r.p.to_string(),
                r.k.to_string(),
                opt(r.rnmse),
            ];
            if joint {
                rec.push(r.outer_iterations.map(|v| v.to_string()).unwrap_or_default());
                rec.push(opt(r.final_objective));
            }
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json)?;
        Ok(())
    }
}

struct Task {
    family: ModelFamily,
    in_sample_len: usize,
    window: Window,
}

/// Runs grid search, refit and out-of-sample scoring for every family,
/// in-sample length and window. Fit failures are recorded per window; only
/// configuration problems and window plans that do not fit the panel are
/// returned as errors. Tasks run in parallel; the report order is fixed.
pub fn evaluate(
    panel: &SignalPanel,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    config: &EvaluationConfig,
) -> Result<EvaluationReport> {
    config.validate()?;
    let mut tasks = Vec::new();
    for &len in &config.in_sample_lens {
        let windows = plan_windows(panel.len(), &config.plan(len))?;
        for &family in &config.families {
            for w in &windows {
                tasks.push(Task {
                    family,
                    in_sample_len: len,
                    window: w.clone(),
                });
            }
        }
    }
    let windows: Vec<WindowResult> = tasks.par_iter().map(|t| run_window(panel, s, sf, config, t)).collect();

    let mut summaries = Vec::new();
    for &len in &config.in_sample_lens {
        for &family in &config.families {
            let mut acc = RnmseAccumulator::default();
            let (mut count, mut failed) = (0, 0);
            for w in windows.iter().filter(|w| w.family == family && w.in_sample_len == len) {
                count += 1;
                if w.error.is_some() {
                    failed += 1;
                } else {
                    acc.merge(&w.accumulator);
                }
            }
            summaries.push(SweepSummary {
                family,
                in_sample_len: len,
                pooled_rnmse: acc.value().ok(),
                windows: count,
                failed_windows: failed,
            });
        }
    }
    Ok(EvaluationReport {
        config_hash: config.hash(),
        mode: config.mode,
        windows,
        summaries,
    })
}

fn run_window(
    panel: &SignalPanel,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    config: &EvaluationConfig,
    task: &Task,
) -> WindowResult {
    let mut result = WindowResult {
        family: task.family,
        in_sample_len: task.in_sample_len,
        window: task.window.index,
        p: 0,
        k: 0,
        rnmse: None,
        training_objective: None,
        fixed_objective: None,
        outer_iterations: None,
        final_objective: None,
        rank_deficient: None,
        error: None,
        grid: Vec::new(),
        accumulator: RnmseAccumulator::default(),
    };
    if let Err(e) = score_window(panel, s, sf, config, task, &mut result) {
        log::warn!(
            "{} in-sample {} window {}: {e}",
            task.family,
            task.in_sample_len,
            task.window.index
        );
        result.error = Some(e.to_string());
        result.rnmse = None;
    }
    result
}

fn score_window(
    panel: &SignalPanel,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    config: &EvaluationConfig,
    task: &Task,
    out: &mut WindowResult,
) -> Result<()> {
    let w = &task.window;
    let local = panel.slice(w.in_sample.start..w.out_sample.end)?;
    let in_len = w.in_sample.len();
    let norm = if config.normalize {
        Some(Normalizer::fit(&local, 0..in_len)?)
    } else {
        None
    };
    let data = match &norm {
        Some(n) => n.apply(&local),
        None => local,
    };
    let graph_sf = if task.family.uses_product_graph() { sf } else { None };

    let search = grid_search(
        task.family,
        config.product,
        s,
        graph_sf,
        &data,
        0..in_len,
        &config.grid,
        config.train_fraction,
    )?;
    out.p = search.p;
    out.k = search.k;
    out.grid = search.cells;
    if !search.validation_rnmse.is_finite() {
        return Err(Error::InsufficientSamples("every grid cell failed".into()));
    }

    let spec = ModelSpec::new(task.family, search.p, search.k)?.with_product(config.product);
    let targets = search.p..in_len;
    let model = if config.mode == EstimationMode::Joint && task.family.uses_product_graph() {
        let sf0 = graph_sf.ok_or_else(|| Error::MissingFeatureGraph {
            family: task.family.to_string(),
        })?;
        let fit = joint_fit(&spec, s, sf0, &data, targets, &config.joint)?;
        out.fixed_objective = Some(fit.report.initial_objective);
        out.training_objective = Some(fit.report.final_objective);
        out.final_objective = Some(fit.report.final_objective);
        out.outer_iterations = Some(fit.report.outer_iterations);
        out.rank_deficient = Some(fit.report.last_ls.rank_deficient);
        fit.model
    } else {
        let (model, report) = fit_least_squares(&spec, s, graph_sf, &data, targets)?;
        out.training_objective = Some(report.objective);
        out.rank_deficient = Some(report.rank_deficient);
        if config.mode == EstimationMode::Joint {
            out.final_objective = Some(report.objective);
        }
        model
    };

    let raw = if config.raw_scale_rnmse { norm.as_ref() } else { None };
    let acc = one_step_rnmse(&model, &data, in_len..data.len(), raw)?;
    out.rnmse = Some(acc.value()?);
    out.accumulator = acc;
    Ok(())
}
