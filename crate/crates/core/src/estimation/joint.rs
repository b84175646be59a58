//! Joint estimation of filter coefficients and feature-graph weights.
//!
//! Alternates an exact least-squares step over the coefficients with a
//! support-constrained descent step over the entries of `S_F`. Entries outside
//! the support of the initial feature graph stay exactly zero.
//!
//! The objective is `f(h, S_F) = sum_t ||X_t - X_hat_t||_F^2`. Only the
//! product branch depends on `S_F`; with `M = S_prod`,
//!
//! ```text
//! d/dS_F[a,b] (M V) = s10 * V[:, b] e_a^T + s11 * (S V)[:, b] e_a^T
//! d(M^k) = sum_{r=0}^{k-1} M^r dM M^{k-1-r}
//! ```
//!
//! so the gradient is assembled from the back-propagated residuals
//! `U_r = (M^T)^r R_t` and the forward shifts `V_m = M^m X_{t-p}`.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::regression::{fit_least_squares, FitReport};
use crate::error::{Error, Result};
use crate::graph::{add_scaled, GraphShiftOperator, GsoKind, ProductGraph};
use crate::models::{CoefficientSet, FittedModel, ModelFamily, ModelSpec};
use crate::panel::SignalPanel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "analytic" => Ok(GradientMode::Analytic),
            "finite_difference" | "fd" => Ok(GradientMode::FiniteDifference),
            other => Err(Error::Parse(format!("unknown gradient mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfStepConfig {
    pub max_iters: usize,
    /// First trial step, relative to `max(||S_F||, 1) / ||grad||`.
    pub initial_step: f64,
    /// Armijo sufficient-decrease parameter.
    pub armijo: f64,
    /// Backtracking factor.
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Stop when one accepted step lowers the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    pub gradient: GradientMode,
    /// Central-difference step when `gradient` is finite differences.
    pub fd_step: f64,
    /// Tie `S_F[a,b]` and `S_F[b,a]` together.
    pub symmetric: bool,
}

impl Default for SfStepConfig {
    fn default() -> Self {
        Self {
            max_iters: 20,
            initial_step: 1.0,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
            rel_tol: 1e-12,
            gradient: GradientMode::Analytic,
            fd_step: 1e-6,
            symmetric: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointFitConfig {
    /// Relative objective decrease below which the outer loop stops.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub sf_step: SfStepConfig,
}

impl Default for JointFitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_outer_iters: 50,
            sf_step: SfStepConfig::default(),
        }
    }
}

impl JointFitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter("max_outer_iters must be >= 1".into()));
        }
        let st = &self.sf_step;
        if !(st.shrink > 0.0 && st.shrink < 1.0) || !(st.armijo > 0.0 && st.armijo < 1.0) {
            return Err(Error::InvalidParameter("line search needs 0 < shrink, armijo < 1".into()));
        }
        if !(st.initial_step > 0.0) || !(st.fd_step > 0.0) {
            return Err(Error::InvalidParameter("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Feature graph restricted to a fixed support; values may become zero
/// without the entry leaving the support.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportedGraph {
    n: usize,
    support: Vec<(usize, usize)>,
    values: Vec<f64>,
}

impl SupportedGraph {
    pub fn from_gso(g: &GraphShiftOperator) -> Self {
        let (support, values) = g.iter().map(|(r, c, w)| ((r, c), w)).unzip();
        Self {
            n: g.n(),
            support,
            values,
        }
    }

    pub fn support(&self) -> &[(usize, usize)] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            n: self.n,
            support: self.support.clone(),
            values,
        }
    }

    pub fn to_gso(&self) -> GraphShiftOperator {
        GraphShiftOperator::build(
            self.n,
            self.support.iter().zip(&self.values).map(|(&(r, c), &w)| (r, c, w)),
            GsoKind::Generic,
        )
        .expect("support entries are unique and in range")
    }

    /// Index of the mirrored entry `(b, a)` for every support entry, if present.
    fn mirrors(&self) -> Vec<Option<usize>> {
        self.support
            .iter()
            .map(|&(a, b)| self.support.iter().position(|&e| e == (b, a)))
            .collect()
    }
}

/// Objective `f(h, S_F)` and everything needed to differentiate it.
struct Problem<'a> {
    spec: ModelSpec,
    s: &'a GraphShiftOperator,
    panel: &'a SignalPanel,
    targets: Range<usize>,
}

impl Problem<'_> {
    fn model(&self, coeffs: &CoefficientSet, sf: &GraphShiftOperator) -> Result<FittedModel> {
        FittedModel::new(self.spec, coeffs.clone(), self.s.clone(), Some(sf.clone()), self.panel.features())
    }

    fn objective(&self, coeffs: &CoefficientSet, sf: &GraphShiftOperator) -> Result<f64> {
        let model = self.model(coeffs, sf)?;
        let mut total = 0.0;
        for t in self.targets.clone() {
            total += (self.panel.matrix(t) - model.predict_at(self.panel, t)?).norm_squared();
        }
        if !total.is_finite() {
            return Err(Error::NonFinite {
                context: "joint objective".into(),
            });
        }
        Ok(total)
    }

    fn analytic_gradient(&self, coeffs: &CoefficientSet, g: &SupportedGraph) -> Result<Vec<f64>> {
        let sf = g.to_gso();
        let model = self.model(coeffs, &sf)?;
        let pg: &ProductGraph = model.product_graph().expect("product family");
        let spec = pg.spec();
        let (s10, s11) = (spec.s10, spec.s11);
        let k = self.spec.k;
        let f = self.panel.features();
        let mut acc = DMatrix::<f64>::zeros(f, f);
        if k < 2 || (s10 == 0.0 && s11 == 0.0) {
            return Ok(vec![0.0; g.support.len()]);
        }
        for t in self.targets.clone() {
            let resid = self.panel.matrix(t) - model.predict_at(self.panel, t)?;
            let mut back = Vec::with_capacity(k - 1);
            back.push(resid);
            for r in 1..k - 1 {
                let next = pg.shift_transpose(&back[r - 1]);
                back.push(next);
            }
            for lag in 0..self.spec.p {
                let mut v = self.panel.matrix(t - lag - 1).clone_owned();
                for m in 0..k - 1 {
                    if m > 0 {
                        v = pg.shift(&v);
                    }
                    let mut gsum = DMatrix::zeros(v.nrows(), f);
                    for (r, u) in back.iter().enumerate().take(k - 1 - m) {
                        let h = coeffs.scalar(lag, r + m + 1);
                        if h != 0.0 {
                            add_scaled(&mut gsum, h, u);
                        }
                    }
                    let mut dv = DMatrix::zeros(v.nrows(), f);
                    if s10 != 0.0 {
                        add_scaled(&mut dv, s10, &v);
                    }
                    if s11 != 0.0 {
                        add_scaled(&mut dv, s11, &pg.station().shift_columns(&v));
                    }
                    acc.gemm_tr(1.0, &gsum, &dv, 1.0);
                }
            }
        }
        Ok(g.support.iter().map(|&(a, b)| -2.0 * acc[(a, b)]).collect())
    }

    fn fd_gradient(&self, coeffs: &CoefficientSet, g: &SupportedGraph, step: f64) -> Result<Vec<f64>> {
        (0..g.values.len())
            .map(|i| {
                let mut plus = g.values.clone();
                let mut minus = g.values.clone();
                plus[i] += step;
                minus[i] -= step;
                let fp = self.objective(coeffs, &g.with_values(plus).to_gso())?;
                let fm = self.objective(coeffs, &g.with_values(minus).to_gso())?;
                Ok((fp - fm) / (2.0 * step))
            })
            .collect()
    }

    fn gradient(&self, coeffs: &CoefficientSet, g: &SupportedGraph, cfg: &SfStepConfig) -> Result<Vec<f64>> {
        let mut grad = match cfg.gradient {
            GradientMode::Analytic => self.analytic_gradient(coeffs, g)?,
            GradientMode::FiniteDifference => self.fd_gradient(coeffs, g, cfg.fd_step)?,
        };
        if cfg.symmetric {
            let mirrors = g.mirrors();
            let raw = grad.clone();
            for (i, m) in mirrors.iter().enumerate() {
                if let Some(j) = *m {
                    grad[i] = 0.5 * (raw[i] + raw[j]);
                }
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature-graph gradient".into(),
            });
        }
        Ok(grad)
    }
}

fn check_family(spec: &ModelSpec) -> Result<()> {
    if !spec.family.uses_product_graph() {
        return Err(Error::FamilyMismatch {
            expected: format!("{} or {}", ModelFamily::PgVar, ModelFamily::PgGVar),
            got: spec.family.to_string(),
        });
    }
    Ok(())
}

/// Gradient of the objective over the stored entries of `sf`, in
/// `sf.iter()` order.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportGradient {
    pub entries: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

pub fn sf_objective_gradient(
    coeffs: &CoefficientSet,
    sf: &GraphShiftOperator,
    s: &GraphShiftOperator,
    panel: &SignalPanel,
    spec: &ModelSpec,
    targets: Range<usize>,
) -> Result<SupportGradient> {
    check_family(spec)?;
    let problem = Problem { spec: *spec, s, panel, targets };
    let g = SupportedGraph::from_gso(sf);
    let values = problem.analytic_gradient(coeffs, &g)?;
    Ok(SupportGradient {
        entries: g.support,
        values,
    })
}

/// Central finite-difference counterpart of [`sf_objective_gradient`].
pub fn sf_objective_gradient_fd(
    coeffs: &CoefficientSet,
    sf: &GraphShiftOperator,
    s: &GraphShiftOperator,
    panel: &SignalPanel,
    spec: &ModelSpec,
    targets: Range<usize>,
    step: f64,
) -> Result<SupportGradient> {
    check_family(spec)?;
    let problem = Problem { spec: *spec, s, panel, targets };
    let g = SupportedGraph::from_gso(sf);
    let values = problem.fd_gradient(coeffs, &g, step)?;
    Ok(SupportGradient {
        entries: g.support,
        values,
    })
}

/// Objective `f(h, S_F)` for a product-graph model.
pub fn joint_objective(
    coeffs: &CoefficientSet,
    sf: &GraphShiftOperator,
    s: &GraphShiftOperator,
    panel: &SignalPanel,
    spec: &ModelSpec,
    targets: Range<usize>,
) -> Result<f64> {
    check_family(spec)?;
    Problem { spec: *spec, s, panel, targets }.objective(coeffs, sf)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfStepOutcome {
    pub graph: SupportedGraph,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Projected gradient descent with Armijo backtracking over the supported
/// entries of `S_F`. Barzilai-Borwein steps seed the line search after the
/// first iteration. Never increases the objective; returns the input when no
/// descent step is found.
pub fn sf_step(
    coeffs: &CoefficientSet,
    sf: &SupportedGraph,
    s: &GraphShiftOperator,
    panel: &SignalPanel,
    spec: &ModelSpec,
    targets: Range<usize>,
    cfg: &SfStepConfig,
) -> Result<SfStepOutcome> {
    check_family(spec)?;
    let problem = Problem { spec: *spec, s, panel, targets };
    let mut cur = sf.clone();
    let f0 = problem.objective(coeffs, &cur.to_gso())?;
    let mut fcur = f0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut step = 0.0;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let grad = problem.gradient(coeffs, &cur, cfg)?;
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2 == 0.0 {
            break;
        }
        step = match &prev {
            Some((x_prev, g_prev)) => {
                let (mut ss, mut sy) = (0.0, 0.0);
                for i in 0..grad.len() {
                    let si = cur.values[i] - x_prev[i];
                    ss += si * si;
                    sy += si * (grad[i] - g_prev[i]);
                }
                if sy > 0.0 {
                    ss / sy
                } else {
                    step * 2.0
                }
            }
            None => {
                let xnorm = cur.values.iter().map(|v| v * v).sum::<f64>().sqrt();
                cfg.initial_step * xnorm.max(1.0) / gnorm2.sqrt()
            }
        };
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let cand: Vec<f64> = cur.values.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let cand = cur.with_values(cand);
            let fc = problem.objective(coeffs, &cand.to_gso())?;
            if fc <= fcur - cfg.armijo * step * gnorm2 {
                accepted = Some((cand, fc));
                break;
            }
            step *= cfg.shrink;
        }
        let Some((cand, fc)) = accepted else {
            break;
        };
        iterations += 1;
        prev = Some((cur.values.clone(), grad));
        let decrease = fcur - fc;
        cur = cand;
        let before = fcur;
        fcur = fc;
        if decrease <= cfg.rel_tol * before.max(1e-300) {
            break;
        }
    }
    Ok(SfStepOutcome {
        graph: cur,
        initial_objective: f0,
        objective: fcur,
        iterations,
    })
}

/// Result of [`joint_fit`].
#[derive(Clone, Debug)]
pub struct JointFit {
    pub model: FittedModel,
    pub feature_graph: GraphShiftOperator,
    pub report: JointFitReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointFitReport {
    /// Objective after every half-step: coefficient step, graph step, ...
    pub trace: Vec<f64>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    /// Objective of the least-squares fit on the initial feature graph.
    pub initial_objective: f64,
    pub final_objective: f64,
    pub last_ls: FitReport,
}

/// Alternating minimization over `(h, S_F)` starting from `sf0`, whose
/// stored entries define the feasible support.
pub fn joint_fit(
    spec: &ModelSpec,
    s: &GraphShiftOperator,
    sf0: &GraphShiftOperator,
    panel: &SignalPanel,
    targets: Range<usize>,
    config: &JointFitConfig,
) -> Result<JointFit> {
    check_family(spec)?;
    config.validate()?;
    if sf0.nnz() == 0 {
        return Err(Error::InvalidInput("initial feature graph has an empty support".into()));
    }
    let problem = Problem {
        spec: *spec,
        s,
        panel,
        targets: targets.clone(),
    };
    let mut graph = SupportedGraph::from_gso(sf0);
    let mut sf = sf0.clone();
    let mut trace = Vec::new();
    let mut coeffs: Option<CoefficientSet> = None;
    let mut last_ls = None;
    let mut current = f64::INFINITY;
    let mut end_of_previous = None;
    let mut inner_iterations = 0;
    let mut converged = false;
    let mut outer = 0;
    while outer < config.max_outer_iters {
        outer += 1;
        let (model, report) = fit_least_squares(spec, s, Some(&sf), panel, targets.clone())?;
        let candidate = model.coefficients().clone();
        let f_h = problem.objective(&candidate, &sf)?;
        // the LS step is exact; keep the previous coefficients if rounding
        // makes the new ones marginally worse
        if f_h <= current || coeffs.is_none() {
            coeffs = Some(candidate);
            current = f_h;
        }
        last_ls = Some(report);
        trace.push(current);
        let h = coeffs.as_ref().expect("set above");

        let step = sf_step(h, &graph, s, panel, spec, targets.clone(), &config.sf_step)?;
        inner_iterations += step.iterations;
        if step.objective <= current {
            graph = step.graph;
            current = step.objective;
            sf = graph.to_gso();
        }
        trace.push(current);

        let reference = end_of_previous.unwrap_or(trace[trace.len() - 2]);
        let rel = (reference - current).abs() / f64::max(reference, 1e-12);
        end_of_previous = Some(current);
        if rel < config.epsilon {
            converged = true;
            break;
        }
    }
    let coeffs = coeffs.expect("at least one outer iteration");
    let model = FittedModel::new(*spec, coeffs, s.clone(), Some(sf.clone()), panel.features())?;
    let report = JointFitReport {
        initial_objective: trace[0],
        final_objective: current,
        trace,
        outer_iterations: outer,
        inner_iterations,
        converged,
        last_ls: last_ls.expect("at least one outer iteration"),
    };
    Ok(JointFit {
        model,
        feature_graph: sf,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ProductGraphSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, density: f64, rng: &mut ChaCha8Rng) -> GraphShiftOperator {
        let mut trips = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if r == c || rng.random::<f64>() < density {
                    trips.push((r, c, rng.random_range(-0.6..0.6)));
                }
            }
        }
        GraphShiftOperator::from_triplets(n, trips, GsoKind::Generic).unwrap()
    }

    fn random_panel(t: usize, n: usize, f: usize, rng: &mut ChaCha8Rng) -> SignalPanel {
        let data = (0..t * n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        SignalPanel::new(t, n, f, data).unwrap()
    }

    fn random_coeffs(spec: &ModelSpec, f: usize, rng: &mut ChaCha8Rng) -> CoefficientSet {
        let q = crate::models::param_count(spec, f);
        let v: Vec<f64> = (0..q).map(|_| rng.random_range(-0.5..0.5)).collect();
        CoefficientSet::from_vector(spec, f, &v).unwrap()
    }

    #[test]
    fn zero_coefficients_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, sf) = (random_graph(3, 0.5, &mut rng), random_graph(2, 0.5, &mut rng));
        let panel = random_panel(12, 3, 2, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgVar, 2, 3).unwrap();
        let g = sf_objective_gradient(&CoefficientSet::zeros(&spec, 2), &sf, &s, &panel, &spec, 2..12).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (family, product, k) in [
            (ModelFamily::PgVar, ProductGraphSpec::kronecker(), 2),
            (ModelFamily::PgVar, ProductGraphSpec::cartesian(), 4),
            (ModelFamily::PgGVar, ProductGraphSpec::strong(), 3),
        ] {
            let (s, sf) = (random_graph(4, 0.4, &mut rng), random_graph(3, 0.5, &mut rng));
            let panel = random_panel(15, 4, 3, &mut rng);
            let spec = ModelSpec::new(family, 2, k).unwrap().with_product(product);
            let h = random_coeffs(&spec, 3, &mut rng);
            let a = sf_objective_gradient(&h, &sf, &s, &panel, &spec, 2..15).unwrap();
            let n = sf_objective_gradient_fd(&h, &sf, &s, &panel, &spec, 2..15, 1e-6).unwrap();
            let diff: f64 = a.values.iter().zip(&n.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = n.values.iter().map(|y| y * y).sum::<f64>().sqrt();
            assert!(diff <= 1e-5 * scale, "{family} {product:?}: rel err {}", diff / scale);
        }
    }

    #[test]
    fn step_from_stationary_point_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, sf) = (random_graph(3, 0.5, &mut rng), random_graph(2, 0.5, &mut rng));
        let panel = random_panel(10, 3, 2, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgVar, 1, 1).unwrap();
        let h = random_coeffs(&spec, 2, &mut rng);
        let g = SupportedGraph::from_gso(&sf);
        let out = sf_step(&h, &g, &s, &panel, &spec, 1..10, &SfStepConfig::default()).unwrap();
        assert_eq!(out.graph, g);
        assert_eq!(out.objective, out.initial_objective);
    }

    #[test]
    fn step_never_increases_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let (s, sf) = (random_graph(3, 0.5, &mut rng), random_graph(3, 0.6, &mut rng));
            let panel = random_panel(20, 3, 3, &mut rng);
            let spec = ModelSpec::new(ModelFamily::PgGVar, 2, 3).unwrap();
            let h = random_coeffs(&spec, 3, &mut rng);
            let out = sf_step(&h, &SupportedGraph::from_gso(&sf), &s, &panel, &spec, 2..20, &SfStepConfig::default()).unwrap();
            assert!(out.objective <= out.initial_objective);
            assert_eq!(out.graph.support(), SupportedGraph::from_gso(&sf).support());
        }
    }

    #[test]
    fn symmetric_mode_keeps_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_graph(3, 0.5, &mut rng);
        let sf = GraphShiftOperator::from_triplets(
            3,
            [(0, 1, 0.3), (1, 0, 0.3), (1, 2, -0.2), (2, 1, -0.2), (0, 0, 1.0)],
            GsoKind::Generic,
        )
        .unwrap();
        let panel = random_panel(20, 3, 3, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgVar, 1, 3).unwrap();
        let h = random_coeffs(&spec, 3, &mut rng);
        let cfg = SfStepConfig {
            symmetric: true,
            ..SfStepConfig::default()
        };
        let out = sf_step(&h, &SupportedGraph::from_gso(&sf), &s, &panel, &spec, 1..20, &cfg).unwrap();
        assert!(out.graph.to_gso().is_symmetric(1e-12));
        assert!(out.objective < out.initial_objective);
    }

    #[test]
    fn rejects_non_product_families_and_empty_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_graph(3, 0.5, &mut rng);
        let panel = random_panel(10, 3, 2, &mut rng);
        let spec = ModelSpec::new(ModelFamily::GVar, 1, 2).unwrap();
        let sf = random_graph(2, 0.5, &mut rng);
        assert!(joint_fit(&spec, &s, &sf, &panel, 1..10, &JointFitConfig::default()).is_err());
        let spec = ModelSpec::new(ModelFamily::PgVar, 1, 2).unwrap();
        let empty = GraphShiftOperator::edgeless(2, GsoKind::Generic);
        assert!(matches!(
            joint_fit(&spec, &s, &empty, &panel, 1..10, &JointFitConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn single_entry_step_reaches_quadratic_minimizer() {
        // F = 1 Kronecker: X_hat = h0 X + h1 w S X, quadratic in w
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_graph(4, 0.5, &mut rng);
        let sf = GraphShiftOperator::from_triplets(1, [(0, 0, 0.2)], GsoKind::Generic).unwrap();
        let panel = random_panel(30, 4, 1, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgVar, 1, 2).unwrap().with_product(ProductGraphSpec::kronecker());
        let h = CoefficientSet::from_vector(&spec, 1, &[0.3, 0.7]).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        for t in 1..30 {
            let x = panel.matrix(t - 1).clone_owned();
            let sx = s.shift_columns(&x) * 0.7;
            let r = panel.matrix(t) - x * 0.3;
            num += r.dot(&sx);
            den += sx.norm_squared();
        }
        let out = sf_step(&h, &SupportedGraph::from_gso(&sf), &s, &panel, &spec, 1..30, &SfStepConfig::default()).unwrap();
        assert!((out.graph.values()[0] - num / den).abs() < 1e-6);
    }

    #[test]
    fn joint_fit_trace_is_monotone_and_support_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (s, sf) = (random_graph(4, 0.4, &mut rng), random_graph(3, 0.4, &mut rng));
        let panel = random_panel(40, 4, 3, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgGVar, 2, 3).unwrap();
        let fit = joint_fit(&spec, &s, &sf, &panel, 2..40, &JointFitConfig::default()).unwrap();
        let tr = &fit.report.trace;
        assert!(tr.windows(2).all(|w| w[1] <= w[0]), "{tr:?}");
        assert_eq!(tr.len(), 2 * fit.report.outer_iterations);
        let before: Vec<_> = sf.iter().map(|(r, c, _)| (r, c)).collect();
        assert_eq!(SupportedGraph::from_gso(&fit.feature_graph).support(), &before[..]);
        let direct = joint_objective(fit.model.coefficients(), &fit.feature_graph, &s, &panel, &spec, 2..40).unwrap();
        assert!((direct - fit.report.final_objective).abs() <= 1e-9 * direct);
    }

    #[test]
    fn large_epsilon_stops_after_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (s, sf) = (random_graph(3, 0.5, &mut rng), random_graph(2, 0.5, &mut rng));
        let panel = random_panel(20, 3, 2, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgVar, 1, 2).unwrap();
        let cfg = JointFitConfig {
            epsilon: 1e6,
            ..JointFitConfig::default()
        };
        let fit = joint_fit(&spec, &s, &sf, &panel, 1..20, &cfg).unwrap();
        assert_eq!(fit.report.outer_iterations, 1);
        assert!(fit.report.converged);
    }

    #[test]
    fn single_tap_joint_fit_equals_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (s, sf) = (random_graph(3, 0.5, &mut rng), random_graph(2, 0.5, &mut rng));
        let panel = random_panel(20, 3, 2, &mut rng);
        let spec = ModelSpec::new(ModelFamily::PgVar, 2, 1).unwrap();
        let fit = joint_fit(&spec, &s, &sf, &panel, 2..20, &JointFitConfig::default()).unwrap();
        let (ls, _) = fit_least_squares(&spec, &s, Some(&sf), &panel, 2..20).unwrap();
        assert_eq!(fit.model.coefficients(), ls.coefficients());
        assert_eq!(fit.feature_graph, sf);
    }
}
