//! Self-contained numerical checks used by the `selftest` command.
//!
//! Each check compares a library routine against an independent dense
//! computation on seeded random instances and reports the worst error seen.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, random_stable_coefficients, SyntheticSpec};
use crate::error::Result;
use crate::estimation::{fit_least_squares, sf_objective_gradient, sf_objective_gradient_fd};
use crate::evaluation::rnmse;
use crate::filters::mimo_shift_apply;
use crate::graph::{product_gso, GraphShiftOperator, GsoKind, ProductGraphSpec};
use crate::models::{param_count, CoefficientSet, FittedModel, ModelFamily, ModelSpec};
use crate::panel::SignalPanel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelftestConfig {
    pub seed: u64,
    /// Deliberately perturbs the analytic gradient so the gradient check
    /// must fail.
    pub corrupt_gradient: bool,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            corrupt_gradient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst error observed.
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn from_error(name: &str, error: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: error <= tolerance,
            error,
            tolerance,
            detail,
        }
    }

    fn failed(name: &str, tolerance: f64, err: crate::error::Error) -> Self {
        Self {
            name: name.into(),
            passed: false,
            error: f64::INFINITY,
            tolerance,
            detail: err.to_string(),
        }
    }
}

pub fn run_selftest(config: &SelftestConfig) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    type Check = fn(&mut ChaCha8Rng, &SelftestConfig) -> Result<CheckResult>;
    let checks: [(&str, f64, Check); 6] = [
        ("kronecker_duality", 1e-12, |r, _| kronecker_duality(r, 100)),
        ("family_nesting", 1e-12, |r, _| family_nesting(r, 50)),
        ("product_presets", 0.0, |r, _| product_presets(r, 20)),
        ("sf_gradient", 1e-5, |r, c| gradient_check(r, 20, c.corrupt_gradient)),
        ("ls_recovery", 1e-8, |r, _| ls_recovery(r)),
        ("rnmse_units", 1e-15, |_, _| rnmse_units()),
    ];
    checks
        .iter()
        .map(|(name, tol, f)| f(&mut rng, config).unwrap_or_else(|e| CheckResult::failed(name, *tol, e)))
        .collect()
}

/// Random sparse operator with roughly `density` off-diagonal fill.
pub fn random_gso(n: usize, density: f64, rng: &mut impl Rng) -> GraphShiftOperator {
    let mut trips = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r == c || rng.random::<f64>() < density {
                trips.push((r, c, rng.random_range(-1.0..1.0)));
            }
        }
    }
    GraphShiftOperator::from_triplets(n, trips, GsoKind::Generic).expect("diagonal keeps the pattern nonempty")
}

fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

/// `vec(S^k X H) = (H^T kron S^k) vec(X)` with a dense Kronecker oracle.
pub fn kronecker_duality(rng: &mut impl Rng, instances: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, f, k) = (rng.random_range(1..=5), rng.random_range(1..=4), rng.random_range(0..4));
        let s = random_gso(n, 0.5, rng);
        let (x, h) = (random_matrix(n, f, rng), random_matrix(f, f, rng));
        let fast = mimo_shift_apply(&s, &h, k, &x)?;
        let sk = s.to_dense().pow(k as u32);
        let dense = h.transpose().kronecker(&sk) * DMatrix::from_column_slice(n * f, 1, x.as_slice());
        let err = (DMatrix::from_column_slice(n * f, 1, fast.as_slice()) - &dense).norm();
        worst = worst.max(relative(err, dense.norm()));
    }
    Ok(CheckResult::from_error(
        "kronecker_duality",
        worst,
        1e-12,
        format!("{instances} instances, max relative error"),
    ))
}

/// MIMO with diagonal `H` equals the per-feature model; per-feature with
/// feature-independent taps equals G-VAR.
pub fn family_nesting(rng: &mut impl Rng, instances: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, f) = (rng.random_range(2..=5), rng.random_range(1..=4));
        let (p, k) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let s = random_gso(n, 0.5, rng);
        let history: Vec<DMatrix<f64>> = (0..p).map(|_| random_matrix(n, f, rng)).collect();
        let views: Vec<_> = history.iter().map(|h| h.as_view()).collect();

        let per_spec = ModelSpec::new(ModelFamily::PerFeatureGVar, p, k)?;
        let taps: Vec<f64> = (0..param_count(&per_spec, f)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let per = FittedModel::new(per_spec, CoefficientSet::from_vector(&per_spec, f, &taps)?, s.clone(), None, f)?;

        let mimo_spec = ModelSpec::new(ModelFamily::MimoGVar, p, k)?;
        let mut mimo_coeffs = vec![0.0; param_count(&mimo_spec, f)];
        for blk in 0..p * k {
            for j in 0..f {
                mimo_coeffs[blk * f * f + j * f + j] = taps[blk * f + j];
            }
        }
        let mimo = FittedModel::new(mimo_spec, CoefficientSet::from_vector(&mimo_spec, f, &mimo_coeffs)?, s.clone(), None, f)?;
        let a = per.predict(&views)?;
        worst = worst.max(relative((&a - mimo.predict(&views)?).norm(), a.norm()));

        let g_spec = ModelSpec::new(ModelFamily::GVar, p, k)?;
        let g_taps: Vec<f64> = (0..p * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gvar = FittedModel::new(g_spec, CoefficientSet::from_vector(&g_spec, f, &g_taps)?, s.clone(), None, f)?;
        let spread: Vec<f64> = g_taps.iter().flat_map(|&h| std::iter::repeat_n(h, f)).collect();
        let per_const = FittedModel::new(per_spec, CoefficientSet::from_vector(&per_spec, f, &spread)?, s, None, f)?;
        let b = gvar.predict(&views)?;
        worst = worst.max(relative((&b - per_const.predict(&views)?).norm(), b.norm()));
    }
    Ok(CheckResult::from_error(
        "family_nesting",
        worst,
        1e-12,
        format!("{instances} instances, max relative error"),
    ))
}

/// Cartesian and Kronecker presets against dense Kronecker expansions.
pub fn product_presets(rng: &mut impl Rng, instances: usize) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n, f) = (rng.random_range(1..=5), rng.random_range(1..=4));
        let (s, sf) = (random_gso(n, 0.5, rng), random_gso(f, 0.5, rng));
        let (ds, dsf) = (s.to_dense(), sf.to_dense());
        let cart = DMatrix::<f64>::identity(f, f).kronecker(&ds) + dsf.kronecker(&DMatrix::<f64>::identity(n, n));
        let kron = dsf.kronecker(&ds);
        let got_c = product_gso(&sf, &s, &ProductGraphSpec::cartesian())?.to_dense();
        let got_k = product_gso(&sf, &s, &ProductGraphSpec::kronecker())?.to_dense();
        worst = worst.max((got_c - cart).abs().max()).max((got_k - kron).abs().max());
    }
    Ok(CheckResult::from_error(
        "product_presets",
        worst,
        0.0,
        format!("{instances} instances, max absolute entry difference"),
    ))
}

/// Analytic feature-graph gradient against central finite differences.
pub fn gradient_check(rng: &mut impl Rng, instances: usize, corrupt: bool) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let (n, f, k) = (rng.random_range(2..=4), rng.random_range(2..=3), rng.random_range(2..=4));
        let product = if i % 2 == 0 {
            ProductGraphSpec::cartesian()
        } else {
            ProductGraphSpec::kronecker()
        };
        let family = if i % 4 < 2 { ModelFamily::PgVar } else { ModelFamily::PgGVar };
        let spec = ModelSpec::new(family, rng.random_range(1..=2), k)?.with_product(product);
        let (s, sf) = (random_gso(n, 0.5, rng), random_gso(f, 0.6, rng));
        let t_len = 12;
        let data: Vec<f64> = (0..t_len * n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let panel = SignalPanel::new(t_len, n, f, data)?;
        let h: Vec<f64> = (0..param_count(&spec, f)).map(|_| rng.random_range(-0.5..0.5)).collect();
        let h = CoefficientSet::from_vector(&spec, f, &h)?;
        let mut analytic = sf_objective_gradient(&h, &sf, &s, &panel, &spec, spec.p..t_len)?.values;
        if corrupt {
            analytic.iter_mut().for_each(|g| *g *= 1.5);
        }
        let fd = sf_objective_gradient_fd(&h, &sf, &s, &panel, &spec, spec.p..t_len, 1e-6)?.values;
        let err = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(relative(err, scale));
    }
    Ok(CheckResult::from_error(
        "sf_gradient",
        worst,
        1e-5,
        format!(
            "{instances} instances, max relative error{}",
            if corrupt { " (corrupted analytic gradient)" } else { "" }
        ),
    ))
}

/// Noise-free synthetic data from every family is refit exactly.
pub fn ls_recovery(rng: &mut impl Rng) -> Result<CheckResult> {
    let (n, f, t_len) = (6, 3, 400);
    let s = random_gso(n, 0.4, rng);
    let sf = random_gso(f, 0.6, rng);
    let mut worst: f64 = 0.0;
    for family in ModelFamily::ALL {
        let spec = ModelSpec::new(family, 2, 2)?;
        let coeffs = random_stable_coefficients(&spec, &s, Some(&sf), f, 0.97, rng)?;
        let syn = SyntheticSpec::new(spec, coeffs.clone(), t_len, rng.random());
        let panel = generate_synthetic(&syn, &s, Some(&sf), f)?;
        let (model, _) = fit_least_squares(&spec, &s, Some(&sf), &panel, spec.p..t_len)?;
        let truth = coeffs.identifiable_vector(&spec, f);
        let got = model.coefficients().identifiable_vector(&spec, f);
        let err = truth.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    Ok(CheckResult::from_error(
        "ls_recovery",
        worst,
        1e-8,
        "all families, N=6 F=3 P=2 K=2 T=400, max identifiable coefficient error".into(),
    ))
}

pub fn rnmse_units() -> Result<CheckResult> {
    let actual = [0.3, -1.2, 2.5, 0.7, -0.1];
    let zeros = [0.0; 5];
    let doubled: Vec<f64> = actual.iter().map(|v| 2.0 * v).collect();
    let err = rnmse(&actual, &actual)?
        .abs()
        .max((rnmse(&zeros, &actual)? - 1.0).abs())
        .max((rnmse(&doubled, &actual)? - 1.0).abs());
    Ok(CheckResult::from_error(
        "rnmse_units",
        err,
        1e-15,
        "perfect, zero and doubled predictions".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_selftest_passes() {
        for check in run_selftest(&SelftestConfig::default()) {
            assert!(check.passed, "{check:?}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let cfg = SelftestConfig {
            corrupt_gradient: true,
            ..SelftestConfig::default()
        };
        let results = run_selftest(&cfg);
        let grad = results.iter().find(|c| c.name == "sf_gradient").unwrap();
        assert!(!grad.passed);
        assert!(results.iter().filter(|c| c.name != "sf_gradient").all(|c| c.passed));
    }
}
