//! Dense reference implementations shared by the integration tests. They
//! materialize every operator explicitly and share no code with the library
//! apart from coefficient accessors.

#![allow(dead_code)]

use graphvar::{CoefficientSet, GraphShiftOperator, GsoKind, ModelFamily, ModelSpec, ProductGraphSpec, SignalPanel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random operator with a full diagonal and about `density` off-diagonal fill.
pub fn random_gso(n: usize, density: f64, scale: f64, rng: &mut impl Rng) -> GraphShiftOperator {
    let mut trips = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r == c || rng.random::<f64>() < density {
                trips.push((r, c, scale * rng.random_range(-1.0..1.0)));
            }
        }
    }
    GraphShiftOperator::from_triplets(n, trips, GsoKind::Generic).unwrap()
}

pub fn random_panel(t: usize, n: usize, f: usize, rng: &mut impl Rng) -> SignalPanel {
    SignalPanel::new(t, n, f, (0..t * n * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dense(s: &GraphShiftOperator) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(s.n(), s.n());
    for (r, c, w) in s.iter() {
        m[(r, c)] = w;
    }
    m
}

pub fn dense_product(sf: &DMatrix<f64>, s: &DMatrix<f64>, spec: &ProductGraphSpec) -> DMatrix<f64> {
    let (f, n) = (sf.nrows(), s.nrows());
    let (i_f, i_n) = (DMatrix::<f64>::identity(f, f), DMatrix::<f64>::identity(n, n));
    i_f.kronecker(&i_n) * spec.s00
        + i_f.kronecker(s) * spec.s01
        + sf.kronecker(&i_n) * spec.s10
        + sf.kronecker(s) * spec.s11
}

/// Stacked one-step prediction `x_hat_t` from `history[0] = x_{t-1}, ...`.
pub fn dense_predict(
    spec: &ModelSpec,
    coeffs: &CoefficientSet,
    s: &DMatrix<f64>,
    sf: Option<&DMatrix<f64>>,
    history: &[DVector<f64>],
) -> DVector<f64> {
    let n = s.nrows();
    let f = history[0].len() / n;
    let i_f = DMatrix::<f64>::identity(f, f);
    let prod = sf.map(|sf| dense_product(sf, s, &spec.product));
    let mut out = DVector::zeros(n * f);
    for (lag, x) in history.iter().enumerate().take(spec.p) {
        for k in 0..spec.k {
            let sk = s.pow(k as u32);
            match spec.family {
                ModelFamily::GVar => out += i_f.kronecker(&sk) * x * coeffs.scalar(lag, k),
                ModelFamily::MimoGVar => {
                    let h = coeffs.matrix(lag, k).unwrap();
                    out += h.transpose().kronecker(&sk) * x;
                }
                _ => {}
            }
            if matches!(spec.family, ModelFamily::PerFeatureGVar | ModelFamily::PgGVar) {
                let diag = DMatrix::from_diagonal(&DVector::from_fn(f, |j, _| coeffs.feature(lag, k, j)));
                out += diag.kronecker(&sk) * x;
            }
            if matches!(spec.family, ModelFamily::PgVar | ModelFamily::PgGVar) {
                let pk = prod.as_ref().unwrap().pow(k as u32);
                out += pk * x * coeffs.scalar(lag, k);
            }
        }
    }
    out
}

pub fn stacked(panel: &SignalPanel, t: usize) -> DVector<f64> {
    DVector::from_column_slice(panel.x(t))
}

/// `sum_t ||x_t - x_hat_t||^2` with dense operators.
pub fn dense_objective(
    spec: &ModelSpec,
    coeffs: &CoefficientSet,
    s: &DMatrix<f64>,
    sf: Option<&DMatrix<f64>>,
    panel: &SignalPanel,
    targets: std::ops::Range<usize>,
) -> f64 {
    targets
        .map(|t| {
            let history: Vec<_> = (1..=spec.p).map(|l| stacked(panel, t - l)).collect();
            (stacked(panel, t) - dense_predict(spec, coeffs, s, sf, &history)).norm_squared()
        })
        .sum()
}
