//! Synthetic graph-VAR processes with known coefficients.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphShiftOperator;
use crate::models::{param_count, CoefficientSet, FittedModel, ModelSpec};
use crate::panel::SignalPanel;

/// Largest companion dimension `N*F*P` for which the dense stability check
/// runs.
pub const MAX_COMPANION_DIM: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub model: ModelSpec,
    pub coefficients: CoefficientSet,
    pub noise_std: f64,
    /// Number of returned time steps.
    pub t_len: usize,
    pub seed: u64,
    /// Steps generated and discarded before the returned panel starts.
    pub burn_in: usize,
    /// Standard deviation of the random initial history. Makes noise-free
    /// panels non-trivial.
    pub init_std: f64,
}

impl SyntheticSpec {
    pub fn new(model: ModelSpec, coefficients: CoefficientSet, t_len: usize, seed: u64) -> Self {
        Self {
            model,
            coefficients,
            noise_std: 0.0,
            t_len,
            seed,
            burn_in: 0,
            init_std: 1.0,
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }
}

/// Dense `NF*P x NF*P` companion matrix of the recursion, in the
/// feature-major stacking `f*N + v`.
pub fn companion_matrix(model: &FittedModel) -> Result<DMatrix<f64>> {
    let (n, f, p) = (model.nodes(), model.features(), model.spec().p);
    let m = n * f;
    let dim = m * p;
    if dim > MAX_COMPANION_DIM {
        return Err(Error::InvalidParameter(format!(
            "companion dimension {dim} exceeds the dense check limit {MAX_COMPANION_DIM}"
        )));
    }
    let mut c = DMatrix::zeros(dim, dim);
    let zero = DMatrix::<f64>::zeros(n, f);
    for lag in 0..p {
        for j in 0..m {
            let mut unit = DMatrix::<f64>::zeros(n, f);
            unit[(j % n, j / n)] = 1.0;
            let history: Vec<_> = (0..p)
                .map(|l| if l == lag { unit.as_view() } else { zero.as_view() })
                .collect();
            let col = model.predict(&history)?;
            c.view_mut((0, lag * m + j), (m, 1)).copy_from_slice(col.as_slice());
        }
    }
    for i in m..dim {
        c[(i, i - m)] = 1.0;
    }
    Ok(c)
}

pub fn spectral_radius(model: &FittedModel) -> Result<f64> {
    matrix_spectral_radius(&companion_matrix(model)?)
}

/// Largest eigenvalue modulus of a dense square matrix. The shifted QR
/// iteration can stall on highly structured inputs; those are retried after
/// an orthogonal similarity transform, which leaves the spectrum unchanged.
pub fn matrix_spectral_radius(c: &DMatrix<f64>) -> Result<f64> {
    let n = c.nrows();
    let max_iter = 100 * n.max(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut m = c.clone();
    for _ in 0..4 {
        if let Some(schur) = m.clone().try_schur(1e-14, max_iter) {
            return Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        m = q.transpose() * c * &q;
    }
    Err(Error::NonFinite {
        context: "companion eigenvalue iteration did not converge".into(),
    })
}

/// Simulates `x_t = prediction(x_{t-1}, ..., x_{t-P}) + noise` after
/// checking that the companion spectral radius is below one.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    features: usize,
) -> Result<SignalPanel> {
    if !(spec.noise_std >= 0.0) || !(spec.init_std >= 0.0) {
        return Err(Error::InvalidParameter("standard deviations must be >= 0".into()));
    }
    if spec.t_len == 0 {
        return Err(Error::InvalidParameter("t_len must be >= 1".into()));
    }
    let model = FittedModel::new(spec.model, spec.coefficients.clone(), s.clone(), sf.cloned(), features)?;
    let radius = spectral_radius(&model)?;
    if !(radius < 1.0) {
        return Err(Error::Unstable { radius });
    }
    let (n, p) = (s.n(), spec.model.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let init = Normal::new(0.0, spec.init_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    // history[0] is the most recent slice
    let mut history: Vec<DMatrix<f64>> = (0..p)
        .map(|_| DMatrix::from_fn(n, features, |_, _| init.sample(&mut rng)))
        .collect();
    let total = spec.burn_in + spec.t_len;
    let mut out = Vec::with_capacity(spec.t_len);
    for step in 0..total {
        let views: Vec<_> = history.iter().map(|h| h.as_view()).collect();
        let mut x = model.predict(&views)?;
        if spec.noise_std > 0.0 {
            x.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
        history.pop();
        history.insert(0, x.clone());
        if step >= spec.burn_in {
            out.push(x);
        }
    }
    SignalPanel::from_matrices(&out)
}

/// Random coefficients whose companion spectral radius equals
/// `target_radius`. Scaling lag `p` by `c^p` scales every companion
/// eigenvalue by `c`.
pub fn random_stable_coefficients(
    spec: &ModelSpec,
    s: &GraphShiftOperator,
    sf: Option<&GraphShiftOperator>,
    features: usize,
    target_radius: f64,
    rng: &mut impl Rng,
) -> Result<CoefficientSet> {
    if !(target_radius > 0.0 && target_radius < 1.0) {
        return Err(Error::InvalidParameter(format!("target radius {target_radius} not in (0, 1)")));
    }
    let q = param_count(spec, features);
    let raw: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coeffs = CoefficientSet::from_vector(spec, features, &raw)?;
    let model = FittedModel::new(*spec, coeffs.clone(), s.clone(), sf.cloned(), features)?;
    let radius = spectral_radius(&model)?;
    if radius == 0.0 {
        return Err(Error::InvalidParameter("random coefficients produced a nilpotent recursion".into()));
    }
    scale_lags(spec, features, &coeffs, target_radius / radius)
}

/// Multiplies the lag-`p` coefficients (`p` one-based) by `c^p`.
pub fn scale_lags(spec: &ModelSpec, features: usize, coeffs: &CoefficientSet, c: f64) -> Result<CoefficientSet> {
    let v = coeffs.to_vector(spec, features);
    let per_lag = v.len() / spec.p;
    let scaled: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, x)| x * c.powi((i / per_lag + 1) as i32))
        .collect();
    CoefficientSet::from_vector(spec, features, &scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GsoKind;
    use crate::models::ModelFamily;

    fn ring(n: usize) -> GraphShiftOperator {
        let trips = (0..n).flat_map(|i| [(i, (i + 1) % n, 0.5), ((i + 1) % n, i, 0.5)]);
        GraphShiftOperator::from_triplets(n, trips, GsoKind::Adjacency).unwrap()
    }

    fn persistence(tap: f64) -> SyntheticSpec {
        let spec = ModelSpec::new(ModelFamily::GVar, 1, 1).unwrap();
        let c = CoefficientSet::from_vector(&spec, 1, &[tap]).unwrap();
        SyntheticSpec::new(spec, c, 50, 1).with_noise(0.1)
    }

    #[test]
    fn persistence_stability_boundary() {
        let s = ring(3);
        let ok = persistence(0.999);
        let model = FittedModel::new(ok.model, ok.coefficients.clone(), s.clone(), None, 1).unwrap();
        assert!((spectral_radius(&model).unwrap() - 0.999).abs() < 1e-12);
        assert!(generate_synthetic(&ok, &s, None, 1).is_ok());
        match generate_synthetic(&persistence(1.1), &s, None, 1) {
            Err(Error::Unstable { radius }) => assert!((radius - 1.1).abs() < 1e-12),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn zero_coefficients_give_white_noise() {
        let s = ring(4);
        let spec = ModelSpec::new(ModelFamily::GVar, 2, 2).unwrap();
        let syn = SyntheticSpec {
            init_std: 0.0,
            ..SyntheticSpec::new(spec, CoefficientSet::zeros(&spec, 2), 5000, 7).with_noise(0.3)
        };
        let panel = generate_synthetic(&syn, &s, None, 2).unwrap();
        let v = panel.as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((var - 0.09).abs() < 0.09 * 0.05, "variance {var}");
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let s = ring(3);
        let a = generate_synthetic(&persistence(0.5), &s, None, 1).unwrap();
        let b = generate_synthetic(&persistence(0.5), &s, None, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_stable_hits_target_radius() {
        let s = ring(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in ModelFamily::ALL {
            let sf = ring(3);
            let spec = ModelSpec::new(family, 2, 3).unwrap();
            let c = random_stable_coefficients(&spec, &s, Some(&sf), 3, 0.8, &mut rng).unwrap();
            let m = FittedModel::new(spec, c, s.clone(), Some(sf), 3).unwrap();
            assert!((spectral_radius(&m).unwrap() - 0.8).abs() < 1e-8, "{family}");
        }
    }
}
