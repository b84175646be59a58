//! Seeded workloads shared by the benchmarks.

use graphvar::checks::random_gso;
use graphvar::{GraphShiftOperator, SignalPanel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sparse operator with about `degree` neighbors per node, scaled so
/// repeated shifts stay bounded.
pub fn sparse_gso(n: usize, degree: usize, rng: &mut impl Rng) -> GraphShiftOperator {
    let density = (degree as f64 / n.max(1) as f64).min(1.0);
    let g = random_gso(n, density, rng);
    let scale = 1.0 / (degree as f64 + 1.0);
    let values: Vec<f64> = g.iter().map(|(_, _, v)| v * scale).collect();
    g.with_values(&values).expect("same support")
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_panel(t: usize, n: usize, f: usize, rng: &mut impl Rng) -> SignalPanel {
    let data = (0..t * n * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    SignalPanel::new(t, n, f, data).expect("consistent shape")
}
