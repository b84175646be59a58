//! Polynomial graph filters and MIMO graph filters.
//!
//! Powers of the shift operator are never formed; every `S^k` is applied by
//! `k` successive sparse products.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::GraphShiftOperator;

/// Filter taps `h_0 .. h_{K-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTaps(Vec<f64>);

impl FilterTaps {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if h.is_empty() {
            return Err(Error::InvalidParameter("filter needs at least one tap".into()));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite filter tap".into()));
        }
        Ok(Self(h))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `y = sum_k h_k S^k x`.
pub fn apply_filter(s: &GraphShiftOperator, taps: &FilterTaps, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != s.n() {
        return Err(Error::dims(format!("signal of length {}", s.n()), x.len()));
    }
    let h = taps.as_slice();
    let mut y: Vec<f64> = x.iter().map(|v| h[0] * v).collect();
    let mut cur = x.to_vec();
    let mut next = vec![0.0; x.len()];
    for &hk in &h[1..] {
        s.apply_into(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        for (yi, ci) in y.iter_mut().zip(&cur) {
            *yi += hk * ci;
        }
    }
    Ok(y)
}

/// `S^k X H` for an `N x F` signal matrix and an `F x F` mixing matrix.
pub fn mimo_shift_apply(
    s: &GraphShiftOperator,
    h: &DMatrix<f64>,
    k: usize,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if x.nrows() != s.n() {
        return Err(Error::dims(format!("{} rows", s.n()), x.nrows()));
    }
    if h.nrows() != x.ncols() || h.ncols() != x.ncols() {
        return Err(Error::dims(
            format!("{f}x{f} mixing matrix", f = x.ncols()),
            format!("{}x{}", h.nrows(), h.ncols()),
        ));
    }
    Ok(shift_power(s, x, k) * h)
}

/// `S^k X` by repeated shifting.
pub fn shift_power(s: &GraphShiftOperator, x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut cur = x.clone();
    for _ in 0..k {
        cur = s.shift_columns(&cur);
    }
    cur
}

/// `[X, S X, ..., S^{K-1} X]`.
pub fn shift_sequence(s: &GraphShiftOperator, x: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return out;
    }
    out.push(x.clone());
    for i in 1..k {
        let next = s.shift_columns(&out[i - 1]);
        out.push(next);
    }
    out
}
