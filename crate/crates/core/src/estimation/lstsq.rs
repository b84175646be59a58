//! Dense least squares by orthogonal factorization.
//!
//! Full-rank problems go through a column-pivoted QR; rank-deficient ones fall
//! back to the SVD pseudo-inverse, which yields the minimum-norm minimizer.
//! [`QrAccumulator`] compresses tall systems block by block so the full design
//! matrix never has to be materialized.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LstsqSolution {
    /// `cols x nrhs` solution.
    pub x: DMatrix<f64>,
    pub rank: usize,
    pub rank_deficient: bool,
    /// Ratio of the largest to the smallest pivot of the QR factor.
    pub condition_estimate: f64,
}

/// Minimizes `||A X - B||_F` with the default relative rank tolerance
/// `max(rows, cols) * eps`.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LstsqSolution> {
    let rcond = a.nrows().max(a.ncols()) as f64 * f64::EPSILON;
    solve_least_squares_rcond(a, b, rcond)
}

pub fn solve_least_squares_rcond(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    rcond: f64,
) -> Result<LstsqSolution> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InsufficientSamples(format!("empty least-squares system ({m}x{n})")));
    }
    if b.nrows() != m {
        return Err(Error::dims(format!("{m} target rows"), b.nrows()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "least-squares system".into(),
        });
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..m.min(n)).map(|i| r[(i, i)].abs()).collect();
    let max_pivot = diag.first().copied().unwrap_or(0.0);
    let rank = if max_pivot == 0.0 {
        0
    } else {
        diag.iter().take_while(|&&d| d > rcond * max_pivot).count()
    };
    let condition_estimate = if rank == n {
        max_pivot / diag[n - 1]
    } else {
        f64::INFINITY
    };
    if rank == n {
        let q = qr.q();
        let mut y = q.transpose() * b;
        let mut y = y.rows_mut(0, n).into_owned();
        let r_sq = r.view((0, 0), (n, n));
        if !r_sq.solve_upper_triangular_mut(&mut y) {
            return Err(Error::NonFinite {
                context: "singular triangular factor".into(),
            });
        }
        qr.p().inv_permute_rows(&mut y);
        return Ok(LstsqSolution {
            x: y,
            rank,
            rank_deficient: false,
            condition_estimate,
        });
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let x = svd
        .solve(b, rcond * smax)
        .map_err(|e| Error::NonFinite {
            context: format!("SVD solve failed: {e}"),
        })?;
    Ok(LstsqSolution {
        x,
        rank,
        rank_deficient: true,
        condition_estimate,
    })
}

/// Streaming QR compression of `[A | B]`: after feeding all rows, the kept
/// triangular factor `R_aug` satisfies `R_aug^T R_aug = [A B]^T [A B]`, which
/// preserves the least-squares solution set and residuals.
#[derive(Clone, Debug)]
pub struct QrAccumulator {
    cols: usize,
    nrhs: usize,
    r: DMatrix<f64>,
    pending: Vec<f64>,
    pending_rows: usize,
    rows_seen: usize,
    chunk_rows: usize,
}

impl QrAccumulator {
    pub fn new(cols: usize, nrhs: usize) -> Self {
        let width = cols + nrhs;
        Self {
            cols,
            nrhs,
            r: DMatrix::zeros(0, width),
            pending: Vec::new(),
            pending_rows: 0,
            rows_seen: 0,
            chunk_rows: (4 * width).max(256),
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    /// Adds one row: `a` has `cols` entries, `b` has `nrhs`.
    pub fn push_row(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.cols);
        debug_assert_eq!(b.len(), self.nrhs);
        self.pending.extend_from_slice(a);
        self.pending.extend_from_slice(b);
        self.pending_rows += 1;
        self.rows_seen += 1;
        if self.pending_rows >= self.chunk_rows {
            self.compress();
        }
    }

    fn compress(&mut self) {
        if self.pending_rows == 0 {
            return;
        }
        let width = self.cols + self.nrhs;
        let top = self.r.nrows();
        let mut stacked = DMatrix::zeros(top + self.pending_rows, width);
        stacked.rows_mut(0, top).copy_from(&self.r);
        stacked
            .rows_mut(top, self.pending_rows)
            .copy_from(&DMatrix::from_row_slice(self.pending_rows, width, &self.pending));
        self.r = stacked.qr().r();
        self.pending.clear();
        self.pending_rows = 0;
    }

    pub fn solve(mut self) -> Result<AccumulatedSolution> {
        self.compress();
        if self.rows_seen == 0 {
            return Err(Error::InsufficientSamples("no rows were accumulated".into()));
        }
        let (q, m) = (self.cols, self.nrhs);
        let kept = self.r.nrows();
        // pad to a square cols x cols factor when fewer rows than columns were seen
        let mut r = DMatrix::zeros(q, q);
        let mut z = DMatrix::zeros(q, m);
        let take = kept.min(q);
        r.rows_mut(0, take).copy_from(&self.r.view((0, 0), (take, q)));
        z.rows_mut(0, take).copy_from(&self.r.view((0, q), (take, m)));
        let rcond = self.rows_seen.max(q) as f64 * f64::EPSILON;
        let sol = solve_least_squares_rcond(&r, &z, rcond)?;
        let reduced = &z - &r * &sol.x;
        let rss = (0..m)
            .map(|j| {
                let tail: f64 = (q..kept).map(|i| self.r[(i, q + j)].powi(2)).sum();
                reduced.column(j).norm_squared() + tail
            })
            .collect();
        Ok(AccumulatedSolution {
            solution: sol,
            rows: self.rows_seen,
            residual_sum_squares: rss,
        })
    }
}

#[derive(Clone, Debug)]
pub struct AccumulatedSolution {
    pub solution: LstsqSolution,
    pub rows: usize,
    /// Residual sum of squares per right-hand side.
    pub residual_sum_squares: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pseudo_random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut x = seed;
        DMatrix::from_fn(rows, cols, |_, _| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_system() {
        let a = DMatrix::identity(4, 4);
        let b = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 3.0, 0.5]);
        let s = solve_least_squares(&a, &b).unwrap();
        assert_relative_eq!(s.x, b, epsilon = 1e-15);
        assert!(!s.rank_deficient);
    }

    #[test]
    fn normal_equations_hold() {
        let a = pseudo_random(40, 6, 3);
        let b = pseudo_random(40, 2, 4);
        let s = solve_least_squares(&a, &b).unwrap();
        let grad = a.transpose() * (&b - &a * &s.x);
        assert!(grad.norm() <= 1e-12 * (a.transpose() * &b).norm());
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        // duplicated column: minimum-norm solution splits the weight evenly
        let base = pseudo_random(20, 2, 9);
        let a = DMatrix::from_fn(20, 3, |i, j| base[(i, if j == 2 { 1 } else { j })]);
        let truth = DMatrix::from_column_slice(2, 1, &[0.5, 2.0]);
        let b = &base * &truth;
        let s = solve_least_squares(&a, &b).unwrap();
        assert!(s.rank_deficient);
        assert_eq!(s.rank, 2);
        assert_relative_eq!(s.x[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.x[(1, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.x[(2, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_system_is_an_error() {
        assert!(solve_least_squares(&DMatrix::zeros(0, 2), &DMatrix::zeros(0, 1)).is_err());
        assert!(QrAccumulator::new(2, 1).solve().is_err());
    }

    #[test]
    fn accumulator_matches_dense() {
        let a = pseudo_random(1500, 7, 21);
        let b = pseudo_random(1500, 3, 22);
        let dense = solve_least_squares(&a, &b).unwrap();
        let mut acc = QrAccumulator::new(7, 3);
        for i in 0..a.nrows() {
            let ar: Vec<f64> = a.row(i).iter().copied().collect();
            let br: Vec<f64> = b.row(i).iter().copied().collect();
            acc.push_row(&ar, &br);
        }
        let streamed = acc.solve().unwrap();
        assert_relative_eq!(streamed.solution.x, dense.x, epsilon = 1e-11);
        let resid = &b - &a * &dense.x;
        for j in 0..3 {
            assert_relative_eq!(
                streamed.residual_sum_squares[j],
                resid.column(j).norm_squared(),
                max_relative = 1e-10
            );
        }
    }
}
