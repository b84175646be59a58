//! Multidimensional graph signals over time.
//!
//! A [`SignalPanel`] stores `T` slices of an `F`-dimensional graph signal on
//! `N` nodes. Each slice is kept in stacked form `x_t = [x_t(1); ...; x_t(F)]`,
//! so feature `f` occupies the contiguous block `f*N .. (f+1)*N`. Because
//! nalgebra matrices are column-major, the same slice viewed as an `N x F`
//! matrix is exactly `X_t` (column `f` holds the signal of feature `f`).

use std::io::{BufRead, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalPanel {
    t_len: usize,
    n: usize,
    f: usize,
    /// Absolute index of the first slice in the originating series.
    t0: i64,
    data: Vec<f64>,
    feature_names: Vec<String>,
}

impl SignalPanel {
    pub fn new(t_len: usize, n: usize, f: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || f == 0 {
            return Err(Error::InvalidInput(format!(
                "panel needs at least one node and one feature (got N={n}, F={f})"
            )));
        }
        if data.len() != t_len * n * f {
            return Err(Error::dims(
                format!("{} values (T={t_len}, N={n}, F={f})", t_len * n * f),
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let slice = n * f;
            return Err(Error::InvalidInput(format!(
                "non-finite entry at t={}, feature={}, node={}",
                pos / slice,
                (pos % slice) / n,
                pos % n
            )));
        }
        Ok(Self {
            t_len,
            n,
            f,
            t0: 0,
            data,
            feature_names: default_feature_names(f),
        })
    }

    pub fn zeros(t_len: usize, n: usize, f: usize) -> Self {
        Self {
            t_len,
            n,
            f,
            t0: 0,
            data: vec![0.0; t_len * n * f],
            feature_names: default_feature_names(f),
        }
    }

    /// Builds a panel from `N x F` slices `X_0, X_1, ...`.
    pub fn from_matrices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidInput("no slices".into()))?;
        let (n, f) = first.shape();
        let mut data = Vec::with_capacity(slices.len() * n * f);
        for (t, m) in slices.iter().enumerate() {
            if m.shape() != (n, f) {
                return Err(Error::dims(
                    format!("{n}x{f} slice"),
                    format!("{}x{} at t={t}", m.nrows(), m.ncols()),
                ));
            }
            data.extend_from_slice(m.as_slice());
        }
        Self::new(slices.len(), n, f, data)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.f {
            return Err(Error::dims(format!("{} feature names", self.f), names.len()));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn with_t0(mut self, t0: i64) -> Self {
        self.t0 = t0;
        self
    }

    pub fn len(&self) -> usize {
        self.t_len
    }

    pub fn is_empty(&self) -> bool {
        self.t_len == 0
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> usize {
        self.f
    }

    /// Length of one stacked slice, `N * F`.
    pub fn slice_len(&self) -> usize {
        self.n * self.f
    }

    pub fn t0(&self) -> i64 {
        self.t0
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Stacked signal `x_t`.
    pub fn x(&self, t: usize) -> &[f64] {
        let w = self.slice_len();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn x_mut(&mut self, t: usize) -> &mut [f64] {
        let w = self.slice_len();
        &mut self.data[t * w..(t + 1) * w]
    }

    /// Matrix view `X_t` (`N x F`).
    pub fn matrix(&self, t: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(self.x(t), self.n, self.f)
    }

    pub fn get(&self, t: usize, node: usize, feature: usize) -> f64 {
        self.data[t * self.slice_len() + feature * self.n + node]
    }

    pub fn set(&mut self, t: usize, node: usize, feature: usize, value: f64) {
        let w = self.slice_len();
        self.data[t * w + feature * self.n + node] = value;
    }

    /// Copies the slices in `range` into a new panel, keeping absolute indexing.
    pub fn slice(&self, range: Range<usize>) -> Result<SignalPanel> {
        if range.start > range.end || range.end > self.t_len {
            return Err(Error::InvalidParameter(format!(
                "slice {range:?} outside panel of length {}",
                self.t_len
            )));
        }
        let w = self.slice_len();
        Ok(SignalPanel {
            t_len: range.len(),
            n: self.n,
            f: self.f,
            t0: self.t0 + range.start as i64,
            data: self.data[range.start * w..range.end * w].to_vec(),
            feature_names: self.feature_names.clone(),
        })
    }

    /// Values of one (node, feature) series over time.
    pub fn series(&self, node: usize, feature: usize) -> Vec<f64> {
        (0..self.t_len).map(|t| self.get(t, node, feature)).collect()
    }

    /// Writes the panel as CSV with a `# panel T N F` shape header and a
    /// `# features ...` manifest line, followed by one row per (t, node).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# panel {} {} {}", self.t_len, self.n, self.f)?;
        writeln!(w, "# features {}", self.feature_names.join(","))?;
        write!(w, "t,node")?;
        for name in &self.feature_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for t in 0..self.t_len {
            for v in 0..self.n {
                write!(w, "{},{}", self.t0 + t as i64, v)?;
                for f in 0..self.f {
                    write!(w, ",{}", self.get(t, v, f))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<SignalPanel> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty panel file".into()))??;
        let dims: Vec<usize> = header
            .strip_prefix("# panel ")
            .ok_or_else(|| Error::Parse(format!("bad panel header: {header}")))?
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad panel header: {e}")))?;
        let [t_len, n, f] = dims[..] else {
            return Err(Error::Parse(format!("bad panel header: {header}")));
        };
        let manifest = lines
            .next()
            .ok_or_else(|| Error::Parse("missing feature manifest".into()))??;
        let names: Vec<String> = manifest
            .strip_prefix("# features ")
            .ok_or_else(|| Error::Parse(format!("bad feature manifest: {manifest}")))?
            .split(',')
            .map(str::to_string)
            .collect();
        // column header
        lines.next();
        let mut data = vec![0.0; t_len * n * f];
        let mut t0 = None;
        let mut rows = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != f + 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 4,
                    f + 2,
                    fields.len()
                )));
            }
            let parse_err = |e: &dyn std::fmt::Display| {
                Error::Parse(format!("line {}: {e}", lineno + 4))
            };
            let t_abs: i64 = fields[0].parse().map_err(|e| parse_err(&e))?;
            let node: usize = fields[1].parse().map_err(|e| parse_err(&e))?;
            let start = *t0.get_or_insert(t_abs);
            let t = usize::try_from(t_abs - start).map_err(|e| parse_err(&e))?;
            if t >= t_len || node >= n {
                return Err(parse_err(&"index outside declared shape"));
            }
            for (feat, s) in fields[2..].iter().enumerate() {
                data[t * n * f + feat * n + node] = s.parse().map_err(|e| parse_err(&e))?;
            }
            rows += 1;
        }
        if rows != t_len * n {
            return Err(Error::Parse(format!(
                "expected {} rows, found {rows}",
                t_len * n
            )));
        }
        Ok(SignalPanel::new(t_len, n, f, data)?
            .with_feature_names(names)?
            .with_t0(t0.unwrap_or(0)))
    }
}

fn default_feature_names(f: usize) -> Vec<String> {
    (0..f).map(|i| format!("f{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_view_matches_stacking() {
        let mut p = SignalPanel::zeros(2, 3, 2);
        p.set(1, 2, 1, 5.0);
        p.set(1, 0, 0, -1.0);
        let m = p.matrix(1);
        assert_eq!(m[(2, 1)], 5.0);
        assert_eq!(m[(0, 0)], -1.0);
        // block f=1 starts at offset N=3
        assert_eq!(p.x(1)[3 + 2], 5.0);
    }

    #[test]
    fn rejects_non_finite() {
        let err = SignalPanel::new(1, 1, 2, vec![0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn csv_cache_round_trip() {
        let data: Vec<f64> = (0..24).map(|i| i as f64 * 0.25 - 1.0).collect();
        let p = SignalPanel::new(4, 3, 2, data)
            .unwrap()
            .with_feature_names(vec!["a".into(), "b".into()])
            .unwrap()
            .with_t0(10);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = SignalPanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn slice_keeps_absolute_index() {
        let p = SignalPanel::zeros(10, 2, 1).with_t0(5);
        let s = p.slice(3..7).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.t0(), 8);
        assert!(p.slice(8..11).is_err());
    }
}
