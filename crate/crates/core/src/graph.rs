//! Graph shift operators, graph construction heuristics and product graphs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::SignalPanel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsoKind {
    Adjacency,
    Laplacian,
    NormalizedLaplacian,
    Generic,
}

impl fmt::Display for GsoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GsoKind::Adjacency => "adjacency",
            GsoKind::Laplacian => "laplacian",
            GsoKind::NormalizedLaplacian => "normalized_laplacian",
            GsoKind::Generic => "generic",
        })
    }
}

impl FromStr for GsoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adjacency" => Ok(GsoKind::Adjacency),
            "laplacian" => Ok(GsoKind::Laplacian),
            "normalized_laplacian" => Ok(GsoKind::NormalizedLaplacian),
            "generic" => Ok(GsoKind::Generic),
            other => Err(Error::Parse(format!("unknown GSO kind '{other}'"))),
        }
    }
}

/// Sparse square matrix representation of a graph, stored in CSR form.
///
/// Exact zeros are never stored, so the stored pattern is the support of the
/// operator. An operator with no stored entries on more than one node must be
/// created through [`GraphShiftOperator::edgeless`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphShiftOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    kind: GsoKind,
    /// Result of the small-instance spectrum check for normalized Laplacians.
    spectrum_ok: Option<bool>,
}

impl GraphShiftOperator {
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        kind: GsoKind,
    ) -> Result<Self> {
        let gso = Self::build(n, triplets, kind)?;
        if n > 1 && gso.nnz() == 0 {
            return Err(Error::InvalidInput(
                "empty sparsity pattern; use GraphShiftOperator::edgeless for an edgeless graph"
                    .into(),
            ));
        }
        Ok(gso)
    }

    /// The zero operator on `n` nodes.
    pub fn edgeless(n: usize, kind: GsoKind) -> Self {
        Self {
            n,
            row_ptr: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            kind,
            spectrum_ok: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::build(n, (0..n).map(|i| (i, i, 1.0)), GsoKind::Generic)
            .expect("identity triplets are valid")
    }

    /// Like `from_triplets` but allows an empty pattern.
    pub(crate) fn build(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
        kind: GsoKind,
    ) -> Result<Self> {
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, w) in triplets {
            if r >= n || c >= n {
                return Err(Error::InvalidInput(format!(
                    "entry ({r}, {c}) outside a {n}-node operator"
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite weight at ({r}, {c})")));
            }
            if entries.insert((r, c), w).is_some() {
                return Err(Error::InvalidInput(format!("duplicate entry ({r}, {c})")));
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for ((r, c), w) in entries {
            if w == 0.0 {
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(w);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
            kind,
            spectrum_ok: None,
        })
    }

    pub fn from_dense(m: DMatrixView<'_, f64>, kind: GsoKind) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        let n = m.nrows();
        let trips = (0..n)
            .flat_map(|r| (0..n).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, m[(r, c)]))
            .filter(|t| t.2 != 0.0);
        Self::build(n, trips, kind)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> GsoKind {
        self.kind
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_edgeless(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn spectrum_checked(&self) -> Option<bool> {
        self.spectrum_ok
    }

    /// Stored entries as `(row, col, weight)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (r, self.cols[i], self.vals[i]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (self.cols[i], self.vals[i]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(i) => self.vals[span.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn has_nonzero_diagonal(&self) -> bool {
        (0..self.n).any(|i| self.get(i, i) != 0.0)
    }

    /// `y = S x`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[i] * x[self.cols[i]];
            }
            *yr = acc;
        }
    }

    /// `y = S^T x`.
    pub fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.n {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.cols[i]] += self.vals[i] * xr;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::dims(format!("signal of length {}", self.n), x.len()));
        }
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// `S X` for an `n x F` matrix, one sparse product per column.
    pub fn shift_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            self.apply_into(x.column(j).as_slice(), out.column_mut(j).as_mut_slice());
        }
        out
    }

    /// `S^T X` column by column.
    pub fn shift_columns_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            self.apply_transpose_into(x.column(j).as_slice(), out.column_mut(j).as_mut_slice());
        }
        out
    }

    /// `X S^T` for an `N x n` matrix: column `a` becomes `sum_b S[a,b] X[:, b]`.
    pub fn mix_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (a, b, w) in self.iter() {
            out.column_mut(a).axpy(w, &x.column(b), 1.0);
        }
        out
    }

    /// `X S` for an `N x n` matrix: column `b` becomes `sum_a S[a,b] X[:, a]`.
    pub fn mix_columns_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (a, b, w) in self.iter() {
            out.column_mut(b).axpy(w, &x.column(a), 1.0);
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (r, c, w) in self.iter() {
            m[(r, c)] = w;
        }
        m
    }

    pub fn transpose(&self) -> GraphShiftOperator {
        let mut t = Self::build(self.n, self.iter().map(|(r, c, w)| (c, r, w)), self.kind)
            .expect("transpose of a valid operator is valid");
        t.spectrum_ok = self.spectrum_ok;
        t
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.iter().all(|(r, c, w)| (self.get(c, r) - w).abs() <= tol)
    }

    pub fn with_kind(mut self, kind: GsoKind) -> Self {
        self.kind = kind;
        self
    }

    /// Same pattern, new weights in `iter()` order.
    pub fn with_values(&self, values: &[f64]) -> Result<GraphShiftOperator> {
        if values.len() != self.nnz() {
            return Err(Error::dims(format!("{} values", self.nnz()), values.len()));
        }
        Self::build(
            self.n,
            self.iter().zip(values).map(|((r, c, _), &w)| (r, c, w)),
            self.kind,
        )
    }

    /// Checks that a normalized Laplacian is symmetric with spectrum in
    /// `[0, 2]` using a dense eigensolver; the result is stored as a flag.
    /// Operators larger than `max_n` are left unchecked.
    pub fn validate_spectrum(&mut self, max_n: usize) -> Option<bool> {
        if self.kind != GsoKind::NormalizedLaplacian || self.n > max_n {
            return None;
        }
        let ok = self.is_symmetric(1e-12) && {
            let eig = self.to_dense().symmetric_eigenvalues();
            eig.iter().all(|&l| (-1e-10..=2.0 + 1e-10).contains(&l))
        };
        self.spectrum_ok = Some(ok);
        Some(ok)
    }

    pub fn write_edge_list<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "gso {} {}", self.n, self.kind)?;
        for (r, c, v) in self.iter() {
            writeln!(w, "{r} {c} {v}")?;
        }
        Ok(())
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("edge list is ASCII")
    }

    /// Parses the `gso <n> <kind>` edge-list format. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self> {
        let mut header: Option<(usize, GsoKind)> = None;
        let mut trips = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| Error::Parse(format!("edge list line {}: {what}", i + 1));
            match header {
                None => {
                    if toks.len() != 3 || toks[0] != "gso" {
                        return Err(bad("expected header `gso <n> <kind>`"));
                    }
                    let n = toks[1].parse().map_err(|_| bad("bad node count"))?;
                    header = Some((n, toks[2].parse()?));
                }
                Some(_) => {
                    if toks.len() != 3 {
                        return Err(bad("expected `row col weight`"));
                    }
                    let r: usize = toks[0].parse().map_err(|_| bad("bad row index"))?;
                    let c: usize = toks[1].parse().map_err(|_| bad("bad column index"))?;
                    let w: f64 = toks[2].parse().map_err(|_| bad("bad weight"))?;
                    trips.push((r, c, w));
                }
            }
        }
        let (n, kind) = header.ok_or_else(|| Error::Parse("missing `gso` header".into()))?;
        Self::build(n, trips, kind)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::read_edge_list(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_edge_list(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Coefficients `s_ij` of `S_prod = sum_ij s_ij (S_F^i kron S^j)`, `i, j in {0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductGraphSpec {
    pub s00: f64,
    pub s01: f64,
    pub s10: f64,
    pub s11: f64,
}

impl ProductGraphSpec {
    pub fn new(s00: f64, s01: f64, s10: f64, s11: f64) -> Result<Self> {
        let spec = Self { s00, s01, s10, s11 };
        spec.validate()?;
        Ok(spec)
    }

    pub const fn kronecker() -> Self {
        Self { s00: 0.0, s01: 0.0, s10: 0.0, s11: 1.0 }
    }

    pub const fn cartesian() -> Self {
        Self { s00: 0.0, s01: 1.0, s10: 1.0, s11: 0.0 }
    }

    pub const fn strong() -> Self {
        Self { s00: 0.0, s01: 1.0, s10: 1.0, s11: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.coefficients();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite product coefficient".into()));
        }
        if c.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidParameter(
                "product graph needs at least one nonzero coefficient".into(),
            ));
        }
        Ok(())
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.s00, self.s01, self.s10, self.s11]
    }

    /// Terms `(i, j, s_ij)` with nonzero coefficient.
    pub fn terms(&self) -> impl Iterator<Item = (u8, u8, f64)> {
        [(0, 0, self.s00), (0, 1, self.s01), (1, 0, self.s10), (1, 1, self.s11)]
            .into_iter()
            .filter(|t| t.2 != 0.0)
    }
}

impl FromStr for ProductGraphSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kronecker" => Ok(Self::kronecker()),
            "cartesian" => Ok(Self::cartesian()),
            "strong" => Ok(Self::strong()),
            other => Err(Error::Parse(format!(
                "unknown product graph '{other}' (expected kronecker, cartesian or strong)"
            ))),
        }
    }
}

/// Dense symmetric matrix of pairwise node distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    d: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != d.ncols() {
            return Err(Error::dims("square distance matrix", format!("{}x{}", d.nrows(), d.ncols())));
        }
        let n = d.nrows();
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = d[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidInput(format!("invalid distance at ({i}, {j})")));
                }
                if v != d[(j, i)] {
                    return Err(Error::InvalidInput(format!("asymmetric distance at ({i}, {j})")));
                }
            }
        }
        Ok(Self { d })
    }

    /// Great-circle distances in kilometers between `(latitude, longitude)`
    /// pairs given in degrees.
    pub fn haversine(coords: &[(f64, f64)]) -> Result<Self> {
        const EARTH_RADIUS_KM: f64 = 6371.0088;
        let n = coords.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let (lat1, lon1) = (coords[i].0.to_radians(), coords[i].1.to_radians());
                let (lat2, lon2) = (coords[j].0.to_radians(), coords[j].1.to_radians());
                let a = ((lat2 - lat1) / 2.0).sin().powi(2)
                    + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
                let dist = 2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin();
                d[(i, j)] = dist;
                d[(j, i)] = dist;
            }
        }
        Self::new(d)
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Mean distance over all selected neighbor pairs.
    Auto,
    Fixed(f64),
}

/// Symmetric k-nearest-neighbor graph with Gaussian kernel weights
/// `exp(-d^2 / sigma^2)`. A pair is connected if either endpoint selected the
/// other; distance ties go to the lower node index.
pub fn knn_gaussian_graph(
    d: &DistanceMatrix,
    k: usize,
    sigma: Bandwidth,
) -> Result<GraphShiftOperator> {
    let n = d.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "k must satisfy 0 < k < n (k={k}, n={n})"
        )));
    }
    let mut selected = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| d.get(i, a).total_cmp(&d.get(i, b)).then(a.cmp(&b)));
        selected.extend(others.into_iter().take(k).map(|j| (i, j)));
    }
    let sigma = match sigma {
        Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => s,
        Bandwidth::Fixed(s) => {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {s}")))
        }
        Bandwidth::Auto => {
            let mean = selected.iter().map(|&(i, j)| d.get(i, j)).sum::<f64>() / selected.len() as f64;
            if mean <= 0.0 {
                return Err(Error::InvalidInput(
                    "automatic bandwidth is zero: all neighbor distances vanish".into(),
                ));
            }
            mean
        }
    };
    let mut edges = BTreeMap::new();
    for (i, j) in selected {
        let w = (-(d.get(i, j) / sigma).powi(2)).exp();
        edges.insert((i, j), w);
        edges.insert((j, i), w);
    }
    GraphShiftOperator::build(n, edges.into_iter().map(|((i, j), w)| (i, j, w)), GsoKind::Adjacency)
}

/// Absolute Pearson correlations between features, pooling every node and
/// time sample. Constant features get zero correlation.
pub fn feature_correlations(panel: &SignalPanel) -> Result<DMatrix<f64>> {
    let f = panel.features();
    let n = panel.nodes();
    let count = (panel.len() * n) as f64;
    if panel.len() < 2 {
        return Err(Error::InsufficientSamples(
            "feature correlation needs at least 2 time samples".into(),
        ));
    }
    let mut mean = vec![0.0; f];
    for t in 0..panel.len() {
        let x = panel.x(t);
        for (fi, m) in mean.iter_mut().enumerate() {
            *m += x[fi * n..(fi + 1) * n].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut cov = DMatrix::<f64>::zeros(f, f);
    let mut centered = vec![0.0; f];
    for t in 0..panel.len() {
        let x = panel.x(t);
        for v in 0..n {
            for fi in 0..f {
                centered[fi] = x[fi * n + v] - mean[fi];
            }
            for a in 0..f {
                for b in a..f {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
    }
    let mut corr = DMatrix::zeros(f, f);
    for a in 0..f {
        if cov[(a, a)] <= 0.0 {
            log::warn!(
                "feature {} ('{}') has zero variance; its correlations are set to 0",
                a,
                panel.feature_names()[a]
            );
        }
    }
    for a in 0..f {
        for b in a..f {
            let denom = (cov[(a, a)] * cov[(b, b)]).sqrt();
            let r = if denom > 0.0 {
                (cov[(a, b)] / denom).abs().min(1.0)
            } else {
                0.0
            };
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    Ok(corr)
}

/// Connects every feature to its `m` most correlated features (by absolute
/// pooled Pearson correlation) with weight `|corr|`, symmetrized by union.
pub fn correlation_feature_graph(panel: &SignalPanel, m: usize) -> Result<GraphShiftOperator> {
    let f = panel.features();
    if m == 0 || m >= f {
        return Err(Error::InvalidParameter(format!(
            "m must satisfy 0 < m < F (m={m}, F={f})"
        )));
    }
    let corr = feature_correlations(panel)?;
    let mut edges = BTreeMap::new();
    for a in 0..f {
        let mut others: Vec<usize> = (0..f).filter(|&b| b != a).collect();
        others.sort_by(|&x, &y| corr[(a, y)].total_cmp(&corr[(a, x)]).then(x.cmp(&y)));
        for &b in others.iter().take(m) {
            edges.insert((a, b), corr[(a, b)]);
            edges.insert((b, a), corr[(a, b)]);
        }
    }
    GraphShiftOperator::build(f, edges.into_iter().map(|((a, b), w)| (a, b, w)), GsoKind::Adjacency)
}

/// `L = I - D^{-1/2} A D^{-1/2}`; isolated nodes get a zero row and column.
pub fn normalized_laplacian(a: &GraphShiftOperator) -> Result<GraphShiftOperator> {
    if matches!(a.kind(), GsoKind::Laplacian | GsoKind::NormalizedLaplacian) {
        return Err(Error::InvalidInput(format!(
            "normalized Laplacian expects an adjacency operator, got {}",
            a.kind()
        )));
    }
    if !a.is_symmetric(0.0) {
        return Err(Error::InvalidInput("adjacency matrix is not symmetric".into()));
    }
    if a.iter().any(|(_, _, w)| w < 0.0) {
        return Err(Error::InvalidInput("adjacency has negative weights".into()));
    }
    let n = a.n();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = a.row(i).map(|(_, w)| w).sum();
            if deg > 0.0 {
                deg.sqrt().recip()
            } else {
                0.0
            }
        })
        .collect();
    let mut entries = BTreeMap::new();
    for (i, &s) in inv_sqrt_deg.iter().enumerate() {
        if s > 0.0 {
            entries.insert((i, i), 1.0);
        }
    }
    for (i, j, w) in a.iter() {
        *entries.entry((i, j)).or_insert(0.0) -= inv_sqrt_deg[i] * w * inv_sqrt_deg[j];
    }
    GraphShiftOperator::build(
        n,
        entries.into_iter().map(|((i, j), w)| (i, j, w)),
        GsoKind::NormalizedLaplacian,
    )
}

/// Explicit sparse product-graph operator of size `NF x NF`. Row `f*N + v`
/// corresponds to node `v` of feature block `f`.
pub fn product_gso(
    sf: &GraphShiftOperator,
    s: &GraphShiftOperator,
    spec: &ProductGraphSpec,
) -> Result<GraphShiftOperator> {
    spec.validate()?;
    let (nf, n) = (sf.n(), s.n());
    let eye_f = GraphShiftOperator::identity(nf);
    let eye_n = GraphShiftOperator::identity(n);
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, j, coef) in spec.terms() {
        let left = if i == 0 { &eye_f } else { sf };
        let right = if j == 0 { &eye_n } else { s };
        for (fa, fb, wf) in left.iter() {
            for (va, vb, ws) in right.iter() {
                *acc.entry((fa * n + va, fb * n + vb)).or_insert(0.0) += coef * wf * ws;
            }
        }
    }
    GraphShiftOperator::build(
        nf * n,
        acc.into_iter().map(|((r, c), w)| (r, c, w)),
        GsoKind::Generic,
    )
}

/// `out += alpha * x`.
pub(crate) fn add_scaled(out: &mut DMatrix<f64>, alpha: f64, x: &DMatrix<f64>) {
    out.zip_apply(x, |o, v| *o += alpha * v);
}

/// Matrix-free product-graph shift. With the feature-block stacking,
/// `(A kron B) vec(X) = vec(B X A^T)`, so
/// `S_prod x = s00 X + s01 S X + s10 X S_F^T + s11 S X S_F^T`.
#[derive(Clone, Debug)]
pub struct ProductGraph {
    s: GraphShiftOperator,
    sf: GraphShiftOperator,
    spec: ProductGraphSpec,
}

impl ProductGraph {
    pub fn new(s: GraphShiftOperator, sf: GraphShiftOperator, spec: ProductGraphSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { s, sf, spec })
    }

    pub fn station(&self) -> &GraphShiftOperator {
        &self.s
    }

    pub fn feature(&self) -> &GraphShiftOperator {
        &self.sf
    }

    pub fn spec(&self) -> &ProductGraphSpec {
        &self.spec
    }

    /// `S_prod` applied to `X` in matrix form (`N x F`).
    pub fn shift(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ProductGraphSpec { s00, s01, s10, s11 } = self.spec;
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        if s00 != 0.0 {
            add_scaled(&mut out, s00, x);
        }
        let sx = (s01 != 0.0 || s11 != 0.0).then(|| self.s.shift_columns(x));
        if let Some(sx) = &sx {
            if s01 != 0.0 {
                add_scaled(&mut out, s01, sx);
            }
            if s11 != 0.0 {
                add_scaled(&mut out, s11, &self.sf.mix_columns(sx));
            }
        }
        if s10 != 0.0 {
            add_scaled(&mut out, s10, &self.sf.mix_columns(x));
        }
        out
    }

    /// `S_prod^T` applied to `X` in matrix form.
    pub fn shift_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ProductGraphSpec { s00, s01, s10, s11 } = self.spec;
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        if s00 != 0.0 {
            add_scaled(&mut out, s00, x);
        }
        let stx = (s01 != 0.0 || s11 != 0.0).then(|| self.s.shift_columns_transpose(x));
        if let Some(stx) = &stx {
            if s01 != 0.0 {
                add_scaled(&mut out, s01, stx);
            }
            if s11 != 0.0 {
                add_scaled(&mut out, s11, &self.sf.mix_columns_transpose(stx));
            }
        }
        if s10 != 0.0 {
            add_scaled(&mut out, s10, &self.sf.mix_columns_transpose(x));
        }
        out
    }

    pub fn to_gso(&self) -> Result<GraphShiftOperator> {
        product_gso(&self.sf, &self.s, &self.spec)
    }
}
