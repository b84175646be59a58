//! One-step-ahead predictors for the graph VAR model family.
//!
//! Coefficients are stored so that every prediction is a plain sum of
//! regressor terms, `X_hat_t = + sum_p sum_k (...) X_{t-p}`.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filters::shift_sequence;
use crate::graph::{add_scaled, GraphShiftOperator, ProductGraph, ProductGraphSpec};
use crate::panel::SignalPanel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "gvar", alias = "g_var")]
    GVar,
    #[serde(rename = "per_feature_gvar", alias = "per_feature_g_var")]
    PerFeatureGVar,
    #[serde(rename = "pgvar", alias = "pg_var")]
    PgVar,
    #[serde(rename = "pg_gvar", alias = "pg_g_var")]
    PgGVar,
    #[serde(rename = "mimo_gvar", alias = "mimo_g_var")]
    MimoGVar,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 5] = [
        ModelFamily::GVar,
        ModelFamily::PerFeatureGVar,
        ModelFamily::PgVar,
        ModelFamily::PgGVar,
        ModelFamily::MimoGVar,
    ];

    pub fn uses_product_graph(self) -> bool {
        matches!(self, ModelFamily::PgVar | ModelFamily::PgGVar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::GVar => "gvar",
            ModelFamily::PerFeatureGVar => "per_feature_gvar",
            ModelFamily::PgVar => "pgvar",
            ModelFamily::PgGVar => "pg_gvar",
            ModelFamily::MimoGVar => "mimo_gvar",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "gvar" | "g_var" => Ok(ModelFamily::GVar),
            "per_feature_gvar" | "per_feature_g_var" => Ok(ModelFamily::PerFeatureGVar),
            "pgvar" | "pg_var" => Ok(ModelFamily::PgVar),
            "pg_gvar" | "pg_g_var" | "pggvar" => Ok(ModelFamily::PgGVar),
            "mimo_gvar" | "mimo_g_var" | "mimo" => Ok(ModelFamily::MimoGVar),
            _ => Err(Error::Parse(format!("unknown model family '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Lag order.
    pub p: usize,
    /// Filter length; taps are indexed `0..k`.
    pub k: usize,
    pub product: ProductGraphSpec,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, p: usize, k: usize) -> Result<Self> {
        if p == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "lag order and filter length must be >= 1 (P={p}, K={k})"
            )));
        }
        Ok(Self {
            family,
            p,
            k,
            product: ProductGraphSpec::cartesian(),
        })
    }

    pub fn with_product(mut self, product: ProductGraphSpec) -> Self {
        self.product = product;
        self
    }
}

/// Number of free coefficients of a model on `f` features.
pub fn param_count(spec: &ModelSpec, f: usize) -> usize {
    let pk = spec.p * spec.k;
    match spec.family {
        ModelFamily::GVar | ModelFamily::PgVar => pk,
        ModelFamily::PerFeatureGVar => pk * f,
        ModelFamily::PgGVar => pk * (f + 1),
        ModelFamily::MimoGVar => pk * f * f,
    }
}

/// Dense row-major array with an explicit dimension header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; len],
        }
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    fn check(&self, name: &str, dims: &[usize]) -> Result<()> {
        if self.dims != dims || self.data.len() != dims.iter().product::<usize>() {
            return Err(Error::dims(format!("{name} with dims {dims:?}"), format!("{:?}", self.dims)));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value in {name}")));
        }
        Ok(())
    }
}

/// Coefficient containers; only the ones the family uses are populated.
///
/// * `scalar_taps` `[P, K]`: `h_kp` of G-VAR, PG-VAR and the product branch of PG-G-VAR.
/// * `feature_taps` `[P, K, F]`: `h_kp^(f)` of the per-feature G-VAR and the per-feature branch of PG-G-VAR.
/// * `matrix_taps` `[P, K, F, F]`: `H_kp` in right-multiplication form, `X_hat = sum S^k X H_kp`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CoefficientSet {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scalar_taps: Option<Tensor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_taps: Option<Tensor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matrix_taps: Option<Tensor>,
}

impl CoefficientSet {
    pub fn zeros(spec: &ModelSpec, f: usize) -> Self {
        let (p, k) = (spec.p, spec.k);
        let mut c = CoefficientSet::default();
        match spec.family {
            ModelFamily::GVar | ModelFamily::PgVar => c.scalar_taps = Some(Tensor::zeros(vec![p, k])),
            ModelFamily::PerFeatureGVar => c.feature_taps = Some(Tensor::zeros(vec![p, k, f])),
            ModelFamily::PgGVar => {
                c.scalar_taps = Some(Tensor::zeros(vec![p, k]));
                c.feature_taps = Some(Tensor::zeros(vec![p, k, f]));
            }
            ModelFamily::MimoGVar => c.matrix_taps = Some(Tensor::zeros(vec![p, k, f, f])),
        }
        c
    }

    pub fn validate(&self, spec: &ModelSpec, f: usize) -> Result<()> {
        let (p, k) = (spec.p, spec.k);
        let need = |t: &Option<Tensor>, name: &str, dims: &[usize]| -> Result<()> {
            t.as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("{} model needs {name}", spec.family)))?
                .check(name, dims)
        };
        let forbid = |t: &Option<Tensor>, name: &str| -> Result<()> {
            match t {
                Some(_) => Err(Error::InvalidInput(format!("{} model does not use {name}", spec.family))),
                None => Ok(()),
            }
        };
        match spec.family {
            ModelFamily::GVar | ModelFamily::PgVar => {
                need(&self.scalar_taps, "scalar_taps", &[p, k])?;
                forbid(&self.feature_taps, "feature_taps")?;
                forbid(&self.matrix_taps, "matrix_taps")
            }
            ModelFamily::PerFeatureGVar => {
                need(&self.feature_taps, "feature_taps", &[p, k, f])?;
                forbid(&self.scalar_taps, "scalar_taps")?;
                forbid(&self.matrix_taps, "matrix_taps")
            }
            ModelFamily::PgGVar => {
                need(&self.scalar_taps, "scalar_taps", &[p, k])?;
                need(&self.feature_taps, "feature_taps", &[p, k, f])?;
                forbid(&self.matrix_taps, "matrix_taps")
            }
            ModelFamily::MimoGVar => {
                need(&self.matrix_taps, "matrix_taps", &[p, k, f, f])?;
                forbid(&self.scalar_taps, "scalar_taps")?;
                forbid(&self.feature_taps, "feature_taps")
            }
        }
    }

    /// Coefficients from the flat regression vector. Column order is lag-major,
    /// then tap, then feature: for PG-G-VAR each `(p, k)` block holds the `F`
    /// per-feature taps followed by the product tap; for MIMO G-VAR each block
    /// holds `H_kp` row-major (input feature, then output feature).
    pub fn from_vector(spec: &ModelSpec, f: usize, v: &[f64]) -> Result<Self> {
        let q = param_count(spec, f);
        if v.len() != q {
            return Err(Error::dims(format!("{q} coefficients"), v.len()));
        }
        let mut c = Self::zeros(spec, f);
        match spec.family {
            ModelFamily::GVar | ModelFamily::PgVar => {
                c.scalar_taps.as_mut().unwrap().data.copy_from_slice(v)
            }
            ModelFamily::PerFeatureGVar => c.feature_taps.as_mut().unwrap().data.copy_from_slice(v),
            ModelFamily::MimoGVar => c.matrix_taps.as_mut().unwrap().data.copy_from_slice(v),
            ModelFamily::PgGVar => {
                let scalar = &mut c.scalar_taps.as_mut().unwrap().data;
                let feat = &mut c.feature_taps.as_mut().unwrap().data;
                for (blk, chunk) in v.chunks(f + 1).enumerate() {
                    feat[blk * f..(blk + 1) * f].copy_from_slice(&chunk[..f]);
                    scalar[blk] = chunk[f];
                }
            }
        }
        Ok(c)
    }

    pub fn to_vector(&self, spec: &ModelSpec, f: usize) -> Vec<f64> {
        match spec.family {
            ModelFamily::GVar | ModelFamily::PgVar => self.scalar_taps.as_ref().unwrap().data.clone(),
            ModelFamily::PerFeatureGVar => self.feature_taps.as_ref().unwrap().data.clone(),
            ModelFamily::MimoGVar => self.matrix_taps.as_ref().unwrap().data.clone(),
            ModelFamily::PgGVar => {
                let scalar = &self.scalar_taps.as_ref().unwrap().data;
                let feat = &self.feature_taps.as_ref().unwrap().data;
                let mut out = Vec::with_capacity(scalar.len() * (f + 1));
                for (blk, &s) in scalar.iter().enumerate() {
                    out.extend_from_slice(&feat[blk * f..(blk + 1) * f]);
                    out.push(s);
                }
                out
            }
        }
    }

    /// Coefficient vector with redundant parameters merged. In PG-G-VAR the
    /// zero-order product tap multiplies the same regressor as the zero-order
    /// per-feature taps, so only their sums are determined by data; the
    /// product tap is folded into the per-feature taps and set to zero. Other
    /// families are returned unchanged.
    pub fn identifiable_vector(&self, spec: &ModelSpec, f: usize) -> Vec<f64> {
        let mut v = self.to_vector(spec, f);
        if spec.family == ModelFamily::PgGVar {
            for lag in 0..spec.p {
                let blk = lag * spec.k * (f + 1);
                let shared = v[blk + f];
                v[blk..blk + f].iter_mut().for_each(|x| *x += shared);
                v[blk + f] = 0.0;
            }
        }
        v
    }

    /// `h_kp` with a zero-based lag index `lag = p - 1`.
    pub fn scalar(&self, lag: usize, k: usize) -> f64 {
        self.scalar_taps.as_ref().map_or(0.0, |t| t.get(&[lag, k]))
    }

    pub fn feature(&self, lag: usize, k: usize, f: usize) -> f64 {
        self.feature_taps.as_ref().map_or(0.0, |t| t.get(&[lag, k, f]))
    }

    /// `H_kp` as an `F x F` matrix.
    pub fn matrix(&self, lag: usize, k: usize) -> Option<DMatrix<f64>> {
        let t = self.matrix_taps.as_ref()?;
        let f = t.dims[2];
        let off = (lag * t.dims[1] + k) * f * f;
        Some(DMatrix::from_row_slice(f, f, &t.data[off..off + f * f]))
    }
}

/// A model with coefficients and the graphs it runs on. Immutable once built.
#[derive(Clone, Debug)]
pub struct FittedModel {
    spec: ModelSpec,
    coeffs: CoefficientSet,
    s: GraphShiftOperator,
    sf: Option<GraphShiftOperator>,
    product: Option<ProductGraph>,
    features: usize,
}

impl FittedModel {
    pub fn new(
        spec: ModelSpec,
        coeffs: CoefficientSet,
        s: GraphShiftOperator,
        sf: Option<GraphShiftOperator>,
        features: usize,
    ) -> Result<Self> {
        coeffs.validate(&spec, features)?;
        if spec.p == 0 || spec.k == 0 {
            return Err(Error::InvalidParameter("P and K must be >= 1".into()));
        }
        if let Some(sf) = &sf {
            if sf.n() != features {
                return Err(Error::dims(format!("{features}-node feature graph"), sf.n()));
            }
        }
        let product = if spec.family.uses_product_graph() {
            let sf = sf.clone().ok_or_else(|| Error::MissingFeatureGraph {
                family: spec.family.to_string(),
            })?;
            Some(ProductGraph::new(s.clone(), sf, spec.product)?)
        } else {
            None
        };
        Ok(Self {
            spec,
            coeffs,
            s,
            sf,
            product,
            features,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coeffs
    }

    pub fn station_graph(&self) -> &GraphShiftOperator {
        &self.s
    }

    pub fn feature_graph(&self) -> Option<&GraphShiftOperator> {
        self.sf.as_ref()
    }

    pub fn product_graph(&self) -> Option<&ProductGraph> {
        self.product.as_ref()
    }

    pub fn nodes(&self) -> usize {
        self.s.n()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.spec, self.features)
    }

    /// Predicts `X_t` from `history = [X_{t-1}, X_{t-2}, ...]`; only the first
    /// `P` entries are read.
    pub fn predict(&self, history: &[DMatrixView<'_, f64>]) -> Result<DMatrix<f64>> {
        let (n, f) = (self.nodes(), self.features);
        if history.len() < self.spec.p {
            return Err(Error::InsufficientHistory {
                needed: self.spec.p,
                available: history.len(),
            });
        }
        for h in &history[..self.spec.p] {
            if h.shape() != (n, f) {
                return Err(Error::dims(format!("{n}x{f} history slice"), format!("{}x{}", h.nrows(), h.ncols())));
            }
        }
        let mut out = DMatrix::zeros(n, f);
        for (lag, xp) in history[..self.spec.p].iter().enumerate() {
            let xp = xp.clone_owned();
            self.accumulate_lag(lag, &xp, &mut out);
        }
        Ok(out)
    }

    /// Prediction of slice `t` of `panel` from its `P` preceding slices.
    pub fn predict_at(&self, panel: &SignalPanel, t: usize) -> Result<DMatrix<f64>> {
        if t < self.spec.p {
            return Err(Error::InsufficientHistory {
                needed: self.spec.p,
                available: t,
            });
        }
        let history: Vec<_> = (1..=self.spec.p).map(|lag| panel.matrix(t - lag)).collect();
        self.predict(&history)
    }

    fn accumulate_lag(&self, lag: usize, xp: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let k = self.spec.k;
        let c = &self.coeffs;
        match self.spec.family {
            ModelFamily::GVar => {
                for (ki, z) in shift_sequence(&self.s, xp, k).iter().enumerate() {
                    add_scaled(out, c.scalar(lag, ki), z);
                }
            }
            ModelFamily::PerFeatureGVar => self.accumulate_per_feature(lag, xp, out),
            ModelFamily::PgVar => self.accumulate_product(lag, xp, out),
            ModelFamily::PgGVar => {
                self.accumulate_per_feature(lag, xp, out);
                self.accumulate_product(lag, xp, out);
            }
            ModelFamily::MimoGVar => {
                for (ki, z) in shift_sequence(&self.s, xp, k).iter().enumerate() {
                    let h = c.matrix(lag, ki).expect("validated");
                    out.gemm(1.0, z, &h, 1.0);
                }
            }
        }
    }

    fn accumulate_per_feature(&self, lag: usize, xp: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        for (ki, z) in shift_sequence(&self.s, xp, self.spec.k).iter().enumerate() {
            for fi in 0..self.features {
                let h = self.coeffs.feature(lag, ki, fi);
                if h != 0.0 {
                    out.column_mut(fi).axpy(h, &z.column(fi), 1.0);
                }
            }
        }
    }

    fn accumulate_product(&self, lag: usize, xp: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let pg = self.product.as_ref().expect("product family has a product graph");
        let mut w = xp.clone();
        for ki in 0..self.spec.k {
            if ki > 0 {
                w = pg.shift(&w);
            }
            add_scaled(out, self.coeffs.scalar(lag, ki), &w);
        }
    }

    /// Writes the model as JSON next to edge-list copies of its graphs. Graph
    /// paths are stored relative to the JSON file together with the SHA-256
    /// of their contents.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        let write_graph = |g: &GraphShiftOperator, suffix: &str| -> Result<GraphRef> {
            let name = format!("{stem}.{suffix}.gso");
            let text = g.to_edge_list_string();
            std::fs::write(dir.join(&name), &text)?;
            Ok(GraphRef {
                path: name,
                sha256: sha256_hex(text.as_bytes()),
            })
        };
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            sign_convention: SIGN_CONVENTION.to_string(),
            spec: self.spec,
            nodes: self.nodes(),
            features: self.features,
            coefficients: self.coeffs.clone(),
            station_graph: write_graph(&self.s, "station")?,
            feature_graph: self.sf.as_ref().map(|g| write_graph(g, "feature")).transpose()?,
        };
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, &doc)?;
        writeln!(file)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let doc: ModelDocument = serde_json::from_str(&text)?;
        if doc.sign_convention != SIGN_CONVENTION {
            return Err(Error::InvalidInput(format!(
                "unsupported sign convention '{}'",
                doc.sign_convention
            )));
        }
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let s = doc.station_graph.load(dir)?;
        let sf = doc.feature_graph.as_ref().map(|g| g.load(dir)).transpose()?;
        if s.n() != doc.nodes {
            return Err(Error::dims(format!("{}-node station graph", doc.nodes), s.n()));
        }
        FittedModel::new(doc.spec, doc.coefficients, s, sf, doc.features)
    }
}

pub const MODEL_FORMAT: &str = "graphvar-model/1";
/// Predictions are `+sum` of the stored terms.
pub const SIGN_CONVENTION: &str = "plus";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphRef {
    pub path: String,
    pub sha256: String,
}

impl GraphRef {
    fn load(&self, dir: &Path) -> Result<GraphShiftOperator> {
        let p = PathBuf::from(&self.path);
        let p = if p.is_absolute() { p } else { dir.join(p) };
        let bytes = std::fs::read(&p).map_err(|_| Error::MissingFile(p.clone()))?;
        let got = sha256_hex(&bytes);
        if got != self.sha256 {
            return Err(Error::InvalidInput(format!(
                "graph file {} has hash {got}, expected {}",
                p.display(),
                self.sha256
            )));
        }
        GraphShiftOperator::read_edge_list(bytes.as_slice())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub sign_convention: String,
    pub spec: ModelSpec,
    pub nodes: usize,
    pub features: usize,
    pub coefficients: CoefficientSet,
    pub station_graph: GraphRef,
    pub feature_graph: Option<GraphRef>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn expect_family(model: &FittedModel, family: ModelFamily) -> Result<()> {
    if model.spec.family != family {
        return Err(Error::FamilyMismatch {
            expected: family.to_string(),
            got: model.spec.family.to_string(),
        });
    }
    Ok(())
}

pub fn predict_gvar(model: &FittedModel, history: &[DMatrixView<'_, f64>]) -> Result<DMatrix<f64>> {
    expect_family(model, ModelFamily::GVar)?;
    model.predict(history)
}

pub fn predict_per_feature_gvar(model: &FittedModel, history: &[DMatrixView<'_, f64>]) -> Result<DMatrix<f64>> {
    expect_family(model, ModelFamily::PerFeatureGVar)?;
    model.predict(history)
}

pub fn predict_pgvar(model: &FittedModel, history: &[DMatrixView<'_, f64>]) -> Result<DMatrix<f64>> {
    expect_family(model, ModelFamily::PgVar)?;
    model.predict(history)
}

pub fn predict_pg_g_var(model: &FittedModel, history: &[DMatrixView<'_, f64>]) -> Result<DMatrix<f64>> {
    expect_family(model, ModelFamily::PgGVar)?;
    model.predict(history)
}

pub fn predict_mimo_gvar(model: &FittedModel, history: &[DMatrixView<'_, f64>]) -> Result<DMatrix<f64>> {
    expect_family(model, ModelFamily::MimoGVar)?;
    model.predict(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GsoKind;

    fn path3() -> GraphShiftOperator {
        GraphShiftOperator::from_triplets(
            3,
            [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 0.5), (2, 1, 0.5)],
            GsoKind::Adjacency,
        )
        .unwrap()
    }

    #[test]
    fn param_counts() {
        let c = |fam, p, k, f| param_count(&ModelSpec::new(fam, p, k).unwrap(), f);
        assert_eq!(c(ModelFamily::GVar, 3, 4, 7), 12);
        assert_eq!(c(ModelFamily::PgGVar, 2, 2, 10), 44);
        assert_eq!(c(ModelFamily::MimoGVar, 1, 1, 1), 1);
        assert_eq!(c(ModelFamily::PerFeatureGVar, 2, 3, 4), 24);
    }

    #[test]
    fn zero_taps_predict_zero() {
        let spec = ModelSpec::new(ModelFamily::GVar, 2, 3).unwrap();
        let m = FittedModel::new(spec, CoefficientSet::zeros(&spec, 2), path3(), None, 2).unwrap();
        let x = DMatrix::from_element(3, 2, 1.5);
        let y = m.predict(&[x.as_view(), x.as_view()]).unwrap();
        assert_eq!(y, DMatrix::zeros(3, 2));
    }

    #[test]
    fn persistence() {
        let spec = ModelSpec::new(ModelFamily::GVar, 1, 1).unwrap();
        let mut c = CoefficientSet::zeros(&spec, 2);
        c.scalar_taps.as_mut().unwrap().set(&[0, 0], 1.0);
        let m = FittedModel::new(spec, c, path3(), None, 2).unwrap();
        let x = DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(predict_gvar(&m, &[x.as_view()]).unwrap(), x);
        assert!(matches!(predict_mimo_gvar(&m, &[x.as_view()]), Err(Error::FamilyMismatch { .. })));
    }

    #[test]
    fn insufficient_history() {
        let spec = ModelSpec::new(ModelFamily::MimoGVar, 3, 1).unwrap();
        let m = FittedModel::new(spec, CoefficientSet::zeros(&spec, 2), path3(), None, 2).unwrap();
        let x = DMatrix::zeros(3, 2);
        assert!(matches!(
            m.predict(&[x.as_view(), x.as_view()]),
            Err(Error::InsufficientHistory { needed: 3, available: 2 })
        ));
    }

    #[test]
    fn only_feature_zero_active() {
        let spec = ModelSpec::new(ModelFamily::PerFeatureGVar, 1, 2).unwrap();
        let mut c = CoefficientSet::zeros(&spec, 3);
        let t = c.feature_taps.as_mut().unwrap();
        t.set(&[0, 0, 0], 0.7);
        t.set(&[0, 1, 0], -0.2);
        let m = FittedModel::new(spec, c, path3(), None, 3).unwrap();
        let x = DMatrix::from_fn(3, 3, |i, j| 1.0 + i as f64 - j as f64);
        let y = m.predict(&[x.as_view()]).unwrap();
        assert!(y.column(0).iter().any(|v| *v != 0.0));
        assert!(y.column(1).iter().chain(y.column(2).iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn product_family_needs_feature_graph() {
        let spec = ModelSpec::new(ModelFamily::PgVar, 1, 1).unwrap();
        let err = FittedModel::new(spec, CoefficientSet::zeros(&spec, 2), path3(), None, 2).unwrap_err();
        assert!(matches!(err, Error::MissingFeatureGraph { .. }));
    }

    #[test]
    fn coefficient_vector_layout() {
        let spec = ModelSpec::new(ModelFamily::PgGVar, 2, 2).unwrap();
        let v: Vec<f64> = (0..param_count(&spec, 3)).map(|i| i as f64).collect();
        let c = CoefficientSet::from_vector(&spec, 3, &v).unwrap();
        // block (p=1, k=0) is the third block of F+1 = 4 entries
        assert_eq!(c.feature(1, 0, 2), 10.0);
        assert_eq!(c.scalar(1, 0), 11.0);
        assert_eq!(c.to_vector(&spec, 3), v);

        let spec = ModelSpec::new(ModelFamily::MimoGVar, 1, 2).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let c = CoefficientSet::from_vector(&spec, 2, &v).unwrap();
        assert_eq!(c.matrix(0, 1).unwrap(), DMatrix::from_row_slice(2, 2, &[4.0, 5.0, 6.0, 7.0]));
    }

    #[test]
    fn family_names_round_trip() {
        for fam in ModelFamily::ALL {
            assert_eq!(fam.as_str().parse::<ModelFamily>().unwrap(), fam);
        }
        assert_eq!("PG-G-VAR".parse::<ModelFamily>().unwrap(), ModelFamily::PgGVar);
        assert!("arima".parse::<ModelFamily>().is_err());
    }

    #[test]
    fn json_round_trip_with_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec::new(ModelFamily::PgGVar, 1, 2).unwrap();
        let v: Vec<f64> = (0..param_count(&spec, 2)).map(|i| 0.1 * i as f64 - 0.2).collect();
        let sf = GraphShiftOperator::from_triplets(2, [(0, 1, 0.4), (1, 0, 0.4), (0, 0, 1.0)], GsoKind::Generic).unwrap();
        let m = FittedModel::new(spec, CoefficientSet::from_vector(&spec, 2, &v).unwrap(), path3(), Some(sf), 2).unwrap();
        let path = dir.path().join("model.json");
        m.save_json(&path).unwrap();
        let back = FittedModel::load_json(&path).unwrap();
        assert_eq!(back.coefficients(), m.coefficients());
        assert_eq!(back.feature_graph(), m.feature_graph());

        // tampering with a graph file is detected
        std::fs::write(dir.path().join("model.station.gso"), "gso 3 adjacency\n0 1 2\n1 0 2\n").unwrap();
        assert!(FittedModel::load_json(&path).is_err());
    }
}
