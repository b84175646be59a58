//! Experiment configuration: one TOML file per experiment. Command-line flags
//! only override keys of this file.

use std::path::{Path, PathBuf};

use graphvar::estimation::JointFitConfig;
use graphvar::evaluation::full_grid;
use graphvar::{EstimationMode, EvaluationConfig, ModelFamily, ProductGraphSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub product: ProductSetting,
    pub data: DataConfig,
    #[serde(default)]
    pub graphs: GraphConfig,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn default_seed() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Either a named preset (`"cartesian"`, `"kronecker"`, `"strong"`) or the
/// four product coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProductSetting {
    Preset(String),
    Custom(ProductGraphSpec),
}

impl Default for ProductSetting {
    fn default() -> Self {
        ProductSetting::Preset("cartesian".into())
    }
}

impl ProductSetting {
    pub fn resolve(&self) -> Result<ProductGraphSpec, CliError> {
        let spec = match self {
            ProductSetting::Preset(name) => name.parse()?,
            ProductSetting::Custom(spec) => *spec,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// Directory of per-station CSV files in the UCI layout.
    AirQuality {
        dir: PathBuf,
        /// Station table; the bundled Beijing table when absent.
        #[serde(default)]
        stations: Option<PathBuf>,
        /// First hour, `YYYY-MM-DD HH[:MM]`.
        #[serde(default)]
        start: Option<String>,
        /// Exclusive end hour.
        #[serde(default)]
        end: Option<String>,
    },
    /// Panel CSV written by `synth` or by hand, with explicit graphs.
    Csv {
        path: PathBuf,
        station_graph: PathBuf,
        #[serde(default)]
        feature_graph: Option<PathBuf>,
    },
    Synthetic(SyntheticConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub family: ModelFamily,
    pub p: usize,
    pub k: usize,
    pub nodes: usize,
    pub features: usize,
    pub t_len: usize,
    pub noise_std: f64,
    /// Spectral radius of the generating recursion.
    pub target_radius: f64,
    pub burn_in: usize,
    /// Copied verbatim instead of generating random geometric graphs.
    pub station_graph: Option<PathBuf>,
    pub feature_graph: Option<PathBuf>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::MimoGVar,
            p: 2,
            k: 2,
            nodes: 8,
            features: 3,
            t_len: 2000,
            noise_std: 0.1,
            target_radius: 0.9,
            burn_in: 200,
            station_graph: None,
            feature_graph: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub station_neighbors: usize,
    /// Gaussian kernel width in kilometres; mean neighbor distance when absent.
    pub bandwidth: Option<f64>,
    pub feature_neighbors: usize,
    /// Restrict the correlation estimate to the first this many hours.
    pub feature_graph_hours: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            station_neighbors: 4,
            bandwidth: None,
            feature_neighbors: 3,
            feature_graph_hours: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub family: ModelFamily,
    pub p: usize,
    pub k: usize,
    /// First target index; clamped to at least `p`.
    pub start: usize,
    /// Number of samples from `start`; the rest of the panel when absent.
    pub len: Option<usize>,
    pub mode: EstimationMode,
    pub normalize: bool,
    pub joint: JointFitConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            family: ModelFamily::GVar,
            p: 2,
            k: 2,
            start: 0,
            len: None,
            mode: EstimationMode::Fixed,
            normalize: true,
            joint: JointFitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub families: Vec<ModelFamily>,
    pub p_max: usize,
    pub k_max: usize,
    pub in_sample_min: usize,
    pub in_sample_max: usize,
    pub in_sample_step: usize,
    /// Explicit in-sample lengths; replaces the min/max/step sweep.
    pub in_sample_lens: Option<Vec<usize>>,
    pub out_sample_len: usize,
    pub n_iterations: usize,
    /// Window shift; the out-of-sample length when absent.
    pub stride: Option<usize>,
    pub train_fraction: f64,
    pub mode: EstimationMode,
    pub normalize: bool,
    pub raw_scale_rnmse: bool,
    pub joint: JointFitConfig,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            families: ModelFamily::ALL.to_vec(),
            p_max: 5,
            k_max: 5,
            in_sample_min: 200,
            in_sample_max: 2000,
            in_sample_step: 200,
            in_sample_lens: None,
            out_sample_len: 168,
            n_iterations: 20,
            stride: None,
            train_fraction: 0.7,
            mode: EstimationMode::Fixed,
            normalize: true,
            raw_scale_rnmse: false,
            joint: JointFitConfig::default(),
        }
    }
}

impl EvaluationSection {
    pub fn in_sample_lens(&self) -> Result<Vec<usize>, CliError> {
        if let Some(lens) = &self.in_sample_lens {
            return Ok(lens.clone());
        }
        if self.in_sample_step == 0 || self.in_sample_min == 0 || self.in_sample_min > self.in_sample_max {
            return Err(CliError::Usage(format!(
                "invalid in-sample sweep {}..={} step {}",
                self.in_sample_min, self.in_sample_max, self.in_sample_step
            )));
        }
        Ok((self.in_sample_min..=self.in_sample_max).step_by(self.in_sample_step).collect())
    }

    pub fn to_config(&self, product: ProductGraphSpec) -> Result<EvaluationConfig, CliError> {
        if self.families.is_empty() {
            return Err(CliError::Usage("evaluation.families must name at least one model family".into()));
        }
        if self.p_max == 0 || self.k_max == 0 {
            return Err(CliError::Usage("evaluation.p_max and evaluation.k_max must be positive".into()));
        }
        let cfg = EvaluationConfig {
            families: self.families.clone(),
            product,
            grid: full_grid(self.p_max, self.k_max),
            in_sample_lens: self.in_sample_lens()?,
            out_sample_len: self.out_sample_len,
            n_iterations: self.n_iterations,
            stride: self.stride.unwrap_or(self.out_sample_len),
            train_fraction: self.train_fraction,
            mode: self.mode,
            joint: self.joint.clone(),
            normalize: self.normalize,
            raw_scale_rnmse: self.raw_scale_rnmse,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingPath(path.to_path_buf()),
            _ => CliError::Io(e),
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        match &mut self.data {
            DataConfig::AirQuality { dir, stations, .. } => {
                fix(dir);
                stations.iter_mut().for_each(fix);
            }
            DataConfig::Csv {
                path,
                station_graph,
                feature_graph,
            } => {
                fix(path);
                fix(station_graph);
                feature_graph.iter_mut().for_each(fix);
            }
            DataConfig::Synthetic(s) => {
                s.station_graph.iter_mut().for_each(fix);
                s.feature_graph.iter_mut().for_each(fix);
            }
        }
    }

    /// SHA-256 of the canonical JSON form, after overrides.
    pub fn hash(&self) -> String {
        graphvar::models::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
