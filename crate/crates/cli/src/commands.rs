use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use graphvar::checks::{run_selftest, CheckResult, SelftestConfig};
use graphvar::data::{
    generate_synthetic, load_air_quality, random_stable_coefficients, StationConfig, SyntheticSpec, TimeRange,
};
use graphvar::estimation::{fit_least_squares, joint_fit};
use graphvar::evaluation::Normalizer;
use graphvar::{
    correlation_feature_graph, evaluate, knn_gaussian_graph, normalized_laplacian, Bandwidth, DistanceMatrix,
    EstimationMode, FittedModel, GraphShiftOperator, ModelSpec, SignalPanel,
};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DataConfig, ExperimentConfig, GraphConfig, SyntheticConfig};
use crate::error::CliError;

pub const STATION_GRAPH_FILE: &str = "station.gso";
pub const FEATURE_GRAPH_FILE: &str = "feature.gso";

/// Everything a command needs: the panel and its two graphs.
pub struct Inputs {
    pub panel: SignalPanel,
    pub station: GraphShiftOperator,
    pub feature: Option<GraphShiftOperator>,
    /// Generating model of a synthetic panel.
    pub truth: Option<FittedModel>,
    node_names: Vec<String>,
    /// Graph files supplied by the config; copied verbatim into outputs.
    station_src: Option<PathBuf>,
    feature_src: Option<PathBuf>,
}

fn require_path(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath(p.to_path_buf()))
    }
}

/// Loads or generates the panel and builds both graphs as normalized
/// Laplacians. Deterministic given the config.
pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs, CliError> {
    match &cfg.data {
        DataConfig::AirQuality {
            dir,
            stations,
            start,
            end,
        } => {
            require_path(dir)?;
            let stations = match stations {
                Some(p) => {
                    require_path(p)?;
                    StationConfig::load(p)?
                }
                None => StationConfig::beijing(),
            };
            let default = TimeRange::study_period();
            let range = TimeRange::new(
                start.as_deref().map(TimeRange::parse_instant).transpose()?.unwrap_or(default.start),
                end.as_deref().map(TimeRange::parse_instant).transpose()?.unwrap_or(default.end),
            )?;
            info!("loading {} stations from {} ({} hours)", stations.len(), dir.display(), range.hours());
            let panel = load_air_quality(dir, &stations, range)?;
            let station = station_graph(&stations.distance_matrix()?, &cfg.graphs)?;
            let feature = Some(feature_graph(&panel, &cfg.graphs)?);
            Ok(Inputs {
                node_names: stations.stations.iter().map(|s| s.name.clone()).collect(),
                panel,
                station,
                feature,
                truth: None,
                station_src: None,
                feature_src: None,
            })
        }
        DataConfig::Csv {
            path,
            station_graph,
            feature_graph,
        } => {
            require_path(path)?;
            let panel = SignalPanel::read_csv(BufReader::new(fs::File::open(path)?))?;
            let station = GraphShiftOperator::load(station_graph)?;
            let feature = feature_graph.as_deref().map(GraphShiftOperator::load).transpose()?;
            Ok(Inputs {
                node_names: (0..panel.nodes()).map(|i| format!("node{i}")).collect(),
                panel,
                station,
                feature,
                truth: None,
                station_src: Some(station_graph.clone()),
                feature_src: feature_graph.clone(),
            })
        }
        DataConfig::Synthetic(syn) => synthetic_inputs(cfg, syn),
    }
}

fn station_graph(d: &DistanceMatrix, g: &GraphConfig) -> Result<GraphShiftOperator, CliError> {
    let bw = g.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    Ok(normalized_laplacian(&knn_gaussian_graph(d, g.station_neighbors, bw)?)?)
}

fn feature_graph(panel: &SignalPanel, g: &GraphConfig) -> Result<GraphShiftOperator, CliError> {
    let sample = match g.feature_graph_hours {
        Some(h) => panel.slice(0..h.min(panel.len()))?,
        None => panel.clone(),
    };
    Ok(normalized_laplacian(&correlation_feature_graph(&sample, g.feature_neighbors)?)?)
}

/// Geometric graph over `n` random sites in a small lat/lon box.
fn random_geometric_graph(n: usize, k: usize, rng: &mut impl Rng) -> Result<GraphShiftOperator, CliError> {
    if n < 2 {
        return Err(CliError::Usage(format!("random graphs need at least 2 nodes, got {n}")));
    }
    let sites: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(39.5..40.5), rng.random_range(116.0..117.0)))
        .collect();
    let g = GraphConfig {
        station_neighbors: k.clamp(1, n - 1),
        ..GraphConfig::default()
    };
    station_graph(&DistanceMatrix::haversine(&sites)?, &g)
}

fn synthetic_inputs(cfg: &ExperimentConfig, syn: &SyntheticConfig) -> Result<Inputs, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let load = |p: &PathBuf| -> Result<GraphShiftOperator, CliError> {
        require_path(p)?;
        Ok(GraphShiftOperator::load(p)?)
    };
    let station = match &syn.station_graph {
        Some(p) => load(p)?,
        None => random_geometric_graph(syn.nodes, cfg.graphs.station_neighbors, &mut rng)?,
    };
    let feature = match &syn.feature_graph {
        Some(p) => Some(load(p)?),
        None if syn.features >= 2 => Some(random_geometric_graph(
            syn.features,
            cfg.graphs.feature_neighbors,
            &mut rng,
        )?),
        None => None,
    };
    let spec = ModelSpec::new(syn.family, syn.p, syn.k)?.with_product(cfg.product.resolve()?);
    let coeffs = random_stable_coefficients(&spec, &station, feature.as_ref(), syn.features, syn.target_radius, &mut rng)?;
    let gen = SyntheticSpec::new(spec, coeffs.clone(), syn.t_len, cfg.seed)
        .with_noise(syn.noise_std)
        .with_burn_in(syn.burn_in);
    let panel = generate_synthetic(&gen, &station, feature.as_ref(), syn.features)?;
    let truth = FittedModel::new(spec, coeffs, station.clone(), feature.clone(), syn.features)?;
    Ok(Inputs {
        node_names: (0..panel.nodes()).map(|i| format!("node{i}")).collect(),
        panel,
        station,
        feature,
        truth: Some(truth),
        station_src: syn.station_graph.clone(),
        feature_src: syn.feature_graph.clone(),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: String,
    config: &'a ExperimentConfig,
}

fn write_manifest(cfg: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    let m = Manifest {
        command,
        config_hash: cfg.hash(),
        config: cfg,
    };
    let path = cfg.output_dir.join(format!("{command}.manifest.json"));
    fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

/// Writes the graphs into the output directory. Provided graph files are
/// copied byte for byte.
fn write_graphs(inputs: &Inputs, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let emit = |g: &GraphShiftOperator, src: &Option<PathBuf>, name: &str| -> Result<PathBuf, CliError> {
        let path = out.join(name);
        match src {
            Some(src) => {
                fs::copy(src, &path)?;
            }
            None => g.save(&path)?,
        }
        Ok(path)
    };
    let mut written = vec![emit(&inputs.station, &inputs.station_src, STATION_GRAPH_FILE)?];
    if let Some(g) = &inputs.feature {
        written.push(emit(g, &inputs.feature_src, FEATURE_GRAPH_FILE)?);
    }
    Ok(written)
}

fn describe_graph(out: &mut String, title: &str, g: &GraphShiftOperator, names: &[String]) {
    let off_diag: Vec<(usize, usize, f64)> = g.iter().filter(|(r, c, _)| r != c).collect();
    let _ = writeln!(out, "{title}: {} nodes, {} stored entries, kind {}", g.n(), g.nnz(), g.kind());
    let _ = writeln!(out, "  symmetric: {}", g.is_symmetric(1e-12));
    let _ = writeln!(out, "  off-diagonal entries: {}", off_diag.len());
    for i in 0..g.n() {
        let nbrs: Vec<String> = g
            .row(i)
            .filter(|&(j, _)| j != i)
            .map(|(j, w)| format!("{}({w:.4})", names.get(j).map_or("?", String::as_str)))
            .collect();
        let _ = writeln!(out, "  {:<16} {}", names.get(i).map_or("?", String::as_str), nbrs.join(" "));
    }
}

fn feature_names(panel: &SignalPanel) -> Vec<String> {
    if panel.feature_names().is_empty() {
        (0..panel.features()).map(|f| format!("f{f}")).collect()
    } else {
        panel.feature_names().to_vec()
    }
}

pub fn build_graphs(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let written = write_graphs(&inputs, &cfg.output_dir)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "config hash: {}", cfg.hash());
    let p = &inputs.panel;
    let _ = writeln!(summary, "panel: T={} N={} F={}", p.len(), p.nodes(), p.features());
    describe_graph(&mut summary, "station graph", &inputs.station, &inputs.node_names);
    if let Some(g) = &inputs.feature {
        describe_graph(&mut summary, "feature graph", g, &feature_names(p));
    }
    fs::write(cfg.output_dir.join("graphs.txt"), &summary)?;
    write_manifest(cfg, "build-graphs")?;
    print!("{summary}");
    for w in written {
        println!("wrote {}", w.display());
    }
    Ok(())
}

pub fn synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if !matches!(cfg.data, DataConfig::Synthetic(_)) {
        return Err(CliError::Usage("synth needs a config with data.source = \"synthetic\"".into()));
    }
    let inputs = load_inputs(cfg)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_graphs(&inputs, &cfg.output_dir)?;
    let panel_path = cfg.output_dir.join("panel.csv");
    inputs.panel.write_csv(std::io::BufWriter::new(fs::File::create(&panel_path)?))?;
    let truth_path = cfg.output_dir.join("truth.json");
    inputs.truth.as_ref().expect("synthetic inputs carry their model").save_json(&truth_path)?;
    write_manifest(cfg, "synth")?;
    let p = &inputs.panel;
    println!("synthetic panel T={} N={} F={}", p.len(), p.nodes(), p.features());
    println!("wrote {}", panel_path.display());
    println!("wrote {}", truth_path.display());
    Ok(())
}

#[derive(Serialize)]
struct FitOutput {
    config_hash: String,
    family: String,
    p: usize,
    k: usize,
    targets: (usize, usize),
    params: usize,
    objective: f64,
    rank_deficient: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    joint: Option<graphvar::estimation::JointFitReport>,
}

pub fn fit(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let f = &cfg.fit;
    let spec = ModelSpec::new(f.family, f.p, f.k)?.with_product(cfg.product.resolve()?);
    let t = inputs.panel.len();
    let start = f.start.max(f.p);
    let end = f.len.map_or(t, |l| (f.start + l).min(t));
    if start >= end {
        return Err(CliError::Usage(format!("fit range {start}..{end} is empty (panel has {t} samples)")));
    }
    let panel = if f.normalize {
        Normalizer::fit(&inputs.panel, start - f.p..end)?.apply(&inputs.panel)
    } else {
        inputs.panel.clone()
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let joint_mode = f.mode == EstimationMode::Joint && f.family.uses_product_graph();
    let (model, output) = if joint_mode {
        let sf = inputs
            .feature
            .as_ref()
            .ok_or_else(|| CliError::Usage("joint estimation needs a feature graph".into()))?;
        let res = joint_fit(&spec, &inputs.station, sf, &panel, start..end, &f.joint)?;
        res.feature_graph.save(&cfg.output_dir.join("learned_feature.gso"))?;
        let out = FitOutput {
            config_hash: cfg.hash(),
            family: f.family.to_string(),
            p: f.p,
            k: f.k,
            targets: (start, end),
            params: res.model.param_count(),
            objective: res.report.final_objective,
            rank_deficient: res.report.last_ls.rank_deficient,
            joint: Some(res.report),
        };
        (res.model, out)
    } else {
        let (model, report) = fit_least_squares(&spec, &inputs.station, inputs.feature.as_ref(), &panel, start..end)?;
        let out = FitOutput {
            config_hash: cfg.hash(),
            family: f.family.to_string(),
            p: f.p,
            k: f.k,
            targets: (start, end),
            params: model.param_count(),
            objective: report.objective,
            rank_deficient: report.rank_deficient,
            joint: None,
        };
        (model, out)
    };
    model.save_json(&cfg.output_dir.join("model.json"))?;
    fs::write(
        cfg.output_dir.join("fit_report.json"),
        serde_json::to_string_pretty(&output)? + "\n",
    )?;
    write_manifest(cfg, "fit")?;
    println!(
        "{} P={} K={} params={} targets={}..{} objective={:.6e}{}",
        output.family,
        output.p,
        output.k,
        output.params,
        start,
        end,
        output.objective,
        if output.rank_deficient { " (rank deficient)" } else { "" }
    );
    if let Some(j) = &output.joint {
        println!(
            "joint: {} outer iterations, objective {:.6e} -> {:.6e}, converged {}",
            j.outer_iterations, j.initial_objective, j.final_objective, j.converged
        );
    }
    Ok(())
}

pub fn run_evaluate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let eval_cfg = cfg.evaluation.to_config(cfg.product.resolve()?)?;
    let inputs = load_inputs(cfg)?;
    let mut report = evaluate(&inputs.panel, &inputs.station, inputs.feature.as_ref(), &eval_cfg)?;
    report.config_hash = cfg.hash();
    report.save(&cfg.output_dir)?;
    write_manifest(cfg, "evaluate")?;
    println!("{:<18} {:>9} {:>12} {:>8} {:>7}", "family", "in_sample", "pooled_rnmse", "windows", "failed");
    for s in &report.summaries {
        let r = s.pooled_rnmse.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!(
            "{:<18} {:>9} {:>12} {:>8} {:>7}",
            s.family.as_str(),
            s.in_sample_len,
            r,
            s.windows,
            s.failed_windows
        );
    }
    for w in report.windows.iter().filter(|w| w.error.is_some()) {
        log::warn!(
            "{} in_sample={} window={}: {}",
            w.family,
            w.in_sample_len,
            w.window,
            w.error.as_deref().unwrap_or_default()
        );
    }
    println!("wrote {}", cfg.output_dir.join("report.csv").display());
    if report.total_failure() {
        return Err(CliError::Failed("every evaluation window failed".into()));
    }
    Ok(())
}

pub fn format_checks(results: &[CheckResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<20} {:<6} {:>12} {:>12}  detail", "check", "status", "error", "tolerance");
    for r in results {
        let _ = writeln!(
            out,
            "{:<20} {:<6} {:>12.3e} {:>12.3e}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.error,
            r.tolerance,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(out, "{} checks, {failed} failed", results.len());
    out
}

/// Returns whether every check passed.
pub fn selftest(config: &SelftestConfig) -> bool {
    let results = run_selftest(config);
    print!("{}", format_checks(&results));
    results.iter().all(|r| r.passed)
}

