//! Beijing multi-site air-quality corpus (UCI layout, one CSV per station).
//!
//! Each station file has the columns `No, year, month, day, hour, PM2.5, PM10,
//! SO2, NO2, CO, O3, TEMP, PRES, DEWP, RAIN, wd, WSPM, station`, with `NA` for
//! missing readings. The loader keeps the ten features in
//! [`AIR_QUALITY_FEATURES`] order; `No`, `RAIN`, `wd` and `station` are
//! ignored.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::panel::SignalPanel;

/// Feature order of loaded panels: six pollutants, then four weather
/// variables.
pub const AIR_QUALITY_FEATURES: [&str; 10] = [
    "PM2.5", "PM10", "SO2", "NO2", "CO", "O3", "TEMP", "PRES", "DEWP", "WSPM",
];

const BEIJING_STATIONS: &str = include_str!("../../config/beijing_stations.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    /// File name inside the data directory; defaults to the first
    /// `PRSA_Data_<name>_*.csv` match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    #[serde(rename = "station")]
    pub stations: Vec<Station>,
}

impl StationConfig {
    /// The twelve monitoring sites of the Beijing corpus.
    pub fn beijing() -> Self {
        Self::from_toml_str(BEIJING_STATIONS).expect("bundled station config is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: StationConfig = toml::from_str(text).map_err(|e| Error::Parse(format!("station config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.is_empty() {
            return Err(Error::InvalidInput("station config lists no stations".into()));
        }
        let mut seen = HashSet::new();
        for st in &self.stations {
            if !seen.insert(st.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate station id '{}'", st.id)));
            }
            if !(-90.0..=90.0).contains(&st.latitude) || !(-180.0..=180.0).contains(&st.longitude) {
                return Err(Error::InvalidInput(format!(
                    "station '{}' has invalid coordinates ({}, {})",
                    st.id, st.latitude, st.longitude
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    /// Great-circle distances in kilometres.
    pub fn distance_matrix(&self) -> Result<DistanceMatrix> {
        let coords: Vec<_> = self.stations.iter().map(|s| (s.latitude, s.longitude)).collect();
        DistanceMatrix::haversine(&coords)
    }
}

/// Half-open hourly range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl TimeRange {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidParameter(format!("empty time range {start} .. {end}")));
        }
        Ok(Self { start, end })
    }

    /// 2015-07-20 07:00 up to (excluding) 2016-09-05 13:00: 9918 hours.
    pub fn study_period() -> Self {
        Self {
            start: hour(2015, 7, 20, 7),
            end: hour(2016, 9, 5, 13),
        }
    }

    /// Starts at `start` and covers `hours` samples.
    pub fn from_hours(start: NaiveDateTime, hours: usize) -> Self {
        Self {
            start,
            end: start + chrono::Duration::hours(hours as i64),
        }
    }

    pub fn hours(&self) -> usize {
        (self.end - self.start).num_hours() as usize
    }

    /// Parses `YYYY-MM-DD HH` or `YYYY-MM-DDTHH:MM`.
    pub fn parse_instant(s: &str) -> Result<NaiveDateTime> {
        let s = s.trim();
        let padded = format!("{s}:00");
        let candidates = [
            (padded.as_str(), "%Y-%m-%d %H:%M"),
            (s, "%Y-%m-%d %H:%M"),
            (s, "%Y-%m-%dT%H:%M"),
            (s, "%Y-%m-%dT%H:%M:%S"),
        ];
        for (text, fmt) in candidates {
            if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
                return Ok(t);
            }
        }
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists"));
        }
        Err(Error::Parse(format!("cannot parse time '{s}' (expected YYYY-MM-DD HH)")))
    }
}

fn hour(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, d)
        .and_then(|d| d.and_hms_opt(h, 0, 0))
        .expect("valid calendar hour")
}

/// Locates the CSV of `station` inside `dir`.
pub fn station_file(dir: &Path, station: &Station) -> Result<PathBuf> {
    if let Some(f) = &station.file {
        let p = dir.join(f);
        return if p.is_file() { Ok(p) } else { Err(Error::MissingFile(p)) };
    }
    let prefix = format!("PRSA_Data_{}_", station.name);
    let mut hits: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|_| Error::MissingFile(dir.to_path_buf()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&prefix) && n.ends_with(".csv"))
        })
        .collect();
    hits.sort();
    hits.into_iter()
        .next()
        .ok_or_else(|| Error::MissingFile(dir.join(format!("{prefix}*.csv"))))
}

/// Loads a `T x N x 10` panel over `range`, one node per configured station
/// in config order. Missing readings and absent hours are filled by linear
/// interpolation along time; leading and trailing gaps take the nearest
/// observed value.
pub fn load_air_quality(dir: &Path, stations: &StationConfig, range: TimeRange) -> Result<SignalPanel> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    stations.validate()?;
    let t_len = range.hours();
    let per_station: Vec<Vec<Vec<f64>>> = stations
        .stations
        .par_iter()
        .map(|st| {
            let path = station_file(dir, st)?;
            let mut series = read_station(&path, range)?;
            for (f, s) in series.iter_mut().enumerate() {
                if !interpolate_gaps(s) {
                    return Err(Error::InvalidInput(format!(
                        "station '{}' has no observed {} value in the requested range",
                        st.name, AIR_QUALITY_FEATURES[f]
                    )));
                }
            }
            Ok(series)
        })
        .collect::<Result<_>>()?;

    let (n, f) = (stations.len(), AIR_QUALITY_FEATURES.len());
    let mut panel = SignalPanel::zeros(t_len, n, f);
    for (node, series) in per_station.iter().enumerate() {
        for (feature, values) in series.iter().enumerate() {
            for (t, v) in values.iter().enumerate() {
                panel.set(t, node, feature, *v);
            }
        }
    }
    panel.with_feature_names(AIR_QUALITY_FEATURES.iter().map(|s| s.to_string()).collect())
}

/// Reads one station file into per-feature series over `range`, with NaN
/// marking missing readings.
fn read_station(path: &Path, range: TimeRange) -> Result<Vec<Vec<f64>>> {
    let t_len = range.hours();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::MissingFile(path.to_path_buf()),
            _ => Error::Csv(e),
        })?;
    let malformed = |line: u64, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(1, format!("missing column '{name}'")))
    };
    let date_cols = [col("year")?, col("month")?, col("day")?, col("hour")?];
    let feature_cols: Vec<usize> = AIR_QUALITY_FEATURES.iter().map(|n| col(n)).collect::<Result<_>>()?;

    let mut series = vec![vec![f64::NAN; t_len]; AIR_QUALITY_FEATURES.len()];
    let mut seen = vec![false; t_len];
    let (mut first, mut last): (Option<NaiveDateTime>, Option<NaiveDateTime>) = (None, None);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut parts = [0u32; 4];
        for (slot, &c) in parts.iter_mut().zip(&date_cols) {
            let raw = record.get(c).unwrap_or("").trim();
            *slot = raw
                .parse()
                .map_err(|_| malformed(line, format!("invalid date field '{raw}'")))?;
        }
        let stamp = NaiveDate::from_ymd_opt(parts[0] as i32, parts[1], parts[2])
            .and_then(|d| d.and_hms_opt(parts[3], 0, 0))
            .ok_or_else(|| malformed(line, format!("invalid timestamp {parts:?}")))?;
        first = Some(first.map_or(stamp, |f| f.min(stamp)));
        last = Some(last.map_or(stamp, |l| l.max(stamp)));
        if stamp < range.start || stamp >= range.end {
            continue;
        }
        let t = (stamp - range.start).num_hours() as usize;
        if seen[t] {
            log::warn!("{}: duplicate hour {stamp} at line {line} ignored", path.display());
            continue;
        }
        seen[t] = true;
        for (f, &c) in feature_cols.iter().enumerate() {
            series[f][t] = parse_value(record.get(c).unwrap_or("")).map_err(|r| malformed(line, r))?;
        }
    }
    let last_needed = range.end - chrono::Duration::hours(1);
    match (first, last) {
        (Some(f), Some(l)) if f <= range.start && l >= last_needed => Ok(series),
        (Some(f), Some(l)) => Err(Error::RangeNotCovered(format!(
            "{} spans {f} .. {l}, requested {} .. {last_needed}",
            path.display(),
            range.start
        ))),
        _ => Err(Error::RangeNotCovered(format!("{} has no data rows", path.display()))),
    }
}

fn parse_value(raw: &str) -> std::result::Result<f64, String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("invalid numeric value '{raw}'")),
    }
}

/// Fills NaN entries in place. Returns false when nothing was observed.
pub fn interpolate_gaps(series: &mut [f64]) -> bool {
    let known: Vec<usize> = (0..series.len()).filter(|&i| !series[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return series.is_empty();
    };
    let (head, tail) = (series[first], series[last]);
    series[..first].iter_mut().for_each(|v| *v = head);
    series[last + 1..].iter_mut().for_each(|v| *v = tail);
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (series[a], series[b]);
        for i in a + 1..b {
            let w = (i - a) as f64 / (b - a) as f64;
            series[i] = va + w * (vb - va);
        }
    }
    true
}

/// Counts of missing readings per feature for each station, before
/// imputation. Keys are station names.
pub fn missing_counts(dir: &Path, stations: &StationConfig, range: TimeRange) -> Result<BTreeMap<String, Vec<usize>>> {
    stations
        .stations
        .iter()
        .map(|st| {
            let series = read_station(&station_file(dir, st)?, range)?;
            Ok((
                st.name.clone(),
                series.iter().map(|s| s.iter().filter(|v| v.is_nan()).count()).collect(),
            ))
        })
        .collect()
}
