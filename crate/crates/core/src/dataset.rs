//! Weekly panel data: loading, validation, scaling and synthesis.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::transforms::{self, BoltzmannParams, CarryoverParams, MMParams, DEFAULT_MAX_LAG};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Default r² threshold for the input correlation screen.
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing column `{column}`")]
    MissingColumn { column: String },
    #[error("non-uniform time step at row {row}: {previous} -> {current} (expected 7 days)")]
    NonUniformTimeStep {
        row: usize,
        previous: NaiveDate,
        current: NaiveDate,
    },
    #[error("negative spend {value} in column `{column}` at row {row}")]
    NegativeSpend { column: String, row: usize, value: f64 },
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("unparseable value `{raw}` in column `{column}` at row {row}")]
    BadValue { column: String, row: usize, raw: String },
    #[error("column `{column}` has {got} entries, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        got: usize,
    },
    #[error("column `{column}` has zero mean and cannot be scaled")]
    ZeroMeanColumn { column: String },
    #[error("need at least {needed} weeks, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("correlation screen failed after {attempts} attempts; worst pair {pair:?} r2={r2:.3}")]
    CorrelationScreenFailed {
        attempts: usize,
        pair: (String, String),
        r2: f64,
    },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("scale info does not match dataset: {0}")]
    ScaleMismatch(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which CSV column plays which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub time_column: String,
    pub media_columns: Vec<String>,
    #[serde(default)]
    pub control_columns: Vec<String>,
    pub response_column: String,
}

/// Weekly media spends, controls and response. Columns are stored one
/// vector per variable, each of length `n_weeks()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    time: Vec<NaiveDate>,
    media: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
    response: Vec<f64>,
    channel_names: Vec<String>,
    control_names: Vec<String>,
    response_name: String,
}

impl TimeSeriesDataset {
    pub fn new(
        time: Vec<NaiveDate>,
        media: Vec<Vec<f64>>,
        controls: Vec<Vec<f64>>,
        response: Vec<f64>,
        channel_names: Vec<String>,
        control_names: Vec<String>,
        response_name: String,
    ) -> Result<Self, DatasetError> {
        let n = time.len();
        if channel_names.len() != media.len() {
            return Err(DatasetError::LengthMismatch {
                column: "channel_names".into(),
                expected: media.len(),
                got: channel_names.len(),
            });
        }
        if control_names.len() != controls.len() {
            return Err(DatasetError::LengthMismatch {
                column: "control_names".into(),
                expected: controls.len(),
                got: control_names.len(),
            });
        }
        for w in 1..n {
            if time[w] - time[w - 1] != Duration::days(7) {
                return Err(DatasetError::NonUniformTimeStep {
                    row: w,
                    previous: time[w - 1],
                    current: time[w],
                });
            }
        }
        let columns = media
            .iter()
            .zip(&channel_names)
            .map(|(c, name)| (c, name, true))
            .chain(controls.iter().zip(&control_names).map(|(c, name)| (c, name, false)))
            .chain(std::iter::once((&response, &response_name, false)));
        for (col, name, is_media) in columns {
            if col.len() != n {
                return Err(DatasetError::LengthMismatch {
                    column: name.clone(),
                    expected: n,
                    got: col.len(),
                });
            }
            for (row, &v) in col.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DatasetError::MissingValue {
                        column: name.clone(),
                        row,
                    });
                }
                if is_media && v < 0.0 {
                    return Err(DatasetError::NegativeSpend {
                        column: name.clone(),
                        row,
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            time,
            media,
            controls,
            response,
            channel_names,
            control_names,
            response_name,
        })
    }

    pub fn n_weeks(&self) -> usize {
        self.time.len()
    }

    pub fn n_channels(&self) -> usize {
        self.media.len()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn time(&self) -> &[NaiveDate] {
        &self.time
    }

    pub fn media(&self) -> &[Vec<f64>] {
        &self.media
    }

    pub fn media_column(&self, m: usize) -> &[f64] {
        &self.media[m]
    }

    pub fn controls(&self) -> &[Vec<f64>] {
        &self.controls
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn control_names(&self) -> &[String] {
        &self.control_names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Mapping that reproduces this dataset from its own CSV rendering.
    pub fn column_mapping(&self) -> ColumnMapping {
        ColumnMapping {
            time_column: "date".into(),
            media_columns: self.channel_names.clone(),
            control_columns: self.control_names.clone(),
            response_column: self.response_name.clone(),
        }
    }

    /// Copy with one media column multiplied by `factor`.
    pub fn with_scaled_channel(&self, m: usize, factor: f64) -> Result<Self, DatasetError> {
        let mut media = self.media.clone();
        for v in &mut media[m] {
            *v *= factor;
        }
        Self::new(
            self.time.clone(),
            media,
            self.controls.clone(),
            self.response.clone(),
            self.channel_names.clone(),
            self.control_names.clone(),
            self.response_name.clone(),
        )
    }

    /// Copy with a replacement response column.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self, DatasetError> {
        Self::new(
            self.time.clone(),
            self.media.clone(),
            self.controls.clone(),
            response,
            self.channel_names.clone(),
            self.control_names.clone(),
            self.response_name.clone(),
        )
    }

    /// Canonical CSV bytes: `date`, media, controls, response; floats in
    /// shortest round-trip form.
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.channel_names.iter().cloned());
        header.extend(self.control_names.iter().cloned());
        header.push(self.response_name.clone());
        w.write_record(&header)?;
        for t in 0..self.n_weeks() {
            let mut row = vec![self.time[t].format(DATE_FORMAT).to_string()];
            row.extend(self.media.iter().map(|c| c[t].to_string()));
            row.extend(self.controls.iter().map(|c| c[t].to_string()));
            row.push(self.response[t].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_csv_bytes())?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical CSV bytes.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_bytes()))
    }
}

pub fn load_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<TimeSeriesDataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, mapping)
}

pub fn read_csv<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<TimeSeriesDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn { column: name.to_string() })
    };
    let time_idx = index_of(&mapping.time_column)?;
    let media_idx = mapping.media_columns.iter().map(|c| index_of(c)).collect::<Result<Vec<_>, _>>()?;
    let control_idx = mapping.control_columns.iter().map(|c| index_of(c)).collect::<Result<Vec<_>, _>>()?;
    let response_idx = index_of(&mapping.response_column)?;

    let mut time = Vec::new();
    let mut media = vec![Vec::new(); media_idx.len()];
    let mut controls = vec![Vec::new(); control_idx.len()];
    let mut response = Vec::new();

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |idx: usize, column: &str| -> Result<f64, DatasetError> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na") {
                return Err(DatasetError::MissingValue {
                    column: column.to_string(),
                    row,
                });
            }
            let v: f64 = raw.parse().map_err(|_| DatasetError::BadValue {
                column: column.to_string(),
                row,
                raw: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::MissingValue {
                    column: column.to_string(),
                    row,
                });
            }
            Ok(v)
        };
        let raw_date = record.get(time_idx).unwrap_or("");
        if raw_date.is_empty() {
            return Err(DatasetError::MissingValue {
                column: mapping.time_column.clone(),
                row,
            });
        }
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT)
            .or_else(|_| {
                chrono::NaiveDateTime::parse_from_str(raw_date, "%Y-%m-%dT%H:%M:%S").map(|dt| dt.date())
            })
            .map_err(|_| DatasetError::BadValue {
                column: mapping.time_column.clone(),
                row,
                raw: raw_date.to_string(),
            })?;
        time.push(date);
        for (k, &idx) in media_idx.iter().enumerate() {
            let v = field(idx, &mapping.media_columns[k])?;
            if v < 0.0 {
                return Err(DatasetError::NegativeSpend {
                    column: mapping.media_columns[k].clone(),
                    row,
                    value: v,
                });
            }
            media[k].push(v);
        }
        for (k, &idx) in control_idx.iter().enumerate() {
            controls[k].push(field(idx, &mapping.control_columns[k])?);
        }
        response.push(field(response_idx, &mapping.response_column)?);
    }

    TimeSeriesDataset::new(
        time,
        media,
        controls,
        response,
        mapping.media_columns.clone(),
        mapping.control_columns.clone(),
        mapping.response_column.clone(),
    )
}

/// A pair of input columns whose squared correlation exceeds the screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub first: String,
    pub second: String,
    pub r2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pairs: Vec<CorrelatedPair>,
    /// Columns with zero variance; their correlations are undefined.
    pub constant_columns: Vec<String>,
}

impl CorrelationReport {
    pub fn passes(&self) -> bool {
        self.pairs.is_empty()
    }

    fn worst(&self) -> Option<&CorrelatedPair> {
        self.pairs.iter().max_by(|a, b| a.r2.total_cmp(&b.r2))
    }
}

/// Squared Pearson correlation, `None` if either series is constant.
pub fn pearson_r2(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy * sxy / (sxx * syy)).min(1.0))
}

/// Pairwise r² among media and control columns above `threshold`.
pub fn validate_correlations(ds: &TimeSeriesDataset, threshold: f64) -> Result<CorrelationReport, DatasetError> {
    if ds.n_weeks() < 3 {
        return Err(DatasetError::TooShort {
            needed: 3,
            have: ds.n_weeks(),
        });
    }
    let cols: Vec<(&String, &Vec<f64>)> = ds
        .channel_names
        .iter()
        .zip(&ds.media)
        .chain(ds.control_names.iter().zip(&ds.controls))
        .collect();
    let mut report = CorrelationReport::default();
    for (name, col) in &cols {
        if col.iter().all(|&v| v == col[0]) {
            report.constant_columns.push((*name).clone());
        }
    }
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            if let Some(r2) = pearson_r2(cols[i].1, cols[j].1) {
                if r2 > threshold {
                    report.pairs.push(CorrelatedPair {
                        first: cols[i].0.clone(),
                        second: cols[j].0.clone(),
                        r2,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Per-column divisors applied by [`scale_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub media_scale: Vec<f64>,
    pub control_scale: Vec<f64>,
    pub response_scale: f64,
}

impl ScaleInfo {
    pub fn identity(n_channels: usize, n_controls: usize) -> Self {
        Self {
            media_scale: vec![1.0; n_channels],
            control_scale: vec![1.0; n_controls],
            response_scale: 1.0,
        }
    }

    fn check_shape(&self, ds: &TimeSeriesDataset) -> Result<(), DatasetError> {
        if self.media_scale.len() != ds.n_channels() || self.control_scale.len() != ds.n_controls() {
            return Err(DatasetError::ScaleMismatch(format!(
                "scale has {} media / {} controls, dataset has {} / {}",
                self.media_scale.len(),
                self.control_scale.len(),
                ds.n_channels(),
                ds.n_controls()
            )));
        }
        Ok(())
    }

    fn map(&self, ds: &TimeSeriesDataset, op: impl Fn(f64, f64) -> f64) -> Result<TimeSeriesDataset, DatasetError> {
        self.check_shape(ds)?;
        let rescale = |col: &Vec<f64>, s: f64| col.iter().map(|&v| op(v, s)).collect::<Vec<_>>();
        Ok(TimeSeriesDataset {
            time: ds.time.clone(),
            media: ds.media.iter().zip(&self.media_scale).map(|(c, &s)| rescale(c, s)).collect(),
            controls: ds.controls.iter().zip(&self.control_scale).map(|(c, &s)| rescale(c, s)).collect(),
            response: rescale(&ds.response, self.response_scale),
            channel_names: ds.channel_names.clone(),
            control_names: ds.control_names.clone(),
            response_name: ds.response_name.clone(),
        })
    }

    /// Divide every column by its stored divisor.
    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset, DatasetError> {
        self.map(ds, |v, s| v / s)
    }

    /// Undo [`ScaleInfo::apply`].
    pub fn invert(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset, DatasetError> {
        self.map(ds, |v, s| v * s)
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Divide each column by its mean. Controls use the mean absolute value so
/// divisors stay positive; an all-zero media or control column keeps
/// divisor 1.
pub fn scale_dataset(ds: &TimeSeriesDataset) -> Result<(TimeSeriesDataset, ScaleInfo), DatasetError> {
    let response_scale = mean(&ds.response);
    if !(response_scale > 0.0) {
        return Err(DatasetError::ZeroMeanColumn {
            column: ds.response_name.clone(),
        });
    }
    let positive_or_one = |m: f64| if m > 0.0 { m } else { 1.0 };
    let media_scale = ds.media.iter().map(|c| positive_or_one(mean(c))).collect();
    let control_scale = ds
        .controls
        .iter()
        .map(|c| positive_or_one(c.iter().map(|v| v.abs()).sum::<f64>() / c.len() as f64))
        .collect();
    let info = ScaleInfo {
        media_scale,
        control_scale,
        response_scale,
    };
    Ok((info.apply(ds)?, info))
}

/// Ground truth for one synthetic channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTruth {
    pub name: String,
    /// Maximum saturation, response units.
    pub vmax: f64,
    /// Half-saturation constant, spend units on the carryover output axis.
    pub km: f64,
    pub retention: f64,
    pub delay: f64,
    /// Median pulse amplitude, spend units.
    pub spend_level: f64,
    /// Log-scale spread of pulse amplitudes.
    #[serde(default = "default_spend_log_sd")]
    pub spend_log_sd: f64,
    #[serde(default)]
    pub mix_a: Option<f64>,
    #[serde(default)]
    pub mix_b: Option<f64>,
}

fn default_spend_log_sd() -> f64 {
    0.6
}

/// Ground truth for one synthetic control variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTruth {
    pub name: String,
    pub coef: f64,
    /// Mean level of the control series.
    pub level: f64,
    /// Stationary standard deviation of the AR(1) fluctuation.
    pub spread: f64,
}

/// Everything needed to simulate a dataset from the saturating carryover
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_weeks: usize,
    pub max_lag: usize,
    pub start_date: NaiveDate,
    pub baseline: f64,
    pub noise_sd: f64,
    /// Fraction of weeks with active spend, per channel.
    pub pulse_density: f64,
    pub seed: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default = "default_response_name")]
    pub response_name: String,
    pub channels: Vec<ChannelTruth>,
    pub controls: Vec<ControlTruth>,
}

fn default_max_retries() -> usize {
    25
}

fn default_response_name() -> String {
    "leads".into()
}

impl Default for GeneratorSpec {
    /// 144 weeks, 10 channels, 2 controls.
    fn default() -> Self {
        Self::with_dimensions(144, 10, 2, 42)
    }
}

impl GeneratorSpec {
    /// A reproducible default spec with the given dimensions. Channel truths
    /// cycle through a fixed table so every channel's pulses reach past its
    /// half-saturation point.
    pub fn with_dimensions(n_weeks: usize, n_channels: usize, n_controls: usize, seed: u64) -> Self {
        const LEVELS: [f64; 10] = [4000.0, 15000.0, 12000.0, 22000.0, 9000.0, 11000.0, 18000.0, 600.0, 30000.0, 800.0];
        const VMAX: [f64; 10] = [90.0, 110.0, 70.0, 95.0, 100.0, 140.0, 85.0, 105.0, 75.0, 115.0];
        const KM_RATIO: [f64; 10] = [0.7, 0.9, 0.6, 1.0, 0.8, 0.5, 0.75, 0.9, 0.65, 0.85];
        const RETENTION: [f64; 10] = [0.5, 0.4, 0.3, 0.6, 0.45, 0.35, 0.5, 0.25, 0.55, 0.4];
        const DELAY: [f64; 10] = [0.0, 1.0, 0.0, 1.5, 0.5, 0.0, 1.0, 0.0, 2.0, 0.5];
        let channels = (0..n_channels)
            .map(|m| {
                let k = m % 10;
                ChannelTruth {
                    name: format!("ch{}", m + 1),
                    vmax: VMAX[k],
                    km: KM_RATIO[k] * LEVELS[k] * 0.8,
                    retention: RETENTION[k],
                    delay: DELAY[k],
                    spend_level: LEVELS[k],
                    spend_log_sd: default_spend_log_sd(),
                    mix_a: None,
                    mix_b: None,
                }
            })
            .collect();
        let controls = (0..n_controls)
            .map(|c| ControlTruth {
                name: format!("z{}", c + 1),
                coef: if c % 2 == 0 { 8.0 } else { -5.0 },
                level: 10.0 + 5.0 * c as f64,
                spread: 2.0,
            })
            .collect();
        Self {
            n_weeks,
            max_lag: DEFAULT_MAX_LAG,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            baseline: 600.0,
            noise_sd: 10.0,
            pulse_density: 0.5,
            seed,
            max_retries: default_max_retries(),
            response_name: default_response_name(),
            channels,
            controls,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |msg: String| Err(DatasetError::InvalidSpec(msg));
        if self.n_weeks < 2 {
            return fail(format!("n_weeks = {} < 2", self.n_weeks));
        }
        if self.max_lag == 0 {
            return fail("max_lag must be at least 1".into());
        }
        if !(self.noise_sd >= 0.0) {
            return fail(format!("noise_sd = {} must be >= 0", self.noise_sd));
        }
        if !(self.pulse_density > 0.0 && self.pulse_density <= 1.0) {
            return fail(format!("pulse_density = {} must lie in (0, 1]", self.pulse_density));
        }
        let with_mix = self.channels.iter().filter(|c| c.mix_a.is_some() || c.mix_b.is_some()).count();
        if with_mix != 0 && with_mix != self.channels.len() {
            return fail("mix coefficients must be given for all channels or none".into());
        }
        for c in &self.channels {
            if !(c.vmax > 0.0 && c.km > 0.0) {
                return fail(format!("{}: vmax and km must be positive", c.name));
            }
            if !(c.retention > 0.0 && c.retention < 1.0) {
                return fail(format!("{}: retention must lie in (0, 1)", c.name));
            }
            if !(c.delay >= 0.0 && c.delay <= (self.max_lag - 1) as f64) {
                return fail(format!("{}: delay must lie in [0, max_lag - 1]", c.name));
            }
            if !(c.spend_level > 0.0 && c.spend_log_sd >= 0.0) {
                return fail(format!("{}: spend_level must be positive", c.name));
            }
        }
        Ok(())
    }

    fn mixing(&self) -> Option<BoltzmannParams> {
        if self.channels.is_empty() || self.channels[0].mix_a.is_none() && self.channels[0].mix_b.is_none() {
            return None;
        }
        Some(BoltzmannParams {
            a: self.channels.iter().map(|c| c.mix_a.unwrap_or(1.0)).collect(),
            b: self.channels.iter().map(|c| c.mix_b.unwrap_or(0.0)).collect(),
        })
    }
}

/// Echo of the spec plus what the generator actually realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: GeneratorSpec,
    /// Attempt index (0-based) that passed the correlation screen.
    pub attempt: usize,
    pub max_input_r2: f64,
    /// Noise-free mean response.
    pub mean_response: Vec<f64>,
    /// Per-channel contribution `MM(carryover(x))` (after mixing, if any).
    pub contributions: Vec<Vec<f64>>,
    /// Fingerprint of the generated dataset.
    pub fingerprint: String,
}

/// Deterministic noise-free response and per-channel contributions for a
/// given spend matrix and control matrix.
pub fn simulate_mean(
    spec: &GeneratorSpec,
    media: &[Vec<f64>],
    controls: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), DatasetError> {
    let n = spec.n_weeks;
    let carried: Vec<Vec<f64>> = spec
        .channels
        .iter()
        .zip(media)
        .map(|(c, x)| {
            let p = CarryoverParams::new(c.retention, c.delay, spec.max_lag)
                .map_err(|e| DatasetError::InvalidSpec(e.to_string()))?;
            Ok(transforms::carryover(x, &p))
        })
        .collect::<Result<_, DatasetError>>()?;
    let mixed = match spec.mixing() {
        Some(p) => transforms::boltzmann_mix(&carried, &p).map_err(|e| DatasetError::InvalidSpec(e.to_string()))?,
        None => carried,
    };
    let contributions: Vec<Vec<f64>> = spec
        .channels
        .iter()
        .zip(&mixed)
        .map(|(c, s)| {
            let p = MMParams { vmax: c.vmax, km: c.km };
            transforms::michaelis_menten_series(s, &p)
        })
        .collect();
    let mut y = vec![spec.baseline; n];
    for col in &contributions {
        for (yt, v) in y.iter_mut().zip(col) {
            *yt += v;
        }
    }
    for (c, z) in spec.controls.iter().zip(controls) {
        for (yt, v) in y.iter_mut().zip(z) {
            *yt += c.coef * v;
        }
    }
    Ok((y, contributions))
}

fn draw_inputs(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = spec.n_weeks;
    let media = spec
        .channels
        .iter()
        .map(|c| {
            let amp = LogNormal::new(c.spend_level.ln(), c.spend_log_sd).expect("validated spend params");
            let mut col = vec![0.0; n];
            let mut t = 0;
            // Campaigns run in bursts of 1-3 weeks, as do the gaps between
            // them, so the long-run active fraction is `pulse_density`.
            while t < n {
                let len = rng.random_range(1..=3usize);
                if rng.random::<f64>() < spec.pulse_density {
                    let a: f64 = amp.sample(rng);
                    for v in col.iter_mut().skip(t).take(len) {
                        *v = (a * rng.random_range(0.7..1.3)).round();
                    }
                }
                t += len;
            }
            col
        })
        .collect();
    let controls = spec
        .controls
        .iter()
        .map(|c| {
            let phi: f64 = 0.6;
            let innov = Normal::new(0.0, c.spread * (1.0 - phi * phi).sqrt()).expect("finite spread");
            let mut state = Normal::new(0.0, c.spread).expect("finite spread").sample(rng);
            (0..n)
                .map(|_| {
                    let v = c.level + state;
                    state = phi * state + innov.sample(rng);
                    (v * 1000.0).round() / 1000.0
                })
                .collect()
        })
        .collect();
    (media, controls)
}

/// Simulate a weekly dataset from `spec`. Identical specs (including seed)
/// give bit-identical output.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<(TimeSeriesDataset, GroundTruth), DatasetError> {
    spec.validate()?;
    let n = spec.n_weeks;
    let time: Vec<NaiveDate> = (0..n).map(|t| spec.start_date + Duration::weeks(t as i64)).collect();
    let channel_names: Vec<String> = spec.channels.iter().map(|c| c.name.clone()).collect();
    let control_names: Vec<String> = spec.controls.iter().map(|c| c.name.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut worst: Option<CorrelatedPair> = None;

    for attempt in 0..=spec.max_retries {
        let (media, controls) = draw_inputs(spec, &mut rng);
        let noise = Normal::new(0.0, spec.noise_sd).expect("validated noise_sd");
        let noise_draws: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
        let probe = TimeSeriesDataset::new(
            time.clone(),
            media.clone(),
            controls.clone(),
            vec![0.0; n],
            channel_names.clone(),
            control_names.clone(),
            spec.response_name.clone(),
        )?;
        let max_r2 = if n >= 3 {
            let all = validate_correlations(&probe, 0.0)?;
            let w = all.worst().cloned();
            let max_r2 = w.as_ref().map_or(0.0, |p| p.r2);
            if max_r2 >= DEFAULT_CORRELATION_THRESHOLD {
                worst = w;
                continue;
            }
            max_r2
        } else {
            0.0
        };
        let (mean_response, contributions) = simulate_mean(spec, &media, &controls)?;
        let response = if spec.noise_sd == 0.0 {
            mean_response.clone()
        } else {
            mean_response.iter().zip(&noise_draws).map(|(m, e)| (m + e).max(0.0)).collect()
        };
        let ds = probe.with_response(response)?;
        let truth = GroundTruth {
            spec: spec.clone(),
            attempt,
            max_input_r2: max_r2,
            mean_response,
            contributions,
            fingerprint: ds.fingerprint(),
        };
        return Ok((ds, truth));
    }
    let worst = worst.unwrap_or(CorrelatedPair {
        first: String::new(),
        second: String::new(),
        r2: f64::NAN,
    });
    Err(DatasetError::CorrelationScreenFailed {
        attempts: spec.max_retries + 1,
        pair: (worst.first, worst.second),
        r2: worst.r2,
    })
}
