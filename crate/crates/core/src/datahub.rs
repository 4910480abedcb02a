//! Hourly price, renewable and background-load series.
//!
//! Raw meter or market data comes in as `(timestamp, value)` CSV rows, gets
//! averaged into hourly buckets and aligned into a [`DataWindow`] of whole
//! days. [`synthesize`] produces a deterministic stand-in window when no
//! real data is available.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;
const SECONDS_PER_HOUR: i64 = 3600;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {reason}")]
    UnparseableRow { line: u64, reason: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("no samples for hour {hour}")]
    GapInSeries { hour: i64 },
    #[error("day index {index} out of range for a {days}-day window")]
    IndexOutOfRange { index: usize, days: usize },
    #[error("series are misaligned: {0}")]
    Misaligned(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One raw sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    pub value: f64,
}

/// One value per consecutive hour starting at `start_hour` (epoch hour index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries {
    pub start_hour: i64,
    pub values: Vec<f64>,
}

impl HourlySeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end_hour(&self) -> i64 {
        self.start_hour + self.values.len() as i64
    }
}

/// Names of the timestamp and value columns in an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub timestamp: String,
    pub value: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".to_owned(),
            value: "value".to_owned(),
        }
    }
}

/// Aligned price ($/kWh), renewable generation (kW) and background load (kW)
/// covering `days` whole days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataWindow {
    pub start_hour: i64,
    pub days: usize,
    pub price: Vec<f64>,
    pub renewable: Vec<f64>,
    pub background: Vec<f64>,
}

impl DataWindow {
    /// Builds a window from three hourly series that share a start hour and
    /// cover a whole number of days.
    pub fn from_series(
        price: HourlySeries,
        renewable: HourlySeries,
        background: HourlySeries,
    ) -> Result<Self, DataError> {
        if price.start_hour != renewable.start_hour || price.start_hour != background.start_hour {
            return Err(DataError::Misaligned(format!(
                "start hours differ: price {}, renewable {}, background {}",
                price.start_hour, renewable.start_hour, background.start_hour
            )));
        }
        if price.len() != renewable.len() || price.len() != background.len() {
            return Err(DataError::Misaligned(format!(
                "lengths differ: price {}, renewable {}, background {}",
                price.len(),
                renewable.len(),
                background.len()
            )));
        }
        let window = Self {
            start_hour: price.start_hour,
            days: price.len() / HOURS_PER_DAY,
            price: price.values,
            renewable: renewable.values,
            background: background.values,
        };
        window.validate()?;
        Ok(window)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.days == 0 {
            return Err(DataError::InvalidWindow("window must cover at least one day".into()));
        }
        let expected = self.days * HOURS_PER_DAY;
        for (name, series) in self.series() {
            if series.len() != expected {
                return Err(DataError::InvalidWindow(format!(
                    "{name} has {} values, expected {expected}",
                    series.len()
                )));
            }
            if let Some(v) = series.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(DataError::InvalidWindow(format!("{name} contains invalid value {v}")));
            }
        }
        Ok(())
    }

    fn series(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("price", &self.price),
            ("renewable", &self.renewable),
            ("background", &self.background),
        ]
    }

    pub fn hours(&self) -> usize {
        self.price.len()
    }

    pub fn price_series(&self) -> HourlySeries {
        HourlySeries {
            start_hour: self.start_hour,
            values: self.price.clone(),
        }
    }

    pub fn renewable_series(&self) -> HourlySeries {
        HourlySeries {
            start_hour: self.start_hour,
            values: self.renewable.clone(),
        }
    }

    pub fn background_series(&self) -> HourlySeries {
        HourlySeries {
            start_hour: self.start_hour,
            values: self.background.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let window: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        window.validate()?;
        Ok(window)
    }
}

/// Reads `(timestamp, value)` samples from a CSV file.
pub fn parse_csv(path: &Path, columns: &ColumnSpec) -> Result<Vec<SeriesPoint>, DataError> {
    parse_csv_reader(fs::File::open(path)?, columns)
}

/// Reads `(timestamp, value)` samples from any CSV source.
///
/// Output is sorted by timestamp; rows sharing a timestamp are replaced by
/// their mean.
pub fn parse_csv_reader<R: Read>(reader: R, columns: &ColumnSpec) -> Result<Vec<SeriesPoint>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::UnparseableRow {
        line: 1,
        reason: e.to_string(),
    })?;
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(DataError::EmptyFile);
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_owned()))
    };
    let ts_idx = column(&columns.timestamp)?;
    let val_idx = column(&columns.value)?;

    // timestamp -> (sum, count)
    let mut buckets: BTreeMap<i64, (f64, u32)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::UnparseableRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| DataError::UnparseableRow { line, reason };
        let raw_ts = record.get(ts_idx).ok_or_else(|| bad("missing timestamp field".into()))?;
        let raw_val = record.get(val_idx).ok_or_else(|| bad("missing value field".into()))?;
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| bad(format!("bad timestamp `{raw_ts}`")))?;
        let value: f64 = raw_val.parse().map_err(|_| bad(format!("bad value `{raw_val}`")))?;
        if !value.is_finite() || value < 0.0 {
            return Err(bad(format!("value must be finite and non-negative, got {value}")));
        }
        let slot = buckets.entry(timestamp).or_insert((0.0, 0));
        slot.0 += value;
        slot.1 += 1;
    }
    if buckets.is_empty() {
        return Err(DataError::EmptyFile);
    }
    Ok(buckets
        .into_iter()
        .map(|(timestamp, (sum, n))| SeriesPoint {
            timestamp,
            value: sum / f64::from(n),
        })
        .collect())
}

/// Integer epoch seconds, RFC 3339, or a naive `YYYY-MM-DD[ T]HH:MM[:SS]`
/// date-time taken as UTC.
fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    const NAIVE_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    for fmt in NAIVE_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Averages samples into consecutive hourly buckets `[h, h+1)`.
///
/// Every hour between the first and last sample must contain at least one
/// sample.
pub fn hourly_average(points: &[SeriesPoint]) -> Result<HourlySeries, DataError> {
    let first = points.first().ok_or(DataError::EmptyFile)?;
    let start_hour = first.timestamp.div_euclid(SECONDS_PER_HOUR);
    let mut values = Vec::new();
    let mut current = start_hour;
    let mut sum = 0.0;
    let mut count = 0u32;
    for p in points {
        let hour = p.timestamp.div_euclid(SECONDS_PER_HOUR);
        if hour < current {
            return Err(DataError::InvalidWindow(format!(
                "points are not sorted: timestamp {} after hour {current}",
                p.timestamp
            )));
        }
        if hour != current {
            values.push(sum / f64::from(count));
            if hour != current + 1 {
                return Err(DataError::GapInSeries { hour: current + 1 });
            }
            current = hour;
            sum = 0.0;
            count = 0;
        }
        sum += p.value;
        count += 1;
    }
    values.push(sum / f64::from(count));
    Ok(HourlySeries { start_hour, values })
}

/// Trims three hourly series to their common span, starting at the first
/// shared hour and truncated to whole days.
pub fn align(
    price: &HourlySeries,
    renewable: &HourlySeries,
    background: &HourlySeries,
) -> Result<DataWindow, DataError> {
    let start = price.start_hour.max(renewable.start_hour).max(background.start_hour);
    let end = price.end_hour().min(renewable.end_hour()).min(background.end_hour());
    let span = (end - start).max(0) as usize;
    let days = span / HOURS_PER_DAY;
    if days == 0 {
        return Err(DataError::InsufficientData(format!(
            "series overlap for {span} hours, need at least {HOURS_PER_DAY}"
        )));
    }
    let take = |s: &HourlySeries| {
        let offset = (start - s.start_hour) as usize;
        HourlySeries {
            start_hour: start,
            values: s.values[offset..offset + days * HOURS_PER_DAY].to_vec(),
        }
    };
    DataWindow::from_series(take(price), take(renewable), take(background))
}

/// One-day sub-window covering hours `[24 * day_index, 24 * (day_index + 1))`.
pub fn slice_window(window: &DataWindow, day_index: usize) -> Result<DataWindow, DataError> {
    slice_days(window, day_index, 1)
}

/// `days` consecutive days starting at `first_day`.
pub fn slice_days(window: &DataWindow, first_day: usize, days: usize) -> Result<DataWindow, DataError> {
    if days == 0 {
        return Err(DataError::InvalidWindow("slice must cover at least one day".into()));
    }
    let last = first_day + days - 1;
    if last >= window.days {
        return Err(DataError::IndexOutOfRange {
            index: last,
            days: window.days,
        });
    }
    let range = first_day * HOURS_PER_DAY..(last + 1) * HOURS_PER_DAY;
    Ok(DataWindow {
        start_hour: window.start_hour + range.start as i64,
        days,
        price: window.price[range.clone()].to_vec(),
        renewable: window.renewable[range.clone()].to_vec(),
        background: window.background[range].to_vec(),
    })
}

// Diurnal price shape in $/kWh: flat, fairly expensive night, a morning
// shoulder, a mid-day trough and the evening peak.
const PRICE_SHAPE: [f64; HOURS_PER_DAY] = [
    0.090, 0.089, 0.088, 0.088, 0.089, 0.090, 0.091, // 0-6
    0.075, 0.060, 0.045, 0.032, 0.026, 0.022, 0.020, // 7-13
    0.024, 0.030, 0.045, 0.070, 0.095, 0.099, 0.097, // 14-20
    0.093, 0.091, 0.090, // 21-23
];

// Background load in kW with morning and evening bumps.
const BACKGROUND_SHAPE: [f64; HOURS_PER_DAY] = [
    0.35, 0.30, 0.28, 0.27, 0.27, 0.30, 0.45, // 0-6
    0.85, 0.95, 0.60, 0.45, 0.40, 0.50, 0.45, // 7-13
    0.40, 0.40, 0.50, 0.80, 1.20, 1.30, 1.10, // 14-20
    0.80, 0.55, 0.40, // 21-23
];

const SOLAR_PEAK_KW: f64 = 3.0;
const SOLAR_FIRST_HOUR: usize = 7;
const SOLAR_LAST_HOUR: usize = 19;

/// Clear-sky generation profile: zero outside hours 7..=19, peaking at 13:00.
fn solar_shape(hour: usize) -> f64 {
    if !(SOLAR_FIRST_HOUR..=SOLAR_LAST_HOUR).contains(&hour) {
        return 0.0;
    }
    let phase = (hour as f64 - 6.0) / 14.0;
    SOLAR_PEAK_KW * (std::f64::consts::PI * phase).sin()
}

/// Deterministic synthetic window.
///
/// Prices stay in `[0.01, 0.10]` $/kWh with the trough in the middle of the
/// day, renewable output stays in `[0, 3]` kW and is zero at night, and
/// background load stays in `[0.1, 1.5]` kW. Each day draws its own cloud
/// factor and small per-hour perturbations.
pub fn synthesize(seed: u64, days: usize) -> DataWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hours = days * HOURS_PER_DAY;
    let mut price = Vec::with_capacity(hours);
    let mut renewable = Vec::with_capacity(hours);
    let mut background = Vec::with_capacity(hours);
    for _ in 0..days {
        let clouds: f64 = rng.gen_range(0.85..=1.0);
        let price_level: f64 = rng.gen_range(0.97..=1.03);
        for hour in 0..HOURS_PER_DAY {
            let p = PRICE_SHAPE[hour] * price_level * rng.gen_range(0.98..=1.02);
            price.push(p.clamp(0.01, 0.10));
            let r = solar_shape(hour) * clouds * rng.gen_range(0.95..=1.0);
            renewable.push(r.clamp(0.0, SOLAR_PEAK_KW));
            let b = BACKGROUND_SHAPE[hour] * rng.gen_range(0.9..=1.1);
            background.push(b.clamp(0.1, 1.5));
        }
    }
    DataWindow {
        start_hour: 0,
        days,
        price,
        renewable,
        background,
    }
}
