//! Append-only time-series storage with archival downsampling.
//!
//! Each series keeps raw points plus archived buckets `{min, max, mean, count}`.
//! On disk a series is two files in the store directory:
//!
//! ```text
//! <hex station id>.<sensor>.raw   16-byte records: ts i64 LE, value f64 LE
//! <hex station id>.<sensor>.bkt   48-byte records: start, width, min, max, mean, count
//! ```
//!
//! Raw files only grow, except when archival rewrites them (temp file plus
//! rename) after the buckets covering the removed points are synced. Raw
//! points that fall inside already archived buckets are ignored and dropped
//! at the next open or archival pass, so an interrupted archival converges.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reading::SensorKind;

const RAW_RECORD: usize = 16;
const BUCKET_RECORD: usize = 48;
const DAY_S: i64 = 86_400;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("series {0} not found")]
    NotFound(SeriesKey),
    #[error("out-of-order point at {ts} for {key}; last stored timestamp is {last}")]
    OutOfOrder { key: SeriesKey, ts: i64, last: i64 },
    #[error("conflicting value at {ts} for {key}: stored {stored}, received {received}")]
    Conflict {
        key: SeriesKey,
        ts: i64,
        stored: f64,
        received: f64,
    },
    #[error("invalid range: from {from} is after to {to}")]
    Range { from: i64, to: i64 },
    #[error("invalid retention policy: {0}")]
    Policy(String),
    #[error("corrupt store file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("report needs at least one series")]
    EmptyReport,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeriesKey {
    pub station_id: String,
    pub sensor_kind: SensorKind,
}

impl SeriesKey {
    pub fn new(station_id: impl Into<String>, sensor_kind: SensorKind) -> Self {
        SeriesKey {
            station_id: station_id.into(),
            sensor_kind,
        }
    }

    fn file_stem(&self) -> String {
        let hex: String = self.station_id.bytes().map(|b| format!("{b:02x}")).collect();
        format!("{hex}.{}", self.sensor_kind.as_str())
    }

    fn from_file_stem(stem: &str) -> Option<SeriesKey> {
        let (hex, sensor) = stem.split_once('.')?;
        if hex.len() % 2 != 0 {
            return None;
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).ok())
            .collect::<Option<Vec<u8>>>()?;
        Some(SeriesKey {
            station_id: String::from_utf8(bytes).ok()?,
            sensor_kind: sensor.parse().ok()?,
        })
    }
}

impl std::fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.station_id, self.sensor_kind)
    }
}

impl std::str::FromStr for SeriesKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (station, sensor) = s.rsplit_once(':').ok_or_else(|| format!("expected station:sensor, got `{s}`"))?;
        let sensor_kind = sensor.parse().map_err(|e| format!("{e}"))?;
        Ok(SeriesKey::new(station, sensor_kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub ts: i64,
    pub value: f64,
}

/// Aggregate over `[start, start + width)`. Raw points appear as width-0
/// aggregates with count 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub start: i64,
    pub width: i64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub count: u64,
}

impl Bucket {
    fn from_point(p: Point) -> Bucket {
        Bucket {
            start: p.ts,
            width: 0,
            min: p.value,
            max: p.value,
            mean: p.value,
            count: 1,
        }
    }

    pub fn end(&self) -> i64 {
        self.start + self.width
    }

    fn to_bytes(self) -> [u8; BUCKET_RECORD] {
        let mut out = [0u8; BUCKET_RECORD];
        out[0..8].copy_from_slice(&self.start.to_le_bytes());
        out[8..16].copy_from_slice(&self.width.to_le_bytes());
        out[16..24].copy_from_slice(&self.min.to_le_bytes());
        out[24..32].copy_from_slice(&self.max.to_le_bytes());
        out[32..40].copy_from_slice(&self.mean.to_le_bytes());
        out[40..48].copy_from_slice(&self.count.to_le_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Bucket {
        let i = |r: std::ops::Range<usize>| i64::from_le_bytes(b[r].try_into().expect("8 bytes"));
        let f = |r: std::ops::Range<usize>| f64::from_le_bytes(b[r].try_into().expect("8 bytes"));
        Bucket {
            start: i(0..8),
            width: i(8..16),
            min: f(16..24),
            max: f(24..32),
            mean: f(32..40),
            count: u64::from_le_bytes(b[40..48].try_into().expect("8 bytes")),
        }
    }
}

/// Running `{min, max, sum, count}` merge.
#[derive(Debug, Clone, Copy)]
struct Accumulator {
    start: i64,
    width: i64,
    min: f64,
    max: f64,
    sum: f64,
    count: u64,
}

impl Accumulator {
    fn new(start: i64, width: i64) -> Self {
        Accumulator {
            start,
            width,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, b: &Bucket) {
        self.min = self.min.min(b.min);
        self.max = self.max.max(b.max);
        self.sum += b.mean * b.count as f64;
        self.count += b.count;
    }

    fn finish(self) -> Bucket {
        Bucket {
            start: self.start,
            width: self.width,
            min: self.min,
            max: self.max,
            mean: self.sum / self.count as f64,
            count: self.count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Raw,
    Hourly,
    Daily,
}

impl Granularity {
    pub fn seconds(self) -> i64 {
        match self {
            Granularity::Raw => 0,
            Granularity::Hourly => 3600,
            Granularity::Daily => DAY_S,
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::Raw => "raw",
            Granularity::Hourly => "hourly",
            Granularity::Daily => "daily",
        })
    }
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Granularity::Raw),
            "hourly" => Ok(Granularity::Hourly),
            "daily" => Ok(Granularity::Daily),
            other => Err(format!("unknown aggregate `{other}` (raw|hourly|daily)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetentionPolicy {
    pub raw_horizon_days: u32,
    pub bucket_width_s: i64,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy {
            raw_horizon_days: 90,
            bucket_width_s: 3600,
        }
    }
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.bucket_width_s <= 0 || DAY_S % self.bucket_width_s != 0 {
            return Err(StoreError::Policy(format!(
                "bucket width {} s does not divide a day",
                self.bucket_width_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Stored,
    /// Identical point already present.
    Duplicate,
}

#[derive(Default)]
struct Series {
    raw: Vec<Point>,
    buckets: Vec<Bucket>,
    raw_file: Option<File>,
}

impl Series {
    fn archived_until(&self) -> i64 {
        self.buckets.last().map_or(i64::MIN, Bucket::end)
    }

    fn last_ts(&self) -> Option<i64> {
        let raw = self.raw.last().map(|p| p.ts);
        let bucket = self.buckets.last().map(|b| b.end() - 1);
        raw.max(bucket)
    }

    fn live_raw(&self) -> &[Point] {
        let cut = self.archived_until();
        let idx = self.raw.partition_point(|p| p.ts < cut);
        &self.raw[idx..]
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StoreOptions {
    /// fsync every append before acknowledging.
    pub sync: bool,
}

pub struct Store {
    dir: Option<PathBuf>,
    options: StoreOptions,
    series: RwLock<BTreeMap<SeriesKey, Arc<RwLock<Series>>>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            dir: None,
            options: StoreOptions::default(),
            series: RwLock::new(BTreeMap::new()),
        }
    }

    /// Opens (or creates) a store directory, finishing any interrupted archival.
    pub fn open(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut stems = BTreeSet::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".raw").or_else(|| name.strip_suffix(".bkt")) {
                stems.insert(stem.to_string());
            }
        }
        let store = Store {
            dir: Some(dir.clone()),
            options,
            series: RwLock::new(BTreeMap::new()),
        };
        for stem in stems {
            let Some(key) = SeriesKey::from_file_stem(&stem) else {
                continue;
            };
            let raw = read_records(&dir.join(format!("{stem}.raw")), RAW_RECORD)?
                .iter()
                .map(|b| Point {
                    ts: i64::from_le_bytes(b[0..8].try_into().expect("8 bytes")),
                    value: f64::from_le_bytes(b[8..16].try_into().expect("8 bytes")),
                })
                .collect();
            let buckets = read_records(&dir.join(format!("{stem}.bkt")), BUCKET_RECORD)?
                .iter()
                .map(|b| Bucket::from_bytes(b))
                .collect();
            let mut series = Series {
                raw,
                buckets,
                raw_file: None,
            };
            if series.live_raw().len() != series.raw.len() {
                series.raw = series.live_raw().to_vec();
                store.rewrite_raw(&key, &series.raw)?;
            }
            series.raw_file = Some(store.open_raw(&key)?);
            store.series.write().expect("lock").insert(key, Arc::new(RwLock::new(series)));
        }
        Ok(store)
    }

    fn path(&self, key: &SeriesKey, ext: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.{ext}", key.file_stem())))
    }

    fn open_raw(&self, key: &SeriesKey) -> Result<File, StoreError> {
        let path = self.path(key, "raw").expect("persistent store");
        Ok(OpenOptions::new().create(true).append(true).open(path)?)
    }

    fn rewrite_raw(&self, key: &SeriesKey, points: &[Point]) -> Result<(), StoreError> {
        let Some(path) = self.path(key, "raw") else {
            return Ok(());
        };
        let tmp = path.with_extension("raw.tmp");
        let mut f = File::create(&tmp)?;
        let mut buf = Vec::with_capacity(points.len() * RAW_RECORD);
        for p in points {
            buf.extend_from_slice(&p.ts.to_le_bytes());
            buf.extend_from_slice(&p.value.to_le_bytes());
        }
        f.write_all(&buf)?;
        f.sync_all()?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn series_handle(&self, key: &SeriesKey) -> Option<Arc<RwLock<Series>>> {
        self.series.read().expect("lock").get(key).cloned()
    }

    fn series_or_create(&self, key: &SeriesKey) -> Result<Arc<RwLock<Series>>, StoreError> {
        if let Some(s) = self.series_handle(key) {
            return Ok(s);
        }
        let mut map = self.series.write().expect("lock");
        if let Some(s) = map.get(key) {
            return Ok(s.clone());
        }
        let raw_file = match self.dir {
            Some(_) => Some(self.open_raw(key)?),
            None => None,
        };
        let s = Arc::new(RwLock::new(Series {
            raw_file,
            ..Series::default()
        }));
        map.insert(key.clone(), s.clone());
        Ok(s)
    }

    pub fn keys(&self) -> Vec<SeriesKey> {
        self.series.read().expect("lock").keys().cloned().collect()
    }

    pub fn last_timestamp(&self, key: &SeriesKey) -> Option<i64> {
        self.series_handle(key)?.read().expect("lock").last_ts()
    }

    /// Appends one point. The point is written to the series file before
    /// this returns.
    pub fn append(&self, key: &SeriesKey, point: Point) -> Result<Ack, StoreError> {
        let handle = self.series_or_create(key)?;
        let mut series = handle.write().expect("lock");
        if let Some(last) = series.last_ts() {
            if point.ts <= last {
                if point.ts < series.archived_until() {
                    return Err(StoreError::OutOfOrder {
                        key: key.clone(),
                        ts: point.ts,
                        last,
                    });
                }
                return match series.raw.binary_search_by_key(&point.ts, |p| p.ts) {
                    Ok(i) if series.raw[i].value.to_bits() == point.value.to_bits() => Ok(Ack::Duplicate),
                    Ok(i) => Err(StoreError::Conflict {
                        key: key.clone(),
                        ts: point.ts,
                        stored: series.raw[i].value,
                        received: point.value,
                    }),
                    Err(_) => Err(StoreError::OutOfOrder {
                        key: key.clone(),
                        ts: point.ts,
                        last,
                    }),
                };
            }
        }
        if let Some(f) = series.raw_file.as_mut() {
            let mut rec = [0u8; RAW_RECORD];
            rec[0..8].copy_from_slice(&point.ts.to_le_bytes());
            rec[8..16].copy_from_slice(&point.value.to_le_bytes());
            f.write_all(&rec)?;
            if self.options.sync {
                f.sync_data()?;
            }
        }
        series.raw.push(point);
        Ok(Ack::Stored)
    }

    /// Points or buckets with start in `[from, to)`, archived region first.
    pub fn query(&self, key: &SeriesKey, from: i64, to: i64, granularity: Granularity) -> Result<Vec<Bucket>, StoreError> {
        if from > to {
            return Err(StoreError::Range { from, to });
        }
        let handle = self.series_handle(key).ok_or_else(|| StoreError::NotFound(key.clone()))?;
        let series = handle.read().expect("lock");
        let archived = series
            .buckets
            .iter()
            .filter(|b| b.start >= from && b.start < to)
            .copied();
        let raw = series
            .live_raw()
            .iter()
            .filter(|p| p.ts >= from && p.ts < to)
            .map(|p| Bucket::from_point(*p));
        let fine: Vec<Bucket> = archived.chain(raw).collect();
        let width = granularity.seconds();
        if width == 0 {
            return Ok(fine);
        }
        let mut out: Vec<Bucket> = Vec::new();
        let mut acc: Option<Accumulator> = None;
        for b in fine {
            if b.width > width {
                if let Some(a) = acc.take() {
                    out.push(a.finish());
                }
                out.push(b);
                continue;
            }
            let start = b.start.div_euclid(width) * width;
            match acc.as_mut() {
                Some(a) if a.start == start => a.add(&b),
                _ => {
                    if let Some(a) = acc.take() {
                        out.push(a.finish());
                    }
                    let mut a = Accumulator::new(start, width);
                    a.add(&b);
                    acc = Some(a);
                }
            }
        }
        if let Some(a) = acc {
            out.push(a.finish());
        }
        Ok(out)
    }

    /// Raw values in `[from, to)`; archived regions contribute nothing.
    pub fn raw_points(&self, key: &SeriesKey, from: i64, to: i64) -> Vec<Point> {
        let Some(handle) = self.series_handle(key) else {
            return Vec::new();
        };
        let series = handle.read().expect("lock");
        series
            .live_raw()
            .iter()
            .filter(|p| p.ts >= from && p.ts < to)
            .copied()
            .collect()
    }

    /// Collapses raw points older than the horizon into buckets. Returns the
    /// number of raw points archived.
    pub fn downsample(&self, key: &SeriesKey, policy: &RetentionPolicy, now: i64) -> Result<u64, StoreError> {
        self.downsample_inner(key, policy, now, true)
    }

    /// Archives every series.
    pub fn downsample_all(&self, policy: &RetentionPolicy, now: i64) -> Result<u64, StoreError> {
        let mut total = 0;
        for key in self.keys() {
            total += self.downsample(&key, policy, now)?;
        }
        Ok(total)
    }

    fn downsample_inner(&self, key: &SeriesKey, policy: &RetentionPolicy, now: i64, delete_raw: bool) -> Result<u64, StoreError> {
        policy.validate()?;
        let Some(handle) = self.series_handle(key) else {
            return Ok(0);
        };
        let mut series = handle.write().expect("lock");
        let width = policy.bucket_width_s;
        let horizon = now - policy.raw_horizon_days as i64 * DAY_S;
        let cutoff = horizon.div_euclid(width) * width;

        let live_from = series.raw.partition_point(|p| p.ts < series.archived_until());
        let live_to = series.raw.partition_point(|p| p.ts < cutoff).max(live_from);
        let to_archive = &series.raw[live_from..live_to];
        let mut fresh: Vec<Bucket> = Vec::new();
        for p in to_archive {
            let start = p.ts.div_euclid(width) * width;
            match fresh.last_mut() {
                Some(b) if b.start == start => {
                    b.min = b.min.min(p.value);
                    b.max = b.max.max(p.value);
                    // Running sum kept in `mean` until the bucket closes.
                    b.mean += p.value;
                    b.count += 1;
                }
                _ => fresh.push(Bucket {
                    start,
                    width,
                    min: p.value,
                    max: p.value,
                    mean: p.value,
                    count: 1,
                }),
            }
        }
        for b in &mut fresh {
            b.mean /= b.count as f64;
        }
        let archived = to_archive.len() as u64;

        if let Some(path) = self.path(key, "bkt") {
            if !fresh.is_empty() {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                let mut buf = Vec::with_capacity(fresh.len() * BUCKET_RECORD);
                for b in &fresh {
                    buf.extend_from_slice(&b.to_bytes());
                }
                f.write_all(&buf)?;
                f.sync_all()?;
            }
        }
        series.buckets.extend(fresh);
        if !delete_raw {
            return Ok(archived);
        }
        let keep_from = series.raw.partition_point(|p| p.ts < series.archived_until());
        if keep_from > 0 {
            let kept = series.raw.split_off(keep_from);
            series.raw = kept;
            if self.dir.is_some() {
                self.rewrite_raw(key, &series.raw)?;
                series.raw_file = Some(self.open_raw(key)?);
            }
        }
        Ok(archived)
    }

    /// Runs only the bucket-writing half of archival, leaving raw points in
    /// place as a crash between the two phases would.
    #[doc(hidden)]
    pub fn downsample_without_raw_deletion(&self, key: &SeriesKey, policy: &RetentionPolicy, now: i64) -> Result<u64, StoreError> {
        self.downsample_inner(key, policy, now, false)
    }

    /// Number of raw points physically held for a series, archived or not.
    #[doc(hidden)]
    pub fn raw_len(&self, key: &SeriesKey) -> usize {
        self.series_handle(key).map_or(0, |h| h.read().expect("lock").raw.len())
    }

    /// Tabular export, one row per distinct timestamp/bucket start and one
    /// column per series. RFC 4180 CSV with ISO-8601 UTC timestamps.
    pub fn export_report(&self, keys: &[SeriesKey], from: i64, to: i64, layout: &ReportLayout) -> Result<String, StoreError> {
        if keys.is_empty() {
            return Err(StoreError::EmptyReport);
        }
        let mut rows: BTreeMap<i64, Vec<Option<f64>>> = BTreeMap::new();
        for (col, key) in keys.iter().enumerate() {
            for b in self.query(key, from, to, layout.granularity)? {
                let cells = rows.entry(b.start).or_insert_with(|| vec![None; keys.len()]);
                cells[col] = Some(layout.stat.pick(&b));
            }
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let mut header = vec!["timestamp".to_string()];
        header.extend(keys.iter().map(|k| layout.column_name(k)));
        w.write_record(&header)?;
        for (ts, cells) in rows {
            let mut record = vec![iso8601(ts)];
            record.extend(cells.into_iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&record)?;
        }
        let bytes = w.into_inner().map_err(|e| StoreError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn read_records(path: &Path, size: usize) -> Result<Vec<Vec<u8>>, StoreError> {
    let mut data = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut data)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }
    // A torn trailing record from a crash mid-write is dropped.
    let whole = data.len() / size * size;
    let records: Vec<Vec<u8>> = data[..whole].chunks(size).map(<[u8]>::to_vec).collect();
    let ts = |r: &[u8]| i64::from_le_bytes(r[..8].try_into().expect("8 bytes"));
    if records.windows(2).any(|w| ts(&w[0]) >= ts(&w[1])) {
        return Err(StoreError::Corrupt {
            path: path.to_path_buf(),
            reason: "timestamps not increasing".into(),
        });
    }
    Ok(records)
}

/// Parses epoch seconds, RFC 3339, `YYYY-MM-DDTHH:MM:SS` (UTC) or a bare
/// `YYYY-MM-DD` (UTC midnight).
pub fn parse_time(s: &str) -> Result<i64, String> {
    let s = s.trim();
    if let Ok(ts) = s.parse::<i64>() {
        return Ok(ts);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(dt.and_utc().timestamp());
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp());
    }
    Err(format!("cannot parse `{s}` as a time (epoch seconds or ISO-8601)"))
}

pub fn iso8601(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    Mean,
    Min,
    Max,
    Count,
}

impl Stat {
    fn pick(self, b: &Bucket) -> f64 {
        match self {
            Stat::Mean => b.mean,
            Stat::Min => b.min,
            Stat::Max => b.max,
            Stat::Count => b.count as f64,
        }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stat::Mean => "mean",
            Stat::Min => "min",
            Stat::Max => "max",
            Stat::Count => "count",
        })
    }
}

impl std::str::FromStr for Stat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Stat::Mean),
            "min" => Ok(Stat::Min),
            "max" => Ok(Stat::Max),
            "count" => Ok(Stat::Count),
            other => Err(format!("unknown statistic `{other}` (mean|min|max|count)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportLayout {
    pub granularity: Granularity,
    pub stat: Stat,
}

impl Default for ReportLayout {
    fn default() -> Self {
        ReportLayout {
            granularity: Granularity::Raw,
            stat: Stat::Mean,
        }
    }
}

impl ReportLayout {
    fn column_name(&self, key: &SeriesKey) -> String {
        match self.granularity {
            Granularity::Raw => key.to_string(),
            _ => format!("{key}:{}", self.stat),
        }
    }
}
