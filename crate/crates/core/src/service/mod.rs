//! The back-end: ingestion, derived metrics, alerts, forecasts, advisories,
//! observations and role enforcement. [`http`] exposes it over HTTP.

pub mod alerts;
pub mod config;
pub mod derive;
pub mod http;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agromet::{dew_point, gdd_daily, heat_index};
use crate::irrigation::{
    apply_irrigation_event, recommend, update_balance, IrrigationRecommendation, KcTable, WaterBalanceState, WaterDay,
};
use crate::phenology::{
    bbch_label, estimate_stage, norms_from_history, project_harvest, recalibrate, ObservationRecord, StageDelta,
    StageEstimate, StageRange, VarietyProfile,
};
use crate::reading::{Reading, SensorKind};
use crate::risk::{
    botrytis_flag, downy_mildew_risk, frost_risk, insect_stage, spray_window, wind_spread_sector, FrostAssessment,
    HourlyConditions, InsectStage, PowderyMildewState, RiskKind, RiskScore, SpreadSector,
};
use crate::store::{Ack, Bucket, Granularity, Point, ReportLayout, SeriesKey, Store, StoreError, StoreOptions};
use crate::wire::{decode_batch, WireError};

pub use alerts::{Alert, AlertRule, AlertState, Comparator, Severity};
pub use config::{BlockConfig, Config, ConfigError, Models, Role, StationSite, UserAccount, CONFIG_ENV};
pub use derive::{daily_metrics, metrics_table, DailyMetrics};

use alerts::{AckError, AlertBook, WindowSamples};
use derive::{pair_series, series_items};

const DAY_S: i64 = 86_400;
const MAX_METRIC_DAYS: u64 = 3660;
/// Look-back for "current" paired readings (dew point, inversion).
const CURRENT_LOOKBACK_S: i64 = 3 * 3600;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::Forbidden(_) => "forbidden",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Validation(_) => "validation",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Store(_) => "storage",
            ServiceError::Config(_) => "config",
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(k) => ServiceError::NotFound(format!("series {k}")),
            StoreError::Range { .. } | StoreError::EmptyReport => ServiceError::Validation(e.to_string()),
            other => ServiceError::Store(other),
        }
    }
}

/// What an alert rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Sensor(SensorKind),
    DewPoint,
    HeatIndex,
    Inversion,
    ForecastTmin,
    PowderyMildewIndex,
    GddCumulative,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Metric, String> {
        Ok(match s {
            "dew_point" => Metric::DewPoint,
            "heat_index" => Metric::HeatIndex,
            "inversion" => Metric::Inversion,
            "forecast_tmin" => Metric::ForecastTmin,
            "powdery_mildew_index" => Metric::PowderyMildewIndex,
            "gdd_cumulative" => Metric::GddCumulative,
            other => Metric::Sensor(other.parse().map_err(|_| format!("unknown metric `{other}`"))?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    #[default]
    Hourly,
    Daily,
}

impl Resolution {
    pub fn seconds(self) -> i64 {
        match self {
            Resolution::Hourly => 3600,
            Resolution::Daily => DAY_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastEntry {
    /// Start of the period, epoch seconds.
    pub time: i64,
    #[serde(default)]
    pub tmin: Option<f64>,
    #[serde(default)]
    pub tmax: Option<f64>,
    #[serde(default)]
    pub rain_mm: f64,
    /// Probability of rain, %.
    #[serde(default)]
    pub rain_prob: f64,
    /// m/s
    #[serde(default)]
    pub wind: f64,
}

/// One vineyard-wide forecast issuance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRecord {
    pub issued_at: i64,
    #[serde(default)]
    pub resolution: Resolution,
    pub entries: Vec<ForecastEntry>,
}

impl ForecastRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.entries.is_empty() {
            return Err("forecast has no entries".into());
        }
        if self.entries.windows(2).any(|w| w[0].time >= w[1].time) {
            return Err("forecast entries must be sorted by strictly increasing time".into());
        }
        for e in &self.entries {
            let finite = [e.rain_mm, e.rain_prob, e.wind]
                .into_iter()
                .chain(e.tmin)
                .chain(e.tmax)
                .all(f64::is_finite);
            if !finite {
                return Err(format!("entry at {}: non-finite value", e.time));
            }
            if e.rain_mm < 0.0 || e.wind < 0.0 || !(0.0..=100.0).contains(&e.rain_prob) {
                return Err(format!("entry at {}: rain, wind or probability out of range", e.time));
            }
            if let (Some(lo), Some(hi)) = (e.tmin, e.tmax) {
                if lo > hi {
                    return Err(format!("entry at {}: tmin above tmax", e.time));
                }
            }
        }
        Ok(())
    }

    /// Entries whose period overlaps `(from, to]`.
    fn overlapping(&self, from: i64, to: i64) -> impl Iterator<Item = &ForecastEntry> {
        let width = self.resolution.seconds();
        self.entries.iter().filter(move |e| e.time + width > from && e.time <= to)
    }
}

/// The inputs behind an advisory response.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub as_of: i64,
    pub station_id: String,
    pub series: Vec<String>,
    pub days: usize,
    pub days_without_data: usize,
    pub first_sample_at: Option<i64>,
    pub last_sample_at: Option<i64>,
    pub forecast_issued_at: Option<i64>,
    pub degraded: Vec<String>,
}

impl Provenance {
    fn new(as_of: i64, station: &str) -> Self {
        Provenance {
            as_of,
            station_id: station.to_string(),
            ..Provenance::default()
        }
    }

    fn uses(&mut self, station: &str, kinds: &[SensorKind]) {
        self.series.extend(kinds.iter().map(|k| SeriesKey::new(station, *k).to_string()));
    }

    fn saw(&mut self, ts: i64) {
        self.first_sample_at = Some(self.first_sample_at.map_or(ts, |f| f.min(ts)));
        self.last_sample_at = Some(self.last_sample_at.map_or(ts, |l| l.max(ts)));
    }

    fn saw_days(&mut self, days: &[Arc<DailyMetrics>]) {
        self.days = days.len();
        self.days_without_data = days.iter().filter(|d| !d.has_data()).count();
        for d in days {
            if let Some(last) = d.last_sample_at {
                self.saw(last);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub line: usize,
    pub status: RecordStatus,
    /// Set when an identical point was already stored.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub results: Vec<RecordOutcome>,
    pub alerts_fired: Vec<Alert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesInfo {
    pub key: String,
    pub station_id: String,
    pub sensor: SensorKind,
    pub last_ts: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesData {
    pub key: String,
    pub aggregate: Granularity,
    pub points: Vec<Bucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAdvisory {
    pub block_id: String,
    pub profile: String,
    pub calibrated: bool,
    pub norms: String,
    pub estimate: StageEstimate,
    pub bbch: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothetical {
    pub amount_mm: f64,
    pub deficit_mm: f64,
    pub recommendation: IrrigationRecommendation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrigationAdvisory {
    pub block_id: String,
    pub state: WaterBalanceState,
    pub recommendation: IrrigationRecommendation,
    pub forecast_rain_48h: f64,
    pub deficit_series: Vec<(NaiveDate, f64)>,
    pub hypothetical: Option<Hypothetical>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsectAdvisory {
    pub species: String,
    pub biofix: Option<NaiveDate>,
    pub cumulative_dd: f64,
    pub stage: InsectStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAdvisory {
    pub station_id: String,
    pub date: NaiveDate,
    pub powdery_mildew: RiskScore,
    pub downy_mildew: RiskScore,
    pub botrytis: Option<RiskScore>,
    pub insect: InsectAdvisory,
    pub wind_spread: SpreadSector,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrostAdvisory {
    pub station_id: String,
    pub assessment: FrostAssessment,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vigor {
    pub ndvi: f64,
    pub low_vigor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayWindow {
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprayAdvisory {
    pub station_id: String,
    pub windows: Vec<SprayWindow>,
    pub vigor: Option<Vigor>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReport {
    pub acknowledged: bool,
    pub observation: ObservationRecord,
    pub deltas: Vec<StageDelta>,
    pub stages: Vec<StageRange>,
}

struct SeasonDay {
    metrics: Arc<DailyMetrics>,
    cumulative_gdd: f64,
}

pub struct Service {
    config: Config,
    profiles: BTreeMap<String, VarietyProfile>,
    blocks: BTreeMap<String, BlockConfig>,
    users: HashMap<String, UserAccount>,
    store: Store,
    stations: RwLock<BTreeMap<String, StationSite>>,
    latest: RwLock<HashMap<String, i64>>,
    rules: RwLock<BTreeMap<String, AlertRule>>,
    alerts: Mutex<AlertBook>,
    forecasts: RwLock<BTreeMap<i64, ForecastRecord>>,
    observations: RwLock<BTreeMap<String, Vec<ObservationRecord>>>,
    calibrated: RwLock<BTreeMap<String, VarietyProfile>>,
    daily_cache: Mutex<HashMap<(String, NaiveDate), Arc<DailyMetrics>>>,
}

impl Service {
    pub fn new(config: Config) -> Result<Service, ServiceError> {
        config.validate()?;
        let store = match &config.storage.path {
            Some(path) => Store::open(path, StoreOptions { sync: config.storage.fsync })?,
            None => Store::in_memory(),
        };
        Service::with_store(config, store)
    }

    pub fn with_store(config: Config, store: Store) -> Result<Service, ServiceError> {
        config.validate()?;
        let mut latest = HashMap::new();
        for key in store.keys() {
            if let Some(ts) = store.last_timestamp(&key) {
                let e = latest.entry(key.station_id.clone()).or_insert(ts);
                *e = (*e).max(ts);
            }
        }
        let mut stations: BTreeMap<String, StationSite> =
            config.stations.iter().map(|s| (s.id.clone(), s.clone())).collect();
        if config.ingest.auto_register {
            for key in store.keys() {
                stations
                    .entry(key.station_id.clone())
                    .or_insert_with(|| StationSite::unconfigured(&key.station_id));
            }
        }
        Ok(Service {
            profiles: config.profile_map(),
            blocks: config.blocks.iter().map(|b| (b.id.clone(), b.clone())).collect(),
            users: config.users.iter().map(|u| (u.token.clone(), u.clone())).collect(),
            rules: RwLock::new(config.alert_rules.iter().map(|r| (r.rule_id.clone(), r.clone())).collect()),
            stations: RwLock::new(stations),
            latest: RwLock::new(latest),
            store,
            alerts: Mutex::new(AlertBook::default()),
            forecasts: RwLock::new(BTreeMap::new()),
            observations: RwLock::new(BTreeMap::new()),
            calibrated: RwLock::new(BTreeMap::new()),
            daily_cache: Mutex::new(HashMap::new()),
            config,
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn authenticate(&self, token: &str) -> Result<UserAccount, ServiceError> {
        self.users.get(token).cloned().ok_or(ServiceError::Unauthorized)
    }

    pub fn require(user: &UserAccount, role: Role, action: &str) -> Result<(), ServiceError> {
        if user.role < role {
            return Err(ServiceError::Forbidden(format!(
                "{action} needs the {role:?} role; {} is {:?}",
                user.id, user.role
            )));
        }
        Ok(())
    }

    pub fn station(&self, id: &str) -> Result<StationSite, ServiceError> {
        self.stations
            .read()
            .expect("lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("station {id}")))
    }

    pub fn station_ids(&self) -> Vec<String> {
        self.stations.read().expect("lock").keys().cloned().collect()
    }

    fn block(&self, id: &str) -> Result<&BlockConfig, ServiceError> {
        self.blocks.get(id).ok_or_else(|| ServiceError::NotFound(format!("block {id}")))
    }

    /// Latest data time seen for a station, the default as-of for advisories.
    pub fn latest_time(&self, station: &str) -> Option<i64> {
        self.latest.read().expect("lock").get(station).copied()
    }

    fn resolve_as_of(&self, station: &str, as_of: Option<i64>) -> i64 {
        as_of
            .or_else(|| self.latest_time(station))
            .unwrap_or_else(|| chrono::Utc::now().timestamp())
    }

    // ---- ingestion ----

    /// Ingests a newline-delimited wire batch.
    pub fn ingest(&self, user: &UserAccount, body: &str) -> Result<IngestReport, ServiceError> {
        Service::require(user, Role::Operator, "ingest")?;
        let decoded = decode_batch(body);
        let mut lines = Vec::with_capacity(decoded.len());
        let mut readings = Vec::with_capacity(decoded.len());
        let mut early = BTreeMap::new();
        for (line, result) in decoded {
            match result {
                Ok(r) => {
                    lines.push(line);
                    readings.push(r);
                }
                Err(e) => {
                    early.insert(line, e);
                }
            }
        }
        let mut report = self.ingest_readings_at(&readings, &lines);
        for (line, e) in early {
            report.rejected += 1;
            report.results.push(reject(line, e.code(), wire_message(&e)));
        }
        report.results.sort_by_key(|r| r.line);
        Ok(report)
    }

    /// Ingests already-decoded readings; result lines are 1-based indices.
    pub fn ingest_readings(&self, user: &UserAccount, readings: &[Reading]) -> Result<IngestReport, ServiceError> {
        Service::require(user, Role::Operator, "ingest")?;
        let lines: Vec<usize> = (1..=readings.len()).collect();
        Ok(self.ingest_readings_at(readings, &lines))
    }

    fn ingest_readings_at(&self, readings: &[Reading], lines: &[usize]) -> IngestReport {
        let mut report = IngestReport::default();
        let mut touched: BTreeMap<String, i64> = BTreeMap::new();
        let mut stale: BTreeSet<(String, NaiveDate)> = BTreeSet::new();
        for (reading, &line) in readings.iter().zip(lines) {
            if let Err(e) = reading.validate() {
                let e = WireError::from(e);
                report.rejected += 1;
                report.results.push(reject(line, e.code(), wire_message(&e)));
                continue;
            }
            let station = match self.resolve_origin(reading) {
                Ok(s) => s,
                Err(message) => {
                    report.rejected += 1;
                    report.results.push(reject(line, "unknown_station", message));
                    continue;
                }
            };
            let key = SeriesKey::new(reading.station_id.clone(), reading.sensor_kind);
            let point = Point {
                ts: reading.timestamp,
                value: reading.value,
            };
            match self.store.append(&key, point) {
                Ok(ack) => {
                    report.accepted += 1;
                    report.results.push(RecordOutcome {
                        line,
                        status: RecordStatus::Accepted,
                        duplicate: ack == Ack::Duplicate,
                        reason: None,
                        message: None,
                    });
                    if ack == Ack::Stored {
                        stale.insert((station.id.clone(), station.local_date(point.ts)));
                        let t = touched.entry(station.id.clone()).or_insert(point.ts);
                        *t = (*t).max(point.ts);
                    }
                }
                Err(e) => {
                    let code = match e {
                        StoreError::OutOfOrder { .. } => "out_of_order",
                        StoreError::Conflict { .. } => "conflict",
                        _ => "storage",
                    };
                    report.rejected += 1;
                    report.results.push(reject(line, code, e.to_string()));
                }
            }
        }
        {
            let mut cache = self.daily_cache.lock().expect("lock");
            for k in &stale {
                cache.remove(k);
            }
        }
        {
            let mut latest = self.latest.write().expect("lock");
            for (station, ts) in &touched {
                let e = latest.entry(station.clone()).or_insert(*ts);
                *e = (*e).max(*ts);
            }
        }
        for station in touched.keys() {
            let now = self.latest_time(station).expect("just recorded");
            report.alerts_fired.extend(self.evaluate_alerts(station, now));
        }
        report
    }

    /// Station a reading belongs to. Irrigation events may name a block.
    fn resolve_origin(&self, reading: &Reading) -> Result<StationSite, String> {
        if reading.sensor_kind == SensorKind::IrrigationApplied {
            if let Some(block) = self.blocks.get(&reading.station_id) {
                return self.station(&block.station).map_err(|e| e.to_string());
            }
        }
        if let Ok(s) = self.station(&reading.station_id) {
            return Ok(s);
        }
        if self.config.ingest.auto_register {
            let site = StationSite::unconfigured(&reading.station_id);
            self.stations
                .write()
                .expect("lock")
                .entry(site.id.clone())
                .or_insert_with(|| site.clone());
            log::info!("auto-registered station {}", site.id);
            return Ok(site);
        }
        Err(format!("station {} is not configured", reading.station_id))
    }

    // ---- derived metrics ----

    fn day_metrics(&self, site: &StationSite, date: NaiveDate, as_of: i64) -> Arc<DailyMetrics> {
        let cutoff = as_of.saturating_add(1);
        if cutoff < site.day_start(date) + DAY_S {
            return Arc::new(daily_metrics(&self.store, site, date, cutoff, &self.config.models));
        }
        let key = (site.id.clone(), date);
        // Held across the computation so a concurrent ingest's invalidation
        // cannot be overtaken by a stale insert.
        let mut cache = self.daily_cache.lock().expect("lock");
        if let Some(m) = cache.get(&key) {
            return m.clone();
        }
        let m = Arc::new(daily_metrics(&self.store, site, date, cutoff, &self.config.models));
        cache.insert(key, m.clone());
        m
    }

    fn days_between(&self, site: &StationSite, from: NaiveDate, to: NaiveDate, as_of: i64) -> Vec<Arc<DailyMetrics>> {
        from.iter_days()
            .take_while(|d| *d <= to)
            .map(|d| self.day_metrics(site, d, as_of))
            .collect()
    }

    /// Daily metrics for an inclusive range of station-local dates.
    pub fn metrics(&self, station: &str, from: NaiveDate, to: NaiveDate) -> Result<Vec<DailyMetrics>, ServiceError> {
        let site = self.station(station)?;
        if from > to {
            return Err(ServiceError::Validation(format!("from {from} is after to {to}")));
        }
        if to.signed_duration_since(from).num_days() as u64 >= MAX_METRIC_DAYS {
            return Err(ServiceError::Validation("range longer than ten years".into()));
        }
        Ok(self
            .days_between(&site, from, to, i64::MAX - 1)
            .into_iter()
            .map(|m| (*m).clone())
            .collect())
    }

    fn station_season_start(&self, station: &str, year: i32) -> NaiveDate {
        self.blocks
            .values()
            .filter(|b| b.station == station)
            .filter_map(|b| b.season_start_in(year))
            .min()
            .unwrap_or_else(|| NaiveDate::from_ymd_opt(year, 1, 1).expect("valid"))
    }

    fn station_season(&self, site: &StationSite, as_of: i64) -> Vec<Arc<DailyMetrics>> {
        let today = site.local_date(as_of);
        let start = self.station_season_start(&site.id, today.year());
        if start > today {
            return Vec::new();
        }
        self.days_between(site, start, today, as_of)
    }

    fn gdd_cumulative(&self, site: &StationSite, as_of: i64) -> f64 {
        self.station_season(site, as_of).iter().filter_map(|d| d.gdd).sum()
    }

    fn powdery_state(&self, days: &[Arc<DailyMetrics>]) -> PowderyMildewState {
        let mut state = PowderyMildewState::default();
        for d in days {
            state.step(&d.summary.hourly_temps, &self.config.models.powdery_mildew);
        }
        state
    }

    /// Newest issuance at or before `as_of`.
    fn forecast_at(&self, as_of: i64) -> Option<ForecastRecord> {
        self.forecasts
            .read()
            .expect("lock")
            .range(..=as_of)
            .next_back()
            .map(|(_, f)| f.clone())
    }

    fn forecast_tmin(&self, as_of: i64) -> Option<(i64, f64)> {
        let f = self.forecast_at(as_of)?;
        let tmin = f
            .overlapping(as_of, as_of + DAY_S)
            .filter_map(|e| e.tmin.or(e.tmax))
            .reduce(f64::min)?;
        Some((f.issued_at, tmin))
    }

    fn paired(&self, station: &str, a: SensorKind, b: SensorKind, from: i64, to: i64) -> Vec<(i64, f64, f64)> {
        pair_series(
            &series_items(&self.store, station, a, from, to),
            &series_items(&self.store, station, b, from, to),
        )
    }

    fn window_samples(&self, metric: Metric, site: &StationSite, now: i64, window_s: i64) -> WindowSamples {
        let (from, to) = (now - window_s + 1, now + 1);
        let values = match metric {
            Metric::Sensor(kind) => series_items(&self.store, &site.id, kind, from, to)
                .into_iter()
                .map(|b| (b.start, b.mean))
                .collect(),
            Metric::DewPoint => self
                .paired(&site.id, SensorKind::Temperature, SensorKind::RelativeHumidity, from, to)
                .into_iter()
                .filter_map(|(ts, t, h)| Some((ts, dew_point(t, h).ok()?)))
                .collect(),
            Metric::HeatIndex => self
                .paired(&site.id, SensorKind::Temperature, SensorKind::RelativeHumidity, from, to)
                .into_iter()
                .map(|(ts, t, h)| (ts, heat_index(t, h)))
                .collect(),
            Metric::Inversion => self
                .paired(&site.id, SensorKind::TemperatureElevated, SensorKind::Temperature, from, to)
                .into_iter()
                .map(|(ts, e, g)| (ts, e - g))
                .collect(),
            Metric::ForecastTmin => self.forecast_tmin(now).into_iter().collect(),
            Metric::PowderyMildewIndex => {
                let days = self.station_season(site, now);
                vec![(now, self.powdery_state(&days).value())]
            }
            Metric::GddCumulative => vec![(now, self.gdd_cumulative(site, now))],
        };
        WindowSamples { values }
    }

    /// Evaluates every enabled rule for a station at data time `now`.
    pub fn evaluate_alerts(&self, station: &str, now: i64) -> Vec<Alert> {
        let Ok(site) = self.station(station) else {
            return Vec::new();
        };
        let rules: Vec<AlertRule> = self
            .rules
            .read()
            .expect("lock")
            .values()
            .filter(|r| r.applies_to(station))
            .cloned()
            .collect();
        let mut book = self.alerts.lock().expect("lock");
        let mut fired = Vec::new();
        for rule in rules {
            let Ok(metric) = Metric::parse(&rule.metric) else {
                continue;
            };
            let samples = self.window_samples(metric, &site, now, rule.window_s);
            fired.extend(book.evaluate(&rule, station, now, &samples));
        }
        fired
    }

    // ---- rules and alerts ----

    pub fn alert_rules(&self) -> Vec<AlertRule> {
        self.rules.read().expect("lock").values().cloned().collect()
    }

    /// Creates or replaces a rule; concurrent edits are last-writer-wins.
    pub fn upsert_rule(&self, user: &UserAccount, rule: AlertRule) -> Result<AlertRule, ServiceError> {
        Service::require(user, Role::Admin, "editing alert rules")?;
        rule.validate().map_err(ServiceError::Validation)?;
        self.rules.write().expect("lock").insert(rule.rule_id.clone(), rule.clone());
        Ok(rule)
    }

    pub fn alerts(&self, state: Option<AlertState>) -> Vec<Alert> {
        let mut all = self.alerts.lock().expect("lock").list();
        if let Some(s) = state {
            all.retain(|a| a.state == s);
        }
        all
    }

    pub fn acknowledge(&self, user: &UserAccount, alert_id: &str) -> Result<Alert, ServiceError> {
        Service::require(user, Role::Operator, "acknowledging alerts")?;
        self.alerts
            .lock()
            .expect("lock")
            .acknowledge(alert_id, &user.id)
            .map_err(|e| match e {
                AckError::NotFound => ServiceError::NotFound(format!("alert {alert_id}")),
                other => ServiceError::Conflict(other.to_string()),
            })
    }

    // ---- forecasts ----

    pub fn ingest_forecast(&self, user: &UserAccount, record: ForecastRecord) -> Result<Vec<Alert>, ServiceError> {
        Service::require(user, Role::Operator, "posting forecasts")?;
        record.validate().map_err(ServiceError::Validation)?;
        let issued = record.issued_at;
        self.forecasts.write().expect("lock").insert(issued, record);
        let mut fired = Vec::new();
        for station in self.station_ids() {
            let now = self.latest_time(&station).map_or(issued, |t| t.max(issued));
            fired.extend(self.evaluate_alerts(&station, now));
        }
        Ok(fired)
    }

    pub fn latest_forecast(&self) -> Option<ForecastRecord> {
        self.forecasts.read().expect("lock").values().next_back().cloned()
    }

    // ---- series and reports ----

    pub fn series(&self) -> Vec<SeriesInfo> {
        self.store
            .keys()
            .into_iter()
            .map(|k| SeriesInfo {
                key: k.to_string(),
                last_ts: self.store.last_timestamp(&k),
                station_id: k.station_id,
                sensor: k.sensor_kind,
            })
            .collect()
    }

    pub fn series_data(
        &self,
        keys: &[SeriesKey],
        from: i64,
        to: i64,
        aggregate: Granularity,
    ) -> Result<Vec<SeriesData>, ServiceError> {
        keys.iter()
            .map(|k| {
                Ok(SeriesData {
                    key: k.to_string(),
                    aggregate,
                    points: self.store.query(k, from, to, aggregate)?,
                })
            })
            .collect()
    }

    pub fn report(&self, keys: &[SeriesKey], from: i64, to: i64, layout: &ReportLayout) -> Result<String, ServiceError> {
        Ok(self.store.export_report(keys, from, to, layout)?)
    }

    /// Archives raw points past the retention horizon.
    pub fn archive(&self, now: i64) -> Result<u64, ServiceError> {
        let n = self.store.downsample_all(&self.config.retention, now)?;
        if n > 0 {
            self.daily_cache.lock().expect("lock").clear();
        }
        Ok(n)
    }

    // ---- phenology ----

    fn base_profile(&self, block: &BlockConfig) -> VarietyProfile {
        self.calibrated
            .read()
            .expect("lock")
            .get(&block.id)
            .cloned()
            .unwrap_or_else(|| self.profiles[&block.profile].clone())
    }

    /// Previous seasons' daily GDD for the block, when any are stored.
    fn history_norms(&self, block: &BlockConfig, site: &StationSite, profile: &VarietyProfile, year: i32) -> Option<Vec<f64>> {
        let key = SeriesKey::new(site.id.clone(), SensorKind::Temperature);
        let mut seasons = Vec::new();
        for y in (year - 5)..year {
            let Some(start) = block.season_start_in(y) else {
                continue;
            };
            let end = start.checked_add_days(Days::new(365))?;
            let has_data = self
                .store
                .query(&key, site.day_start(start), site.day_start(end), Granularity::Daily)
                .is_ok_and(|b| !b.is_empty());
            if !has_data {
                continue;
            }
            let season = self
                .days_between(site, start, end.pred_opt()?, i64::MAX - 1)
                .iter()
                .filter_map(|d| {
                    let g = gdd_daily(d.summary.t_min?, d.summary.t_max?, profile.base_temp, profile.upper_cap).ok()?;
                    Some((d.date, g))
                })
                .collect();
            seasons.push(season);
        }
        (!seasons.is_empty()).then(|| norms_from_history(&seasons))
    }

    fn block_season(&self, block: &BlockConfig, site: &StationSite, profile: &VarietyProfile, as_of: i64) -> Vec<SeasonDay> {
        let today = site.local_date(as_of);
        let Some(start) = block.season_start_in(today.year()) else {
            return Vec::new();
        };
        if start > today {
            return Vec::new();
        }
        let mut total = 0.0;
        self.days_between(site, start, today, as_of)
            .into_iter()
            .map(|metrics| {
                if let (Some(lo), Some(hi)) = (metrics.summary.t_min, metrics.summary.t_max) {
                    total += gdd_daily(lo, hi, profile.base_temp, profile.upper_cap).unwrap_or(0.0);
                }
                SeasonDay {
                    metrics,
                    cumulative_gdd: total,
                }
            })
            .collect()
    }

    pub fn stage(&self, block_id: &str, as_of: Option<i64>) -> Result<StageAdvisory, ServiceError> {
        let block = self.block(block_id)?;
        let site = self.station(&block.station)?;
        let as_of = self.resolve_as_of(&site.id, as_of);
        let today = site.local_date(as_of);
        let mut profile = self.base_profile(block);
        let norms = match self.history_norms(block, &site, &profile, today.year()) {
            Some(n) => {
                profile.gdd_daily_norms = n;
                "history"
            }
            None => "profile",
        };
        let season = self.block_season(block, &site, &profile, as_of);
        let cumulative = season.last().map_or(0.0, |d| d.cumulative_gdd);
        let mut estimate = estimate_stage(cumulative, &profile);
        estimate.estimated_harvest_date = project_harvest(cumulative, today, &profile);

        let mut provenance = Provenance::new(as_of, &site.id);
        provenance.uses(&site.id, &[SensorKind::Temperature]);
        let days: Vec<Arc<DailyMetrics>> = season.iter().map(|d| d.metrics.clone()).collect();
        provenance.saw_days(&days);
        if provenance.days_without_data > 0 {
            provenance
                .degraded
                .push(format!("{} season days without temperature data", provenance.days_without_data));
        }
        Ok(StageAdvisory {
            block_id: block.id.clone(),
            profile: block.profile.clone(),
            calibrated: self.calibrated.read().expect("lock").contains_key(&block.id),
            norms: norms.into(),
            bbch: bbch_label(estimate.current_stage),
            estimate,
            provenance,
        })
    }

    pub fn submit_observation(&self, user: &UserAccount, mut obs: ObservationRecord) -> Result<ObservationReport, ServiceError> {
        Service::require(user, Role::Operator, "recording observations")?;
        let block = self.block(&obs.block_id)?.clone();
        let site = self.station(&block.station)?;
        if obs.observer.is_empty() {
            obs.observer = user.id.clone();
        }
        let mut stored = self.observations.write().expect("lock");
        let previous = stored.entry(block.id.clone()).or_default();
        if let Some(clash) = previous.iter().find(|p| {
            (p.date < obs.date && p.observed_stage > obs.observed_stage)
                || (p.date > obs.date && p.observed_stage < obs.observed_stage)
        }) {
            return Err(ServiceError::Validation(format!(
                "{} on {} contradicts {} observed on {}",
                obs.observed_stage.as_str(),
                obs.date,
                clash.observed_stage.as_str(),
                clash.date
            )));
        }
        let profile = self.base_profile(&block);
        let end_of_day = site.day_start(obs.date) + DAY_S - 1;
        let season = self.block_season(&block, &site, &profile, end_of_day);
        let mut history: BTreeMap<NaiveDate, f64> = season.iter().map(|d| (d.metrics.date, d.cumulative_gdd)).collect();
        history.entry(obs.date).or_insert(0.0);
        let outcome = recalibrate(&profile, std::slice::from_ref(&obs), &history)
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        previous.push(obs.clone());
        self.calibrated
            .write()
            .expect("lock")
            .insert(block.id.clone(), outcome.profile.clone());
        Ok(ObservationReport {
            acknowledged: true,
            observation: obs,
            deltas: outcome.deltas,
            stages: outcome.profile.stages,
        })
    }

    pub fn observations(&self, block_id: &str) -> Vec<ObservationRecord> {
        self.observations
            .read()
            .expect("lock")
            .get(block_id)
            .cloned()
            .unwrap_or_default()
    }

    // ---- irrigation ----

    fn irrigation_events(&self, block: &BlockConfig, site: &StationSite, date: NaiveDate, as_of: i64) -> Vec<Point> {
        let start = site.day_start(date);
        let end = (start + DAY_S).min(as_of.saturating_add(1));
        let mut events: Vec<Point> = [block.id.as_str(), site.id.as_str()]
            .iter()
            .flat_map(|origin| series_items(&self.store, origin, SensorKind::IrrigationApplied, start, end))
            .map(|b| Point {
                ts: b.start,
                value: b.mean * b.count as f64,
            })
            .collect();
        events.sort_by_key(|p| p.ts);
        events
    }

    pub fn irrigation(
        &self,
        block_id: &str,
        as_of: Option<i64>,
        hypothetical_mm: Option<f64>,
    ) -> Result<IrrigationAdvisory, ServiceError> {
        let block = self.block(block_id)?;
        let site = self.station(&block.station)?;
        let as_of = self.resolve_as_of(&site.id, as_of);
        if hypothetical_mm.is_some_and(|mm| !(mm >= 0.0 && mm.is_finite())) {
            return Err(ServiceError::Validation("hypothetical_mm must be a non-negative number".into()));
        }
        let models = &self.config.models;
        let params = &models.irrigation;
        let kc_table: &KcTable = block.kc.as_ref().unwrap_or(&models.kc);
        let threshold = block.threshold_mm.unwrap_or(params.threshold_mm);
        let efficiency = block.efficiency.unwrap_or(params.efficiency);
        let profile = self.base_profile(block);
        let season = self.block_season(block, &site, &profile, as_of);

        let mut provenance = Provenance::new(as_of, &site.id);
        provenance.uses(
            &site.id,
            &[
                SensorKind::Temperature,
                SensorKind::RelativeHumidity,
                SensorKind::WindSpeed,
                SensorKind::SolarRadiation,
                SensorKind::Rain,
                SensorKind::IrrigationApplied,
            ],
        );
        provenance
            .series
            .push(SeriesKey::new(block.id.clone(), SensorKind::IrrigationApplied).to_string());

        let today = site.local_date(as_of);
        let mut state = WaterBalanceState::new(block.id.clone(), today);
        let mut series = Vec::with_capacity(season.len());
        let mut missing_et0 = 0;
        for day in &season {
            let m = &day.metrics;
            let stage = estimate_stage(day.cumulative_gdd, &profile).current_stage;
            let et0 = m.et0_mm.unwrap_or_else(|| {
                missing_et0 += 1;
                0.0
            });
            let water_day = WaterDay {
                date: m.date,
                et0_mm: et0,
                kc: kc_table.kc_for_stage(stage),
                rain_mm: m.summary.rain_mm.unwrap_or(0.0),
                irrigation_mm: 0.0,
            };
            state = update_balance(&state, &water_day, params).map_err(|e| ServiceError::Validation(e.to_string()))?;
            for event in self.irrigation_events(block, &site, m.date, as_of) {
                provenance.saw(event.ts);
                state = apply_irrigation_event(&state, m.date, event.value)
                    .map_err(|e| ServiceError::Validation(e.to_string()))?;
            }
            series.push((m.date, state.deficit_mm));
        }
        let days: Vec<Arc<DailyMetrics>> = season.iter().map(|d| d.metrics.clone()).collect();
        provenance.saw_days(&days);
        if missing_et0 > 0 {
            provenance
                .degraded
                .push(format!("{missing_et0} days without a computable ET0 counted as zero"));
        }

        let forecast = self.forecast_at(as_of);
        let rain_48h = match &forecast {
            Some(f) => {
                provenance.forecast_issued_at = Some(f.issued_at);
                f.overlapping(as_of, as_of + 2 * DAY_S).map(|e| e.rain_mm).sum()
            }
            None => {
                provenance.degraded.push("no forecast: expected rain taken as zero".into());
                0.0
            }
        };
        let recommendation =
            recommend(&state, rain_48h, threshold, efficiency).map_err(|e| ServiceError::Validation(e.to_string()))?;
        let hypothetical = match hypothetical_mm {
            Some(mm) => {
                let projected = apply_irrigation_event(&state, state.date, mm)
                    .map_err(|e| ServiceError::Validation(e.to_string()))?;
                Some(Hypothetical {
                    amount_mm: mm,
                    deficit_mm: projected.deficit_mm,
                    recommendation: recommend(&projected, rain_48h, threshold, efficiency)
                        .map_err(|e| ServiceError::Validation(e.to_string()))?,
                })
            }
            None => None,
        };
        Ok(IrrigationAdvisory {
            block_id: block.id.clone(),
            state,
            recommendation,
            forecast_rain_48h: rain_48h,
            deficit_series: series,
            hypothetical,
            provenance,
        })
    }

    // ---- station advisories ----

    pub fn risk(&self, station: &str, as_of: Option<i64>) -> Result<RiskAdvisory, ServiceError> {
        let site = self.station(station)?;
        let as_of = self.resolve_as_of(station, as_of);
        let models = &self.config.models;
        let today = site.local_date(as_of);
        let season = self.station_season(&site, as_of);
        let mut provenance = Provenance::new(as_of, station);
        provenance.uses(
            station,
            &[
                SensorKind::Temperature,
                SensorKind::Rain,
                SensorKind::LeafWetness,
                SensorKind::WindSpeed,
                SensorKind::WindDirection,
            ],
        );
        provenance.saw_days(&season);

        let pm = self.powdery_state(&season).value();
        let powdery_mildew = RiskScore {
            kind: RiskKind::PowderyMildew,
            value: pm,
            band: models.powdery_mildew.bands.band(pm),
            as_of: None,
            station_id: None,
        }
        .at(today, station);

        let day = self.day_metrics(&site, today, as_of);
        let wet = day.leaf_wetness_h;
        if wet.is_none() {
            provenance.degraded.push("degraded: leaf wetness unavailable".into());
        }
        let downy_mildew = downy_mildew_risk(&day.summary, wet.unwrap_or(0.0), &models.downy_mildew).at(today, station);
        let botrytis = match (day.summary.t_mean(), wet) {
            (Some(t), Some(w)) => Some(botrytis_flag(t, w, &models.botrytis).at(today, station)),
            _ => None,
        };

        let insect = &models.insect;
        let biofix = insect.calendar_biofix(today.year()).or_else(|| {
            insect
                .biofix_rule
                .strip_prefix("trap:")
                .and_then(|d| d.parse::<NaiveDate>().ok())
                .filter(|d| d.year() == today.year())
        });
        let cumulative_dd = match biofix {
            Some(b) if b <= today => self
                .days_between(&site, b, today, as_of)
                .iter()
                .filter_map(|d| gdd_daily(d.summary.t_min?, d.summary.t_max?, insect.base_temp, None).ok())
                .sum(),
            _ => 0.0,
        };

        let from = as_of - DAY_S + 1;
        let wind: Vec<(f64, f64)> = self
            .paired(station, SensorKind::WindSpeed, SensorKind::WindDirection, from, as_of + 1)
            .into_iter()
            .map(|(_, s, d)| (s, d))
            .collect();
        let wind_spread = wind_spread_sector(&wind, station, &models.wind_spread);

        Ok(RiskAdvisory {
            station_id: station.to_string(),
            date: today,
            powdery_mildew,
            downy_mildew,
            botrytis,
            insect: InsectAdvisory {
                species: insect.species.clone(),
                biofix,
                cumulative_dd,
                stage: insect_stage(cumulative_dd, insect),
            },
            wind_spread,
            provenance,
        })
    }

    pub fn frost(&self, station: &str, as_of: Option<i64>) -> Result<FrostAdvisory, ServiceError> {
        let site = self.station(station)?;
        let as_of = self.resolve_as_of(station, as_of);
        let (issued_at, tmin) = self
            .forecast_tmin(as_of)
            .ok_or_else(|| ServiceError::NotFound("no forecast covering the next 24 h".into()))?;
        let mut provenance = Provenance::new(as_of, station);
        provenance.forecast_issued_at = Some(issued_at);
        provenance.uses(
            station,
            &[
                SensorKind::Temperature,
                SensorKind::RelativeHumidity,
                SensorKind::WindSpeed,
                SensorKind::TemperatureElevated,
            ],
        );
        let recent_from = as_of - CURRENT_LOOKBACK_S + 1;
        let dew = self
            .paired(station, SensorKind::Temperature, SensorKind::RelativeHumidity, recent_from, as_of + 1)
            .last()
            .and_then(|(ts, t, h)| Some((*ts, dew_point(*t, *h).ok()?)));
        let dew_value = match dew {
            Some((ts, v)) => {
                provenance.saw(ts);
                v
            }
            None => {
                provenance.degraded.push("dew point unavailable: spread reported against tmin".into());
                tmin
            }
        };
        let winds = series_items(&self.store, station, SensorKind::WindSpeed, as_of - DAY_S + 1, as_of + 1);
        let wind_mean = if winds.is_empty() {
            provenance.degraded.push("wind unavailable".into());
            0.0
        } else {
            winds.iter().for_each(|b| provenance.saw(b.start));
            winds.iter().map(|b| b.mean * b.count as f64).sum::<f64>() / winds.iter().map(|b| b.count as f64).sum::<f64>()
        };
        let inversion = match self
            .paired(station, SensorKind::TemperatureElevated, SensorKind::Temperature, recent_from, as_of + 1)
            .last()
        {
            Some((ts, e, g)) => {
                provenance.saw(*ts);
                e - g
            }
            None => {
                provenance.degraded.push("inversion unavailable: no elevated sensor reading".into());
                0.0
            }
        };
        let mut assessment = frost_risk(tmin, dew_value, wind_mean, inversion, &self.config.models.frost);
        assessment.date = Some(site.local_date(as_of));
        Ok(FrostAdvisory {
            station_id: station.to_string(),
            assessment,
            provenance,
        })
    }

    pub fn spray_windows(&self, station: &str, as_of: Option<i64>) -> Result<SprayAdvisory, ServiceError> {
        let site = self.station(station)?;
        let as_of = self.resolve_as_of(station, as_of);
        let models = &self.config.models;
        let mut provenance = Provenance::new(as_of, station);
        provenance.uses(station, &[SensorKind::NirReflectance, SensorKind::RedReflectance]);
        let forecast = self
            .forecast_at(as_of)
            .ok_or_else(|| ServiceError::NotFound("no forecast issued".into()))?;
        provenance.forecast_issued_at = Some(forecast.issued_at);
        let windows = if forecast.resolution == Resolution::Hourly {
            let hours: Vec<HourlyConditions> = forecast
                .overlapping(as_of, i64::MAX)
                .map(|e| HourlyConditions {
                    time: e.time,
                    wind: e.wind,
                    rain_prob: e.rain_prob,
                })
                .collect();
            let p = &models.spray;
            spray_window(&hours, p.max_wind, p.max_rain_prob, p.min_window_h)
                .into_iter()
                .map(|(start, end)| SprayWindow { start, end })
                .collect()
        } else {
            provenance.degraded.push("spray windows need an hourly forecast".into());
            Vec::new()
        };
        let today = site.local_date(as_of);
        let week_ago = today.checked_sub_days(Days::new(6)).unwrap_or(today);
        let vigor = self
            .days_between(&site, week_ago, today, as_of)
            .iter()
            .rev()
            .find_map(|d| d.ndvi.map(|v| (v, d.last_sample_at)))
            .map(|(v, ts)| {
                if let Some(ts) = ts {
                    provenance.saw(ts);
                }
                Vigor {
                    ndvi: v,
                    low_vigor: v < models.ndvi_low_vigor,
                }
            });
        Ok(SprayAdvisory {
            station_id: station.to_string(),
            windows,
            vigor,
            provenance,
        })
    }
}

fn reject(line: usize, code: &str, message: String) -> RecordOutcome {
    RecordOutcome {
        line,
        status: RecordStatus::Rejected,
        duplicate: false,
        reason: Some(code.to_string()),
        message: Some(message),
    }
}

fn wire_message(e: &WireError) -> String {
    e.to_string()
}
