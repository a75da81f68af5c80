//! Deterministic simulator of vineyard weather stations and the in-field
//! radio network that carries their readings to the gateway.
//!
//! Weather is a pure function of `(seed, day, tick)`; link losses are drawn
//! from one seeded stream in emission order. Same configuration and seeds
//! give the same frames, byte for byte.

use std::collections::{BTreeMap, VecDeque};

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agromet::pressure_from_elevation;
use crate::reading::{Reading, SensorKind};

pub const TICK_SECONDS: i64 = 900;
pub const TICKS_PER_DAY: u32 = 96;

/// Short-range radio default, metres.
pub const DEFAULT_RADIO_RANGE_M: f64 = 1000.0;

/// Sparser than this many hectares per station triggers a density warning.
pub const MAX_HECTARES_PER_STATION: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("expected exactly one gateway, found {0}")]
    GatewayCount(usize),
    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),
    #[error("station `{0}` has a non-finite position or range")]
    BadGeometry(String),
    #[error("unknown climate profile `{0}`")]
    UnknownClimate(String),
    #[error("tick {0} outside 0..96")]
    Tick(u32),
    #[error("loss probability {0} outside [0, 1]")]
    Loss(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub station_id: String,
    /// Metres east and north in the vineyard frame.
    pub position: (f64, f64),
    pub sensors: Vec<SensorKind>,
    #[serde(default)]
    pub is_gateway: bool,
    #[serde(default = "default_range")]
    pub radio_range_m: f64,
    #[serde(default = "default_climate")]
    pub climate: String,
}

fn default_range() -> f64 {
    DEFAULT_RADIO_RANGE_M
}

fn default_climate() -> String {
    "napa".into()
}

impl StationSpec {
    fn distance(&self, other: &StationSpec) -> f64 {
        (self.position.0 - other.position.0).hypot(self.position.1 - other.position.1)
    }

    fn in_mutual_range(&self, other: &StationSpec) -> bool {
        self.distance(other) <= self.radio_range_m.min(other.radio_range_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    Star,
    Mesh,
}

impl std::str::FromStr for TopologyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "star" => Ok(TopologyMode::Star),
            "mesh" => Ok(TopologyMode::Mesh),
            other => Err(format!("unknown topology `{other}` (star|mesh)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologyWarning {
    SparseStations { hectares_per_station: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub mode: TopologyMode,
    pub gateway: String,
    pub edges: Vec<(String, String)>,
    /// Hop path to the gateway (gateway last); `None` when unreachable.
    /// The gateway's own route is empty.
    pub routes: BTreeMap<String, Option<Vec<String>>>,
    pub warnings: Vec<TopologyWarning>,
}

impl Topology {
    pub fn route(&self, station: &str) -> Option<&[String]> {
        self.routes.get(station).and_then(|r| r.as_deref())
    }
}

pub fn build_topology(stations: &[StationSpec], mode: TopologyMode) -> Result<Topology, SimError> {
    let gateways: Vec<&StationSpec> = stations.iter().filter(|s| s.is_gateway).collect();
    if gateways.len() != 1 {
        return Err(SimError::GatewayCount(gateways.len()));
    }
    let gateway = gateways[0];
    let mut seen = std::collections::BTreeSet::new();
    for s in stations {
        if !seen.insert(s.station_id.as_str()) {
            return Err(SimError::DuplicateStation(s.station_id.clone()));
        }
        if !(s.position.0.is_finite() && s.position.1.is_finite() && s.radio_range_m.is_finite()) {
            return Err(SimError::BadGeometry(s.station_id.clone()));
        }
    }

    let mut by_id: Vec<&StationSpec> = stations.iter().collect();
    by_id.sort_by(|a, b| a.station_id.cmp(&b.station_id));
    let mut edges = Vec::new();
    let mut neighbours: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (i, a) in by_id.iter().enumerate() {
        neighbours.entry(a.station_id.as_str()).or_default();
        for b in &by_id[i + 1..] {
            if a.in_mutual_range(b) {
                edges.push((a.station_id.clone(), b.station_id.clone()));
                neighbours.entry(a.station_id.as_str()).or_default().push(b.station_id.as_str());
                neighbours.entry(b.station_id.as_str()).or_default().push(a.station_id.as_str());
            }
        }
    }
    for list in neighbours.values_mut() {
        list.sort();
    }

    let mut routes = BTreeMap::new();
    match mode {
        TopologyMode::Star => {
            for s in stations {
                let route = if s.is_gateway {
                    Some(Vec::new())
                } else if s.in_mutual_range(gateway) {
                    Some(vec![gateway.station_id.clone()])
                } else {
                    None
                };
                routes.insert(s.station_id.clone(), route);
            }
        }
        TopologyMode::Mesh => {
            // BFS from the gateway gives hop distances; each node forwards to
            // its lowest-id neighbour one hop closer.
            let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
            let mut queue = VecDeque::from([gateway.station_id.as_str()]);
            dist.insert(gateway.station_id.as_str(), 0);
            while let Some(node) = queue.pop_front() {
                let d = dist[node];
                for &n in &neighbours[node] {
                    if !dist.contains_key(n) {
                        dist.insert(n, d + 1);
                        queue.push_back(n);
                    }
                }
            }
            for s in stations {
                let id = s.station_id.as_str();
                let route = dist.get(id).map(|_| {
                    let mut path = Vec::new();
                    let mut at = id;
                    while dist[at] > 0 {
                        let next = neighbours[at]
                            .iter()
                            .copied()
                            .find(|n| dist.get(n) == Some(&(dist[at] - 1)))
                            .expect("BFS parent exists");
                        path.push(next.to_string());
                        at = next;
                    }
                    path
                });
                routes.insert(s.station_id.clone(), route);
            }
        }
    }

    let mut warnings = Vec::new();
    if let Some(hectares_per_station) = hectares_per_station(stations) {
        if hectares_per_station > MAX_HECTARES_PER_STATION {
            warnings.push(TopologyWarning::SparseStations { hectares_per_station });
        }
    }

    Ok(Topology {
        mode,
        gateway: gateway.station_id.clone(),
        edges,
        routes,
        warnings,
    })
}

/// Bounding-box area of the layout divided among its stations.
fn hectares_per_station(stations: &[StationSpec]) -> Option<f64> {
    if stations.len() < 2 {
        return None;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in stations {
        x0 = x0.min(s.position.0);
        x1 = x1.max(s.position.0);
        y0 = y0.min(s.position.1);
        y1 = y1.max(s.position.1);
    }
    Some((x1 - x0) * (y1 - y0) / 10_000.0 / stations.len() as f64)
}

/// Parameters of the synthetic climate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateProfile {
    pub id: String,
    pub latitude: f64,
    pub elevation_m: f64,
    /// Annual mean of the daily mean temperature, °C.
    pub mean_c: f64,
    pub seasonal_amplitude_c: f64,
    /// Day of year of the warmest daily mean.
    pub peak_doy: f64,
    pub diurnal_range_c: f64,
    /// Scales every random perturbation; zero gives the closed-form curves.
    pub noise: f64,
    pub tick_noise_c: f64,
    pub day_anomaly_c: f64,
    pub rh_base: f64,
    pub rain_prob_winter: f64,
    pub rain_prob_summer: f64,
    pub wind_mean: f64,
    pub prevailing_from_deg: f64,
    pub night_inversion_c: f64,
}

impl ClimateProfile {
    pub fn napa() -> Self {
        ClimateProfile {
            id: "napa".into(),
            latitude: 38.3,
            elevation_m: 60.0,
            mean_c: 17.0,
            seasonal_amplitude_c: 9.0,
            peak_doy: 200.0,
            diurnal_range_c: 14.0,
            noise: 1.0,
            tick_noise_c: 0.4,
            day_anomaly_c: 3.0,
            rh_base: 62.0,
            rain_prob_winter: 0.35,
            rain_prob_summer: 0.03,
            wind_mean: 2.5,
            prevailing_from_deg: 240.0,
            night_inversion_c: 3.0,
        }
    }

    pub fn burgundy() -> Self {
        ClimateProfile {
            id: "burgundy".into(),
            latitude: 47.0,
            elevation_m: 250.0,
            mean_c: 14.5,
            seasonal_amplitude_c: 9.5,
            peak_doy: 200.0,
            diurnal_range_c: 11.0,
            noise: 1.0,
            tick_noise_c: 0.4,
            day_anomaly_c: 3.0,
            rh_base: 72.0,
            rain_prob_winter: 0.4,
            rain_prob_summer: 0.25,
            wind_mean: 3.0,
            prevailing_from_deg: 250.0,
            night_inversion_c: 2.0,
        }
    }

    pub fn by_id(id: &str) -> Result<Self, SimError> {
        match id {
            "napa" => Ok(Self::napa()),
            "burgundy" => Ok(Self::burgundy()),
            other => Err(SimError::UnknownClimate(other.to_string())),
        }
    }

    /// Noise-free temperature at a tick.
    pub fn base_temperature(&self, day_of_year: u32, tick: u32) -> f64 {
        let seasonal = (2.0 * std::f64::consts::PI * (day_of_year as f64 - self.peak_doy) / 365.0).cos();
        let hour = tick as f64 / 4.0;
        let diurnal = (2.0 * std::f64::consts::PI * (hour - 15.0) / 24.0).cos();
        self.mean_c + self.seasonal_amplitude_c * seasonal + self.diurnal_range_c / 2.0 * diurnal
    }

    fn seasonal_weight(&self, day_of_year: u32) -> f64 {
        // 1 at the warm peak, 0 at the cold trough.
        0.5 + 0.5 * (2.0 * std::f64::consts::PI * (day_of_year as f64 - self.peak_doy) / 365.0).cos()
    }
}

/// Every quantity a fully equipped station measures at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    pub temperature: f64,
    pub relative_humidity: f64,
    pub pressure: f64,
    pub solar_radiation: f64,
    pub wind_speed: f64,
    pub wind_direction: f64,
    pub rain: f64,
    pub leaf_wetness: f64,
    pub soil_moisture: f64,
    pub temperature_elevated: f64,
    pub nir_reflectance: f64,
    pub red_reflectance: f64,
    pub uv_index: f64,
}

impl WeatherSample {
    pub fn value(&self, kind: SensorKind) -> Option<f64> {
        Some(match kind {
            SensorKind::Temperature => self.temperature,
            SensorKind::RelativeHumidity => self.relative_humidity,
            SensorKind::Pressure => self.pressure,
            SensorKind::SolarRadiation => self.solar_radiation,
            SensorKind::WindSpeed => self.wind_speed,
            SensorKind::WindDirection => self.wind_direction,
            SensorKind::Rain => self.rain,
            SensorKind::LeafWetness => self.leaf_wetness,
            SensorKind::SoilMoisture => self.soil_moisture,
            SensorKind::TemperatureElevated => self.temperature_elevated,
            SensorKind::NirReflectance => self.nir_reflectance,
            SensorKind::RedReflectance => self.red_reflectance,
            SensorKind::UvIndex => self.uv_index,
            SensorKind::IrrigationApplied => return None,
        })
    }

    pub fn readings(&self, timestamp: i64, station_id: &str, sensors: &[SensorKind]) -> Vec<Reading> {
        sensors
            .iter()
            .filter_map(|&k| self.value(k).map(|v| Reading::new(timestamp, station_id, k, round3(v))))
            .collect()
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let key = parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p));
    ChaCha8Rng::seed_from_u64(key)
}

const DAY_STREAM: u64 = 0xDA11;
const TICK_STREAM: u64 = 0x71C4;

struct DayWeather {
    anomaly: f64,
    rain_start: u32,
    rain_ticks: u32,
    rain_total: f64,
    cloud: f64,
    wind_factor: f64,
}

fn day_weather(seed: u64, day_of_year: u32, profile: &ClimateProfile) -> DayWeather {
    let mut rng = stream(seed, &[DAY_STREAM, day_of_year as u64]);
    let anomaly = (rng.random::<f64>() * 2.0 - 1.0) * profile.day_anomaly_c * profile.noise;
    let w = profile.seasonal_weight(day_of_year);
    let p_rain = (profile.rain_prob_winter * (1.0 - w) + profile.rain_prob_summer * w) * profile.noise.min(1.0);
    let raining = rng.random::<f64>() < p_rain;
    let rain_start = rng.random_range(0..TICKS_PER_DAY);
    let rain_ticks = rng.random_range(8..=40);
    let rain_total = 2.0 + rng.random::<f64>().powi(2) * 30.0;
    let cloud = 0.8 + 0.2 * rng.random::<f64>();
    let wind_factor = 0.6 + 0.8 * rng.random::<f64>();
    DayWeather {
        anomaly,
        rain_start,
        rain_ticks: if raining { rain_ticks } else { 0 },
        rain_total,
        cloud: if raining { 0.35 } else { cloud },
        wind_factor,
    }
}

/// Synthetic measurements for one tick of one day.
pub fn synth_weather(seed: u64, day_of_year: u32, profile: &ClimateProfile, tick: u32) -> Result<WeatherSample, SimError> {
    if tick >= TICKS_PER_DAY {
        return Err(SimError::Tick(tick));
    }
    let day = day_weather(seed, day_of_year, profile);
    let mut rng = stream(seed, &[TICK_STREAM, day_of_year as u64, tick as u64]);
    let mut jitter = |scale: f64| (rng.random::<f64>() * 2.0 - 1.0) * scale * profile.noise;

    let hour = tick as f64 / 4.0;
    let base = profile.base_temperature(day_of_year, tick);
    let temperature = base + day.anomaly + jitter(profile.tick_noise_c);
    let daily_mean = profile.base_temperature(day_of_year, 9) + day.anomaly;

    let in_rain = tick >= day.rain_start && tick < day.rain_start + day.rain_ticks;
    let rain = if in_rain {
        day.rain_total / day.rain_ticks as f64
    } else {
        0.0
    };

    let mut relative_humidity = profile.rh_base - 2.5 * (temperature - daily_mean) + jitter(3.0);
    if in_rain {
        relative_humidity = relative_humidity.max(95.0);
    }
    let relative_humidity = relative_humidity.clamp(5.0, 100.0);

    let decl = 23.44_f64.to_radians() * (2.0 * std::f64::consts::PI * (day_of_year as f64 - 81.0) / 365.0).sin();
    let lat = profile.latitude.to_radians();
    let half_day_h = (-lat.tan() * decl.tan()).clamp(-1.0, 1.0).acos().to_degrees() / 15.0;
    let from_noon = hour + 0.125 - 12.0;
    let solar_radiation = if from_noon.abs() < half_day_h {
        let peak = 1000.0 * (lat - decl).cos().max(0.1);
        peak * (std::f64::consts::FRAC_PI_2 * from_noon / half_day_h).cos() * day.cloud
    } else {
        0.0
    }
    .max(0.0);

    let gust = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * (hour - 15.0) / 24.0).cos();
    let wind_speed = (profile.wind_mean * day.wind_factor * (0.5 + gust) + jitter(0.6)).max(0.0);
    let wind_direction = (profile.prevailing_from_deg + jitter(40.0)).rem_euclid(360.0);

    let night = solar_radiation <= 0.0;
    let inversion = if night {
        profile.night_inversion_c * day.cloud
    } else {
        -0.6
    };
    let temperature_elevated = temperature + inversion + jitter(0.2);

    let season = profile.seasonal_weight(day_of_year);
    let canopy = season.powf(0.7);
    let nir_reflectance = (0.25 + 0.25 * canopy + jitter(0.01)).clamp(0.0, 1.0);
    let red_reflectance = (0.12 - 0.07 * canopy + jitter(0.005)).clamp(0.0, 1.0);

    Ok(WeatherSample {
        temperature,
        relative_humidity,
        pressure: pressure_from_elevation(profile.elevation_m) + jitter(0.3),
        solar_radiation,
        wind_speed,
        wind_direction,
        rain,
        leaf_wetness: if in_rain || relative_humidity >= 92.0 { 100.0 } else { 0.0 },
        soil_moisture: (32.0 - 12.0 * season + if in_rain { 3.0 } else { 0.0 } + jitter(0.5)).clamp(0.0, 100.0),
        temperature_elevated,
        nir_reflectance,
        red_reflectance,
        uv_index: solar_radiation / 90.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub loss_probability: f64,
    pub max_retries: u32,
    pub seed: u64,
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(SimError::Loss(self.loss_probability));
        }
        Ok(())
    }

    /// Chance that one hop eventually succeeds.
    pub fn hop_success(&self) -> f64 {
        1.0 - self.loss_probability.powi(self.max_retries as i32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub sequence_no: u64,
    pub origin: String,
    pub readings: Vec<Reading>,
    pub hop_count: u32,
    pub delivered: bool,
    /// Gateway receive time, epoch seconds.
    pub received_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fate", rename_all = "snake_case")]
pub enum Outcome {
    Delivered { hops: u32, attempts: u32 },
    Failed { failed_hop: u32, from: String, to: String, attempts: u32 },
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFate {
    pub origin: String,
    pub sequence_no: u64,
    pub emitted_at: i64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub stations: Vec<StationSpec>,
    pub mode: TopologyMode,
    pub link: LinkModel,
    pub start_date: NaiveDate,
    pub days: u32,
    pub seed: u64,
}

pub struct Simulation {
    config: SimConfig,
    topology: Topology,
    climates: Vec<ClimateProfile>,
    link_rng: ChaCha8Rng,
    next_seq: BTreeMap<String, u64>,
    tick: u64,
}

pub struct StepOutput {
    pub delivered: Vec<Frame>,
    pub fates: Vec<FrameFate>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.link.validate()?;
        let topology = build_topology(&config.stations, config.mode)?;
        let climates = config
            .stations
            .iter()
            .map(|s| ClimateProfile::by_id(&s.climate))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Simulation {
            link_rng: ChaCha8Rng::seed_from_u64(config.link.seed),
            next_seq: BTreeMap::new(),
            tick: 0,
            config,
            topology,
            climates,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn total_ticks(&self) -> u64 {
        self.config.days as u64 * TICKS_PER_DAY as u64
    }

    pub fn finished(&self) -> bool {
        self.tick >= self.total_ticks()
    }

    fn tick_time(&self) -> (NaiveDate, u32, i64) {
        let day = (self.tick / TICKS_PER_DAY as u64) as u64;
        let tick = (self.tick % TICKS_PER_DAY as u64) as u32;
        let date = self
            .config
            .start_date
            .checked_add_days(Days::new(day))
            .expect("simulation date in range");
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp();
        (date, tick, midnight + tick as i64 * TICK_SECONDS)
    }

    /// Advances one tick: every station emits one frame which then crosses
    /// its route hop by hop.
    pub fn step(&mut self) -> StepOutput {
        let (date, tick, ts) = self.tick_time();
        let doy = date.ordinal();
        let mut out = StepOutput {
            delivered: Vec::new(),
            fates: Vec::new(),
        };
        for (idx, station) in self.config.stations.iter().enumerate() {
            let station_seed = mix(self.config.seed ^ mix(idx as u64 + 1));
            let sample = synth_weather(station_seed, doy, &self.climates[idx], tick).expect("tick in range");
            let readings = sample.readings(ts, &station.station_id, &station.sensors);
            let seq = self.next_seq.entry(station.station_id.clone()).or_insert(0);
            let sequence_no = *seq;
            *seq += 1;

            let outcome = match self.topology.route(&station.station_id) {
                None => Outcome::Unreachable,
                Some(route) => {
                    let mut from = station.station_id.as_str();
                    let mut attempts = 0;
                    let mut failed = None;
                    for (hop, to) in route.iter().enumerate() {
                        let mut ok = false;
                        for _ in 0..=self.config.link.max_retries {
                            attempts += 1;
                            if self.link_rng.random::<f64>() >= self.config.link.loss_probability {
                                ok = true;
                                break;
                            }
                        }
                        if !ok {
                            failed = Some(Outcome::Failed {
                                failed_hop: hop as u32,
                                from: from.to_string(),
                                to: to.clone(),
                                attempts,
                            });
                            break;
                        }
                        from = to;
                    }
                    failed.unwrap_or(Outcome::Delivered {
                        hops: route.len() as u32,
                        attempts,
                    })
                }
            };
            if let Outcome::Delivered { hops, .. } = outcome {
                out.delivered.push(Frame {
                    sequence_no,
                    origin: station.station_id.clone(),
                    readings,
                    hop_count: hops,
                    delivered: true,
                    received_at: Some(ts),
                });
            }
            out.fates.push(FrameFate {
                origin: station.station_id.clone(),
                sequence_no,
                emitted_at: ts,
                outcome,
            });
        }
        self.tick += 1;
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StationStats {
    pub emitted: u64,
    pub delivered: u64,
    pub lost: u64,
    /// Longest run of consecutive undelivered sequence numbers.
    pub longest_gap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub frames_emitted: u64,
    pub frames_delivered: u64,
    pub delivery_ratio: f64,
    pub mean_hops: f64,
    pub per_station: BTreeMap<String, StationStats>,
}

impl SimStats {
    /// Recomputes every statistic from the fate log.
    pub fn from_fates(fates: &[FrameFate]) -> SimStats {
        let mut per_station: BTreeMap<String, StationStats> = BTreeMap::new();
        let mut current_gap: BTreeMap<&str, u64> = BTreeMap::new();
        let (mut delivered, mut hops) = (0u64, 0u64);
        for fate in fates {
            let st = per_station.entry(fate.origin.clone()).or_default();
            st.emitted += 1;
            let gap = current_gap.entry(fate.origin.as_str()).or_insert(0);
            if let Outcome::Delivered { hops: h, .. } = fate.outcome {
                st.delivered += 1;
                delivered += 1;
                hops += h as u64;
                *gap = 0;
            } else {
                st.lost += 1;
                *gap += 1;
                st.longest_gap = st.longest_gap.max(*gap);
            }
        }
        let emitted = fates.len() as u64;
        SimStats {
            frames_emitted: emitted,
            frames_delivered: delivered,
            delivery_ratio: if emitted > 0 { delivered as f64 / emitted as f64 } else { 0.0 },
            mean_hops: if delivered > 0 { hops as f64 / delivered as f64 } else { 0.0 },
            per_station,
        }
    }
}

pub struct SimRun {
    pub topology: Topology,
    pub frames: Vec<Frame>,
    pub fates: Vec<FrameFate>,
    pub stats: SimStats,
}

impl SimRun {
    /// Delivered readings in gateway arrival order.
    pub fn readings(&self) -> impl Iterator<Item = &Reading> {
        self.frames.iter().flat_map(|f| f.readings.iter())
    }
}

pub fn run(config: SimConfig) -> Result<SimRun, SimError> {
    let mut sim = Simulation::new(config)?;
    let mut frames = Vec::new();
    let mut fates = Vec::new();
    while !sim.finished() {
        let step = sim.step();
        frames.extend(step.delivered);
        fates.extend(step.fates);
    }
    let stats = SimStats::from_fates(&fates);
    Ok(SimRun {
        topology: sim.topology,
        frames,
        fates,
        stats,
    })
}

/// Expected delivery ratio, averaged over stations, from route lengths.
pub fn analytic_delivery_ratio(topology: &Topology, link: &LinkModel) -> f64 {
    if topology.routes.is_empty() {
        return 0.0;
    }
    let per_hop = link.hop_success();
    let total: f64 = topology
        .routes
        .values()
        .map(|r| r.as_ref().map_or(0.0, |route| per_hop.powi(route.len() as i32)))
        .sum();
    total / topology.routes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(id: &str, x: f64, gateway: bool) -> StationSpec {
        StationSpec {
            station_id: id.into(),
            position: (x, 0.0),
            sensors: vec![SensorKind::Temperature],
            is_gateway: gateway,
            radio_range_m: 1000.0,
            climate: "napa".into(),
        }
    }

    #[test]
    fn star_and_mesh_routes() {
        let near = [station("gw", 0.0, true), station("a", 500.0, false)];
        let t = build_topology(&near, TopologyMode::Star).unwrap();
        assert_eq!(t.route("a").unwrap(), ["gw".to_string()]);
        assert_eq!(t.route("gw").unwrap().len(), 0);

        let far = [station("gw", 0.0, true), station("relay", 900.0, false), station("a", 1700.0, false)];
        let star = build_topology(&far, TopologyMode::Star).unwrap();
        assert!(star.route("a").is_none());
        let mesh = build_topology(&far, TopologyMode::Mesh).unwrap();
        assert_eq!(mesh.route("a").unwrap(), ["relay".to_string(), "gw".to_string()]);
    }

    #[test]
    fn mesh_ties_break_to_lowest_id() {
        let layout = [
            station("gw", 0.0, true),
            station("r2", 800.0, false),
            station("r1", 800.0, false),
            station("a", 1600.0, false),
        ];
        let mesh = build_topology(&layout, TopologyMode::Mesh).unwrap();
        assert_eq!(mesh.route("a").unwrap(), ["r1".to_string(), "gw".to_string()]);
    }

    #[test]
    fn gateway_count_enforced() {
        assert_eq!(
            build_topology(&[station("a", 0.0, false)], TopologyMode::Star).unwrap_err(),
            SimError::GatewayCount(0)
        );
        assert_eq!(
            build_topology(&[station("a", 0.0, true), station("b", 1.0, true)], TopologyMode::Star).unwrap_err(),
            SimError::GatewayCount(2)
        );
    }

    #[test]
    fn density_warning() {
        let mut sparse = vec![station("gw", 0.0, true), station("a", 900.0, false)];
        sparse[1].position.1 = 900.0; // 81 ha over two stations
        let t = build_topology(&sparse, TopologyMode::Star).unwrap();
        assert!(matches!(t.warnings[..], [TopologyWarning::SparseStations { .. }]));
        let mut dense = sparse.clone();
        dense[1].position = (200.0, 200.0);
        assert!(build_topology(&dense, TopologyMode::Star).unwrap().warnings.is_empty());
    }

    #[test]
    fn weather_deterministic_and_closed_form() {
        let p = ClimateProfile::napa();
        assert_eq!(synth_weather(7, 150, &p, 40).unwrap(), synth_weather(7, 150, &p, 40).unwrap());
        let quiet = ClimateProfile { noise: 0.0, ..p };
        for tick in [0, 17, 60, 95] {
            let s = synth_weather(99, 200, &quiet, tick).unwrap();
            assert_eq!(s.temperature, quiet.base_temperature(200, tick));
        }
        assert!(synth_weather(1, 1, &quiet, 96).is_err());
    }

    #[test]
    fn weather_readings_valid() {
        let p = ClimateProfile::napa();
        for n in 0..10_000u32 {
            let doy = 1 + (n * 37) % 366;
            let s = synth_weather(n as u64, doy, &p, n % 96).unwrap();
            for r in s.readings(1_700_000_000, "s", &SensorKind::ALL) {
                r.validate().unwrap();
            }
        }
    }

    fn config(loss: f64, retries: u32, days: u32) -> SimConfig {
        SimConfig {
            stations: vec![station("gw", 0.0, true), station("a", 400.0, false)],
            mode: TopologyMode::Star,
            link: LinkModel {
                loss_probability: loss,
                max_retries: retries,
                seed: 11,
            },
            start_date: NaiveDate::from_ymd_opt(2024, 4, 1).unwrap(),
            days,
            seed: 5,
        }
    }

    #[test]
    fn lossless_and_total_loss() {
        let r = run(config(0.0, 2, 1)).unwrap();
        assert_eq!(r.frames.len(), 192);
        assert_eq!(r.stats.delivery_ratio, 1.0);
        assert!(r.frames.iter().filter(|f| f.origin == "a").all(|f| f.hop_count == 1));

        let r = run(config(1.0, 3, 1)).unwrap();
        // Only the gateway's own frames survive.
        assert!(r.frames.iter().all(|f| f.origin == "gw"));
        assert_eq!(r.stats.per_station["a"].delivered, 0);
        assert_eq!(r.stats.per_station["a"].longest_gap, 96);
    }

    #[test]
    fn stats_match_fate_log() {
        let r = run(config(0.3, 0, 2)).unwrap();
        assert_eq!(r.stats, SimStats::from_fates(&r.fates));
        let delivered = r.fates.iter().filter(|f| matches!(f.outcome, Outcome::Delivered { .. })).count();
        assert_eq!(delivered, r.frames.len());
        for origin in ["gw", "a"] {
            let seqs: Vec<u64> = r.fates.iter().filter(|f| f.origin == origin).map(|f| f.sequence_no).collect();
            assert_eq!(seqs, (0..192).collect::<Vec<_>>());
        }
    }
}
