//! Derived agrometeorological quantities.
//!
//! Everything here is a pure function of its arguments. Units are SI-ish as
//! used in vineyard practice: °C, %, kPa, m/s, MJ/m²/day, mm.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Magnus coefficients (Alduchov & Eskridge).
pub const MAGNUS_A: f64 = 17.625;
pub const MAGNUS_B: f64 = 243.04;

/// Grass reference albedo.
pub const REFERENCE_ALBEDO: f64 = 0.23;
const SOLAR_CONSTANT: f64 = 0.0820; // MJ m⁻² min⁻¹
const STEFAN_BOLTZMANN: f64 = 4.903e-9; // MJ K⁻⁴ m⁻² day⁻¹

/// Rothfusz regression is only meaningful from 80 °F upward.
pub const HEAT_INDEX_MIN_C: f64 = 26.7;

/// Maximum time skew allowed when pairing elevated and ground temperatures.
pub const INVERSION_PAIRING_TOLERANCE_S: i64 = 60;

/// Sampling interval the wetness series is counted in.
pub const WETNESS_INTERVAL_S: i64 = 900;

pub const DEFAULT_GDD_BASE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgrometError {
    #[error("relative humidity {0}% is outside (0, 100]")]
    HumidityDomain(f64),
    #[error("incomplete input: `{0}` is missing")]
    IncompleteInput(&'static str),
    #[error("invalid summary: t_min {t_min} exceeds t_max {t_max}")]
    InvalidSummary { t_min: f64, t_max: f64 },
    #[error("days are not strictly ordered at {0}")]
    Ordering(NaiveDate),
    #[error("season start {start} is after first day {first}")]
    SeasonStart { start: NaiveDate, first: NaiveDate },
    #[error("NDVI undefined when both reflectances are zero")]
    UndefinedIndex,
    #[error("reflectance {0} outside [0, 1]")]
    Reflectance(f64),
    #[error("elevated and ground readings are {0} s apart")]
    StalePairing(i64),
    #[error("invalid chill band table: {0}")]
    BandTable(String),
    #[error("day of year {0} outside 1..=366")]
    DayOfYear(u32),
}

/// Per-day aggregates from one station, in station-local calendar days.
///
/// Measurements are optional because a station may not carry every sensor,
/// or may have dropped all frames for the day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySummary {
    pub date: NaiveDate,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub rh_mean: Option<f64>,
    pub rh_min: Option<f64>,
    pub rh_max: Option<f64>,
    pub wind_mean_2m: Option<f64>,
    pub solar_mj: Option<f64>,
    pub rain_mm: Option<f64>,
    pub pressure_kpa: Option<f64>,
    pub hourly_temps: [Option<f64>; 24],
}

impl DailySummary {
    pub fn empty(date: NaiveDate) -> Self {
        DailySummary {
            date,
            t_min: None,
            t_max: None,
            rh_mean: None,
            rh_min: None,
            rh_max: None,
            wind_mean_2m: None,
            solar_mj: None,
            rain_mm: None,
            pressure_kpa: None,
            hourly_temps: [None; 24],
        }
    }

    /// A summary carrying only the temperature extremes.
    pub fn from_extremes(date: NaiveDate, t_min: f64, t_max: f64) -> Self {
        DailySummary {
            t_min: Some(t_min),
            t_max: Some(t_max),
            ..DailySummary::empty(date)
        }
    }

    pub fn t_mean(&self) -> Option<f64> {
        Some((self.t_min? + self.t_max?) / 2.0)
    }

    pub fn validate(&self) -> Result<(), AgrometError> {
        if let (Some(t_min), Some(t_max)) = (self.t_min, self.t_max) {
            if t_min > t_max {
                return Err(AgrometError::InvalidSummary { t_min, t_max });
            }
        }
        if let (Some(lo), Some(mean), Some(hi)) = (self.rh_min, self.rh_mean, self.rh_max) {
            if !(lo <= mean && mean <= hi) {
                return Err(AgrometError::IncompleteInput("rh_mean within [rh_min, rh_max]"));
            }
        }
        if self.solar_mj.is_some_and(|s| s < 0.0) {
            return Err(AgrometError::IncompleteInput("solar_mj >= 0"));
        }
        if self.rain_mm.is_some_and(|r| r < 0.0) {
            return Err(AgrometError::IncompleteInput("rain_mm >= 0"));
        }
        Ok(())
    }
}

/// Magnus approximation of the dew point.
pub fn dew_point(t_c: f64, rh_pct: f64) -> Result<f64, AgrometError> {
    if !(rh_pct > 0.0 && rh_pct <= 100.0) {
        return Err(AgrometError::HumidityDomain(rh_pct));
    }
    if rh_pct == 100.0 {
        return Ok(t_c);
    }
    let gamma = (rh_pct / 100.0).ln() + MAGNUS_A * t_c / (MAGNUS_B + t_c);
    Ok(MAGNUS_B * gamma / (MAGNUS_A - gamma))
}

/// Saturation vapour pressure over water, kPa.
pub fn saturation_vapour_pressure(t_c: f64) -> f64 {
    0.6108 * (17.27 * t_c / (t_c + 237.3)).exp()
}

/// Atmospheric pressure estimated from elevation when the station has no barometer.
pub fn pressure_from_elevation(elevation_m: f64) -> f64 {
    101.3 * ((293.0 - 0.0065 * elevation_m) / 293.0).powf(5.26)
}

/// Extraterrestrial radiation for a daily period, MJ/m²/day.
pub fn extraterrestrial_radiation(latitude_deg: f64, day_of_year: u32) -> f64 {
    let lat = latitude_deg.to_radians();
    let j = day_of_year as f64;
    let dr = 1.0 + 0.033 * (2.0 * std::f64::consts::PI * j / 365.0).cos();
    let decl = 0.409 * (2.0 * std::f64::consts::PI * j / 365.0 - 1.39).sin();
    // Clamp handles polar day/night.
    let ws = (-lat.tan() * decl.tan()).clamp(-1.0, 1.0).acos();
    24.0 * 60.0 / std::f64::consts::PI
        * SOLAR_CONSTANT
        * dr
        * (ws * lat.sin() * decl.sin() + lat.cos() * decl.cos() * ws.sin())
}

/// The quantities the Penman–Monteith daily equation combines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Et0Terms {
    /// Slope of the saturation vapour pressure curve, kPa/°C.
    pub delta: f64,
    /// Net radiation, MJ/m²/day.
    pub net_radiation: f64,
    /// Soil heat flux, MJ/m²/day.
    pub soil_heat_flux: f64,
    /// Psychrometric constant, kPa/°C.
    pub gamma: f64,
    pub t_mean: f64,
    pub wind_2m: f64,
    pub es: f64,
    pub ea: f64,
}

impl Et0Terms {
    /// Reference evapotranspiration, mm/day, floored at zero.
    pub fn et0(&self) -> f64 {
        let radiative = 0.408 * self.delta * (self.net_radiation - self.soil_heat_flux);
        let aerodynamic = self.gamma * 900.0 / (self.t_mean + 273.0) * self.wind_2m * (self.es - self.ea);
        let denom = self.delta + self.gamma * (1.0 + 0.34 * self.wind_2m);
        ((radiative + aerodynamic) / denom).max(0.0)
    }
}

/// Assembles the Penman–Monteith terms for one day (albedo 0.23, G = 0).
pub fn et0_terms(
    summary: &DailySummary,
    latitude: f64,
    day_of_year: u32,
    elevation_m: f64,
) -> Result<Et0Terms, AgrometError> {
    if !(1..=366).contains(&day_of_year) {
        return Err(AgrometError::DayOfYear(day_of_year));
    }
    summary.validate()?;
    let t_min = summary.t_min.ok_or(AgrometError::IncompleteInput("t_min"))?;
    let t_max = summary.t_max.ok_or(AgrometError::IncompleteInput("t_max"))?;
    let wind = summary.wind_mean_2m.ok_or(AgrometError::IncompleteInput("wind_mean_2m"))?;
    let solar = summary.solar_mj.ok_or(AgrometError::IncompleteInput("solar_mj"))?;
    let pressure = summary
        .pressure_kpa
        .unwrap_or_else(|| pressure_from_elevation(elevation_m));

    let t_mean = (t_min + t_max) / 2.0;
    let e_min = saturation_vapour_pressure(t_min);
    let e_max = saturation_vapour_pressure(t_max);
    let es = (e_min + e_max) / 2.0;
    let ea = match (summary.rh_min, summary.rh_max, summary.rh_mean) {
        (Some(rh_min), Some(rh_max), _) => (e_min * rh_max / 100.0 + e_max * rh_min / 100.0) / 2.0,
        (_, _, Some(rh_mean)) => rh_mean / 100.0 * es,
        _ => return Err(AgrometError::IncompleteInput("rh_mean")),
    };
    let delta = 4098.0 * saturation_vapour_pressure(t_mean) / (t_mean + 237.3).powi(2);
    let gamma = 0.665e-3 * pressure;

    let ra = extraterrestrial_radiation(latitude, day_of_year);
    let rso = (0.75 + 2e-5 * elevation_m) * ra;
    let rns = (1.0 - REFERENCE_ALBEDO) * solar;
    let relative_shortwave = if rso > 0.0 { (solar / rso).min(1.0) } else { 0.0 };
    let rnl = STEFAN_BOLTZMANN
        * ((t_max + 273.16).powi(4) + (t_min + 273.16).powi(4))
        / 2.0
        * (0.34 - 0.14 * ea.max(0.0).sqrt())
        * (1.35 * relative_shortwave - 0.35);

    Ok(Et0Terms {
        delta,
        net_radiation: rns - rnl,
        soil_heat_flux: 0.0,
        gamma,
        t_mean,
        wind_2m: wind,
        es,
        ea,
    })
}

/// FAO-56 Penman–Monteith reference evapotranspiration, mm/day.
pub fn et0_daily(
    summary: &DailySummary,
    latitude: f64,
    day_of_year: u32,
    elevation_m: f64,
) -> Result<f64, AgrometError> {
    Ok(et0_terms(summary, latitude, day_of_year, elevation_m)?.et0())
}

/// Simple-average degree-days, clamped at zero. With a cap, both extremes
/// are limited to the cap before averaging.
pub fn gdd_daily(t_min: f64, t_max: f64, base: f64, upper_cap: Option<f64>) -> Result<f64, AgrometError> {
    if t_min > t_max {
        return Err(AgrometError::InvalidSummary { t_min, t_max });
    }
    let (lo, hi) = match upper_cap {
        Some(cap) => (t_min.min(cap), t_max.min(cap)),
        None => (t_min, t_max),
    };
    Ok(((lo + hi) / 2.0 - base).max(0.0))
}

/// Running season total of [`gdd_daily`], one entry per input day.
pub fn accumulate_gdd(
    days: &[DailySummary],
    base: f64,
    upper_cap: Option<f64>,
    season_start: NaiveDate,
) -> Result<Vec<(NaiveDate, f64)>, AgrometError> {
    let Some(first) = days.first() else {
        return Ok(Vec::new());
    };
    if season_start > first.date {
        return Err(AgrometError::SeasonStart {
            start: season_start,
            first: first.date,
        });
    }
    let mut out = Vec::with_capacity(days.len());
    let mut total = 0.0;
    let mut prev: Option<NaiveDate> = None;
    for day in days {
        if prev.is_some_and(|p| day.date <= p) {
            return Err(AgrometError::Ordering(day.date));
        }
        prev = Some(day.date);
        let t_min = day.t_min.ok_or(AgrometError::IncompleteInput("t_min"))?;
        let t_max = day.t_max.ok_or(AgrometError::IncompleteInput("t_max"))?;
        total += gdd_daily(t_min, t_max, base, upper_cap)?;
        out.push((day.date, total));
    }
    Ok(out)
}

/// Hours with 0 ≤ t ≤ 7 °C. Missing slots count as zero.
pub fn chill_hours(hourly_temps: &[Option<f64>]) -> u32 {
    hourly_temps
        .iter()
        .flatten()
        .filter(|t| (0.0..=7.0).contains(*t))
        .count() as u32
}

/// Number of missing slots, reported alongside chill totals.
pub fn missing_slots(hourly_temps: &[Option<f64>]) -> usize {
    hourly_temps.iter().filter(|t| t.is_none()).count()
}

/// One temperature band, open below and closed above: `(above, up_to]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChillBand {
    pub above: f64,
    pub up_to: f64,
    pub weight: f64,
}

/// Chill-unit weights per temperature band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChillBand>", into = "Vec<ChillBand>")]
pub struct ChillBandTable {
    bands: Vec<ChillBand>,
}

impl ChillBandTable {
    /// Builds a table from bands sorted by temperature. Gaps between bands
    /// and the tails are padded with zero-weight bands.
    pub fn new(bands: Vec<ChillBand>) -> Result<Self, AgrometError> {
        let mut padded = Vec::with_capacity(bands.len() + 2);
        let mut edge = f64::NEG_INFINITY;
        for band in bands {
            if band.above.is_nan() || band.up_to.is_nan() || band.above >= band.up_to {
                return Err(AgrometError::BandTable(format!(
                    "band ({}, {}] is empty",
                    band.above, band.up_to
                )));
            }
            if band.above < edge {
                return Err(AgrometError::BandTable(format!("band starting at {} overlaps", band.above)));
            }
            if band.above > edge {
                padded.push(ChillBand {
                    above: edge,
                    up_to: band.above,
                    weight: 0.0,
                });
            }
            edge = band.up_to;
            padded.push(band);
        }
        if edge < f64::INFINITY {
            padded.push(ChillBand {
                above: edge,
                up_to: f64::INFINITY,
                weight: 0.0,
            });
        }
        Ok(ChillBandTable { bands: padded })
    }

    /// Richardson's Utah model at 0.1 °C resolution.
    pub fn utah() -> Self {
        let band = |above: f64, up_to: f64, weight: f64| ChillBand { above, up_to, weight };
        ChillBandTable::new(vec![
            band(f64::NEG_INFINITY, 1.4, 0.0),
            band(1.4, 2.4, 0.5),
            band(2.4, 9.1, 1.0),
            band(9.1, 12.4, 0.5),
            band(12.4, 15.9, 0.0),
            band(15.9, 18.0, -0.5),
            band(18.0, f64::INFINITY, -1.0),
        ])
        .expect("built-in table is well formed")
    }

    pub fn bands(&self) -> &[ChillBand] {
        &self.bands
    }

    pub fn weight(&self, t_c: f64) -> f64 {
        // Bands are contiguous, so the first with t <= up_to contains t.
        let idx = self.bands.partition_point(|b| b.up_to < t_c);
        self.bands.get(idx).map_or(0.0, |b| b.weight)
    }
}

impl Default for ChillBandTable {
    fn default() -> Self {
        ChillBandTable::utah()
    }
}

impl TryFrom<Vec<ChillBand>> for ChillBandTable {
    type Error = AgrometError;

    fn try_from(bands: Vec<ChillBand>) -> Result<Self, Self::Error> {
        ChillBandTable::new(bands)
    }
}

impl From<ChillBandTable> for Vec<ChillBand> {
    fn from(table: ChillBandTable) -> Self {
        table.bands
    }
}

/// Sum of per-hour chill weights.
pub fn utah_units(hourly_temps: &[Option<f64>], table: &ChillBandTable) -> f64 {
    hourly_temps.iter().flatten().map(|&t| table.weight(t)).sum()
}

/// Apparent temperature from the NOAA Rothfusz regression. Below the
/// regression's validity threshold the ambient temperature is returned.
pub fn heat_index(t_c: f64, rh_pct: f64) -> f64 {
    if t_c < HEAT_INDEX_MIN_C {
        return t_c;
    }
    let t = t_c * 9.0 / 5.0 + 32.0;
    let r = rh_pct.clamp(0.0, 100.0);
    let hi_f = -42.379 + 2.049_015_23 * t + 10.143_331_27 * r
        - 0.224_755_41 * t * r
        - 0.006_837_83 * t * t
        - 0.054_817_17 * r * r
        + 0.001_228_74 * t * t * r
        + 0.000_852_82 * t * r * r
        - 0.000_001_99 * t * t * r * r;
    // The regression dips under ambient in very dry air.
    ((hi_f - 32.0) * 5.0 / 9.0).max(t_c)
}

pub fn ndvi(nir: f64, red: f64) -> Result<f64, AgrometError> {
    for r in [nir, red] {
        if !(0.0..=1.0).contains(&r) {
            return Err(AgrometError::Reflectance(r));
        }
    }
    if nir == 0.0 && red == 0.0 {
        return Err(AgrometError::UndefinedIndex);
    }
    Ok((nir - red) / (nir + red))
}

/// Elevated minus ground temperature; positive means an inversion.
/// Each argument is `(timestamp, °C)`.
pub fn inversion_strength(elevated: (i64, f64), ground: (i64, f64)) -> Result<f64, AgrometError> {
    let skew = (elevated.0 - ground.0).abs();
    if skew > INVERSION_PAIRING_TOLERANCE_S {
        return Err(AgrometError::StalePairing(skew));
    }
    Ok(elevated.1 - ground.1)
}

/// Hours of leaf wetness at or above `threshold`. Each sample stands for the
/// 15-minute interval it falls in; repeated samples in one interval count once.
pub fn leaf_wetness_hours(series: &[(i64, f64)], threshold: f64) -> f64 {
    let mut wet_intervals = 0u32;
    let mut last_slot: Option<i64> = None;
    for &(ts, wetness) in series {
        let slot = ts.div_euclid(WETNESS_INTERVAL_S);
        if wetness >= threshold && last_slot != Some(slot) {
            wet_intervals += 1;
            last_slot = Some(slot);
        }
    }
    wet_intervals as f64 * WETNESS_INTERVAL_S as f64 / 3600.0
}
