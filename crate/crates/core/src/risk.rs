//! Disease pressure, insect development, wind spread, frost and spray timing.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::agromet::DailySummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    Moderate,
    High,
}

/// Value → band thresholds: `value > high_above` is high, otherwise
/// `value >= moderate_from` is moderate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandThresholds {
    pub moderate_from: f64,
    pub high_above: f64,
}

impl BandThresholds {
    pub fn band(&self, value: f64) -> Band {
        if value > self.high_above {
            Band::High
        } else if value >= self.moderate_from {
            Band::Moderate
        } else {
            Band::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    PowderyMildew,
    DownyMildew,
    BotrytisFlag,
    Insect(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub kind: RiskKind,
    pub value: f64,
    pub band: Band,
    pub as_of: Option<NaiveDate>,
    pub station_id: Option<String>,
}

impl RiskScore {
    pub fn at(mut self, as_of: NaiveDate, station_id: &str) -> Self {
        self.as_of = Some(as_of);
        self.station_id = Some(station_id.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowderyMildewParams {
    pub qualifying_low_c: f64,
    pub qualifying_high_c: f64,
    pub qualifying_hours: u32,
    pub days_to_initiate: u32,
    pub increment: f64,
    pub decrement: f64,
    pub bands: BandThresholds,
}

impl Default for PowderyMildewParams {
    fn default() -> Self {
        PowderyMildewParams {
            qualifying_low_c: 21.0,
            qualifying_high_c: 30.0,
            qualifying_hours: 6,
            days_to_initiate: 3,
            increment: 20.0,
            decrement: 10.0,
            bands: BandThresholds {
                moderate_from: 40.0,
                high_above: 60.0,
            },
        }
    }
}

/// Running state of the powdery mildew index. Before initiation the index is
/// zero and only the qualifying-day streak is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowderyMildewState {
    pub index: Option<f64>,
    pub streak: u32,
}

impl PowderyMildewState {
    pub fn resumed(prior_index: Option<f64>) -> Self {
        PowderyMildewState {
            index: prior_index.map(|v| v.clamp(0.0, 100.0)),
            streak: 0,
        }
    }

    pub fn value(&self) -> f64 {
        self.index.unwrap_or(0.0)
    }

    pub fn step(&mut self, hourly_temps: &[Option<f64>], params: &PowderyMildewParams) {
        let qualifying = qualifying_day(hourly_temps, params);
        match self.index {
            Some(index) => {
                let next = if qualifying {
                    index + params.increment
                } else {
                    index - params.decrement
                };
                self.index = Some(next.clamp(0.0, 100.0));
            }
            None => {
                self.streak = if qualifying { self.streak + 1 } else { 0 };
                if self.streak >= params.days_to_initiate {
                    let start = params.increment * params.days_to_initiate as f64;
                    self.index = Some(start.clamp(0.0, 100.0));
                }
            }
        }
    }
}

/// A day qualifies with enough hours inside the favourable band.
pub fn qualifying_day(hourly_temps: &[Option<f64>], params: &PowderyMildewParams) -> bool {
    let hours = hourly_temps
        .iter()
        .flatten()
        .filter(|t| (params.qualifying_low_c..=params.qualifying_high_c).contains(*t))
        .count();
    hours as u32 >= params.qualifying_hours
}

pub fn powdery_mildew_index(
    hourly_temps_by_day: &[[Option<f64>; 24]],
    prior_index: Option<f64>,
    params: &PowderyMildewParams,
) -> RiskScore {
    let mut state = PowderyMildewState::resumed(prior_index);
    for day in hourly_temps_by_day {
        state.step(day, params);
    }
    let value = state.value();
    RiskScore {
        kind: RiskKind::PowderyMildew,
        value,
        band: params.bands.band(value),
        as_of: None,
        station_id: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownyMildewParams {
    pub min_mean_temp_c: f64,
    pub min_rain_mm: f64,
    pub min_wet_hours: f64,
}

impl Default for DownyMildewParams {
    fn default() -> Self {
        DownyMildewParams {
            min_mean_temp_c: 10.0,
            min_rain_mm: 10.0,
            min_wet_hours: 10.0,
        }
    }
}

/// Number of 10-10-24 conditions met (0–3); two is moderate, three high.
pub fn downy_mildew_risk(day: &DailySummary, leaf_wetness_h: f64, params: &DownyMildewParams) -> RiskScore {
    let conditions = [
        day.t_mean().is_some_and(|t| t >= params.min_mean_temp_c),
        day.rain_mm.is_some_and(|r| r >= params.min_rain_mm),
        leaf_wetness_h >= params.min_wet_hours,
    ];
    let met = conditions.iter().filter(|c| **c).count() as f64;
    RiskScore {
        kind: RiskKind::DownyMildew,
        value: met,
        band: DOWNY_BANDS.band(met),
        as_of: None,
        station_id: None,
    }
}

const DOWNY_BANDS: BandThresholds = BandThresholds {
    moderate_from: 2.0,
    high_above: 2.0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BotrytisParams {
    pub min_wet_hours: f64,
    pub temp_low_c: f64,
    pub temp_high_c: f64,
}

impl Default for BotrytisParams {
    fn default() -> Self {
        BotrytisParams {
            min_wet_hours: 12.0,
            temp_low_c: 15.0,
            temp_high_c: 25.0,
        }
    }
}

/// Elevated (value 1, high) on long wet periods at mild temperatures.
pub fn botrytis_flag(t_mean: f64, leaf_wetness_h: f64, params: &BotrytisParams) -> RiskScore {
    let elevated = leaf_wetness_h >= params.min_wet_hours
        && (params.temp_low_c..=params.temp_high_c).contains(&t_mean);
    RiskScore {
        kind: RiskKind::BotrytisFlag,
        value: if elevated { 1.0 } else { 0.0 },
        band: if elevated { Band::High } else { Band::Low },
        as_of: None,
        station_id: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsectModel {
    pub species: String,
    pub base_temp: f64,
    /// Degree-days from biofix at which each named stage begins.
    pub stage_thresholds: Vec<(f64, String)>,
    pub biofix_rule: String,
}

impl InsectModel {
    /// Grape berry moth with a March 1 calendar biofix.
    pub fn grape_berry_moth() -> Self {
        InsectModel {
            species: "grape_berry_moth".into(),
            base_temp: 8.9,
            stage_thresholds: vec![
                (250.0, "first_generation_egg_hatch".into()),
                (450.0, "second_flight".into()),
                (700.0, "second_generation_egg_hatch".into()),
                (900.0, "third_flight".into()),
                (1150.0, "third_generation_egg_hatch".into()),
            ],
            biofix_rule: "calendar:03-01".into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stage_thresholds.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(format!("{}: thresholds must be strictly increasing", self.species));
        }
        Ok(())
    }

    /// Calendar biofix for a season year, or `None` when the rule names a trap event.
    pub fn calendar_biofix(&self, year: i32) -> Option<NaiveDate> {
        let md = self.biofix_rule.strip_prefix("calendar:")?;
        let (m, d) = md.split_once('-')?;
        NaiveDate::from_ymd_opt(year, m.parse().ok()?, d.parse().ok()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsectStage {
    /// `None` before the first threshold is reached.
    pub stage: Option<String>,
    /// Degree-days to the next threshold; `None` past the last one.
    pub distance_to_next: Option<f64>,
}

pub fn insect_stage(cumulative_dd: f64, model: &InsectModel) -> InsectStage {
    let reached = model.stage_thresholds.partition_point(|(t, _)| *t <= cumulative_dd);
    InsectStage {
        stage: reached.checked_sub(1).map(|i| model.stage_thresholds[i].1.clone()),
        distance_to_next: model.stage_thresholds.get(reached).map(|(t, _)| t - cumulative_dd),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reach {
    Near,
    Moderate,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindSpreadParams {
    pub calm_below: f64,
    pub min_width_deg: f64,
    pub max_width_deg: f64,
    /// Mean-speed breakpoints between near/moderate and moderate/far.
    pub reach_breaks: (f64, f64),
}

impl Default for WindSpreadParams {
    fn default() -> Self {
        WindSpreadParams {
            calm_below: 0.5,
            min_width_deg: 30.0,
            max_width_deg: 180.0,
            reach_breaks: (3.0, 6.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum SpreadSector {
    Sector {
        origin: String,
        center_deg: f64,
        width_deg: f64,
        reach: Reach,
    },
    NoSector {
        origin: String,
    },
}

/// Downwind sector from a series of `(speed m/s, direction-from °)`.
/// Calm samples are ignored; the rest are weighted by speed.
pub fn wind_spread_sector(wind_series: &[(f64, f64)], origin: &str, params: &WindSpreadParams) -> SpreadSector {
    let (mut sx, mut sy, mut weight, mut n) = (0.0, 0.0, 0.0, 0usize);
    for &(speed, from_deg) in wind_series {
        if speed < params.calm_below {
            continue;
        }
        let downwind = (from_deg + 180.0).to_radians();
        sx += speed * downwind.sin();
        sy += speed * downwind.cos();
        weight += speed;
        n += 1;
    }
    if n == 0 {
        return SpreadSector::NoSector { origin: origin.into() };
    }
    let center_deg = sx.atan2(sy).to_degrees().rem_euclid(360.0);
    let resultant = (sx.hypot(sy) / weight).min(1.0);
    let spread_deg = if resultant > 0.0 {
        (-2.0 * resultant.ln()).sqrt().to_degrees()
    } else {
        f64::INFINITY
    };
    let mean_speed = weight / n as f64;
    let reach = if mean_speed < params.reach_breaks.0 {
        Reach::Near
    } else if mean_speed < params.reach_breaks.1 {
        Reach::Moderate
    } else {
        Reach::Far
    };
    SpreadSector::Sector {
        origin: origin.into(),
        center_deg,
        width_deg: spread_deg.clamp(params.min_width_deg, params.max_width_deg),
        reach,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrostSeverity {
    None,
    Watch,
    Warning,
    Severe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    WindMachine,
    Sprinkler,
    Heater,
    NoneEffective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrostParams {
    pub watch_at_or_below: f64,
    pub warning_at_or_below: f64,
    pub severe_at_or_below: f64,
    pub wind_machine_min_inversion: f64,
    pub sprinkler_floor: f64,
}

impl Default for FrostParams {
    fn default() -> Self {
        FrostParams {
            watch_at_or_below: 2.0,
            warning_at_or_below: 0.0,
            severe_at_or_below: -2.0,
            wind_machine_min_inversion: 1.5,
            sprinkler_floor: -4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrostAssessment {
    pub date: Option<NaiveDate>,
    pub severity: FrostSeverity,
    pub forecast_tmin: f64,
    pub dew_point_spread: f64,
    pub inversion_strength: f64,
    pub wind_mean: f64,
    pub advice: Vec<Mitigation>,
}

pub fn frost_risk(
    forecast_tmin: f64,
    current_dew_point: f64,
    wind_mean: f64,
    inversion: f64,
    params: &FrostParams,
) -> FrostAssessment {
    let severity = if forecast_tmin <= params.severe_at_or_below {
        FrostSeverity::Severe
    } else if forecast_tmin <= params.warning_at_or_below {
        FrostSeverity::Warning
    } else if forecast_tmin <= params.watch_at_or_below {
        FrostSeverity::Watch
    } else {
        FrostSeverity::None
    };
    let mut advice = Vec::new();
    if severity != FrostSeverity::None {
        if inversion >= params.wind_machine_min_inversion {
            advice.push(Mitigation::WindMachine);
        }
        if forecast_tmin >= params.sprinkler_floor {
            advice.push(Mitigation::Sprinkler);
        }
        if advice.is_empty() && severity >= FrostSeverity::Warning {
            advice.push(Mitigation::NoneEffective);
        }
    }
    FrostAssessment {
        date: None,
        severity,
        forecast_tmin,
        dew_point_spread: forecast_tmin - current_dew_point,
        inversion_strength: inversion,
        wind_mean,
        advice,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyConditions {
    /// Start of the hour, epoch seconds.
    pub time: i64,
    pub wind: f64,
    pub rain_prob: f64,
}

/// Maximal runs of consecutive hours that satisfy both limits and last at
/// least `min_window_h`. Each entry covers `[time, time + 1h)`; a time gap
/// between entries ends a run.
pub fn spray_window(
    hourly_forecast: &[HourlyConditions],
    max_wind: f64,
    max_rain_prob: f64,
    min_window_h: f64,
) -> Vec<(i64, i64)> {
    const HOUR: i64 = 3600;
    let mut windows = Vec::new();
    let mut open: Option<(i64, i64)> = None;
    let close = |run: Option<(i64, i64)>, out: &mut Vec<(i64, i64)>| {
        if let Some((start, end)) = run {
            if (end - start) as f64 >= min_window_h * HOUR as f64 {
                out.push((start, end));
            }
        }
    };
    for h in hourly_forecast {
        let good = h.wind <= max_wind && h.rain_prob <= max_rain_prob;
        open = match (open, good) {
            (Some((start, end)), true) if end == h.time => Some((start, h.time + HOUR)),
            (run, true) => {
                close(run, &mut windows);
                Some((h.time, h.time + HOUR))
            }
            (run, false) => {
                close(run, &mut windows);
                None
            }
        };
    }
    close(open, &mut windows);
    windows
}
