//! Python bindings.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use vinesense::agromet::{self, ChillBandTable, DailySummary};
use vinesense::fieldsim::{self, LinkModel, SimConfig, TopologyMode};
use vinesense::irrigation::{self, IrrigationParams, WaterBalanceState, WaterDay};
use vinesense::phenology::{self, VarietyProfile};
use vinesense::risk::{self, FrostParams, PowderyMildewParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn date(s: &str) -> PyResult<NaiveDate> {
    s.parse().map_err(|e| value_err(format!("bad date `{s}`: {e}")))
}

#[pyfunction]
fn dew_point(t_c: f64, rh_pct: f64) -> PyResult<f64> {
    agromet::dew_point(t_c, rh_pct).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (t_min, t_max, base=10.0, upper_cap=None))]
fn gdd_daily(t_min: f64, t_max: f64, base: f64, upper_cap: Option<f64>) -> PyResult<f64> {
    agromet::gdd_daily(t_min, t_max, base, upper_cap).map_err(value_err)
}

#[pyfunction]
fn chill_hours(hourly_temps: Vec<Option<f64>>) -> u32 {
    agromet::chill_hours(&hourly_temps)
}

#[pyfunction]
fn utah_units(hourly_temps: Vec<Option<f64>>) -> f64 {
    agromet::utah_units(&hourly_temps, &ChillBandTable::utah())
}

#[pyfunction]
fn heat_index(t_c: f64, rh_pct: f64) -> f64 {
    agromet::heat_index(t_c, rh_pct)
}

#[pyfunction]
fn ndvi(nir: f64, red: f64) -> PyResult<f64> {
    agromet::ndvi(nir, red).map_err(value_err)
}

/// Daily reference evapotranspiration, mm. Give `rh_min` and `rh_max`, or `rh_mean`.
#[pyfunction]
#[pyo3(signature = (date, t_min, t_max, wind_2m, solar_mj, latitude, elevation_m, rh_min=None, rh_max=None, rh_mean=None, pressure_kpa=None))]
#[allow(clippy::too_many_arguments)]
fn et0_daily(
    date: &str,
    t_min: f64,
    t_max: f64,
    wind_2m: f64,
    solar_mj: f64,
    latitude: f64,
    elevation_m: f64,
    rh_min: Option<f64>,
    rh_max: Option<f64>,
    rh_mean: Option<f64>,
    pressure_kpa: Option<f64>,
) -> PyResult<f64> {
    use chrono::Datelike;
    let d = self::date(date)?;
    let mut day = DailySummary::from_extremes(d, t_min, t_max);
    day.wind_mean_2m = Some(wind_2m);
    day.solar_mj = Some(solar_mj);
    day.rh_min = rh_min;
    day.rh_max = rh_max;
    day.rh_mean = rh_mean;
    day.pressure_kpa = pressure_kpa;
    agromet::et0_daily(&day, latitude, d.ordinal(), elevation_m).map_err(value_err)
}

#[pyclass(name = "VarietyProfile", frozen)]
struct PyProfile(VarietyProfile);

#[pymethods]
impl PyProfile {
    #[staticmethod]
    fn cabernet_sauvignon_napa() -> Self {
        PyProfile(VarietyProfile::cabernet_sauvignon_napa())
    }

    #[staticmethod]
    fn chardonnay_burgundy() -> Self {
        PyProfile(VarietyProfile::chardonnay_burgundy())
    }

    #[getter]
    fn key(&self) -> String {
        self.0.key()
    }

    #[getter]
    fn base_temp(&self) -> f64 {
        self.0.base_temp
    }

    /// `(stage, gdd_low, gdd_high)` in season order.
    fn stages(&self) -> Vec<(String, f64, f64)> {
        self.0.stages.iter().map(|r| (r.stage.as_str().to_string(), r.gdd_low, r.gdd_high)).collect()
    }

    fn __repr__(&self) -> String {
        format!("VarietyProfile({:?})", self.0.key())
    }
}

#[pyclass(name = "StageEstimate", frozen, get_all)]
struct PyStageEstimate {
    stage: String,
    bbch: String,
    progress_to_next: f64,
    cumulative_gdd: f64,
}

#[pymethods]
impl PyStageEstimate {
    fn __repr__(&self) -> String {
        format!("StageEstimate(stage={:?}, progress_to_next={:.3}, cumulative_gdd={})", self.stage, self.progress_to_next, self.cumulative_gdd)
    }
}

#[pyfunction]
fn estimate_stage(cumulative_gdd: f64, profile: &PyProfile) -> PyStageEstimate {
    let e = phenology::estimate_stage(cumulative_gdd, &profile.0);
    PyStageEstimate {
        stage: e.current_stage.as_str().to_string(),
        bbch: phenology::bbch_label(e.current_stage),
        progress_to_next: e.progress_to_next,
        cumulative_gdd: e.cumulative_gdd,
    }
}

/// Running season totals from daily `(t_min, t_max)` pairs.
#[pyfunction]
#[pyo3(signature = (extremes, base=10.0, upper_cap=None))]
fn accumulate_gdd(extremes: Vec<(f64, f64)>, base: f64, upper_cap: Option<f64>) -> PyResult<Vec<f64>> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid");
    let days: Vec<DailySummary> = start
        .iter_days()
        .zip(&extremes)
        .map(|(d, &(lo, hi))| DailySummary::from_extremes(d, lo, hi))
        .collect();
    let totals = agromet::accumulate_gdd(&days, base, upper_cap, start).map_err(value_err)?;
    Ok(totals.into_iter().map(|(_, g)| g).collect())
}

#[pyfunction]
#[pyo3(signature = (hourly_temps_by_day, prior_index=None))]
fn powdery_mildew_index(hourly_temps_by_day: Vec<Vec<Option<f64>>>, prior_index: Option<f64>) -> PyResult<f64> {
    let days = hourly_temps_by_day
        .into_iter()
        .map(|d| <[Option<f64>; 24]>::try_from(d).map_err(|d| value_err(format!("a day needs 24 hourly slots, got {}", d.len()))))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(risk::powdery_mildew_index(&days, prior_index, &PowderyMildewParams::default()).value)
}

#[pyclass(name = "FrostAssessment", frozen, get_all)]
struct PyFrost {
    severity: String,
    advice: Vec<String>,
    forecast_tmin: f64,
    dew_point_spread: f64,
}

#[pymethods]
impl PyFrost {
    fn __repr__(&self) -> String {
        format!("FrostAssessment(severity={:?}, advice={:?})", self.severity, self.advice)
    }
}

fn snake<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(str::to_owned)).unwrap_or_default()
}

#[pyfunction]
fn frost_risk(forecast_tmin: f64, current_dew_point: f64, wind_mean: f64, inversion: f64) -> PyFrost {
    let a = risk::frost_risk(forecast_tmin, current_dew_point, wind_mean, inversion, &FrostParams::default());
    PyFrost {
        severity: snake(&a.severity),
        advice: a.advice.iter().map(snake).collect(),
        forecast_tmin: a.forecast_tmin,
        dew_point_spread: a.dew_point_spread,
    }
}

/// Soil water deficit of one block, advanced a day at a time.
#[pyclass(name = "WaterBalance")]
struct PyWaterBalance {
    state: WaterBalanceState,
    params: IrrigationParams,
}

#[pymethods]
impl PyWaterBalance {
    #[new]
    #[pyo3(signature = (block_id, date, deficit_mm=0.0))]
    fn new(block_id: &str, date: &str, deficit_mm: f64) -> PyResult<Self> {
        let mut state = WaterBalanceState::new(block_id, self::date(date)?);
        state.deficit_mm = deficit_mm.max(0.0);
        Ok(PyWaterBalance {
            state,
            params: IrrigationParams::default(),
        })
    }

    #[getter]
    fn deficit_mm(&self) -> f64 {
        self.state.deficit_mm
    }

    #[getter]
    fn date(&self) -> String {
        self.state.date.to_string()
    }

    #[pyo3(signature = (date, et0_mm, kc, rain_mm=0.0, irrigation_mm=0.0))]
    fn update(&mut self, date: &str, et0_mm: f64, kc: f64, rain_mm: f64, irrigation_mm: f64) -> PyResult<f64> {
        let day = WaterDay {
            date: self::date(date)?,
            et0_mm,
            kc,
            rain_mm,
            irrigation_mm,
        };
        self.state = irrigation::update_balance(&self.state, &day, &self.params).map_err(value_err)?;
        Ok(self.state.deficit_mm)
    }

    /// `(action, amount_mm, reason)` with the default threshold and efficiency unless given.
    #[pyo3(signature = (forecast_rain_48h=0.0, threshold_mm=None, efficiency=None))]
    fn recommend(
        &self,
        forecast_rain_48h: f64,
        threshold_mm: Option<f64>,
        efficiency: Option<f64>,
    ) -> PyResult<(String, Option<f64>, String)> {
        let r = irrigation::recommend(
            &self.state,
            forecast_rain_48h,
            threshold_mm.unwrap_or(self.params.threshold_mm),
            efficiency.unwrap_or(self.params.efficiency),
        )
        .map_err(value_err)?;
        Ok((snake(&r.action), r.amount_mm, r.reason))
    }
}

#[pyclass(name = "SimSummary", frozen, get_all)]
struct PySimSummary {
    frames_emitted: u64,
    frames_delivered: u64,
    delivery_ratio: f64,
    mean_hops: f64,
    analytic_delivery_ratio: f64,
    /// station id -> (emitted, delivered, lost, longest_gap)
    per_station: BTreeMap<String, (u64, u64, u64, u64)>,
    /// Delivered readings in the ingestion wire format.
    wire: String,
}

#[pymethods]
impl PySimSummary {
    fn __repr__(&self) -> String {
        format!(
            "SimSummary(frames_emitted={}, frames_delivered={}, delivery_ratio={:.4})",
            self.frames_emitted, self.frames_delivered, self.delivery_ratio
        )
    }
}

/// Runs the field network simulator over the built-in three-station layout.
#[pyfunction]
#[pyo3(signature = (days=1, seed=1, loss=0.0, retries=0, topology="star", start_date="2024-04-01"))]
fn simulate(days: u32, seed: u64, loss: f64, retries: u32, topology: &str, start_date: &str) -> PyResult<PySimSummary> {
    let mode: TopologyMode = topology.parse().map_err(value_err)?;
    let link = LinkModel {
        loss_probability: loss,
        max_retries: retries,
        seed,
    };
    let run = fieldsim::run(SimConfig {
        stations: vinesense::cli::default_layout(),
        mode,
        link,
        start_date: date(start_date)?,
        days,
        seed,
    })
    .map_err(value_err)?;
    Ok(PySimSummary {
        frames_emitted: run.stats.frames_emitted,
        frames_delivered: run.stats.frames_delivered,
        delivery_ratio: run.stats.delivery_ratio,
        mean_hops: run.stats.mean_hops,
        analytic_delivery_ratio: fieldsim::analytic_delivery_ratio(&run.topology, &link),
        per_station: run
            .stats
            .per_station
            .iter()
            .map(|(k, s)| (k.clone(), (s.emitted, s.delivered, s.lost, s.longest_gap)))
            .collect(),
        wire: vinesense::wire::encode_batch(run.readings()),
    })
}

#[pymodule]
#[pyo3(name = "vinesense")]
fn vinesense_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dew_point, m)?)?;
    m.add_function(wrap_pyfunction!(gdd_daily, m)?)?;
    m.add_function(wrap_pyfunction!(accumulate_gdd, m)?)?;
    m.add_function(wrap_pyfunction!(chill_hours, m)?)?;
    m.add_function(wrap_pyfunction!(utah_units, m)?)?;
    m.add_function(wrap_pyfunction!(heat_index, m)?)?;
    m.add_function(wrap_pyfunction!(ndvi, m)?)?;
    m.add_function(wrap_pyfunction!(et0_daily, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_stage, m)?)?;
    m.add_function(wrap_pyfunction!(powdery_mildew_index, m)?)?;
    m.add_function(wrap_pyfunction!(frost_risk, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyStageEstimate>()?;
    m.add_class::<PyFrost>()?;
    m.add_class::<PyWaterBalance>()?;
    m.add_class::<PySimSummary>()?;
    Ok(())
}
