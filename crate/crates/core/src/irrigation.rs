//! Per-block soil water deficit bookkeeping and irrigation advice.

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phenology::Stage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IrrigationError {
    #[error("`{field}` must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("application efficiency {0} outside (0, 1]")]
    Efficiency(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrrigationParams {
    /// Daily rain retained by the canopy before any reaches the soil, mm.
    pub interception_mm: f64,
    pub threshold_mm: f64,
    pub efficiency: f64,
}

impl Default for IrrigationParams {
    fn default() -> Self {
        IrrigationParams {
            interception_mm: 2.0,
            threshold_mm: 25.0,
            efficiency: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedIrrigation {
    pub date: NaiveDate,
    pub mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterBalanceState {
    pub block_id: String,
    pub date: NaiveDate,
    pub deficit_mm: f64,
    pub last_irrigation: Option<AppliedIrrigation>,
    pub kc_current: f64,
}

impl WaterBalanceState {
    pub fn new(block_id: impl Into<String>, date: NaiveDate) -> Self {
        WaterBalanceState {
            block_id: block_id.into(),
            date,
            deficit_mm: 0.0,
            last_irrigation: None,
            kc_current: 0.0,
        }
    }
}

/// One day of water-balance inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterDay {
    pub date: NaiveDate,
    pub et0_mm: f64,
    pub kc: f64,
    pub rain_mm: f64,
    pub irrigation_mm: f64,
}

pub fn effective_rain(rain_mm: f64, interception_mm: f64) -> f64 {
    (rain_mm - interception_mm).max(0.0)
}

/// Applies one day: crop water use adds to the deficit, effective rain and
/// irrigation replenish it. Surplus is not carried.
pub fn update_balance(
    state: &WaterBalanceState,
    day: &WaterDay,
    params: &IrrigationParams,
) -> Result<WaterBalanceState, IrrigationError> {
    for (field, value) in [
        ("et0", day.et0_mm),
        ("kc", day.kc),
        ("rain_mm", day.rain_mm),
        ("irrigation_mm", day.irrigation_mm),
    ] {
        if !(value >= 0.0) {
            return Err(IrrigationError::Negative { field, value });
        }
    }
    let deficit = state.deficit_mm + day.et0_mm * day.kc
        - effective_rain(day.rain_mm, params.interception_mm)
        - day.irrigation_mm;
    let last_irrigation = if day.irrigation_mm > 0.0 {
        Some(AppliedIrrigation {
            date: day.date,
            mm: day.irrigation_mm,
        })
    } else {
        state.last_irrigation
    };
    Ok(WaterBalanceState {
        block_id: state.block_id.clone(),
        date: day.date,
        deficit_mm: deficit.max(0.0),
        last_irrigation,
        kc_current: day.kc,
    })
}

/// Folds [`update_balance`] over consecutive days.
pub fn run_balance(
    start: WaterBalanceState,
    days: &[WaterDay],
    params: &IrrigationParams,
) -> Result<WaterBalanceState, IrrigationError> {
    days.iter().try_fold(start, |state, day| update_balance(&state, day, params))
}

/// Reduces the deficit by a completed irrigation reported after the fact.
pub fn apply_irrigation_event(state: &WaterBalanceState, date: NaiveDate, mm: f64) -> Result<WaterBalanceState, IrrigationError> {
    if !(mm >= 0.0) {
        return Err(IrrigationError::Negative {
            field: "irrigation_mm",
            value: mm,
        });
    }
    let mut next = state.clone();
    next.deficit_mm = (state.deficit_mm - mm).max(0.0);
    if mm > 0.0 {
        next.last_irrigation = Some(AppliedIrrigation { date, mm });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrrigationAction {
    Irrigate,
    Skip,
    NoneNeeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrigationRecommendation {
    pub action: IrrigationAction,
    pub amount_mm: Option<f64>,
    pub reason: String,
    pub valid_until: NaiveDate,
}

pub fn recommend(
    state: &WaterBalanceState,
    forecast_rain_48h: f64,
    threshold_mm: f64,
    efficiency: f64,
) -> Result<IrrigationRecommendation, IrrigationError> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(IrrigationError::Efficiency(efficiency));
    }
    let valid_until = state.date.checked_add_days(Days::new(1)).unwrap_or(state.date);
    let deficit = state.deficit_mm;
    let rec = if deficit < threshold_mm {
        IrrigationRecommendation {
            action: IrrigationAction::NoneNeeded,
            amount_mm: None,
            reason: format!("deficit {deficit:.1} mm below threshold {threshold_mm:.1} mm"),
            valid_until,
        }
    } else if forecast_rain_48h >= deficit {
        IrrigationRecommendation {
            action: IrrigationAction::Skip,
            amount_mm: None,
            reason: format!(
                "expected rainfall of {forecast_rain_48h:.1} mm within 48 h covers the {deficit:.1} mm deficit"
            ),
            valid_until,
        }
    } else {
        let amount = deficit / efficiency;
        IrrigationRecommendation {
            action: IrrigationAction::Irrigate,
            amount_mm: Some(amount),
            reason: format!("deficit {deficit:.1} mm at {:.0}% application efficiency", efficiency * 100.0),
            valid_until,
        }
    };
    Ok(rec)
}

/// Crop coefficients by growth stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KcTable {
    pub dormancy: f64,
    pub bud_break: f64,
    pub flowering: f64,
    pub veraison: f64,
    pub harvest: f64,
}

impl Default for KcTable {
    fn default() -> Self {
        KcTable {
            dormancy: 0.0,
            bud_break: 0.3,
            flowering: 0.5,
            veraison: 0.7,
            harvest: 0.6,
        }
    }
}

impl KcTable {
    pub fn kc_for_stage(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Dormancy => self.dormancy,
            Stage::BudBreak => self.bud_break,
            Stage::Flowering => self.flowering,
            Stage::Veraison => self.veraison,
            Stage::Harvest => self.harvest,
        }
    }
}

pub fn kc_for_stage(stage: Stage) -> f64 {
    KcTable::default().kc_for_stage(stage)
}
