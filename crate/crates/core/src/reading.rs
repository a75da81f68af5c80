//! The atom of ingestion: one timestamped measurement from one station.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    /// Air temperature at canopy height, °C.
    Temperature,
    /// Relative humidity, %.
    RelativeHumidity,
    /// Station pressure, kPa.
    Pressure,
    /// Global solar radiation, W/m².
    SolarRadiation,
    /// m/s
    WindSpeed,
    /// Degrees from north the wind blows *from*.
    WindDirection,
    /// mm fallen during the sampling interval.
    Rain,
    /// % wet, or 0/1 for boolean sensors.
    LeafWetness,
    /// % volumetric water content.
    SoilMoisture,
    /// Temperature on the elevated (pole) sensor, °C.
    TemperatureElevated,
    NirReflectance,
    RedReflectance,
    UvIndex,
    /// Completed irrigation reported by the irrigation controller, mm.
    IrrigationApplied,
}

impl SensorKind {
    pub const ALL: [SensorKind; 14] = [
        SensorKind::Temperature,
        SensorKind::RelativeHumidity,
        SensorKind::Pressure,
        SensorKind::SolarRadiation,
        SensorKind::WindSpeed,
        SensorKind::WindDirection,
        SensorKind::Rain,
        SensorKind::LeafWetness,
        SensorKind::SoilMoisture,
        SensorKind::TemperatureElevated,
        SensorKind::NirReflectance,
        SensorKind::RedReflectance,
        SensorKind::UvIndex,
        SensorKind::IrrigationApplied,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Temperature => "temperature",
            SensorKind::RelativeHumidity => "relative_humidity",
            SensorKind::Pressure => "pressure",
            SensorKind::SolarRadiation => "solar_radiation",
            SensorKind::WindSpeed => "wind_speed",
            SensorKind::WindDirection => "wind_direction",
            SensorKind::Rain => "rain",
            SensorKind::LeafWetness => "leaf_wetness",
            SensorKind::SoilMoisture => "soil_moisture",
            SensorKind::TemperatureElevated => "temperature_elevated",
            SensorKind::NirReflectance => "nir_reflectance",
            SensorKind::RedReflectance => "red_reflectance",
            SensorKind::UvIndex => "uv_index",
            SensorKind::IrrigationApplied => "irrigation_applied",
        }
    }

    /// Checks the physical bounds a value of this kind must satisfy.
    pub fn check_value(self, value: f64) -> Result<(), ReadingError> {
        if !value.is_finite() {
            return Err(ReadingError::NonFinite(self));
        }
        let ok = match self {
            SensorKind::RelativeHumidity => (0.0..=100.0).contains(&value),
            SensorKind::Rain
            | SensorKind::WindSpeed
            | SensorKind::SolarRadiation
            | SensorKind::UvIndex
            | SensorKind::IrrigationApplied
            | SensorKind::Pressure => value >= 0.0,
            SensorKind::NirReflectance | SensorKind::RedReflectance => (0.0..=1.0).contains(&value),
            SensorKind::WindDirection => (0.0..=360.0).contains(&value),
            SensorKind::LeafWetness | SensorKind::SoilMoisture => (0.0..=100.0).contains(&value),
            SensorKind::Temperature | SensorKind::TemperatureElevated => (-80.0..=70.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(ReadingError::OutOfRange { kind: self, value })
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SensorKind {
    type Err = ReadingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SensorKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ReadingError::UnknownSensor(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    #[default]
    Ok,
    Suspect,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub station_id: String,
    pub sensor_kind: SensorKind,
    pub value: f64,
    #[serde(default)]
    pub quality: Quality,
}

impl Reading {
    pub fn new(timestamp: i64, station_id: impl Into<String>, sensor_kind: SensorKind, value: f64) -> Self {
        Reading {
            timestamp,
            station_id: station_id.into(),
            sensor_kind,
            value,
            quality: Quality::Ok,
        }
    }

    pub fn validate(&self) -> Result<(), ReadingError> {
        if self.timestamp <= 0 {
            return Err(ReadingError::NonPositiveTimestamp(self.timestamp));
        }
        if self.station_id.is_empty() {
            return Err(ReadingError::EmptyStation);
        }
        self.sensor_kind.check_value(self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadingError {
    #[error("unknown sensor kind `{0}`")]
    UnknownSensor(String),
    #[error("{kind} value {value} outside its valid range")]
    OutOfRange { kind: SensorKind, value: f64 },
    #[error("{0} value is not finite")]
    NonFinite(SensorKind),
    #[error("timestamp {0} is not strictly positive")]
    NonPositiveTimestamp(i64),
    #[error("station id is empty")]
    EmptyStation,
}
