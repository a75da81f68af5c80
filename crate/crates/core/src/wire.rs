//! Ingestion wire format.
//!
//! Newline-delimited UTF-8, one reading per line, fields in this exact order:
//!
//! ```text
//! {"ts":1717200000,"station":"north-01","sensor":"temperature","value":18.25}
//! ```
//!
//! Reordered, missing, duplicated or unknown fields make the line malformed.

use std::fmt;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use thiserror::Error;

use crate::reading::{Reading, ReadingError, SensorKind};

const FIELDS: [&str; 4] = ["ts", "station", "sensor", "value"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WireError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Invalid(#[from] ReadingError),
}

impl WireError {
    /// Short machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            WireError::Malformed(_) => "malformed",
            WireError::Invalid(ReadingError::UnknownSensor(_)) => "unknown_sensor",
            WireError::Invalid(_) => "out_of_range",
        }
    }
}

/// Serializes one reading as a wire line (without the trailing newline).
pub fn encode_reading(reading: &Reading) -> String {
    format!(
        "{{\"ts\":{},\"station\":{},\"sensor\":\"{}\",\"value\":{}}}",
        reading.timestamp,
        serde_json::Value::String(reading.station_id.clone()),
        reading.sensor_kind.as_str(),
        format_value(reading.value)
    )
}

fn format_value(v: f64) -> String {
    // serde_json writes the shortest round-tripping representation.
    serde_json::to_string(&v).unwrap_or_else(|_| "null".into())
}

/// Encodes a batch, one line per reading, each terminated by `\n`.
pub fn encode_batch<'a>(readings: impl IntoIterator<Item = &'a Reading>) -> String {
    let mut out = String::new();
    for r in readings {
        out.push_str(&encode_reading(r));
        out.push('\n');
    }
    out
}

pub fn decode_line(line: &str) -> Result<Reading, WireError> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| WireError::Malformed(e.to_string()))?;
    let sensor_kind: SensorKind = raw.sensor.parse()?;
    let reading = Reading::new(raw.ts, raw.station, sensor_kind, raw.value);
    reading.validate()?;
    Ok(reading)
}

/// Decodes every non-blank line independently, so one bad record does not
/// spoil the batch. Results carry the 1-based line number.
pub fn decode_batch(body: &str) -> Vec<(usize, Result<Reading, WireError>)> {
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, decode_line(l.trim_end_matches('\r'))))
        .collect()
}

struct RawRecord {
    ts: i64,
    station: String,
    sensor: String,
    value: f64,
}

impl<'de> Deserialize<'de> for RawRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_map(RecordVisitor)
    }
}

struct RecordVisitor;

fn expect_key<'de, A: MapAccess<'de>>(map: &mut A, want: &'static str) -> Result<(), A::Error> {
    match map.next_key::<String>()? {
        Some(k) if k == want => Ok(()),
        Some(k) => Err(de::Error::custom(format!("expected field `{want}`, found `{k}`"))),
        None => Err(de::Error::missing_field(want)),
    }
}

impl<'de> Visitor<'de> for RecordVisitor {
    type Value = RawRecord;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "an object with fields {FIELDS:?} in order")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawRecord, A::Error> {
        expect_key(&mut map, "ts")?;
        let ts: i64 = map.next_value()?;
        expect_key(&mut map, "station")?;
        let station: String = map.next_value()?;
        expect_key(&mut map, "sensor")?;
        let sensor: String = map.next_value()?;
        expect_key(&mut map, "value")?;
        let value: f64 = map.next_value()?;
        if let Some(extra) = map.next_key::<String>()? {
            return Err(de::Error::custom(format!("unknown field `{extra}`")));
        }
        Ok(RawRecord {
            ts,
            station,
            sensor,
            value,
        })
    }
}
