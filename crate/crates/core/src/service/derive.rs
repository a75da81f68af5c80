//! Per-station daily metrics computed from stored series.
//!
//! Both raw points and archived buckets are consumed through the same
//! `{start, min, max, mean, count}` view, so a day keeps its metrics after
//! archival (at bucket resolution).

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::agromet::{
    self, chill_hours, dew_point, et0_daily, gdd_daily, heat_index, inversion_strength, missing_slots, ndvi,
    utah_units, DailySummary, INVERSION_PAIRING_TOLERANCE_S, WETNESS_INTERVAL_S,
};
use crate::reading::SensorKind;
use crate::store::{Bucket, Granularity, SeriesKey, Store};

use super::config::{Models, StationSite};

const DAY_S: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMetrics {
    pub station_id: String,
    pub date: NaiveDate,
    pub summary: DailySummary,
    pub dew_point: Option<f64>,
    pub et0_mm: Option<f64>,
    pub gdd: Option<f64>,
    pub chill_hours: u32,
    pub utah_units: f64,
    pub missing_hours: usize,
    pub leaf_wetness_h: Option<f64>,
    pub heat_index_max: Option<f64>,
    pub inversion_max: Option<f64>,
    pub ndvi: Option<f64>,
    /// Stored samples that fed this day.
    pub samples: u64,
    pub last_sample_at: Option<i64>,
    /// False while the day is still in progress at the requested cut-off.
    pub complete: bool,
}

impl DailyMetrics {
    pub fn has_data(&self) -> bool {
        self.samples > 0
    }
}

/// Stored items for one sensor of a station over `[from, to)`.
pub fn series_items(store: &Store, station: &str, kind: SensorKind, from: i64, to: i64) -> Vec<Bucket> {
    store
        .query(&SeriesKey::new(station, kind), from, to, Granularity::Raw)
        .unwrap_or_default()
}

fn weighted_mean(items: &[Bucket]) -> Option<f64> {
    let n: u64 = items.iter().map(|b| b.count).sum();
    (n > 0).then(|| items.iter().map(|b| b.mean * b.count as f64).sum::<f64>() / n as f64)
}

fn total(items: &[Bucket]) -> Option<f64> {
    (!items.is_empty()).then(|| items.iter().map(|b| b.mean * b.count as f64).sum())
}

fn extreme(items: &[Bucket], pick: fn(&Bucket) -> f64, better: fn(f64, f64) -> f64) -> Option<f64> {
    items.iter().map(pick).reduce(better)
}

fn hourly_slots(items: &[Bucket], day_start: i64) -> [Option<f64>; 24] {
    let mut sums = [0.0; 24];
    let mut counts = [0u64; 24];
    for b in items {
        let slot = ((b.start - day_start).div_euclid(3600)).clamp(0, 23) as usize;
        sums[slot] += b.mean * b.count as f64;
        counts[slot] += b.count;
    }
    std::array::from_fn(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64))
}

/// Pairs two series on timestamps within the agromet pairing tolerance.
pub fn pair_series(a: &[Bucket], b: &[Bucket]) -> Vec<(i64, f64, f64)> {
    let mut out = Vec::new();
    let mut j = 0;
    for x in a {
        while j < b.len() && b[j].start < x.start - INVERSION_PAIRING_TOLERANCE_S {
            j += 1;
        }
        if let Some(y) = b.get(j) {
            if (y.start - x.start).abs() <= INVERSION_PAIRING_TOLERANCE_S {
                out.push((x.start.max(y.start), x.mean, y.mean));
            }
        }
    }
    out
}

fn wet_hours(items: &[Bucket], threshold: f64) -> f64 {
    let raw: Vec<(i64, f64)> = items.iter().filter(|b| b.width == 0).map(|b| (b.start, b.mean)).collect();
    // Archived buckets only know their mean; each sample counts as one slot.
    let archived: f64 = items
        .iter()
        .filter(|b| b.width > 0 && b.mean >= threshold)
        .map(|b| b.count as f64 * WETNESS_INTERVAL_S as f64 / 3600.0)
        .sum();
    agromet::leaf_wetness_hours(&raw, threshold) + archived
}

/// Metrics for one station-local day using stored data before `cutoff`.
pub fn daily_metrics(store: &Store, site: &StationSite, date: NaiveDate, cutoff: i64, models: &Models) -> DailyMetrics {
    let start = site.day_start(date);
    let end = (start + DAY_S).min(cutoff.max(start));
    let get = |k| series_items(store, &site.id, k, start, end);
    let temp = get(SensorKind::Temperature);
    let rh = get(SensorKind::RelativeHumidity);
    let wind = get(SensorKind::WindSpeed);
    let solar = get(SensorKind::SolarRadiation);
    let rain = get(SensorKind::Rain);
    let pressure = get(SensorKind::Pressure);
    let wet = get(SensorKind::LeafWetness);
    let elevated = get(SensorKind::TemperatureElevated);
    let nir = get(SensorKind::NirReflectance);
    let red = get(SensorKind::RedReflectance);

    let all = [&temp, &rh, &wind, &solar, &rain, &pressure, &wet, &elevated, &nir, &red];
    let samples = all.iter().flat_map(|s| s.iter()).map(|b| b.count).sum();
    let last_sample_at = all.iter().filter_map(|s| s.last()).map(|b| b.end().max(b.start)).max();

    let hourly_temps = hourly_slots(&temp, start);
    let summary = DailySummary {
        date,
        t_min: extreme(&temp, |b| b.min, f64::min),
        t_max: extreme(&temp, |b| b.max, f64::max),
        rh_mean: weighted_mean(&rh),
        rh_min: extreme(&rh, |b| b.min, f64::min),
        rh_max: extreme(&rh, |b| b.max, f64::max),
        wind_mean_2m: weighted_mean(&wind),
        // W/m² averaged over the day → MJ/m²/day.
        solar_mj: weighted_mean(&solar).map(|w| w * 0.0864),
        rain_mm: total(&rain),
        pressure_kpa: weighted_mean(&pressure),
        hourly_temps,
    };

    let dew = match (weighted_mean(&temp), summary.rh_mean) {
        (Some(t), Some(h)) => dew_point(t, h).ok(),
        _ => None,
    };
    let et0 = et0_daily(&summary, site.latitude, date.ordinal(), site.elevation_m).ok();
    let gdd = match (summary.t_min, summary.t_max) {
        (Some(lo), Some(hi)) => gdd_daily(lo, hi, models.gdd_base, None).ok(),
        _ => None,
    };
    let rh_hourly = hourly_slots(&rh, start);
    let heat_index_max = hourly_temps
        .iter()
        .zip(rh_hourly.iter())
        .filter_map(|(t, h)| Some(heat_index((*t)?, (*h)?)))
        .reduce(f64::max);
    let inversion_max = pair_series(&elevated, &temp)
        .into_iter()
        .filter_map(|(_, e, g)| inversion_strength((0, e), (0, g)).ok())
        .reduce(f64::max);
    let latest_ndvi = pair_series(&nir, &red).last().and_then(|(_, n, r)| ndvi(*n, *r).ok());

    DailyMetrics {
        station_id: site.id.clone(),
        date,
        dew_point: dew,
        et0_mm: et0,
        gdd,
        chill_hours: chill_hours(&summary.hourly_temps),
        utah_units: utah_units(&summary.hourly_temps, &models.chill_bands),
        missing_hours: missing_slots(&summary.hourly_temps),
        leaf_wetness_h: (!wet.is_empty()).then(|| wet_hours(&wet, models.leaf_wetness_threshold)),
        heat_index_max,
        inversion_max,
        ndvi: latest_ndvi,
        samples,
        last_sample_at,
        complete: cutoff >= start + DAY_S,
        summary,
    }
}

/// Fixed-width text table used by both the CLI and the service; `-` marks
/// a gap.
pub fn metrics_table(rows: &[DailyMetrics]) -> String {
    fn cell(v: Option<f64>, prec: usize) -> String {
        v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
    }
    let mut out = format!(
        "{:<12} {:<10} {:>7} {:>7} {:>9} {:>7} {:>7} {:>5} {:>7} {:>7}\n",
        "station", "date", "t_min", "t_max", "dew_point", "et0_mm", "gdd", "chill", "utah", "rain_mm"
    );
    for r in rows {
        let has_temp = r.summary.t_min.is_some();
        out.push_str(&format!(
            "{:<12} {:<10} {:>7} {:>7} {:>9} {:>7} {:>7} {:>5} {:>7} {:>7}\n",
            r.station_id,
            r.date,
            cell(r.summary.t_min, 2),
            cell(r.summary.t_max, 2),
            cell(r.dew_point, 2),
            cell(r.et0_mm, 2),
            cell(r.gdd, 1),
            if has_temp { r.chill_hours.to_string() } else { "-".into() },
            cell(has_temp.then_some(r.utah_units), 1),
            cell(r.summary.rain_mm, 1),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Point;

    fn site() -> StationSite {
        StationSite {
            latitude: 38.5,
            elevation_m: 60.0,
            ..StationSite::unconfigured("s1")
        }
    }

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 6, 1).unwrap()
    }

    fn fill(store: &Store, kind: SensorKind, f: impl Fn(i64) -> f64) {
        let start = site().day_start(date());
        for i in 0..96 {
            let ts = start + i * 900;
            store.append(&SeriesKey::new("s1", kind), Point { ts, value: f(i) }).unwrap();
        }
    }

    #[test]
    fn gdd_from_extremes_and_gaps() {
        let store = Store::in_memory();
        fill(&store, SensorKind::Temperature, |i| if i < 48 { 20.0 } else { 30.0 });
        let m = daily_metrics(&store, &site(), date(), i64::MAX, &Models::default());
        assert_eq!(m.gdd, Some(15.0));
        assert_eq!(m.dew_point, None);
        assert_eq!(m.et0_mm, None);
        assert_eq!(m.leaf_wetness_h, None);
        assert_eq!(m.missing_hours, 0);
        assert!(m.complete);
        let table = metrics_table(&[m]);
        assert!(table.lines().nth(1).unwrap().contains("   15.0"));
        assert!(table.lines().nth(1).unwrap().contains(" - "));
    }

    #[test]
    fn full_station_day() {
        let store = Store::in_memory();
        fill(&store, SensorKind::Temperature, |i| 12.0 + (i as f64 / 96.0) * 10.0);
        fill(&store, SensorKind::RelativeHumidity, |_| 60.0);
        fill(&store, SensorKind::WindSpeed, |_| 2.0);
        fill(&store, SensorKind::SolarRadiation, |i| if (24..72).contains(&i) { 500.0 } else { 0.0 });
        fill(&store, SensorKind::Rain, |i| if i == 10 { 1.5 } else { 0.0 });
        fill(&store, SensorKind::LeafWetness, |i| if i < 8 { 100.0 } else { 0.0 });
        let m = daily_metrics(&store, &site(), date(), i64::MAX, &Models::default());
        assert_eq!(m.leaf_wetness_h, Some(2.0));
        assert_eq!(m.summary.rain_mm, Some(1.5));
        assert!((m.summary.solar_mj.unwrap() - 21.6).abs() < 1e-9);
        assert!(m.et0_mm.unwrap() > 0.0);
        assert!(m.dew_point.is_some());
        assert_eq!(m.samples, 96 * 6);

        // A cut-off at noon hides the afternoon.
        let noon = site().day_start(date()) + 12 * 3600;
        let partial = daily_metrics(&store, &site(), date(), noon, &Models::default());
        assert!(!partial.complete);
        assert!(partial.last_sample_at.unwrap() < noon);
        assert_eq!(partial.missing_hours, 12);
    }

    #[test]
    fn survives_archival() {
        let store = Store::in_memory();
        fill(&store, SensorKind::Temperature, |i| 5.0 + i as f64 * 0.1);
        let before = daily_metrics(&store, &site(), date(), i64::MAX, &Models::default());
        let policy = crate::store::RetentionPolicy {
            raw_horizon_days: 1,
            bucket_width_s: 3600,
        };
        store.downsample_all(&policy, site().day_start(date()) + 10 * DAY_S).unwrap();
        let after = daily_metrics(&store, &site(), date(), i64::MAX, &Models::default());
        assert_eq!(before.summary.t_min, after.summary.t_min);
        assert_eq!(before.summary.t_max, after.summary.t_max);
        assert_eq!(before.chill_hours, after.chill_hours);
        assert_eq!(before.samples, after.samples);
    }
}
