mod common;

use common::*;
use vinesense::phenology::{ObservationRecord, Stage};
use vinesense::risk::FrostSeverity;
use vinesense::service::{
    AlertRule, AlertState, Comparator, ForecastEntry, ForecastRecord, RecordStatus, Resolution, ServiceError, Severity,
};
use vinesense::store::SeriesKey;
use vinesense::{Reading, SensorKind};

fn hourly_forecast(issued_at: i64, tmin: f64) -> ForecastRecord {
    ForecastRecord {
        issued_at,
        resolution: Resolution::Hourly,
        entries: (0..48)
            .map(|h| ForecastEntry {
                time: issued_at + h * 3600,
                tmin: Some(tmin),
                tmax: Some(tmin + 10.0),
                rain_mm: 0.0,
                rain_prob: 10.0,
                wind: 1.0,
            })
            .collect(),
    }
}

#[test]
fn a_day_of_readings_is_accepted() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let day = quarter_hourly("gw-01", SensorKind::Temperature, midnight("2024-06-01"), 1, |_| 18.0);
    let report = svc.ingest(&op, &wire(&day)).unwrap();
    assert_eq!((report.accepted, report.rejected), (96, 0));
    assert!(report.results.iter().all(|r| r.status == RecordStatus::Accepted && !r.duplicate));
}

#[test]
fn one_malformed_line_does_not_spoil_the_batch() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let readings = quarter_hourly("gw-01", SensorKind::Temperature, midnight("2024-06-01"), 1, |_| 18.0);
    let mut lines: Vec<String> = wire(&readings[..9]).lines().map(str::to_owned).collect();
    lines.insert(4, r#"{"station":"gw-01","ts":1717200000,"sensor":"temperature","value":1}"#.into());
    let report = svc.ingest(&op, &lines.join("\n")).unwrap();
    assert_eq!((report.accepted, report.rejected), (9, 1));
    let bad = &report.results[4];
    assert_eq!(bad.line, 5);
    assert_eq!(bad.reason.as_deref(), Some("malformed"));
}

#[test]
fn replay_is_idempotent() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let body = wire(&quarter_hourly("gw-01", SensorKind::Temperature, midnight("2024-06-01"), 1, |ts| {
        (ts % 7) as f64
    }));
    svc.ingest(&op, &body).unwrap();
    let again = svc.ingest(&op, &body).unwrap();
    assert_eq!((again.accepted, again.rejected), (96, 0));
    assert!(again.results.iter().all(|r| r.duplicate));
    let key = SeriesKey::new("gw-01", SensorKind::Temperature);
    assert_eq!(svc.store().raw_len(&key), 96);
}

#[test]
fn rejection_reasons() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-06-01");
    let body = wire(&[
        Reading::new(t0 + 900, "gw-01", SensorKind::Temperature, 10.0),
        Reading::new(t0, "gw-01", SensorKind::Temperature, 10.0),
        Reading::new(t0 + 900, "gw-01", SensorKind::Temperature, 11.0),
        Reading::new(t0, "nowhere", SensorKind::Temperature, 10.0),
    ]) + "{\"ts\":1,\"station\":\"gw-01\",\"sensor\":\"snow\",\"value\":1}\n"
        + "{\"ts\":1717200000,\"station\":\"gw-01\",\"sensor\":\"relative_humidity\",\"value\":140}\n";
    let report = svc.ingest(&op, &body).unwrap();
    let reasons: Vec<Option<&str>> = report.results.iter().map(|r| r.reason.as_deref()).collect();
    assert_eq!(
        reasons,
        [
            None,
            Some("out_of_order"),
            Some("conflict"),
            Some("unknown_station"),
            Some("unknown_sensor"),
            Some("out_of_range")
        ]
    );
}

#[test]
fn auto_registration() {
    let mut config = config();
    config.ingest.auto_register = true;
    let svc = vinesense::service::Service::new(config).unwrap();
    let op = user(&svc, OPERATOR);
    let r = svc
        .ingest(&op, &wire(&[Reading::new(midnight("2024-06-01"), "west-09", SensorKind::Rain, 0.0)]))
        .unwrap();
    assert_eq!(r.accepted, 1);
    assert!(svc.station("west-09").is_ok());
}

#[test]
fn viewer_cannot_ingest_or_observe() {
    let svc = service();
    let viewer = user(&svc, VIEWER);
    assert!(matches!(svc.ingest(&viewer, ""), Err(ServiceError::Forbidden(_))));
    let obs = ObservationRecord {
        date: "2024-05-01".parse().unwrap(),
        block_id: "cab-gw".into(),
        observed_stage: Stage::Flowering,
        observer: "vic".into(),
        note: String::new(),
    };
    assert!(matches!(svc.submit_observation(&viewer, obs), Err(ServiceError::Forbidden(_))));
}

#[test]
fn no_rules_means_no_alerts() {
    let mut config = config();
    config.alert_rules.clear();
    let svc = vinesense::service::Service::new(config).unwrap();
    let op = user(&svc, OPERATOR);
    svc.ingest(&op, &wire(&flat_temperature("gw-01", midnight("2024-06-01"), 1, 40.0))).unwrap();
    assert!(svc.evaluate_alerts("gw-01", midnight("2024-06-02")).is_empty());
    assert!(svc.alerts(None).is_empty());
}

#[test]
fn flat_series_below_threshold_never_fires() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let report = svc.ingest(&op, &wire(&flat_temperature("gw-01", midnight("2024-06-01"), 2, 30.0))).unwrap();
    assert!(report.alerts_fired.is_empty());
    assert!(svc.alerts(None).is_empty());
}

#[test]
fn frost_watch_fires_once() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-04-10");
    svc.ingest(&op, &wire(&flat_temperature("gw-01", t0, 1, 8.0))).unwrap();
    let now = t0 + 86_400 - 3600;
    let fired = svc.ingest_forecast(&op, hourly_forecast(now, 1.0)).unwrap();
    let gw: Vec<_> = fired.iter().filter(|a| a.station_id == "gw-01").collect();
    assert_eq!(gw.len(), 1);
    assert_eq!(gw[0].rule_id, "frost-watch");
    assert_eq!(gw[0].value_at_fire, 1.0);
    assert!(svc.evaluate_alerts("gw-01", now + 900).is_empty());
    let active: Vec<_> = svc
        .alerts(Some(AlertState::Active))
        .into_iter()
        .filter(|a| a.station_id == "gw-01")
        .collect();
    assert_eq!(active.len(), 1);
}

#[test]
fn acknowledging_twice_conflicts() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-07-10");
    let fired = svc.ingest(&op, &wire(&flat_temperature("gw-01", t0, 1, 38.0))).unwrap().alerts_fired;
    assert_eq!(fired.len(), 1);
    let id = &fired[0].alert_id;
    let acked = svc.acknowledge(&op, id).unwrap();
    assert_eq!(acked.state, AlertState::Acknowledged);
    assert_eq!(acked.acknowledged_by.as_deref(), Some("oskar"));
    assert!(matches!(svc.acknowledge(&op, id), Err(ServiceError::Conflict(_))));
    assert!(matches!(svc.acknowledge(&op, "nope"), Err(ServiceError::NotFound(_))));
    assert!(matches!(svc.acknowledge(&user(&svc, VIEWER), id), Err(ServiceError::Forbidden(_))));
}

#[test]
fn rule_edits_need_admin() {
    let svc = service();
    let rule = AlertRule {
        rule_id: "wet".into(),
        metric: "leaf_wetness".into(),
        comparator: Comparator::Crosses,
        threshold: 50.0,
        window_s: 900,
        severity: Severity::Info,
        enabled: true,
        station: None,
    };
    assert!(matches!(svc.upsert_rule(&user(&svc, OPERATOR), rule.clone()), Err(ServiceError::Forbidden(_))));
    svc.upsert_rule(&user(&svc, ADMIN), rule.clone()).unwrap();
    let mut edited = rule.clone();
    edited.threshold = 60.0;
    svc.upsert_rule(&user(&svc, ADMIN), edited).unwrap();
    let stored: Vec<_> = svc.alert_rules().into_iter().filter(|r| r.rule_id == "wet").collect();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].threshold, 60.0);
    let mut bad = rule;
    bad.window_s = 0;
    assert!(matches!(svc.upsert_rule(&user(&svc, ADMIN), bad), Err(ServiceError::Validation(_))));
}

#[test]
fn stage_at_1200_gdd_is_veraison() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    // 30 °C all day is 20 degree-days; 60 days from March 1.
    svc.ingest(&op, &wire(&flat_temperature("gw-01", midnight("2024-03-01"), 60, 30.0))).unwrap();
    let adv = svc.stage("cab-gw", Some(midnight("2024-04-30") + 86_399)).unwrap();
    assert_eq!(adv.estimate.cumulative_gdd, 1200.0);
    assert_eq!(adv.estimate.current_stage, Stage::Veraison);
    assert!(adv.provenance.last_sample_at.unwrap() <= adv.provenance.as_of);
    assert!(matches!(svc.stage("nope", None), Err(ServiceError::NotFound(_))));
}

#[test]
fn observation_recalibrates_midpoint() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    svc.ingest(&op, &wire(&flat_temperature("gw-01", midnight("2024-03-01"), 75, 30.0))).unwrap();
    let obs = |date: &str, stage| ObservationRecord {
        date: date.parse().unwrap(),
        block_id: "cab-gw".into(),
        observed_stage: stage,
        observer: "oskar".into(),
        note: String::new(),
    };
    // Flowering range 350-400: day 19 ends at 380, inside the range.
    let consistent = svc.submit_observation(&op, obs("2024-03-19", Stage::Flowering)).unwrap();
    assert!(consistent.acknowledged);
    assert!(consistent.deltas.iter().all(|d| d.midpoint_delta == 0.0));

    // Veraison seen at 1400 against a midpoint of 1200.
    let late = svc.submit_observation(&op, obs("2024-05-09", Stage::Veraison)).unwrap();
    let d = late.deltas.iter().find(|d| d.stage == Stage::Veraison).unwrap();
    assert_eq!(d.observed_gdd, 1400.0);
    assert!((d.midpoint_delta - 60.0).abs() < 1e-9, "{}", d.midpoint_delta);
    let stage = svc.stage("cab-gw", Some(midnight("2024-05-10"))).unwrap();
    assert!(stage.calibrated);

    let unknown_block = ObservationRecord {
        block_id: "nope".into(),
        ..obs("2024-05-09", Stage::Veraison)
    };
    assert!(svc.submit_observation(&op, unknown_block).is_err());
}

#[test]
fn downy_mildew_without_wetness_is_degraded() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    svc.ingest(&op, &wire(&flat_temperature("gw-01", midnight("2024-05-01"), 1, 15.0))).unwrap();
    let risk = svc.risk("gw-01", None).unwrap();
    assert!(risk.provenance.degraded.iter().any(|d| d == "degraded: leaf wetness unavailable"));
    assert!(matches!(svc.risk("nope", None), Err(ServiceError::NotFound(_))));
}

#[test]
fn frost_follows_the_forecast() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-04-10");
    svc.ingest(&op, &wire(&flat_temperature("gw-01", t0, 1, 8.0))).unwrap();
    let as_of = t0 + 86_400 - 900;
    assert!(matches!(svc.frost("gw-01", Some(as_of)), Err(ServiceError::NotFound(_))));

    svc.ingest_forecast(&op, hourly_forecast(as_of - 3600, 5.0)).unwrap();
    let mild = svc.frost("gw-01", Some(as_of)).unwrap();
    assert_eq!(mild.assessment.severity, FrostSeverity::None);

    svc.ingest_forecast(&op, hourly_forecast(as_of - 60, -2.0)).unwrap();
    let cold = svc.frost("gw-01", Some(as_of)).unwrap();
    assert_eq!(cold.assessment.forecast_tmin, -2.0);
    assert_eq!(cold.assessment.severity, FrostSeverity::Severe);
    assert_eq!(cold.provenance.forecast_issued_at, Some(as_of - 60));

    // The older issuance is still what was known before the newer one.
    let earlier = svc.frost("gw-01", Some(as_of - 120)).unwrap();
    assert_eq!(earlier.provenance.forecast_issued_at, Some(as_of - 3600));
}

#[test]
fn newer_forecast_is_served() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    svc.ingest_forecast(&op, hourly_forecast(1_000_000, 5.0)).unwrap();
    svc.ingest_forecast(&op, hourly_forecast(2_000_000, 7.0)).unwrap();
    assert_eq!(svc.latest_forecast().unwrap().issued_at, 2_000_000);
    let empty = ForecastRecord {
        issued_at: 3_000_000,
        resolution: Resolution::Daily,
        entries: vec![],
    };
    assert!(matches!(svc.ingest_forecast(&op, empty), Err(ServiceError::Validation(_))));
    let mut unsorted = hourly_forecast(3_000_000, 1.0);
    unsorted.entries.swap(0, 1);
    assert!(matches!(svc.ingest_forecast(&op, unsorted), Err(ServiceError::Validation(_))));
}

#[test]
fn irrigation_tracks_deficit_and_hypothetical() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let start = midnight("2024-06-01");
    let mut readings = Vec::new();
    for h in 0..(40 * 24) {
        let ts = start + h * 3600;
        let hour = h % 24;
        let t = 18.0 + 10.0 * (((hour as f64) - 9.0) / 24.0 * std::f64::consts::TAU).sin();
        readings.push(Reading::new(ts, "gw-01", SensorKind::Temperature, t));
        readings.push(Reading::new(ts, "gw-01", SensorKind::RelativeHumidity, 45.0));
        readings.push(Reading::new(ts, "gw-01", SensorKind::WindSpeed, 2.0));
        let sun = if (6..18).contains(&hour) { 600.0 } else { 0.0 };
        readings.push(Reading::new(ts, "gw-01", SensorKind::SolarRadiation, sun));
        readings.push(Reading::new(ts, "gw-01", SensorKind::Rain, 0.0));
    }
    readings.sort_by_key(|r| (r.timestamp, r.sensor_kind as u8));
    svc.ingest(&op, &wire(&readings)).unwrap();
    let as_of = start + 40 * 86_400 - 1;
    let adv = svc.irrigation("cab-gw", Some(as_of), Some(10.0)).unwrap();
    let deficit = adv.state.deficit_mm;
    assert!(deficit > 25.0, "{deficit}");
    assert_eq!(adv.recommendation.amount_mm.unwrap(), deficit / 0.9);
    let hypo = adv.hypothetical.unwrap();
    assert!((hypo.deficit_mm - (deficit - 10.0)).abs() < 1e-9);
    assert!(matches!(svc.irrigation("nope", None, None), Err(ServiceError::NotFound(_))));
}

#[test]
fn spray_windows_need_an_hourly_forecast() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-06-01");
    svc.ingest(&op, &wire(&flat_temperature("gw-01", t0, 1, 20.0))).unwrap();
    assert!(matches!(svc.spray_windows("gw-01", None), Err(ServiceError::NotFound(_))));
    svc.ingest_forecast(&op, hourly_forecast(t0 + 86_400 - 3600, 12.0)).unwrap();
    let adv = svc.spray_windows("gw-01", None).unwrap();
    assert!(!adv.windows.is_empty());
    assert!(adv.windows.iter().all(|w| w.end - w.start >= 3 * 3600));
}
