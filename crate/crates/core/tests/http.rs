mod common;

use common::*;
use vinesense::store::{Granularity, ReportLayout, SeriesKey, Stat};
use vinesense::SensorKind;

fn seeded_server() -> Server {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-07-01");
    svc.ingest(&op, &wire(&flat_temperature("gw-01", t0, 2, 36.0))).unwrap();
    let rh = quarter_hourly("gw-01", SensorKind::RelativeHumidity, t0, 1, |ts| 40.0 + (ts % 3600) as f64 / 360.0);
    svc.ingest(&op, &wire(&rh)).unwrap();
    assert_eq!(svc.alerts(None).len(), 1);
    Server::start(svc)
}

#[test]
fn requests_need_a_known_token() {
    let server = seeded_server();
    let none = get(&server.url("/v1/series"), None);
    assert_eq!(none.status, 401);
    assert_eq!(none.json()["error"], "unauthorized");
    assert_eq!(get(&server.url("/v1/series"), Some("bogus")).status, 401);
    assert_eq!(get(&server.url("/v1/series"), Some(VIEWER)).status, 200);
}

#[test]
fn viewer_cannot_mutate_anything() {
    let server = seeded_server();
    let alert_id = server.service.alerts(None)[0].alert_id.clone();
    let before = state_fingerprint(&server.service);
    for (path, body) in mutating_requests(&alert_id) {
        let r = post(&server.url(&path), Some(VIEWER), &body);
        assert_eq!(r.status, 403, "{path}: {}", r.text());
        assert_eq!(r.json()["error"], "forbidden");
    }
    assert_eq!(state_fingerprint(&server.service), before);
}

#[test]
fn operator_workflow_over_http() {
    let server = seeded_server();
    let ingest = post(
        &server.url("/v1/ingest"),
        Some(OPERATOR),
        &(wire(&flat_temperature("north-01", midnight("2024-07-01"), 1, 20.0)) + "not json\n"),
    );
    assert_eq!(ingest.status, 200);
    let report = ingest.json();
    assert_eq!(report["accepted"], 24);
    assert_eq!(report["rejected"], 1);
    assert_eq!(report["results"][24]["reason"], "malformed");

    let alerts = get(&server.url("/v1/alerts?state=active"), Some(VIEWER)).json();
    let id = alerts[0]["alert_id"].as_str().unwrap().to_string();
    let path = format!("/v1/alerts/{id}/ack");
    let first = post(&server.url(&path), Some(OPERATOR), "");
    assert_eq!(first.status, 200);
    assert_eq!(first.json()["state"], "acknowledged");
    let second = post(&server.url(&path), Some(OPERATOR), "");
    assert_eq!(second.status, 409);
    assert_eq!(second.json()["error"], "conflict");
    assert_eq!(post(&server.url("/v1/alerts/missing/ack"), Some(OPERATOR), "").status, 404);

    let rule = r#"{"rule_id":"cold","metric":"temperature","comparator":"<","threshold":0.0,"window_s":900,"severity":"info"}"#;
    assert_eq!(post(&server.url("/v1/alert-rules"), Some(OPERATOR), rule).status, 403);
    assert_eq!(post(&server.url("/v1/alert-rules"), Some(ADMIN), rule).status, 200);
    let rules = get(&server.url("/v1/alert-rules"), Some(VIEWER)).json();
    assert!(rules.as_array().unwrap().iter().any(|r| r["rule_id"] == "cold"));
    let bad_rule = rule.replace("900", "0");
    assert_eq!(post(&server.url("/v1/alert-rules"), Some(ADMIN), &bad_rule).status, 400);

    let forecast = r#"{"issued_at":1719878400,"resolution":"hourly","entries":[{"time":1719878400,"tmin":-2.0,"tmax":4.0}]}"#;
    assert_eq!(post(&server.url("/v1/forecast"), Some(OPERATOR), forecast).status, 200);
    assert_eq!(get(&server.url("/v1/forecast"), Some(VIEWER)).json()["issued_at"], 1719878400);
    let empty = r#"{"issued_at":1719878500,"entries":[]}"#;
    assert_eq!(post(&server.url("/v1/forecast"), Some(OPERATOR), empty).status, 400);
    let frost = get(&server.url("/v1/frost/gw-01?as_of=2024-07-02T00:30:00Z"), Some(VIEWER)).json();
    assert_eq!(frost["assessment"]["severity"], "severe");
}

#[test]
fn advisory_endpoints_answer() {
    let server = seeded_server();
    for path in [
        "/v1/stage/cab-gw",
        "/v1/risk/gw-01",
        "/v1/irrigation/cab-gw?hypothetical_mm=5",
        "/v1/metrics/gw-01?from=2024-07-01&to=2024-07-02",
        "/v1/series?key=gw-01:temperature&aggregate=hourly",
    ] {
        let r = get(&server.url(path), Some(VIEWER));
        assert_eq!(r.status, 200, "{path}: {}", r.text());
        assert!(r.content_type.starts_with("application/json"), "{path}");
    }
    for path in ["/v1/stage/nope", "/v1/risk/nope", "/v1/irrigation/nope", "/v1/frost/gw-01", "/v1/spray-windows/gw-01"] {
        assert_eq!(get(&server.url(path), Some(VIEWER)).status, 404, "{path}");
    }
    assert_eq!(get(&server.url("/v1/stage/cab-gw?as_of=yesterday"), Some(VIEWER)).status, 400);
    let table = get(&server.url("/v1/metrics/gw-01?from=2024-07-01&to=2024-07-02&format=table"), Some(VIEWER));
    assert!(table.content_type.starts_with("text/plain"));
    assert!(table.text().starts_with("station"));
}

#[test]
fn report_is_the_store_export() {
    let server = seeded_server();
    let keys = [
        SeriesKey::new("gw-01", SensorKind::Temperature),
        SeriesKey::new("gw-01", SensorKind::RelativeHumidity),
    ];
    let from = midnight("2024-07-01");
    let to = from + 6 * 3600;
    let layout = ReportLayout {
        granularity: Granularity::Hourly,
        stat: Stat::Max,
    };
    let expected = server.service.store().export_report(&keys, from, to, &layout).unwrap();
    let r = get(
        &server.url("/v1/report?key=gw-01:temperature&key=gw-01:relative_humidity&from=2024-07-01T00:00:00Z&to=2024-07-01T06:00:00Z&aggregate=hourly&stat=max"),
        Some(VIEWER),
    );
    assert_eq!(r.status, 200);
    assert!(r.content_type.starts_with("text/csv"));
    assert_eq!(r.text(), expected);
    assert!(expected.starts_with("timestamp,gw-01:temperature:max,gw-01:relative_humidity:max\r\n"));

    let unknown = get(&server.url("/v1/report?key=gw-01:uv_index"), Some(VIEWER));
    assert_eq!(unknown.status, 404);
    assert_eq!(get(&server.url("/v1/report?key=gw-01:temperature&stat=median"), Some(VIEWER)).status, 400);
}
