mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use common::*;
use vinesense::wire::decode_batch;

fn vinesense(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinesense"))
        .args(args)
        .current_dir(dir)
        .env_remove("VINESENSE_TOKEN")
        .env_remove("VINESENSE_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ONE_STATION: &str = r#"
[[stations]]
station_id = "solo"
position = [0.0, 0.0]
sensors = ["temperature"]
is_gateway = true
"#;

#[test]
fn one_station_one_day_is_96_frames() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("layout.toml"), ONE_STATION).unwrap();
    let o = vinesense(&["sim-run", "--stations", "layout.toml", "--days", "1", "--loss", "0", "--out", "frames.ndjson"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("frames.ndjson")).unwrap();
    let readings: Vec<_> = decode_batch(&text).into_iter().map(|(_, r)| r.unwrap()).collect();
    assert_eq!(readings.len(), 96);
    let times: BTreeSet<i64> = readings.iter().map(|r| r.timestamp).collect();
    assert_eq!(times.len(), 96);
    let summary = stdout(&o);
    assert!(summary.contains("delivery ratio 1.0000"), "{summary}");
    assert!(summary.lines().any(|l| l.starts_with("solo") && l.contains(" 96 ")), "{summary}");
}

#[test]
fn same_manifest_same_file() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = "seed = 11\ndays = 2\ntopology = \"mesh\"\nloss = 0.3\nretries = 1\nstart_date = \"2024-05-01\"\n";
    std::fs::write(dir.path().join("run.toml"), manifest).unwrap();
    for out in ["a.ndjson", "b.ndjson"] {
        let o = vinesense(&["sim-run", "run.toml", "--out", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.ndjson")).unwrap();
    let b = std::fs::read(dir.path().join("b.ndjson")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let other = vinesense(&["sim-run", "run.toml", "--seed", "12", "--out", "c.ndjson"], dir.path());
    assert!(other.status.success());
    assert_ne!(std::fs::read(dir.path().join("c.ndjson")).unwrap(), a);
}

#[test]
fn bad_layout_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("two_gw.toml"), format!("{ONE_STATION}{}", ONE_STATION.replace("solo", "duo"))).unwrap();
    std::fs::write(dir.path().join("garbled.toml"), "[[stations]]\nstation_id = 4\n").unwrap();
    for layout in ["two_gw.toml", "garbled.toml", "missing.toml"] {
        let o = vinesense(&["sim-run", "--stations", layout, "--out", "x.ndjson"], dir.path());
        assert!(!o.status.success(), "{layout}");
        assert!(stderr(&o).contains(layout), "{layout}: {}", stderr(&o));
    }
    let o = vinesense(&["sim-run", "--topology", "ring"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn unreachable_service_keeps_the_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let o = vinesense(&["sim-run", "--days", "3", "--out", &url, "--save", "partial.ndjson", "--token", OPERATOR], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains(&url), "{}", stderr(&o));
    let saved = std::fs::read_to_string(dir.path().join("partial.ndjson")).unwrap();
    assert!(!saved.is_empty());
}

#[test]
fn sim_run_delivers_to_a_service_and_replay_is_idempotent() {
    let server = Server::start(service());
    let dir = tempfile::tempdir().unwrap();
    let o = vinesense(
        &["sim-run", "--days", "2", "--out", &server.base, "--save", "frames.ndjson", "--token", OPERATOR],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = std::fs::read_to_string(dir.path().join("frames.ndjson")).unwrap().lines().count();
    assert!(stdout(&o).contains(&format!("service accepted {lines} readings, rejected 0")), "{}", stdout(&o));
    let before = state_fingerprint(&server.service);

    let r = vinesense(&["replay", "frames.ndjson", "--url", &server.base, "--token", OPERATOR], dir.path());
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stdout(&r).starts_with(&format!("accepted {lines} (duplicates {lines}) rejected 0")), "{}", stdout(&r));
    assert_eq!(state_fingerprint(&server.service), before);

    let denied = vinesense(&["replay", "frames.ndjson", "--url", &server.base, "--token", VIEWER], dir.path());
    assert!(!denied.status.success());
    assert!(stderr(&denied).contains("403"));
}

#[test]
fn offline_metrics_match_the_service() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("service.toml"), CONFIG).unwrap();
    let o = vinesense(&["sim-run", "--days", "3", "--loss", "0.2", "--retries", "1", "--out", "frames.ndjson"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let svc = service();
    let body = std::fs::read_to_string(dir.path().join("frames.ndjson")).unwrap();
    svc.ingest(&user(&svc, OPERATOR), &body).unwrap();
    let server = Server::start(svc);

    for station in ["gw-01", "north-01", "east-01"] {
        let range = ["--from", "2024-04-01", "--to", "2024-04-04T12:00:00Z"];
        let mut offline_args = vec!["metrics", "--station", station, "--input", "frames.ndjson", "--config", "service.toml"];
        offline_args.extend(range);
        let offline = vinesense(&offline_args, dir.path());
        assert!(offline.status.success(), "{}", stderr(&offline));
        let mut online_args = vec!["metrics", "--station", station, "--url", &server.base, "--token", VIEWER];
        online_args.extend(range);
        let online = vinesense(&online_args, dir.path());
        assert!(online.status.success(), "{}", stderr(&online));
        assert_eq!(stdout(&offline), stdout(&online));
        // Four days requested, three simulated: the last row is all gaps.
        let table = stdout(&offline);
        let last = table.lines().last().unwrap();
        assert!(last.contains("2024-04-04"), "{table}");
        assert!(last.split_whitespace().skip(2).all(|c| c == "-"), "{table}");
    }
}

#[test]
fn metrics_table_values_and_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = midnight("2024-06-01");
    let mut readings = Vec::new();
    for h in 0..24 {
        let t = if h < 12 { 20.0 } else { 30.0 };
        readings.push(vinesense::Reading::new(t0 + h * 3600, "solo", vinesense::SensorKind::Temperature, t));
    }
    std::fs::write(dir.path().join("day.ndjson"), wire(&readings)).unwrap();
    let o = vinesense(&["metrics", "--station", "solo", "--input", "day.ndjson"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    let cell = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(cell("gdd"), "15.0");
    assert_eq!(cell("dew_point"), "-");
    assert_eq!(cell("et0_mm"), "-");
}

#[test]
fn report_matches_the_endpoint_byte_for_byte() {
    let svc = service();
    let op = user(&svc, OPERATOR);
    let t0 = midnight("2024-06-01");
    svc.ingest(&op, &wire(&quarter_hourly("gw-01", vinesense::SensorKind::Temperature, t0, 1, |ts| (ts % 1000) as f64 / 37.0)))
        .unwrap();
    svc.ingest(&op, &wire(&quarter_hourly("gw-01", vinesense::SensorKind::Rain, t0 + 450, 1, |_| 0.2))).unwrap();
    let server = Server::start(svc);
    let dir = tempfile::tempdir().unwrap();

    let cases: [(&[&str], &str); 3] = [
        (&[], ""),
        (&["--aggregate", "hourly", "--stat", "max"], "&aggregate=hourly&stat=max"),
        (&["--aggregate", "daily", "--stat", "count"], "&aggregate=daily&stat=count"),
    ];
    for (extra, query) in cases {
        let mut args = vec![
            "report", "--key", "gw-01:temperature", "--key", "gw-01:rain", "--from", "2024-06-01T02:00:00Z", "--to",
            "2024-06-01T08:00:00Z", "--out", "r.csv", "--url", &server.base, "--token", VIEWER,
        ];
        args.extend(extra);
        let o = vinesense(&args, dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let endpoint = get(
            &server.url(&format!(
                "/v1/report?key=gw-01:temperature&key=gw-01:rain&from=2024-06-01T02:00:00Z&to=2024-06-01T08:00:00Z{query}"
            )),
            Some(VIEWER),
        );
        assert_eq!(std::fs::read(dir.path().join("r.csv")).unwrap(), endpoint.body);
    }

    let unknown = vinesense(&["report", "--key", "gw-01:uv_index", "--url", &server.base, "--token", VIEWER], dir.path());
    assert!(!unknown.status.success());
    assert!(stderr(&unknown).contains("404"), "{}", stderr(&unknown));
}
