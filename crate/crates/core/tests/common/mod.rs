#![allow(dead_code)]

use std::net::TcpListener as StdListener;
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::NaiveDate;
use tokio::sync::oneshot;
use vinesense::service::{Config, Service, UserAccount};
use vinesense::wire::encode_batch;
use vinesense::{Reading, SensorKind};

pub const ADMIN: &str = "tok-admin";
pub const OPERATOR: &str = "tok-operator";
pub const VIEWER: &str = "tok-viewer";

/// Three UTC stations in the default simulator layout, one Cabernet block
/// per station starting March 1, three users.
pub const CONFIG: &str = r#"
version = 1

[[stations]]
id = "gw-01"
latitude = 38.5
elevation_m = 60.0

[[stations]]
id = "north-01"
latitude = 38.5
elevation_m = 60.0

[[stations]]
id = "east-01"
latitude = 38.5
elevation_m = 60.0

[[blocks]]
id = "cab-gw"
station = "gw-01"
profile = "cabernet_sauvignon/napa"

[[blocks]]
id = "cab-north"
station = "north-01"
profile = "cabernet_sauvignon/napa"

[[blocks]]
id = "chard-east"
station = "east-01"
profile = "chardonnay/burgundy"

[[users]]
id = "ana"
role = "admin"
token = "tok-admin"

[[users]]
id = "oskar"
role = "operator"
token = "tok-operator"

[[users]]
id = "vic"
role = "viewer"
token = "tok-viewer"

[[alert_rules]]
rule_id = "heat"
metric = "temperature"
comparator = ">"
threshold = 35.0
window_s = 3600
severity = "warning"

[[alert_rules]]
rule_id = "frost-watch"
metric = "forecast_tmin"
comparator = "<="
threshold = 2.0
window_s = 3600
severity = "critical"
"#;

pub fn config() -> Config {
    Config::parse(CONFIG).expect("test config")
}

pub fn service() -> Service {
    Service::new(config()).expect("service")
}

pub fn user(svc: &Service, token: &str) -> UserAccount {
    svc.authenticate(token).expect("known token")
}

pub fn midnight(date: &str) -> i64 {
    let d: NaiveDate = date.parse().expect("date");
    d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp()
}

/// One reading every 15 minutes for `days` days.
pub fn quarter_hourly(station: &str, kind: SensorKind, start: i64, days: u32, value: impl Fn(i64) -> f64) -> Vec<Reading> {
    (0..days as i64 * 96)
        .map(|i| {
            let ts = start + i * 900;
            Reading::new(ts, station, kind, value(ts))
        })
        .collect()
}

/// Hourly temperatures fixed at `t` from `start` for `days` days.
pub fn flat_temperature(station: &str, start: i64, days: u32, t: f64) -> Vec<Reading> {
    (0..days as i64 * 24)
        .map(|h| Reading::new(start + h * 3600, station, SensorKind::Temperature, t))
        .collect()
}

pub fn wire(readings: &[Reading]) -> String {
    encode_batch(readings)
}

/// A service listening on an ephemeral port, stopped on drop.
pub struct Server {
    pub base: String,
    pub service: Arc<Service>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(service: Service) -> Server {
        let listener = StdListener::bind("127.0.0.1:0").expect("bind");
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let service = Arc::new(service);
        let (stop, stopped) = oneshot::channel::<()>();
        let svc = service.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                vinesense::service::http::serve(svc, listener, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            });
        });
        Server {
            base,
            service,
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).expect("utf-8 body")
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text()))
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).build().into()
}

fn reply(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
    let mut resp = result.expect("request sent");
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let body = resp.body_mut().with_config().limit(1 << 30).read_to_vec().unwrap();
    Reply {
        status,
        content_type,
        body,
    }
}

pub fn get(url: &str, token: Option<&str>) -> Reply {
    let mut req = agent().get(url);
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    reply(req.call())
}

pub fn post(url: &str, token: Option<&str>, body: &str) -> Reply {
    let mut req = agent().post(url).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    reply(req.send(body))
}

/// Every mutating route with a well-formed body, so only the role can
/// make it fail.
pub fn mutating_requests(alert_id: &str) -> Vec<(String, String)> {
    let reading = r#"{"ts":1717300000,"station":"gw-01","sensor":"temperature","value":12.5}"#;
    let rule = r#"{"rule_id":"viewer-rule","metric":"temperature","comparator":"<","threshold":0.0,"window_s":900,"severity":"info"}"#;
    let obs = r#"{"date":"2024-06-01","block_id":"cab-gw","observed_stage":"flowering","observer":"vic"}"#;
    let forecast = r#"{"issued_at":1717300000,"resolution":"hourly","entries":[{"time":1717300000,"tmin":-5.0,"tmax":3.0}]}"#;
    vec![
        ("/v1/ingest".into(), reading.into()),
        ("/v1/alert-rules".into(), rule.into()),
        (format!("/v1/alerts/{alert_id}/ack"), String::new()),
        ("/v1/observations".into(), obs.into()),
        ("/v1/forecast".into(), forecast.into()),
    ]
}

/// Observable state that any mutation would change.
pub fn state_fingerprint(svc: &Service) -> String {
    serde_json::json!({
        "series": svc.series(),
        "raw": svc.store().keys().iter().map(|k| svc.store().raw_len(k)).collect::<Vec<_>>(),
        "rules": svc.alert_rules(),
        "alerts": svc.alerts(None),
        "forecast": svc.latest_forecast(),
        "observations": svc.observations("cab-gw"),
    })
    .to_string()
}

/// Any method; DELETE goes without a body.
pub fn request(method: &str, url: &str, token: Option<&str>, body: &str) -> Reply {
    let mut builder = ureq::http::Request::builder().method(method).uri(url);
    if let Some(t) = token {
        builder = builder.header("Authorization", format!("Bearer {t}"));
    }
    if method == "DELETE" {
        reply(agent().run(builder.body(()).unwrap()))
    } else {
        reply(agent().run(builder.header("Content-Type", "application/json").body(body.to_string()).unwrap()))
    }
}
