//! Operator command line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fieldsim::{self, LinkModel, SimConfig, SimError, SimStats, StationSpec, Topology, TopologyMode, TopologyWarning};
use crate::reading::SensorKind;
use crate::service::{self, Config, ConfigError, IngestReport, Role, Service, ServiceError, UserAccount};
use crate::store::{parse_time, Granularity, SeriesKey, Stat};
use crate::wire::encode_batch;

pub const TOKEN_ENV: &str = "VINESENSE_TOKEN";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Layout { path: String, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{url}: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("{url}: HTTP {status}: {body}")]
    Http { url: String, status: u16, body: String },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.as_ref().display().to_string();
    move |source| CliError::Io { path, source }
}

#[derive(Debug, Parser)]
#[command(name = "vinesense", version, about = "Vineyard sensor platform: simulator, service and reports")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the field network simulator and deliver frames to a file or a service.
    SimRun(SimRunArgs),
    /// Send a frame file to a running service.
    Replay(ReplayArgs),
    /// Print the daily metrics table from a frame file or a running service.
    Metrics(MetricsArgs),
    /// Download a CSV report from a running service.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Remote {
    /// Service base URL, e.g. http://127.0.0.1:8080
    #[arg(long)]
    pub url: Option<String>,
    /// Bearer token
    #[arg(long, env = TOKEN_ENV, hide_env_values = true)]
    pub token: Option<String>,
}

impl Remote {
    fn client(&self) -> Result<Client, CliError> {
        let url = self.url.clone().ok_or_else(|| CliError::Usage("--url is required".into()))?;
        Ok(Client::new(&url, self.token.as_deref()))
    }
}

/// Everything that determines a simulation run. Flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    pub days: u32,
    /// Layout file (TOML or JSON); the built-in three-station layout when absent.
    pub stations: Option<PathBuf>,
    pub topology: TopologyMode,
    pub loss: f64,
    pub retries: u32,
    pub start_date: NaiveDate,
    /// Service URL or file path; standard output when absent.
    pub out: Option<String>,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            seed: 1,
            days: 1,
            stations: None,
            topology: TopologyMode::Star,
            loss: 0.0,
            retries: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 4, 1).expect("valid"),
            out: None,
        }
    }
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: RunManifest = toml::from_str(&text).map_err(|e| CliError::Manifest {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if let (Some(stations), Some(dir)) = (&m.stations, path.parent()) {
            if stations.is_relative() {
                m.stations = Some(dir.join(stations));
            }
        }
        Ok(m)
    }

    pub fn sim_config(&self) -> Result<SimConfig, CliError> {
        let stations = match &self.stations {
            Some(path) => load_layout(path)?,
            None => default_layout(),
        };
        Ok(SimConfig {
            stations,
            mode: self.topology,
            link: LinkModel {
                loss_probability: self.loss,
                max_retries: self.retries,
                seed: self.seed,
            },
            start_date: self.start_date,
            days: self.days,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Layout {
    stations: Vec<StationSpec>,
}

/// Reads a station layout: a `stations` array in TOML, or JSON when the
/// file name ends in `.json`.
pub fn load_layout(path: &Path) -> Result<Vec<StationSpec>, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |reason: String| CliError::Layout {
        path: path.display().to_string(),
        reason,
    };
    let layout: Layout = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    if layout.stations.is_empty() {
        return Err(bad("no stations".into()));
    }
    fieldsim::build_topology(&layout.stations, TopologyMode::Mesh).map_err(|e| bad(e.to_string()))?;
    Ok(layout.stations)
}

const WEATHER_SENSORS: [SensorKind; 9] = [
    SensorKind::Temperature,
    SensorKind::RelativeHumidity,
    SensorKind::Pressure,
    SensorKind::SolarRadiation,
    SensorKind::WindSpeed,
    SensorKind::WindDirection,
    SensorKind::Rain,
    SensorKind::LeafWetness,
    SensorKind::SoilMoisture,
];

/// Gateway `gw-01` at the origin, `north-01` and `east-01` 300 m away.
pub fn default_layout() -> Vec<StationSpec> {
    let spec = |id: &str, position, is_gateway| StationSpec {
        station_id: id.into(),
        position,
        sensors: WEATHER_SENSORS.to_vec(),
        is_gateway,
        radio_range_m: fieldsim::DEFAULT_RADIO_RANGE_M,
        climate: "napa".into(),
    };
    vec![
        spec("gw-01", (0.0, 0.0), true),
        spec("north-01", (0.0, 300.0), false),
        spec("east-01", (300.0, 0.0), false),
    ]
}

#[derive(Debug, Args)]
pub struct SimRunArgs {
    /// Run manifest (TOML)
    pub manifest: Option<PathBuf>,
    /// Random seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated days [default: 1]
    #[arg(long)]
    pub days: Option<u32>,
    /// Station layout file [default: built-in gw-01, north-01, east-01]
    #[arg(long)]
    pub stations: Option<PathBuf>,
    /// star or mesh [default: star]
    #[arg(long)]
    pub topology: Option<TopologyMode>,
    /// Per-attempt loss probability [default: 0]
    #[arg(long)]
    pub loss: Option<f64>,
    /// Retries per hop [default: 0]
    #[arg(long)]
    pub retries: Option<u32>,
    /// First simulated day [default: 2024-04-01]
    #[arg(long)]
    pub start_date: Option<NaiveDate>,
    /// Service URL (http://...) or output file [default: standard output]
    #[arg(long)]
    pub out: Option<String>,
    /// Also write the frames to this file when sending to a service
    #[arg(long)]
    pub save: Option<PathBuf>,
    /// Bearer token for the service
    #[arg(long, env = TOKEN_ENV, hide_env_values = true)]
    pub token: Option<String>,
}

impl SimRunArgs {
    pub fn manifest(&self) -> Result<RunManifest, CliError> {
        let mut m = match &self.manifest {
            Some(path) => RunManifest::load(path)?,
            None => RunManifest::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = &self.$f { m.$f = v.clone(); })* };
        }
        take!(seed, days, topology, loss, retries, start_date);
        if self.stations.is_some() {
            m.stations = self.stations.clone();
        }
        if self.out.is_some() {
            m.out = self.out.clone();
        }
        Ok(m)
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Frame file in the ingestion wire format
    pub file: PathBuf,
    #[command(flatten)]
    pub remote: Remote,
    /// Lines per request
    #[arg(long, default_value_t = 20_000)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub station: String,
    /// First day, ISO-8601 date or time [default: last day with data]
    #[arg(long)]
    pub from: Option<String>,
    /// Last day, ISO-8601 date or time [default: last day with data]
    #[arg(long)]
    pub to: Option<String>,
    /// Compute offline from this frame file instead of asking a service
    #[arg(long, conflicts_with = "url")]
    pub input: Option<PathBuf>,
    /// Service configuration for offline runs (sites and model parameters)
    #[arg(long, requires = "input")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub remote: Remote,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Series key `station:sensor`; repeat for more columns
    #[arg(long = "key", required = true)]
    pub keys: Vec<SeriesKey>,
    /// ISO-8601 start (inclusive) [default: unbounded]
    #[arg(long)]
    pub from: Option<String>,
    /// ISO-8601 end (exclusive) [default: unbounded]
    #[arg(long)]
    pub to: Option<String>,
    /// raw, hourly or daily [default: raw]
    #[arg(long)]
    pub aggregate: Option<Granularity>,
    /// mean, min, max or count for aggregated reports [default: mean]
    #[arg(long)]
    pub stat: Option<Stat>,
    /// Output file [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub remote: Remote,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Configuration file
    #[arg(long, env = service::CONFIG_ENV)]
    pub config: PathBuf,
    /// Overrides `server.listen`
    #[arg(long)]
    pub listen: Option<String>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = &mut std::io::stdout().lock();
    match cli.command {
        Command::SimRun(args) => sim_run(&args, stdout),
        Command::Replay(args) => replay(&args, stdout),
        Command::Metrics(args) => metrics(&args, stdout),
        Command::Report(args) => report(&args, stdout),
        Command::Serve(args) => serve(&args),
    }
}

/// Minimal blocking client for the service API.
pub struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

const MAX_RESPONSE_BYTES: u64 = 1 << 30;

impl Client {
    pub fn new(base: &str, token: Option<&str>) -> Client {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(10)))
            .build()
            .into();
        Client {
            base: base.trim_end_matches('/').to_string(),
            token: token.map(str::to_owned),
            agent,
        }
    }

    fn finish(&self, url: &str, result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Vec<u8>, CliError> {
        let unreachable = |e: ureq::Error| CliError::Unreachable {
            url: url.to_string(),
            reason: e.to_string(),
        };
        let mut resp = result.map_err(unreachable)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(unreachable)?;
        if !(200..300).contains(&status) {
            return Err(CliError::Http {
                url: url.to_string(),
                status,
                body: String::from_utf8_lossy(&body).into_owned(),
            });
        }
        Ok(body)
    }

    fn auth(&self) -> Option<String> {
        self.token.as_ref().map(|t| format!("Bearer {t}"))
    }

    pub fn get(&self, path: &str, query: &[(&str, String)]) -> Result<Vec<u8>, CliError> {
        let url = format!("{}{}", self.base, path);
        let mut req = self.agent.get(&url);
        for (k, v) in query {
            req = req.query(*k, v);
        }
        if let Some(a) = self.auth() {
            req = req.header("Authorization", &a);
        }
        self.finish(&url, req.call())
    }

    pub fn post(&self, path: &str, content_type: &str, body: &[u8]) -> Result<Vec<u8>, CliError> {
        let url = format!("{}{}", self.base, path);
        let mut req = self.agent.post(&url).header("Content-Type", content_type);
        if let Some(a) = self.auth() {
            req = req.header("Authorization", &a);
        }
        self.finish(&url, req.send(body))
    }

    pub fn ingest(&self, batch: &str) -> Result<IngestReport, CliError> {
        let body = self.post("/v1/ingest", "application/x-ndjson", batch.as_bytes())?;
        serde_json::from_slice(&body).map_err(|e| CliError::Unreachable {
            url: format!("{}/v1/ingest", self.base),
            reason: format!("unexpected response: {e}"),
        })
    }
}

fn is_url(out: &str) -> bool {
    out.starts_with("http://") || out.starts_with("https://")
}

enum Sink<'a> {
    File(BufWriter<File>, PathBuf),
    Stdout(&'a mut dyn Write),
    Service(Client, Option<(BufWriter<File>, PathBuf)>, IngestReport),
}

impl Sink<'_> {
    fn write(&mut self, batch: &str) -> Result<(), CliError> {
        match self {
            Sink::File(w, path) => w.write_all(batch.as_bytes()).map_err(io_err(path)),
            Sink::Stdout(w) => w.write_all(batch.as_bytes()).map_err(io_err("<stdout>")),
            Sink::Service(client, save, total) => {
                if let Some((w, path)) = save {
                    // Written and flushed before sending so a failed send leaves it behind.
                    w.write_all(batch.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&*path))?;
                }
                let r = client.ingest(batch)?;
                total.accepted += r.accepted;
                total.rejected += r.rejected;
                Ok(())
            }
        }
    }

    fn finish(&mut self) -> Result<(), CliError> {
        match self {
            Sink::File(w, path) => w.flush().map_err(io_err(path)),
            Sink::Stdout(w) => w.flush().map_err(io_err("<stdout>")),
            Sink::Service(_, Some((w, path)), _) => w.flush().map_err(io_err(&*path)),
            Sink::Service(..) => Ok(()),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

pub fn sim_run(args: &SimRunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let manifest = args.manifest()?;
    let config = manifest.sim_config()?;
    let mut sim = fieldsim::Simulation::new(config)?;
    let (mut sink, summary_to): (Sink, Option<&mut dyn Write>) = match manifest.out.as_deref() {
        Some(url) if is_url(url) => {
            let save = args.save.as_deref().map(|p| create(p).map(|w| (w, p.to_path_buf()))).transpose()?;
            (Sink::Service(Client::new(url, args.token.as_deref()), save, IngestReport::default()), Some(stdout))
        }
        Some(path) => (Sink::File(create(Path::new(path))?, PathBuf::from(path)), Some(stdout)),
        None => (Sink::Stdout(stdout), None),
    };

    let mut fates = Vec::new();
    let mut batch = String::new();
    let mut sent = Ok(());
    let mut ticks = 0u32;
    while !sim.finished() {
        let step = sim.step();
        ticks += 1;
        fates.extend(step.fates);
        batch.push_str(&encode_batch(step.delivered.iter().flat_map(|f| f.readings.iter())));
        if sim.finished() || ticks % fieldsim::TICKS_PER_DAY == 0 {
            sent = sink.write(&batch);
            batch.clear();
            if sent.is_err() {
                break;
            }
        }
    }
    let flushed = sink.finish();
    let stats = SimStats::from_fates(&fates);
    let mut summary = String::new();
    write_summary(&mut summary, sim.topology(), &stats);
    if let Sink::Service(_, _, total) = &sink {
        summary.push_str(&format!("service accepted {} readings, rejected {}\n", total.accepted, total.rejected));
    }
    match summary_to {
        Some(w) => w.write_all(summary.as_bytes()).map_err(io_err("<stdout>"))?,
        None => eprint!("{summary}"),
    }
    sent.and(flushed)
}

fn write_summary(out: &mut String, topology: &Topology, stats: &SimStats) {
    use std::fmt::Write as _;
    let _ = writeln!(
        out,
        "frames emitted {} delivered {} delivery ratio {:.4} mean hops {:.2}",
        stats.frames_emitted, stats.frames_delivered, stats.delivery_ratio, stats.mean_hops
    );
    let _ = writeln!(out, "{:<16} {:>8} {:>9} {:>6} {:>11}", "station", "emitted", "delivered", "lost", "longest_gap");
    for (id, s) in &stats.per_station {
        let _ = writeln!(out, "{:<16} {:>8} {:>9} {:>6} {:>11}", id, s.emitted, s.delivered, s.lost, s.longest_gap);
    }
    for (id, route) in &topology.routes {
        if route.is_none() {
            let _ = writeln!(out, "warning: {id} cannot reach the gateway");
        }
    }
    for w in &topology.warnings {
        match w {
            TopologyWarning::SparseStations { hectares_per_station } => {
                let _ = writeln!(out, "warning: {hectares_per_station:.1} ha per station is sparser than recommended");
            }
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn replay(args: &ReplayArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let client = args.remote.client()?;
    let text = read_text(&args.file)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut total = IngestReport::default();
    let mut reasons: std::collections::BTreeMap<String, u64> = Default::default();
    let mut duplicates = 0u64;
    for chunk in lines.chunks(args.batch.max(1)) {
        let r = client.ingest(&chunk.join("\n"))?;
        total.accepted += r.accepted;
        total.rejected += r.rejected;
        for o in r.results {
            duplicates += o.duplicate as u64;
            if let Some(reason) = o.reason {
                *reasons.entry(reason).or_default() += 1;
            }
        }
    }
    let mut out = format!("accepted {} (duplicates {}) rejected {}\n", total.accepted, duplicates, total.rejected);
    for (reason, n) in reasons {
        out.push_str(&format!("  {reason}: {n}\n"));
    }
    stdout.write_all(out.as_bytes()).map_err(io_err("<stdout>"))
}

/// A date, or the UTC date of an ISO-8601 time.
fn parse_day(s: &str) -> Result<NaiveDate, CliError> {
    if let Ok(d) = s.parse::<NaiveDate>() {
        return Ok(d);
    }
    let ts = parse_time(s).map_err(CliError::Usage)?;
    chrono::DateTime::from_timestamp(ts, 0)
        .map(|t| t.date_naive())
        .ok_or_else(|| CliError::Usage(format!("time out of range: {s}")))
}

pub fn metrics(args: &MetricsArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let from = args.from.as_deref().map(parse_day).transpose()?;
    let to = args.to.as_deref().map(parse_day).transpose()?;
    let table = match &args.input {
        Some(input) => offline_metrics(input, args.config.as_deref(), &args.station, from, to)?,
        None => {
            let client = args.remote.client()?;
            let mut q = vec![("format", "table".to_string())];
            q.extend(from.map(|d| ("from", d.to_string())));
            q.extend(to.map(|d| ("to", d.to_string())));
            let body = client.get(&format!("/v1/metrics/{}", args.station), &q)?;
            String::from_utf8_lossy(&body).into_owned()
        }
    };
    stdout.write_all(table.as_bytes()).map_err(io_err("<stdout>"))
}

/// Loads a frame file into a private in-memory service and renders the
/// same table the service serves.
pub fn offline_metrics(
    input: &Path,
    config: Option<&Path>,
    station: &str,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<String, CliError> {
    let mut config = match config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    config.storage.path = None;
    config.ingest.auto_register = true;
    let svc = Service::new(config)?;
    let local = UserAccount {
        id: "cli".into(),
        display_name: "offline".into(),
        role: Role::Operator,
        token: String::new(),
    };
    svc.ingest(&local, &read_text(input)?)?;
    let site = svc.station(station)?;
    let last = svc
        .latest_time(station)
        .map(|t| site.local_date(t))
        .ok_or_else(|| CliError::Usage(format!("no data for station {station}")))?;
    let to = to.unwrap_or(last);
    let rows = svc.metrics(station, from.unwrap_or(to), to)?;
    Ok(service::metrics_table(&rows))
}

pub fn report(args: &ReportArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let client = args.remote.client()?;
    let mut q: Vec<(&str, String)> = args.keys.iter().map(|k| ("key", k.to_string())).collect();
    q.extend(args.from.clone().map(|v| ("from", v)));
    q.extend(args.to.clone().map(|v| ("to", v)));
    q.extend(args.aggregate.map(|g| ("aggregate", g.to_string())));
    q.extend(args.stat.map(|s| ("stat", s.to_string())));
    let body = client.get("/v1/report", &q)?;
    match &args.out {
        Some(path) => std::fs::write(path, &body).map_err(io_err(path)),
        None => stdout.write_all(&body).map_err(io_err("<stdout>")),
    }
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let mut config = Config::load(&args.config)?;
    if let Some(listen) = &args.listen {
        config.server.listen = listen.clone();
    }
    let listen = config.server.listen.clone();
    let interval = Duration::from_secs(config.server.archival_interval_s.max(1));
    let svc = Arc::new(Service::new(config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(io_err("tokio runtime"))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen).await.map_err(io_err(&listen))?;
        log::info!("listening on {}", listener.local_addr().map_err(io_err(&listen))?);
        let archiver = svc.clone();
        let archival = tokio::spawn(async move {
            let mut tick = tokio::time::interval(interval);
            tick.tick().await;
            loop {
                tick.tick().await;
                let svc = archiver.clone();
                let now = chrono::Utc::now().timestamp();
                match tokio::task::spawn_blocking(move || svc.archive(now)).await {
                    Ok(Ok(n)) => log::info!("archived {n} raw points"),
                    Ok(Err(e)) => log::error!("archival failed: {e}"),
                    Err(e) => log::error!("archival task panicked: {e}"),
                }
            }
        });
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        let served = service::http::serve(svc, listener, shutdown).await.map_err(io_err(&listen));
        archival.abort();
        served
    })
}
