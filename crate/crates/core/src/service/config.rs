//! Versioned TOML configuration for the back-end service.
//!
//! ```toml
//! version = 1
//!
//! [storage]
//! path = "/var/lib/vinesense"   # omit for an in-memory store
//! fsync = true
//!
//! [retention]
//! raw_horizon_days = 90
//! bucket_width_s = 3600
//!
//! [[stations]]
//! id = "north-01"
//! latitude = 38.5
//! elevation_m = 60.0
//! utc_offset_minutes = -480
//!
//! [[blocks]]
//! id = "cab-north"
//! station = "north-01"
//! profile = "cabernet_sauvignon/napa"
//! season_start = "03-01"
//!
//! [[users]]
//! id = "ana"
//! role = "admin"
//! token = "change-me"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agromet::{ChillBandTable, DEFAULT_GDD_BASE};
use crate::irrigation::{IrrigationParams, KcTable};
use crate::phenology::VarietyProfile;
use crate::risk::{
    BotrytisParams, DownyMildewParams, FrostParams, InsectModel, PowderyMildewParams, WindSpreadParams,
};
use crate::store::RetentionPolicy;

use super::alerts::AlertRule;

pub const CONFIG_ENV: &str = "VINESENSE_CONFIG";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported configuration version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("{0} is not set")]
    MissingEnv(&'static str),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Viewer,
    Operator,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAccount {
    pub id: String,
    #[serde(default)]
    pub display_name: String,
    pub role: Role,
    #[serde(skip_serializing)]
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSite {
    pub id: String,
    #[serde(default)]
    pub latitude: f64,
    #[serde(default)]
    pub elevation_m: f64,
    /// Fixed offset used for station-local day boundaries.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl StationSite {
    pub fn unconfigured(id: &str) -> Self {
        StationSite {
            id: id.to_string(),
            latitude: 0.0,
            elevation_m: 0.0,
            utc_offset_minutes: 0,
        }
    }

    pub fn offset_s(&self) -> i64 {
        self.utc_offset_minutes as i64 * 60
    }

    /// UTC epoch second at which a local calendar day begins.
    pub fn day_start(&self, date: NaiveDate) -> i64 {
        date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() - self.offset_s()
    }

    pub fn local_date(&self, ts: i64) -> NaiveDate {
        chrono::DateTime::from_timestamp(ts + self.offset_s(), 0)
            .map(|d| d.date_naive())
            .unwrap_or(NaiveDate::MIN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub id: String,
    pub station: String,
    pub profile: String,
    /// Month and day the GDD season starts each year, `MM-DD`.
    #[serde(default = "default_season_start")]
    pub season_start: String,
    #[serde(default)]
    pub threshold_mm: Option<f64>,
    #[serde(default)]
    pub efficiency: Option<f64>,
    #[serde(default)]
    pub kc: Option<KcTable>,
}

fn default_season_start() -> String {
    "03-01".into()
}

impl BlockConfig {
    pub fn season_start_in(&self, year: i32) -> Option<NaiveDate> {
        parse_month_day(&self.season_start, year)
    }
}

pub fn parse_month_day(md: &str, year: i32) -> Option<NaiveDate> {
    let (m, d) = md.split_once('-')?;
    NaiveDate::from_ymd_opt(year, m.parse().ok()?, d.parse().ok()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SprayParams {
    pub max_wind: f64,
    pub max_rain_prob: f64,
    pub min_window_h: f64,
}

impl Default for SprayParams {
    fn default() -> Self {
        SprayParams {
            max_wind: 4.0,
            max_rain_prob: 30.0,
            min_window_h: 3.0,
        }
    }
}

/// Every tunable model constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Models {
    pub gdd_base: f64,
    /// Leaf-wetness reading at or above which a 15-minute slot counts as wet.
    pub leaf_wetness_threshold: f64,
    /// NDVI below this flags weak canopy vigour.
    pub ndvi_low_vigor: f64,
    pub chill_bands: ChillBandTable,
    pub powdery_mildew: PowderyMildewParams,
    pub downy_mildew: DownyMildewParams,
    pub botrytis: BotrytisParams,
    pub insect: InsectModel,
    pub wind_spread: WindSpreadParams,
    pub frost: FrostParams,
    pub irrigation: IrrigationParams,
    pub kc: KcTable,
    pub spray: SprayParams,
}

impl Default for Models {
    fn default() -> Self {
        Models {
            gdd_base: DEFAULT_GDD_BASE,
            leaf_wetness_threshold: 50.0,
            ndvi_low_vigor: 0.4,
            chill_bands: ChillBandTable::utah(),
            powdery_mildew: PowderyMildewParams::default(),
            downy_mildew: DownyMildewParams::default(),
            botrytis: BotrytisParams::default(),
            insect: InsectModel::grape_berry_moth(),
            wind_spread: WindSpreadParams::default(),
            frost: FrostParams::default(),
            irrigation: IrrigationParams::default(),
            kc: KcTable::default(),
            spray: SprayParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StorageConfig {
    pub path: Option<PathBuf>,
    pub fsync: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Accept readings from stations missing in the configuration.
    pub auto_register: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { auto_register: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub listen: String,
    /// Seconds between archival passes; 0 disables them.
    pub archival_interval_s: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:8080".into(),
            archival_interval_s: 3600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub retention: RetentionPolicy,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub stations: Vec<StationSite>,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
    /// Added to the built-in profiles; an entry with a built-in key replaces it.
    #[serde(default)]
    pub profiles: Vec<VarietyProfile>,
    #[serde(default)]
    pub models: Models,
    #[serde(default)]
    pub users: Vec<UserAccount>,
    #[serde(default)]
    pub alert_rules: Vec<AlertRule>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            version: CONFIG_VERSION,
            server: ServerConfig::default(),
            storage: StorageConfig::default(),
            retention: RetentionPolicy::default(),
            ingest: IngestConfig::default(),
            stations: Vec::new(),
            blocks: Vec::new(),
            profiles: Vec::new(),
            models: Models::default(),
            users: Vec::new(),
            alert_rules: Vec::new(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text)
    }

    /// Loads the file named by `VINESENSE_CONFIG`.
    pub fn from_env() -> Result<Config, ConfigError> {
        let path = std::env::var_os(CONFIG_ENV).ok_or(ConfigError::MissingEnv(CONFIG_ENV))?;
        Config::load(path)
    }

    /// Built-in profiles overlaid with configured ones, keyed `variety/region`.
    pub fn profile_map(&self) -> BTreeMap<String, VarietyProfile> {
        let mut map: BTreeMap<String, VarietyProfile> =
            VarietyProfile::builtin().into_iter().map(|p| (p.key(), p)).collect();
        for p in &self.profiles {
            map.insert(p.key(), p.clone());
        }
        map
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        self.retention.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let profiles = self.profile_map();
        for p in profiles.values() {
            p.validate().map_err(|e| ConfigError::Invalid(format!("profile {}: {e}", p.key())))?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.stations {
            if s.id.is_empty() || !seen.insert(s.id.clone()) {
                return invalid(format!("station id `{}` empty or repeated", s.id));
            }
            if !(-90.0..=90.0).contains(&s.latitude) {
                return invalid(format!("station {}: latitude {} out of range", s.id, s.latitude));
            }
        }
        for b in &self.blocks {
            if !seen.insert(b.id.clone()) {
                return invalid(format!("block id `{}` repeats a station or block id", b.id));
            }
            if !self.stations.iter().any(|s| s.id == b.station) {
                return invalid(format!("block {}: unknown station {}", b.id, b.station));
            }
            if !profiles.contains_key(&b.profile) {
                return invalid(format!("block {}: unknown profile {}", b.id, b.profile));
            }
            if b.season_start_in(2000).is_none() {
                return invalid(format!("block {}: season_start must be MM-DD", b.id));
            }
            if b.efficiency.is_some_and(|e| !(e > 0.0 && e <= 1.0)) {
                return invalid(format!("block {}: efficiency outside (0, 1]", b.id));
            }
        }
        let mut tokens = std::collections::BTreeSet::new();
        for u in &self.users {
            if u.token.is_empty() || !tokens.insert(u.token.as_str()) {
                return invalid(format!("user {}: token empty or shared", u.id));
            }
        }
        for r in &self.alert_rules {
            r.validate().map_err(ConfigError::Invalid)?;
        }
        self.models.insect.validate().map_err(ConfigError::Invalid)?;
        let kc = &self.models.kc;
        if [kc.dormancy, kc.bud_break, kc.flowering, kc.veraison, kc.harvest]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return invalid("models.kc values must be finite and non-negative".into());
        }
        Ok(())
    }
}
