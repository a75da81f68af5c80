//! Alert rules, fired alerts and their lifecycle.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    /// Fires when `value - threshold` changes sign between evaluations.
    Crosses,
}

impl Comparator {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Crosses => "crosses",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Crosses => false,
        }
    }
}

impl std::str::FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "<" | "lt" => Ok(Comparator::Lt),
            "<=" | "≤" | "le" => Ok(Comparator::Le),
            ">" | "gt" => Ok(Comparator::Gt),
            ">=" | "≥" | "ge" => Ok(Comparator::Ge),
            "crosses" => Ok(Comparator::Crosses),
            other => Err(format!("unknown comparator `{other}`")),
        }
    }
}

impl Serialize for Comparator {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Comparator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRule {
    pub rule_id: String,
    /// A sensor kind or a derived metric id.
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    /// Look-back in seconds over which the condition must hold.
    pub window_s: i64,
    pub severity: Severity,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
    /// Restricts the rule to one station; all stations when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<String>,
}

impl AlertRule {
    pub fn validate(&self) -> Result<(), String> {
        if self.rule_id.trim().is_empty() {
            return Err("rule_id must not be empty".into());
        }
        if self.window_s <= 0 {
            return Err(format!("rule {}: window must be positive", self.rule_id));
        }
        if !self.threshold.is_finite() {
            return Err(format!("rule {}: threshold must be finite", self.rule_id));
        }
        super::Metric::parse(&self.metric).map_err(|e| format!("rule {}: {e}", self.rule_id))?;
        Ok(())
    }

    pub fn applies_to(&self, station: &str) -> bool {
        self.enabled && self.station.as_deref().is_none_or(|s| s == station)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertState {
    Active,
    Acknowledged,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub rule_id: String,
    pub station_id: String,
    pub severity: Severity,
    pub fired_at: i64,
    pub value_at_fire: f64,
    pub state: AlertState,
    pub acknowledged_by: Option<String>,
    pub resolved_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AckError {
    NotFound,
    NotActive(AlertState),
}

impl fmt::Display for AckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AckError::NotFound => write!(f, "no such alert"),
            AckError::NotActive(s) => write!(f, "alert is already {s:?}"),
        }
    }
}

/// Samples of the rule metric inside the evaluation window, oldest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSamples {
    pub values: Vec<(i64, f64)>,
}

impl WindowSamples {
    pub fn latest(&self) -> Option<(i64, f64)> {
        self.values.last().copied()
    }
}

/// All alerts plus the per-(rule, station) memory needed for dedup and
/// crossing detection.
#[derive(Debug, Default)]
pub struct AlertBook {
    alerts: BTreeMap<String, Alert>,
    order: Vec<String>,
    open: HashMap<(String, String), String>,
    last_side: HashMap<(String, String), bool>,
}

impl AlertBook {
    pub fn list(&self) -> Vec<Alert> {
        self.order.iter().map(|id| self.alerts[id].clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Alert> {
        self.alerts.get(id)
    }

    /// Applies one rule evaluation. Returns the alert if one fired.
    pub fn evaluate(&mut self, rule: &AlertRule, station: &str, now: i64, samples: &WindowSamples) -> Option<Alert> {
        let key = (rule.rule_id.clone(), station.to_string());
        let (holds, value) = match rule.comparator {
            Comparator::Crosses => {
                let Some((_, v)) = samples.latest() else {
                    return None;
                };
                let side = v >= rule.threshold;
                let prev = self.last_side.insert(key.clone(), side);
                (prev.is_some_and(|p| p != side), v)
            }
            c => {
                let holds = !samples.values.is_empty()
                    && samples.values.iter().all(|(_, v)| c.holds(*v, rule.threshold));
                (holds, samples.latest().map_or(f64::NAN, |(_, v)| v))
            }
        };
        if !holds {
            if let Some(id) = self.open.remove(&key) {
                let alert = self.alerts.get_mut(&id).expect("open alert is stored");
                alert.state = AlertState::Resolved;
                alert.resolved_at = Some(now);
            }
            return None;
        }
        if self.open.contains_key(&key) {
            return None;
        }
        let alert = Alert {
            alert_id: format!("{}@{}@{}", rule.rule_id, station, now),
            rule_id: rule.rule_id.clone(),
            station_id: station.to_string(),
            severity: rule.severity,
            fired_at: now,
            value_at_fire: value,
            state: AlertState::Active,
            acknowledged_by: None,
            resolved_at: None,
        };
        self.open.insert(key, alert.alert_id.clone());
        self.order.push(alert.alert_id.clone());
        self.alerts.insert(alert.alert_id.clone(), alert.clone());
        Some(alert)
    }

    pub fn acknowledge(&mut self, id: &str, user: &str) -> Result<Alert, AckError> {
        let alert = self.alerts.get_mut(id).ok_or(AckError::NotFound)?;
        if alert.state != AlertState::Active {
            return Err(AckError::NotActive(alert.state));
        }
        alert.state = AlertState::Acknowledged;
        alert.acknowledged_by = Some(user.to_string());
        Ok(alert.clone())
    }
}
