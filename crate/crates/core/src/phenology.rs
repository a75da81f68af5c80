//! Growth-stage tracking against per-variety degree-day ranges.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight of each observation in the midpoint update.
pub const RECALIBRATION_WEIGHT: f64 = 0.3;

/// Harvest projection gives up after this many days.
pub const PROJECTION_HORIZON_DAYS: u64 = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Dormancy,
    BudBreak,
    Flowering,
    Veraison,
    Harvest,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Dormancy,
        Stage::BudBreak,
        Stage::Flowering,
        Stage::Veraison,
        Stage::Harvest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Dormancy => "dormancy",
            Stage::BudBreak => "bud_break",
            Stage::Flowering => "flowering",
            Stage::Veraison => "veraison",
            Stage::Harvest => "harvest",
        }
    }

    /// BBCH principal growth-stage code for grapevine.
    pub fn bbch_code(self) -> u8 {
        match self {
            Stage::Dormancy => 0,
            Stage::BudBreak => 8,
            Stage::Flowering => 65,
            Stage::Veraison => 81,
            Stage::Harvest => 89,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PhenologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PhenologyError::UnknownStage(s.to_string()))
    }
}

/// Formats a BBCH code the way field sheets print it ("00", "08", ...).
pub fn bbch_label(stage: Stage) -> String {
    format!("{:02}", stage.bbch_code())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhenologyError {
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("invalid profile `{profile}`: {reason}")]
    InvalidProfile { profile: String, reason: String },
    #[error("no cumulative GDD recorded for {0}")]
    MissingHistory(NaiveDate),
    #[error("conflicting observations: {later} observed on {later_date} after {earlier} on {earlier_date}")]
    StageRegression {
        earlier: Stage,
        earlier_date: NaiveDate,
        later: Stage,
        later_date: NaiveDate,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRange {
    pub stage: Stage,
    pub gdd_low: f64,
    pub gdd_high: f64,
    #[serde(default)]
    pub typical_months: String,
}

impl StageRange {
    pub fn midpoint(&self) -> f64 {
        (self.gdd_low + self.gdd_high) / 2.0
    }

    pub fn contains(&self, gdd: f64) -> bool {
        (self.gdd_low..=self.gdd_high).contains(&gdd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietyProfile {
    pub variety_name: String,
    pub region: String,
    pub base_temp: f64,
    #[serde(default)]
    pub upper_cap: Option<f64>,
    pub stages: Vec<StageRange>,
    /// Expected daily GDD indexed by day of year minus one.
    #[serde(default = "synthetic_norms")]
    pub gdd_daily_norms: Vec<f64>,
}

impl VarietyProfile {
    pub fn cabernet_sauvignon_napa() -> Self {
        VarietyProfile {
            variety_name: "Cabernet Sauvignon".into(),
            region: "Napa".into(),
            base_temp: 10.0,
            upper_cap: None,
            stages: vec![
                range(Stage::BudBreak, 50.0, 100.0, "March, April"),
                range(Stage::Flowering, 350.0, 400.0, "May"),
                range(Stage::Veraison, 1100.0, 1300.0, "July"),
                range(Stage::Harvest, 2200.0, 2500.0, "Sep - Oct"),
            ],
            gdd_daily_norms: synthetic_norms(),
        }
    }

    pub fn chardonnay_burgundy() -> Self {
        VarietyProfile {
            variety_name: "Chardonnay".into(),
            region: "Burgundy".into(),
            base_temp: 10.0,
            upper_cap: None,
            stages: vec![
                range(Stage::BudBreak, 50.0, 75.0, "April"),
                range(Stage::Flowering, 300.0, 350.0, "May, June"),
                range(Stage::Veraison, 900.0, 1100.0, "July, Aug"),
                range(Stage::Harvest, 1800.0, 2000.0, "September"),
            ],
            gdd_daily_norms: synthetic_norms(),
        }
    }

    pub fn builtin() -> Vec<VarietyProfile> {
        vec![Self::cabernet_sauvignon_napa(), Self::chardonnay_burgundy()]
    }

    /// Identifier used in configuration: `variety/region`, lowercased with underscores.
    pub fn key(&self) -> String {
        format!("{}/{}", slug(&self.variety_name), slug(&self.region))
    }

    pub fn range(&self, stage: Stage) -> Option<&StageRange> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn validate(&self) -> Result<(), PhenologyError> {
        let fail = |reason: String| PhenologyError::InvalidProfile {
            profile: self.key(),
            reason,
        };
        if self.stages.is_empty() {
            return Err(fail("no stage ranges".into()));
        }
        if self.gdd_daily_norms.len() != 366 {
            return Err(fail(format!("{} daily norms, expected 366", self.gdd_daily_norms.len())));
        }
        check_ordering(&self.stages).map_err(fail)
    }
}

fn check_ordering(stages: &[StageRange]) -> Result<(), String> {
    for r in stages {
        if r.stage == Stage::Dormancy {
            return Err("dormancy has no range".into());
        }
        if !(r.gdd_low.is_finite() && r.gdd_high.is_finite()) || r.gdd_low > r.gdd_high {
            return Err(format!("{} range {}–{} is invalid", r.stage, r.gdd_low, r.gdd_high));
        }
    }
    for pair in stages.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.stage >= b.stage {
            return Err(format!("{} listed before {}", a.stage, b.stage));
        }
        if a.gdd_high >= b.gdd_low {
            return Err(format!("{} overlaps {}", a.stage, b.stage));
        }
    }
    Ok(())
}

fn range(stage: Stage, low: f64, high: f64, months: &str) -> StageRange {
    StageRange {
        stage,
        gdd_low: low,
        gdd_high: high,
        typical_months: months.into(),
    }
}

fn slug(s: &str) -> String {
    s.trim().to_lowercase().replace([' ', '-'], "_")
}

/// Built-in expected daily GDD for a warm northern-hemisphere site with no
/// history: a seasonal cosine of the daily mean, base 10 °C.
pub fn synthetic_norms() -> Vec<f64> {
    (1..=366)
        .map(|doy| {
            let phase = 2.0 * std::f64::consts::PI * (doy as f64 - 200.0) / 365.0;
            (17.0 + 9.0 * phase.cos() - 10.0).max(0.0)
        })
        .collect()
}

/// Per-day-of-year average of daily GDD over past seasons. Each season is a
/// list of `(date, daily gdd)`; days absent from every season fall back to
/// the synthetic curve.
pub fn norms_from_history(seasons: &[Vec<(NaiveDate, f64)>]) -> Vec<f64> {
    let mut sums = vec![0.0; 366];
    let mut counts = vec![0u32; 366];
    for season in seasons {
        for (date, gdd) in season {
            let i = date.ordinal0() as usize;
            sums[i] += gdd;
            counts[i] += 1;
        }
    }
    let fallback = synthetic_norms();
    (0..366)
        .map(|i| if counts[i] > 0 { sums[i] / counts[i] as f64 } else { fallback[i] })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub current_stage: Stage,
    pub progress_to_next: f64,
    pub cumulative_gdd: f64,
    pub estimated_harvest_date: Option<NaiveDate>,
}

/// Highest stage whose lower bound has been reached, with progress toward
/// the next lower bound. Harvest reports full progress.
pub fn estimate_stage(cumulative_gdd: f64, profile: &VarietyProfile) -> StageEstimate {
    let gdd = cumulative_gdd.max(0.0);
    let reached = profile.stages.iter().rposition(|r| r.gdd_low <= gdd);
    let (current_stage, current_low) = match reached {
        Some(i) => (profile.stages[i].stage, profile.stages[i].gdd_low),
        None => (Stage::Dormancy, 0.0),
    };
    let next_low = match reached {
        Some(i) => profile.stages.get(i + 1).map(|r| r.gdd_low),
        None => profile.stages.first().map(|r| r.gdd_low),
    };
    let progress_to_next = match next_low {
        Some(next) if next > current_low => ((gdd - current_low) / (next - current_low)).clamp(0.0, 1.0),
        Some(_) => 0.0,
        None => 1.0,
    };
    StageEstimate {
        current_stage,
        progress_to_next,
        cumulative_gdd: gdd,
        estimated_harvest_date: None,
    }
}

/// Earliest date on which the season total, extended day by day with the
/// profile's norms, reaches the harvest lower bound.
pub fn project_harvest(cumulative_gdd_to_date: f64, today: NaiveDate, profile: &VarietyProfile) -> Option<NaiveDate> {
    let target = profile.range(Stage::Harvest)?.gdd_low;
    if cumulative_gdd_to_date >= target {
        return Some(today);
    }
    let mut total = cumulative_gdd_to_date;
    for k in 1..=PROJECTION_HORIZON_DAYS {
        let day = today.checked_add_days(Days::new(k))?;
        total += profile
            .gdd_daily_norms
            .get(day.ordinal0() as usize)
            .copied()
            .unwrap_or(0.0);
        if total >= target {
            return Some(day);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub date: NaiveDate,
    pub block_id: String,
    pub observed_stage: Stage,
    pub observer: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDelta {
    pub stage: Stage,
    pub observed_gdd: f64,
    pub midpoint_delta: f64,
    pub applied: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub profile: VarietyProfile,
    pub deltas: Vec<StageDelta>,
}

/// Shifts stage ranges toward observed GDD values.
///
/// Each out-of-range observation moves its range midpoint by
/// `RECALIBRATION_WEIGHT * (observed - midpoint)`, keeping the width. A shift
/// that would break stage ordering is skipped and reported.
pub fn recalibrate(
    profile: &VarietyProfile,
    observations: &[ObservationRecord],
    gdd_history: &BTreeMap<NaiveDate, f64>,
) -> Result<Recalibration, PhenologyError> {
    let mut ordered: Vec<&ObservationRecord> = observations.iter().collect();
    ordered.sort_by_key(|o| o.date);
    for pair in ordered.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b.date > a.date && b.observed_stage < a.observed_stage {
            return Err(PhenologyError::StageRegression {
                earlier: a.observed_stage,
                earlier_date: a.date,
                later: b.observed_stage,
                later_date: b.date,
            });
        }
    }

    let mut updated = profile.clone();
    let mut deltas = Vec::new();
    for obs in ordered {
        let observed_gdd = *gdd_history
            .get(&obs.date)
            .ok_or(PhenologyError::MissingHistory(obs.date))?;
        let Some(idx) = updated.stages.iter().position(|r| r.stage == obs.observed_stage) else {
            deltas.push(StageDelta {
                stage: obs.observed_stage,
                observed_gdd,
                midpoint_delta: 0.0,
                applied: false,
                note: "stage has no degree-day range".into(),
            });
            continue;
        };
        let current = &updated.stages[idx];
        if current.contains(observed_gdd) {
            deltas.push(StageDelta {
                stage: obs.observed_stage,
                observed_gdd,
                midpoint_delta: 0.0,
                applied: true,
                note: "consistent with profile".into(),
            });
            continue;
        }
        let shift = RECALIBRATION_WEIGHT * (observed_gdd - current.midpoint());
        let mut candidate = updated.stages.clone();
        candidate[idx].gdd_low += shift;
        candidate[idx].gdd_high += shift;
        match check_ordering(&candidate) {
            Ok(()) if candidate[idx].gdd_low >= 0.0 => {
                updated.stages = candidate;
                deltas.push(StageDelta {
                    stage: obs.observed_stage,
                    observed_gdd,
                    midpoint_delta: shift,
                    applied: true,
                    note: format!("midpoint moved by {shift:+.1}"),
                });
            }
            Ok(()) => deltas.push(rejected(obs.observed_stage, observed_gdd, shift, "range would go negative".into())),
            Err(reason) => deltas.push(rejected(obs.observed_stage, observed_gdd, shift, reason)),
        }
    }
    Ok(Recalibration {
        profile: updated,
        deltas,
    })
}

fn rejected(stage: Stage, observed_gdd: f64, shift: f64, reason: String) -> StageDelta {
    StageDelta {
        stage,
        observed_gdd,
        midpoint_delta: 0.0,
        applied: false,
        note: format!("shift of {shift:+.1} rejected: {reason}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, m, day).unwrap()
    }

    fn obs(date: NaiveDate, stage: Stage) -> ObservationRecord {
        ObservationRecord {
            date,
            block_id: "b1".into(),
            observed_stage: stage,
            observer: "op".into(),
            note: String::new(),
        }
    }

    #[test]
    fn builtin_profiles_match_reference_table() {
        let napa = VarietyProfile::cabernet_sauvignon_napa();
        let lows: Vec<_> = napa.stages.iter().map(|r| (r.gdd_low, r.gdd_high)).collect();
        assert_eq!(lows, vec![(50.0, 100.0), (350.0, 400.0), (1100.0, 1300.0), (2200.0, 2500.0)]);
        let burgundy = VarietyProfile::chardonnay_burgundy();
        let lows: Vec<_> = burgundy.stages.iter().map(|r| (r.gdd_low, r.gdd_high)).collect();
        assert_eq!(lows, vec![(50.0, 75.0), (300.0, 350.0), (900.0, 1100.0), (1800.0, 2000.0)]);
        napa.validate().unwrap();
        burgundy.validate().unwrap();
        assert_eq!(napa.key(), "cabernet_sauvignon/napa");
    }

    #[test]
    fn stage_examples() {
        let napa = VarietyProfile::cabernet_sauvignon_napa();
        assert_eq!(estimate_stage(1200.0, &napa).current_stage, Stage::Veraison);
        let zero = estimate_stage(0.0, &napa);
        assert_eq!(zero.current_stage, Stage::Dormancy);
        assert_eq!(zero.progress_to_next, 0.0);
        let burgundy = VarietyProfile::chardonnay_burgundy();
        assert_eq!(estimate_stage(1900.0, &burgundy).current_stage, Stage::Harvest);

        // Between ranges: last reached stage plus progress.
        let gap = estimate_stage(700.0, &napa);
        assert_eq!(gap.current_stage, Stage::Flowering);
        assert!((gap.progress_to_next - 350.0 / 750.0).abs() < 1e-12);
        assert_eq!(estimate_stage(25.0, &napa).progress_to_next, 0.5);
    }

    #[test]
    fn bbch_codes() {
        assert_eq!(bbch_label(Stage::Dormancy), "00");
        assert_eq!(bbch_label(Stage::BudBreak), "08");
        assert_eq!(bbch_label(Stage::Flowering), "65");
        assert_eq!(bbch_label(Stage::Veraison), "81");
        assert_eq!(bbch_label(Stage::Harvest), "89");
    }

    #[test]
    fn projection_examples() {
        let mut profile = VarietyProfile::chardonnay_burgundy();
        assert_eq!(project_harvest(1850.0, d(9, 1), &profile), Some(d(9, 1)));

        profile.gdd_daily_norms = vec![0.0; 366];
        assert_eq!(project_harvest(100.0, d(9, 1), &profile), None);

        // Closed form against a day-stepping count.
        for norm in [3.0, 7.5, 12.25] {
            profile.gdd_daily_norms = vec![norm; 366];
            let gdd = 1000.0;
            let k = ((1800.0 - gdd) / norm as f64).ceil() as u64;
            let mut stepped = 0u64;
            let mut total = gdd;
            while total < 1800.0 {
                total += norm;
                stepped += 1;
            }
            assert_eq!(k, stepped);
            assert_eq!(
                project_harvest(gdd, d(5, 1), &profile),
                d(5, 1).checked_add_days(Days::new(k))
            );
        }
    }

    #[test]
    fn recalibration_examples() {
        let napa = VarietyProfile::cabernet_sauvignon_napa();
        let history: BTreeMap<_, _> = [(d(7, 20), 1400.0), (d(7, 10), 1200.0), (d(4, 1), 60.0)].into();

        let none = recalibrate(&napa, &[], &history).unwrap();
        assert_eq!(none.profile, napa);

        let shifted = recalibrate(&napa, &[obs(d(7, 20), Stage::Veraison)], &history).unwrap();
        let ver = shifted.profile.range(Stage::Veraison).unwrap();
        assert!((ver.midpoint() - 1260.0).abs() < 1e-9);
        assert!((ver.gdd_high - ver.gdd_low - 200.0).abs() < 1e-9);
        assert!((shifted.deltas[0].midpoint_delta - 60.0).abs() < 1e-9);

        let inside = recalibrate(&napa, &[obs(d(7, 10), Stage::Veraison)], &history).unwrap();
        assert_eq!(inside.profile, napa);
        assert_eq!(inside.deltas[0].midpoint_delta, 0.0);
    }

    #[test]
    fn recalibration_rejects_regression_and_overlap() {
        let napa = VarietyProfile::cabernet_sauvignon_napa();
        let history: BTreeMap<_, _> = [(d(4, 1), 60.0), (d(7, 20), 1400.0)].into();
        let err = recalibrate(
            &napa,
            &[obs(d(7, 20), Stage::BudBreak), obs(d(4, 1), Stage::Veraison)],
            &history,
        )
        .unwrap_err();
        assert!(matches!(err, PhenologyError::StageRegression { .. }));

        // Flowering observed very late would push flowering past veraison.
        let late: BTreeMap<_, _> = [(d(7, 20), 4000.0)].into();
        let rec = recalibrate(&napa, &[obs(d(7, 20), Stage::Flowering)], &late).unwrap();
        assert!(!rec.deltas[0].applied);
        assert_eq!(rec.profile, napa);

        assert!(matches!(
            recalibrate(&napa, &[obs(d(8, 1), Stage::Veraison)], &late),
            Err(PhenologyError::MissingHistory(_))
        ));
    }

    #[test]
    fn norms_average_past_seasons() {
        let a = vec![(NaiveDate::from_ymd_opt(2022, 6, 1).unwrap(), 10.0)];
        let b = vec![(NaiveDate::from_ymd_opt(2023, 6, 1).unwrap(), 14.0)];
        let norms = norms_from_history(&[a, b]);
        assert_eq!(norms.len(), 366);
        assert_eq!(norms[151], 12.0);
        assert_eq!(norms[0], synthetic_norms()[0]);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn stage_monotone(a in 0.0f64..3000.0, b in 0.0f64..3000.0) {
            let napa = VarietyProfile::cabernet_sauvignon_napa();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let e_lo = estimate_stage(lo, &napa);
            let e_hi = estimate_stage(hi, &napa);
            prop_assert!(e_lo.current_stage <= e_hi.current_stage);
            prop_assert!((0.0..=1.0).contains(&e_lo.progress_to_next));
        }

        #[test]
        fn recalibration_idempotent_when_consistent(pick in 0usize..4, frac in 0.0f64..=1.0) {
            let napa = VarietyProfile::cabernet_sauvignon_napa();
            let r = &napa.stages[pick];
            let gdd = r.gdd_low + frac * (r.gdd_high - r.gdd_low);
            let history: BTreeMap<_, _> = [(d(6, 1), gdd)].into();
            let rec = recalibrate(&napa, &[obs(d(6, 1), r.stage)], &history).unwrap();
            prop_assert_eq!(rec.profile, napa);
        }
    }
}
