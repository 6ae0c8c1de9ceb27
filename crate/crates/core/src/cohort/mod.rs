//! Cohort data model: user profiles, minute-level traces, day records,
//! synthetic generation with planted condition effects, and on-disk formats.

mod generate;
mod io;

pub use generate::{generate_cohort, generate_cohort_with_trace_seed, redraw_labels_random};
pub use io::{read_cohort, write_cohort};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of condition labels per user.
pub const N_CONDITIONS: usize = 9;

/// Condition names in label order. The first six form the mental-health /
/// nervous-system (MH/NS) cluster, the last three the metabolic/circulatory
/// (M/C) cluster.
pub const CONDITIONS: [&str; N_CONDITIONS] = [
    "anxiety",
    "depression",
    "other_mental_illness",
    "chronic_pain",
    "insomnia",
    "sleep_apnea",
    "hypertension",
    "type2_diabetes",
    "dyslipidemia",
];

/// Label indices of the MH/NS cluster.
pub const MHNS: std::ops::Range<usize> = 0..6;
/// Label indices of the M/C cluster.
pub const MC: std::ops::Range<usize> = 6..9;

pub const ETHNICITY_LEVELS: usize = 6;
pub const EDUCATION_LEVELS: usize = 5;
pub const MINUTES_PER_DAY: usize = 1440;
/// Physical plausibility cap on steps in a single minute.
pub const MAX_STEPS_PER_MINUTE: u16 = 300;

pub fn condition_index(name: &str) -> Option<usize> {
    CONDITIONS.iter().position(|&c| c == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub age: u32,
    pub gender: Gender,
    /// Categorical level, 0..6.
    pub ethnicity: u8,
    /// Categorical level, 0..5.
    pub education: u8,
    pub parental_status: bool,
    pub weight: f64,
    pub max_weight: f64,
    pub height: f64,
    pub bmi: f64,
    /// Diagnosis labels in [`CONDITIONS`] order, serialized as a 0/1 array.
    #[serde(with = "labels_as_ints")]
    pub labels: [bool; N_CONDITIONS],
}

mod labels_as_ints {
    use super::N_CONDITIONS;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        labels: &[bool; N_CONDITIONS],
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        ser.collect_seq(labels.iter().map(|&b| u8::from(b)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<[bool; N_CONDITIONS], D::Error> {
        let ints = Vec::<u8>::deserialize(de)?;
        if ints.len() != N_CONDITIONS {
            return Err(D::Error::custom(format!(
                "labels must have {} entries, got {}",
                N_CONDITIONS,
                ints.len()
            )));
        }
        let mut labels = [false; N_CONDITIONS];
        for (i, v) in ints.iter().enumerate() {
            labels[i] = match v {
                0 => false,
                1 => true,
                other => return Err(D::Error::custom(format!("label value {other} not 0/1"))),
            };
        }
        Ok(labels)
    }
}

/// One day of minute-resolution data for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteTrace {
    pub user_id: String,
    /// Day index 0..T-1.
    pub date: u32,
    pub values: TraceValues,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceValues {
    /// Non-negative step counts, one per minute, each <= [`MAX_STEPS_PER_MINUTE`].
    Step(Vec<u16>),
    /// Sleep states: 0 = not-worn/awake, 1 = asleep, 2 = restless.
    /// Minute 0 corresponds to 18:00 of the previous calendar day.
    Sleep(Vec<u8>),
}

impl MinuteTrace {
    pub fn step(user_id: impl Into<String>, date: u32, values: Vec<u16>) -> Result<Self> {
        if values.len() != MINUTES_PER_DAY {
            return Err(Error::TraceLength {
                actual: values.len(),
            });
        }
        if let Some(&v) = values.iter().find(|&&v| v > MAX_STEPS_PER_MINUTE) {
            return Err(Error::InvalidConfig(format!(
                "step count {v} exceeds per-minute cap {MAX_STEPS_PER_MINUTE}"
            )));
        }
        Ok(Self {
            user_id: user_id.into(),
            date,
            values: TraceValues::Step(values),
        })
    }

    pub fn sleep(user_id: impl Into<String>, date: u32, values: Vec<u8>) -> Result<Self> {
        if values.len() != MINUTES_PER_DAY {
            return Err(Error::TraceLength {
                actual: values.len(),
            });
        }
        if let Some(&s) = values.iter().find(|&&s| s > 2) {
            return Err(Error::InvalidConfig(format!("sleep state {s} not in 0..=2")));
        }
        Ok(Self {
            user_id: user_id.into(),
            date,
            values: TraceValues::Sleep(values),
        })
    }

    pub fn is_step(&self) -> bool {
        matches!(self.values, TraceValues::Step(_))
    }

    /// Total steps for a step trace, in-bed minutes for a sleep trace.
    pub fn day_total(&self) -> u32 {
        match &self.values {
            TraceValues::Step(v) => v.iter().map(|&s| u32::from(s)).sum(),
            TraceValues::Sleep(v) => v.iter().filter(|&&s| s == 1 || s == 2).count() as u32,
        }
    }
}

/// Per-day summary row; values are missing when the device was not worn.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub user_id: String,
    pub date: u32,
    pub steps_total: Option<u32>,
    pub sleep_minutes: Option<u32>,
    pub weight: Option<f64>,
    pub wore_step: bool,
    pub wore_sleep: bool,
    pub wore_weight: bool,
}

/// One planted effect on a condition, recorded for test assertions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub effect: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEffects {
    pub condition: String,
    pub effects: Vec<PlantedEffect>,
}

/// The full planted-effect record, ordered by condition index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectManifest {
    pub conditions: Vec<ConditionEffects>,
}

impl EffectManifest {
    /// The generator's fixed planted effects. MH/NS-like conditions modulate
    /// minute-level structure only; M/C-like conditions depend on age and BMI
    /// through a logistic model and leave traces untouched.
    ///
    /// The three strongly-planted conditions are episodic: their effects apply
    /// at full stated magnitude during multi-day episode blocks covering the
    /// `episode_fraction` of the window, and not at all outside them. Episode
    /// timing varies per user, so the signal lives in local temporal structure
    /// rather than a constant per-user offset.
    pub fn planted_defaults() -> Self {
        fn eff(name: &str, magnitude: f64) -> PlantedEffect {
            PlantedEffect {
                effect: name.to_string(),
                magnitude,
            }
        }
        let conditions = vec![
            ConditionEffects {
                condition: "anxiety".into(),
                effects: vec![eff("transition_multiplier", 2.0), eff("episode_fraction", 0.55)],
            },
            ConditionEffects {
                condition: "depression".into(),
                effects: vec![
                    eff("daytime_step_scale", 0.7),
                    eff("first_step_delay_minutes", 60.0),
                    eff("episode_fraction", 0.55),
                ],
            },
            ConditionEffects {
                condition: "other_mental_illness".into(),
                effects: vec![
                    eff("daytime_step_scale", 0.88),
                    eff("extra_restless_poisson", 1.0),
                    eff("episode_fraction", 0.5),
                ],
            },
            ConditionEffects {
                condition: "chronic_pain".into(),
                effects: vec![
                    eff("daytime_step_scale", 0.85),
                    eff("transition_multiplier", 1.3),
                    eff("episode_fraction", 0.5),
                ],
            },
            ConditionEffects {
                condition: "insomnia".into(),
                effects: vec![
                    eff("bedtime_shift_minutes", 90.0),
                    eff("extra_restless_poisson", 4.0),
                    eff("episode_fraction", 0.55),
                ],
            },
            ConditionEffects {
                condition: "sleep_apnea".into(),
                effects: vec![eff("extra_restless_poisson", 1.2)],
            },
            ConditionEffects {
                condition: "hypertension".into(),
                effects: vec![eff("logistic_age", 1.3), eff("logistic_bmi", 0.15)],
            },
            ConditionEffects {
                condition: "type2_diabetes".into(),
                effects: vec![eff("logistic_age", 1.1), eff("logistic_bmi", 0.2)],
            },
            ConditionEffects {
                condition: "dyslipidemia".into(),
                effects: vec![eff("logistic_age", 1.2), eff("logistic_bmi", 0.1)],
            },
        ];
        Self { conditions }
    }

    pub fn effects_for(&self, condition: &str) -> &[PlantedEffect] {
        self.conditions
            .iter()
            .find(|c| c.condition == condition)
            .map(|c| c.effects.as_slice())
            .unwrap_or(&[])
    }
}

/// Synthetic cohort generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_users: usize,
    /// Observation window length in days; must be >= 14.
    pub t_days: usize,
    /// Target prevalence per condition, each in (0.01, 0.9).
    pub prevalence: [f64; N_CONDITIONS],
    /// Planted effects to apply; defaults to [`EffectManifest::planted_defaults`].
    pub effects: EffectManifest,
    pub seed: u64,
}

impl CohortConfig {
    pub fn new(n_users: usize, t_days: usize, seed: u64) -> Self {
        Self {
            n_users,
            t_days,
            prevalence: DEFAULT_PREVALENCE,
            effects: EffectManifest::planted_defaults(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_days < 14 {
            return Err(Error::InvalidConfig(format!(
                "t_days {} below minimum window of 14 days",
                self.t_days
            )));
        }
        for (i, &p) in self.prevalence.iter().enumerate() {
            if !(0.01..=0.9).contains(&p) || p == 0.01 || p == 0.9 {
                return Err(Error::InvalidConfig(format!(
                    "prevalence[{}] = {} outside (0.01, 0.9)",
                    CONDITIONS[i], p
                )));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_PREVALENCE: [f64; N_CONDITIONS] =
    [0.25, 0.25, 0.10, 0.20, 0.20, 0.10, 0.20, 0.12, 0.15];

/// A complete cohort: profiles, day records, minute traces, and the manifest
/// of effects that were planted when it was generated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cohort {
    pub profiles: Vec<UserProfile>,
    pub day_records: Vec<DayRecord>,
    pub minute_traces: Vec<MinuteTrace>,
    pub manifest: EffectManifest,
}

impl Cohort {
    /// Window length implied by the day records (max date + 1).
    pub fn t_days(&self) -> usize {
        self.day_records
            .iter()
            .map(|d| d.date as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn profile(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles.iter().find(|p| p.user_id == user_id)
    }
}

/// Per-user eligibility and invariant check results.
#[derive(Debug, Clone)]
pub struct UserCheck {
    pub user_id: String,
    pub step_days: usize,
    pub sleep_days: usize,
    /// Days with both a step and a sleep minute trace.
    pub joint_days: usize,
    pub violations: Vec<String>,
    pub eligible: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub users: Vec<UserCheck>,
}

impl ValidationReport {
    pub fn eligible_ids(&self) -> Vec<String> {
        self.users
            .iter()
            .filter(|u| u.eligible)
            .map(|u| u.user_id.clone())
            .collect()
    }

    pub fn n_eligible(&self) -> usize {
        self.users.iter().filter(|u| u.eligible).count()
    }
}

/// Applies the inclusion rule (>= 10 step days and >= 1 day with both step
/// and sleep traces) and reports invariant violations per user.
pub fn validate_cohort(cohort: &Cohort) -> ValidationReport {
    use std::collections::HashMap;

    let mut step_days: HashMap<&str, Vec<u32>> = HashMap::new();
    let mut sleep_days: HashMap<&str, Vec<u32>> = HashMap::new();
    let mut step_sums: HashMap<(&str, u32), u32> = HashMap::new();
    for t in &cohort.minute_traces {
        if t.is_step() {
            step_days.entry(&t.user_id).or_default().push(t.date);
            step_sums.insert((&t.user_id, t.date), t.day_total());
        } else {
            sleep_days.entry(&t.user_id).or_default().push(t.date);
        }
    }

    let mut day_records: HashMap<&str, Vec<&DayRecord>> = HashMap::new();
    for d in &cohort.day_records {
        day_records.entry(&d.user_id).or_default().push(d);
    }

    let users = cohort
        .profiles
        .iter()
        .map(|p| {
            let uid = p.user_id.as_str();
            let steps = step_days.get(uid).map(Vec::as_slice).unwrap_or(&[]);
            let sleeps = sleep_days.get(uid).map(Vec::as_slice).unwrap_or(&[]);
            let joint = steps.iter().filter(|d| sleeps.contains(d)).count();
            let mut violations = Vec::new();

            let expected_bmi = p.weight / (p.height / 100.0).powi(2);
            if (p.bmi - expected_bmi).abs() > 0.1 {
                violations.push(format!(
                    "bmi {} differs from weight/height^2 {expected_bmi:.2} by more than 0.1",
                    p.bmi
                ));
            }
            if p.max_weight < p.weight {
                violations.push(format!(
                    "max_weight {} below current weight {}",
                    p.max_weight, p.weight
                ));
            }
            if p.ethnicity as usize >= ETHNICITY_LEVELS {
                violations.push(format!("ethnicity level {} out of range", p.ethnicity));
            }
            if p.education as usize >= EDUCATION_LEVELS {
                violations.push(format!("education level {} out of range", p.education));
            }

            for d in day_records.get(uid).map(Vec::as_slice).unwrap_or(&[]) {
                if !d.wore_step && d.steps_total.is_some() {
                    violations.push(format!("day {}: steps_total present but wore_step=false", d.date));
                }
                if !d.wore_sleep && d.sleep_minutes.is_some() {
                    violations.push(format!("day {}: sleep_minutes present but wore_sleep=false", d.date));
                }
                if !d.wore_weight && d.weight.is_some() {
                    violations.push(format!("day {}: weight present but wore_weight=false", d.date));
                }
                if let (Some(total), Some(&sum)) = (d.steps_total, step_sums.get(&(uid, d.date))) {
                    if total != sum {
                        violations.push(format!(
                            "day {}: steps_total {total} != trace sum {sum}",
                            d.date
                        ));
                    }
                }
            }

            let eligible = steps.len() >= 10 && joint >= 1;
            UserCheck {
                user_id: p.user_id.clone(),
                step_days: steps.len(),
                sleep_days: sleeps.len(),
                joint_days: joint,
                violations,
                eligible,
            }
        })
        .collect();

    ValidationReport { users }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_length_is_enforced() {
        let err = MinuteTrace::step("u0", 0, vec![0; 1439]).unwrap_err();
        assert_eq!(err.to_string(), "trace length 1439 != 1440");
    }

    #[test]
    fn sleep_state_range_is_enforced() {
        let mut v = vec![0u8; MINUTES_PER_DAY];
        v[100] = 3;
        let err = MinuteTrace::sleep("u0", 0, v).unwrap_err();
        assert!(err.to_string().contains("sleep state 3"));
    }

    #[test]
    fn step_cap_is_enforced() {
        let mut v = vec![0u16; MINUTES_PER_DAY];
        v[10] = 301;
        assert!(MinuteTrace::step("u0", 0, v).is_err());
    }

    #[test]
    fn profile_labels_round_trip_as_ints() {
        let p = UserProfile {
            user_id: "u0".into(),
            age: 40,
            gender: Gender::Female,
            ethnicity: 2,
            education: 3,
            parental_status: true,
            weight: 70.0,
            max_weight: 75.0,
            height: 170.0,
            bmi: 24.2,
            labels: [true, false, false, false, true, false, false, false, false],
        };
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"labels\":[1,0,0,0,1,0,0,0,0]"));
        let back: UserProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    fn full_user(user_id: &str, step_days: usize, sleep_on_first: bool) -> Cohort {
        let mut cohort = Cohort::default();
        cohort.profiles.push(UserProfile {
            user_id: user_id.into(),
            age: 35,
            gender: Gender::Male,
            ethnicity: 0,
            education: 0,
            parental_status: false,
            weight: 80.0,
            max_weight: 82.0,
            height: 180.0,
            bmi: 24.7,
            labels: [false; N_CONDITIONS],
        });
        for d in 0..step_days {
            let mut steps = vec![0u16; MINUTES_PER_DAY];
            steps[600] = 50;
            cohort
                .minute_traces
                .push(MinuteTrace::step(user_id, d as u32, steps).unwrap());
            if d == 0 && sleep_on_first {
                cohort
                    .minute_traces
                    .push(MinuteTrace::sleep(user_id, 0, vec![1; MINUTES_PER_DAY]).unwrap());
            }
            cohort.day_records.push(DayRecord {
                user_id: user_id.into(),
                date: d as u32,
                steps_total: Some(50),
                sleep_minutes: if d == 0 && sleep_on_first { Some(1440) } else { None },
                weight: None,
                wore_step: true,
                wore_sleep: d == 0 && sleep_on_first,
                wore_weight: false,
            });
        }
        cohort
    }

    #[test]
    fn nine_step_days_is_ineligible() {
        let report = validate_cohort(&full_user("u0", 9, true));
        assert!(!report.users[0].eligible);
        assert_eq!(report.users[0].step_days, 9);
    }

    #[test]
    fn ten_step_days_with_joint_sleep_is_eligible() {
        let report = validate_cohort(&full_user("u0", 10, true));
        assert!(report.users[0].eligible);
        assert!(report.users[0].violations.is_empty());
    }

    #[test]
    fn no_joint_sleep_day_is_ineligible() {
        let report = validate_cohort(&full_user("u0", 12, false));
        assert!(!report.users[0].eligible);
        assert_eq!(report.users[0].joint_days, 0);
    }

    #[test]
    fn steps_total_mismatch_is_reported() {
        let mut cohort = full_user("u0", 10, true);
        cohort.day_records[3].steps_total = Some(999);
        let report = validate_cohort(&cohort);
        assert!(report.users[0]
            .violations
            .iter()
            .any(|v| v.contains("steps_total 999 != trace sum 50")));
    }
}
