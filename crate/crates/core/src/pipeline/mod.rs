//! Converts raw cohort data into per-user feature matrices: censoring and
//! interpolation, minute-level summary statistics, demographic encoding,
//! incremental data layering, and normalization.

mod cache;
mod features;
mod impute;

pub use cache::{read_feature_cache, read_feature_meta, write_feature_cache, write_feature_meta, FeatureMeta};
pub use features::{
    encode_static, extract_sleep_features, extract_step_features, SLEEP_FEATURE_COUNT,
    SLEEP_FEATURE_NAMES, STATIC_FEATURE_COUNT, STATIC_FEATURE_NAMES, STEP_FEATURE_COUNT,
    STEP_FEATURE_NAMES,
};
pub use impute::censor_and_interpolate;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, TraceValues};
use crate::error::{Error, Result};

pub const DAY_FEATURE_NAMES: [&str; 6] = [
    "day_steps_total",
    "day_sleep_minutes",
    "day_weight",
    "wore_step",
    "wore_sleep",
    "wore_weight",
];

/// Nested data layers at increasing time granularity. Each level's columns
/// are a strict prefix of the next level's columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerLevel {
    Demographic,
    BasicHealth,
    DayLevel,
    MinuteStep,
    MinuteSleep,
}

impl LayerLevel {
    pub const ALL: [LayerLevel; 5] = [
        LayerLevel::Demographic,
        LayerLevel::BasicHealth,
        LayerLevel::DayLevel,
        LayerLevel::MinuteStep,
        LayerLevel::MinuteSleep,
    ];

    pub fn dims(self) -> usize {
        match self {
            LayerLevel::Demographic => 15,
            LayerLevel::BasicHealth => 19,
            LayerLevel::DayLevel => 25,
            LayerLevel::MinuteStep => 56,
            LayerLevel::MinuteSleep => 74,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerLevel::Demographic => "demographic",
            LayerLevel::BasicHealth => "basic_health",
            LayerLevel::DayLevel => "day_level",
            LayerLevel::MinuteStep => "minute_step",
            LayerLevel::MinuteSleep => "minute_sleep",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown layer `{s}`; expected one of: {}",
                    Self::ALL.map(|l| l.name()).join(", ")
                ))
            })
    }

    /// Ordered column names for this level.
    pub fn feature_names(self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = STATIC_FEATURE_NAMES[..15].to_vec();
        if self >= LayerLevel::BasicHealth {
            names.extend(&STATIC_FEATURE_NAMES[15..]);
        }
        if self >= LayerLevel::DayLevel {
            names.extend(DAY_FEATURE_NAMES);
        }
        if self >= LayerLevel::MinuteStep {
            names.extend(STEP_FEATURE_NAMES);
        }
        if self >= LayerLevel::MinuteSleep {
            names.extend(SLEEP_FEATURE_NAMES);
        }
        debug_assert_eq!(names.len(), self.dims());
        names
    }

    /// True for one-hot and boolean columns, which normalization leaves as 0/1.
    pub fn binary_columns(self) -> Vec<bool> {
        self.feature_names()
            .iter()
            .map(|n| {
                n.starts_with("gender_")
                    || n.starts_with("ethnicity_")
                    || n.starts_with("education_")
                    || *n == "parental_status"
                    || n.starts_with("wore_")
            })
            .collect()
    }
}

/// The per-user T x D matrix of per-day features plus observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub user_id: String,
    pub layer: LayerLevel,
    pub t_days: usize,
    pub dims: usize,
    /// Row-major T x D values; no entry is missing after assembly.
    pub values: Vec<f64>,
    /// True where the entry was observed before imputation.
    pub mask: Vec<bool>,
}

impl FeatureFrame {
    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dims + d]
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        self.layer.feature_names()
    }

    /// Channel-major copy (D x T) for the per-channel CNN extractors.
    pub fn channel_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for t in 0..self.t_days {
            for d in 0..self.dims {
                out[d * self.t_days + t] = self.values[t * self.dims + d];
            }
        }
        out
    }
}

/// Builds the feature matrix for every user in the cohort at the requested
/// layer level. Static features are replicated across rows; every per-day
/// value column goes through [`censor_and_interpolate`] independently; wear
/// indicators are never imputed. Users whose required columns cannot be
/// imputed (no observed value at all) are dropped with a logged warning.
pub fn assemble_frames(cohort: &Cohort, level: LayerLevel) -> Result<Vec<FeatureFrame>> {
    let t_days = cohort.t_days();
    if t_days == 0 || cohort.profiles.is_empty() {
        return Ok(Vec::new());
    }

    let mut day_index: HashMap<(&str, u32), &crate::cohort::DayRecord> = HashMap::new();
    for d in &cohort.day_records {
        day_index.insert((d.user_id.as_str(), d.date), d);
    }
    let mut step_index: HashMap<(&str, u32), &[u16]> = HashMap::new();
    let mut sleep_index: HashMap<(&str, u32), &[u8]> = HashMap::new();
    for tr in &cohort.minute_traces {
        match &tr.values {
            TraceValues::Step(v) => {
                step_index.insert((tr.user_id.as_str(), tr.date), v);
            }
            TraceValues::Sleep(v) => {
                sleep_index.insert((tr.user_id.as_str(), tr.date), v);
            }
        }
    }

    let frames: Vec<Option<FeatureFrame>> = cohort
        .profiles
        .par_iter()
        .map(|profile| {
            match assemble_user(profile, t_days, level, &day_index, &step_index, &sleep_index) {
                Ok(frame) => Some(frame),
                Err(e) => {
                    log::warn!(
                        "user {} dropped at layer {}: {e}",
                        profile.user_id,
                        level.name()
                    );
                    None
                }
            }
        })
        .collect();

    Ok(frames.into_iter().flatten().collect())
}

fn assemble_user(
    profile: &crate::cohort::UserProfile,
    t_days: usize,
    level: LayerLevel,
    day_index: &HashMap<(&str, u32), &crate::cohort::DayRecord>,
    step_index: &HashMap<(&str, u32), &[u16]>,
    sleep_index: &HashMap<(&str, u32), &[u8]>,
) -> Result<FeatureFrame> {
    let dims = level.dims();
    let mut values = vec![0.0; t_days * dims];
    let mut mask = vec![false; t_days * dims];
    let uid = profile.user_id.as_str();

    let statics = encode_static(profile)?;
    let n_static = if level >= LayerLevel::BasicHealth { 19 } else { 15 };
    for t in 0..t_days {
        for (d, &v) in statics[..n_static].iter().enumerate() {
            values[t * dims + d] = v;
            mask[t * dims + d] = true;
        }
    }
    let mut col = n_static;

    let put_imputed = |values: &mut [f64],
                           mask: &mut [bool],
                           col: usize,
                           series: &[Option<f64>]|
     -> Result<()> {
        let filled = censor_and_interpolate(series)?;
        for t in 0..t_days {
            values[t * dims + col] = filled[t];
            mask[t * dims + col] = series[t].is_some();
        }
        Ok(())
    };

    if level >= LayerLevel::DayLevel {
        let records: Vec<Option<&crate::cohort::DayRecord>> = (0..t_days)
            .map(|t| day_index.get(&(uid, t as u32)).copied())
            .collect();

        let steps: Vec<Option<f64>> = records
            .iter()
            .map(|r| r.and_then(|d| d.steps_total).map(f64::from))
            .collect();
        put_imputed(&mut values, &mut mask, col, &steps)?;
        let sleep: Vec<Option<f64>> = records
            .iter()
            .map(|r| r.and_then(|d| d.sleep_minutes).map(f64::from))
            .collect();
        put_imputed(&mut values, &mut mask, col + 1, &sleep)?;
        let weight: Vec<Option<f64>> = records
            .iter()
            .map(|r| r.and_then(|d| d.weight))
            .collect();
        put_imputed(&mut values, &mut mask, col + 2, &weight)?;

        // Wear indicators are the ground-truth observation record: stored
        // as-is, masked true wherever the day record exists.
        for (offset, pick) in [
            (3, (|d: &crate::cohort::DayRecord| d.wore_step) as fn(&crate::cohort::DayRecord) -> bool),
            (4, |d: &crate::cohort::DayRecord| d.wore_sleep),
            (5, |d: &crate::cohort::DayRecord| d.wore_weight),
        ] {
            for (t, r) in records.iter().enumerate() {
                values[t * dims + col + offset] = r.map_or(0.0, |d| f64::from(pick(d)));
                mask[t * dims + col + offset] = r.is_some();
            }
        }
        col += 6;
    }

    if level >= LayerLevel::MinuteStep {
        let per_day: Vec<[Option<f64>; STEP_FEATURE_COUNT]> = (0..t_days)
            .map(|t| {
                step_index
                    .get(&(uid, t as u32))
                    .map(|steps| extract_step_features(steps))
                    .unwrap_or([None; STEP_FEATURE_COUNT])
            })
            .collect();
        for f in 0..STEP_FEATURE_COUNT {
            let series: Vec<Option<f64>> = per_day.iter().map(|day| day[f]).collect();
            put_imputed(&mut values, &mut mask, col + f, &series)?;
        }
        col += STEP_FEATURE_COUNT;
    }

    if level >= LayerLevel::MinuteSleep {
        let per_day: Vec<[Option<f64>; SLEEP_FEATURE_COUNT]> = (0..t_days)
            .map(|t| {
                sleep_index
                    .get(&(uid, t as u32))
                    .map(|states| extract_sleep_features(states))
                    .unwrap_or([None; SLEEP_FEATURE_COUNT])
            })
            .collect();
        for f in 0..SLEEP_FEATURE_COUNT {
            let series: Vec<Option<f64>> = per_day.iter().map(|day| day[f]).collect();
            put_imputed(&mut values, &mut mask, col + f, &series)?;
        }
        col += SLEEP_FEATURE_COUNT;
    }

    debug_assert_eq!(col, dims);
    Ok(FeatureFrame {
        user_id: profile.user_id.clone(),
        layer: level,
        t_days,
        dims,
        values,
        mask,
    })
}

/// Per-feature mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// One-hot / boolean columns left untouched by normalization.
    pub exempt: Vec<bool>,
}

/// Fits z-score statistics per feature across all users and days of the
/// training frames. One-hot and boolean columns are exempted; the standard
/// deviation is floored at 1e-8.
pub fn fit_norm(frames: &[FeatureFrame]) -> Result<NormStats> {
    let first = frames.first().ok_or(Error::EmptyTrainingSet)?;
    let dims = first.dims;
    let exempt = first.layer.binary_columns();
    let mut sum = vec![0.0; dims];
    let mut sum_sq = vec![0.0; dims];
    let mut n = 0usize;
    for f in frames {
        for t in 0..f.t_days {
            for d in 0..dims {
                let v = f.values[t * dims + d];
                sum[d] += v;
                sum_sq[d] += v * v;
            }
            n += 1;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let std: Vec<f64> = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / n as f64 - m * m).max(0.0).sqrt().max(1e-8))
        .collect();
    Ok(NormStats { mean, std, exempt })
}

/// Applies training-split statistics to frames in place; deterministic.
pub fn apply_norm(frames: &mut [FeatureFrame], stats: &NormStats) {
    for f in frames {
        assert_eq!(f.dims, stats.mean.len(), "norm stats dims mismatch");
        for t in 0..f.t_days {
            for d in 0..f.dims {
                if !stats.exempt[d] {
                    let v = &mut f.values[t * f.dims + d];
                    *v = (*v - stats.mean[d]) / stats.std[d];
                }
            }
        }
    }
}
