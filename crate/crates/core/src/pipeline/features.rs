//! Per-day summary statistics from minute-level traces, and the static
//! (demographic + basic health) encoding.
//!
//! The statistic lists are fixed and ordered; downstream feature matrices and
//! caches rely on the order never changing.

use crate::cohort::{Gender, UserProfile, EDUCATION_LEVELS, ETHNICITY_LEVELS, MINUTES_PER_DAY};
use crate::error::{Error, Result};

pub const STEP_FEATURE_COUNT: usize = 31;
pub const SLEEP_FEATURE_COUNT: usize = 18;
pub const STATIC_FEATURE_COUNT: usize = 19;

pub const STEP_FEATURE_NAMES: [&str; STEP_FEATURE_COUNT] = [
    "step_total",
    "step_active_minutes",
    "step_minutes_ge30",
    "step_minutes_ge60",
    "step_minutes_ge100",
    "step_max_1min",
    "step_max_6min",
    "step_max_30min",
    "step_first_minute",
    "step_last_minute",
    "step_longest_mean30_streak",
    "step_longest_zero_run",
    "step_bout_count",
    "step_bout_mean_len",
    "step_bout_max_len",
    "step_bout_minutes",
    "step_transitions",
    "step_nonzero_mean",
    "step_nonzero_std",
    "step_nonzero_median",
    "step_nonzero_p25",
    "step_nonzero_p75",
    "step_sum_00_05",
    "step_sum_05_12",
    "step_sum_12_18",
    "step_sum_18_24",
    "step_half_total_minute",
    "step_hourly_entropy",
    "step_top10pct_fraction",
    "step_mvpa_bout_count",
    "step_sedentary_fraction",
];

pub const SLEEP_FEATURE_NAMES: [&str; SLEEP_FEATURE_COUNT] = [
    "sleep_asleep_minutes",
    "sleep_in_bed_minutes",
    "sleep_efficiency",
    "sleep_bedtime_minute",
    "sleep_wake_minute",
    "sleep_onset_latency",
    "sleep_awakening_count",
    "sleep_restless_period_count",
    "sleep_restless_minutes",
    "sleep_longest_asleep_run",
    "sleep_bout_count",
    "sleep_waso_minutes",
    "sleep_midpoint_minute",
    "sleep_restless_fraction",
    "sleep_main_bout_duration",
    "sleep_nap_count",
    "sleep_nap_minutes",
    "sleep_fragmentation_index",
];

pub const STATIC_FEATURE_NAMES: [&str; STATIC_FEATURE_COUNT] = [
    "age",
    "gender_female",
    "gender_male",
    "ethnicity_0",
    "ethnicity_1",
    "ethnicity_2",
    "ethnicity_3",
    "ethnicity_4",
    "ethnicity_5",
    "education_0",
    "education_1",
    "education_2",
    "education_3",
    "education_4",
    "parental_status",
    "weight",
    "max_weight",
    "height",
    "bmi",
];

/// The fixed, ordered 31-statistic step-day vector. Time-of-day statistics
/// (first/last step, half-total minute) are missing on an all-zero day and
/// imputed across days downstream.
pub fn extract_step_features(steps: &[u16]) -> [Option<f64>; STEP_FEATURE_COUNT] {
    debug_assert_eq!(steps.len(), MINUTES_PER_DAY);
    let n = steps.len();
    let mut out = [None; STEP_FEATURE_COUNT];

    let total: u32 = steps.iter().map(|&s| u32::from(s)).sum();
    let active = steps.iter().filter(|&&s| s > 0).count();
    out[0] = Some(f64::from(total));
    out[1] = Some(active as f64);
    out[2] = Some(steps.iter().filter(|&&s| s >= 30).count() as f64);
    out[3] = Some(steps.iter().filter(|&&s| s >= 60).count() as f64);
    out[4] = Some(steps.iter().filter(|&&s| s >= 100).count() as f64);
    out[5] = Some(f64::from(steps.iter().copied().max().unwrap_or(0)));

    let prefix: Vec<u32> = std::iter::once(0)
        .chain(steps.iter().scan(0u32, |acc, &s| {
            *acc += u32::from(s);
            Some(*acc)
        }))
        .collect();
    let max_window = |w: usize| -> f64 {
        (0..=n - w)
            .map(|i| prefix[i + w] - prefix[i])
            .max()
            .unwrap_or(0) as f64
    };
    out[6] = Some(max_window(6));
    out[7] = Some(max_window(30));

    let first = steps.iter().position(|&s| s > 0);
    let last = steps.iter().rposition(|&s| s > 0);
    out[8] = first.map(|m| m as f64);
    out[9] = last.map(|m| m as f64);

    out[10] = Some(longest_window_mean_above(&prefix, 30) as f64);

    // Longest zero run strictly inside the active span.
    out[11] = Some(match (first, last) {
        (Some(f), Some(l)) if l > f => {
            let mut best = 0usize;
            let mut run = 0usize;
            for &s in &steps[f..=l] {
                if s == 0 {
                    run += 1;
                    best = best.max(run);
                } else {
                    run = 0;
                }
            }
            best as f64
        }
        _ => 0.0,
    });

    // Active bouts: >= 5 consecutive minutes with steps > 0.
    let mut bouts: Vec<usize> = Vec::new();
    let mut run = 0usize;
    for &s in steps {
        if s > 0 {
            run += 1;
        } else {
            if run >= 5 {
                bouts.push(run);
            }
            run = 0;
        }
    }
    if run >= 5 {
        bouts.push(run);
    }
    let bout_minutes: usize = bouts.iter().sum();
    out[12] = Some(bouts.len() as f64);
    out[13] = Some(if bouts.is_empty() {
        0.0
    } else {
        bout_minutes as f64 / bouts.len() as f64
    });
    out[14] = Some(bouts.iter().max().copied().unwrap_or(0) as f64);
    out[15] = Some(bout_minutes as f64);

    let transitions = steps
        .windows(2)
        .filter(|w| (w[0] > 0) != (w[1] > 0))
        .count();
    out[16] = Some(transitions as f64);

    let mut nonzero: Vec<f64> = steps
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| f64::from(s))
        .collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if nonzero.is_empty() {
        out[17] = Some(0.0);
        out[18] = Some(0.0);
        out[19] = Some(0.0);
        out[20] = Some(0.0);
        out[21] = Some(0.0);
    } else {
        let k = nonzero.len() as f64;
        let mean = nonzero.iter().sum::<f64>() / k;
        let var = nonzero.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        out[17] = Some(mean);
        out[18] = Some(var.sqrt());
        out[19] = Some(percentile(&nonzero, 0.5));
        out[20] = Some(percentile(&nonzero, 0.25));
        out[21] = Some(percentile(&nonzero, 0.75));
    }

    let band = |a: usize, b: usize| f64::from(prefix[b] - prefix[a]);
    out[22] = Some(band(0, 300));
    out[23] = Some(band(300, 720));
    out[24] = Some(band(720, 1080));
    out[25] = Some(band(1080, 1440));

    out[26] = if total == 0 {
        None
    } else {
        (0..n).find(|&m| 2 * prefix[m + 1] >= total).map(|m| m as f64)
    };

    let mut entropy = 0.0;
    if total > 0 {
        for h in 0..24 {
            let p = band(h * 60, (h + 1) * 60) / f64::from(total);
            if p > 0.0 {
                entropy -= p * p.ln();
            }
        }
    }
    out[27] = Some(entropy);

    out[28] = Some(if total == 0 {
        0.0
    } else {
        let mut sorted: Vec<u16> = steps.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let top: u32 = sorted[..n / 10].iter().map(|&s| u32::from(s)).sum();
        f64::from(top) / f64::from(total)
    });

    let mut mvpa = 0usize;
    let mut run = 0usize;
    for &s in steps {
        if s >= 100 {
            run += 1;
        } else {
            if run >= 10 {
                mvpa += 1;
            }
            run = 0;
        }
    }
    if run >= 10 {
        mvpa += 1;
    }
    out[29] = Some(mvpa as f64);

    out[30] = Some((n - active) as f64 / n as f64);
    out
}

/// Longest window length whose within-window mean strictly exceeds
/// `threshold` steps/minute; equivalent to the longest pair j > i with
/// prefix[j] - prefix[i] > threshold * (j - i). Computed in O(n) with a
/// monotonic stack over the threshold-adjusted prefix sums.
fn longest_window_mean_above(prefix: &[u32], threshold: i64) -> usize {
    let q: Vec<i64> = prefix
        .iter()
        .enumerate()
        .map(|(k, &p)| i64::from(p) - threshold * k as i64)
        .collect();
    let mut stack: Vec<usize> = Vec::new();
    for (k, &v) in q.iter().enumerate() {
        if stack.last().map_or(true, |&top| q[top] > v) {
            stack.push(k);
        }
    }
    let mut best = 0usize;
    for j in (0..q.len()).rev() {
        while let Some(&i) = stack.last() {
            if i >= j {
                stack.pop();
            } else if q[j] > q[i] {
                best = best.max(j - i);
                stack.pop();
            } else {
                break;
            }
        }
        if stack.is_empty() {
            break;
        }
    }
    best
}

/// Percentile with linear interpolation between order statistics; input must
/// be sorted ascending and non-empty.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// The fixed, ordered 18-statistic sleep-night vector. Minute 0 is 18:00 of
/// the previous calendar day. A night with no in-bed minutes yields the three
/// count statistics as zero and everything else missing.
pub fn extract_sleep_features(states: &[u8]) -> [Option<f64>; SLEEP_FEATURE_COUNT] {
    debug_assert_eq!(states.len(), MINUTES_PER_DAY);
    let mut out = [None; SLEEP_FEATURE_COUNT];

    let in_bed = |s: u8| s == 1 || s == 2;
    let bedtime = states.iter().position(|&s| in_bed(s));
    let wake = states.iter().rposition(|&s| in_bed(s));

    // Restless periods and awakenings are counts; they are zero rather than
    // missing on an empty night, as is the nap count.
    let restless_runs = runs_of(states, |s| s == 2);
    out[7] = Some(restless_runs.len() as f64);

    let (Some(bed), Some(wake)) = (bedtime, wake) else {
        out[6] = Some(0.0);
        out[15] = Some(0.0);
        return out;
    };

    let asleep = states.iter().filter(|&&s| s == 1).count();
    let in_bed_total = states.iter().filter(|&&s| in_bed(s)).count();
    let restless_total = states.iter().filter(|&&s| s == 2).count();

    out[0] = Some(asleep as f64);
    out[1] = Some(in_bed_total as f64);
    out[2] = Some(asleep as f64 / in_bed_total as f64);
    out[3] = Some(bed as f64);
    out[4] = Some(wake as f64);

    let first_asleep = states.iter().position(|&s| s == 1);
    out[5] = first_asleep.map(|m| (m - bed) as f64);

    let awakenings = runs_of(&states[bed..=wake], |s| s == 0).len();
    out[6] = Some(awakenings as f64);
    out[8] = Some(restless_total as f64);
    out[9] = Some(
        runs_of(states, |s| s == 1)
            .iter()
            .map(|r| r.len())
            .max()
            .unwrap_or(0) as f64,
    );

    // Sleep bouts: in-bed runs merged when separated by < 60 minutes awake.
    let in_bed_runs = runs_of(states, in_bed);
    let mut bouts: Vec<std::ops::Range<usize>> = Vec::new();
    for r in in_bed_runs {
        match bouts.last_mut() {
            Some(prev) if r.start - prev.end < 60 => prev.end = r.end,
            _ => bouts.push(r),
        }
    }
    out[10] = Some(bouts.len() as f64);

    let main = bouts
        .iter()
        .max_by_key(|b| b.len())
        .cloned()
        .expect("in-bed minutes exist");
    let waso = states[main.clone()].iter().filter(|&&s| s == 0).count();
    out[11] = Some(waso as f64);

    out[12] = if asleep == 0 {
        None
    } else {
        let mut cum = 0usize;
        states.iter().enumerate().find_map(|(m, &s)| {
            if s == 1 {
                cum += 1;
            }
            (2 * cum >= asleep).then_some(m as f64)
        })
    };

    out[13] = Some(restless_total as f64 / in_bed_total as f64);
    out[14] = Some(main.len() as f64);
    let naps: Vec<_> = bouts.iter().filter(|b| **b != main).collect();
    out[15] = Some(naps.len() as f64);
    out[16] = Some(naps.iter().map(|b| b.len()).sum::<usize>() as f64);
    out[17] = Some((awakenings + restless_runs.len()) as f64 / (in_bed_total as f64 / 60.0));
    out
}

/// Maximal runs (as index ranges) where the predicate holds.
fn runs_of(states: &[u8], pred: impl Fn(u8) -> bool) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &s) in states.iter().enumerate() {
        match (start, pred(s)) {
            (None, true) => start = Some(i),
            (Some(s0), false) => {
                runs.push(s0..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = start {
        runs.push(s0..states.len());
    }
    runs
}

/// Encodes the static profile: demographic block (15 dims: age, gender
/// one-hot, ethnicity one-hot, education one-hot, parental status), then the
/// basic-health block (weight, max weight, height, BMI).
pub fn encode_static(p: &UserProfile) -> Result<Vec<f64>> {
    if p.ethnicity as usize >= ETHNICITY_LEVELS {
        return Err(Error::UnknownCategory {
            field: "ethnicity".into(),
            value: p.ethnicity.to_string(),
        });
    }
    if p.education as usize >= EDUCATION_LEVELS {
        return Err(Error::UnknownCategory {
            field: "education".into(),
            value: p.education.to_string(),
        });
    }
    let mut v = Vec::with_capacity(STATIC_FEATURE_COUNT);
    v.push(f64::from(p.age));
    v.push(f64::from(p.gender == Gender::Female));
    v.push(f64::from(p.gender == Gender::Male));
    for level in 0..ETHNICITY_LEVELS {
        v.push(f64::from(level == p.ethnicity as usize));
    }
    for level in 0..EDUCATION_LEVELS {
        v.push(f64::from(level == p.education as usize));
    }
    v.push(f64::from(p.parental_status));
    v.push(p.weight);
    v.push(p.max_weight);
    v.push(p.height);
    v.push(p.bmi);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zeros() -> Vec<u16> {
        vec![0; MINUTES_PER_DAY]
    }

    #[test]
    fn all_zero_day() {
        let f = extract_step_features(&zeros());
        assert_eq!(f[0], Some(0.0)); // total
        assert_eq!(f[1], Some(0.0)); // active minutes
        assert_eq!(f[8], None); // first step
        assert_eq!(f[9], None); // last step
        assert_eq!(f[26], None); // half-total minute
        assert_eq!(f[27], Some(0.0)); // entropy
        assert_eq!(f[30], Some(1.0)); // sedentary fraction
    }

    #[test]
    fn six_minute_burst() {
        let mut steps = zeros();
        for m in 510..=515 {
            steps[m] = 100;
        }
        let f = extract_step_features(&steps);
        assert_eq!(f[8], Some(510.0)); // first step
        assert_eq!(f[9], Some(515.0)); // last step
        assert_eq!(f[0], Some(600.0)); // total
        assert_eq!(f[6], Some(600.0)); // max 6-min window
        assert_eq!(f[5], Some(100.0)); // max 1-min
        assert_eq!(f[12], Some(1.0)); // one active bout
        assert_eq!(f[13], Some(6.0)); // mean bout length
        assert_eq!(f[14], Some(6.0)); // max bout length
    }

    #[test]
    fn all_ones_day() {
        let f = extract_step_features(&vec![1u16; MINUTES_PER_DAY]);
        assert_eq!(f[10], Some(0.0)); // no window has mean > 30
        assert_eq!(f[2], Some(0.0)); // minutes >= 30
        assert_eq!(f[1], Some(1440.0)); // active minutes
    }

    #[test]
    fn streak_oracle_matches_fast_path() {
        // O(n^2) reference: longest window with sum > 30 * len.
        fn slow(steps: &[u16]) -> usize {
            let mut prefix = vec![0u32; steps.len() + 1];
            for (i, &s) in steps.iter().enumerate() {
                prefix[i + 1] = prefix[i] + u32::from(s);
            }
            let mut best = 0;
            for i in 0..steps.len() {
                for j in i + 1..=steps.len() {
                    if i64::from(prefix[j] - prefix[i]) > 30 * (j - i) as i64 {
                        best = best.max(j - i);
                    }
                }
            }
            best
        }
        let mut r = crate::rng::rng(17);
        use rand::Rng;
        for _ in 0..50 {
            let len = r.gen_range(1..200usize);
            let steps: Vec<u16> = (0..len).map(|_| r.gen_range(0..120u16)).collect();
            let mut prefix = vec![0u32; len + 1];
            for (i, &s) in steps.iter().enumerate() {
                prefix[i + 1] = prefix[i] + u32::from(s);
            }
            assert_eq!(
                longest_window_mean_above(&prefix, 30),
                slow(&steps),
                "steps = {steps:?}"
            );
        }
    }

    #[test]
    fn entropy_stays_within_bounds() {
        let mut r = crate::rng::rng(3);
        use rand::Rng;
        for _ in 0..20 {
            let steps: Vec<u16> = (0..MINUTES_PER_DAY).map(|_| r.gen_range(0..50u16)).collect();
            let f = extract_step_features(&steps);
            let h = f[27].unwrap();
            assert!((0.0..=(24.0f64).ln() + 1e-12).contains(&h), "entropy {h}");
        }
    }

    fn night_zeros() -> Vec<u8> {
        vec![0; MINUTES_PER_DAY]
    }

    #[test]
    fn empty_night() {
        let f = extract_sleep_features(&night_zeros());
        assert_eq!(f[6], Some(0.0)); // awakenings
        assert_eq!(f[7], Some(0.0)); // restless periods
        assert_eq!(f[15], Some(0.0)); // nap count
        for (i, v) in f.iter().enumerate() {
            if ![6, 7, 15].contains(&i) {
                assert_eq!(*v, None, "feature {i} should be missing");
            }
        }
    }

    #[test]
    fn single_uninterrupted_block() {
        let mut states = night_zeros();
        for m in 300..=699 {
            states[m] = 1;
        }
        let f = extract_sleep_features(&states);
        assert_eq!(f[1], Some(400.0)); // in-bed
        assert_eq!(f[2], Some(1.0)); // efficiency
        assert_eq!(f[3], Some(300.0)); // bedtime
        assert_eq!(f[5], Some(0.0)); // onset latency
        assert_eq!(f[6], Some(0.0)); // awakenings
        assert_eq!(f[11], Some(0.0)); // WASO
        assert_eq!(f[12], Some(499.0)); // midpoint: cumulative half rule
    }

    #[test]
    fn restless_interval_inside_block() {
        let mut states = night_zeros();
        for m in 300..=499 {
            states[m] = 1;
        }
        for m in 500..=509 {
            states[m] = 2;
        }
        for m in 510..=699 {
            states[m] = 1;
        }
        let f = extract_sleep_features(&states);
        assert_eq!(f[7], Some(1.0)); // restless periods
        assert_eq!(f[8], Some(10.0)); // restless minutes
        assert_eq!(f[2], Some(390.0 / 400.0)); // efficiency
        assert_eq!(f[0], Some(390.0));
    }

    #[test]
    fn nap_detected_as_secondary_bout() {
        let mut states = night_zeros();
        for m in 300..700 {
            states[m] = 1;
        }
        for m in 1200..1240 {
            states[m] = 1;
        }
        let f = extract_sleep_features(&states);
        assert_eq!(f[10], Some(2.0)); // two bouts
        assert_eq!(f[15], Some(1.0)); // one nap
        assert_eq!(f[16], Some(40.0)); // nap minutes
        assert_eq!(f[14], Some(400.0)); // main bout duration
    }

    fn profile(gender: Gender) -> UserProfile {
        UserProfile {
            user_id: "u0".into(),
            age: 38,
            gender,
            ethnicity: 2,
            education: 4,
            parental_status: true,
            weight: 70.0,
            max_weight: 75.0,
            height: 170.0,
            bmi: 24.2,
            labels: [false; 9],
        }
    }

    #[test]
    fn static_encoding_shape_and_one_hots() {
        let v = encode_static(&profile(Gender::Female)).unwrap();
        assert_eq!(v.len(), STATIC_FEATURE_COUNT);
        assert_eq!(v[1..3].iter().sum::<f64>(), 1.0);
        assert_eq!(v[3..9].iter().sum::<f64>(), 1.0);
        assert_eq!(v[9..14].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn gender_flip_changes_exactly_two_dims() {
        let a = encode_static(&profile(Gender::Female)).unwrap();
        let b = encode_static(&profile(Gender::Male)).unwrap();
        let differing: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(differing, vec![1, 2]);
    }

    #[test]
    fn unknown_level_is_an_error() {
        let mut p = profile(Gender::Male);
        p.ethnicity = 6;
        assert!(matches!(
            encode_static(&p),
            Err(Error::UnknownCategory { .. })
        ));
    }

    proptest! {
        #[test]
        fn step_vector_always_has_31_entries_and_finite_values(
            seed in 0u64..1000
        ) {
            let mut r = crate::rng::rng(seed);
            use rand::Rng;
            let steps: Vec<u16> = (0..MINUTES_PER_DAY)
                .map(|_| if r.gen::<f64>() < 0.2 { r.gen_range(0..300u16) } else { 0 })
                .collect();
            let f = extract_step_features(&steps);
            prop_assert_eq!(f.len(), STEP_FEATURE_COUNT);
            for v in f.iter().flatten() {
                prop_assert!(v.is_finite());
            }
        }
    }
}
