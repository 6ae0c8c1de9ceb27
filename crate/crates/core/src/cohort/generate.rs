//! Synthetic cohort generation with planted, recoverable condition effects.
//!
//! Every user's data derives from independent sub-streams of the seeded
//! generator, split by user index: profile, labels, wear pattern, and traces
//! never share a stream, so changing the trace seed cannot move a label.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;

use super::{
    Cohort, CohortConfig, ConditionEffects, DayRecord, EffectManifest, Gender, MinuteTrace,
    UserProfile, CONDITIONS, MC, MINUTES_PER_DAY, N_CONDITIONS,
};
use crate::error::{Error, Result};
use crate::rng::{rng, sub_seed};

const KNOWN_EFFECTS: [&str; 8] = [
    "transition_multiplier",
    "daytime_step_scale",
    "first_step_delay_minutes",
    "extra_restless_poisson",
    "bedtime_shift_minutes",
    "episode_fraction",
    "logistic_age",
    "logistic_bmi",
];

/// Generates a cohort; deterministic given the config (including seed).
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    generate_cohort_with_trace_seed(config, sub_seed(config.seed, "traces", 0))
}

/// Like [`generate_cohort`] but with an explicit seed for the minute-trace
/// streams. Profiles and labels depend only on `config.seed`, so two calls
/// with different trace seeds yield identical labels — the planted-null
/// property for conditions whose labels derive from static fields alone.
pub fn generate_cohort_with_trace_seed(config: &CohortConfig, trace_seed: u64) -> Result<Cohort> {
    config.validate()?;
    validate_effects(&config.effects)?;
    if config.n_users == 0 {
        return Ok(Cohort::default());
    }

    // Pass 1: static profiles plus one label uniform per condition.
    let mut drafts: Vec<(UserProfile, [f64; N_CONDITIONS])> = (0..config.n_users)
        .into_par_iter()
        .map(|u| draw_profile(config.seed, u))
        .collect();

    // Pass 2: labels. MH/NS-like conditions are plain Bernoulli draws; M/C-like
    // conditions come from a logistic model over age and BMI whose intercept is
    // calibrated so the cohort-mean probability hits the target prevalence.
    for c in 0..N_CONDITIONS {
        let target = config.prevalence[c];
        if MC.contains(&c) {
            let (a_age, a_bmi) = logistic_coefficients(&config.effects, c);
            let zs: Vec<(f64, f64)> = drafts
                .iter()
                .map(|(p, _)| ((f64::from(p.age) - 38.0) / 12.0, (p.bmi - 26.0) / 4.0))
                .collect();
            let intercept = calibrate_intercept(&zs, a_age, a_bmi, target);
            for ((p, u), &(za, zb)) in drafts.iter_mut().zip(&zs) {
                p.labels[c] = u[c] < sigmoid(a_age * za + a_bmi * zb + intercept);
            }
        } else {
            for (p, u) in drafts.iter_mut() {
                p.labels[c] = u[c] < target;
            }
        }
    }

    // Pass 3: wear patterns, minute traces, day records.
    let per_user: Vec<(Vec<DayRecord>, Vec<MinuteTrace>)> = drafts
        .par_iter()
        .enumerate()
        .map(|(u, (profile, _))| generate_user_days(config, profile, u, trace_seed))
        .collect();

    let mut cohort = Cohort {
        profiles: drafts.into_iter().map(|(p, _)| p).collect(),
        manifest: config.effects.clone(),
        ..Cohort::default()
    };
    for (days, traces) in per_user {
        cohort.day_records.extend(days);
        cohort.minute_traces.extend(traces);
    }
    Ok(cohort)
}

/// Redraws every label as an independent Bernoulli of the given prevalence,
/// severing any planted dependence on the user's data. Used for null-signal
/// calibration runs.
pub fn redraw_labels_random(cohort: &mut Cohort, prevalence: &[f64; N_CONDITIONS], seed: u64) {
    for (i, p) in cohort.profiles.iter_mut().enumerate() {
        let mut r = rng(sub_seed(seed, "relabel", i as u64));
        for c in 0..N_CONDITIONS {
            p.labels[c] = r.gen::<f64>() < prevalence[c];
        }
    }
}

fn validate_effects(manifest: &EffectManifest) -> Result<()> {
    for ConditionEffects { condition, effects } in &manifest.conditions {
        if !CONDITIONS.contains(&condition.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "unknown condition in effect manifest: {condition}"
            )));
        }
        for e in effects {
            if !KNOWN_EFFECTS.contains(&e.effect.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown planted effect: {}",
                    e.effect
                )));
            }
        }
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logistic_coefficients(manifest: &EffectManifest, condition: usize) -> (f64, f64) {
    let effects = manifest.effects_for(CONDITIONS[condition]);
    let get = |name: &str| {
        effects
            .iter()
            .find(|e| e.effect == name)
            .map_or(0.0, |e| e.magnitude)
    };
    (get("logistic_age"), get("logistic_bmi"))
}

/// Bisects the intercept so that the mean predicted probability equals the
/// target prevalence over the realized cohort.
fn calibrate_intercept(zs: &[(f64, f64)], a_age: f64, a_bmi: f64, target: f64) -> f64 {
    let mean_p = |b: f64| {
        zs.iter()
            .map(|&(za, zb)| sigmoid(a_age * za + a_bmi * zb + b))
            .sum::<f64>()
            / zs.len() as f64
    };
    let (mut lo, mut hi) = (-30.0_f64, 30.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn truncated_normal(r: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("valid normal");
    for _ in 0..100 {
        let x = dist.sample(r);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    dist.sample(r).clamp(lo, hi)
}

fn poisson(r: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("valid lambda").sample(r) as u64
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn draw_profile(seed: u64, user_index: usize) -> (UserProfile, [f64; N_CONDITIONS]) {
    let mut pr = rng(sub_seed(seed, "profile", user_index as u64));
    let gender = if pr.gen::<f64>() < 0.75 {
        Gender::Female
    } else {
        Gender::Male
    };
    let age = truncated_normal(&mut pr, 38.0, 12.0, 18.0, 80.0).round() as u32;
    let ethnicity = weighted_level(&mut pr, &[0.55, 0.15, 0.12, 0.08, 0.06, 0.04]);
    let education = weighted_level(&mut pr, &[0.08, 0.22, 0.30, 0.28, 0.12]);
    let parental_status = pr.gen::<f64>() < 0.45;
    let height = round1(match gender {
        Gender::Female => truncated_normal(&mut pr, 164.5, 6.5, 145.0, 195.0),
        Gender::Male => truncated_normal(&mut pr, 177.5, 7.0, 150.0, 210.0),
    });
    let bmi_draw = truncated_normal(&mut pr, 26.5, 4.5, 16.0, 45.0);
    let weight = round1(bmi_draw * (height / 100.0).powi(2));
    let bmi = round1(weight / (height / 100.0).powi(2));
    let max_weight = round1(weight + truncated_normal(&mut pr, 3.0, 4.0, 0.0, 25.0));

    let mut lr = rng(sub_seed(seed, "labels", user_index as u64));
    let mut label_u = [0.0; N_CONDITIONS];
    for u in label_u.iter_mut() {
        *u = lr.gen::<f64>();
    }

    let profile = UserProfile {
        user_id: format!("u{user_index:06}"),
        age,
        gender,
        ethnicity,
        education,
        parental_status,
        weight,
        max_weight,
        height,
        bmi,
        labels: [false; N_CONDITIONS],
    };
    (profile, label_u)
}

fn weighted_level(r: &mut ChaCha8Rng, weights: &[f64]) -> u8 {
    let u: f64 = r.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i as u8;
        }
    }
    (weights.len() - 1) as u8
}

/// The minute-level consequences of the conditions active on one day,
/// combined across conditions: scales multiply, shifts and rates add.
#[derive(Clone, Copy)]
struct DayEffects {
    step_scale: f64,
    first_step_delay: f64,
    transition_mult: f64,
    bedtime_shift: f64,
    extra_restless: f64,
}

impl DayEffects {
    fn neutral() -> Self {
        Self {
            step_scale: 1.0,
            first_step_delay: 0.0,
            transition_mult: 1.0,
            bedtime_shift: 0.0,
            extra_restless: 0.0,
        }
    }

    fn apply(&mut self, effect: &super::PlantedEffect) {
        match effect.effect.as_str() {
            "daytime_step_scale" => self.step_scale *= effect.magnitude,
            "first_step_delay_minutes" => self.first_step_delay += effect.magnitude,
            "transition_multiplier" => self.transition_mult *= effect.magnitude,
            "bedtime_shift_minutes" => self.bedtime_shift += effect.magnitude,
            "extra_restless_poisson" => self.extra_restless += effect.magnitude,
            _ => {}
        }
    }
}

/// Per-day effect schedule for one user. Conditions carrying an
/// `episode_fraction` apply their effects only inside episode blocks; all
/// other active conditions apply every day.
struct EffectSchedule {
    per_day: Vec<DayEffects>,
}

impl EffectSchedule {
    fn build(
        manifest: &EffectManifest,
        labels: &[bool; N_CONDITIONS],
        t_days: usize,
        user_trace_seed: u64,
    ) -> Self {
        let mut per_day = vec![DayEffects::neutral(); t_days];
        for (c, &active) in labels.iter().enumerate() {
            if !active {
                continue;
            }
            let effects = manifest.effects_for(CONDITIONS[c]);
            let fraction = effects
                .iter()
                .find(|e| e.effect == "episode_fraction")
                .map(|e| e.magnitude);
            let mask = match fraction {
                Some(f) if f < 1.0 => {
                    let mut er = rng(sub_seed(user_trace_seed, "episodes", c as u64));
                    episode_mask(&mut er, t_days, f)
                }
                _ => vec![true; t_days],
            };
            for (day, &on) in mask.iter().enumerate() {
                if on {
                    for effect in effects {
                        per_day[day].apply(effect);
                    }
                }
            }
        }
        Self { per_day }
    }
}

/// Alternating active/inactive multi-day blocks whose expected active share
/// is `fraction`.
fn episode_mask(r: &mut ChaCha8Rng, t_days: usize, fraction: f64) -> Vec<bool> {
    let active_mean = 9.0_f64;
    let inactive_mean = (active_mean * (1.0 - fraction) / fraction.max(1e-6)).max(2.0);
    let mut mask = Vec::with_capacity(t_days);
    let mut state = r.gen::<f64>() < fraction;
    while mask.len() < t_days {
        let mean = if state { active_mean } else { inactive_mean };
        let len = (poisson(r, mean) as usize).max(3);
        for _ in 0..len {
            if mask.len() < t_days {
                mask.push(state);
            }
        }
        state = !state;
    }
    mask
}

struct WearDay {
    step: bool,
    sleep: bool,
    weight: bool,
}

fn wear_pattern(r: &mut ChaCha8Rng, t_days: usize) -> Vec<WearDay> {
    let mut worn: Vec<bool> = Vec::with_capacity(t_days);
    let mut sleep_gate = Vec::with_capacity(t_days);
    let mut weight_gate = Vec::with_capacity(t_days);
    for _ in 0..t_days {
        worn.push(r.gen::<f64>() < 0.9);
        sleep_gate.push(r.gen::<f64>() < 0.95);
        weight_gate.push(r.gen::<f64>() < 0.4);
    }
    let max_gaps = (t_days / 21).min(2);
    let n_gaps = r.gen_range(0..=max_gaps);
    for _ in 0..n_gaps {
        let len = r.gen_range(2..=5usize);
        let start = r.gen_range(0..=t_days - len);
        for w in worn.iter_mut().skip(start).take(len) {
            *w = false;
        }
    }

    // Fix-ups keep every generated user eligible: at least 10 step days and
    // one day with both step and sleep traces, and at least one weight day
    // so imputation always has an anchor.
    let need = 10.min(t_days);
    let mut count = worn.iter().filter(|&&w| w).count();
    for d in 0..t_days {
        if count >= need {
            break;
        }
        if !worn[d] {
            worn[d] = true;
            count += 1;
        }
    }
    if !worn.iter().zip(&sleep_gate).any(|(&w, &s)| w && s) {
        if let Some(d) = worn.iter().position(|&w| w) {
            sleep_gate[d] = true;
        }
    }
    if !worn.iter().zip(&weight_gate).any(|(&w, &g)| w && g) {
        if let Some(d) = worn.iter().position(|&w| w) {
            weight_gate[d] = true;
        }
    }

    (0..t_days)
        .map(|d| WearDay {
            step: worn[d],
            sleep: worn[d] && sleep_gate[d],
            weight: worn[d] && weight_gate[d],
        })
        .collect()
}

fn generate_user_days(
    config: &CohortConfig,
    profile: &UserProfile,
    user_index: usize,
    trace_seed: u64,
) -> (Vec<DayRecord>, Vec<MinuteTrace>) {
    let user_trace_seed = sub_seed(trace_seed, "user", user_index as u64);
    let schedule = EffectSchedule::build(
        &config.effects,
        &profile.labels,
        config.t_days,
        user_trace_seed,
    );

    let mut wr = rng(sub_seed(config.seed, "wear", user_index as u64));
    let wear = wear_pattern(&mut wr, config.t_days);

    let mut lat = rng(sub_seed(user_trace_seed, "latent", 0));
    let latents = UserLatents {
        activity: LogNormal::new(0.0, 0.25).unwrap().sample(&mut lat),
        fragmentation: LogNormal::new(0.0, 0.30).unwrap().sample(&mut lat),
        restless_rate: LogNormal::new(1.5_f64.ln(), 0.6).unwrap().sample(&mut lat),
        awakening_rate: LogNormal::new(1.2_f64.ln(), 0.4).unwrap().sample(&mut lat),
        wake_base: truncated_normal(&mut lat, 420.0, 40.0, 300.0, 600.0),
        bedtime_base: truncated_normal(&mut lat, 300.0, 40.0, 150.0, 520.0),
        sleep_dur_base: truncated_normal(&mut lat, 480.0, 30.0, 300.0, 600.0),
    };
    let weight_drift: f64 = Normal::new(0.0, 0.02).unwrap().sample(&mut lat);

    let mut step_traces = Vec::new();
    let mut sleep_traces = Vec::new();
    let mut days = Vec::with_capacity(config.t_days);

    for d in 0..config.t_days {
        let w = &wear[d];
        let mut steps_total = None;
        let mut sleep_minutes = None;
        let mut weight = None;

        let effects = &schedule.per_day[d];
        if w.step {
            let mut dr = rng(sub_seed(user_trace_seed, "stepday", d as u64));
            let steps = generate_step_day(&mut dr, &latents, effects);
            steps_total = Some(steps.iter().map(|&s| u32::from(s)).sum());
            step_traces.push(MinuteTrace {
                user_id: profile.user_id.clone(),
                date: d as u32,
                values: super::TraceValues::Step(steps),
            });
        }
        if w.sleep {
            let mut nr = rng(sub_seed(user_trace_seed, "night", d as u64));
            let states = generate_night(&mut nr, &latents, effects);
            sleep_minutes = Some(states.iter().filter(|&&s| s == 1 || s == 2).count() as u32);
            sleep_traces.push(MinuteTrace {
                user_id: profile.user_id.clone(),
                date: d as u32,
                values: super::TraceValues::Sleep(states),
            });
        }
        if w.weight {
            let mut qr = rng(sub_seed(user_trace_seed, "weight", d as u64));
            let noise: f64 = Normal::new(0.0, 0.35).unwrap().sample(&mut qr);
            weight = Some(round1(profile.weight + weight_drift * d as f64 + noise));
        }

        days.push(DayRecord {
            user_id: profile.user_id.clone(),
            date: d as u32,
            steps_total,
            sleep_minutes,
            weight,
            wore_step: w.step,
            wore_sleep: w.sleep,
            wore_weight: w.weight,
        });
    }

    // Canonical trace order: all step traces by date, then all sleep traces.
    step_traces.extend(sleep_traces);
    (days, step_traces)
}

/// Stable per-user behavioural latents drawn once per user. The phenotype
/// latents (fragmentation, restless rate, awakenings) vary along the same
/// directions the planted effects push, so no condition is separable from a
/// single per-user average alone.
struct UserLatents {
    /// Multiplies bout and background step intensity.
    activity: f64,
    /// Baseline fragmentation: scales bout count and background activations,
    /// shortens bouts.
    fragmentation: f64,
    /// Baseline rate of nightly restless periods.
    restless_rate: f64,
    /// Baseline rate of nightly awakenings.
    awakening_rate: f64,
    wake_base: f64,
    bedtime_base: f64,
    sleep_dur_base: f64,
}

/// Diurnal step profile: activity bouts drawn around morning, midday, and
/// evening peaks, plus sparse background activity. Planted effects scale
/// intensity (`step_scale`), delay the first step, and control fragmentation
/// (`transition_mult` raises bout count and background rate while shortening
/// bouts).
fn generate_step_day(r: &mut ChaCha8Rng, lat: &UserLatents, effects: &DayEffects) -> Vec<u16> {
    let mut steps = vec![0u16; MINUTES_PER_DAY];
    let start = (lat.wake_base
        + Normal::new(0.0, 20.0).unwrap().sample(r)
        + effects.first_step_delay)
        .clamp(240.0, 900.0) as usize;
    let end_f: f64 = 1380.0 + Normal::new(0.0, 25.0).unwrap().sample(r);
    let end = end_f.clamp((start + 120) as f64, 1439.0) as usize;

    let frag = lat.fragmentation * effects.transition_mult;
    let n_bouts = (((poisson(r, 6.0) + 2) as f64) * frag).round() as usize;
    let dur_mean = (18.0 / frag).max(3.0);
    let intensity_scale = lat.activity * effects.step_scale;

    for _ in 0..n_bouts.max(1) {
        let center = diurnal_minute(r, start, end);
        let dur = LogNormal::new(dur_mean.ln(), 0.4)
            .unwrap()
            .sample(r)
            .round()
            .clamp(2.0, 120.0) as usize;
        let lambda = (LogNormal::new(35.0_f64.ln(), 0.5).unwrap().sample(r) * intensity_scale)
            .clamp(2.0, 250.0);
        let lo = center.saturating_sub(dur / 2).max(start);
        let hi = (lo + dur).min(end);
        for m in lo..hi {
            let v = poisson(r, lambda).max(1);
            steps[m] = steps[m].saturating_add(v as u16).min(300);
        }
    }

    let background_p = (0.08 * frag).min(0.5);
    let background_lambda = 3.0 * intensity_scale;
    for m in start..=end.min(MINUTES_PER_DAY - 1) {
        if r.gen::<f64>() < background_p {
            let v = poisson(r, background_lambda) + 1;
            steps[m] = steps[m].saturating_add(v as u16).min(300);
        }
    }
    steps
}

fn diurnal_minute(r: &mut ChaCha8Rng, start: usize, end: usize) -> usize {
    let u: f64 = r.gen();
    let (mean, sd) = if u < 0.3 {
        (540.0, 70.0) // morning
    } else if u < 0.6 {
        (780.0, 90.0) // midday
    } else {
        (1080.0, 110.0) // evening
    };
    let m: f64 = Normal::new(mean, sd).unwrap().sample(r);
    m.clamp(start as f64, end as f64) as usize
}

/// Nightly sleep block on the 18:00-anchored minute axis. Insomnia-like
/// effects shift bedtime and add restless periods; awakenings and occasional
/// afternoon naps give the fragmentation features something to measure.
fn generate_night(r: &mut ChaCha8Rng, lat: &UserLatents, effects: &DayEffects) -> Vec<u8> {
    let mut states = vec![0u8; MINUTES_PER_DAY];
    let bedtime = (lat.bedtime_base
        + Normal::new(0.0, 35.0).unwrap().sample(r)
        + effects.bedtime_shift)
        .clamp(60.0, 900.0) as usize;
    let max_dur = (MINUTES_PER_DAY - 1 - bedtime) as f64;
    let duration =
        (lat.sleep_dur_base + Normal::new(0.0, 40.0).unwrap().sample(r)).clamp(180.0, max_dur) as usize;
    let wake = bedtime + duration;
    for s in states.iter_mut().take(wake).skip(bedtime) {
        *s = 1;
    }

    if duration > 60 {
        let n_wake = poisson(r, lat.awakening_rate) as usize;
        for _ in 0..n_wake {
            let at = r.gen_range(bedtime + 10..wake - 15);
            let len = (1 + poisson(r, 3.0) as usize).min(wake - at - 1);
            for s in states.iter_mut().skip(at).take(len) {
                *s = 0;
            }
        }
        let n_restless = poisson(r, lat.restless_rate + effects.extra_restless) as usize;
        for _ in 0..n_restless {
            let at = r.gen_range(bedtime + 5..wake - 10);
            let len = (2 + poisson(r, 4.0) as usize).min(wake - at);
            for s in states.iter_mut().skip(at).take(len) {
                *s = 2;
            }
        }
    }

    if r.gen::<f64>() < 0.08 {
        let nap_start = r.gen_range(1120..1300usize);
        let len = (20 + poisson(r, 30.0) as usize).min(MINUTES_PER_DAY - nap_start);
        for s in states.iter_mut().skip(nap_start).take(len) {
            if *s == 0 {
                *s = 1;
            }
        }
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::validate_cohort;

    #[test]
    fn zero_users_gives_empty_cohort_and_manifest() {
        let config = CohortConfig::new(0, 28, 1);
        let cohort = generate_cohort(&config).unwrap();
        assert!(cohort.profiles.is_empty());
        assert!(cohort.day_records.is_empty());
        assert!(cohort.minute_traces.is_empty());
        assert!(cohort.manifest.conditions.is_empty());
    }

    #[test]
    fn rejects_short_window() {
        let config = CohortConfig::new(5, 13, 1);
        assert!(matches!(
            generate_cohort(&config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_prevalence() {
        let mut config = CohortConfig::new(5, 28, 1);
        config.prevalence[2] = 0.95;
        assert!(generate_cohort(&config).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let config = CohortConfig::new(40, 21, 7);
        let a = generate_cohort(&config).unwrap();
        let b = generate_cohort(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_generated_user_is_eligible() {
        let config = CohortConfig::new(60, 14, 3);
        let cohort = generate_cohort(&config).unwrap();
        let report = validate_cohort(&cohort);
        assert_eq!(report.n_eligible(), 60);
        for u in &report.users {
            assert!(u.violations.is_empty(), "{}: {:?}", u.user_id, u.violations);
        }
    }

    #[test]
    fn prevalence_matches_targets_within_binomial_tolerance() {
        let mut config = CohortConfig::new(2000, 14, 7);
        config.prevalence[4] = 0.3; // insomnia
        let cohort = generate_cohort(&config).unwrap();
        let n = cohort.profiles.len() as f64;
        for c in 0..N_CONDITIONS {
            let p = config.prevalence[c];
            let observed =
                cohort.profiles.iter().filter(|u| u.labels[c]).count() as f64 / n;
            let tol = 3.0 * (p * (1.0 - p) / n).sqrt();
            assert!(
                (observed - p).abs() <= tol,
                "{}: observed {observed:.4} vs target {p} (tol {tol:.4})",
                CONDITIONS[c]
            );
        }
    }

    #[test]
    fn demographics_match_calibration() {
        let config = CohortConfig::new(2000, 14, 11);
        let cohort = generate_cohort(&config).unwrap();
        let n = cohort.profiles.len() as f64;
        let female = cohort
            .profiles
            .iter()
            .filter(|p| p.gender == Gender::Female)
            .count() as f64
            / n;
        let mean_age =
            cohort.profiles.iter().map(|p| f64::from(p.age)).sum::<f64>() / n;
        assert!((female - 0.75).abs() < 0.03, "female fraction {female}");
        assert!((mean_age - 38.0).abs() < 1.5, "mean age {mean_age}");
    }

    #[test]
    fn static_labels_survive_trace_seed_change() {
        let config = CohortConfig::new(200, 14, 5);
        let a = generate_cohort_with_trace_seed(&config, 1).unwrap();
        let b = generate_cohort_with_trace_seed(&config, 2).unwrap();
        assert_ne!(a.minute_traces, b.minute_traces);
        for (pa, pb) in a.profiles.iter().zip(&b.profiles) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn insomnia_shifts_bedtime() {
        let mut config = CohortConfig::new(300, 14, 9);
        config.prevalence[4] = 0.5;
        let cohort = generate_cohort(&config).unwrap();
        let mut with = (0.0, 0usize);
        let mut without = (0.0, 0usize);
        for t in &cohort.minute_traces {
            if let super::super::TraceValues::Sleep(states) = &t.values {
                let bedtime = states.iter().position(|&s| s != 0).unwrap() as f64;
                let profile = cohort.profile(&t.user_id).unwrap();
                if profile.labels[4] {
                    with.0 += bedtime;
                    with.1 += 1;
                } else {
                    without.0 += bedtime;
                    without.1 += 1;
                }
            }
        }
        // The +90 min shift applies on the episode fraction of nights.
        let fraction = 0.55;
        let delta = with.0 / with.1 as f64 - without.0 / without.1 as f64;
        assert!(
            (delta - 90.0 * fraction).abs() < 20.0,
            "planted bedtime shift off: {delta:.1} min"
        );
    }

    #[test]
    fn episode_mask_hits_target_fraction() {
        let mut r = rng(3);
        let mut total = 0usize;
        let mut active = 0usize;
        for _ in 0..200 {
            let mask = episode_mask(&mut r, 56, 0.55);
            assert_eq!(mask.len(), 56);
            total += mask.len();
            active += mask.iter().filter(|&&m| m).count();
        }
        let observed = active as f64 / total as f64;
        assert!((observed - 0.55).abs() < 0.06, "episode fraction {observed}");
    }

    #[test]
    fn depression_scales_daily_steps() {
        let mut config = CohortConfig::new(300, 14, 13);
        config.prevalence[1] = 0.5;
        let cohort = generate_cohort(&config).unwrap();
        let mean_steps = |want: bool| {
            let (mut sum, mut n) = (0.0, 0usize);
            for d in &cohort.day_records {
                if let Some(total) = d.steps_total {
                    if cohort.profile(&d.user_id).unwrap().labels[1] == want {
                        sum += f64::from(total);
                        n += 1;
                    }
                }
            }
            sum / n as f64
        };
        // Episodes cover ~55% of days at scale 0.7: expect a ~0.84 mean ratio.
        let ratio = mean_steps(true) / mean_steps(false);
        assert!(ratio < 0.92, "depressed/healthy step ratio {ratio:.3}");
    }

    #[test]
    fn redraw_labels_breaks_planted_link() {
        let mut config = CohortConfig::new(100, 14, 21);
        config.prevalence[4] = 0.4;
        let mut cohort = generate_cohort(&config).unwrap();
        let before: Vec<bool> = cohort.profiles.iter().map(|p| p.labels[4]).collect();
        redraw_labels_random(&mut cohort, &config.prevalence, 99);
        let after: Vec<bool> = cohort.profiles.iter().map(|p| p.labels[4]).collect();
        assert_ne!(before, after);
    }
}
