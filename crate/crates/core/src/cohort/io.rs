//! On-disk cohort formats.
//!
//! `profiles.jsonl` holds one JSON object per user. `days.csv` holds one row
//! per (user, day). `steps.csv` and `sleep.csv` are sparse: rows exist only
//! for nonzero minutes / non-zero states, and full 1440-minute traces are
//! reconstructed on read for every day whose wear indicator is set.
//! `manifest.json` records the planted effects keyed by condition.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    condition_index, Cohort, ConditionEffects, DayRecord, EffectManifest, MinuteTrace,
    PlantedEffect, TraceValues, UserProfile, MINUTES_PER_DAY,
};
use crate::error::{Error, Result};

pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const DAYS_FILE: &str = "days.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const SLEEP_FILE: &str = "sleep.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the five cohort files into `dir`, creating it if needed.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut profiles = BufWriter::new(File::create(dir.join(PROFILES_FILE))?);
    for p in &cohort.profiles {
        serde_json::to_writer(&mut profiles, p)?;
        profiles.write_all(b"\n")?;
    }
    profiles.flush()?;

    let mut days = csv::Writer::from_path(dir.join(DAYS_FILE))?;
    days.write_record([
        "user_id",
        "date",
        "steps_total",
        "sleep_minutes",
        "weight",
        "wore_step",
        "wore_sleep",
        "wore_weight",
    ])?;
    let fmt_opt_u32 = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
    for d in &cohort.day_records {
        days.write_record([
            d.user_id.clone(),
            d.date.to_string(),
            fmt_opt_u32(d.steps_total),
            fmt_opt_u32(d.sleep_minutes),
            d.weight.map(|w| w.to_string()).unwrap_or_default(),
            u8::from(d.wore_step).to_string(),
            u8::from(d.wore_sleep).to_string(),
            u8::from(d.wore_weight).to_string(),
        ])?;
    }
    days.flush()?;

    let mut steps = csv::Writer::from_path(dir.join(STEPS_FILE))?;
    steps.write_record(["user_id", "date", "minute", "steps"])?;
    let mut sleep = csv::Writer::from_path(dir.join(SLEEP_FILE))?;
    sleep.write_record(["user_id", "date", "minute", "state"])?;
    for t in &cohort.minute_traces {
        match &t.values {
            TraceValues::Step(values) => {
                for (m, &v) in values.iter().enumerate() {
                    if v != 0 {
                        steps.write_record([
                            t.user_id.clone(),
                            t.date.to_string(),
                            m.to_string(),
                            v.to_string(),
                        ])?;
                    }
                }
            }
            TraceValues::Sleep(values) => {
                for (m, &s) in values.iter().enumerate() {
                    if s != 0 {
                        sleep.write_record([
                            t.user_id.clone(),
                            t.date.to_string(),
                            m.to_string(),
                            s.to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    steps.flush()?;
    sleep.flush()?;

    let mut map = serde_json::Map::new();
    for c in &cohort.manifest.conditions {
        map.insert(c.condition.clone(), serde_json::to_value(&c.effects)?);
    }
    let manifest_json = serde_json::to_string_pretty(&serde_json::Value::Object(map))?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest_json + "\n")?;
    Ok(())
}

fn parse_err(file: &str, line: u64, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, file: &str, line: u64, name: &str) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| parse_err(file, line, name, "missing column"))
}

fn parse<T: std::str::FromStr>(s: &str, file: &str, line: u64, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(file, line, name, format!("cannot parse `{s}`")))
}

fn parse_opt<T: std::str::FromStr>(s: &str, file: &str, line: u64, name: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, file, line, name).map(Some)
    }
}

fn parse_flag(s: &str, file: &str, line: u64, name: &str) -> Result<bool> {
    match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(parse_err(file, line, name, format!("`{other}` is not 0/1"))),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads a cohort directory written by [`write_cohort`]. Malformed rows
/// produce an error naming file, line, and field.
pub fn read_cohort(dir: &Path) -> Result<Cohort> {
    let mut cohort = Cohort::default();

    let profiles_path = dir.join(PROFILES_FILE);
    let reader = BufReader::new(File::open(&profiles_path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: UserProfile = serde_json::from_str(&line)
            .map_err(|e| parse_err(PROFILES_FILE, i as u64 + 1, "profile", e.to_string()))?;
        cohort.profiles.push(p);
    }

    let mut days = csv::Reader::from_path(dir.join(DAYS_FILE))?;
    for rec in days.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let f = DAYS_FILE;
        let wore_step = parse_flag(field(&rec, 5, f, line, "wore_step")?, f, line, "wore_step")?;
        let wore_sleep = parse_flag(field(&rec, 6, f, line, "wore_sleep")?, f, line, "wore_sleep")?;
        let wore_weight =
            parse_flag(field(&rec, 7, f, line, "wore_weight")?, f, line, "wore_weight")?;
        cohort.day_records.push(DayRecord {
            user_id: field(&rec, 0, f, line, "user_id")?.to_string(),
            date: parse(field(&rec, 1, f, line, "date")?, f, line, "date")?,
            steps_total: parse_opt(field(&rec, 2, f, line, "steps_total")?, f, line, "steps_total")?,
            sleep_minutes: parse_opt(
                field(&rec, 3, f, line, "sleep_minutes")?,
                f,
                line,
                "sleep_minutes",
            )?,
            weight: parse_opt(field(&rec, 4, f, line, "weight")?, f, line, "weight")?,
            wore_step,
            wore_sleep,
            wore_weight,
        });
    }

    // Pre-allocate zero traces for every worn day; sparse rows fill them in.
    let mut step_map: HashMap<(String, u32), Vec<u16>> = HashMap::new();
    let mut sleep_map: HashMap<(String, u32), Vec<u8>> = HashMap::new();
    for d in &cohort.day_records {
        if d.wore_step {
            step_map.insert((d.user_id.clone(), d.date), vec![0; MINUTES_PER_DAY]);
        }
        if d.wore_sleep {
            sleep_map.insert((d.user_id.clone(), d.date), vec![0; MINUTES_PER_DAY]);
        }
    }

    let mut steps = csv::Reader::from_path(dir.join(STEPS_FILE))?;
    for rec in steps.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let f = STEPS_FILE;
        let user: String = field(&rec, 0, f, line, "user_id")?.to_string();
        let date: u32 = parse(field(&rec, 1, f, line, "date")?, f, line, "date")?;
        let minute: usize = parse(field(&rec, 2, f, line, "minute")?, f, line, "minute")?;
        let value: u32 = parse(field(&rec, 3, f, line, "steps")?, f, line, "steps")?;
        if minute >= MINUTES_PER_DAY {
            return Err(parse_err(f, line, "minute", format!("minute {minute} out of 0..1439")));
        }
        if value > u32::from(super::MAX_STEPS_PER_MINUTE) {
            return Err(parse_err(
                f,
                line,
                "steps",
                format!("step count {value} exceeds per-minute cap"),
            ));
        }
        let trace = step_map.get_mut(&(user.clone(), date)).ok_or_else(|| {
            parse_err(f, line, "date", format!("no worn step day {date} for {user}"))
        })?;
        trace[minute] = value as u16;
    }

    let mut sleep = csv::Reader::from_path(dir.join(SLEEP_FILE))?;
    for rec in sleep.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let f = SLEEP_FILE;
        let user: String = field(&rec, 0, f, line, "user_id")?.to_string();
        let date: u32 = parse(field(&rec, 1, f, line, "date")?, f, line, "date")?;
        let minute: usize = parse(field(&rec, 2, f, line, "minute")?, f, line, "minute")?;
        let state: u8 = parse(field(&rec, 3, f, line, "state")?, f, line, "state")?;
        if minute >= MINUTES_PER_DAY {
            return Err(parse_err(f, line, "minute", format!("minute {minute} out of 0..1439")));
        }
        if state == 0 || state > 2 {
            return Err(parse_err(
                f,
                line,
                "state",
                format!("sleep state {state} invalid (sparse rows must be 1 or 2)"),
            ));
        }
        let trace = sleep_map.get_mut(&(user.clone(), date)).ok_or_else(|| {
            parse_err(f, line, "date", format!("no worn sleep day {date} for {user}"))
        })?;
        trace[minute] = state;
    }

    // Canonical trace order: per user, step traces by date, then sleep traces.
    let mut days_by_user: HashMap<&str, Vec<&DayRecord>> = HashMap::new();
    for d in &cohort.day_records {
        days_by_user.entry(&d.user_id).or_default().push(d);
    }
    let mut traces = Vec::new();
    for p in &cohort.profiles {
        let Some(user_days) = days_by_user.get(p.user_id.as_str()) else {
            continue;
        };
        for d in user_days.iter().filter(|d| d.wore_step) {
            let values = step_map.remove(&(d.user_id.clone(), d.date)).unwrap();
            traces.push(MinuteTrace {
                user_id: d.user_id.clone(),
                date: d.date,
                values: TraceValues::Step(values),
            });
        }
        for d in user_days.iter().filter(|d| d.wore_sleep) {
            let values = sleep_map.remove(&(d.user_id.clone(), d.date)).unwrap();
            traces.push(MinuteTrace {
                user_id: d.user_id.clone(),
                date: d.date,
                values: TraceValues::Sleep(values),
            });
        }
    }
    cohort.minute_traces = traces;

    let manifest_text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let map: std::collections::BTreeMap<String, Vec<PlantedEffect>> =
        serde_json::from_str(&manifest_text)?;
    let mut conditions: Vec<ConditionEffects> = map
        .into_iter()
        .map(|(condition, effects)| ConditionEffects { condition, effects })
        .collect();
    conditions.sort_by_key(|c| condition_index(&c.condition).unwrap_or(usize::MAX));
    cohort.manifest = EffectManifest { conditions };

    Ok(cohort)
}
