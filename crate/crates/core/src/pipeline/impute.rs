//! Gap censoring and per-user linear interpolation for per-day series.

use crate::error::{Error, Result};

/// Fills every missing day of a per-day series.
///
/// Rule, applied in order: (1) find maximal runs of missing days (gaps);
/// (2) censor the observed day immediately before and immediately after each
/// gap — values adjacent to a tracking gap are suspected partial reports;
/// (3) linearly interpolate every missing day between its nearest retained
/// neighbors; (4) at the window edges, extend the nearest retained value.
///
/// If censoring would discard every observed day, the censor step is skipped
/// for that series so the output is still total.
pub fn censor_and_interpolate(series: &[Option<f64>]) -> Result<Vec<f64>> {
    let n = series.len();
    if !series.iter().any(Option::is_some) {
        return Err(Error::EmptySeries);
    }

    let mut kept: Vec<bool> = series.iter().map(Option::is_some).collect();
    let mut i = 0;
    while i < n {
        if series[i].is_none() {
            let start = i;
            while i < n && series[i].is_none() {
                i += 1;
            }
            if start > 0 {
                kept[start - 1] = false;
            }
            if i < n {
                kept[i] = false;
            }
        } else {
            i += 1;
        }
    }
    if !kept.iter().any(|&k| k) {
        for (k, v) in kept.iter_mut().zip(series) {
            *k = v.is_some();
        }
    }

    // prev[i] / next[i]: nearest retained index at or before / after i.
    let mut prev: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if kept[i] {
            last = Some(i);
        }
        prev[i] = last;
    }
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut first = None;
    for i in (0..n).rev() {
        if kept[i] {
            first = Some(i);
        }
        next[i] = first;
    }

    let value = |i: usize| series[i].expect("retained days are observed");
    Ok((0..n)
        .map(|i| match (prev[i], next[i]) {
            (Some(p), Some(q)) if p == q => value(p),
            (Some(p), Some(q)) => {
                let frac = (i - p) as f64 / (q - p) as f64;
                value(p) + (value(q) - value(p)) * frac
            }
            (Some(p), None) => value(p),
            (None, Some(q)) => value(q),
            (None, None) => unreachable!("at least one day is retained"),
        })
        .collect())
}
