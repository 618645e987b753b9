//! Rate-of-change oscillator, inertia and fatigue detection, and the
//! before/after comparison with Welch's t-test.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::csv_field;
use crate::metrics::Geography;
use crate::sdi::SdiSeries;
use crate::stats::student_t_cdf;

#[derive(Debug, Clone, PartialEq)]
pub struct RocSeries {
    pub dates: Vec<NaiveDate>,
    pub roc: Vec<f64>,
    /// Dates skipped because the lookback value was zero.
    pub undefined: Vec<NaiveDate>,
}

/// Percentage change over `n` positions: `100 (s_t - s_{t-n}) / s_{t-n}`.
/// Dates whose lookback value is zero are left out and listed.
pub fn roc(dates: &[NaiveDate], values: &[f64], n: usize) -> Result<RocSeries> {
    if n == 0 || dates.len() != values.len() {
        return Err(Error::Config("roc needs a positive lookback and aligned input".into()));
    }
    let mut out = RocSeries {
        dates: Vec::new(),
        roc: Vec::new(),
        undefined: Vec::new(),
    };
    for t in n..values.len() {
        let base = values[t - n];
        if base == 0.0 {
            out.undefined.push(dates[t]);
        } else {
            out.dates.push(dates[t]);
            out.roc.push(100.0 * (values[t] - base) / base);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub lookback: usize,
    /// |ROC| below this (percent) marks the inertia elbow.
    pub elbow_eps: f64,
    /// Consecutive negative-ROC days that make a fatigue run.
    pub fatigue_run: usize,
    /// Ignore ROC before this date, e.g. noisy near-zero SDI before any ramp.
    pub detect_from: Option<NaiveDate>,
    /// Before/after comparison pivot; defaults to the detected fatigue start.
    pub pivot: Option<NaiveDate>,
    pub compare_days: usize,
    /// Compare smoothed instead of daily SDI values.
    pub compare_smoothed: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            lookback: 5,
            elbow_eps: 1.0,
            fatigue_run: 3,
            detect_from: None,
            pivot: None,
            compare_days: 5,
            compare_smoothed: false,
        }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.fatigue_run == 0 || self.compare_days < 2 {
            return Err(Error::Config(
                "phase lookback, run length and comparison window must be positive".into(),
            ));
        }
        if !(self.elbow_eps.is_finite() && self.elbow_eps > 0.0) {
            return Err(Error::Config("elbow_eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseDates {
    pub roc_peak_date: Option<NaiveDate>,
    pub inertia_start: Option<NaiveDate>,
    pub fatigue_start: Option<NaiveDate>,
    pub fatigue_end: Option<NaiveDate>,
}

/// Peak of ROC (earliest on ties), the first date after it with
/// `|roc| < eps`, and the earliest run of at least `k` negative values that
/// starts on or after that elbow. The fatigue run ends at its last negative
/// value, which is the last analysed date if ROC never turns back.
pub fn detect_phases(series: &RocSeries, eps: f64, k: usize, from: Option<NaiveDate>) -> PhaseDates {
    let start = from.map_or(0, |d| series.dates.partition_point(|x| *x < d));
    let dates = &series.dates[start..];
    let roc = &series.roc[start..];
    let mut out = PhaseDates::default();
    let Some(peak) = (0..roc.len()).reduce(|best, i| if roc[i] > roc[best] { i } else { best }) else {
        return out;
    };
    out.roc_peak_date = Some(dates[peak]);
    let Some(elbow) = (peak + 1..roc.len()).find(|&i| roc[i].abs() < eps) else {
        return out;
    };
    out.inertia_start = Some(dates[elbow]);
    let mut i = elbow;
    while i < roc.len() {
        if roc[i] < 0.0 {
            let end = (i..roc.len()).take_while(|&j| roc[j] < 0.0).last().expect("run is non-empty");
            if end + 1 - i >= k {
                out.fatigue_start = Some(dates[i]);
                out.fatigue_end = Some(dates[end]);
                break;
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekComparison {
    pub mean_before: f64,
    pub mean_after: f64,
    pub pct_change: f64,
    pub variance_before: f64,
    pub variance_after: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// The `days` values strictly before `pivot` and the `days` values from
/// `pivot` on.
pub fn split_at_pivot<'a>(dates: &[NaiveDate], values: &'a [f64], pivot: NaiveDate, days: usize) -> Result<(&'a [f64], &'a [f64])> {
    let at = dates.partition_point(|d| *d < pivot);
    if at < days || values.len() - at < days {
        return Err(Error::Missing(format!(
            "need {days} values on each side of {pivot}, have {} before and {} after",
            at,
            values.len() - at
        )));
    }
    Ok((&values[at - days..at], &values[at..at + days]))
}

/// Means and sample variances of the week before and the week from the
/// pivot; `pct_change` is relative to the week before.
pub fn week_compare(dates: &[NaiveDate], values: &[f64], pivot: NaiveDate, days: usize) -> Result<WeekComparison> {
    let (before, after) = split_at_pivot(dates, values, pivot, days)?;
    let (mean_before, variance_before) = mean_var(before);
    let (mean_after, variance_after) = mean_var(after);
    Ok(WeekComparison {
        mean_before,
        mean_after,
        pct_change: 100.0 * (mean_after - mean_before) / mean_before,
        variance_before,
        variance_after,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_stat: f64,
    pub df: f64,
    /// One-sided, alternative "after < before".
    pub p_value: f64,
}

/// Welch's unequal-variance t-test of `after` against `before`, with
/// `t = (mean_after - mean_before) / se` and `p = P(T <= t)`.
pub fn welch_t_test(before: &[f64], after: &[f64]) -> Result<WelchResult> {
    if before.len() < 2 || after.len() < 2 {
        return Err(Error::Input("each sample needs at least two values".into()));
    }
    let (mb, vb) = mean_var(before);
    let (ma, va) = mean_var(after);
    if !(vb.is_finite() && va.is_finite()) {
        return Err(Error::Input("sample variance is not finite".into()));
    }
    let (nb, na) = (before.len() as f64, after.len() as f64);
    let (sb, sa) = (vb / nb, va / na);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let (t_stat, p_value) = match ma.partial_cmp(&mb) {
            Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 0.0),
            Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 1.0),
            _ => (0.0, 0.5),
        };
        return Ok(WelchResult {
            t_stat,
            df: na + nb - 2.0,
            p_value,
        });
    }
    let t_stat = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchResult {
        t_stat,
        df,
        p_value: student_t_cdf(t_stat, df),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub level: crate::metrics::Level,
    pub geo_id: String,
    pub roc_peak_date: Option<NaiveDate>,
    pub inertia_start: Option<NaiveDate>,
    pub fatigue_start: Option<NaiveDate>,
    pub fatigue_end: Option<NaiveDate>,
    pub pivot: Option<NaiveDate>,
    pub mean_before: Option<f64>,
    pub mean_after: Option<f64>,
    pub pct_change: Option<f64>,
    pub variance_before: Option<f64>,
    pub variance_after: Option<f64>,
    pub t_stat: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
}

/// ROC of the smoothed series and the full phase report for one geography.
pub fn analyse(series: &SdiSeries, cfg: &PhaseConfig) -> Result<(RocSeries, PhaseReport)> {
    let r = roc(&series.dates, &series.smoothed, cfg.lookback)?;
    if !r.undefined.is_empty() {
        log::info!(
            "{}: ROC undefined on {} dates with zero lookback SDI",
            series.geo.geo_id,
            r.undefined.len()
        );
    }
    let dates = detect_phases(&r, cfg.elbow_eps, cfg.fatigue_run, cfg.detect_from);
    let mut report = PhaseReport {
        level: series.geo.level,
        geo_id: series.geo.geo_id.to_string(),
        roc_peak_date: dates.roc_peak_date,
        inertia_start: dates.inertia_start,
        fatigue_start: dates.fatigue_start,
        fatigue_end: dates.fatigue_end,
        pivot: cfg.pivot.or(dates.fatigue_start),
        mean_before: None,
        mean_after: None,
        pct_change: None,
        variance_before: None,
        variance_after: None,
        t_stat: None,
        df: None,
        p_value: None,
    };
    let Some(pivot) = report.pivot else {
        return Ok((r, report));
    };
    let values = if cfg.compare_smoothed { &series.smoothed } else { &series.sdi };
    match split_at_pivot(&series.dates, values, pivot, cfg.compare_days) {
        Ok((before, after)) => {
            let w = week_compare(&series.dates, values, pivot, cfg.compare_days)?;
            let t = welch_t_test(before, after)?;
            report.mean_before = Some(w.mean_before);
            report.mean_after = Some(w.mean_after);
            report.pct_change = w.pct_change.is_finite().then_some(w.pct_change);
            report.variance_before = Some(w.variance_before);
            report.variance_after = Some(w.variance_after);
            report.t_stat = t.t_stat.is_finite().then_some(t.t_stat);
            report.df = Some(t.df);
            report.p_value = Some(t.p_value);
        }
        Err(e) => log::warn!("{}: no before/after comparison: {e}", series.geo.geo_id),
    }
    Ok((r, report))
}

pub const ROC_HEADER: &str = "date,level,geo_id,roc";

/// ROC rows per geography, in the order given and by date within each.
pub fn write_roc(mut out: impl Write, series: &[(RocSeries, PhaseReport)]) -> Result<()> {
    writeln!(out, "{ROC_HEADER}")?;
    for (roc, report) in series {
        for (d, v) in roc.dates.iter().zip(&roc.roc) {
            writeln!(out, "{d},{},{},{v}", report.level, csv_field(&report.geo_id))?;
        }
    }
    Ok(())
}

/// Reads [`write_roc`] output. Undefined dates are not stored, so the
/// `undefined` lists come back empty.
pub fn read_roc(source: impl Read) -> Result<Vec<(Geography, RocSeries)>> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != ROC_HEADER {
        return Err(Error::Input(format!("ROC header must be `{ROC_HEADER}`")));
    }
    let mut out: Vec<(Geography, RocSeries)> = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Input(format!("ROC row {}: bad value", row + 2));
        let geo = Geography::new(rec[1].parse()?, &rec[2]);
        if out.last().is_none_or(|(g, _)| *g != geo) {
            out.push((
                geo,
                RocSeries {
                    dates: Vec::new(),
                    roc: Vec::new(),
                    undefined: Vec::new(),
                },
            ));
        }
        let s = &mut out.last_mut().expect("pushed above").1;
        s.dates.push(rec[0].parse().map_err(|_| bad())?);
        s.roc.push(rec[3].parse().map_err(|_| bad())?);
    }
    Ok(out)
}
