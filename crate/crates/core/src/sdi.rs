//! Social Distancing Index: five mobility reductions against a benchmark,
//! weighted into a 0-100 score, plus moving-average smoothing.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::is_weekday;
use crate::error::{Error, Result};
use crate::ingest::csv_field;
use crate::metrics::{Benchmark, DailyMetrics, Geography, MetricValues};

pub const SDI_HEADER: &str = "date,level,geo_id,sdi,sdi_smoothed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdiWeights {
    pub w_home: f64,
    pub w_work: f64,
    pub w_nonwork: f64,
    pub w_dist: f64,
    pub w_outcounty: f64,
}

impl Default for SdiWeights {
    fn default() -> Self {
        Self {
            w_home: 0.4,
            w_work: 0.1,
            w_nonwork: 0.2,
            w_dist: 0.2,
            w_outcounty: 0.1,
        }
    }
}

impl SdiWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.w_home, self.w_work, self.w_nonwork, self.w_dist, self.w_outcounty]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("SDI weights must be non-negative".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("SDI weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// Clamped reduction scores in weight order: home, work, non-work, miles,
/// out-of-county.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub scores: [f64; 5],
    /// A trip-like benchmark of zero met a positive current value; that
    /// component was pinned to zero.
    pub flagged: bool,
}

pub fn components(m: &MetricValues, b: &MetricValues) -> Components {
    let home = if b.pct_staying_home < 1.0 {
        (m.pct_staying_home - b.pct_staying_home) / (1.0 - b.pct_staying_home)
    } else {
        1.0
    };
    let mut flagged = false;
    let mut reduction = |current: f64, bench: f64| {
        if bench > 0.0 {
            1.0 - current / bench
        } else {
            flagged |= current > 0.0;
            0.0
        }
    };
    let raw = [
        home,
        reduction(m.work_trips_pp, b.work_trips_pp),
        reduction(m.nonwork_trips_pp, b.nonwork_trips_pp),
        reduction(m.miles_pp, b.miles_pp),
        reduction(m.pct_out_of_county, b.pct_out_of_county),
    ];
    Components {
        scores: raw.map(|r| if r.is_nan() { 0.0 } else { r.clamp(0.0, 1.0) }),
        flagged,
    }
}

/// 0 means no change from the benchmark, 100 means everyone home with no
/// travel.
pub fn sdi_score(m: &MetricValues, b: &MetricValues, w: &SdiWeights) -> f64 {
    let c = components(m, b);
    let w = w.as_array();
    let s: f64 = c.scores.iter().zip(w).map(|(r, w)| r * w).sum();
    // Dividing by the summed weights, accumulated in the same order, makes
    // an all-ones score exactly 100 despite rounding in the weights.
    let total: f64 = w.iter().sum();
    (100.0 * (s / total)).clamp(0.0, 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    Centered,
    Trailing,
}

/// Mean over the window around each position, truncated at the ends.
/// `window` must be odd for centred smoothing.
pub fn moving_average(values: &[f64], window: usize, mode: Smoothing) -> Result<Vec<f64>> {
    if window == 0 || (mode == Smoothing::Centered && window.is_multiple_of(2)) {
        return Err(Error::Config(format!("smoothing window {window} must be odd and positive")));
    }
    let n = values.len();
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = match mode {
                Smoothing::Centered => (i.saturating_sub(window / 2), (i + window / 2).min(n - 1)),
                Smoothing::Trailing => ((i + 1).saturating_sub(window), i),
            };
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdiSeries {
    pub geo: Geography,
    pub dates: Vec<NaiveDate>,
    pub sdi: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl SdiSeries {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dates.len() == self.sdi.len()
            && self.dates.len() == self.smoothed.len()
            && self.dates.windows(2).all(|w| w[0] < w[1])
            && self.dates.iter().all(|d| is_weekday(*d))
            && self.sdi.iter().chain(&self.smoothed).all(|v| (0.0..=100.0).contains(v));
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("malformed SDI series for {}", self.geo.geo_id)))
        }
    }
}

/// One series per geography that has a benchmark; weekend rows are ignored.
pub fn sdi_series(
    metrics: &[DailyMetrics],
    benchmarks: &[Benchmark],
    w: &SdiWeights,
    window: usize,
    mode: Smoothing,
) -> Result<Vec<SdiSeries>> {
    let mut out = Vec::with_capacity(benchmarks.len());
    for b in benchmarks {
        let mut rows: Vec<&DailyMetrics> = metrics.iter().filter(|m| m.geo == b.geo && is_weekday(m.date)).collect();
        rows.sort_by_key(|m| m.date);
        let sdi: Vec<f64> = rows.iter().map(|m| sdi_score(&m.values, &b.values, w)).collect();
        if rows.iter().any(|m| components(&m.values, &b.values).flagged) {
            log::warn!("{} {}: zero benchmark for a travelled metric", b.geo.level, b.geo.geo_id);
        }
        out.push(SdiSeries {
            geo: b.geo.clone(),
            dates: rows.iter().map(|m| m.date).collect(),
            smoothed: moving_average(&sdi, window, mode)?,
            sdi,
        });
    }
    out.sort_by(|a, b| a.geo.cmp(&b.geo));
    Ok(out)
}

/// Rows sorted by date, then level and geography.
pub fn write_sdi(mut out: impl Write, series: &[SdiSeries]) -> Result<()> {
    let mut rows: Vec<(NaiveDate, &Geography, f64, f64)> = series
        .iter()
        .flat_map(|s| (0..s.dates.len()).map(move |i| (s.dates[i], &s.geo, s.sdi[i], s.smoothed[i])))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    writeln!(out, "{SDI_HEADER}")?;
    for (date, geo, sdi, smoothed) in rows {
        writeln!(out, "{date},{},{},{sdi},{smoothed}", geo.level, csv_field(&geo.geo_id))?;
    }
    Ok(())
}

pub fn read_sdi(source: impl Read) -> Result<Vec<SdiSeries>> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != SDI_HEADER {
        return Err(Error::Input(format!("SDI header must be `{SDI_HEADER}`")));
    }
    let mut by_geo: std::collections::BTreeMap<Geography, SdiSeries> = std::collections::BTreeMap::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Input(format!("SDI row {}: bad value", row + 2));
        let geo = Geography::new(rec[1].parse()?, &rec[2]);
        let s = by_geo.entry(geo.clone()).or_insert_with(|| SdiSeries {
            geo,
            dates: Vec::new(),
            sdi: Vec::new(),
            smoothed: Vec::new(),
        });
        s.dates.push(rec[0].parse().map_err(|_| bad())?);
        s.sdi.push(rec[3].parse().map_err(|_| bad())?);
        s.smoothed.push(rec[4].parse().map_err(|_| bad())?);
    }
    let out: Vec<SdiSeries> = by_geo.into_values().collect();
    for s in &out {
        s.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::ymd;

    fn mv(home: f64, work: f64, nonwork: f64, miles: f64, out: f64) -> MetricValues {
        MetricValues {
            pct_staying_home: home,
            work_trips_pp: work,
            nonwork_trips_pp: nonwork,
            trips_pp: work + nonwork,
            miles_pp: miles,
            pct_out_of_county: out,
        }
    }

    #[test]
    fn anchors() {
        let w = SdiWeights::default();
        let b = mv(0.25, 0.5, 2.5, 40.0, 0.2);
        assert_eq!(sdi_score(&b, &b, &w), 0.0);
        assert_eq!(sdi_score(&mv(1.0, 0.0, 0.0, 0.0, 0.0), &b, &w), 100.0);
    }

    #[test]
    fn worked_example_scores_38() {
        let b = mv(0.25, 0.5, 2.5, 40.0, 0.2);
        let m = mv(0.40, 0.25, 1.25, 20.0, 0.1);
        let s = sdi_score(&m, &b, &SdiWeights::default());
        assert!((s - 38.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn more_travel_than_benchmark_clamps_to_zero() {
        let b = mv(0.25, 0.5, 2.5, 40.0, 0.2);
        let m = mv(0.1, 1.0, 5.0, 80.0, 0.4);
        assert_eq!(sdi_score(&m, &b, &SdiWeights::default()), 0.0);
    }

    #[test]
    fn zero_benchmark_is_flagged() {
        let b = mv(0.25, 0.0, 2.5, 40.0, 0.2);
        let m = mv(0.25, 0.3, 2.5, 40.0, 0.2);
        let c = components(&m, &b);
        assert!(c.flagged);
        assert_eq!(c.scores[1], 0.0);
        assert!(!components(&b, &b).flagged);
    }

    #[test]
    fn weights_validate() {
        assert!(SdiWeights::default().validate().is_ok());
        let w = SdiWeights {
            w_home: 0.5,
            ..SdiWeights::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn moving_average_cases() {
        let c = Smoothing::Centered;
        assert_eq!(moving_average(&[3.0; 7], 5, c).unwrap(), vec![3.0; 7]);
        let x = [1.0, 4.0, 2.0, 8.0];
        assert_eq!(moving_average(&x, 1, c).unwrap(), x.to_vec());
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 3, c).unwrap(), vec![1.5, 2.0, 2.5]);
        assert_eq!(
            moving_average(&[1.0, 2.0, 3.0], 2, Smoothing::Trailing).unwrap(),
            vec![1.0, 1.5, 2.5]
        );
        assert!(moving_average(&x, 4, c).is_err());
        assert!(moving_average(&[], 5, c).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let s = SdiSeries {
            geo: Geography::nation(),
            dates: vec![ymd(2020, 3, 2), ymd(2020, 3, 3)],
            sdi: vec![1.25, 99.5],
            smoothed: vec![50.375, 50.375],
        };
        let mut buf = Vec::new();
        write_sdi(&mut buf, std::slice::from_ref(&s)).unwrap();
        assert_eq!(read_sdi(buf.as_slice()).unwrap(), vec![s]);
    }
}
