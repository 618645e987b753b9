//! Sighting parsing and the four-dimension cleaning pass.
//!
//! Cleaning runs per device on time-sorted records:
//!
//! * consistency: records sharing `(device_id, ts)` collapse to one, keeping
//!   the most accurate;
//! * accuracy: records with `accuracy_m` above the cutoff are dropped;
//! * timeliness: a record implying travel faster than the plausible speed
//!   from the last kept record is dropped;
//! * completeness: UTC device-days with too few records are removed whole.
//!
//! The last two steps repeat until nothing changes, which makes the whole
//! pass idempotent.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::ops::AddAssign;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::SECONDS_PER_DAY;
use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GeoPoint};

pub const SIGHTINGS_HEADER: &str = "device_id,ts,lat,lon,accuracy_m";

/// Anonymised device identifier. Clones share one allocation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(Arc<str>);

impl DeviceId {
    pub fn new(id: &str) -> Self {
        Self(Arc::from(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for DeviceId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sighting {
    pub device_id: DeviceId,
    pub ts: i64,
    pub point: GeoPoint,
    pub accuracy_m: f64,
}

impl Sighting {
    pub fn new(device_id: DeviceId, ts: i64, point: GeoPoint, accuracy_m: f64) -> Result<Self> {
        if ts <= 0 {
            return Err(Error::Input(format!("timestamp {ts} must be positive")));
        }
        if !accuracy_m.is_finite() || accuracy_m < 0.0 {
            return Err(Error::Input(format!("accuracy {accuracy_m} must be finite and non-negative")));
        }
        Ok(Self {
            device_id,
            ts,
            point,
            accuracy_m,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParsedSightings {
    pub sightings: Vec<Sighting>,
    pub errors: Vec<ParseIssue>,
}

/// Parses the sightings CSV. A wrong header or unreadable stream is fatal;
/// malformed rows are reported with their line number and skipped.
pub fn parse_sightings(source: impl Read) -> Result<ParsedSightings> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let header = reader.byte_headers()?;
    if header.iter().collect::<Vec<_>>() != SIGHTINGS_HEADER.split(',').map(str::as_bytes).collect::<Vec<_>>() {
        return Err(Error::Input(format!("sightings header must be `{SIGHTINGS_HEADER}`")));
    }

    let mut out = ParsedSightings::default();
    let mut last_device: Option<DeviceId> = None;
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(ParseIssue {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        }
        let line = record.position().map_or(0, |p| p.line());
        match parse_row(&record, &mut last_device) {
            Ok(s) => out.sightings.push(s),
            Err(message) => out.errors.push(ParseIssue { line, message }),
        }
    }
    Ok(out)
}

fn parse_row(record: &csv::StringRecord, last_device: &mut Option<DeviceId>) -> Result<Sighting, String> {
    if record.len() != 5 {
        return Err(format!("expected 5 fields, found {}", record.len()));
    }
    let id = &record[0];
    if id.is_empty() {
        return Err("empty device_id".into());
    }
    let ts: i64 = record[1].parse().map_err(|_| format!("bad ts `{}`", &record[1]))?;
    let lat: f64 = record[2].parse().map_err(|_| format!("bad lat `{}`", &record[2]))?;
    let lon: f64 = record[3].parse().map_err(|_| format!("bad lon `{}`", &record[3]))?;
    let accuracy: f64 = record[4].parse().map_err(|_| format!("bad accuracy_m `{}`", &record[4]))?;
    let point = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    let device_id = match last_device {
        Some(d) if d.as_str() == id => d.clone(),
        _ => {
            let d = DeviceId::new(id);
            *last_device = Some(d.clone());
            d
        }
    };
    Sighting::new(device_id, ts, point, accuracy).map_err(|e| e.to_string())
}

pub(crate) fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

pub fn write_sightings(mut out: impl Write, sightings: &[Sighting]) -> Result<()> {
    writeln!(out, "{SIGHTINGS_HEADER}")?;
    for s in sightings {
        writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(s.device_id.as_str()),
            s.ts,
            s.point.lat(),
            s.point.lon(),
            s.accuracy_m
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub max_accuracy_m: f64,
    pub max_plausible_speed_kmh: f64,
    pub min_sightings_per_device_day: usize,
    pub require_monotone_dedupe: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            max_accuracy_m: 100.0,
            max_plausible_speed_kmh: 1000.0,
            min_sightings_per_device_day: 3,
            require_monotone_dedupe: true,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_accuracy_m > 0.0 && self.max_plausible_speed_kmh > 0.0 && self.min_sightings_per_device_day > 0) {
            return Err(Error::Config("cleaning thresholds must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Records dropped per data-quality dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub records_in: u64,
    pub records_out: u64,
    pub consistency: u64,
    pub accuracy: u64,
    pub completeness: u64,
    pub timeliness: u64,
}

impl CleaningReport {
    pub fn dropped(&self) -> u64 {
        self.consistency + self.accuracy + self.completeness + self.timeliness
    }

    pub fn balanced(&self) -> bool {
        self.records_out + self.dropped() == self.records_in
    }
}

impl AddAssign for CleaningReport {
    fn add_assign(&mut self, rhs: Self) {
        self.records_in += rhs.records_in;
        self.records_out += rhs.records_out;
        self.consistency += rhs.consistency;
        self.accuracy += rhs.accuracy;
        self.completeness += rhs.completeness;
        self.timeliness += rhs.timeliness;
    }
}

/// Sorts by `(device_id, ts)` and cleans every device independently.
pub fn clean(mut sightings: Vec<Sighting>, cfg: &CleaningConfig) -> (Vec<Sighting>, CleaningReport) {
    sightings.par_sort_by(|a, b| {
        a.device_id
            .cmp(&b.device_id)
            .then(a.ts.cmp(&b.ts))
            .then(a.accuracy_m.total_cmp(&b.accuracy_m))
            .then(a.point.lat().total_cmp(&b.point.lat()))
            .then(a.point.lon().total_cmp(&b.point.lon()))
    });
    let groups = device_ranges(&sightings);
    let cleaned: Vec<(Vec<Sighting>, CleaningReport)> = groups
        .par_iter()
        .map(|r| clean_device(sightings[r.clone()].to_vec(), cfg))
        .collect();
    let mut report = CleaningReport::default();
    let mut out = Vec::with_capacity(sightings.len());
    for (records, r) in cleaned {
        report += r;
        out.extend(records);
    }
    (out, report)
}

/// Index ranges of consecutive records sharing a device id.
pub fn device_ranges(sorted: &[Sighting]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].device_id != sorted[start].device_id {
            if i > start {
                ranges.push(start..i);
            }
            start = i;
        }
    }
    ranges
}

/// Cleans one device's records. Input must already be sorted by
/// `(ts, accuracy_m)`; [`clean`] guarantees that.
pub fn clean_device(records: Vec<Sighting>, cfg: &CleaningConfig) -> (Vec<Sighting>, CleaningReport) {
    let mut report = CleaningReport {
        records_in: records.len() as u64,
        ..Default::default()
    };

    let mut kept: Vec<Sighting> = Vec::with_capacity(records.len());
    for s in records {
        if cfg.require_monotone_dedupe {
            if let Some(last) = kept.last() {
                if last.ts == s.ts {
                    report.consistency += 1;
                    continue;
                }
            }
        }
        if s.accuracy_m > cfg.max_accuracy_m {
            report.accuracy += 1;
            continue;
        }
        kept.push(s);
    }

    let max_speed_mps = cfg.max_plausible_speed_kmh / 3.6;
    loop {
        let before = kept.len();

        let mut fast: Vec<Sighting> = Vec::with_capacity(kept.len());
        for s in kept {
            if let Some(prev) = fast.last() {
                let dt = (s.ts - prev.ts) as f64;
                let dist = haversine_distance(prev.point, s.point);
                let too_fast = if dt > 0.0 { dist / dt > max_speed_mps } else { dist > 0.0 };
                if too_fast {
                    report.timeliness += 1;
                    continue;
                }
            }
            fast.push(s);
        }

        let mut per_day: BTreeMap<i64, usize> = BTreeMap::new();
        for s in &fast {
            *per_day.entry(s.ts.div_euclid(SECONDS_PER_DAY)).or_insert(0) += 1;
        }
        let before_days = fast.len();
        fast.retain(|s| per_day[&s.ts.div_euclid(SECONDS_PER_DAY)] >= cfg.min_sightings_per_device_day);
        report.completeness += (before_days - fast.len()) as u64;

        kept = fast;
        if kept.len() == before {
            break;
        }
    }

    report.records_out = kept.len() as u64;
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination;

    fn s(dev: &str, ts: i64, lat: f64, lon: f64, acc: f64) -> Sighting {
        Sighting::new(DeviceId::new(dev), ts, GeoPoint::new(lat, lon).unwrap(), acc).unwrap()
    }

    const DAY0: i64 = 1_583_020_800; // 2020-03-01T00:00Z

    #[test]
    fn header_only_file_is_empty() {
        let parsed = parse_sightings(format!("{SIGHTINGS_HEADER}\n").as_bytes()).unwrap();
        assert!(parsed.sightings.is_empty());
        assert!(parsed.errors.is_empty());
    }

    #[test]
    fn malformed_rows_are_reported_with_line_numbers() {
        let text = format!(
            "{SIGHTINGS_HEADER}\nd1,100,38.9,-77.0,5\nd1,101,123.0,-77.0,5\nd1,abc,38.9,-77.0,5\nd1,102,38.9\nd1,103,38.9,-77.0,-1\nd2,104,38.8,-77.1,7.5\n"
        );
        let parsed = parse_sightings(text.as_bytes()).unwrap();
        assert_eq!(parsed.sightings.len(), 2);
        let lines: Vec<u64> = parsed.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![3, 4, 5, 6]);
        assert!(parsed.errors[0].message.contains("latitude"));
    }

    #[test]
    fn wrong_header_is_fatal() {
        assert!(parse_sightings("id,ts,lat,lon\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_parse_round_trips() {
        let rows = vec![s("a,b", 10, 1.5, -2.25, 3.0), s("c", 11, -0.000001, 179.999999, 12.5)];
        let mut buf = Vec::new();
        write_sightings(&mut buf, &rows).unwrap();
        let parsed = parse_sightings(buf.as_slice()).unwrap();
        assert_eq!(parsed.sightings, rows);
    }

    #[test]
    fn accuracy_cutoff() {
        let rows = vec![
            s("d", DAY0 + 10, 39.0, -77.0, 5.0),
            s("d", DAY0 + 20, 39.0, -77.0, 250.0),
            s("d", DAY0 + 30, 39.0, -77.0, 5.0),
            s("d", DAY0 + 40, 39.0, -77.0, 5.0),
        ];
        let (out, report) = clean(rows, &CleaningConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(report.accuracy, 1);
        assert!(report.balanced());
    }

    #[test]
    fn teleport_is_dropped() {
        let a = GeoPoint::new(39.0, -77.0).unwrap();
        let far = destination(a, 0.5, 500_000.0);
        let rows = vec![
            s("d", DAY0 + 100, a.lat(), a.lon(), 5.0),
            s("d", DAY0 + 160, far.lat(), far.lon(), 5.0),
            s("d", DAY0 + 200, a.lat(), a.lon(), 5.0),
            s("d", DAY0 + 300, a.lat(), a.lon(), 5.0),
        ];
        let (out, report) = clean(rows, &CleaningConfig::default());
        assert_eq!(report.timeliness, 1);
        assert_eq!(out.iter().map(|s| s.ts - DAY0).collect::<Vec<_>>(), vec![100, 200, 300]);
    }

    #[test]
    fn duplicates_and_sparse_days() {
        let rows = vec![
            s("d", DAY0 + 10, 39.0, -77.0, 9.0),
            s("d", DAY0 + 10, 39.0, -77.0, 4.0),
            s("d", DAY0 + 20, 39.0, -77.0, 5.0),
            s("d", DAY0 + 30, 39.0, -77.0, 5.0),
            // next day: only two records
            s("d", DAY0 + SECONDS_PER_DAY + 5, 39.0, -77.0, 5.0),
            s("d", DAY0 + SECONDS_PER_DAY + 6, 39.0, -77.0, 5.0),
        ];
        let (out, report) = clean(rows, &CleaningConfig::default());
        assert_eq!(report.consistency, 1);
        assert_eq!(report.completeness, 2);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].accuracy_m, 4.0);
        assert!(report.balanced());
    }

    #[test]
    fn clean_is_idempotent_after_day_removal() {
        let a = GeoPoint::new(39.0, -77.0).unwrap();
        let b = destination(a, 1.0, 2_000_000.0);
        let mut rows: Vec<Sighting> = (0..3).map(|i| s("d", DAY0 + 100 + i, a.lat(), a.lon(), 5.0)).collect();
        rows.push(s("d", DAY0 + SECONDS_PER_DAY + 100, b.lat(), b.lon(), 5.0));
        rows.push(s("d", DAY0 + 2 * SECONDS_PER_DAY, b.lat(), b.lon(), 5.0));
        rows.extend((1..4).map(|i| s("d", DAY0 + 2 * SECONDS_PER_DAY + 60 * i, b.lat(), b.lon(), 5.0)));
        let cfg = CleaningConfig::default();
        let (once, report) = clean(rows, &cfg);
        assert!(report.balanced());
        let (twice, report2) = clean(once.clone(), &cfg);
        assert_eq!(once, twice);
        assert_eq!(report2.dropped(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(CleaningConfig::default().validate().is_ok());
        let bad = CleaningConfig {
            max_accuracy_m: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
