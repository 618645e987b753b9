//! Cumulative case counts: differencing, roll-ups and the join with SDI.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::is_weekday;
use crate::error::{Error, Result};
use crate::geo::ZoneIndex;
use crate::ingest::csv_field;
use crate::metrics::{Geography, Level};
use crate::phase::split_at_pivot;
use crate::sdi::SdiSeries;

pub const JOINED_HEADER: &str = "date,geo_id,sdi_smoothed,new_confirmed,new_per_thousand";
pub const FIGURE_TABLE_HEADER: &str = "state,sdi_before,sdi_after,cases_before_per_k,cases_after_per_k";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseColumns {
    /// Column holding the county identifier used by the zone file.
    pub county: String,
}

impl Default for CaseColumns {
    fn default() -> Self {
        Self {
            county: "county_id".into(),
        }
    }
}

/// Accepts ISO dates and the `M/D/YY` form used by public case feeds.
pub fn parse_date_header(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = s.parse::<NaiveDate>() {
        return Some(d);
    }
    let mut parts = s.split('/');
    let (m, d, y) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let (m, d, y): (u32, u32, i32) = (m.parse().ok()?, d.parse().ok()?, y.parse().ok()?);
    let y = if y < 100 { 2000 + y } else { y };
    NaiveDate::from_ymd_opt(y, m, d)
}

/// One county's cumulative series as read.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeSeries {
    pub county_id: Arc<str>,
    pub cumulative: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedCases {
    pub dates: Vec<NaiveDate>,
    pub series: Vec<CumulativeSeries>,
    /// Skipped rows as (line, message).
    pub issues: Vec<(u64, String)>,
}

/// Reads a wide cumulative file: key columns, then one column per date.
pub fn parse_cases(source: impl Read, columns: &CaseColumns) -> Result<ParsedCases> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let key = header
        .iter()
        .position(|h| *h == columns.county)
        .ok_or_else(|| Error::Input(format!("cases file has no `{}` column", columns.county)))?;
    let date_cols: Vec<(usize, NaiveDate)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| parse_date_header(h).map(|d| (i, d)))
        .collect();
    if let Some(w) = date_cols.windows(2).find(|w| w[1].1 <= w[0].1) {
        return Err(Error::Input(format!("case date columns out of order at {}", w[1].1)));
    }
    let mut out = ParsedCases {
        dates: date_cols.iter().map(|c| c.1).collect(),
        ..ParsedCases::default()
    };
    for (row, rec) in reader.records().enumerate() {
        let line = row as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                out.issues.push((line, e.to_string()));
                continue;
            }
        };
        let values: std::result::Result<Vec<u64>, String> = date_cols
            .iter()
            .map(|(i, d)| {
                let cell = rec.get(*i).unwrap_or("").trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0 && v.fract() == 0.0)
                    .map(|v| v as u64)
                    .ok_or_else(|| format!("bad count `{cell}` for {d}"))
            })
            .collect();
        match values {
            Ok(cumulative) => out.series.push(CumulativeSeries {
                county_id: Arc::from(rec.get(key).unwrap_or("")),
                cumulative,
            }),
            Err(msg) => out.issues.push((line, msg)),
        }
    }
    Ok(out)
}

/// Day-over-day differences with negative corrections clamped to zero.
/// Returns `(new, clamps)`; the corrected cumulative is the running maximum,
/// so the new counts always sum to its final value.
pub fn difference(cumulative: &[u64]) -> (Vec<u64>, usize) {
    let mut clamps = 0;
    let mut level = 0u64;
    let new = cumulative
        .iter()
        .map(|&c| {
            if c < level {
                clamps += 1;
                0
            } else {
                let d = c - level;
                level = c;
                d
            }
        })
        .collect();
    (new, clamps)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseSeries {
    pub geo: Geography,
    pub population: u64,
    pub dates: Vec<NaiveDate>,
    pub cumulative: Vec<u64>,
    pub new_confirmed: Vec<u64>,
}

impl CaseSeries {
    pub fn new_per_thousand(&self, i: usize) -> f64 {
        if self.population == 0 {
            0.0
        } else {
            self.new_confirmed[i] as f64 * 1000.0 / self.population as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaseTable {
    pub series: Vec<CaseSeries>,
    pub clamps: usize,
    pub unknown_counties: Vec<Arc<str>>,
}

/// County series for counties known to the zone file, plus state and
/// national sums.
pub fn build_case_table(parsed: &ParsedCases, zones: &ZoneIndex) -> CaseTable {
    let pops = zones.county_populations();
    let state_pops = zones.state_populations();
    let mut table = CaseTable::default();
    let n = parsed.dates.len();
    let mut sums: BTreeMap<Geography, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    let mut counties: BTreeMap<Arc<str>, (Vec<u64>, Vec<u64>)> = BTreeMap::new();
    for s in &parsed.series {
        let Some(state) = zones.county_state(&s.county_id) else {
            log::warn!("cases for unknown county {} skipped", s.county_id);
            table.unknown_counties.push(s.county_id.clone());
            continue;
        };
        let (new, clamps) = difference(&s.cumulative);
        table.clamps += clamps;
        let corrected: Vec<u64> = new
            .iter()
            .scan(0u64, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        let county = counties.entry(s.county_id.clone()).or_insert_with(|| (vec![0; n], vec![0; n]));
        for g in [Geography::new(Level::State, &state), Geography::nation()] {
            let e = sums.entry(g).or_insert_with(|| (vec![0; n], vec![0; n]));
            for i in 0..n {
                e.0[i] += corrected[i];
                e.1[i] += new[i];
            }
        }
        for i in 0..n {
            county.0[i] += corrected[i];
            county.1[i] += new[i];
        }
    }
    for (county_id, (cumulative, new_confirmed)) in counties {
        table.series.push(CaseSeries {
            population: pops.get(&county_id).copied().unwrap_or(0),
            geo: Geography::new(Level::County, &county_id),
            dates: parsed.dates.clone(),
            cumulative,
            new_confirmed,
        });
    }
    for (geo, (cumulative, new_confirmed)) in sums {
        let population = match geo.level {
            Level::State => state_pops.get(&geo.geo_id).copied().unwrap_or(0),
            _ => state_pops.values().sum(),
        };
        table.series.push(CaseSeries {
            geo,
            population,
            dates: parsed.dates.clone(),
            cumulative,
            new_confirmed,
        });
    }
    table.series.sort_by(|a, b| a.geo.cmp(&b.geo));
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinedRow {
    pub date: NaiveDate,
    pub geo: Geography,
    pub sdi_smoothed: f64,
    pub new_confirmed: u64,
    pub new_per_thousand: f64,
}

/// Inner join of case and SDI series on geography and weekday date.
pub fn join_with_sdi(cases: &CaseTable, sdi: &[SdiSeries]) -> Vec<JoinedRow> {
    let by_geo: BTreeMap<&Geography, &CaseSeries> = cases.series.iter().map(|s| (&s.geo, s)).collect();
    let mut out = Vec::new();
    for s in sdi {
        let Some(c) = by_geo.get(&s.geo) else {
            log::info!("no case series for {} {}", s.geo.level, s.geo.geo_id);
            continue;
        };
        let index: BTreeMap<NaiveDate, usize> = c.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let before = out.len();
        for (k, date) in s.dates.iter().enumerate() {
            if let Some(&i) = index.get(date).filter(|_| is_weekday(*date)) {
                out.push(JoinedRow {
                    date: *date,
                    geo: s.geo.clone(),
                    sdi_smoothed: s.smoothed[k],
                    new_confirmed: c.new_confirmed[i],
                    new_per_thousand: c.new_per_thousand(i),
                });
            }
        }
        if out.len() == before {
            log::warn!("case and SDI dates do not overlap for {}", s.geo.geo_id);
        }
    }
    let sdi_geos: BTreeSet<&Geography> = sdi.iter().map(|s| &s.geo).collect();
    for g in by_geo.keys().filter(|g| !sdi_geos.contains(*g)) {
        log::info!("no SDI series for cases of {} {}", g.level, g.geo_id);
    }
    out.sort_by(|a, b| a.date.cmp(&b.date).then_with(|| a.geo.cmp(&b.geo)));
    out
}

/// Week-before and week-after means of SDI and daily new cases per thousand
/// for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateComparison {
    pub state: Arc<str>,
    pub sdi_before: f64,
    pub sdi_after: f64,
    pub cases_before_per_k: f64,
    pub cases_after_per_k: f64,
}

/// Per-state before/after table. `use_smoothed` selects which SDI column is
/// averaged; case means use the joined weekday rows around the same pivot.
pub fn state_comparison(
    joined: &[JoinedRow],
    sdi: &[SdiSeries],
    pivot: NaiveDate,
    days: usize,
    use_smoothed: bool,
) -> Vec<StateComparison> {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let mut out = Vec::new();
    for s in sdi.iter().filter(|s| s.geo.level == Level::State) {
        let values = if use_smoothed { &s.smoothed } else { &s.sdi };
        let Ok((sb, sa)) = split_at_pivot(&s.dates, values, pivot, days) else {
            log::warn!("state {}: not enough SDI around {pivot}", s.geo.geo_id);
            continue;
        };
        let rows: Vec<&JoinedRow> = joined.iter().filter(|r| r.geo == s.geo).collect();
        let dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
        let per_k: Vec<f64> = rows.iter().map(|r| r.new_per_thousand).collect();
        let Ok((cb, ca)) = split_at_pivot(&dates, &per_k, pivot, days) else {
            log::warn!("state {}: not enough case data around {pivot}", s.geo.geo_id);
            continue;
        };
        out.push(StateComparison {
            state: s.geo.geo_id.clone(),
            sdi_before: mean(sb),
            sdi_after: mean(sa),
            cases_before_per_k: mean(cb),
            cases_after_per_k: mean(ca),
        });
    }
    out
}

pub fn write_joined(mut out: impl Write, rows: &[JoinedRow]) -> Result<()> {
    writeln!(out, "{JOINED_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.date,
            csv_field(&r.geo.geo_id),
            r.sdi_smoothed,
            r.new_confirmed,
            r.new_per_thousand
        )?;
    }
    Ok(())
}

pub fn write_state_comparison(mut out: impl Write, rows: &[StateComparison]) -> Result<()> {
    writeln!(out, "{FIGURE_TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.state),
            r.sdi_before,
            r.sdi_after,
            r.cases_before_per_k,
            r.cases_after_per_k
        )?;
    }
    Ok(())
}

pub fn read_state_comparison(source: impl Read) -> Result<Vec<StateComparison>> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != FIGURE_TABLE_HEADER {
        return Err(Error::Input(format!("comparison header must be `{FIGURE_TABLE_HEADER}`")));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("comparison row {}: bad number", row + 2)))
        };
        out.push(StateComparison {
            state: Arc::from(&rec[0]),
            sdi_before: num(1)?,
            sdi_after: num(2)?,
            cases_before_per_k: num(3)?,
            cases_after_per_k: num(4)?,
        });
    }
    Ok(out)
}

/// Writes county cumulative counts in the wide layout read by
/// [`parse_cases`], with a state column after the county column.
pub fn write_wide_cases(mut out: impl Write, dates: &[NaiveDate], rows: &[(Arc<str>, Arc<str>, Vec<u64>)]) -> Result<()> {
    write!(out, "county_id,state_id")?;
    for d in dates {
        write!(out, ",{d}")?;
    }
    writeln!(out)?;
    for (county, state, values) in rows {
        write!(out, "{},{}", csv_field(county), csv_field(state))?;
        for v in values {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::ymd;

    #[test]
    fn differencing() {
        assert_eq!(difference(&[0, 5, 12]), (vec![0, 5, 7], 0));
        assert_eq!(difference(&[10, 8]), (vec![10, 0], 1));
        let (new, clamps) = difference(&[10, 8, 12]);
        assert_eq!((new.iter().sum::<u64>(), clamps), (12, 1));
    }

    #[test]
    fn date_headers() {
        assert_eq!(parse_date_header("2020-04-15"), Some(ymd(2020, 4, 15)));
        assert_eq!(parse_date_header("4/15/20"), Some(ymd(2020, 4, 15)));
        assert_eq!(parse_date_header("county_id"), None);
        assert_eq!(parse_date_header("1/2/3/4"), None);
    }

    #[test]
    fn parse_reports_bad_rows_and_rejects_disorder() {
        let text = "county_id,state_id,1/22/20,1/23/20\nC1,S1,0,3\nC2,S1,x,4\n";
        let p = parse_cases(text.as_bytes(), &CaseColumns::default()).unwrap();
        assert_eq!(p.series.len(), 1);
        assert_eq!(p.issues.len(), 1);
        assert_eq!(p.issues[0].0, 3);
        let bad = "county_id,1/23/20,1/22/20\nC1,0,3\n";
        assert!(parse_cases(bad.as_bytes(), &CaseColumns::default()).is_err());
        let nokey = "fips,1/23/20\n1,0\n";
        assert!(parse_cases(nokey.as_bytes(), &CaseColumns::default()).is_err());
    }

    #[test]
    fn wide_round_trip() {
        let dates = vec![ymd(2020, 3, 1), ymd(2020, 3, 2)];
        let rows = vec![("C1".into(), "S1".into(), vec![1, 4]), ("C2".into(), "S1".into(), vec![0, 2])];
        let mut buf = Vec::new();
        write_wide_cases(&mut buf, &dates, &rows).unwrap();
        let p = parse_cases(buf.as_slice(), &CaseColumns::default()).unwrap();
        assert_eq!(p.dates, dates);
        assert_eq!(p.series[1].cumulative, vec![0, 2]);
    }
}
