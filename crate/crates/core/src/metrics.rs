//! Daily population-weighted mobility metrics per county, state and nation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::activity::DeviceProfile;
use crate::calendar::is_weekday;
use crate::error::{Error, Result};
use crate::geo::{ZoneId, ZoneIndex};
use crate::ingest::{csv_field, DeviceId};
use crate::trips::Trip;
use crate::weights::{trip_date, DeviceWeights, Presence, TripFactor};

pub const METRICS_HEADER: &str = "date,level,geo_id,pct_staying_home,work_trips_pp,nonwork_trips_pp,trips_pp,miles_pp,pct_out_of_county";
pub const BENCHMARK_HEADER: &str = "level,geo_id,pct_staying_home,work_trips_pp,nonwork_trips_pp,trips_pp,miles_pp,pct_out_of_county";

pub const MILES_PER_METRE: f64 = 0.000621371;
pub const NATION_ID: &str = "US";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    County,
    State,
    Nation,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::County => "county",
            Self::State => "state",
            Self::Nation => "nation",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "county" => Ok(Self::County),
            "state" => Ok(Self::State),
            "nation" => Ok(Self::Nation),
            other => Err(Error::Input(format!("unknown level `{other}`"))),
        }
    }
}

/// A geography at one level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Geography {
    pub level: Level,
    pub geo_id: Arc<str>,
}

impl Geography {
    pub fn new(level: Level, geo_id: &str) -> Self {
        Self {
            level,
            geo_id: Arc::from(geo_id),
        }
    }

    pub fn nation() -> Self {
        Self::new(Level::Nation, NATION_ID)
    }
}

/// The five metrics plus their trip total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    pub pct_staying_home: f64,
    pub work_trips_pp: f64,
    pub nonwork_trips_pp: f64,
    pub trips_pp: f64,
    pub miles_pp: f64,
    pub pct_out_of_county: f64,
}

impl MetricValues {
    fn fields(&self) -> [f64; 6] {
        [
            self.pct_staying_home,
            self.work_trips_pp,
            self.nonwork_trips_pp,
            self.trips_pp,
            self.miles_pp,
            self.pct_out_of_county,
        ]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Self {
            pct_staying_home: f[0],
            work_trips_pp: f[1],
            nonwork_trips_pp: f[2],
            trips_pp: f[3],
            miles_pp: f[4],
            pct_out_of_county: f[5],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyMetrics {
    pub date: NaiveDate,
    pub geo: Geography,
    pub values: MetricValues,
}

/// Weighted sums behind one geography-day. Ratios are taken only at the end
/// so that roll-ups are plain additions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Tally {
    pub persons: f64,
    pub home_persons: f64,
    pub work_trips: f64,
    pub nonwork_trips: f64,
    pub miles: f64,
    pub out_of_county_trips: f64,
}

impl std::ops::AddAssign for Tally {
    fn add_assign(&mut self, o: Self) {
        self.persons += o.persons;
        self.home_persons += o.home_persons;
        self.work_trips += o.work_trips;
        self.nonwork_trips += o.nonwork_trips;
        self.miles += o.miles;
        self.out_of_county_trips += o.out_of_county_trips;
    }
}

impl Tally {
    /// `None` when nobody is in the panel.
    pub fn metrics(&self) -> Option<MetricValues> {
        if self.persons <= 0.0 {
            return None;
        }
        let work = self.work_trips / self.persons;
        let nonwork = self.nonwork_trips / self.persons;
        let trips = self.work_trips + self.nonwork_trips;
        Some(MetricValues {
            pct_staying_home: self.home_persons / self.persons,
            work_trips_pp: work,
            nonwork_trips_pp: nonwork,
            trips_pp: work + nonwork,
            miles_pp: self.miles / self.persons,
            pct_out_of_county: if trips > 0.0 { self.out_of_county_trips / trips } else { 0.0 },
        })
    }
}

/// Who counts as present on a day when computing the staying-home share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelRule {
    /// Devices with at least one cleaned sighting that local day.
    #[default]
    Observed,
    /// Every profiled device, every day.
    AllProfiled,
}

pub struct MetricsInput<'a> {
    pub trips: &'a [Trip],
    pub profiles: &'a [DeviceProfile],
    pub weights: &'a DeviceWeights,
    pub factors: &'a [TripFactor],
    pub presence: &'a Presence,
    pub zones: &'a ZoneIndex,
    pub panel: PanelRule,
}

struct Resident<'a> {
    county: Arc<str>,
    offset_s: i32,
    work_zone: Option<&'a ZoneId>,
    weight: f64,
    factor: f64,
}

/// County-level tallies for every weekday with presence data.
pub fn county_tallies(input: &MetricsInput<'_>) -> Result<BTreeMap<(NaiveDate, Arc<str>), Tally>> {
    let factors: HashMap<&str, f64> = input.factors.iter().map(|f| (&*f.state_id, f.factor)).collect();
    let mut residents: HashMap<&DeviceId, Resident<'_>> = HashMap::new();
    for p in input.profiles {
        let Some(weight) = input.weights.weight(&p.device_id) else {
            continue;
        };
        let zone = input
            .zones
            .zone(&p.home_zone)
            .ok_or_else(|| Error::Input(format!("unknown home zone {}", p.home_zone)))?;
        let factor = *factors
            .get(&*zone.state_id)
            .ok_or_else(|| Error::Missing(format!("no trip factor for state {}", zone.state_id)))?;
        residents.insert(
            &p.device_id,
            Resident {
                county: zone.county_id.clone(),
                offset_s: zone.utc_offset_s(),
                work_zone: p.work_zone.as_ref(),
                weight,
                factor,
            },
        );
    }

    let dates: BTreeSet<NaiveDate> = input.presence.all_dates().into_iter().filter(|d| is_weekday(*d)).collect();
    let mut travelled: HashSet<(&DeviceId, NaiveDate)> = HashSet::new();
    let mut out: BTreeMap<(NaiveDate, Arc<str>), Tally> = BTreeMap::new();
    let in_panel = |device: &DeviceId, date: NaiveDate| match input.panel {
        PanelRule::Observed => input.presence.observed(device, date),
        PanelRule::AllProfiled => true,
    };

    let county_of = |z: &Option<ZoneId>| z.as_ref().and_then(|z| input.zones.zone(z)).map(|z| &z.county_id);
    for t in input.trips {
        let Some(r) = residents.get(&t.device_id) else {
            continue;
        };
        let date = trip_date(t, r.offset_s);
        if !dates.contains(&date) || !in_panel(&t.device_id, date) {
            continue;
        }
        travelled.insert((&t.device_id, date));
        let w = r.weight * r.factor;
        let tally = out.entry((date, r.county.clone())).or_default();
        let is_work = r
            .work_zone
            .is_some_and(|wz| t.o_zone.as_ref() == Some(wz) || t.d_zone.as_ref() == Some(wz));
        if is_work {
            tally.work_trips += w;
        } else {
            tally.nonwork_trips += w;
        }
        tally.miles += w * t.distance_m * MILES_PER_METRE;
        let crosses = match (county_of(&t.o_zone), county_of(&t.d_zone)) {
            (Some(a), Some(b)) => a != b,
            _ => true,
        };
        if crosses {
            tally.out_of_county_trips += w;
        }
    }

    let mut devices: Vec<(&&DeviceId, &Resident<'_>)> = residents.iter().collect();
    devices.sort_by(|a, b| a.0.cmp(b.0));
    for (device, r) in devices {
        for &date in &dates {
            if !in_panel(device, date) {
                continue;
            }
            let tally = out.entry((date, r.county.clone())).or_default();
            tally.persons += r.weight;
            if !travelled.contains(&(*device, date)) {
                tally.home_persons += r.weight;
            }
        }
    }
    Ok(out)
}

/// Rolls county tallies up to states and the nation.
pub fn roll_up(county: &BTreeMap<(NaiveDate, Arc<str>), Tally>, zones: &ZoneIndex) -> BTreeMap<(NaiveDate, Geography), Tally> {
    let mut out: BTreeMap<(NaiveDate, Geography), Tally> = BTreeMap::new();
    for ((date, county_id), tally) in county {
        let state = zones.county_state(county_id).expect("county known to the zone index");
        *out.entry((*date, Geography::new(Level::County, county_id))).or_default() += *tally;
        *out.entry((*date, Geography::new(Level::State, &state))).or_default() += *tally;
        *out.entry((*date, Geography::nation())).or_default() += *tally;
    }
    out
}

/// Daily metrics at every level, sorted by date, level and geography.
/// Geography-days without weighted persons are omitted.
pub fn daily_metrics(input: &MetricsInput<'_>) -> Result<Vec<DailyMetrics>> {
    let tallies = roll_up(&county_tallies(input)?, input.zones);
    let mut out = Vec::with_capacity(tallies.len());
    for ((date, geo), tally) in tallies {
        match tally.metrics() {
            Some(values) => out.push(DailyMetrics { date, geo, values }),
            None => log::info!("{date} {} {}: no weighted persons, row omitted", geo.level, geo.geo_id),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub geo: Geography,
    pub values: MetricValues,
}

/// Mean of each metric over the benchmark dates, per geography.
pub fn compute_benchmark(metrics: &[DailyMetrics], dates: &[NaiveDate]) -> Result<Vec<Benchmark>> {
    if dates.is_empty() {
        return Err(Error::Config("benchmark needs at least one date".into()));
    }
    if let Some(d) = dates.iter().find(|d| !is_weekday(**d)) {
        return Err(Error::Config(format!("benchmark date {d} is not a weekday")));
    }
    let wanted: BTreeSet<NaiveDate> = dates.iter().copied().collect();
    let mut rows: BTreeMap<&Geography, BTreeMap<NaiveDate, &MetricValues>> = BTreeMap::new();
    for m in metrics {
        let entry = rows.entry(&m.geo).or_default();
        if wanted.contains(&m.date) {
            entry.insert(m.date, &m.values);
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for (geo, by_date) in rows {
        if let Some(missing) = wanted.iter().find(|d| !by_date.contains_key(d)) {
            return Err(Error::Missing(format!(
                "no metrics for {} {} on benchmark date {missing}",
                geo.level, geo.geo_id
            )));
        }
        let mut sum = [0.0; 6];
        for v in by_date.values() {
            for (s, x) in sum.iter_mut().zip(v.fields()) {
                *s += x;
            }
        }
        let n = wanted.len() as f64;
        out.push(Benchmark {
            geo: geo.clone(),
            values: MetricValues::from_fields(sum.map(|s| s / n)),
        });
    }
    Ok(out)
}

fn write_values(out: &mut impl Write, v: &MetricValues) -> std::io::Result<()> {
    let f = v.fields();
    writeln!(out, "{},{},{},{},{},{}", f[0], f[1], f[2], f[3], f[4], f[5])
}

pub fn write_metrics(mut out: impl Write, metrics: &[DailyMetrics]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        write!(out, "{},{},{},", m.date, m.geo.level, csv_field(&m.geo.geo_id))?;
        write_values(&mut out, &m.values)?;
    }
    Ok(())
}

pub fn write_benchmark(mut out: impl Write, benchmark: &[Benchmark]) -> Result<()> {
    writeln!(out, "{BENCHMARK_HEADER}")?;
    for b in benchmark {
        write!(out, "{},{},", b.geo.level, csv_field(&b.geo.geo_id))?;
        write_values(&mut out, &b.values)?;
    }
    Ok(())
}

fn read_rows(source: impl Read, header: &str, with_date: bool) -> Result<Vec<(Option<NaiveDate>, Geography, MetricValues)>> {
    let mut reader = csv::Reader::from_reader(source);
    let got: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if got.join(",") != header {
        return Err(Error::Input(format!("expected header `{header}`")));
    }
    let skip = usize::from(with_date);
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Input(format!("row {}: bad value", row + 2));
        let date = if with_date {
            Some(rec[0].parse::<NaiveDate>().map_err(|_| bad())?)
        } else {
            None
        };
        let geo = Geography::new(rec[skip].parse()?, &rec[skip + 1]);
        let mut f = [0.0; 6];
        for (k, slot) in f.iter_mut().enumerate() {
            *slot = rec[skip + 2 + k].parse().map_err(|_| bad())?;
        }
        out.push((date, geo, MetricValues::from_fields(f)));
    }
    Ok(out)
}

pub fn read_metrics(source: impl Read) -> Result<Vec<DailyMetrics>> {
    Ok(read_rows(source, METRICS_HEADER, true)?
        .into_iter()
        .map(|(date, geo, values)| DailyMetrics {
            date: date.expect("dated rows"),
            geo,
            values,
        })
        .collect())
}

pub fn read_benchmark(source: impl Read) -> Result<Vec<Benchmark>> {
    Ok(read_rows(source, BENCHMARK_HEADER, false)?
        .into_iter()
        .map(|(_, geo, values)| Benchmark { geo, values })
        .collect())
}
