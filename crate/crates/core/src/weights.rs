//! Expansion weights: persons per device by home county, and per-state trip
//! factors calibrated to target trip rates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::activity::DeviceProfile;
use crate::calendar::local_date;
use crate::error::{Error, Result};
use crate::geo::ZoneIndex;
use crate::ingest::{csv_field, DeviceId, Sighting};
use crate::trips::Trip;

pub const COUNTY_WEIGHTS_HEADER: &str = "county_id,state_id,population,devices,weight";
pub const TRIP_FACTORS_HEADER: &str = "state_id,observed_rate,target_rate,factor";

/// Trips per person per weekday used for states without an explicit target.
pub const DEFAULT_TARGET_RATE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CountyWeight {
    pub county_id: Arc<str>,
    pub state_id: Arc<str>,
    pub population: u64,
    pub devices: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceWeights {
    pub counties: Vec<CountyWeight>,
    pub devices: BTreeMap<DeviceId, f64>,
    /// Counties with residents but no profiled device; they cannot be
    /// represented and are left out of every aggregate.
    pub unrepresented: Vec<Arc<str>>,
}

impl DeviceWeights {
    pub fn weight(&self, device: &DeviceId) -> Option<f64> {
        self.devices.get(device).copied()
    }
}

/// County population divided by the number of devices living there.
pub fn county_device_weights(profiles: &[DeviceProfile], zones: &ZoneIndex) -> Result<DeviceWeights> {
    let mut home_county: Vec<(&DeviceId, Arc<str>)> = Vec::with_capacity(profiles.len());
    let mut counts: BTreeMap<Arc<str>, usize> = BTreeMap::new();
    for p in profiles {
        let zone = zones
            .zone(&p.home_zone)
            .ok_or_else(|| Error::Input(format!("device {} has unknown home zone {}", p.device_id, p.home_zone)))?;
        *counts.entry(zone.county_id.clone()).or_insert(0) += 1;
        home_county.push((&p.device_id, zone.county_id.clone()));
    }
    let mut out = DeviceWeights::default();
    let mut by_county: HashMap<Arc<str>, f64> = HashMap::new();
    for (county, population) in zones.county_populations() {
        let devices = counts.get(&county).copied().unwrap_or(0);
        if devices == 0 {
            if population > 0 {
                log::warn!("county {county} has population {population} but no devices; excluded");
                out.unrepresented.push(county.clone());
            }
            continue;
        }
        let weight = population as f64 / devices as f64;
        by_county.insert(county.clone(), weight);
        out.counties.push(CountyWeight {
            state_id: zones.county_state(&county).expect("county from the same index"),
            county_id: county,
            population,
            devices,
            weight,
        });
    }
    for (device, county) in home_county {
        out.devices.insert(device.clone(), by_county[&county]);
    }
    Ok(out)
}

/// Local dates on which each device was observed, in its home zone's time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Presence {
    pub days: HashMap<DeviceId, BTreeSet<NaiveDate>>,
}

impl Presence {
    pub fn from_sightings(sightings: &[Sighting], profiles: &[DeviceProfile], zones: &ZoneIndex) -> Self {
        let offsets: HashMap<&DeviceId, i32> = profiles
            .iter()
            .map(|p| (&p.device_id, zones.zone(&p.home_zone).map_or(0, |z| z.utc_offset_s())))
            .collect();
        let mut days: HashMap<DeviceId, BTreeSet<NaiveDate>> = HashMap::new();
        let mut current: Option<(&DeviceId, i32)> = None;
        for s in sightings {
            let offset = match current {
                Some((d, o)) if *d == s.device_id => o,
                _ => match offsets.get(&s.device_id) {
                    Some(&o) => {
                        current = Some((&s.device_id, o));
                        o
                    }
                    None => continue,
                },
            };
            days.entry(s.device_id.clone()).or_default().insert(local_date(s.ts, offset));
        }
        Self { days }
    }

    pub fn observed(&self, device: &DeviceId, date: NaiveDate) -> bool {
        self.days.get(device).is_some_and(|d| d.contains(&date))
    }

    pub fn all_dates(&self) -> BTreeSet<NaiveDate> {
        self.days.values().flatten().copied().collect()
    }
}

/// Local departure date of a trip in the traveller's home time.
pub fn trip_date(trip: &Trip, home_offset_s: i32) -> NaiveDate {
    local_date(trip.departure_ts, home_offset_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetRates(pub BTreeMap<String, f64>);

impl TargetRates {
    pub fn rate(&self, state: &str) -> f64 {
        self.0.get(state).copied().unwrap_or(DEFAULT_TARGET_RATE)
    }

    pub fn validate(&self) -> Result<()> {
        match self.0.iter().find(|(_, r)| !r.is_finite() || **r < 0.0) {
            Some((s, r)) => Err(Error::Config(format!("target rate {r} for {s} must be finite and non-negative"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripFactor {
    pub state_id: Arc<str>,
    pub observed_rate: f64,
    pub target_rate: f64,
    pub factor: f64,
}

/// Calibrates each state's weighted trip rate over `window` to its target.
/// The observed rate is weighted trips by residents over weighted in-panel
/// residents, both summed across the window's days.
pub fn state_trip_weights(
    trips: &[Trip],
    profiles: &[DeviceProfile],
    weights: &DeviceWeights,
    presence: &Presence,
    zones: &ZoneIndex,
    targets: &TargetRates,
    window: &[NaiveDate],
) -> Result<Vec<TripFactor>> {
    let window: BTreeSet<NaiveDate> = window.iter().copied().collect();
    let mut residents: HashMap<&DeviceId, (Arc<str>, i32)> = HashMap::new();
    let mut persons: BTreeMap<Arc<str>, f64> = BTreeMap::new();
    let mut trip_sum: BTreeMap<Arc<str>, f64> = BTreeMap::new();
    for p in profiles {
        let Some(w) = weights.weight(&p.device_id) else {
            continue;
        };
        let zone = zones
            .zone(&p.home_zone)
            .ok_or_else(|| Error::Input(format!("unknown home zone {}", p.home_zone)))?;
        residents.insert(&p.device_id, (zone.state_id.clone(), zone.utc_offset_s()));
        trip_sum.entry(zone.state_id.clone()).or_insert(0.0);
        let days = window.iter().filter(|d| presence.observed(&p.device_id, **d)).count();
        *persons.entry(zone.state_id.clone()).or_insert(0.0) += w * days as f64;
    }
    for t in trips {
        let Some((state, offset)) = residents.get(&t.device_id) else {
            continue;
        };
        let date = trip_date(t, *offset);
        if window.contains(&date) && presence.observed(&t.device_id, date) {
            *trip_sum.get_mut(state).expect("state registered") += weights.devices[&t.device_id];
        }
    }
    let mut out = Vec::new();
    for (state, trips_w) in trip_sum {
        let persons_w = persons[&state];
        let target_rate = targets.rate(&state);
        let observed_rate = if persons_w > 0.0 { trips_w / persons_w } else { 0.0 };
        let factor = if observed_rate > 0.0 {
            target_rate / observed_rate
        } else if target_rate == 0.0 {
            1.0
        } else {
            return Err(Error::Missing(format!(
                "state {state} has no weighted trips in the calibration window"
            )));
        };
        out.push(TripFactor {
            state_id: state,
            observed_rate,
            target_rate,
            factor,
        });
    }
    Ok(out)
}

pub fn write_county_weights(mut out: impl Write, weights: &DeviceWeights) -> Result<()> {
    writeln!(out, "{COUNTY_WEIGHTS_HEADER}")?;
    for c in &weights.counties {
        writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&c.county_id),
            csv_field(&c.state_id),
            c.population,
            c.devices,
            c.weight
        )?;
    }
    Ok(())
}

/// Reads county weights and expands them to devices through their profiles.
pub fn read_county_weights(source: impl Read, profiles: &[DeviceProfile], zones: &ZoneIndex) -> Result<DeviceWeights> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != COUNTY_WEIGHTS_HEADER {
        return Err(Error::Input(format!("county weights header must be `{COUNTY_WEIGHTS_HEADER}`")));
    }
    let mut out = DeviceWeights::default();
    let mut by_county: HashMap<Arc<str>, f64> = HashMap::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Input(format!("county weights row {}: bad value", row + 2));
        let c = CountyWeight {
            county_id: Arc::from(&rec[0]),
            state_id: Arc::from(&rec[1]),
            population: rec[2].parse().map_err(|_| bad())?,
            devices: rec[3].parse().map_err(|_| bad())?,
            weight: rec[4].parse().map_err(|_| bad())?,
        };
        by_county.insert(c.county_id.clone(), c.weight);
        out.counties.push(c);
    }
    for p in profiles {
        let county = zones
            .zone(&p.home_zone)
            .map(|z| z.county_id.clone())
            .ok_or_else(|| Error::Input(format!("unknown home zone {}", p.home_zone)))?;
        if let Some(w) = by_county.get(&county) {
            out.devices.insert(p.device_id.clone(), *w);
        }
    }
    Ok(out)
}

pub fn write_trip_factors(mut out: impl Write, factors: &[TripFactor]) -> Result<()> {
    writeln!(out, "{TRIP_FACTORS_HEADER}")?;
    for f in factors {
        writeln!(out, "{},{},{},{}", csv_field(&f.state_id), f.observed_rate, f.target_rate, f.factor)?;
    }
    Ok(())
}

pub fn read_trip_factors(source: impl Read) -> Result<Vec<TripFactor>> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != TRIP_FACTORS_HEADER {
        return Err(Error::Input(format!("trip factors header must be `{TRIP_FACTORS_HEADER}`")));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("trip factors row {}: bad number", row + 2)))
        };
        out.push(TripFactor {
            state_id: Arc::from(&rec[0]),
            observed_rate: num(1)?,
            target_rate: num(2)?,
            factor: num(3)?,
        });
    }
    Ok(out)
}
