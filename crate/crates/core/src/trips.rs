//! Trip segmentation.
//!
//! Points are visited in time order. A point whose speed from its
//! predecessor reaches the speed threshold is on the move and joins the
//! ongoing trip, or opens one that departs from its predecessor. A slow point
//! that is displaced from its predecessor by more than the distance threshold
//! does not join. Otherwise the device is at a stop anchored at the first
//! observation of the stop: while it stays within the distance threshold of
//! the anchor for less than the time threshold the points remain in the trip;
//! reaching the time threshold (or leaving the stop area without moving)
//! ends the trip at the anchor and releases the stop points as static.
//! A trip still open at the end of the trace is closed the same way.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GeoPoint, ZoneId, ZoneIndex};
use crate::ingest::{csv_field, DeviceId, Sighting};

pub const TRIPS_HEADER: &str = "trip_id,device_id,departure_ts,arrival_ts,o_lat,o_lon,d_lat,d_lon,o_zone,d_zone,distance_m,n_points";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripConfig {
    pub distance_threshold_m: f64,
    pub time_threshold_s: f64,
    pub speed_threshold_mps: f64,
    pub min_trip_length_m: f64,
}

impl Default for TripConfig {
    fn default() -> Self {
        Self {
            distance_threshold_m: 200.0,
            time_threshold_s: 900.0,
            speed_threshold_mps: 1.4,
            min_trip_length_m: 300.0,
        }
    }
}

impl TripConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.distance_threshold_m,
            self.time_threshold_s,
            self.speed_threshold_mps,
            self.min_trip_length_m,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(Error::Config("trip thresholds must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Trip identifier: a hash of `(device_id, departure_ts)`, printed as 16 hex
/// digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TripId(u64);

impl TripId {
    pub fn for_departure(device: &DeviceId, departure_ts: i64) -> Self {
        let digest = Sha256::new()
            .chain_update(device.as_str().as_bytes())
            .chain_update([0u8])
            .chain_update(departure_ts.to_le_bytes())
            .finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        Self(u64::from_be_bytes(bytes))
    }
}

impl fmt::Display for TripId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for TripId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(Self)
            .map_err(|_| Error::Input(format!("bad trip id `{s}`")))
    }
}

/// Trip membership of a point; static points print as `"0"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TripLabel {
    #[default]
    Static,
    Trip(TripId),
}

impl fmt::Display for TripLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Static => f.write_str("0"),
            Self::Trip(id) => id.fmt(f),
        }
    }
}

/// Distance, time and speed between a point and one neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub distance_m: f64,
    pub time_s: f64,
    pub speed_mps: f64,
}

impl Leg {
    fn between(a: &Sighting, b: &Sighting) -> Self {
        let distance_m = haversine_distance(a.point, b.point);
        let time_s = (b.ts - a.ts) as f64;
        Self {
            distance_m,
            time_s,
            speed_mps: distance_m / time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedPoint {
    pub sighting: Sighting,
    pub prev: Option<Leg>,
    pub next: Option<Leg>,
    pub trip: TripLabel,
}

impl AnnotatedPoint {
    pub fn dist_to_prev_m(&self) -> Option<f64> {
        self.prev.map(|l| l.distance_m)
    }

    pub fn speed_from_prev_mps(&self) -> Option<f64> {
        self.prev.map(|l| l.speed_mps)
    }

    pub fn dist_to_next_m(&self) -> Option<f64> {
        self.next.map(|l| l.distance_m)
    }

    pub fn speed_to_next_mps(&self) -> Option<f64> {
        self.next.map(|l| l.speed_mps)
    }
}

/// Fills neighbour metrics for one device's trace. Rejects mixed devices and
/// timestamps that are not strictly increasing.
pub fn annotate(points: &[Sighting]) -> Result<Vec<AnnotatedPoint>> {
    for w in points.windows(2) {
        if w[0].device_id != w[1].device_id {
            return Err(Error::Input(format!(
                "annotate expects one device, saw {} and {}",
                w[0].device_id, w[1].device_id
            )));
        }
        if w[1].ts <= w[0].ts {
            return Err(Error::Input(format!(
                "device {}: timestamps not strictly increasing at {}",
                w[0].device_id, w[1].ts
            )));
        }
    }
    Ok(points
        .iter()
        .enumerate()
        .map(|(i, s)| AnnotatedPoint {
            sighting: s.clone(),
            prev: (i > 0).then(|| Leg::between(&points[i - 1], s)),
            next: points.get(i + 1).map(|n| Leg::between(s, n)),
            trip: TripLabel::Static,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub trip_id: String,
    pub device_id: DeviceId,
    pub origin: GeoPoint,
    pub o_zone: Option<ZoneId>,
    pub destination: GeoPoint,
    pub d_zone: Option<ZoneId>,
    pub departure_ts: i64,
    pub arrival_ts: i64,
    pub distance_m: f64,
    pub n_points: usize,
}

fn build_trip(points: &[AnnotatedPoint], start: usize, end: usize) -> Trip {
    let first = &points[start].sighting;
    let last = &points[end].sighting;
    let distance_m = points[start + 1..=end]
        .iter()
        .map(|p| p.prev.expect("interior point has a predecessor").distance_m)
        .sum();
    Trip {
        trip_id: TripId::for_departure(&first.device_id, first.ts).to_string(),
        device_id: first.device_id.clone(),
        origin: first.point,
        o_zone: None,
        destination: last.point,
        d_zone: None,
        departure_ts: first.ts,
        arrival_ts: last.ts,
        distance_m,
        n_points: end - start + 1,
    }
}

/// Labels every point with a trip or static and returns the trips in time
/// order. `points` must come from [`annotate`].
pub fn segment(points: &mut [AnnotatedPoint], cfg: &TripConfig) -> Vec<Trip> {
    #[derive(Clone, Copy)]
    enum State {
        Idle,
        Moving { start: usize, anchor: Option<usize> },
    }

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut state = State::Idle;
    for i in 0..points.len() {
        let Some(leg) = points[i].prev else {
            continue;
        };
        let moving = leg.speed_mps >= cfg.speed_threshold_mps;
        state = match state {
            State::Idle if moving => State::Moving {
                start: i - 1,
                anchor: None,
            },
            State::Idle => State::Idle,
            State::Moving { start, .. } if moving => State::Moving { start, anchor: None },
            State::Moving { start, anchor } => {
                let stop = anchor.unwrap_or(i - 1);
                let ends = leg.distance_m > cfg.distance_threshold_m || {
                    let here = &points[i].sighting;
                    let at = &points[stop].sighting;
                    haversine_distance(at.point, here.point) >= cfg.distance_threshold_m || (here.ts - at.ts) as f64 >= cfg.time_threshold_s
                };
                if ends {
                    spans.push((start, stop));
                    State::Idle
                } else {
                    State::Moving { start, anchor: Some(stop) }
                }
            }
        };
    }
    if let State::Moving { start, anchor } = state {
        spans.push((start, anchor.unwrap_or(points.len() - 1)));
    }

    for p in points.iter_mut() {
        p.trip = TripLabel::Static;
    }
    spans
        .into_iter()
        .map(|(start, end)| {
            let trip = build_trip(points, start, end);
            let id = TripId::for_departure(&trip.device_id, trip.departure_ts);
            for p in &mut points[start..=end] {
                p.trip = TripLabel::Trip(id);
            }
            trip
        })
        .collect()
}

/// Drops trips shorter than the minimum length (300 m by default). A trip of
/// exactly the minimum length is kept.
pub fn filter_short(trips: Vec<Trip>, cfg: &TripConfig) -> Vec<Trip> {
    trips.into_iter().filter(|t| t.distance_m >= cfg.min_trip_length_m).collect()
}

pub fn assign_zones(trips: &mut [Trip], zones: &ZoneIndex) {
    for t in trips {
        t.o_zone = zones.locate_id(t.origin);
        t.d_zone = zones.locate_id(t.destination);
    }
}

/// One device's segmentation after short-trip filtering: points belonging to
/// a removed trip are relabelled static.
#[derive(Debug, Clone)]
pub struct DeviceTrips {
    pub points: Vec<AnnotatedPoint>,
    pub trips: Vec<Trip>,
}

impl DeviceTrips {
    pub fn static_points(&self) -> impl Iterator<Item = (usize, &Sighting)> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.trip == TripLabel::Static)
            .map(|(i, p)| (i, &p.sighting))
    }
}

pub fn segment_device(sightings: &[Sighting], cfg: &TripConfig) -> Result<DeviceTrips> {
    let mut points = annotate(sightings)?;
    let trips = filter_short(segment(&mut points, cfg), cfg);
    let kept: std::collections::HashSet<&str> = trips.iter().map(|t| t.trip_id.as_str()).collect();
    for p in &mut points {
        if let TripLabel::Trip(id) = p.trip {
            if !kept.contains(id.to_string().as_str()) {
                p.trip = TripLabel::Static;
            }
        }
    }
    Ok(DeviceTrips { points, trips })
}

pub fn write_trips(mut out: impl Write, trips: &[Trip]) -> Result<()> {
    writeln!(out, "{TRIPS_HEADER}")?;
    for t in trips {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            t.trip_id,
            csv_field(t.device_id.as_str()),
            t.departure_ts,
            t.arrival_ts,
            t.origin.lat(),
            t.origin.lon(),
            t.destination.lat(),
            t.destination.lon(),
            csv_field(t.o_zone.as_deref().unwrap_or("")),
            csv_field(t.d_zone.as_deref().unwrap_or("")),
            t.distance_m,
            t.n_points
        )?;
    }
    Ok(())
}

pub fn read_trips(source: impl Read) -> Result<Vec<Trip>> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != TRIPS_HEADER {
        return Err(Error::Input(format!("trips header must be `{TRIPS_HEADER}`")));
    }
    let mut zone_ids: std::collections::HashMap<String, ZoneId> = std::collections::HashMap::new();
    let mut zone =
        |s: &str| -> Option<ZoneId> { (!s.is_empty()).then(|| zone_ids.entry(s.to_string()).or_insert_with(|| s.into()).clone()) };
    let mut trips = Vec::new();
    let mut last_device: Option<DeviceId> = None;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Input(format!("trips row {}: bad {what}", row + 2));
        let num = |i: usize, what: &str| rec[i].parse::<f64>().map_err(|_| bad(what));
        let device_id = match &last_device {
            Some(d) if d.as_str() == &rec[1] => d.clone(),
            _ => DeviceId::new(&rec[1]),
        };
        last_device = Some(device_id.clone());
        trips.push(Trip {
            trip_id: rec[0].to_string(),
            device_id,
            departure_ts: rec[2].parse().map_err(|_| bad("departure_ts"))?,
            arrival_ts: rec[3].parse().map_err(|_| bad("arrival_ts"))?,
            origin: GeoPoint::new(num(4, "o_lat")?, num(5, "o_lon")?)?,
            destination: GeoPoint::new(num(6, "d_lat")?, num(7, "d_lon")?)?,
            o_zone: zone(&rec[8]),
            d_zone: zone(&rec[9]),
            distance_m: num(10, "distance_m")?,
            n_points: rec[11].parse().map_err(|_| bad("n_points"))?,
        });
    }
    Ok(trips)
}
