//! Seeded synthetic scenarios: device sightings with known trips, home and
//! work locations, daily metrics and epidemic curves.
//!
//! Each device draws from its own ChaCha stream, so output does not depend
//! on thread count. Daily behaviour is stratified: within a home zone the
//! devices staying home on a given day are a contiguous slice of a
//! low-discrepancy sequence, which keeps day-to-day sampling noise far below
//! what independent coin flips would give.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::DeviceProfile;
use crate::calendar::{midnight_ts, weekdays_between, ymd};
use crate::error::{Error, Result};
use crate::geo::{destination, haversine_distance, interpolate, GeoPoint, Zone, ZoneIndex};
use crate::ingest::{DeviceId, Sighting};
use crate::metrics::{DailyMetrics, Geography, Level, MetricValues, MILES_PER_METRE, NATION_ID};
use crate::trips::{Trip, TripId};
use crate::weights::TargetRates;

const PHI1: f64 = 0.618_033_988_749_894_9;
const PHI2: f64 = 0.754_877_666_246_692_7;
const PHI3: f64 = 0.569_840_290_998_053_3;
const STOP_JITTER_M: f64 = 8.0;
const HOME_MARGIN_M: f64 = 1_000.0;
const EDGE_MARGIN_M: f64 = 100.0;

/// Behaviour in force from `start_date` until the next keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseKeyframe {
    pub start_date: NaiveDate,
    pub stay_home_prob: f64,
    /// Work trips per person per day, counting both directions.
    pub work_trip_rate: f64,
    pub nonwork_trip_rate: f64,
    /// Typical one-way length of an in-county errand.
    pub mean_trip_km: f64,
    /// Chance that an errand leaves the home county.
    pub out_of_county_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Each keyframe holds until the next one.
    #[default]
    Step,
    /// Parameters move linearly between keyframes, by calendar day.
    Linear,
}

/// Logistic cumulative case count for one county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseCurve {
    pub county_id: String,
    pub total: u64,
    pub midpoint: NaiveDate,
    pub width_days: f64,
}

impl CaseCurve {
    pub fn cumulative(&self, date: NaiveDate) -> u64 {
        let t = (date - self.midpoint).num_days() as f64 / self.width_days;
        (self.total as f64 / (1.0 + (-t).exp())).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub n_devices: usize,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub zones: Vec<Zone>,
    pub employment_rate: f64,
    pub capture_prob: f64,
    pub sighting_rate_hz: f64,
    pub speed_mps: f64,
    pub phases: Vec<PhaseKeyframe>,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default)]
    pub case_curves: Vec<CaseCurve>,
}

/// Parameters for one day after interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Behaviour {
    pub stay_home_prob: f64,
    pub work_trip_rate: f64,
    pub nonwork_trip_rate: f64,
    pub mean_trip_km: f64,
    pub out_of_county_prob: f64,
}

impl From<&PhaseKeyframe> for Behaviour {
    fn from(k: &PhaseKeyframe) -> Self {
        Self {
            stay_home_prob: k.stay_home_prob,
            work_trip_rate: k.work_trip_rate,
            nonwork_trip_rate: k.nonwork_trip_rate,
            mean_trip_km: k.mean_trip_km,
            out_of_county_prob: k.out_of_county_prob,
        }
    }
}

impl Behaviour {
    fn lerp(a: &Self, b: &Self, f: f64) -> Self {
        let l = |x: f64, y: f64| x + (y - x) * f;
        Self {
            stay_home_prob: l(a.stay_home_prob, b.stay_home_prob),
            work_trip_rate: l(a.work_trip_rate, b.work_trip_rate),
            nonwork_trip_rate: l(a.nonwork_trip_rate, b.nonwork_trip_rate),
            mean_trip_km: l(a.mean_trip_km, b.mean_trip_km),
            out_of_county_prob: l(a.out_of_county_prob, b.out_of_county_prob),
        }
    }

    /// Share of out-of-home employed devices that commute.
    fn commute_share(&self, employment: f64) -> f64 {
        let out = 1.0 - self.stay_home_prob;
        if out <= 0.0 || employment <= 0.0 {
            0.0
        } else {
            self.work_trip_rate / (2.0 * out * employment)
        }
    }

    /// Mean errand tours beyond the first for out-of-home devices.
    fn extra_errands(&self, employment: f64) -> f64 {
        let out = 1.0 - self.stay_home_prob;
        if out <= 0.0 {
            return 0.0;
        }
        self.nonwork_trip_rate / (2.0 * out) - 1.0 + employment * self.commute_share(employment)
    }
}

fn zone_area_deg2(z: &Zone) -> f64 {
    let b = &z.boundary;
    let n = b.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (b[i], b[(i + 1) % n]);
            p.lon() * q.lat() - q.lon() * p.lat()
        })
        .sum();
    (twice / 2.0).abs()
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario: {m}")));
        if self.n_devices == 0 {
            return bad("n_devices must be positive".into());
        }
        if self.start_date > self.end_date {
            return bad("start_date is after end_date".into());
        }
        if self.zones.is_empty() {
            return bad("no zones".into());
        }
        if let Some(z) = self.zones.iter().find(|z| zone_area_deg2(z) <= 0.0) {
            return bad(format!("zone {} has zero area", z.zone_id));
        }
        for (name, p) in [("employment_rate", self.employment_rate), ("capture_prob", self.capture_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.sighting_rate_hz > 0.0 && self.sighting_rate_hz <= 1.0) {
            return bad("sighting_rate_hz must be in (0, 1]".into());
        }
        if !(self.speed_mps > 1.4 && self.speed_mps.is_finite()) {
            return bad("speed_mps must exceed the static speed cap of 1.4".into());
        }
        if self.phases.is_empty() {
            return bad("at least one phase is required".into());
        }
        for w in self.phases.windows(2) {
            if w[0].start_date >= w[1].start_date {
                return bad("phase starts must be strictly increasing".into());
            }
        }
        let e = self.employment_rate;
        for k in &self.phases {
            if k.start_date < self.start_date || k.start_date > self.end_date {
                return bad(format!("phase {} lies outside the date range", k.start_date));
            }
            for p in [k.stay_home_prob, k.out_of_county_prob] {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("phase {}: probability {p} outside [0, 1]", k.start_date));
                }
            }
            if !(k.work_trip_rate >= 0.0 && k.nonwork_trip_rate >= 0.0) {
                return bad(format!("phase {}: rates must be non-negative", k.start_date));
            }
            if !(k.mean_trip_km > 0.0 && k.mean_trip_km.is_finite()) {
                return bad(format!("phase {}: mean_trip_km must be positive", k.start_date));
            }
            let b = Behaviour::from(k);
            if k.stay_home_prob < 1.0 {
                // Feasibility is checked at keyframes only: both quantities are
                // monotone between linearly interpolated endpoints.
                if b.commute_share(e) > 1.0 + 1e-12 || (k.work_trip_rate > 0.0 && e == 0.0) {
                    return bad(format!(
                        "phase {}: work_trip_rate {} needs more than every employed out-of-home device commuting",
                        k.start_date, k.work_trip_rate
                    ));
                }
                if b.extra_errands(e) < -1e-12 {
                    return bad(format!(
                        "phase {}: nonwork_trip_rate {} too low for {} of devices leaving home",
                        k.start_date,
                        k.nonwork_trip_rate,
                        1.0 - k.stay_home_prob
                    ));
                }
            }
        }
        let counties: std::collections::HashSet<&str> = self.zones.iter().map(|z| &*z.county_id).collect();
        for c in &self.case_curves {
            if !counties.contains(c.county_id.as_str()) {
                return bad(format!("case curve for unknown county {}", c.county_id));
            }
            if !(c.width_days > 0.0 && c.width_days.is_finite()) {
                return bad(format!("case curve {}: width_days must be positive", c.county_id));
            }
        }
        Ok(())
    }

    pub fn weekdays(&self) -> Vec<NaiveDate> {
        weekdays_between(self.start_date, self.end_date)
    }

    pub fn behaviour(&self, date: NaiveDate) -> Behaviour {
        let i = self.phases.partition_point(|k| k.start_date <= date);
        if i == 0 {
            return Behaviour::from(&self.phases[0]);
        }
        let cur = &self.phases[i - 1];
        match (self.interpolation, self.phases.get(i)) {
            (Interpolation::Linear, Some(next)) => {
                let span = (next.start_date - cur.start_date).num_days() as f64;
                let f = (date - cur.start_date).num_days() as f64 / span;
                Behaviour::lerp(&cur.into(), &next.into(), f)
            }
            _ => Behaviour::from(cur),
        }
    }

    /// Four states side by side, one county each, split into a southern and
    /// a northern zone.
    pub fn four_state_zones() -> Vec<Zone> {
        let pops = [150_000, 90_000, 200_000, 60_000, 120_000, 120_000, 80_000, 170_000];
        let mut zones = Vec::new();
        for s in 0..4 {
            for (row, half) in ["A", "B"].into_iter().enumerate() {
                let lat0 = 35.0 + 0.25 * row as f64;
                let lon0 = -90.0 + 0.5 * s as f64;
                let p = |lat: f64, lon: f64| GeoPoint::new(lat, lon).expect("valid grid corner");
                zones.push(Zone {
                    zone_id: format!("Z{}{half}", s + 1).into(),
                    county_id: format!("C{}", s + 1).into(),
                    state_id: format!("S{}", s + 1).into(),
                    population: pops[2 * s + row],
                    boundary: vec![p(lat0, lon0), p(lat0, lon0 + 0.5), p(lat0 + 0.25, lon0 + 0.5), p(lat0 + 0.25, lon0)],
                    utc_offset_minutes: 0,
                });
            }
        }
        zones
    }

    /// Baseline, a ten-weekday lockdown ramp from March 13, a plateau
    /// through April 14 and a partial relaxation from April 15.
    pub fn paper_shape() -> Self {
        let k = |d: NaiveDate, h: f64, w: f64, n: f64, km: f64, q: f64| PhaseKeyframe {
            start_date: d,
            stay_home_prob: h,
            work_trip_rate: w,
            nonwork_trip_rate: n,
            mean_trip_km: km,
            out_of_county_prob: q,
        };
        let zones = Self::four_state_zones();
        let case_curves = zones
            .iter()
            .filter(|z| z.zone_id.ends_with('A'))
            .enumerate()
            .map(|(i, z)| CaseCurve {
                county_id: z.county_id.to_string(),
                total: 900 + 350 * i as u64,
                midpoint: ymd(2020, 4, 6) + Duration::days(3 * i as i64),
                width_days: 6.0 + i as f64,
            })
            .collect();
        Self {
            seed: 20_200_415,
            n_devices: 2000,
            start_date: ymd(2020, 1, 6),
            end_date: ymd(2020, 5, 1),
            zones,
            employment_rate: 0.8,
            capture_prob: 1.0,
            sighting_rate_hz: 1.0 / 300.0,
            speed_mps: 15.0,
            phases: vec![
                k(ymd(2020, 1, 6), 0.02, 1.30, 3.80, 13.0, 0.20),
                k(ymd(2020, 3, 2), 0.02, 1.30, 3.80, 13.0, 0.20),
                k(ymd(2020, 3, 13), 0.095, 1.04, 3.33, 12.2, 0.13),
                k(ymd(2020, 3, 25), 0.32375, 0.4825, 2.43, 10.28, 0.0399),
                k(ymd(2020, 4, 7), 0.32375, 0.4825, 2.43, 10.28, 0.0399),
                k(ymd(2020, 4, 8), 0.34, 0.45, 2.30, 10.8, 0.036),
                k(ymd(2020, 4, 14), 0.34, 0.45, 2.30, 10.8, 0.036),
                k(ymd(2020, 4, 15), 0.3175, 0.495, 2.48, 10.08, 0.0414),
                k(ymd(2020, 5, 1), 0.315, 0.50, 2.50, 10.0, 0.042),
            ],
            interpolation: Interpolation::Linear,
            case_curves,
        }
    }
}

/// What a ground-truth trip was for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Purpose {
    Work,
    Errand,
    OutOfCountyErrand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrip {
    pub trip: Trip,
    pub date: NaiveDate,
    pub purpose: Purpose,
    pub captured: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseScript {
    pub dates: Vec<NaiveDate>,
    /// (county, state, cumulative count per date).
    pub rows: Vec<(Arc<str>, Arc<str>, Vec<u64>)>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Sorted by device, then time.
    pub sightings: Vec<Sighting>,
    /// Every scripted trip, captured or not, sorted by device then departure.
    pub trips: Vec<TruthTrip>,
    pub profiles: Vec<DeviceProfile>,
    pub cases: CaseScript,
    /// Errand tours that did not fit in the day and were skipped.
    pub dropped_tours: usize,
}

struct Plan {
    index: u64,
    id: DeviceId,
    zone: usize,
    home: GeoPoint,
    work: Option<(GeoPoint, usize)>,
    u_state: f64,
    u_extra: f64,
    u_ooc: f64,
    u_dist: f64,
}

fn device_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn rounded(p: GeoPoint) -> GeoPoint {
    GeoPoint::new(round6(p.lat()), round6(p.lon())).expect("rounding keeps a valid coordinate")
}

fn sample_in_zone(zone: &Zone, margin_m: f64, rng: &mut ChaCha8Rng) -> Result<GeoPoint> {
    let b = zone.bbox();
    let dlat = margin_m / 111_195.0;
    let mid = ((b.min_lat + b.max_lat) / 2.0).to_radians().cos().max(1e-6);
    let dlon = dlat / mid;
    let (lat0, lat1) = (b.min_lat + dlat, b.max_lat - dlat);
    let (lon0, lon1) = (b.min_lon + dlon, b.max_lon - dlon);
    if lat0 < lat1 && lon0 < lon1 {
        for _ in 0..10_000 {
            let p = GeoPoint::new(rng.gen_range(lat0..lat1), rng.gen_range(lon0..lon1))?;
            if zone.contains(p) {
                return Ok(rounded(p));
            }
        }
    }
    Err(Error::Config(format!(
        "scenario: could not place a point inside zone {}",
        zone.zone_id
    )))
}

/// Keeps stop jitter and rounding from pushing a point across the edge.
fn inside_with_margin(zone: &Zone, p: GeoPoint, margin_m: f64) -> bool {
    zone.contains(p) && (0..4).all(|k| zone.contains(destination(p, k as f64 * std::f64::consts::FRAC_PI_2, margin_m)))
}

fn jitter(center: GeoPoint, rng: &mut ChaCha8Rng) -> GeoPoint {
    let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
    rounded(destination(center, bearing, rng.gen_range(0.0..STOP_JITTER_M)))
}

/// A point in `target` at a random bearing and roughly `km` from `from`,
/// falling back to a uniform point in the zone.
fn sample_near(from: GeoPoint, km: (f64, f64), target: &Zone, rng: &mut ChaCha8Rng) -> Result<GeoPoint> {
    for _ in 0..2_000 {
        let d = rng.gen_range(km.0..km.1) * 1000.0;
        let p = destination(from, rng.gen_range(0.0..std::f64::consts::TAU), d);
        if inside_with_margin(target, p, EDGE_MARGIN_M) {
            return Ok(rounded(p));
        }
    }
    sample_in_zone(target, EDGE_MARGIN_M, rng)
}

/// Nearest zones outside each zone's county, by bounding-box centre.
fn neighbour_zones(zones: &[Zone]) -> Vec<Vec<usize>> {
    let centre = |z: &Zone| {
        let b = z.bbox();
        GeoPoint::new((b.min_lat + b.max_lat) / 2.0, (b.min_lon + b.max_lon) / 2.0).expect("bbox centre")
    };
    zones
        .iter()
        .map(|z| {
            let c = centre(z);
            let others: Vec<(usize, f64)> = zones
                .iter()
                .enumerate()
                .filter(|(_, o)| o.county_id != z.county_id)
                .map(|(j, o)| (j, haversine_distance(c, centre(o))))
                .collect();
            let nearest = others.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            others.into_iter().filter(|x| x.1 <= nearest * 1.01).map(|x| x.0).collect()
        })
        .collect()
}

fn plan_devices(s: &Scenario, zones: &[Zone]) -> Result<Vec<Plan>> {
    let nz = zones.len();
    let width = s.n_devices.saturating_sub(1).to_string().len().max(5);
    let group_size = |g: usize| (s.n_devices + nz - 1 - g) / nz;
    // Independent rank permutations per zone for each stratified draw.
    let perms: Vec<[Vec<usize>; 3]> = (0..nz)
        .map(|g| {
            [0u64, 1, 2].map(|k| {
                let mut p: Vec<usize> = (0..group_size(g)).collect();
                p.shuffle(&mut device_rng(s.seed, (1 << 40) + 4 * g as u64 + k));
                p
            })
        })
        .collect();
    let mut employed_so_far = 0usize;
    (0..s.n_devices)
        .map(|d| {
            let mut rng = device_rng(s.seed, d as u64);
            let zone = d % nz;
            let rank = d / nz;
            let n_g = group_size(zone) as f64;
            let home = sample_in_zone(&zones[zone], HOME_MARGIN_M, &mut rng)?;
            // Bresenham spread: after d devices, floor(rate * (d + 1)) are employed.
            let employed = ((s.employment_rate * (d + 1) as f64).floor() as usize) > employed_so_far;
            employed_so_far += employed as usize;
            let work = if employed {
                let same_county: Vec<usize> = (0..nz)
                    .filter(|&j| j != zone && zones[j].county_id == zones[zone].county_id)
                    .collect();
                let j = if same_county.is_empty() {
                    zone
                } else {
                    same_county[rng.gen_range(0..same_county.len())]
                };
                Some((sample_near(home, (6.0, 30.0), &zones[j], &mut rng)?, j))
            } else {
                None
            };
            Ok(Plan {
                index: d as u64,
                id: DeviceId::new(&format!("d{d:0width$}")),
                zone,
                home,
                work,
                u_state: (rank as f64 + rng.gen::<f64>()) / n_g,
                u_extra: (perms[zone][0][rank] as f64 + rng.gen::<f64>()) / n_g,
                u_ooc: (perms[zone][1][rank] as f64 + rng.gen::<f64>()) / n_g,
                u_dist: (perms[zone][2][rank] as f64 + rng.gen::<f64>()) / n_g,
            })
        })
        .collect()
}

struct Emitter<'a> {
    plan: &'a Plan,
    rng: ChaCha8Rng,
    step_s: i64,
    speed: f64,
    sightings: Vec<Sighting>,
    trips: Vec<TruthTrip>,
}

impl Emitter<'_> {
    fn sight(&mut self, ts: i64, p: GeoPoint, captured: bool) {
        if captured {
            let acc = (self.rng.gen_range(5.0f64..30.0) * 10.0).round() / 10.0;
            self.sightings
                .push(Sighting::new(self.plan.id.clone(), ts, p, acc).expect("synthetic sighting is valid"));
        }
    }

    fn travel_s(&self, a: GeoPoint, b: GeoPoint) -> i64 {
        ((haversine_distance(a, b) / self.speed).round() as i64).max(60)
    }

    /// Departure sighting at `t0` from `a`, moving sightings, arrival at `b`.
    /// Returns the arrival time.
    #[allow(clippy::too_many_arguments)]
    fn leg(&mut self, date: NaiveDate, t0: i64, a: GeoPoint, b: GeoPoint, purpose: Purpose, captured: bool, zones: &ZoneIndex) -> i64 {
        let dur = self.travel_s(a, b);
        self.sight(t0, a, captured);
        let mut n = 2;
        let mut k = 1;
        while k * self.step_s < dur {
            let f = (k * self.step_s) as f64 / dur as f64;
            self.sight(t0 + k * self.step_s, rounded(interpolate(a, b, f)), captured);
            n += 1;
            k += 1;
        }
        self.sight(t0 + dur, b, captured);
        self.trips.push(TruthTrip {
            trip: Trip {
                trip_id: TripId::for_departure(&self.plan.id, t0).to_string(),
                device_id: self.plan.id.clone(),
                origin: a,
                o_zone: zones.locate_id(a),
                destination: b,
                d_zone: zones.locate_id(b),
                departure_ts: t0,
                arrival_ts: t0 + dur,
                distance_m: haversine_distance(a, b),
                n_points: n,
            },
            date,
            purpose,
            captured,
        });
        t0 + dur
    }
}

struct World<'a> {
    scenario: &'a Scenario,
    zones: &'a [Zone],
    index: &'a ZoneIndex,
    neighbours: &'a [Vec<usize>],
}

const H: i64 = 3600;
const DAY_END_S: i64 = 23 * H + 15 * 60;

fn frac(x: f64) -> f64 {
    x - x.floor()
}

fn simulate(world: &World<'_>, plan: &Plan, dates: &[NaiveDate]) -> Result<(Vec<Sighting>, Vec<TruthTrip>, usize)> {
    let s = world.scenario;
    let mut em = Emitter {
        plan,
        rng: device_rng(s.seed, (1 << 41) + plan.index),
        step_s: ((1.0 / s.sighting_rate_hz).round() as i64).max(1),
        speed: s.speed_mps,
        sightings: Vec::new(),
        trips: Vec::new(),
    };
    let home_zone = &world.zones[plan.zone];
    let e = s.employment_rate;
    let mut dropped = 0;
    for (t, &date) in dates.iter().enumerate() {
        let b = s.behaviour(date);
        let midnight = midnight_ts(date) - home_zone.utc_offset_s() as i64;
        let at = |sec: i64| midnight + sec;
        let home = plan.home;
        for sec in [H + 30 * 60, 4 * H + 30 * 60, 6 * H + 30 * 60] {
            let j = em.rng.gen_range(-600..=600);
            let p = jitter(home, &mut em.rng);
            em.sight(at(sec + j), p, true);
        }
        let x = frac(plan.u_state + t as f64 * PHI1);
        let out = 1.0 - b.stay_home_prob;
        if x < b.stay_home_prob || out <= 0.0 {
            for sec in [10 * H, 14 * H, 18 * H + 30 * 60] {
                let j = em.rng.gen_range(-900..=900);
                let p = jitter(home, &mut em.rng);
                em.sight(at(sec + j), p, true);
            }
        } else {
            let commutes = plan.work.is_some() && x < b.stay_home_prob + out * b.commute_share(e);
            let mu = b.extra_errands(e).max(0.0);
            let y = frac(plan.u_extra + t as f64 * PHI2);
            let extra = mu.floor() as usize + usize::from(y < frac(mu));
            let n_errands = usize::from(!commutes) + extra;
            let mut clock;
            if commutes {
                let (work_c, _) = plan.work.expect("commuter has a work point");
                let captured = em.rng.gen_bool(s.capture_prob);
                let from = jitter(home, &mut em.rng);
                let to = jitter(work_c, &mut em.rng);
                let depart = 7 * H + em.rng.gen_range(0..H);
                let arrive = em.leg(date, at(depart), from, to, Purpose::Work, captured, world.index) - midnight;
                // Leave room for the errands that follow.
                let back = em.travel_s(to, home);
                let errand_budget = extra as i64 * 4 * H;
                let latest = DAY_END_S - back - errand_budget;
                let dwell = (8 * H + em.rng.gen_range(-H..H)).min(latest - arrive).max(4 * H);
                let leave = arrive + dwell;
                let mut m = arrive + 90 * 60;
                while m < leave - 10 * 60 {
                    let p = jitter(work_c, &mut em.rng);
                    em.sight(at(m), p, captured);
                    m += 90 * 60;
                }
                let from = jitter(work_c, &mut em.rng);
                let to = jitter(home, &mut em.rng);
                clock = em.leg(date, at(leave), from, to, Purpose::Work, captured, world.index) - midnight;
            } else {
                clock = 8 * H + 30 * 60 + em.rng.gen_range(0..2 * H) - 20 * 60;
            }
            for j in 0..n_errands {
                let leave = clock + em.rng.gen_range(20 * 60..60 * 60);
                let phase = t as f64 * PHI3 + j as f64 * 0.5;
                let ooc = !world.neighbours[plan.zone].is_empty() && frac(plan.u_ooc + phase) < b.out_of_county_prob;
                let stop = if ooc {
                    let nb = &world.neighbours[plan.zone];
                    let z = &world.zones[nb[em.rng.gen_range(0..nb.len())]];
                    sample_in_zone(z, HOME_MARGIN_M, &mut em.rng)?
                } else {
                    let km = b.mean_trip_km * (0.6 + 0.8 * frac(plan.u_dist + phase));
                    sample_near(home, (km, 1.02 * km), home_zone, &mut em.rng)?
                };
                let dwell = em.rng.gen_range(18 * 60..50 * 60);
                let go = em.travel_s(home, stop);
                if leave + 2 * go + dwell > DAY_END_S {
                    dropped += 1;
                    continue;
                }
                let captured = em.rng.gen_bool(s.capture_prob);
                let purpose = if ooc { Purpose::OutOfCountyErrand } else { Purpose::Errand };
                let from = jitter(home, &mut em.rng);
                let to = jitter(stop, &mut em.rng);
                let arrive = em.leg(date, at(leave), from, to, purpose, captured, world.index) - midnight;
                let from = jitter(stop, &mut em.rng);
                let to = jitter(home, &mut em.rng);
                clock = em.leg(date, at(arrive + dwell), from, to, purpose, captured, world.index) - midnight;
            }
        }
        let j = em.rng.gen_range(-300..=300);
        let p = jitter(home, &mut em.rng);
        em.sight(at(23 * H + 45 * 60 + j), p, true);
    }
    Ok((em.sightings, em.trips, dropped))
}

pub fn generate(s: &Scenario) -> Result<SynthOutput> {
    s.validate()?;
    let index = ZoneIndex::new(s.zones.clone())?;
    // Work from the index's sorted order so results ignore input order.
    let zones = index.zones();
    let neighbours = neighbour_zones(zones);
    let plans = plan_devices(s, zones)?;
    let dates = s.weekdays();
    let world = World {
        scenario: s,
        zones,
        index: &index,
        neighbours: &neighbours,
    };
    let per_device: Vec<(Vec<Sighting>, Vec<TruthTrip>, usize)> =
        plans.par_iter().map(|p| simulate(&world, p, &dates)).collect::<Result<_>>()?;
    let mut sightings = Vec::with_capacity(per_device.iter().map(|d| d.0.len()).sum());
    let mut trips = Vec::new();
    let mut dropped_tours = 0;
    for (sg, tr, dr) in per_device {
        sightings.extend(sg);
        trips.extend(tr);
        dropped_tours += dr;
    }
    if dropped_tours > 0 {
        log::warn!("{dropped_tours} errand tours did not fit in their day and were skipped");
    }
    let profiles = plans
        .iter()
        .map(|p| DeviceProfile {
            device_id: p.id.clone(),
            home_zone: zones[p.zone].zone_id.clone(),
            work_zone: p.work.map(|(_, j)| zones[j].zone_id.clone()),
            employed: p.work.is_some(),
        })
        .collect();
    Ok(SynthOutput {
        sightings,
        trips,
        profiles,
        cases: case_script(s, &index),
        dropped_tours,
    })
}

fn case_script(s: &Scenario, index: &ZoneIndex) -> CaseScript {
    let mut dates = Vec::new();
    let mut d = s.start_date;
    while d <= s.end_date {
        dates.push(d);
        d += Duration::days(1);
    }
    let mut rows: Vec<(Arc<str>, Arc<str>, Vec<u64>)> = s
        .case_curves
        .iter()
        .map(|c| {
            let state = index.county_state(&c.county_id).expect("validated county");
            (
                Arc::from(c.county_id.as_str()),
                state,
                dates.iter().map(|d| c.cumulative(*d)).collect(),
            )
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    CaseScript { dates, rows }
}

impl SynthOutput {
    /// Trips that left sightings behind.
    pub fn captured_trips(&self) -> Vec<Trip> {
        self.trips.iter().filter(|t| t.captured).map(|t| t.trip.clone()).collect()
    }

    pub fn all_trips(&self) -> Vec<Trip> {
        self.trips.iter().map(|t| t.trip.clone()).collect()
    }

    /// Daily metrics straight from the script: every device is in the panel
    /// every weekday, weighted by county population over resident devices,
    /// with work and out-of-county status taken from each trip's purpose.
    pub fn ground_truth_metrics(&self, zones: &ZoneIndex, dates: &[NaiveDate]) -> Vec<DailyMetrics> {
        #[derive(Default, Clone, Copy)]
        struct Sums {
            persons: f64,
            home: f64,
            work: f64,
            nonwork: f64,
            metres: f64,
            ooc: f64,
        }
        let county_of = |zone: &str| zones.zone(zone).map(|z| (z.county_id.clone(), z.state_id.clone()));
        let mut residents: BTreeMap<Arc<str>, usize> = BTreeMap::new();
        let mut home_of: HashMap<&str, (Arc<str>, Arc<str>)> = HashMap::new();
        for p in &self.profiles {
            let cs = county_of(&p.home_zone).expect("profile zone exists");
            *residents.entry(cs.0.clone()).or_default() += 1;
            home_of.insert(p.device_id.as_str(), cs);
        }
        let pops = zones.county_populations();
        let weight = |county: &Arc<str>| pops[county] as f64 / residents[county] as f64;

        let mut day_trips: HashMap<(&str, NaiveDate), Vec<&TruthTrip>> = HashMap::new();
        for t in &self.trips {
            day_trips.entry((t.trip.device_id.as_str(), t.date)).or_default().push(t);
        }
        let mut sums: BTreeMap<(NaiveDate, Level, Arc<str>), Sums> = BTreeMap::new();
        let nation: Arc<str> = Arc::from(NATION_ID);
        for &date in dates {
            for p in &self.profiles {
                let (county, state) = &home_of[p.device_id.as_str()];
                let w = weight(county);
                let mut add = Sums {
                    persons: w,
                    ..Sums::default()
                };
                match day_trips.get(&(p.device_id.as_str(), date)) {
                    None => add.home = w,
                    Some(ts) => {
                        for t in ts {
                            match t.purpose {
                                Purpose::Work => add.work += w,
                                _ => add.nonwork += w,
                            }
                            if t.purpose == Purpose::OutOfCountyErrand {
                                add.ooc += w;
                            }
                            add.metres += w * t.trip.distance_m;
                        }
                    }
                }
                for key in [(Level::County, county), (Level::State, state), (Level::Nation, &nation)] {
                    let e = sums.entry((date, key.0, key.1.clone())).or_default();
                    e.persons += add.persons;
                    e.home += add.home;
                    e.work += add.work;
                    e.nonwork += add.nonwork;
                    e.metres += add.metres;
                    e.ooc += add.ooc;
                }
            }
        }
        sums.into_iter()
            .filter(|(_, s)| s.persons > 0.0)
            .map(|((date, level, id), s)| {
                let trips = s.work + s.nonwork;
                DailyMetrics {
                    date,
                    geo: Geography::new(level, &id),
                    values: MetricValues {
                        pct_staying_home: s.home / s.persons,
                        work_trips_pp: s.work / s.persons,
                        nonwork_trips_pp: s.nonwork / s.persons,
                        trips_pp: trips / s.persons,
                        miles_pp: s.metres * MILES_PER_METRE / s.persons,
                        pct_out_of_county: if trips > 0.0 { s.ooc / trips } else { 0.0 },
                    },
                }
            })
            .collect()
    }

    /// True weighted trips per person per state over `window`, for use as
    /// calibration targets.
    pub fn target_rates(&self, zones: &ZoneIndex, window: &[NaiveDate]) -> TargetRates {
        let m = self.ground_truth_metrics(zones, window);
        let pops = zones.state_populations();
        let mut out = BTreeMap::new();
        for (state, _) in pops {
            let rows: Vec<f64> = m
                .iter()
                .filter(|r| r.geo.level == Level::State && *r.geo.geo_id == *state)
                .map(|r| r.values.trips_pp)
                .collect();
            if !rows.is_empty() {
                // Every device is present every day, so the pooled rate is the
                // plain mean of daily rates.
                out.insert(state.to_string(), rows.iter().sum::<f64>() / rows.len() as f64);
            }
        }
        TargetRates(out)
    }
}
