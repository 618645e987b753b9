//! Slow, independent reference implementations used by the integration and
//! acceptance tests. None of these call the code they check, except where a
//! shared primitive (the haversine metric) must agree bit for bit so that
//! threshold comparisons cannot flip.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use fatigue_core::activity::DeviceProfile;
use fatigue_core::geo::{haversine_distance, GeoPoint, ZoneIndex};
use fatigue_core::ingest::{DeviceId, Sighting};
use fatigue_core::trips::{Trip, TripConfig};
use fatigue_core::weights::TripFactor;
use rand::Rng;

pub const R_EARTH: f64 = 6_371_000.0;

// Trip segmentation

/// Trip spans `(first, last)` by direct application of the stop rules.
///
/// A trip opens at the predecessor of the first moving point (speed from
/// its predecessor at or above the threshold). Every point that ends a run
/// of moving points and is followed by a slow one anchors a stop. The stop
/// ends the trip at its anchor as soon as one of the slow points after it,
/// before any further moving point, jumps more than the distance threshold
/// from its predecessor, lies the distance threshold or more from the
/// anchor, or comes the time threshold or more after it. A stop still open
/// when the trace ends also closes the trip at its anchor, and a trace that
/// ends while moving closes it at the last point.
pub fn segment_spans(pts: &[Sighting], cfg: &TripConfig) -> Vec<(usize, usize)> {
    let n = pts.len();
    let dist = |a: usize, b: usize| haversine_distance(pts[a].point, pts[b].point);
    let secs = |a: usize, b: usize| (pts[b].ts - pts[a].ts) as f64;
    let moving = |i: usize| i > 0 && i < n && dist(i - 1, i) / secs(i - 1, i) >= cfg.speed_threshold_mps;
    let stop_end = |j: usize| -> Option<usize> {
        (j + 1..n).take_while(|&k| !moving(k)).find(|&k| {
            dist(k - 1, k) > cfg.distance_threshold_m || dist(j, k) >= cfg.distance_threshold_m || secs(j, k) >= cfg.time_threshold_s
        })
    };
    let mut spans = Vec::new();
    let mut from = 1;
    while let Some(first) = (from..n).find(|&i| moving(i)) {
        let start = first - 1;
        let mut close = None;
        for j in first..n {
            if !moving(j) || moving(j + 1) {
                continue;
            }
            if let Some(k) = stop_end(j) {
                close = Some((j, k + 1));
                break;
            }
            if !(j + 1..n).any(&moving) {
                close = Some((j, n));
                break;
            }
        }
        let (end, resume) = close.expect("a moving run always ends");
        spans.push((start, end));
        from = resume;
    }
    spans
}

pub fn span_length(pts: &[Sighting], (a, b): (usize, usize)) -> f64 {
    (a + 1..=b).map(|i| haversine_distance(pts[i - 1].point, pts[i].point)).sum()
}

/// Random single-device trace of `len` points mixing dwells, jitter and
/// movement at walking to highway speeds, with irregular sampling gaps.
pub fn random_trace(rng: &mut impl Rng, len: usize) -> Vec<Sighting> {
    let device = DeviceId::new("oracle");
    let mut ts = 1_583_000_000i64 + rng.gen_range(0..86_400);
    let (mut lat, mut lon): (f64, f64) = (rng.gen_range(-60.0..60.0), rng.gen_range(-170.0..170.0));
    let mut out = Vec::with_capacity(len);
    let mut moving = rng.gen_bool(0.5);
    for _ in 0..len {
        if rng.gen_bool(0.25) {
            moving = !moving;
        }
        let gap = if rng.gen_bool(0.2) {
            rng.gen_range(600..2400)
        } else {
            rng.gen_range(5..400)
        };
        ts += gap;
        let metres = if moving {
            rng.gen_range(0.5..35.0) * gap as f64
        } else if rng.gen_bool(0.1) {
            rng.gen_range(150.0..400.0)
        } else {
            rng.gen_range(0.0..120.0)
        };
        let bearing = rng.gen_range(0.0..std::f64::consts::TAU);
        let dlat = metres * bearing.cos() / 111_320.0;
        let dlon = metres * bearing.sin() / (111_320.0 * lat.to_radians().cos());
        lat += dlat;
        lon += dlon;
        let p = GeoPoint::new(lat, lon).expect("stays in range");
        out.push(Sighting::new(device.clone(), ts, p, 10.0).expect("valid sighting"));
    }
    out
}

// Density clustering

/// Density clustering straight from the definition, with all pairwise
/// distances. Clusters are numbered in order of their lowest core index and
/// a border point takes the cluster of its lowest-index core neighbour.
pub fn dbscan(points: &[GeoPoint], eps: f64, min_points: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || haversine_distance(points[i], points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = near.iter().map(|row| row.iter().filter(|b| **b).count() >= min_points).collect();
    // Smallest core index reachable through core-core links, by relaxation.
    let mut root: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near[i][j] && root[j] < root[i] {
                    root[i] = root[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let roots: BTreeSet<usize> = (0..n).filter(|&i| core[i]).map(|i| root[i]).collect();
    let number: BTreeMap<usize, usize> = roots.iter().enumerate().map(|(k, r)| (*r, k)).collect();
    (0..n)
        .map(|i| {
            let c = if core[i] {
                Some(i)
            } else {
                (0..n).find(|&j| core[j] && near[i][j])
            };
            c.map(|c| number[&root[c]])
        })
        .collect()
}

// Geometry

/// Distance through the unit-sphere chord, well conditioned at all scales.
pub fn chord_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let u = |p: GeoPoint| {
        let (la, lo) = (p.lat().to_radians(), p.lon().to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (p, q) = (u(a), u(b));
    let c = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    2.0 * R_EARTH * (c / 2.0).min(1.0).asin()
}

/// Spherical law of cosines; fine once points are a few kilometres apart.
pub fn law_of_cosines_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat().to_radians(), b.lat().to_radians());
    let dl = (b.lon() - a.lon()).to_radians();
    let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    R_EARTH * c.clamp(-1.0, 1.0).acos()
}

/// Winding number of a closed ring around `p` in the (lon, lat) plane.
/// `None` when `p` is within `tol` degrees of an edge.
pub fn winding_inside(p: GeoPoint, ring: &[GeoPoint], tol: f64) -> Option<bool> {
    let (x, y) = (p.lon(), p.lat());
    let mut wn = 0i32;
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        let (ax, ay, bx, by) = (a.lon(), a.lat(), b.lon(), b.lat());
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let t = (((x - ax) * ex + (y - ay) * ey) / len2).clamp(0.0, 1.0);
        let (dx, dy) = (ax + t * ex - x, ay + t * ey - y);
        if (dx * dx + dy * dy).sqrt() < tol {
            return None;
        }
        let cross = ex * (y - ay) - ey * (x - ax);
        if ay <= y && by > y && cross > 0.0 {
            wn += 1;
        } else if ay > y && by <= y && cross < 0.0 {
            wn -= 1;
        }
    }
    Some(wn != 0)
}

// Student t distribution

/// ln Γ(x) for x > 0: shift up by recurrence, then the Stirling series.
pub fn ln_gamma(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < 15.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let z = 1.0 / (x * x);
    let series = (1.0 / 12.0 - z * (1.0 / 360.0 - z * (1.0 / 1260.0 - z * (1.0 / 1680.0 - z / 1188.0)))) / x;
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

pub fn t_density(x: f64, df: f64) -> f64 {
    let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (x * x / df).ln_1p()).exp()
}

/// CDF by composite Simpson integration of the density from zero, using the
/// symmetry of the distribution.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    let steps = 20_000;
    let a = t.abs();
    if a == 0.0 {
        return 0.5;
    }
    let h = a / steps as f64;
    let mut s = t_density(0.0, df) + t_density(a, df);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(k as f64 * h, df);
    }
    let half = s * h / 3.0;
    if t > 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

// Smoothing

/// Convolution with a box kernel, normalised by the number of kernel taps
/// that land inside the series.
pub fn box_convolve(x: &[f64], before: usize, after: usize) -> Vec<f64> {
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let (mut sum, mut taps) = (0.0, 0.0);
            for k in -(before as isize)..=(after as isize) {
                let j = i + k;
                if (0..n).contains(&j) {
                    sum += x[j as usize];
                    taps += 1.0;
                }
            }
            sum / taps
        })
        .collect()
}

// Weighting

fn day_of(ts: i64, offset_s: i32) -> NaiveDate {
    let days = (ts + offset_s as i64).div_euclid(86_400);
    NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Days::new(days as u64)
}

/// Calibrated trips per person per day for each state over `window`,
/// recomputed from sightings, profiles and the pipeline's weights: trips
/// of residents observed that day, weighted by device weight times state
/// factor, over the weighted count of observed resident-days.
pub fn calibrated_rates(
    sightings: &[Sighting],
    trips: &[Trip],
    profiles: &[DeviceProfile],
    device_weights: &BTreeMap<DeviceId, f64>,
    factors: &[TripFactor],
    zones: &ZoneIndex,
    window: &[NaiveDate],
) -> BTreeMap<String, f64> {
    let window: BTreeSet<NaiveDate> = window.iter().copied().collect();
    let home: HashMap<&DeviceId, (String, i32)> = profiles
        .iter()
        .map(|p| {
            let z = zones.zone(&p.home_zone).unwrap();
            (&p.device_id, (z.state_id.to_string(), z.utc_offset_minutes * 60))
        })
        .collect();
    let mut seen: BTreeSet<(&DeviceId, NaiveDate)> = BTreeSet::new();
    for s in sightings {
        if let Some((_, off)) = home.get(&s.device_id) {
            seen.insert((&s.device_id, day_of(s.ts, *off)));
        }
    }
    let factor: HashMap<&str, f64> = factors.iter().map(|f| (&*f.state_id, f.factor)).collect();
    let mut num: BTreeMap<String, f64> = BTreeMap::new();
    let mut den: BTreeMap<String, f64> = BTreeMap::new();
    for (device, day) in &seen {
        if window.contains(day) {
            let state = &home[device].0;
            *den.entry(state.clone()).or_default() += device_weights[*device];
        }
    }
    for t in trips {
        let Some((state, off)) = home.get(&t.device_id) else { continue };
        let day = day_of(t.departure_ts, *off);
        if window.contains(&day) && seen.contains(&(&t.device_id, day)) {
            *num.entry(state.clone()).or_default() += device_weights[&t.device_id] * factor[state.as_str()];
        }
    }
    den.into_iter()
        .map(|(s, d)| (s.clone(), num.get(&s).copied().unwrap_or(0.0) / d))
        .collect()
}
