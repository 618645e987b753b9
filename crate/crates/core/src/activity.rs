//! Activity locations and home/work inference.
//!
//! Static points are clustered by density (core points with at least
//! `min_points` neighbours within `eps_m`, haversine metric). Clusters wider
//! than `max_radius_m` are re-clustered with half the radius until they fit or
//! dissolve. Clusters that look like slow movement are dropped and clusters
//! whose centroids nearly coincide are merged.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{local_date, midnight_ts, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::geo::{haversine_distance, GeoPoint, ZoneId, ZoneIndex, EARTH_RADIUS_M};
use crate::ingest::{csv_field, DeviceId};

pub const PROFILES_HEADER: &str = "device_id,home_zone,work_zone,employed";

/// Two miles.
pub const MAX_CLUSTER_RADIUS_M: f64 = 3218.69;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub eps_m: f64,
    pub min_points: usize,
    pub max_radius_m: f64,
    pub merge_eps_m: f64,
    pub static_speed_cap_mps: f64,
    /// Re-clustering stops once eps would fall below this; the cluster is
    /// then discarded as noise.
    pub min_eps_m: f64,
    pub night_start_hour: u32,
    pub night_end_hour: u32,
    pub work_min_dwell_s: i64,
    pub work_min_day_fraction: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            eps_m: 100.0,
            min_points: 5,
            max_radius_m: MAX_CLUSTER_RADIUS_M,
            merge_eps_m: 150.0,
            static_speed_cap_mps: 1.4,
            min_eps_m: 1.0,
            night_start_hour: 19,
            night_end_hour: 8,
            work_min_dwell_s: 2 * 3600,
            work_min_day_fraction: 0.25,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.eps_m,
            self.max_radius_m,
            self.merge_eps_m,
            self.static_speed_cap_mps,
            self.min_eps_m,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.min_points == 0 {
            return Err(Error::Config("cluster parameters must be positive".into()));
        }
        if self.eps_m >= self.max_radius_m {
            return Err(Error::Config("eps_m must be below max_radius_m".into()));
        }
        if self.night_start_hour >= 24 || self.night_end_hour >= 24 || self.night_end_hour > self.night_start_hour {
            return Err(Error::Config("night window must run from an evening hour to a morning hour".into()));
        }
        if !(0.0..=1.0).contains(&self.work_min_day_fraction) || self.work_min_dwell_s <= 0 {
            return Err(Error::Config("work thresholds out of range".into()));
        }
        Ok(())
    }
}

/// A static sighting; `seq` is its position in the device's full cleaned
/// trace, so runs of consecutive `seq` values form visits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticPoint {
    pub seq: usize,
    pub ts: i64,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityCluster {
    pub cluster_id: String,
    pub device_id: DeviceId,
    pub centroid: GeoPoint,
    pub radius_m: f64,
    pub visits: Vec<(i64, i64)>,
    pub total_dwell_s: i64,
    /// Distinct UTC dates with at least one member point.
    pub distinct_days: usize,
    pub n_points: usize,
}

/// Unit vector, used for an exact-by-construction fast path in neighbour
/// queries.
fn unit(p: GeoPoint) -> [f64; 3] {
    let (lat, lon) = (p.lat().to_radians(), p.lon().to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

struct NeighbourIndex<'a> {
    points: &'a [GeoPoint],
    units: Vec<[f64; 3]>,
    by_lat: Vec<usize>,
    eps_m: f64,
    chord_sq: f64,
}

impl<'a> NeighbourIndex<'a> {
    fn new(points: &'a [GeoPoint], eps_m: f64) -> Self {
        let mut by_lat: Vec<usize> = (0..points.len()).collect();
        by_lat.sort_by(|&a, &b| points[a].lat().total_cmp(&points[b].lat()).then(a.cmp(&b)));
        let half_angle = (eps_m / EARTH_RADIUS_M / 2.0).min(std::f64::consts::FRAC_PI_2);
        Self {
            points,
            units: points.iter().map(|p| unit(*p)).collect(),
            by_lat,
            eps_m,
            chord_sq: (2.0 * half_angle.sin()).powi(2),
        }
    }

    fn within(&self, a: usize, b: usize) -> bool {
        let (u, v) = (&self.units[a], &self.units[b]);
        let c = (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2);
        if c < self.chord_sq * (1.0 - 1e-9) {
            true
        } else if c > self.chord_sq * (1.0 + 1e-9) {
            false
        } else {
            haversine_distance(self.points[a], self.points[b]) <= self.eps_m
        }
    }

    /// Indices within eps of `i`, including `i`, in ascending order.
    fn neighbours(&self, i: usize) -> Vec<usize> {
        // Great-circle distance is at least R * |dlat|, so the latitude band
        // loses no neighbours.
        let band = (self.eps_m / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9) + 1e-12;
        let lat = self.points[i].lat();
        let lo = self.by_lat.partition_point(|&k| self.points[k].lat() < lat - band);
        let mut out: Vec<usize> = self.by_lat[lo..]
            .iter()
            .take_while(|&&k| self.points[k].lat() <= lat + band)
            .copied()
            .filter(|&k| k == i || self.within(i, k))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Density clustering. Returns one label per point: `Some(cluster)` or noise.
/// Clusters are numbered by their lowest-index core point; a border point
/// joins the cluster of its lowest-index core neighbour.
pub fn dbscan(points: &[GeoPoint], eps_m: f64, min_points: usize) -> Vec<Option<usize>> {
    let index = NeighbourIndex::new(points, eps_m);
    let neighbours: Vec<Vec<usize>> = (0..points.len()).map(|i| index.neighbours(i)).collect();
    let core: Vec<bool> = neighbours.iter().map(|n| n.len() >= min_points).collect();
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut next = 0;
    for seed in 0..points.len() {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(next);
        let mut stack = vec![seed];
        while let Some(p) = stack.pop() {
            for &q in &neighbours[p] {
                if core[q] && labels[q].is_none() {
                    labels[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..points.len() {
        if !core[i] {
            labels[i] = neighbours[i].iter().find(|&&q| core[q]).and_then(|&q| labels[q]);
        }
    }
    labels
}

fn groups_from_labels(labels: &[Option<usize>]) -> Vec<Vec<usize>> {
    let n = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); n];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            groups[*l].push(i);
        }
    }
    groups
}

/// Arithmetic mean of latitudes and longitudes, adequate for clusters a few
/// kilometres across away from the antimeridian.
pub fn centroid(points: impl IntoIterator<Item = GeoPoint>) -> Option<GeoPoint> {
    let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        lat += p.lat();
        lon += p.lon();
        n += 1;
    }
    (n > 0).then(|| GeoPoint::new(lat / n as f64, lon / n as f64).expect("mean of valid coordinates"))
}

/// Largest distance from the centroid.
pub fn radius(points: &[GeoPoint]) -> f64 {
    let Some(c) = centroid(points.iter().copied()) else {
        return 0.0;
    };
    points.iter().map(|p| haversine_distance(c, *p)).fold(0.0, f64::max)
}

fn subset(points: &[StaticPoint], members: &[usize]) -> Vec<GeoPoint> {
    members.iter().map(|&i| points[i].point).collect()
}

fn refine(points: &[StaticPoint], members: Vec<usize>, eps_m: f64, cfg: &ClusterConfig, out: &mut Vec<Vec<usize>>) {
    let geo = subset(points, &members);
    if radius(&geo) <= cfg.max_radius_m {
        out.push(members);
        return;
    }
    let eps = eps_m / 2.0;
    if eps < cfg.min_eps_m {
        return;
    }
    for sub in groups_from_labels(&dbscan(&geo, eps, cfg.min_points)) {
        let sub: Vec<usize> = sub.into_iter().map(|k| members[k]).collect();
        refine(points, sub, eps, cfg, out);
    }
}

/// Median speed between time-consecutive member points; `None` with fewer
/// than two points.
fn median_speed(points: &[StaticPoint], members: &[usize]) -> Option<f64> {
    let mut ordered: Vec<&StaticPoint> = members.iter().map(|&i| &points[i]).collect();
    ordered.sort_by_key(|p| p.ts);
    let mut speeds: Vec<f64> = ordered
        .windows(2)
        .map(|w| {
            let dt = (w[1].ts - w[0].ts).max(1) as f64;
            haversine_distance(w[0].point, w[1].point) / dt
        })
        .collect();
    if speeds.is_empty() {
        return None;
    }
    speeds.sort_by(f64::total_cmp);
    let m = speeds.len();
    Some(if m % 2 == 1 {
        speeds[m / 2]
    } else {
        (speeds[m / 2 - 1] + speeds[m / 2]) / 2.0
    })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges groups whose centroids are closer than `merge_eps_m`, transitively.
/// A connected set is merged only if the merged cluster still fits within
/// `max_radius_m`; otherwise its members stay separate. The result is
/// canonical (members sorted, groups ordered by first member), so it does not
/// depend on input order.
pub fn merge_nearby(points: &[GeoPoint], groups: Vec<Vec<usize>>, cfg: &ClusterConfig) -> Vec<Vec<usize>> {
    let centroids: Vec<GeoPoint> = groups
        .iter()
        .map(|g| centroid(g.iter().map(|&i| points[i])).expect("groups are non-empty"))
        .collect();
    let mut parent: Vec<usize> = (0..groups.len()).collect();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            if haversine_distance(centroids[a], centroids[b]) < cfg.merge_eps_m {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut sets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for g in 0..groups.len() {
        let root = find(&mut parent, g);
        sets.entry(root).or_default().push(g);
    }
    let mut out = Vec::new();
    for members in sets.into_values() {
        let merged: Vec<usize> = members.iter().flat_map(|&g| groups[g].iter().copied()).collect();
        let geo: Vec<GeoPoint> = merged.iter().map(|&i| points[i]).collect();
        if members.len() == 1 || radius(&geo) <= cfg.max_radius_m {
            out.push(merged);
        } else {
            out.extend(members.iter().map(|&g| groups[g].clone()));
        }
    }
    for g in &mut out {
        g.sort_unstable();
    }
    out.sort();
    out
}

fn visits(points: &[StaticPoint], members: &[usize]) -> Vec<(i64, i64)> {
    let mut ordered: Vec<&StaticPoint> = members.iter().map(|&i| &points[i]).collect();
    ordered.sort_by_key(|p| p.seq);
    let mut out: Vec<(i64, i64)> = Vec::new();
    let mut last_seq: Option<usize> = None;
    for p in ordered {
        match (last_seq, out.last_mut()) {
            (Some(s), Some(v)) if p.seq == s + 1 => v.1 = p.ts,
            _ => out.push((p.ts, p.ts)),
        }
        last_seq = Some(p.seq);
    }
    out
}

/// Clusters one device's static points into activity locations.
pub fn cluster_activities(device_id: &DeviceId, points: &[StaticPoint], cfg: &ClusterConfig) -> Vec<ActivityCluster> {
    let geo: Vec<GeoPoint> = points.iter().map(|p| p.point).collect();
    let mut refined = Vec::new();
    for group in groups_from_labels(&dbscan(&geo, cfg.eps_m, cfg.min_points)) {
        refine(points, group, cfg.eps_m, cfg, &mut refined);
    }
    refined.retain(|g| median_speed(points, g).is_none_or(|s| s <= cfg.static_speed_cap_mps));
    let mut merged = merge_nearby(&geo, refined, cfg);
    merged.sort_by_key(|g| g.iter().map(|&i| points[i].seq).min());
    merged
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let member_geo = subset(points, &members);
            let visits = visits(points, &members);
            let days: BTreeSet<NaiveDate> = members.iter().map(|&i| local_date(points[i].ts, 0)).collect();
            ActivityCluster {
                cluster_id: format!("c{k:04}"),
                device_id: device_id.clone(),
                centroid: centroid(member_geo.iter().copied()).expect("non-empty cluster"),
                radius_m: radius(&member_geo),
                total_dwell_s: visits.iter().map(|(s, e)| e - s).sum(),
                visits,
                distinct_days: days.len(),
                n_points: members.len(),
            }
        })
        .collect()
}

/// Share of `[start, end]` falling in local night windows. A zero-length
/// visit counts fully if its instant is at night.
pub fn night_weight(start: i64, end: i64, utc_offset_s: i32, cfg: &ClusterConfig) -> f64 {
    let (s, e) = (start + i64::from(utc_offset_s), end + i64::from(utc_offset_s));
    let night_start = i64::from(cfg.night_start_hour) * 3600;
    let night_end = i64::from(cfg.night_end_hour) * 3600 + SECONDS_PER_DAY;
    let in_night = |t: i64| {
        let sod = t.rem_euclid(SECONDS_PER_DAY);
        sod >= night_start || sod < night_end - SECONDS_PER_DAY
    };
    if e <= s {
        return if in_night(s) { 1.0 } else { 0.0 };
    }
    let first_day = s.div_euclid(SECONDS_PER_DAY) - 1;
    let last_day = e.div_euclid(SECONDS_PER_DAY);
    let overlap: i64 = (first_day..=last_day)
        .map(|d| {
            let base = d * SECONDS_PER_DAY;
            let lo = s.max(base + night_start);
            let hi = e.min(base + night_end);
            (hi - lo).max(0)
        })
        .sum();
    overlap as f64 / (e - s) as f64
}

fn offset_of(c: &ActivityCluster, zones: &ZoneIndex) -> i32 {
    zones.locate(c.centroid).map_or(0, |z| z.utc_offset_s())
}

/// Night-weighted count of distinct local days: each day a visit touches
/// scores that visit's night weight, keeping the best visit per day.
pub fn home_score(c: &ActivityCluster, utc_offset_s: i32, cfg: &ClusterConfig) -> f64 {
    let mut best: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for &(s, e) in &c.visits {
        let w = night_weight(s, e, utc_offset_s, cfg);
        let mut day = local_date(s, utc_offset_s);
        let last = local_date(e, utc_offset_s);
        while day <= last {
            let slot = best.entry(day).or_insert(0.0);
            *slot = slot.max(w);
            day = day.succ_opt().expect("date in range");
        }
    }
    best.values().sum()
}

/// Index of the home cluster: highest [`home_score`], then longest total
/// dwell, then smallest cluster id.
pub fn home_cluster(clusters: &[ActivityCluster], zones: &ZoneIndex, cfg: &ClusterConfig) -> Option<usize> {
    let scores: Vec<f64> = clusters.iter().map(|c| home_score(c, offset_of(c, zones), cfg)).collect();
    (0..clusters.len()).max_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(clusters[a].total_dwell_s.cmp(&clusters[b].total_dwell_s))
            .then(clusters[b].cluster_id.cmp(&clusters[a].cluster_id))
    })
}

pub fn identify_home(clusters: &[ActivityCluster], zones: &ZoneIndex, cfg: &ClusterConfig) -> Result<ZoneId> {
    let idx = home_cluster(clusters, zones, cfg).ok_or_else(|| Error::Missing("device has no activity clusters".into()))?;
    zones
        .locate_id(clusters[idx].centroid)
        .ok_or_else(|| Error::Missing(format!("home cluster of {} lies outside every zone", clusters[idx].device_id)))
}

/// Local days on which the cluster's visits add up to at least the work
/// dwell floor. Each visit is split across the local days it spans.
pub fn work_days(c: &ActivityCluster, utc_offset_s: i32, cfg: &ClusterConfig) -> usize {
    let mut dwell: BTreeMap<NaiveDate, i64> = BTreeMap::new();
    for &(s, e) in &c.visits {
        let mut day = local_date(s, utc_offset_s);
        let last = local_date(e, utc_offset_s);
        while day <= last {
            let base = midnight_ts(day) - i64::from(utc_offset_s);
            let overlap = e.min(base + SECONDS_PER_DAY) - s.max(base);
            *dwell.entry(day).or_insert(0) += overlap.max(0);
            day = day.succ_opt().expect("date in range");
        }
    }
    dwell.values().filter(|&&d| d >= cfg.work_min_dwell_s).count()
}

/// Index of the work cluster, if any: the non-home cluster with the most
/// qualifying work days, accepted when those days cover at least
/// `work_min_day_fraction` of the device's observed days.
pub fn work_cluster(
    clusters: &[ActivityCluster],
    home: usize,
    observed_days: usize,
    zones: &ZoneIndex,
    cfg: &ClusterConfig,
) -> Option<usize> {
    let days: Vec<usize> = clusters.iter().map(|c| work_days(c, offset_of(c, zones), cfg)).collect();
    let best = (0..clusters.len()).filter(|&i| i != home).max_by(|&a, &b| {
        days[a]
            .cmp(&days[b])
            .then(clusters[a].total_dwell_s.cmp(&clusters[b].total_dwell_s))
            .then(clusters[b].cluster_id.cmp(&clusters[a].cluster_id))
    })?;
    let enough = days[best] > 0 && days[best] as f64 >= cfg.work_min_day_fraction * observed_days as f64;
    enough.then_some(best)
}

/// Work zone for a device whose home zone is known. A work cluster outside
/// every zone yields an error, like a home outside every zone.
pub fn identify_work(clusters: &[ActivityCluster], observed_days: usize, zones: &ZoneIndex, cfg: &ClusterConfig) -> Result<Option<ZoneId>> {
    let Some(home) = home_cluster(clusters, zones, cfg) else {
        return Ok(None);
    };
    match work_cluster(clusters, home, observed_days, zones, cfg) {
        None => Ok(None),
        Some(w) => zones
            .locate_id(clusters[w].centroid)
            .map(Some)
            .ok_or_else(|| Error::Missing(format!("work cluster of {} lies outside every zone", clusters[w].device_id))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: DeviceId,
    pub home_zone: ZoneId,
    pub work_zone: Option<ZoneId>,
    pub employed: bool,
}

/// Why a device could not be profiled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ProfileIssue {
    NoClusters,
    HomeOutsideZones,
    WorkOutsideZones,
}

/// Clusters the static points of one device and infers its home and work.
/// `observed_days` is the number of distinct local days with any sighting.
pub fn profile_device(
    device_id: &DeviceId,
    points: &[StaticPoint],
    observed_days: usize,
    zones: &ZoneIndex,
    cfg: &ClusterConfig,
) -> std::result::Result<DeviceProfile, ProfileIssue> {
    let clusters = cluster_activities(device_id, points, cfg);
    let home = home_cluster(&clusters, zones, cfg).ok_or(ProfileIssue::NoClusters)?;
    let home_zone = zones.locate_id(clusters[home].centroid).ok_or(ProfileIssue::HomeOutsideZones)?;
    let work_zone = match work_cluster(&clusters, home, observed_days, zones, cfg) {
        None => None,
        Some(w) => Some(zones.locate_id(clusters[w].centroid).ok_or(ProfileIssue::WorkOutsideZones)?),
    };
    Ok(DeviceProfile {
        device_id: device_id.clone(),
        home_zone,
        employed: work_zone.is_some(),
        work_zone,
    })
}

pub fn write_profiles(mut out: impl Write, profiles: &[DeviceProfile]) -> Result<()> {
    writeln!(out, "{PROFILES_HEADER}")?;
    for p in profiles {
        writeln!(
            out,
            "{},{},{},{}",
            csv_field(p.device_id.as_str()),
            csv_field(&p.home_zone),
            csv_field(p.work_zone.as_deref().unwrap_or("")),
            p.employed
        )?;
    }
    Ok(())
}

pub fn read_profiles(source: impl Read) -> Result<Vec<DeviceProfile>> {
    let mut reader = csv::Reader::from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.join(",") != PROFILES_HEADER {
        return Err(Error::Input(format!("profiles header must be `{PROFILES_HEADER}`")));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let employed: bool = rec[3]
            .parse()
            .map_err(|_| Error::Input(format!("profiles row {}: bad employed flag", row + 2)))?;
        let work_zone = (!rec[2].is_empty()).then(|| ZoneId::from(&rec[2]));
        if employed != work_zone.is_some() {
            return Err(Error::Input(format!(
                "profiles row {}: work_zone must be present exactly when employed",
                row + 2
            )));
        }
        out.push(DeviceProfile {
            device_id: DeviceId::new(&rec[0]),
            home_zone: ZoneId::from(&rec[1]),
            work_zone,
            employed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::ymd;
    use crate::geo::{destination, Zone};

    fn dev() -> DeviceId {
        DeviceId::new("d")
    }

    fn base() -> GeoPoint {
        GeoPoint::new(40.0, -75.0).unwrap()
    }

    fn square(id: &str, lat: f64, lon: f64, side: f64) -> Zone {
        let p = |a: f64, b: f64| GeoPoint::new(a, b).unwrap();
        Zone {
            zone_id: id.into(),
            county_id: "C".into(),
            state_id: "S".into(),
            population: 10,
            boundary: vec![p(lat, lon), p(lat, lon + side), p(lat + side, lon + side), p(lat + side, lon)],
            utc_offset_minutes: 0,
        }
    }

    fn zones() -> ZoneIndex {
        ZoneIndex::new(vec![square("Z", 39.5, -75.5, 1.0)]).unwrap()
    }

    fn at(seq: usize, ts: i64, point: GeoPoint) -> StaticPoint {
        StaticPoint { seq, ts, point }
    }

    #[test]
    fn identical_points_form_one_tight_cluster() {
        let pts: Vec<StaticPoint> = (0..10).map(|i| at(i, 1_000 + 600 * i as i64, base())).collect();
        let c = cluster_activities(&dev(), &pts, &ClusterConfig::default());
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].radius_m, 0.0);
        assert_eq!(c[0].visits, vec![(1_000, 1_000 + 5_400)]);
        assert_eq!(c[0].n_points, 10);
    }

    #[test]
    fn sparse_points_are_noise() {
        let pts: Vec<StaticPoint> = (0..4).map(|i| at(i, 1_000 + i as i64, base())).collect();
        assert!(cluster_activities(&dev(), &pts, &ClusterConfig::default()).is_empty());
    }

    #[test]
    fn chained_blob_is_split_under_the_radius_cap() {
        // Tight knots of six points every 90 m along 7 km chain into one
        // density cluster wider than two miles.
        let cfg = ClusterConfig::default();
        let mut pts = Vec::new();
        for knot in 0..80 {
            let centre = destination(base(), 1.0, 90.0 * knot as f64);
            for k in 0..6 {
                let n = pts.len();
                pts.push(at(2 * n, 10_000 * n as i64, destination(centre, k as f64, 3.0)));
            }
        }
        let geo: Vec<GeoPoint> = pts.iter().map(|p| p.point).collect();
        let first = groups_from_labels(&dbscan(&geo, cfg.eps_m, cfg.min_points));
        assert_eq!(first.len(), 1);
        assert!(radius(&geo) > cfg.max_radius_m);
        let c = cluster_activities(&dev(), &pts, &cfg);
        assert_eq!(c.len(), 80);
        assert!(c.iter().all(|c| c.radius_m <= cfg.max_radius_m));
    }

    #[test]
    fn fast_cluster_is_dropped() {
        let cfg = ClusterConfig::default();
        // 8 points within 70 m but only one second apart each.
        let pts: Vec<StaticPoint> = (0..8)
            .map(|i| at(i, 1_000 + i as i64, destination(base(), 0.0, 10.0 * i as f64)))
            .collect();
        assert!(cluster_activities(&dev(), &pts, &cfg).is_empty());
    }

    #[test]
    fn merge_respects_radius_and_is_canonical() {
        let cfg = ClusterConfig::default();
        let pts = vec![base(), destination(base(), 0.0, 100.0), destination(base(), 0.0, 5_000.0)];
        let merged = merge_nearby(&pts, vec![vec![2], vec![1], vec![0]], &cfg);
        assert_eq!(merged, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn night_weight_cases() {
        let cfg = ClusterConfig::default();
        let day = midnight_ts(ymd(2020, 2, 3));
        assert_eq!(night_weight(day + 22 * 3600, day + 30 * 3600, 0, &cfg), 1.0);
        assert_eq!(night_weight(day + 9 * 3600, day + 17 * 3600, 0, &cfg), 0.0);
        assert_eq!(night_weight(day + 18 * 3600, day + 20 * 3600, 0, &cfg), 0.5);
        assert_eq!(night_weight(day + 3600, day + 3600, 0, &cfg), 1.0);
        assert_eq!(night_weight(day + 12 * 3600, day + 12 * 3600, 0, &cfg), 0.0);
        // Noon UTC is 07:00 five hours west.
        assert_eq!(night_weight(day + 12 * 3600, day + 12 * 3600, -5 * 3600, &cfg), 1.0);
    }

    fn cluster(id: &str, at: GeoPoint, visits: Vec<(i64, i64)>) -> ActivityCluster {
        ActivityCluster {
            cluster_id: id.into(),
            device_id: dev(),
            centroid: at,
            radius_m: 0.0,
            total_dwell_s: visits.iter().map(|(s, e)| e - s).sum(),
            distinct_days: 0,
            n_points: visits.len() * 2,
            visits,
        }
    }

    #[test]
    fn home_is_the_night_cluster() {
        let cfg = ClusterConfig::default();
        let day0 = midnight_ts(ymd(2020, 2, 3));
        let nights: Vec<(i64, i64)> = (0..10)
            .map(|d| (day0 + d * SECONDS_PER_DAY + 20 * 3600, day0 + (d + 1) * SECONDS_PER_DAY + 7 * 3600))
            .collect();
        let office: Vec<(i64, i64)> = (0..10)
            .map(|d| (day0 + d * SECONDS_PER_DAY + 9 * 3600, day0 + d * SECONDS_PER_DAY + 17 * 3600))
            .collect();
        let w = destination(base(), 1.0, 5_000.0);
        let clusters = vec![cluster("c0000", w, office), cluster("c0001", base(), nights)];
        let z = zones();
        assert_eq!(home_cluster(&clusters, &z, &cfg), Some(1));
        assert_eq!(work_cluster(&clusters, 1, 10, &z, &cfg), Some(0));
        assert_eq!(&*identify_home(&clusters, &z, &cfg).unwrap(), "Z");
    }

    #[test]
    fn home_tie_breaks_on_dwell() {
        let cfg = ClusterConfig::default();
        let day0 = midnight_ts(ymd(2020, 2, 3));
        let nights: Vec<(i64, i64)> = (0..3)
            .map(|d| (day0 + d * SECONDS_PER_DAY + 20 * 3600, day0 + (d + 1) * SECONDS_PER_DAY + 7 * 3600))
            .collect();
        let long = ActivityCluster {
            total_dwell_s: 30 * 3600,
            ..cluster("c0001", base(), nights.clone())
        };
        let short = ActivityCluster {
            total_dwell_s: 20 * 3600,
            ..cluster("c0000", base(), nights)
        };
        assert_eq!(home_score(&long, 0, &cfg), home_score(&short, 0, &cfg));
        assert_eq!(home_cluster(&[long.clone(), short.clone()], &zones(), &cfg), Some(0));
        assert_eq!(home_cluster(&[short, long], &zones(), &cfg), Some(1));
    }

    #[test]
    fn night_shift_counts_as_work() {
        let cfg = ClusterConfig::default();
        let day0 = midnight_ts(ymd(2020, 2, 3));
        let shifts: Vec<(i64, i64)> = (0..20)
            .map(|d| {
                (
                    day0 + 2 * d * SECONDS_PER_DAY + 22 * 3600,
                    day0 + (2 * d + 1) * SECONDS_PER_DAY + 6 * 3600,
                )
            })
            .collect();
        let days: Vec<(i64, i64)> = (0..40)
            .map(|d| (day0 + d * SECONDS_PER_DAY + 10 * 3600, day0 + d * SECONDS_PER_DAY + 18 * 3600))
            .collect();
        let w = destination(base(), 1.0, 5_000.0);
        let clusters = vec![cluster("c0000", base(), days), cluster("c0001", w, shifts)];
        assert_eq!(work_cluster(&clusters, 0, 40, &zones(), &cfg), Some(1));
    }

    #[test]
    fn rare_cluster_is_not_work() {
        let cfg = ClusterConfig::default();
        let day0 = midnight_ts(ymd(2020, 2, 3));
        let w = destination(base(), 1.0, 5_000.0);
        let visits = vec![
            (day0 + 9 * 3600, day0 + 17 * 3600),
            (day0 + 86_400 + 9 * 3600, day0 + 86_400 + 17 * 3600),
        ];
        let home_visits = vec![(day0, day0 + 40 * SECONDS_PER_DAY)];
        let clusters = vec![cluster("c0000", base(), home_visits), cluster("c0001", w, visits)];
        assert_eq!(work_cluster(&clusters, 0, 40, &zones(), &cfg), None);
        assert_eq!(work_cluster(&clusters[..1], 0, 40, &zones(), &cfg), None);
    }

    #[test]
    fn profiles_round_trip() {
        let profiles = vec![
            DeviceProfile {
                device_id: DeviceId::new("a"),
                home_zone: "Z1".into(),
                work_zone: Some("Z2".into()),
                employed: true,
            },
            DeviceProfile {
                device_id: DeviceId::new("b,c"),
                home_zone: "Z1".into(),
                work_zone: None,
                employed: false,
            },
        ];
        let mut buf = Vec::new();
        write_profiles(&mut buf, &profiles).unwrap();
        assert_eq!(read_profiles(buf.as_slice()).unwrap(), profiles);
        let bad = format!("{PROFILES_HEADER}\na,Z1,,true\n");
        assert!(read_profiles(bad.as_bytes()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ClusterConfig::default().validate().is_ok());
        let cfg = ClusterConfig {
            eps_m: 5_000.0,
            ..ClusterConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
