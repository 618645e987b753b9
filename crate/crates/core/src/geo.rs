//! Spherical distance and zone membership.
//!
//! Distances use a sphere of radius 6,371,000 m. Polygon membership is
//! planar ray casting in the (lon, lat) plane, which is adequate for zones a
//! few tens of kilometres across that stay clear of the poles and the
//! antimeridian. Antimeridian-crossing polygons are not supported.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Opaque zone identifier, shared cheaply between trips and profiles.
pub type ZoneId = Arc<str>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Coordinate(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Coordinate(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl TryFrom<[f64; 2]> for GeoPoint {
    type Error = Error;

    fn try_from([lat, lon]: [f64; 2]) -> Result<Self> {
        Self::new(lat, lon)
    }
}

impl From<GeoPoint> for [f64; 2] {
    fn from(p: GeoPoint) -> Self {
        [p.lat, p.lon]
    }
}

/// Great-circle distance in metres.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Point reached by travelling `fraction` of the great circle from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, fraction: f64) -> GeoPoint {
    let delta = haversine_distance(a, b) / EARTH_RADIUS_M;
    if delta < 1e-12 {
        return a;
    }
    let (lat1, lon1) = (a.lat.to_radians(), a.lon.to_radians());
    let (lat2, lon2) = (b.lat.to_radians(), b.lon.to_radians());
    let wa = ((1.0 - fraction) * delta).sin() / delta.sin();
    let wb = (fraction * delta).sin() / delta.sin();
    let x = wa * lat1.cos() * lon1.cos() + wb * lat2.cos() * lon2.cos();
    let y = wa * lat1.cos() * lon1.sin() + wb * lat2.cos() * lon2.sin();
    let z = wa * lat1.sin() + wb * lat2.sin();
    GeoPoint {
        lat: z.atan2((x * x + y * y).sqrt()).to_degrees(),
        lon: y.atan2(x).to_degrees(),
    }
}

/// Destination after moving `distance_m` from `origin` on initial bearing
/// `bearing_rad` (clockwise from north).
pub fn destination(origin: GeoPoint, bearing_rad: f64, distance_m: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let lat1 = origin.lat.to_radians();
    let lon1 = origin.lon.to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * bearing_rad.cos()).asin();
    let lon2 = lon1 + (bearing_rad.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    let lon = (lon2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    GeoPoint {
        lat: lat2.to_degrees(),
        lon,
    }
}

/// Ray-casting membership test. Points on an edge or vertex count as inside.
pub fn point_in_polygon(p: GeoPoint, ring: &[GeoPoint]) -> Result<bool> {
    if ring.len() < 3 {
        return Err(Error::Geometry(format!(
            "polygon ring needs at least 3 vertices, got {}",
            ring.len()
        )));
    }
    let (x, y) = (p.lon, p.lat);
    let mut inside = false;
    let mut j = ring.len() - 1;
    for i in 0..ring.len() {
        let (xi, yi) = (ring[i].lon, ring[i].lat);
        let (xj, yj) = (ring[j].lon, ring[j].lat);
        if on_segment(x, y, xi, yi, xj, yj) {
            return Ok(true);
        }
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    Ok(inside)
}

fn on_segment(x: f64, y: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
    let scale = (x2 - x1).abs().max((y2 - y1).abs()).max(1.0);
    cross.abs() <= 1e-12 * scale && x >= x1.min(x2) && x <= x1.max(x2) && y >= y1.min(y2) && y <= y1.max(y2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    fn of(points: &[GeoPoint]) -> Self {
        points.iter().fold(
            Self {
                min_lat: f64::INFINITY,
                max_lat: f64::NEG_INFINITY,
                min_lon: f64::INFINITY,
                max_lon: f64::NEG_INFINITY,
            },
            |b, p| Self {
                min_lat: b.min_lat.min(p.lat),
                max_lat: b.max_lat.max(p.lat),
                min_lon: b.min_lon.min(p.lon),
                max_lon: b.max_lon.max(p.lon),
            },
        )
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    fn union(&self, other: &Self) -> Self {
        Self {
            min_lat: self.min_lat.min(other.min_lat),
            max_lat: self.max_lat.max(other.max_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }
}

/// One record of the zone file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: ZoneId,
    pub county_id: Arc<str>,
    pub state_id: Arc<str>,
    pub population: u64,
    pub boundary: Vec<GeoPoint>,
    /// Fixed offset of local time from UTC, in minutes.
    #[serde(default)]
    pub utc_offset_minutes: i32,
}

impl Zone {
    pub fn utc_offset_s(&self) -> i32 {
        self.utc_offset_minutes * 60
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::of(&self.boundary)
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        point_in_polygon(p, &self.boundary).unwrap_or(false)
    }

    fn validate(&self) -> Result<()> {
        let n = self.boundary.len();
        if n < 3 {
            return Err(Error::Geometry(format!(
                "zone {} has {n} boundary vertices, need at least 3",
                self.zone_id
            )));
        }
        if self.boundary[0] == self.boundary[n - 1] {
            return Err(Error::Geometry(format!(
                "zone {}: ring must not repeat its first vertex",
                self.zone_id
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (a1, a2) = (self.boundary[i], self.boundary[(i + 1) % n]);
                let (b1, b2) = (self.boundary[j], self.boundary[(j + 1) % n]);
                if segments_intersect(a1, a2, b1, b2) {
                    return Err(Error::Geometry(format!(
                        "zone {} boundary self-intersects (edges {i} and {j})",
                        self.zone_id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn segments_intersect(a1: GeoPoint, a2: GeoPoint, b1: GeoPoint, b2: GeoPoint) -> bool {
    let d1 = orient(b1, b2, a1);
    let d2 = orient(b1, b2, a2);
    let d3 = orient(a1, a2, b1);
    let d4 = orient(a1, a2, b2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let touches = |d: f64, p: GeoPoint, s1: GeoPoint, s2: GeoPoint| d == 0.0 && on_segment(p.lon, p.lat, s1.lon, s1.lat, s2.lon, s2.lat);
    touches(d1, a1, b1, b2) || touches(d2, a2, b1, b2) || touches(d3, b1, a1, a2) || touches(d4, b2, a1, a2)
}

/// Validated zone set with a uniform-grid bounding-box index.
///
/// Zones are kept sorted by `zone_id`; candidate lists inherit that order so
/// a point on an edge shared by several zones resolves to the
/// lexicographically smallest id.
#[derive(Debug, Clone)]
pub struct ZoneIndex {
    zones: Vec<Zone>,
    by_id: HashMap<ZoneId, usize>,
    boxes: Vec<BoundingBox>,
    extent: BoundingBox,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl ZoneIndex {
    pub fn new(mut zones: Vec<Zone>) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::Input("zone set is empty".into()));
        }
        zones.sort_by(|a, b| a.zone_id.cmp(&b.zone_id));
        let mut by_id = HashMap::with_capacity(zones.len());
        let mut county_state: HashMap<&str, &str> = HashMap::new();
        for (i, zone) in zones.iter().enumerate() {
            zone.validate()?;
            if by_id.insert(zone.zone_id.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate zone_id {}", zone.zone_id)));
            }
            match county_state.insert(&zone.county_id, &zone.state_id) {
                Some(prev) if prev != &*zone.state_id => {
                    return Err(Error::Input(format!(
                        "county {} appears in states {prev} and {}",
                        zone.county_id, zone.state_id
                    )));
                }
                _ => {}
            }
        }

        let boxes: Vec<BoundingBox> = zones.iter().map(Zone::bbox).collect();
        let extent = boxes[1..].iter().fold(boxes[0], |acc, b| acc.union(b));
        let side = ((zones.len() as f64).sqrt().ceil() as usize * 2).clamp(1, 256);
        let (cols, rows) = (side, side);
        let mut index = Self {
            zones,
            by_id,
            boxes: boxes.clone(),
            extent,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
        };
        for (i, b) in boxes.iter().enumerate() {
            let (c0, r0) = index.cell_of(b.min_lon, b.min_lat);
            let (c1, r1) = index.cell_of(b.max_lon, b.max_lat);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    index.cells[r * cols + c].push(i);
                }
            }
        }
        Ok(index)
    }

    pub fn from_json_reader(reader: impl std::io::Read) -> Result<Self> {
        let zones: Vec<Zone> = serde_json::from_reader(reader)?;
        Self::new(zones)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_reader(std::io::BufReader::new(file))
    }

    fn cell_of(&self, lon: f64, lat: f64) -> (usize, usize) {
        let span_lon = (self.extent.max_lon - self.extent.min_lon).max(1e-12);
        let span_lat = (self.extent.max_lat - self.extent.min_lat).max(1e-12);
        let c = ((lon - self.extent.min_lon) / span_lon * self.cols as f64).floor();
        let r = ((lat - self.extent.min_lat) / span_lat * self.rows as f64).floor();
        ((c.max(0.0) as usize).min(self.cols - 1), (r.max(0.0) as usize).min(self.rows - 1))
    }

    /// Zone containing `p`, lowest `zone_id` on shared boundaries.
    pub fn locate(&self, p: GeoPoint) -> Option<&Zone> {
        if !self.extent.contains(p) {
            return None;
        }
        let (c, r) = self.cell_of(p.lon, p.lat);
        self.cells[r * self.cols + c]
            .iter()
            .find(|&&i| self.boxes[i].contains(p) && self.zones[i].contains(p))
            .map(|&i| &self.zones[i])
    }

    pub fn locate_id(&self, p: GeoPoint) -> Option<ZoneId> {
        self.locate(p).map(|z| z.zone_id.clone())
    }

    pub fn zone(&self, id: &str) -> Option<&Zone> {
        self.by_id.get(id).map(|&i| &self.zones[i])
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn county_populations(&self) -> BTreeMap<Arc<str>, u64> {
        let mut out = BTreeMap::new();
        for z in &self.zones {
            *out.entry(z.county_id.clone()).or_insert(0) += z.population;
        }
        out
    }

    pub fn state_populations(&self) -> BTreeMap<Arc<str>, u64> {
        let mut out = BTreeMap::new();
        for z in &self.zones {
            *out.entry(z.state_id.clone()).or_insert(0) += z.population;
        }
        out
    }

    pub fn county_state(&self, county: &str) -> Option<Arc<str>> {
        self.zones.iter().find(|z| &*z.county_id == county).map(|z| z.state_id.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.zones)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn square(id: &str, lat0: f64, lon0: f64, side: f64) -> Zone {
        Zone {
            zone_id: id.into(),
            county_id: format!("c-{id}").into(),
            state_id: "S".into(),
            population: 10,
            boundary: vec![
                pt(lat0, lon0),
                pt(lat0, lon0 + side),
                pt(lat0 + side, lon0 + side),
                pt(lat0 + side, lon0),
            ],
            utc_offset_minutes: 0,
        }
    }

    #[test]
    fn rejects_out_of_range_coordinates() {
        assert!(GeoPoint::new(123.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(-90.0, 180.0).is_ok());
    }

    #[test]
    fn haversine_identity_and_antipode() {
        let a = pt(38.9, -77.0);
        assert_eq!(haversine_distance(a, a), 0.0);
        let d = haversine_distance(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_M).abs() < 1e-6);
        assert!((d - 20_015_086.8).abs() < 1.0);
    }

    #[test]
    fn interpolation_walks_the_great_circle() {
        let (a, b) = (pt(38.9072, -77.0369), pt(39.2904, -76.6122));
        let total = haversine_distance(a, b);
        let mid = interpolate(a, b, 0.25);
        assert!((haversine_distance(a, mid) - 0.25 * total).abs() < 1e-6);
        assert!((haversine_distance(mid, b) - 0.75 * total).abs() < 1e-6);
        let far = destination(a, 1.0, 12_345.0);
        assert!((haversine_distance(a, far) - 12_345.0).abs() < 1e-6);
    }

    #[test]
    fn polygon_basics() {
        let ring = square("A", 0.0, 0.0, 1.0).boundary;
        assert!(point_in_polygon(pt(0.5, 0.5), &ring).unwrap());
        assert!(!point_in_polygon(pt(11.5, 0.5), &ring).unwrap());
        // Edges and vertices are inside.
        assert!(point_in_polygon(pt(0.0, 0.5), &ring).unwrap());
        assert!(point_in_polygon(pt(1.0, 1.0), &ring).unwrap());
        assert!(point_in_polygon(pt(0.5, 0.5), &ring[..2]).is_err());
    }

    #[test]
    fn locate_and_tie_break() {
        let index = ZoneIndex::new(vec![square("B", 0.0, 1.0, 1.0), square("A", 0.0, 0.0, 1.0)]).unwrap();
        assert_eq!(index.locate_id(pt(0.5, 0.5)).as_deref(), Some("A"));
        assert_eq!(index.locate_id(pt(0.5, 1.5)).as_deref(), Some("B"));
        assert_eq!(index.locate_id(pt(0.5, 1.0)).as_deref(), Some("A"));
        assert_eq!(index.locate_id(pt(5.0, 5.0)), None);
        assert_eq!(index.locate_id(pt(0.5, 2.5)), None);
    }

    #[test]
    fn rejects_bad_zone_sets() {
        let dup = vec![square("A", 0.0, 0.0, 1.0), square("A", 0.0, 1.0, 1.0)];
        assert!(ZoneIndex::new(dup).is_err());

        let mut bow = square("X", 0.0, 0.0, 1.0);
        bow.boundary.swap(1, 2);
        assert!(matches!(ZoneIndex::new(vec![bow]), Err(Error::Geometry(_))));

        let mut closed = square("Y", 0.0, 0.0, 1.0);
        closed.boundary.push(closed.boundary[0]);
        assert!(ZoneIndex::new(vec![closed]).is_err());

        let mut a = square("A", 0.0, 0.0, 1.0);
        let mut b = square("B", 0.0, 1.0, 1.0);
        a.county_id = "C".into();
        b.county_id = "C".into();
        b.state_id = "T".into();
        assert!(ZoneIndex::new(vec![a, b]).is_err());
    }

    #[test]
    fn zone_file_json_shape() {
        let json = r#"[{"zone_id":"Z1","county_id":"C1","state_id":"S1","population":500,
            "boundary":[[0,0],[0,1],[1,1],[1,0]]}]"#;
        let index = ZoneIndex::from_json_reader(json.as_bytes()).unwrap();
        let z = index.zone("Z1").unwrap();
        assert_eq!(z.population, 500);
        assert_eq!(z.utc_offset_s(), 0);
        assert_eq!(index.locate_id(pt(0.25, 0.75)).as_deref(), Some("Z1"));
        assert_eq!(index.county_populations().get("C1"), Some(&500));
    }
}
