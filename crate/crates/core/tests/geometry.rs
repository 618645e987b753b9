mod oracles;

use std::sync::Arc;

use fatigue_core::geo::{haversine_distance, point_in_polygon, GeoPoint, Zone, ZoneIndex};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = GeoPoint> {
    (-89.0f64..89.0, -179.0f64..179.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

/// Star-shaped ring around a centre: angles sorted, radii random, so the
/// ring never crosses itself.
fn ring() -> impl Strategy<Value = Vec<GeoPoint>> {
    (
        -50.0f64..50.0,
        -150.0f64..150.0,
        prop::collection::vec((0.0f64..1.0, 0.2f64..2.0), 3..12),
    )
        .prop_map(|(clat, clon, spokes)| {
            let n = spokes.len() as f64;
            spokes
                .iter()
                .enumerate()
                .map(|(i, (jitter, r))| {
                    let a = (i as f64 + 0.8 * jitter) / n * std::f64::consts::TAU;
                    GeoPoint::new(clat + r * a.sin(), clon + r * a.cos()).unwrap()
                })
                .collect()
        })
}

proptest! {
    #[test]
    fn haversine_is_symmetric(a in point(), b in point()) {
        prop_assert_eq!(haversine_distance(a, b), haversine_distance(b, a));
    }

    #[test]
    fn haversine_triangle_inequality(a in point(), b in point(), c in point()) {
        let (ab, bc, ac) = (haversine_distance(a, b), haversine_distance(b, c), haversine_distance(a, c));
        prop_assert!(ac <= ab + bc + 1e-6);
    }

    #[test]
    fn haversine_matches_chord_formula(a in point(), b in point()) {
        let (h, c) = (haversine_distance(a, b), oracles::chord_distance(a, b));
        prop_assert!((h - c).abs() <= 1e-9 * c + 1e-6, "{} vs {}", h, c);
    }

    #[test]
    fn haversine_matches_law_of_cosines_at_range(a in point(), b in point()) {
        let c = oracles::law_of_cosines_distance(a, b);
        prop_assume!(c > 10_000.0);
        let h = haversine_distance(a, b);
        prop_assert!((h - c).abs() <= 1e-7 * c, "{} vs {}", h, c);
    }

    #[test]
    fn ray_casting_matches_winding_number(ring in ring(), u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let lats = ring.iter().map(|p| p.lat());
        let lons = ring.iter().map(|p| p.lon());
        let (lo_lat, hi_lat) = lats.fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
        let (lo_lon, hi_lon) = lons.fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(x), b.max(x)));
        let p = GeoPoint::new(lo_lat - 0.1 + u * (hi_lat - lo_lat + 0.2), lo_lon - 0.1 + v * (hi_lon - lo_lon + 0.2)).unwrap();
        if let Some(inside) = oracles::winding_inside(p, &ring, 1e-9) {
            prop_assert_eq!(point_in_polygon(p, &ring).unwrap(), inside);
        }
    }

    #[test]
    fn locate_agrees_with_polygon_tests(cuts in prop::collection::vec(0.05f64..0.95, 1..4), lat in 10.0f64..11.0, lon in 20.0f64..22.0) {
        // Vertical strips with ragged shared edges.
        let mut xs = vec![20.0];
        let mut sorted = cuts.clone();
        sorted.sort_by(f64::total_cmp);
        xs.extend(sorted.iter().map(|c| 20.0 + 2.0 * c));
        xs.push(22.0);
        xs.dedup();
        let zones: Vec<Zone> = xs
            .windows(2)
            .enumerate()
            .map(|(i, w)| Zone {
                zone_id: Arc::from(format!("z{i}")),
                county_id: Arc::from(format!("c{i}")),
                state_id: Arc::from("s"),
                population: 1,
                boundary: vec![
                    GeoPoint::new(10.0, w[0]).unwrap(),
                    GeoPoint::new(10.0, w[1]).unwrap(),
                    GeoPoint::new(11.0, w[1]).unwrap(),
                    GeoPoint::new(11.0, w[0]).unwrap(),
                ],
                utc_offset_minutes: 0,
            })
            .collect();
        let index = ZoneIndex::new(zones.clone()).unwrap();
        let p = GeoPoint::new(lat, lon).unwrap();
        let expected = zones.iter().find(|z| point_in_polygon(p, &z.boundary).unwrap()).map(|z| z.zone_id.clone());
        prop_assert_eq!(index.locate_id(p), expected);
    }
}
