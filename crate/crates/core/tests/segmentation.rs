mod oracles;

use fatigue_core::trips::{segment_device, TripConfig, TripLabel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trace(seed: u64, len: usize) -> Vec<fatigue_core::ingest::Sighting> {
    oracles::random_trace(&mut ChaCha8Rng::seed_from_u64(seed), len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_brute_force_segmenter(seed in any::<u64>(), len in 1usize..=50) {
        let cfg = TripConfig::default();
        let pts = trace(seed, len);
        let got = segment_device(&pts, &cfg).unwrap();
        let kept: Vec<(usize, usize)> = oracles::segment_spans(&pts, &cfg)
            .into_iter()
            .filter(|s| oracles::span_length(&pts, *s) >= cfg.min_trip_length_m)
            .collect();
        let got_spans: Vec<(i64, i64, usize)> = got.trips.iter().map(|t| (t.departure_ts, t.arrival_ts, t.n_points)).collect();
        let want: Vec<(i64, i64, usize)> = kept.iter().map(|&(a, b)| (pts[a].ts, pts[b].ts, b - a + 1)).collect();
        prop_assert_eq!(got_spans, want);
        for (t, s) in got.trips.iter().zip(&kept) {
            prop_assert_eq!(t.distance_m, oracles::span_length(&pts, *s));
        }
        for (i, p) in got.points.iter().enumerate() {
            let in_trip = kept.iter().any(|&(a, b)| (a..=b).contains(&i));
            prop_assert_eq!(p.trip != TripLabel::Static, in_trip, "point {}", i);
        }
    }

    #[test]
    fn every_point_is_in_at_most_one_trip(seed in any::<u64>(), len in 1usize..=50) {
        let got = segment_device(&trace(seed, len), &TripConfig::default()).unwrap();
        for p in &got.points {
            let owners = got.trips.iter().filter(|t| (t.departure_ts..=t.arrival_ts).contains(&p.sighting.ts)).count();
            prop_assert_eq!(owners, usize::from(p.trip != TripLabel::Static));
        }
    }

    #[test]
    fn trips_are_sorted_disjoint_and_long_enough(seed in any::<u64>(), len in 1usize..=50) {
        let cfg = TripConfig::default();
        let got = segment_device(&trace(seed, len), &cfg).unwrap();
        for t in &got.trips {
            prop_assert!(t.distance_m >= cfg.min_trip_length_m);
            prop_assert!(t.departure_ts < t.arrival_ts);
        }
        for w in got.trips.windows(2) {
            prop_assert!(w[0].arrival_ts <= w[1].departure_ts);
        }
    }

    #[test]
    fn segmentation_is_deterministic(seed in any::<u64>(), len in 1usize..=50) {
        let pts = trace(seed, len);
        let a = segment_device(&pts, &TripConfig::default()).unwrap();
        let b = segment_device(&pts, &TripConfig::default()).unwrap();
        prop_assert_eq!(a.trips, b.trips);
        prop_assert_eq!(a.points, b.points);
    }
}
