//! Stage wiring shared by the command line and the end-to-end tests.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{profile_device, ClusterConfig, DeviceProfile, ProfileIssue, StaticPoint};
use crate::calendar::{calibration_window, default_benchmark_dates, local_date};
use crate::cases::{build_case_table, join_with_sdi, state_comparison, CaseTable, JoinedRow, ParsedCases, StateComparison};
use crate::error::{Error, Result};
use crate::geo::ZoneIndex;
use crate::ingest::{clean, device_ranges, CleaningConfig, CleaningReport, Sighting};
use crate::metrics::{compute_benchmark, daily_metrics, Benchmark, DailyMetrics, Level, MetricsInput, PanelRule};
use crate::phase::{analyse, PhaseConfig, PhaseReport, RocSeries};
use crate::sdi::{sdi_series, SdiSeries, SdiWeights, Smoothing};
use crate::trips::{assign_zones, segment_device, Trip, TripConfig};
use crate::weights::{county_device_weights, state_trip_weights, DeviceWeights, Presence, TargetRates, TripFactor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub cleaning: CleaningConfig,
    pub trips: TripConfig,
    pub clusters: ClusterConfig,
    pub panel: PanelRule,
    /// Defaults to February 1-14 weekdays of the first observed year.
    pub calibration_dates: Option<Vec<NaiveDate>>,
    /// Defaults to February 3-14 weekdays of the first observed year.
    pub benchmark_dates: Option<Vec<NaiveDate>>,
    pub sdi_weights: SdiWeights,
    pub smoothing_window: usize,
    pub smoothing: Smoothing,
    pub phase: PhaseConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cleaning: CleaningConfig::default(),
            trips: TripConfig::default(),
            clusters: ClusterConfig::default(),
            panel: PanelRule::default(),
            calibration_dates: None,
            benchmark_dates: None,
            sdi_weights: SdiWeights::default(),
            smoothing_window: 5,
            smoothing: Smoothing::default(),
            phase: PhaseConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.cleaning.validate()?;
        self.trips.validate()?;
        self.clusters.validate()?;
        self.sdi_weights.validate()?;
        self.phase.validate()?;
        if self.smoothing_window == 0 || (self.smoothing == Smoothing::Centered && self.smoothing_window.is_multiple_of(2)) {
            return Err(Error::Config("smoothing_window must be odd and positive".into()));
        }
        Ok(())
    }

    pub fn calibration_for(&self, first_year: i32) -> Vec<NaiveDate> {
        self.calibration_dates.clone().unwrap_or_else(|| calibration_window(first_year))
    }

    pub fn benchmark_for(&self, first_year: i32) -> Vec<NaiveDate> {
        self.benchmark_dates.clone().unwrap_or_else(|| default_benchmark_dates(first_year))
    }
}

/// Applies `f` to each device's slice of `(device, ts)`-sorted sightings in
/// parallel, keeping device order.
pub fn per_device<T: Send>(sorted: &[Sighting], f: impl Fn(&[Sighting]) -> Result<T> + Sync) -> Result<Vec<T>> {
    device_ranges(sorted).into_par_iter().map(|r| f(&sorted[r])).collect()
}

/// Trips of all devices with zones attached, in device then time order.
pub fn segment_all(cleaned: &[Sighting], cfg: &TripConfig, zones: &ZoneIndex) -> Result<Vec<Trip>> {
    let per = per_device(cleaned, |s| {
        let mut t = segment_device(s, cfg)?.trips;
        assign_zones(&mut t, zones);
        Ok(t)
    })?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Profiles {
    pub profiles: Vec<DeviceProfile>,
    pub issues: BTreeMap<ProfileIssue, usize>,
}

struct DeviceOutcome {
    trips: Vec<Trip>,
    profile: std::result::Result<DeviceProfile, ProfileIssue>,
}

fn device_outcome(s: &[Sighting], trip_cfg: &TripConfig, cluster_cfg: &ClusterConfig, zones: &ZoneIndex) -> Result<DeviceOutcome> {
    let seg = segment_device(s, trip_cfg)?;
    let points: Vec<StaticPoint> = seg
        .static_points()
        .map(|(seq, p)| StaticPoint {
            seq,
            ts: p.ts,
            point: p.point,
        })
        .collect();
    let observed_days = s.iter().map(|p| local_date(p.ts, 0)).collect::<BTreeSet<_>>().len();
    let profile = profile_device(&s[0].device_id, &points, observed_days, zones, cluster_cfg);
    let mut trips = seg.trips;
    assign_zones(&mut trips, zones);
    Ok(DeviceOutcome { trips, profile })
}

fn collect_profiles(outcomes: impl IntoIterator<Item = std::result::Result<DeviceProfile, ProfileIssue>>) -> Profiles {
    let mut out = Profiles::default();
    for p in outcomes {
        match p {
            Ok(p) => out.profiles.push(p),
            Err(issue) => *out.issues.entry(issue).or_default() += 1,
        }
    }
    for (issue, n) in &out.issues {
        log::warn!("{n} devices not profiled: {issue:?}");
    }
    out
}

/// Home and work zones for every device that can be profiled.
pub fn profile_all(cleaned: &[Sighting], trip_cfg: &TripConfig, cluster_cfg: &ClusterConfig, zones: &ZoneIndex) -> Result<Profiles> {
    let per = per_device(cleaned, |s| device_outcome(s, trip_cfg, cluster_cfg, zones).map(|o| o.profile))?;
    Ok(collect_profiles(per))
}

/// Everything the pipeline produces, stage by stage.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub cleaning: CleaningReport,
    pub cleaned: Vec<Sighting>,
    pub trips: Vec<Trip>,
    pub profiles: Profiles,
    pub weights: DeviceWeights,
    pub presence: Presence,
    pub factors: Vec<TripFactor>,
    pub metrics: Vec<DailyMetrics>,
    pub benchmarks: Vec<Benchmark>,
    pub sdi: Vec<SdiSeries>,
    pub phases: Vec<(RocSeries, PhaseReport)>,
    pub cases: Option<CaseOutputs>,
}

#[derive(Debug, Clone)]
pub struct CaseOutputs {
    pub table: CaseTable,
    pub joined: Vec<JoinedRow>,
    pub states: Vec<StateComparison>,
}

impl PipelineOutput {
    pub fn phase(&self, level: Level, geo_id: &str) -> Option<&PhaseReport> {
        self.phases.iter().map(|p| &p.1).find(|r| r.level == level && r.geo_id == geo_id)
    }

    pub fn series(&self, level: Level, geo_id: &str) -> Option<&SdiSeries> {
        self.sdi.iter().find(|s| s.geo.level == level && &*s.geo.geo_id == geo_id)
    }
}

/// Weights, calibration and metrics from profiled trips.
pub struct Measured {
    pub weights: DeviceWeights,
    pub presence: Presence,
    pub factors: Vec<TripFactor>,
    pub metrics: Vec<DailyMetrics>,
}

pub fn measure(
    cleaned: &[Sighting],
    trips: &[Trip],
    profiles: &[DeviceProfile],
    zones: &ZoneIndex,
    targets: &TargetRates,
    cfg: &PipelineConfig,
) -> Result<Measured> {
    let weights = county_device_weights(profiles, zones)?;
    let presence = Presence::from_sightings(cleaned, profiles, zones);
    let first_year = first_year(cleaned)?;
    let factors = state_trip_weights(
        trips,
        profiles,
        &weights,
        &presence,
        zones,
        targets,
        &cfg.calibration_for(first_year),
    )?;
    let metrics = daily_metrics(&MetricsInput {
        trips,
        profiles,
        weights: &weights,
        factors: &factors,
        presence: &presence,
        zones,
        panel: cfg.panel,
    })?;
    Ok(Measured {
        weights,
        presence,
        factors,
        metrics,
    })
}

pub fn first_year(sightings: &[Sighting]) -> Result<i32> {
    use chrono::Datelike;
    sightings
        .iter()
        .map(|s| s.ts)
        .min()
        .map(|ts| local_date(ts, 0).year())
        .ok_or_else(|| Error::Missing("no sightings survived cleaning".into()))
}

/// Benchmark, SDI and phase analysis for every geography.
pub fn index_and_phases(
    metrics: &[DailyMetrics],
    benchmark_dates: &[NaiveDate],
    cfg: &PipelineConfig,
) -> Result<(Vec<Benchmark>, Vec<SdiSeries>, Vec<(RocSeries, PhaseReport)>)> {
    let benchmarks = compute_benchmark(metrics, benchmark_dates)?;
    let sdi = sdi_series(metrics, &benchmarks, &cfg.sdi_weights, cfg.smoothing_window, cfg.smoothing)?;
    let phases = sdi.iter().map(|s| analyse(s, &cfg.phase)).collect::<Result<Vec<_>>>()?;
    Ok((benchmarks, sdi, phases))
}

/// Pivot of the national phase report, if any.
pub fn national_pivot<'a>(reports: impl IntoIterator<Item = &'a PhaseReport>) -> Option<NaiveDate> {
    reports.into_iter().find(|r| r.level == Level::Nation).and_then(|r| r.pivot)
}

/// Joins cases with SDI; the comparison pivot is the configured one or
/// `fallback_pivot` (normally the national one).
pub fn case_outputs(
    parsed: &ParsedCases,
    zones: &ZoneIndex,
    sdi: &[SdiSeries],
    fallback_pivot: Option<NaiveDate>,
    cfg: &PhaseConfig,
) -> CaseOutputs {
    let table = build_case_table(parsed, zones);
    let joined = join_with_sdi(&table, sdi);
    let states = match cfg.pivot.or(fallback_pivot) {
        Some(p) => state_comparison(&joined, sdi, p, cfg.compare_days, cfg.compare_smoothed),
        None => {
            log::warn!("no pivot date; state case comparison skipped");
            Vec::new()
        }
    };
    CaseOutputs { table, joined, states }
}

/// Runs every stage in memory.
pub fn run(
    raw: Vec<Sighting>,
    zones: &ZoneIndex,
    targets: &TargetRates,
    cases: Option<&ParsedCases>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (cleaned, cleaning) = clean(raw, &cfg.cleaning);
    let outcomes = per_device(&cleaned, |s| device_outcome(s, &cfg.trips, &cfg.clusters, zones))?;
    let mut trips = Vec::new();
    let mut profile_results = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        trips.extend(o.trips);
        profile_results.push(o.profile);
    }
    let profiles = collect_profiles(profile_results);
    let measured = measure(&cleaned, &trips, &profiles.profiles, zones, targets, cfg)?;
    let benchmark_dates = cfg.benchmark_for(first_year(&cleaned)?);
    let (benchmarks, sdi, phases) = index_and_phases(&measured.metrics, &benchmark_dates, cfg)?;
    let pivot = national_pivot(phases.iter().map(|p| &p.1));
    let cases = cases.map(|c| case_outputs(c, zones, &sdi, pivot, &cfg.phase));
    Ok(PipelineOutput {
        cleaning,
        cleaned,
        trips,
        profiles,
        weights: measured.weights,
        presence: measured.presence,
        factors: measured.factors,
        metrics: measured.metrics,
        benchmarks,
        sdi,
        phases,
        cases,
    })
}
