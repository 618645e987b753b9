//! Shared fixtures: small synthetic runs through the whole pipeline.
#![allow(dead_code)]

use chrono::NaiveDate;
use fatigue_core::calendar::{calibration_window, ymd};
use fatigue_core::geo::ZoneIndex;
use fatigue_core::pipeline::{run, PipelineConfig, PipelineOutput};
use fatigue_core::synth::{generate, Scenario, SynthOutput};

pub struct Fixture {
    pub scenario: Scenario,
    pub truth: SynthOutput,
    pub zones: ZoneIndex,
    pub cfg: PipelineConfig,
    pub out: PipelineOutput,
}

/// Paper-shape behaviour for `n_devices` devices from January to `end`.
pub fn small_run(n_devices: usize, end: NaiveDate) -> Fixture {
    let mut scenario = Scenario::paper_shape();
    scenario.n_devices = n_devices;
    scenario.end_date = end;
    scenario.phases.retain(|p| p.start_date <= end);
    run_scenario(scenario)
}

pub fn paper_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.phase.detect_from = Some(ymd(2020, 3, 13));
    cfg.phase.pivot = Some(ymd(2020, 4, 15));
    cfg
}

pub fn run_scenario(scenario: Scenario) -> Fixture {
    let truth = generate(&scenario).expect("valid scenario");
    let zones = ZoneIndex::new(scenario.zones.clone()).unwrap();
    let targets = truth.target_rates(&zones, &calibration_window(2020));
    let cfg = paper_config();
    let cases = fatigue_core::cases::parse_cases(wide_cases(&truth).as_bytes(), &Default::default()).unwrap();
    let out = run(truth.sightings.clone(), &zones, &targets, Some(&cases), &cfg).expect("pipeline runs");
    Fixture {
        scenario,
        truth,
        zones,
        cfg,
        out,
    }
}

pub fn wide_cases(truth: &SynthOutput) -> String {
    let mut buf = Vec::new();
    fatigue_core::cases::write_wide_cases(&mut buf, &truth.cases.dates, &truth.cases.rows).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Every table the pipeline writes, concatenated, for byte comparisons.
pub fn render(out: &PipelineOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    fatigue_core::ingest::write_sightings(&mut buf, &out.cleaned).unwrap();
    fatigue_core::trips::write_trips(&mut buf, &out.trips).unwrap();
    fatigue_core::activity::write_profiles(&mut buf, &out.profiles.profiles).unwrap();
    fatigue_core::weights::write_county_weights(&mut buf, &out.weights).unwrap();
    fatigue_core::weights::write_trip_factors(&mut buf, &out.factors).unwrap();
    fatigue_core::metrics::write_metrics(&mut buf, &out.metrics).unwrap();
    fatigue_core::metrics::write_benchmark(&mut buf, &out.benchmarks).unwrap();
    fatigue_core::sdi::write_sdi(&mut buf, &out.sdi).unwrap();
    fatigue_core::phase::write_roc(&mut buf, &out.phases).unwrap();
    let reports: Vec<_> = out.phases.iter().map(|p| &p.1).collect();
    serde_json::to_writer(&mut buf, &reports).unwrap();
    if let Some(c) = &out.cases {
        fatigue_core::cases::write_joined(&mut buf, &c.joined).unwrap();
        fatigue_core::cases::write_state_comparison(&mut buf, &c.states).unwrap();
    }
    buf
}
