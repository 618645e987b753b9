//! One function per subcommand. Every stage reads its inputs from disk and
//! writes its outputs through [`Outputs`], so `all` and a hand-run sequence
//! of stages go through exactly the same code.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use fatigue_core::activity::{read_profiles, write_profiles};
use fatigue_core::cases::{parse_cases, read_state_comparison, write_joined, write_state_comparison, write_wide_cases};
use fatigue_core::geo::ZoneIndex;
use fatigue_core::ingest::{clean, parse_sightings, write_sightings, CleaningReport, ParseIssue, Sighting};
use fatigue_core::metrics::{compute_benchmark, daily_metrics, read_benchmark, read_metrics, write_benchmark, write_metrics, MetricsInput};
use fatigue_core::phase::{analyse, read_roc, write_roc, PhaseReport};
use fatigue_core::pipeline::{case_outputs, first_year, national_pivot, profile_all, segment_all};
use fatigue_core::report::{comparison_figure, metrics_figure, phase_figure, rows_from_reports, ComparisonRow, Figure};
use fatigue_core::sdi::{read_sdi, sdi_series, write_sdi};
use fatigue_core::synth::{generate, Purpose, Scenario};
use fatigue_core::trips::{read_trips, write_trips};
use fatigue_core::weights::{
    county_device_weights, read_county_weights, read_trip_factors, state_trip_weights, write_county_weights, write_trip_factors, Presence,
    TargetRates,
};
use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;
use crate::output::Outputs;

pub const CLEANED: &str = "cleaned_sightings.csv";
pub const CLEANING_REPORT: &str = "cleaning_report.json";
pub const TRIPS: &str = "trips.csv";
pub const PROFILES: &str = "profiles.csv";
pub const PROFILE_ISSUES: &str = "profile_issues.json";
pub const COUNTY_WEIGHTS: &str = "county_weights.csv";
pub const TRIP_FACTORS: &str = "trip_factors.csv";
pub const METRICS: &str = "metrics.csv";
pub const BENCHMARK: &str = "benchmark.csv";
pub const SDI: &str = "sdi.csv";
pub const ROC: &str = "roc.csv";
pub const PHASES: &str = "phases.json";
pub const CASES_JOINED: &str = "cases_joined.csv";
pub const STATE_CASES: &str = "state_cases.csv";
pub const FIGURES: &str = "figures";

/// At most this many malformed input rows are listed in the ingest report.
const LISTED_PARSE_ISSUES: usize = 100;

pub struct Stage<'a> {
    name: &'static str,
    cfg: &'a Config,
}

impl<'a> Stage<'a> {
    pub fn new(name: &'static str, cfg: &'a Config) -> Self {
        Self { name, cfg }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn core(&self, e: fatigue_core::Error) -> CliError {
        CliError::from_core(self.name, e)
    }

    fn open(&self, path: &Path) -> Result<BufReader<File>, CliError> {
        if !path.is_file() {
            return Err(CliError::MissingInput {
                stage: self.name,
                path: path.to_path_buf(),
            });
        }
        File::open(path)
            .map(BufReader::new)
            .map_err(|e| self.core(fatigue_core::Error::io(path, e)))
    }

    fn read<T>(&self, path: &Path, f: impl FnOnce(BufReader<File>) -> fatigue_core::Result<T>) -> Result<T, CliError> {
        let r = self.open(path)?;
        f(r).map_err(|e| self.core(e))
    }

    fn zones(&self) -> Result<ZoneIndex, CliError> {
        self.read(&self.cfg.paths.zones, ZoneIndex::from_json_reader)
    }

    fn sightings(&self, path: &Path) -> Result<Vec<Sighting>, CliError> {
        let parsed = self.read(path, parse_sightings)?;
        if !parsed.errors.is_empty() {
            return Err(self.core(fatigue_core::Error::Input(format!(
                "{} has {} malformed rows, first at line {}",
                path.display(),
                parsed.errors.len(),
                parsed.errors[0].line
            ))));
        }
        Ok(parsed.sightings)
    }

    fn cleaned(&self) -> Result<Vec<Sighting>, CliError> {
        self.sightings(&self.out(CLEANED))
    }

    fn profiles(&self) -> Result<Vec<fatigue_core::activity::DeviceProfile>, CliError> {
        self.read(&self.out(PROFILES), read_profiles)
    }

    fn phase_reports(&self) -> Result<Vec<PhaseReport>, CliError> {
        self.read(&self.out(PHASES), |r| Ok(serde_json::from_reader(r)?))
    }

    fn targets(&self) -> Result<TargetRates, CliError> {
        if let Some(t) = &self.cfg.target_trip_rates {
            return Ok(t.clone());
        }
        let Some(path) = &self.cfg.paths.targets else {
            return Err(CliError::Usage(format!(
                "stage `{}`: set `target_trip_rates` or `paths.targets`",
                self.name
            )));
        };
        self.read(path, |r| Ok(serde_json::from_reader(r)?))
    }

    fn cases_path(&self) -> Result<&Path, CliError> {
        self.cfg
            .paths
            .cases
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("stage `{}`: `paths.cases` is not set", self.name)))
    }
}

fn purpose_name(p: Purpose) -> &'static str {
    match p {
        Purpose::Work => "work",
        Purpose::Errand => "errand",
        Purpose::OutOfCountyErrand => "out_of_county_errand",
    }
}

/// Generates inputs from the scenario and ground truth beside the outputs.
pub fn synth(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("synth", cfg);
    let path = cfg
        .paths
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Usage("stage `synth`: `paths.scenario` is not set".into()))?;
    let scenario: Scenario = st.read(path, |r| Ok(serde_json::from_reader(r)?))?;
    let out = generate(&scenario).map_err(|e| st.core(e))?;
    let zones = ZoneIndex::new(scenario.zones.clone()).map_err(|e| st.core(e))?;
    let mut files = Outputs::new("synth");
    files.write(&cfg.paths.sightings, |w| write_sightings(w, &out.sightings))?;
    files.write_str(&cfg.paths.zones, &format!("{}\n", zones.to_json().map_err(|e| st.core(e))?))?;
    if let Some(p) = &cfg.paths.cases {
        files.write(p, |w| write_wide_cases(w, &out.cases.dates, &out.cases.rows))?;
    }
    if let Some(p) = &cfg.paths.targets {
        let window = cfg.pipeline.calibration_for(scenario.start_date.year());
        files.write_json(p, &out.target_rates(&zones, &window))?;
    }
    let truth = |name: &str| st.out("truth").join(name);
    files.write(&truth("trips.csv"), |w| write_trips(w, &out.all_trips()))?;
    files.write(&truth("trip_labels.csv"), |w| {
        use std::io::Write;
        writeln!(w, "trip_id,date,purpose,captured")?;
        for t in &out.trips {
            writeln!(w, "{},{},{},{}", t.trip.trip_id, t.date, purpose_name(t.purpose), t.captured)?;
        }
        Ok(())
    })?;
    files.write(&truth("profiles.csv"), |w| write_profiles(w, &out.profiles))?;
    let metrics = out.ground_truth_metrics(&zones, &scenario.weekdays());
    files.write(&truth("metrics.csv"), |w| write_metrics(w, &metrics))?;
    files.commit()?;
    log::info!(
        "synth: {} sightings, {} trips, {} dropped tours",
        out.sightings.len(),
        out.trips.len(),
        out.dropped_tours
    );
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    parse_errors: usize,
    first_parse_errors: &'a [ParseIssue],
    cleaning: CleaningReport,
}

pub fn ingest(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("ingest", cfg);
    let parsed = st.read(&cfg.paths.sightings, parse_sightings)?;
    if !parsed.errors.is_empty() {
        log::warn!("ingest: skipped {} malformed rows", parsed.errors.len());
    }
    let (cleaned, report) = clean(parsed.sightings, &cfg.pipeline.cleaning);
    log::info!("ingest: kept {} of {} records", report.records_out, report.records_in);
    let mut files = Outputs::new("ingest");
    files.write(&st.out(CLEANED), |w| write_sightings(w, &cleaned))?;
    let listed = &parsed.errors[..parsed.errors.len().min(LISTED_PARSE_ISSUES)];
    files.write_json(
        &st.out(CLEANING_REPORT),
        &IngestSummary {
            parse_errors: parsed.errors.len(),
            first_parse_errors: listed,
            cleaning: report,
        },
    )?;
    files.commit()
}

pub fn trips(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("trips", cfg);
    let zones = st.zones()?;
    let cleaned = st.cleaned()?;
    let trips = segment_all(&cleaned, &cfg.pipeline.trips, &zones).map_err(|e| st.core(e))?;
    let mut files = Outputs::new("trips");
    files.write(&st.out(TRIPS), |w| write_trips(w, &trips))?;
    files.commit()
}

pub fn activities(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("activities", cfg);
    let zones = st.zones()?;
    let cleaned = st.cleaned()?;
    let profiles = profile_all(&cleaned, &cfg.pipeline.trips, &cfg.pipeline.clusters, &zones).map_err(|e| st.core(e))?;
    let issues: std::collections::BTreeMap<String, usize> = profiles.issues.iter().map(|(k, v)| (format!("{k:?}"), *v)).collect();
    let mut files = Outputs::new("activities");
    files.write(&st.out(PROFILES), |w| write_profiles(w, &profiles.profiles))?;
    files.write_json(&st.out(PROFILE_ISSUES), &issues)?;
    files.commit()
}

pub fn weights(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("weights", cfg);
    let zones = st.zones()?;
    let targets = st.targets()?;
    let cleaned = st.cleaned()?;
    let trips = st.read(&st.out(TRIPS), read_trips)?;
    let profiles = st.profiles()?;
    let weights = county_device_weights(&profiles, &zones).map_err(|e| st.core(e))?;
    let presence = Presence::from_sightings(&cleaned, &profiles, &zones);
    let window = cfg.pipeline.calibration_for(first_year(&cleaned).map_err(|e| st.core(e))?);
    let factors = state_trip_weights(&trips, &profiles, &weights, &presence, &zones, &targets, &window).map_err(|e| st.core(e))?;
    let mut files = Outputs::new("weights");
    files.write(&st.out(COUNTY_WEIGHTS), |w| write_county_weights(w, &weights))?;
    files.write(&st.out(TRIP_FACTORS), |w| write_trip_factors(w, &factors))?;
    files.commit()
}

pub fn metrics(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("metrics", cfg);
    let zones = st.zones()?;
    let cleaned = st.cleaned()?;
    let trips = st.read(&st.out(TRIPS), read_trips)?;
    let profiles = st.profiles()?;
    let weights = st.read(&st.out(COUNTY_WEIGHTS), |r| read_county_weights(r, &profiles, &zones))?;
    let factors = st.read(&st.out(TRIP_FACTORS), read_trip_factors)?;
    let presence = Presence::from_sightings(&cleaned, &profiles, &zones);
    let metrics = daily_metrics(&MetricsInput {
        trips: &trips,
        profiles: &profiles,
        weights: &weights,
        factors: &factors,
        presence: &presence,
        zones: &zones,
        panel: cfg.pipeline.panel,
    })
    .map_err(|e| st.core(e))?;
    let mut files = Outputs::new("metrics");
    files.write(&st.out(METRICS), |w| write_metrics(w, &metrics))?;
    files.commit()
}

pub fn sdi(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("sdi", cfg);
    let metrics = st.read(&st.out(METRICS), read_metrics)?;
    let year = metrics
        .iter()
        .map(|m| m.date)
        .min()
        .map(|d: NaiveDate| d.year())
        .ok_or_else(|| st.core(fatigue_core::Error::Missing(format!("{METRICS} has no rows"))))?;
    let p = &cfg.pipeline;
    let benchmarks = compute_benchmark(&metrics, &p.benchmark_for(year)).map_err(|e| st.core(e))?;
    let series = sdi_series(&metrics, &benchmarks, &p.sdi_weights, p.smoothing_window, p.smoothing).map_err(|e| st.core(e))?;
    let mut files = Outputs::new("sdi");
    files.write(&st.out(BENCHMARK), |w| write_benchmark(w, &benchmarks))?;
    files.write(&st.out(SDI), |w| write_sdi(w, &series))?;
    files.commit()
}

pub fn phases(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("phases", cfg);
    let series = st.read(&st.out(SDI), read_sdi)?;
    let phases = series
        .iter()
        .map(|s| analyse(s, &cfg.pipeline.phase))
        .collect::<fatigue_core::Result<Vec<_>>>()
        .map_err(|e| st.core(e))?;
    let reports: Vec<&PhaseReport> = phases.iter().map(|p| &p.1).collect();
    let mut files = Outputs::new("phases");
    files.write(&st.out(ROC), |w| write_roc(w, &phases))?;
    files.write_json(&st.out(PHASES), &reports)?;
    files.commit()
}

pub fn cases(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("cases", cfg);
    let path = st.cases_path()?;
    let zones = st.zones()?;
    let parsed = st.read(path, |r| parse_cases(r, &cfg.case_columns))?;
    for (line, msg) in parsed.issues.iter().take(LISTED_PARSE_ISSUES) {
        log::warn!("cases line {line}: {msg}");
    }
    let series = st.read(&st.out(SDI), read_sdi)?;
    let reports = st.phase_reports()?;
    let out = case_outputs(&parsed, &zones, &series, national_pivot(&reports), &cfg.pipeline.phase);
    let mut files = Outputs::new("cases");
    files.write(&st.out(CASES_JOINED), |w| write_joined(w, &out.joined))?;
    files.write(&st.out(STATE_CASES), |w| write_state_comparison(w, &out.states))?;
    files.commit()
}

pub fn report(cfg: &Config) -> Result<(), CliError> {
    let st = Stage::new("report", cfg);
    let series = st.read(&st.out(SDI), read_sdi)?;
    if series.iter().all(|s| s.dates.is_empty()) {
        return Err(st.core(fatigue_core::Error::Missing(format!(
            "SDI input {} holds no series",
            st.out(SDI).display()
        ))));
    }
    let metrics = st.read(&st.out(METRICS), read_metrics)?;
    let benchmarks = st.read(&st.out(BENCHMARK), read_benchmark)?;
    let roc = st.read(&st.out(ROC), read_roc)?;
    let reports = st.phase_reports()?;
    let geo = fatigue_core::metrics::Geography::new(cfg.report.level, &cfg.report.geo_id);

    let fig1 = metrics_figure(&metrics, &benchmarks, &series, &geo).map_err(|e| st.core(e))?;
    let missing = |what: &str| st.core(fatigue_core::Error::Missing(format!("{what} for {} {}", geo.level, geo.geo_id)));
    let s = series.iter().find(|s| s.geo == geo).ok_or_else(|| missing("SDI series"))?;
    let r = roc
        .iter()
        .find(|(g, _)| *g == geo)
        .map(|(_, r)| r)
        .ok_or_else(|| missing("ROC series"))?;
    let rep = reports
        .iter()
        .find(|p| p.level == geo.level && p.geo_id == *geo.geo_id)
        .ok_or_else(|| missing("phase report"))?;
    let fig2 = phase_figure(s, r, rep).map_err(|e| st.core(e))?;

    let mut rows: Vec<ComparisonRow> = Vec::new();
    if cfg.paths.cases.is_some() {
        rows = st
            .read(&st.out(STATE_CASES), read_state_comparison)?
            .iter()
            .map(ComparisonRow::from)
            .collect();
    }
    if rows.is_empty() {
        rows = rows_from_reports(&reports);
    }
    let pivot = cfg.pipeline.phase.pivot.or_else(|| national_pivot(&reports));
    let fig3 = comparison_figure(&rows, pivot).map_err(|e| st.core(e))?;

    let mut files = Outputs::new("report");
    let dir = st.out(FIGURES);
    let mut put = |stem: &str, fig: &Figure| -> Result<(), CliError> {
        files.write_str(&dir.join(format!("{stem}.svg")), &fig.svg)?;
        files.write_str(&dir.join(format!("{stem}.csv")), &fig.csv)
    };
    put("metrics_sdi", &fig1)?;
    put("sdi_roc_phases", &fig2)?;
    put("before_after", &fig3)?;
    files.commit()
}
