use std::path::{Path, PathBuf};

use fatigue_core::cases::CaseColumns;
use fatigue_core::metrics::{Level, NATION_ID};
use fatigue_core::pipeline::PipelineConfig;
use fatigue_core::weights::TargetRates;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// File locations. Relative paths are taken from the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Scenario for `synth`; when set, `all` starts by generating data.
    pub scenario: Option<PathBuf>,
    pub zones: PathBuf,
    pub sightings: PathBuf,
    /// Wide cumulative case counts; the `cases` stage is skipped without it.
    pub cases: Option<PathBuf>,
    /// JSON map of state id to February trips per person per day. Ignored
    /// when `target_trip_rates` is given inline.
    pub targets: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            scenario: None,
            zones: "zones.json".into(),
            sightings: "sightings.csv".into(),
            cases: None,
            targets: Some("targets.json".into()),
            output_dir: "out".into(),
        }
    }
}

/// Geography drawn in the time-series charts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub level: Level,
    pub geo_id: String,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            level: Level::Nation,
            geo_id: NATION_ID.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub case_columns: CaseColumns,
    pub target_trip_rates: Option<TargetRates>,
    pub report: ReportConfig,
    pub pipeline: PipelineConfig,
}

impl Config {
    /// Reads `path`, or returns the defaults rooted at the working directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        cfg.pipeline.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.zones);
        join(&mut self.sightings);
        join(&mut self.output_dir);
        for p in [&mut self.scenario, &mut self.cases, &mut self.targets].into_iter().flatten() {
            join(p);
        }
    }
}
