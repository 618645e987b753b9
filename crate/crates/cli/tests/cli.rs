use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fatigue_core::calendar::ymd;
use fatigue_core::synth::Scenario;
use serde_json::json;
use tempfile::TempDir;

fn fatigue(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fatigue"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small paper-shape scenario and a config writing under `dir/name`.
fn setup(dir: &Path, name: &str) -> PathBuf {
    let scenario = dir.join("scenario.json");
    if !scenario.exists() {
        let mut s = Scenario::paper_shape();
        s.n_devices = 120;
        s.end_date = ymd(2020, 4, 24);
        s.phases.retain(|p| p.start_date <= s.end_date);
        std::fs::write(&scenario, serde_json::to_string_pretty(&s).unwrap()).unwrap();
    }
    let config = dir.join(format!("{name}.json"));
    let cfg = json!({
        "paths": {
            "scenario": "scenario.json",
            "zones": format!("{name}/in/zones.json"),
            "sightings": format!("{name}/in/sightings.csv"),
            "cases": format!("{name}/in/cases.csv"),
            "targets": format!("{name}/in/targets.json"),
            "output_dir": format!("{name}/out"),
        },
        "pipeline": { "phase": { "detect_from": "2020-03-13", "pivot": "2020-04-15" } }
    });
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    config
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn assert_same(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in a {
        assert!(v == &b[k], "{} differs", k.display());
    }
}

#[test]
fn full_runs_are_complete_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = setup(dir.path(), "a");
    let o = fatigue(&a, &["all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = tree(&dir.path().join("a"));
    for name in [
        "in/sightings.csv",
        "in/zones.json",
        "in/cases.csv",
        "in/targets.json",
        "out/cleaned_sightings.csv",
        "out/cleaning_report.json",
        "out/trips.csv",
        "out/profiles.csv",
        "out/profile_issues.json",
        "out/county_weights.csv",
        "out/trip_factors.csv",
        "out/metrics.csv",
        "out/benchmark.csv",
        "out/sdi.csv",
        "out/roc.csv",
        "out/phases.json",
        "out/cases_joined.csv",
        "out/state_cases.csv",
        "out/figures/metrics_sdi.svg",
        "out/figures/sdi_roc_phases.svg",
        "out/figures/before_after.svg",
    ] {
        assert!(first.contains_key(Path::new(name)), "missing {name}");
    }
    assert!(first.keys().all(|k| k.extension().is_none_or(|e| e != "partial")));

    // One worker thread, fresh directory.
    let b = setup(dir.path(), "b");
    let o = fatigue(&b, &["--jobs", "1", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_same(&first, &tree(&dir.path().join("b")));

    // Stage by stage, several threads.
    let c = setup(dir.path(), "c");
    for stage in [
        "synth",
        "ingest",
        "trips",
        "activities",
        "weights",
        "metrics",
        "sdi",
        "phases",
        "cases",
        "report",
    ] {
        let o = fatigue(&c, &["--jobs", "3", stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    assert_same(&first, &tree(&dir.path().join("c")));

    let phases: serde_json::Value = serde_json::from_slice(&first[Path::new("out/phases.json")]).unwrap();
    let nation = phases
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["level"] == "nation")
        .expect("national report");
    assert_eq!(nation["pivot"], "2020-04-15");

    for fig in ["metrics_sdi", "sdi_roc_phases", "before_after"] {
        let text = String::from_utf8(first[&PathBuf::from(format!("out/figures/{fig}.svg"))].clone()).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{fig}: {e}"));
        let root = doc.root_element();
        assert_eq!(root.tag_name().name(), "svg");
        assert!(root.attribute("width").is_some() && root.attribute("height").is_some());
        let data = doc
            .descendants()
            .filter(|n| n.is_comment())
            .filter_map(|n| n.text())
            .find(|t| t.trim_start().starts_with("data"))
            .unwrap_or_else(|| panic!("{fig}: no data comment"));
        let csv = &first[&PathBuf::from(format!("out/figures/{fig}.csv"))];
        let header = String::from_utf8_lossy(csv).lines().next().unwrap().to_string();
        assert!(data.contains(&header), "{fig}: data comment lacks the table");
    }
}

#[test]
fn report_refuses_an_empty_index() {
    let dir = TempDir::new().unwrap();
    let cfg = setup(dir.path(), "r");
    let out = dir.path().join("r/out");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("sdi.csv"), "date,level,geo_id,sdi,sdi_smoothed\n").unwrap();
    let o = fatigue(&cfg, &["report"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("report") && err.contains("sdi.csv"), "{err}");
    assert!(!out.join("figures").exists());
}

#[test]
fn missing_input_names_the_stage_and_file() {
    let dir = TempDir::new().unwrap();
    let cfg = setup(dir.path(), "m");
    let o = fatigue(&cfg, &["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("ingest") && err.contains("sightings.csv"), "{err}");
    assert!(!dir.path().join("m/out").exists() || tree(&dir.path().join("m/out")).is_empty());
}

#[test]
fn bad_configs_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"paths": {"sightngs": "x.csv"}}"#).unwrap();
    let o = fatigue(&cfg, &["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sightngs"), "{}", stderr(&o));

    std::fs::write(
        &cfg,
        r#"{"pipeline": {"sdi_weights": {"w_home": 0.9, "w_work": 0.1, "w_nonwork": 0.2, "w_dist": 0.2, "w_outcounty": 0.1}}}"#,
    )
    .unwrap();
    let o = fatigue(&cfg, &["config"]);
    assert_eq!(o.status.code(), Some(1));

    let o = Command::new(env!("CARGO_BIN_EXE_fatigue")).arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_prints_effective_settings() {
    let dir = TempDir::new().unwrap();
    let cfg = setup(dir.path(), "p");
    let o = fatigue(&cfg, &["config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pipeline"]["phase"]["pivot"], "2020-04-15");
    let out = PathBuf::from(v["paths"]["output_dir"].as_str().unwrap());
    assert_eq!(out, dir.path().join("p/out"));
}
