//! Standalone SVG charts with their data embedded as XML comments.

use std::fmt::Write as _;

use chrono::NaiveDate;

use crate::cases::StateComparison;
use crate::error::{Error, Result};
use crate::metrics::{Benchmark, DailyMetrics, Geography, Level};
use crate::phase::{PhaseReport, RocSeries};
use crate::sdi::SdiSeries;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 40.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const COLORS: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// A chart and the table it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub svg: String,
    pub csv: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// XML comments may not contain a double hyphen.
fn comment_safe(s: &str) -> String {
    let mut out = s.to_string();
    while out.contains("--") {
        out = out.replace("--", "- -");
    }
    out
}

struct Svg {
    body: String,
    height: f64,
}

impl Svg {
    fn new(height: f64) -> Self {
        Self {
            body: String::new(),
            height,
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, dash: bool) {
        let d = if dash { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}" stroke-width="1"{d}/>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        if pts.is_empty() {
            return;
        }
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            p.join(" ")
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            w.max(0.0),
            h.max(0.0)
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: u32) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn finish(self, title: &str, data: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{h}" viewBox="0 0 {WIDTH} {h}">"#,
            h = self.height
        );
        let _ = writeln!(out, "<title>{}</title>", escape(title));
        let _ = writeln!(out, "<!-- data\n{}-->", comment_safe(data));
        let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{}" fill="white"/>"#, self.height);
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

/// Linear map from data to pixels for one panel.
#[derive(Clone, Copy)]
struct Panel {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
    n: usize,
    lo: f64,
    hi: f64,
}

impl Panel {
    fn x(&self, i: usize) -> f64 {
        let span = self.right - self.left;
        if self.n <= 1 {
            self.left + span / 2.0
        } else {
            self.left + span * i as f64 / (self.n - 1) as f64
        }
    }

    /// Pixel row of `v`, held inside the panel.
    fn y(&self, v: f64) -> f64 {
        let f = if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            0.5
        };
        self.bottom - f.clamp(0.0, 1.0) * (self.bottom - self.top)
    }

    fn axes(&self, svg: &mut Svg, dates: &[NaiveDate], label: &str, ticks: usize) {
        svg.line(self.left, self.bottom, self.right, self.bottom, "#333", false);
        svg.line(self.left, self.top, self.left, self.bottom, "#333", false);
        for k in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
            let y = self.y(v);
            svg.line(self.left - 4.0, y, self.left, y, "#333", false);
            svg.text(self.left - 6.0, y + 4.0, &tick_label(v, self.hi - self.lo), "end", 10);
        }
        let step = (dates.len() / ticks.max(1)).max(1);
        for (i, d) in dates.iter().enumerate().step_by(step) {
            let x = self.x(i);
            svg.line(x, self.bottom, x, self.bottom + 4.0, "#333", false);
            svg.text(x, self.bottom + 16.0, &d.format("%m/%d").to_string(), "middle", 10);
        }
        svg.text(self.left + 4.0, self.top - 6.0, label, "start", 11);
    }
}

fn tick_label(v: f64, span: f64) -> String {
    let digits = if span >= 20.0 {
        0
    } else if span >= 2.0 {
        1
    } else if span >= 0.2 {
        2
    } else {
        3
    };
    format!("{v:.digits$}")
}

fn range(values: impl Iterator<Item = f64>, floor_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if floor_zero {
        lo = lo.min(0.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.05;
    (if floor_zero && lo >= 0.0 { lo } else { lo - pad }, hi + pad)
}

/// Quartile fences three IQRs out, so one near-zero baseline does not
/// flatten the rest of the ROC series. Always includes zero.
fn robust_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.len() < 4 {
        return range(v.into_iter().chain([0.0]), false);
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
    let (q1, q3) = (q(0.25), q(0.75));
    let iqr = (q3 - q1).max(1.0);
    let lo = v[0].max(q1 - 3.0 * iqr);
    let hi = v[v.len() - 1].min(q3 + 3.0 * iqr);
    range([lo, hi, 0.0].into_iter(), false)
}

fn legend(svg: &mut Svg, items: &[(&str, &str)], y: f64) {
    let mut x = MARGIN_L;
    for (name, color) in items {
        svg.line(x, y - 4.0, x + 18.0, y - 4.0, color, false);
        svg.text(x + 22.0, y, name, "start", 11);
        x += 30.0 + 7.0 * name.len() as f64;
    }
}

fn find_series<'a>(sdi: &'a [SdiSeries], geo: &Geography) -> Result<&'a SdiSeries> {
    let s = sdi
        .iter()
        .find(|s| &s.geo == geo)
        .ok_or_else(|| Error::Missing(format!("SDI series for {} {} (sdi.csv)", geo.level, geo.geo_id)))?;
    if s.dates.is_empty() {
        return Err(Error::Missing(format!(
            "SDI series for {} {} is empty (sdi.csv)",
            geo.level, geo.geo_id
        )));
    }
    Ok(s)
}

/// SDI and each metric in its own panel, with the benchmark dashed.
pub fn metrics_figure(metrics: &[DailyMetrics], benchmarks: &[Benchmark], sdi: &[SdiSeries], geo: &Geography) -> Result<Figure> {
    let series = find_series(sdi, geo)?;
    let bench = benchmarks
        .iter()
        .find(|b| &b.geo == geo)
        .ok_or_else(|| Error::Missing(format!("benchmark for {} {}", geo.level, geo.geo_id)))?;
    let names = [
        "sdi",
        "pct_staying_home",
        "work_trips_pp",
        "nonwork_trips_pp",
        "miles_pp",
        "pct_out_of_county",
    ];
    let titles = [
        "SDI",
        "share staying home",
        "work trips per person",
        "non-work trips per person",
        "miles per person",
        "share of trips leaving county",
    ];
    let b = &bench.values;
    let bench_row = [
        None,
        Some(b.pct_staying_home),
        Some(b.work_trips_pp),
        Some(b.nonwork_trips_pp),
        Some(b.miles_pp),
        Some(b.pct_out_of_county),
    ];
    let mut columns: [Vec<f64>; 6] = Default::default();
    for (i, d) in series.dates.iter().enumerate() {
        let m = metrics
            .iter()
            .find(|m| m.date == *d && &m.geo == geo)
            .ok_or_else(|| Error::Missing(format!("metrics for {} on {d}", geo.geo_id)))?;
        let v = &m.values;
        let row = [
            series.sdi[i],
            v.pct_staying_home,
            v.work_trips_pp,
            v.nonwork_trips_pp,
            v.miles_pp,
            v.pct_out_of_county,
        ];
        for (c, x) in columns.iter_mut().zip(row) {
            c.push(x);
        }
    }
    let mut csv = String::from("date,series,value,benchmark\n");
    for (k, name) in names.iter().enumerate() {
        let bv = bench_row[k].map_or(String::new(), |v| v.to_string());
        for (d, v) in series.dates.iter().zip(&columns[k]) {
            let _ = writeln!(csv, "{d},{name},{v},{bv}");
        }
    }
    let cell_w = (WIDTH - 20.0) / 3.0;
    let cell_h = 300.0;
    let mut svg = Svg::new(2.0 * cell_h + 50.0);
    svg.text(
        WIDTH / 2.0,
        20.0,
        &format!("Mobility metrics and SDI, {} {}", geo.level, geo.geo_id),
        "middle",
        14,
    );
    for k in 0..6 {
        let (col, row) = ((k % 3) as f64, (k / 3) as f64);
        let (lo, hi) = range(columns[k].iter().copied().chain(bench_row[k]), true);
        let panel = Panel {
            left: 10.0 + col * cell_w + 55.0,
            right: 10.0 + (col + 1.0) * cell_w - 10.0,
            top: 50.0 + row * cell_h,
            bottom: 50.0 + (row + 1.0) * cell_h - 45.0,
            n: series.dates.len(),
            lo,
            hi,
        };
        panel.axes(&mut svg, &series.dates, titles[k], 4);
        if let Some(bv) = bench_row[k] {
            svg.line(panel.left, panel.y(bv), panel.right, panel.y(bv), "#999", true);
        }
        let pts: Vec<(f64, f64)> = columns[k].iter().enumerate().map(|(i, v)| (panel.x(i), panel.y(*v))).collect();
        svg.polyline(&pts, COLORS[k], if k == 0 { 2.0 } else { 1.5 });
    }
    Ok(Figure {
        svg: svg.finish("Mobility metrics and SDI", &csv),
        csv,
    })
}

/// Daily and smoothed SDI above ROC, with inertia and fatigue shaded.
pub fn phase_figure(series: &SdiSeries, roc: &RocSeries, report: &PhaseReport) -> Result<Figure> {
    if series.dates.is_empty() {
        return Err(Error::Missing(format!("SDI series for {} is empty (sdi.csv)", series.geo.geo_id)));
    }
    let n = series.dates.len();
    let roc_at: Vec<Option<f64>> = series
        .dates
        .iter()
        .map(|d| roc.dates.iter().position(|r| r == d).map(|i| roc.roc[i]))
        .collect();
    let mut csv = String::from("date,sdi,sdi_smoothed,roc,phase\n");
    let phase_of = |d: NaiveDate| {
        let after = |x: Option<NaiveDate>| x.is_some_and(|x| d >= x);
        let before_end = report.fatigue_end.is_none_or(|e| d <= e);
        if after(report.fatigue_start) && before_end {
            "fatigue"
        } else if after(report.inertia_start) && !after(report.fatigue_start) {
            "inertia"
        } else {
            ""
        }
    };
    for (i, d) in series.dates.iter().enumerate() {
        let r = roc_at[i].map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{d},{},{},{r},{}", series.sdi[i], series.smoothed[i], phase_of(*d));
    }
    let mut svg = Svg::new(2.0 * HEIGHT - 60.0);
    svg.text(
        WIDTH / 2.0,
        20.0,
        &format!("SDI and rate of change, {} {}", series.geo.level, series.geo.geo_id),
        "middle",
        14,
    );
    let (lo, hi) = range(series.sdi.iter().chain(&series.smoothed).copied(), true);
    let top = Panel {
        left: MARGIN_L,
        right: WIDTH - MARGIN_R,
        top: MARGIN_T,
        bottom: HEIGHT - MARGIN_B - 30.0,
        n,
        lo,
        hi,
    };
    let (rlo, rhi) = robust_range(roc_at.iter().flatten().copied());
    let bottom = Panel {
        left: MARGIN_L,
        right: WIDTH - MARGIN_R,
        top: HEIGHT - 20.0,
        bottom: 2.0 * HEIGHT - 60.0 - MARGIN_B,
        n,
        lo: rlo,
        hi: rhi,
    };
    let index = |d: Option<NaiveDate>| d.map(|d| series.dates.partition_point(|x| *x < d).min(n - 1));
    let mut shade = |from: Option<usize>, to: Option<usize>, color: &str| {
        if let (Some(a), Some(b)) = (from, to) {
            for p in [&top, &bottom] {
                svg.rect(p.x(a), p.top, p.x(b) - p.x(a), p.bottom - p.top, color, 0.15);
            }
        }
    };
    let inertia_end = index(report.fatigue_start).or(Some(n - 1));
    shade(index(report.inertia_start), inertia_end, "#ff7f0e");
    shade(index(report.fatigue_start), index(report.fatigue_end).or(Some(n - 1)), "#d62728");
    top.axes(&mut svg, &series.dates, "SDI", 8);
    let clipped = roc_at.iter().flatten().any(|v| *v < rlo || *v > rhi);
    bottom.axes(
        &mut svg,
        &series.dates,
        if clipped { "ROC (%), clipped to axis" } else { "ROC (%)" },
        8,
    );
    svg.line(MARGIN_L, bottom.y(0.0), WIDTH - MARGIN_R, bottom.y(0.0), "#999", true);
    let pts = |vals: &[f64], p: &Panel| -> Vec<(f64, f64)> { vals.iter().enumerate().map(|(i, v)| (p.x(i), p.y(*v))).collect() };
    svg.polyline(&pts(&series.sdi, &top), COLORS[0], 1.0);
    svg.polyline(&pts(&series.smoothed, &top), COLORS[1], 2.0);
    let roc_pts: Vec<(f64, f64)> = roc_at
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (bottom.x(i), bottom.y(v))))
        .collect();
    svg.polyline(&roc_pts, COLORS[2], 1.5);
    if let Some(p) = index(report.pivot) {
        for panel in [&top, &bottom] {
            svg.line(top.x(p), panel.top, top.x(p), panel.bottom, "#333", true);
        }
    }
    legend(
        &mut svg,
        &[
            ("daily SDI", COLORS[0]),
            ("smoothed SDI", COLORS[1]),
            ("ROC", COLORS[2]),
            ("inertia", "#ff7f0e"),
            ("fatigue", "#d62728"),
        ],
        2.0 * HEIGHT - 70.0,
    );
    Ok(Figure {
        svg: svg.finish("SDI and rate of change", &csv),
        csv,
    })
}

/// One bar pair (SDI before and after the pivot) per geography.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub geo_id: String,
    pub sdi_before: f64,
    pub sdi_after: f64,
    pub cases_before_per_k: Option<f64>,
    pub cases_after_per_k: Option<f64>,
}

impl From<&StateComparison> for ComparisonRow {
    fn from(s: &StateComparison) -> Self {
        Self {
            geo_id: s.state.to_string(),
            sdi_before: s.sdi_before,
            sdi_after: s.sdi_after,
            cases_before_per_k: Some(s.cases_before_per_k),
            cases_after_per_k: Some(s.cases_after_per_k),
        }
    }
}

/// State rows from phase reports, for runs without case data.
pub fn rows_from_reports(reports: &[PhaseReport]) -> Vec<ComparisonRow> {
    reports
        .iter()
        .filter(|r| r.level == Level::State)
        .filter_map(|r| {
            Some(ComparisonRow {
                geo_id: r.geo_id.clone(),
                sdi_before: r.mean_before?,
                sdi_after: r.mean_after?,
                cases_before_per_k: None,
                cases_after_per_k: None,
            })
        })
        .collect()
}

/// Before/after SDI bars per geography, with case rates as lines on a
/// second axis when available.
pub fn comparison_figure(rows: &[ComparisonRow], pivot: Option<NaiveDate>) -> Result<Figure> {
    if rows.is_empty() {
        return Err(Error::Missing(
            "no per-state before/after comparison rows (phases.json or state_cases.csv)".into(),
        ));
    }
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut csv = String::from("geo_id,sdi_before,sdi_after,cases_before_per_k,cases_after_per_k\n");
    for r in rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.geo_id,
            r.sdi_before,
            r.sdi_after,
            opt(r.cases_before_per_k),
            opt(r.cases_after_per_k)
        );
    }
    let (_, hi) = range(rows.iter().flat_map(|r| [r.sdi_before, r.sdi_after]), true);
    let bottom = HEIGHT - MARGIN_B;
    let y = |v: f64| bottom - v / hi * (bottom - MARGIN_T);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) / rows.len() as f64;
    let mut svg = Svg::new(HEIGHT + 20.0);
    let title = match pivot {
        Some(p) => format!("SDI the week before and after {p}"),
        None => "SDI before and after the pivot".to_string(),
    };
    svg.text(WIDTH / 2.0, 20.0, &title, "middle", 14);
    svg.line(MARGIN_L, bottom, WIDTH - MARGIN_R, bottom, "#333", false);
    svg.line(MARGIN_L, MARGIN_T, MARGIN_L, bottom, "#333", false);
    for k in 0..=4 {
        let v = hi * k as f64 / 4.0;
        svg.text(MARGIN_L - 6.0, y(v) + 4.0, &tick_label(v, hi), "end", 10);
    }
    for (i, r) in rows.iter().enumerate() {
        let x0 = MARGIN_L + slot * i as f64;
        let w = slot * 0.35;
        svg.rect(x0 + slot * 0.12, y(r.sdi_before), w, bottom - y(r.sdi_before), COLORS[1], 0.8);
        svg.rect(x0 + slot * 0.12 + w, y(r.sdi_after), w, bottom - y(r.sdi_after), COLORS[0], 0.8);
        svg.text(x0 + slot / 2.0, bottom + 16.0, &r.geo_id, "middle", 10);
    }
    let cases: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.cases_before_per_k?, r.cases_after_per_k?)))
        .collect();
    if cases.len() == rows.len() {
        let (_, chi) = range(cases.iter().flat_map(|c| [c.0, c.1]), true);
        let cy = |v: f64| bottom - v / chi * (bottom - MARGIN_T);
        let centre = |i: usize| MARGIN_L + slot * (i as f64 + 0.5);
        let before: Vec<(f64, f64)> = cases.iter().enumerate().map(|(i, c)| (centre(i), cy(c.0))).collect();
        let after: Vec<(f64, f64)> = cases.iter().enumerate().map(|(i, c)| (centre(i), cy(c.1))).collect();
        svg.polyline(&before, COLORS[3], 1.5);
        svg.polyline(&after, COLORS[2], 1.5);
        svg.line(WIDTH - MARGIN_R, MARGIN_T, WIDTH - MARGIN_R, bottom, "#333", false);
        for k in 0..=4 {
            let v = chi * k as f64 / 4.0;
            svg.text(WIDTH - MARGIN_R + 4.0, cy(v) + 4.0, &tick_label(v, chi), "start", 10);
        }
        svg.text(WIDTH - MARGIN_R, MARGIN_T - 6.0, "new cases per 1000", "end", 10);
        legend(
            &mut svg,
            &[
                ("SDI before", COLORS[1]),
                ("SDI after", COLORS[0]),
                ("cases before", COLORS[3]),
                ("cases after", COLORS[2]),
            ],
            HEIGHT + 10.0,
        );
    } else {
        legend(&mut svg, &[("SDI before", COLORS[1]), ("SDI after", COLORS[0])], HEIGHT + 10.0);
    }
    Ok(Figure {
        svg: svg.finish(&title, &csv),
        csv,
    })
}
