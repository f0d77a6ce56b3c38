//! Run outputs: `metrics.jsonl`, `summary.csv`, `coverage.csv`,
//! `result.json` and the SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::experiment::{ExperimentResult, MetricRecord};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RESULT_FILE: &str = "result.json";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.svg";
pub const HEATMAP_FILE: &str = "heatmap.svg";

pub fn metrics_jsonl(records: &[MetricRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Writes `metrics.jsonl`, `coverage.csv` and `result.json` into `dir`.
pub fn write_run(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), metrics_jsonl(&result.records)?)?;
    let mut w = csv::Writer::from_path(dir.join(COVERAGE_FILE))?;
    w.write_record(["x", "y", "count"])?;
    for (c, n) in &result.cell_counts {
        w.write_record([c.x.to_string(), c.y.to_string(), n.to_string()])?;
    }
    w.flush()?;
    fs::write(dir.join(RESULT_FILE), serde_json::to_string(result)?)?;
    Ok(())
}

pub fn read_result(dir: &Path) -> Result<ExperimentResult> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(RESULT_FILE))?)?)
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub strategy: String,
    pub total_steps: usize,
    pub final_success: f64,
    pub final_entropy: f64,
    pub final_coverage: f64,
    /// Empty when perfect success was never evaluated.
    pub steps_to_full_success: Option<usize>,
    pub prop1_checks: usize,
    pub prop1_violations: usize,
}

impl SummaryRow {
    pub fn from_result(r: &ExperimentResult) -> Self {
        let last = r.final_record();
        Self {
            seed: r.seed,
            strategy: r.label.clone(),
            total_steps: r.total_steps,
            final_success: last.map_or(0.0, |m| m.success_eval),
            final_entropy: last.map_or(0.0, |m| m.entropy_now),
            final_coverage: last.map_or(0.0, |m| m.coverage),
            steps_to_full_success: r.steps_to_full_success(),
            prop1_checks: r.prop1_checks,
            prop1_violations: r.prop1_violations,
        }
    }
}

/// Rows sorted by strategy, then seed.
pub fn write_summary(path: &Path, results: &[ExperimentResult]) -> Result<()> {
    let mut rows: Vec<SummaryRow> = results.iter().map(SummaryRow::from_result).collect();
    rows.sort_by(|a, b| a.strategy.cmp(&b.strategy).then(a.seed.cmp(&b.seed)));
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

/// Per-label median curve of `metric` over seeds, matched by evaluation
/// index and truncated to the shortest run: `(steps, value)` pairs with
/// steps taken as the median across seeds.
pub fn median_curves<F: Fn(&MetricRecord) -> f64>(results: &[ExperimentResult], metric: F) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut by_label: BTreeMap<String, Vec<&ExperimentResult>> = BTreeMap::new();
    for r in results {
        by_label.entry(r.label.clone()).or_default().push(r);
    }
    by_label
        .into_iter()
        .map(|(label, runs)| {
            let n = runs.iter().map(|r| r.records.len()).min().unwrap_or(0);
            let curve = (0..n)
                .map(|i| {
                    let mut xs: Vec<f64> = runs.iter().map(|r| r.records[i].steps as f64).collect();
                    let mut ys: Vec<f64> = runs.iter().map(|r| metric(&r.records[i])).collect();
                    (median(&mut xs), median(&mut ys))
                })
                .collect();
            (label, curve)
        })
        .collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn panel(out: &mut String, x0: f64, title: &str, curves: &BTreeMap<String, Vec<(f64, f64)>>, y_max: f64) {
    let (w, h, pad) = (420.0, 280.0, 40.0);
    let x_max = curves.values().flatten().map(|p| p.0).fold(1.0, f64::max);
    let y_max = y_max.max(1e-9);
    let _ = writeln!(out, r#"<g transform="translate({x0},0)">"#);
    let _ = writeln!(
        out,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let _ = writeln!(out, r#"<text x="{}" y="25" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">steps (max {x_max:.0})</text>"#, w / 2.0, h - 10.0);
    let _ = writeln!(out, r#"<text x="5" y="{}" font-size="11">{y_max:.2}</text>"#, pad + 4.0);
    let _ = writeln!(out, r#"<text x="5" y="{}" font-size="11">0</text>"#, h - pad);
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| {
                let px = pad + x / x_max * (w - 2.0 * pad);
                let py = h - pad - y / y_max * (h - 2.0 * pad);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{label}</text>"#,
            pad + 8.0,
            pad + 16.0 + 14.0 * i as f64
        );
    }
    out.push_str("</g>\n");
}

/// Median success and entropy curves per strategy label.
pub fn curves_svg(results: &[ExperimentResult]) -> String {
    let success = median_curves(results, |r| r.success_eval);
    let entropy = median_curves(results, |r| r.entropy_now);
    let e_max = entropy.values().flatten().map(|p| p.1).fold(0.0, f64::max);
    let mut out = String::from(r#"<svg xmlns="http://www.w3.org/2000/svg" width="840" height="280" font-family="sans-serif">"#);
    out.push('\n');
    panel(&mut out, 0.0, "evaluated success", &success, 1.0);
    panel(&mut out, 420.0, "achieved-goal entropy (nats)", &entropy, e_max);
    out.push_str("</svg>\n");
    out
}

type Grid = (i32, i32, BTreeMap<(i32, i32), u64>);

/// Achieved-goal visit counts per cell, one grid per strategy label (counts
/// summed over seeds), shaded on a log scale.
pub fn heatmap_svg(results: &[ExperimentResult]) -> String {
    let mut grids: BTreeMap<String, Grid> = BTreeMap::new();
    for r in results {
        let e = grids.entry(r.label.clone()).or_insert((r.width, r.height, BTreeMap::new()));
        for (c, n) in &r.cell_counts {
            *e.2.entry((c.x, c.y)).or_insert(0) += n;
        }
    }
    let cell = 24.0;
    let gap = 30.0;
    let max_w = grids.values().map(|g| g.0).max().unwrap_or(1) as f64;
    let max_h = grids.values().map(|g| g.1).max().unwrap_or(1) as f64;
    let panel_w = max_w * cell + gap;
    let width = panel_w * grids.len().max(1) as f64;
    let height = max_h * cell + 40.0;
    let mut out = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#);
    out.push('\n');
    for (i, (label, (w, h, counts))) in grids.iter().enumerate() {
        let x0 = i as f64 * panel_w;
        let top = counts.values().copied().max().unwrap_or(1).max(1) as f64;
        let _ = writeln!(out, r#"<text x="{}" y="15" font-size="12">{label}</text>"#, x0);
        for y in 0..*h {
            for x in 0..*w {
                let n = counts.get(&(x, y)).copied().unwrap_or(0) as f64;
                let shade = if n > 0.0 { (n.ln_1p() / top.ln_1p()).clamp(0.0, 1.0) } else { 0.0 };
                let v = (255.0 * (1.0 - shade)).round() as u8;
                let px = x0 + x as f64 * cell;
                let py = 25.0 + (h - 1 - y) as f64 * cell;
                let _ = writeln!(
                    out,
                    r##"<rect x="{px}" y="{py}" width="{cell}" height="{cell}" fill="rgb({v},{v},255)" stroke="#ccc"/>"##
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `summary.csv`, `curves.svg` and `heatmap.svg` into `dir`.
pub fn write_plots(dir: &Path, results: &[ExperimentResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary(&dir.join(SUMMARY_FILE), results)?;
    fs::File::create(dir.join(CURVES_FILE))?.write_all(curves_svg(results).as_bytes())?;
    fs::File::create(dir.join(HEATMAP_FILE))?.write_all(heatmap_svg(results).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Cell, Point};

    fn record(i: usize, success: f64, entropy: f64) -> MetricRecord {
        MetricRecord {
            eval_index: i,
            steps: 100 * (i + 1),
            iteration: i,
            subgoal: Point::new(1.0, 2.0),
            pursuit_steps: 3,
            explore_steps: 4,
            goal_reached: true,
            c: 0.5,
            entropy_now: entropy,
            success_eval: success,
            coverage: 0.3,
            prop1_checks: 1,
            prop1_violations: 0,
        }
    }

    fn result(label: &str, seed: u64, success: &[f64]) -> ExperimentResult {
        ExperimentResult {
            label: label.into(),
            seed,
            records: success.iter().enumerate().map(|(i, s)| record(i, *s, i as f64)).collect(),
            total_steps: 100 * success.len(),
            iterations: success.len(),
            prop1_checks: 1,
            prop1_violations: 0,
            cell_counts: vec![(Cell::new(0, 0), 5), (Cell::new(1, 1), 2)],
            width: 2,
            height: 2,
        }
    }

    #[test]
    fn metrics_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = result("mega+geaps", 3, &[0.0, 0.5, 1.0]);
        write_run(dir.path(), &r).unwrap();
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), r.records);
        assert_eq!(read_result(dir.path()).unwrap().records, r.records);
        let cov = fs::read_to_string(dir.path().join(COVERAGE_FILE)).unwrap();
        assert_eq!(cov, "x,y,count\n0,0,5\n1,1,2\n");
    }

    #[test]
    fn summary_rows() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![result("b", 1, &[0.2, 1.0]), result("a", 2, &[0.1, 0.4]), result("a", 1, &[1.0, 1.0])];
        write_plots(dir.path(), &rs).unwrap();
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("seed,strategy,total_steps"));
        assert_eq!(lines[1], "1,a,200,1.0,1.0,0.3,100,1,0");
        assert_eq!(lines[2], "2,a,200,0.4,1.0,0.3,,1,0");
        assert_eq!(lines[3], "1,b,200,1.0,1.0,0.3,200,1,0");
        assert!(fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap().contains("<polyline"));
        assert_eq!(fs::read_to_string(dir.path().join(HEATMAP_FILE)).unwrap().matches("<rect").count(), 8);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let rs = vec![result("a", 1, &[0.0, 1.0, 1.0]), result("a", 2, &[0.5, 0.5]), result("a", 3, &[1.0, 0.0])];
        let c = &median_curves(&rs, |r| r.success_eval)["a"];
        assert_eq!(c, &vec![(100.0, 0.5), (200.0, 0.5)]);
    }
}
