//! CSV, SVG and manifest output for a [`MetricsReport`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{paired_starts, CellReport, ErrorStats, MetricsReport};
use crate::error::Result;

const METRICS: [&str; 4] = ["win_rate", "crash_rate", "wins_per_crash", "mean_min_ax"];

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

fn metric_values(cell: &CellReport) -> Option<[f64; 4]> {
    cell.outcomes.as_ref().map(|m| [m.win_rate, m.crash_rate, m.wins_per_crash, m.mean_min_ax])
}

fn metrics_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["predictor", "q_y", "metric", "value", "races"])?;
    for cell in &report.cells {
        let races = cell.outcomes.as_ref().map_or(0, |m| m.races);
        let values = metric_values(cell).unwrap_or([f64::NAN; 4]);
        for (name, v) in METRICS.iter().zip(values) {
            w.write_record([cell.label(), cell.q_y.to_string(), name.to_string(), fmt_value(v), races.to_string()])?;
        }
    }
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

fn counts_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["predictor", "q_y", "races", "wins", "safe_losses", "crashes", "off_track", "solver_aborts", "failed"])?;
    for cell in &report.cells {
        let c = cell.outcomes.as_ref();
        let n = |f: fn(&super::OutcomeMetrics) -> usize| c.map_or(0, f).to_string();
        w.write_record([
            cell.label(),
            cell.q_y.to_string(),
            n(|m| m.races),
            n(|m| m.wins),
            n(|m| m.safe_losses),
            n(|m| m.crashes),
            n(|m| m.off_track),
            n(|m| m.solver_aborts),
            cell.failed.len().to_string(),
        ])?;
    }
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

fn error_csv(report: &MetricsReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["predictor", "q_y", "step", "component", "count", "mean", "std", "mean_abs"])?;
    for cell in &report.cells {
        for e in &cell.errors {
            for (name, s) in [("longitudinal", e.longitudinal_stats()), ("lateral", e.lateral_stats())] {
                let ErrorStats { count, mean, std, mean_abs } = s;
                w.write_record([
                    cell.label(),
                    cell.q_y.to_string(),
                    e.step.to_string(),
                    name.to_string(),
                    count.to_string(),
                    fmt_value(mean),
                    fmt_value(std),
                    fmt_value(mean_abs),
                ])?;
            }
        }
    }
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

/// Fixed-range histogram; out-of-range samples are counted in the edge bins.
pub(crate) fn histogram(x: &[f64], bins: usize, half_range: f64) -> Vec<(f64, f64, usize)> {
    let width = 2.0 * half_range / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in x {
        let i = ((v + half_range) / width).floor();
        counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (-half_range + i as f64 * width, -half_range + (i + 1) as f64 * width, c))
        .collect()
}

fn histogram_csv(x: &[f64], bins: usize, half_range: f64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for (lo, hi, c) in histogram(x, bins, half_range) {
        w.write_record([format!("{lo:.6}"), format!("{hi:.6}"), c.to_string()])?;
    }
    Ok(w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Four panels (one per outcome metric) against `q_y`, one line per
/// predictor. Infinite wins-per-crash values are drawn as open markers on
/// the top edge.
pub fn render_svg(report: &MetricsReport) -> String {
    let (pw, ph, margin) = (320.0, 220.0, 50.0);
    let width = 2.0 * (pw + margin) + margin;
    let height = 2.0 * (ph + margin) + margin + 30.0;
    let mut labels: Vec<String> = Vec::new();
    for c in &report.cells {
        if !labels.contains(&c.label()) {
            labels.push(c.label());
        }
    }
    let mut q: Vec<f64> = report.cells.iter().map(|c| c.q_y).collect();
    q.sort_by(f64::total_cmp);
    q.dedup();
    let (q_lo, q_hi) = (q[0], q[q.len() - 1]);
    let q_span = if q_hi > q_lo { q_hi - q_lo } else { 1.0 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, name) in METRICS.iter().enumerate() {
        let x0 = margin + (k % 2) as f64 * (pw + margin);
        let y0 = margin + (k / 2) as f64 * (ph + margin);
        let series: Vec<(usize, Vec<(f64, f64)>)> = labels
            .iter()
            .enumerate()
            .map(|(li, l)| {
                let pts = report
                    .cells
                    .iter()
                    .filter(|c| &c.label() == l)
                    .filter_map(|c| metric_values(c).map(|v| (c.q_y, v[k])))
                    .collect();
                (li, pts)
            })
            .collect();
        let finite: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|v| v.1)).filter(|v| v.is_finite()).collect();
        let (mut lo, mut hi) = match k {
            0 | 1 => (0.0, 1.0),
            _ => (finite.iter().copied().fold(0.0, f64::min), finite.iter().copied().fold(0.0, f64::max)),
        };
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        if k == 3 {
            lo -= 0.05 * (hi - lo);
        }
        let sx = |v: f64| x0 + (v - q_lo) / q_span * pw;
        let sy = |v: f64| y0 + ph - (v.clamp(lo, hi) - lo) / (hi - lo) * ph;
        let _ = writeln!(svg, r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{name}</text>"#, x0 + pw / 2.0, y0 - 8.0);
        for v in [lo, 0.5 * (lo + hi), hi] {
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#, x0 - 4.0, sy(v) + 4.0, v);
        }
        for &qv in &q {
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{qv}</text>"#, sx(qv), y0 + ph + 14.0);
        }
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">q_y</text>"#, x0 + pw / 2.0, y0 + ph + 28.0);
        for (li, pts) in &series {
            let color = PALETTE[li % PALETTE.len()];
            let line: Vec<String> =
                pts.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            if line.len() > 1 {
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
            }
            for &(x, y) in pts {
                let (fill, yy) = if y.is_finite() { (color, sy(y)) } else { ("white", y0) };
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{fill}" stroke="{color}"/>"#,
                    sx(x),
                    yy
                );
            }
        }
    }
    let ly = height - 20.0;
    for (li, l) in labels.iter().enumerate() {
        let x = margin + li as f64 * 75.0;
        let color = PALETTE[li % PALETTE.len()];
        let _ = writeln!(svg, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, x + 14.0, xml_escape(l));
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config_hash: String,
    seed: u64,
    races: usize,
    track_seeds: Vec<u64>,
    race_seeds: Vec<u64>,
    gp_model_hash: Option<&'a str>,
    /// File name → SHA-256 of its contents.
    files: BTreeMap<String, String>,
}

/// Writes the report under `out_dir` and returns the written paths. The
/// output is a deterministic function of the report.
pub fn emit_reports(report: &MetricsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = &report.config;
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("metrics.csv".into(), metrics_csv(report)?),
        ("counts.csv".into(), counts_csv(report)?),
        ("prediction_errors.csv".into(), error_csv(report)?),
        ("metrics.svg".into(), render_svg(report).into_bytes()),
    ];
    for cell in &report.cells {
        for e in &cell.errors {
            for (comp, x, range) in
                [("lon", &e.longitudinal, cfg.histogram_range[0]), ("lat", &e.lateral, cfg.histogram_range[1])]
            {
                let name = format!("histograms/{}_{comp}_t{}.csv", cell.key(), e.step);
                files.push((name, histogram_csv(x, cfg.histogram_bins, range)?));
            }
        }
    }

    std::fs::create_dir_all(out_dir.join("histograms"))?;
    let mut written = Vec::with_capacity(files.len() + 1);
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes)?;
        hashes.insert(name.clone(), hex::encode(Sha256::digest(bytes)));
        written.push(path);
    }
    let slots = paired_starts(cfg)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        races: cfg.races,
        track_seeds: slots.iter().map(|s| s.start.track_seed).collect(),
        race_seeds: slots.iter().map(|s| s.race_seed).collect(),
        gp_model_hash: report.gp_hash.as_deref(),
        files: hashes,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    written.push(path);
    Ok(written)
}
