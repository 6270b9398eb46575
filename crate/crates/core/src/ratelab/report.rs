//! Report artifacts: long and summary CSV, log-log SVG, JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::runner::RateReport;
use super::slope::{fit_slope, SlopeFit};
use crate::error::{Error, Result};

pub const LONG_HEADER: [&str; 7] = ["scenario", "case", "n", "rep", "metric", "value", "seed"];
pub const SUMMARY_HEADER: [&str; 10] = ["scenario", "case", "n", "metric", "mean", "stderr", "median", "reps", "non_converged", "unreliable"];

/// One row of the long CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct LongRow {
    pub scenario: String,
    pub case: String,
    pub n: usize,
    pub rep: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// One row of the summary CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub case: String,
    pub n: usize,
    pub metric: String,
    pub mean: f64,
    pub stderr: Option<f64>,
    pub median: f64,
    pub reps: usize,
    pub non_converged: usize,
    pub unreliable: bool,
}

pub fn write_long_csv<W: Write>(reports: &[RateReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(LONG_HEADER)?;
    for r in reports {
        for cell in &r.per_n {
            for rep in &cell.replicates {
                for (metric, value) in &rep.metrics {
                    out.write_record([
                        r.scenario.as_str(),
                        r.case.as_str(),
                        &cell.n.to_string(),
                        &rep.rep.to_string(),
                        metric,
                        &value.to_string(),
                        &rep.seed.to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(reports: &[RateReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in reports {
        for cell in &r.per_n {
            for (metric, s) in &cell.metrics {
                out.write_record([
                    r.scenario.as_str(),
                    r.case.as_str(),
                    &cell.n.to_string(),
                    metric,
                    &s.mean.to_string(),
                    &s.stderr.map(|v| v.to_string()).unwrap_or_default(),
                    &s.median.to_string(),
                    &cell.reps.to_string(),
                    &cell.non_converged.to_string(),
                    &cell.unreliable.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `long_path` and `summary_path`.
pub fn emit_csv(reports: &[RateReport], long_path: impl AsRef<Path>, summary_path: impl AsRef<Path>) -> Result<()> {
    write_long_csv(reports, fs::File::create(long_path)?)?;
    write_summary_csv(reports, fs::File::create(summary_path)?)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .ok_or_else(|| Error::Parse(format!("missing column {name}")))?
        .parse()
        .map_err(|_| Error::Parse(format!("bad {name} value {:?}", rec.get(i).unwrap_or(""))))
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let h = rdr.headers()?;
    if h.iter().ne(want.iter().copied()) {
        return Err(Error::Parse(format!("unexpected header {:?}", h.iter().collect::<Vec<_>>())));
    }
    Ok(())
}

pub fn read_long_csv<R: Read>(r: R) -> Result<Vec<LongRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &LONG_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(LongRow {
            scenario: field(&rec, 0, "scenario")?,
            case: field(&rec, 1, "case")?,
            n: field(&rec, 2, "n")?,
            rep: field(&rec, 3, "rep")?,
            metric: field(&rec, 4, "metric")?,
            value: field(&rec, 5, "value")?,
            seed: field(&rec, 6, "seed")?,
        });
    }
    Ok(rows)
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    check_header(&mut rdr, &SUMMARY_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let se = rec.get(5).unwrap_or("");
        rows.push(SummaryRow {
            scenario: field(&rec, 0, "scenario")?,
            case: field(&rec, 1, "case")?,
            n: field(&rec, 2, "n")?,
            metric: field(&rec, 3, "metric")?,
            mean: field(&rec, 4, "mean")?,
            stderr: if se.is_empty() { None } else { Some(field(&rec, 5, "stderr")?) },
            median: field(&rec, 6, "median")?,
            reps: field(&rec, 7, "reps")?,
            non_converged: field(&rec, 8, "non_converged")?,
            unreliable: field(&rec, 9, "unreliable")?,
        });
    }
    Ok(rows)
}

/// Key of a per-n mean: `(scenario, case, metric, n)`.
pub type MeanKey = (String, String, String, usize);

/// Recomputes per-n means from long rows, averaging in replicate order.
pub fn means_from_long(rows: &[LongRow]) -> BTreeMap<MeanKey, f64> {
    let mut groups: BTreeMap<MeanKey, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.scenario.clone(), r.case.clone(), r.metric.clone(), r.n)).or_default().push((r.rep, r.value));
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by_key(|p| p.0);
            let mean = v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
            (k, mean)
        })
        .collect()
}

/// Refits slopes per `(scenario, case, metric)` from mean curves.
pub fn slopes_from_means(means: &BTreeMap<MeanKey, f64>) -> BTreeMap<(String, String, String), SlopeFit> {
    let mut curves: BTreeMap<(String, String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for ((s, c, m, n), v) in means {
        curves.entry((s.clone(), c.clone(), m.clone())).or_default().push((*n as f64, *v));
    }
    curves.into_iter().filter_map(|(k, pts)| fit_slope(&pts).ok().map(|f| (k, f))).collect()
}

pub fn means_from_summary(rows: &[SummaryRow]) -> BTreeMap<MeanKey, f64> {
    rows.iter().map(|r| ((r.scenario.clone(), r.case.clone(), r.metric.clone(), r.n), r.mean)).collect()
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;
const COLUMNS: usize = 3;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-log panel per metric with a fitted slope: mean errors, fitted line,
/// slope annotation.
pub fn render_svg(report: &RateReport) -> String {
    let metrics: Vec<(&String, &SlopeFit)> = report.slopes.iter().collect();
    let rows = metrics.len().div_ceil(COLUMNS).max(1);
    let cols = metrics.len().clamp(1, COLUMNS);
    let width = cols as f64 * PANEL_W;
    let height = rows as f64 * PANEL_H + 30.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14">{} {}</text>"#, esc(&report.scenario), esc(&report.case));
    for (i, (metric, fit)) in metrics.iter().enumerate() {
        let ox = (i % COLUMNS) as f64 * PANEL_W;
        let oy = 30.0 + (i / COLUMNS) as f64 * PANEL_H;
        let pts: Vec<(f64, f64)> =
            report.curve(metric).into_iter().filter(|p| p.1 > 0.0 && p.1.is_finite()).map(|(n, e)| (n.log10(), e.log10())).collect();
        let line = |lx: f64| (fit.intercept + fit.slope * lx * std::f64::consts::LN_10) / std::f64::consts::LN_10;
        let (xmin, xmax) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        ys.push(line(xmin));
        ys.push(line(xmax));
        let (ymin, ymax) = ys.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
        let (xmin, xmax) = (xmin - 0.1, xmax + 0.1);
        let pad = 0.1 * (ymax - ymin).max(0.1);
        let (ymin, ymax) = (ymin - pad, ymax + pad);
        let px = |x: f64| ox + MARGIN + (x - xmin) / (xmax - xmin) * (PANEL_W - 1.5 * MARGIN);
        let py = |y: f64| oy + PANEL_H - MARGIN - (y - ymin) / (ymax - ymin) * (PANEL_H - 1.5 * MARGIN);

        let _ = writeln!(s, r#"<g class="panel" data-metric="{}">"#, esc(metric));
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            ox + MARGIN,
            oy + MARGIN / 2.0,
            PANEL_W - 1.5 * MARGIN,
            PANEL_H - 1.5 * MARGIN
        );
        for t in (xmin.ceil() as i32)..=(xmax.floor() as i32) {
            let x = px(t as f64);
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">1e{t}</text>"#, oy + PANEL_H - MARGIN + 14.0);
        }
        for t in (ymin.ceil() as i32)..=(ymax.floor() as i32) {
            let y = py(t as f64);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" font-size="10" text-anchor="end">1e{t}</text>"#, ox + MARGIN - 4.0);
        }
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="red" stroke-dasharray="6 3"/>"#,
            px(xmin + 0.1),
            py(line(xmin + 0.1)),
            px(xmax - 0.1),
            py(line(xmax - 0.1))
        );
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="blue"/>"#, path.join(" "));
        for p in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="blue"/>"#, px(p.0), py(p.1));
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#, ox + MARGIN, oy + 16.0, esc(metric));
        let _ = writeln!(
            s,
            r#"<text class="slope" x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">slope = {:.3} (r2 = {:.3})</text>"#,
            ox + PANEL_W - MARGIN / 2.0,
            oy + 16.0,
            fit.slope,
            fit.r2
        );
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(report: &RateReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_svg(report))?;
    Ok(())
}

pub fn emit_json(report: &RateReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, report.to_json()? + "\n")?;
    Ok(())
}

/// Writes `report.json`, `long.csv`, `summary.csv` and `rates.svg` into `dir`.
pub fn write_outputs(report: &RateReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    emit_json(report, dir.join("report.json"))?;
    emit_csv(std::slice::from_ref(report), dir.join("long.csv"), dir.join("summary.csv"))?;
    emit_svg(report, dir.join("rates.svg"))
}
