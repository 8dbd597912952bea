//! CSV tables and SVG plots for a finished run. Output depends only on the
//! records, so regenerating a report is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::deltas::{mean_std, DeltaCell, DeltaReport};
use super::record::ExperimentRecord;
use crate::error::{Error, IoContext, Result};
use crate::pairing::PairingMode;
use crate::raster::write_atomic;
use crate::training::LossKind;

pub const REPORT_DIR: &str = "report";

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Shape(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Shape(format!("csv: {e}")))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Every record, one row each, per-class F1 in `f1_class_<c>` columns.
pub fn records_csv(records: &[ExperimentRecord]) -> Result<Vec<u8>> {
    let classes: BTreeSet<u8> = records.iter().flat_map(|r| r.per_class_f1.keys().copied()).collect();
    let mut header = strings(&["dataset", "loss", "mode", "r_img", "r_pairs", "seed", "macro_f1"]);
    header.extend(classes.iter().map(|c| format!("f1_class_{c}")));
    header.extend(strings(&["checkpoint_epoch", "checkpoint", "wall_clock_seconds"]));
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let k = &r.key;
            let mut row = vec![
                k.dataset.name().to_string(),
                k.loss.name().to_string(),
                k.mode.name().to_string(),
                opt(k.r_img),
                num(k.r_pairs),
                k.seed.to_string(),
                num(r.macro_f1),
            ];
            row.extend(classes.iter().map(|c| opt(r.per_class_f1.get(c).copied().flatten())));
            row.push(r.checkpoint_epoch.to_string());
            row.push(r.checkpoint.display().to_string());
            row.push(format!("{:.1}", r.wall_clock_seconds));
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Mean macro F1 over seeds for one (loss, mode, r_img, r_pairs).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub loss: LossKind,
    pub mode: PairingMode,
    pub r_img: Option<f64>,
    pub r_pairs: f64,
    pub seeds: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    type Id = (LossKind, PairingMode, Option<u64>, u64);
    let mut groups: BTreeMap<Id, Vec<f64>> = BTreeMap::new();
    for r in records {
        let k = &r.key;
        groups
            .entry((k.loss, k.mode, k.r_img.map(f64::to_bits), k.r_pairs.to_bits()))
            .or_default()
            .push(r.macro_f1);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((loss, mode, ri, rp), f1s)| {
            let (mean_f1, std_f1) = mean_std(&f1s);
            SummaryRow {
                loss,
                mode,
                r_img: ri.map(f64::from_bits),
                r_pairs: f64::from_bits(rp),
                seeds: f1s.len(),
                mean_f1,
                std_f1,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.loss, a.mode)
            .cmp(&(b.loss, b.mode))
            .then(a.r_img.unwrap_or(-1.0).total_cmp(&b.r_img.unwrap_or(-1.0)))
            .then(a.r_pairs.total_cmp(&b.r_pairs))
    });
    rows
}

fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let header = strings(&["loss", "mode", "r_img", "r_pairs", "seeds", "mean_macro_f1", "std_macro_f1"]);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.loss.name().to_string(),
                r.mode.name().to_string(),
                opt(r.r_img),
                num(r.r_pairs),
                r.seeds.to_string(),
                num(r.mean_f1),
                num(r.std_f1),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn deltas_csv(cells: &[DeltaCell]) -> Result<Vec<u8>> {
    let header = strings(&[
        "dataset",
        "loss",
        "r_img",
        "r_pairs",
        "seeds",
        "noisy_f1",
        "mere_exposure_f1",
        "delta_pp",
    ]);
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.dataset.name().to_string(),
                c.loss.name().to_string(),
                opt(c.r_img),
                num(c.r_pairs),
                c.seeds.to_string(),
                num(c.noisy_f1),
                num(c.mere_exposure_f1),
                num(c.delta_pp),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn stats_csv(d: &DeltaReport) -> Result<Vec<u8>> {
    let header = strings(&["loss", "cells", "mean_pp", "std_pp"]);
    let rows: Vec<Vec<String>> = d
        .stats
        .iter()
        .map(|s| vec![s.loss.name().to_string(), s.cells.to_string(), num(s.mean_pp), num(s.std_pp)])
        .collect();
    csv_bytes(&header, &rows)
}

fn unmatched_csv(d: &DeltaReport) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = d.unmatched.iter().map(|k| vec![k.slug()]).collect();
    csv_bytes(&strings(&["cell"]), &rows)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];
const W: f64 = 560.0;
const H: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Svg(String);

impl Svg {
    fn new(title: &str) -> Self {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            escape(title)
        );
        Svg(s)
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        let _ = writeln!(
            self.0,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" {style}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, body: &str) {
        let _ = writeln!(
            self.0,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{}</text>"#,
            escape(body)
        );
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn draw_y(&self, svg: &mut Svg, ticks: &[f64], label: &str) {
        for &t in ticks {
            let y = self.py(t);
            svg.line(LEFT, y, W - RIGHT, y, r##"stroke="#dddddd""##);
            svg.text(LEFT - 6.0, y + 4.0, "end", &format!("{t:.2}"));
        }
        svg.line(LEFT, TOP, LEFT, H - BOTTOM, r#"stroke="black""#);
        let _ = writeln!(
            svg.0,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            (TOP + H - BOTTOM) / 2.0,
            escape(label)
        );
    }
}

fn legend(svg: &mut Svg, i: usize, color: &str, dash: &str, label: &str) {
    let x = W - RIGHT + 14.0;
    let y = TOP + 8.0 + 18.0 * i as f64;
    svg.line(x, y, x + 24.0, y, &format!(r#"stroke="{color}" stroke-width="2"{dash}"#));
    svg.text(x + 30.0, y + 4.0, "start", label);
}

/// Macro F1 against `r_pairs` for one loss; one series per `r_img` (and per
/// mode when both are present, mere exposure dashed).
pub fn f1_plot(loss: LossKind, rows: &[SummaryRow]) -> String {
    let rows: Vec<&SummaryRow> = rows.iter().filter(|r| r.loss == loss).collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.r_pairs).collect();
    let (mut x0, mut x1) = (
        xs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0),
    );
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let axes = Axes { x0, x1, y0: 0.0, y1: 1.0 };
    let mut svg = Svg::new(&format!("{}: macro F1 vs noisy pairs rate", loss.name()));
    axes.draw_y(&mut svg, &[0.0, 0.25, 0.5, 0.75, 1.0], "macro F1");
    svg.line(LEFT, H - BOTTOM, W - RIGHT, H - BOTTOM, r#"stroke="black""#);
    let xticks: BTreeSet<u64> = xs.iter().map(|x| x.to_bits()).collect();
    for t in xticks.iter().map(|b| f64::from_bits(*b)) {
        let x = axes.px(t);
        svg.line(x, H - BOTTOM, x, H - BOTTOM + 4.0, r#"stroke="black""#);
        svg.text(x, H - BOTTOM + 16.0, "middle", &format!("{t:.2}"));
    }
    svg.text((LEFT + W - RIGHT) / 2.0, H - 12.0, "middle", "r_pairs");

    let mut series: BTreeMap<(Option<u64>, PairingMode), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &rows {
        series
            .entry((r.r_img.map(f64::to_bits), r.mode))
            .or_default()
            .push((r.r_pairs, r.mean_f1));
    }
    let modes: BTreeSet<PairingMode> = rows.iter().map(|r| r.mode).collect();
    let r_imgs: Vec<Option<u64>> = series
        .keys()
        .map(|k| k.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for (i, ((ri, mode), pts)) in series.iter().enumerate() {
        let color = PALETTE[r_imgs.iter().position(|r| r == ri).unwrap_or(0) % PALETTE.len()];
        let dash = if *mode == PairingMode::MereExposure {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", axes.px(x), axes.py(y)))
            .collect();
        let _ = writeln!(
            svg.0,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                svg.0,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#,
                axes.px(x),
                axes.py(y)
            );
        }
        let mut label = match ri {
            Some(b) => format!("r_img {:.2}", f64::from_bits(*b)),
            None => "all".to_string(),
        };
        if modes.len() > 1 {
            label.push_str(if *mode == PairingMode::Noisy { " noisy" } else { " mere exp." });
        }
        legend(&mut svg, i, color, dash, &label);
    }
    svg.finish()
}

/// Noisy-minus-mere-exposure deltas for one loss, one bar per cell.
pub fn delta_plot(loss: LossKind, report: &DeltaReport) -> String {
    let cells: Vec<&DeltaCell> = report.cells.iter().filter(|c| c.loss == loss).collect();
    let stats = report.stats.iter().find(|s| s.loss == loss);
    let extent = cells.iter().map(|c| c.delta_pp.abs()).fold(1.0, f64::max).ceil();
    let axes = Axes {
        x0: 0.0,
        x1: cells.len().max(1) as f64,
        y0: -extent,
        y1: extent,
    };
    let title = match stats {
        Some(s) => format!("{}: noisy - mere exposure (mean {:.2}, sd {:.2} pp)", loss.name(), s.mean_pp, s.std_pp),
        None => format!("{}: noisy - mere exposure", loss.name()),
    };
    let mut svg = Svg::new(&title);
    axes.draw_y(&mut svg, &[-extent, -extent / 2.0, 0.0, extent / 2.0, extent], "delta F1 (pp)");
    let zero = axes.py(0.0);
    svg.line(LEFT, zero, W - RIGHT, zero, r#"stroke="black""#);
    let r_imgs: Vec<Option<u64>> = cells
        .iter()
        .map(|c| c.r_img.map(f64::to_bits))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot = (W - LEFT - RIGHT) / cells.len().max(1) as f64;
    for (i, c) in cells.iter().enumerate() {
        let ri = c.r_img.map(f64::to_bits);
        let color = PALETTE[r_imgs.iter().position(|r| *r == ri).unwrap_or(0) % PALETTE.len()];
        let y = axes.py(c.delta_pp);
        let x = LEFT + slot * (i as f64 + 0.15);
        let _ = writeln!(
            svg.0,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            y.min(zero),
            slot * 0.7,
            (y - zero).abs()
        );
        svg.text(
            LEFT + slot * (i as f64 + 0.5),
            H - BOTTOM + 16.0,
            "middle",
            &format!("{:.2}", c.r_pairs),
        );
    }
    svg.text((LEFT + W - RIGHT) / 2.0, H - 12.0, "middle", "r_pairs");
    for (i, ri) in r_imgs.iter().enumerate() {
        let label = match ri {
            Some(b) => format!("r_img {:.2}", f64::from_bits(*b)),
            None => "all".to_string(),
        };
        legend(&mut svg, i, PALETTE[i % PALETTE.len()], "", &label);
    }
    svg.finish()
}

/// Writes every table and plot into `out_dir`; returns the written paths in
/// order.
pub fn render_report(records: &[ExperimentRecord], deltas: &DeltaReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let p = out_dir.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
        Ok(())
    };
    let summary = summarize(records);
    put("records.csv".into(), records_csv(records)?)?;
    put("f1_summary.csv".into(), summary_csv(&summary)?)?;
    put("deltas.csv".into(), deltas_csv(&deltas.cells)?)?;
    put("delta_stats.csv".into(), stats_csv(deltas)?)?;
    put("unmatched.csv".into(), unmatched_csv(deltas)?)?;
    let losses: BTreeSet<LossKind> = records.iter().map(|r| r.key.loss).collect();
    for &loss in &losses {
        put(format!("f1_{}.svg", loss.name()), f1_plot(loss, &summary).into_bytes())?;
    }
    let delta_losses: BTreeSet<LossKind> = deltas.cells.iter().map(|c| c.loss).collect();
    for &loss in &delta_losses {
        put(format!("delta_{}.svg", loss.name()), delta_plot(loss, deltas).into_bytes())?;
    }
    Ok(written)
}
