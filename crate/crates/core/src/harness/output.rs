use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::config::{net_config_from_text, net_config_to_text};
use super::experiments::{AblationTable, SweepTable};
use super::train::CurveRow;
use super::{HarnessError, Result};
use crate::network::GctNet;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
/// Network hyperparameters stored next to a checkpoint.
pub const CONFIG_FILE: &str = "model.cfg";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn curve_csv(curve: &[CurveRow]) -> Result<String> {
    csv_string(curve)
}

#[derive(Serialize)]
struct SeedLine<'a> {
    variant: &'a str,
    seed: u64,
    map5: f64,
    map20: f64,
    f_score: f64,
}

pub fn ablation_csv(table: &AblationTable) -> Result<String> {
    let mut lines = Vec::new();
    for row in &table.rows {
        let r = &row.results;
        for i in 0..r.seeds.len() {
            lines.push(SeedLine {
                variant: &row.label,
                seed: r.seeds[i],
                map5: r.map5[i],
                map20: r.map20[i],
                f_score: r.f_score[i],
            });
        }
    }
    csv_string(&lines)
}

#[derive(Serialize)]
struct SweepLine {
    sr: f64,
    seed: String,
    map5: f64,
    map20: f64,
    f_score: f64,
}

/// One line per (rate, seed) plus a `median` line per rate, rates in input
/// order, preceded by a comment echoing the rates.
pub fn sweep_csv(table: &SweepTable) -> Result<String> {
    let mut lines = Vec::new();
    for row in &table.rows {
        let r = &row.results;
        for i in 0..r.seeds.len() {
            lines.push(SweepLine {
                sr: row.sr,
                seed: r.seeds[i].to_string(),
                map5: r.map5[i],
                map20: r.map20[i],
                f_score: r.f_score[i],
            });
        }
        lines.push(SweepLine {
            sr: row.sr,
            seed: "median".into(),
            map5: r.median_map5,
            map20: r.median_map20,
            f_score: r.median_f_score,
        });
    }
    let rates: Vec<String> = table.rates.iter().map(f64::to_string).collect();
    Ok(format!("# rates: {}\n{}", rates.join(","), csv_string(&lines)?))
}

/// Line chart of median mAP5 and mAP20 against the sampling rate.
pub fn sweep_svg(table: &SweepTable) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = table.rows.iter().map(|r| r.sr).collect();
    let (x_lo, x_hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let px = |x: f64| pad + (x - x_lo) / span * (w - 2.0 * pad);
    let py = |y: f64| h - pad - y.clamp(0.0, 1.0) * (h - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = pad,
        bottom = h - pad,
        right = w - pad
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{tick:.2}</text>"#,
            pad - 6.0,
            py(tick) + 4.0
        );
    }
    for &x in &xs {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#,
            px(x),
            h - pad + 16.0
        );
    }
    let series: [(&str, &str, Vec<f64>); 2] = [
        ("mAP5", "#1f77b4", table.rows.iter().map(|r| r.results.median_map5).collect()),
        ("mAP20", "#d62728", table.rows.iter().map(|r| r.results.median_map20).collect()),
    ];
    for (i, (name, color, ys)) in series.iter().enumerate() {
        let points: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        for p in &points {
            let (cx, cy) = p.split_once(',').expect("formatted point");
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = pad + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#,
            w - pad - 40.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">sampling rate sr</text>"#,
        w / 2.0,
        h - 8.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Writes the checkpoint and the network hyperparameters into `dir`.
pub fn save_model(net: &GctNet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    net.store.save(&dir.join(CHECKPOINT_FILE))?;
    std::fs::write(dir.join(CONFIG_FILE), net_config_to_text(&net.config))?;
    Ok(())
}

/// Loads a model saved by [`save_model`]. `path` is the checkpoint file; the
/// hyperparameters are read from the sibling config file.
pub fn load_model(path: &Path) -> Result<GctNet> {
    let cfg_path = path.with_file_name(CONFIG_FILE);
    let config = net_config_from_text(&std::fs::read_to_string(&cfg_path).map_err(|e| {
        HarnessError::Config(format!("{}: {e}", cfg_path.display()))
    })?)?;
    let mut net = GctNet::new(config, 0)?;
    net.store.load(path)?;
    Ok(net)
}
