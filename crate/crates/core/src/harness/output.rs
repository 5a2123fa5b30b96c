use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::run::TrajectoryRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,train_loss,test_error,mi_nats,mi_bits,wall_ms";

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e)),
        _ => Ok(()),
    }
}

/// Formats a float so that parsing it back gives the same bits.
fn lossless(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

pub fn csv_string(records: &[TrajectoryRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            lossless(r.train_loss),
            lossless(r.test_error),
            lossless(r.mi_nats),
            lossless(r.mi_bits),
            r.wall_ms
        )
        .expect("writing to a String");
    }
    out
}

pub fn emit_csv(records: &[TrajectoryRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Domain("refusing to write an empty trajectory".into()));
    }
    create_parent(path)?;
    fs::write(path, csv_string(records)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_csv(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header.join(",")
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Information-plane scatter: MI (bits) on x, test error on y, one marker
/// per finite record, one color per run and an arrow from the first to the
/// last epoch of each run.
pub fn svg_infoplane(runs: &[(String, Vec<TrajectoryRecord>)]) -> Result<String> {
    let points: Vec<(f64, f64)> = runs
        .iter()
        .flat_map(|(_, rs)| rs.iter())
        .filter(|r| r.mi_bits.is_finite() && r.test_error.is_finite())
        .map(|r| (r.mi_bits, r.test_error))
        .collect();
    if points.is_empty() {
        return Err(Error::Domain("no finite records to plot".into()));
    }
    let (w, h, margin) = (720.0, 520.0, 60.0);
    let span = |vals: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = span(&mut points.iter().map(|p| p.0));
    let (y0, y1) = span(&mut points.iter().map(|p| p.1));
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 1.5 * margin);
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 1.5 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<defs><marker id="head" markerWidth="8" markerHeight="8" refX="6" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (left, bottom, right, top) = (margin, h - margin, w - margin / 2.0, margin / 2.0);
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}"/></g>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">mutual information (bits)</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">test error</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (label, x, y) in [
        (format!("{x0:.3}"), left, bottom + 18.0),
        (format!("{x1:.3}"), right, bottom + 18.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" text-anchor="middle" font-size="11">{label}</text>"#);
    }
    for (label, y) in [(format!("{y0:.3}"), bottom), (format!("{y1:.3}"), top)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{label}</text>"#,
            left - 5.0
        );
    }

    for (i, (name, records)) in runs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<&TrajectoryRecord> = records
            .iter()
            .filter(|r| r.mi_bits.is_finite() && r.test_error.is_finite())
            .collect();
        let _ = writeln!(svg, r#"<g class="run" fill="{color}" stroke="{color}"><title>{}</title>"#, escape(name));
        for r in &finite {
            let _ = writeln!(
                svg,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="2.5" stroke="none"><title>epoch {}</title></circle>"#,
                sx(r.mi_bits),
                sy(r.test_error),
                r.epoch
            );
        }
        if let (Some(a), Some(b)) = (finite.first(), finite.last()) {
            if finite.len() > 1 {
                let _ = writeln!(
                    svg,
                    r#"<line class="direction" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke-width="1.5" stroke-opacity="0.6" marker-end="url(#head)"/>"#,
                    sx(a.mi_bits),
                    sy(a.test_error),
                    sx(b.mi_bits),
                    sy(b.test_error)
                );
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" stroke="none">{}</text></g>"#,
            w - 1.4 * margin - 120.0,
            top + 14.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_svg_infoplane(runs: &[(String, Vec<TrajectoryRecord>)], path: &Path) -> Result<()> {
    let svg = svg_infoplane(runs)?;
    create_parent(path)?;
    fs::write(path, svg).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
