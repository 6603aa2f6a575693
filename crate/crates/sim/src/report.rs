//! Static SVG plots of a benchmark summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bench::read_summary;
use crate::error::{Result, SimError};

struct Row {
    name: String,
    length: f64,
    success: f64,
}

fn bars(out: &mut String, rows: &[Row], x0: f64, title: &str, value: impl Fn(&Row) -> f64, max: f64, fmt: impl Fn(f64) -> String) {
    let (w, h, top) = (380.0, 240.0, 40.0);
    let _ = writeln!(out, r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{title}</text>"#, x0 + w / 2.0);
    let bw = w / rows.len().max(1) as f64;
    for (i, r) in rows.iter().enumerate() {
        let v = value(r);
        let bh = if max > 0.0 { h * v / max } else { 0.0 };
        let x = x0 + i as f64 * bw;
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4a7fb0"/>"##,
            x + 4.0,
            top + h - bh,
            bw - 8.0,
            bh
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#, x + bw / 2.0, top + h - bh - 3.0, fmt(v));
        let _ = writeln!(
            out,
            r#"<text transform="translate({:.1},{:.1}) rotate(40)" font-size="10">{}</text>"#,
            x + bw / 2.0,
            top + h + 12.0,
            r.name
        );
    }
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + h, x0 + w, top + h);
}

pub fn render_svg(summary: &Path) -> Result<String> {
    let recs = read_summary(summary)?;
    let mut rows = Vec::new();
    for r in &recs {
        let get = |i: usize| r.get(i).ok_or_else(|| SimError::Config(format!("summary row has no column {i}")));
        let num = |i: usize| get(i)?.parse::<f64>().map_err(|e| SimError::Config(format!("bad number in summary: {e}")));
        rows.push(Row { name: get(0)?.to_string(), length: num(6)?, success: num(9)? });
    }
    let max_len = rows.iter().map(|r| r.length).fold(0.0, f64::max);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="840" height="420" font-family="sans-serif">"#);
    bars(&mut out, &rows, 20.0, "Success rate (%)", |r| 100.0 * r.success, 100.0, |v| format!("{v:.0}"));
    bars(&mut out, &rows, 440.0, "Mean path length (m)", |r| r.length, max_len, |v| format!("{v:.1}"));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Write `report.svg` next to the summary in `dir`.
pub fn write_report(dir: &Path) -> Result<PathBuf> {
    let svg = render_svg(&dir.join("summary.csv"))?;
    let path = dir.join("report.svg");
    std::fs::write(&path, svg)?;
    Ok(path)
}
