//! Report files: `records.csv`, `summary.csv`, `report.json` and one SVG
//! correlation plot per (mode, preprocessing).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sanity_core::metrics::{summarize, CorrelationRecord, Preprocessing, StageSummary};
use sanity_core::randomize::Mode;

use crate::experiment::ReportBundle;
use crate::{HarnessError, Result};

pub const RECORDS_CSV: &str = "records.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_JSON: &str = "report.json";
pub const ERROR_JSON: &str = "error.json";

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    method: String,
    mode: Mode,
    stage_index: i64,
    stage_label: String,
    image_id: usize,
    preprocessing: Preprocessing,
    rho: f64,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    mode: Mode,
    stage_index: i64,
    stage_label: &'a str,
    preprocessing: Preprocessing,
    mean_rho: f64,
    std_rho: f64,
    n_images: usize,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// One row per scored record; degenerate comparisons have no row.
pub fn write_records_csv(path: &Path, records: &[CorrelationRecord]) -> Result<usize> {
    let mut w = csv_writer(path)?;
    let mut n = 0;
    for r in records {
        let Some(rho) = r.rho else { continue };
        w.serialize(RecordRow {
            method: r.method.clone(),
            mode: r.mode,
            stage_index: r.stage_index,
            stage_label: r.stage_label.clone(),
            image_id: r.image_id,
            preprocessing: r.preprocessing,
            rho,
        })?;
        n += 1;
    }
    flush(w, path)?;
    Ok(n)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<CorrelationRecord>> {
    let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    r.deserialize::<RecordRow>()
        .map(|row| {
            let row = row?;
            Ok(CorrelationRecord {
                method: row.method,
                mode: row.mode,
                stage_index: row.stage_index,
                stage_label: row.stage_label,
                image_id: row.image_id,
                preprocessing: row.preprocessing,
                rho: Some(row.rho),
            })
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, summaries: &[StageSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for s in summaries {
        w.serialize(SummaryRow {
            method: &s.method,
            mode: s.mode,
            stage_index: s.stage_index,
            stage_label: &s.stage_label,
            preprocessing: s.preprocessing,
            mean_rho: s.mean_rho,
            std_rho: s.std_rho,
            n_images: s.n_images,
        })?;
    }
    flush(w, path)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Mean-correlation plot for one (mode, preprocessing): stages run left to
/// right from the unmodified model through the output layer toward the
/// input, each method drawn as a polyline over a shaded ±1 std band.
pub fn render_svg(summaries: &[StageSummary], mode: Mode, pre: Preprocessing) -> String {
    let rows: Vec<&StageSummary> = summaries
        .iter()
        .filter(|s| s.mode == mode && s.preprocessing == pre)
        .collect();
    let stages: Vec<(i64, &str)> = {
        let mut seen = BTreeSet::new();
        let mut v: Vec<(i64, &str)> = rows
            .iter()
            .filter(|s| seen.insert(s.stage_index))
            .map(|s| (s.stage_index, s.stage_label.as_str()))
            .collect();
        v.sort_by_key(|s| s.0);
        v
    };
    let mut methods: Vec<&str> = Vec::new();
    for s in &rows {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }

    let (w, h) = (760.0, 460.0);
    let (left, right, top, bottom) = (60.0, 190.0, 40.0, 110.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_of = |i: usize| {
        if stages.len() <= 1 {
            left + pw / 2.0
        } else {
            left + pw * i as f64 / (stages.len() - 1) as f64
        }
    };
    let y_of = |rho: f64| top + ph * (1.0 - rho.clamp(-1.0, 1.0)) / 2.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" font-size="14" text-anchor="middle">{} randomization, {} rank correlation</text>"#,
        left + pw / 2.0,
        mode.name(),
        pre.name()
    );
    // Axes and gridlines.
    let _ = writeln!(
        svg,
        r#"<path d="M{left:.1},{top:.1} V{:.1} H{:.1}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for tick in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            svg,
            r##"<path d="M{left:.1},{y:.1} H{:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick:.1}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">mean rank correlation</text>"#,
        top + ph / 2.0
    );
    for (i, (_, label)) in stages.iter().enumerate() {
        let x = x_of(i);
        let y = top + ph + 12.0;
        let _ = writeln!(
            svg,
            r#"<text transform="translate({x:.1},{y:.1}) rotate(45)">{}</text>"#,
            escape(label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="red" stroke-width="1.5" stroke-dasharray="6,4"/>"#,
        left + pw,
        y = y_of(0.0)
    );

    for (mi, method) in methods.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let pts: Vec<(f64, &StageSummary)> = stages
            .iter()
            .enumerate()
            .filter_map(|(i, (st, _))| {
                rows.iter()
                    .find(|s| s.method == *method && s.stage_index == *st)
                    .map(|s| (x_of(i), *s))
            })
            .collect();
        let mut band = String::new();
        for (x, s) in &pts {
            let _ = write!(band, "{x:.1},{:.1} ", y_of(s.mean_rho + s.std_rho));
        }
        for (x, s) in pts.iter().rev() {
            let _ = write!(band, "{x:.1},{:.1} ", y_of(s.mean_rho - s.std_rho));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = pts
            .iter()
            .map(|(x, s)| format!("{x:.1},{:.1}", y_of(s.mean_rho)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{}</title></polyline>"#,
            line.join(" "),
            escape(method)
        );
        let ly = top + 10.0 + 18.0 * mi as f64;
        let lx = left + pw + 16.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.1}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly + 2.0,
            escape(method)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn plot_file_name(mode: Mode, pre: Preprocessing) -> String {
    format!("plot_{}_{}.svg", mode.name(), pre.name())
}

/// Writes one SVG per (mode, preprocessing) pair present in `summaries`.
pub fn write_plots(dir: &Path, summaries: &[StageSummary]) -> Result<Vec<PathBuf>> {
    let pairs: BTreeSet<(Mode, Preprocessing)> = summaries.iter().map(|s| (s.mode, s.preprocessing)).collect();
    let mut out = Vec::new();
    for (mode, pre) in pairs {
        let path = dir.join(plot_file_name(mode, pre));
        fs::write(&path, render_svg(summaries, mode, pre)).map_err(|e| HarnessError::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

/// Writes every report file into `out_dir`; returns the paths written.
pub fn emit_report(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();

    let records = out_dir.join(RECORDS_CSV);
    write_records_csv(&records, &bundle.records)?;
    written.push(records);

    let summary = out_dir.join(SUMMARY_CSV);
    write_summary_csv(&summary, &bundle.summaries)?;
    written.push(summary);

    let json = out_dir.join(REPORT_JSON);
    let text = serde_json::to_string_pretty(bundle)?;
    fs::write(&json, text + "\n").map_err(|e| HarnessError::io(&json, e))?;
    written.push(json);

    written.extend(write_plots(out_dir, &bundle.summaries)?);
    Ok(written)
}

/// Records why a run stopped, next to whatever partial report was flushed.
pub fn write_error_manifest(out_dir: &Path, error: &HarnessError) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let path = out_dir.join(ERROR_JSON);
    let v = serde_json::json!({
        "error": error.to_string(),
        "exit_code": error.exit_code(),
    });
    fs::write(&path, serde_json::to_string_pretty(&v)? + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Rebuilds `summary.csv` and the plots from `<dir>/records.csv`.
pub fn regenerate(dir: &Path) -> Result<Vec<PathBuf>> {
    let records = read_records_csv(&dir.join(RECORDS_CSV))?;
    let (summaries, _) = summarize(&records);
    let summary = dir.join(SUMMARY_CSV);
    write_summary_csv(&summary, &summaries)?;
    let mut out = vec![summary];
    out.extend(write_plots(dir, &summaries)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, stage: i64, image: usize, rho: Option<f64>) -> CorrelationRecord {
        CorrelationRecord {
            method: method.into(),
            mode: Mode::Cascading,
            stage_index: stage,
            stage_label: if stage < 0 {
                "original".into()
            } else {
                format!("l{stage}")
            },
            image_id: image,
            preprocessing: Preprocessing::Absolute,
            rho,
        }
    }

    #[test]
    fn records_roundtrip_without_degenerates() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            rec("gradient", -1, 0, Some(1.0)),
            rec("gradient", 0, 0, Some(0.123456789012345)),
            rec("gradient", 0, 1, None),
        ];
        let p = dir.path().join(RECORDS_CSV);
        assert_eq!(write_records_csv(&p, &recs).unwrap(), 2);
        let back = read_records_csv(&p).unwrap();
        assert_eq!(back, recs[..2].to_vec());
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("method,mode,stage_index,stage_label,image_id,preprocessing,rho\n"));
    }

    #[test]
    fn one_polyline_per_method() {
        let recs: Vec<_> = ["gradient", "guided_backprop", "smooth_grad"]
            .iter()
            .flat_map(|m| (-1..3).map(move |s| rec(m, s, 0, Some(0.5))))
            .collect();
        let (sums, _) = summarize(&recs);
        let svg = render_svg(&sums, Mode::Cascading, Preprocessing::Absolute);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("<polygon").count(), 3);
        assert!(svg.contains("stroke-dasharray"));
        let pos = |label: &str| svg.find(&format!(">{label}</text>")).unwrap();
        assert!(pos("original") < pos("l0") && pos("l0") < pos("l2"));
    }
}
