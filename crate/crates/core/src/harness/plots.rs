//! Loss and mixture plots for finished runs.
//!
//! Simulated losses exist only at round boundaries, so every series has one
//! point per boundary: round 0 is the base model, round `t` the losses after
//! training round `t`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::domain::RunLog;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlotFiles {
    /// One CSV per (run, evaluation skill).
    pub series: Vec<PathBuf>,
    /// One loss chart per evaluation skill, all runs overlaid.
    pub loss_charts: Vec<PathBuf>,
    /// One weight-per-skill chart per run.
    pub mixture_charts: Vec<PathBuf>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Distinct file-safe labels, suffixing repeats.
pub(crate) fn unique_labels(labels: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    labels
        .into_iter()
        .map(|l| {
            let base = slug(&l);
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}-{n}")
            }
        })
        .collect()
}

/// (round, samples seen, loss) for one evaluation skill.
fn loss_series(log: &RunLog, skill: &str) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(log.rounds.len() + 1);
    let mut seen = 0;
    if let Some(first) = log.rounds.first() {
        out.push((0, 0, first.losses_before[skill]));
    }
    for r in &log.rounds {
        seen += r.allocation.values().sum::<usize>();
        out.push((r.round, seen, r.losses_after[skill]));
    }
    out
}

struct Line {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

fn svg_chart(title: &str, x_label: &str, y_label: &str, lines: &[Line]) -> String {
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let xs = lines.iter().flat_map(|l| l.points.iter().map(|p| p.0));
    let ys = lines.iter().flat_map(|l| l.points.iter().map(|p| p.1));
    let x_max = xs.fold(0.0f64, f64::max).max(1.0);
    let y_max = ys.fold(0.0f64, f64::max);
    let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / y_max * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, "<desc>Points are round boundaries; round 0 is before any training.</desc>");
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            pad - 6.0,
            sy(v) + 4.0
        );
        let u = x_max * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{u:.0}</text>"#,
            sx(u),
            h - pad + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    for (n, line) in lines.iter().enumerate() {
        let pts: Vec<String> = line
            .points
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            line.color,
            pts.join(" ")
        );
        let ly = pad + 16.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{}">{}</text>"#,
            w - pad - 120.0,
            line.color,
            escape(&line.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: PathBuf, body: &str) -> Result<PathBuf> {
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn export_plots(logs: &[RunLog], out_dir: &Path) -> Result<PlotFiles> {
    let logs: Vec<RunLog> = logs.iter().filter(|l| !l.rounds.is_empty()).cloned().collect();
    if logs.is_empty() {
        return Err(Error::NoData);
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels = unique_labels(logs.iter().map(|l| l.config.label()));
    let skills: Vec<String> = logs[0].rounds[0].losses_before.keys().cloned().collect();
    let mut files = PlotFiles::default();

    for (log, label) in logs.iter().zip(&labels) {
        for skill in &skills {
            if !log.rounds[0].losses_before.contains_key(skill) {
                continue;
            }
            let mut body = String::from("round,samples_seen,loss\n");
            for (round, seen, loss) in loss_series(log, skill) {
                let _ = writeln!(body, "{round},{seen},{loss}");
            }
            files
                .series
                .push(write(out_dir.join(format!("series_{label}_{}.csv", slug(skill))), &body)?);
        }
    }

    for skill in &skills {
        let lines: Vec<Line> = logs
            .iter()
            .zip(&labels)
            .enumerate()
            .filter(|(_, (log, _))| log.rounds[0].losses_before.contains_key(skill))
            .map(|(n, (log, label))| Line {
                label: label.clone(),
                color: PALETTE[n % PALETTE.len()],
                points: loss_series(log, skill)
                    .into_iter()
                    .map(|(_, seen, loss)| (seen as f64, loss))
                    .collect(),
            })
            .collect();
        let svg = svg_chart(&format!("Validation loss: {skill}"), "samples seen", "loss", &lines);
        files
            .loss_charts
            .push(write(out_dir.join(format!("loss_{}.svg", slug(skill))), &svg)?);
    }

    for (log, label) in logs.iter().zip(&labels) {
        let train: Vec<String> = log.rounds[0].allocation.keys().cloned().collect();
        let lines: Vec<Line> = train
            .iter()
            .enumerate()
            .map(|(i, name)| Line {
                label: name.clone(),
                color: PALETTE[i % PALETTE.len()],
                points: log.rounds.iter().map(|r| (r.round as f64, r.mixture[i])).collect(),
            })
            .collect();
        let svg = svg_chart(&format!("Weight per skill: {label}"), "round", "weight", &lines);
        files
            .mixture_charts
            .push(write(out_dir.join(format!("mixture_{label}.svg")), &svg)?);
    }
    Ok(files)
}
