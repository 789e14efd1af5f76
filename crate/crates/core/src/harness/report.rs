use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::parse_config;
use super::train::EpochLog;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupBy {
    /// A single series over every run.
    All,
    Architecture,
    Mechanism,
    DatasetType,
    Split,
}

impl GroupBy {
    pub const ALL: [GroupBy; 5] = [
        GroupBy::All,
        GroupBy::Architecture,
        GroupBy::Mechanism,
        GroupBy::DatasetType,
        GroupBy::Split,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupBy::All => "all",
            GroupBy::Architecture => "architecture",
            GroupBy::Mechanism => "mechanism",
            GroupBy::DatasetType => "dataset_type",
            GroupBy::Split => "split",
        }
    }

    fn key(self, config: &str) -> Result<String> {
        if self == GroupBy::All {
            return Ok("all".into());
        }
        let c = parse_config(config)?;
        Ok(match self {
            GroupBy::All => unreachable!(),
            GroupBy::Architecture => c.architecture.to_string(),
            GroupBy::Mechanism => c.mechanism.to_string(),
            GroupBy::DatasetType => c.dataset_type.to_string(),
            GroupBy::Split => c.split.to_string(),
        })
    }
}

impl FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupBy::ALL.into_iter().find(|g| g.as_str() == s).ok_or_else(|| Error::Config {
            field: "group_by",
            token: s.to_string(),
        })
    }
}

/// Mean and min–max band of one quantity at one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Band {
    fn of(values: &[f64]) -> Band {
        let n = values.len() as f64;
        Band {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochPoint {
    pub epoch: usize,
    pub runs: usize,
    pub f1: Band,
    pub train_loss: Band,
    pub test_loss: Band,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub group: String,
    pub points: Vec<EpochPoint>,
}

/// Groups logs by one configuration field and aggregates each epoch.
/// Groups appear in order of first occurrence.
pub fn progression(logs: &[EpochLog], group_by: GroupBy) -> Result<Vec<Series>> {
    if logs.is_empty() {
        return Err(Error::InvalidArgument("no epoch logs to aggregate".into()));
    }
    let mut groups: Vec<(String, Vec<&EpochLog>)> = Vec::new();
    for l in logs {
        let k = group_by.key(&l.config)?;
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(l),
            None => groups.push((k, vec![l])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(group, rows)| {
            let last = rows.iter().map(|r| r.epoch).max().unwrap_or(0);
            let points = (0..=last)
                .filter_map(|e| {
                    let at: Vec<&&EpochLog> = rows.iter().filter(|r| r.epoch == e).collect();
                    if at.is_empty() {
                        return None;
                    }
                    let pick = |f: fn(&EpochLog) -> f64| Band::of(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
                    Some(EpochPoint {
                        epoch: e,
                        runs: at.len(),
                        f1: pick(|r| r.report.mean_f1),
                        train_loss: pick(|r| r.train_loss),
                        test_loss: pick(|r| r.test_loss),
                    })
                })
                .collect();
            Series { group, points }
        })
        .collect())
}

/// Writes `progression_<group>.csv` and `.svg` under `out_dir`.
pub fn emit_progression(logs: &[EpochLog], group_by: GroupBy, out_dir: &Path) -> Result<(Vec<Series>, PathBuf, PathBuf)> {
    let series = progression(logs, group_by)?;
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("progression_{}.csv", group_by.as_str()));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "group",
        "epoch",
        "runs",
        "f1_mean",
        "f1_min",
        "f1_max",
        "train_loss_mean",
        "train_loss_min",
        "train_loss_max",
        "test_loss_mean",
        "test_loss_min",
        "test_loss_max",
    ])?;
    for s in &series {
        for p in &s.points {
            let mut rec = vec![s.group.clone(), p.epoch.to_string(), p.runs.to_string()];
            for b in [p.f1, p.train_loss, p.test_loss] {
                rec.extend([b.mean, b.min, b.max].map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let svg_path = out_dir.join(format!("progression_{}.svg", group_by.as_str()));
    std::fs::write(&svg_path, render_svg(&series, group_by))?;
    Ok((series, csv_path, svg_path))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn panel(out: &mut String, series: &[Series], x0: f64, title: &str, value: fn(&EpochPoint) -> Band, fixed: Option<(f64, f64)>) {
    let (w, h, pad) = (420.0, 300.0, 45.0);
    let epochs = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.epoch))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let (lo, hi) = fixed.unwrap_or_else(|| {
        let all = series.iter().flat_map(|s| s.points.iter().map(value));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for b in all {
            lo = lo.min(b.min);
            hi = hi.max(b.max);
        }
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        (lo.min(0.0), hi)
    });
    let px = |e: f64| x0 + pad + e / epochs * (w - 2.0 * pad);
    let py = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#,
        x0 + w / 2.0
    );
    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{pad}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        x0 + pad,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{v:.2}</text>"#,
            x0 + pad - 4.0,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">epoch</text>"#,
        x0 + w / 2.0,
        h - 10.0
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.epoch as f64), py(value(p).max)))
            .collect();
        let lower: Vec<String> = s
            .points
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", px(p.epoch as f64), py(value(p).min)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{colour}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let mean: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.epoch as f64), py(value(p).mean)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            mean.join(" ")
        );
    }
}

fn render_svg(series: &[Series], group_by: GroupBy) -> String {
    let mut out = String::new();
    let height = 330 + 18 * series.len();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="860" height="{height}" font-family="sans-serif">"#
    );
    panel(
        &mut out,
        series,
        0.0,
        &format!("mean F1 by {}", group_by.as_str()),
        |p| p.f1,
        Some((0.0, 1.0)),
    );
    panel(&mut out, series, 430.0, "test loss", |p| p.test_loss, None);
    for (i, s) in series.iter().enumerate() {
        let y = 320 + 18 * i;
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="50" y="{}" width="12" height="12" fill="{colour}"/>"#, y);
        let _ = writeln!(out, r#"<text x="68" y="{}" font-size="12">{}</text>"#, y + 10, s.group);
    }
    out.push_str("</svg>\n");
    out
}
