//! Reports: JSON documents, aligned text tables, and plot-data CSVs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, strip_text_version, version_line, write_json, write_text, TrapDefinition};
use crate::geometry::Vec2;
use crate::groundplane::DistanceErrorStats;
use crate::synth::EvaluationReport;
use crate::traffic::Heatmap;
use crate::{Error, Result};

/// Renders rows as left-aligned first column and right-aligned numeric columns.
pub fn aligned_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate().take(n) {
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = width[i]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = width[i]);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (n - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn pct(x: f64) -> String {
    format!("{x:.2}")
}

/// `Camera | Max Error (%) | Median Error (%) | RMSE (%)`.
pub fn distance_table(rows: &[(String, &DistanceErrorStats)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, s)| vec![name.clone(), pct(s.max_pct), pct(s.median_pct), pct(s.rmse_pct)])
        .collect();
    aligned_table(&["Camera", "Max Error (%)", "Median Error (%)", "RMSE (%)"], &body)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkMeasurement {
    pub index: usize,
    pub pixel_a: Vec2,
    pub pixel_b: Vec2,
    pub estimated_m: Option<f64>,
    pub gt_distance_m: Option<f64>,
    pub error_pct: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub format_version: u32,
    pub camera_id: String,
    pub measurements: Vec<MarkMeasurement>,
    pub stats: Option<DistanceErrorStats>,
}

impl DistanceReport {
    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .measurements
            .iter()
            .map(|m| {
                let f = |x: Option<f64>, d: usize| x.map_or("-".to_string(), |v| format!("{v:.d$}"));
                vec![
                    m.index.to_string(),
                    f(m.estimated_m, 3),
                    f(m.gt_distance_m, 3),
                    f(m.error_pct, 2),
                    m.failure.clone().unwrap_or_default(),
                ]
            })
            .collect();
        let mut s = aligned_table(&["Mark", "Estimated (m)", "Ground truth (m)", "Error (%)", "Failure"], &rows);
        if let Some(st) = &self.stats {
            s.push('\n');
            s.push_str(&distance_table(&[(self.camera_id.clone(), st)]));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedRecord {
    pub track_id: String,
    pub crossing_time_s: f64,
    pub speed_mps: f64,
    pub speed_kmh: f64,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub format_version: u32,
    pub camera_id: String,
    pub trap: TrapDefinition,
    pub window: usize,
    pub crossings: Vec<SpeedRecord>,
    pub dropped_samples: usize,
    pub unusable_tracks: Vec<String>,
}

impl SpeedReport {
    pub fn table(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .crossings
            .iter()
            .map(|c| {
                vec![
                    c.track_id.clone(),
                    format!("{:.3}", c.crossing_time_s),
                    format!("{:.1}", c.speed_mps),
                    format!("{:.1}", c.speed_kmh),
                ]
            })
            .collect();
        aligned_table(&["Track", "Crossing (s)", "Speed (m/s)", "Speed (km/h)"], &rows)
    }
}

impl EvaluationReport {
    /// Percent errors per intrinsic, pose errors, and distance statistics.
    pub fn table(&self, camera_id: &str) -> String {
        let mut rows: Vec<Vec<String>> = self
            .intrinsics_pct
            .iter()
            .map(|(n, v)| vec![format!("{n} error (%)"), pct(*v)])
            .collect();
        rows.push(vec!["rotation error (deg)".into(), format!("{:.4}", self.rotation_deg)]);
        rows.push(vec!["center error (m)".into(), format!("{:.4}", self.center_m)]);
        for s in &self.speeds {
            rows.push(vec![format!("speed {} error (%)", s.track_id), pct(s.error_pct)]);
        }
        let mut out = aligned_table(&["Quantity", "Value"], &rows);
        if let Some(d) = &self.distances {
            out.push('\n');
            out.push_str(&distance_table(&[(camera_id.to_string(), d)]));
        }
        out
    }
}

/// Writes `<base>.json` and `<base>.txt`.
pub fn write_report<T: Serialize>(base: &Path, json: &T, table: &str) -> Result<()> {
    write_json(&base.with_extension("json"), json)?;
    write_text(&base.with_extension("txt"), table)
}

/// One row of the panorama-count sweep, comparing runs with and without the panoramic constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_panos: usize,
    pub seeds: usize,
    pub with_mean_pct: f64,
    pub with_rmse_pct: f64,
    pub with_focal_pct: f64,
    pub with_failures: usize,
    pub without_mean_pct: f64,
    pub without_rmse_pct: f64,
    pub without_focal_pct: f64,
    pub without_failures: usize,
}

/// Distance and focal errors of one pipeline run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialScore {
    pub mean_pct: f64,
    pub rmse_pct: f64,
    pub focal_pct: f64,
}

impl TrialScore {
    /// `None` when no mark could be measured.
    pub fn from_report(r: &EvaluationReport) -> Option<Self> {
        let d = r.distances.as_ref()?;
        let n = d.errors_pct.len();
        (n > 0).then(|| TrialScore {
            mean_pct: d.errors_pct.iter().sum::<f64>() / n as f64,
            rmse_pct: d.rmse_pct,
            focal_pct: r.max_focal_pct(),
        })
    }
}

fn mean_scores(trials: &[Option<TrialScore>]) -> (f64, f64, f64, usize) {
    let ok: Vec<&TrialScore> = trials.iter().flatten().collect();
    let failures = trials.len() - ok.len();
    if ok.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, failures);
    }
    let m = |f: fn(&TrialScore) -> f64| ok.iter().map(|t| f(t)).sum::<f64>() / ok.len() as f64;
    (m(|t| t.mean_pct), m(|t| t.rmse_pct), m(|t| t.focal_pct), failures)
}

impl SweepRow {
    /// Averages over seeds; failed runs are counted and left out of the means.
    pub fn from_trials(n_panos: usize, with: &[Option<TrialScore>], without: &[Option<TrialScore>]) -> Self {
        let (wm, wr, wf, wfail) = mean_scores(with);
        let (om, or, of, ofail) = mean_scores(without);
        SweepRow {
            n_panos,
            seeds: with.len().max(without.len()),
            with_mean_pct: wm,
            with_rmse_pct: wr,
            with_focal_pct: wf,
            with_failures: wfail,
            without_mean_pct: om,
            without_rmse_pct: or,
            without_focal_pct: of,
            without_failures: ofail,
        }
    }
}

/// Sweep rows as an aligned table, one line per panorama count and condition.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| {
            [
                ("with", r.with_mean_pct, r.with_rmse_pct, r.with_focal_pct, r.with_failures),
                ("without", r.without_mean_pct, r.without_rmse_pct, r.without_focal_pct, r.without_failures),
            ]
            .map(|(c, m, e, f, x)| vec![r.n_panos.to_string(), c.to_string(), pct(m), pct(e), pct(f), format!("{x}/{}", r.seeds)])
        })
        .collect();
    aligned_table(
        &["Panoramas", "Constraint", "Mean Error (%)", "RMSE (%)", "Focal Error (%)", "Failures"],
        &body,
    )
}

pub fn format_sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::parse("sweep.csv", e.to_string());
    if rows.is_empty() {
        w.write_record([
            "n_panos",
            "seeds",
            "with_mean_pct",
            "with_rmse_pct",
            "with_focal_pct",
            "with_failures",
            "without_mean_pct",
            "without_rmse_pct",
            "without_focal_pct",
            "without_failures",
        ])
        .map_err(err)?;
    }
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("sweep.csv", e.to_string()))?;
    Ok(version_line() + &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_text(path, &format_sweep_csv(rows)?)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = read_text(path)?;
    let (body, _) = strip_text_version(path, &text)?;
    csv::Reader::from_reader(body.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}

/// Long-format heatmap cells: `row,col,x_center,y_center,count,normalized`.
pub fn format_heatmap_csv(h: &Heatmap) -> String {
    let mut s = version_line();
    s.push_str("row,col,x_center,y_center,count,normalized\n");
    let g = &h.grid;
    for (r, (counts, norm)) in h.counts.iter().zip(&h.normalized).enumerate() {
        for (c, (n, v)) in counts.iter().zip(norm).enumerate() {
            let x = g.origin.x + (c as f64 + 0.5) * g.cell_size;
            let y = g.origin.y + (r as f64 + 0.5) * g.cell_size;
            let _ = writeln!(s, "{r},{c},{x},{y},{n},{v}");
        }
    }
    s
}
