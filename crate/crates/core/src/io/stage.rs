//! Stage summaries written next to the reconstruction, georegistration and heatmap outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_heatmap_csv, read_json, write_json, write_text, FORMAT_VERSION};
use crate::geodesy::{GeodeticCoord, SimilarityTransform};
use crate::optim::{BaConfig, PanoMode};
use crate::sfm::ReconstructionSummary;
use crate::traffic::Heatmap;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub format_version: u32,
    pub total_views: usize,
    pub registered_views: usize,
    pub unregistered: Vec<String>,
    pub points: usize,
    pub observations: usize,
    pub rms_reprojection_px: f64,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub bootstrap_pair: (String, String),
    pub global_ba_runs: usize,
    pub sibling_registrations: usize,
    /// `soft`, `hard` or `disabled`.
    pub pano_constraint: String,
    pub pano_weight: Option<f64>,
    pub fix_intrinsics: bool,
}

impl ReconstructionReport {
    pub fn new(s: &ReconstructionSummary, ba: &BaConfig) -> Self {
        let mode = match ba.pano_mode {
            PanoMode::Soft => "soft",
            PanoMode::Hard => "hard",
            PanoMode::Off => "disabled",
        };
        ReconstructionReport {
            format_version: FORMAT_VERSION,
            total_views: s.total_views,
            registered_views: s.registered_views,
            unregistered: s.unregistered.clone(),
            points: s.points,
            observations: s.observations,
            rms_reprojection_px: s.rms_reprojection_px,
            initial_cost: s.final_ba.as_ref().map(|r| r.initial_cost),
            final_cost: s.final_ba.as_ref().map(|r| r.final_cost),
            bootstrap_pair: s.bootstrap_pair.clone(),
            global_ba_runs: s.global_ba_runs,
            sibling_registrations: s.sibling_registrations,
            pano_constraint: mode.to_string(),
            pano_weight: (ba.pano_mode == PanoMode::Soft).then_some(ba.pano_weight),
            fix_intrinsics: ba.fix_intrinsics,
        }
    }

    pub fn text(&self) -> String {
        let cost = |c: Option<f64>| c.map_or("-".to_string(), |v| format!("{v:.6e}"));
        let constraint = match self.pano_weight {
            Some(w) => format!("{} (weight {w})", self.pano_constraint),
            None => self.pano_constraint.clone(),
        };
        format!(
            "registered views: {}/{}\npoints: {}\nobservations: {}\nrms reprojection (px): {:.6}\n\
             final cost: {}\ninitial cost: {}\nbootstrap pair: {} {}\nglobal adjustments: {}\n\
             panoramic constraint: {}\nintrinsics: {}\n",
            self.registered_views,
            self.total_views,
            self.points,
            self.observations,
            self.rms_reprojection_px,
            cost(self.final_cost),
            cost(self.initial_cost),
            self.bootstrap_pair.0,
            self.bootstrap_pair.1,
            self.global_ba_runs,
            constraint,
            if self.fix_intrinsics { "fixed" } else { "refined" },
        )
    }
}

/// Similarity taking the up-to-scale frame into ENU, with per-panorama GPS residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoregistrationFile {
    pub format_version: u32,
    pub enu_origin: GeodeticCoord,
    pub scale: f64,
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub residuals_m: BTreeMap<String, f64>,
}

impl GeoregistrationFile {
    pub fn new(t: &SimilarityTransform, enu_origin: GeodeticCoord, residuals_m: BTreeMap<String, f64>) -> Self {
        GeoregistrationFile {
            format_version: FORMAT_VERSION,
            enu_origin,
            scale: t.scale,
            rotation_wxyz: t.rotation.to_quaternion_wxyz(),
            translation: [t.translation.x, t.translation.y, t.translation.z],
            residuals_m,
        }
    }

    pub fn rms_residual_m(&self) -> f64 {
        let n = self.residuals_m.len().max(1) as f64;
        (self.residuals_m.values().map(|r| r * r).sum::<f64>() / n).sqrt()
    }
}

pub fn write_georegistration(path: &Path, g: &GeoregistrationFile) -> Result<()> {
    write_json(path, g)
}

pub fn read_georegistration(path: &Path) -> Result<GeoregistrationFile> {
    read_json(path)
}

#[derive(Serialize)]
struct HeatmapFile<'a> {
    format_version: u32,
    heatmap: &'a Heatmap,
}

/// Writes `<base>.json` and the long-format `<base>.csv`.
pub fn write_heatmap(base: &Path, h: &Heatmap) -> Result<()> {
    write_json(
        &base.with_extension("json"),
        &HeatmapFile {
            format_version: FORMAT_VERSION,
            heatmap: h,
        },
    )?;
    write_text(&base.with_extension("csv"), &format_heatmap_csv(h))
}
