//! End-to-end run over a rendered dataset: reconstruct, georegister, fit the road, localize, score.

use std::collections::BTreeMap;

use super::{evaluate, EvaluationReport, GroundTruthBundle, RenderedDataset};
use crate::geodesy::{centroid_origin, georegister_with, SimilarityTransform};
use crate::groundplane::{fit_plane_ransac, PlaneFitOptions, PlaneModel};
use crate::optim::PanoMode;
use crate::localize::{lift_matches, localize_query, LocalizationResult, LocalizeOptions, QueryMatches};
use crate::sfm::{reconstruct, ReconstructOptions, Reconstruction, ReconstructionSummary};
use crate::Result;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineOptions {
    pub reconstruct: ReconstructOptions,
    pub localize: LocalizeOptions,
    pub plane: PlaneFitOptions,
    /// Inlier threshold for robust georegistration; plain least squares when unset.
    pub georegister_threshold_m: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub recon: Reconstruction,
    pub summary: ReconstructionSummary,
    pub transform: SimilarityTransform,
    pub plane: PlaneModel,
    pub plane_inliers: usize,
    pub query_matches: QueryMatches,
    pub localization: LocalizationResult,
    pub report: EvaluationReport,
}

pub fn run_pipeline(
    bundle: &GroundTruthBundle,
    rendered: &RenderedDataset,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let mut ropts = opts.reconstruct.clone();
    ropts.road_labels = rendered.road_labels.clone();
    let (recon, summary) = reconstruct(&rendered.panoramas, &bundle.spec.sampling, &rendered.matches, &ropts)?;
    let tags: BTreeMap<String, _> = rendered
        .panoramas
        .iter()
        .map(|p| (p.pano_id.clone(), p.geodetic))
        .collect();
    let origin = centroid_origin(tags.values())?;
    let (recon, transform) = georegister_with(&recon, &tags, &origin, opts.georegister_threshold_m)?;

    let (points, labels): (Vec<_>, Vec<_>) = recon.points.values().map(|p| (p.xyz, p.road_mark)).unzip();
    let (plane, mask) = fit_plane_ransac(&points, Some(&labels), &opts.plane)?;

    let query_matches = lift_matches(&recon, &rendered.query_matches)?;
    let localization = localize_query(&query_matches, rendered.query_size, &opts.localize)?;
    let report = evaluate(
        bundle,
        rendered.observables(),
        &localization.intrinsics,
        &localization.pose,
        Some(&plane),
        recon.enu_origin.as_ref(),
    )?;
    Ok(PipelineOutput {
        recon,
        summary,
        transform,
        plane,
        plane_inliers: mask.iter().filter(|&&b| b).count(),
        query_matches,
        localization,
        report,
    })
}

/// Runs the pipeline on one dataset with the panoramic constraint on, then off.
pub fn constraint_ablation(
    bundle: &GroundTruthBundle,
    rendered: &RenderedDataset,
    opts: &PipelineOptions,
) -> (Result<PipelineOutput>, Result<PipelineOutput>) {
    let mut on = opts.clone();
    if on.reconstruct.ba.pano_mode == PanoMode::Off {
        on.reconstruct.ba.pano_mode = PanoMode::Soft;
    }
    let mut off = opts.clone();
    off.reconstruct.ba.pano_mode = PanoMode::Off;
    rayon::join(|| run_pipeline(bundle, rendered, &on), || run_pipeline(bundle, rendered, &off))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_scene, render_matches, NoiseSpec, SceneSpec};
    use super::*;

    #[test]
    fn noiseless_pipeline_recovers_camera() {
        let b = generate_scene(&SceneSpec {
            n_panos: 6,
            n_points: 1200,
            seed: 11,
            ..SceneSpec::default()
        })
        .unwrap();
        let r = render_matches(&b, &b.spec.sampling, &NoiseSpec::default()).unwrap();
        let out = run_pipeline(&b, &r, &PipelineOptions::default()).unwrap();
        assert_eq!(out.summary.registered_views, out.summary.total_views);
        let e = &out.report;
        assert!(e.max_focal_pct() < 0.5, "{e:?}");
        assert!(e.center_m < 0.2, "{e:?}");
        assert!(e.distances.as_ref().unwrap().max_pct < 1.0, "{e:?}");
    }
}
