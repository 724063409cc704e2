//! JSON documents: panoramas, reconstructions, query calibrations, planes, traps, synthetic truth.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, FORMAT_VERSION};
use crate::geodesy::GeodeticCoord;
use crate::geometry::{CameraIntrinsics, PanoramaMeta, Rotation, Vec2, Vec3, ViewPose};
use crate::groundplane::PlaneModel;
use crate::localize::{FocalCandidate, LocalizationResult, RefineReport};
use crate::sfm::{Observation, Point3D, Reconstruction, ScaleState, View};
use crate::synth::{GroundTruthBundle, RenderTruth, SceneSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanoramaRecord {
    pub pano_id: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
    /// Degrees counterclockwise from east.
    pub heading_deg: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Serialize, Deserialize)]
struct PanoramasFile {
    format_version: u32,
    panoramas: Vec<PanoramaRecord>,
}

pub fn read_panoramas(path: &Path) -> Result<Vec<PanoramaMeta>> {
    let f: PanoramasFile = read_json(path)?;
    let mut seen = BTreeSet::new();
    f.panoramas
        .into_iter()
        .map(|r| {
            if !seen.insert(r.pano_id.clone()) {
                return Err(Error::validation(format!("duplicate pano_id {} in {}", r.pano_id, path.display())));
            }
            let p = PanoramaMeta {
                pano_id: r.pano_id,
                geodetic: GeodeticCoord::new(r.lat_deg, r.lon_deg, r.alt_m),
                heading_deg: r.heading_deg,
                width: r.width,
                height: r.height,
            };
            p.validate()?;
            Ok(p)
        })
        .collect()
}

pub fn write_panoramas(path: &Path, panos: &[PanoramaMeta]) -> Result<()> {
    let panoramas = panos
        .iter()
        .map(|p| PanoramaRecord {
            pano_id: p.pano_id.clone(),
            lat_deg: p.geodetic.lat_deg,
            lon_deg: p.geodetic.lon_deg,
            alt_m: p.geodetic.alt_m,
            heading_deg: p.heading_deg,
            width: p.width,
            height: p.height,
        })
        .collect();
    write_json(
        path,
        &PanoramasFile {
            format_version: FORMAT_VERSION,
            panoramas,
        },
    )
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    id: String,
    pano_id: Option<String>,
    slot: Option<usize>,
    intrinsics: String,
    registered: bool,
    rotation_wxyz: [f64; 4],
    center: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct PointRecord {
    id: u64,
    xyz: [f64; 3],
    road_mark: bool,
    /// `(view id, u, v)`.
    observations: Vec<(String, f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ReconstructionFile {
    format_version: u32,
    scale_state: ScaleState,
    views_per_pano: usize,
    enu_origin: Option<GeodeticCoord>,
    intrinsics: BTreeMap<String, CameraIntrinsics>,
    views: Vec<ViewRecord>,
    points: Vec<PointRecord>,
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Quaternion whose matrix round trip lands on the same value, so re-writing a loaded file is bit-identical.
///
/// Iterating quaternion -> matrix -> quaternion ends in a short cycle; the smallest member is canonical.
fn stable_quaternion(r: &Rotation) -> [f64; 4] {
    let step = |q: [f64; 4]| Rotation::from_quaternion_wxyz(q).map_or(q, |r| r.to_quaternion_wxyz());
    let mut seen = vec![r.to_quaternion_wxyz()];
    for _ in 0..32 {
        let next = step(*seen.last().unwrap());
        if let Some(start) = seen.iter().position(|q| *q == next) {
            let cycle = &seen[start..];
            return *cycle
                .iter()
                .min_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap();
        }
        seen.push(next);
    }
    *seen.last().unwrap()
}

fn rotation_from_file(path: &Path, what: &str, q: [f64; 4]) -> Result<Rotation> {
    Rotation::from_quaternion_wxyz(q).map_err(|e| Error::parse(path, format!("{what}: {e}")))
}

pub fn write_reconstruction(path: &Path, recon: &Reconstruction) -> Result<()> {
    let views = recon
        .views
        .iter()
        .map(|v| ViewRecord {
            id: v.id.clone(),
            pano_id: v.pose.pano.as_ref().map(|p| p.pano_id.clone()),
            slot: v.pose.pano.as_ref().map(|p| p.slot),
            intrinsics: v.intrinsics_id.clone(),
            registered: v.registered,
            rotation_wxyz: stable_quaternion(&v.pose.rotation),
            center: arr3(&v.pose.center),
        })
        .collect();
    let points = recon
        .points
        .iter()
        .map(|(id, p)| PointRecord {
            id: *id,
            xyz: arr3(&p.xyz),
            road_mark: p.road_mark,
            observations: p
                .observations
                .iter()
                .map(|o| (recon.views[o.view].id.clone(), o.pixel.x, o.pixel.y))
                .collect(),
        })
        .collect();
    write_json(
        path,
        &ReconstructionFile {
            format_version: FORMAT_VERSION,
            scale_state: recon.scale_state,
            views_per_pano: recon.views_per_pano,
            enu_origin: recon.enu_origin,
            intrinsics: recon.intrinsics.clone(),
            views,
            points,
        },
    )
}

pub fn read_reconstruction(path: &Path) -> Result<Reconstruction> {
    let f: ReconstructionFile = read_json(path)?;
    let mut views = Vec::with_capacity(f.views.len());
    for v in f.views {
        if !f.intrinsics.contains_key(&v.intrinsics) {
            return Err(Error::validation(format!("view {} references unknown intrinsics {}", v.id, v.intrinsics)));
        }
        let mut pose = ViewPose::new(
            rotation_from_file(path, &format!("view {}", v.id), v.rotation_wxyz)?,
            Vec3::from(v.center),
        );
        if let (Some(p), Some(s)) = (v.pano_id, v.slot) {
            pose = pose.with_pano(p, s);
        }
        views.push(View {
            id: v.id,
            pose,
            intrinsics_id: v.intrinsics,
            registered: v.registered,
        });
    }
    let lookup: BTreeMap<String, usize> = views.iter().enumerate().map(|(i, v)| (v.id.clone(), i)).collect();
    if lookup.len() != views.len() {
        return Err(Error::validation(format!("duplicate view ids in {}", path.display())));
    }
    let mut points = BTreeMap::new();
    for p in f.points {
        let observations = p
            .observations
            .into_iter()
            .map(|(vid, u, v)| {
                let view = *lookup
                    .get(&vid)
                    .ok_or_else(|| Error::validation(format!("point {} observed in unknown view {vid}", p.id)))?;
                Ok(Observation {
                    view,
                    pixel: Vec2::new(u, v),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let point = Point3D {
            xyz: Vec3::from(p.xyz),
            road_mark: p.road_mark,
            observations,
        };
        if points.insert(p.id, point).is_some() {
            return Err(Error::validation(format!("duplicate point id {}", p.id)));
        }
    }
    let recon = Reconstruction {
        views,
        intrinsics: f.intrinsics,
        points,
        scale_state: f.scale_state,
        views_per_pano: f.views_per_pano,
        enu_origin: f.enu_origin,
    };
    recon.validate()?;
    Ok(recon)
}

/// Reads a reconstruction and requires it to be metric.
pub fn read_metric_reconstruction(path: &Path) -> Result<Reconstruction> {
    let r = read_reconstruction(path)?;
    r.require_metric()?;
    Ok(r)
}

/// Calibrated query camera as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraCalibration {
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: ViewPose,
    /// ENU origin of the frame the pose lives in; `None` for an up-to-scale frame.
    pub enu_origin: Option<GeodeticCoord>,
    pub num_inliers: usize,
    pub rms_px: f64,
    pub selected_fov_deg: f64,
    pub trace: Vec<FocalCandidate>,
    pub refinement: Option<RefineReport>,
}

impl CameraCalibration {
    pub fn from_result(camera_id: &str, r: &LocalizationResult, enu_origin: Option<GeodeticCoord>) -> Self {
        CameraCalibration {
            camera_id: camera_id.to_string(),
            intrinsics: r.intrinsics,
            pose: ViewPose::new(r.pose.rotation, r.pose.center),
            enu_origin,
            num_inliers: r.num_inliers,
            rms_px: r.rms_px,
            selected_fov_deg: r.selected_fov_deg,
            trace: r.trace.clone(),
            refinement: r.refinement.clone(),
        }
    }

    pub fn require_metric(&self) -> Result<&GeodeticCoord> {
        self.enu_origin.as_ref().ok_or_else(|| {
            Error::validation(format!("calibration {} is not in a metric frame", self.camera_id))
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    format_version: u32,
    camera_id: String,
    intrinsics: CameraIntrinsics,
    rotation_wxyz: [f64; 4],
    center: [f64; 3],
    enu_origin: Option<GeodeticCoord>,
    num_inliers: usize,
    rms_px: f64,
    selected_fov_deg: f64,
    trace: Vec<FocalCandidate>,
    refinement: Option<RefineReport>,
}

pub fn write_calibration(path: &Path, c: &CameraCalibration) -> Result<()> {
    write_json(
        path,
        &CalibrationFile {
            format_version: FORMAT_VERSION,
            camera_id: c.camera_id.clone(),
            intrinsics: c.intrinsics,
            rotation_wxyz: stable_quaternion(&c.pose.rotation),
            center: arr3(&c.pose.center),
            enu_origin: c.enu_origin,
            num_inliers: c.num_inliers,
            rms_px: c.rms_px,
            selected_fov_deg: c.selected_fov_deg,
            trace: c.trace.clone(),
            refinement: c.refinement.clone(),
        },
    )
}

pub fn read_calibration(path: &Path) -> Result<CameraCalibration> {
    let f: CalibrationFile = read_json(path)?;
    f.intrinsics.validate()?;
    Ok(CameraCalibration {
        pose: ViewPose::new(rotation_from_file(path, "camera", f.rotation_wxyz)?, Vec3::from(f.center)),
        camera_id: f.camera_id,
        intrinsics: f.intrinsics,
        enu_origin: f.enu_origin,
        num_inliers: f.num_inliers,
        rms_px: f.rms_px,
        selected_fov_deg: f.selected_fov_deg,
        trace: f.trace,
        refinement: f.refinement,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneFile {
    pub format_version: u32,
    pub normal: Vec3,
    pub offset: f64,
    pub inliers: usize,
    pub candidates: usize,
    pub enu_origin: Option<GeodeticCoord>,
}

impl PlaneFile {
    pub fn new(plane: &PlaneModel, inliers: usize, candidates: usize, enu_origin: Option<GeodeticCoord>) -> Self {
        PlaneFile {
            format_version: FORMAT_VERSION,
            normal: plane.normal,
            offset: plane.offset,
            inliers,
            candidates,
            enu_origin,
        }
    }

    pub fn plane(&self) -> Result<PlaneModel> {
        PlaneModel::new(self.normal, self.offset)
    }
}

pub fn write_plane(path: &Path, f: &PlaneFile) -> Result<()> {
    write_json(path, f)
}

pub fn read_plane(path: &Path) -> Result<PlaneFile> {
    let f: PlaneFile = read_json(path)?;
    f.plane()?;
    Ok(f)
}

/// Trap endpoints, either in ENU or as pixels of a calibrated camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrapDefinition {
    Enu { a: Vec3, b: Vec3 },
    Pixels { a: Vec2, b: Vec2, camera: String },
}

#[derive(Serialize, Deserialize)]
struct TrapFile {
    format_version: u32,
    trap: TrapDefinition,
}

pub fn write_trap(path: &Path, t: &TrapDefinition) -> Result<()> {
    write_json(
        path,
        &TrapFile {
            format_version: FORMAT_VERSION,
            trap: t.clone(),
        },
    )
}

pub fn read_trap(path: &Path) -> Result<TrapDefinition> {
    Ok(read_json::<TrapFile>(path)?.trap)
}

/// Everything the synthetic generator knows, for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub format_version: u32,
    pub bundle: GroundTruthBundle,
    pub render: RenderTruth,
}

pub fn write_truth(path: &Path, bundle: &GroundTruthBundle, render: &RenderTruth) -> Result<()> {
    write_json(
        path,
        &TruthSidecar {
            format_version: FORMAT_VERSION,
            bundle: bundle.clone(),
            render: render.clone(),
        },
    )
}

pub fn read_truth(path: &Path) -> Result<TruthSidecar> {
    read_json(path)
}

#[derive(Serialize, Deserialize)]
struct SceneSpecFile {
    format_version: u32,
    spec: SceneSpec,
}

pub fn write_scene_spec(path: &Path, spec: &SceneSpec) -> Result<()> {
    write_json(
        path,
        &SceneSpecFile {
            format_version: FORMAT_VERSION,
            spec: spec.clone(),
        },
    )
}

pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    Ok(read_json::<SceneSpecFile>(path)?.spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SamplingConfig;
    use crate::testutil::pano_scene;
    use proptest::prelude::*;

    #[test]
    fn panoramas_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        super::super::write_text(
            &path,
            r#"{"format_version":1,"panoramas":[{"pano_id":"a","lon_deg":0,"alt_m":0,"heading_deg":0,"width":2,"height":1}]}"#,
        )
        .unwrap();
        let e = read_panoramas(&path).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }) && e.to_string().contains("lat_deg"), "{e}");
        let p = PanoramaMeta {
            pano_id: "a".into(),
            geodetic: GeodeticCoord::new(1.0, 2.0, 3.0),
            heading_deg: 10.0,
            width: 8,
            height: 4,
        };
        write_panoramas(&path, &[p.clone(), p.clone()]).unwrap();
        assert!(matches!(read_panoramas(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn reconstruction_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut r = pano_scene(3, &SamplingConfig::default(), 1);
        r.points.values_mut().next().unwrap().road_mark = true;
        r.enu_origin = Some(GeodeticCoord::new(40.0, -80.0, 250.0));
        write_reconstruction(&path, &r).unwrap();
        let back = read_reconstruction(&path).unwrap();
        assert_eq!(back.points, r.points);
        assert_eq!(back.enu_origin, r.enu_origin);
        for (a, b) in back.views.iter().zip(&r.views) {
            assert_eq!(a.pose.center, b.pose.center);
            assert_eq!(a.pose.pano, b.pose.pano);
            assert!(a.pose.rotation.angle_to(&b.pose.rotation) < 1e-14);
        }
        // Own output re-serializes identically.
        let p2 = dir.path().join("r2.json");
        write_reconstruction(&p2, &back).unwrap();
        let (t1, t2) = (std::fs::read_to_string(&path).unwrap(), std::fs::read_to_string(&p2).unwrap());
        let diff = t1.lines().zip(t2.lines()).enumerate().find(|(_, (a, b))| a != b);
        assert!(diff.is_none(), "{diff:?}");
        assert!(matches!(read_metric_reconstruction(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn reconstruction_rejects_bad_refs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let r = pano_scene(2, &SamplingConfig::default(), 2);
        write_reconstruction(&path, &r).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        super::super::write_text(&path, &text.replacen("\"intrinsics\": \"db\"", "\"intrinsics\": \"nope\"", 1)).unwrap();
        assert!(matches!(read_reconstruction(&path), Err(Error::Validation(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["views"][0]["rotation_wxyz"] = serde_json::json!([0.0, 0.0, 0.0, 1e-9]);
        super::super::write_text(&path, &v.to_string()).unwrap();
        assert!(matches!(read_reconstruction(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn trap_variants() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        for t in [
            TrapDefinition::Enu {
                a: Vec3::new(1.0, 2.0, 0.0),
                b: Vec3::new(1.0, 8.0, 0.0),
            },
            TrapDefinition::Pixels {
                a: Vec2::new(10.0, 20.0),
                b: Vec2::new(30.5, 40.0),
                camera: "calibration.json".into(),
            },
        ] {
            write_trap(&path, &t).unwrap();
            assert_eq!(read_trap(&path).unwrap(), t);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn panoramas_round_trip(rows in prop::collection::vec(
            (-89.0..89.0f64, -179.0..179.0f64, -100.0..3000.0f64, -360.0..360.0f64, 1u32..5000),
            0..6,
        )) {
            let panos: Vec<PanoramaMeta> = rows
                .iter()
                .enumerate()
                .map(|(i, &(lat, lon, alt, h, w))| PanoramaMeta {
                    pano_id: format!("p{i}"),
                    geodetic: GeodeticCoord::new(lat, lon, alt),
                    heading_deg: h,
                    width: 2 * w,
                    height: w,
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.json");
            write_panoramas(&path, &panos).unwrap();
            prop_assert_eq!(read_panoramas(&path).unwrap(), panos);
        }

        #[test]
        fn calibration_round_trip(fx in 900.0..3000.0f64, k1 in -0.3..0.3f64, w in -1.0..1.0f64, x in -1.0..1.0f64, c in -50.0..50.0f64) {
            let q = Rotation::from_quaternion_wxyz([w, x, 0.3, -0.2]).unwrap();
            let cal = CameraCalibration {
                camera_id: "cam".into(),
                intrinsics: CameraIntrinsics::pinhole(fx, fx * 1.01, 960.0, 540.0, 1920, 1080).with_distortion(k1 * 0.1, 0.0, 0.0, 0.0),
                pose: ViewPose::new(q, Vec3::new(c, -c, 7.0)),
                enu_origin: None,
                num_inliers: 10,
                rms_px: 0.5,
                selected_fov_deg: 60.0,
                trace: vec![],
                refinement: None,
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.json");
            write_calibration(&path, &cal).unwrap();
            let back = read_calibration(&path).unwrap();
            prop_assert_eq!(back.intrinsics, cal.intrinsics);
            prop_assert_eq!(back.pose.center, cal.pose.center);
            prop_assert!(back.pose.rotation.angle_to(&cal.pose.rotation) < 1e-12);
        }
    }
}
