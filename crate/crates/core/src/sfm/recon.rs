use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geodesy::{GeodeticCoord, SimilarityTransform};
use crate::geometry::{project, CameraIntrinsics, Vec2, Vec3, ViewPose};
use crate::{Error, Result};

/// Whether reconstruction coordinates are up-to-similarity or metric ENU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleState {
    Arbitrary,
    Metric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// `<pano_id>#<slot>` for database views.
    pub id: String,
    pub pose: ViewPose,
    pub intrinsics_id: String,
    pub registered: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    /// Index into [`Reconstruction::views`].
    pub view: usize,
    pub pixel: Vec2,
}

/// A triangulated track.
#[derive(Clone, Debug, PartialEq)]
pub struct Point3D {
    pub xyz: Vec3,
    pub road_mark: bool,
    pub observations: Vec<Observation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub views: Vec<View>,
    pub intrinsics: BTreeMap<String, CameraIntrinsics>,
    pub points: BTreeMap<u64, Point3D>,
    pub scale_state: ScaleState,
    /// Perspective views per panorama, needed to rebuild panoramic constraints.
    pub views_per_pano: usize,
    /// Geodetic origin of the ENU frame once metric.
    pub enu_origin: Option<GeodeticCoord>,
}

pub fn view_id(pano_id: &str, slot: usize) -> String {
    format!("{pano_id}#{slot}")
}

/// Splits `<pano_id>#<slot>`; the pano id itself may not contain `#`.
pub fn parse_view_id(id: &str) -> Option<(&str, usize)> {
    let (pano, slot) = id.rsplit_once('#')?;
    Some((pano, slot.parse().ok()?))
}

impl Reconstruction {
    pub fn view_index(&self, id: &str) -> Option<usize> {
        self.views.iter().position(|v| v.id == id)
    }

    pub fn view_lookup(&self) -> BTreeMap<&str, usize> {
        self.views
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.as_str(), i))
            .collect()
    }

    pub fn intrinsics_of(&self, view: usize) -> &CameraIntrinsics {
        &self.intrinsics[&self.views[view].intrinsics_id]
    }

    pub fn registered_count(&self) -> usize {
        self.views.iter().filter(|v| v.registered).count()
    }

    /// Mean registered view center per panorama.
    pub fn pano_centers(&self) -> BTreeMap<String, Vec3> {
        let mut acc: BTreeMap<String, (Vec3, usize)> = BTreeMap::new();
        for v in self.views.iter().filter(|v| v.registered) {
            if let Some(slot) = &v.pose.pano {
                let e = acc
                    .entry(slot.pano_id.clone())
                    .or_insert((Vec3::zeros(), 0));
                e.0 += v.pose.center;
                e.1 += 1;
            }
        }
        acc.into_iter()
            .map(|(k, (sum, n))| (k, sum / n as f64))
            .collect()
    }

    /// Copy with every pose and point mapped through `t`.
    pub fn transformed(&self, t: &SimilarityTransform) -> Reconstruction {
        let mut out = self.clone();
        for v in &mut out.views {
            v.pose = t.apply_pose(&v.pose);
        }
        for p in out.points.values_mut() {
            p.xyz = t.apply(&p.xyz);
        }
        out
    }

    /// Reprojection errors (pixels) over all observations of triangulated points.
    pub fn reprojection_errors(&self) -> Vec<f64> {
        let mut errs = Vec::new();
        for p in self.points.values() {
            for o in &p.observations {
                let v = &self.views[o.view];
                match project(self.intrinsics_of(o.view), &v.pose, &p.xyz) {
                    Ok(px) => errs.push((px - o.pixel).norm()),
                    Err(_) => errs.push(f64::INFINITY),
                }
            }
        }
        errs
    }

    pub fn rms_reprojection(&self) -> f64 {
        let e = self.reprojection_errors();
        if e.is_empty() {
            return 0.0;
        }
        (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
    }

    pub fn observation_count(&self) -> usize {
        self.points.values().map(|p| p.observations.len()).sum()
    }

    pub fn require_metric(&self) -> Result<()> {
        if self.scale_state != ScaleState::Metric {
            return Err(Error::validation(
                "reconstruction is not metric; run georegistration first",
            ));
        }
        Ok(())
    }

    /// Checks cross references and the per-point observation invariants.
    pub fn validate(&self) -> Result<()> {
        for v in &self.views {
            if !self.intrinsics.contains_key(&v.intrinsics_id) {
                return Err(Error::validation(format!(
                    "view {} references unknown intrinsics {}",
                    v.id, v.intrinsics_id
                )));
            }
            if v.registered
                && !(v.pose.center.iter().all(|x| x.is_finite())
                    && v.pose.rotation.matrix().iter().all(|x| x.is_finite()))
            {
                return Err(Error::validation(format!(
                    "registered view {} has a non-finite pose",
                    v.id
                )));
            }
        }
        for (id, p) in &self.points {
            if p.observations.len() < 2 {
                return Err(Error::validation(format!(
                    "point {id} has fewer than 2 observations"
                )));
            }
            let mut seen = Vec::with_capacity(p.observations.len());
            for o in &p.observations {
                let Some(v) = self.views.get(o.view) else {
                    return Err(Error::validation(format!(
                        "point {id} references view index {}",
                        o.view
                    )));
                };
                if !v.registered {
                    return Err(Error::validation(format!(
                        "point {id} observed by unregistered view {}",
                        v.id
                    )));
                }
                if seen.contains(&o.view) {
                    return Err(Error::validation(format!(
                        "point {id} has two observations in view {}",
                        v.id
                    )));
                }
                seen.push(o.view);
            }
        }
        Ok(())
    }
}
