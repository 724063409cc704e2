//! Equirectangular panoramas and the perspective views sampled from them.
//!
//! Panorama frame: x points along the zero-yaw direction, z is up (gravity
//! aligned), y completes a right-handed frame (to the left of x). Perspective
//! view `j` is yawed counterclockwise by `2πj/T` about z with zero pitch.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{CameraIntrinsics, ViewPose};
use super::rotation::Rotation;
use crate::geodesy::GeodeticCoord;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanoramaMeta {
    pub pano_id: String,
    pub geodetic: GeodeticCoord,
    /// Zero-yaw direction, degrees counterclockwise from east in the local tangent plane.
    pub heading_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl PanoramaMeta {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width != 2 * self.height {
            return Err(Error::validation(format!(
                "panorama {} must be 2:1 equirectangular, got {}x{}",
                self.pano_id, self.width, self.height
            )));
        }
        self.geodetic.validate()
    }

    /// Orientation of the panorama frame in a local ENU frame.
    pub fn enu_rotation(&self) -> Rotation {
        Rotation::about_z(self.heading_deg.to_radians())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Number of perspective views per panorama (T).
    pub views_per_pano: usize,
    pub fov_deg: f64,
    pub out_width: u32,
    pub out_height: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            views_per_pano: 12,
            fov_deg: 90.0,
            out_width: 1920,
            out_height: 1080,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.views_per_pano;
        if t < 3 {
            return Err(Error::validation(format!("T >= 3 required, got T={t}")));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::validation(format!(
                "0 < fov_deg < 180 required, got {}",
                self.fov_deg
            )));
        }
        if (t as f64) * self.fov_deg < 360.0 + self.fov_deg {
            return Err(Error::validation(format!(
                "T * fov_deg >= 360 + fov_deg required for overlap, got {} * {}",
                t, self.fov_deg
            )));
        }
        if self.out_width == 0 || self.out_height == 0 {
            return Err(Error::validation("output image size must be positive"));
        }
        Ok(())
    }

    pub fn yaw_step(&self) -> f64 {
        2.0 * PI / self.views_per_pano as f64
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(self.fov_deg, self.out_width, self.out_height)
    }
}

/// World-from-camera rotation of a zero-yaw, zero-pitch view in the panorama frame.
///
/// Camera z (forward) -> panorama x, camera x (right) -> −y, camera y (down) -> −z.
pub fn camera_to_pano_base() -> Rotation {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    );
    Rotation::from_matrix_unchecked(m)
}

/// Rotation of slot `j` relative to the panorama frame.
pub fn slot_rotation(views_per_pano: usize, slot: usize) -> Rotation {
    let yaw = 2.0 * PI * slot as f64 / views_per_pano as f64;
    Rotation::about_z(yaw).compose(&camera_to_pano_base())
}

/// Samples `T` pinhole views from a panorama, expressed in the panorama frame (center at the origin).
pub fn sample_perspective_views(
    pano: &PanoramaMeta,
    cfg: &SamplingConfig,
) -> Result<Vec<(ViewPose, CameraIntrinsics)>> {
    cfg.validate()?;
    let intr = cfg.intrinsics();
    Ok((0..cfg.views_per_pano)
        .map(|j| {
            let pose = ViewPose::new(slot_rotation(cfg.views_per_pano, j), Vector3::zeros())
                .with_pano(pano.pano_id.clone(), j);
            (pose, intr)
        })
        .collect())
}

/// Unit viewing direction in the panorama frame for an equirectangular pixel.
pub fn equirect_pixel_to_ray(pano: &PanoramaMeta, pixel: &Vector2<f64>) -> Result<Vector3<f64>> {
    let (w, h) = (pano.width as f64, pano.height as f64);
    if !(pixel.x >= 0.0 && pixel.x < w && pixel.y >= 0.0 && pixel.y < h) {
        return Err(Error::Range(format!(
            "equirectangular pixel ({}, {}) outside {}x{}",
            pixel.x, pixel.y, pano.width, pano.height
        )));
    }
    let lon = 2.0 * PI * pixel.x / w - PI;
    let lat = PI / 2.0 - PI * pixel.y / h;
    Ok(Vector3::new(
        lat.cos() * lon.cos(),
        -lat.cos() * lon.sin(),
        lat.sin(),
    ))
}

/// Forward equirectangular mapping for a panorama-frame direction.
pub fn ray_to_equirect_pixel(pano: &PanoramaMeta, dir: &Vector3<f64>) -> Vector2<f64> {
    let d = dir.normalize();
    let lon = (-d.y).atan2(d.x);
    let lat = d.z.clamp(-1.0, 1.0).asin();
    let u = (lon + PI) / (2.0 * PI) * pano.width as f64;
    let v = (PI / 2.0 - lat) / PI * pano.height as f64;
    Vector2::new(u.rem_euclid(pano.width as f64), v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pano() -> PanoramaMeta {
        PanoramaMeta {
            pano_id: "p0".into(),
            geodetic: GeodeticCoord::new(40.0, -80.0, 300.0),
            heading_deg: 0.0,
            width: 4096,
            height: 2048,
        }
    }

    #[test]
    fn paper_configuration_focal() {
        let cfg = SamplingConfig::default();
        let views = sample_perspective_views(&pano(), &cfg).unwrap();
        assert_eq!(views.len(), 12);
        assert!((views[0].1.fx - 960.0).abs() < 1e-9);
        assert_eq!(views[0].1.fx, views[0].1.fy);
        assert_eq!((views[0].1.px, views[0].1.py), (960.0, 540.0));
    }

    #[test]
    fn quarter_turn_between_slots() {
        let cfg = SamplingConfig {
            views_per_pano: 4,
            fov_deg: 120.0,
            out_width: 100,
            out_height: 100,
        };
        let views = sample_perspective_views(&pano(), &cfg).unwrap();
        let rel = views[1].0.rotation.matrix() * views[0].0.rotation.transpose_matrix();
        let expect = Rotation::about_z(PI / 2.0);
        assert!((rel - expect.matrix()).norm() < 1e-15);
    }

    #[test]
    fn shared_center_and_closure() {
        let cfg = SamplingConfig::default();
        let views = sample_perspective_views(&pano(), &cfg).unwrap();
        let mut acc = Matrix3::identity();
        for j in 0..views.len() {
            assert_eq!(views[j].0.center, Vector3::zeros());
            let next = &views[(j + 1) % views.len()].0;
            acc = next.rotation.matrix() * views[j].0.rotation.transpose_matrix() * acc;
        }
        assert!((acc - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn zero_yaw_view_is_level_and_forward() {
        let r = slot_rotation(12, 0);
        assert!((r.rotate(&Vector3::z()) - Vector3::x()).norm() < 1e-15);
        assert!((r.rotate(&Vector3::y()) + Vector3::z()).norm() < 1e-15);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_name_the_invariant() {
        let bad = SamplingConfig {
            views_per_pano: 2,
            ..SamplingConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("T >= 3"));
        let bad = SamplingConfig {
            views_per_pano: 4,
            fov_deg: 100.0,
            ..SamplingConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("overlap"));
        let bad = SamplingConfig {
            fov_deg: 180.0,
            ..SamplingConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn equirect_center_and_edge() {
        let p = pano();
        let d = equirect_pixel_to_ray(&p, &Vector2::new(2048.0, 1024.0)).unwrap();
        assert!((d - Vector3::x()).norm() < 1e-15);
        let d = equirect_pixel_to_ray(&p, &Vector2::new(0.0, 1024.0)).unwrap();
        assert!((d + Vector3::x()).norm() < 1e-15);
        assert!(equirect_pixel_to_ray(&p, &Vector2::new(4096.0, 0.0)).is_err());
    }

    #[test]
    fn equirect_round_trip() {
        let p = pano();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let px = Vector2::new(rng.random_range(0.0..4096.0), rng.random_range(1.0..2047.0));
            let d = equirect_pixel_to_ray(&p, &px).unwrap();
            assert!((d.norm() - 1.0).abs() < 1e-15);
            let back = ray_to_equirect_pixel(&p, &d);
            assert!((back - px).norm() < 1e-9, "{px} -> {back}");
        }
    }
}
