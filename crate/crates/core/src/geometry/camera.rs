use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::Rotation;
use crate::{Error, Result};

/// Membership of a perspective view in a panorama.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PanoSlot {
    pub pano_id: String,
    pub slot: usize,
}

/// Camera pose as world-from-camera orientation plus camera center.
///
/// Camera frame: x right, y down, z forward. A world point `X` maps to
/// `Rᵀ (X − C)` in the camera frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub rotation: Rotation,
    pub center: Vector3<f64>,
    pub pano: Option<PanoSlot>,
}

impl ViewPose {
    pub fn new(rotation: Rotation, center: Vector3<f64>) -> Self {
        ViewPose {
            rotation,
            center,
            pano: None,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn with_pano(mut self, pano_id: impl Into<String>, slot: usize) -> Self {
        self.pano = Some(PanoSlot {
            pano_id: pano_id.into(),
            slot,
        });
        self
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_rotate(&(p - self.center))
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.center
    }

    /// Projection translation `t = −Rᵀ C` (camera-from-world convention).
    pub fn translation(&self) -> Vector3<f64> {
        -self.rotation.inverse_rotate(&self.center)
    }

    /// Camera optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.rotate(&Vector3::z())
    }
}

/// Pinhole intrinsics with Brown–Conrady radial (k1, k2) and tangential (p1, p2) distortion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub px: f64,
    pub py: f64,
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub width: u32,
    pub height: u32,
}

/// Names of the eight estimable intrinsic parameters, in `as_array` order.
pub const INTRINSIC_NAMES: [&str; 8] = ["fx", "fy", "px", "py", "k1", "k2", "p1", "p2"];

const UNDISTORT_MAX_ITER: usize = 50;
const UNDISTORT_STEP_TOL: f64 = 1e-12;
const UNDISTORT_RESIDUAL_TOL: f64 = 1e-10;

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, px: f64, py: f64, width: u32, height: u32) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            px,
            py,
            k1: 0.0,
            k2: 0.0,
            p1: 0.0,
            p2: 0.0,
            width,
            height,
        }
    }

    /// Square-pixel pinhole camera with the given horizontal FOV and principal point at the center.
    pub fn from_fov(fov_deg: f64, width: u32, height: u32) -> Self {
        let f = focal_from_fov(fov_deg, width);
        Self::pinhole(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64, p1: f64, p2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self.p1 = p1;
        self.p2 = p2;
        self
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.fx, self.fy, self.px, self.py, self.k1, self.k2, self.p1, self.p2,
        ]
    }

    pub fn set_from_array(&mut self, a: &[f64; 8]) {
        self.fx = a[0];
        self.fy = a[1];
        self.px = a[2];
        self.py = a[3];
        self.k1 = a[4];
        self.k2 = a[5];
        self.p1 = a[6];
        self.p2 = a[7];
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0 || self.p1 != 0.0 || self.p2 != 0.0
    }

    /// Horizontal field of view in degrees implied by `fx`.
    pub fn hfov_deg(&self) -> f64 {
        2.0 * (self.width as f64 / 2.0 / self.fx).atan().to_degrees()
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }

    /// Checks positivity, principal point range, and invertibility of the distortion map.
    pub fn validate(&self) -> Result<()> {
        let vals = self.as_array();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("intrinsics contain non-finite values"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("image size must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::validation(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.px >= 0.0 && self.px < self.width as f64) {
            return Err(Error::validation(format!(
                "principal point px={} outside [0, {})",
                self.px, self.width
            )));
        }
        if !(self.py >= 0.0 && self.py < self.height as f64) {
            return Err(Error::validation(format!(
                "principal point py={} outside [0, {})",
                self.py, self.height
            )));
        }
        self.check_distortion_monotone()
    }

    /// Largest normalized (distorted) radius reached by any image corner.
    fn max_normalized_radius(&self) -> f64 {
        let corners = [
            (0.0, 0.0),
            (self.width as f64, 0.0),
            (0.0, self.height as f64),
            (self.width as f64, self.height as f64),
        ];
        corners
            .iter()
            .map(|&(u, v)| {
                let x = (u - self.px) / self.fx;
                let y = (v - self.py) / self.fy;
                (x * x + y * y).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Rejects radial coefficients whose distortion curve folds back before covering the image.
    ///
    /// The tangential terms are small by construction of the accepted ranges and the
    /// Newton inversion handles them; only the radial fold is a hard failure.
    pub fn check_distortion_monotone(&self) -> Result<()> {
        let rd_max = self.max_normalized_radius();
        if self.k1 == 0.0 && self.k2 == 0.0 {
            return Ok(());
        }
        let steps = 20_000;
        let r_limit = 4.0 * rd_max.max(1e-6);
        for i in 0..=steps {
            let r = r_limit * i as f64 / steps as f64;
            let r2 = r * r;
            let deriv = 1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2;
            if deriv <= 0.0 {
                return Err(Error::validation(format!(
                    "radial distortion (k1={}, k2={}) is not monotone inside the image circle (fold at r={r:.4})",
                    self.k1, self.k2
                )));
            }
            let rd = r * (1.0 + self.k1 * r2 + self.k2 * r2 * r2);
            if rd >= rd_max {
                return Ok(());
            }
        }
        Err(Error::validation(format!(
            "radial distortion (k1={}, k2={}) never covers the image circle",
            self.k1, self.k2
        )))
    }

    /// Applies Brown–Conrady distortion to normalized coordinates.
    pub fn distort(&self, x: &Vector2<f64>) -> Vector2<f64> {
        let (xx, yy) = (x.x, x.y);
        let r2 = xx * xx + yy * yy;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let xd = xx * radial + 2.0 * self.p1 * xx * yy + self.p2 * (r2 + 2.0 * xx * xx);
        let yd = yy * radial + self.p1 * (r2 + 2.0 * yy * yy) + 2.0 * self.p2 * xx * yy;
        Vector2::new(xd, yd)
    }

    /// Jacobian of `distort` with respect to the undistorted normalized point.
    pub fn distort_jacobian(&self, x: &Vector2<f64>) -> Matrix2<f64> {
        let (xx, yy) = (x.x, x.y);
        let r2 = xx * xx + yy * yy;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        let dr = self.k1 + 2.0 * self.k2 * r2;
        let dxdx = radial + 2.0 * xx * xx * dr + 2.0 * self.p1 * yy + 6.0 * self.p2 * xx;
        let dxdy = 2.0 * xx * yy * dr + 2.0 * self.p1 * xx + 2.0 * self.p2 * yy;
        let dydy = radial + 2.0 * yy * yy * dr + 6.0 * self.p1 * yy + 2.0 * self.p2 * xx;
        Matrix2::new(dxdx, dxdy, dxdy, dydy)
    }

    pub fn normalized_to_pixel(&self, xd: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * xd.x + self.px, self.fy * xd.y + self.py)
    }

    pub fn pixel_to_normalized(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.px) / self.fx, (pixel.y - self.py) / self.fy)
    }

    /// Projects a camera-frame point to pixels.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(pc.z > 0.0) {
            return Err(Error::Cheirality { depth: pc.z });
        }
        let x = Vector2::new(pc.x / pc.z, pc.y / pc.z);
        Ok(self.normalized_to_pixel(&self.distort(&x)))
    }

    /// Inverts the distortion map for distorted normalized coordinates.
    pub fn undistort_normalized(&self, xd: &Vector2<f64>) -> Result<Vector2<f64>> {
        if !self.has_distortion() {
            return Ok(*xd);
        }
        let mut y = *xd;
        let mut residual = self.distort(&y) - xd;
        for _ in 0..UNDISTORT_MAX_ITER {
            let jac = self.distort_jacobian(&y);
            let newton = jac.try_inverse().map(|inv| -(inv * residual));
            // Damped fixed-point step as a fallback when the Newton step does not reduce the residual.
            let mut step = newton.unwrap_or(-residual);
            let mut accepted = false;
            for _ in 0..30 {
                let cand = y + step;
                let cand_res = self.distort(&cand) - xd;
                if cand_res.norm() < residual.norm() || cand_res.norm() == 0.0 {
                    y = cand;
                    residual = cand_res;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.norm() < UNDISTORT_STEP_TOL {
                break;
            }
        }
        if residual.norm() < UNDISTORT_RESIDUAL_TOL {
            Ok(y)
        } else {
            Err(Error::Numerical {
                message: "distortion inversion did not converge".into(),
                residual: residual.norm(),
            })
        }
    }
}

/// Focal length in pixels for a horizontal field of view.
pub fn focal_from_fov(fov_deg: f64, width: u32) -> f64 {
    (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan()
}

/// Projects a world point through pose and intrinsics.
pub fn project(intr: &CameraIntrinsics, pose: &ViewPose, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    intr.project_camera_point(&pose.world_to_camera(point))
}

/// Maps an in-bounds pixel to undistorted normalized image coordinates.
pub fn undistort_pixel(intr: &CameraIntrinsics, pixel: &Vector2<f64>) -> Result<Vector2<f64>> {
    if !intr.contains(pixel) {
        return Err(Error::Range(format!(
            "pixel ({}, {}) outside {}x{} image",
            pixel.x, pixel.y, intr.width, intr.height
        )));
    }
    intr.undistort_normalized(&intr.pixel_to_normalized(pixel))
}

/// Back-projects a pixel into a world ray `(origin, unit direction)`.
pub fn pixel_to_world_ray(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    pixel: &Vector2<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let n = undistort_pixel(intr, pixel)?;
    let dir_cam = Vector3::new(n.x, n.y, 1.0).normalize();
    Ok((pose.center, pose.rotation.rotate(&dir_cam)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(100.0, 100.0, 50.0, 50.0, 100, 100)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project(&cam(), &ViewPose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(p, Vector2::new(50.0, 50.0));
    }

    #[test]
    fn pinhole_formula() {
        let p = project(&cam(), &ViewPose::identity(), &Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(p, Vector2::new(100.0, 50.0));
    }

    #[test]
    fn distortion_matches_scalar_evaluation() {
        let intr = CameraIntrinsics::pinhole(800.0, 790.0, 320.0, 240.0, 640, 480)
            .with_distortion(0.1, 0.0, 0.0, 0.0);
        let p = project(&intr, &ViewPose::identity(), &Vector3::new(0.3, 0.2, 1.0)).unwrap();
        // hand-evaluated: r2 = 0.13, radial = 1.013
        let u = 800.0 * 0.3 * 1.013 + 320.0;
        let v = 790.0 * 0.2 * 1.013 + 240.0;
        assert!((p.x - u).abs() < 1e-9 && (p.y - v).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project(&cam(), &ViewPose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(err, Err(Error::Cheirality { .. })));
    }

    #[test]
    fn undistort_without_distortion_is_pinhole_inverse() {
        let intr = cam();
        let n = undistort_pixel(&intr, &Vector2::new(70.0, 20.0)).unwrap();
        assert_eq!(n, Vector2::new(0.2, -0.3));
    }

    #[test]
    fn principal_point_is_fixed_point() {
        let intr = cam().with_distortion(-0.2, 0.05, 0.01, 0.01);
        let n = undistort_pixel(&intr, &Vector2::new(50.0, 50.0)).unwrap();
        assert!(n.norm() < 1e-15);
    }

    #[test]
    fn distort_undistort_round_trip() {
        let intr = CameraIntrinsics::pinhole(500.0, 500.0, 320.0, 240.0, 640, 480)
            .with_distortion(-0.2, 0.05, 0.01, 0.01);
        intr.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let pix = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let y = undistort_pixel(&intr, &pix).unwrap();
            let back = intr.distort(&y);
            assert!((back - intr.pixel_to_normalized(&pix)).norm() < 1e-10);
        }
    }

    #[test]
    fn out_of_bounds_pixel_is_range_error() {
        assert!(matches!(
            undistort_pixel(&cam(), &Vector2::new(100.0, 3.0)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn ray_through_principal_point() {
        let (o, d) = pixel_to_world_ray(&cam(), &ViewPose::identity(), &Vector2::new(50.0, 50.0)).unwrap();
        assert_eq!(o, Vector3::zeros());
        assert!((d - Vector3::z()).norm() < 1e-15);
        let pose = ViewPose::new(Rotation::about_y(std::f64::consts::FRAC_PI_2), Vector3::zeros());
        let (_, d) = pixel_to_world_ray(&cam(), &pose, &Vector2::new(50.0, 50.0)).unwrap();
        assert!((d - Vector3::x()).norm() < 1e-15);
    }

    #[test]
    fn ray_reprojects_to_pixel() {
        let intr = CameraIntrinsics::pinhole(700.0, 710.0, 330.0, 250.0, 640, 480)
            .with_distortion(-0.1, 0.02, 0.002, -0.001);
        let pose = ViewPose::new(Rotation::exp(&Vector3::new(0.2, -0.4, 0.1)), Vector3::new(1.0, 2.0, -3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let pix = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let (o, d) = pixel_to_world_ray(&intr, &pose, &pix).unwrap();
            let back = project(&intr, &pose, &(o + d * 5.0)).unwrap();
            assert!((back - pix).norm() < 1e-8);
        }
    }

    #[test]
    fn fold_is_rejected() {
        let intr = CameraIntrinsics::pinhole(300.0, 300.0, 320.0, 240.0, 640, 480)
            .with_distortion(-0.6, 0.0, 0.0, 0.0);
        assert!(intr.validate().is_err());
        let ok = intr.with_distortion(-0.15, 0.02, 0.001, -0.002);
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn distortion_jacobian_matches_finite_differences() {
        let intr = cam().with_distortion(-0.25, 0.07, 0.01, -0.02);
        let x = Vector2::new(0.31, -0.27);
        let j = intr.distort_jacobian(&x);
        let h = 1e-6;
        for c in 0..2 {
            let mut dp = x;
            let mut dm = x;
            dp[c] += h;
            dm[c] -= h;
            let fd = (intr.distort(&dp) - intr.distort(&dm)) / (2.0 * h);
            assert!((fd - j.column(c)).norm() < 1e-8);
        }
    }
}
