use nalgebra::{Matrix3, Matrix4, SMatrix, Vector4};

use crate::geometry::{undistort_pixel, CameraIntrinsics, Vec2, Vec3, ViewPose};
use crate::{Error, Result};

/// Minimum ray angle accepted by [`triangulate`].
pub const MIN_TRIANGULATION_ANGLE_DEG: f64 = 0.5;

/// Largest pairwise angle (degrees) between viewing rays from `centers` to `x`.
pub fn max_ray_angle_deg(centers: &[Vec3], x: &Vec3) -> f64 {
    let dirs: Vec<Vec3> = centers.iter().map(|c| (x - c).normalize()).collect();
    let mut best: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.max(dirs[i].angle(&dirs[j]));
        }
    }
    best.to_degrees()
}

/// Largest pairwise angle between world-frame ray directions.
fn max_direction_angle_deg(dirs: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.max(dirs[i].angle(&dirs[j]));
        }
    }
    best.to_degrees()
}

/// Linear triangulation plus one Gauss–Newton refinement of the pixel reprojection error.
pub fn triangulate(views: &[(&ViewPose, &CameraIntrinsics)], pixels: &[Vec2]) -> Result<Vec3> {
    triangulate_with(views, pixels, MIN_TRIANGULATION_ANGLE_DEG)
}

pub fn triangulate_with(
    views: &[(&ViewPose, &CameraIntrinsics)],
    pixels: &[Vec2],
    min_angle_deg: f64,
) -> Result<Vec3> {
    if views.len() < 2 || views.len() != pixels.len() {
        return Err(Error::validation(format!(
            "triangulation needs >= 2 views with one pixel each, got {} views / {} pixels",
            views.len(),
            pixels.len()
        )));
    }
    let mut normalized = Vec::with_capacity(views.len());
    for ((_, intr), px) in views.iter().zip(pixels) {
        normalized.push(undistort_pixel(intr, px)?);
    }
    let dirs: Vec<Vec3> = views
        .iter()
        .zip(&normalized)
        .map(|((pose, _), n)| pose.rotation.rotate(&Vec3::new(n.x, n.y, 1.0)).normalize())
        .collect();
    let angle = max_direction_angle_deg(&dirs);
    if angle < min_angle_deg {
        return Err(Error::LowParallax {
            angle_deg: angle,
            min_deg: min_angle_deg,
        });
    }

    // DLT in coordinates centered on the first camera for conditioning.
    let origin = views[0].0.center;
    let mut ata = Matrix4::<f64>::zeros();
    for ((pose, _), n) in views.iter().zip(&normalized) {
        let rt = pose.rotation.transpose_matrix();
        let t = -(rt * (pose.center - origin));
        let mut p = SMatrix::<f64, 3, 4>::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        p.set_column(3, &t);
        let r1 = p.row(2) * n.x - p.row(0);
        let r2 = p.row(2) * n.y - p.row(1);
        let r1n = r1.norm().max(f64::MIN_POSITIVE);
        let r2n = r2.norm().max(f64::MIN_POSITIVE);
        ata += r1.transpose() * r1 / (r1n * r1n) + r2.transpose() * r2 / (r2n * r2n);
    }
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let h: Vector4<f64> = eig.eigenvectors.column(k).into();
    if h[3].abs() < 1e-300 {
        return Err(Error::degenerate("triangulated point at infinity"));
    }
    let mut x = Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]) + origin;

    x = gauss_newton_point(views, pixels, &x).unwrap_or(x);

    for (pose, _) in views {
        let depth = pose.world_to_camera(&x).z;
        if !(depth > 0.0) {
            return Err(Error::Cheirality { depth });
        }
    }
    Ok(x)
}

/// One Gauss–Newton step on the pixel reprojection error of a point.
fn gauss_newton_point(views: &[(&ViewPose, &CameraIntrinsics)], pixels: &[Vec2], x: &Vec3) -> Option<Vec3> {
    let mut jtj = Matrix3::<f64>::zeros();
    let mut jtr = Vec3::zeros();
    let mut cost0 = 0.0;
    for ((pose, intr), obs) in views.iter().zip(pixels) {
        let lin = crate::optim::residuals::reprojection_linearize_raw(intr, &pose.rotation, &pose.center, x, obs).ok()?;
        jtj += lin.d_point.transpose() * lin.d_point;
        jtr += lin.d_point.transpose() * lin.residual;
        cost0 += lin.residual.norm_squared();
    }
    let step = jtj.cholesky()?.solve(&(-jtr));
    let cand = x + step;
    let mut cost1 = 0.0;
    for ((pose, intr), obs) in views.iter().zip(pixels) {
        let px = crate::geometry::project(intr, pose, &cand).ok()?;
        cost1 += (px - obs).norm_squared();
    }
    (cost1 <= cost0).then_some(cand)
}

/// Triangulates while dropping the worst observation until all reproject within `max_error_px`.
///
/// Returns the point and the indices of the retained observations.
pub fn triangulate_robust(
    views: &[(&ViewPose, &CameraIntrinsics)],
    pixels: &[Vec2],
    max_error_px: f64,
    min_angle_deg: f64,
) -> Result<(Vec3, Vec<usize>)> {
    let mut keep: Vec<usize> = (0..views.len()).collect();
    loop {
        let v: Vec<_> = keep.iter().map(|&i| views[i]).collect();
        let p: Vec<_> = keep.iter().map(|&i| pixels[i]).collect();
        let x = triangulate_with(&v, &p, min_angle_deg)?;
        let mut worst = (0.0, 0);
        for (k, (&(pose, intr), px)) in v.iter().zip(&p).enumerate() {
            let e = match crate::geometry::project(intr, pose, &x) {
                Ok(q) => (q - px).norm(),
                Err(_) => f64::INFINITY,
            };
            if e > worst.0 {
                worst = (e, k);
            }
        }
        if worst.0 <= max_error_px {
            return Ok((x, keep));
        }
        if keep.len() <= 2 {
            return Err(Error::degenerate(format!(
                "triangulated point reprojects {:.3} px from its observations",
                worst.0
            )));
        }
        keep.remove(worst.1);
    }
}
