//! Residual kinds with analytic Jacobians.
//!
//! Pose Jacobians are taken with respect to the left tangent perturbation
//! `R <- exp(δθ) R` of the world-from-camera rotation followed by the additive
//! center update `C <- C + δc`; the 6 columns are ordered `[δθ, δc]`.

use nalgebra::{Matrix2x3, SMatrix, SVector, Vector2, Vector3};

use crate::geometry::{skew, slot_rotation, CameraIntrinsics, Mat3, Rotation, Vec2, Vec3, ViewPose};
use crate::{Error, Result};

pub type Matrix2x6 = SMatrix<f64, 2, 6>;
pub type Matrix2x8 = SMatrix<f64, 2, 8>;
pub type Matrix3x6 = SMatrix<f64, 3, 6>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Vector9 = SVector<f64, 9>;

#[derive(Clone, Debug)]
pub struct ReprojectionLinearization {
    pub residual: Vec2,
    pub d_pose: Matrix2x6,
    pub d_point: Matrix2x3<f64>,
    /// Columns ordered fx, fy, px, py, k1, k2, p1, p2.
    pub d_intrinsics: Matrix2x8,
}

/// `project(intr, pose, point) − observation`.
pub fn reprojection_residual(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    point: &Vec3,
    observation: &Vec2,
) -> Result<Vec2> {
    Ok(crate::geometry::project(intr, pose, point)? - observation)
}

pub(crate) fn reprojection_linearize_raw(
    intr: &CameraIntrinsics,
    rotation: &Rotation,
    center: &Vec3,
    point: &Vec3,
    observation: &Vec2,
) -> Result<ReprojectionLinearization> {
    let rel = point - center;
    let rt = rotation.transpose_matrix();
    let pc = rt * rel;
    if !(pc.z > 0.0) {
        return Err(Error::Cheirality { depth: pc.z });
    }
    let iz = 1.0 / pc.z;
    let x = Vector2::new(pc.x * iz, pc.y * iz);
    let xd = intr.distort(&x);
    let pixel = intr.normalized_to_pixel(&xd);

    let d_norm_d_pc = Matrix2x3::new(iz, 0.0, -x.x * iz, 0.0, iz, -x.y * iz);
    let d_dist = intr.distort_jacobian(&x);
    let focal = nalgebra::Matrix2::new(intr.fx, 0.0, 0.0, intr.fy);
    let d_pix_d_pc = focal * d_dist * d_norm_d_pc;

    let d_pc_d_theta = rt * skew(&rel);
    let mut d_pose = Matrix2x6::zeros();
    d_pose
        .fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(d_pix_d_pc * d_pc_d_theta));
    d_pose
        .fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(-(d_pix_d_pc * rt)));
    let d_point = d_pix_d_pc * rt;

    let r2 = x.norm_squared();
    let r4 = r2 * r2;
    #[rustfmt::skip]
    let d_intrinsics = Matrix2x8::from_row_slice(&[
        xd.x, 0.0, 1.0, 0.0, intr.fx * x.x * r2, intr.fx * x.x * r4, intr.fx * 2.0 * x.x * x.y, intr.fx * (r2 + 2.0 * x.x * x.x),
        0.0, xd.y, 0.0, 1.0, intr.fy * x.y * r2, intr.fy * x.y * r4, intr.fy * (r2 + 2.0 * x.y * x.y), intr.fy * 2.0 * x.x * x.y,
    ]);

    Ok(ReprojectionLinearization {
        residual: pixel - observation,
        d_pose,
        d_point,
        d_intrinsics,
    })
}

/// Reprojection residual with Jacobians for pose, point and all eight intrinsics.
pub fn reprojection_linearize(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    point: &Vec3,
    observation: &Vec2,
) -> Result<ReprojectionLinearization> {
    reprojection_linearize_raw(intr, &pose.rotation, &pose.center, point, observation)
}

/// Relative rotation `R_bᵀ R_a` between consecutive slots of an ideal panorama.
///
/// This is the yaw step `2π/T` about the panorama up axis, expressed in the
/// camera frame; it is the same for every consecutive pair.
pub fn slot_relative_rotation(views_per_pano: usize) -> Mat3 {
    slot_rotation(views_per_pano, 1).transpose_matrix() * slot_rotation(views_per_pano, 0).matrix()
}

#[derive(Clone, Debug)]
pub struct PanoResiduals {
    /// `center(b) − center(a)`.
    pub translation: Vec3,
    /// Column-major vectorization of `R_bᵀ R_a − target`.
    pub rotation: Vector9,
}

#[derive(Clone, Debug)]
pub struct PanoLinearization {
    pub residuals: PanoResiduals,
    pub d_trans_a: Matrix3x6,
    pub d_trans_b: Matrix3x6,
    pub d_rot_a: Matrix9x6,
    pub d_rot_b: Matrix9x6,
}

fn check_consecutive(view_a: &ViewPose, view_b: &ViewPose, views_per_pano: usize) -> Result<()> {
    match (&view_a.pano, &view_b.pano) {
        (Some(a), Some(b)) if a.pano_id == b.pano_id => {
            if b.slot != a.slot + 1 || b.slot >= views_per_pano {
                return Err(Error::Usage(format!(
                    "pano residuals need consecutive slots (j-1, j), got ({}, {})",
                    a.slot, b.slot
                )));
            }
            Ok(())
        }
        (Some(a), Some(b)) => Err(Error::Usage(format!(
            "pano residuals across panoramas {} and {}",
            a.pano_id, b.pano_id
        ))),
        _ => Err(Error::Usage("pano residuals need panorama views".into())),
    }
}

pub(crate) fn pano_linearize_raw(
    rot_a: &Rotation,
    center_a: &Vec3,
    rot_b: &Rotation,
    center_b: &Vec3,
    target: &Mat3,
) -> PanoLinearization {
    let ra = rot_a.matrix();
    let rbt = rot_b.transpose_matrix();
    let rel = rbt * ra;
    let diff = rel - target;
    let mut d_rot_a = Matrix9x6::zeros();
    let mut d_rot_b = Matrix9x6::zeros();
    for k in 0..3 {
        let d = rbt * skew(&Vector3::ith(k, 1.0)) * ra;
        let col = Vector9::from_column_slice(d.as_slice());
        d_rot_a.set_column(k, &col);
        d_rot_b.set_column(k, &(-col));
    }
    let mut d_trans_a = Matrix3x6::zeros();
    let mut d_trans_b = Matrix3x6::zeros();
    d_trans_a
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-Mat3::identity()));
    d_trans_b
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Mat3::identity());
    PanoLinearization {
        residuals: PanoResiduals {
            translation: center_b - center_a,
            rotation: Vector9::from_column_slice(diff.as_slice()),
        },
        d_trans_a,
        d_trans_b,
        d_rot_a,
        d_rot_b,
    }
}

/// Panoramic constraint residuals between slot `j−1` (`view_a`) and slot `j` (`view_b`).
pub fn pano_residuals(view_a: &ViewPose, view_b: &ViewPose, views_per_pano: usize) -> Result<PanoResiduals> {
    Ok(pano_linearize(view_a, view_b, views_per_pano)?.residuals)
}

pub fn pano_linearize(view_a: &ViewPose, view_b: &ViewPose, views_per_pano: usize) -> Result<PanoLinearization> {
    check_consecutive(view_a, view_b, views_per_pano)?;
    Ok(pano_linearize_raw(
        &view_a.rotation,
        &view_a.center,
        &view_b.rotation,
        &view_b.center,
        &slot_relative_rotation(views_per_pano),
    ))
}
