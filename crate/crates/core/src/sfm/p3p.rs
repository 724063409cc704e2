//! Lambda Twist P3P and RANSAC absolute pose registration.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{CameraIntrinsics, Rotation, Vec2, Vec3, ViewPose};
use crate::optim::{solve_lm, IntrinsicsParam, LmOptions, PoseParam, Problem, ResidualKind, RobustLoss};
use crate::ransac::{ransac, RansacOptions};
use crate::{Error, Result};

/// Camera-from-world candidates `(R, t)` with `λ_i f_i = R x_i + t`.
pub fn p3p(world: &[Vec3; 3], bearings: &[Vec3; 3]) -> Vec<(Matrix3<f64>, Vec3)> {
    let [x1, x2, x3] = *world;
    let f1 = bearings[0].normalize();
    let f2 = bearings[1].normalize();
    let f3 = bearings[2].normalize();

    let d12 = x1 - x2;
    let d13 = x1 - x3;
    let d23 = x2 - x3;
    let d12xd13 = d12.cross(&d13);
    let a12 = d12.norm_squared();
    let a13 = d13.norm_squared();
    let a23 = d23.norm_squared();

    let c12 = f1.dot(&f2);
    let c23 = f2.dot(&f3);
    let c31 = f3.dot(&f1);
    let blob = c12 * c23 * c31 - 1.0;
    let s12_sq = 1.0 - c12 * c12;
    let s23_sq = 1.0 - c23 * c23;
    let s31_sq = 1.0 - c31 * c31;
    let b12 = -2.0 * c12;
    let b13 = -2.0 * c31;
    let b23 = -2.0 * c23;

    let p3 = a13 * (a23 * s31_sq - a13 * s23_sq);
    let p2 = 2.0 * blob * a23 * a13 + a13 * (2.0 * a12 + a13) * s23_sq + a23 * (a23 - a12) * s31_sq;
    let p1 = a23 * (a13 - a23) * s12_sq - a12 * a12 * s23_sq - 2.0 * a12 * (blob * a23 + a13 * s23_sq);
    let p0 = a12 * (a12 * s23_sq - a23 * s12_sq);
    if p3.abs() < 1e-300 {
        return Vec::new();
    }
    let g = cubic_root(p2 / p3, p1 / p3, p0 / p3);

    #[rustfmt::skip]
    let d0 = Matrix3::new(
        a23 * (1.0 - g), -(a23 * c12), a23 * c31 * g,
        -(a23 * c12), a23 - a12 + a13 * g, -c23 * (a13 * g - a12),
        a23 * c31 * g, -c23 * (a13 * g - a12), g * (a13 - a23) - a12,
    );
    let (evec, eval) = eigen_singular(&d0);
    let ratio = (-eval[1] / eval[0]).max(0.0).sqrt();

    let mut lambdas: Vec<Vec3> = Vec::with_capacity(4);
    for r in [ratio, -ratio] {
        let w2 = 1.0 / (r * evec[(0, 1)] - evec[(0, 0)]);
        let w0 = w2 * (evec[(1, 0)] - r * evec[(1, 1)]);
        let w1 = w2 * (evec[(2, 0)] - r * evec[(2, 1)]);
        let a = 1.0 / ((a13 - a12) * w1 * w1 - a12 * b13 * w1 - a12);
        let b = a * (a13 * b12 * w1 - a12 * b13 * w0 - 2.0 * w0 * w1 * (a12 - a13));
        let c = a * ((a13 - a12) * w0 * w0 + a13 * b12 * w0 + a13);
        if !(b * b - 4.0 * c >= 0.0) {
            continue;
        }
        let (_, tau1, tau2) = quadratic_roots(b, c);
        for tau in [tau1, tau2] {
            if tau <= 0.0 {
                continue;
            }
            let d = a23 / (tau * (b23 + tau) + 1.0);
            if d > 0.0 {
                let l2 = d.sqrt();
                let l3 = tau * l2;
                let l1 = w0 * l2 + w1 * l3;
                if l1 >= 0.0 {
                    lambdas.push(Vec3::new(l1, l2, l3));
                }
            }
        }
    }

    let xm = Matrix3::from_columns(&[d12, d13, d12xd13]);
    let Some(xinv) = xm.try_inverse() else {
        return Vec::new();
    };
    lambdas
        .into_iter()
        .filter_map(|l| {
            let l = refine_lambda(l, a12, a13, a23, b12, b13, b23);
            let (y1, y2, y3) = (l[0] * f1, l[1] * f2, l[2] * f3);
            let e1 = y1 - y2;
            let e2 = y1 - y3;
            let ym = Matrix3::from_columns(&[e1, e2, e1.cross(&e2)]);
            let r = ym * xinv;
            let r = Rotation::from_matrix(&r).ok()?;
            let rm = *r.matrix();
            let t = y1 - rm * x1;
            t.iter().all(|v| v.is_finite()).then_some((rm, t))
        })
        .collect()
}

fn refine_lambda(lambda: Vec3, a12: f64, a13: f64, a23: f64, b12: f64, b13: f64, b23: f64) -> Vec3 {
    let residual = |l: &Vec3| {
        Vec3::new(
            l.x * l.x + l.y * l.y + b12 * l.x * l.y - a12,
            l.x * l.x + l.z * l.z + b13 * l.x * l.z - a13,
            l.y * l.y + l.z * l.z + b23 * l.y * l.z - a23,
        )
    };
    let l1n = |v: &Vec3| v.x.abs() + v.y.abs() + v.z.abs();
    let mut l = lambda;
    let mut res = residual(&l);
    for _ in 0..5 {
        if l1n(&res) < 1e-14 {
            break;
        }
        #[rustfmt::skip]
        let j = Matrix3::new(
            2.0 * l.x + b12 * l.y, 2.0 * l.y + b12 * l.x, 0.0,
            2.0 * l.x + b13 * l.z, 0.0, 2.0 * l.z + b13 * l.x,
            0.0, 2.0 * l.y + b23 * l.z, 2.0 * l.z + b23 * l.y,
        );
        let Some(inv) = j.try_inverse() else {
            break;
        };
        let cand = l - inv * res;
        let cres = residual(&cand);
        if l1n(&cres) > l1n(&res) {
            break;
        }
        l = cand;
        res = cres;
    }
    l
}

fn quadratic_roots(b: f64, c: f64) -> (bool, f64, f64) {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        let r = 0.5 * b;
        return (false, r, r);
    }
    let y = disc.sqrt();
    if b < 0.0 {
        (true, 0.5 * (-b + y), 0.5 * (-b - y))
    } else {
        (true, 2.0 * c / (-b + y), 2.0 * c / (-b - y))
    }
}

/// One real root of `r³ + b r² + c r + d`, chosen where the derivative is large.
fn cubic_root(b: f64, c: f64, d: f64) -> f64 {
    let h = |r: f64| ((r + b) * r + c) * r + d;
    let mut r0;
    if b * b >= 3.0 * c {
        let v = (b * b - 3.0 * c).sqrt();
        let t1 = (-b - v) / 3.0;
        let k = h(t1);
        if k > 0.0 {
            r0 = t1 - (-k / (3.0 * t1 + b)).sqrt();
        } else {
            let t2 = (-b + v) / 3.0;
            let k = h(t2);
            r0 = t2 + (-k / (3.0 * t2 + b)).sqrt();
        }
    } else {
        r0 = -b / 3.0;
        if ((3.0 * r0 + 2.0 * b) * r0 + c).abs() < 1e-4 {
            r0 += 1.0;
        }
    }
    for i in 0..50 {
        let fx = h(r0);
        if i >= 7 && fx.abs() <= 1e-13 {
            break;
        }
        let fpx = (3.0 * r0 + 2.0 * b) * r0 + c;
        if fpx == 0.0 {
            break;
        }
        r0 -= fx / fpx;
    }
    r0
}

/// Eigen decomposition of a symmetric matrix with one zero eigenvalue.
fn eigen_singular(x: &Matrix3<f64>) -> (Matrix3<f64>, Vec3) {
    let v3 = Vector3::new(
        x[(0, 1)] * x[(1, 2)] - x[(0, 2)] * x[(1, 1)],
        x[(0, 2)] * x[(0, 1)] - x[(1, 2)] * x[(0, 0)],
        x[(1, 1)] * x[(0, 0)] - x[(0, 1)] * x[(0, 1)],
    )
    .normalize();
    let x01_sq = x[(0, 1)] * x[(0, 1)];
    let b = -x[(0, 0)] - x[(1, 1)] - x[(2, 2)];
    let c = -x01_sq - x[(0, 2)] * x[(0, 2)] - x[(1, 2)] * x[(1, 2)]
        + x[(0, 0)] * (x[(1, 1)] + x[(2, 2)])
        + x[(1, 1)] * x[(2, 2)];
    let (_, mut e1, mut e2) = quadratic_roots(b, c);
    if e1.abs() < e2.abs() {
        std::mem::swap(&mut e1, &mut e2);
    }
    let mx0011 = -x[(0, 0)] * x[(1, 1)];
    let prec0 = x[(0, 1)] * x[(1, 2)] - x[(0, 2)] * x[(1, 1)];
    let prec1 = x[(0, 1)] * x[(0, 2)] - x[(0, 0)] * x[(1, 2)];
    let vec_for = |e: f64| {
        let tmp = 1.0 / (e * (x[(0, 0)] + x[(1, 1)]) + mx0011 - e * e + x01_sq);
        let a1 = -(e * x[(0, 2)] + prec0) * tmp;
        let a2 = -(e * x[(1, 2)] + prec1) * tmp;
        let rn = 1.0 / (a1 * a1 + a2 * a2 + 1.0).sqrt();
        Vector3::new(a1 * rn, a2 * rn, rn)
    };
    (
        Matrix3::from_columns(&[vec_for(e1), vec_for(e2), v3]),
        Vec3::new(e1, e2, 0.0),
    )
}

/// Converts a camera-from-world `(R, t)` into a [`ViewPose`].
pub fn pose_from_rt(r: &Matrix3<f64>, t: &Vec3) -> ViewPose {
    let rot = Rotation::from_matrix_unchecked(r.transpose()).renormalized();
    ViewPose::new(rot, -(r.transpose() * t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpOptions {
    pub threshold_px: f64,
    pub ransac: RansacOptions,
}

impl Default for PnpOptions {
    fn default() -> Self {
        PnpOptions {
            threshold_px: 2.0,
            ransac: RansacOptions::default(),
        }
    }
}

fn reprojection_error(intr: &CameraIntrinsics, pose: &ViewPose, x: &Vec3, px: &Vec2) -> f64 {
    match crate::geometry::project(intr, pose, x) {
        Ok(p) => (p - px).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Pose-only Levenberg–Marquardt on the given correspondences with fixed points and intrinsics.
pub fn refine_pose(
    pose: &ViewPose,
    points: &[Vec3],
    pixels: &[Vec2],
    intr: &CameraIntrinsics,
    loss: RobustLoss,
) -> Result<ViewPose> {
    let mut problem = Problem::default();
    let pb = problem.add_pose(PoseParam::new(pose.rotation, pose.center));
    let v = problem.add_view(pb, Rotation::identity());
    let ii = problem.add_intrinsics(IntrinsicsParam::fixed(*intr));
    for (x, px) in points.iter().zip(pixels) {
        let p = problem.add_point(*x, false);
        problem.add_residual(
            ResidualKind::Reprojection {
                view: v,
                point: p,
                intrinsics: ii,
                observed: *px,
            },
            1.0,
            loss,
        );
    }
    let (params, _) = solve_lm(&problem, &LmOptions::default())?;
    let (r, c) = params.poses[0];
    Ok(ViewPose {
        rotation: r,
        center: c,
        pano: pose.pano.clone(),
    })
}

/// P3P inside RANSAC, disambiguated by a fourth point and refined on the inliers.
pub fn register_view_p3p(
    points: &[Vec3],
    pixels: &[Vec2],
    intr: &CameraIntrinsics,
    opts: &PnpOptions,
) -> Result<(ViewPose, Vec<bool>)> {
    let n = points.len();
    if n < 4 || pixels.len() != n {
        return Err(Error::validation(format!(
            "absolute pose needs >= 4 2D-3D correspondences, got {n}"
        )));
    }
    let bearings: Vec<Vec3> = pixels
        .iter()
        .map(|p| {
            let xd = intr.pixel_to_normalized(p);
            let x = intr.undistort_normalized(&xd).unwrap_or(xd);
            Vec3::new(x.x, x.y, 1.0)
        })
        .collect();
    let thr = opts.threshold_px;
    let res = ransac(
        n,
        4,
        &opts.ransac,
        |s| {
            let world = [points[s[0]], points[s[1]], points[s[2]]];
            let rays = [bearings[s[0]], bearings[s[1]], bearings[s[2]]];
            p3p(&world, &rays)
                .into_iter()
                .map(|(r, t)| pose_from_rt(&r, &t))
                .map(|p| (reprojection_error(intr, &p, &points[s[3]], &pixels[s[3]]), p))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, p)| p)
                .into_iter()
                .collect()
        },
        |pose, i| reprojection_error(intr, pose, &points[i], &pixels[i]) < thr,
    );
    let Some(res) = res.filter(|r| r.num_inliers >= 4) else {
        return Err(Error::LocalizationFailed(format!(
            "no pose with >= 4 inliers among {n} correspondences"
        )));
    };
    let mut pose = res.model;
    let mut inliers = res.inliers;
    for _ in 0..3 {
        let idx: Vec<usize> = (0..n).filter(|&i| inliers[i]).collect();
        let pts: Vec<Vec3> = idx.iter().map(|&i| points[i]).collect();
        let pxs: Vec<Vec2> = idx.iter().map(|&i| pixels[i]).collect();
        let refined = refine_pose(&pose, &pts, &pxs, intr, RobustLoss::None)?;
        let new_inliers: Vec<bool> = (0..n)
            .map(|i| reprojection_error(intr, &refined, &points[i], &pixels[i]) < thr)
            .collect();
        if new_inliers.iter().filter(|b| **b).count() < idx.len() {
            break;
        }
        pose = refined;
        let stable = new_inliers == inliers;
        inliers = new_inliers;
        if stable {
            break;
        }
    }
    Ok((pose, inliers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::pinhole(900.0, 900.0, 640.0, 360.0, 1280, 720)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> ViewPose {
        let r = Rotation::exp(&Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        ));
        ViewPose::new(r, Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
    }

    fn visible_points(rng: &mut ChaCha8Rng, pose: &ViewPose, n: usize) -> (Vec<Vec3>, Vec<Vec2>) {
        let k = intr();
        let (mut pts, mut px) = (Vec::new(), Vec::new());
        while pts.len() < n {
            let pc = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-2.5..2.5), rng.random_range(3.0..15.0));
            let x = pose.camera_to_world(&pc);
            let p = project(&k, pose, &x).unwrap();
            if k.contains(&p) {
                pts.push(x);
                px.push(p);
            }
        }
        (pts, px)
    }

    #[test]
    fn minimal_solver_contains_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ok = 0;
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let (pts, _) = visible_points(&mut rng, &pose, 3);
            let bearings = [0, 1, 2].map(|i| pose.world_to_camera(&pts[i]));
            let sols = p3p(&[pts[0], pts[1], pts[2]], &bearings);
            let hit = sols.iter().any(|(r, t)| {
                let est = pose_from_rt(r, t);
                est.rotation.angle_to(&pose.rotation) < 1e-6 && (est.center - pose.center).norm() < 1e-6
            });
            ok += hit as usize;
        }
        assert!(ok >= 999, "{ok}/1000");
    }

    #[test]
    fn exact_correspondences_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = random_pose(&mut rng);
        let (pts, px) = visible_points(&mut rng, &pose, 100);
        let (est, inl) = register_view_p3p(&pts, &px, &intr(), &PnpOptions::default()).unwrap();
        assert!(inl.iter().all(|b| *b));
        assert!(est.rotation.angle_to(&pose.rotation) < 1e-8);
        assert!((est.center - pose.center).norm() < 1e-8);
    }

    #[test]
    fn camera_at_origin_fixpoint() {
        let k = intr();
        let pose = ViewPose::identity();
        let pts: Vec<Vec3> = [(0.0, 0.0, 5.0), (1.0, 0.0, 6.0), (-1.0, 0.5, 7.0), (0.0, -1.0, 8.0), (0.5, 0.5, 4.0), (-0.7, -0.3, 9.0)]
            .iter()
            .map(|&(x, y, z)| Vec3::new(x, y, z))
            .collect();
        let px: Vec<Vec2> = pts.iter().map(|x| project(&k, &pose, x).unwrap()).collect();
        let (est, _) = register_view_p3p(&pts, &px, &k, &PnpOptions::default()).unwrap();
        assert!(est.center.norm() < 1e-9);
        assert!(est.rotation.angle() < 1e-9);
    }

    #[test]
    fn outlier_mask_matches_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(&mut rng);
        let k = intr();
        let (pts, mut px) = visible_points(&mut rng, &pose, 1000);
        let mut outlier = vec![false; px.len()];
        for i in 0..px.len() {
            if i % 5 < 2 {
                loop {
                    let cand = Vec2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..720.0));
                    if (cand - px[i]).norm() > 10.0 {
                        px[i] = cand;
                        break;
                    }
                }
                outlier[i] = true;
            }
        }
        let (est, inl) = register_view_p3p(&pts, &px, &k, &PnpOptions::default()).unwrap();
        assert_eq!(inl, outlier.iter().map(|o| !o).collect::<Vec<_>>());
        assert!(est.rotation.angle_to(&pose.rotation) < 1e-8);
    }

    #[test]
    fn too_few_points_is_input_error() {
        let k = intr();
        let pts = vec![Vec3::new(0.0, 0.0, 5.0); 3];
        let px = vec![Vec2::new(640.0, 360.0); 3];
        assert!(matches!(
            register_view_p3p(&pts, &px, &k, &PnpOptions::default()),
            Err(Error::Validation(_))
        ));
    }
}
