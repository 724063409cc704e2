//! Levenberg–Marquardt with Schur elimination of point blocks.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, SMatrix, Vector3};
use rayon::prelude::*;

use super::problem::{Params, Problem, ResidualKind, RobustLoss};
use super::residuals::{pano_linearize_raw, reprojection_linearize_raw, Matrix2x6, Matrix2x8, Vector9};
use crate::geometry::{Rotation, Vec2, Vec3, INTRINSIC_NAMES};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub gradient_tol: f64,
    pub param_tol: f64,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub function_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            gradient_tol: 1e-10,
            param_tol: 1e-12,
            function_tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    TrustRegionCollapse,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
            Termination::TrustRegionCollapse => "trust_region_collapse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Cost before the first step and after each accepted step.
    pub cost_trace: Vec<f64>,
    /// Blocks skipped at the initial linearization because of cheirality.
    pub invalid_blocks: usize,
}

const MAX_LAMBDA: f64 = 1e16;
const MIN_LAMBDA: f64 = 1e-15;
const DIAG_MIN: f64 = 1e-6;
const DIAG_MAX: f64 = 1e32;

type Matrix9x6 = SMatrix<f64, 9, 6>;

/// Linearized, robustly reweighted residual block.
enum Lin {
    Invalid,
    Reproj {
        r: Vec2,
        pose: usize,
        jp: Matrix2x6,
        point: usize,
        jx: nalgebra::Matrix2x3<f64>,
        intr: usize,
        ji: Matrix2x8,
    },
    PanoT {
        r: Vec3,
        a: usize,
        ja: Matrix3x6<f64>,
        b: usize,
        jb: Matrix3x6<f64>,
    },
    PanoR {
        r: Vector9,
        a: usize,
        ja: Matrix9x6,
        b: usize,
        jb: Matrix9x6,
    },
}

struct Layout {
    pose_off: Vec<Option<usize>>,
    intr_off: Vec<Option<usize>>,
    point_slot: Vec<Option<usize>>,
    n_cam: usize,
    n_points: usize,
    frozen_cam: Vec<usize>,
}

impl Layout {
    fn new(problem: &Problem) -> Layout {
        let mut n = 0;
        let mut frozen_cam = Vec::new();
        let pose_off = problem
            .poses
            .iter()
            .map(|p| {
                p.any_free().then(|| {
                    let off = n;
                    frozen_cam.extend((0..6).filter(|&k| !p.free[k]).map(|k| off + k));
                    n += 6;
                    off
                })
            })
            .collect();
        let intr_off = problem
            .intrinsics
            .iter()
            .map(|p| {
                p.any_free().then(|| {
                    let off = n;
                    frozen_cam.extend((0..8).filter(|&k| !p.free[k]).map(|k| off + k));
                    n += 8;
                    off
                })
            })
            .collect();
        let mut np = 0;
        let point_slot = problem
            .points
            .iter()
            .map(|p| {
                p.free.then(|| {
                    np += 1;
                    np - 1
                })
            })
            .collect();
        Layout {
            pose_off,
            intr_off,
            point_slot,
            n_cam: n,
            n_points: np,
            frozen_cam,
        }
    }

    fn block_name(&self, problem: &Problem, index: usize) -> String {
        for (i, off) in self.pose_off.iter().enumerate() {
            if let Some(o) = *off {
                if (o..o + 6).contains(&index) {
                    let dof = ["rx", "ry", "rz", "cx", "cy", "cz"][index - o];
                    let label = &problem.poses[i].label;
                    return if label.is_empty() {
                        format!("pose {i} ({dof})")
                    } else {
                        format!("pose {i} [{label}] ({dof})")
                    };
                }
            }
        }
        for (i, off) in self.intr_off.iter().enumerate() {
            if let Some(o) = *off {
                if (o..o + 8).contains(&index) {
                    return format!("intrinsics {i} ({})", INTRINSIC_NAMES[index - o]);
                }
            }
        }
        format!("parameter {index}")
    }
}

/// Robust weight: returns (cost, sqrt of the IRLS scale).
fn robust(weight: f64, loss: RobustLoss, s: f64) -> (f64, f64) {
    let (rho, drho) = loss.evaluate(s);
    (0.5 * weight * rho, (weight * drho).sqrt())
}

fn view_pose(problem: &Problem, params: &Params, view: usize) -> (usize, Rotation, Vec3) {
    let link = &problem.views[view];
    let (r, c) = &params.poses[link.pose];
    (link.pose, r.compose(&link.offset), *c)
}

fn block_cost(problem: &Problem, params: &Params, idx: usize) -> Option<f64> {
    let block = &problem.residuals[idx];
    match &block.kind {
        ResidualKind::Reprojection {
            view,
            point,
            intrinsics,
            observed,
        } => {
            let (_, r, c) = view_pose(problem, params, *view);
            let pc = r.inverse_rotate(&(params.points[*point] - c));
            if !(pc.z > 0.0) {
                return None;
            }
            let intr = &params.intrinsics[*intrinsics];
            let px = intr.normalized_to_pixel(&intr.distort(&Vec2::new(pc.x / pc.z, pc.y / pc.z)));
            Some(robust(block.weight, block.loss, (px - observed).norm_squared()).0)
        }
        ResidualKind::PanoTranslation { view_a, view_b } => {
            let (_, _, ca) = view_pose(problem, params, *view_a);
            let (_, _, cb) = view_pose(problem, params, *view_b);
            Some(robust(block.weight, block.loss, (cb - ca).norm_squared()).0)
        }
        ResidualKind::PanoRotation {
            view_a,
            view_b,
            target,
        } => {
            let (_, ra, _) = view_pose(problem, params, *view_a);
            let (_, rb, _) = view_pose(problem, params, *view_b);
            let d = rb.transpose_matrix() * ra.matrix() - target;
            Some(robust(block.weight, block.loss, d.norm_squared()).0)
        }
    }
}

fn linearize(problem: &Problem, params: &Params, idx: usize) -> (Lin, f64) {
    let block = &problem.residuals[idx];
    match &block.kind {
        ResidualKind::Reprojection {
            view,
            point,
            intrinsics,
            observed,
        } => {
            let (pose, r, c) = view_pose(problem, params, *view);
            let Ok(lin) = reprojection_linearize_raw(
                &params.intrinsics[*intrinsics],
                &r,
                &c,
                &params.points[*point],
                observed,
            ) else {
                return (Lin::Invalid, 0.0);
            };
            let (cost, sw) = robust(block.weight, block.loss, lin.residual.norm_squared());
            (
                Lin::Reproj {
                    r: lin.residual * sw,
                    pose,
                    jp: lin.d_pose * sw,
                    point: *point,
                    jx: lin.d_point * sw,
                    intr: *intrinsics,
                    ji: lin.d_intrinsics * sw,
                },
                cost,
            )
        }
        ResidualKind::PanoTranslation { view_a, view_b }
        | ResidualKind::PanoRotation { view_a, view_b, .. } => {
            let (a, ra, ca) = view_pose(problem, params, *view_a);
            let (b, rb, cb) = view_pose(problem, params, *view_b);
            let target = match &block.kind {
                ResidualKind::PanoRotation { target, .. } => *target,
                _ => Matrix3::identity(),
            };
            let lin = pano_linearize_raw(&ra, &ca, &rb, &cb, &target);
            if matches!(block.kind, ResidualKind::PanoTranslation { .. }) {
                let res = lin.residuals.translation;
                let (cost, sw) = robust(block.weight, block.loss, res.norm_squared());
                (
                    Lin::PanoT {
                        r: res * sw,
                        a,
                        ja: lin.d_trans_a * sw,
                        b,
                        jb: lin.d_trans_b * sw,
                    },
                    cost,
                )
            } else {
                let res = lin.residuals.rotation;
                let (cost, sw) = robust(block.weight, block.loss, res.norm_squared());
                (
                    Lin::PanoR {
                        r: res * sw,
                        a,
                        ja: lin.d_rot_a * sw,
                        b,
                        jb: lin.d_rot_b * sw,
                    },
                    cost,
                )
            }
        }
    }
}

/// Per-point Schur data: damped inverse, coupling blocks `J_camᵀ J_point`, and gradient.
#[derive(Clone)]
struct PointBlock {
    v: Matrix3<f64>,
    g: Vector3<f64>,
    /// `(camera offset, ncols, column-major ncols×3)`.
    w: Vec<(usize, usize, [f64; 24])>,
}

impl PointBlock {
    fn new() -> Self {
        PointBlock {
            v: Matrix3::zeros(),
            g: Vector3::zeros(),
            w: Vec::new(),
        }
    }

    fn add_w(&mut self, off: usize, ncols: usize, jc: &[f64], jx: &[f64], m: usize) {
        let idx = match self.w.iter().position(|e| e.0 == off) {
            Some(i) => i,
            None => {
                self.w.push((off, ncols, [0.0; 24]));
                self.w.len() - 1
            }
        };
        let w = &mut self.w[idx].2;
        for a in 0..ncols {
            for b in 0..3 {
                let mut s = 0.0;
                for row in 0..m {
                    s += jc[a * m + row] * jx[b * m + row];
                }
                w[b * ncols + a] += s;
            }
        }
    }
}

struct Normal {
    u: DMatrix<f64>,
    g: DVector<f64>,
    points: Vec<PointBlock>,
}

/// Adds `Σ J_iᵀ J_j` and `Σ J_iᵀ r` for the camera-side parts of one block.
fn accumulate_cam(u: &mut DMatrix<f64>, g: &mut DVector<f64>, parts: &[(usize, usize, &[f64])], r: &[f64]) {
    let m = r.len();
    for &(oi, ci, ji) in parts {
        for a in 0..ci {
            let col = &ji[a * m..(a + 1) * m];
            g[oi + a] += col.iter().zip(r).map(|(x, y)| x * y).sum::<f64>();
            for &(oj, cj, jj) in parts {
                for b in 0..cj {
                    let colb = &jj[b * m..(b + 1) * m];
                    u[(oi + a, oj + b)] += col.iter().zip(colb).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
    }
}

fn zero_frozen_pose(problem: &Problem, pose: usize, j: &mut [f64], m: usize) {
    let free = &problem.poses[pose].free;
    for k in 0..6 {
        if !free[k] {
            j[k * m..(k + 1) * m].fill(0.0);
        }
    }
}

fn build_normal(problem: &Problem, layout: &Layout, lins: &mut [Lin]) -> Normal {
    let n = layout.n_cam;
    let mut u = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut points = vec![PointBlock::new(); layout.n_points];
    for lin in lins.iter_mut() {
        match lin {
            Lin::Invalid => {}
            Lin::Reproj {
                r,
                pose,
                jp,
                point,
                jx,
                intr,
                ji,
            } => {
                zero_frozen_pose(problem, *pose, jp.as_mut_slice(), 2);
                let ifree = &problem.intrinsics[*intr].free;
                for k in 0..8 {
                    if !ifree[k] {
                        ji.column_mut(k).fill(0.0);
                    }
                }
                let mut parts: Vec<(usize, usize, &[f64])> = Vec::with_capacity(2);
                if let Some(o) = layout.pose_off[*pose] {
                    parts.push((o, 6, jp.as_slice()));
                }
                if let Some(o) = layout.intr_off[*intr] {
                    parts.push((o, 8, ji.as_slice()));
                }
                accumulate_cam(&mut u, &mut g, &parts, r.as_slice());
                if let Some(s) = layout.point_slot[*point] {
                    let pb = &mut points[s];
                    pb.v += jx.transpose() * *jx;
                    pb.g += jx.transpose() * *r;
                    for &(o, c, j) in &parts {
                        pb.add_w(o, c, j, jx.as_slice(), 2);
                    }
                }
            }
            Lin::PanoT { r, a, ja, b, jb } => {
                zero_frozen_pose(problem, *a, ja.as_mut_slice(), 3);
                zero_frozen_pose(problem, *b, jb.as_mut_slice(), 3);
                let mut parts: Vec<(usize, usize, &[f64])> = Vec::with_capacity(2);
                if let Some(o) = layout.pose_off[*a] {
                    parts.push((o, 6, ja.as_slice()));
                }
                if let Some(o) = layout.pose_off[*b] {
                    parts.push((o, 6, jb.as_slice()));
                }
                accumulate_cam(&mut u, &mut g, &parts, r.as_slice());
            }
            Lin::PanoR { r, a, ja, b, jb } => {
                zero_frozen_pose(problem, *a, ja.as_mut_slice(), 9);
                zero_frozen_pose(problem, *b, jb.as_mut_slice(), 9);
                let mut parts: Vec<(usize, usize, &[f64])> = Vec::with_capacity(2);
                if let Some(o) = layout.pose_off[*a] {
                    parts.push((o, 6, ja.as_slice()));
                }
                if let Some(o) = layout.pose_off[*b] {
                    parts.push((o, 6, jb.as_slice()));
                }
                accumulate_cam(&mut u, &mut g, &parts, r.as_slice());
            }
        }
    }
    Normal { u, g, points }
}

/// In-place lower Cholesky; on failure returns the failing pivot.
fn cholesky_in_place(a: &mut DMatrix<f64>) -> std::result::Result<(), usize> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

enum StepError {
    /// Camera system pivot index.
    Camera(usize),
    Point(usize),
}

fn damp(x: f64, lambda: f64) -> f64 {
    x + lambda * x.clamp(DIAG_MIN, DIAG_MAX)
}

/// Solves the damped system; returns (camera step, point steps).
fn solve_step(
    normal: &Normal,
    layout: &Layout,
    lambda: f64,
) -> std::result::Result<(DVector<f64>, Vec<Vector3<f64>>), StepError> {
    let n = layout.n_cam;
    let mut s = normal.u.clone();
    for i in 0..n {
        s[(i, i)] = damp(normal.u[(i, i)], lambda);
    }
    let mut rhs = -normal.g.clone();

    let mut vinvs = Vec::with_capacity(normal.points.len());
    for (pi, pb) in normal.points.iter().enumerate() {
        let mut v = pb.v;
        for k in 0..3 {
            v[(k, k)] = damp(pb.v[(k, k)], lambda);
        }
        let vinv = v.cholesky().ok_or(StepError::Point(pi))?.inverse();
        let vg = vinv * pb.g;
        for (oa, ca, wa) in &pb.w {
            // W_a is ca×3, column-major.
            let wa_m = nalgebra::DMatrixView::from_slice(&wa[..ca * 3], *ca, 3);
            let wv = wa_m * vinv;
            let t = &wv * vg;
            for i in 0..*ca {
                rhs[oa + i] += t[i];
            }
            for (ob, cb, wb) in &pb.w {
                let wb_m = nalgebra::DMatrixView::from_slice(&wb[..cb * 3], *cb, 3);
                let prod = &wv * wb_m.transpose();
                for i in 0..*ca {
                    for j in 0..*cb {
                        s[(oa + i, ob + j)] -= prod[(i, j)];
                    }
                }
            }
        }
        vinvs.push(vinv);
    }
    for &i in &layout.frozen_cam {
        for j in 0..n {
            s[(i, j)] = 0.0;
            s[(j, i)] = 0.0;
        }
        s[(i, i)] = 1.0;
        rhs[i] = 0.0;
    }
    cholesky_in_place(&mut s).map_err(StepError::Camera)?;
    let dc = cholesky_solve(&s, &rhs);

    let dp = normal
        .points
        .iter()
        .zip(&vinvs)
        .map(|(pb, vinv)| {
            let mut acc = pb.g;
            for (oa, ca, wa) in &pb.w {
                for b in 0..3 {
                    for i in 0..*ca {
                        acc[b] += wa[b * ca + i] * dc[oa + i];
                    }
                }
            }
            -(vinv * acc)
        })
        .collect();
    Ok((dc, dp))
}

fn apply_step(
    layout: &Layout,
    params: &Params,
    dc: &DVector<f64>,
    dp: &[Vector3<f64>],
) -> Params {
    let mut out = params.clone();
    for (i, off) in layout.pose_off.iter().enumerate() {
        if let Some(o) = *off {
            let (r, c) = &mut out.poses[i];
            let dt = Vector3::new(dc[o], dc[o + 1], dc[o + 2]);
            if dt != Vector3::zeros() {
                *r = r.perturb_left(&dt);
            }
            *c += Vector3::new(dc[o + 3], dc[o + 4], dc[o + 5]);
        }
    }
    for (i, off) in layout.intr_off.iter().enumerate() {
        if let Some(o) = *off {
            let mut a = out.intrinsics[i].as_array();
            for (k, v) in a.iter_mut().enumerate() {
                *v += dc[o + k];
            }
            out.intrinsics[i].set_from_array(&a);
        }
    }
    for (i, slot) in layout.point_slot.iter().enumerate() {
        if let Some(s) = *slot {
            out.points[i] += dp[s];
        }
    }
    out
}

fn param_norm(params: &Params) -> f64 {
    let mut s = 0.0;
    for (_, c) in &params.poses {
        s += c.norm_squared();
    }
    for p in &params.points {
        s += p.norm_squared();
    }
    for i in &params.intrinsics {
        s += i.as_array().iter().map(|x| x * x).sum::<f64>();
    }
    s.sqrt()
}

/// Cost over `valid` blocks; `None` when any of them became invalid.
fn total_cost(problem: &Problem, params: &Params, valid: &[bool]) -> Option<f64> {
    let costs: Vec<Option<f64>> = (0..problem.residuals.len())
        .into_par_iter()
        .map(|i| if valid[i] { block_cost(problem, params, i) } else { Some(0.0) })
        .collect();
    let mut sum = 0.0;
    for c in costs {
        sum += c?;
    }
    Some(sum)
}

/// Evaluates the total cost of the problem at its stored parameters; invalid blocks count as zero.
pub fn evaluate_cost(problem: &Problem) -> f64 {
    let params = problem.params();
    (0..problem.residuals.len())
        .map(|i| block_cost(problem, &params, i).unwrap_or(0.0))
        .sum()
}

/// Minimizes the problem from its stored parameters. The input problem is not modified.
pub fn solve_lm(problem: &Problem, options: &LmOptions) -> Result<(Params, SolveReport)> {
    problem.validate()?;
    let layout = Layout::new(problem);
    let mut params = problem.params();
    let mut lambda = options.initial_lambda;

    let linearize_all = |params: &Params, mask: Option<&[bool]>| -> (Vec<Lin>, f64) {
        let out: Vec<(Lin, f64)> = (0..problem.residuals.len())
            .into_par_iter()
            .map(|i| match mask {
                Some(m) if !m[i] => (Lin::Invalid, 0.0),
                _ => linearize(problem, params, i),
            })
            .collect();
        let cost = out.iter().map(|(_, c)| c).sum();
        (out.into_iter().map(|(l, _)| l).collect(), cost)
    };

    // Blocks invalid at the start stay excluded for the whole solve.
    let (mut lins, mut cost) = linearize_all(&params, None);
    let valid: Vec<bool> = lins.iter().map(|l| !matches!(l, Lin::Invalid)).collect();
    let invalid_blocks = valid.iter().filter(|v| !**v).count();
    if invalid_blocks > 0 {
        log::debug!("lm: {invalid_blocks} residual blocks skipped (cheirality)");
    }
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut iterations = 0;
    let termination;

    'outer: loop {
        if iterations >= options.max_iter {
            termination = Termination::MaxIter;
            break;
        }
        let normal = build_normal(problem, &layout, &mut lins);
        let mut gmax = normal.g.amax();
        for p in &normal.points {
            gmax = gmax.max(p.g.amax());
        }
        if gmax <= options.gradient_tol {
            termination = Termination::Converged;
            break;
        }
        loop {
            let step = match solve_step(&normal, &layout, lambda) {
                Ok(s) => s,
                Err(e) => {
                    lambda *= options.lambda_up;
                    if lambda > MAX_LAMBDA {
                        let block = match e {
                            StepError::Camera(i) => layout.block_name(problem, i),
                            StepError::Point(i) => {
                                let idx = layout.point_slot.iter().position(|s| *s == Some(i)).unwrap_or(i);
                                format!("point {idx}")
                            }
                        };
                        return Err(Error::Singular { block });
                    }
                    continue;
                }
            };
            let (dc, dp) = step;
            let step_norm = (dc.norm_squared() + dp.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
            if step_norm <= options.param_tol * (param_norm(&params) + options.param_tol) {
                termination = Termination::Converged;
                break 'outer;
            }
            let cand = apply_step(&layout, &params, &dc, &dp);
            match total_cost(problem, &cand, &valid) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    params = cand;
                    iterations += 1;
                    lambda = (lambda * options.lambda_down).max(MIN_LAMBDA);
                    log::trace!("lm iter {iterations}: cost {cost:.6e} -> {c:.6e}, lambda {lambda:.1e}");
                    cost = c;
                    trace.push(c);
                    if rel < options.function_tol {
                        termination = Termination::Converged;
                        break 'outer;
                    }
                    lins = linearize_all(&params, Some(&valid)).0;
                    break;
                }
                _ => {
                    lambda *= options.lambda_up;
                    if lambda > MAX_LAMBDA {
                        termination = Termination::TrustRegionCollapse;
                        break 'outer;
                    }
                }
            }
        }
    }
    log::debug!(
        "lm: {termination} after {iterations} iterations, cost {initial_cost:.6e} -> {cost:.6e}"
    );
    Ok((
        params,
        SolveReport {
            iterations,
            initial_cost,
            final_cost: cost,
            termination,
            cost_trace: trace,
            invalid_blocks,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, CameraIntrinsics, Mat3, ViewPose};
    use crate::optim::problem::{IntrinsicsParam, PoseParam};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ba_problem(seed: u64, perturb: bool) -> (Problem, Vec<ViewPose>, Vec<Vec3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0, 1280, 720);
        let mut problem = Problem::default();
        let ii = problem.add_intrinsics(IntrinsicsParam::fixed(intr));
        let mut truth = Vec::new();
        for k in 0..5 {
            let c = Vec3::new(k as f64 * 1.5 - 3.0, rng.random_range(-0.3..0.3), 0.0);
            let r = Rotation::exp(&Vec3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.05..0.05),
            ));
            truth.push(ViewPose::new(r, c));
        }
        let points: Vec<Vec3> = (0..200)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(8.0..20.0),
                )
            })
            .collect();
        for (k, pose) in truth.iter().enumerate() {
            let mut p = PoseParam::new(pose.rotation, pose.center);
            if k == 0 {
                p.free = [false; 6];
            } else if perturb {
                let axis = Vec3::new(rng.random(), rng.random(), rng.random()).normalize();
                p.rotation = Rotation::exp(&(axis * 0.5f64.to_radians())).compose(&p.rotation);
                let dir = Vec3::new(rng.random(), rng.random(), rng.random()).normalize();
                p.center += dir * 0.05;
            }
            if k == 4 {
                p.free[3] = false;
            }
            let b = problem.add_pose(p);
            problem.add_view(b, Rotation::identity());
        }
        for x in &points {
            let pi = problem.add_point(*x, true);
            for (k, pose) in truth.iter().enumerate() {
                let obs = project(&intr, pose, x).unwrap();
                problem.add_residual(
                    ResidualKind::Reprojection {
                        view: k,
                        point: pi,
                        intrinsics: ii,
                        observed: obs,
                    },
                    1.0,
                    RobustLoss::Huber(2.0),
                );
            }
        }
        (problem, truth, points)
    }

    fn rms(problem: &Problem, params: &Params) -> f64 {
        let mut s = 0.0;
        let mut n = 0;
        for b in &problem.residuals {
            if let ResidualKind::Reprojection {
                view,
                point,
                intrinsics,
                observed,
            } = &b.kind
            {
                let (_, r, c) = view_pose(problem, params, *view);
                let pose = ViewPose::new(r, c);
                let px = project(&params.intrinsics[*intrinsics], &pose, &params.points[*point]).unwrap();
                s += (px - observed).norm_squared();
                n += 1;
            }
        }
        (s / n as f64).sqrt()
    }

    #[test]
    fn stationary_problem_does_not_move() {
        let (problem, _, _) = ba_problem(1, false);
        let (params, report) = solve_lm(&problem, &LmOptions::default()).unwrap();
        assert!(report.iterations <= 1, "{report:?}");
        assert!((report.final_cost - report.initial_cost).abs() <= 1e-15);
        assert!(rms(&problem, &params) < 1e-9);
    }

    #[test]
    fn five_view_ba_reaches_zero_reprojection() {
        let (problem, _, _) = ba_problem(2, true);
        assert!(evaluate_cost(&problem) > 1.0);
        let (params, report) = solve_lm(&problem, &LmOptions::default()).unwrap();
        let r = rms(&problem, &params);
        assert!(r < 1e-8, "rms {r} {report:?}");
        for w in report.cost_trace.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(report.final_cost <= report.initial_cost);
    }

    #[test]
    fn quadratic_converges_in_three_iterations() {
        let mut problem = Problem::default();
        let a = problem.add_pose(PoseParam::frozen(Rotation::identity(), Vec3::new(1.0, 2.0, 3.0)));
        let mut p = PoseParam::new(Rotation::identity(), Vec3::new(10.0, -5.0, 7.0));
        p.free = [false, false, false, true, true, true];
        let b = problem.add_pose(p);
        let va = problem.add_view(a, Rotation::identity());
        let vb = problem.add_view(b, Rotation::identity());
        problem.add_residual(ResidualKind::PanoTranslation { view_a: va, view_b: vb }, 3.0, RobustLoss::None);
        let (params, report) = solve_lm(&problem, &LmOptions::default()).unwrap();
        assert!(report.iterations <= 3, "{report:?}");
        assert!((params.poses[1].1 - Vec3::new(1.0, 2.0, 3.0)).amax() < 1e-12);
        assert_eq!(report.termination, Termination::Converged);
    }

    #[test]
    fn rotation_block_converges_to_target() {
        let mut problem = Problem::default();
        let a = problem.add_pose(PoseParam::frozen(Rotation::identity(), Vec3::zeros()));
        let b = problem.add_pose(PoseParam::new(Rotation::exp(&Vec3::new(0.3, -0.2, 0.1)), Vec3::zeros()));
        let va = problem.add_view(a, Rotation::identity());
        let vb = problem.add_view(b, Rotation::identity());
        let target: Mat3 = *Rotation::about_z(0.5).matrix();
        problem.add_residual(
            ResidualKind::PanoRotation {
                view_a: va,
                view_b: vb,
                target,
            },
            1.0,
            RobustLoss::None,
        );
        let (params, _) = solve_lm(&problem, &LmOptions::default()).unwrap();
        let rel = params.poses[1].0.transpose_matrix();
        assert!((rel - target).norm() < 1e-9);
    }

    #[test]
    fn gauge_free_problem_is_rejected() {
        let (mut problem, _, _) = ba_problem(3, false);
        for p in &mut problem.poses {
            p.free = [true; 6];
        }
        assert!(matches!(solve_lm(&problem, &LmOptions::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn solves_are_deterministic() {
        let (problem, _, _) = ba_problem(4, true);
        let a = solve_lm(&problem, &LmOptions::default()).unwrap();
        let b = solve_lm(&problem, &LmOptions::default()).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let mut m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(cholesky_in_place(&mut m), Err(1));
        let mut m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        cholesky_in_place(&mut m).unwrap();
        let x = cholesky_solve(&m, &DVector::from_vec(vec![2.0, 1.0]));
        assert!((x - DVector::from_vec(vec![0.5, 0.0])).norm() < 1e-15);
    }
}
