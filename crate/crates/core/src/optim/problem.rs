use crate::geometry::{CameraIntrinsics, Mat3, Rotation, Vec2, Vec3, INTRINSIC_NAMES};
use crate::{Error, Result};

/// Pose parameter block: 3 rotation + 3 center degrees of freedom.
#[derive(Clone, Debug)]
pub struct PoseParam {
    pub rotation: Rotation,
    pub center: Vec3,
    /// `[θx, θy, θz, cx, cy, cz]`.
    pub free: [bool; 6],
    /// Name used in diagnostics.
    pub label: String,
}

impl PoseParam {
    pub fn new(rotation: Rotation, center: Vec3) -> Self {
        PoseParam {
            rotation,
            center,
            free: [true; 6],
            label: String::new(),
        }
    }

    pub fn frozen(rotation: Rotation, center: Vec3) -> Self {
        PoseParam {
            rotation,
            center,
            free: [false; 6],
            label: String::new(),
        }
    }

    pub fn any_free(&self) -> bool {
        self.free.iter().any(|&f| f)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Clone, Debug)]
pub struct PointParam {
    pub xyz: Vec3,
    pub free: bool,
}

#[derive(Clone, Debug)]
pub struct IntrinsicsParam {
    pub intrinsics: CameraIntrinsics,
    /// Ordered as [`INTRINSIC_NAMES`].
    pub free: [bool; 8],
}

impl IntrinsicsParam {
    pub fn fixed(intrinsics: CameraIntrinsics) -> Self {
        IntrinsicsParam {
            intrinsics,
            free: [false; 8],
        }
    }

    pub fn any_free(&self) -> bool {
        self.free.iter().any(|&f| f)
    }
}

/// A camera view whose rotation is `pose.rotation * offset` and whose center is `pose.center`.
///
/// Independent views use the identity offset; rigid panoramas share one pose block
/// and carry their slot rotation as the offset.
#[derive(Clone, Debug)]
pub struct ViewLink {
    pub pose: usize,
    pub offset: Rotation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RobustLoss {
    None,
    Huber(f64),
}

impl RobustLoss {
    /// `(ρ(s), ρ'(s))` for squared norm `s`.
    pub fn evaluate(&self, s: f64) -> (f64, f64) {
        match *self {
            RobustLoss::None => (s, 1.0),
            RobustLoss::Huber(delta) => {
                let d2 = delta * delta;
                if s <= d2 {
                    (s, 1.0)
                } else {
                    let r = s.sqrt();
                    (2.0 * delta * r - d2, delta / r)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResidualKind {
    Reprojection {
        view: usize,
        point: usize,
        intrinsics: usize,
        observed: Vec2,
    },
    PanoTranslation {
        view_a: usize,
        view_b: usize,
    },
    PanoRotation {
        view_a: usize,
        view_b: usize,
        target: Mat3,
    },
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub kind: ResidualKind,
    pub weight: f64,
    pub loss: RobustLoss,
}

/// A bundle-adjustment style least-squares problem.
#[derive(Clone, Debug, Default)]
pub struct Problem {
    pub poses: Vec<PoseParam>,
    pub points: Vec<PointParam>,
    pub intrinsics: Vec<IntrinsicsParam>,
    pub views: Vec<ViewLink>,
    pub residuals: Vec<ResidualBlock>,
}

/// Parameter values produced by the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub poses: Vec<(Rotation, Vec3)>,
    pub points: Vec<Vec3>,
    pub intrinsics: Vec<CameraIntrinsics>,
}

impl Problem {
    pub fn params(&self) -> Params {
        Params {
            poses: self.poses.iter().map(|p| (p.rotation, p.center)).collect(),
            points: self.points.iter().map(|p| p.xyz).collect(),
            intrinsics: self.intrinsics.iter().map(|p| p.intrinsics).collect(),
        }
    }

    pub fn add_pose(&mut self, p: PoseParam) -> usize {
        self.poses.push(p);
        self.poses.len() - 1
    }

    pub fn add_view(&mut self, pose: usize, offset: Rotation) -> usize {
        self.views.push(ViewLink { pose, offset });
        self.views.len() - 1
    }

    pub fn add_point(&mut self, xyz: Vec3, free: bool) -> usize {
        self.points.push(PointParam { xyz, free });
        self.points.len() - 1
    }

    pub fn add_intrinsics(&mut self, p: IntrinsicsParam) -> usize {
        self.intrinsics.push(p);
        self.intrinsics.len() - 1
    }

    pub fn add_residual(&mut self, kind: ResidualKind, weight: f64, loss: RobustLoss) {
        self.residuals.push(ResidualBlock { kind, weight, loss });
    }

    /// Checks references, weights, and that every free parameter is observed.
    pub fn validate(&self) -> Result<()> {
        let mut pose_touched = vec![false; self.poses.len()];
        let mut point_touched = vec![false; self.points.len()];
        let mut intr_touched = vec![false; self.intrinsics.len()];
        let view_pose = |v: usize| -> Result<usize> {
            self.views
                .get(v)
                .map(|l| l.pose)
                .ok_or_else(|| Error::validation(format!("residual references unknown view {v}")))
        };
        for link in &self.views {
            if link.pose >= self.poses.len() {
                return Err(Error::validation(format!(
                    "view references unknown pose block {}",
                    link.pose
                )));
            }
        }
        for (i, block) in self.residuals.iter().enumerate() {
            if !(block.weight >= 0.0 && block.weight.is_finite()) {
                return Err(Error::validation(format!(
                    "residual {i} has invalid weight {}",
                    block.weight
                )));
            }
            if let RobustLoss::Huber(d) = block.loss {
                if !(d > 0.0) {
                    return Err(Error::validation(format!("residual {i} has Huber delta {d}")));
                }
            }
            match &block.kind {
                ResidualKind::Reprojection {
                    view,
                    point,
                    intrinsics,
                    ..
                } => {
                    pose_touched[view_pose(*view)?] = true;
                    *point_touched.get_mut(*point).ok_or_else(|| {
                        Error::validation(format!("residual {i} references unknown point {point}"))
                    })? = true;
                    *intr_touched.get_mut(*intrinsics).ok_or_else(|| {
                        Error::validation(format!(
                            "residual {i} references unknown intrinsics {intrinsics}"
                        ))
                    })? = true;
                }
                ResidualKind::PanoTranslation { view_a, view_b }
                | ResidualKind::PanoRotation { view_a, view_b, .. } => {
                    pose_touched[view_pose(*view_a)?] = true;
                    pose_touched[view_pose(*view_b)?] = true;
                }
            }
        }
        for (i, p) in self.poses.iter().enumerate() {
            if p.any_free() && !pose_touched[i] {
                return Err(Error::validation(format!(
                    "free pose block {i} is not touched by any residual"
                )));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.free && !point_touched[i] {
                return Err(Error::validation(format!(
                    "free point {i} is not touched by any residual"
                )));
            }
        }
        for (i, p) in self.intrinsics.iter().enumerate() {
            if p.any_free() && !intr_touched[i] {
                let names: Vec<_> = INTRINSIC_NAMES
                    .iter()
                    .zip(p.free)
                    .filter(|(_, f)| *f)
                    .map(|(n, _)| *n)
                    .collect();
                return Err(Error::validation(format!(
                    "free intrinsics {i} ({}) not touched by any residual",
                    names.join(",")
                )));
            }
        }
        let any_pose_dof_frozen = self.poses.iter().any(|p| !p.free.iter().all(|&f| f));
        let any_point_frozen = self.points.iter().any(|p| !p.free);
        let has_reprojection = self
            .residuals
            .iter()
            .any(|b| matches!(b.kind, ResidualKind::Reprojection { .. }));
        if has_reprojection && !self.poses.is_empty() && !any_pose_dof_frozen && !any_point_frozen {
            return Err(Error::validation(
                "problem has gauge freedom: freeze a pose, a center coordinate, or points",
            ));
        }
        Ok(())
    }
}
