//! Synthetic ground truth: an intersection surveyed by street panoramas and watched by one
//! elevated traffic camera, plus rendered correspondences and vehicle tracks.

mod evaluate;
mod pipeline;
mod render;

pub use evaluate::*;
pub use pipeline::*;
pub use render::*;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geodesy::GeodeticCoord;
use crate::geometry::{
    focal_from_fov, pixel_to_world_ray, project, slot_rotation, CameraIntrinsics, Mat3, Rotation, SamplingConfig, Vec2,
    Vec3, ViewPose,
};
use crate::groundplane::{ray_plane_intersect, PlaneModel};
use crate::traffic::{GroundTrack, SpeedTrap};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuerySpec {
    pub height_m: (f64, f64),
    pub fov_deg: (f64, f64),
    pub width: u32,
    pub height: u32,
    pub k1: (f64, f64),
    pub k2: (f64, f64),
    /// Magnitude range of p1 and p2; signs are random.
    pub tangential: (f64, f64),
    pub pp_jitter_px: f64,
    /// Ground distance from the camera foot to the look-at point.
    pub look_distance_m: (f64, f64),
}

impl Default for QuerySpec {
    fn default() -> Self {
        QuerySpec {
            height_m: (4.0, 10.0),
            fov_deg: (50.0, 75.0),
            width: 1920,
            height: 1080,
            k1: (-0.2, -0.05),
            k2: (0.01, 0.05),
            tangential: (0.001, 0.003),
            pp_jitter_px: 20.0,
            look_distance_m: (14.0, 22.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    pub outlier_fraction: f64,
    pub gps_sigma_m: f64,
    /// Seed for noise draws; defaults to the scene seed.
    pub seed: Option<u64>,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_sigma >= 0.0 && self.gps_sigma_m >= 0.0) {
            return Err(Error::validation("noise sigmas must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::validation("outlier fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleSpec {
    pub count: usize,
    pub speed_mps: (f64, f64),
    pub fps: f64,
    /// Speed of the first vehicle, which drives straight through the trap.
    pub trap_vehicle_speed_mps: f64,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        VehicleSpec {
            count: 6,
            speed_mps: (8.0, 20.0),
            fps: 10.0,
            trap_vehicle_speed_mps: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_panos: usize,
    pub radius_m: f64,
    pub pano_spacing_m: f64,
    pub camera_height_m: f64,
    pub n_points: usize,
    pub road_fraction: f64,
    pub street_half_width_m: f64,
    pub facade_setback_m: f64,
    pub facade_height_m: f64,
    pub max_range_m: f64,
    pub road_tilt_deg: f64,
    pub road_height_m: f64,
    pub origin: GeodeticCoord,
    pub pano_width: u32,
    pub sampling: SamplingConfig,
    pub query: QuerySpec,
    pub noise: NoiseSpec,
    pub vehicles: VehicleSpec,
    pub n_marks: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            n_panos: 10,
            radius_m: 40.0,
            pano_spacing_m: 8.0,
            camera_height_m: 2.5,
            n_points: 2000,
            road_fraction: 0.3,
            street_half_width_m: 8.0,
            facade_setback_m: 11.0,
            facade_height_m: 12.0,
            max_range_m: 60.0,
            road_tilt_deg: 0.0,
            road_height_m: 0.0,
            origin: GeodeticCoord::new(40.4433, -79.9436, 280.0),
            pano_width: 8192,
            sampling: SamplingConfig::default(),
            query: QuerySpec::default(),
            noise: NoiseSpec::default(),
            vehicles: VehicleSpec::default(),
            n_marks: 12,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_panos < 2 {
            return Err(Error::validation(format!("N ≥ 2 panoramas required, got {}", self.n_panos)));
        }
        self.sampling.validate()?;
        self.noise.validate()?;
        self.origin.validate()?;
        let positive = [
            ("radius_m", self.radius_m),
            ("pano_spacing_m", self.pano_spacing_m),
            ("camera_height_m", self.camera_height_m),
            ("street_half_width_m", self.street_half_width_m),
            ("facade_height_m", self.facade_height_m),
            ("max_range_m", self.max_range_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.facade_setback_m <= self.street_half_width_m {
            return Err(Error::validation("facades must stand behind the street edge"));
        }
        if !(0.0..=1.0).contains(&self.road_fraction) {
            return Err(Error::validation("road_fraction must lie in [0, 1]"));
        }
        if self.n_points == 0 {
            return Err(Error::validation("n_points must be positive"));
        }
        let q = &self.query;
        if !(q.height_m.0 > 0.0 && q.height_m.0 <= q.height_m.1) || !(q.fov_deg.0 > 0.0 && q.fov_deg.1 < 180.0) {
            return Err(Error::validation("invalid query camera ranges"));
        }
        if self.vehicles.count > 0 && !(self.vehicles.fps > 0.0 && self.vehicles.trap_vehicle_speed_mps > 0.0) {
            return Err(Error::validation("vehicle fps and speed must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruePano {
    pub pano_id: String,
    /// ENU center in the scene frame.
    pub center: Vec3,
    pub heading_deg: f64,
}

impl TruePano {
    pub fn view_pose(&self, cfg: &SamplingConfig, slot: usize) -> ViewPose {
        ViewPose::new(
            Rotation::about_z(self.heading_deg.to_radians()).compose(&slot_rotation(cfg.views_per_pano, slot)),
            self.center,
        )
        .with_pano(self.pano_id.clone(), slot)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruePoint {
    pub xyz: Vec3,
    /// Outward surface normal, used for back-face culling.
    pub normal: Vec3,
    pub road_mark: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueMark {
    pub a: Vec3,
    pub b: Vec3,
    pub pixel_a: Vec2,
    pub pixel_b: Vec2,
    pub distance_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueVehicle {
    pub track: GroundTrack,
    pub speed_mps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBundle {
    pub spec: SceneSpec,
    pub panos: Vec<TruePano>,
    pub points: Vec<TruePoint>,
    pub query_intrinsics: CameraIntrinsics,
    pub query_pose: ViewPose,
    pub plane: PlaneModel,
    pub marks: Vec<TrueMark>,
    pub vehicles: Vec<TrueVehicle>,
    pub trap: SpeedTrap,
}

/// Pixel of `x` in a camera if it is in front, in range, facing the camera, and in bounds.
pub fn visible_pixel(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    x: &Vec3,
    normal: &Vec3,
    max_range: f64,
) -> Option<Vec2> {
    let to_cam = pose.center - x;
    if to_cam.norm() > max_range || normal.dot(&to_cam) <= 0.0 {
        return None;
    }
    if pose.world_to_camera(x).z < 0.1 {
        return None;
    }
    let px = project(intr, pose, x).ok()?;
    intr.contains(&px).then_some(px)
}

fn plane_z(plane: &PlaneModel, x: f64, y: f64) -> f64 {
    -(plane.normal.x * x + plane.normal.y * y + plane.offset) / plane.normal.z
}

fn on_plane(plane: &PlaneModel, x: f64, y: f64) -> Vec3 {
    Vec3::new(x, y, plane_z(plane, x, y))
}

/// World-from-camera rotation looking from `from` toward `to` with the given roll.
fn look_at(from: &Vec3, to: &Vec3, roll: f64) -> Rotation {
    let f = (to - from).normalize();
    let right = f.cross(&Vec3::z()).normalize();
    let down = f.cross(&right);
    let m = Mat3::from_columns(&[right, down, f]);
    Rotation::from_matrix_unchecked(m).renormalized().compose(&Rotation::about_z(roll))
}

impl GroundTruthBundle {
    pub fn view_poses(&self) -> Vec<ViewPose> {
        let cfg = &self.spec.sampling;
        self.panos
            .iter()
            .flat_map(|p| (0..cfg.views_per_pano).map(move |j| p.view_pose(cfg, j)))
            .collect()
    }

    pub fn pano_geodetic(&self, p: &TruePano) -> Result<GeodeticCoord> {
        crate::geodesy::enu_to_geodetic(&self.spec.origin, &p.center)
    }
}

fn pano_layout(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<TruePano>> {
    let plane = road_plane(spec)?;
    (0..spec.n_panos)
        .map(|i| {
            let street = i % 2;
            let k = i / 2;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let along = sign * spec.pano_spacing_m * (k / 2 + 1) as f64 + rng.random_range(-1.0..1.0);
            let lateral = rng.random_range(-1.5..1.5);
            if along.abs() > spec.radius_m {
                return Err(Error::validation(format!(
                    "{} panoramas at {} m spacing do not fit inside a {} m radius",
                    spec.n_panos, spec.pano_spacing_m, spec.radius_m
                )));
            }
            let (x, y) = if street == 0 { (along, lateral) } else { (lateral, along) };
            let z = plane_z(&plane, x, y) + spec.camera_height_m + rng.random_range(-0.05..0.05);
            let mut heading = if street == 0 { 0.0 } else { 90.0 } + rng.random_range(-5.0..5.0);
            if rng.random_bool(0.5) {
                heading += 180.0;
            }
            Ok(TruePano {
                pano_id: format!("pano{i:02}"),
                center: Vec3::new(x, y, z),
                heading_deg: heading,
            })
        })
        .collect()
}

fn road_plane(spec: &SceneSpec) -> Result<PlaneModel> {
    let n = Rotation::about_x(spec.road_tilt_deg.to_radians()).rotate(&Vec3::z());
    PlaneModel::new(n, -spec.road_height_m)
}

fn sample_point(spec: &SceneSpec, plane: &PlaneModel, rng: &mut ChaCha8Rng) -> TruePoint {
    let extent = spec.radius_m + 10.0;
    let street = rng.random_range(0..2);
    let swap = |a: f64, b: f64| if street == 0 { (a, b) } else { (b, a) };
    if rng.random_bool(spec.road_fraction) {
        let along = rng.random_range(-extent..extent);
        let lateral = rng.random_range(-spec.street_half_width_m..spec.street_half_width_m);
        let (x, y) = swap(along, lateral);
        return TruePoint {
            xyz: on_plane(plane, x, y),
            normal: plane.normal,
            road_mark: true,
        };
    }
    let side: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let along = loop {
        let a: f64 = rng.random_range(-extent..extent);
        if a.abs() > spec.facade_setback_m {
            break a;
        }
    };
    let lateral = side * spec.facade_setback_m + rng.random_range(-0.3..0.3);
    let (x, y) = swap(along, lateral);
    let (nx, ny) = swap(0.0, -side);
    TruePoint {
        xyz: Vec3::new(x, y, plane_z(plane, x, y) + rng.random_range(0.3..spec.facade_height_m)),
        normal: Vec3::new(nx, ny, 0.0),
        road_mark: false,
    }
}

fn polyline_track(id: String, path: &[Vec2], speed: f64, t0: f64, fps: f64, plane: &PlaneModel) -> GroundTrack {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let n = (total / speed * fps).floor() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        let t = k as f64 / fps;
        let s = speed * t;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let u = (s - cum[seg]) / (cum[seg + 1] - cum[seg]);
        let p = path[seg] + (path[seg + 1] - path[seg]) * u;
        samples.push((t0 + t, on_plane(plane, p.x, p.y)));
    }
    GroundTrack { track_id: id, samples }
}

fn turn_path(lane_a: f64, lane_b: f64, reach: f64) -> Vec<Vec2> {
    // Along street A toward +x, quarter arc around the corner, then along street B toward +y.
    let r = (lane_b - (-reach)).abs().min(6.0).max(2.0);
    let corner = Vec2::new(lane_b - r, lane_a + r);
    let mut path = vec![Vec2::new(-reach, lane_a)];
    for i in 0..=8 {
        let a = -PI / 2.0 + (PI / 2.0) * i as f64 / 8.0;
        path.push(corner + Vec2::new(a.cos(), a.sin()) * r);
    }
    path.push(Vec2::new(lane_b, reach));
    path
}

/// Generates a complete ground-truth scene; deterministic for a given spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plane = road_plane(spec)?;
    let panos = pano_layout(spec, &mut rng)?;
    let cfg = spec.sampling;
    let db_intr = cfg.intrinsics();
    let views: Vec<ViewPose> = panos
        .iter()
        .flat_map(|p| (0..cfg.views_per_pano).map(move |j| p.view_pose(&cfg, j)))
        .collect();

    let mut points = Vec::with_capacity(spec.n_points);
    let mut attempts = 0usize;
    while points.len() < spec.n_points {
        attempts += 1;
        if attempts > spec.n_points * 200 {
            return Err(Error::validation(format!(
                "scene generation infeasible: {} of {} points covisible after {} attempts",
                points.len(),
                spec.n_points,
                attempts - 1
            )));
        }
        let p = sample_point(spec, &plane, &mut rng);
        let mut panos_seen = Vec::new();
        for (vi, v) in views.iter().enumerate() {
            if visible_pixel(&db_intr, v, &p.xyz, &p.normal, spec.max_range_m).is_some() {
                let pano = vi / cfg.views_per_pano;
                if !panos_seen.contains(&pano) {
                    panos_seen.push(pano);
                }
            }
        }
        if panos_seen.len() >= 2 {
            points.push(p);
        }
    }

    // Query camera on a corner, elevated, looking across the intersection.
    let q = &spec.query;
    let hw = spec.street_half_width_m;
    let (sx, sy) = (
        if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        if rng.random_bool(0.5) { 1.0 } else { -1.0 },
    );
    let foot = Vec2::new(sx * (hw + rng.random_range(1.0..3.0)), sy * (hw + rng.random_range(1.0..3.0)));
    let yaw = rng.random_range(-15.0f64..15.0).to_radians();
    let diag = -Vec2::new(sx, sy).normalize();
    let dir = Vec2::new(yaw.cos() * diag.x - yaw.sin() * diag.y, yaw.sin() * diag.x + yaw.cos() * diag.y);
    let target2 = foot + dir * rng.random_range(q.look_distance_m.0..q.look_distance_m.1);
    let height = rng.random_range(q.height_m.0..=q.height_m.1);
    let center = on_plane(&plane, foot.x, foot.y) + plane.normal * height;
    let target = on_plane(&plane, target2.x, target2.y);
    let roll = rng.random_range(-2.0f64..2.0).to_radians();
    let query_pose = ViewPose::new(look_at(&center, &target, roll), center);
    let fov = rng.random_range(q.fov_deg.0..=q.fov_deg.1);
    let f = focal_from_fov(fov, q.width);
    let signed = |rng: &mut ChaCha8Rng, r: (f64, f64)| {
        let m = rng.random_range(r.0..=r.1);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    };
    let query_intrinsics = CameraIntrinsics::pinhole(
        f,
        f,
        q.width as f64 / 2.0 + rng.random_range(-q.pp_jitter_px..=q.pp_jitter_px),
        q.height as f64 / 2.0 + rng.random_range(-q.pp_jitter_px..=q.pp_jitter_px),
        q.width,
        q.height,
    )
    .with_distortion(
        rng.random_range(q.k1.0..=q.k1.1),
        rng.random_range(q.k2.0..=q.k2.1),
        signed(&mut rng, q.tangential),
        signed(&mut rng, q.tangential),
    );
    query_intrinsics.validate()?;

    // Ground marks seen by the query camera.
    let mut marks = Vec::with_capacity(spec.n_marks);
    let mut tries = 0;
    while marks.len() < spec.n_marks {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::validation("could not place ground marks in the query view"));
        }
        let pa = Vec2::new(
            rng.random_range(0.0..q.width as f64),
            rng.random_range(0.4 * q.height as f64..q.height as f64),
        );
        let Ok((o, d)) = pixel_to_world_ray(&query_intrinsics, &query_pose, &pa) else {
            continue;
        };
        let Ok(a) = ray_plane_intersect(&o, &d, &plane) else {
            continue;
        };
        if (a - center).norm() > 40.0 {
            continue;
        }
        let ang = rng.random_range(0.0..2.0 * PI);
        let len = rng.random_range(2.0..12.0);
        let b2 = Vec2::new(a.x + ang.cos() * len, a.y + ang.sin() * len);
        let b = on_plane(&plane, b2.x, b2.y);
        let Some(pb) = visible_pixel(&query_intrinsics, &query_pose, &b, &plane.normal, 60.0) else {
            continue;
        };
        marks.push(TrueMark {
            a,
            b,
            pixel_a: pa,
            pixel_b: pb,
            distance_m: (a - b).norm(),
        });
    }

    // Trap across street A, positioned where the trap vehicle's lane is best seen.
    let lane0 = -sy * rng.random_range(2.0..5.0);
    let image_center = Vec2::new(q.width as f64 / 2.0, q.height as f64 / 2.0);
    let mut best: Option<(f64, f64)> = None;
    for i in -30..=30 {
        let x = i as f64;
        let ends = [on_plane(&plane, x, lane0 - 2.0), on_plane(&plane, x, lane0 + 2.0)];
        let mid = on_plane(&plane, x, lane0);
        let seen = ends
            .iter()
            .all(|e| visible_pixel(&query_intrinsics, &query_pose, e, &plane.normal, 60.0).is_some());
        if let (true, Some(px)) = (seen, visible_pixel(&query_intrinsics, &query_pose, &mid, &plane.normal, 60.0)) {
            let d = (px - image_center).norm();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, x));
            }
        }
    }
    let trap_x = best
        .map(|b| b.1)
        .ok_or_else(|| Error::validation("no street position for the speed trap is visible in the query view"))?;
    let trap = SpeedTrap::new(on_plane(&plane, trap_x, lane0 - 2.0), on_plane(&plane, trap_x, lane0 + 2.0), &plane)?;

    let vs = &spec.vehicles;
    let mut vehicles = Vec::with_capacity(vs.count);
    for k in 0..vs.count {
        let (path, speed) = if k == 0 {
            (
                vec![Vec2::new(trap_x - 40.0, lane0), Vec2::new(trap_x + 40.0, lane0)],
                vs.trap_vehicle_speed_mps,
            )
        } else {
            let speed = rng.random_range(vs.speed_mps.0..=vs.speed_mps.1);
            let lane = signed(&mut rng, (1.5, hw - 1.5));
            let reach = spec.radius_m;
            let path = match rng.random_range(0..3) {
                0 => vec![Vec2::new(-reach, lane), Vec2::new(reach, lane)],
                1 => vec![Vec2::new(lane, -reach), Vec2::new(lane, reach)],
                _ => turn_path(lane, signed(&mut rng, (1.5, hw - 1.5)), reach),
            };
            let path = if rng.random_bool(0.5) { path.into_iter().rev().collect() } else { path };
            (path, speed)
        };
        let t0 = if k == 0 { 0.0 } else { rng.random_range(0.0..5.0) };
        vehicles.push(TrueVehicle {
            track: polyline_track(format!("veh{k:02}"), &path, speed, t0, vs.fps, &plane),
            speed_mps: speed,
        });
    }

    Ok(GroundTruthBundle {
        spec: spec.clone(),
        panos,
        points,
        query_intrinsics,
        query_pose,
        plane,
        marks,
        vehicles,
        trap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec {
            n_points: 300,
            n_panos: 4,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_scene(&small()).unwrap();
        let b = generate_scene(&small()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn zero_vehicles_leaves_rest_populated() {
        let mut s = small();
        s.vehicles.count = 0;
        let b = generate_scene(&s).unwrap();
        assert!(b.vehicles.is_empty());
        assert_eq!(b.points.len(), 300);
        assert_eq!(b.marks.len(), s.n_marks);
    }

    #[test]
    fn points_are_covisible() {
        let b = generate_scene(&small()).unwrap();
        let intr = b.spec.sampling.intrinsics();
        let views = b.view_poses();
        for p in &b.points {
            // Recount in the camera frame directly.
            let mut n = 0;
            for v in &views {
                let pc = v.world_to_camera(&p.xyz);
                if pc.z <= 0.1 || (v.center - p.xyz).norm() > b.spec.max_range_m || p.normal.dot(&(v.center - p.xyz)) <= 0.0 {
                    continue;
                }
                let u = intr.fx * pc.x / pc.z + intr.px;
                let w = intr.fy * pc.y / pc.z + intr.py;
                if u >= 0.0 && w >= 0.0 && u < intr.width as f64 && w < intr.height as f64 {
                    n += 1;
                }
            }
            assert!(n >= 2);
        }
    }

    #[test]
    fn layout_respects_radius() {
        let b = generate_scene(&SceneSpec {
            n_panos: 16,
            n_points: 100,
            ..SceneSpec::default()
        })
        .unwrap();
        assert!(b.panos.iter().all(|p| p.center.xy().norm() <= 40.0 + 2.0));
        assert!(generate_scene(&SceneSpec {
            n_panos: 20,
            ..SceneSpec::default()
        })
        .is_err());
        assert!(generate_scene(&SceneSpec {
            n_panos: 1,
            ..SceneSpec::default()
        })
        .is_err());
    }

    #[test]
    fn marks_and_trap_are_consistent() {
        let b = generate_scene(&small()).unwrap();
        for m in &b.marks {
            assert!(b.plane.signed_distance(&m.a).abs() < 1e-9);
            let pb = project(&b.query_intrinsics, &b.query_pose, &m.b).unwrap();
            assert!((pb - m.pixel_b).norm() < 1e-9);
            assert!(((m.a - m.b).norm() - m.distance_m).abs() < 1e-12);
        }
        let v0 = &b.vehicles[0].track;
        let c = crate::traffic::trap_speed(v0, &b.trap);
        assert_eq!(c.len(), 1);
        assert!((c[0].speed_mps - 15.0).abs() < 1e-9);
    }
}
