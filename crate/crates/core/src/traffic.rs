//! Vehicle tracks on the ground plane: lifting, virtual speed traps, heatmaps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Vec2, Vec3, ViewPose};
use crate::groundplane::{pixel_to_ground, PlaneModel};
use crate::{Error, Result};

/// Tracked image positions of one vehicle reference point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTrack {
    pub track_id: String,
    /// `(timestamp_s, pixel)` with strictly increasing timestamps.
    pub samples: Vec<(f64, Vec2)>,
}

impl ImageTrack {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::validation(format!("track {} has fewer than 2 samples", self.track_id)));
        }
        check_times(&self.track_id, self.samples.iter().map(|s| s.0))
    }
}

fn check_times(id: &str, times: impl Iterator<Item = f64>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if !t.is_finite() || t <= prev {
            return Err(Error::validation(format!("track {id}: timestamps must strictly increase")));
        }
        prev = t;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTrack {
    pub track_id: String,
    /// `(timestamp_s, point on the plane)`.
    pub samples: Vec<(f64, Vec3)>,
}

impl GroundTrack {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::validation(format!("track {} has fewer than 2 samples", self.track_id)));
        }
        check_times(&self.track_id, self.samples.iter().map(|s| s.0))
    }

    pub fn shifted(&self, dt: f64) -> GroundTrack {
        GroundTrack {
            track_id: self.track_id.clone(),
            samples: self.samples.iter().map(|(t, p)| (t + dt, *p)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> GroundTrack {
        GroundTrack {
            track_id: self.track_id.clone(),
            samples: self.samples.iter().map(|(t, p)| (*t, p * s)).collect(),
        }
    }
}

/// A sample that could not be cast onto the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct DroppedSample {
    pub index: usize,
    pub timestamp_s: f64,
    pub reason: String,
}

/// Casts each pixel onto the plane; unliftable samples are dropped and reported.
pub fn lift_track(
    intr: &CameraIntrinsics,
    pose: &ViewPose,
    plane: &PlaneModel,
    track: &ImageTrack,
) -> Result<(GroundTrack, Vec<DroppedSample>)> {
    check_times(&track.track_id, track.samples.iter().map(|s| s.0))?;
    let mut samples = Vec::with_capacity(track.samples.len());
    let mut dropped = Vec::new();
    for (index, (t, px)) in track.samples.iter().enumerate() {
        match pixel_to_ground(intr, pose, plane, px) {
            Ok(x) => samples.push((*t, x)),
            Err(e) => dropped.push(DroppedSample {
                index,
                timestamp_s: *t,
                reason: e.to_string(),
            }),
        }
    }
    if samples.len() < 2 {
        return Err(Error::TrackUnusable(format!(
            "track {}: {} of {} samples lifted",
            track.track_id,
            samples.len(),
            track.samples.len()
        )));
    }
    Ok((
        GroundTrack {
            track_id: track.track_id.clone(),
            samples,
        },
        dropped,
    ))
}

/// Line segment on the ground plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedTrap {
    pub a: Vec3,
    pub b: Vec3,
}

impl SpeedTrap {
    pub fn new(a: Vec3, b: Vec3, plane: &PlaneModel) -> Result<Self> {
        if (a - b).norm() == 0.0 {
            return Err(Error::validation("speed trap endpoints coincide"));
        }
        for (name, p) in [("a", &a), ("b", &b)] {
            let d = plane.signed_distance(p);
            if d.abs() > 1e-9 {
                return Err(Error::validation(format!("speed trap endpoint {name} is {d:e} m off the plane")));
            }
        }
        Ok(SpeedTrap { a, b })
    }

    /// Trap whose endpoints are the ground points under two pixels.
    pub fn from_pixels(
        intr: &CameraIntrinsics,
        pose: &ViewPose,
        plane: &PlaneModel,
        pa: &Vec2,
        pb: &Vec2,
    ) -> Result<Self> {
        Self::new(
            pixel_to_ground(intr, pose, plane, pa)?,
            pixel_to_ground(intr, pose, plane, pb)?,
            plane,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub time_s: f64,
    pub speed_mps: f64,
    /// Index of the track segment `(k, k+1)` containing the crossing.
    pub segment: usize,
}

fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Crossings of the trap using the single segment that contains each crossing.
pub fn trap_speed(track: &GroundTrack, trap: &SpeedTrap) -> Vec<Crossing> {
    trap_speed_windowed(track, trap, 1)
}

/// As [`trap_speed`], averaging speed over `window - 1` segments on each side of the crossing.
pub fn trap_speed_windowed(track: &GroundTrack, trap: &SpeedTrap, window: usize) -> Vec<Crossing> {
    let w = window.max(1) - 1;
    let s = &track.samples;
    let xy = |p: &Vec3| Vec2::new(p.x, p.y);
    let (ta, tb) = (xy(&trap.a), xy(&trap.b));
    let e = tb - ta;
    let mut out = Vec::new();
    for k in 0..s.len().saturating_sub(1) {
        let (p0, p1) = (xy(&s[k].1), xy(&s[k + 1].1));
        let d = p1 - p0;
        let denom = cross2(d, e);
        if denom == 0.0 {
            continue;
        }
        let r = ta - p0;
        let u = cross2(r, e) / denom;
        let v = cross2(r, d) / denom;
        // Half-open in u so a sample lying on the trap is counted once.
        if !(u > 0.0 && u <= 1.0 && (0.0..=1.0).contains(&v)) {
            continue;
        }
        let (lo, hi) = (k.saturating_sub(w), (k + 1 + w).min(s.len() - 1));
        let length: f64 = (lo..hi).map(|i| (s[i + 1].1 - s[i].1).norm()).sum();
        out.push(Crossing {
            time_s: s[k].0 + u * (s[k + 1].0 - s[k].0),
            speed_mps: length / (s[hi].0 - s[lo].0),
            segment: k,
        });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    /// Lower-left corner in plane xy (meters).
    pub origin: Vec2,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl HeatmapGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) || self.nx == 0 || self.ny == 0 {
            return Err(Error::validation("heatmap grid needs cell_size > 0 and nonzero dimensions"));
        }
        if !(self.origin.x.is_finite() && self.origin.y.is_finite()) {
            return Err(Error::validation("heatmap origin must be finite"));
        }
        Ok(())
    }

    /// `(row, col)` of the cell containing `p`, if any.
    pub fn cell(&self, p: &Vec3) -> Option<(usize, usize)> {
        let cx = ((p.x - self.origin.x) / self.cell_size).floor();
        let cy = ((p.y - self.origin.y) / self.cell_size).floor();
        (cx >= 0.0 && cy >= 0.0 && cx < self.nx as f64 && cy < self.ny as f64).then_some((cy as usize, cx as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub grid: HeatmapGrid,
    /// Row-major `ny × nx` sample counts.
    pub counts: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
    /// Samples outside the grid.
    pub spillover: u64,
}

pub fn activity_heatmap(tracks: &[GroundTrack], grid: &HeatmapGrid) -> Result<Heatmap> {
    grid.validate()?;
    let zero = || (vec![vec![0u64; grid.nx]; grid.ny], 0u64);
    let (counts, spillover) = tracks
        .par_iter()
        .fold(zero, |(mut c, mut spill), t| {
            for (_, p) in &t.samples {
                match grid.cell(p) {
                    Some((r, col)) => c[r][col] += 1,
                    None => spill += 1,
                }
            }
            (c, spill)
        })
        .reduce(zero, |(mut a, sa), (b, sb)| {
            for (ra, rb) in a.iter_mut().zip(&b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            (a, sa + sb)
        });
    let max = counts.iter().flatten().copied().max().unwrap_or(0);
    let normalized = counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if max > 0 { c as f64 / max as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(Heatmap {
        grid: *grid,
        counts,
        normalized,
        spillover,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Rotation};
    use proptest::prelude::*;

    fn straight(speed: f64, n: usize, dt: f64) -> GroundTrack {
        GroundTrack {
            track_id: "v".into(),
            samples: (0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    (t, Vec3::new(-20.0 + speed * t, 1.5, 0.0))
                })
                .collect(),
        }
    }

    fn trap() -> SpeedTrap {
        SpeedTrap::new(Vec3::new(0.0, -5.0, 0.0), Vec3::new(0.0, 5.0, 0.0), &PlaneModel::horizontal(0.0)).unwrap()
    }

    #[test]
    fn constant_speed_crossing() {
        let c = trap_speed(&straight(15.0, 40, 0.1), &trap());
        assert_eq!(c.len(), 1);
        assert!((c[0].speed_mps - 15.0).abs() < 1e-9);
        assert!((c[0].time_s - 20.0 / 15.0).abs() < 1e-9);
    }

    #[test]
    fn parallel_track_never_crosses() {
        let t = GroundTrack {
            track_id: "p".into(),
            samples: (0..10).map(|i| (i as f64, Vec3::new(3.0, i as f64, 0.0))).collect(),
        };
        assert!(trap_speed(&t, &trap()).is_empty());
    }

    #[test]
    fn reversing_vehicle_crosses_twice() {
        let xs = [-3.0, -1.0, 1.0, 3.0, 1.0, -1.0, -3.0];
        let t = GroundTrack {
            track_id: "r".into(),
            samples: xs.iter().enumerate().map(|(i, &x)| (i as f64, Vec3::new(x, 0.0, 0.0))).collect(),
        };
        let c = trap_speed(&t, &trap());
        assert_eq!(c.len(), 2);
        assert!(c[0].time_s < c[1].time_s);
        assert!((c[0].time_s - 1.5).abs() < 1e-12 && (c[1].time_s - 4.5).abs() < 1e-12);
    }

    #[test]
    fn window_averages_segments() {
        let mut t = straight(10.0, 5, 1.0);
        t.samples[1].1.x -= 5.0;
        let single = trap_speed_windowed(&t, &trap(), 1);
        let wide = trap_speed_windowed(&t, &trap(), 2);
        assert_eq!(single.len(), 1);
        assert!((single[0].speed_mps - 15.0).abs() < 1e-12);
        assert!((wide[0].speed_mps - 10.0).abs() < 1e-12);
    }

    fn down_camera() -> (CameraIntrinsics, ViewPose) {
        (
            CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0, 1280, 720),
            ViewPose::new(
                Rotation::about_y(0.4).compose(&crate::geometry::camera_to_pano_base()),
                Vec3::new(-35.0, 0.0, 8.0),
            ),
        )
    }

    #[test]
    fn lifting_recovers_positions() {
        let (k, pose) = down_camera();
        let plane = PlaneModel::horizontal(0.0);
        let truth = straight(12.0, 10, 0.1);
        let img = ImageTrack {
            track_id: "v".into(),
            samples: truth.samples.iter().map(|(t, p)| (*t, project(&k, &pose, p).unwrap())).collect(),
        };
        let (g, dropped) = lift_track(&k, &pose, &plane, &img).unwrap();
        assert!(dropped.is_empty());
        for ((_, a), (_, b)) in g.samples.iter().zip(&truth.samples) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn lifting_drops_sky_samples() {
        let k = CameraIntrinsics::pinhole(800.0, 800.0, 640.0, 360.0, 1280, 720);
        let pose = ViewPose::new(crate::geometry::camera_to_pano_base(), Vec3::new(0.0, 0.0, 5.0));
        let plane = PlaneModel::horizontal(0.0);
        let img = ImageTrack {
            track_id: "s".into(),
            samples: vec![(0.0, Vec2::new(640.0, 500.0)), (0.1, Vec2::new(640.0, 100.0)), (0.2, Vec2::new(650.0, 500.0))],
        };
        let (g, dropped) = lift_track(&k, &pose, &plane, &img).unwrap();
        assert_eq!(g.samples.len(), 2);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].index, 1);
        let bad = ImageTrack {
            track_id: "u".into(),
            samples: vec![(0.0, Vec2::new(640.0, 100.0)), (0.1, Vec2::new(640.0, 500.0))],
        };
        assert!(matches!(lift_track(&k, &pose, &plane, &bad), Err(Error::TrackUnusable(_))));
    }

    #[test]
    fn stationary_vehicle_lifts_to_one_point() {
        let (k, pose) = down_camera();
        let img = ImageTrack {
            track_id: "s".into(),
            samples: (0..5).map(|i| (i as f64, Vec2::new(600.0, 500.0))).collect(),
        };
        let (g, _) = lift_track(&k, &pose, &PlaneModel::horizontal(0.0), &img).unwrap();
        assert!(g.samples.windows(2).all(|w| w[0].1 == w[1].1));
    }

    #[test]
    fn heatmap_normalization() {
        let grid = HeatmapGrid {
            origin: Vec2::new(0.0, 0.0),
            cell_size: 1.0,
            nx: 4,
            ny: 4,
        };
        let still = |x: f64, y: f64| GroundTrack {
            track_id: "s".into(),
            samples: (0..5).map(|i| (i as f64, Vec3::new(x, y, 0.0))).collect(),
        };
        let h = activity_heatmap(&[still(0.5, 0.5)], &grid).unwrap();
        assert_eq!(h.normalized[0][0], 1.0);
        assert_eq!(h.normalized.iter().flatten().filter(|&&v| v > 0.0).count(), 1);
        let h2 = activity_heatmap(&[still(0.5, 0.5), still(2.5, 3.5), still(9.0, 9.0)], &grid).unwrap();
        assert_eq!((h2.normalized[0][0], h2.normalized[3][2]), (1.0, 1.0));
        assert_eq!(h2.spillover, 5);
        let empty = activity_heatmap(&[], &grid).unwrap();
        assert!(empty.normalized.iter().flatten().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn time_shift_invariance(shift in -100.0..100.0f64, speed in 1.0..40.0f64) {
            let t = straight(speed, 60, 0.05);
            let a = trap_speed(&t, &trap());
            let b = trap_speed(&t.shifted(shift), &trap());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.speed_mps - y.speed_mps).abs() <= 1e-12 * x.speed_mps);
            }
        }

        #[test]
        fn rescale_equivariance(s in 0.1..10.0f64, speed in 1.0..40.0f64) {
            let t = straight(speed, 60, 0.05);
            let tr = trap();
            let scaled_trap = SpeedTrap { a: tr.a * s, b: tr.b * s };
            let a = trap_speed(&t, &tr);
            let b = trap_speed(&t.scaled(s), &scaled_trap);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y.speed_mps - s * x.speed_mps).abs() <= 1e-12 * y.speed_mps);
            }
        }

        #[test]
        fn heatmap_values_in_unit_interval(xs in proptest::collection::vec((-2.0..6.0f64, -2.0..6.0f64), 1..50)) {
            let grid = HeatmapGrid { origin: Vec2::new(0.0, 0.0), cell_size: 0.5, nx: 8, ny: 8 };
            let t = GroundTrack {
                track_id: "x".into(),
                samples: xs.iter().enumerate().map(|(i, (x, y))| (i as f64, Vec3::new(*x, *y, 0.0))).collect(),
            };
            let h = activity_heatmap(&[t], &grid).unwrap();
            let in_grid: u64 = h.counts.iter().flatten().sum();
            prop_assert_eq!(in_grid + h.spillover, xs.len() as u64);
            prop_assert!(h.normalized.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            if in_grid > 0 {
                prop_assert!(h.normalized.iter().flatten().any(|&v| v == 1.0));
            }
        }
    }
}
