//! WGS84 geodetic, ECEF and local ENU conversions, plus similarity estimation
//! for metric geo-registration.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Rotation, ViewPose};
use crate::sfm::{Reconstruction, ScaleState};
use crate::{Error, Result};

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS84 semi-minor axis in meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoord {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

impl GeodeticCoord {
    pub fn new(lat_deg: f64, lon_deg: f64, alt_m: f64) -> Self {
        GeodeticCoord {
            lat_deg,
            lon_deg,
            alt_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lat_deg >= -90.0 && self.lat_deg <= 90.0) {
            return Err(Error::validation(format!(
                "latitude {} outside [-90, 90]",
                self.lat_deg
            )));
        }
        if !(self.lon_deg >= -180.0 && self.lon_deg < 180.0) {
            return Err(Error::validation(format!(
                "longitude {} outside [-180, 180)",
                self.lon_deg
            )));
        }
        if !self.alt_m.is_finite() {
            return Err(Error::validation("altitude must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcefCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl EcefCoord {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        EcefCoord { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        EcefCoord::new(v.x, v.y, v.z)
    }
}

pub fn geodetic_to_ecef(g: &GeodeticCoord) -> EcefCoord {
    let lat = g.lat_deg.to_radians();
    let lon = g.lon_deg.to_radians();
    let (slat, clat) = lat.sin_cos();
    let (slon, clon) = lon.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
    EcefCoord {
        x: (n + g.alt_m) * clat * clon,
        y: (n + g.alt_m) * clat * slon,
        z: (n * (1.0 - WGS84_E2) + g.alt_m) * slat,
    }
}

/// Iterative inverse of [`geodetic_to_ecef`].
pub fn ecef_to_geodetic(e: &EcefCoord) -> Result<GeodeticCoord> {
    let v = e.to_vector();
    if !(v.norm() > 1000.0) {
        return Err(Error::Range(format!(
            "ECEF point {:?} too close to the Earth's center",
            e
        )));
    }
    let p = (e.x * e.x + e.y * e.y).sqrt();
    let lon = e.y.atan2(e.x);
    let mut lat = e.z.atan2(p * (1.0 - WGS84_E2));
    for _ in 0..30 {
        let (slat, clat) = lat.sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
        let alt = p * clat + e.z * slat - WGS84_A * WGS84_A / n;
        let next = e.z.atan2(p * (1.0 - WGS84_E2 * n / (n + alt)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    let (slat, clat) = lat.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * slat * slat).sqrt();
    // Valid at all latitudes, including the poles where p -> 0.
    let alt = p * clat + e.z * slat - WGS84_A * WGS84_A / n;
    let mut lon_deg = lon.to_degrees();
    if lon_deg >= 180.0 {
        lon_deg -= 360.0;
    }
    Ok(GeodeticCoord::new(lat.to_degrees(), lon_deg, alt))
}

/// Rotation whose rows are the east, north and up unit vectors at `origin` (ECEF -> ENU).
fn enu_basis(origin: &GeodeticCoord) -> Matrix3<f64> {
    let lat = origin.lat_deg.to_radians();
    let lon = origin.lon_deg.to_radians();
    let (slat, clat) = lat.sin_cos();
    let (slon, clon) = lon.sin_cos();
    #[rustfmt::skip]
    let m = Matrix3::new(
        -slon, clon, 0.0,
        -slat * clon, -slat * slon, clat,
        clat * clon, clat * slon, slat,
    );
    m
}

/// East, north, up offset of `e` from `origin` in meters.
pub fn ecef_to_enu(origin: &GeodeticCoord, e: &EcefCoord) -> Vector3<f64> {
    let o = geodetic_to_ecef(origin).to_vector();
    enu_basis(origin) * (e.to_vector() - o)
}

pub fn enu_to_ecef(origin: &GeodeticCoord, enu: &Vector3<f64>) -> EcefCoord {
    let o = geodetic_to_ecef(origin).to_vector();
    EcefCoord::from_vector(&(enu_basis(origin).transpose() * enu + o))
}

pub fn geodetic_to_enu(origin: &GeodeticCoord, g: &GeodeticCoord) -> Vector3<f64> {
    ecef_to_enu(origin, &geodetic_to_ecef(g))
}

pub fn enu_to_geodetic(origin: &GeodeticCoord, enu: &Vector3<f64>) -> Result<GeodeticCoord> {
    ecef_to_geodetic(&enu_to_ecef(origin, enu))
}

/// Mean of the ECEF positions of the tags, converted back to geodetic.
pub fn centroid_origin<'a>(tags: impl IntoIterator<Item = &'a GeodeticCoord>) -> Result<GeodeticCoord> {
    let mut sum = Vector3::zeros();
    let mut alt = 0.0;
    let mut n = 0usize;
    for g in tags {
        sum += geodetic_to_ecef(g).to_vector();
        alt += g.alt_m;
        n += 1;
    }
    if n == 0 {
        return Err(Error::validation("no geodetic tags to average"));
    }
    let mut g = ecef_to_geodetic(&EcefCoord::from_vector(&(sum / n as f64)))?;
    // The ECEF mean sits on a chord below the tags; keep the mean tag altitude instead.
    g.alt_m = alt / n as f64;
    Ok(g)
}

/// `x -> scale * R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }

    /// Maps a world-from-camera pose into the target frame.
    pub fn apply_pose(&self, pose: &ViewPose) -> ViewPose {
        ViewPose {
            rotation: self.rotation.compose(&pose.rotation),
            center: self.apply(&pose.center),
            pano: pose.pano.clone(),
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rinv = self.rotation.inverse();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rinv,
            translation: -rinv.rotate(&self.translation) / self.scale,
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation.compose(&other.rotation),
            translation: self.apply(&other.translation),
        }
    }
}

fn centered(points: &[Vector3<f64>]) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    (mean, points.iter().map(|p| p - mean).collect())
}

/// Singular values (descending) of the centered point scatter.
fn scatter_singular_values(points: &[Vector3<f64>]) -> Vector3<f64> {
    let (_, c) = centered(points);
    let cov: Matrix3<f64> = c.iter().map(|p| p * p.transpose()).sum();
    let mut s = cov.symmetric_eigenvalues().map(|v| v.max(0.0).sqrt());
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    s
}

/// Closed-form least-squares similarity (Umeyama) minimizing Σ‖dst − (sR src + t)‖².
pub fn estimate_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<SimilarityTransform> {
    if src.len() != dst.len() {
        return Err(Error::validation(format!(
            "similarity needs paired points ({} vs {})",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::degenerate(format!(
            "similarity needs >= 3 correspondences, got {}",
            src.len()
        )));
    }
    let sv = scatter_singular_values(src);
    if !(sv[1] > 1e-9 * sv[0].max(1e-300)) {
        return Err(Error::degenerate("similarity source points are collinear"));
    }
    let (mu_s, cs) = centered(src);
    let (mu_d, cd) = centered(dst);
    let n = src.len() as f64;
    let cov: Matrix3<f64> = cd
        .iter()
        .zip(&cs)
        .map(|(d, s)| d * s.transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let var_s = cs.iter().map(|s| s.norm_squared()).sum::<f64>() / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::degenerate("similarity SVD failed")),
    };
    let mut sign = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let r = u * sign * v_t;
    let scale = (svd.singular_values[0] * sign[(0, 0)]
        + svd.singular_values[1] * sign[(1, 1)]
        + svd.singular_values[2] * sign[(2, 2)])
        / var_s;
    if !(scale > 0.0) {
        return Err(Error::degenerate("similarity scale is not positive"));
    }
    let rotation = Rotation::from_matrix_unchecked(r);
    let translation = mu_d - rotation.rotate(&mu_s) * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// RANSAC wrapper around [`estimate_similarity`] for corrupted GPS tags.
///
/// Returns the transform refit on all inliers and the inlier mask.
pub fn estimate_similarity_ransac(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    threshold_m: f64,
    seed: u64,
) -> Result<(SimilarityTransform, Vec<bool>)> {
    if src.len() != dst.len() || src.len() < 3 {
        return estimate_similarity(src, dst).map(|t| (t, vec![true; src.len()]));
    }
    let n = src.len();
    let mut best: Option<Vec<bool>> = None;
    let mut best_count = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..500 {
        let idx = sample(&mut rng, n, 3).into_vec();
        let s: Vec<_> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
        let Ok(t) = estimate_similarity(&s, &d) else {
            continue;
        };
        let mask: Vec<bool> = src
            .iter()
            .zip(dst)
            .map(|(s, d)| (t.apply(s) - d).norm() < threshold_m)
            .collect();
        let count = mask.iter().filter(|&&m| m).count();
        if count > best_count {
            best_count = count;
            best = Some(mask);
        }
    }
    let mask = best.ok_or_else(|| Error::degenerate("no non-degenerate similarity sample"))?;
    let s: Vec<_> = src.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    let d: Vec<_> = dst.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    Ok((estimate_similarity(&s, &d)?, mask))
}

/// Ratio of the second to first singular value below which a panorama layout counts as collinear.
pub const COLLINEAR_RATIO_TOL: f64 = 1e-6;

/// Aligns an up-to-scale reconstruction with ENU coordinates of its panorama GPS tags.
///
/// Panorama centers in the reconstruction are the means of their registered view centers.
/// Tag altitudes are used as given; tags sharing one nominal altitude leave the vertical
/// component of the fit poorly constrained.
pub fn georegister(
    recon: &Reconstruction,
    pano_geodetic: &BTreeMap<String, GeodeticCoord>,
    enu_origin: &GeodeticCoord,
) -> Result<(Reconstruction, SimilarityTransform)> {
    georegister_with(recon, pano_geodetic, enu_origin, None)
}

/// As [`georegister`], optionally through the RANSAC wrapper with the given inlier threshold.
pub fn georegister_with(
    recon: &Reconstruction,
    pano_geodetic: &BTreeMap<String, GeodeticCoord>,
    enu_origin: &GeodeticCoord,
    ransac_threshold_m: Option<f64>,
) -> Result<(Reconstruction, SimilarityTransform)> {
    let centers = recon.pano_centers();
    if centers.len() < 3 {
        return Err(Error::degenerate(format!(
            "georegistration needs >= 3 registered panoramas, got {}",
            centers.len()
        )));
    }
    let mut src = Vec::with_capacity(centers.len());
    let mut dst = Vec::with_capacity(centers.len());
    for (pano_id, c) in &centers {
        let g = pano_geodetic.get(pano_id).ok_or_else(|| {
            Error::validation(format!("panorama {pano_id} has no geodetic tag"))
        })?;
        src.push(*c);
        dst.push(geodetic_to_enu(enu_origin, g));
    }
    let sv = scatter_singular_values(&src);
    if !(sv[1] > COLLINEAR_RATIO_TOL * sv[0]) {
        return Err(Error::degenerate(format!(
            "panorama centers are collinear (singular value ratio {:e})",
            sv[1] / sv[0].max(1e-300)
        )));
    }
    let transform = match ransac_threshold_m {
        Some(th) => estimate_similarity_ransac(&src, &dst, th, 0)?.0,
        None => estimate_similarity(&src, &dst)?,
    };
    let mut out = recon.transformed(&transform);
    out.scale_state = ScaleState::Metric;
    out.enu_origin = Some(*enu_origin);
    Ok((out, transform))
}
