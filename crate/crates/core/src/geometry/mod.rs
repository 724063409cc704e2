//! Camera models, projection, distortion, and panorama sampling geometry.

mod camera;
mod panorama;
mod rotation;

pub use camera::{
    focal_from_fov, pixel_to_world_ray, project, undistort_pixel, CameraIntrinsics, PanoSlot,
    ViewPose, INTRINSIC_NAMES,
};
pub use panorama::{
    camera_to_pano_base, equirect_pixel_to_ray, ray_to_equirect_pixel, sample_perspective_views,
    slot_rotation, PanoramaMeta, SamplingConfig,
};
pub use rotation::{skew, Rotation};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
