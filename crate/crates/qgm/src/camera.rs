//! Pinhole camera model, rigid poses, RGB-D frames, and rays.
//!
//! All types are immutable after construction and safe to share across
//! threads. Pixels are addressed as `(row, col)` with the origin at the
//! top-left corner; a pixel's ray passes through its integer coordinate
//! (no half-pixel offset), so `backproject` and `project` are exact
//! inverses of each other.

use nalgebra::{Matrix3, Vector3};

/// Pinhole intrinsics without distortion. Depth streams from the datasets
/// this crate targets are already undistorted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(cx > 0.0 && cx < width as f64, "principal point x out of image");
        assert!(cy > 0.0 && cy < height as f64, "principal point y out of image");
        CameraIntrinsics { fx, fy, cx, cy, width, height }
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        row >= 0.0 && col >= 0.0 && row < self.height as f64 && col < self.width as f64
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, checking the rotation is orthonormal with det +1
    /// within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        assert!(err < 1e-9, "rotation not orthonormal (residual {err})");
        let det = rotation.determinant();
        assert!((det - 1.0).abs() < 1e-9, "rotation determinant {det} != 1");
        Pose { rotation, translation }
    }

    /// Builds a pose from a possibly noisy rotation (e.g. parsed from text)
    /// by projecting onto the nearest proper rotation via SVD.
    pub fn orthonormalized(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let svd = rotation.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Pose::new(r, translation)
    }

    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// World point of a camera-frame point.
    pub fn to_world(&self, p_cam: Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_cam + self.translation
    }

    /// Camera-frame point of a world point.
    pub fn to_camera(&self, p_world: Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_world - self.translation)
    }

    /// Viewing direction of the optical axis in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::new(0.0, 0.0, 1.0)
    }
}

/// Color image with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    data: Vec<[f32; 3]>,
}

impl ColorImage {
    pub fn new(width: u32, height: u32, data: Vec<[f32; 3]>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        ColorImage { width, height, data }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        ColorImage { width, height, data: vec![rgb; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> [f32; 3] {
        self.data[(row * self.width + col) as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, rgb: [f32; 3]) {
        self.data[(row * self.width + col) as usize] = rgb;
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    /// Luma in [0, 1] using Rec. 601 weights.
    #[inline]
    pub fn luma(&self, row: u32, col: u32) -> f64 {
        let [r, g, b] = self.get(row, col);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    }
}

/// Depth image in meters; 0 encodes "no measurement".
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        assert!(
            data.iter().all(|d| d.is_finite() && *d >= 0.0),
            "depth values must be finite and non-negative"
        );
        DepthImage { width, height, data }
    }

    pub fn filled(width: u32, height: u32, depth: f32) -> Self {
        DepthImage { width, height, data: vec![depth; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> f64 {
        self.data[(row * self.width + col) as usize] as f64
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, depth: f32) {
        self.data[(row * self.width + col) as usize] = depth;
    }

    /// Depth at a pixel if it holds a measurement (> 0).
    #[inline]
    pub fn valid(&self, row: u32, col: u32) -> Option<f64> {
        let d = self.get(row, col);
        (d > 0.0).then_some(d)
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }
}

/// A posed RGB-D observation.
#[derive(Debug, Clone)]
pub struct RgbdFrame {
    pub frame_id: u64,
    pub color: ColorImage,
    pub depth: DepthImage,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl RgbdFrame {
    pub fn new(
        frame_id: u64,
        color: ColorImage,
        depth: DepthImage,
        pose: Pose,
        intrinsics: CameraIntrinsics,
    ) -> Self {
        assert_eq!(color.width, intrinsics.width);
        assert_eq!(color.height, intrinsics.height);
        assert_eq!(depth.width, intrinsics.width);
        assert_eq!(depth.height, intrinsics.height);
        RgbdFrame { frame_id, color, depth, pose, intrinsics }
    }
}

/// A viewing ray through a pixel.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub pixel: (u32, u32),
}

/// Lifts a pixel with a depth measurement to a world point.
///
/// Returns `None` when `depth <= 0` (no measurement). The depth is the
/// camera-frame z coordinate, not the distance along the ray.
pub fn backproject(
    pixel: (f64, f64),
    depth: f64,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
) -> Option<Vector3<f64>> {
    if depth <= 0.0 {
        return None;
    }
    let (row, col) = pixel;
    let x = (col - intrinsics.cx) / intrinsics.fx * depth;
    let y = (row - intrinsics.cy) / intrinsics.fy * depth;
    Some(pose.to_world(Vector3::new(x, y, depth)))
}

/// Projects a world point into the image.
///
/// Returns `None` when the point is at or behind the camera plane
/// (camera-frame z <= 0); otherwise `(row, col, depth)` with the depth
/// being the camera-frame z coordinate.
pub fn project(
    point: Vector3<f64>,
    intrinsics: &CameraIntrinsics,
    pose: &Pose,
) -> Option<(f64, f64, f64)> {
    let p = pose.to_camera(point);
    if p.z <= 0.0 {
        return None;
    }
    let col = p.x / p.z * intrinsics.fx + intrinsics.cx;
    let row = p.y / p.z * intrinsics.fy + intrinsics.cy;
    Some((row, col, p.z))
}

/// World-space unit ray through one pixel.
pub fn pixel_ray(frame: &RgbdFrame, pixel: (u32, u32)) -> Ray {
    let (row, col) = pixel;
    debug_assert!(row < frame.intrinsics.height && col < frame.intrinsics.width);
    let dir_cam = Vector3::new(
        (col as f64 - frame.intrinsics.cx) / frame.intrinsics.fx,
        (row as f64 - frame.intrinsics.cy) / frame.intrinsics.fy,
        1.0,
    );
    let dir_world = (frame.pose.rotation * dir_cam).normalize();
    Ray { origin: frame.pose.translation, direction: dir_world, pixel }
}

/// Rays for a batch of pixels; origins equal the pose translation and
/// directions are unit-norm.
pub fn pixel_rays(frame: &RgbdFrame, pixels: &[(u32, u32)]) -> Vec<Ray> {
    pixels.iter().map(|&p| pixel_ray(frame, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(120.0, 120.0, 80.0, 60.0, 160, 120)
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let k = intr();
        let p = backproject((k.cy, k.cx), 1.0, &k, &Pose::identity()).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn one_focal_length_offset() {
        let k = intr();
        let p = backproject((k.cy, k.cx + k.fx), 1.0, &k, &Pose::identity()).unwrap();
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn backproject_rejects_invalid_depth() {
        let k = intr();
        assert!(backproject((10.0, 10.0), 0.0, &k, &Pose::identity()).is_none());
        assert!(backproject((10.0, 10.0), -1.0, &k, &Pose::identity()).is_none());
    }

    #[test]
    fn project_principal_axis_point() {
        let k = intr();
        let (row, col, depth) = project(Vector3::new(0.0, 0.0, 1.0), &k, &Pose::identity()).unwrap();
        assert_relative_eq!(row, k.cy, epsilon = 1e-12);
        assert_relative_eq!(col, k.cx, epsilon = 1e-12);
        assert_relative_eq!(depth, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn project_signals_behind_camera() {
        let k = intr();
        assert!(project(Vector3::new(0.0, 0.0, -1.0), &k, &Pose::identity()).is_none());
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
        let angle = rng.gen::<f64>() * std::f64::consts::PI;
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        );
        Pose::orthonormalized(
            *rot.matrix(),
            Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()),
        )
    }

    #[test]
    fn project_backproject_roundtrip() {
        let k = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let pose = random_pose(&mut rng);
            let row = rng.gen_range(0.0..k.height as f64);
            let col = rng.gen_range(0.0..k.width as f64);
            let depth = rng.gen_range(0.1..5.0);
            let p = backproject((row, col), depth, &k, &pose).unwrap();
            let (r2, c2, d2) = project(p, &k, &pose).unwrap();
            assert!((r2 - row).abs() < 0.5 && (c2 - col).abs() < 0.5, "pixel drift");
            assert!((r2 - row).hypot(c2 - col) < 1e-9, "roundtrip should be near exact");
            assert!((d2 - depth).abs() < 1e-6);
        }
    }

    #[test]
    fn rays_follow_backprojection() {
        let k = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = RgbdFrame::new(
            0,
            ColorImage::filled(k.width, k.height, [0.5; 3]),
            DepthImage::filled(k.width, k.height, 1.0),
            random_pose(&mut rng),
            k,
        );
        // Principal point with identity pose -> +z.
        let id_frame = RgbdFrame::new(
            1,
            ColorImage::filled(k.width, k.height, [0.5; 3]),
            DepthImage::filled(k.width, k.height, 1.0),
            Pose::identity(),
            k,
        );
        let r = pixel_ray(&id_frame, (k.cy as u32, k.cx as u32));
        assert_relative_eq!(r.direction, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);

        for &pixel in &[(0u32, 0u32), (119, 159), (0, 159), (60, 80)] {
            let ray = pixel_ray(&frame, pixel);
            assert_relative_eq!(ray.direction.norm(), 1.0, epsilon = 1e-9);
            assert_relative_eq!(ray.origin, frame.pose.translation, epsilon = 1e-12);
            let target =
                backproject((pixel.0 as f64, pixel.1 as f64), 1.0, &k, &frame.pose).unwrap();
            let expect = (target - ray.origin).normalize();
            assert_relative_eq!(ray.direction, expect, epsilon = 1e-9);
            // Walking the ray to camera depth d reprojects onto the pixel.
            let axis = frame.pose.optical_axis();
            let t = 1.0 / ray.direction.dot(&axis);
            let (row, col, _) = project(ray.origin + t * ray.direction, &k, &frame.pose).unwrap();
            assert!((row - pixel.0 as f64).hypot(col - pixel.1 as f64) < 0.5);
        }
    }

    #[test]
    fn empty_pixel_list_gives_empty_rays() {
        let k = intr();
        let frame = RgbdFrame::new(
            0,
            ColorImage::filled(k.width, k.height, [0.0; 3]),
            DepthImage::filled(k.width, k.height, 1.0),
            Pose::identity(),
            k,
        );
        assert!(pixel_rays(&frame, &[]).is_empty());
    }
}
