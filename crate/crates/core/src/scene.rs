//! Point clouds, pinhole cameras and 3D to 2D projection.
//!
//! Visibility is frustum membership only: a point is visible in a view when
//! it lies in front of the camera and projects inside the image. There is no
//! z-buffer.

use nalgebra::{Matrix3, Matrix4, Point2, Point3, Vector3};

use crate::{Error, Result};

/// Tolerance on `R^T R = I` for camera extrinsics.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3<f64>>,
    gt_class: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3<f64>>, gt_class: Option<Vec<u16>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidInput("point cloud must contain at least one point".into()));
        }
        if let Some(i) = positions.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!("point {i} has non-finite coordinates")));
        }
        if let Some(gt) = &gt_class {
            if gt.len() != positions.len() {
                return Err(Error::LengthMismatch {
                    what: "gt_class",
                    expected: positions.len(),
                    found: gt.len(),
                });
            }
        }
        Ok(Self {
            positions,
            gt_class,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false; a cloud holds at least one point.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn gt_class(&self) -> Option<&[u16]> {
        self.gt_class.as_deref()
    }
}

/// Pinhole camera: intrinsics `K`, world-to-camera rigid transform and image
/// size in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    extrinsics: Matrix4<f64>,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, extrinsics: Matrix4<f64>, width: u32, height: u32) -> Result<Self> {
        if !(intrinsics[(0, 0)] > 0.0 && intrinsics[(1, 1)] > 0.0) {
            return Err(Error::InvalidInput("camera focal entries must be positive".into()));
        }
        if !intrinsics.iter().chain(extrinsics.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("camera matrices must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("camera resolution must be non-zero".into()));
        }
        let r = extrinsics.fixed_view::<3, 3>(0, 0).into_owned();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput(format!(
                "extrinsic rotation is not orthonormal (max deviation {dev:e})"
            )));
        }
        let bottom = extrinsics.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > ORTHONORMAL_TOL {
            return Err(Error::InvalidInput("extrinsics bottom row must be [0 0 0 1]".into()));
        }
        Ok(Self {
            intrinsics,
            extrinsics,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly the image's
    /// negative v axis. Camera frame: x right, y down, z forward.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidInput("up vector parallel to viewing direction".into()))?;
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye.coords);
        let mut ext = Matrix4::identity();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        ext.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        let k = Matrix3::new(
            fx,
            0.0,
            width as f64 / 2.0,
            0.0,
            fy,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Self::new(k, ext, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &Matrix4<f64> {
        &self.extrinsics
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn to_camera_frame(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsics.transform_point(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Continuous pixel coordinates; meaningless when `depth <= 0`.
    pub pixel: Point2<f64>,
    /// Camera-frame z.
    pub depth: f64,
    pub visible: bool,
}

impl Projection {
    /// Nearest integer pixel `(u, v)` for a visible projection. Pixel centers
    /// sit at integer coordinates; the half-pixel band at the far image edges
    /// snaps to the last row/column.
    pub fn nearest_pixel(&self, cam: &CameraModel) -> Option<(u32, u32)> {
        if !self.visible {
            return None;
        }
        let u = (self.pixel.x.round() as u32).min(cam.width - 1);
        let v = (self.pixel.y.round() as u32).min(cam.height - 1);
        Some((u, v))
    }
}

pub fn project_point(p: &Point3<f64>, cam: &CameraModel) -> Projection {
    let pc = cam.to_camera_frame(p);
    let depth = pc.z;
    let uvw = cam.intrinsics * pc.coords;
    let pixel = Point2::new(uvw.x / uvw.z, uvw.y / uvw.z);
    let visible = depth > 0.0
        && pixel.x >= 0.0
        && pixel.x < cam.width as f64
        && pixel.y >= 0.0
        && pixel.y < cam.height as f64;
    Projection {
        pixel,
        depth,
        visible,
    }
}

pub fn project_cloud(cloud: &PointCloud, cam: &CameraModel) -> Vec<Projection> {
    cloud.positions.iter().map(|p| project_point(p, cam)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_camera() -> CameraModel {
        let k = Matrix3::new(500.0, 0.0, 320.0, 0.0, 480.0, 240.0, 0.0, 0.0, 1.0);
        CameraModel::new(k, Matrix4::identity(), 640, 480).unwrap()
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> CameraModel {
        let rot = Rotation3::from_euler_angles(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.0..3.0),
        );
        let mut ext = Matrix4::identity();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(rot.matrix());
        ext[(0, 3)] = rng.random_range(-5.0..5.0);
        ext[(1, 3)] = rng.random_range(-5.0..5.0);
        ext[(2, 3)] = rng.random_range(-5.0..5.0);
        let k = Matrix3::new(
            rng.random_range(100.0..800.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(100.0..400.0),
            0.0,
            rng.random_range(100.0..800.0),
            rng.random_range(100.0..300.0),
            0.0,
            0.0,
            1.0,
        );
        CameraModel::new(k, ext, 640, 480).unwrap()
    }

    /// Independent route: explicit 3x4 projection matrix on homogeneous
    /// coordinates.
    fn homogeneous_oracle(p: &Point3<f64>, cam: &CameraModel) -> (f64, f64, f64) {
        let rt = cam.extrinsics().fixed_view::<3, 4>(0, 0).into_owned();
        let proj = cam.intrinsics() * rt;
        let x = proj * Vector4::new(p.x, p.y, p.z, 1.0);
        let depth = (rt * Vector4::new(p.x, p.y, p.z, 1.0)).z;
        (x.x / x.z, x.y / x.z, depth)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = simple_camera();
        let pr = project_point(&Point3::new(0.0, 0.0, 2.0), &cam);
        assert_eq!(pr.pixel, Point2::new(320.0, 240.0));
        assert_eq!(pr.depth, 2.0);
        assert!(pr.visible);
    }

    #[test]
    fn behind_camera_is_invisible() {
        let cam = simple_camera();
        assert!(!project_point(&Point3::new(0.0, 0.0, -1.0), &cam).visible);
        assert!(!project_point(&Point3::new(0.1, 0.0, 0.0), &cam).visible);
    }

    #[test]
    fn out_of_bounds_is_invisible_but_pixel_reported() {
        let cam = simple_camera();
        let pr = project_point(&Point3::new(10.0, 0.0, 1.0), &cam);
        assert!(!pr.visible);
        assert_relative_eq!(pr.pixel.x, 5320.0);
    }

    #[test]
    fn matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let cam = random_camera(&mut rng);
            let p = Point3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let pr = project_point(&p, &cam);
            let (u, v, d) = homogeneous_oracle(&p, &cam);
            assert!((pr.pixel.x - u).abs() <= 1e-9 * u.abs().max(1.0));
            assert!((pr.pixel.y - v).abs() <= 1e-9 * v.abs().max(1.0));
            assert!((pr.depth - d).abs() <= 1e-9);
            let vis = d > 0.0 && (0.0..640.0).contains(&u) && (0.0..480.0).contains(&v);
            assert_eq!(pr.visible, vis);
        }
    }

    #[test]
    fn rigid_transform_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let cam = random_camera(&mut rng);
            let p = Point3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let g = nalgebra::Isometry3::new(
                Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), 0.5),
                Vector3::new(0.3, rng.random_range(-1.0..1.0), 0.2),
            );
            let moved_ext = cam.extrinsics() * g.inverse().to_homogeneous();
            let moved =
                CameraModel::new(*cam.intrinsics(), moved_ext, cam.width(), cam.height()).unwrap();
            let a = project_point(&p, &cam);
            let b = project_point(&g.transform_point(&p), &moved);
            assert!((a.pixel - b.pixel).norm() <= 1e-9 * a.pixel.coords.norm().max(1.0));
            assert!((a.depth - b.depth).abs() <= 1e-9);
        }
    }

    #[test]
    fn cloud_projection_is_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = random_camera(&mut rng);
        let pts: Vec<_> = (0..100)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts.clone(), None).unwrap();
        let all = project_cloud(&cloud, &cam);
        assert_eq!(all.len(), 100);
        for (p, pr) in pts.iter().zip(&all) {
            assert_eq!(*pr, project_point(p, &cam));
        }

        let single = PointCloud::new(vec![pts[0]], None).unwrap();
        assert_eq!(project_cloud(&single, &cam), vec![project_point(&pts[0], &cam)]);

        let behind = PointCloud::new(vec![Point3::new(0.0, 0.0, -1.0); 5], None).unwrap();
        assert!(project_cloud(&behind, &simple_camera()).iter().all(|p| !p.visible));
    }

    #[test]
    fn visible_pixels_sample_in_bounds() {
        let cam = simple_camera();
        let pr = project_point(&Point3::new(0.6399, 0.4999, 1.0), &cam);
        assert!(pr.visible);
        assert_eq!(pr.nearest_pixel(&cam), Some((639, 479)));
    }

    #[test]
    fn rejects_invalid_cameras() {
        let mut ext = Matrix4::identity();
        ext[(0, 0)] = 1.1;
        assert!(CameraModel::new(Matrix3::identity(), ext, 10, 10).is_err());
        let mut k = Matrix3::identity();
        k[(0, 0)] = -1.0;
        assert!(CameraModel::new(k, Matrix4::identity(), 10, 10).is_err());
    }

    #[test]
    fn rejects_invalid_clouds() {
        assert!(PointCloud::new(vec![], None).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)], None).is_err());
        assert!(PointCloud::new(vec![Point3::origin()], Some(vec![1, 2])).is_err());
    }

    #[test]
    fn look_at_centers_target() {
        let cam = CameraModel::look_at(
            Point3::new(5.0, 3.0, 4.0),
            Point3::new(0.0, 0.0, 0.0),
            Vector3::z(),
            300.0,
            300.0,
            64,
            48,
        )
        .unwrap();
        let pr = project_point(&Point3::origin(), &cam);
        assert!(pr.visible);
        assert_relative_eq!(pr.pixel.x, 32.0, epsilon = 1e-9);
        assert_relative_eq!(pr.pixel.y, 24.0, epsilon = 1e-9);
        // world up maps to image up (smaller v)
        let up = project_point(&Point3::new(0.0, 0.0, 0.5), &cam);
        assert!(up.pixel.y < 24.0);
    }
}
