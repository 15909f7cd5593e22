//! Pinhole multi-camera geometry.
//!
//! Conventions: the ego frame is x forward, y left, z up with the origin on
//! the ground below the vehicle centre. Camera frames are x right, y down,
//! z along the optical axis. Extrinsics map camera coordinates into the ego
//! frame and are kept as two separate homogeneous matrices, a rotation `R`
//! and a translation `T`, so that a camera point `p` lands at `T·R·p`.
//!
//! Depth `d` always means the camera-frame z coordinate, so a pixel `(u, v)`
//! at depth `d` back-projects through `K⁻¹·[u·d, v·d, d, 1]ᵀ`.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("depth {depth} outside [{min}, {max}]")]
    DepthOutOfRange { depth: f64, min: f64, max: f64 },
    #[error("point is behind the camera (camera-frame z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),
}

/// Homogeneous 4×4 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mat4<T: Real>(pub [[T; 4]; 4]);

impl<T: Real> Mat4<T> {
    pub fn identity() -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Mat4(m)
    }

    pub fn translation(x: T, y: T, z: T) -> Self {
        let mut m = Self::identity();
        m.0[0][3] = x;
        m.0[1][3] = y;
        m.0[2][3] = z;
        m
    }

    /// Rotation about the z axis by `yaw` radians.
    pub fn rotation_z(yaw: T) -> Self {
        let (s, c) = yaw.sin_cos();
        let mut m = Self::identity();
        m.0[0][0] = c;
        m.0[0][1] = -s;
        m.0[1][0] = s;
        m.0[1][1] = c;
        m
    }

    /// Homogeneous matrix from a 3×3 rotation block given by its columns.
    pub fn from_rotation_columns(cols: [[T; 3]; 3]) -> Self {
        let mut m = Self::identity();
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                m.0[i][j] = v;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[j][i];
            }
        }
        Mat4(m)
    }

    pub fn mul_vec(&self, v: [T; 4]) -> [T; 4] {
        let mut out = [T::zero(); 4];
        for (o, row) in out.iter_mut().zip(self.0.iter()) {
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2] + row[3] * v[3];
        }
        out
    }

    /// Applies the matrix to a point and divides by the homogeneous coordinate.
    pub fn transform_point(&self, p: Point3<T>) -> Point3<T> {
        let h = self.mul_vec([p.x, p.y, p.z, T::one()]);
        Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3])
    }

    /// Applies only the linear 3×3 block.
    pub fn transform_vector(&self, v: Point3<T>) -> Point3<T> {
        let h = self.mul_vec([v.x, v.y, v.z, T::zero()]);
        Point3::new(h[0], h[1], h[2])
    }

    /// Inverse of a rigid transform `[Q | t; 0 | 1]`, i.e. `[Qᵀ | −Qᵀt; 0 | 1]`.
    pub fn rigid_inverse(&self) -> Self {
        let mut m = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        for i in 0..3 {
            m.0[i][3] = -(0..3).fold(T::zero(), |acc, k| acc + self.0[k][i] * self.0[k][3]);
        }
        m
    }

    /// Largest deviation of the 3×3 block from orthonormality, `max |QᵀQ − I|`.
    pub fn orthonormality_error(&self) -> T {
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let dot = (0..3).fold(T::zero(), |acc, k| acc + self.0[k][i] * self.0[k][j]);
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    pub fn det3(&self) -> T {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    fn has_homogeneous_last_row(&self) -> bool {
        let r = &self.0[3];
        r[0] == T::zero() && r[1] == T::zero() && r[2] == T::zero() && r[3] == T::one()
    }

    fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl<T: Real> Mul for Mat4<T> {
    type Output = Mat4<T>;

    fn mul(self, rhs: Mat4<T>) -> Mat4<T> {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).fold(T::zero(), |acc, k| acc + self.0[i][k] * rhs.0[k][j]);
            }
        }
        Mat4(m)
    }
}

/// A 3D point in meters, ego frame unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Point3<T: Real> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Point3 { x, y, z }
    }

    pub fn origin() -> Self {
        Point3::new(T::zero(), T::zero(), T::zero())
    }

    pub fn norm(&self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &Point3<T>) -> T {
        (*self - *other).norm()
    }

    /// Distance in the ground (x, y) plane.
    pub fn bev_distance(&self, other: &Point3<T>) -> T {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn cross(&self, o: &Point3<T>) -> Self {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl<T: Real> Add for Point3<T> {
    type Output = Point3<T>;
    fn add(self, o: Point3<T>) -> Point3<T> {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Point3<T> {
    type Output = Point3<T>;
    fn sub(self, o: Point3<T>) -> Point3<T> {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// Continuous image position in one camera of the rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Pixel<T: Real> {
    pub camera: usize,
    pub u: T,
    pub v: T,
}

impl<T: Real> Pixel<T> {
    pub fn new(camera: usize, u: T, v: T) -> Self {
        Pixel { camera, u, v }
    }
}

/// Valid depth interval for back-projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DepthRange<T: Real> {
    pub min: T,
    pub max: T,
}

impl<T: Real> Default for DepthRange<T> {
    fn default() -> Self {
        DepthRange {
            min: T::lit(0.05),
            max: T::lit(80.0),
        }
    }
}

impl<T: Real> DepthRange<T> {
    pub fn contains(&self, d: T) -> bool {
        d >= self.min && d <= self.max
    }

    pub fn midpoint(&self) -> T {
        (self.min + self.max) * T::lit(0.5)
    }
}

/// Pinhole camera: intrinsics plus camera→ego extrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", try_from = "RawCamera<T>")]
pub struct CameraModel<T: Real> {
    /// Index of this camera in its rig.
    pub id: usize,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rotation: Mat4<T>,
    pub translation: Mat4<T>,
    pub width: usize,
    pub height: usize,
}

#[derive(Deserialize)]
#[serde(bound = "")]
struct RawCamera<T: Real> {
    id: usize,
    fx: T,
    fy: T,
    cx: T,
    cy: T,
    rotation: Mat4<T>,
    translation: Mat4<T>,
    width: usize,
    height: usize,
}

impl<T: Real> TryFrom<RawCamera<T>> for CameraModel<T> {
    type Error = GeometryError;

    fn try_from(r: RawCamera<T>) -> Result<Self, Self::Error> {
        CameraModel::new(
            r.id,
            [r.fx, r.fy, r.cx, r.cy],
            r.rotation,
            r.translation,
            r.width,
            r.height,
        )
    }
}

impl<T: Real> CameraModel<T> {
    /// Builds a camera from `[fx, fy, cx, cy]` and extrinsics, validating both.
    pub fn new(
        id: usize,
        intrinsics: [T; 4],
        rotation: Mat4<T>,
        translation: Mat4<T>,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let [fx, fy, cx, cy] = intrinsics;
        let w = T::from_count(width);
        let h = T::from_count(height);
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !(cx > T::zero() && cx < w && cy > T::zero() && cy < h) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside the {width}x{height} image"
            )));
        }
        if !rotation.is_finite() || !translation.is_finite() {
            return Err(GeometryError::InvalidCamera("non-finite extrinsics".into()));
        }
        if !rotation.has_homogeneous_last_row() || !translation.has_homogeneous_last_row() {
            return Err(GeometryError::InvalidCamera(
                "extrinsics must have a homogeneous last row".into(),
            ));
        }
        let r = &rotation.0;
        if r[0][3] != T::zero() || r[1][3] != T::zero() || r[2][3] != T::zero() {
            return Err(GeometryError::InvalidCamera(
                "rotation matrix carries a translation column".into(),
            ));
        }
        if rotation.orthonormality_error() > T::lit(1e-9) {
            return Err(GeometryError::InvalidCamera(
                "rotation block is not orthonormal".into(),
            ));
        }
        let t = &translation.0;
        for (i, row) in t.iter().take(3).enumerate() {
            for (j, &v) in row.iter().take(3).enumerate() {
                let target = if i == j { T::one() } else { T::zero() };
                if v != target {
                    return Err(GeometryError::InvalidCamera(
                        "translation matrix must have an identity 3x3 block".into(),
                    ));
                }
            }
        }
        Ok(CameraModel {
            id,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// The 4×4 intrinsic matrix `K`.
    pub fn intrinsic_matrix(&self) -> Mat4<T> {
        let z = T::zero();
        let o = T::one();
        Mat4([
            [self.fx, z, self.cx, z],
            [z, self.fy, self.cy, z],
            [z, z, o, z],
            [z, z, z, o],
        ])
    }

    /// Closed-form `K⁻¹` (upper triangular).
    pub fn inverse_intrinsic_matrix(&self) -> Mat4<T> {
        let z = T::zero();
        let o = T::one();
        Mat4([
            [o / self.fx, z, -self.cx / self.fx, z],
            [z, o / self.fy, -self.cy / self.fy, z],
            [z, z, o, z],
            [z, z, z, o],
        ])
    }

    /// Full camera→ego transform `T·R`.
    pub fn camera_to_ego(&self) -> Mat4<T> {
        self.translation * self.rotation
    }

    /// Camera centre in the ego frame.
    pub fn center(&self) -> Point3<T> {
        let t = &self.translation.0;
        Point3::new(t[0][3], t[1][3], t[2][3])
    }

    pub fn contains_pixel(&self, u: T, v: T) -> bool {
        u >= T::zero() && v >= T::zero() && u < T::from_count(self.width) && v < T::from_count(self.height)
    }

    /// Back-projects pixel `(u, v)` at depth `d` into the ego frame:
    /// `R·K⁻¹·[u·d, v·d, d, 1]ᵀ` followed by the translation `T`.
    pub fn unproject(&self, pixel: Pixel<T>, depth: T, range: &DepthRange<T>) -> Result<Point3<T>, GeometryError> {
        if !range.contains(depth) {
            return Err(GeometryError::DepthOutOfRange {
                depth: depth.as_f64(),
                min: range.min.as_f64(),
                max: range.max.as_f64(),
            });
        }
        Ok(self.unproject_unchecked(pixel.u, pixel.v, depth))
    }

    /// Back-projection without the depth-range check.
    pub fn unproject_unchecked(&self, u: T, v: T, depth: T) -> Point3<T> {
        let cam = self
            .inverse_intrinsic_matrix()
            .mul_vec([u * depth, v * depth, depth, T::one()]);
        let rotated = self.rotation.mul_vec(cam);
        let h = self.translation.mul_vec(rotated);
        Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3])
    }

    /// Ego-frame point expressed in camera coordinates.
    pub fn ego_to_camera(&self, p: Point3<T>) -> Point3<T> {
        let c = self.center();
        self.rotation.transpose().transform_vector(p - c)
    }

    /// Ego-frame direction of the ray through `(u, v)`, scaled so that its
    /// camera-frame z component is exactly one.
    pub fn ray_direction(&self, u: T, v: T) -> Point3<T> {
        let d = Point3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, T::one());
        self.rotation.transform_vector(d)
    }

    /// Projects an ego-frame point; inverse of [`CameraModel::unproject`].
    pub fn project(&self, point: Point3<T>) -> Result<(Pixel<T>, T), GeometryError> {
        let p = self.ego_to_camera(point);
        if p.z <= T::zero() {
            return Err(GeometryError::BehindCamera { z: p.z.as_f64() });
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        Ok((Pixel::new(self.id, u, v), p.z))
    }
}

/// Ego→world rigid transform at a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", try_from = "RawPose<T>")]
pub struct EgoPose<T: Real> {
    pub matrix: Mat4<T>,
    pub timestamp: T,
}

#[derive(Deserialize)]
#[serde(bound = "")]
struct RawPose<T: Real> {
    matrix: Mat4<T>,
    timestamp: T,
}

impl<T: Real> TryFrom<RawPose<T>> for EgoPose<T> {
    type Error = GeometryError;
    fn try_from(r: RawPose<T>) -> Result<Self, Self::Error> {
        EgoPose::new(r.matrix, r.timestamp)
    }
}

impl<T: Real> EgoPose<T> {
    pub fn new(matrix: Mat4<T>, timestamp: T) -> Result<Self, GeometryError> {
        if !matrix.is_finite() || !matrix.has_homogeneous_last_row() {
            return Err(GeometryError::InvalidPose("not a homogeneous rigid transform".into()));
        }
        if matrix.orthonormality_error() > T::lit(1e-9) {
            return Err(GeometryError::InvalidPose("rotation block is not orthonormal".into()));
        }
        if (matrix.det3() - T::one()).abs() > T::lit(1e-9) {
            return Err(GeometryError::InvalidPose("rotation determinant is not +1".into()));
        }
        Ok(EgoPose { matrix, timestamp })
    }

    /// Planar pose: position `(x, y, z)` and heading `yaw` about world z.
    pub fn planar(x: T, y: T, z: T, yaw: T, timestamp: T) -> Self {
        EgoPose {
            matrix: Mat4::translation(x, y, z) * Mat4::rotation_z(yaw),
            timestamp,
        }
    }

    pub fn identity(timestamp: T) -> Self {
        EgoPose {
            matrix: Mat4::identity(),
            timestamp,
        }
    }

    pub fn ego_to_world(&self, p: Point3<T>) -> Point3<T> {
        self.matrix.transform_point(p)
    }

    pub fn world_to_ego(&self, p: Point3<T>) -> Point3<T> {
        self.matrix.rigid_inverse().transform_point(p)
    }
}

/// Re-expresses a point given in the ego frame of `pose_prev` in the ego
/// frame of `pose_now`: `(E_now)⁻¹·E_prev·p`.
pub fn ego_align<T: Real>(point: Point3<T>, pose_prev: &EgoPose<T>, pose_now: &EgoPose<T>) -> Point3<T> {
    (pose_now.matrix.rigid_inverse() * pose_prev.matrix).transform_point(point)
}

/// Axis-aligned detection volume in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RoiBounds<T: Real> {
    pub min: [T; 3],
    pub max: [T; 3],
}

impl<T: Real> Default for RoiBounds<T> {
    fn default() -> Self {
        RoiBounds {
            min: [T::lit(-61.2), T::lit(-61.2), T::lit(-10.0)],
            max: [T::lit(61.2), T::lit(61.2), T::lit(10.0)],
        }
    }
}

/// Result of [`RoiBounds::normalize`]; `inside` is false when any
/// coordinate fell outside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPoint<T: Real> {
    pub point: Point3<T>,
    pub inside: bool,
}

impl<T: Real> RoiBounds<T> {
    pub fn new(min: [T; 3], max: [T; 3]) -> Result<Self, GeometryError> {
        let roi = RoiBounds { min, max };
        roi.validate()?;
        Ok(roi)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for axis in 0..3 {
            if !(self.min[axis] < self.max[axis]) {
                return Err(GeometryError::InvalidRoi(format!(
                    "axis {axis}: min {} is not below max {}",
                    self.min[axis], self.max[axis]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        let a = p.to_array();
        (0..3).all(|i| a[i] >= self.min[i] && a[i] <= self.max[i])
    }

    pub fn extent(&self) -> [T; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    /// Per-axis min-max normalization into `[0, 1]³`.
    pub fn normalize(&self, p: &Point3<T>) -> NormalizedPoint<T> {
        let a = p.to_array();
        let e = self.extent();
        let n: [T; 3] = std::array::from_fn(|i| (a[i] - self.min[i]) / e[i]);
        let inside = n.iter().all(|&v| v >= T::zero() && v <= T::one());
        NormalizedPoint {
            point: Point3::new(n[0], n[1], n[2]),
            inside,
        }
    }

    pub fn denormalize(&self, n: &Point3<T>) -> Point3<T> {
        let a = n.to_array();
        let e = self.extent();
        let p: [T; 3] = std::array::from_fn(|i| a[i] * e[i] + self.min[i]);
        Point3::new(p[0], p[1], p[2])
    }
}

/// Free-function form of [`RoiBounds::normalize`].
pub fn normalize_point<T: Real>(point: &Point3<T>, roi: &RoiBounds<T>) -> NormalizedPoint<T> {
    roi.normalize(point)
}

/// Camera→ego rotation for a camera looking along heading `yaw` (radians,
/// about ego z), level with the ground.
pub fn heading_rotation<T: Real>(yaw: T) -> Mat4<T> {
    let (s, c) = yaw.sin_cos();
    let z = T::zero();
    // camera x (right), y (down), z (forward) expressed in the ego frame
    Mat4::from_rotation_columns([[s, -c, z], [z, z, -T::one()], [c, s, z]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_camera() -> CameraModel<f64> {
        // cx, cy must lie strictly inside the image; the (0,0) principal
        // point cases build K directly instead.
        CameraModel::new(
            0,
            [1.0, 1.0, 0.5, 0.5],
            Mat4::identity(),
            Mat4::identity(),
            2,
            2,
        )
        .unwrap()
    }

    fn forward_camera() -> CameraModel<f64> {
        CameraModel::new(
            0,
            [800.0, 800.0, 400.0, 160.0],
            heading_rotation(0.3),
            Mat4::translation(1.0, 0.2, 1.6),
            800,
            320,
        )
        .unwrap()
    }

    #[test]
    fn intrinsics_unit_focal() {
        let mut cam = unit_camera();
        cam.cx = 0.0;
        cam.cy = 0.0;
        let k = cam.intrinsic_matrix();
        assert_eq!(k, Mat4::identity());
        assert_eq!(k.0[0][2], 0.0);
        assert_eq!(k.0[1][2], 0.0);
    }

    #[test]
    fn intrinsics_substitution() {
        let cam = CameraModel::<f64>::new(0, [800.0, 800.0, 400.0, 160.0], Mat4::identity(), Mat4::identity(), 800, 320).unwrap();
        let k = cam.intrinsic_matrix();
        assert_eq!(k.0[0], [800.0, 0.0, 400.0, 0.0]);
        assert_eq!(k.0[1], [0.0, 800.0, 160.0, 0.0]);
        assert_eq!(k.0[2], [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(k.0[3], [0.0, 0.0, 0.0, 1.0]);
        let prod = k * cam.inverse_intrinsic_matrix();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((prod.0[i][j] - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn optical_axis_unprojects_straight_ahead() {
        let mut cam = unit_camera();
        cam.cx = 0.0;
        cam.cy = 0.0;
        let p = cam.unproject(Pixel::new(0, 0.0, 0.0), 5.0, &DepthRange::default()).unwrap();
        assert_eq!(p, Point3::new(0.0, 0.0, 5.0));
    }

    #[test]
    fn principal_point_maps_to_axis() {
        let cam = CameraModel::<f64>::new(0, [700.0, 650.0, 400.0, 160.0], Mat4::identity(), Mat4::identity(), 800, 320).unwrap();
        for d in [0.05, 1.0, 17.5, 80.0] {
            let p = cam.unproject(Pixel::new(0, 400.0, 160.0), d, &DepthRange::default()).unwrap();
            assert!(p.distance(&Point3::new(0.0, 0.0, d)) < 1e-12, "{p:?}");
        }
    }

    #[test]
    fn depth_out_of_range_is_rejected() {
        let cam = forward_camera();
        let range = DepthRange::default();
        for d in [0.0, 0.049, 80.01, -3.0] {
            let err = cam.unproject(Pixel::new(0, 10.0, 10.0), d, &range).unwrap_err();
            assert!(matches!(err, GeometryError::DepthOutOfRange { .. }));
        }
    }

    #[test]
    fn projection_of_axis_point() {
        let mut cam = unit_camera();
        cam.cx = 0.0;
        cam.cy = 0.0;
        let (px, d) = cam.project(Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((px.u, px.v, d), (0.0, 0.0, 5.0));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = unit_camera();
        let err = cam.project(Point3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert_eq!(err, GeometryError::BehindCamera { z: -1.0 });
    }

    #[test]
    fn ray_points_are_collinear_with_center() {
        let cam = forward_camera();
        let c = cam.center();
        let a = cam.unproject_unchecked(123.4, 77.7, 3.0);
        let dir = a - c;
        for d in [0.5, 7.0, 42.0, 79.0] {
            let p = cam.unproject_unchecked(123.4, 77.7, d);
            let residual = (p - c).cross(&dir).norm() / dir.norm();
            assert!(residual < 1e-9, "residual {residual}");
        }
    }

    #[test]
    fn camera_construction_validates() {
        let bad_focal = CameraModel::<f64>::new(0, [0.0, 1.0, 1.0, 1.0], Mat4::identity(), Mat4::identity(), 4, 4);
        assert!(bad_focal.is_err());
        let bad_pp = CameraModel::<f64>::new(0, [1.0, 1.0, 4.0, 1.0], Mat4::identity(), Mat4::identity(), 4, 4);
        assert!(bad_pp.is_err());
        let mut skew = Mat4::<f64>::identity();
        skew.0[0][1] = 0.1;
        assert!(CameraModel::new(0, [1.0, 1.0, 1.0, 1.0], skew, Mat4::identity(), 4, 4).is_err());
    }

    #[test]
    fn ego_align_identity_motion() {
        let pose = EgoPose::planar(3.0, -2.0, 0.0, 0.7, 1.0);
        let p = Point3::new(4.0, 5.0, 1.0);
        let q = ego_align(p, &pose, &pose);
        assert!(q.distance(&p) < 1e-12);
    }

    #[test]
    fn ego_align_forward_translation() {
        let prev = EgoPose::planar(0.0, 0.0, 0.0, 0.0, 0.0);
        let now = EgoPose::planar(2.0, 0.0, 0.0, 0.0, 0.5);
        let q = ego_align(Point3::new(5.0, 0.0, 0.0), &prev, &now);
        assert_eq!(q, Point3::new(3.0, 0.0, 0.0));
    }

    #[test]
    fn ego_align_composes() {
        let p0 = EgoPose::planar(1.0, 2.0, 0.0, 0.1, 0.0);
        let p1 = EgoPose::planar(3.0, 2.5, 0.1, 0.4, 0.5);
        let p2 = EgoPose::planar(6.0, 4.0, 0.0, -0.3, 1.0);
        let p = Point3::new(12.0, -4.0, 0.8);
        let chained = ego_align(ego_align(p, &p0, &p1), &p1, &p2);
        let direct = ego_align(p, &p0, &p2);
        assert!(chained.distance(&direct) < 1e-9);
    }

    #[test]
    fn pose_validation() {
        let mut m = Mat4::<f64>::identity();
        m.0[0][0] = -1.0;
        assert!(EgoPose::new(m, 0.0).is_err(), "reflection must be rejected");
        assert!(EgoPose::new(EgoPose::<f64>::planar(1.0, 2.0, 0.0, 1.0, 0.0).matrix, 0.0).is_ok());
    }

    #[test]
    fn normalize_corners_and_center() {
        let roi = RoiBounds::<f64>::default();
        let n = roi.normalize(&Point3::new(-61.2, -61.2, -10.0));
        assert_eq!(n.point, Point3::origin());
        assert!(n.inside);
        let c = roi.normalize(&Point3::new(0.0, 0.0, 0.0));
        assert_eq!(c.point, Point3::new(0.5, 0.5, 0.5));
        let out = roi.normalize(&Point3::new(70.0, 0.0, 0.0));
        assert!(!out.inside);
        assert!(out.point.x > 1.0);
    }

    #[test]
    fn roi_rejects_inverted_axes() {
        assert!(RoiBounds::new([0.0, 0.0, 1.0], [1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn heading_rotation_is_proper() {
        for yaw in [0.0, 1.0, -2.5, 3.1] {
            let r = heading_rotation::<f64>(yaw);
            assert!(r.orthonormality_error() < 1e-12);
            assert!((r.det3() - 1.0).abs() < 1e-12);
        }
        // yaw 0 looks along ego +x
        let r = heading_rotation::<f64>(0.0);
        let fwd = r.transform_vector(Point3::new(0.0, 0.0, 1.0));
        assert!(fwd.distance(&Point3::new(1.0, 0.0, 0.0)) < 1e-15);
    }

    #[test]
    fn works_in_single_precision() {
        let cam = CameraModel::<f32>::new(0, [500.0, 500.0, 320.0, 240.0], heading_rotation(0.2), Mat4::translation(0.5, 0.0, 1.5), 640, 480).unwrap();
        let p = cam.unproject(Pixel::new(0, 100.0, 50.0), 12.0, &DepthRange::default()).unwrap();
        let (px, d) = cam.project(p).unwrap();
        assert!((px.u - 100.0).abs() < 1e-3 && (px.v - 50.0).abs() < 1e-3 && (d - 12.0).abs() < 1e-4);
    }
}
