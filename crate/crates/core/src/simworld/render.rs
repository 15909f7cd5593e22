//! Analytic ray casting of oriented boxes.

use crate::geometry::{CameraModel, DepthRange, Point3};
use crate::matching::GtBox;
use crate::querygen::DepthMap;

use super::{Scene, SimError};

/// Ego-frame box rotated about z; local x runs along the length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub id: u32,
    pub center: Point3<f64>,
    /// Half extents along local x (length), y (width), z (height).
    pub half: [f64; 3],
    pub yaw: f64,
}

impl OrientedBox {
    pub fn from_gt(g: &GtBox<f64>) -> Self {
        OrientedBox {
            id: g.id,
            center: g.center,
            half: [g.size[1] / 2.0, g.size[0] / 2.0, g.size[2] / 2.0],
            yaw: g.yaw,
        }
    }

    fn to_local(&self, p: Point3<f64>) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * p.x + s * p.y, -s * p.x + c * p.y, p.z]
    }

    pub fn corners(&self) -> [Point3<f64>; 8] {
        let (s, c) = self.yaw.sin_cos();
        std::array::from_fn(|i| {
            let lx = if i & 1 == 0 { -self.half[0] } else { self.half[0] };
            let ly = if i & 2 == 0 { -self.half[1] } else { self.half[1] };
            let lz = if i & 4 == 0 { -self.half[2] } else { self.half[2] };
            self.center + Point3::new(c * lx - s * ly, s * lx + c * ly, lz)
        })
    }

    /// Whether `p` lies inside the box grown by `margin` on every side.
    pub fn contains(&self, p: &Point3<f64>, margin: f64) -> bool {
        let l = self.to_local(*p - self.center);
        (0..3).all(|i| l[i].abs() <= self.half[i] + margin)
    }

    /// Distance from `p` to the box surface (zero on the surface).
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        let l = self.to_local(*p - self.center);
        let q: [f64; 3] = std::array::from_fn(|i| l[i].abs() - self.half[i]);
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
        outside + inside.abs()
    }

    /// Smallest positive ray parameter at which `origin + s·dir` enters the
    /// box (slab method).
    pub fn intersect(&self, origin: Point3<f64>, dir: Point3<f64>) -> Option<f64> {
        let o = self.to_local(origin - self.center);
        let d = self.to_local(dir);
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-15 {
                if o[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[i] - o[i]) / d[i];
            let b = (self.half[i] - o[i]) / d[i];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
        }
        if t_near > t_far || t_near <= 0.0 {
            None
        } else {
            Some(t_near)
        }
    }
}

/// Depth map plus the id of the object seen at each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRender {
    pub depth: DepthMap<f64>,
    pub object_ids: Vec<Option<u32>>,
}

impl CameraRender {
    pub fn object_at(&self, u: f64, v: f64) -> Option<u32> {
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        if col >= self.depth.width || row >= self.depth.height {
            return None;
        }
        self.object_ids[row * self.depth.width + col]
    }
}

/// Image-space bounding box of the part of `b` in front of the plane
/// `z_cam = near`, as `(u_min, v_min, u_max, v_max)`.
pub(crate) fn projected_hull(cam: &CameraModel<f64>, b: &OrientedBox, near: f64) -> Option<[f64; 4]> {
    let corners: Vec<Point3<f64>> = b.corners().iter().map(|&p| cam.ego_to_camera(p)).collect();
    let mut pts: Vec<Point3<f64>> = corners.iter().copied().filter(|p| p.z >= near).collect();
    // edges of the cube: corner indices differing in exactly one bit
    for i in 0..8usize {
        for bit in [1usize, 2, 4] {
            let j = i ^ bit;
            if j < i {
                continue;
            }
            let (a, c) = (corners[i], corners[j]);
            if (a.z - near) * (c.z - near) < 0.0 {
                let t = (near - a.z) / (c.z - a.z);
                pts.push(a + (c - a).scale(t));
            }
        }
    }
    if pts.is_empty() {
        return None;
    }
    let mut hull = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in pts {
        let u = cam.fx * p.x / p.z + cam.cx;
        let v = cam.fy * p.y / p.z + cam.cy;
        hull[0] = hull[0].min(u);
        hull[1] = hull[1].min(v);
        hull[2] = hull[2].max(u);
        hull[3] = hull[3].max(v);
    }
    Some(hull)
}

/// Ray casts every pixel centre against `boxes`. Depth is the camera-frame
/// z of the nearest hit, clamped into `range`; pixels without a hit are
/// invalid.
pub fn render_camera(cam: &CameraModel<f64>, boxes: &[OrientedBox], range: &DepthRange<f64>) -> CameraRender {
    let (w, h) = (cam.width, cam.height);
    let mut nearest = vec![f64::INFINITY; w * h];
    let mut ids: Vec<Option<u32>> = vec![None; w * h];
    let origin = cam.center();
    for b in boxes {
        let Some(hull) = projected_hull(cam, b, 1e-6) else {
            continue;
        };
        let c0 = hull[0].floor().max(0.0) as usize;
        let r0 = hull[1].floor().max(0.0) as usize;
        let c1 = (hull[2].ceil().max(0.0) as usize).min(w);
        let r1 = (hull[3].ceil().max(0.0) as usize).min(h);
        for row in r0..r1 {
            for col in c0..c1 {
                let dir = cam.ray_direction(col as f64 + 0.5, row as f64 + 0.5);
                if let Some(s) = b.intersect(origin, dir) {
                    let k = row * w + col;
                    if s < nearest[k] {
                        nearest[k] = s;
                        ids[k] = Some(b.id);
                    }
                }
            }
        }
    }
    let values = nearest
        .into_iter()
        .map(|d| d.is_finite().then(|| d.clamp(range.min, range.max)))
        .collect();
    CameraRender {
        depth: DepthMap::from_values(cam.id, w, h, values),
        object_ids: ids,
    }
}

/// Ground-truth depth map of one camera at one frame.
pub fn render_depth(
    scene: &Scene,
    frame_index: usize,
    camera: usize,
    range: &DepthRange<f64>,
) -> Result<DepthMap<f64>, SimError> {
    let boxes = scene.ego_boxes(frame_index)?;
    let cam = scene.rig.get(camera).ok_or(SimError::InvalidConfig(format!("no camera {camera}")))?;
    Ok(render_camera(cam, &boxes, range).depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{heading_rotation, Mat4};

    fn front_camera() -> CameraModel<f64> {
        CameraModel::new(0, [500.0, 500.0, 100.0, 50.0], heading_rotation(0.0), Mat4::identity(), 200, 100).unwrap()
    }

    #[test]
    fn empty_world_is_invalid_everywhere() {
        let r = render_camera(&front_camera(), &[], &DepthRange::default());
        assert_eq!(r.depth.valid_count(), 0);
    }

    #[test]
    fn box_on_optical_axis() {
        // camera looks along ego +x; box of length 4 (along x) centred 10 m ahead
        let b = OrientedBox {
            id: 7,
            center: Point3::new(10.0, 0.0, 0.0),
            half: [2.0, 1.0, 0.8],
            yaw: 0.0,
        };
        let r = render_camera(&front_camera(), &[b], &DepthRange::default());
        let d = r.depth.get(100, 50).unwrap();
        assert!((d - 8.0).abs() < 1e-12, "depth {d}");
        assert_eq!(r.object_at(100.5, 50.5), Some(7));
        assert_eq!(r.depth.get(0, 0), None);
    }

    #[test]
    fn nearer_box_occludes() {
        let far = OrientedBox {
            id: 1,
            center: Point3::new(20.0, 0.0, 0.0),
            half: [1.0, 3.0, 3.0],
            yaw: 0.0,
        };
        let near = OrientedBox {
            id: 2,
            center: Point3::new(8.0, 0.0, 0.0),
            half: [0.5, 0.5, 0.5],
            yaw: 0.3,
        };
        let r = render_camera(&front_camera(), &[far, near], &DepthRange::default());
        assert_eq!(r.object_at(100.5, 50.5), Some(2));
    }

    #[test]
    fn surface_distance_zero_on_faces() {
        let b = OrientedBox {
            id: 0,
            center: Point3::new(1.0, 2.0, 0.5),
            half: [2.0, 1.0, 0.5],
            yaw: 0.7,
        };
        for c in b.corners() {
            assert!(b.surface_distance(&c) < 1e-12);
        }
        assert!((b.surface_distance(&b.center) - 0.5).abs() < 1e-12);
        assert!(b.contains(&b.center, 0.0));
    }

    #[test]
    fn ray_from_inside_misses() {
        let b = OrientedBox {
            id: 0,
            center: Point3::origin(),
            half: [1.0, 1.0, 1.0],
            yaw: 0.0,
        };
        assert_eq!(b.intersect(Point3::origin(), Point3::new(1.0, 0.0, 0.0)), None);
    }
}
