//! Deterministic synthetic driving world.
//!
//! A scene is an ego vehicle moving along a constant-curvature arc, a set of
//! rigid boxes moving at constant velocity, and a ring of pinhole cameras.
//! Depth maps, 2D boxes and feature maps are derived analytically from it and
//! stand in for the learned depth, detection and backbone networks.

mod render;
mod stubs;

pub use render::{render_camera, render_depth, CameraRender, OrientedBox};
pub use stubs::{
    boxes_from_render, detect_2d_stub, features_from_render, perturb_depth, synth_features, NoiseConfig,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{heading_rotation, CameraModel, EgoPose, GeometryError, Mat4, Point3, RoiBounds};
use crate::matching::GtBox;
use crate::netcore::RngSeed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could not place object {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("frame {index} out of range ({frames} frames)")]
    FrameOutOfRange { index: usize, frames: usize },
}

/// Object category with a nominal box size and speed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Width, length, height in meters.
    pub size: [f64; 3],
    pub max_speed: f64,
}

pub fn default_classes() -> Vec<ClassSpec> {
    vec![
        ClassSpec {
            name: "car".into(),
            size: [1.9, 4.6, 1.7],
            max_speed: 10.0,
        },
        ClassSpec {
            name: "truck".into(),
            size: [2.5, 8.0, 3.2],
            max_speed: 8.0,
        },
        ClassSpec {
            name: "pedestrian".into(),
            size: [0.7, 0.7, 1.75],
            max_speed: 1.5,
        },
        ClassSpec {
            name: "cyclist".into(),
            size: [0.8, 1.8, 1.6],
            max_speed: 5.0,
        },
    ]
}

/// Surround camera ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub num_cameras: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Horizontal distance of each camera from the ego origin.
    pub mount_radius: f64,
    pub mount_height: f64,
    /// Image pixels per feature-grid cell.
    pub feature_stride: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            num_cameras: 6,
            image_width: 800,
            image_height: 320,
            fov_deg: 70.0,
            mount_radius: 1.0,
            mount_height: 1.6,
            feature_stride: 16,
        }
    }
}

impl RigConfig {
    /// Cameras at equal heading spacing, camera 0 looking forward.
    pub fn build(&self) -> Result<Vec<CameraModel<f64>>, SimError> {
        if self.num_cameras == 0 || self.image_width == 0 || self.image_height == 0 {
            return Err(SimError::InvalidConfig("rig needs cameras and a non-empty image".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(SimError::InvalidConfig(format!("fov_deg {} not in (0, 180)", self.fov_deg)));
        }
        if self.feature_stride == 0 || self.image_width % self.feature_stride != 0 || self.image_height % self.feature_stride != 0 {
            return Err(SimError::InvalidConfig(format!(
                "feature_stride {} must divide the {}x{} image",
                self.feature_stride, self.image_width, self.image_height
            )));
        }
        let focal = (self.image_width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan();
        (0..self.num_cameras)
            .map(|i| {
                let yaw = i as f64 * std::f64::consts::TAU / self.num_cameras as f64;
                let (s, c) = yaw.sin_cos();
                CameraModel::new(
                    i,
                    [focal, focal, self.image_width as f64 / 2.0, self.image_height as f64 / 2.0],
                    heading_rotation(yaw),
                    Mat4::translation(self.mount_radius * c, self.mount_radius * s, self.mount_height),
                    self.image_width,
                    self.image_height,
                )
                .map_err(SimError::from)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub num_objects: usize,
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    pub ego_speed: f64,
    /// Ego heading rate in rad/s.
    pub ego_yaw_rate: f64,
    pub roi: RoiBounds<f64>,
    /// No object centre is placed closer than this to the ego origin.
    pub min_spawn_distance: f64,
    /// Extra BEV clearance between object footprints at t = 0.
    pub spawn_gap: f64,
    pub placement_attempts: usize,
    pub classes: Vec<ClassSpec>,
    pub rig: RigConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            num_objects: 12,
            frames: 10,
            dt: 0.5,
            ego_speed: 5.0,
            ego_yaw_rate: 0.05,
            roi: RoiBounds::default(),
            min_spawn_distance: 4.0,
            spawn_gap: 0.5,
            placement_attempts: 10_000,
            classes: default_classes(),
            rig: RigConfig::default(),
        }
    }
}

/// Rigid box moving at constant velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub class_id: usize,
    /// World-frame centre at each frame timestamp.
    pub trajectory: Vec<Point3<f64>>,
    /// Width, length, height in meters.
    pub size: [f64; 3],
    /// World-frame heading.
    pub yaw: f64,
    /// World-frame ground velocity.
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub ego_pose: EgoPose<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub rig: Vec<CameraModel<f64>>,
    pub objects: Vec<SceneObject>,
    pub frames: Vec<Frame>,
}

fn ego_yaw(pose: &EgoPose<f64>) -> f64 {
    pose.matrix.0[1][0].atan2(pose.matrix.0[0][0])
}

fn rotate2(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

impl Scene {
    pub fn frame(&self, index: usize) -> Result<&Frame, SimError> {
        self.frames.get(index).ok_or(SimError::FrameOutOfRange {
            index,
            frames: self.frames.len(),
        })
    }

    /// Ground-truth boxes of a frame, expressed in that frame's ego
    /// coordinates.
    pub fn gt_boxes(&self, index: usize) -> Result<Vec<GtBox<f64>>, SimError> {
        let frame = self.frame(index)?;
        let heading = ego_yaw(&frame.ego_pose);
        Ok(self
            .objects
            .iter()
            .map(|o| GtBox {
                id: o.id,
                class_id: o.class_id,
                center: frame.ego_pose.world_to_ego(o.trajectory[index]),
                size: o.size,
                yaw: crate::decoder::wrap_angle(o.yaw - heading),
                velocity: rotate2(o.velocity, -heading),
            })
            .collect())
    }

    /// Oriented boxes of a frame in ego coordinates, with object ids.
    pub fn ego_boxes(&self, index: usize) -> Result<Vec<OrientedBox>, SimError> {
        Ok(self
            .gt_boxes(index)?
            .iter()
            .map(OrientedBox::from_gt)
            .collect())
    }
}

fn ego_pose_at(t: f64, speed: f64, yaw_rate: f64) -> EgoPose<f64> {
    let yaw = yaw_rate * t;
    let (x, y) = if yaw_rate.abs() < 1e-12 {
        (speed * t, 0.0)
    } else {
        let r = speed / yaw_rate;
        (r * yaw.sin(), r * (1.0 - yaw.cos()))
    };
    EgoPose::planar(x, y, 0.0, yaw, t)
}

/// Builds a scene; identical `(cfg, seed)` give identical scenes.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene, SimError> {
    cfg.roi.validate()?;
    if cfg.frames == 0 {
        return Err(SimError::InvalidConfig("frames must be at least 1".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", cfg.dt)));
    }
    if cfg.num_objects > 0 && cfg.classes.is_empty() {
        return Err(SimError::InvalidConfig("objects requested but no classes defined".into()));
    }
    for c in &cfg.classes {
        if c.size.iter().any(|&s| !(s > 0.0)) {
            return Err(SimError::InvalidConfig(format!("class {} has a non-positive size", c.name)));
        }
    }
    let rig = cfg.rig.build()?;
    let mut rng = RngSeed(seed).derive(0x5ce7e).rng();

    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut objects = Vec::with_capacity(cfg.num_objects);
    for index in 0..cfg.num_objects {
        let class_id = rng.random_range(0..cfg.classes.len());
        let class = &cfg.classes[class_id];
        let radius = 0.5 * (class.size[0].powi(2) + class.size[1].powi(2)).sqrt();
        let mut found = None;
        for _ in 0..cfg.placement_attempts {
            let x0 = cfg.roi.min[0] + radius;
            let x1 = cfg.roi.max[0] - radius;
            let y0 = cfg.roi.min[1] + radius;
            let y1 = cfg.roi.max[1] - radius;
            if !(x1 > x0 && y1 > y0) {
                break;
            }
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(y0..y1);
            if (x * x + y * y).sqrt() < cfg.min_spawn_distance + radius {
                continue;
            }
            let clear = placed.iter().all(|&(px, py, pr)| {
                ((px - x).powi(2) + (py - y).powi(2)).sqrt() >= pr + radius + cfg.spawn_gap
            });
            if clear {
                found = Some((x, y));
                break;
            }
        }
        let Some((x, y)) = found else {
            return Err(SimError::PlacementFailure {
                index,
                attempts: cfg.placement_attempts,
            });
        };
        placed.push((x, y, radius));
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let speed = if class.max_speed > 0.0 {
            rng.random_range(0.0..class.max_speed)
        } else {
            0.0
        };
        let velocity = [speed * yaw.cos(), speed * yaw.sin()];
        let z = class.size[2] / 2.0;
        let trajectory = (0..cfg.frames)
            .map(|k| {
                let t = k as f64 * cfg.dt;
                Point3::new(x + velocity[0] * t, y + velocity[1] * t, z)
            })
            .collect();
        objects.push(SceneObject {
            id: index as u32,
            class_id,
            trajectory,
            size: class.size,
            yaw,
            velocity,
        });
    }

    let frames = (0..cfg.frames)
        .map(|k| {
            let t = k as f64 * cfg.dt;
            Frame {
                index: k,
                timestamp: t,
                ego_pose: ego_pose_at(t, cfg.ego_speed, cfg.ego_yaw_rate),
            }
        })
        .collect();

    let mut config = cfg.clone();
    config.seed = seed;
    Ok(Scene {
        config,
        rig,
        objects,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_valid() {
        let cfg = SceneConfig {
            num_objects: 0,
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, 1).unwrap();
        assert!(s.objects.is_empty());
        assert_eq!(s.frames.len(), 10);
        assert_eq!(s.rig.len(), 6);
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 9).unwrap(), generate_scene(&cfg, 9).unwrap());
        assert_ne!(generate_scene(&cfg, 9).unwrap(), generate_scene(&cfg, 10).unwrap());
    }

    #[test]
    fn objects_start_inside_roi() {
        let cfg = SceneConfig {
            num_objects: 15,
            ..SceneConfig::default()
        };
        for seed in 0..20 {
            let s = generate_scene(&cfg, seed).unwrap();
            for o in &s.objects {
                assert!(cfg.roi.contains(&o.trajectory[0]));
            }
            for g in s.gt_boxes(0).unwrap() {
                assert!(cfg.roi.contains(&g.center));
            }
        }
    }

    #[test]
    fn trajectories_follow_velocity() {
        let s = generate_scene(&SceneConfig::default(), 3).unwrap();
        for o in &s.objects {
            for (k, c) in o.trajectory.iter().enumerate() {
                let t = k as f64 * s.config.dt;
                assert!((c.x - (o.trajectory[0].x + o.velocity[0] * t)).abs() < 1e-9);
                assert!((c.y - (o.trajectory[0].y + o.velocity[1] * t)).abs() < 1e-9);
            }
        }
        let ts: Vec<f64> = s.frames.iter().map(|f| f.timestamp).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn overcrowded_scene_fails_placement() {
        let cfg = SceneConfig {
            num_objects: 50,
            roi: RoiBounds::new([-8.0, -8.0, -10.0], [8.0, 8.0, 10.0]).unwrap(),
            placement_attempts: 200,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg, 0), Err(SimError::PlacementFailure { .. })));
    }

    #[test]
    fn rig_covers_the_full_circle() {
        let rig = RigConfig::default().build().unwrap();
        for (i, cam) in rig.iter().enumerate() {
            let fwd = cam.rotation.transform_vector(Point3::new(0.0, 0.0, 1.0));
            let heading = fwd.y.atan2(fwd.x);
            let want = crate::decoder::wrap_angle(i as f64 * std::f64::consts::TAU / 6.0);
            assert!((crate::decoder::wrap_angle(heading - want)).abs() < 1e-12);
        }
    }
}
