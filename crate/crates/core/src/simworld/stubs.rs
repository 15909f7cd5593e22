//! Stand-ins for the learned depth, 2D detection and backbone networks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::CameraModel;
use crate::netcore::RngSeed;
use crate::querygen::{filter_boxes, Box2D, DepthMap, FeatureMap};

use super::render::{projected_hull, render_camera, CameraRender, OrientedBox};
use super::{Scene, SimError};
use crate::geometry::DepthRange;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Relative depth error: `d·(1 + σ·N(0,1))`.
    pub depth_rel_sigma: f64,
    /// Per-edge 2D box jitter in pixels.
    pub box_jitter_px: f64,
    /// Probability that a visible object yields no 2D box.
    pub drop_prob: f64,
    /// Score is `1 − |σ·N(0,1)|`, clamped to `[0, 1]`.
    pub score_sigma: f64,
    /// Noise on the stored velocity of memory entries (m/s).
    pub velocity_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            depth_rel_sigma: 0.0,
            box_jitter_px: 0.0,
            drop_prob: 0.0,
            score_sigma: 0.0,
            velocity_sigma: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("depth_rel_sigma", self.depth_rel_sigma),
            ("box_jitter_px", self.box_jitter_px),
            ("drop_prob", self.drop_prob),
            ("score_sigma", self.score_sigma),
            ("velocity_sigma", self.velocity_sigma),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(format!("noise.{name} must be >= 0, got {v}"));
            }
        }
        if self.drop_prob > 1.0 {
            return Err(format!("noise.drop_prob must be <= 1, got {}", self.drop_prob));
        }
        Ok(())
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Multiplicative depth noise; valid pixels stay inside `[min, max]`.
pub fn perturb_depth(map: &DepthMap<f64>, sigma: f64, min: f64, max: f64, seed: RngSeed) -> DepthMap<f64> {
    if sigma == 0.0 {
        return map.clone();
    }
    let mut rng = seed.rng();
    let values = map
        .values()
        .iter()
        .map(|v| v.map(|d| (d * (1.0 + sigma * normal(&mut rng))).clamp(min, max)))
        .collect();
    DepthMap::from_values(map.camera, map.width, map.height, values)
}

/// Noisy 2D detector: projected hull boxes of the objects visible in the
/// render, then jitter, drops and score noise, then score threshold and NMS.
pub fn boxes_from_render(
    scene: &Scene,
    render: &CameraRender,
    cam: &CameraModel<f64>,
    boxes: &[OrientedBox],
    noise: &NoiseConfig,
    score_threshold: f64,
    nms_iou: f64,
    seed: RngSeed,
) -> Vec<Box2D<f64>> {
    let mut visible = vec![false; scene.objects.len()];
    for id in render.object_ids.iter().flatten() {
        if let Some(v) = visible.get_mut(*id as usize) {
            *v = true;
        }
    }
    let mut rng = seed.rng();
    let mut out = Vec::new();
    for b in boxes {
        if !visible.get(b.id as usize).copied().unwrap_or(false) {
            continue;
        }
        let Some(hull) = projected_hull(cam, b, 1e-6) else {
            continue;
        };
        // draw every random number regardless of outcome so one object's
        // noise does not depend on another's
        let drop_draw: f64 = rng.random();
        let jitter: [f64; 4] = std::array::from_fn(|_| normal(&mut rng));
        let score_draw = normal(&mut rng);
        if drop_draw < noise.drop_prob {
            continue;
        }
        let mut u_min = hull[0] + noise.box_jitter_px * jitter[0];
        let mut v_min = hull[1] + noise.box_jitter_px * jitter[1];
        let mut u_max = hull[2] + noise.box_jitter_px * jitter[2];
        let mut v_max = hull[3] + noise.box_jitter_px * jitter[3];
        if u_min > u_max {
            std::mem::swap(&mut u_min, &mut u_max);
        }
        if v_min > v_max {
            std::mem::swap(&mut v_min, &mut v_max);
        }
        let class_id = scene.objects.get(b.id as usize).map_or(0, |o| o.class_id);
        out.push(Box2D {
            camera: cam.id,
            u_min,
            v_min,
            u_max,
            v_max,
            score: (1.0 - (noise.score_sigma * score_draw).abs()).clamp(0.0, 1.0),
            class_id,
        });
    }
    filter_boxes(&out, score_threshold, nms_iou)
}

fn hashed_vector(seed: RngSeed, channels: usize, amplitude: f64) -> impl Iterator<Item = f64> {
    let mut rng = seed.rng();
    (0..channels).map(move |_| amplitude * rng.random_range(-1.0..=1.0))
}

/// Procedural features: a seeded vector per (object id, class) on
/// foreground nodes and low-amplitude seeded noise on the background.
pub fn features_from_render(
    scene: &Scene,
    render: &CameraRender,
    cam: &CameraModel<f64>,
    channels: usize,
    stride: usize,
    seed: RngSeed,
) -> FeatureMap<f64> {
    let rows = cam.height / stride;
    let cols = cam.width / stride;
    let mut data = Vec::with_capacity(rows * cols * channels);
    let fg_seed = seed.derive(0xF0);
    let bg_seed = seed.derive(0xB6).derive(cam.id as u64);
    for row in 0..rows {
        for col in 0..cols {
            let u = (col as f64 + 0.5) * stride as f64;
            let v = (row as f64 + 0.5) * stride as f64;
            match render.object_at(u, v) {
                Some(id) => {
                    let class = scene.objects.get(id as usize).map_or(0, |o| o.class_id);
                    let s = fg_seed.derive(id as u64).derive(class as u64);
                    data.extend(hashed_vector(s, channels, 1.0));
                }
                None => {
                    let s = bg_seed.derive((row * cols + col) as u64);
                    data.extend(hashed_vector(s, channels, 0.1));
                }
            }
        }
    }
    FeatureMap::new(cam.id, channels, cam.width, cam.height, stride, data)
}

fn render_frame_camera(
    scene: &Scene,
    frame_index: usize,
    camera: usize,
) -> Result<(CameraRender, &CameraModel<f64>, Vec<OrientedBox>), SimError> {
    let boxes = scene.ego_boxes(frame_index)?;
    let cam = scene
        .rig
        .get(camera)
        .ok_or_else(|| SimError::InvalidConfig(format!("no camera {camera}")))?;
    Ok((render_camera(cam, &boxes, &DepthRange::default()), cam, boxes))
}

/// 2D detections of one camera at one frame (renders the frame first).
pub fn detect_2d_stub(
    scene: &Scene,
    frame_index: usize,
    camera: usize,
    noise: &NoiseConfig,
    score_threshold: f64,
    nms_iou: f64,
    seed: RngSeed,
) -> Result<Vec<Box2D<f64>>, SimError> {
    let (render, cam, boxes) = render_frame_camera(scene, frame_index, camera)?;
    Ok(boxes_from_render(scene, &render, cam, &boxes, noise, score_threshold, nms_iou, seed))
}

/// Feature map of one camera at one frame (renders the frame first).
pub fn synth_features(
    scene: &Scene,
    frame_index: usize,
    camera: usize,
    channels: usize,
    seed: RngSeed,
) -> Result<FeatureMap<f64>, SimError> {
    let (render, cam, _) = render_frame_camera(scene, frame_index, camera)?;
    Ok(features_from_render(scene, &render, cam, channels, scene.config.rig.feature_stride, seed))
}
