//! Depth-guided query generation.
//!
//! Pixels are sampled inside each 2D detection, lifted to 3D through the
//! depth map at the surface depth and at `depth_layers − 1` deeper offsets,
//! then turned into queries: a position embedding of the normalized
//! reference point plus the image feature sampled at the pixel.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::PositionEncoder;
use crate::geometry::{CameraModel, DepthRange, Pixel, Point3, RoiBounds};
use crate::netcore::{NetError, RngSeed};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryGenError {
    #[error("degenerate box: clipped area {area} px² is below 1 px²")]
    DegenerateBox { area: f64 },
    #[error("pixel ({u}, {v}) is outside the {width}x{height} frame")]
    OutOfFrame { u: f64, v: f64, width: usize, height: usize },
    #[error("no {what} for camera {camera}")]
    MissingCamera { what: &'static str, camera: usize },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Axis-aligned 2D detection in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Box2D<T: Real> {
    pub camera: usize,
    pub u_min: T,
    pub v_min: T,
    pub u_max: T,
    pub v_max: T,
    pub score: T,
    pub class_id: usize,
}

impl<T: Real> Box2D<T> {
    pub fn area(&self) -> T {
        (self.u_max - self.u_min).max(T::zero()) * (self.v_max - self.v_min).max(T::zero())
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        ((self.u_min + self.u_max) * half, (self.v_min + self.v_max) * half)
    }

    pub fn iou(&self, other: &Box2D<T>) -> T {
        let iw = (self.u_max.min(other.u_max) - self.u_min.max(other.u_min)).max(T::zero());
        let ih = (self.v_max.min(other.v_max) - self.v_min.max(other.v_min)).max(T::zero());
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= T::zero() {
            T::zero()
        } else {
            inter / union
        }
    }

    /// Box clipped to `[0, width] × [0, height]`.
    pub fn clipped(&self, width: usize, height: usize) -> Box2D<T> {
        let w = T::from_count(width);
        let h = T::from_count(height);
        Box2D {
            u_min: self.u_min.max(T::zero()).min(w),
            v_min: self.v_min.max(T::zero()).min(h),
            u_max: self.u_max.max(T::zero()).min(w),
            v_max: self.v_max.max(T::zero()).min(h),
            ..*self
        }
    }
}

/// Greedy non-maximum suppression within each camera. Boxes below
/// `score_threshold` are dropped first; a box is suppressed when its IoU with
/// an already kept box exceeds `iou_threshold`. Output is ordered by camera,
/// then descending score.
pub fn filter_boxes<T: Real>(boxes: &[Box2D<T>], score_threshold: T, iou_threshold: T) -> Vec<Box2D<T>> {
    let mut order: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].score >= score_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        boxes[a]
            .camera
            .cmp(&boxes[b].camera)
            .then(boxes[b].score.partial_cmp(&boxes[a].score).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Box2D<T>> = Vec::new();
    for i in order {
        let candidate = boxes[i];
        let suppressed = kept
            .iter()
            .any(|k| k.camera == candidate.camera && k.iou(&candidate) > iou_threshold);
        if !suppressed {
            kept.push(candidate);
        }
    }
    kept
}

/// Dense per-pixel depth for one camera; `None` marks pixels without a
/// valid measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap<T: Real> {
    pub camera: usize,
    pub width: usize,
    pub height: usize,
    values: Vec<Option<T>>,
}

impl<T: Real> DepthMap<T> {
    pub fn invalid(camera: usize, width: usize, height: usize) -> Self {
        DepthMap {
            camera,
            width,
            height,
            values: vec![None; width * height],
        }
    }

    pub fn from_values(camera: usize, width: usize, height: usize, values: Vec<Option<T>>) -> Self {
        assert_eq!(values.len(), width * height, "depth map size mismatch");
        DepthMap {
            camera,
            width,
            height,
            values,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<T> {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, value: Option<T>) {
        self.values[row * self.width + col] = value;
    }

    pub fn values(&self) -> &[Option<T>] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Nearest-neighbour lookup at a continuous pixel position; `None`
    /// outside the frame or on invalid pixels.
    pub fn lookup(&self, u: T, v: T) -> Option<T> {
        if u < T::zero() || v < T::zero() {
            return None;
        }
        let col = u.floor().to_usize()?;
        let row = v.floor().to_usize()?;
        if col >= self.width || row >= self.height {
            return None;
        }
        self.get(col, row)
    }
}

/// Channel-last feature grid for one camera. Node `(row, col)` sits at the
/// image position `((col + 0.5)·stride, (row + 0.5)·stride)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    pub camera: usize,
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub stride: usize,
    pub image_width: usize,
    pub image_height: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(
        camera: usize,
        channels: usize,
        image_width: usize,
        image_height: usize,
        stride: usize,
        data: Vec<T>,
    ) -> Self {
        let rows = image_height / stride;
        let cols = image_width / stride;
        assert_eq!(data.len(), rows * cols * channels, "feature map size mismatch");
        FeatureMap {
            camera,
            channels,
            rows,
            cols,
            stride,
            image_width,
            image_height,
            data,
        }
    }

    #[inline]
    pub fn node(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.cols + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Image-space centre of grid node `(row, col)`.
    pub fn node_pixel(&self, row: usize, col: usize) -> (T, T) {
        let s = T::from_count(self.stride);
        let half = T::lit(0.5);
        ((T::from_count(col) + half) * s, (T::from_count(row) + half) * s)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bilinear feature lookup at a continuous image position.
pub fn sample_semantic<T: Real>(fmap: &FeatureMap<T>, pixel: Pixel<T>) -> Result<Vec<T>, QueryGenError> {
    let w = T::from_count(fmap.image_width);
    let h = T::from_count(fmap.image_height);
    if !(pixel.u >= T::zero() && pixel.u < w && pixel.v >= T::zero() && pixel.v < h) {
        return Err(QueryGenError::OutOfFrame {
            u: pixel.u.as_f64(),
            v: pixel.v.as_f64(),
            width: fmap.image_width,
            height: fmap.image_height,
        });
    }
    let s = T::from_count(fmap.stride);
    let half = T::lit(0.5);
    let max_x = T::from_count(fmap.cols - 1);
    let max_y = T::from_count(fmap.rows - 1);
    let gx = (pixel.u / s - half).max(T::zero()).min(max_x);
    let gy = (pixel.v / s - half).max(T::zero()).min(max_y);
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let c0 = x0.to_usize().unwrap_or(0);
    let r0 = y0.to_usize().unwrap_or(0);
    let c1 = (c0 + 1).min(fmap.cols - 1);
    let r1 = (r0 + 1).min(fmap.rows - 1);
    let w00 = (T::one() - fx) * (T::one() - fy);
    let w01 = fx * (T::one() - fy);
    let w10 = (T::one() - fx) * fy;
    let w11 = fx * fy;
    let (a, b, c, d) = (fmap.node(r0, c0), fmap.node(r0, c1), fmap.node(r1, c0), fmap.node(r1, c1));
    Ok((0..fmap.channels)
        .map(|k| w00 * a[k] + w01 * b[k] + w10 * c[k] + w11 * d[k])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    DepthGuided,
    Temporal,
    Fixed,
}

/// Where a depth-guided query came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QueryOrigin<T: Real> {
    pub pixel: Pixel<T>,
    pub sample: usize,
    pub layer: usize,
    pub box_score: T,
    pub class_id: usize,
}

/// Object query: position embedding, semantic embedding and the 3D
/// reference point (ego frame) it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<T: Real> {
    pub q_pos: Vec<T>,
    pub q_sem: Vec<T>,
    pub p_ref: Point3<T>,
    pub source: QuerySource,
    pub origin: Option<QueryOrigin<T>>,
}

impl<T: Real> Query<T> {
    /// `q_pos + q_sem`.
    pub fn embedding(&self) -> Vec<T> {
        self.q_pos.iter().zip(&self.q_sem).map(|(&a, &b)| a + b).collect()
    }
}

/// Query generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct QueryGenConfig<T: Real> {
    /// Pixels sampled per box, the first being the box centre.
    pub n_points: usize,
    pub depth_layers: usize,
    /// Spacing between depth layers in meters.
    pub delta_d: T,
    pub score_threshold: T,
    pub nms_iou: T,
    pub max_queries: usize,
}

impl<T: Real> Default for QueryGenConfig<T> {
    fn default() -> Self {
        QueryGenConfig {
            n_points: 4,
            depth_layers: 3,
            delta_d: T::lit(0.5),
            score_threshold: T::lit(0.05),
            nms_iou: T::lit(0.7),
            max_queries: 900,
        }
    }
}

/// Centre of the (frame-clipped) box followed by `n − 1` uniform samples.
pub fn sample_box_points<T: Real>(
    bbox: &Box2D<T>,
    n: usize,
    seed: RngSeed,
    width: usize,
    height: usize,
) -> Result<Vec<Pixel<T>>, QueryGenError> {
    assert!(n >= 1, "at least one point per box");
    let b = bbox.clipped(width, height);
    let area = b.area();
    if area < T::one() {
        return Err(QueryGenError::DegenerateBox { area: area.as_f64() });
    }
    let (cu, cv) = b.center();
    let mut out = Vec::with_capacity(n);
    out.push(Pixel::new(bbox.camera, cu, cv));
    let mut rng = seed.rng();
    let (u0, u1) = (b.u_min.as_f64(), b.u_max.as_f64());
    let (v0, v1) = (b.v_min.as_f64(), b.v_max.as_f64());
    for _ in 1..n {
        let u = if u1 > u0 { rng.random_range(u0..u1) } else { u0 };
        let v = if v1 > v0 { rng.random_range(v0..v1) } else { v0 };
        out.push(Pixel::new(bbox.camera, T::lit(u), T::lit(v)));
    }
    Ok(out)
}

/// `[d, d + ΔD, …, d + (layers − 1)·ΔD]`, dropping layers beyond `d_max`.
pub fn depth_layers<T: Real>(d_surface: T, delta_d: T, layers: usize, d_max: T) -> Vec<T> {
    assert!(delta_d > T::zero() && layers >= 1);
    (0..layers)
        .map(|i| d_surface + T::from_count(i) * delta_d)
        .take_while(|&d| d <= d_max)
        .collect()
}

/// Everything the generator reads for one frame.
pub struct QueryGenInputs<'a, T: Real> {
    pub boxes: &'a [Box2D<T>],
    pub depths: &'a [DepthMap<T>],
    pub features: &'a [FeatureMap<T>],
    pub rig: &'a [CameraModel<T>],
    pub encoder: &'a PositionEncoder<T>,
    pub roi: &'a RoiBounds<T>,
    pub depth_range: &'a DepthRange<T>,
}

struct BoxQueries<T: Real> {
    camera: usize,
    score: T,
    rank: usize,
    queries: Vec<Query<T>>,
}

/// Builds depth-guided queries for one frame.
///
/// Output order: camera index, then descending box score, then sample and
/// layer index. At most `cfg.max_queries` queries are kept, taken from the
/// highest-scoring boxes first.
pub fn generate_queries<T: Real>(
    inputs: &QueryGenInputs<'_, T>,
    cfg: &QueryGenConfig<T>,
    seed: RngSeed,
) -> Result<Vec<Query<T>>, QueryGenError> {
    let boxes = filter_boxes(inputs.boxes, cfg.score_threshold, cfg.nms_iou);
    if boxes.is_empty() || cfg.max_queries == 0 {
        return Ok(Vec::new());
    }
    let cameras: Vec<usize> = {
        let mut c: Vec<usize> = boxes.iter().map(|b| b.camera).collect();
        c.dedup();
        c
    };

    let per_camera: Vec<Result<Vec<BoxQueries<T>>, QueryGenError>> = cameras
        .par_iter()
        .map(|&cam| {
            let camera = inputs
                .rig
                .iter()
                .find(|c| c.id == cam)
                .ok_or(QueryGenError::MissingCamera { what: "camera model", camera: cam })?;
            let depth = inputs
                .depths
                .iter()
                .find(|d| d.camera == cam)
                .ok_or(QueryGenError::MissingCamera { what: "depth map", camera: cam })?;
            let fmap = inputs
                .features
                .iter()
                .find(|f| f.camera == cam)
                .ok_or(QueryGenError::MissingCamera { what: "feature map", camera: cam })?;
            let mut out = Vec::new();
            for (rank, b) in boxes.iter().filter(|b| b.camera == cam).enumerate() {
                let box_seed = seed.derive(cam as u64).derive(rank as u64);
                let queries = queries_for_box(b, camera, depth, fmap, inputs, cfg, box_seed)?;
                out.push(BoxQueries {
                    camera: cam,
                    score: b.score,
                    rank,
                    queries,
                });
            }
            Ok(out)
        })
        .collect();

    let mut all: Vec<BoxQueries<T>> = Vec::new();
    for r in per_camera {
        all.extend(r?);
    }

    // global cap, highest-scoring boxes first
    let mut by_score: Vec<usize> = (0..all.len()).collect();
    by_score.sort_by(|&a, &b| {
        all[b]
            .score
            .partial_cmp(&all[a].score)
            .unwrap_or(Ordering::Equal)
            .then(all[a].camera.cmp(&all[b].camera))
            .then(all[a].rank.cmp(&all[b].rank))
    });
    let mut budget = cfg.max_queries;
    let mut keep = vec![0usize; all.len()];
    for i in by_score {
        let take = all[i].queries.len().min(budget);
        keep[i] = take;
        budget -= take;
    }

    // `all` is already in (camera, score desc, rank) order
    let mut out = Vec::new();
    for (bq, k) in all.into_iter().zip(keep) {
        out.extend(bq.queries.into_iter().take(k));
    }
    Ok(out)
}

fn queries_for_box<T: Real>(
    b: &Box2D<T>,
    camera: &CameraModel<T>,
    depth: &DepthMap<T>,
    fmap: &FeatureMap<T>,
    inputs: &QueryGenInputs<'_, T>,
    cfg: &QueryGenConfig<T>,
    seed: RngSeed,
) -> Result<Vec<Query<T>>, QueryGenError> {
    let pixels = match sample_box_points(b, cfg.n_points, seed, camera.width, camera.height) {
        Ok(p) => p,
        Err(QueryGenError::DegenerateBox { .. }) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut queries = Vec::new();
    for (sample, px) in pixels.into_iter().enumerate() {
        let Some(surface) = depth.lookup(px.u, px.v) else {
            continue;
        };
        let q_sem = sample_semantic(fmap, px)?;
        for (layer, d) in depth_layers(surface, cfg.delta_d, cfg.depth_layers, inputs.depth_range.max)
            .into_iter()
            .enumerate()
        {
            let Ok(p_ref) = camera.unproject(px, d, inputs.depth_range) else {
                continue;
            };
            let q_pos = inputs.encoder.encode(&inputs.roi.normalize(&p_ref).point)?;
            queries.push(Query {
                q_pos,
                q_sem: q_sem.clone(),
                p_ref,
                source: QuerySource::DepthGuided,
                origin: Some(QueryOrigin {
                    pixel: px,
                    sample,
                    layer,
                    box_score: b.score,
                    class_id: b.class_id,
                }),
            });
        }
    }
    Ok(queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(u0: f64, v0: f64, u1: f64, v1: f64, score: f64) -> Box2D<f64> {
        Box2D {
            camera: 0,
            u_min: u0,
            v_min: v0,
            u_max: u1,
            v_max: v1,
            score,
            class_id: 0,
        }
    }

    #[test]
    fn single_point_is_center() {
        let pts = sample_box_points(&bx(10.0, 20.0, 30.0, 60.0, 1.0), 1, RngSeed(1), 100, 100).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].u, pts[0].v), (20.0, 40.0));
    }

    #[test]
    fn samples_stay_inside_and_repeat() {
        let b = bx(10.0, 20.0, 30.0, 60.0, 1.0);
        let a = sample_box_points(&b, 50, RngSeed(5), 100, 100).unwrap();
        let again = sample_box_points(&b, 50, RngSeed(5), 100, 100).unwrap();
        assert_eq!(a, again);
        for p in &a {
            assert!(p.u >= 10.0 && p.u <= 30.0 && p.v >= 20.0 && p.v <= 60.0);
        }
    }

    #[test]
    fn straddling_box_is_clipped() {
        let pts = sample_box_points(&bx(-20.0, 90.0, 20.0, 130.0, 1.0), 30, RngSeed(2), 100, 100).unwrap();
        assert_eq!((pts[0].u, pts[0].v), (10.0, 95.0));
        for p in &pts {
            assert!(p.u >= 0.0 && p.u < 100.0 && p.v >= 0.0 && p.v < 100.0);
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = sample_box_points(&bx(5.0, 5.0, 5.5, 6.0, 1.0), 3, RngSeed(0), 100, 100).unwrap_err();
        assert!(matches!(err, QueryGenError::DegenerateBox { .. }));
    }

    #[test]
    fn layer_sequences() {
        assert_eq!(depth_layers(10.0, 0.5, 3, 80.0), vec![10.0, 10.5, 11.0]);
        assert_eq!(depth_layers(10.0, 0.5, 1, 80.0), vec![10.0]);
        assert_eq!(depth_layers(79.8, 0.5, 3, 80.0), vec![79.8]);
    }

    fn ramp_map() -> FeatureMap<f64> {
        // 2 channels, 3×4 grid, stride 10 → image 40×30
        let mut data = Vec::new();
        for r in 0..3 {
            for c in 0..4 {
                data.push((r * 4 + c) as f64);
                data.push(-(c as f64) * 2.0 + r as f64 * 0.5);
            }
        }
        FeatureMap::new(0, 2, 40, 30, 10, data)
    }

    #[test]
    fn semantic_on_node_and_midpoint() {
        let f = ramp_map();
        let (u, v) = f.node_pixel(1, 2);
        assert_eq!(sample_semantic(&f, Pixel::new(0, u, v)).unwrap(), f.node(1, 2).to_vec());
        let (u1, _) = f.node_pixel(1, 3);
        let mid = sample_semantic(&f, Pixel::new(0, (u + u1) / 2.0, v)).unwrap();
        for k in 0..2 {
            assert!((mid[k] - 0.5 * (f.node(1, 2)[k] + f.node(1, 3)[k])).abs() < 1e-12);
        }
        assert!(sample_semantic(&f, Pixel::new(0, 40.0, 5.0)).is_err());
        assert!(sample_semantic(&f, Pixel::new(0, -0.1, 5.0)).is_err());
    }

    #[test]
    fn nms_keeps_higher_duplicate() {
        let kept = filter_boxes(&[bx(0.0, 0.0, 10.0, 10.0, 0.6), bx(0.0, 0.0, 10.0, 10.0, 0.9)], 0.05, 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn score_threshold_drops_weak_boxes() {
        let kept = filter_boxes(&[bx(0.0, 0.0, 10.0, 10.0, 0.04), bx(50.0, 50.0, 60.0, 60.0, 0.05)], 0.05, 0.7);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.05);
    }

    #[test]
    fn depth_lookup_is_nearest_neighbour() {
        let mut d = DepthMap::<f64>::invalid(0, 4, 3);
        d.set(2, 1, Some(7.0));
        assert_eq!(d.lookup(2.9, 1.1), Some(7.0));
        assert_eq!(d.lookup(1.9, 1.1), None);
        assert_eq!(d.lookup(4.0, 0.0), None);
        assert_eq!(d.valid_count(), 1);
    }
}
