//! Per-frame orchestration: stubs → queries → decoder → head → loss →
//! memory, and sequence-level evaluation.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decoder::{decode, head, DecoderWeights, Detection, DetectionSet, HeadWeights, ImageTokens};
use crate::encoding::PositionEncoder;
use crate::geometry::{DepthRange, Point3, RoiBounds};
use crate::matching::{detection_loss, GtBox, LossConfig, LossError, LossReport};
use crate::metrics::{eval_detections, eval_objects, mean_ap, ApResult, EvalConfig};
use crate::netcore::{finish_checksum, NetError, RngSeed};
use crate::querygen::{generate_queries, Box2D, DepthMap, FeatureMap, Query, QueryGenConfig, QueryGenError, QueryGenInputs, QuerySource};
use crate::simworld::{
    boxes_from_render, features_from_render, perturb_depth, render_camera, NoiseConfig, OrientedBox, Scene, SimError,
};
use crate::temporal::{temporal_queries, MemoryQueue, MotionMlps};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("frame {index} processed out of order (expected {expected})")]
    OutOfOrder { index: usize, expected: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    QueryGen(#[from] QueryGenError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Where the decoder's depth-side queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    DepthGuided,
    /// `fixed_queries` seeded reference points spread uniformly over the ROI.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub weights: u64,
    pub stubs: u64,
    pub queries: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            weights: 7,
            stubs: 11,
            queries: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub query_mode: QueryMode,
    pub querygen: QueryGenConfig<f64>,
    pub fixed_queries: usize,
    /// Frames kept in the memory queue (N).
    pub memory_frames: usize,
    /// Entries kept per frame (K).
    pub memory_per_frame: usize,
    /// Embedding width C used by every module.
    pub embed_dim: usize,
    pub decoder_layers: usize,
    pub loss: LossConfig<f64>,
    pub eval: EvalConfig,
    pub roi: RoiBounds<f64>,
    pub depth_range: DepthRange<f64>,
    pub noise: NoiseConfig,
    pub seeds: Seeds,
    /// Replace the head output of every query whose reference point lies
    /// inside a ground-truth box by that box's class (score 1) and the
    /// reference point itself as centre.
    pub oracle_head: bool,
    /// Store ground-truth velocity (plus `noise.velocity_sigma`) in memory
    /// instead of the head's velocity regression.
    pub oracle_velocity: bool,
    /// Record wall-clock time per frame (makes reports non-reproducible).
    pub record_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            query_mode: QueryMode::DepthGuided,
            querygen: QueryGenConfig::default(),
            fixed_queries: 900,
            memory_frames: 4,
            memory_per_frame: 64,
            embed_dim: 64,
            decoder_layers: 6,
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
            roi: RoiBounds::default(),
            depth_range: DepthRange::default(),
            noise: NoiseConfig::default(),
            seeds: Seeds::default(),
            oracle_head: false,
            oracle_velocity: true,
            record_timings: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            return bad(format!("embed_dim must be a positive multiple of 4, got {}", self.embed_dim));
        }
        if self.querygen.n_points == 0 || self.querygen.depth_layers == 0 {
            return bad("querygen.n_points and querygen.depth_layers must be at least 1".into());
        }
        if !(self.querygen.delta_d >= 0.0) {
            return bad(format!("querygen.delta_d must be >= 0, got {}", self.querygen.delta_d));
        }
        if !(0.0..=1.0).contains(&self.querygen.nms_iou) {
            return bad(format!("querygen.nms_iou must lie in [0, 1], got {}", self.querygen.nms_iou));
        }
        if !(self.loss.gamma >= 0.0) || !(self.loss.lambda_cls >= 0.0) {
            return bad("loss.gamma and loss.lambda_cls must be >= 0".into());
        }
        if !(self.depth_range.min > 0.0 && self.depth_range.max > self.depth_range.min) {
            return bad(format!(
                "depth_range must satisfy 0 < min < max, got [{}, {}]",
                self.depth_range.min, self.depth_range.max
            ));
        }
        self.roi
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(format!("roi: {e}")))?;
        self.eval.validate().map_err(PipelineError::InvalidConfig)?;
        self.noise.validate().map_err(PipelineError::InvalidConfig)?;
        Ok(())
    }
}

/// All frozen weights of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub encoder: PositionEncoder<f64>,
    pub decoder: DecoderWeights<f64>,
    pub head: HeadWeights<f64>,
    pub motion: MotionMlps<f64>,
}

impl Model {
    pub fn seeded(seed: RngSeed, embed_dim: usize, decoder_layers: usize, num_classes: usize) -> Self {
        Model {
            encoder: PositionEncoder::seeded(seed.derive(1), embed_dim),
            decoder: DecoderWeights::seeded(seed.derive(2), embed_dim, decoder_layers),
            head: HeadWeights::seeded(seed.derive(3), embed_dim, num_classes),
            motion: MotionMlps::seeded(seed.derive(4), embed_dim),
        }
    }

    /// SHA-256 over every weight, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        self.encoder.feed(&mut h);
        self.decoder.feed(&mut h);
        self.head.feed(&mut h);
        self.motion.feed(&mut h);
        finish_checksum(h)
    }
}

/// Mutable state carried across frames of one sequence.
#[derive(Debug, Clone)]
pub struct PipelineState {
    pub model: Model,
    pub memory: MemoryQueue<f64>,
    pub next_frame: usize,
    pub peak_memory_entries: usize,
    token_positions: Option<Vec<Vec<f64>>>,
}

impl PipelineState {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let model = Model::seeded(
            RngSeed(cfg.seeds.weights),
            cfg.embed_dim,
            cfg.decoder_layers,
            cfg.eval.classes.len(),
        );
        PipelineState {
            model,
            memory: MemoryQueue::new(cfg.memory_frames, cfg.memory_per_frame),
            next_frame: 0,
            peak_memory_entries: 0,
            token_positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub timestamp: f64,
    pub depth_guided_queries: usize,
    pub temporal_queries: usize,
    /// Rows updated by the decoder; equals `depth_guided_queries`.
    pub decoder_queries: usize,
    pub boxes_2d: usize,
    /// Memory entries after this frame was pushed.
    pub memory_entries: usize,
    pub detections: DetectionSet<f64>,
    /// Absent when there are fewer predictions than ground-truth objects.
    pub loss: Option<LossReport<f64>>,
    pub reference_points: Vec<Point3<f64>>,
    pub gt_boxes: Vec<GtBox<f64>>,
    /// Mean 3D distance from each reference point to the nearest
    /// ground-truth centre.
    pub mean_reference_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

/// Mean distance from each point to its nearest centre; `None` if either
/// set is empty.
pub fn mean_nearest_distance(points: &[Point3<f64>], centers: &[Point3<f64>]) -> Option<f64> {
    if points.is_empty() || centers.is_empty() {
        return None;
    }
    let total: f64 = points
        .iter()
        .map(|p| centers.iter().map(|c| p.distance(c)).fold(f64::INFINITY, f64::min))
        .sum();
    Some(total / points.len() as f64)
}

/// Seeded uniform reference points over the ROI with seeded semantic
/// embeddings; identical for every frame.
pub fn fixed_queries(count: usize, roi: &RoiBounds<f64>, encoder: &PositionEncoder<f64>, seed: RngSeed) -> Result<Vec<Query<f64>>, NetError> {
    let mut rng = seed.rng();
    let c = encoder.embed_dim;
    (0..count)
        .map(|_| {
            let n = Point3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            let q_sem: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..=1.0)).collect();
            Ok(Query {
                q_pos: encoder.encode(&n)?,
                q_sem,
                p_ref: roi.denormalize(&n),
                source: QuerySource::Fixed,
                origin: None,
            })
        })
        .collect()
}

struct CameraInputs {
    depth: DepthMap<f64>,
    boxes: Vec<Box2D<f64>>,
    features: FeatureMap<f64>,
}

fn camera_inputs(scene: &Scene, frame: usize, boxes: &[OrientedBox], cfg: &PipelineConfig) -> Vec<CameraInputs> {
    let stubs = RngSeed(cfg.seeds.stubs);
    scene
        .rig
        .par_iter()
        .map(|cam| {
            let render = render_camera(cam, boxes, &cfg.depth_range);
            let frame_seed = stubs.derive(frame as u64).derive(cam.id as u64);
            let depth = perturb_depth(
                &render.depth,
                cfg.noise.depth_rel_sigma,
                cfg.depth_range.min,
                cfg.depth_range.max,
                frame_seed.derive(1),
            );
            let boxes_2d = boxes_from_render(
                scene,
                &render,
                cam,
                boxes,
                &cfg.noise,
                cfg.querygen.score_threshold,
                cfg.querygen.nms_iou,
                frame_seed.derive(2),
            );
            // feature seed is per sequence so an object looks the same in every frame
            let features = features_from_render(
                scene,
                &render,
                cam,
                cfg.embed_dim,
                scene.config.rig.feature_stride,
                stubs.derive(0xFEA7),
            );
            CameraInputs {
                depth,
                boxes: boxes_2d,
                features,
            }
        })
        .collect()
}

fn oracle_override(det: &mut Detection<f64>, gts: &[GtBox<f64>]) {
    let Some(g) = gts.iter().find(|g| OrientedBox::from_gt(g).contains(&det.reference, 0.0)) else {
        return;
    };
    det.center = det.reference;
    det.size = g.size;
    det.yaw = g.yaw;
    det.velocity = g.velocity;
    for (k, s) in det.scores.iter_mut().enumerate() {
        *s = if k == g.class_id { 1.0 } else { 0.0 };
    }
}

fn memory_view(
    dets: &DetectionSet<f64>,
    gts: &[GtBox<f64>],
    sigma: f64,
    seed: RngSeed,
) -> DetectionSet<f64> {
    let mut rng = seed.rng();
    let mut out = dets.clone();
    for d in &mut out.detections {
        let nearest = gts.iter().min_by(|a, b| {
            a.center
                .distance(&d.center)
                .partial_cmp(&b.center.distance(&d.center))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let noise: [f64; 2] = [rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal)];
        let v = nearest.map_or([0.0, 0.0], |g| g.velocity);
        d.velocity = [v[0] + sigma * noise[0], v[1] + sigma * noise[1]];
    }
    out
}

/// Depth-side queries and feature maps of one frame.
pub struct FrameInputs {
    pub queries: Vec<Query<f64>>,
    pub features: Vec<FeatureMap<f64>>,
    /// 2D boxes that survived filtering, over all cameras.
    pub boxes_2d: usize,
}

/// Runs the stubs for every camera and builds the frame's depth-guided (or
/// fixed) queries.
pub fn prepare_frame(model: &Model, scene: &Scene, frame_index: usize, cfg: &PipelineConfig) -> Result<FrameInputs, PipelineError> {
    let boxes = scene.ego_boxes(frame_index)?;
    let cams = camera_inputs(scene, frame_index, &boxes, cfg);
    let all_boxes: Vec<Box2D<f64>> = cams.iter().flat_map(|c| c.boxes.iter().copied()).collect();
    let depths: Vec<DepthMap<f64>> = cams.iter().map(|c| c.depth.clone()).collect();
    let features: Vec<FeatureMap<f64>> = cams.into_iter().map(|c| c.features).collect();
    let queries = match cfg.query_mode {
        QueryMode::DepthGuided => {
            let inputs = QueryGenInputs {
                boxes: &all_boxes,
                depths: &depths,
                features: &features,
                rig: &scene.rig,
                encoder: &model.encoder,
                roi: &cfg.roi,
                depth_range: &cfg.depth_range,
            };
            generate_queries(&inputs, &cfg.querygen, RngSeed(cfg.seeds.queries).derive(frame_index as u64))?
        }
        QueryMode::Fixed => fixed_queries(cfg.fixed_queries, &cfg.roi, &model.encoder, RngSeed(cfg.seeds.queries).derive(0xF1ED))?,
    };
    Ok(FrameInputs {
        queries,
        features,
        boxes_2d: all_boxes.len(),
    })
}

/// Processes one frame; frames of a sequence must be fed in order.
pub fn run_frame(
    state: &mut PipelineState,
    scene: &Scene,
    frame_index: usize,
    cfg: &PipelineConfig,
) -> Result<FrameReport, PipelineError> {
    if frame_index != state.next_frame {
        return Err(PipelineError::OutOfOrder {
            index: frame_index,
            expected: state.next_frame,
        });
    }
    let started = Instant::now();
    let frame = scene.frame(frame_index)?;
    let gts = scene.gt_boxes(frame_index)?;
    let FrameInputs {
        queries: q_dep,
        features,
        boxes_2d,
    } = prepare_frame(&state.model, scene, frame_index, cfg)?;
    let model = &state.model;
    let q_temp = temporal_queries(
        &state.memory,
        &frame.ego_pose,
        frame.timestamp,
        &model.motion,
        &model.encoder,
        &cfg.roi,
    )?;

    let positions = match &state.token_positions {
        Some(p) => p.clone(),
        None => {
            let p = ImageTokens::positions_for(&features, &scene.rig, &model.encoder, &cfg.roi, &cfg.depth_range)?;
            state.token_positions = Some(p.clone());
            p
        }
    };
    let model = &state.model;
    let tokens = ImageTokens::from_features(&features, positions)?;
    let embeddings = decode(&q_dep, &q_temp, &tokens, &model.decoder)?;
    let detections: Vec<Detection<f64>> = embeddings
        .par_iter()
        .zip(&q_dep)
        .map(|(e, q)| {
            let mut d = head(e, &q.p_ref, &cfg.roi, &model.head)?;
            if cfg.oracle_head {
                oracle_override(&mut d, &gts);
            }
            Ok(d)
        })
        .collect::<Result<_, NetError>>()?;
    let detections = DetectionSet { detections };

    let loss = if detections.len() >= gts.len() {
        Some(detection_loss(&detections, &gts, &cfg.loss)?)
    } else {
        None
    };

    let memory_dets = if cfg.oracle_velocity {
        memory_view(
            &detections,
            &gts,
            cfg.noise.velocity_sigma,
            RngSeed(cfg.seeds.stubs).derive(frame_index as u64).derive(0x7E1),
        )
    } else {
        detections.clone()
    };
    state
        .memory
        .push_frame(&memory_dets, &embeddings, frame.ego_pose, frame.timestamp)?;
    state.peak_memory_entries = state.peak_memory_entries.max(state.memory.len());
    state.next_frame += 1;

    let reference_points: Vec<Point3<f64>> = q_dep.iter().map(|q| q.p_ref).collect();
    let centers: Vec<Point3<f64>> = gts.iter().map(|g| g.center).collect();
    Ok(FrameReport {
        frame: frame_index,
        timestamp: frame.timestamp,
        depth_guided_queries: q_dep.len(),
        temporal_queries: q_temp.len(),
        decoder_queries: embeddings.len(),
        boxes_2d,
        memory_entries: state.memory.len(),
        mean_reference_distance: mean_nearest_distance(&reference_points, &centers),
        detections,
        loss,
        reference_points,
        gt_boxes: gts,
        timing_ms: cfg
            .record_timings
            .then(|| started.elapsed().as_secs_f64() * 1e3),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub weights_checksum: String,
    pub frames: Vec<FrameReport>,
    pub ap: ApResult<f64>,
    pub peak_memory_entries: usize,
    /// Mean of the per-frame reference distances that are defined.
    pub mean_reference_distance: Option<f64>,
}

/// Runs every frame of the scene, then evaluates all detections.
pub fn run_sequence(scene: &Scene, cfg: &PipelineConfig) -> Result<SequenceReport, PipelineError> {
    cfg.validate()?;
    let mut state = PipelineState::new(cfg);
    let mut frames = Vec::with_capacity(scene.frames.len());
    for i in 0..scene.frames.len() {
        frames.push(run_frame(&mut state, scene, i, cfg)?);
    }
    let mut preds = Vec::new();
    let mut objects = Vec::new();
    for f in &frames {
        preds.extend(eval_detections(f.frame, &f.detections));
        objects.extend(eval_objects(f.frame, &f.gt_boxes));
    }
    let ap = mean_ap(&preds, &objects, &cfg.eval);
    let dists: Vec<f64> = frames.iter().filter_map(|f| f.mean_reference_distance).collect();
    Ok(SequenceReport {
        weights_checksum: state.model.checksum(),
        ap,
        peak_memory_entries: state.peak_memory_entries,
        mean_reference_distance: (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64),
        frames,
    })
}

/// One arm of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub query_mode: QueryMode,
    pub weights_checksum: String,
    pub map: Option<f64>,
    pub mean_reference_distance: Option<f64>,
    pub reference_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub fixed: ArmSummary,
    pub depth_guided: ArmSummary,
}

impl AblationReport {
    pub fn arms(&self) -> [&ArmSummary; 2] {
        [&self.fixed, &self.depth_guided]
    }

    /// `arm,query_mode,weights_checksum,map,mean_reference_distance,reference_points`
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = String::from("arm,query_mode,weights_checksum,map,mean_reference_distance,reference_points\n");
        for a in self.arms() {
            let mode = match a.query_mode {
                QueryMode::DepthGuided => "depth_guided",
                QueryMode::Fixed => "fixed",
            };
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.name,
                mode,
                a.weights_checksum,
                opt(a.map),
                opt(a.mean_reference_distance),
                a.reference_points
            ));
        }
        s
    }
}

fn summarize(name: String, mode: QueryMode, r: &SequenceReport) -> ArmSummary {
    ArmSummary {
        name,
        query_mode: mode,
        weights_checksum: r.weights_checksum.clone(),
        map: r.ap.map,
        mean_reference_distance: r.mean_reference_distance,
        reference_points: r.frames.iter().map(|f| f.reference_points.len()).sum(),
    }
}

/// Runs the scene with fixed and with depth-guided queries under the same
/// weights and seeds.
pub fn run_ablation(scene: &Scene, cfg: &PipelineConfig) -> Result<(AblationReport, [SequenceReport; 2]), PipelineError> {
    let fixed_cfg = PipelineConfig {
        query_mode: QueryMode::Fixed,
        ..cfg.clone()
    };
    let dqg_cfg = PipelineConfig {
        query_mode: QueryMode::DepthGuided,
        ..cfg.clone()
    };
    let fixed = run_sequence(scene, &fixed_cfg)?;
    let dqg = run_sequence(scene, &dqg_cfg)?;
    let report = AblationReport {
        fixed: summarize(format!("fixed({})", cfg.fixed_queries), QueryMode::Fixed, &fixed),
        depth_guided: summarize("depth_guided".into(), QueryMode::DepthGuided, &dqg),
    };
    Ok((report, [fixed, dqg]))
}
