//! Memory queue of past detections and temporal query alignment.
//!
//! Stored reference points are moved into the current ego frame by the
//! exact rigid transform `(E_now)⁻¹·E_then`; object motion is left to the
//! two motion MLPs, which act on embeddings only.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::decoder::DetectionSet;
use crate::encoding::PositionEncoder;
use crate::geometry::{ego_align, EgoPose, Point3, RoiBounds};
use crate::netcore::{check_dim, MlpWeights, NetError, RngSeed};
use crate::querygen::{Query, QuerySource};
use crate::scalar::Real;

/// Velocity components fed to the motion MLPs (ground plane).
pub const VELOCITY_DIM: usize = 2;

/// One stored detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MemoryEntry<T: Real> {
    /// Capture time of the frame this entry came from; the relative interval
    /// is taken against the alignment time.
    pub timestamp: T,
    pub q_sem: Vec<T>,
    /// Box centre in the ego frame of `ego_pose`.
    pub p_ref: Point3<T>,
    pub velocity: [T; 2],
    pub ego_pose: EgoPose<T>,
    pub score: T,
}

impl<T: Real> MemoryEntry<T> {
    pub fn delta_t(&self, t_now: T) -> T {
        t_now - self.timestamp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MemoryFrame<T: Real> {
    pub timestamp: T,
    pub entries: Vec<MemoryEntry<T>>,
}

/// Ring of at most `max_frames` frames, each holding at most
/// `per_frame` entries. Frames are kept oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MemoryQueue<T: Real> {
    max_frames: usize,
    per_frame: usize,
    frames: VecDeque<MemoryFrame<T>>,
}

impl<T: Real> MemoryQueue<T> {
    pub fn new(max_frames: usize, per_frame: usize) -> Self {
        MemoryQueue {
            max_frames,
            per_frame,
            frames: VecDeque::with_capacity(max_frames + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.max_frames * self.per_frame
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn len(&self) -> usize {
        self.frames.iter().map(|f| f.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames oldest → newest.
    pub fn frames(&self) -> impl DoubleEndedIterator<Item = &MemoryFrame<T>> {
        self.frames.iter()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Stores the `per_frame` highest-scoring detections of a frame, with
    /// their embeddings, and evicts the oldest frame beyond `max_frames`.
    /// Score is the best class score; ties keep the earlier detection.
    pub fn push_frame(
        &mut self,
        detections: &DetectionSet<T>,
        embeddings: &[Vec<T>],
        pose: EgoPose<T>,
        timestamp: T,
    ) -> Result<(), NetError> {
        check_dim("push_frame embeddings", detections.len(), embeddings.len())?;
        let mut order: Vec<(usize, T)> = detections
            .detections
            .iter()
            .enumerate()
            .map(|(i, d)| (i, d.label().map_or(T::zero(), |(_, s)| s)))
            .collect();
        order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        let entries = order
            .into_iter()
            .take(self.per_frame)
            .map(|(i, score)| {
                let d = &detections.detections[i];
                MemoryEntry {
                    timestamp,
                    q_sem: embeddings[i].clone(),
                    p_ref: d.center,
                    velocity: d.velocity,
                    ego_pose: pose,
                    score,
                }
            })
            .collect();
        if self.max_frames == 0 {
            return Ok(());
        }
        self.frames.push_back(MemoryFrame { timestamp, entries });
        while self.frames.len() > self.max_frames {
            self.frames.pop_front();
        }
        Ok(())
    }
}

/// Position- and semantic-update MLPs, each mapping
/// `[embedding ∥ v ∥ Δt]` (width `C + 3`) to width `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MotionMlps<T: Real> {
    pub position: MlpWeights<T>,
    pub semantic: MlpWeights<T>,
}

impl<T: Real> MotionMlps<T> {
    pub fn seeded(seed: RngSeed, embed_dim: usize) -> Self {
        let input = embed_dim + VELOCITY_DIM + 1;
        MotionMlps {
            position: MlpWeights::seeded(seed.derive(1), input, input, embed_dim),
            semantic: MlpWeights::seeded(seed.derive(2), input, input, embed_dim),
        }
    }

    pub fn zeros(embed_dim: usize) -> Self {
        let input = embed_dim + VELOCITY_DIM + 1;
        MotionMlps {
            position: MlpWeights::zeros(input, input, embed_dim),
            semantic: MlpWeights::zeros(input, input, embed_dim),
        }
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        self.position.feed(hasher);
        self.semantic.feed(hasher);
    }
}

fn motion_input<T: Real>(embedding: &[T], v: [T; 2], dt: T) -> Vec<T> {
    let mut x = Vec::with_capacity(embedding.len() + VELOCITY_DIM + 1);
    x.extend_from_slice(embedding);
    x.extend_from_slice(&v);
    x.push(dt);
    x
}

/// A temporal query together with its position embedding before the
/// motion update.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedQuery<T: Real> {
    pub query: Query<T>,
    pub aligned_q_pos: Vec<T>,
}

/// Aligns one stored entry to the current frame.
pub fn align<T: Real>(
    entry: &MemoryEntry<T>,
    pose_now: &EgoPose<T>,
    t_now: T,
    mlps: &MotionMlps<T>,
    encoder: &PositionEncoder<T>,
    roi: &RoiBounds<T>,
) -> Result<AlignedQuery<T>, NetError> {
    let dt = entry.delta_t(t_now);
    let p_ref = ego_align(entry.p_ref, &entry.ego_pose, pose_now);
    let aligned_q_pos = encoder.encode(&roi.normalize(&p_ref).point)?;
    let q_pos = mlps
        .position
        .forward(&motion_input(&aligned_q_pos, entry.velocity, dt))?;
    let q_sem = mlps
        .semantic
        .forward(&motion_input(&entry.q_sem, entry.velocity, dt))?;
    Ok(AlignedQuery {
        query: Query {
            q_pos,
            q_sem,
            p_ref,
            source: QuerySource::Temporal,
            origin: None,
        },
        aligned_q_pos,
    })
}

/// Temporal queries for every stored entry, newest frame first and by
/// descending score within a frame.
pub fn temporal_queries<T: Real>(
    queue: &MemoryQueue<T>,
    pose_now: &EgoPose<T>,
    t_now: T,
    mlps: &MotionMlps<T>,
    encoder: &PositionEncoder<T>,
    roi: &RoiBounds<T>,
) -> Result<Vec<Query<T>>, NetError> {
    let mut out = Vec::with_capacity(queue.len());
    for frame in queue.frames().rev() {
        // entries are stored in descending score order already
        for entry in &frame.entries {
            out.push(align(entry, pose_now, t_now, mlps, encoder, roi)?.query);
        }
    }
    Ok(out)
}
