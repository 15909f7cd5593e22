//! Transformer decoder with hybrid attention, cross-attention to image
//! tokens, and the detection head.
//!
//! Hybrid attention lets depth-guided queries attend over the concatenation
//! of temporal and depth-guided queries; temporal queries act only as keys
//! and values, so the number of decoded queries never grows with history.
//! Attention is single-head.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoding::PositionEncoder;
use crate::geometry::{CameraModel, DepthRange, Point3, RoiBounds};
use crate::netcore::{
    add_vectors, check_dim, dot, finish_checksum, seeded_init, sigmoid, softmax, DenseMatrix, LayerNorm, MlpWeights,
    NetError, RngSeed,
};
use crate::querygen::{FeatureMap, Query};
use crate::scalar::Real;

/// Projection matrices of one attention block (all `C × C`, no bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AttentionWeights<T: Real> {
    pub w_q: DenseMatrix<T>,
    pub w_k: DenseMatrix<T>,
    pub w_v: DenseMatrix<T>,
    /// Output projection applied by the decoder before the residual add.
    pub w_o: DenseMatrix<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn seeded(seed: RngSeed, dim: usize) -> Self {
        AttentionWeights {
            w_q: seeded_init(seed.derive(1), dim, dim),
            w_k: seeded_init(seed.derive(2), dim, dim),
            w_v: seeded_init(seed.derive(3), dim, dim),
            w_o: seeded_init(seed.derive(4), dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    fn feed(&self, hasher: &mut Sha256) {
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            for v in m.values() {
                hasher.update(v.le_bytes());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecoderLayer<T: Real> {
    pub hybrid: AttentionWeights<T>,
    pub norm1: LayerNorm<T>,
    pub cross: AttentionWeights<T>,
    pub norm2: LayerNorm<T>,
    pub ffn: MlpWeights<T>,
    pub norm3: LayerNorm<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DecoderWeights<T: Real> {
    pub embed_dim: usize,
    pub layers: Vec<DecoderLayer<T>>,
}

impl<T: Real> DecoderWeights<T> {
    pub fn seeded(seed: RngSeed, embed_dim: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let s = seed.derive(l as u64 + 1);
                DecoderLayer {
                    hybrid: AttentionWeights::seeded(s.derive(10), embed_dim),
                    norm1: LayerNorm::unit(embed_dim),
                    cross: AttentionWeights::seeded(s.derive(20), embed_dim),
                    norm2: LayerNorm::unit(embed_dim),
                    ffn: MlpWeights::seeded(s.derive(30), embed_dim, embed_dim, embed_dim),
                    norm3: LayerNorm::unit(embed_dim),
                }
            })
            .collect();
        DecoderWeights { embed_dim, layers }
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        for l in &self.layers {
            l.hybrid.feed(hasher);
            l.norm1.feed(hasher);
            l.cross.feed(hasher);
            l.norm2.feed(hasher);
            l.ffn.feed(hasher);
            l.norm3.feed(hasher);
        }
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        self.feed(&mut h);
        finish_checksum(h)
    }
}

/// Attention result; `weights[i]` is the probability row of query `i` when
/// requested.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T: Real> {
    pub outputs: Vec<Vec<T>>,
    pub weights: Option<Vec<Vec<T>>>,
}

fn project_all<T: Real>(m: &DenseMatrix<T>, xs: &[Vec<T>], context: &'static str) -> Result<Vec<Vec<T>>, NetError> {
    xs.par_iter()
        .map(|x| {
            check_dim(context, m.cols(), x.len())?;
            m.matvec(x)
        })
        .collect()
}

/// `softmax(Q·Kᵀ/√d_k)·V` over already projected rows.
fn attend_projected<T: Real>(
    q: &[Vec<T>],
    k: &[Vec<T>],
    v: &[Vec<T>],
    keep_weights: bool,
) -> AttentionOutput<T> {
    let width = v.first().map_or(0, Vec::len);
    let d_k = q.first().map_or(1, Vec::len).max(1);
    let scale = T::one() / T::from_count(d_k).sqrt();
    let d = q.first().map_or(0, Vec::len);
    let k_flat: Vec<T> = k.iter().flat_map(|r| r.iter().copied()).collect();
    let v_flat: Vec<T> = v.iter().flat_map(|r| r.iter().copied()).collect();
    let rows: Vec<(Vec<T>, Option<Vec<T>>)> = q
        .par_iter()
        .map(|qi| {
            if k.is_empty() {
                return (vec![T::zero(); width], keep_weights.then(Vec::new));
            }
            let logits: Vec<T> = if d == 0 {
                vec![T::zero(); k.len()]
            } else {
                k_flat.chunks_exact(d).map(|kj| dot(qi, kj) * scale).collect()
            };
            let p = softmax(&logits);
            let mut out = vec![T::zero(); width];
            if width > 0 {
                for (&pj, vj) in p.iter().zip(v_flat.chunks_exact(width)) {
                    for (o, &x) in out.iter_mut().zip(vj) {
                        *o = *o + pj * x;
                    }
                }
            }
            (out, keep_weights.then_some(p))
        })
        .collect();
    let mut outputs = Vec::with_capacity(rows.len());
    let mut weights = keep_weights.then(|| Vec::with_capacity(rows.len()));
    for (o, w) in rows {
        outputs.push(o);
        if let (Some(ws), Some(w)) = (weights.as_mut(), w) {
            ws.push(w);
        }
    }
    AttentionOutput { outputs, weights }
}

/// Scaled dot-product attention of `queries` over `context` rows, which
/// serve as both keys and values: `softmax((W_q·x)(W_k·X)ᵀ/√d_k)·(W_v·X)`.
pub fn scaled_dot_attention<T: Real>(
    queries: &[Vec<T>],
    context: &[Vec<T>],
    w: &AttentionWeights<T>,
    keep_weights: bool,
) -> Result<AttentionOutput<T>, NetError> {
    let q = project_all(&w.w_q, queries, "attention query")?;
    let k = project_all(&w.w_k, context, "attention key")?;
    let v = project_all(&w.w_v, context, "attention value")?;
    Ok(attend_projected(&q, &k, &v, keep_weights))
}

/// Standard self-attention over one set of rows.
pub fn self_attention<T: Real>(
    x: &[Vec<T>],
    w: &AttentionWeights<T>,
    keep_weights: bool,
) -> Result<AttentionOutput<T>, NetError> {
    scaled_dot_attention(x, x, w, keep_weights)
}

/// Hybrid attention on raw embedding rows: keys and values come from
/// `Cat(temporal, depth_guided)`, queries from the depth-guided rows only.
pub fn hybrid_attention_rows<T: Real>(
    depth_guided: &[Vec<T>],
    temporal: &[Vec<T>],
    w: &AttentionWeights<T>,
    keep_weights: bool,
) -> Result<AttentionOutput<T>, NetError> {
    let mut x = Vec::with_capacity(temporal.len() + depth_guided.len());
    x.extend_from_slice(temporal);
    x.extend_from_slice(depth_guided);
    scaled_dot_attention(depth_guided, &x, w, keep_weights)
}

/// Hybrid attention over queries; each query contributes `q_pos + q_sem`.
pub fn hybrid_attention<T: Real>(
    q_dep: &[Query<T>],
    q_temp: &[Query<T>],
    w: &AttentionWeights<T>,
) -> Result<AttentionOutput<T>, NetError> {
    let dep: Vec<Vec<T>> = q_dep.iter().map(Query::embedding).collect();
    let temp: Vec<Vec<T>> = q_temp.iter().map(Query::embedding).collect();
    hybrid_attention_rows(&dep, &temp, w, true)
}

/// Flattened image features with 3D position embeddings of their pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTokens<T: Real> {
    pub features: Vec<Vec<T>>,
    pub positions: Vec<Vec<T>>,
}

impl<T: Real> ImageTokens<T> {
    pub fn new(features: Vec<Vec<T>>, positions: Vec<Vec<T>>) -> Result<Self, NetError> {
        check_dim("ImageTokens", features.len(), positions.len())?;
        Ok(ImageTokens { features, positions })
    }

    /// Position embedding of every feature-grid node: the node's pixel centre
    /// is back-projected at the middle of the depth range, normalized and
    /// encoded. Order matches [`ImageTokens::from_features`].
    pub fn positions_for(
        maps: &[FeatureMap<T>],
        rig: &[CameraModel<T>],
        encoder: &PositionEncoder<T>,
        roi: &RoiBounds<T>,
        depth_range: &DepthRange<T>,
    ) -> Result<Vec<Vec<T>>, NetError> {
        let depth = depth_range.midpoint();
        let mut out = Vec::new();
        for fmap in maps {
            let Some(cam) = rig.iter().find(|c| c.id == fmap.camera) else {
                continue;
            };
            for row in 0..fmap.rows {
                for col in 0..fmap.cols {
                    let (u, v) = fmap.node_pixel(row, col);
                    let p = cam.unproject_unchecked(u, v, depth);
                    out.push(encoder.encode(&roi.normalize(&p).point)?);
                }
            }
        }
        Ok(out)
    }

    pub fn from_features(maps: &[FeatureMap<T>], positions: Vec<Vec<T>>) -> Result<Self, NetError> {
        let mut features = Vec::with_capacity(positions.len());
        for fmap in maps {
            for row in 0..fmap.rows {
                for col in 0..fmap.cols {
                    features.push(fmap.node(row, col).to_vec());
                }
            }
        }
        Self::new(features, positions)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Token rows as seen by attention: feature plus position embedding.
    pub fn inputs(&self) -> Vec<Vec<T>> {
        self.features
            .iter()
            .zip(&self.positions)
            .map(|(f, p)| add_vectors(f, p))
            .collect()
    }
}

/// Cross-attention of query rows over all image tokens.
pub fn cross_attention<T: Real>(
    queries: &[Vec<T>],
    tokens: &ImageTokens<T>,
    w: &AttentionWeights<T>,
    keep_weights: bool,
) -> Result<AttentionOutput<T>, NetError> {
    scaled_dot_attention(queries, &tokens.inputs(), w, keep_weights)
}

fn residual_norm<T: Real>(
    state: &[Vec<T>],
    update: &[Vec<T>],
    proj: Option<&DenseMatrix<T>>,
    norm: &LayerNorm<T>,
) -> Result<Vec<Vec<T>>, NetError> {
    state
        .iter()
        .zip(update)
        .map(|(s, u)| {
            let u = match proj {
                Some(m) => m.matvec(u)?,
                None => u.clone(),
            };
            norm.forward(&add_vectors(s, &u))
        })
        .collect()
}

/// Runs all decoder layers and returns one embedding per depth-guided query.
///
/// Each layer is hybrid attention → add & norm → cross-attention → add &
/// norm → feed-forward → add & norm. The first layer attends with the query
/// embeddings as given (`q_pos + q_sem`); later layers re-add `q_pos` to the
/// running state before attention. Temporal queries are keys/values only.
pub fn decode<T: Real>(
    q_dep: &[Query<T>],
    q_temp: &[Query<T>],
    tokens: &ImageTokens<T>,
    weights: &DecoderWeights<T>,
) -> Result<Vec<Vec<T>>, NetError> {
    let mut state: Vec<Vec<T>> = q_dep.iter().map(Query::embedding).collect();
    if weights.layers.is_empty() || q_dep.is_empty() {
        return Ok(state);
    }
    let pos: Vec<&Vec<T>> = q_dep.iter().map(|q| &q.q_pos).collect();
    let temp: Vec<Vec<T>> = q_temp.iter().map(Query::embedding).collect();
    let token_rows = tokens.inputs();

    for (l, layer) in weights.layers.iter().enumerate() {
        let x: Vec<Vec<T>> = if l == 0 {
            state.clone()
        } else {
            state.iter().zip(&pos).map(|(s, p)| add_vectors(s, p)).collect()
        };
        let h = hybrid_attention_rows(&x, &temp, &layer.hybrid, false)?;
        state = residual_norm(&state, &h.outputs, Some(&layer.hybrid.w_o), &layer.norm1)?;

        let xq: Vec<Vec<T>> = state.iter().zip(&pos).map(|(s, p)| add_vectors(s, p)).collect();
        let c = scaled_dot_attention(&xq, &token_rows, &layer.cross, false)?;
        state = residual_norm(&state, &c.outputs, Some(&layer.cross.w_o), &layer.norm2)?;

        let f: Vec<Vec<T>> = state
            .par_iter()
            .map(|s| layer.ffn.forward(s))
            .collect::<Result<_, _>>()?;
        state = residual_norm(&state, &f, None, &layer.norm3)?;
    }
    Ok(state)
}

/// Number of regression outputs: centre offset (3), log size (3),
/// sin/cos yaw (2), velocity (2).
pub const REG_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HeadWeights<T: Real> {
    pub cls: MlpWeights<T>,
    pub reg: MlpWeights<T>,
}

impl<T: Real> HeadWeights<T> {
    pub fn seeded(seed: RngSeed, embed_dim: usize, num_classes: usize) -> Self {
        HeadWeights {
            cls: MlpWeights::seeded(seed.derive(1), embed_dim, embed_dim, num_classes),
            reg: MlpWeights::seeded(seed.derive(2), embed_dim, embed_dim, REG_DIM),
        }
    }

    pub fn zeros(embed_dim: usize, num_classes: usize) -> Self {
        HeadWeights {
            cls: MlpWeights::zeros(embed_dim, embed_dim, num_classes),
            reg: MlpWeights::zeros(embed_dim, embed_dim, REG_DIM),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls.output_dim()
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        self.cls.feed(hasher);
        self.reg.feed(hasher);
    }
}

/// One decoded 3D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Detection<T: Real> {
    /// Post-sigmoid score per class.
    pub scores: Vec<T>,
    pub center: Point3<T>,
    /// Width, length, height in meters.
    pub size: [T; 3],
    /// Heading in `(−π, π]`.
    pub yaw: T,
    pub velocity: [T; 2],
    /// Reference point of the query that produced this box.
    pub reference: Point3<T>,
}

impl<T: Real> Detection<T> {
    /// `(class, score)` of the best-scoring class.
    pub fn label(&self) -> Option<(usize, T)> {
        self.scores
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best, (c, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((c, s)),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DetectionSet<T: Real> {
    pub detections: Vec<Detection<T>>,
}

impl<T: Real> DetectionSet<T> {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Maps an `atan2` result into `(−π, π]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    let mut x = a;
    while x <= -pi {
        x = x + two_pi;
    }
    while x > pi {
        x = x - two_pi;
    }
    x
}

/// Detection head: class logits → sigmoid scores; regression → centre offset
/// from the normalized reference point, log-size, (sin, cos) yaw, velocity.
pub fn head<T: Real>(
    embedding: &[T],
    reference: &Point3<T>,
    roi: &RoiBounds<T>,
    w: &HeadWeights<T>,
) -> Result<Detection<T>, NetError> {
    let logits = w.cls.forward(embedding)?;
    let r = w.reg.forward(embedding)?;
    let n = roi.normalize(reference).point;
    let center = roi.denormalize(&Point3::new(n.x + r[0], n.y + r[1], n.z + r[2]));
    Ok(Detection {
        scores: logits.into_iter().map(sigmoid).collect(),
        center,
        size: [r[3].exp(), r[4].exp(), r[5].exp()],
        yaw: wrap_angle(r[6].atan2(r[7])),
        velocity: [r[8], r[9]],
        reference: *reference,
    })
}
