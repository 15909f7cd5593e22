//! 3D point position encoder: per-axis sinusoidal features concatenated and
//! compressed to the embedding width by a two-layer MLP.

use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::geometry::Point3;
use crate::netcore::{check_dim, MlpWeights, NetError, RngSeed};
use crate::scalar::Real;

pub const DEFAULT_TEMPERATURE: f64 = 10_000.0;

/// Sinusoidal encoding of one coordinate `t` (normally in `[0, 1]`) into
/// `half_dim` values: interleaved `sin(π·t/τ^(2k/half_dim))`,
/// `cos(π·t/τ^(2k/half_dim))` for `k = 0..half_dim/2`.
pub fn sine_encode<T: Real>(t: T, half_dim: usize) -> Vec<T> {
    sine_encode_with_temperature(t, half_dim, T::lit(DEFAULT_TEMPERATURE))
}

pub fn sine_encode_with_temperature<T: Real>(t: T, half_dim: usize, temperature: T) -> Vec<T> {
    assert!(half_dim % 2 == 0, "half_dim must be even, got {half_dim}");
    let scaled = t * T::PI();
    let mut out = Vec::with_capacity(half_dim);
    for k in 0..half_dim / 2 {
        let exponent = T::from_count(2 * k) / T::from_count(half_dim);
        let (s, c) = (scaled / temperature.powf(exponent)).sin_cos();
        out.push(s);
        out.push(c);
    }
    out
}

/// Concatenation of the three per-axis encodings, width `3C/2`.
pub fn encode_point<T: Real>(p: &Point3<T>, embed_dim: usize) -> Vec<T> {
    let half = embed_dim / 2;
    let mut out = Vec::with_capacity(3 * half);
    out.extend(sine_encode(p.x, half));
    out.extend(sine_encode(p.y, half));
    out.extend(sine_encode(p.z, half));
    out
}

/// Position encoder with frozen MLP weights (`3C/2 → hidden → C`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PositionEncoder<T: Real> {
    pub embed_dim: usize,
    pub mlp: MlpWeights<T>,
}

impl<T: Real> PositionEncoder<T> {
    pub fn new(embed_dim: usize, mlp: MlpWeights<T>) -> Result<Self, NetError> {
        check_dim("PositionEncoder input", 3 * (embed_dim / 2), mlp.input_dim())?;
        check_dim("PositionEncoder output", embed_dim, mlp.output_dim())?;
        Ok(PositionEncoder { embed_dim, mlp })
    }

    /// Seeded encoder; hidden width defaults to the input width `3C/2`.
    pub fn seeded(seed: RngSeed, embed_dim: usize) -> Self {
        assert!(embed_dim % 4 == 0, "embedding width must be a multiple of 4");
        let input = 3 * embed_dim / 2;
        PositionEncoder {
            embed_dim,
            mlp: MlpWeights::seeded(seed, input, input, embed_dim),
        }
    }

    /// Embedding of an already normalized point.
    pub fn encode(&self, normalized: &Point3<T>) -> Result<Vec<T>, NetError> {
        pe3d(normalized, &self.mlp, self.embed_dim)
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        self.mlp.feed(hasher);
    }
}

/// `MLP(Cat(Sine(x), Sine(y), Sine(z)))` for a normalized point.
pub fn pe3d<T: Real>(p: &Point3<T>, weights: &MlpWeights<T>, embed_dim: usize) -> Result<Vec<T>, NetError> {
    check_dim("pe3d", 3 * (embed_dim / 2), weights.input_dim())?;
    check_dim("pe3d output", embed_dim, weights.output_dim())?;
    weights.forward(&encode_point(p, embed_dim))
}
