//! Small dense numerics: matrices, linear layers, two-layer MLPs, softmax
//! and seeded initialization. Weights are frozen after construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<(), NetError> {
    if expected == found {
        Ok(())
    } else {
        Err(NetError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

/// Seed for deterministic weight and noise generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Derives an independent child seed (splitmix64 finalizer over the pair).
    pub fn derive(self, tag: u64) -> RngSeed {
        let mut z = self.0 ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DenseMatrix<T: Real> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>) -> Result<Self, NetError> {
        check_dim("DenseMatrix::from_vec", rows * cols, values.len())?;
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NetError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("DenseMatrix::from_rows", cols, r.len())?;
            values.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scaled(&self, s: T) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| v * s).collect(),
        }
    }

    /// `W·x` without bias.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>, NetError> {
        check_dim("matvec", self.cols, x.len())?;
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Inner product, accumulated in four interleaved lanes.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] = acc[0] + a[k] * b[k];
        acc[1] = acc[1] + a[k + 1] * b[k + 1];
        acc[2] = acc[2] + a[k + 2] * b[k + 2];
        acc[3] = acc[3] + a[k + 3] * b[k + 3];
    }
    let mut tail = T::zero();
    for k in 4 * chunks..n {
        tail = tail + a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn add_vectors<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

/// `W·x + b`.
pub fn linear<T: Real>(w: &DenseMatrix<T>, b: &[T], x: &[T]) -> Result<Vec<T>, NetError> {
    check_dim("linear bias", w.rows(), b.len())?;
    let mut y = w.matvec(x)?;
    for (yi, &bi) in y.iter_mut().zip(b) {
        *yi = *yi + bi;
    }
    Ok(y)
}

pub fn relu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax<T: Real>(v: &[T]) -> Vec<T> {
    if v.is_empty() {
        return Vec::new();
    }
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = v.iter().map(|&x| (x - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Uniform values in `[−1/√cols, 1/√cols]`, reproducible for a given seed.
pub fn seeded_init<T: Real>(seed: RngSeed, rows: usize, cols: usize) -> DenseMatrix<T> {
    assert!(rows > 0 && cols > 0, "seeded_init needs a non-empty shape");
    let bound = 1.0 / (cols as f64).sqrt();
    let mut rng = seed.rng();
    let values = (0..rows * cols)
        .map(|_| T::lit(rng.random_range(-bound..=bound)))
        .collect();
    DenseMatrix { rows, cols, values }
}

/// Affine layer `W·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Linear<T: Real> {
    pub weight: DenseMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(weight: DenseMatrix<T>, bias: Vec<T>) -> Result<Self, NetError> {
        check_dim("Linear::new", weight.rows(), bias.len())?;
        Ok(Linear { weight, bias })
    }

    /// Seeded weights, zero bias.
    pub fn seeded(seed: RngSeed, input: usize, output: usize) -> Self {
        Linear {
            weight: seeded_init(seed, output, input),
            bias: vec![T::zero(); output],
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    pub fn identity(n: usize) -> Self {
        Linear {
            weight: DenseMatrix::identity(n),
            bias: vec![T::zero(); n],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NetError> {
        linear(&self.weight, &self.bias, x)
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        for v in self.weight.values().iter().chain(&self.bias) {
            hasher.update(v.le_bytes());
        }
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MlpWeights<T: Real> {
    pub first: Linear<T>,
    pub second: Linear<T>,
}

impl<T: Real> MlpWeights<T> {
    pub fn new(first: Linear<T>, second: Linear<T>) -> Result<Self, NetError> {
        check_dim("MlpWeights::new", first.output_dim(), second.input_dim())?;
        Ok(MlpWeights { first, second })
    }

    pub fn seeded(seed: RngSeed, input: usize, hidden: usize, output: usize) -> Self {
        MlpWeights {
            first: Linear::seeded(seed.derive(1), input, hidden),
            second: Linear::seeded(seed.derive(2), hidden, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        MlpWeights {
            first: Linear::zeros(input, hidden),
            second: Linear::zeros(hidden, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.first.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NetError> {
        mlp_forward(self, x)
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        self.first.feed(hasher);
        self.second.feed(hasher);
    }
}

/// `linear2(relu(linear1(x)))`.
pub fn mlp_forward<T: Real>(w: &MlpWeights<T>, x: &[T]) -> Result<Vec<T>, NetError> {
    let hidden = relu(&w.first.forward(x)?);
    w.second.forward(&hidden)
}

/// Layer normalization with learned gain and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LayerNorm<T: Real> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn unit(width: usize) -> Self {
        LayerNorm {
            gain: vec![T::one(); width],
            bias: vec![T::zero(); width],
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NetError> {
        check_dim("LayerNorm", self.gain.len(), x.len())?;
        let n = T::from_count(x.len());
        let mean = x.iter().copied().sum::<T>() / n;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + T::lit(1e-5)).sqrt();
        Ok(x
            .iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(&v, (&g, &b))| (v - mean) * inv * g + b)
            .collect())
    }

    pub(crate) fn feed(&self, hasher: &mut Sha256) {
        for v in self.gain.iter().chain(&self.bias) {
            hasher.update(v.le_bytes());
        }
    }
}

/// Hex SHA-256 over a sequence of weight blocks.
pub(crate) fn finish_checksum(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
