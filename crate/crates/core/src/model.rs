//! The per-chunk classifier: sparse input -> ReLU hidden layer -> B sigmoids.
//!
//! Parameters are generic over [`Scalar`] so the same code runs the `f32`
//! training path and the `f64` gradient check. Loss values are always
//! computed in `f64`.
//!
//! Storage: `W1` (H x F) is kept column-major so the columns touched by a
//! sparse input are contiguous; `W2` (B x H) is row-major. The on-disk blob
//! always uses row-major order for both.

use std::fmt::Debug;
use std::io::Write;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, SolarError};
use crate::features::HashedFeatures;

/// Floating-point type usable for model parameters.
pub trait Scalar:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
}

#[inline]
fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss only.
pub const LOSS_EPS: f64 = 1e-12;

const BLOB_MAGIC: &[u8; 4] = b"SLCM";
const BLOB_VERSION: u32 = 1;
const BLOB_HEADER_LEN: usize = 4 + 4 + 4 * 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ModelDims {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Self { input, hidden, output }
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }
}

/// Few-hot target for one chunk: the buckets of the document's labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetVector {
    pub chunk: usize,
    /// Ascending, unique, all `< B`.
    pub hot_buckets: Vec<u32>,
}

impl TargetVector {
    pub fn new(chunk: usize, mut hot_buckets: Vec<u32>) -> Self {
        hot_buckets.sort_unstable();
        hot_buckets.dedup();
        Self { chunk, hot_buckets }
    }

    #[inline]
    pub fn is_hot(&self, bucket: u32) -> bool {
        self.hot_buckets.binary_search(&bucket).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkModel<T = f32> {
    pub chunk: usize,
    pub dims: ModelDims,
    pub init_seed: u64,
    /// Column-major `H x F`: column `j` is `w1[j*H .. (j+1)*H]`.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// Row-major `B x H`.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Same shapes and layout as the parameters of a [`ChunkModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            w1: vec![T::zero(); dims.hidden * dims.input],
            b1: vec![T::zero(); dims.hidden],
            w2: vec![T::zero(); dims.output * dims.hidden],
            b2: vec![T::zero(); dims.output],
        }
    }

    pub fn clear(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|g| g.is_finite()))
    }

    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Gradient at a flat parameter coordinate (tensor order `w1, b1, w2, b2`).
    pub fn get(&self, flat: usize) -> T {
        let mut i = flat;
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat index {flat} out of range");
    }
}

/// Intermediate values of one forward pass, reused by backward.
#[derive(Debug, Clone, Default)]
pub struct Activations<T> {
    pub pre_hidden: Vec<T>,
    pub hidden: Vec<T>,
    pub probs: Vec<T>,
    delta_out: Vec<T>,
    delta_hidden: Vec<T>,
}

impl<T: Scalar> ChunkModel<T> {
    /// Glorot-uniform weights, zero biases, deterministic in `init_seed`.
    pub fn init(chunk: usize, dims: ModelDims, init_seed: u64) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(SolarError::config("model dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let a1 = (6.0 / (dims.input + dims.hidden) as f64).sqrt();
        let a2 = (6.0 / (dims.hidden + dims.output) as f64).sqrt();
        let mut sample = |n: usize, a: f64| -> Vec<T> {
            (0..n).map(|_| cast(rng.random_range(-a..a))).collect()
        };
        let w1 = sample(dims.hidden * dims.input, a1);
        let w2 = sample(dims.output * dims.hidden, a2);
        Ok(Self {
            chunk,
            dims,
            init_seed,
            w1,
            b1: vec![T::zero(); dims.hidden],
            w2,
            b2: vec![T::zero(); dims.output],
        })
    }

    /// Glorot bound `sqrt(6 / (fan_in + fan_out))` for layers 1 and 2.
    pub fn init_bounds(dims: ModelDims) -> (f64, f64) {
        (
            (6.0 / (dims.input + dims.hidden) as f64).sqrt(),
            (6.0 / (dims.hidden + dims.output) as f64).sqrt(),
        )
    }

    pub fn num_params(&self) -> usize {
        self.dims.num_params()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Mutable parameter at a flat coordinate (tensor order `w1, b1, w2, b2`).
    pub fn param_mut(&mut self, flat: usize) -> &mut T {
        let mut i = flat;
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t[i];
            }
            i -= t.len();
        }
        panic!("flat index {flat} out of range");
    }

    /// Converts the parameters to another precision.
    pub fn cast<U: Scalar>(&self) -> ChunkModel<U> {
        let conv = |v: &[T]| -> Vec<U> { v.iter().map(|x| cast(x.to_f64().expect("finite"))).collect() };
        ChunkModel {
            chunk: self.chunk,
            dims: self.dims,
            init_seed: self.init_seed,
            w1: conv(&self.w1),
            b1: conv(&self.b1),
            w2: conv(&self.w2),
            b2: conv(&self.b2),
        }
    }

    fn check_input(&self, x: &HashedFeatures) -> Result<()> {
        if x.dim != self.dims.input {
            return Err(SolarError::DimensionMismatch {
                expected: self.dims.input,
                actual: x.dim,
            });
        }
        Ok(())
    }

    /// Output probabilities `sigmoid(W2 relu(W1 x + b1) + b2)`.
    pub fn forward(&self, x: &HashedFeatures) -> Result<Vec<T>> {
        let mut act = Activations::default();
        self.forward_into(x, &mut act)?;
        Ok(act.probs)
    }

    pub fn forward_into(&self, x: &HashedFeatures, act: &mut Activations<T>) -> Result<()> {
        self.check_input(x)?;
        let h = self.dims.hidden;
        act.pre_hidden.clear();
        act.pre_hidden.extend_from_slice(&self.b1);
        for (j, v) in x.iter() {
            let v: T = cast(f64::from(v));
            let col = &self.w1[j * h..(j + 1) * h];
            for (z, &w) in act.pre_hidden.iter_mut().zip(col) {
                *z += w * v;
            }
        }
        act.hidden.clear();
        act.hidden
            .extend(act.pre_hidden.iter().map(|&z| if z > T::zero() { z } else { T::zero() }));

        act.probs.clear();
        act.probs.extend(self.b2.iter().enumerate().map(|(o, &bias)| {
            let row = &self.w2[o * h..(o + 1) * h];
            let z = row
                .iter()
                .zip(&act.hidden)
                .fold(bias, |acc, (&w, &hv)| acc + w * hv);
            sigmoid(z)
        }));
        Ok(())
    }

    /// Runs forward and adds this example's loss gradient into `grads`.
    ///
    /// Returns the example's loss. The gradient is that of the unclamped
    /// loss; ReLU's subgradient at zero is taken as zero.
    pub fn accumulate_gradients(
        &self,
        x: &HashedFeatures,
        target: &TargetVector,
        act: &mut Activations<T>,
        grads: &mut Gradients<T>,
    ) -> Result<f64> {
        self.forward_into(x, act)?;
        let (h, b) = (self.dims.hidden, self.dims.output);
        let loss = bce_loss(&act.probs, target);

        let inv_b: T = cast(1.0 / b as f64);
        act.delta_out.clear();
        act.delta_out.extend(act.probs.iter().map(|&p| p * inv_b));
        for &hot in &target.hot_buckets {
            act.delta_out[hot as usize] -= inv_b;
        }

        act.delta_hidden.clear();
        act.delta_hidden.resize(h, T::zero());
        for o in 0..b {
            let d = act.delta_out[o];
            grads.b2[o] += d;
            let row = &self.w2[o * h..(o + 1) * h];
            let grow = &mut grads.w2[o * h..(o + 1) * h];
            for k in 0..h {
                grow[k] += d * act.hidden[k];
                act.delta_hidden[k] += d * row[k];
            }
        }
        for k in 0..h {
            if act.pre_hidden[k] <= T::zero() {
                act.delta_hidden[k] = T::zero();
            }
            grads.b1[k] += act.delta_hidden[k];
        }
        for (j, v) in x.iter() {
            let v: T = cast(f64::from(v));
            let gcol = &mut grads.w1[j * h..(j + 1) * h];
            for (g, &d) in gcol.iter_mut().zip(&act.delta_hidden) {
                *g += d * v;
            }
        }
        Ok(loss)
    }

    /// Loss and exact gradients for a single example.
    pub fn backward(&self, x: &HashedFeatures, target: &TargetVector) -> Result<(f64, Gradients<T>)> {
        let mut grads = Gradients::zeros(self.dims);
        let mut act = Activations::default();
        let loss = self.accumulate_gradients(x, target, &mut act, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, x: &HashedFeatures, target: &TargetVector) -> Result<f64> {
        Ok(bce_loss(&self.forward(x)?, target))
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy over the `B` outputs.
pub fn bce_loss<T: Scalar>(probs: &[T], target: &TargetVector) -> f64 {
    let b = probs.len();
    let mut total = 0.0;
    for (o, p) in probs.iter().enumerate() {
        let p = p.to_f64().expect("finite").clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        total -= if target.is_hot(o as u32) { p.ln() } else { (1.0 - p).ln() };
    }
    total / b as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub first: Gradients<T>,
    pub second: Gradients<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dims: ModelDims) -> Self {
        Self {
            step: 0,
            first: Gradients::zeros(dims),
            second: Gradients::zeros(dims),
        }
    }
}

/// One bias-corrected Adam step. Rejects non-finite gradients before touching
/// any parameter.
pub fn apply_update<T: Scalar>(
    model: &mut ChunkModel<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    hyper: &AdamConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(SolarError::NonFiniteGradient { chunk: model.chunk });
    }
    state.step += 1;
    let t = state.step as i32;
    let (beta1, beta2): (T, T) = (cast(hyper.beta1), cast(hyper.beta2));
    let (one_m_b1, one_m_b2): (T, T) = (cast(1.0 - hyper.beta1), cast(1.0 - hyper.beta2));
    let corr1: T = cast(1.0 - hyper.beta1.powi(t));
    let corr2: T = cast(1.0 - hyper.beta2.powi(t));
    let lr: T = cast(hyper.lr);
    let eps: T = cast(hyper.eps);

    let params = model.tensors_mut();
    let firsts = state.first.tensors_mut();
    let seconds = state.second.tensors_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(firsts).zip(seconds) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + one_m_b1 * gi;
            v[i] = beta2 * v[i] + one_m_b2 * gi * gi;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose analytic gradient is exactly zero.
    pub skipped_zero: usize,
}

/// Compares [`ChunkModel::backward`] against central finite differences on
/// 256 sampled coordinates.
pub fn grad_check(model: &ChunkModel<f64>, x: &HashedFeatures, target: &TargetVector, step: f64) -> Result<GradCheck> {
    grad_check_with(model, x, target, step, 256, 0x9d)
}

pub fn grad_check_with(
    model: &ChunkModel<f64>,
    x: &HashedFeatures,
    target: &TargetVector,
    step: f64,
    num_coords: usize,
    sample_seed: u64,
) -> Result<GradCheck> {
    if step.is_nan() || step <= 0.0 {
        return Err(SolarError::config("finite-difference step must be positive"));
    }
    let (_, grads) = model.backward(x, target)?;
    let total = model.num_params();
    let coords: Vec<usize> = if num_coords >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        rand::seq::index::sample(&mut rng, total, num_coords).into_vec()
    };

    let mut probe = model.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_zero: 0,
    };
    for flat in coords {
        let analytic = grads.get(flat);
        if analytic == 0.0 {
            report.skipped_zero += 1;
            continue;
        }
        let orig = *probe.param_mut(flat);
        *probe.param_mut(flat) = orig + step;
        let up = probe.loss(x, target)?;
        *probe.param_mut(flat) = orig - step;
        let down = probe.loss(x, target)?;
        *probe.param_mut(flat) = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Runs [`grad_check`] on `instances` random models with dense positive
/// inputs, random biases and one to three hot buckets; returns the worst case.
pub fn grad_check_random(dims: ModelDims, instances: usize, seed: u64, step: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_zero: 0,
    };
    for i in 0..instances {
        let mut model = ChunkModel::<f64>::init(0, dims, seed.wrapping_add(i as u64))?;
        for b in model.b1.iter_mut().chain(model.b2.iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = HashedFeatures {
            dim: dims.input,
            indices: (0..dims.input as u32).collect(),
            values: (0..dims.input).map(|_| rng.random_range(0.1f32..2.0)).collect(),
        };
        let hot: Vec<u32> = (0..rng.random_range(1..4))
            .map(|_| rng.random_range(0..dims.output as u32))
            .collect();
        let r = grad_check(&model, &x, &TargetVector::new(0, hot), step)?;
        worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
        worst.checked += r.checked;
        worst.skipped_zero += r.skipped_zero;
    }
    Ok(worst)
}

impl ChunkModel<f32> {
    /// Serializes to the blob format: header, row-major little-endian f32
    /// `W1, b1, W2, b2`, then a SHA-256 digest of everything before it.
    pub fn to_blob(&self) -> Vec<u8> {
        let ModelDims { input, hidden, output } = self.dims;
        let mut out = Vec::with_capacity(BLOB_HEADER_LEN + 4 * self.num_params() + DIGEST_LEN);
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        for v in [self.chunk, input, hidden, output] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.init_seed.to_le_bytes());
        for h in 0..hidden {
            for j in 0..input {
                out.extend_from_slice(&self.w1[j * hidden + h].to_le_bytes());
            }
        }
        for t in [&self.b1, &self.w2, &self.b2] {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn write_blob<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&self.to_blob())
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| SolarError::Format(format!("model blob: {msg}"));
        if bytes.len() < BLOB_HEADER_LEN + DIGEST_LEN {
            return Err(bad("truncated header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum failure".into()));
        }
        if &body[..4] != BLOB_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != BLOB_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let chunk = u32_at(8) as usize;
        let dims = ModelDims::new(u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
        let init_seed = u64::from_le_bytes(body[24..32].try_into().expect("8 bytes"));
        let expected = BLOB_HEADER_LEN + 4 * dims.num_params();
        if body.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", body.len())));
        }
        let mut floats = body[BLOB_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
        let w1_rows = take(dims.hidden * dims.input);
        let b1 = take(dims.hidden);
        let w2 = take(dims.output * dims.hidden);
        let b2 = take(dims.output);
        let mut w1 = vec![0f32; w1_rows.len()];
        for h in 0..dims.hidden {
            for j in 0..dims.input {
                w1[j * dims.hidden + h] = w1_rows[h * dims.input + j];
            }
        }
        let model = Self {
            chunk,
            dims,
            init_seed,
            w1,
            b1,
            w2,
            b2,
        };
        if !model.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(model)
    }
}

/// Hex SHA-256 of a byte string; used for blob references in the manifest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
