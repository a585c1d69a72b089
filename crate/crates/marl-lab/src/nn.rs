//! Minimal feed-forward network engine in 64-bit floats.
//!
//! Fixed topology (affine layers, ReLU hidden activations, linear output)
//! with hand-written exact reverse-mode gradients, textbook Adam,
//! global-norm clipping, categorical policy heads, and a versioned binary
//! checkpoint format. Sized for the 64-wide MLPs this crate trains; no
//! graphs, no convolutions, no parallelism.

use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid mlp spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("forward cache does not match these parameters")]
    CacheMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Layer sizes of a multilayer perceptron, input first. Hidden layers use
/// ReLU, the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::InvalidSpec("need at least input and output sizes".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NnError::InvalidSpec("all layer sizes must be >= 1".into()));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// (fan_in, fan_out) of layer `l`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| {
                let (fan_in, fan_out) = self.layer_dims(l);
                fan_out * fan_in + fan_out
            })
            .sum()
    }

    /// Offset of layer `l`'s weights in the flat vector; biases follow the
    /// weights within each layer block.
    fn layer_offset(&self, l: usize) -> usize {
        (0..l)
            .map(|k| {
                let (fan_in, fan_out) = self.layer_dims(k);
                fan_out * fan_in + fan_out
            })
            .sum()
    }
}

/// Parameters of one MLP, stored as a single flat vector with a fixed
/// layer ordering (per layer: row-major weights, then biases). The flat
/// view and the per-layer views address the same storage, so round-trips
/// are lossless by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    spec: MlpSpec,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(spec: MlpSpec) -> Self {
        let n = spec.param_count();
        Self { spec, data: vec![0.0; n] }
    }

    pub fn from_flat(spec: MlpSpec, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != spec.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "flat parameter vector",
                expected: spec.param_count(),
                got: data.len(),
            });
        }
        Ok(Self { spec, data })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    /// Row-major weight matrix of layer `l` (fan_out rows, fan_in columns).
    pub fn weights(&self, l: usize) -> &[f64] {
        let (fan_in, fan_out) = self.spec.layer_dims(l);
        let off = self.spec.layer_offset(l);
        &self.data[off..off + fan_out * fan_in]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let (fan_in, fan_out) = self.spec.layer_dims(l);
        let off = self.spec.layer_offset(l) + fan_out * fan_in;
        &self.data[off..off + fan_out]
    }

    fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (fan_in, fan_out) = self.spec.layer_dims(l);
        let off = self.spec.layer_offset(l);
        &mut self.data[off..off + fan_out * fan_in]
    }
}

/// Weight initialization schemes. Biases are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Orthogonal with gain sqrt(2); the usual choice for ReLU hidden
    /// layers.
    OrthogonalSqrt2,
    /// Orthogonal with gain 0.01; near-zero outputs, which starts a policy
    /// head close to uniform.
    OrthogonalSmall,
    /// Uniform on +-sqrt(6 / (fan_in + fan_out)).
    XavierUniform,
}

impl InitScheme {
    fn gain(self) -> f64 {
        match self {
            InitScheme::OrthogonalSqrt2 => std::f64::consts::SQRT_2,
            InitScheme::OrthogonalSmall => 0.01,
            InitScheme::XavierUniform => 1.0,
        }
    }
}

/// Standard normal via Box-Muller, so the only dependency is a uniform
/// stream.
fn sample_standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen_range(0.0..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

fn init_layer(w: &mut [f64], fan_out: usize, fan_in: usize, scheme: InitScheme, rng: &mut impl Rng) {
    match scheme {
        InitScheme::XavierUniform => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.gen_range(-bound..=bound);
            }
        }
        InitScheme::OrthogonalSqrt2 | InitScheme::OrthogonalSmall => {
            for x in w.iter_mut() {
                *x = sample_standard_normal(rng);
            }
            // Orthonormalize along the smaller dimension with modified
            // Gram-Schmidt, then scale by the gain. For wide matrices the
            // rows end up orthonormal, for tall ones the columns.
            let gain = scheme.gain();
            if fan_out <= fan_in {
                gram_schmidt_rows(w, fan_out, fan_in, rng);
            } else {
                let mut t = transpose(w, fan_out, fan_in);
                gram_schmidt_rows(&mut t, fan_in, fan_out, rng);
                w.copy_from_slice(&transpose(&t, fan_in, fan_out));
            }
            for x in w.iter_mut() {
                *x *= gain;
            }
        }
    }
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

fn gram_schmidt_rows(m: &mut [f64], rows: usize, cols: usize, rng: &mut impl Rng) {
    for r in 0..rows {
        loop {
            for prev in 0..r {
                let dot: f64 = (0..cols).map(|c| m[r * cols + c] * m[prev * cols + c]).sum();
                for c in 0..cols {
                    m[r * cols + c] -= dot * m[prev * cols + c];
                }
            }
            let norm: f64 = (0..cols).map(|c| m[r * cols + c].powi(2)).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for c in 0..cols {
                    m[r * cols + c] /= norm;
                }
                break;
            }
            // Degenerate draw; resample this row.
            for c in 0..cols {
                m[r * cols + c] = sample_standard_normal(rng);
            }
        }
    }
}

/// Initialize every layer with the same scheme. Deterministic under a
/// seeded generator.
pub fn init_params(spec: &MlpSpec, scheme: InitScheme, rng: &mut impl Rng) -> ParamSet {
    init_params_mixed(spec, scheme, scheme, rng)
}

/// Initialize hidden layers and the output layer with different schemes
/// (e.g. sqrt(2)-gain hidden layers and a small-gain policy head).
pub fn init_params_mixed(
    spec: &MlpSpec,
    hidden: InitScheme,
    output: InitScheme,
    rng: &mut impl Rng,
) -> ParamSet {
    let mut params = ParamSet::zeros(spec.clone());
    let last = spec.n_layers() - 1;
    for l in 0..spec.n_layers() {
        let (fan_in, fan_out) = spec.layer_dims(l);
        let scheme = if l == last { output } else { hidden };
        init_layer(params.weights_mut(l), fan_out, fan_in, scheme, rng);
    }
    params
}

/// Activation record from a forward pass: the input of every layer and
/// the pre-activation of every layer. Enough for an exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

fn affine(params: &ParamSet, l: usize, input: &[f64], out: &mut Vec<f64>) {
    let (fan_in, fan_out) = params.spec.layer_dims(l);
    let w = params.weights(l);
    let b = params.biases(l);
    out.clear();
    out.reserve(fan_out);
    for r in 0..fan_out {
        let row = &w[r * fan_in..(r + 1) * fan_in];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(input.iter()) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

/// Forward pass returning the output and a cache for [`backward`].
pub fn forward(params: &ParamSet, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnError> {
    check_input(params, input)?;
    let n_layers = params.spec.n_layers();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut x = input.to_vec();
    for l in 0..n_layers {
        let mut z = Vec::new();
        affine(params, l, &x, &mut z);
        layer_inputs.push(x);
        if l + 1 < n_layers {
            x = z.iter().map(|&v| v.max(0.0)).collect();
        } else {
            x = z.clone();
        }
        pre_activations.push(z);
    }
    Ok((x, ForwardCache { layer_inputs, pre_activations }))
}

/// Forward pass without building a cache; for rollouts and evaluation.
pub fn evaluate(params: &ParamSet, input: &[f64]) -> Result<Vec<f64>, NnError> {
    check_input(params, input)?;
    let n_layers = params.spec.n_layers();
    let mut x = input.to_vec();
    let mut z = Vec::new();
    for l in 0..n_layers {
        affine(params, l, &x, &mut z);
        if l + 1 < n_layers {
            x.clear();
            x.extend(z.iter().map(|&v| v.max(0.0)));
        } else {
            std::mem::swap(&mut x, &mut z);
        }
    }
    Ok(x)
}

fn check_input(params: &ParamSet, input: &[f64]) -> Result<(), NnError> {
    if input.len() != params.spec.input_dim() {
        return Err(NnError::DimensionMismatch {
            what: "forward input",
            expected: params.spec.input_dim(),
            got: input.len(),
        });
    }
    Ok(())
}

/// Exact gradients of `<output, output_gradient>` with respect to the flat
/// parameters and the input, given a cache from a matching [`forward`].
pub fn backward(
    params: &ParamSet,
    cache: &ForwardCache,
    output_gradient: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let spec = &params.spec;
    let n_layers = spec.n_layers();
    if cache.layer_inputs.len() != n_layers
        || cache.pre_activations.len() != n_layers
        || (0..n_layers).any(|l| {
            let (fan_in, fan_out) = spec.layer_dims(l);
            cache.layer_inputs[l].len() != fan_in || cache.pre_activations[l].len() != fan_out
        })
    {
        return Err(NnError::CacheMismatch);
    }
    if output_gradient.len() != spec.output_dim() {
        return Err(NnError::DimensionMismatch {
            what: "output gradient",
            expected: spec.output_dim(),
            got: output_gradient.len(),
        });
    }

    let mut param_grads = vec![0.0; spec.param_count()];
    let mut delta = output_gradient.to_vec();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = spec.layer_dims(l);
        if l + 1 < n_layers {
            // ReLU mask from the stored pre-activation.
            for (d, &z) in delta.iter_mut().zip(cache.pre_activations[l].iter()) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let layer_input = &cache.layer_inputs[l];
        let w_off = spec.layer_offset(l);
        let b_off = w_off + fan_out * fan_in;
        for r in 0..fan_out {
            let d = delta[r];
            if d != 0.0 {
                let row = &mut param_grads[w_off + r * fan_in..w_off + (r + 1) * fan_in];
                for (g, &xi) in row.iter_mut().zip(layer_input.iter()) {
                    *g += d * xi;
                }
            }
            param_grads[b_off + r] += d;
        }
        // Propagate to the layer input: W^T delta.
        let w = params.weights(l);
        let mut prev = vec![0.0; fan_in];
        for r in 0..fan_out {
            let d = delta[r];
            if d != 0.0 {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                for (p, &wi) in prev.iter_mut().zip(row.iter()) {
                    *p += d * wi;
                }
            }
        }
        delta = prev;
    }
    Ok((param_grads, delta))
}

/// Adam optimizer moments for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Bias-corrected second moments; used by the meta-gradient shaper
    /// update to preview the optimizer's per-coordinate scaling.
    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// One textbook Adam step with bias correction. Non-finite gradients are
/// rejected before any state is touched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    if grads.len() != params.param_count() || state.first_moment.len() != grads.len() {
        return Err(NnError::DimensionMismatch {
            what: "adam gradients",
            expected: params.param_count(),
            got: grads.len(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(NnError::NonFinite("gradient passed to adam_step"));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..grads.len() {
        let g = grads[i];
        state.first_moment[i] = ADAM_BETA1 * state.first_moment[i] + (1.0 - ADAM_BETA1) * g;
        state.second_moment[i] = ADAM_BETA2 * state.second_moment[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        params.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

/// Scale `grads` so its L2 norm does not exceed `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Stable log-softmax (max-subtracted).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - max - log_sum).collect()
}

/// Sample from the categorical distribution over `logits`; returns the
/// action index and its log-probability. Consumes exactly one uniform
/// draw, so parallel rollout streams stay aligned.
pub fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> Result<(usize, f64), NnError> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(NnError::NonFinite("logits passed to sample_categorical"));
    }
    let probs = softmax(logits);
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut cum = 0.0;
    let mut action = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            action = i;
            break;
        }
    }
    Ok((action, log_softmax(logits)[action]))
}

/// Log-probability of a specific action under `logits`.
pub fn log_prob_of(logits: &[f64], action: usize) -> f64 {
    log_softmax(logits)[action]
}

/// Entropy of the categorical distribution, in nats.
pub fn entropy(logits: &[f64]) -> f64 {
    let log_probs = log_softmax(logits);
    -log_probs.iter().map(|&lp| lp.exp() * lp).sum::<f64>()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MLPC";
const CHECKPOINT_VERSION: u32 = 1;

/// Write a parameter checkpoint: magic, version, layer sizes, then the
/// flat vector as little-endian f64. Round-trips exactly.
pub fn save_checkpoint(path: &Path, params: &ParamSet) -> Result<(), NnError> {
    let mut buf = Vec::with_capacity(16 + params.param_count() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let sizes = params.spec.layer_sizes();
    buf.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(params.param_count() as u64).to_le_bytes());
    for &v in params.as_flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`], rejecting unknown
/// magic or versions.
pub fn load_checkpoint(path: &Path) -> Result<ParamSet, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8], NnError> {
        if cursor + n > bytes.len() {
            return Err(NnError::BadCheckpoint("truncated file".into()));
        }
        let s = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(NnError::BadCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let n_sizes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
    }
    let spec = MlpSpec::new(sizes)
        .map_err(|e| NnError::BadCheckpoint(format!("invalid layer sizes: {e}")))?;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    if count != spec.param_count() {
        return Err(NnError::BadCheckpoint("parameter count does not match spec".into()));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    if cursor != bytes.len() {
        return Err(NnError::BadCheckpoint("trailing bytes".into()));
    }
    ParamSet::from_flat(spec, data)
}
