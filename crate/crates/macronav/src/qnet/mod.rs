//! A hand-rolled convolutional Q-network with a dynamic action space.
//!
//! The network scores one action per evaluation: the action's `n_patches`
//! image patches each pass through a weight-shared two-stage conv pipeline,
//! the per-patch features are concatenated, the outer product with the
//! one-hot progress vector selects a block of the first fully connected
//! layer, and a second fully connected layer reduces to a single scalar Q.
//! Because the action set is "whatever object nodes the map currently has",
//! growing the map never changes the network shape — more actions just mean
//! more evaluations.
//!
//! Everything is 64-bit: weights, activations, gradients. The backward pass
//! is exact for the implemented graph and is checked against central finite
//! differences coordinate by coordinate in the tests.

mod backward;
mod forward;

pub use backward::{huber, loss_and_gradients};
pub use forward::{forward, forward_with, Workspace};

use std::sync::Arc;

use rand::Rng;

use crate::patch::{Patch, PATCH_SIDE};
use crate::rng::{rng_from, DetRng};

#[derive(Debug, thiserror::Error)]
pub enum QNetError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

/// Network shape. Side lengths are fixed by the patch format: 16x16 input,
/// two 2x2 max-pools, so per-patch features are 4·4·conv2_channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Patches sampled per action (branches of the shared conv stage).
    pub n_patches: usize,
    /// Progress vector length (maximum targets per episode).
    pub n_targets: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Width of the first fully connected layer.
    pub hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_patches: 10,
            n_targets: 3,
            conv1_channels: 8,
            conv2_channels: 16,
            hidden: 128,
        }
    }
}

impl ArchConfig {
    pub const INPUT_CHANNELS: usize = 3;
    pub const SIDE: usize = PATCH_SIDE; // 16
    pub const POOL1_SIDE: usize = PATCH_SIDE / 2; // 8
    pub const POOL2_SIDE: usize = PATCH_SIDE / 4; // 4

    pub fn validate(&self) -> Result<(), QNetError> {
        let dims = [
            ("n_patches", self.n_patches),
            ("n_targets", self.n_targets),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("hidden", self.hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(QNetError::InvalidArch(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Features per patch after the conv stage: 4·4·conv2_channels.
    pub fn feat_per_patch(&self) -> usize {
        Self::POOL2_SIDE * Self::POOL2_SIDE * self.conv2_channels
    }

    /// Concatenated feature length across all patch branches.
    pub fn flat_features(&self) -> usize {
        self.n_patches * self.feat_per_patch()
    }

    /// Input width of the first fully connected layer: the flattened outer
    /// product of features and progress vector.
    pub fn outer_len(&self) -> usize {
        self.flat_features() * self.n_targets
    }

    pub fn conv1_w_len(&self) -> usize {
        self.conv1_channels * Self::INPUT_CHANNELS * 9
    }

    pub fn conv2_w_len(&self) -> usize {
        self.conv2_channels * self.conv1_channels * 9
    }

    pub fn fc1_w_len(&self) -> usize {
        self.hidden * self.outer_len()
    }

    pub fn param_count(&self) -> usize {
        self.conv1_w_len()
            + self.conv1_channels
            + self.conv2_w_len()
            + self.conv2_channels
            + self.fc1_w_len()
            + self.hidden
            + self.hidden
            + 1
    }
}

/// The weight tensors, in checkpoint order. Conv weights are laid out
/// `[out_ch][in_ch][ky][kx]`, fully connected weights `[row][col]` row-major.
/// The same shape doubles as gradient storage and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl TensorSet {
    pub fn zeros(arch: &ArchConfig) -> Self {
        TensorSet {
            conv1_w: vec![0.0; arch.conv1_w_len()],
            conv1_b: vec![0.0; arch.conv1_channels],
            conv2_w: vec![0.0; arch.conv2_w_len()],
            conv2_b: vec![0.0; arch.conv2_channels],
            fc1_w: vec![0.0; arch.fc1_w_len()],
            fc1_b: vec![0.0; arch.hidden],
            fc2_w: vec![0.0; arch.hidden],
            fc2_b: vec![0.0; 1],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    /// Total scalar count across all tensors.
    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        false // a valid arch always has at least the fc2 bias
    }

    /// Read by flat index over the checkpoint order.
    pub fn get(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Write by flat index over the checkpoint order.
    pub fn set(&mut self, mut i: usize, v: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Network parameters: the architecture plus its weight tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    pub arch: ArchConfig,
    pub tensors: TensorSet,
}

impl QNetworkParams {
    /// All-zero weights; forward output is exactly 0 for any input.
    pub fn zeros(arch: ArchConfig) -> Result<Self, QNetError> {
        arch.validate()?;
        Ok(QNetworkParams {
            arch,
            tensors: TensorSet::zeros(&arch),
        })
    }

    /// Snapshot for TD targets: a deep copy unaffected by later updates.
    pub fn sync_target(&self) -> Self {
        self.clone()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.all_finite()
    }
}

/// Fan-in-scaled uniform initialization: weights ~ U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)), biases zero. Deterministic in the seed.
pub fn init_params(seed: u64, arch: ArchConfig) -> Result<QNetworkParams, QNetError> {
    arch.validate()?;
    let mut rng = rng_from(seed, "qnet-init", 0);
    let mut p = QNetworkParams::zeros(arch)?;
    let fill = |t: &mut [f64], fan_in: usize, rng: &mut DetRng| {
        let a = 1.0 / (fan_in as f64).sqrt();
        for v in t {
            *v = rng.gen_range(-a..a);
        }
    };
    fill(
        &mut p.tensors.conv1_w,
        ArchConfig::INPUT_CHANNELS * 9,
        &mut rng,
    );
    fill(&mut p.tensors.conv2_w, arch.conv1_channels * 9, &mut rng);
    fill(&mut p.tensors.fc1_w, arch.outer_len(), &mut rng);
    fill(&mut p.tensors.fc2_w, arch.hidden, &mut rng);
    Ok(p)
}

// ---------------------------------------------------------------------------
// Progress vector
// ---------------------------------------------------------------------------

/// One-hot indicator of the current target in the fixed sequence; all-zero
/// only in the absorbing post-success state. The invariant is enforced by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgressVector {
    len: usize,
    active: Option<usize>,
}

impl ProgressVector {
    pub fn one_hot(active: usize, len: usize) -> Self {
        assert!(active < len, "active target {active} out of range {len}");
        ProgressVector {
            len,
            active: Some(active),
        }
    }

    /// The all-zero vector of the completed episode.
    pub fn absorbing(len: usize) -> Self {
        assert!(len > 0, "progress vector cannot be empty");
        ProgressVector { len, active: None }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the 1-entry, or `None` in the absorbing state.
    pub fn active(&self) -> Option<usize> {
        self.active
    }

    pub fn entries(&self) -> Vec<u8> {
        (0..self.len)
            .map(|i| u8::from(Some(i) == self.active))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Transitions and replay
// ---------------------------------------------------------------------------

/// One macro decision's experience. Patch data is behind `Arc`s shared with
/// the map; the map only ever swaps whole patches in and out of nodes, so
/// the pixel data a transition references can never change under it.
#[derive(Debug, Clone)]
pub struct Transition {
    /// The chosen action's sampled patches (`n_patches` of them).
    pub action_patches: Vec<Arc<Patch>>,
    pub x: ProgressVector,
    /// Reward accumulated over the executed macro.
    pub reward: f64,
    /// Sampled patches for each action available at the *next* decision
    /// point, snapshotted at that time (capped; empty when none existed).
    pub next_candidates: Vec<Vec<Arc<Patch>>>,
    pub x_next: ProgressVector,
    pub done: bool,
}

/// Fixed-capacity ring of transitions with uniform batch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            write: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// Uniform sample of `min(n, len)` distinct transitions.
    pub fn sample(&self, n: usize, rng: &mut DetRng) -> Vec<&Transition> {
        let take = n.min(self.items.len());
        if take == 0 {
            return Vec::new();
        }
        rand::seq::index::sample(rng, self.items.len(), take)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

// ---------------------------------------------------------------------------
// TD targets
// ---------------------------------------------------------------------------

/// Q-learning targets under an arbitrary Q-function: y = r for terminal
/// transitions or when no next action existed, otherwise
/// y = r + gamma · max over next candidates.
pub fn td_targets_with<F>(
    batch: &[&Transition],
    gamma: f64,
    mut q_fn: F,
) -> Result<Vec<f64>, QNetError>
where
    F: FnMut(&[Arc<Patch>], &ProgressVector) -> Result<f64, QNetError>,
{
    batch
        .iter()
        .map(|t| {
            if t.done || t.next_candidates.is_empty() {
                return Ok(t.reward);
            }
            let mut best = f64::NEG_INFINITY;
            for cand in &t.next_candidates {
                best = best.max(q_fn(cand, &t.x_next)?);
            }
            Ok(t.reward + gamma * best)
        })
        .collect()
}

/// TD targets under the frozen target network.
pub fn td_targets(
    batch: &[&Transition],
    target: &QNetworkParams,
    gamma: f64,
    ws: &mut Workspace,
) -> Result<Vec<f64>, QNetError> {
    td_targets_with(batch, gamma, |patches, x| {
        forward_with(target, patches, x, ws)
    })
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment optimizer over the full tensor set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: TensorSet,
    v: TensorSet,
    t: u64,
}

impl Adam {
    pub fn new(arch: &ArchConfig) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: TensorSet::zeros(arch),
            v: TensorSet::zeros(arch),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut QNetworkParams, grads: &TensorSet, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ps = params.tensors.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for k in 0..8 {
            let (p, g, m, v) = (&mut *ps[k], &*gs[k], &mut *ms[k], &mut *vs[k]);
            debug_assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"QNET";
const CHECKPOINT_VERSION: u8 = 1;

/// Serialize parameters: `QNET`, version byte, five little-endian u32 arch
/// integers (n_patches, n_targets, conv1_channels, conv2_channels, hidden),
/// then every tensor in declaration order as little-endian f64.
pub fn save_params(params: &QNetworkParams) -> Vec<u8> {
    let a = &params.arch;
    let mut out = Vec::with_capacity(4 + 1 + 20 + params.tensors.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    for dim in [
        a.n_patches,
        a.n_targets,
        a.conv1_channels,
        a.conv2_channels,
        a.hidden,
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for t in params.tensors.tensors() {
        for &v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse a checkpoint produced by [`save_params`]; exact weight recovery.
pub fn load_params(bytes: &[u8]) -> Result<QNetworkParams, QNetError> {
    let fail = |msg: &str| QNetError::Checkpoint(msg.to_string());
    if bytes.len() < 25 {
        return Err(fail("too short for header"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("missing QNET magic"));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(fail("unsupported version"));
    }
    let mut dims = [0usize; 5];
    for (k, d) in dims.iter_mut().enumerate() {
        let off = 5 + 4 * k;
        *d = u32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as usize;
    }
    let arch = ArchConfig {
        n_patches: dims[0],
        n_targets: dims[1],
        conv1_channels: dims[2],
        conv2_channels: dims[3],
        hidden: dims[4],
    };
    arch.validate()
        .map_err(|e| fail(&format!("bad dimensions: {e}")))?;
    let mut params = QNetworkParams::zeros(arch)?;
    let body = &bytes[25..];
    if body.len() != params.tensors.len() * 8 {
        return Err(fail(&format!(
            "expected {} weight bytes, found {}",
            params.tensors.len() * 8,
            body.len()
        )));
    }
    let mut chunks = body.chunks_exact(8);
    for t in params.tensors.tensors_mut() {
        for v in t.iter_mut() {
            let c = chunks.next().expect("length checked");
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    if !params.all_finite() {
        return Err(fail("non-finite weights"));
    }
    Ok(params)
}
