//! Traced forward evaluation.
//!
//! The [`Workspace`] keeps every intermediate activation (and the argmax
//! routing of both max-pools) for exactly one evaluated action, which is
//! what the backward pass needs. Reusing one workspace across evaluations
//! keeps the training loop free of per-call allocation.

use std::borrow::Borrow;

use super::{ArchConfig, ProgressVector, QNetError, QNetworkParams};
use crate::patch::Patch;

/// Scratch and trace buffers for one forward/backward round, sized for a
/// fixed architecture.
#[derive(Debug, Clone)]
pub struct Workspace {
    arch: ArchConfig,
    /// Channel-first f64 copy of each input patch, 3·16·16 per patch.
    pub(crate) inputs: Vec<f64>,
    /// Pre-activation of the first conv, conv1_channels·16·16 per patch.
    pub(crate) conv1_pre: Vec<f64>,
    /// First pooled map (ReLU applied), conv1_channels·8·8 per patch.
    pub(crate) pool1: Vec<f64>,
    /// Winning pre-activation index per pooled cell (within the patch's
    /// conv1_pre block); ties break toward scan order.
    pub(crate) pool1_arg: Vec<u32>,
    /// Pre-activation of the second conv, conv2_channels·8·8 per patch.
    pub(crate) conv2_pre: Vec<f64>,
    /// Winning index per second-pool cell (within the patch's conv2_pre
    /// block).
    pub(crate) pool2_arg: Vec<u32>,
    /// Concatenated per-patch features (the second pooled map), length
    /// `flat_features`.
    pub(crate) features: Vec<f64>,
    /// Pre-activation of the first fully connected layer.
    pub(crate) fc1_pre: Vec<f64>,
    // Backward scratch, allocated here so gradient passes are allocation
    // free as well.
    pub(crate) d_features: Vec<f64>,
    pub(crate) d_hidden: Vec<f64>,
    pub(crate) d_conv2_pre: Vec<f64>,
    pub(crate) d_pool1: Vec<f64>,
    pub(crate) d_conv1_pre: Vec<f64>,
}

impl Workspace {
    pub fn new(arch: &ArchConfig) -> Self {
        let side = ArchConfig::SIDE;
        let p1 = ArchConfig::POOL1_SIDE;
        let np = arch.n_patches;
        let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);
        Workspace {
            arch: *arch,
            inputs: vec![0.0; np * ArchConfig::INPUT_CHANNELS * side * side],
            conv1_pre: vec![0.0; np * c1 * side * side],
            pool1: vec![0.0; np * c1 * p1 * p1],
            pool1_arg: vec![0; np * c1 * p1 * p1],
            conv2_pre: vec![0.0; np * c2 * p1 * p1],
            pool2_arg: vec![0; np * arch.feat_per_patch()],
            features: vec![0.0; arch.flat_features()],
            fc1_pre: vec![0.0; arch.hidden],
            d_features: vec![0.0; arch.flat_features()],
            d_hidden: vec![0.0; arch.hidden],
            d_conv2_pre: vec![0.0; c2 * p1 * p1],
            d_pool1: vec![0.0; c1 * p1 * p1],
            d_conv1_pre: vec![0.0; c1 * side * side],
        }
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }
}

/// 3x3 same-padding convolution over a square multi-channel map.
/// Layouts: `inp[ic][y][x]`, `w[oc][ic][ky][kx]`, `out[oc][y][x]`.
pub(crate) fn conv3x3_same(
    inp: &[f64],
    c_in: usize,
    side: usize,
    w: &[f64],
    b: &[f64],
    c_out: usize,
    out: &mut [f64],
) {
    let plane = side * side;
    debug_assert_eq!(inp.len(), c_in * plane);
    debug_assert_eq!(out.len(), c_out * plane);
    debug_assert_eq!(w.len(), c_out * c_in * 9);
    for oc in 0..c_out {
        let out_plane = &mut out[oc * plane..][..plane];
        out_plane.fill(b[oc]);
        for ic in 0..c_in {
            let in_plane = &inp[ic * plane..][..plane];
            let kernel = &w[(oc * c_in + ic) * 9..][..9];
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let coeff = kernel[ky * 3 + kx];
                    let (x_lo, x_hi) = clip_range(kx, side);
                    let (y_lo, y_hi) = clip_range(ky, side);
                    for y in y_lo..y_hi {
                        let iy = y + ky - 1;
                        let src = &in_plane[iy * side + (x_lo + kx - 1)..][..x_hi - x_lo];
                        let dst = &mut out_plane[y * side + x_lo..][..x_hi - x_lo];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += coeff * s;
                        }
                    }
                }
            }
        }
    }
}

/// Valid output index range along one axis for kernel offset `k` in {0,1,2}
/// with padding 1: output i maps to input i+k-1, which must lie in
/// [0, side).
#[inline]
pub(crate) fn clip_range(k: usize, side: usize) -> (usize, usize) {
    let lo = 1usize.saturating_sub(k);
    let hi = (side + 1 - k).min(side);
    (lo, hi)
}

/// Fused ReLU + 2x2 max-pool. `arg` records, per pooled cell, the flat
/// index of the winning cell inside `pre` (the pre-activation block); a
/// cell whose winner is non-positive pools to zero but the index is still
/// recorded so the backward pass can route through it (the gate re-checks
/// the sign).
pub(crate) fn relu_pool2(
    pre: &[f64],
    channels: usize,
    side: usize,
    out: &mut [f64],
    arg: &mut [u32],
) {
    let half = side / 2;
    let plane = side * side;
    debug_assert_eq!(pre.len(), channels * plane);
    debug_assert_eq!(out.len(), channels * half * half);
    for c in 0..channels {
        let src = &pre[c * plane..][..plane];
        for py in 0..half {
            for px in 0..half {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (2 * py + dy) * side + 2 * px + dx;
                        if src[i] > best {
                            best = src[i];
                            best_i = i;
                        }
                    }
                }
                let o = c * half * half + py * half + px;
                out[o] = best.max(0.0);
                arg[o] = (c * plane + best_i) as u32;
            }
        }
    }
}

/// Dot product with a small amount of manual unrolling; the feature rows
/// here are hundreds to thousands of elements long.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0;
    for (xa, xb) in ca.remainder().iter().zip(cb.remainder()) {
        tail += xa * xb;
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Evaluate Q for one action, reusing `ws` for all intermediates.
pub fn forward_with<P: Borrow<Patch>>(
    params: &QNetworkParams,
    patches: &[P],
    x: &ProgressVector,
    ws: &mut Workspace,
) -> Result<f64, QNetError> {
    let arch = &params.arch;
    debug_assert_eq!(
        ws.arch(),
        arch,
        "workspace built for a different architecture"
    );
    if patches.len() != arch.n_patches {
        return Err(QNetError::ShapeMismatch(format!(
            "expected {} patches, got {}",
            arch.n_patches,
            patches.len()
        )));
    }
    if x.len() != arch.n_targets {
        return Err(QNetError::ShapeMismatch(format!(
            "progress vector length {} does not match {} targets",
            x.len(),
            arch.n_targets
        )));
    }

    let t = &params.tensors;
    let side = ArchConfig::SIDE;
    let p1 = ArchConfig::POOL1_SIDE;
    let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);
    let in_len = ArchConfig::INPUT_CHANNELS * side * side;
    let c1_len = c1 * side * side;
    let pool1_len = c1 * p1 * p1;
    let c2_len = c2 * p1 * p1;
    let fpp = arch.feat_per_patch();

    for (p, patch) in patches.iter().enumerate() {
        let data = patch.borrow().as_slice();
        // Transpose the channel-last patch into channel-first f64 planes.
        let inp = &mut ws.inputs[p * in_len..][..in_len];
        let plane = side * side;
        for yx in 0..plane {
            let px = &data[yx * 3..][..3];
            inp[yx] = f64::from(px[0]);
            inp[plane + yx] = f64::from(px[1]);
            inp[2 * plane + yx] = f64::from(px[2]);
        }
        conv3x3_same(
            inp,
            ArchConfig::INPUT_CHANNELS,
            side,
            &t.conv1_w,
            &t.conv1_b,
            c1,
            &mut ws.conv1_pre[p * c1_len..][..c1_len],
        );
        relu_pool2(
            &ws.conv1_pre[p * c1_len..][..c1_len],
            c1,
            side,
            &mut ws.pool1[p * pool1_len..][..pool1_len],
            &mut ws.pool1_arg[p * pool1_len..][..pool1_len],
        );
        conv3x3_same(
            &ws.pool1[p * pool1_len..][..pool1_len],
            c1,
            p1,
            &t.conv2_w,
            &t.conv2_b,
            c2,
            &mut ws.conv2_pre[p * c2_len..][..c2_len],
        );
        relu_pool2(
            &ws.conv2_pre[p * c2_len..][..c2_len],
            c2,
            p1,
            &mut ws.features[p * fpp..][..fpp],
            &mut ws.pool2_arg[p * fpp..][..fpp],
        );
    }

    // Outer product with a one-hot vector just selects one column block of
    // fc1; the absorbing all-zero vector leaves only the biases.
    let d = arch.flat_features();
    match x.active() {
        Some(active) => {
            let base = active * d;
            for (h, pre) in ws.fc1_pre.iter_mut().enumerate() {
                let row = &t.fc1_w[h * arch.outer_len() + base..][..d];
                *pre = t.fc1_b[h] + dot(row, &ws.features);
            }
        }
        None => ws.fc1_pre.copy_from_slice(&t.fc1_b),
    }

    let mut q = t.fc2_b[0];
    for (h, &pre) in ws.fc1_pre.iter().enumerate() {
        if pre > 0.0 {
            q += t.fc2_w[h] * pre;
        }
    }
    Ok(q)
}

/// Convenience wrapper that allocates a fresh workspace.
pub fn forward<P: Borrow<Patch>>(
    params: &QNetworkParams,
    patches: &[P],
    x: &ProgressVector,
) -> Result<f64, QNetError> {
    let mut ws = Workspace::new(&params.arch);
    forward_with(params, patches, x, &mut ws)
}
