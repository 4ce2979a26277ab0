//! Exact gradients of the batch loss.
//!
//! One backward pass runs per batch item, immediately after that item's
//! traced forward, so a single [`Workspace`] serves the whole batch. All
//! weight gradients accumulate into one [`TensorSet`]; with the 1/B factor
//! folded into each item's loss derivative, the result is the gradient of
//! the batch-mean loss.

use super::forward::{clip_range, dot, forward_with, Workspace};
use super::{ArchConfig, QNetError, QNetworkParams, TensorSet, Transition};

/// Huber penalty with unit transition point: quadratic inside |e| <= 1,
/// linear outside, continuously differentiable at the seam.
pub fn huber(e: f64) -> f64 {
    let a = e.abs();
    if a <= 1.0 {
        0.5 * e * e
    } else {
        a - 0.5
    }
}

/// Mean Huber loss of the batch against `targets`, plus its exact gradient
/// with respect to every network parameter.
pub fn loss_and_gradients(
    params: &QNetworkParams,
    batch: &[&Transition],
    targets: &[f64],
    ws: &mut Workspace,
) -> Result<(f64, TensorSet), QNetError> {
    if batch.is_empty() {
        return Err(QNetError::ShapeMismatch("empty batch".into()));
    }
    if batch.len() != targets.len() {
        return Err(QNetError::ShapeMismatch(format!(
            "{} transitions but {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut grads = TensorSet::zeros(&params.arch);
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let q = forward_with(params, &t.action_patches, &t.x, ws)?;
        let e = q - y;
        loss += huber(e) * inv_b;
        let dq = e.clamp(-1.0, 1.0) * inv_b;
        backward_item(params, t.x.active(), dq, ws, &mut grads);
    }
    Ok((loss, grads))
}

/// Accumulate d(loss)/d(params) for the single action already traced in
/// `ws`, given dq = d(loss)/d(Q).
fn backward_item(
    params: &QNetworkParams,
    active: Option<usize>,
    dq: f64,
    ws: &mut Workspace,
    grads: &mut TensorSet,
) {
    if dq == 0.0 {
        return;
    }
    let arch = &params.arch;
    let t = &params.tensors;

    // Final layer: q = fc2_b + sum_h fc2_w[h] * relu(fc1_pre[h]).
    grads.fc2_b[0] += dq;
    for h in 0..arch.hidden {
        let pre = ws.fc1_pre[h];
        if pre > 0.0 {
            grads.fc2_w[h] += dq * pre;
            ws.d_hidden[h] = dq * t.fc2_w[h];
        } else {
            ws.d_hidden[h] = 0.0;
        }
    }

    // First fully connected layer. Biases always receive gradient; the
    // weight block (and everything below it) only when the progress vector
    // has an active entry — the absorbing vector zeroes the features term.
    for h in 0..arch.hidden {
        grads.fc1_b[h] += ws.d_hidden[h];
    }
    let Some(active) = active else {
        return;
    };

    let d = arch.flat_features();
    let base = active * d;
    ws.d_features.fill(0.0);
    for h in 0..arch.hidden {
        let c = ws.d_hidden[h];
        if c == 0.0 {
            continue;
        }
        let row = &t.fc1_w[h * arch.outer_len() + base..][..d];
        let g_row = &mut grads.fc1_w[h * arch.outer_len() + base..][..d];
        for j in 0..d {
            g_row[j] += c * ws.features[j];
            ws.d_features[j] += c * row[j];
        }
    }

    // Conv stage, patch by patch; all branches share the same kernels, so
    // their gradients accumulate into the same tensors.
    let side = ArchConfig::SIDE;
    let p1 = ArchConfig::POOL1_SIDE;
    let (c1, c2) = (arch.conv1_channels, arch.conv2_channels);
    let in_len = ArchConfig::INPUT_CHANNELS * side * side;
    let c1_len = c1 * side * side;
    let pool1_len = c1 * p1 * p1;
    let c2_len = c2 * p1 * p1;
    let fpp = arch.feat_per_patch();

    for p in 0..arch.n_patches {
        // Route pooled-feature gradients back to the winning conv2 cells,
        // gated by the ReLU (non-positive winners contributed a flat 0).
        ws.d_conv2_pre.fill(0.0);
        let conv2_pre = &ws.conv2_pre[p * c2_len..][..c2_len];
        for k in 0..fpp {
            let g = ws.d_features[p * fpp + k];
            if g == 0.0 {
                continue;
            }
            let src = ws.pool2_arg[p * fpp + k] as usize;
            if conv2_pre[src] > 0.0 {
                ws.d_conv2_pre[src] += g;
            }
        }

        conv3x3_backward(
            &ws.d_conv2_pre,
            &ws.pool1[p * pool1_len..][..pool1_len],
            &t.conv2_w,
            c1,
            p1,
            c2,
            &mut grads.conv2_w,
            &mut grads.conv2_b,
            Some(&mut ws.d_pool1),
        );

        ws.d_conv1_pre.fill(0.0);
        let conv1_pre = &ws.conv1_pre[p * c1_len..][..c1_len];
        for k in 0..pool1_len {
            let g = ws.d_pool1[k];
            if g == 0.0 {
                continue;
            }
            let src = ws.pool1_arg[p * pool1_len + k] as usize;
            if conv1_pre[src] > 0.0 {
                ws.d_conv1_pre[src] += g;
            }
        }

        conv3x3_backward(
            &ws.d_conv1_pre,
            &ws.inputs[p * in_len..][..in_len],
            &t.conv1_w,
            ArchConfig::INPUT_CHANNELS,
            side,
            c1,
            &mut grads.conv1_w,
            &mut grads.conv1_b,
            None,
        );
    }
}

/// Backward of the same-padding 3x3 convolution: accumulates the kernel and
/// bias gradients and, when requested, overwrites `d_in` with the gradient
/// at the layer input.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    d_out: &[f64],
    inp: &[f64],
    w: &[f64],
    c_in: usize,
    side: usize,
    c_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut d_in: Option<&mut [f64]>,
) {
    let plane = side * side;
    debug_assert_eq!(d_out.len(), c_out * plane);
    debug_assert_eq!(inp.len(), c_in * plane);
    if let Some(d) = d_in.as_deref_mut() {
        debug_assert_eq!(d.len(), c_in * plane);
        d.fill(0.0);
    }
    for oc in 0..c_out {
        let dout_plane = &d_out[oc * plane..][..plane];
        db[oc] += dout_plane.iter().sum::<f64>();
        for ic in 0..c_in {
            let in_plane = &inp[ic * plane..][..plane];
            let dw_kernel = &mut dw[(oc * c_in + ic) * 9..][..9];
            for ky in 0..3usize {
                let (y_lo, y_hi) = clip_range(ky, side);
                for kx in 0..3usize {
                    let (x_lo, x_hi) = clip_range(kx, side);
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let iy = y + ky - 1;
                        let src = &in_plane[iy * side + (x_lo + kx - 1)..][..x_hi - x_lo];
                        let dst = &dout_plane[y * side + x_lo..][..x_hi - x_lo];
                        acc += dot(dst, src);
                    }
                    dw_kernel[ky * 3 + kx] += acc;
                }
            }
            if let Some(d_in_buf) = d_in.as_deref_mut() {
                let din_plane = &mut d_in_buf[ic * plane..][..plane];
                let kernel = &w[(oc * c_in + ic) * 9..][..9];
                for ky in 0..3usize {
                    let (y_lo, y_hi) = clip_range(ky, side);
                    for kx in 0..3usize {
                        let coeff = kernel[ky * 3 + kx];
                        let (x_lo, x_hi) = clip_range(kx, side);
                        for y in y_lo..y_hi {
                            let iy = y + ky - 1;
                            let dst = &mut din_plane[iy * side + (x_lo + kx - 1)..][..x_hi - x_lo];
                            let src = &dout_plane[y * side + x_lo..][..x_hi - x_lo];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += coeff * sv;
                            }
                        }
                    }
                }
            }
        }
    }
}
