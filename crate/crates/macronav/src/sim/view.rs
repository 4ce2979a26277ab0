//! Visibility, occlusion, and patch rendering.
//!
//! An object is detected when it is within range, inside the field of view,
//! and has wall-free line of sight to its center. Nearer objects occlude: the
//! occluded portion of the object's angular extent is computed with interval
//! arithmetic, patch columns under an occluder are overwritten with the
//! occluder's color, and detections with more than `occlusion_drop` angular
//! cover are discarded entirely.

use rand::Rng;

use crate::geom::{segments_intersect, wrap_to_pi, Vec2};
use crate::patch::{Patch, PATCH_LEN, PATCH_SIDE};
use crate::rng::{mix, rng_from, DetRng};

use super::{Detection, FloorPlan, Pose, Scene, SceneObject, SimParams};

/// Base colors per class id. Classes 0..8 are saturated "cylinder" colors
/// (targets use 0..3 in the cylinder regime); 8..16 are muted texture bases.
pub const CLASS_PALETTE: [[f64; 3]; 16] = [
    [0.95, 0.10, 0.10], // 0 red
    [0.10, 0.85, 0.10], // 1 green
    [0.10, 0.20, 0.95], // 2 blue
    [0.95, 0.85, 0.10], // 3 yellow
    [0.90, 0.10, 0.90], // 4 magenta
    [0.10, 0.85, 0.90], // 5 cyan
    [0.95, 0.55, 0.10], // 6 orange
    [0.55, 0.10, 0.90], // 7 purple
    [0.60, 0.45, 0.30], // 8 tan
    [0.35, 0.50, 0.35], // 9 olive
    [0.50, 0.35, 0.25], // 10 brown
    [0.45, 0.45, 0.55], // 11 slate
    [0.65, 0.55, 0.45], // 12 sand
    [0.40, 0.30, 0.45], // 13 plum
    [0.30, 0.45, 0.50], // 14 teal-gray
    [0.55, 0.50, 0.40], // 15 khaki
];

/// Viewpoint quantization: texture appearance is keyed on these bins so that
/// nearby poses produce identical base pixels (noise is added separately).
const RANGE_QUANTUM: f64 = 0.5;

/// Wall-free line of sight between two points. Touching a wall endpoint
/// counts as blocked.
pub fn line_of_sight(p: Vec2, q: Vec2, plan: &FloorPlan) -> bool {
    !plan
        .walls
        .iter()
        .any(|w| segments_intersect(p, q, w.a, w.b))
}

/// Half-angle subtended by a disk of radius `r` at distance `d`.
fn half_angle(r: f64, d: f64) -> f64 {
    (r / d).min(1.0).asin()
}

/// Angular spans (relative to the object's bearing, clipped to its extent)
/// covered by strictly nearer occluder disks. Returns the object's half-angle
/// and one `(lo, hi, occluder index)` span per overlapping occluder.
fn occluder_spans(
    obj: &SceneObject,
    from: Vec2,
    occluders: &[&SceneObject],
    radius: f64,
) -> (f64, Vec<(f64, f64, usize)>) {
    let to_obj = obj.position - from;
    let d = to_obj.norm();
    let alpha = half_angle(radius, d);
    let beta = to_obj.angle();
    let mut spans = Vec::new();
    for (k, occ) in occluders.iter().enumerate() {
        let to_occ = occ.position - from;
        let d_occ = to_occ.norm();
        if d_occ >= d {
            continue;
        }
        let rel = wrap_to_pi(to_occ.angle() - beta);
        let a_occ = half_angle(radius, d_occ.max(1e-9));
        let lo = (rel - a_occ).max(-alpha);
        let hi = (rel + a_occ).min(alpha);
        if lo < hi {
            spans.push((lo, hi, k));
        }
    }
    (alpha, spans)
}

/// Total covered fraction of `[-alpha, alpha]` after merging spans.
fn merged_fraction(alpha: f64, spans: &[(f64, f64, usize)]) -> f64 {
    if spans.is_empty() || alpha <= 0.0 {
        return 0.0;
    }
    let mut iv: Vec<(f64, f64)> = spans.iter().map(|&(lo, hi, _)| (lo, hi)).collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut covered = 0.0;
    let (mut lo, mut hi) = iv[0];
    for &(l, h) in &iv[1..] {
        if l <= hi {
            hi = hi.max(h);
        } else {
            covered += hi - lo;
            lo = l;
            hi = h;
        }
    }
    covered += hi - lo;
    (covered / (2.0 * alpha)).min(1.0)
}

/// Brightness attenuation for a quantized range bin.
fn attenuation(range_bin: u32, detection_range: f64) -> f64 {
    let r = (range_bin as f64 + 0.5) * RANGE_QUANTUM;
    1.0 - 0.5 * (r / detection_range).min(1.0)
}

fn pix_hash(seed: u64, a: u64, b: u64) -> u64 {
    mix(seed ^ mix(a.wrapping_mul(0x9E37).wrapping_add(b)))
}

/// Deterministic noise-free pixels for `(class, instance, range bin, bearing
/// bin)`. Cylinder classes render as a shaded solid color; textured classes
/// mix two palette colors with a per-class pattern whose phase shifts with
/// the viewing direction.
fn base_pixels(
    class_id: u32,
    appearance_seed: u64,
    range_bin: u32,
    bearing_bin: i32,
    detection_range: f64,
) -> [f64; PATCH_LEN] {
    let mut inst = rng_from(appearance_seed, "appearance", class_id as u64);
    let att = attenuation(range_bin, detection_range);
    let base = CLASS_PALETTE[(class_id as usize) % CLASS_PALETTE.len()];
    let mut px = [0.0f64; PATCH_LEN];

    if class_id < 8 {
        // Cylinder: per-instance tint jitter, cosine column shading.
        let jitter = [
            1.0 + inst.gen_range(-0.06..0.06),
            1.0 + inst.gen_range(-0.06..0.06),
            1.0 + inst.gen_range(-0.06..0.06),
        ];
        for c in 0..PATCH_SIDE {
            let shade =
                0.55 + 0.45 * (std::f64::consts::PI * (c as f64 + 0.5) / PATCH_SIDE as f64).sin();
            for r in 0..PATCH_SIDE {
                for ch in 0..3 {
                    px[Patch::index(r, c, ch)] =
                        (base[ch] * jitter[ch] * shade * att).clamp(0.0, 1.0);
                }
            }
        }
    } else {
        let alt = CLASS_PALETTE[8 + ((class_id as usize + 3) % 8)];
        let period = inst.gen_range(3..6) as i32;
        let phase = inst.gen_range(0..period);
        let view_phase = (phase + bearing_bin).rem_euclid(period);
        for r in 0..PATCH_SIDE {
            for c in 0..PATCH_SIDE {
                let use_alt = match class_id % 3 {
                    0 => ((c as i32 + view_phase) / period) % 2 == 1, // stripes
                    1 => {
                        ((r as i32 / period + c as i32 / period + view_phase) % 2) == 1
                        // checker
                    }
                    _ => {
                        // per-pixel hash mix, shifted by viewing direction
                        let col = (c as i64 + bearing_bin as i64).rem_euclid(16) as u64;
                        pix_hash(appearance_seed, r as u64, col) & 1 == 1
                    }
                };
                let color = if use_alt { alt } else { base };
                for ch in 0..3 {
                    px[Patch::index(r, c, ch)] = (color[ch] * att).clamp(0.0, 1.0);
                }
            }
        }
    }
    px
}

/// Render the 16x16x3 patch for `obj` seen from `pose`, overwriting columns
/// covered by nearer occluders. Returns the patch and the occluded fraction
/// of the object's angular extent.
///
/// The noise-free content is a pure function of (appearance seed, class id,
/// quantized range, quantized bearing, occluder geometry); `rng` supplies the
/// per-pixel uniform noise only.
pub fn render_patch(
    obj: &SceneObject,
    pose: &Pose,
    occluders: &[&SceneObject],
    params: &SimParams,
    noise_amp: f64,
    rng: &mut DetRng,
) -> (Patch, f64) {
    let to = obj.position - pose.position;
    let range = to.norm();
    let bearing = wrap_to_pi(to.angle() - pose.heading);
    let range_bin = (range / RANGE_QUANTUM).floor() as u32;
    let bearing_bin = (bearing / params.turn_angle).round() as i32;

    let mut px = base_pixels(
        obj.class_id,
        obj.appearance_seed,
        range_bin,
        bearing_bin,
        params.detection_range,
    );

    let (alpha, spans) = occluder_spans(obj, pose.position, occluders, params.occluder_radius);
    let fraction = merged_fraction(alpha, &spans);

    // Column c spans angles around theta_c; overwrite columns whose center
    // falls inside an occluder span with the nearest such occluder's color.
    if !spans.is_empty() {
        for c in 0..PATCH_SIDE {
            let theta = alpha * (1.0 - (2.0 * c as f64 + 1.0) / PATCH_SIDE as f64);
            let mut best: Option<(f64, usize)> = None; // (distance, occluder idx)
            for &(lo, hi, k) in &spans {
                if theta >= lo && theta <= hi {
                    let d = pose.position.dist(occluders[k].position);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, k));
                    }
                }
            }
            if let Some((_, k)) = best {
                let occ = occluders[k];
                let occ_bin = (pose.position.dist(occ.position) / RANGE_QUANTUM).floor() as u32;
                let occ_att = attenuation(occ_bin, params.detection_range);
                let color = CLASS_PALETTE[(occ.class_id as usize) % CLASS_PALETTE.len()];
                for r in 0..PATCH_SIDE {
                    for ch in 0..3 {
                        px[Patch::index(r, c, ch)] = (color[ch] * occ_att).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }

    let mut patch = Patch::zeros();
    if noise_amp > 0.0 {
        for (i, v) in px.iter().enumerate() {
            let noise = noise_amp * (2.0 * rng.gen::<f64>() - 1.0);
            let (r, c, ch) = (i / 48, (i / 3) % 16, i % 3);
            patch.set(r, c, ch, (v + noise).clamp(0.0, 1.0) as f32);
        }
    } else {
        for (i, v) in px.iter().enumerate() {
            let (r, c, ch) = (i / 48, (i / 3) % 16, i % 3);
            patch.set(r, c, ch, v.clamp(0.0, 1.0) as f32);
        }
    }
    (patch, fraction)
}

/// All objects detectable from `pose`: within range, inside the FOV, center
/// line-of-sight clear of walls, and not occluded beyond the drop threshold.
/// Results are ordered by ascending object id.
pub fn visible_objects(
    scene: &Scene,
    pose: &Pose,
    params: &SimParams,
    noise_amp: f64,
    rng: &mut DetRng,
) -> Vec<Detection> {
    let mut dets = Vec::new();
    for obj in &scene.objects {
        let to = obj.position - pose.position;
        let range = to.norm();
        if range > params.detection_range || range < 1e-9 {
            continue;
        }
        let bearing = wrap_to_pi(to.angle() - pose.heading);
        if bearing.abs() > params.fov / 2.0 {
            continue;
        }
        if !line_of_sight(pose.position, obj.position, &scene.plan) {
            continue;
        }
        let occluders: Vec<&SceneObject> = scene
            .objects
            .iter()
            .filter(|o| o.id != obj.id && pose.position.dist(o.position) < range)
            .collect();
        // Cheap pre-check so dropped detections consume no noise draws.
        let (alpha, spans) = occluder_spans(obj, pose.position, &occluders, params.occluder_radius);
        let fraction = merged_fraction(alpha, &spans);
        if fraction > params.occlusion_drop {
            continue;
        }
        let (patch, fraction) = render_patch(obj, pose, &occluders, params, noise_amp, rng);
        dets.push(Detection {
            object_id: obj.id,
            class_id: obj.class_id,
            patch,
            range,
            bearing,
            occlusion_fraction: fraction,
        });
    }
    dets
}
