//! Run configuration as `key = value` text.
//!
//! Three layers, later ones winning: built-in defaults, an optional config
//! file, command-line flags. Every run directory receives a `config.txt`
//! echo of the fully resolved configuration; the echo uses the same format
//! and key set the parser accepts, so a recorded run can be reproduced with
//! `--config <run>/config.txt`.

use std::fmt::Write as _;

use crate::agent::TrainConfig;

use super::HarnessError;

/// Parse `key = value` lines into `cfg`. Blank lines and `#` comments are
/// ignored; unknown keys and malformed lines fail with their line number.
pub fn apply_config_text(cfg: &mut TrainConfig, text: &str) -> Result<(), HarnessError> {
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| HarnessError::Config {
            line: idx + 1,
            reason,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        apply_key(cfg, key.trim(), value.trim()).map_err(bad)?;
    }
    Ok(())
}

/// Set one configuration key from its text form.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
    }
    macro_rules! set {
        ($field:expr) => {
            $field = parse(key, value)?
        };
    }
    match key {
        "episodes" => set!(cfg.episodes),
        "warmup_episodes" => set!(cfg.warmup_episodes),
        "scenes" => set!(cfg.scenes),
        // Keeps the network's progress-vector length in lockstep.
        "n_targets" => cfg.set_targets(parse(key, value)?),
        "reward_mode" => set!(cfg.reward_mode),
        "seed" => set!(cfg.seed),
        "eval_episodes" => set!(cfg.eval_episodes),
        "lr" => set!(cfg.lr),
        "gamma" => set!(cfg.gamma),
        "batch" => set!(cfg.batch),
        "replay_capacity" => set!(cfg.replay_capacity),
        "target_sync" => set!(cfg.target_sync),
        "snapshot_cap" => set!(cfg.snapshot_cap),
        "macro_budget" => set!(cfg.macro_budget),
        "stagnation_steps" => set!(cfg.stagnation_steps),

        "epsilon" => set!(cfg.policy.epsilon),
        "temperature" => set!(cfg.policy.temperature),
        "bonus_q" => set!(cfg.policy.bonus_q),

        "arch_n_patches" => set!(cfg.arch.n_patches),
        "arch_n_targets" => set!(cfg.arch.n_targets),
        "arch_conv1_channels" => set!(cfg.arch.conv1_channels),
        "arch_conv2_channels" => set!(cfg.arch.conv2_channels),
        "arch_hidden" => set!(cfg.arch.hidden),

        "rooms" => set!(cfg.rooms),
        "objects_per_room" => set!(cfg.objects_per_room),
        "object_style" => set!(cfg.style),
        "noise_amp" => set!(cfg.noise_amp),

        "step_len" => set!(cfg.sim.step_len),
        "turn_angle" => set!(cfg.sim.turn_angle),
        "fov" => set!(cfg.sim.fov),
        "detection_range" => set!(cfg.sim.detection_range),
        "reach_radius" => set!(cfg.sim.reach_radius),
        "occluder_radius" => set!(cfg.sim.occluder_radius),
        "occlusion_drop" => set!(cfg.sim.occlusion_drop),
        "episode_step_cap" => set!(cfg.sim.episode_step_cap),

        "merge_radius" => set!(cfg.map.merge_radius),
        "patch_cap" => set!(cfg.map.patch_cap),
        "waypoint_spacing" => set!(cfg.map.waypoint_spacing),
        "explored_radius" => set!(cfg.map.explored_radius),
        "visit_radius" => set!(cfg.map.visit_radius),

        other => return Err(format!("unknown config key `{other}`")),
    }
    Ok(())
}

/// Render the fully resolved configuration as `key = value` lines,
/// parseable by [`apply_config_text`].
pub fn echo_config(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let w = &mut out;
    // `n_targets` precedes `arch_n_targets` so that re-applying the echo
    // (where `n_targets` also rewrites the network shape) converges.
    writeln!(w, "episodes = {}", cfg.episodes).unwrap();
    writeln!(w, "warmup_episodes = {}", cfg.warmup_episodes).unwrap();
    writeln!(w, "scenes = {}", cfg.scenes).unwrap();
    writeln!(w, "n_targets = {}", cfg.n_targets).unwrap();
    writeln!(w, "reward_mode = {}", cfg.reward_mode.as_str()).unwrap();
    writeln!(w, "seed = {}", cfg.seed).unwrap();
    writeln!(w, "eval_episodes = {}", cfg.eval_episodes).unwrap();
    writeln!(w, "lr = {}", cfg.lr).unwrap();
    writeln!(w, "gamma = {}", cfg.gamma).unwrap();
    writeln!(w, "batch = {}", cfg.batch).unwrap();
    writeln!(w, "replay_capacity = {}", cfg.replay_capacity).unwrap();
    writeln!(w, "target_sync = {}", cfg.target_sync).unwrap();
    writeln!(w, "snapshot_cap = {}", cfg.snapshot_cap).unwrap();
    writeln!(w, "macro_budget = {}", cfg.macro_budget).unwrap();
    writeln!(w, "stagnation_steps = {}", cfg.stagnation_steps).unwrap();
    writeln!(w, "epsilon = {}", cfg.policy.epsilon).unwrap();
    writeln!(w, "temperature = {}", cfg.policy.temperature).unwrap();
    writeln!(w, "bonus_q = {}", cfg.policy.bonus_q).unwrap();
    writeln!(w, "arch_n_patches = {}", cfg.arch.n_patches).unwrap();
    writeln!(w, "arch_n_targets = {}", cfg.arch.n_targets).unwrap();
    writeln!(w, "arch_conv1_channels = {}", cfg.arch.conv1_channels).unwrap();
    writeln!(w, "arch_conv2_channels = {}", cfg.arch.conv2_channels).unwrap();
    writeln!(w, "arch_hidden = {}", cfg.arch.hidden).unwrap();
    writeln!(w, "rooms = {}", cfg.rooms).unwrap();
    writeln!(w, "objects_per_room = {}", cfg.objects_per_room).unwrap();
    writeln!(w, "object_style = {}", cfg.style.as_str()).unwrap();
    writeln!(w, "noise_amp = {}", cfg.noise_amp).unwrap();
    writeln!(w, "step_len = {}", cfg.sim.step_len).unwrap();
    writeln!(w, "turn_angle = {}", cfg.sim.turn_angle).unwrap();
    writeln!(w, "fov = {}", cfg.sim.fov).unwrap();
    writeln!(w, "detection_range = {}", cfg.sim.detection_range).unwrap();
    writeln!(w, "reach_radius = {}", cfg.sim.reach_radius).unwrap();
    writeln!(w, "occluder_radius = {}", cfg.sim.occluder_radius).unwrap();
    writeln!(w, "occlusion_drop = {}", cfg.sim.occlusion_drop).unwrap();
    writeln!(w, "episode_step_cap = {}", cfg.sim.episode_step_cap).unwrap();
    writeln!(w, "merge_radius = {}", cfg.map.merge_radius).unwrap();
    writeln!(w, "patch_cap = {}", cfg.map.patch_cap).unwrap();
    writeln!(w, "waypoint_spacing = {}", cfg.map.waypoint_spacing).unwrap();
    writeln!(w, "explored_radius = {}", cfg.map.explored_radius).unwrap();
    writeln!(w, "visit_radius = {}", cfg.map.visit_radius).unwrap();
    out
}
