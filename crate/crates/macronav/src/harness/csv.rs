//! Learning-curve persistence: one CSV row per episode.
//!
//! The format is deliberately minimal — a fixed header and plain
//! comma-separated values with no quoting (no field ever contains a comma).
//! Floats are written in Rust's shortest round-trip notation, so
//! write → read → write is byte-stable.

use std::fmt::Write as _;

use crate::agent::{EpisodeRecord, Mode};
use crate::sim::RewardMode;

use super::HarnessError;

/// The exact header line every curve file starts with.
pub const CSV_HEADER: &str = "episode,mode,n_targets,reward_mode,elementary_steps,\
macro_decisions,return,success,epsilon,scene_seed";

/// One persisted episode outcome — a row of a learning-curve or
/// evaluation file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub episode: usize,
    pub mode: Mode,
    pub n_targets: usize,
    pub reward_mode: RewardMode,
    pub elementary_steps: u64,
    pub macro_decisions: u64,
    pub episode_return: f64,
    pub success: bool,
    pub epsilon: f64,
    pub scene_seed: u64,
}

impl RunRecord {
    /// Flatten an in-memory episode record, attaching the task context the
    /// record itself does not carry.
    pub fn from_episode(rec: &EpisodeRecord, n_targets: usize, reward_mode: RewardMode) -> Self {
        RunRecord {
            episode: rec.episode,
            mode: rec.mode,
            n_targets,
            reward_mode,
            elementary_steps: rec.stats.elementary_steps,
            macro_decisions: rec.stats.macro_decisions,
            episode_return: rec.stats.episode_return,
            success: rec.stats.success,
            epsilon: rec.epsilon,
            scene_seed: rec.stats.scene_seed,
        }
    }
}

/// Render rows to CSV text. An empty slice yields a header-only file.
pub fn write_csv(rows: &[RunRecord]) -> String {
    let mut out = String::with_capacity(CSV_HEADER.len() + 1 + rows.len() * 48);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        // Infallible: writing to a String cannot fail.
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.episode,
            r.mode.as_str(),
            r.n_targets,
            r.reward_mode.as_str(),
            r.elementary_steps,
            r.macro_decisions,
            r.episode_return,
            r.success,
            r.epsilon,
            r.scene_seed,
        )
        .expect("string write");
    }
    out
}

/// Parse CSV text produced by [`write_csv`]. Errors carry the 1-based file
/// line number of the offending row.
pub fn read_csv(text: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let parse_err = |row: usize, reason: String| HarnessError::Parse { row, reason };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                1,
                format!("bad header `{header}` (expected `{CSV_HEADER}`)"),
            ))
        }
        None => return Err(parse_err(1, "empty file (missing header)".into())),
    }

    let mut rows = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1; // enumerate is 0-based; humans count lines from 1
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(parse_err(
                row,
                format!("expected 10 fields, got {}", fields.len()),
            ));
        }
        fn field<T: std::str::FromStr>(
            raw: &str,
            name: &str,
            row: usize,
        ) -> Result<T, HarnessError>
        where
            T::Err: std::fmt::Display,
        {
            raw.parse().map_err(|e| HarnessError::Parse {
                row,
                reason: format!("bad {name} `{raw}`: {e}"),
            })
        }
        rows.push(RunRecord {
            episode: field(fields[0], "episode", row)?,
            mode: field::<Mode>(fields[1], "mode", row)?,
            n_targets: field(fields[2], "n_targets", row)?,
            reward_mode: field::<RewardMode>(fields[3], "reward_mode", row)?,
            elementary_steps: field(fields[4], "elementary_steps", row)?,
            macro_decisions: field(fields[5], "macro_decisions", row)?,
            episode_return: field(fields[6], "return", row)?,
            success: field(fields[7], "success", row)?,
            epsilon: field(fields[8], "epsilon", row)?,
            scene_seed: field(fields[9], "scene_seed", row)?,
        });
    }
    Ok(rows)
}
