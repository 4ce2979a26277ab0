//! Macro-action selection over the map's current object nodes.
//!
//! Two selection modes share one preference structure: a softmax over
//! Q-values with an additive bonus for nodes the agent has not yet stood
//! near (sampled with probability `epsilon`), and a greedy argmax over raw
//! Q-values otherwise. The greedy path refuses to re-select the node the
//! agent is already at — that would be a no-op macro — and takes the
//! next-highest Q instead.

use crate::rng::DetRng;
use crate::topomap::NodeId;
use rand::Rng;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("action set is empty")]
    EmptyActionSet,
    #[error("parallel action arrays differ in length")]
    LengthMismatch,
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
}

/// Selection hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    /// Probability of sampling from the softmax instead of acting greedily.
    pub epsilon: f64,
    /// Softmax temperature; must be positive.
    pub temperature: f64,
    /// Additive score bonus for unexplored nodes; must be positive.
    pub bonus_q: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            epsilon: 0.3,
            temperature: 1.0,
            bonus_q: 1.0,
        }
    }
}

impl PolicyConfig {
    /// Evaluation-time variant: fully greedy, same temperatures.
    pub fn greedy(self) -> Self {
        PolicyConfig {
            epsilon: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PolicyError::InvalidConfig(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "temperature {} not positive",
                self.temperature
            )));
        }
        if !(self.bonus_q > 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "exploration bonus {} not positive",
                self.bonus_q
            )));
        }
        Ok(())
    }
}

/// Softmax selection probabilities over adjusted scores
/// `Q_i + bonus·[unexplored_i]`, computed with max-subtraction so extreme
/// Q magnitudes cannot overflow.
pub fn boltzmann_probs(
    qvals: &[f64],
    unexplored: &[bool],
    temperature: f64,
    bonus: f64,
) -> Result<Vec<f64>, PolicyError> {
    if qvals.is_empty() {
        return Err(PolicyError::EmptyActionSet);
    }
    if qvals.len() != unexplored.len() {
        return Err(PolicyError::LengthMismatch);
    }
    if !(temperature > 0.0) {
        return Err(PolicyError::InvalidConfig(format!(
            "temperature {temperature} not positive"
        )));
    }
    let scores: Vec<f64> = qvals
        .iter()
        .zip(unexplored)
        .map(|(&q, &u)| if u { q + bonus } else { q })
        .collect();
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // After subtracting the maximum every exponent is <= 0, so each term is
    // in (0, 1] and the normalizer is at least 1.
    let mut exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - top) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.iter_mut().for_each(|e| *e /= z);
    Ok(exps)
}

/// Pick the next macro target. With probability `epsilon` the choice is a
/// softmax sample over bonus-adjusted scores; otherwise it is the highest-Q
/// node, stepping down to the next-highest when that node is `current`
/// (ties break toward the smaller node id). Deterministic given the rng
/// state.
pub fn select_action(
    qvals: &[f64],
    unexplored: &[bool],
    node_ids: &[NodeId],
    current: Option<NodeId>,
    cfg: &PolicyConfig,
    rng: &mut DetRng,
) -> Result<NodeId, PolicyError> {
    cfg.validate()?;
    if node_ids.is_empty() {
        return Err(PolicyError::EmptyActionSet);
    }
    if qvals.len() != node_ids.len() || unexplored.len() != node_ids.len() {
        return Err(PolicyError::LengthMismatch);
    }
    if rng.gen_bool(cfg.epsilon) {
        let probs = boltzmann_probs(qvals, unexplored, cfg.temperature, cfg.bonus_q)?;
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return Ok(node_ids[i]);
            }
        }
        // Rounding can leave the final cumulative sum a hair under u.
        return Ok(*node_ids.last().expect("non-empty"));
    }
    Ok(greedy_pick(qvals, node_ids, current))
}

/// Argmax over raw Q with deterministic ties, skipping `current` when a
/// second choice exists.
fn greedy_pick(qvals: &[f64], node_ids: &[NodeId], current: Option<NodeId>) -> NodeId {
    let better = |a: usize, b: usize| {
        qvals[a]
            .total_cmp(&qvals[b])
            .then(node_ids[b].cmp(&node_ids[a]))
            .is_gt()
    };
    let mut best = 0usize;
    let mut runner: Option<usize> = None;
    for i in 1..node_ids.len() {
        if better(i, best) {
            runner = Some(best);
            best = i;
        } else if runner.is_none_or(|r| better(i, r)) {
            runner = Some(i);
        }
    }
    match (current, runner) {
        (Some(cur), Some(r)) if node_ids[best] == cur => node_ids[r],
        _ => node_ids[best],
    }
}
