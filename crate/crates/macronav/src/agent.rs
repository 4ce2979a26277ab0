//! Episode orchestration and the training loop.
//!
//! An episode starts with an empty map, bootstraps it with an in-place
//! scan, then alternates macro decisions with macro execution: sample
//! patches for every object node, rate them, pick one, drive to it. Each
//! decision's snapshot serves three roles at once — the Q inputs for the
//! choice, the chosen action's recorded patches, and the previous
//! transition's successor candidates.
//!
//! Training threads one optimizer update through every committed
//! transition, so the network the agent consults evolves *during* the
//! episode, exactly one update per macro decision.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::nav::{execute_macro, step_and_integrate, MacroAction};
use crate::patch::Patch;
use crate::policy::{select_action, PolicyConfig};
use crate::qnet::{
    forward_with, init_params, loss_and_gradients, td_targets, Adam, ArchConfig, ProgressVector,
    QNetError, QNetworkParams, ReplayBuffer, Transition, Workspace,
};
use crate::rng::{derive_seed, rng_from, DetRng};
use crate::sim::{
    generate_scene, ElementaryAction, Env, Event, ObjectStyle, RewardMode, Scene, SceneConfig,
    SimError, SimParams, StepResult,
};
use crate::topomap::{MapParams, NodeId, TopoMap};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no evaluation episodes requested")]
    NoEpisodes,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Network(#[from] QNetError),
}

/// How macro actions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Epsilon-Boltzmann selection under the live network.
    Train,
    /// Greedy selection under frozen parameters.
    Eval,
    /// Uniform over the current object nodes; the network is never consulted.
    Random,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
            Mode::Random => "random",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Mode::Train),
            "eval" => Ok(Mode::Eval),
            "random" => Ok(Mode::Random),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Outcome counters for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub elementary_steps: u64,
    pub macro_decisions: u64,
    pub episode_return: f64,
    pub success: bool,
    pub scene_seed: u64,
    /// Wall-clock seconds; excluded from any determinism comparison.
    pub wall_time: f64,
}

impl EpisodeStats {
    /// Field-by-field equality ignoring wall time, for determinism checks.
    pub fn same_outcome(&self, other: &EpisodeStats) -> bool {
        self.elementary_steps == other.elementary_steps
            && self.macro_decisions == other.macro_decisions
            && self.episode_return == other.episode_return
            && self.success == other.success
            && self.scene_seed == other.scene_seed
    }
}

/// One learning-curve row.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub mode: Mode,
    pub epsilon: f64,
    pub stats: EpisodeStats,
}

/// Everything a training or evaluation run needs, with working defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total training episodes, warm-up included.
    pub episodes: usize,
    /// Leading episodes that act randomly to fill the replay buffer;
    /// no updates happen during them.
    pub warmup_episodes: usize,
    /// Number of distinct training scenes; episodes rotate through them.
    pub scenes: usize,
    pub n_targets: usize,
    pub reward_mode: RewardMode,
    /// Master seed; every stream of randomness below derives from it.
    pub seed: u64,
    pub eval_episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Updates between target-network snapshots.
    pub target_sync: u64,
    /// Maximum successor candidates stored per transition; uniform random
    /// drop beyond.
    pub snapshot_cap: usize,
    /// Elementary-step budget per macro action.
    pub macro_budget: u64,
    /// Elementary steps without any map or task progress before the agent
    /// abandons macro decisions for a randomized discovery wander.
    pub stagnation_steps: u64,
    pub arch: ArchConfig,
    pub policy: PolicyConfig,
    pub sim: SimParams,
    pub map: MapParams,
    pub rooms: usize,
    pub objects_per_room: usize,
    pub style: ObjectStyle,
    pub noise_amp: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 300,
            warmup_episodes: 20,
            scenes: 8,
            n_targets: 1,
            reward_mode: RewardMode::Immediate,
            seed: 7,
            eval_episodes: 50,
            lr: 1e-4,
            gamma: 0.95,
            batch: 32,
            replay_capacity: 10_000,
            target_sync: 100,
            snapshot_cap: 64,
            macro_budget: 500,
            stagnation_steps: 150,
            arch: ArchConfig {
                n_targets: 1,
                ..ArchConfig::default()
            },
            policy: PolicyConfig::default(),
            sim: SimParams::default(),
            map: MapParams::default(),
            rooms: 4,
            objects_per_room: 2,
            style: ObjectStyle::Cylinder,
            noise_amp: 0.02,
        }
    }
}

impl TrainConfig {
    /// Defaults adjusted for an `n_targets`-target task (network progress
    /// vector sized to match).
    pub fn for_targets(n_targets: usize) -> Self {
        let mut cfg = TrainConfig::default();
        cfg.set_targets(n_targets);
        cfg
    }

    /// Change the target count, keeping the network shape consistent.
    pub fn set_targets(&mut self, n_targets: usize) {
        self.n_targets = n_targets;
        self.arch.n_targets = n_targets;
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::Config(msg));
        if self.episodes < self.warmup_episodes {
            return bad(format!(
                "episodes ({}) must cover the warm-up ({})",
                self.episodes, self.warmup_episodes
            ));
        }
        for (name, v) in [
            ("scenes", self.scenes),
            ("n_targets", self.n_targets),
            ("batch", self.batch),
            ("replay_capacity", self.replay_capacity),
            ("snapshot_cap", self.snapshot_cap),
            ("objects_per_room", self.objects_per_room),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.rooms < 2 {
            return bad(format!(
                "scene generation needs at least 2 rooms, got {}",
                self.rooms
            ));
        }
        if self.n_targets > self.rooms {
            return bad(format!(
                "{} targets need at least as many rooms (have {})",
                self.n_targets, self.rooms
            ));
        }
        if self.arch.n_targets != self.n_targets {
            return bad(format!(
                "network progress length {} does not match task targets {}",
                self.arch.n_targets, self.n_targets
            ));
        }
        if self.target_sync == 0 || self.macro_budget == 0 || self.stagnation_steps == 0 {
            return bad("target_sync, macro_budget, and stagnation_steps must be positive".into());
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("bad lr {} or gamma {}", self.lr, self.gamma));
        }
        self.arch.validate().map_err(AgentError::Network)?;
        self.policy
            .validate()
            .map_err(|e| AgentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            rooms: self.rooms,
            objects_per_room: self.objects_per_room,
            n_targets: self.n_targets,
            style: self.style,
            noise_amp: self.noise_amp,
        }
    }

    /// Scene seed for training episode `episode` (rotates through the pool).
    pub fn train_scene_seed(&self, episode: usize) -> u64 {
        derive_seed(self.seed, "train-scene", (episode % self.scenes) as u64)
    }

    /// Held-out scene seed for evaluation episode `i`.
    pub fn eval_scene_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, "eval-scene", i as u64)
    }

    pub fn train_scene_seed_pool(&self) -> Vec<u64> {
        (0..self.scenes).map(|i| self.train_scene_seed(i)).collect()
    }
}

/// One selectable action at a decision point: an object node with patches
/// sampled from it.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub node: NodeId,
    pub unexplored: bool,
    pub patches: Vec<Arc<Patch>>,
}

/// What the episode loop asks of its owner: rate candidates when a choice
/// is needed, and witness each committed transition (where training hooks
/// in its per-decision update).
pub trait Oracle {
    fn rate(&mut self, candidates: &[Candidate], x: &ProgressVector) -> Vec<f64>;
    fn note_transition(&mut self, _t: &Transition) {}
}

/// Oracle for modes that never rate and never learn (the random baseline).
pub struct NullOracle;

impl Oracle for NullOracle {
    fn rate(&mut self, _candidates: &[Candidate], _x: &ProgressVector) -> Vec<f64> {
        unreachable!("random mode never consults the network")
    }
}

/// Records transitions without learning — warm-up episodes.
pub struct ReplayFillOracle<'a> {
    pub replay: &'a mut ReplayBuffer,
}

impl Oracle for ReplayFillOracle<'_> {
    fn rate(&mut self, _candidates: &[Candidate], _x: &ProgressVector) -> Vec<f64> {
        unreachable!("warm-up episodes act randomly")
    }
    fn note_transition(&mut self, t: &Transition) {
        self.replay.push(t.clone());
    }
}

/// Rates under frozen parameters; evaluation and greedy rollouts.
pub struct FrozenOracle<'a> {
    params: &'a QNetworkParams,
    ws: Workspace,
}

impl<'a> FrozenOracle<'a> {
    pub fn new(params: &'a QNetworkParams) -> Self {
        FrozenOracle {
            params,
            ws: Workspace::new(&params.arch),
        }
    }
}

impl Oracle for FrozenOracle<'_> {
    fn rate(&mut self, candidates: &[Candidate], x: &ProgressVector) -> Vec<f64> {
        candidates
            .iter()
            .map(|c| {
                forward_with(self.params, &c.patches, x, &mut self.ws)
                    .expect("candidate patches match the network shape")
            })
            .collect()
    }
}

/// Live training state: rates under the evolving network and runs one
/// optimizer update per committed transition.
struct TrainOracle<'a> {
    cfg: &'a TrainConfig,
    params: &'a mut QNetworkParams,
    target: &'a mut QNetworkParams,
    adam: &'a mut Adam,
    replay: &'a mut ReplayBuffer,
    ws: &'a mut Workspace,
    updates: &'a mut u64,
    rng: &'a mut DetRng,
}

impl Oracle for TrainOracle<'_> {
    fn rate(&mut self, candidates: &[Candidate], x: &ProgressVector) -> Vec<f64> {
        candidates
            .iter()
            .map(|c| {
                forward_with(self.params, &c.patches, x, self.ws)
                    .expect("candidate patches match the network shape")
            })
            .collect()
    }

    fn note_transition(&mut self, t: &Transition) {
        self.replay.push(t.clone());
        if self.replay.len() < self.cfg.batch {
            return;
        }
        let batch = self.replay.sample(self.cfg.batch, self.rng);
        let targets = td_targets(&batch, self.target, self.cfg.gamma, self.ws)
            .expect("replayed transitions match the network shape");
        let (loss, grads) = loss_and_gradients(self.params, &batch, &targets, self.ws)
            .expect("replayed transitions match the network shape");
        assert!(loss.is_finite(), "training loss diverged");
        self.adam.step(self.params, &grads, self.cfg.lr);
        assert!(self.params.all_finite(), "network weights diverged");
        *self.updates += 1;
        if *self.updates % self.cfg.target_sync == 0 {
            *self.target = self.params.sync_target();
        }
    }
}

/// Everything one episode produced. The stats/transition pair is the core
/// contract; the map and the per-decision choices support inspection and
/// map export.
#[derive(Debug)]
pub struct EpisodeOutput {
    pub stats: EpisodeStats,
    pub transitions: Vec<Transition>,
    pub map: TopoMap,
    /// Macro target chosen at each decision point, in order.
    pub chosen: Vec<NodeId>,
}

/// A committed-in-progress transition: the chosen action and the rewards
/// accumulated since that decision.
struct PendingDecision {
    patches: Vec<Arc<Patch>>,
    x: ProgressVector,
    reward: f64,
}

/// Cap the successor snapshot, dropping uniformly at random beyond it.
fn snapshot_candidates(
    candidates: &[Candidate],
    cap: usize,
    rng: &mut DetRng,
) -> Vec<Vec<Arc<Patch>>> {
    if candidates.len() <= cap {
        return candidates.iter().map(|c| c.patches.clone()).collect();
    }
    rand::seq::index::sample(rng, candidates.len(), cap)
        .into_iter()
        .map(|i| candidates[i].patches.clone())
        .collect()
}

/// Run one episode on `scene`. The map starts empty, a 360° scan (and, if
/// nothing was found, a short advance plus rescan) seeds it, then macro
/// decisions alternate with execution until the task completes or the
/// elementary-step cap ends the episode.
pub fn run_episode(
    scene: &Scene,
    cfg: &TrainConfig,
    mode: Mode,
    episode_seed: u64,
    oracle: &mut dyn Oracle,
) -> EpisodeOutput {
    let started = Instant::now();
    assert_eq!(
        scene.target_sequence().len(),
        cfg.n_targets,
        "scene target count does not match the configuration"
    );
    let n_targets = cfg.n_targets;
    let mut env = Env::new(scene, cfg.sim.clone(), cfg.reward_mode, episode_seed);
    let mut map = TopoMap::new(cfg.map.clone());
    let mut rng = rng_from(episode_seed, "agent-episode", 0);

    let mut x = ProgressVector::one_hot(0, n_targets);
    let mut episode_return = 0.0;
    let mut done = false;
    let mut pending: Option<PendingDecision> = None;
    let mut transitions: Vec<Transition> = Vec::new();
    let mut chosen_log: Vec<NodeId> = Vec::new();
    let mut current: Option<NodeId> = None;
    let mut macro_decisions = 0u64;
    // Randomized wander state: turn a random amount, then run straight a
    // random distance; a blocked run rerolls immediately. Long straight
    // segments are what eventually thread door gaps into unseen rooms.
    let mut wander_turns: u64 = 0;
    let mut wander_run: u64 = 0;

    // Absorb one elementary step's outcome into the episode accounting.
    fn absorb(
        result: &StepResult,
        x: &mut ProgressVector,
        n_targets: usize,
        episode_return: &mut f64,
        pending: &mut Option<PendingDecision>,
        done: &mut bool,
    ) {
        *episode_return += result.reward;
        if let Some(p) = pending.as_mut() {
            p.reward += result.reward;
        }
        for event in &result.events {
            let Event::TargetReached { rank } = event;
            let next = rank + 1;
            *x = if next >= n_targets {
                ProgressVector::absorbing(n_targets)
            } else {
                ProgressVector::one_hot(next, n_targets)
            };
        }
        *done |= result.done;
    }

    macro_rules! take_step {
        ($action:expr) => {{
            let result = step_and_integrate(&mut env, &mut map, $action, &mut rng);
            absorb(
                &result,
                &mut x,
                n_targets,
                &mut episode_return,
                &mut pending,
                &mut done,
            );
        }};
    }

    // One step of the discovery wander. Used whenever decisions cannot make
    // progress: an empty action set, a macro that went nowhere, or a map
    // whose every node is old news (stagnation).
    let mut wander_left = true;
    macro_rules! wander_step {
        () => {{
            if wander_turns == 0 && wander_run == 0 {
                wander_turns = rng.gen_range(0..=12);
                wander_run = rng.gen_range(8..=40);
                wander_left = rng.gen_bool(0.5);
            }
            if wander_turns > 0 {
                wander_turns -= 1;
                take_step!(if wander_left {
                    ElementaryAction::TurnLeft
                } else {
                    ElementaryAction::TurnRight
                });
            } else {
                let before = env.pose.position;
                take_step!(ElementaryAction::Forward);
                let after = env.pose.position;
                if (after.x - before.x).abs() + (after.y - before.y).abs() < 1e-12 {
                    // Walked into a wall: keep the run and rotate in place
                    // (consistently to one side) until a free heading
                    // appears. Sliding along walls like this is what finds
                    // door gaps.
                    wander_turns = 2;
                } else {
                    wander_run -= 1;
                }
            }
        }};
    }

    // Bootstrap: a full in-place scan; if it surfaced no objects, advance
    // and scan again.
    for _ in 0..24 {
        if done || env.at_step_cap() {
            break;
        }
        take_step!(ElementaryAction::TurnLeft);
    }
    if map.action_set().is_empty() && !done && !env.at_step_cap() {
        for _ in 0..8 {
            if done || env.at_step_cap() {
                break;
            }
            take_step!(ElementaryAction::Forward);
        }
        for _ in 0..24 {
            if done || env.at_step_cap() {
                break;
            }
            take_step!(ElementaryAction::TurnLeft);
        }
    }

    // Progress signature: anything here changing means the episode is still
    // yielding new information. While it is frozen for `stagnation_steps`
    // elementary steps, macro decisions have degenerated into shuttling
    // between known nodes and the agent wanders to discover instead.
    let mut progress_mark = (usize::MAX, usize::MAX, usize::MAX);
    let mut last_progress_step = env.steps;

    while !done && !env.at_step_cap() {
        // Waypoints are routing bookkeeping, not discoveries — only object
        // nodes count as progress here, or wandering would reset its own
        // clock with every breadcrumb it drops.
        let mark = (
            map.nodes().filter(|n| n.is_object()).count(),
            map.nodes().filter(|n| n.is_object() && n.explored).count(),
            env.task.next_index,
        );
        if mark != progress_mark {
            progress_mark = mark;
            last_progress_step = env.steps;
        }
        if env.steps - last_progress_step >= cfg.stagnation_steps {
            wander_step!();
            continue;
        }

        let ids = map.action_set();
        if ids.is_empty() {
            // Nothing to decide over; wander until an object appears or the
            // step cap ends the episode.
            wander_step!();
            continue;
        }

        // One snapshot per decision: Q inputs, the chosen action's record,
        // and the previous transition's successor candidates all share it.
        let candidates: Vec<Candidate> = ids
            .iter()
            .map(|&id| {
                let node = map.node(id).expect("action-set node exists");
                Candidate {
                    node: id,
                    unexplored: !node.explored,
                    patches: map
                        .sample_patches(id, cfg.arch.n_patches, &mut rng)
                        .expect("action-set nodes are objects"),
                }
            })
            .collect();

        if let Some(p) = pending.take() {
            let t = Transition {
                action_patches: p.patches,
                x: p.x,
                reward: p.reward,
                next_candidates: snapshot_candidates(&candidates, cfg.snapshot_cap, &mut rng),
                x_next: x.clone(),
                done: false,
            };
            oracle.note_transition(&t);
            transitions.push(t);
        }

        let chosen = match mode {
            Mode::Random => ids[rng.gen_range(0..ids.len())],
            Mode::Train | Mode::Eval => {
                let qvals = oracle.rate(&candidates, &x);
                let unexplored: Vec<bool> = candidates.iter().map(|c| c.unexplored).collect();
                let policy = PolicyConfig {
                    epsilon: match mode {
                        Mode::Train => cfg.policy.epsilon,
                        _ => 0.0,
                    },
                    ..cfg.policy
                };
                select_action(&qvals, &unexplored, &ids, current, &policy, &mut rng)
                    .expect("action set verified non-empty")
            }
        };
        macro_decisions += 1;
        chosen_log.push(chosen);
        let chosen_patches = candidates
            .iter()
            .find(|c| c.node == chosen)
            .expect("chosen node comes from the candidate list")
            .patches
            .clone();
        pending = Some(PendingDecision {
            patches: chosen_patches,
            x: x.clone(),
            reward: 0.0,
        });

        match execute_macro(
            &mut env,
            &mut map,
            MacroAction { target: chosen },
            cfg.macro_budget,
            &mut rng,
        ) {
            Ok(outcome) => {
                episode_return += outcome.reward_sum;
                if let Some(p) = pending.as_mut() {
                    p.reward += outcome.reward_sum;
                }
                for &rank in &outcome.targets_reached {
                    let next = rank + 1;
                    x = if next >= n_targets {
                        ProgressVector::absorbing(n_targets)
                    } else {
                        ProgressVector::one_hot(next, n_targets)
                    };
                }
                done |= outcome.episode_done;
                // A macro that consumed no steps (target already underfoot)
                // must not stall the episode clock: take one wander step,
                // which also re-runs target-contact detection and may
                // surface objects the current node occludes.
                if outcome.elementary_steps == 0 && !done && !env.at_step_cap() {
                    wander_step!();
                }
            }
            Err(_) => {
                // Unroutable target (islanded node). One wander step keeps
                // the clock moving and the new view may connect it.
                wander_step!();
            }
        }
        current = Some(chosen);
    }

    // `done` covers both completion and the step cap; only completion is a
    // terminal state for learning (a capped episode simply has no successor
    // candidates, which yields the same y = r target).
    let success = env.task.complete();
    if let Some(p) = pending.take() {
        let t = Transition {
            action_patches: p.patches,
            x: p.x,
            reward: p.reward,
            next_candidates: Vec::new(),
            x_next: x.clone(),
            done: success,
        };
        oracle.note_transition(&t);
        transitions.push(t);
    }

    match cfg.reward_mode {
        RewardMode::Immediate => {
            debug_assert!(!success || episode_return >= 1.0 - 1e-12)
        }
        RewardMode::Terminal => {
            debug_assert!(!success || (episode_return - 1.0).abs() < 1e-12)
        }
    }

    EpisodeOutput {
        stats: EpisodeStats {
            elementary_steps: env.steps,
            macro_decisions,
            episode_return,
            success,
            scene_seed: scene.seed,
            wall_time: started.elapsed().as_secs_f64(),
        },
        transitions,
        map,
        chosen: chosen_log,
    }
}

/// Train a network from scratch; `observer` sees the parameters after every
/// episode (training curves, snapshots). Returns the trained parameters and
/// one record per episode, warm-up included.
pub fn train_with_observer<F>(
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<(QNetworkParams, Vec<EpisodeRecord>), AgentError>
where
    F: FnMut(usize, &QNetworkParams, &EpisodeRecord),
{
    cfg.validate()?;
    let mut params = init_params(cfg.seed, cfg.arch)?;
    let mut target = params.sync_target();
    let mut adam = Adam::new(&cfg.arch);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let mut ws = Workspace::new(&cfg.arch);
    let mut batch_rng = rng_from(cfg.seed, "train-batches", 0);
    let mut updates = 0u64;
    let mut records = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let scene = generate_scene(cfg.train_scene_seed(episode), &cfg.scene_config())?;
        let episode_seed = derive_seed(cfg.seed, "train-episode", episode as u64);
        let warmup = episode < cfg.warmup_episodes;
        let output = if warmup {
            let mut oracle = ReplayFillOracle {
                replay: &mut replay,
            };
            run_episode(&scene, cfg, Mode::Random, episode_seed, &mut oracle)
        } else {
            let mut oracle = TrainOracle {
                cfg,
                params: &mut params,
                target: &mut target,
                adam: &mut adam,
                replay: &mut replay,
                ws: &mut ws,
                updates: &mut updates,
                rng: &mut batch_rng,
            };
            run_episode(&scene, cfg, Mode::Train, episode_seed, &mut oracle)
        };
        let record = EpisodeRecord {
            episode,
            mode: if warmup { Mode::Random } else { Mode::Train },
            epsilon: if warmup { 1.0 } else { cfg.policy.epsilon },
            stats: output.stats,
        };
        observer(episode, &params, &record);
        records.push(record);
    }
    Ok((params, records))
}

/// Train without observation.
pub fn train(cfg: &TrainConfig) -> Result<(QNetworkParams, Vec<EpisodeRecord>), AgentError> {
    train_with_observer(cfg, |_, _, _| {})
}

/// Aggregate evaluation results.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub records: Vec<EpisodeRecord>,
    pub median_steps: f64,
    pub mean_steps: f64,
    pub success_rate: f64,
}

fn summarize(records: Vec<EpisodeRecord>) -> EvalSummary {
    let steps: Vec<f64> = records
        .iter()
        .map(|r| r.stats.elementary_steps as f64)
        .collect();
    let successes = records.iter().filter(|r| r.stats.success).count();
    EvalSummary {
        median_steps: median(&steps),
        mean_steps: steps.iter().sum::<f64>() / steps.len() as f64,
        success_rate: successes as f64 / records.len() as f64,
        records,
    }
}

/// Midpoint median (mean of the two central order statistics when even).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Greedy evaluation on held-out scenes (seed pool disjoint from training —
/// asserted). One fresh scene per episode.
pub fn evaluate(
    params: &QNetworkParams,
    cfg: &TrainConfig,
    n_episodes: usize,
) -> Result<EvalSummary, AgentError> {
    run_policy_free_pool(cfg, n_episodes, |scene, ecfg, seed| {
        let mut oracle = FrozenOracle::new(params);
        (
            Mode::Eval,
            0.0,
            run_episode(scene, ecfg, Mode::Eval, seed, &mut oracle),
        )
    })
}

/// The uniform-random baseline on the same held-out scene pool.
pub fn random_baseline(cfg: &TrainConfig, n_episodes: usize) -> Result<EvalSummary, AgentError> {
    run_policy_free_pool(cfg, n_episodes, |scene, ecfg, seed| {
        (
            Mode::Random,
            1.0,
            run_episode(scene, ecfg, Mode::Random, seed, &mut NullOracle),
        )
    })
}

fn run_policy_free_pool<F>(
    cfg: &TrainConfig,
    n_episodes: usize,
    mut run: F,
) -> Result<EvalSummary, AgentError>
where
    F: FnMut(&Scene, &TrainConfig, u64) -> (Mode, f64, EpisodeOutput),
{
    cfg.validate()?;
    if n_episodes == 0 {
        return Err(AgentError::NoEpisodes);
    }
    let train_seeds: std::collections::BTreeSet<u64> =
        cfg.train_scene_seed_pool().into_iter().collect();
    let mut records = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let scene_seed = cfg.eval_scene_seed(i);
        assert!(
            !train_seeds.contains(&scene_seed),
            "evaluation scene seed collides with the training pool"
        );
        let scene = generate_scene(scene_seed, &cfg.scene_config())?;
        let episode_seed = derive_seed(cfg.seed, "eval-episode", i as u64);
        let (mode, epsilon, output) = run(&scene, cfg, episode_seed);
        records.push(EpisodeRecord {
            episode: i,
            mode,
            epsilon,
            stats: output.stats,
        });
    }
    Ok(summarize(records))
}
