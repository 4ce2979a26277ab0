//! World simulation: procedural multi-room floor plans, a point agent with
//! discrete motion, object visibility with occlusion, and patch rendering.
//!
//! The world is deliberately desk-scale: rooms are axis-aligned rectangles
//! connected by door gaps, objects are colored disks, and the agent is a point
//! with a heading that moves in fixed increments. All randomness is seeded.

mod floorplan;
mod view;

pub use floorplan::generate_scene;
pub use view::{line_of_sight, render_patch, visible_objects, CLASS_PALETTE};

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geom::{normalize_angle, Rect, Segment, Vec2};
use crate::patch::Patch;
use crate::rng::rng_from;

// ---------------------------------------------------------------------------
// Tunables
// ---------------------------------------------------------------------------

/// Fixed elementary-motion and sensing parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Forward step length in meters.
    pub step_len: f64,
    /// Turn increment in radians (15 degrees).
    pub turn_angle: f64,
    /// Full field-of-view angle in radians (90 degrees).
    pub fov: f64,
    /// Maximum detection range in meters.
    pub detection_range: f64,
    /// Radius for reaching targets and for controller arrival.
    pub reach_radius: f64,
    /// Physical radius of object disks (used as occluders).
    pub occluder_radius: f64,
    /// Detections with more than this fraction of angular cover are dropped.
    pub occlusion_drop: f64,
    /// Hard per-episode cap on elementary steps.
    pub episode_step_cap: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            step_len: 0.25,
            turn_angle: 15.0_f64.to_radians(),
            fov: 90.0_f64.to_radians(),
            detection_range: 5.0,
            reach_radius: 0.5,
            occluder_radius: 0.3,
            occlusion_drop: 0.8,
            episode_step_cap: 5000,
        }
    }
}

/// Visual regime for distractor objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectStyle {
    /// Pure saturated colors; targets are trivially distinguishable.
    Cylinder,
    /// Mixed-palette textures (stripes/checker/noise); harder to tell apart.
    Textured,
}

impl ObjectStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectStyle::Cylinder => "cylinder",
            ObjectStyle::Textured => "textured",
        }
    }
}

impl std::str::FromStr for ObjectStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cylinder" => Ok(ObjectStyle::Cylinder),
            "textured" => Ok(ObjectStyle::Textured),
            other => Err(format!("unknown object style `{other}` (expected `cylinder` or `textured`)")),
        }
    }
}

/// Parameters of procedural scene generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub rooms: usize,
    pub objects_per_room: usize,
    pub n_targets: usize,
    pub style: ObjectStyle,
    /// Amplitude of the uniform pixel noise added to rendered patches.
    pub noise_amp: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            rooms: 4,
            objects_per_room: 2,
            n_targets: 1,
            style: ObjectStyle::Cylinder,
            noise_amp: 0.02,
        }
    }
}

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

/// Agent pose: position plus heading in [0, 2*pi), CCW from +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Pose {
            position,
            heading: normalize_angle(heading),
        }
    }
}

/// Static scene object: a colored disk, possibly one of the ordered targets.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub class_id: u32,
    pub position: Vec2,
    /// Per-instance texture jitter seed; stable across episodes.
    pub appearance_seed: u64,
    pub is_target: bool,
    /// Position of this object in the ordered target sequence.
    pub target_rank: Option<usize>,
}

/// Rooms, door gaps, and the wall segments that remain after cutting doors.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan {
    pub rooms: Vec<Rect>,
    pub doors: Vec<Segment>,
    pub walls: Vec<Segment>,
}

impl FloorPlan {
    /// True if `p` lies in free space (the closed union of room rectangles).
    pub fn contains(&self, p: Vec2) -> bool {
        self.rooms.iter().any(|r| r.contains(p))
    }
}

/// One fully generated world.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub plan: FloorPlan,
    pub objects: Vec<SceneObject>,
    pub spawn: Pose,
    pub seed: u64,
    pub config: SceneConfig,
}

impl Scene {
    /// Object ids of the targets, ordered by rank.
    pub fn target_sequence(&self) -> Vec<u32> {
        let mut targets: Vec<&SceneObject> =
            self.objects.iter().filter(|o| o.is_target).collect();
        targets.sort_by_key(|o| o.target_rank);
        targets.iter().map(|o| o.id).collect()
    }
}

// ---------------------------------------------------------------------------
// Task & stepping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// +1 the moment each target in the sequence is reached.
    Immediate,
    /// +1 only when the final target completes the whole sequence.
    Terminal,
}

impl RewardMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardMode::Immediate => "immediate",
            RewardMode::Terminal => "terminal",
        }
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "immediate" => Ok(RewardMode::Immediate),
            "terminal" => Ok(RewardMode::Terminal),
            other => Err(format!("unknown reward mode `{other}` (expected `immediate` or `terminal`)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementaryAction {
    Forward,
    TurnLeft,
    TurnRight,
}

/// Ordered-target progress within one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub target_sequence: Vec<u32>,
    /// Index of the next target to reach; equals `n_targets()` when complete.
    pub next_index: usize,
    pub reward_mode: RewardMode,
}

impl TaskState {
    pub fn new(target_sequence: Vec<u32>, reward_mode: RewardMode) -> Self {
        TaskState {
            target_sequence,
            next_index: 0,
            reward_mode,
        }
    }

    pub fn n_targets(&self) -> usize {
        self.target_sequence.len()
    }

    pub fn complete(&self) -> bool {
        self.next_index == self.target_sequence.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// The current target (by rank) came within reach.
    TargetReached { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// False only for a Forward blocked by a wall.
    pub moved: bool,
    pub reward: f64,
    pub events: Vec<Event>,
    pub done: bool,
}

/// One detected object as seen from the agent's pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub object_id: u32,
    pub class_id: u32,
    pub patch: Patch,
    pub range: f64,
    /// Bearing relative to the agent heading, in (-pi, pi].
    pub bearing: f64,
    /// Fraction of the object's angular extent covered by nearer objects.
    pub occlusion_fraction: f64,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
}

/// Pure motion model: Forward advances `step_len` unless the swept segment
/// touches a wall; turns rotate in place. Returns the new pose and whether it
/// actually changed position/heading.
pub fn apply_motion(
    plan: &FloorPlan,
    pose: &Pose,
    action: ElementaryAction,
    params: &SimParams,
) -> (Pose, bool) {
    match action {
        ElementaryAction::Forward => {
            let dir = Vec2::from_polar(1.0, pose.heading);
            let target = pose.position + dir * params.step_len;
            let blocked = plan
                .walls
                .iter()
                .any(|w| crate::geom::segments_intersect(pose.position, target, w.a, w.b));
            if blocked {
                (*pose, false)
            } else {
                (Pose::new(target, pose.heading), true)
            }
        }
        ElementaryAction::TurnLeft => (
            Pose::new(pose.position, pose.heading + params.turn_angle),
            true,
        ),
        ElementaryAction::TurnRight => (
            Pose::new(pose.position, pose.heading - params.turn_angle),
            true,
        ),
    }
}

// ---------------------------------------------------------------------------
// Episode environment
// ---------------------------------------------------------------------------

/// Mutable per-episode environment handle: pose, task progress, step counter,
/// and the episode-seeded pixel-noise stream.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    pub scene: &'a Scene,
    pub params: SimParams,
    pub pose: Pose,
    pub task: TaskState,
    pub steps: u64,
    episode_seed: u64,
    seen_objects: BTreeSet<u32>,
    trail: Vec<Vec2>,
}

impl<'a> Env<'a> {
    pub fn new(
        scene: &'a Scene,
        params: SimParams,
        reward_mode: RewardMode,
        episode_seed: u64,
    ) -> Self {
        Env {
            scene,
            params,
            pose: scene.spawn,
            task: TaskState::new(scene.target_sequence(), reward_mode),
            steps: 0,
            episode_seed,
            seen_objects: BTreeSet::new(),
            trail: vec![scene.spawn.position],
        }
    }

    pub fn at_step_cap(&self) -> bool {
        self.steps >= self.params.episode_step_cap
    }

    /// Distinct object ids returned by `observe` so far this episode.
    pub fn seen_object_ids(&self) -> &BTreeSet<u32> {
        &self.seen_objects
    }

    /// Every position the agent has occupied, in order (spawn included).
    pub fn trail(&self) -> &[Vec2] {
        &self.trail
    }

    /// Execute one elementary action: move, then fire reward events for every
    /// consecutive current target now within reach.
    pub fn step(&mut self, action: ElementaryAction) -> StepResult {
        let (pose, moved) = apply_motion(&self.scene.plan, &self.pose, action, &self.params);
        self.pose = pose;
        self.steps += 1;
        self.trail.push(pose.position);

        let mut reward = 0.0;
        let mut events = Vec::new();
        while self.task.next_index < self.task.n_targets() {
            let rank = self.task.next_index;
            let tid = self.task.target_sequence[rank] as usize;
            let tpos = self.scene.objects[tid].position;
            if self.pose.position.dist(tpos) <= self.params.reach_radius {
                events.push(Event::TargetReached { rank });
                match self.task.reward_mode {
                    RewardMode::Immediate => reward += 1.0,
                    RewardMode::Terminal => {
                        if rank + 1 == self.task.n_targets() {
                            reward += 1.0;
                        }
                    }
                }
                self.task.next_index += 1;
            } else {
                break;
            }
        }

        StepResult {
            moved,
            reward,
            events,
            done: self.task.complete(),
        }
    }

    /// Detect all currently visible objects, rendering a noisy patch for each.
    /// The noise stream is seeded by (episode seed, step index), so a given
    /// step always observes the same pixels.
    pub fn observe(&mut self) -> Vec<Detection> {
        let mut noise_rng = rng_from(self.episode_seed, "pixel-noise", self.steps);
        let dets = visible_objects(
            self.scene,
            &self.pose,
            &self.params,
            self.scene.config.noise_amp,
            &mut noise_rng,
        );
        for d in &dets {
            self.seen_objects.insert(d.object_id);
        }
        dets
    }
}
