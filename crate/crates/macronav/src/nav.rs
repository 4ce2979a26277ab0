//! Macro-action execution: A* over the map, plus the aim-and-go controller
//! that turns a node path into elementary actions.
//!
//! A macro action ("go to that object node") plans a shortest node path from
//! the node nearest the agent, drives leg by leg, and replans whenever a
//! waypoint is reached — newly integrated nodes can shorten the remainder.
//! Execution is bounded by an elementary-step budget and aborts after a run
//! of blocked forward steps, so a macro always terminates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::geom::{wrap_to_pi, Vec2};
use crate::rng::DetRng;
use crate::sim::{ElementaryAction, Env, Event, Pose, SimParams, StepResult};
use crate::topomap::{NodeId, TopoMap};

#[derive(Debug, thiserror::Error)]
pub enum NavError {
    #[error("no path from node {from} to node {to}")]
    NoPath { from: NodeId, to: NodeId },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("cannot navigate on an empty map")]
    EmptyMap,
}

/// A macro action: navigate to an object node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacroAction {
    pub target: NodeId,
}

/// What one macro execution did.
#[derive(Debug, Clone, Default)]
pub struct MacroOutcome {
    pub elementary_steps: u64,
    pub reward_sum: f64,
    /// The agent arrived at the target node.
    pub reached: bool,
    /// Ranks of task targets contacted during the macro, in order.
    pub targets_reached: Vec<usize>,
    pub budget_exhausted: bool,
    /// The episode ended mid-macro (task complete or step cap).
    pub episode_done: bool,
}

/// One controller decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerDecision {
    Arrived,
    Act(ElementaryAction),
}

/// Min-queue entry ordered by f-value, ties broken by smaller node id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OpenEntry {
    f: f64,
    id: NodeId,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* with the straight-line heuristic. Returns the node path, its cost, and
/// the f-value of every expanded node (the trace backs the admissibility
/// check in tests: no expansion may exceed the final cost).
fn astar_traced(
    map: &TopoMap,
    from: NodeId,
    to: NodeId,
) -> Result<(Vec<NodeId>, f64, Vec<f64>), NavError> {
    if map.node(from).is_none() {
        return Err(NavError::UnknownNode(from));
    }
    let goal = map.node(to).ok_or(NavError::UnknownNode(to))?.position;

    let h = |id: NodeId| map.node(id).expect("known node").position.dist(goal);
    let mut g: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut closed: std::collections::BTreeSet<NodeId> = Default::default();
    let mut open = BinaryHeap::new();
    let mut trace = Vec::new();

    g.insert(from, 0.0);
    open.push(std::cmp::Reverse(OpenEntry {
        f: h(from),
        id: from,
    }));

    while let Some(std::cmp::Reverse(OpenEntry { f, id })) = open.pop() {
        if !closed.insert(id) {
            continue; // stale duplicate
        }
        trace.push(f);
        if id == to {
            let mut path = vec![to];
            let mut cur = to;
            while let Some(&p) = parent.get(&cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Ok((path, g[&to], trace));
        }
        for &next in map.neighbors(id) {
            if closed.contains(&next) {
                continue;
            }
            let cand = g[&id] + map.edge_weight(id, next).expect("adjacent edge");
            if g.get(&next).map_or(true, |&cur| cand < cur) {
                g.insert(next, cand);
                parent.insert(next, id);
                open.push(std::cmp::Reverse(OpenEntry {
                    f: cand + h(next),
                    id: next,
                }));
            }
        }
    }
    Err(NavError::NoPath { from, to })
}

/// Shortest node path from `from` to `to` by summed edge weights.
pub fn shortest_path(map: &TopoMap, from: NodeId, to: NodeId) -> Result<Vec<NodeId>, NavError> {
    astar_traced(map, from, to).map(|(path, _, _)| path)
}

/// Sum of edge weights along a node path; `None` if some consecutive pair is
/// not connected.
pub fn path_cost(map: &TopoMap, path: &[NodeId]) -> Option<f64> {
    path.windows(2)
        .map(|w| map.edge_weight(w[0], w[1]))
        .sum()
}

/// The map node closest to the agent; ties go to the smaller id.
pub fn nearest_node(map: &TopoMap, pose: &Pose) -> Result<NodeId, NavError> {
    map.nodes()
        .map(|n| (n.position.dist(pose.position), n.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .map(|(_, id)| id)
        .ok_or(NavError::EmptyMap)
}

/// Aim-and-go: arrive within `reach_radius`, turn while the bearing error
/// exceeds half a turn increment (so the best reachable heading is used),
/// otherwise step forward. Positive bearing error means the waypoint is to
/// the left.
pub fn controller_step(pose: &Pose, waypoint: Vec2, params: &SimParams) -> ControllerDecision {
    let to = waypoint - pose.position;
    if to.norm() <= params.reach_radius {
        return ControllerDecision::Arrived;
    }
    let err = wrap_to_pi(to.angle() - pose.heading);
    if err.abs() > params.turn_angle / 2.0 {
        if err > 0.0 {
            ControllerDecision::Act(ElementaryAction::TurnLeft)
        } else {
            ControllerDecision::Act(ElementaryAction::TurnRight)
        }
    } else {
        ControllerDecision::Act(ElementaryAction::Forward)
    }
}

/// Step the environment and fold the outcome into the map: drop a waypoint
/// if the agent is far from all nodes, re-anchor, integrate the new frame's
/// detections, and update explored flags. This is the one pipeline every
/// elementary action goes through.
pub fn step_and_integrate(
    env: &mut Env,
    map: &mut TopoMap,
    action: ElementaryAction,
    rng: &mut DetRng,
) -> StepResult {
    let result = env.step(action);
    map.add_waypoint_if_needed(&env.pose);
    map.note_visit(&env.pose);
    let dets = env.observe();
    let plan = &env.scene.plan;
    map.integrate_detections(&env.pose, &dets, plan, rng);
    map.mark_explored(&env.pose);
    result
}

/// How many consecutive blocked Forward actions abort a macro.
const BLOCKED_ABORT: u32 = 10;

/// Execute a macro action: plan from the nearest node to the target and
/// drive the path, replanning at every waypoint arrival. Stops on target
/// arrival, episode end, step-cap, budget exhaustion, or a run of blocked
/// forward steps (wedged against a wall).
pub fn execute_macro(
    env: &mut Env,
    map: &mut TopoMap,
    action: MacroAction,
    budget: u64,
    rng: &mut DetRng,
) -> Result<MacroOutcome, NavError> {
    if map.node(action.target).is_none() {
        return Err(NavError::UnknownNode(action.target));
    }
    let mut out = MacroOutcome::default();
    let mut blocked_run = 0u32;

    'replan: loop {
        let start = nearest_node(map, &env.pose)?;
        let path = shortest_path(map, start, action.target)?;

        // Skip leading nodes already within reach; without this, replanning
        // at a just-arrived node would loop without consuming steps.
        let mut legs = path
            .into_iter()
            .skip_while(|&n| {
                n != action.target
                    && map.node(n).expect("path node").position.dist(env.pose.position)
                        <= env.params.reach_radius
            })
            .peekable();

        let Some(&first) = legs.peek() else {
            unreachable!("path always contains the target");
        };
        let _ = first;

        for leg in legs {
            let waypoint = map.node(leg).expect("path node").position;
            loop {
                match controller_step(&env.pose, waypoint, &env.params) {
                    ControllerDecision::Arrived => {
                        if leg == action.target {
                            out.reached = true;
                            return Ok(out);
                        }
                        continue 'replan;
                    }
                    ControllerDecision::Act(a) => {
                        if out.elementary_steps >= budget {
                            out.budget_exhausted = true;
                            return Ok(out);
                        }
                        let result = step_and_integrate(env, map, a, rng);
                        out.elementary_steps += 1;
                        out.reward_sum += result.reward;
                        for ev in &result.events {
                            let Event::TargetReached { rank } = ev;
                            out.targets_reached.push(*rank);
                        }
                        if result.done || env.at_step_cap() {
                            out.episode_done = true;
                            // Arrival check so a macro that ends the episode
                            // on its target still reports `reached`.
                            out.reached = env.pose.position.dist(
                                map.node(action.target).expect("target").position,
                            ) <= env.params.reach_radius;
                            return Ok(out);
                        }
                        if a == ElementaryAction::Forward && !result.moved {
                            blocked_run += 1;
                            if blocked_run >= BLOCKED_ABORT {
                                return Ok(out); // wedged: reached stays false
                            }
                        } else {
                            blocked_run = 0;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use crate::patch::Patch;
    use crate::rng::rng_from;
    use crate::sim::{
        FloorPlan, ObjectStyle, RewardMode, Scene, SceneConfig, SceneObject,
    };
    use crate::topomap::MapParams;
    use rand::Rng;
    use std::sync::Arc;

    fn grid_free_map(positions: &[(f64, f64)], edges: &[(u32, u32)]) -> TopoMap {
        let mut map = TopoMap::new(MapParams::default());
        for &(x, y) in positions {
            map.add_waypoint_node(Vec2::new(x, y));
        }
        for &(a, b) in edges {
            map.add_edge(NodeId::from_raw(a), NodeId::from_raw(b)).unwrap();
        }
        map
    }

    /// Plain Dijkstra, used as the oracle for A*.
    fn dijkstra_cost(map: &TopoMap, from: NodeId, to: NodeId) -> Option<f64> {
        use std::collections::BTreeMap;
        let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut done: std::collections::BTreeSet<NodeId> = Default::default();
        dist.insert(from, 0.0);
        loop {
            let next = dist
                .iter()
                .filter(|(id, _)| !done.contains(id))
                .min_by(|a, b| a.1.total_cmp(b.1).then_with(|| a.0.cmp(b.0)))
                .map(|(&id, &d)| (id, d));
            let Some((u, du)) = next else { return None };
            if u == to {
                return Some(du);
            }
            done.insert(u);
            for &v in map.neighbors(u) {
                let cand = du + map.edge_weight(u, v).unwrap();
                if dist.get(&v).map_or(true, |&cur| cand < cur) {
                    dist.insert(v, cand);
                }
            }
        }
    }

    #[test]
    fn chain_path_in_order() {
        let map = grid_free_map(
            &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)],
            &[(0, 1), (1, 2)],
        );
        let path = shortest_path(&map, NodeId::from_raw(0), NodeId::from_raw(2)).unwrap();
        let ids: Vec<u32> = path.iter().map(|n| n.raw()).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!((path_cost(&map, &path).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_and_error_cases() {
        let map = grid_free_map(&[(0.0, 0.0), (5.0, 5.0)], &[]);
        // Self-path.
        let p = shortest_path(&map, NodeId::from_raw(0), NodeId::from_raw(0)).unwrap();
        assert_eq!(p.len(), 1);
        // Disconnected.
        assert!(matches!(
            shortest_path(&map, NodeId::from_raw(0), NodeId::from_raw(1)),
            Err(NavError::NoPath { .. })
        ));
        // Unknown ids.
        assert!(matches!(
            shortest_path(&map, NodeId::from_raw(9), NodeId::from_raw(0)),
            Err(NavError::UnknownNode(_))
        ));
        assert!(matches!(
            shortest_path(&map, NodeId::from_raw(0), NodeId::from_raw(9)),
            Err(NavError::UnknownNode(_))
        ));
    }

    #[test]
    fn equal_cost_paths_resolve_deterministically() {
        // Diamond: 0 -> {1, 2} -> 3, both routes identical length.
        let map = grid_free_map(
            &[(0.0, 0.0), (1.0, 1.0), (1.0, -1.0), (2.0, 0.0)],
            &[(0, 1), (0, 2), (1, 3), (2, 3)],
        );
        let a = shortest_path(&map, NodeId::from_raw(0), NodeId::from_raw(3)).unwrap();
        for _ in 0..10 {
            let b = shortest_path(&map, NodeId::from_raw(0), NodeId::from_raw(3)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn astar_matches_dijkstra_on_random_geometric_graphs() {
        let mut rng = rng_from(2024, "astar-oracle", 0);
        let mut solved = 0;
        for case in 0..100 {
            let n = rng.gen_range(5..25);
            let positions: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0)))
                .collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let (xi, yi) = positions[i];
                    let (xj, yj) = positions[j];
                    let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                    if d < 6.0 {
                        edges.push((i as u32, j as u32));
                    }
                }
            }
            let map = grid_free_map(&positions, &edges);
            let from = NodeId::from_raw(rng.gen_range(0..n as u32));
            let to = NodeId::from_raw(rng.gen_range(0..n as u32));
            let oracle = dijkstra_cost(&map, from, to);
            match (astar_traced(&map, from, to), oracle) {
                (Ok((path, cost, trace)), Some(want)) => {
                    assert_eq!(cost, want, "case {case}: cost mismatch");
                    assert_eq!(path_cost(&map, &path), Some(cost));
                    // Admissibility sanity: no expanded f-value exceeds the
                    // final cost (tolerance for float noise).
                    for f in trace {
                        assert!(f <= cost + 1e-9, "case {case}: expanded f {f} > cost {cost}");
                    }
                    solved += 1;
                }
                (Err(NavError::NoPath { .. }), None) => {}
                (got, want) => panic!("case {case}: {got:?} vs oracle {want:?}"),
            }
        }
        assert!(solved >= 50, "too few solvable cases: {solved}");
    }

    #[test]
    fn nearest_node_rules() {
        let map = grid_free_map(&[(0.0, 0.0)], &[]);
        let p = Pose::new(Vec2::new(3.0, 3.0), 0.0);
        assert_eq!(nearest_node(&map, &p).unwrap(), NodeId::from_raw(0));

        // Equidistant pair: smaller id wins.
        let map = grid_free_map(&[(1.0, 0.0), (-1.0, 0.0)], &[]);
        let p = Pose::new(Vec2::new(0.0, 5.0), 0.0);
        assert_eq!(nearest_node(&map, &p).unwrap(), NodeId::from_raw(0));

        let empty = TopoMap::new(MapParams::default());
        assert!(matches!(nearest_node(&empty, &p), Err(NavError::EmptyMap)));
    }

    #[test]
    fn nearest_node_matches_scan_oracle() {
        let mut rng = rng_from(7, "nearest-oracle", 0);
        for _ in 0..100 {
            let n = rng.gen_range(1..30);
            let positions: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let map = grid_free_map(&positions, &[]);
            let p = Pose::new(
                Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
                0.0,
            );
            let got = nearest_node(&map, &p).unwrap();
            // Exhaustive scan, written independently of the implementation.
            let mut best = (f64::INFINITY, u32::MAX);
            for (i, &(x, y)) in positions.iter().enumerate() {
                let d = Vec2::new(x, y).dist(p.position);
                if d < best.0 {
                    best = (d, i as u32);
                }
            }
            assert_eq!(got.raw(), best.1);
        }
    }

    #[test]
    fn controller_decisions() {
        let params = SimParams::default();
        let at = |x: f64, y: f64, heading: f64| Pose::new(Vec2::new(x, y), heading);

        // Dead ahead, 3 m: forward.
        assert_eq!(
            controller_step(&at(0.0, 0.0, 0.0), Vec2::new(3.0, 0.0), &params),
            ControllerDecision::Act(ElementaryAction::Forward)
        );
        // Bearing +90 degrees: turn left (positive bearing convention).
        assert_eq!(
            controller_step(&at(0.0, 0.0, 0.0), Vec2::new(0.0, 3.0), &params),
            ControllerDecision::Act(ElementaryAction::TurnLeft)
        );
        // Bearing -90 degrees: turn right.
        assert_eq!(
            controller_step(&at(0.0, 0.0, 0.0), Vec2::new(0.0, -3.0), &params),
            ControllerDecision::Act(ElementaryAction::TurnRight)
        );
        // Within reach: arrived.
        assert_eq!(
            controller_step(&at(0.0, 0.0, 0.0), Vec2::new(0.3, 0.0), &params),
            ControllerDecision::Arrived
        );
        // Error just under half a turn increment: forward, not turn.
        let small = params.turn_angle * 0.49;
        let wp = Vec2::from_polar(3.0, small);
        assert_eq!(
            controller_step(&at(0.0, 0.0, 0.0), wp, &params),
            ControllerDecision::Act(ElementaryAction::Forward)
        );
    }

    #[test]
    fn forward_legs_strictly_shrink_distance() {
        let params = SimParams::default();
        let plan = FloorPlan {
            rooms: vec![Rect::new(Vec2::new(-50.0, -50.0), Vec2::new(50.0, 50.0))],
            doors: vec![],
            walls: vec![],
        };
        let mut rng = rng_from(5, "controller-progress", 0);
        for _ in 0..50 {
            let mut pose = Pose::new(
                Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)),
                rng.gen_range(0.0..std::f64::consts::TAU),
            );
            let wp = Vec2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let mut guard = 0;
            loop {
                match controller_step(&pose, wp, &params) {
                    ControllerDecision::Arrived => break,
                    ControllerDecision::Act(a) => {
                        let before = pose.position.dist(wp);
                        let (next, moved) = crate::sim::apply_motion(&plan, &pose, a, &params);
                        assert!(moved);
                        if a == ElementaryAction::Forward {
                            assert!(
                                next.position.dist(wp) < before,
                                "forward failed to make progress"
                            );
                        }
                        pose = next;
                    }
                }
                guard += 1;
                assert!(guard < 2000, "controller failed to converge");
            }
        }
    }

    /// Hand-built single-room scene: agent at (1,1) facing +x, one target
    /// object dead ahead at (5,1).
    fn corridor_scene() -> Scene {
        Scene {
            plan: FloorPlan {
                rooms: vec![Rect::new(Vec2::new(0.0, 0.0), Vec2::new(10.0, 2.0))],
                doors: vec![],
                walls: vec![],
            },
            objects: vec![SceneObject {
                id: 0,
                class_id: 0,
                position: Vec2::new(5.0, 1.0),
                appearance_seed: 99,
                is_target: true,
                target_rank: Some(0),
            }],
            spawn: Pose::new(Vec2::new(1.0, 1.0), 0.0),
            seed: 0,
            config: SceneConfig {
                rooms: 1,
                objects_per_room: 1,
                n_targets: 1,
                style: ObjectStyle::Cylinder,
                noise_amp: 0.0,
            },
        }
    }

    #[test]
    fn straight_corridor_macro_step_count_and_reward() {
        let scene = corridor_scene();
        let mut env = Env::new(&scene, SimParams::default(), RewardMode::Immediate, 7);
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(7, "macro", 0);

        // Bootstrap: waypoint at spawn, integrate the visible object.
        map.add_waypoint_if_needed(&env.pose);
        map.note_visit(&env.pose);
        let dets = env.observe();
        assert_eq!(dets.len(), 1);
        map.integrate_detections(&env.pose, &dets, &scene.plan, &mut rng);
        let target = map.action_set()[0];

        let out = execute_macro(
            &mut env,
            &mut map,
            MacroAction { target },
            500,
            &mut rng,
        )
        .unwrap();

        // Closed form: spawn is 4.0 m from the object, arrival triggers at
        // reach_radius 0.5, each forward covers 0.25 -> ceil(3.5/0.25) = 14
        // forward steps, no initial turn (dead ahead).
        assert_eq!(out.elementary_steps, 14);
        assert!(out.reached);
        assert!(out.episode_done);
        assert_eq!(out.reward_sum, 1.0);
        assert_eq!(out.targets_reached, vec![0]);
        assert_eq!(env.steps, 14);
    }

    #[test]
    fn macro_budget_is_respected() {
        let scene = corridor_scene();
        let mut env = Env::new(&scene, SimParams::default(), RewardMode::Immediate, 7);
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(7, "macro", 1);
        map.add_waypoint_if_needed(&env.pose);
        map.note_visit(&env.pose);
        let dets = env.observe();
        map.integrate_detections(&env.pose, &dets, &scene.plan, &mut rng);
        let target = map.action_set()[0];

        let out = execute_macro(&mut env, &mut map, MacroAction { target }, 5, &mut rng).unwrap();
        assert!(out.budget_exhausted);
        assert_eq!(out.elementary_steps, 5);
        assert!(!out.reached);
        assert_eq!(out.reward_sum, 0.0);
    }

    #[test]
    fn wedged_macro_aborts_after_blocked_run() {
        // A wall right across the only route; the map edge jumps it (edges
        // come from sight lines, walls can still block walking).
        let mut scene = corridor_scene();
        scene.plan.walls.push(crate::geom::Segment::new(
            Vec2::new(3.0, 0.0),
            Vec2::new(3.0, 2.0),
        ));
        let mut env = Env::new(&scene, SimParams::default(), RewardMode::Immediate, 7);
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(7, "macro", 2);
        let a = map.add_waypoint_node(Vec2::new(1.0, 1.0));
        let b = map.add_object_node(Vec2::new(5.0, 1.0), 0, Arc::new(Patch::zeros()));
        map.add_edge(a, b).unwrap();
        map.note_visit(&env.pose);

        let out = execute_macro(&mut env, &mut map, MacroAction { target: b }, 500, &mut rng)
            .unwrap();
        assert!(!out.reached);
        assert!(!out.budget_exhausted);
        // 8 free forwards to the wall, then the blocked run aborts.
        assert!(out.elementary_steps < 30, "{}", out.elementary_steps);
    }

    #[test]
    fn unknown_target_and_unreachable_target_error() {
        let scene = corridor_scene();
        let mut env = Env::new(&scene, SimParams::default(), RewardMode::Immediate, 7);
        let mut rng = rng_from(7, "macro", 3);

        let mut map = TopoMap::new(MapParams::default());
        map.add_waypoint_node(Vec2::new(1.0, 1.0));
        let ghost = NodeId::from_raw(42);
        assert!(matches!(
            execute_macro(&mut env, &mut map, MacroAction { target: ghost }, 10, &mut rng),
            Err(NavError::UnknownNode(_))
        ));

        // Island object node with no edges: planner reports no path.
        let island = map.add_object_node(Vec2::new(8.0, 1.0), 3, Arc::new(Patch::zeros()));
        let got = execute_macro(&mut env, &mut map, MacroAction { target: island }, 10, &mut rng);
        assert!(matches!(got, Err(NavError::NoPath { .. })));
        assert_eq!(env.steps, 0, "failed planning must consume no steps");
    }

    #[test]
    fn macro_to_current_node_returns_immediately() {
        let scene = corridor_scene();
        let mut env = Env::new(&scene, SimParams::default(), RewardMode::Immediate, 7);
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(7, "macro", 4);
        // Object node right at the spawn (within reach).
        let node = map.add_object_node(Vec2::new(1.2, 1.0), 5, Arc::new(Patch::zeros()));
        let out = execute_macro(&mut env, &mut map, MacroAction { target: node }, 500, &mut rng)
            .unwrap();
        assert!(out.reached);
        assert_eq!(out.elementary_steps, 0);
    }

    /// Full pipeline on generated scenes: macros to every discovered object,
    /// checking the outcome bookkeeping stays consistent.
    #[test]
    fn macros_on_generated_scenes_stay_consistent() {
        for seed in [3u64, 15, 27] {
            let scene = crate::sim::generate_scene(seed, &SceneConfig::default()).unwrap();
            let mut env = Env::new(&scene, SimParams::default(), RewardMode::Immediate, seed);
            let mut map = TopoMap::new(MapParams::default());
            let mut rng = rng_from(seed, "macro-fuzz", 0);

            map.add_waypoint_if_needed(&env.pose);
            map.note_visit(&env.pose);
            let dets = env.observe();
            map.integrate_detections(&env.pose, &dets, &scene.plan, &mut rng);

            // A full spin to seed the map.
            for _ in 0..24 {
                step_and_integrate(&mut env, &mut map, ElementaryAction::TurnLeft, &mut rng);
            }

            let mut total_steps = env.steps;
            for target in map.action_set() {
                let before = env.steps;
                match execute_macro(
                    &mut env,
                    &mut map,
                    MacroAction { target },
                    500,
                    &mut rng,
                ) {
                    Ok(out) => {
                        assert!(out.elementary_steps <= 500);
                        assert_eq!(env.steps - before, out.elementary_steps);
                        total_steps = env.steps;
                        if out.episode_done {
                            break;
                        }
                        if out.reached {
                            let d = env
                                .pose
                                .position
                                .dist(map.node(target).unwrap().position);
                            assert!(d <= env.params.reach_radius + 1e-9);
                        }
                    }
                    Err(NavError::NoPath { .. }) => {}
                    Err(e) => panic!("seed {seed}: unexpected {e}"),
                }
            }
            let _ = total_steps;
        }
    }
}
