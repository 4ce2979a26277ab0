//! Procedural floor-plan and scene generation.
//!
//! Rooms are laid out on a jittered grid; the first `rooms` cells in row-major
//! order are used, which keeps the used-cell adjacency graph connected. Doors
//! are punched into shared walls along a random spanning tree (plus a few
//! extras), so every room is reachable from every other.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::geom::{Rect, Segment, Vec2, TAU};
use crate::rng::rng_from;

use super::{FloorPlan, ObjectStyle, Pose, Scene, SceneConfig, SceneObject, SimError};

// Room dimensions are drawn per grid row/column.
const ROOM_MIN_DIM: f64 = 4.5;
const ROOM_MAX_DIM: f64 = 7.5;
const DOOR_WIDTH: f64 = 1.6;
const DOOR_CORNER_MARGIN: f64 = 0.8;
/// Probability of adding a door on a shared wall not in the spanning tree.
const EXTRA_DOOR_PROB: f64 = 0.3;
const OBJECT_WALL_MARGIN: f64 = 0.6;
const OBJECT_SPACING: f64 = 0.8;
const SPAWN_WALL_MARGIN: f64 = 0.8;
const PLACEMENT_TRIES: usize = 200;

/// Class-id layout of the palette in [`super::CLASS_PALETTE`]: classes 0..8
/// are saturated "cylinder" colors, 8..16 are textured. Target ranks map to
/// fixed classes so that "target k" looks the same in every scene.
fn target_class(style: ObjectStyle, rank: usize) -> u32 {
    match style {
        ObjectStyle::Cylinder => rank as u32,
        ObjectStyle::Textured => 8 + rank as u32,
    }
}

fn distractor_class(style: ObjectStyle, rng: &mut impl Rng) -> u32 {
    match style {
        ObjectStyle::Cylinder => rng.gen_range(3..8),
        ObjectStyle::Textured => rng.gen_range(11..16),
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Generate a scene deterministically from `(seed, cfg)`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, SimError> {
    if cfg.rooms < 2 {
        return Err(SimError::InvalidConfig(format!(
            "room count must be >= 2, got {}",
            cfg.rooms
        )));
    }
    if cfg.objects_per_room < 1 {
        return Err(SimError::InvalidConfig(
            "objects_per_room must be >= 1".into(),
        ));
    }
    if !(1..=3).contains(&cfg.n_targets) {
        return Err(SimError::InvalidConfig(format!(
            "n_targets must be in 1..=3, got {}",
            cfg.n_targets
        )));
    }
    if cfg.n_targets > cfg.rooms * cfg.objects_per_room {
        return Err(SimError::InvalidConfig(
            "more targets than objects".into(),
        ));
    }
    if !(0.0..=0.5).contains(&cfg.noise_amp) {
        return Err(SimError::InvalidConfig(format!(
            "noise_amp must be in [0, 0.5], got {}",
            cfg.noise_amp
        )));
    }

    let mut rng = rng_from(seed, "scene-gen", 0);

    // Grid layout: first `rooms` cells in row-major order are rooms.
    let gw = (cfg.rooms as f64).sqrt().ceil() as usize;
    let gh = cfg.rooms.div_ceil(gw);
    let used = |i: usize, j: usize| i * gw + j < cfg.rooms;

    let widths: Vec<f64> = (0..gw)
        .map(|_| rng.gen_range(ROOM_MIN_DIM..ROOM_MAX_DIM))
        .collect();
    let heights: Vec<f64> = (0..gh)
        .map(|_| rng.gen_range(ROOM_MIN_DIM..ROOM_MAX_DIM))
        .collect();
    let mut xs = vec![0.0];
    for w in &widths {
        xs.push(xs.last().unwrap() + w);
    }
    let mut ys = vec![0.0];
    for h in &heights {
        ys.push(ys.last().unwrap() + h);
    }

    let rooms: Vec<Rect> = (0..cfg.rooms)
        .map(|r| {
            let (i, j) = (r / gw, r % gw);
            Rect::new(Vec2::new(xs[j], ys[i]), Vec2::new(xs[j + 1], ys[i + 1]))
        })
        .collect();

    // Doors: spanning tree over the used-cell adjacency, plus random extras.
    // A boundary is identified by the cell on its greater side and an axis
    // flag: (i, j, false) = vertical boundary between (i,j-1) and (i,j),
    // (i, j, true) = horizontal boundary between (i-1,j) and (i,j).
    let mut shared: Vec<(usize, usize, bool)> = Vec::new();
    for i in 0..gh {
        for j in 0..gw {
            if !used(i, j) {
                continue;
            }
            if j + 1 < gw && used(i, j + 1) {
                shared.push((i, j + 1, false));
            }
            if i + 1 < gh && used(i + 1, j) {
                shared.push((i + 1, j, true));
            }
        }
    }
    shared.shuffle(&mut rng);
    let mut uf = UnionFind::new(cfg.rooms);
    let mut doored: Vec<(usize, usize, bool)> = Vec::new();
    for &(i, j, horizontal) in &shared {
        let (a, b) = if horizontal {
            ((i - 1) * gw + j, i * gw + j)
        } else {
            (i * gw + (j - 1), i * gw + j)
        };
        if uf.union(a, b) || rng.gen::<f64>() < EXTRA_DOOR_PROB {
            doored.push((i, j, horizontal));
        }
    }
    doored.sort();

    // Choose a gap position along each doored boundary.
    let mut doors: Vec<Segment> = Vec::new();
    let door_span = |lo: f64, hi: f64, rng: &mut crate::rng::DetRng| -> (f64, f64) {
        let m = DOOR_CORNER_MARGIN + DOOR_WIDTH / 2.0;
        let c = rng.gen_range(lo + m..hi - m);
        (c - DOOR_WIDTH / 2.0, c + DOOR_WIDTH / 2.0)
    };
    let mut door_gaps: std::collections::BTreeMap<(usize, usize, bool), (f64, f64)> =
        std::collections::BTreeMap::new();
    for &(i, j, horizontal) in &doored {
        let gap = if horizontal {
            door_span(xs[j], xs[j + 1], &mut rng)
        } else {
            door_span(ys[i], ys[i + 1], &mut rng)
        };
        door_gaps.insert((i, j, horizontal), gap);
        doors.push(if horizontal {
            Segment::new(Vec2::new(gap.0, ys[i]), Vec2::new(gap.1, ys[i]))
        } else {
            Segment::new(Vec2::new(xs[j], gap.0), Vec2::new(xs[j], gap.1))
        });
    }

    // Walls: every boundary with at least one used side, minus door gaps.
    let mut walls: Vec<Segment> = Vec::new();
    let add_wall = |walls: &mut Vec<Segment>, a: Vec2, b: Vec2| {
        if a.dist(b) > 1e-9 {
            walls.push(Segment::new(a, b));
        }
    };
    // Vertical boundaries at x = xs[j].
    for i in 0..gh {
        for j in 0..=gw {
            let left = j > 0 && used(i, j - 1);
            let right = j < gw && used(i, j);
            if !left && !right {
                continue;
            }
            let x = xs[j];
            let (y0, y1) = (ys[i], ys[i + 1]);
            match door_gaps.get(&(i, j, false)) {
                Some(&(g0, g1)) if left && right => {
                    add_wall(&mut walls, Vec2::new(x, y0), Vec2::new(x, g0));
                    add_wall(&mut walls, Vec2::new(x, g1), Vec2::new(x, y1));
                }
                _ => add_wall(&mut walls, Vec2::new(x, y0), Vec2::new(x, y1)),
            }
        }
    }
    // Horizontal boundaries at y = ys[i].
    for i in 0..=gh {
        for j in 0..gw {
            let below = i > 0 && used(i - 1, j);
            let above = i < gh && used(i, j);
            if !below && !above {
                continue;
            }
            let y = ys[i];
            let (x0, x1) = (xs[j], xs[j + 1]);
            match door_gaps.get(&(i, j, true)) {
                Some(&(g0, g1)) if below && above => {
                    add_wall(&mut walls, Vec2::new(x0, y), Vec2::new(g0, y));
                    add_wall(&mut walls, Vec2::new(g1, y), Vec2::new(x1, y));
                }
                _ => add_wall(&mut walls, Vec2::new(x0, y), Vec2::new(x1, y)),
            }
        }
    }

    let plan = FloorPlan {
        rooms,
        doors,
        walls,
    };

    // Objects: uniformly placed per room with wall and pairwise margins.
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut room_of: Vec<usize> = Vec::new();
    for (r, rect) in plan.rooms.iter().enumerate() {
        let inner = rect.inset(OBJECT_WALL_MARGIN);
        for _ in 0..cfg.objects_per_room {
            let mut placed = false;
            for _ in 0..PLACEMENT_TRIES {
                let p = Vec2::new(
                    rng.gen_range(inner.min.x..inner.max.x),
                    rng.gen_range(inner.min.y..inner.max.y),
                );
                if objects.iter().all(|o| o.position.dist(p) >= OBJECT_SPACING) {
                    objects.push(SceneObject {
                        id: objects.len() as u32,
                        class_id: u32::MAX, // assigned below
                        position: p,
                        appearance_seed: rng.gen(),
                        is_target: false,
                        target_rank: None,
                    });
                    room_of.push(r);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(SimError::InvalidConfig(
                    "could not place objects with the required spacing".into(),
                ));
            }
        }
    }

    // Targets: one per distinct room while rooms last, fixed class per rank.
    let mut room_order: Vec<usize> = (0..cfg.rooms).collect();
    room_order.shuffle(&mut rng);
    for rank in 0..cfg.n_targets {
        let room = room_order[rank % cfg.rooms];
        let mut candidates: Vec<usize> = (0..objects.len())
            .filter(|&k| room_of[k] == room && !objects[k].is_target)
            .collect();
        if candidates.is_empty() {
            candidates = (0..objects.len()).filter(|&k| !objects[k].is_target).collect();
        }
        let k = candidates[rng.gen_range(0..candidates.len())];
        objects[k].is_target = true;
        objects[k].target_rank = Some(rank);
        objects[k].class_id = target_class(cfg.style, rank);
    }
    for o in objects.iter_mut() {
        if !o.is_target {
            o.class_id = distractor_class(cfg.style, &mut rng);
        }
    }

    // Spawn pose: uniform in a random room, away from walls.
    let spawn_room = plan.rooms[rng.gen_range(0..cfg.rooms)].inset(SPAWN_WALL_MARGIN);
    let spawn = Pose::new(
        Vec2::new(
            rng.gen_range(spawn_room.min.x..spawn_room.max.x),
            rng.gen_range(spawn_room.min.y..spawn_room.max.y),
        ),
        rng.gen_range(0.0..TAU),
    );

    Ok(Scene {
        plan,
        objects,
        spawn,
        seed,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn door_connects(plan: &FloorPlan, door: &Segment) -> (usize, usize) {
        // A door is a gap in a shared wall; find the two rooms whose closed
        // boundary contains the door segment.
        let mut touching = Vec::new();
        for (r, rect) in plan.rooms.iter().enumerate() {
            let on_vertical = (door.a.x - door.b.x).abs() < 1e-9
                && ((door.a.x - rect.min.x).abs() < 1e-9 || (door.a.x - rect.max.x).abs() < 1e-9)
                && door.a.y.min(door.b.y) >= rect.min.y - 1e-9
                && door.a.y.max(door.b.y) <= rect.max.y + 1e-9;
            let on_horizontal = (door.a.y - door.b.y).abs() < 1e-9
                && ((door.a.y - rect.min.y).abs() < 1e-9 || (door.a.y - rect.max.y).abs() < 1e-9)
                && door.a.x.min(door.b.x) >= rect.min.x - 1e-9
                && door.a.x.max(door.b.x) <= rect.max.x + 1e-9;
            if on_vertical || on_horizontal {
                touching.push(r);
            }
        }
        assert_eq!(
            touching.len(),
            2,
            "door {:?} must lie on a wall shared by exactly two rooms",
            door
        );
        (touching[0], touching[1])
    }

    fn rooms_connected(plan: &FloorPlan) -> bool {
        let n = plan.rooms.len();
        let mut adj = vec![Vec::new(); n];
        for door in &plan.doors {
            let (a, b) = door_connects(plan, door);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![0usize];
        while let Some(r) = stack.pop() {
            if seen.insert(r) {
                stack.extend(&adj[r]);
            }
        }
        seen.len() == n
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        let a = generate_scene(7, &cfg).unwrap();
        let b = generate_scene(7, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(8, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn four_rooms_three_targets_in_distinct_rooms() {
        let cfg = SceneConfig {
            rooms: 4,
            n_targets: 3,
            ..SceneConfig::default()
        };
        let scene = generate_scene(1, &cfg).unwrap();
        assert_eq!(scene.plan.rooms.len(), 4);
        assert!(rooms_connected(&scene.plan));

        let targets: Vec<&SceneObject> =
            scene.objects.iter().filter(|o| o.is_target).collect();
        assert_eq!(targets.len(), 3);
        let rooms: BTreeSet<usize> = targets
            .iter()
            .map(|t| {
                scene
                    .plan
                    .rooms
                    .iter()
                    .position(|r| r.contains(t.position))
                    .unwrap()
            })
            .collect();
        assert_eq!(rooms.len(), 3, "targets must sit in distinct rooms");
        // Ranks 0..3 present exactly once and class ids fixed by rank.
        let mut ranks: Vec<usize> = targets.iter().map(|t| t.target_rank.unwrap()).collect();
        ranks.sort();
        assert_eq!(ranks, vec![0, 1, 2]);
        for t in &targets {
            assert_eq!(t.class_id, t.target_rank.unwrap() as u32);
        }
    }

    #[test]
    fn two_rooms_single_target() {
        let cfg = SceneConfig {
            rooms: 2,
            n_targets: 1,
            ..SceneConfig::default()
        };
        let scene = generate_scene(2, &cfg).unwrap();
        assert_eq!(scene.plan.rooms.len(), 2);
        assert!(rooms_connected(&scene.plan));
        assert_eq!(scene.objects.iter().filter(|o| o.is_target).count(), 1);
        assert_eq!(scene.target_sequence().len(), 1);
    }

    #[test]
    fn rooms_do_not_overlap_and_objects_are_inside() {
        for seed in 0..20u64 {
            let cfg = SceneConfig {
                rooms: 5,
                objects_per_room: 2,
                n_targets: 2,
                ..SceneConfig::default()
            };
            let scene = generate_scene(seed, &cfg).unwrap();
            let rooms = &scene.plan.rooms;
            for (i, a) in rooms.iter().enumerate() {
                for b in rooms.iter().skip(i + 1) {
                    let overlap_w =
                        (a.max.x.min(b.max.x) - a.min.x.max(b.min.x)).max(0.0);
                    let overlap_h =
                        (a.max.y.min(b.max.y) - a.min.y.max(b.min.y)).max(0.0);
                    assert!(
                        overlap_w * overlap_h < 1e-9,
                        "rooms {a:?} and {b:?} overlap"
                    );
                }
            }
            for o in &scene.objects {
                assert!(
                    scene.plan.contains(o.position),
                    "object {} outside free space",
                    o.id
                );
            }
            // Pairwise spacing.
            for (i, a) in scene.objects.iter().enumerate() {
                for b in scene.objects.iter().skip(i + 1) {
                    assert!(a.position.dist(b.position) >= OBJECT_SPACING - 1e-9);
                }
            }
            assert!(scene.plan.contains(scene.spawn.position));
            assert!(rooms_connected(&scene.plan));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_rooms = SceneConfig {
            rooms: 1,
            ..SceneConfig::default()
        };
        assert!(generate_scene(0, &bad_rooms).is_err());
        let bad_targets = SceneConfig {
            n_targets: 4,
            ..SceneConfig::default()
        };
        assert!(generate_scene(0, &bad_targets).is_err());
        let bad_noise = SceneConfig {
            noise_amp: 0.9,
            ..SceneConfig::default()
        };
        assert!(generate_scene(0, &bad_noise).is_err());
    }

    #[test]
    fn object_ids_are_dense_indices() {
        let scene = generate_scene(4, &SceneConfig::default()).unwrap();
        for (k, o) in scene.objects.iter().enumerate() {
            assert_eq!(o.id as usize, k);
        }
    }
}
