//! The incrementally grown topological map.
//!
//! Nodes are either *objects* (detected things, each holding a bounded set of
//! image patches and an explored flag) or *waypoints* (breadcrumbs dropped at
//! agent poses to keep the graph walkable). Edges are unweighted pairs; the
//! weight of an edge is always the current Euclidean distance between its
//! endpoints, so it stays exact even when a node's position estimate is
//! refined by later detections.
//!
//! Edges come from three sources:
//! * two objects co-visible in one frame with wall-free line of sight,
//! * the anchor node the agent currently stands at, to every object it
//!   integrates with line of sight from that anchor (this is what makes
//!   freshly discovered objects reachable by the planner), and
//! * physical traversal from one node's vicinity to another's.
//!
//! Nodes and edges are never removed; explored flags are set once and never
//! cleared.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::geom::Vec2;
use crate::patch::{Patch, PATCH_LEN};
use crate::rng::DetRng;
use crate::sim::{line_of_sight, Detection, FloorPlan, Pose};

/// Opaque node identifier. Ids are assigned sequentially and never reused
/// within a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn raw(self) -> u32 {
        self.0
    }

    /// For tests and parsers that need to name nodes directly.
    pub fn from_raw(raw: u32) -> Self {
        NodeId(raw)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Object,
    Waypoint,
}

/// One map node. Patches are reference-counted so that replay transitions
/// can hold the same pixel data without copying it.
#[derive(Debug, Clone)]
pub struct MapNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: Vec2,
    pub patches: Vec<Arc<Patch>>,
    pub explored: bool,
    /// Ground-truth environment id (Object nodes only).
    pub object_id: Option<u32>,
    /// How many detections have been folded into `position` (running mean).
    /// Transient bookkeeping: not serialized, excluded from equality.
    detections: u32,
}

impl MapNode {
    pub fn is_object(&self) -> bool {
        self.kind == NodeKind::Object
    }
}

/// Geometry thresholds for map maintenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MapParams {
    /// Detections without a ground-truth id match merge into an existing
    /// object node within this distance.
    pub merge_radius: f64,
    /// Maximum patches stored per object node; appends beyond it evict a
    /// uniformly random stored patch.
    pub patch_cap: usize,
    /// A waypoint is dropped when every existing node is farther than this.
    pub waypoint_spacing: f64,
    /// Object nodes within this distance of the agent become explored.
    pub explored_radius: f64,
    /// The agent "visits" a node (re-anchoring itself there) within this
    /// distance; matches the controller's arrival distance.
    pub visit_radius: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            merge_radius: 0.3,
            patch_cap: 32,
            waypoint_spacing: 2.0,
            explored_radius: 1.0,
            visit_radius: 0.5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not an object node")]
    NotAnObject(NodeId),
    #[error("map parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("patch data error: {0}")]
    PatchData(String),
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// The object/waypoint graph.
#[derive(Debug, Clone, Default)]
pub struct TopoMap {
    params: MapParams,
    nodes: BTreeMap<NodeId, MapNode>,
    edges: BTreeSet<(NodeId, NodeId)>,
    adjacency: BTreeMap<NodeId, Vec<NodeId>>,
    last_anchor: Option<NodeId>,
    next_id: u32,
    /// Patch counts promised by a deserialized header, consumed by
    /// `load_patches`.
    pending_patches: BTreeMap<NodeId, usize>,
}

impl TopoMap {
    pub fn new(params: MapParams) -> Self {
        TopoMap {
            params,
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
            adjacency: BTreeMap::new(),
            last_anchor: None,
            next_id: 0,
            pending_patches: BTreeMap::new(),
        }
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn node(&self, id: NodeId) -> Option<&MapNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MapNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges with their current weights (Euclidean distance of endpoints).
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.edges.iter().map(|&(a, b)| {
            (a, b, self.distance(a, b))
        })
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.edges.contains(&ordered(a, b))
    }

    pub fn edge_weight(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.has_edge(a, b).then(|| self.distance(a, b))
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        self.adjacency.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn last_anchor(&self) -> Option<NodeId> {
        self.last_anchor
    }

    fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        self.nodes[&a].position.dist(self.nodes[&b].position)
    }

    fn fresh_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Insert a new object node with one initial patch.
    pub fn add_object_node(&mut self, position: Vec2, object_id: u32, patch: Arc<Patch>) -> NodeId {
        let id = self.fresh_id();
        self.nodes.insert(
            id,
            MapNode {
                id,
                kind: NodeKind::Object,
                position,
                patches: vec![patch],
                explored: false,
                object_id: Some(object_id),
                detections: 1,
            },
        );
        id
    }

    /// Insert a new waypoint node (no patches, born explored).
    pub fn add_waypoint_node(&mut self, position: Vec2) -> NodeId {
        let id = self.fresh_id();
        self.nodes.insert(
            id,
            MapNode {
                id,
                kind: NodeKind::Waypoint,
                position,
                patches: Vec::new(),
                explored: true,
                object_id: None,
                detections: 0,
            },
        );
        id
    }

    /// Add the undirected edge {a, b}. Idempotent; self-loops are ignored.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) -> Result<(), MapError> {
        if !self.nodes.contains_key(&a) {
            return Err(MapError::UnknownNode(a));
        }
        if !self.nodes.contains_key(&b) {
            return Err(MapError::UnknownNode(b));
        }
        if a == b {
            return Ok(());
        }
        if self.edges.insert(ordered(a, b)) {
            self.adjacency.entry(a).or_default().push(b);
            self.adjacency.entry(b).or_default().push(a);
        }
        Ok(())
    }

    /// Fold one frame of detections into the map.
    ///
    /// Each detection either merges into an existing object node (same
    /// ground-truth id, or closest node within `merge_radius`) — appending
    /// its patch, evicting a uniformly random one beyond `patch_cap`, and
    /// refining the position by running mean — or creates a new unexplored
    /// node. Object pairs co-visible in this frame gain an edge when they
    /// have wall-free line of sight to each other, and the current anchor
    /// node gains an edge to every integrated node it can see.
    ///
    /// Returns the node id touched by each detection, in input order.
    pub fn integrate_detections(
        &mut self,
        pose: &Pose,
        dets: &[Detection],
        plan: &FloorPlan,
        rng: &mut DetRng,
    ) -> Vec<NodeId> {
        let mut touched = Vec::with_capacity(dets.len());
        for det in dets {
            let est = pose.position + Vec2::from_polar(det.range, pose.heading + det.bearing);
            let id = match self.match_object(det.object_id, est) {
                Some(id) => {
                    let cap = self.params.patch_cap;
                    let node = self.nodes.get_mut(&id).expect("matched node exists");
                    node.patches.push(Arc::new(det.patch.clone()));
                    if node.patches.len() > cap {
                        let evict = rng.gen_range(0..node.patches.len());
                        node.patches.swap_remove(evict);
                    }
                    node.detections += 1;
                    let k = node.detections as f64;
                    node.position = node.position + (est - node.position) * (1.0 / k);
                    id
                }
                None => self.add_object_node(est, det.object_id, Arc::new(det.patch.clone())),
            };
            touched.push(id);
        }

        // Co-visibility edges between this frame's objects.
        for i in 0..touched.len() {
            for j in (i + 1)..touched.len() {
                let (a, b) = (touched[i], touched[j]);
                if a == b {
                    continue;
                }
                let (pa, pb) = (self.nodes[&a].position, self.nodes[&b].position);
                if line_of_sight(pa, pb, plan) {
                    self.add_edge(a, b).expect("both endpoints just touched");
                }
            }
        }

        // Anchor edges: the agent stands at (or near) its anchor and can walk
        // straight to any object the anchor can see.
        if let Some(anchor) = self.last_anchor {
            let ap = self.nodes[&anchor].position;
            for &id in &touched {
                if id != anchor && line_of_sight(ap, self.nodes[&id].position, plan) {
                    self.add_edge(anchor, id).expect("endpoints exist");
                }
            }
        }

        touched
    }

    /// Match a detection to an existing object node: ground-truth id first,
    /// then the nearest object node within `merge_radius`.
    fn match_object(&self, object_id: u32, est: Vec2) -> Option<NodeId> {
        let mut nearest: Option<(f64, NodeId)> = None;
        for node in self.nodes.values() {
            if !node.is_object() {
                continue;
            }
            if node.object_id == Some(object_id) {
                return Some(node.id);
            }
            let d = node.position.dist(est);
            if d <= self.params.merge_radius && nearest.map_or(true, |(nd, _)| d < nd) {
                nearest = Some((d, node.id));
            }
        }
        nearest.map(|(_, id)| id)
    }

    /// Flag object nodes within `explored_radius` of the agent as explored.
    /// Returns the ids that newly flipped.
    pub fn mark_explored(&mut self, pose: &Pose) -> Vec<NodeId> {
        let radius = self.params.explored_radius;
        let mut newly = Vec::new();
        for node in self.nodes.values_mut() {
            if !node.explored && node.position.dist(pose.position) <= radius {
                node.explored = true;
                newly.push(node.id);
            }
        }
        newly
    }

    /// Drop a waypoint at the agent's pose when every existing node is
    /// farther than `waypoint_spacing`, chaining it to the previous anchor.
    pub fn add_waypoint_if_needed(&mut self, pose: &Pose) -> Option<NodeId> {
        let spacing = self.params.waypoint_spacing;
        let clear = self
            .nodes
            .values()
            .all(|n| n.position.dist(pose.position) > spacing);
        if !clear {
            return None;
        }
        let id = self.add_waypoint_node(pose.position);
        if let Some(anchor) = self.last_anchor {
            self.add_edge(anchor, id).expect("anchor exists");
        }
        self.last_anchor = Some(id);
        Some(id)
    }

    /// Re-anchor onto the nearest node within `visit_radius` of the agent,
    /// recording a traversal edge from the previous anchor. Returns the node
    /// visited, if any.
    pub fn note_visit(&mut self, pose: &Pose) -> Option<NodeId> {
        let mut best: Option<(f64, NodeId)> = None;
        for node in self.nodes.values() {
            let d = node.position.dist(pose.position);
            if d <= self.params.visit_radius
                && best.map_or(true, |(bd, bid)| d < bd || (d == bd && node.id < bid))
            {
                best = Some((d, node.id));
            }
        }
        let visited = best.map(|(_, id)| id)?;
        if let Some(prev) = self.last_anchor {
            if prev != visited {
                self.add_traversal_edge(prev, visited)
                    .expect("both anchors exist");
            }
        }
        self.last_anchor = Some(visited);
        Some(visited)
    }

    /// Record that the agent physically moved between two nodes' vicinities.
    pub fn add_traversal_edge(&mut self, a: NodeId, b: NodeId) -> Result<(), MapError> {
        self.add_edge(a, b)
    }

    /// Draw `n` patches from an object node: without replacement when it
    /// stores at least `n`, with replacement otherwise.
    pub fn sample_patches(
        &self,
        id: NodeId,
        n: usize,
        rng: &mut DetRng,
    ) -> Result<Vec<Arc<Patch>>, MapError> {
        let node = self.nodes.get(&id).ok_or(MapError::UnknownNode(id))?;
        if !node.is_object() {
            return Err(MapError::NotAnObject(id));
        }
        debug_assert!(!node.patches.is_empty(), "object nodes store >= 1 patch");
        let len = node.patches.len();
        let picks: Vec<usize> = if len >= n {
            rand::seq::index::sample(rng, len, n).into_iter().collect()
        } else {
            (0..n).map(|_| rng.gen_range(0..len)).collect()
        };
        Ok(picks.into_iter().map(|i| node.patches[i].clone()).collect())
    }

    /// All object node ids in ascending order: the macro action set.
    pub fn action_set(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.is_object())
            .map(|n| n.id)
            .collect()
    }

    /// Line-oriented text dump (pixel data goes to the binary sidecar).
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "TOPOMAP v1 {} {}\n",
            self.nodes.len(),
            self.edges.len()
        ));
        for node in self.nodes.values() {
            let kind = match node.kind {
                NodeKind::Object => "OBJ",
                NodeKind::Waypoint => "WP",
            };
            let patch_count = if node.patches.is_empty() {
                *self.pending_patches.get(&node.id).unwrap_or(&0)
            } else {
                node.patches.len()
            };
            let obj = node
                .object_id
                .map_or_else(|| "-".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "NODE {} {} {} {} {} {} {}\n",
                node.id,
                kind,
                node.position.x,
                node.position.y,
                u8::from(node.explored),
                patch_count,
                obj
            ));
        }
        for &(a, b) in &self.edges {
            out.push_str(&format!("EDGE {} {}\n", a, b));
        }
        out
    }

    /// Binary patch sidecar: `TMPX` magic, then per patch a little-endian
    /// u32 node id followed by 768 little-endian f32 pixels.
    pub fn serialize_patches(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"TMPX");
        for node in self.nodes.values() {
            for patch in &node.patches {
                out.extend_from_slice(&node.id.raw().to_le_bytes());
                for &v in patch.as_slice() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse a text dump. Patch lists come back empty (load them from the
    /// sidecar with [`TopoMap::load_patches`]); all other fields round-trip
    /// exactly.
    pub fn deserialize(text: &str) -> Result<Self, MapError> {
        let err = |line: usize, msg: &str| MapError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty document"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "TOPOMAP" || h[1] != "v1" {
            return Err(err(1, "expected header `TOPOMAP v1 <nodes> <edges>`"));
        }
        let n_nodes: usize = h[2].parse().map_err(|_| err(1, "bad node count"))?;
        let n_edges: usize = h[3].parse().map_err(|_| err(1, "bad edge count"))?;

        let mut map = TopoMap::new(MapParams::default());
        for _ in 0..n_nodes {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| err(n_nodes + 1, "truncated: missing NODE lines"))?;
            let ln = idx + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 || f[0] != "NODE" {
                return Err(err(ln, "expected `NODE <id> <OBJ|WP> <x> <y> <explored> <patches> <object_id|->`"));
            }
            let raw: u32 = f[1].parse().map_err(|_| err(ln, "bad node id"))?;
            let id = NodeId(raw);
            if map.nodes.contains_key(&id) {
                return Err(err(ln, "duplicate node id"));
            }
            let kind = match f[2] {
                "OBJ" => NodeKind::Object,
                "WP" => NodeKind::Waypoint,
                _ => return Err(err(ln, "bad node kind")),
            };
            let x: f64 = f[3].parse().map_err(|_| err(ln, "bad x coordinate"))?;
            let y: f64 = f[4].parse().map_err(|_| err(ln, "bad y coordinate"))?;
            let explored = match f[5] {
                "0" => false,
                "1" => true,
                _ => return Err(err(ln, "bad explored flag")),
            };
            let patch_count: usize = f[6].parse().map_err(|_| err(ln, "bad patch count"))?;
            let object_id = match (kind, f[7]) {
                (NodeKind::Waypoint, "-") => None,
                (NodeKind::Waypoint, _) => {
                    return Err(err(ln, "waypoint must have `-` object id"))
                }
                (NodeKind::Object, "-") => {
                    return Err(err(ln, "object node missing object id"))
                }
                (NodeKind::Object, s) => {
                    Some(s.parse().map_err(|_| err(ln, "bad object id"))?)
                }
            };
            match kind {
                NodeKind::Object if patch_count == 0 => {
                    return Err(err(ln, "object node must have at least one patch"))
                }
                NodeKind::Waypoint if patch_count != 0 => {
                    return Err(err(ln, "waypoint cannot carry patches"))
                }
                NodeKind::Waypoint if !explored => {
                    return Err(err(ln, "waypoints are always explored"))
                }
                _ => {}
            }
            map.nodes.insert(
                id,
                MapNode {
                    id,
                    kind,
                    position: Vec2::new(x, y),
                    patches: Vec::new(),
                    explored,
                    object_id,
                    detections: 0,
                },
            );
            if patch_count > 0 {
                map.pending_patches.insert(id, patch_count);
            }
        }
        for _ in 0..n_edges {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| err(n_nodes + n_edges + 1, "truncated: missing EDGE lines"))?;
            let ln = idx + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 || f[0] != "EDGE" {
                return Err(err(ln, "expected `EDGE <a> <b>`"));
            }
            let a = NodeId(f[1].parse().map_err(|_| err(ln, "bad edge endpoint"))?);
            let b = NodeId(f[2].parse().map_err(|_| err(ln, "bad edge endpoint"))?);
            map.add_edge(a, b).map_err(|e| err(ln, &e.to_string()))?;
        }
        if let Some((idx, line)) = lines.next() {
            if !line.trim().is_empty() {
                return Err(err(idx + 1, "trailing content after declared counts"));
            }
        }
        map.next_id = map.nodes.keys().map(|id| id.0 + 1).max().unwrap_or(0);
        Ok(map)
    }

    /// Fill patch lists from a sidecar produced by
    /// [`TopoMap::serialize_patches`]. Counts must match the text dump.
    pub fn load_patches(&mut self, bytes: &[u8]) -> Result<(), MapError> {
        let fail = |msg: &str| MapError::PatchData(msg.to_string());
        if bytes.len() < 4 || &bytes[..4] != b"TMPX" {
            return Err(fail("missing TMPX magic"));
        }
        let entry = 4 + PATCH_LEN * 4;
        let body = &bytes[4..];
        if body.len() % entry != 0 {
            return Err(fail("truncated patch entry"));
        }
        for chunk in body.chunks_exact(entry) {
            let raw = u32::from_le_bytes(chunk[..4].try_into().expect("4-byte id"));
            let id = NodeId(raw);
            let mut pixels = [0.0f32; PATCH_LEN];
            for (i, px) in chunk[4..].chunks_exact(4).enumerate() {
                pixels[i] = f32::from_le_bytes(px.try_into().expect("4-byte float"));
            }
            let node = self
                .nodes
                .get_mut(&id)
                .ok_or(MapError::UnknownNode(id))?;
            if !node.is_object() {
                return Err(MapError::NotAnObject(id));
            }
            let expected = *self
                .pending_patches
                .get(&id)
                .ok_or_else(|| fail("patch entry for node with no declared patches"))?;
            if node.patches.len() >= expected {
                return Err(fail("more patches than the text dump declared"));
            }
            node.patches
                .push(Arc::new(Patch::from_slice(&pixels).expect("exact length")));
        }
        for (&id, &expected) in &self.pending_patches {
            let got = self.nodes[&id].patches.len();
            if got != expected {
                return Err(fail(&format!(
                    "node {id}: expected {expected} patches, sidecar held {got}"
                )));
            }
        }
        self.pending_patches.clear();
        Ok(())
    }
}

/// Equality over persistent content: nodes (including patch pixels) and the
/// edge set. Transient navigation state (anchor, detection counters) is
/// excluded, matching what serialization preserves.
impl PartialEq for TopoMap {
    fn eq(&self, other: &Self) -> bool {
        if self.edges != other.edges || self.nodes.len() != other.nodes.len() {
            return false;
        }
        self.nodes.values().zip(other.nodes.values()).all(|(a, b)| {
            a.id == b.id
                && a.kind == b.kind
                && a.position == b.position
                && a.explored == b.explored
                && a.object_id == b.object_id
                && a.patches.len() == b.patches.len()
                && a.patches
                    .iter()
                    .zip(&b.patches)
                    .all(|(p, q)| p.as_ref() == q.as_ref())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::sim::{generate_scene, SceneConfig, SimParams};

    fn empty_plan() -> FloorPlan {
        FloorPlan {
            rooms: vec![],
            doors: vec![],
            walls: vec![],
        }
    }

    fn det(object_id: u32, range: f64, bearing: f64, fill: f32) -> Detection {
        Detection {
            object_id,
            class_id: object_id % 8,
            patch: Patch::from_fn(|_, _, _| fill),
            range,
            bearing,
            occlusion_fraction: 0.0,
        }
    }

    fn pose(x: f64, y: f64, heading: f64) -> Pose {
        Pose::new(Vec2::new(x, y), heading)
    }

    #[test]
    fn first_detection_creates_unexplored_node() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let ids = map.integrate_detections(
            &pose(0.0, 0.0, 0.0),
            &[det(7, 2.0, 0.0, 0.5)],
            &empty_plan(),
            &mut rng,
        );
        assert_eq!(ids.len(), 1);
        let node = map.node(ids[0]).unwrap();
        assert_eq!(node.kind, NodeKind::Object);
        assert!(!node.explored);
        assert_eq!(node.patches.len(), 1);
        assert_eq!(node.object_id, Some(7));
        assert!((node.position.x - 2.0).abs() < 1e-12);
        assert!(node.position.y.abs() < 1e-12);
    }

    #[test]
    fn redetection_merges_and_appends_patch() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        let a = map.integrate_detections(&p, &[det(7, 2.0, 0.0, 0.1)], &empty_plan(), &mut rng);
        // Same object from a different angle and range.
        let b = map.integrate_detections(
            &pose(1.0, 1.0, -std::f64::consts::FRAC_PI_4),
            &[det(7, 1.5, 0.1, 0.9)],
            &empty_plan(),
            &mut rng,
        );
        assert_eq!(a, b);
        assert_eq!(map.node_count(), 1);
        assert_eq!(map.node(a[0]).unwrap().patches.len(), 2);
    }

    #[test]
    fn merge_rules_radius_and_id_precedence() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        map.integrate_detections(&p, &[det(1, 2.0, 0.0, 0.1)], &empty_plan(), &mut rng);
        // A detection inside merge_radius folds in even with a different
        // ground-truth id (positional jitter rule).
        map.integrate_detections(&p, &[det(2, 2.05, 0.0, 0.1)], &empty_plan(), &mut rng);
        assert_eq!(map.node_count(), 1);
        // Same id with a wildly different estimate still merges (id match
        // takes precedence over distance).
        map.integrate_detections(&p, &[det(1, 4.0, 1.0, 0.1)], &empty_plan(), &mut rng);
        assert_eq!(map.node_count(), 1);
        // A far detection with a new id becomes a new node.
        map.integrate_detections(&p, &[det(3, 4.0, -1.0, 0.1)], &empty_plan(), &mut rng);
        assert_eq!(map.node_count(), 2);
    }

    #[test]
    fn position_refines_by_running_mean() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        let ids = map.integrate_detections(&p, &[det(1, 2.0, 0.0, 0.1)], &empty_plan(), &mut rng);
        map.integrate_detections(&p, &[det(1, 3.0, 0.0, 0.1)], &empty_plan(), &mut rng);
        let node = map.node(ids[0]).unwrap();
        assert!((node.position.x - 2.5).abs() < 1e-12);
    }

    #[test]
    fn patch_cap_bounds_storage_and_keeps_members() {
        let mut map = TopoMap::new(MapParams {
            patch_cap: 4,
            ..MapParams::default()
        });
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        for k in 0..20 {
            map.integrate_detections(
                &p,
                &[det(1, 2.0, 0.0, k as f32 / 20.0)],
                &empty_plan(),
                &mut rng,
            );
        }
        let node = map.nodes().next().unwrap();
        assert_eq!(node.patches.len(), 4);
        // Every survivor must be one of the inserted fills.
        for patch in &node.patches {
            let v = patch.get(0, 0, 0);
            assert!((0..20).any(|k| (v - k as f32 / 20.0).abs() < 1e-7));
        }
    }

    #[test]
    fn eviction_is_uniform_enough_to_keep_late_patches() {
        // With cap 4 and 40 inserts, the final set should not be the first
        // four patches (random eviction keeps a mix).
        let mut map = TopoMap::new(MapParams {
            patch_cap: 4,
            ..MapParams::default()
        });
        let mut rng = rng_from(9, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        for k in 0..40 {
            map.integrate_detections(
                &p,
                &[det(1, 2.0, 0.0, k as f32)],
                &empty_plan(),
                &mut rng,
            );
        }
        let node = map.nodes().next().unwrap();
        let max_fill = node
            .patches
            .iter()
            .map(|p| p.get(0, 0, 0))
            .fold(f32::MIN, f32::max);
        assert!(max_fill > 3.0, "only early patches survived: {max_fill}");
    }

    #[test]
    fn covisible_objects_gain_an_edge_unless_wall_blocks() {
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        let frame = [det(1, 2.0, 0.5, 0.1), det(2, 2.0, -0.5, 0.2)];

        let mut open = TopoMap::new(MapParams::default());
        let ids = open.integrate_detections(&p, &frame, &empty_plan(), &mut rng);
        assert!(open.has_edge(ids[0], ids[1]));

        // A wall jutting between the two objects (but not blocking the
        // agent's view of either) suppresses the pair edge.
        let mut blocked_plan = empty_plan();
        blocked_plan.walls.push(crate::geom::Segment::new(
            Vec2::new(1.0, 0.0),
            Vec2::new(2.5, 0.0),
        ));
        let mut walled = TopoMap::new(MapParams::default());
        let ids = walled.integrate_detections(&p, &frame, &blocked_plan, &mut rng);
        assert!(!walled.has_edge(ids[0], ids[1]));
    }

    #[test]
    fn anchor_gains_edges_to_integrated_objects() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        let wp = map.add_waypoint_if_needed(&p).unwrap();
        let ids = map.integrate_detections(&p, &[det(1, 2.0, 0.0, 0.1)], &empty_plan(), &mut rng);
        assert!(map.has_edge(wp, ids[0]));
    }

    #[test]
    fn explored_flag_is_distance_gated_and_monotone() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        let ids = map.integrate_detections(&p, &[det(1, 1.5, 0.0, 0.1)], &empty_plan(), &mut rng);
        assert!(map.mark_explored(&p).is_empty()); // 1.5 m > 1.0 m radius
        let newly = map.mark_explored(&pose(1.1, 0.0, 0.0)); // 0.4 m away
        assert_eq!(newly, ids);
        assert!(map.node(ids[0]).unwrap().explored);
        // Re-approaching yields an empty delta.
        assert!(map.mark_explored(&pose(1.1, 0.0, 0.0)).is_empty());
    }

    #[test]
    fn waypoints_drop_by_spacing_and_chain_to_anchor() {
        let mut map = TopoMap::new(MapParams::default());
        let w0 = map.add_waypoint_if_needed(&pose(0.0, 0.0, 0.0));
        assert!(w0.is_some()); // empty map: vacuous distance condition
        assert!(map.add_waypoint_if_needed(&pose(0.5, 0.0, 0.0)).is_none());
        let w1 = map.add_waypoint_if_needed(&pose(2.5, 0.0, 0.0));
        assert!(w1.is_some());
        assert!(map.has_edge(w0.unwrap(), w1.unwrap()));
        let wp = map.node(w1.unwrap()).unwrap();
        assert!(wp.explored && wp.patches.is_empty());
    }

    #[test]
    fn note_visit_adds_traversal_edge_between_anchors() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let a = map.add_waypoint_node(Vec2::new(0.0, 0.0));
        let b = map.add_waypoint_node(Vec2::new(5.0, 0.0));
        assert_eq!(map.note_visit(&pose(0.1, 0.0, 0.0)), Some(a));
        assert_eq!(map.note_visit(&pose(4.9, 0.0, 0.0)), Some(b));
        assert!(map.has_edge(a, b));
        // Far from everything: no visit.
        assert_eq!(map.note_visit(&pose(2.5, 2.5, 0.0)), None);
        let _ = map.integrate_detections(&pose(0.0, 0.0, 0.0), &[], &empty_plan(), &mut rng);
    }

    #[test]
    fn traversal_edge_is_idempotent_and_checks_ids() {
        let mut map = TopoMap::new(MapParams::default());
        let a = map.add_waypoint_node(Vec2::new(0.0, 0.0));
        let b = map.add_waypoint_node(Vec2::new(1.0, 0.0));
        map.add_traversal_edge(a, b).unwrap();
        let edges_before = map.edge_count();
        map.add_traversal_edge(b, a).unwrap();
        assert_eq!(map.edge_count(), edges_before);
        let ghost = NodeId::from_raw(999);
        assert!(matches!(
            map.add_traversal_edge(a, ghost),
            Err(MapError::UnknownNode(id)) if id == ghost
        ));
    }

    #[test]
    fn edge_weights_track_euclidean_distance() {
        let mut map = TopoMap::new(MapParams::default());
        let a = map.add_waypoint_node(Vec2::new(0.0, 0.0));
        let b = map.add_waypoint_node(Vec2::new(3.0, 4.0));
        map.add_edge(a, b).unwrap();
        assert!((map.edge_weight(a, b).unwrap() - 5.0).abs() < 1e-9);
        assert_eq!(map.edge_weight(b, a), map.edge_weight(a, b));
    }

    #[test]
    fn sample_patches_counts_and_membership() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        for k in 0..12 {
            map.integrate_detections(
                &p,
                &[det(1, 2.0, 0.0, k as f32 / 12.0)],
                &empty_plan(),
                &mut rng,
            );
        }
        let id = map.action_set()[0];
        let sample = map.sample_patches(id, 10, &mut rng).unwrap();
        assert_eq!(sample.len(), 10);
        // Without replacement: all distinct.
        for i in 0..sample.len() {
            for j in (i + 1)..sample.len() {
                assert!(sample[i].as_ref() != sample[j].as_ref());
            }
        }
        // Deterministic replay with the same rng stream.
        let mut r1 = rng_from(3, "sample", 5);
        let mut r2 = rng_from(3, "sample", 5);
        let s1 = map.sample_patches(id, 10, &mut r1).unwrap();
        let s2 = map.sample_patches(id, 10, &mut r2).unwrap();
        assert!(s1.iter().zip(&s2).all(|(a, b)| a.as_ref() == b.as_ref()));
    }

    #[test]
    fn small_node_resamples_with_replacement() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        let p = pose(0.0, 0.0, 0.0);
        for k in 0..3 {
            map.integrate_detections(
                &p,
                &[det(1, 2.0, 0.0, k as f32)],
                &empty_plan(),
                &mut rng,
            );
        }
        let id = map.action_set()[0];
        let sample = map.sample_patches(id, 10, &mut rng).unwrap();
        assert_eq!(sample.len(), 10);
        let stored = &map.node(id).unwrap().patches;
        for s in &sample {
            assert!(stored.iter().any(|p| p.as_ref() == s.as_ref()));
        }
    }

    #[test]
    fn sample_patches_rejects_waypoints() {
        let mut map = TopoMap::new(MapParams::default());
        let wp = map.add_waypoint_node(Vec2::new(0.0, 0.0));
        let mut rng = rng_from(1, "map", 0);
        assert!(matches!(
            map.sample_patches(wp, 5, &mut rng),
            Err(MapError::NotAnObject(id)) if id == wp
        ));
    }

    #[test]
    fn action_set_is_objects_only_ascending() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        assert!(map.action_set().is_empty());
        map.add_waypoint_node(Vec2::new(0.0, 0.0));
        let p = pose(0.0, 0.0, 0.0);
        map.integrate_detections(
            &p,
            &[det(5, 2.0, 0.5, 0.1), det(3, 2.0, -0.5, 0.2)],
            &empty_plan(),
            &mut rng,
        );
        map.add_waypoint_node(Vec2::new(9.0, 9.0));
        let actions = map.action_set();
        assert_eq!(actions.len(), 2);
        assert!(actions.windows(2).all(|w| w[0] < w[1]));
        assert!(actions.iter().all(|&id| map.node(id).unwrap().is_object()));
    }

    #[test]
    fn empty_map_round_trips() {
        let map = TopoMap::new(MapParams::default());
        let text = map.serialize();
        assert_eq!(text, "TOPOMAP v1 0 0\n");
        let mut back = TopoMap::deserialize(&text).unwrap();
        back.load_patches(&map.serialize_patches()).unwrap();
        assert_eq!(map, back);
    }

    #[test]
    fn populated_map_round_trips_exactly() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(4, "map", 0);
        let p = pose(0.37, -1.2e-3, 0.7);
        map.add_waypoint_if_needed(&p);
        map.integrate_detections(
            &p,
            &[
                det(1, 2.0, 0.25, 0.11),
                det(2, 3.0, -0.4, 0.22),
                det(3, 1.0, 0.0, 0.33),
            ],
            &empty_plan(),
            &mut rng,
        );
        map.integrate_detections(&p, &[det(1, 2.0, 0.25, 0.44)], &empty_plan(), &mut rng);
        map.mark_explored(&pose(2.0, 0.5, 0.0));
        let text = map.serialize();
        let sidecar = map.serialize_patches();
        let mut back = TopoMap::deserialize(&text).unwrap();
        back.load_patches(&sidecar).unwrap();
        assert_eq!(map, back);
        // And the text itself is stable under a second round trip.
        assert_eq!(back.serialize(), text);
        assert_eq!(back.serialize_patches(), sidecar);
    }

    #[test]
    fn new_nodes_after_load_get_fresh_ids() {
        let mut map = TopoMap::new(MapParams::default());
        map.add_waypoint_node(Vec2::new(0.0, 0.0));
        map.add_waypoint_node(Vec2::new(1.0, 0.0));
        let mut back = TopoMap::deserialize(&map.serialize()).unwrap();
        let fresh = back.add_waypoint_node(Vec2::new(2.0, 0.0));
        assert_eq!(fresh, NodeId::from_raw(2));
    }

    #[test]
    fn malformed_documents_report_line_numbers() {
        for (text, want_line) in [
            ("", 1),
            ("TOPOMAP v2 0 0\n", 1),
            ("TOPOMAP v1 1 0\n", 2),                      // missing NODE line
            ("TOPOMAP v1 1 0\nNODE x OBJ 0 0 0 1 5\n", 2), // bad id
            ("TOPOMAP v1 1 0\nNODE 0 OBJ 0 0 0 0 5\n", 2), // zero patches
            ("TOPOMAP v1 1 1\nNODE 0 WP 0 0 1 0 -\nEDGE 0 7\n", 3), // ghost edge
            ("TOPOMAP v1 0 0\nEDGE 0 1\n", 2),            // trailing content
        ] {
            match TopoMap::deserialize(text) {
                Err(MapError::Parse { line, .. }) => {
                    assert_eq!(line, want_line, "for {text:?}")
                }
                other => panic!("expected parse error for {text:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn sidecar_mismatch_is_rejected() {
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(1, "map", 0);
        map.integrate_detections(
            &pose(0.0, 0.0, 0.0),
            &[det(1, 2.0, 0.0, 0.5)],
            &empty_plan(),
            &mut rng,
        );
        let text = map.serialize();
        let good = map.serialize_patches();

        let mut back = TopoMap::deserialize(&text).unwrap();
        assert!(back.load_patches(b"XXXX").is_err());
        let mut truncated = good.clone();
        truncated.truncate(good.len() - 1);
        assert!(back.load_patches(&truncated).is_err());
        // Empty sidecar: count mismatch against the declared patch count.
        assert!(back.load_patches(b"TMPX").is_err());
    }

    /// Map-level invariants under a long random detection/motion tape.
    #[test]
    fn invariants_hold_under_random_integration() {
        let scene = generate_scene(11, &SceneConfig::default()).unwrap();
        let mut env = crate::sim::Env::new(
            &scene,
            SimParams::default(),
            crate::sim::RewardMode::Immediate,
            1234,
        );
        let mut map = TopoMap::new(MapParams::default());
        let mut rng = rng_from(11, "fuzz", 0);
        let mut act_rng = rng_from(11, "fuzz-act", 0);
        let mut poses = vec![env.pose];
        let mut last_counts = (0usize, 0usize);
        for step in 0..600 {
            let action = match act_rng.gen_range(0..4u8) {
                0 | 1 => crate::sim::ElementaryAction::Forward,
                2 => crate::sim::ElementaryAction::TurnLeft,
                _ => crate::sim::ElementaryAction::TurnRight,
            };
            env.step(action);
            poses.push(env.pose);
            map.add_waypoint_if_needed(&env.pose);
            map.note_visit(&env.pose);
            let dets = env.observe();
            map.integrate_detections(&env.pose, &dets, &scene.plan, &mut rng);
            map.mark_explored(&env.pose);

            // Monotone counts.
            assert!(map.node_count() >= last_counts.0);
            assert!(map.edge_count() >= last_counts.1);
            last_counts = (map.node_count(), map.edge_count());
            if step % 50 == 0 {
                check_invariants(&map, &poses);
            }
        }
        check_invariants(&map, &poses);
        // Ground-truth ids mean object nodes = distinct detected objects.
        let detected: std::collections::BTreeSet<u32> = env.seen_object_ids().clone();
        assert_eq!(map.action_set().len(), detected.len());
    }

    fn check_invariants(map: &TopoMap, poses: &[Pose]) {
        for (a, b, w) in map.edges() {
            let (na, nb) = (map.node(a).unwrap(), map.node(b).unwrap());
            assert!((w - na.position.dist(nb.position)).abs() <= 1e-9);
        }
        for node in map.nodes() {
            match node.kind {
                NodeKind::Object => {
                    assert!(!node.patches.is_empty());
                    assert!(node.patches.len() <= map.params().patch_cap);
                    assert!(node.object_id.is_some());
                }
                NodeKind::Waypoint => {
                    assert!(node.patches.is_empty());
                    assert!(node.explored);
                    assert!(
                        poses
                            .iter()
                            .any(|p| p.position.dist(node.position) <= 0.5),
                        "waypoint {} not at any visited pose",
                        node.id
                    );
                }
            }
        }
    }
}
