//! Contact-state transition graph and the primitive plan.
//!
//! Nodes are per-finger side assignments over {NEAR, FAR, NONE} that pass
//! the static grasp predicates; edges are detach/attach moves plus
//! synthesized anchor-to-anchor primitive edges (detach-crossover-attach
//! with one moving finger). Planning is a deterministic breadth-first
//! search over primitive edges.

use serde::{Deserialize, Serialize};

use crate::contactstate::{ContactStateDescriptor, SideLabel};
use crate::hand::FingerId;

/// The three action representations a primitive is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepresentationKind {
    Detach,
    Crossover,
    Attach,
}

impl RepresentationKind {
    pub fn label(self) -> &'static str {
        match self {
            RepresentationKind::Detach => "DETACH",
            RepresentationKind::Crossover => "CROSSOVER",
            RepresentationKind::Attach => "ATTACH",
        }
    }
}

impl std::fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A validated contact state. Anchors have all four fingers in contact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphNode {
    pub descriptor: ContactStateDescriptor,
}

impl GraphNode {
    pub fn is_anchor(&self) -> bool {
        self.descriptor.contact_count() == 4
    }
}

/// Static validity predicate for a graph node:
/// - every side is NEAR, FAR, or NONE, with at most one finger off the
///   object (at least three fingers in contact),
/// - the contacting fingers occupy both sides (prehensile opposition),
/// - walking the fingers in the fixed clockwise order T, I, M, R, each
///   side's contacting fingers form one contiguous cyclic block, so the
///   arrangement can be realized without fingers crossing each other.
pub fn node_valid(d: &ContactStateDescriptor) -> bool {
    let mut sides = Vec::with_capacity(4);
    let mut none_count = 0;
    for id in FingerId::ALL {
        match d.side(id) {
            SideLabel::None => none_count += 1,
            SideLabel::Near | SideLabel::Far => sides.push(d.side(id)),
            SideLabel::Top => return false,
        }
    }
    if none_count > 1 {
        return false;
    }
    let near = sides.iter().filter(|&&s| s == SideLabel::Near).count();
    if near == 0 || near == sides.len() {
        return false; // all contacting fingers on one side
    }
    // cyclic side changes: two for a single block per side, more means a
    // finger is trapped between two fingers of the other group
    let k = sides.len();
    let changes = (0..k).filter(|&i| sides[i] != sides[(i + 1) % k]).count();
    changes == 2
}

/// All valid nodes, in a fixed deterministic order.
pub fn enumerate_nodes() -> Vec<GraphNode> {
    const CHOICES: [SideLabel; 3] = [SideLabel::Near, SideLabel::Far, SideLabel::None];
    let mut nodes = Vec::new();
    for a in CHOICES {
        for b in CHOICES {
            for c in CHOICES {
                for d in CHOICES {
                    let desc = ContactStateDescriptor::new([a, b, c, d]);
                    if node_valid(&desc) {
                        nodes.push(GraphNode { descriptor: desc });
                    }
                }
            }
        }
    }
    nodes
}

/// A detach or attach move between two nodes. Crossover does not change
/// the descriptor (the free finger changes its target side), so it appears
/// only inside primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: RepresentationKind,
    pub from: usize,
    pub to: usize,
    pub finger: FingerId,
}

/// One detach-crossover-attach unit moving a single finger between the two
/// faces, bracketed by anchor states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Primitive {
    /// 1-based transition index within its plan.
    pub index: usize,
    /// Number of primitives in the plan this belongs to.
    pub total: usize,
    pub moving_finger: FingerId,
    pub start: GraphNode,
    pub goal: GraphNode,
}

impl Primitive {
    pub fn edge_sequence(&self) -> [RepresentationKind; 3] {
        [
            RepresentationKind::Detach,
            RepresentationKind::Crossover,
            RepresentationKind::Attach,
        ]
    }

    /// Policy name: primitive 1 is A, 2 is B, and so on.
    pub fn label(&self) -> char {
        (b'A' + (self.index - 1) as u8) as char
    }
}

/// Ordered primitive sequence; consecutive primitives chain through shared
/// anchors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub primitives: Vec<Primitive>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn finger_sequence(&self) -> Vec<FingerId> {
        self.primitives.iter().map(|p| p.moving_finger).collect()
    }
}

/// Neighbor expansion order for planning: fixed to reproduce the published
/// ring-thumb-middle-index sequence among equally short plans.
pub const TIE_BREAK: [FingerId; 4] = [FingerId::R, FingerId::T, FingerId::M, FingerId::I];

#[derive(Debug, Clone)]
pub struct TransitionGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
    /// (start anchor, goal anchor, moving finger) triples.
    pub primitive_edges: Vec<(usize, usize, FingerId)>,
}

impl TransitionGraph {
    pub fn build() -> Self {
        let nodes = enumerate_nodes();
        let index_of = |d: &ContactStateDescriptor| nodes.iter().position(|n| n.descriptor == *d);

        let mut edges = Vec::new();
        let mut primitive_edges = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            for f in TIE_BREAK {
                let side = node.descriptor.side(f);
                match side {
                    SideLabel::Near | SideLabel::Far => {
                        // detach: contacting finger lifts off
                        if let Some(j) =
                            index_of(&node.descriptor.with_side(f, SideLabel::None))
                        {
                            edges.push(Edge {
                                kind: RepresentationKind::Detach,
                                from: i,
                                to: j,
                                finger: f,
                            });
                        }
                        // primitive edge: flip the finger to the other face,
                        // passing through the detached intermediate
                        if node.is_anchor() {
                            let mid = node.descriptor.with_side(f, SideLabel::None);
                            let goal = node.descriptor.with_side(f, side.opposite());
                            if node_valid(&mid) {
                                if let Some(j) = index_of(&goal) {
                                    primitive_edges.push((i, j, f));
                                }
                            }
                        }
                    }
                    SideLabel::None => {
                        // attach: free finger lands on either face
                        for s in [SideLabel::Near, SideLabel::Far] {
                            if let Some(j) = index_of(&node.descriptor.with_side(f, s)) {
                                edges.push(Edge {
                                    kind: RepresentationKind::Attach,
                                    from: i,
                                    to: j,
                                    finger: f,
                                });
                            }
                        }
                    }
                    SideLabel::Top => unreachable!("valid nodes have no TOP side"),
                }
            }
        }
        Self {
            nodes,
            edges,
            primitive_edges,
        }
    }

    pub fn node_index(&self, d: &ContactStateDescriptor) -> Option<usize> {
        self.nodes.iter().position(|n| n.descriptor == *d)
    }

    /// Shortest primitive sequence from `start` to `goal`, breadth-first
    /// with the fixed finger tie-break. `None` when the goal is not an
    /// anchor of the graph or cannot be reached.
    pub fn plan_primitives(
        &self,
        start: &ContactStateDescriptor,
        goal: &ContactStateDescriptor,
    ) -> Option<Plan> {
        let s = self.node_index(start)?;
        let g = self.node_index(goal)?;
        if !self.nodes[s].is_anchor() || !self.nodes[g].is_anchor() {
            return None;
        }
        if s == g {
            return Some(Plan {
                primitives: Vec::new(),
            });
        }

        // breadth-first search; primitive_edges preserve the tie-break
        // order per source node, so the first parent found is canonical
        let mut parent: Vec<Option<(usize, FingerId)>> = vec![None; self.nodes.len()];
        let mut queue = std::collections::VecDeque::from([s]);
        let mut seen = vec![false; self.nodes.len()];
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            if u == g {
                break;
            }
            for &(from, to, f) in self.primitive_edges.iter().filter(|e| e.0 == u) {
                if !seen[to] {
                    seen[to] = true;
                    parent[to] = Some((from, f));
                    queue.push_back(to);
                }
            }
        }
        if !seen[g] {
            return None;
        }

        let mut rev = Vec::new();
        let mut cur = g;
        while cur != s {
            let (prev, f) = parent[cur].expect("path is connected");
            rev.push((prev, cur, f));
            cur = prev;
        }
        rev.reverse();
        let total = rev.len();
        let primitives = rev
            .into_iter()
            .enumerate()
            .map(|(k, (from, to, f))| Primitive {
                index: k + 1,
                total,
                moving_finger: f,
                start: self.nodes[from],
                goal: self.nodes[to],
            })
            .collect();
        Some(Plan { primitives })
    }

    /// Plain-text adjacency listing, one edge per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "{} --{}[{}]--> {}\n",
                self.nodes[e.from].descriptor,
                e.kind,
                e.finger,
                self.nodes[e.to].descriptor
            ));
        }
        for &(from, to, f) in &self.primitive_edges {
            out.push_str(&format!(
                "{} --PRIMITIVE[{}]--> {}\n",
                self.nodes[from].descriptor, f, self.nodes[to].descriptor
            ));
        }
        out
    }
}

/// The canonical start grasp: thumb on the near face, long fingers on the
/// far face.
pub fn canonical_start() -> ContactStateDescriptor {
    ContactStateDescriptor::new([
        SideLabel::Near,
        SideLabel::Far,
        SideLabel::Far,
        SideLabel::Far,
    ])
}

/// The half-turn goal: the start descriptor after a 180-degree yaw relabel,
/// every finger on the opposite face.
pub fn half_turn_goal(start: &ContactStateDescriptor) -> ContactStateDescriptor {
    let mut d = *start;
    for id in FingerId::ALL {
        d = d.with_side(id, d.side(id).opposite());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_matches_brute_force_oracle() {
        // independent re-derivation of the predicate over all 3^4 states
        const CHOICES: [SideLabel; 3] = [SideLabel::Near, SideLabel::Far, SideLabel::None];
        let mut expected = Vec::new();
        for a in CHOICES {
            for b in CHOICES {
                for c in CHOICES {
                    for d in CHOICES {
                        let sides = [a, b, c, d];
                        let contacting: Vec<SideLabel> =
                            sides.iter().copied().filter(|&s| s != SideLabel::None).collect();
                        if contacting.len() < 3 {
                            continue;
                        }
                        let near = contacting.iter().filter(|&&s| s == SideLabel::Near).count();
                        if near == 0 || near == contacting.len() {
                            continue;
                        }
                        // every cyclic rotation must keep each side in one run
                        let k = contacting.len();
                        let blocks = (0..k)
                            .filter(|&i| contacting[i] != contacting[(i + 1) % k])
                            .count();
                        if blocks != 2 {
                            continue;
                        }
                        expected.push(ContactStateDescriptor::new(sides));
                    }
                }
            }
        }
        let nodes = enumerate_nodes();
        assert_eq!(nodes.len(), expected.len());
        for n in &nodes {
            assert!(expected.contains(&n.descriptor));
        }
    }

    #[test]
    fn canonical_anchors_present_and_no_double_none() {
        let nodes = enumerate_nodes();
        let start = canonical_start();
        let goal = half_turn_goal(&start);
        assert!(nodes.iter().any(|n| n.descriptor == start));
        assert!(nodes.iter().any(|n| n.descriptor == goal));
        for n in &nodes {
            assert!(n.descriptor.contact_count() >= 3);
        }
    }

    #[test]
    fn canonical_plan_is_r_t_m_i() {
        let graph = TransitionGraph::build();
        let start = canonical_start();
        let goal = half_turn_goal(&start);
        let plan = graph.plan_primitives(&start, &goal).expect("plan exists");
        assert_eq!(
            plan.finger_sequence(),
            vec![FingerId::R, FingerId::T, FingerId::M, FingerId::I]
        );
        assert_eq!(plan.len(), 4);
        // chaining invariant and labels
        for w in plan.primitives.windows(2) {
            assert_eq!(w[0].goal, w[1].start);
        }
        assert_eq!(plan.primitives[0].start.descriptor, start);
        assert_eq!(plan.primitives[3].goal.descriptor, goal);
        let labels: Vec<char> = plan.primitives.iter().map(|p| p.label()).collect();
        assert_eq!(labels, vec!['A', 'B', 'C', 'D']);
        for p in &plan.primitives {
            assert_eq!(
                p.edge_sequence(),
                [
                    RepresentationKind::Detach,
                    RepresentationKind::Crossover,
                    RepresentationKind::Attach
                ]
            );
            // start and goal differ exactly in the moving finger's side
            for id in FingerId::ALL {
                if id == p.moving_finger {
                    assert_eq!(
                        p.goal.descriptor.side(id),
                        p.start.descriptor.side(id).opposite()
                    );
                } else {
                    assert_eq!(p.goal.descriptor.side(id), p.start.descriptor.side(id));
                }
            }
        }
    }

    #[test]
    fn plan_length_is_minimal() {
        // exhaustive breadth-limited path search as an independent oracle
        let graph = TransitionGraph::build();
        let start = canonical_start();
        let goal = half_turn_goal(&start);
        let s = graph.node_index(&start).unwrap();
        let g = graph.node_index(&goal).unwrap();
        let mut frontier = vec![s];
        let mut depth = 0;
        let mut reached = s == g;
        while !reached && depth < 8 {
            let mut next = Vec::new();
            for &u in &frontier {
                for &(from, to, _) in graph.primitive_edges.iter().filter(|e| e.0 == u) {
                    assert_eq!(from, u);
                    next.push(to);
                }
            }
            depth += 1;
            reached = next.contains(&g);
            frontier = next;
        }
        assert!(reached);
        let plan = graph.plan_primitives(&start, &goal).unwrap();
        assert_eq!(plan.len(), depth, "plan is not minimal");
    }

    #[test]
    fn same_start_and_goal_gives_empty_plan() {
        let graph = TransitionGraph::build();
        let start = canonical_start();
        let plan = graph.plan_primitives(&start, &start).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn reversed_endpoints_have_a_plan_of_equal_length() {
        let graph = TransitionGraph::build();
        let start = canonical_start();
        let goal = half_turn_goal(&start);
        let forward = graph.plan_primitives(&start, &goal).unwrap();
        let back = graph.plan_primitives(&goal, &start).unwrap();
        assert_eq!(back.len(), forward.len());
        assert_eq!(back.primitives[0].start.descriptor, goal);
        assert_eq!(back.primitives[3].goal.descriptor, start);
        // the exact reverse move sequence also exists edge-by-edge
        let mut cur = graph.node_index(&goal).unwrap();
        for p in forward.primitives.iter().rev() {
            let f = p.moving_finger;
            let next = graph
                .primitive_edges
                .iter()
                .find(|&&(from, _, ef)| from == cur && ef == f)
                .map(|&(_, to, _)| to)
                .expect("reverse primitive edge exists");
            cur = next;
        }
        assert_eq!(cur, graph.node_index(&start).unwrap());
    }

    #[test]
    fn graph_is_mirror_symmetric() {
        let graph = TransitionGraph::build();
        let mirror = |d: &ContactStateDescriptor| {
            let mut m = *d;
            for id in FingerId::ALL {
                m = m.with_side(id, m.side(id).opposite());
            }
            m
        };
        for n in &graph.nodes {
            let m = mirror(&n.descriptor);
            assert!(
                graph.node_index(&m).is_some(),
                "mirror of {} missing",
                n.descriptor
            );
        }
        for e in &graph.edges {
            let from = mirror(&graph.nodes[e.from].descriptor);
            let to = mirror(&graph.nodes[e.to].descriptor);
            let fi = graph.node_index(&from).unwrap();
            let ti = graph.node_index(&to).unwrap();
            assert!(
                graph
                    .edges
                    .iter()
                    .any(|x| x.from == fi && x.to == ti && x.kind == e.kind && x.finger == e.finger),
                "mirror of edge {} -> {} missing",
                graph.nodes[e.from].descriptor,
                graph.nodes[e.to].descriptor
            );
        }
    }

    #[test]
    fn detach_edges_change_exactly_one_contact_flag() {
        let graph = TransitionGraph::build();
        assert!(!graph.edges.is_empty());
        for e in &graph.edges {
            let a = graph.nodes[e.from].descriptor;
            let b = graph.nodes[e.to].descriptor;
            let mut diffs = 0;
            for id in FingerId::ALL {
                if a.side(id) != b.side(id) {
                    diffs += 1;
                    assert_eq!(id, e.finger);
                    match e.kind {
                        RepresentationKind::Detach => {
                            assert_eq!(b.side(id), SideLabel::None)
                        }
                        RepresentationKind::Attach => {
                            assert_eq!(a.side(id), SideLabel::None)
                        }
                        RepresentationKind::Crossover => panic!("crossover is not a graph edge"),
                    }
                }
            }
            assert_eq!(diffs, 1);
        }
    }

    #[test]
    fn unreachable_and_invalid_queries_give_none() {
        let graph = TransitionGraph::build();
        let bogus = ContactStateDescriptor::new([SideLabel::Near; 4]);
        assert!(graph.plan_primitives(&bogus, &canonical_start()).is_none());
        // non-anchor endpoints are rejected
        let detached = canonical_start().with_side(FingerId::R, SideLabel::None);
        assert!(graph
            .plan_primitives(&detached, &canonical_start())
            .is_none());
    }

    #[test]
    fn dump_lists_every_edge_once() {
        let graph = TransitionGraph::build();
        let dump = graph.dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(
            lines.len(),
            graph.edges.len() + graph.primitive_edges.len()
        );
        assert!(lines.iter().any(|l| l.contains("DETACH")));
        assert!(lines.iter().any(|l| l.contains("ATTACH")));
        assert!(lines.iter().any(|l| l.contains("PRIMITIVE")));
        assert!(!dump.contains("CROSSOVER"), "crossover happens inside primitives");
    }

    /// Build-time audit: the plan's endpoint anchors are realizable as
    /// world states whose classification and stability checks agree with
    /// the graph's descriptors.
    #[test]
    fn plan_endpoints_audit_against_contact_module() {
        use crate::contactstate::{classify, is_most_stable};
        use crate::geometry::Superquadric;
        use crate::hand::HandModel;
        use crate::simcore::{nominal_world, SimConfig};
        use nalgebra::{UnitQuaternion, Vector3};

        let cfg = SimConfig {
            joint_noise: 0.0,
            ..SimConfig::default()
        };
        let hand = HandModel::default();
        let shape = Superquadric::new(0.02, 0.11, 0.1, 0.0, 0.0).unwrap();
        let w = nominal_world(&hand, shape, 1.0, &cfg, 0.004).unwrap();
        assert_eq!(classify(&w), canonical_start());
        assert!(is_most_stable(&w));

        // the half-turn goal is the same world with the object yawed by pi:
        // fingers keep their world placement, labels mirror
        let mut w2 = w.clone();
        w2.object.rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI)
            * w2.object.rot;
        w2.contacts = crate::simcore::detect_contacts(&w2, &cfg);
        assert_eq!(classify(&w2), half_turn_goal(&canonical_start()));
        assert!(is_most_stable(&w2));
    }
}
