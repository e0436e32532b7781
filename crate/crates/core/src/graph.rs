//! Skeleton topology over the 23 selected whole-body keypoints and the
//! three-way spatial-configuration partition of its adjacency.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyPart {
    Face,
    Arm,
    Mouth,
    Hand,
}

impl BodyPart {
    pub const ALL: [BodyPart; 4] = [BodyPart::Face, BodyPart::Arm, BodyPart::Mouth, BodyPart::Hand];

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::Face => "face",
            BodyPart::Arm => "arm",
            BodyPart::Mouth => "mouth",
            BodyPart::Hand => "hand",
        }
    }
}

impl std::str::FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "face" => Ok(BodyPart::Face),
            "arm" | "arms" => Ok(BodyPart::Arm),
            "mouth" => Ok(BodyPart::Mouth),
            "hand" | "hands" => Ok(BodyPart::Hand),
            other => Err(Error::invalid(format!("unknown body part '{other}'"))),
        }
    }
}

/// Parses a comma-separated part list such as `"mouth,hand"`.
pub fn parse_parts(s: &str) -> Result<BTreeSet<BodyPart>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Number of keypoints in the full canonical layout.
pub const CANONICAL_NODES: usize = 23;

/// `(COCO-WholeBody index, part, label)` in canonical local order.
pub const CANONICAL_KEYPOINTS: [(u32, BodyPart, &str); CANONICAL_NODES] = [
    (1, BodyPart::Face, "nose"),
    (2, BodyPart::Face, "left_eye"),
    (3, BodyPart::Face, "right_eye"),
    (4, BodyPart::Face, "left_ear"),
    (5, BodyPart::Face, "right_ear"),
    (6, BodyPart::Arm, "left_shoulder"),
    (7, BodyPart::Arm, "right_shoulder"),
    (8, BodyPart::Arm, "left_elbow"),
    (9, BodyPart::Arm, "right_elbow"),
    (72, BodyPart::Mouth, "mouth_right"),
    (78, BodyPart::Mouth, "mouth_left"),
    (86, BodyPart::Mouth, "upper_lip"),
    (90, BodyPart::Mouth, "lower_lip"),
    (92, BodyPart::Hand, "left_thumb_1"),
    (94, BodyPart::Hand, "left_thumb_3"),
    (96, BodyPart::Hand, "left_thumb_tip"),
    (101, BodyPart::Hand, "left_index_2"),
    (104, BodyPart::Hand, "left_index_tip"),
    (113, BodyPart::Hand, "right_thumb_1"),
    (115, BodyPart::Hand, "right_thumb_3"),
    (117, BodyPart::Hand, "right_thumb_tip"),
    (122, BodyPart::Hand, "right_index_2"),
    (125, BodyPart::Hand, "right_index_tip"),
];

/// Undirected edges between canonical indices.
pub const CANONICAL_EDGES: [(usize, usize); 25] = [
    // face
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    // face -> mouth
    (0, 11),
    // mouth ring
    (11, 9),
    (11, 10),
    (12, 9),
    (12, 10),
    (11, 12),
    // ears -> shoulders
    (3, 5),
    (4, 6),
    // arms
    (5, 6),
    (5, 7),
    (6, 8),
    // elbows -> hands
    (7, 13),
    (8, 18),
    // left hand
    (13, 14),
    (14, 15),
    (13, 16),
    (16, 17),
    // right hand
    (18, 19),
    (19, 20),
    (18, 21),
    (21, 22),
];

/// Canonical index of the lower lip (COCO-WholeBody 90).
pub const LOWER_LIP: usize = 12;
/// Canonical index of the nose, the root when the mouth is not selected.
pub const NOSE: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub local_index: usize,
    pub canonical_index: usize,
    pub source_index: u32,
    pub part: BodyPart,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub parts: Vec<BodyPart>,
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize)>,
    pub root: usize,
    /// Set when the selected subgraph has more than one component.
    pub disconnected: bool,
}

/// Selects the nodes of `parts` in canonical order, keeps every canonical
/// edge whose endpoints both survive, and renumbers densely from 0.
///
/// The root is the lower lip when the mouth is selected, otherwise the nose
/// (if the face is selected), otherwise the first selected node.
pub fn build_topology(parts: &BTreeSet<BodyPart>) -> Result<SkeletonTopology> {
    if parts.is_empty() {
        return Err(Error::invalid("at least one body part must be selected"));
    }
    let mut local_of = [usize::MAX; CANONICAL_NODES];
    let mut nodes = Vec::new();
    for (ci, &(src, part, label)) in CANONICAL_KEYPOINTS.iter().enumerate() {
        if parts.contains(&part) {
            local_of[ci] = nodes.len();
            nodes.push(Node {
                local_index: nodes.len(),
                canonical_index: ci,
                source_index: src,
                part,
                label: label.to_string(),
            });
        }
    }
    let edges: Vec<(usize, usize)> = CANONICAL_EDGES
        .iter()
        .filter_map(|&(a, b)| {
            let (la, lb) = (local_of[a], local_of[b]);
            (la != usize::MAX && lb != usize::MAX).then_some((la, lb))
        })
        .collect();
    let root = [LOWER_LIP, NOSE]
        .into_iter()
        .map(|c| local_of[c])
        .find(|&l| l != usize::MAX)
        .unwrap_or(0);
    let mut topo = SkeletonTopology {
        parts: parts.iter().copied().collect(),
        nodes,
        edges,
        root,
        disconnected: false,
    };
    topo.disconnected = component_count(&topo) > 1;
    Ok(topo)
}

pub fn full_topology() -> SkeletonTopology {
    build_topology(&BodyPart::ALL.into_iter().collect()).expect("non-empty part set")
}

impl SkeletonTopology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Canonical keypoint index of every local node, in local order.
    pub fn canonical_indices(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.canonical_index).collect()
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(a, b) in &self.edges {
            if a < adj.len() && b < adj.len() {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }

    /// Symmetric 0/1 adjacency without self-loops, row-major `V x V`.
    pub fn adjacency(&self) -> Vec<f64> {
        let v = self.node_count();
        let mut a = vec![0.0; v * v];
        for &(i, j) in &self.edges {
            a[i * v + j] = 1.0;
            a[j * v + i] = 1.0;
        }
        a
    }
}

/// Marker for nodes not reachable from the root.
pub const UNREACHABLE: usize = usize::MAX;

/// BFS hop counts from `root`; unreachable nodes get [`UNREACHABLE`].
pub fn hop_distances(topology: &SkeletonTopology, root: usize) -> Result<Vec<usize>> {
    let v = topology.node_count();
    if root >= v {
        return Err(Error::invalid(format!("root {root} out of range for {v} nodes")));
    }
    let adj = topology.neighbors();
    let mut dist = vec![UNREACHABLE; v];
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if dist[w] == UNREACHABLE {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    Ok(dist)
}

fn component_count(topology: &SkeletonTopology) -> usize {
    let v = topology.node_count();
    let adj = topology.neighbors();
    let mut seen = vec![false; v];
    let mut count = 0;
    for s in 0..v {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

/// Degree-normalized partition stack: root/self, centripetal, centrifugal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedAdjacency {
    pub node_count: usize,
    /// `3 x V x V`, row-major.
    pub stacks: Vec<f64>,
    pub normalization_epsilon: f64,
}

pub const PARTITIONS: usize = 3;
pub const DEFAULT_EPSILON: f64 = 0.001;

/// Unnormalized 0/1 partition masks, `3 x V x V`.
///
/// Pair `(i, j)` with `j` a neighbor of `i` or `j == i` goes to slot 0 when
/// `d(j) == d(i)`, slot 1 when `d(j) < d(i)` and slot 2 when `d(j) > d(i)`,
/// where `d` is the hop distance to the root.
pub fn partition_masks(topology: &SkeletonTopology) -> Result<Vec<f64>> {
    let v = topology.node_count();
    let d = hop_distances(topology, topology.root)?;
    let mut masks = vec![0.0; PARTITIONS * v * v];
    let mut assign = |i: usize, j: usize| {
        let slot = match d[j].cmp(&d[i]) {
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Greater => 2,
        };
        masks[(slot * v + i) * v + j] = 1.0;
    };
    for i in 0..v {
        assign(i, i);
    }
    for &(a, b) in &topology.edges {
        assign(a, b);
        assign(b, a);
    }
    Ok(masks)
}

pub fn partition_adjacency(topology: &SkeletonTopology, epsilon: f64) -> Result<PartitionedAdjacency> {
    if epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::invalid(format!("normalization epsilon must be > 0, got {epsilon}")));
    }
    let v = topology.node_count();
    let mut stacks = partition_masks(topology)?;
    for row in stacks.chunks_mut(v) {
        let deg: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= deg + epsilon);
    }
    Ok(PartitionedAdjacency {
        node_count: v,
        stacks,
        normalization_epsilon: epsilon,
    })
}

impl PartitionedAdjacency {
    pub fn partition(&self, p: usize) -> &[f64] {
        let vv = self.node_count * self.node_count;
        &self.stacks[p * vv..(p + 1) * vv]
    }

    /// Flat `(p * V + i) * V + j` indices of the nonzero entries.
    pub fn support(&self) -> Vec<usize> {
        self.stacks
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn row_sums(&self) -> Vec<Vec<f64>> {
        (0..PARTITIONS)
            .map(|p| {
                self.partition(p)
                    .chunks(self.node_count)
                    .map(|r| r.iter().sum())
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub pass: bool,
    pub connected: bool,
    pub problems: Vec<String>,
}

/// Checks node numbering, edge bounds, self-loops, duplicate edges and root
/// membership, and reports connectivity.
pub fn validate_topology(topology: &SkeletonTopology) -> TopologyReport {
    let v = topology.node_count();
    let mut problems = Vec::new();
    for (i, n) in topology.nodes.iter().enumerate() {
        if n.local_index != i {
            problems.push(format!("node at position {i} has local index {}", n.local_index));
        }
    }
    let mut seen = BTreeSet::new();
    for &(a, b) in &topology.edges {
        if a >= v || b >= v {
            problems.push(format!("edge ({a}, {b}) out of range for {v} nodes"));
            continue;
        }
        if a == b {
            problems.push(format!("self-loop on node {a}"));
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            problems.push(format!("duplicate edge ({a}, {b})"));
        }
    }
    if topology.root >= v {
        problems.push(format!("root {} is not a selected node", topology.root));
    }
    let connected = problems.is_empty() && component_count(topology) == 1;
    TopologyReport {
        pass: problems.is_empty(),
        connected,
        problems,
    }
}

/// The six body-part subsets used for part ablations.
pub fn ablation_combinations() -> Vec<BTreeSet<BodyPart>> {
    use BodyPart::*;
    [
        vec![Mouth, Hand],
        vec![Arm, Face],
        vec![Mouth, Hand, Face],
        vec![Mouth, Hand, Arm],
        vec![Mouth, Arm, Face],
        vec![Face, Arm, Mouth, Hand],
    ]
    .into_iter()
    .map(|v| v.into_iter().collect())
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts(list: &[BodyPart]) -> BTreeSet<BodyPart> {
        list.iter().copied().collect()
    }

    #[test]
    fn full_graph_has_23_nodes_rooted_at_lower_lip() {
        let t = full_topology();
        assert_eq!(t.node_count(), 23);
        assert_eq!(t.edges.len(), 25);
        assert_eq!(t.nodes[t.root].source_index, 90);
        assert_eq!(t.root, 12);
        assert!(!t.disconnected);
    }

    #[test]
    fn mouth_only_is_the_ring() {
        let t = build_topology(&parts(&[BodyPart::Mouth])).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.edges.len(), 5);
        assert_eq!(t.nodes[t.root].source_index, 90);
    }

    #[test]
    fn face_only_is_connected_chain() {
        let t = build_topology(&parts(&[BodyPart::Face])).unwrap();
        assert_eq!(t.node_count(), 5);
        assert_eq!(t.edges, vec![(0, 1), (0, 2), (1, 3), (2, 4)]);
        assert_eq!(t.root, 0);
        assert!(validate_topology(&t).connected);
    }

    #[test]
    fn empty_parts_rejected() {
        assert!(matches!(build_topology(&BTreeSet::new()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn hop_distances_from_lower_lip() {
        let t = full_topology();
        let d = hop_distances(&t, t.root).unwrap();
        assert_eq!(d[12], 0);
        assert_eq!(d[11], 1);
        assert_eq!(d[9], 1);
        assert_eq!(d[0], 2); // lip -> upper lip -> nose
        // right index tip: 12-11-0-2-4-6-8-18-21-22
        assert_eq!(d[22], 9);
    }

    #[test]
    fn unreachable_nodes_get_sentinel() {
        let t = build_topology(&parts(&[BodyPart::Hand])).unwrap();
        let d = hop_distances(&t, 0).unwrap();
        assert_eq!(d[5], UNREACHABLE);
        assert!(hop_distances(&t, 99).is_err());
    }

    #[test]
    fn two_node_path_partitions() {
        let t = SkeletonTopology {
            parts: vec![BodyPart::Face],
            nodes: (0..2)
                .map(|i| Node { local_index: i, canonical_index: i, source_index: i as u32 + 1, part: BodyPart::Face, label: String::new() })
                .collect(),
            edges: vec![(0, 1)],
            root: 0,
            disconnected: false,
        };
        let m = partition_masks(&t).unwrap();
        // slot 0: both self-loops
        assert_eq!(&m[0..4], &[1.0, 0.0, 0.0, 1.0]);
        // slot 1 (centripetal): 1 -> 0
        assert_eq!(&m[4..8], &[0.0, 0.0, 1.0, 0.0]);
        // slot 2 (centrifugal): 0 -> 1
        assert_eq!(&m[8..12], &[0.0, 1.0, 0.0, 0.0]);
        assert!(partition_adjacency(&t, 0.0).is_err());
    }

    #[test]
    fn normalized_rows_are_bounded() {
        let a = partition_adjacency(&full_topology(), DEFAULT_EPSILON).unwrap();
        for sums in a.row_sums() {
            for s in sums {
                assert!((0.0..=1.0).contains(&s), "{s}");
            }
        }
        assert!(a.stacks.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn validation_flags_duplicates_and_components() {
        let mut t = full_topology();
        assert!(validate_topology(&t).pass);
        assert!(validate_topology(&t).connected);
        t.edges.push((1, 0));
        let r = validate_topology(&t);
        assert!(!r.pass);
        assert!(r.problems[0].contains("duplicate"));

        let hands = build_topology(&parts(&[BodyPart::Hand])).unwrap();
        let r = validate_topology(&hands);
        assert!(r.pass && !r.connected);
        assert!(hands.disconnected);
    }

    #[test]
    fn parse_part_lists() {
        let p = parse_parts("mouth, hand").unwrap();
        assert_eq!(p, parts(&[BodyPart::Mouth, BodyPart::Hand]));
        assert!(parse_parts("tail").is_err());
    }
}
