//! Event trees, staged trees and chain event graphs.
//!
//! An [`EventTree`] is a rooted tree whose edges carry an event label and a
//! conditional probability `theta`. A [`StagePartition`] groups internal
//! vertices whose out-edges are in label-matched bijection; a [`StagedTree`]
//! additionally requires the matched thetas to agree. The [`ChainEventGraph`]
//! is the quotient of a staged tree by positions, with every leaf collapsed
//! into one sink.
//!
//! Vertices and edges are addressed by dense indices internally; string ids
//! are kept for I/O and error messages.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{CegError, Result};
use crate::semi_markov::HoldingTimeLaw;

/// Tolerance for per-vertex theta normalisation and for stage equality.
pub const THETA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub from: String,
    pub to: String,
    pub label: String,
    pub theta: f64,
    #[serde(default)]
    pub holding: Option<HoldingTimeLaw>,
    #[serde(default)]
    pub failure: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawTree {
    vertices: Vec<String>,
    root: String,
    edges: Vec<Edge>,
}

/// A validated rooted event tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct EventTree {
    vertices: Vec<String>,
    root: usize,
    edges: Vec<Edge>,
    vertex_index: HashMap<String, usize>,
    edge_index: HashMap<String, usize>,
    // (from, to) as vertex indices, aligned with `edges`
    endpoints: Vec<(usize, usize)>,
    children: Vec<Vec<usize>>,
    parent_edge: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl TryFrom<RawTree> for EventTree {
    type Error = CegError;
    fn try_from(raw: RawTree) -> Result<Self> {
        EventTree::new(raw.vertices, &raw.root, raw.edges)
    }
}

impl From<EventTree> for RawTree {
    fn from(t: EventTree) -> Self {
        RawTree {
            root: t.vertices[t.root].clone(),
            vertices: t.vertices,
            edges: t.edges,
        }
    }
}

impl EventTree {
    /// Splits the tree back into vertex ids, root id and edges.
    pub fn into_parts(self) -> (Vec<String>, String, Vec<Edge>) {
        let raw = RawTree::from(self);
        (raw.vertices, raw.root, raw.edges)
    }

    /// Validates a raw description and builds the tree.
    pub fn new(vertices: Vec<String>, root: &str, edges: Vec<Edge>) -> Result<Self> {
        let mut vertex_index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if vertex_index.insert(v.clone(), i).is_some() {
                return Err(CegError::ModelInvalid(format!("duplicate vertex id {v}")));
            }
        }
        let root_idx = *vertex_index
            .get(root)
            .ok_or_else(|| CegError::ModelInvalid(format!("root {root} is not a vertex")))?;

        let n = vertices.len();
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut endpoints = Vec::with_capacity(edges.len());
        let mut children = vec![Vec::new(); n];
        let mut parent_edge: Vec<Option<usize>> = vec![None; n];
        for (i, e) in edges.iter().enumerate() {
            if edge_index.insert(e.id.clone(), i).is_some() {
                return Err(CegError::ModelInvalid(format!("duplicate edge id {}", e.id)));
            }
            let from = *vertex_index.get(&e.from).ok_or_else(|| {
                CegError::ModelInvalid(format!("edge {} starts at unknown vertex {}", e.id, e.from))
            })?;
            let to = *vertex_index.get(&e.to).ok_or_else(|| {
                CegError::ModelInvalid(format!("edge {} ends at unknown vertex {}", e.id, e.to))
            })?;
            if !(0.0..=1.0).contains(&e.theta) || !e.theta.is_finite() {
                return Err(CegError::ModelInvalid(format!(
                    "edge {} has theta {} outside [0, 1]",
                    e.id, e.theta
                )));
            }
            if to == root_idx {
                return Err(CegError::CycleDetected(e.to.clone()));
            }
            if parent_edge[to].is_some() {
                return Err(CegError::MultipleParents(e.to.clone()));
            }
            parent_edge[to] = Some(i);
            children[from].push(i);
            endpoints.push((from, to));
        }

        // Reachability: with one parent per non-root vertex, anything not
        // reached from the root sits on a cycle.
        let mut depth = vec![usize::MAX; n];
        depth[root_idx] = 0;
        let mut stack = vec![root_idx];
        let mut seen = 1;
        while let Some(v) = stack.pop() {
            for &ei in &children[v] {
                let c = endpoints[ei].1;
                if depth[c] == usize::MAX {
                    depth[c] = depth[v] + 1;
                    seen += 1;
                    stack.push(c);
                }
            }
        }
        if seen != n {
            let stray = (0..n).find(|&v| depth[v] == usize::MAX).unwrap();
            return Err(CegError::CycleDetected(vertices[stray].clone()));
        }

        for (v, out) in children.iter().enumerate() {
            if out.is_empty() {
                continue;
            }
            let mut labels = BTreeSet::new();
            for &ei in out {
                if !labels.insert(edges[ei].label.as_str()) {
                    return Err(CegError::DuplicateEdgeLabel(vertices[v].clone()));
                }
            }
            let sum: f64 = out.iter().map(|&ei| edges[ei].theta).sum();
            if (sum - 1.0).abs() > THETA_TOL {
                return Err(CegError::ThetaNotNormalized {
                    vertex: vertices[v].clone(),
                    sum,
                });
            }
        }
        for (i, e) in edges.iter().enumerate() {
            if e.failure && !children[endpoints[i].1].is_empty() {
                return Err(CegError::ModelInvalid(format!(
                    "failure edge {} does not end at a leaf",
                    e.id
                )));
            }
        }

        Ok(EventTree {
            vertices,
            root: root_idx,
            edges,
            vertex_index,
            edge_index,
            endpoints,
            children,
            parent_edge,
            depth,
        })
    }

    pub fn root(&self) -> usize {
        self.root
    }
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn vertex_id(&self, v: usize) -> &str {
        &self.vertices[v]
    }
    pub fn vertex_ids(&self) -> &[String] {
        &self.vertices
    }
    pub fn vertex(&self, id: &str) -> Option<usize> {
        self.vertex_index.get(id).copied()
    }
    pub fn edge(&self, id: &str) -> Option<usize> {
        self.edge_index.get(id).copied()
    }
    pub fn edge_data(&self, e: usize) -> &Edge {
        &self.edges[e]
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn source(&self, e: usize) -> usize {
        self.endpoints[e].0
    }
    pub fn target(&self, e: usize) -> usize {
        self.endpoints[e].1
    }
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.children[v]
    }
    pub fn parent_edge(&self, v: usize) -> Option<usize> {
        self.parent_edge[v]
    }
    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }
    pub fn is_leaf(&self, v: usize) -> bool {
        self.children[v].is_empty()
    }
    pub fn internal_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| !self.is_leaf(v)).collect()
    }
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| self.is_leaf(v)).collect()
    }

    /// Out-edges of `v` sorted by label; this order is the slot order used for
    /// stage bijections.
    pub fn out_edges_by_label(&self, v: usize) -> Vec<usize> {
        let mut out = self.children[v].clone();
        out.sort_by(|&a, &b| self.edges[a].label.cmp(&self.edges[b].label));
        out
    }

    /// Edges from the root to `v`, in traversal order.
    pub fn path_to(&self, v: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = v;
        while let Some(e) = self.parent_edge[cur] {
            path.push(e);
            cur = self.source(e);
        }
        path.reverse();
        path
    }

    /// True when `ancestor` lies on the root path of `v` (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, v: usize) -> bool {
        let mut cur = v;
        loop {
            if cur == ancestor {
                return true;
            }
            match self.parent_edge[cur] {
                Some(e) => cur = self.source(e),
                None => return false,
            }
        }
    }

    /// Number of leaves in the subtree rooted at each vertex.
    pub fn leaf_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_vertices()];
        let mut order: Vec<usize> = (0..self.num_vertices()).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(self.depth[v]));
        for v in order {
            if self.is_leaf(v) {
                counts[v] = 1;
            } else {
                counts[v] = self.children[v].iter().map(|&e| counts[self.target(e)]).sum();
            }
        }
        counts
    }

    /// Every root-to-leaf path as a list of edge indices.
    pub fn root_to_leaf_paths(&self) -> Vec<Vec<usize>> {
        self.leaves().into_iter().map(|l| self.path_to(l)).collect()
    }

    /// Edges that lie on at least one root-to-leaf path ending in a failure edge.
    pub fn reaches_failure(&self) -> Vec<bool> {
        let mut reach = vec![false; self.num_edges()];
        for (i, e) in self.edges.iter().enumerate() {
            if e.failure {
                for p in self.path_to(self.target(i)) {
                    reach[p] = true;
                }
            }
        }
        reach
    }

    /// Replaces the thetas out of `v` (given in the order of `out_edges(v)`).
    pub fn with_thetas(&self, thetas: &[(usize, f64)]) -> Result<EventTree> {
        let mut edges = self.edges.clone();
        for &(e, t) in thetas {
            edges[e].theta = t;
        }
        EventTree::new(self.vertices.clone(), &self.vertices[self.root], edges)
    }
}

/// Checks that `path` starts at the root and is connected, returning the
/// product of its thetas.
pub fn path_probability(tree: &EventTree, path: &[usize]) -> Result<f64> {
    let mut at = tree.root();
    let mut p = 1.0;
    for &e in path {
        if e >= tree.num_edges() || tree.source(e) != at {
            let id = tree
                .edges()
                .get(e)
                .map(|x| x.id.clone())
                .unwrap_or_else(|| e.to_string());
            return Err(CegError::DisconnectedPath(id));
        }
        p *= tree.edge_data(e).theta;
        at = tree.target(e);
    }
    Ok(p)
}

/// Structural stage partition: vertices in one stage have the same out-degree
/// and the same label set. Thetas are not compared here, so this is what the
/// structure learner and the fitter operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePartition {
    stages: Vec<Vec<usize>>,
    stage_of: Vec<Option<usize>>,
    // per internal vertex, its out-edges in slot order
    slots: Vec<Vec<usize>>,
}

impl StagePartition {
    pub fn new(tree: &EventTree, stages: Vec<Vec<usize>>) -> Result<Self> {
        let n = tree.num_vertices();
        let mut stage_of = vec![None; n];
        let mut clean = Vec::with_capacity(stages.len());
        for mut stage in stages {
            if stage.is_empty() {
                continue;
            }
            stage.sort_unstable();
            for &v in &stage {
                if v >= n || tree.is_leaf(v) {
                    return Err(CegError::ModelInvalid(format!(
                        "stage member {} is not an internal vertex",
                        tree.vertex_ids().get(v).cloned().unwrap_or_else(|| v.to_string())
                    )));
                }
                if stage_of[v].is_some() {
                    return Err(CegError::ModelInvalid(format!(
                        "vertex {} appears in two stages",
                        tree.vertex_id(v)
                    )));
                }
                stage_of[v] = Some(clean.len());
            }
            clean.push(stage);
        }
        for v in tree.internal_vertices() {
            if stage_of[v].is_none() {
                stage_of[v] = Some(clean.len());
                clean.push(vec![v]);
            }
        }
        let slots: Vec<Vec<usize>> = (0..n).map(|v| tree.out_edges_by_label(v)).collect();
        for stage in &clean {
            let first = stage[0];
            for &w in &stage[1..] {
                if slots[first].len() != slots[w].len() {
                    return Err(CegError::IncompatibleStage {
                        first: tree.vertex_id(first).to_string(),
                        second: tree.vertex_id(w).to_string(),
                        reason: "out-degree mismatch".into(),
                    });
                }
                let same_labels = slots[first]
                    .iter()
                    .zip(&slots[w])
                    .all(|(&a, &b)| tree.edge_data(a).label == tree.edge_data(b).label);
                if !same_labels {
                    return Err(CegError::IncompatibleStage {
                        first: tree.vertex_id(first).to_string(),
                        second: tree.vertex_id(w).to_string(),
                        reason: "label set mismatch".into(),
                    });
                }
            }
        }
        // deterministic stage order: by smallest member
        let mut order: Vec<usize> = (0..clean.len()).collect();
        order.sort_by_key(|&s| clean[s][0]);
        let stages: Vec<Vec<usize>> = order.iter().map(|&s| clean[s].clone()).collect();
        let mut stage_of = vec![None; n];
        for (s, stage) in stages.iter().enumerate() {
            for &v in stage {
                stage_of[v] = Some(s);
            }
        }
        Ok(StagePartition {
            stages,
            stage_of,
            slots,
        })
    }

    pub fn finest(tree: &EventTree) -> Self {
        StagePartition::new(tree, Vec::new()).expect("singleton stages are always valid")
    }

    /// Builds a partition from vertex-id groups.
    pub fn from_ids(tree: &EventTree, groups: &[Vec<String>]) -> Result<Self> {
        let mut stages = Vec::with_capacity(groups.len());
        for g in groups {
            let mut s = Vec::with_capacity(g.len());
            for id in g {
                s.push(
                    tree.vertex(id)
                        .ok_or_else(|| CegError::ModelInvalid(format!("unknown vertex {id}")))?,
                );
            }
            stages.push(s);
        }
        StagePartition::new(tree, stages)
    }

    pub fn stages(&self) -> &[Vec<usize>] {
        &self.stages
    }
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }
    pub fn stage_of(&self, v: usize) -> Option<usize> {
        self.stage_of[v]
    }
    /// Out-edges of `v` in slot (label) order.
    pub fn slots(&self, v: usize) -> &[usize] {
        &self.slots[v]
    }
    pub fn stage_width(&self, s: usize) -> usize {
        self.slots[self.stages[s][0]].len()
    }
    /// Slot index of edge `e` within its source vertex's stage.
    pub fn slot_of_edge(&self, tree: &EventTree, e: usize) -> usize {
        let v = tree.source(e);
        self.slots[v].iter().position(|&x| x == e).expect("edge out of its source")
    }

    pub fn to_ids(&self, tree: &EventTree) -> Vec<Vec<String>> {
        self.stages
            .iter()
            .map(|s| s.iter().map(|&v| tree.vertex_id(v).to_string()).collect())
            .collect()
    }
}

/// A staged tree: a stage partition whose matched thetas agree within
/// [`THETA_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct StagedTree {
    pub tree: EventTree,
    pub partition: StagePartition,
}

impl StagedTree {
    pub fn new(tree: EventTree, partition: StagePartition) -> Result<Self> {
        for stage in partition.stages() {
            let first = stage[0];
            for &w in &stage[1..] {
                for (&a, &b) in partition.slots(first).iter().zip(partition.slots(w)) {
                    if (tree.edge_data(a).theta - tree.edge_data(b).theta).abs() > THETA_TOL {
                        return Err(CegError::IncompatibleStage {
                            first: tree.vertex_id(first).to_string(),
                            second: tree.vertex_id(w).to_string(),
                            reason: format!(
                                "theta mismatch on label {}",
                                tree.edge_data(a).label
                            ),
                        });
                    }
                }
            }
        }
        Ok(StagedTree { tree, partition })
    }
}

/// Builds a staged tree from explicit vertex-index stages.
pub fn build_staged_tree(tree: EventTree, stages: Vec<Vec<usize>>) -> Result<StagedTree> {
    let partition = StagePartition::new(&tree, stages)?;
    StagedTree::new(tree, partition)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CegEdge {
    pub from: usize,
    pub to: usize,
    pub label: String,
    pub theta: f64,
    /// Tree edges merged into this CEG edge.
    pub tree_edges: Vec<usize>,
}

/// The quotient of a staged tree by positions. Position 0 is always the sink.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEventGraph {
    positions: Vec<Vec<usize>>,
    position_of: Vec<usize>,
    edges: Vec<CegEdge>,
    stage_of_position: Vec<Option<usize>>,
}

impl ChainEventGraph {
    pub const SINK: usize = 0;

    pub fn positions(&self) -> &[Vec<usize>] {
        &self.positions
    }
    pub fn position_of(&self, v: usize) -> usize {
        self.position_of[v]
    }
    pub fn edges(&self) -> &[CegEdge] {
        &self.edges
    }
    pub fn stage_of_position(&self, p: usize) -> Option<usize> {
        self.stage_of_position[p]
    }
    /// Positions other than the sink, as sorted vertex lists.
    pub fn non_sink_positions(&self) -> &[Vec<usize>] {
        &self.positions[1..]
    }
}

/// Computes positions bottom-up: two vertices share a position iff they are in
/// one stage and their slot-matched children share positions. Leaves collapse
/// to the sink.
pub fn build_ceg(staged: &StagedTree) -> ChainEventGraph {
    let tree = &staged.tree;
    let part = &staged.partition;
    let n = tree.num_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(tree.depth(v)), v));

    let mut position_of = vec![usize::MAX; n];
    let mut keys: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
    let mut next = 1;
    for v in order {
        if tree.is_leaf(v) {
            position_of[v] = ChainEventGraph::SINK;
            continue;
        }
        let stage = part.stage_of(v).expect("internal vertex has a stage");
        let children: Vec<usize> = part
            .slots(v)
            .iter()
            .map(|&e| position_of[tree.target(e)])
            .collect();
        let id = *keys.entry((stage, children)).or_insert_with(|| {
            next += 1;
            next - 1
        });
        position_of[v] = id;
    }

    // renumber so positions are ordered by their smallest vertex
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); next];
    for v in 0..n {
        members[position_of[v]].push(v);
    }
    let mut inner: Vec<usize> = (1..next).collect();
    inner.sort_by_key(|&p| members[p][0]);
    let mut remap = vec![0usize; next];
    for (new, &old) in inner.iter().enumerate() {
        remap[old] = new + 1;
    }
    let mut positions = vec![members[0].clone()];
    positions.extend(inner.iter().map(|&p| members[p].clone()));
    for p in position_of.iter_mut() {
        *p = remap[*p];
    }

    let mut stage_of_position = vec![None; positions.len()];
    let mut edges = Vec::new();
    for (p, verts) in positions.iter().enumerate().skip(1) {
        let rep = verts[0];
        stage_of_position[p] = part.stage_of(rep);
        for (slot, &e) in part.slots(rep).iter().enumerate() {
            let data = tree.edge_data(e);
            let tree_edges: Vec<usize> = verts.iter().map(|&w| part.slots(w)[slot]).collect();
            edges.push(CegEdge {
                from: p,
                to: position_of[tree.target(e)],
                label: data.label.clone(),
                theta: data.theta,
                tree_edges,
            });
        }
    }
    ChainEventGraph {
        positions,
        position_of,
        edges,
        stage_of_position,
    }
}

/// Failure paths grouped by the root cause they pass through.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPartition {
    pub root_causes: Vec<usize>,
    pub blocks: Vec<Vec<Vec<usize>>>,
}

impl PathPartition {
    /// π(Λ_e(fail)|T) for each root cause, in root-cause order.
    pub fn block_probabilities(&self, tree: &EventTree) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                b.iter()
                    .map(|p| path_probability(tree, p).expect("enumerated paths are connected"))
                    .sum()
            })
            .collect()
    }

    /// π(Λ(fail)|T).
    pub fn failure_probability(&self, tree: &EventTree) -> f64 {
        self.block_probabilities(tree).iter().sum()
    }

    pub fn root_cause_index(&self, e: usize) -> Option<usize> {
        self.root_causes.iter().position(|&r| r == e)
    }
}

/// Enumerates every root-to-leaf path ending in a failure edge and assigns it
/// to the unique root cause it passes through.
pub fn enumerate_failure_paths(
    tree: &EventTree,
    root_causes: &[usize],
    failure_edges: &[usize],
) -> Result<PathPartition> {
    let mut blocks = vec![Vec::new(); root_causes.len()];
    for &f in failure_edges {
        if f >= tree.num_edges() || !tree.is_leaf(tree.target(f)) {
            return Err(CegError::ModelInvalid(format!("failure edge {f} is not a leaf edge")));
        }
        let path = tree.path_to(tree.target(f));
        let hits: Vec<usize> = path
            .iter()
            .filter_map(|e| root_causes.iter().position(|r| r == e))
            .collect();
        match hits.as_slice() {
            [only] => blocks[*only].push(path),
            [] => {
                return Err(CegError::ModelInvalid(format!(
                    "failure edge {} has no root cause on its path",
                    tree.edge_data(f).id
                )))
            }
            [a, b, ..] => {
                return Err(CegError::PathThroughTwoRootCauses(
                    tree.edge_data(root_causes[*a]).id.clone(),
                    tree.edge_data(root_causes[*b]).id.clone(),
                ))
            }
        }
    }
    Ok(PathPartition {
        root_causes: root_causes.to_vec(),
        blocks,
    })
}
