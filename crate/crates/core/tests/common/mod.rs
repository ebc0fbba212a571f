#![allow(dead_code)]

use std::collections::HashMap;

use ceg_core::intervention::{ActionSpec, BetaLaw, GammaLaws, RemedyClass, RemedySpec, StrengthSpec};
use ceg_core::semi_markov::SemiMarkovModel;
use ceg_core::tree::{build_ceg, Edge, EventTree, StagePartition, StagedTree};
use rand::Rng;

pub fn transformer_model() -> SemiMarkovModel {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/transformer_model.json");
    SemiMarkovModel::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A random tree description before validation: children per node, a stage
/// colour per node and failure flags on leaves.
pub struct Sketch {
    pub children: Vec<Vec<usize>>,
    pub color: Vec<usize>,
    pub failure: Vec<bool>,
}

impl Sketch {
    fn add(&mut self) -> usize {
        self.children.push(Vec::new());
        self.color.push(0);
        self.failure.push(false);
        self.children.len() - 1
    }

    fn grow<R: Rng>(&mut self, rng: &mut R, at: usize, budget: &mut usize, depth: usize) {
        if *budget < 2 || depth >= 4 || rng.random::<f64>() < 0.25 {
            return;
        }
        let k = rng.random_range(2..=3).min(*budget);
        let first = self.add();
        *budget -= 1;
        self.children[at].push(first);
        self.grow(rng, first, budget, depth + 1);
        for _ in 1..k {
            if *budget == 0 {
                break;
            }
            let size = self.subtree_size(first);
            if size <= *budget && rng.random::<f64>() < 0.5 {
                let copy = self.clone_subtree(first, rng);
                *budget -= size;
                self.children[at].push(copy);
            } else {
                let c = self.add();
                *budget -= 1;
                self.children[at].push(c);
                self.grow(rng, c, budget, depth + 1);
            }
        }
        self.color[at] = rng.random_range(0..2);
    }

    fn subtree_size(&self, v: usize) -> usize {
        1 + self.children[v].iter().map(|&c| self.subtree_size(c)).sum::<usize>()
    }

    fn clone_subtree<R: Rng>(&mut self, v: usize, rng: &mut R) -> usize {
        let n = self.add();
        self.color[n] = if rng.random::<f64>() < 0.8 { self.color[v] } else { rng.random_range(0..2) };
        self.failure[n] = self.failure[v];
        for c in self.children[v].clone() {
            let cc = self.clone_subtree(c, rng);
            self.children[n].push(cc);
        }
        n
    }
}

/// Random staged tree with at most `max_vertices` vertices. Subtrees are
/// often cloned so that non-trivial positions arise; vertices with equal
/// out-degree and colour form a stage and share thetas.
pub fn random_staged_tree<R: Rng>(rng: &mut R, max_vertices: usize) -> StagedTree {
    let mut s = Sketch {
        children: Vec::new(),
        color: Vec::new(),
        failure: Vec::new(),
    };
    let root = s.add();
    let mut budget = max_vertices - 1;
    s.grow(rng, root, &mut budget, 0);
    staged_from_sketch(rng, &s)
}

pub fn staged_from_sketch<R: Rng>(rng: &mut R, s: &Sketch) -> StagedTree {
    let n = s.children.len();
    let mut thetas: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut edges = Vec::new();
    let mut classes: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for v in 0..n {
        let k = s.children[v].len();
        if k == 0 {
            continue;
        }
        let key = (k, s.color[v]);
        classes.entry(key).or_default().push(v);
        let th = thetas
            .entry(key)
            .or_insert_with(|| {
                let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
                let t: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / t).collect()
            })
            .clone();
        for (i, &c) in s.children[v].iter().enumerate() {
            edges.push(Edge {
                id: format!("e{v}_{c}"),
                from: format!("v{v}"),
                to: format!("v{c}"),
                label: ["a", "b", "c"][i].to_string(),
                theta: th[i],
                holding: None,
                failure: s.children[c].is_empty() && s.failure[c],
            });
        }
    }
    let vertices: Vec<String> = (0..n).map(|v| format!("v{v}")).collect();
    let tree = EventTree::new(vertices, "v0", edges).unwrap();
    let mut stages: Vec<Vec<usize>> = classes.into_values().collect();
    stages.sort();
    let partition = StagePartition::new(&tree, stages).unwrap();
    StagedTree::new(tree, partition).unwrap()
}

/// Pairwise colored-subtree isomorphism: same stage and, label by label,
/// isomorphic children. All leaves are isomorphic.
pub fn isomorphic(st: &StagedTree, u: usize, v: usize) -> bool {
    let t = &st.tree;
    match (t.is_leaf(u), t.is_leaf(v)) {
        (true, true) => return true,
        (false, false) => {}
        _ => return false,
    }
    if st.partition.stage_of(u) != st.partition.stage_of(v) {
        return false;
    }
    let by_label = |w: usize| -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = t
            .out_edges(w)
            .iter()
            .map(|&e| (t.edge_data(e).label.clone(), t.target(e)))
            .collect();
        out.sort();
        out
    };
    let (cu, cv) = (by_label(u), by_label(v));
    cu.len() == cv.len()
        && cu
            .iter()
            .zip(&cv)
            .all(|((lu, a), (lv, b))| lu == lv && isomorphic(st, *a, *b))
}

/// Checks the CEG positions of `st` against the isomorphism oracle; returns
/// the number of disagreeing vertex pairs.
pub fn ceg_disagreements(st: &StagedTree) -> usize {
    let ceg = build_ceg(st);
    let n = st.tree.num_vertices();
    let mut bad = 0;
    for u in 0..n {
        for v in u..n {
            if (ceg.position_of(u) == ceg.position_of(v)) != isomorphic(st, u, v) {
                bad += 1;
            }
        }
    }
    bad
}

/// Every root-to-leaf path as (edge ids, product of thetas, ends in failure),
/// found by walking the raw edge list.
pub fn enumerate_paths(edges: &[Edge], root: &str) -> Vec<(Vec<String>, f64, bool)> {
    let mut out = Vec::new();
    let mut stack = vec![(root.to_string(), Vec::<String>::new(), 1.0, false)];
    while let Some((at, path, p, fail)) = stack.pop() {
        let outs: Vec<&Edge> = edges.iter().filter(|e| e.from == at).collect();
        if outs.is_empty() {
            out.push((path, p, fail));
            continue;
        }
        for e in outs {
            let mut next = path.clone();
            next.push(e.id.clone());
            stack.push((e.to.clone(), next, p * e.theta, e.failure));
        }
    }
    out
}

pub fn failure_probability_oracle(edges: &[Edge], root: &str) -> f64 {
    enumerate_paths(edges, root)
        .into_iter()
        .filter(|(_, _, f)| *f)
        .map(|(_, p, _)| p)
        .sum()
}

pub fn beta_law<R: Rng>(rng: &mut R) -> BetaLaw {
    BetaLaw {
        a: 0.3 + 5.0 * rng.random::<f64>(),
        b: 0.3 + 5.0 * rng.random::<f64>(),
    }
}

/// Random imperfect or uncertain remedy over `roots` with 1-3 actions.
pub fn random_remedy<R: Rng>(rng: &mut R, roots: &[String], class: RemedyClass) -> RemedySpec {
    let k = rng.random_range(1..=3);
    let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut actions = Vec::new();
    for (i, p) in raw.iter().enumerate() {
        let mut gamma = std::collections::BTreeMap::new();
        for r in roots {
            if rng.random::<f64>() < 0.85 {
                let laws = GammaLaws {
                    conditioned: beta_law(rng),
                    agnostic: beta_law(rng),
                };
                gamma.insert(r.clone(), laws);
            }
        }
        actions.push(ActionSpec {
            id: format!("x{i}"),
            probability: p / total,
            gamma,
        });
    }
    RemedySpec {
        id: "random".into(),
        class,
        targeted_roots: Vec::new(),
        actions,
        omega: StrengthSpec::fixed(0.2 + 3.0 * rng.random::<f64>()),
        beta: StrengthSpec::fixed(0.2 + 2.0 * rng.random::<f64>()),
    }
}

pub mod checks;
