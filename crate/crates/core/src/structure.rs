//! Structure selection by agglomerative hierarchical clustering (AHC) over
//! stages and holding clusters, scored by log marginal likelihood.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CegError, Result};
use crate::inference::holding::collapsed_ln_evidence;
use crate::inference::{HoldingPrior, PriorState, SelectionData};
use crate::semi_markov::EdgePartition;
use crate::tree::{EventTree, StagePartition};

const SHAPE_TOL: f64 = 1e-8;
const SHAPE_MAX_ITERS: usize = 100;

/// Dirichlet-multinomial log evidence of one stage.
pub fn stage_log_marginal(counts: &[f64], alpha: &[f64]) -> Result<f64> {
    if counts.len() != alpha.len() {
        return Err(CegError::ShapeMismatch {
            expected: alpha.len(),
            got: counts.len(),
        });
    }
    let a: f64 = alpha.iter().sum();
    let n: f64 = counts.iter().sum();
    let mut score = ln_gamma(a) - ln_gamma(a + n);
    for (&c, &al) in counts.iter().zip(alpha) {
        if c > 0.0 {
            score += ln_gamma(al + c) - ln_gamma(al);
        }
    }
    Ok(score)
}

/// Maximum-likelihood Weibull shape from log times, by Newton iteration on
/// the profile score `1/ξ + mean(ln t) - Σ t^ξ ln t / Σ t^ξ`.
pub fn ml_shape(ln_t: &[f64]) -> Result<f64> {
    let n = ln_t.len();
    if n == 0 {
        return Err(CegError::EmptyCluster);
    }
    let mean = ln_t.iter().sum::<f64>() / n as f64;
    let var = ln_t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if n < 2 || var <= 0.0 {
        // the profile likelihood increases without bound
        return Err(CegError::ShapeSolverDiverged);
    }
    let centred: Vec<f64> = ln_t.iter().map(|x| x - mean).collect();
    let hi = centred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let score = |xi: f64| -> (f64, f64) {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &x in &centred {
            let w = (xi * (x - hi)).exp();
            s0 += w;
            s1 += w * x;
            s2 += w * x * x;
        }
        let m1 = s1 / s0;
        let g = 1.0 / xi - m1;
        let dg = -1.0 / (xi * xi) - (s2 / s0 - m1 * m1);
        (g, dg)
    };
    let mut xi = std::f64::consts::PI / (6.0 * var).sqrt();
    for _ in 0..SHAPE_MAX_ITERS {
        let (g, dg) = score(xi);
        let mut next = xi - g / dg;
        while next <= 0.0 {
            next = 0.5 * (next + xi).max(xi * 0.5);
            if next <= 0.0 {
                next = xi * 0.5;
            }
        }
        if !next.is_finite() {
            return Err(CegError::ShapeSolverDiverged);
        }
        if (next - xi).abs() <= SHAPE_TOL * xi.max(1.0) {
            return Ok(next);
        }
        xi = next;
    }
    Err(CegError::ShapeSolverDiverged)
}

/// Gamma-Weibull evidence of a holding cluster at a plug-in shape (the ML
/// shape unless `fixed_shape` is given).
pub fn holding_log_marginal(times: &[f64], prior: &HoldingPrior, fixed_shape: Option<f64>) -> Result<f64> {
    if times.is_empty() {
        return Err(CegError::EmptyCluster);
    }
    if times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(CegError::ConfigInvalid("holding times must be positive".into()));
    }
    let ln_t: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    holding_log_marginal_ln(&ln_t, prior, fixed_shape)
}

fn holding_log_marginal_ln(ln_t: &[f64], prior: &HoldingPrior, fixed_shape: Option<f64>) -> Result<f64> {
    if ln_t.is_empty() {
        return Err(CegError::EmptyCluster);
    }
    let shape = match fixed_shape {
        Some(s) => s,
        None => ml_shape(ln_t)?,
    };
    let sum_ln: f64 = ln_t.iter().sum();
    Ok(collapsed_ln_evidence(ln_t, sum_ln, shape, prior))
}

/// Score used inside AHC: empty clusters contribute nothing, and a cluster
/// whose ML shape does not exist (fewer than two distinct times) is scored
/// at the exponential shape.
fn cluster_score(ln_t: &[f64], prior: &HoldingPrior) -> f64 {
    if ln_t.is_empty() {
        return 0.0;
    }
    match holding_log_marginal_ln(ln_t, prior, None) {
        Ok(s) => s,
        Err(_) => holding_log_marginal_ln(ln_t, prior, Some(1.0)).expect("non-empty cluster"),
    }
}

/// A selected stage partition and holding-cluster partition with its score.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePartition {
    pub stages: StagePartition,
    pub clusters: EdgePartition,
    pub stage_score: f64,
    pub holding_score: f64,
    /// Total log score after each merge, starting from the finest partition.
    pub trace: Vec<f64>,
}

impl CandidatePartition {
    pub fn score(&self) -> f64 {
        self.stage_score + self.holding_score
    }

    pub fn to_file(&self, tree: &EventTree) -> StructureFile {
        StructureFile {
            stages: self.stages.to_ids(tree),
            holding_clusters: self.clusters.to_ids(tree),
            stage_score: self.stage_score,
            holding_score: self.holding_score,
            score: self.score(),
            trace: self.trace.clone(),
        }
    }

    pub fn from_file(file: &StructureFile, tree: &EventTree) -> Result<Self> {
        Ok(CandidatePartition {
            stages: StagePartition::from_ids(tree, &file.stages)?,
            clusters: EdgePartition::from_ids(tree, &file.holding_clusters)?,
            stage_score: file.stage_score,
            holding_score: file.holding_score,
            trace: file.trace.clone(),
        })
    }

    /// Whether two vertices share a stage.
    pub fn same_stage(&self, a: usize, b: usize) -> bool {
        self.stages.stage_of(a).is_some() && self.stages.stage_of(a) == self.stages.stage_of(b)
    }

    pub fn same_cluster(&self, a: usize, b: usize) -> bool {
        self.clusters.block_of(a).is_some() && self.clusters.block_of(a) == self.clusters.block_of(b)
    }
}

/// Selected-structure JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    pub stages: Vec<Vec<String>>,
    pub holding_clusters: Vec<Vec<String>>,
    pub stage_score: f64,
    pub holding_score: f64,
    pub score: f64,
    #[serde(default)]
    pub trace: Vec<f64>,
}

struct StageBlock {
    members: Vec<usize>,
    key: String,
    alpha: Vec<f64>,
    counts: Vec<f64>,
    score: f64,
}

struct ClusterBlock {
    members: Vec<usize>,
    key: String,
    ln_t: Vec<f64>,
    score: f64,
}

fn min_id<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    ids.min().expect("non-empty block").to_string()
}

fn stage_mergeable(tree: &EventTree, a: &StageBlock, b: &StageBlock) -> bool {
    let (v, w) = (a.members[0], b.members[0]);
    if tree.depth(v) != tree.depth(w) {
        return false;
    }
    let (sv, sw) = (tree.out_edges_by_label(v), tree.out_edges_by_label(w));
    sv.len() == sw.len()
        && sv
            .iter()
            .zip(&sw)
            .all(|(&x, &y)| tree.edge_data(x).label == tree.edge_data(y).label)
}

/// Pair chosen in one step: (gain, first key, second key, kind, i, j).
type Best = (f64, String, String, u8, usize, usize);

fn better(gain: f64, k1: &str, k2: &str, kind: u8, best: &Option<Best>) -> bool {
    match best {
        None => true,
        Some((g, b1, b2, bk, _, _)) => {
            gain > *g || (gain == *g && (k1, k2, kind) < (b1.as_str(), b2.as_str(), *bk))
        }
    }
}

/// Greedy agglomeration from the finest partitions. Each step performs the
/// admissible merge with the largest positive gain; ties go to the
/// lexicographically smallest pair of (smallest) member ids.
pub fn ahc_select(data: &SelectionData, tree: &EventTree, prior: &PriorState) -> Result<CandidatePartition> {
    if data.vertex_counts.len() != tree.num_vertices() || data.edge_log_times.len() != tree.num_edges() {
        return Err(CegError::StructureMismatch("selection data does not match the tree".into()));
    }
    let mut stages: Vec<StageBlock> = Vec::new();
    for v in tree.internal_vertices() {
        let alpha = prior.alpha[v].clone();
        let counts = data.vertex_counts[v].clone();
        let score = stage_log_marginal(&counts, &alpha)?;
        stages.push(StageBlock {
            members: vec![v],
            key: tree.vertex_id(v).to_string(),
            alpha,
            counts,
            score,
        });
    }
    let mut clusters: Vec<ClusterBlock> = Vec::new();
    for e in 0..tree.num_edges() {
        if tree.edge_data(e).holding.is_none() {
            continue;
        }
        let ln_t = data.edge_log_times[e].clone();
        let score = cluster_score(&ln_t, &prior.holding);
        clusters.push(ClusterBlock {
            members: vec![e],
            key: tree.edge_data(e).id.clone(),
            ln_t,
            score,
        });
    }
    let total = |s: &[StageBlock], c: &[ClusterBlock]| -> f64 {
        s.iter().map(|b| b.score).sum::<f64>() + c.iter().map(|b| b.score).sum::<f64>()
    };
    let mut trace = vec![total(&stages, &clusters)];

    loop {
        let mut best: Option<Best> = None;
        let mut best_score = 0.0;
        for i in 0..stages.len() {
            for j in i + 1..stages.len() {
                let (a, b) = (&stages[i], &stages[j]);
                if !stage_mergeable(tree, a, b) {
                    continue;
                }
                let alpha: Vec<f64> = a.alpha.iter().zip(&b.alpha).map(|(x, y)| x + y).collect();
                let counts: Vec<f64> = a.counts.iter().zip(&b.counts).map(|(x, y)| x + y).collect();
                let merged = stage_log_marginal(&counts, &alpha)?;
                let gain = merged - a.score - b.score;
                let (k1, k2) = if a.key < b.key { (&a.key, &b.key) } else { (&b.key, &a.key) };
                if gain > 0.0 && better(gain, k1, k2, 0, &best) {
                    best = Some((gain, k1.clone(), k2.clone(), 0, i, j));
                    best_score = merged;
                }
            }
        }
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let (a, b) = (&clusters[i], &clusters[j]);
                if a.ln_t.is_empty() || b.ln_t.is_empty() {
                    continue;
                }
                let mut ln_t = a.ln_t.clone();
                ln_t.extend_from_slice(&b.ln_t);
                let merged = cluster_score(&ln_t, &prior.holding);
                let gain = merged - a.score - b.score;
                let (k1, k2) = if a.key < b.key { (&a.key, &b.key) } else { (&b.key, &a.key) };
                if gain > 0.0 && better(gain, k1, k2, 1, &best) {
                    best = Some((gain, k1.clone(), k2.clone(), 1, i, j));
                    best_score = merged;
                }
            }
        }
        let Some((_, _, _, kind, i, j)) = best else { break };
        if kind == 0 {
            let b = stages.remove(j);
            let a = &mut stages[i];
            a.members.extend(b.members);
            a.members.sort_unstable();
            for (x, y) in a.alpha.iter_mut().zip(&b.alpha) {
                *x += y;
            }
            for (x, y) in a.counts.iter_mut().zip(&b.counts) {
                *x += y;
            }
            a.score = best_score;
            a.key = min_id(a.members.iter().map(|&v| tree.vertex_id(v)));
        } else {
            let b = clusters.remove(j);
            let a = &mut clusters[i];
            a.members.extend(b.members);
            a.members.sort_unstable();
            a.ln_t.extend(b.ln_t);
            a.score = best_score;
            a.key = min_id(a.members.iter().map(|&e| tree.edge_data(e).id.as_str()));
        }
        trace.push(total(&stages, &clusters));
    }

    let stage_score = stages.iter().map(|b| b.score).sum();
    let holding_score = clusters.iter().map(|b| b.score).sum();
    Ok(CandidatePartition {
        stages: StagePartition::new(tree, stages.into_iter().map(|b| b.members).collect())?,
        clusters: EdgePartition::new(tree, clusters.into_iter().map(|b| b.members).collect())?,
        stage_score,
        holding_score,
        trace,
    })
}

/// Total log score of a given structure.
pub fn score_structure(
    data: &SelectionData,
    prior: &PriorState,
    stages: &StagePartition,
    clusters: &EdgePartition,
) -> Result<(f64, f64)> {
    let mut s_score = 0.0;
    for (s, members) in stages.stages().iter().enumerate() {
        let alpha = prior.stage_alpha(stages, s);
        let mut counts = vec![0.0; alpha.len()];
        for &v in members {
            for (c, x) in counts.iter_mut().zip(&data.vertex_counts[v]) {
                *c += x;
            }
        }
        s_score += stage_log_marginal(&counts, &alpha)?;
    }
    let mut h_score = 0.0;
    for b in clusters.blocks() {
        let ln_t: Vec<f64> = b.iter().flat_map(|&e| data.edge_log_times[e].iter().cloned()).collect();
        h_score += cluster_score(&ln_t, &prior.holding);
    }
    Ok((s_score, h_score))
}

/// Disagreeing pairs and total pairs between two partitions of one set.
pub fn pair_disagreements(a: &[Vec<String>], b: &[Vec<String>]) -> Result<(usize, usize)> {
    let label = |p: &[Vec<String>]| -> Result<BTreeMap<String, usize>> {
        let mut m = BTreeMap::new();
        for (i, block) in p.iter().enumerate() {
            for x in block {
                if m.insert(x.clone(), i).is_some() {
                    return Err(CegError::ElementSetMismatch);
                }
            }
        }
        Ok(m)
    };
    let (la, lb) = (label(a)?, label(b)?);
    let ka: BTreeSet<&String> = la.keys().collect();
    let kb: BTreeSet<&String> = lb.keys().collect();
    if ka != kb {
        return Err(CegError::ElementSetMismatch);
    }
    let elems: Vec<&String> = la.keys().collect();
    let mut bad = 0;
    let mut pairs = 0;
    for i in 0..elems.len() {
        for j in i + 1..elems.len() {
            pairs += 1;
            let sa = la[elems[i]] == la[elems[j]];
            let sb = lb[elems[i]] == lb[elems[j]];
            if sa != sb {
                bad += 1;
            }
        }
    }
    Ok((bad, pairs))
}

/// Fraction of element pairs on which the partitions disagree, pooling the
/// stage pairs and holding-cluster pairs.
pub fn partition_distance(
    estimated: &CandidatePartition,
    truth: &CandidatePartition,
    tree: &EventTree,
) -> Result<f64> {
    let (b1, p1) = pair_disagreements(&estimated.stages.to_ids(tree), &truth.stages.to_ids(tree))?;
    let (b2, p2) = pair_disagreements(&estimated.clusters.to_ids(tree), &truth.clusters.to_ids(tree))?;
    let pairs = p1 + p2;
    Ok(if pairs == 0 { 0.0 } else { (b1 + b2) as f64 / pairs as f64 })
}

/// Proportion of replicates in which each named pair ended up together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub replicates: usize,
    pub pairs: Vec<MergeProportion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeProportion {
    pub name: String,
    /// "stage" or "cluster"
    pub kind: String,
    pub first: String,
    pub second: String,
    pub proportion: f64,
}

/// A pair of elements whose co-membership is tracked across replicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackedPair {
    pub name: String,
    pub stage: bool,
    pub first: usize,
    pub second: usize,
}

impl TrackedPair {
    pub fn merged(&self, p: &CandidatePartition) -> bool {
        if self.stage {
            p.same_stage(self.first, self.second)
        } else {
            p.same_cluster(self.first, self.second)
        }
    }
}

impl MergeReport {
    pub fn build(tree: &EventTree, tracked: &[TrackedPair], selected: &[CandidatePartition]) -> Self {
        let n = selected.len();
        let pairs = tracked
            .iter()
            .map(|t| {
                let hits = selected.iter().filter(|p| t.merged(p)).count();
                let id = |x: usize| {
                    if t.stage {
                        tree.vertex_id(x).to_string()
                    } else {
                        tree.edge_data(x).id.clone()
                    }
                };
                MergeProportion {
                    name: t.name.clone(),
                    kind: if t.stage { "stage" } else { "cluster" }.into(),
                    first: id(t.first),
                    second: id(t.second),
                    proportion: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
                }
            })
            .collect();
        MergeReport { replicates: n, pairs }
    }
}
