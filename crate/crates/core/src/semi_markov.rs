//! Semi-Markov failure/repair process on an event tree.
//!
//! Each edge `e = (i, j)` carries a transition probability `θ_ij` and, unless
//! it is an instantaneous logical edge, a Weibull holding time with density
//! `ξ λ t^(ξ-1) exp(-λ t^ξ)` where `λ = η^(-ξ)` (shape `ξ`, scale `η`). A unit
//! walks root-to-leaf once per cycle; failures are followed by a remedy drawn
//! from the unit's group policy, which decides where the next cycle starts and
//! (when drift is enabled) reweights the renewed part of the tree.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{CegError, Result};
use crate::intervention::{
    indicator_distribution, renewal_scope, reset_vertex, DriftState, IndicatorDistribution,
    InterventionIndicator, RemedyClass, RemedySpec,
};
use crate::rng::{derive_seed, stream};
use crate::tree::{
    enumerate_failure_paths, Edge, EventTree, PathPartition, StagePartition, StagedTree,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldingTimeLaw {
    pub shape: f64,
    pub scale: f64,
}

impl HoldingTimeLaw {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(CegError::ModelInvalid(format!(
                "Weibull law needs positive shape and scale, got ({shape}, {scale})"
            )));
        }
        Ok(HoldingTimeLaw { shape, scale })
    }

    pub fn mean(&self) -> f64 {
        self.scale * gamma(1.0 + 1.0 / self.shape)
    }

    /// `λ = η^(-ξ)`.
    pub fn rate(&self) -> f64 {
        self.scale.powf(-self.shape)
    }

    pub fn ln_pdf(&self, t: f64) -> f64 {
        let z = t / self.scale;
        self.shape.ln() - self.scale.ln() + (self.shape - 1.0) * z.ln() - z.powf(self.shape)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Weibull::new(self.scale, self.shape)
            .expect("validated Weibull law")
            .sample(rng)
    }
}

/// A partition of the duration-bearing edges into holding clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePartition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<Option<usize>>,
}

impl EdgePartition {
    /// Every duration-bearing edge not listed in `blocks` becomes a singleton.
    pub fn new(tree: &EventTree, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut block_of = vec![None; tree.num_edges()];
        let mut clean: Vec<Vec<usize>> = Vec::new();
        for mut b in blocks {
            if b.is_empty() {
                continue;
            }
            b.sort_unstable();
            for &e in &b {
                if e >= tree.num_edges() || tree.edge_data(e).holding.is_none() {
                    return Err(CegError::ModelInvalid(format!(
                        "holding cluster member {} carries no holding time",
                        tree.edges().get(e).map(|x| x.id.as_str()).unwrap_or("?")
                    )));
                }
                if block_of[e].is_some() {
                    return Err(CegError::ModelInvalid(format!(
                        "edge {} in two holding clusters",
                        tree.edge_data(e).id
                    )));
                }
                block_of[e] = Some(clean.len());
            }
            clean.push(b);
        }
        for e in 0..tree.num_edges() {
            if tree.edge_data(e).holding.is_some() && block_of[e].is_none() {
                block_of[e] = Some(clean.len());
                clean.push(vec![e]);
            }
        }
        clean.sort_by_key(|b| b[0]);
        let mut block_of = vec![None; tree.num_edges()];
        for (i, b) in clean.iter().enumerate() {
            for &e in b {
                block_of[e] = Some(i);
            }
        }
        Ok(EdgePartition {
            blocks: clean,
            block_of,
        })
    }

    pub fn finest(tree: &EventTree) -> Self {
        EdgePartition::new(tree, Vec::new()).expect("singletons are valid")
    }

    pub fn from_ids(tree: &EventTree, groups: &[Vec<String>]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(groups.len());
        for g in groups {
            let mut b = Vec::with_capacity(g.len());
            for id in g {
                b.push(
                    tree.edge(id)
                        .ok_or_else(|| CegError::ModelInvalid(format!("unknown edge {id}")))?,
                );
            }
            blocks.push(b);
        }
        EdgePartition::new(tree, blocks)
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
    pub fn len(&self) -> usize {
        self.blocks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
    pub fn block_of(&self, e: usize) -> Option<usize> {
        self.block_of[e]
    }
    pub fn to_ids(&self, tree: &EventTree) -> Vec<Vec<String>> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|&e| tree.edge_data(e).id.clone()).collect())
            .collect()
    }
}

/// Which remedy a group applies after a failure, keyed by the realised root
/// cause.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RemedyPolicy {
    #[serde(default)]
    pub by_root_cause: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl RemedyPolicy {
    pub fn remedy_for(&self, root_cause: &str) -> Option<&str> {
        self.by_root_cause
            .get(root_cause)
            .or(self.default.as_ref())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    #[serde(default = "default_cycles")]
    pub cycles_per_unit: usize,
    /// When set, remedies reweight the renewed subtree for later cycles.
    #[serde(default = "default_true")]
    pub intervention_drift: bool,
}

fn default_cycles() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            cycles_per_unit: default_cycles(),
            intervention_drift: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    vertices: Vec<String>,
    root: String,
    edges: Vec<Edge>,
    root_cause_edges: Vec<String>,
    #[serde(default)]
    stages: Vec<Vec<String>>,
    #[serde(default)]
    holding_clusters: Vec<Vec<String>>,
    #[serde(default)]
    remedies: Vec<RemedySpec>,
    #[serde(default)]
    group_policies: Vec<RemedyPolicy>,
    #[serde(default)]
    simulation: SimulationSettings,
}

/// The ground-truth (or declared) semi-Markov model over a staged tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct SemiMarkovModel {
    pub tree: EventTree,
    pub stages: StagePartition,
    pub clusters: EdgePartition,
    pub paths: PathPartition,
    pub remedies: Vec<RemedySpec>,
    pub group_policies: Vec<RemedyPolicy>,
    pub simulation: SimulationSettings,
}

impl TryFrom<ModelFile> for SemiMarkovModel {
    type Error = CegError;
    fn try_from(f: ModelFile) -> Result<Self> {
        let tree = EventTree::new(f.vertices, &f.root, f.edges)?;
        for e in tree.edges() {
            if let Some(h) = e.holding {
                HoldingTimeLaw::new(h.shape, h.scale)?;
            }
        }
        let stages = StagePartition::from_ids(&tree, &f.stages)?;
        let staged = StagedTree::new(tree, stages)?;
        let (tree, stages) = (staged.tree, staged.partition);
        let clusters = EdgePartition::from_ids(&tree, &f.holding_clusters)?;
        for b in clusters.blocks() {
            let law = tree.edge_data(b[0]).holding;
            if b.iter().any(|&e| tree.edge_data(e).holding != law) {
                return Err(CegError::ModelInvalid(format!(
                    "holding cluster containing {} mixes laws",
                    tree.edge_data(b[0]).id
                )));
            }
        }
        let mut roots = Vec::with_capacity(f.root_cause_edges.len());
        for id in &f.root_cause_edges {
            roots.push(tree.edge(id).ok_or_else(|| CegError::UnknownRootCause(id.clone()))?);
        }
        let failures: Vec<usize> = (0..tree.num_edges()).filter(|&e| tree.edge_data(e).failure).collect();
        let paths = enumerate_failure_paths(&tree, &roots, &failures)?;
        let root_ids: Vec<String> = f.root_cause_edges.clone();
        for r in &f.remedies {
            r.validate()?;
            for t in &r.targeted_roots {
                if !root_ids.contains(t) {
                    return Err(CegError::UnknownRootCause(t.clone()));
                }
            }
            indicator_distribution(r, &root_ids)?;
        }
        for p in &f.group_policies {
            for (root, rem) in p.by_root_cause.iter() {
                if !root_ids.contains(root) {
                    return Err(CegError::UnknownRootCause(root.clone()));
                }
                if !f.remedies.iter().any(|r| &r.id == rem) {
                    return Err(CegError::ModelInvalid(format!("policy names unknown remedy {rem}")));
                }
            }
            if let Some(rem) = &p.default {
                if !f.remedies.iter().any(|r| &r.id == rem) {
                    return Err(CegError::ModelInvalid(format!("policy names unknown remedy {rem}")));
                }
            }
        }
        if f.simulation.cycles_per_unit == 0 {
            return Err(CegError::ModelInvalid("cycles_per_unit must be at least 1".into()));
        }
        Ok(SemiMarkovModel {
            tree,
            stages,
            clusters,
            paths,
            remedies: f.remedies,
            group_policies: f.group_policies,
            simulation: f.simulation,
        })
    }
}

impl From<SemiMarkovModel> for ModelFile {
    fn from(m: SemiMarkovModel) -> Self {
        let stages = m
            .stages
            .to_ids(&m.tree)
            .into_iter()
            .filter(|s| s.len() > 1)
            .collect();
        let holding_clusters = m
            .clusters
            .to_ids(&m.tree)
            .into_iter()
            .filter(|s| s.len() > 1)
            .collect();
        let root_cause_edges = m.root_cause_ids();
        let (vertices, root, edges) = m.tree.into_parts();
        ModelFile {
            vertices,
            root,
            edges,
            root_cause_edges,
            stages,
            holding_clusters,
            remedies: m.remedies,
            group_policies: m.group_policies,
            simulation: m.simulation,
        }
    }
}

impl SemiMarkovModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::try_from(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn root_cause_ids(&self) -> Vec<String> {
        self.paths
            .root_causes
            .iter()
            .map(|&e| self.tree.edge_data(e).id.clone())
            .collect()
    }

    pub fn remedy(&self, id: &str) -> Option<&RemedySpec> {
        self.remedies.iter().find(|r| r.id == id)
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.tree.edges().iter().map(|e| e.theta).collect()
    }

    /// Holding law of edge `e` (None for instantaneous edges).
    pub fn holding(&self, e: usize) -> Option<HoldingTimeLaw> {
        self.tree.edge_data(e).holding
    }

    /// Root-cause edge on the root path of `v`, if any.
    pub fn root_cause_above(&self, v: usize) -> Option<usize> {
        self.tree
            .path_to(v)
            .into_iter()
            .find(|e| self.paths.root_causes.contains(e))
    }

    pub fn renewal_scope(&self) -> Vec<Vec<usize>> {
        renewal_scope(&self.tree, &self.paths.root_causes)
    }
}

/// Draws the next edge out of `vertex` and its holding time, under an
/// optional remedy drift.
pub fn sample_transition<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    drift: Option<&DriftState>,
    vertex: usize,
    rng: &mut R,
) -> (usize, f64) {
    let tree = &model.tree;
    let out = tree.out_edges(vertex);
    debug_assert!(!out.is_empty(), "sample_transition on a leaf");
    let weights: Vec<f64> = match drift {
        Some(d) => out.iter().map(|&e| tree.edge_data(e).theta * d.weight[e]).collect(),
        None => out.iter().map(|&e| tree.edge_data(e).theta).collect(),
    };
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = *out.last().unwrap();
    for (&e, w) in out.iter().zip(&weights) {
        acc += w;
        if u < acc {
            chosen = e;
            break;
        }
    }
    let time = match tree.edge_data(chosen).holding {
        Some(law) => {
            let stretch = drift.map(|d| d.stretch[chosen]).unwrap_or(1.0);
            HoldingTimeLaw {
                shape: law.shape,
                scale: law.scale * stretch,
            }
            .sample(rng)
        }
        None => 0.0,
    };
    (chosen, time)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemedyEvent {
    pub remedy_id: String,
    pub class: RemedyClass,
    pub indicator: Option<InterventionIndicator>,
    /// Realised root cause of the failure the remedy answered.
    pub root_cause: usize,
    pub reset_vertex: usize,
    pub followup_pending: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub start: usize,
    pub steps: Vec<(usize, f64)>,
    pub failure: bool,
    pub remedy: Option<RemedyEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitHistory {
    pub unit_id: u64,
    pub group_id: u64,
    pub cycles: Vec<Cycle>,
}

impl UnitHistory {
    /// Re-walks the recorded edges and checks that every cycle is a connected
    /// walk from its start to a leaf, and that starts follow the reset rule.
    pub fn replays(&self, tree: &EventTree) -> bool {
        let mut expected_start = tree.root();
        for c in &self.cycles {
            if c.start != expected_start {
                return false;
            }
            let mut at = c.start;
            for &(e, t) in &c.steps {
                if tree.source(e) != at || t < 0.0 {
                    return false;
                }
                at = tree.target(e);
            }
            if !tree.is_leaf(at) {
                return false;
            }
            expected_start = c.remedy.as_ref().map(|r| r.reset_vertex).unwrap_or(tree.root());
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub units: Vec<UnitHistory>,
}

impl Dataset {
    pub fn num_cycles(&self) -> usize {
        self.units.iter().map(|u| u.cycles.len()).sum()
    }

    pub fn has_remedies(&self) -> bool {
        self.units
            .iter()
            .any(|u| u.cycles.iter().any(|c| c.remedy.is_some()))
    }
}

/// Simulates one unit for `n_cycles` cycles. No remedy follows the last cycle.
pub fn simulate_unit<R: Rng + ?Sized>(
    model: &SemiMarkovModel,
    policy: &RemedyPolicy,
    n_cycles: usize,
    drift_enabled: bool,
    rng: &mut R,
) -> Result<Vec<Cycle>> {
    let tree = &model.tree;
    let root_ids = model.root_cause_ids();
    let scope = model.renewal_scope();
    let mut dists: BTreeMap<&str, IndicatorDistribution> = BTreeMap::new();
    let mut drift = DriftState::identity(tree.num_edges());
    let mut start = tree.root();
    let mut cycles = Vec::with_capacity(n_cycles);
    for c in 0..n_cycles {
        let mut at = start;
        let mut steps = Vec::new();
        while !tree.is_leaf(at) {
            let (e, t) = sample_transition(model, Some(&drift), at, rng);
            steps.push((e, t));
            at = tree.target(e);
        }
        let last = steps.last().map(|s| s.0);
        let failure = last.map(|e| tree.edge_data(e).failure).unwrap_or(false);
        let mut remedy = None;
        let mut next = tree.root();
        if failure && c + 1 < n_cycles {
            let root_cause = model
                .root_cause_above(at)
                .expect("failure paths pass a root cause");
            let rc_id = tree.edge_data(root_cause).id.as_str();
            if let Some(rem_id) = policy.remedy_for(rc_id) {
                let spec = model
                    .remedy(rem_id)
                    .ok_or_else(|| CegError::ModelInvalid(format!("unknown remedy {rem_id}")))?;
                if !dists.contains_key(rem_id) {
                    dists.insert(rem_id, indicator_distribution(spec, &root_ids)?);
                }
                let indicator = dists[rem_id].sample(rng);
                let rc_index = model.paths.root_cause_index(root_cause).unwrap();
                let outcome = reset_vertex(spec.class, root_cause, indicator.get(rc_index), tree);
                if drift_enabled {
                    let omegas: Vec<f64> = (0..tree.num_vertices())
                        .map(|v| spec.omega.for_vertex(tree.vertex_id(v)).sample(rng))
                        .collect();
                    let betas: Vec<f64> = (0..tree.num_vertices())
                        .map(|v| spec.beta.for_vertex(tree.vertex_id(v)).sample(rng))
                        .collect();
                    drift.apply(tree, &scope, &indicator, &|v| omegas[v], &|v| betas[v]);
                }
                next = outcome.vertex;
                remedy = Some(RemedyEvent {
                    remedy_id: rem_id.to_string(),
                    class: spec.class,
                    indicator: Some(indicator),
                    root_cause,
                    reset_vertex: outcome.vertex,
                    followup_pending: outcome.followup_pending,
                });
            }
        }
        cycles.push(Cycle {
            start,
            steps,
            failure,
            remedy,
        });
        start = next;
    }
    Ok(cycles)
}

/// Generation settings for one or more datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub groups: usize,
    pub sizes: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles_per_unit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention_drift: Option<bool>,
}

impl GenConfig {
    pub fn full_grid(seed: u64) -> Self {
        GenConfig {
            groups: 10,
            sizes: vec![500, 1000, 3000, 5000, 10000],
            seed,
            cycles_per_unit: None,
            intervention_drift: None,
        }
    }
}

/// Group of unit `unit` when `size` units are split into `groups` contiguous
/// blocks.
pub fn group_of(unit: usize, size: usize, groups: usize) -> usize {
    unit * groups / size
}

/// Generates one dataset of `size` units. Unit `u` draws from its own stream
/// derived from `(seed, size)`, so the result does not depend on generation
/// order.
pub fn generate_dataset(model: &SemiMarkovModel, config: &GenConfig, size: usize) -> Result<Dataset> {
    if config.groups == 0 || size == 0 || size < config.groups {
        return Err(CegError::ConfigInvalid(format!(
            "cannot split {size} units into {} groups",
            config.groups
        )));
    }
    let cycles = config.cycles_per_unit.unwrap_or(model.simulation.cycles_per_unit);
    if cycles == 0 {
        return Err(CegError::ConfigInvalid("cycles_per_unit must be at least 1".into()));
    }
    let drift = config
        .intervention_drift
        .unwrap_or(model.simulation.intervention_drift);
    let empty = RemedyPolicy::default();
    let seed = derive_seed(config.seed, &[size as u64]);
    let mut units = Vec::with_capacity(size);
    for u in 0..size {
        let group = group_of(u, size, config.groups);
        let policy = if model.group_policies.is_empty() {
            &empty
        } else {
            &model.group_policies[group % model.group_policies.len()]
        };
        let mut rng = stream(seed, u as u64);
        let cycles = simulate_unit(model, policy, cycles, drift, &mut rng)?;
        units.push(UnitHistory {
            unit_id: u as u64,
            group_id: group as u64,
            cycles,
        });
    }
    Ok(Dataset { units })
}

/// One dataset per configured size.
pub fn generate_datasets(model: &SemiMarkovModel, config: &GenConfig) -> Result<Vec<Dataset>> {
    if config.sizes.is_empty() {
        return Err(CegError::ConfigInvalid("no dataset sizes".into()));
    }
    config
        .sizes
        .iter()
        .map(|&n| generate_dataset(model, config, n))
        .collect()
}
