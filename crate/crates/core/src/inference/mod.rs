//! Bayesian learning of stage probabilities and holding-time laws.
//!
//! Stage probabilities carry Dirichlet priors; holding clusters carry the
//! Weibull prior of [`holding`]. Two fitting modes are supported:
//!
//! * **Idle** ignores remedy events and pools every traversal and holding time.
//! * **Intervened** replays each unit's remedy history. A remedy targeting a
//!   root cause drifts the renewed subtree for later cycles of that unit:
//!   probabilities become `θ_e w_e / Σ_j θ_j w_j` with `w_e = Π 1/(1+ω)` (the
//!   Dirichlet mean after `g`), and holding scales stretch by `Π (1+β)` (`J`).
//!   Drifted draws are treated as rejection-thinned draws from the baseline
//!   law; the rejected draws are imputed each sweep so the Dirichlet update
//!   stays conjugate. Holding times are rescaled by the stretch, which is exact
//!   because the Weibull family is closed under scaling. Indicators of
//!   imperfect and uncertain remedies are latent and resampled from their full
//!   conditional each sweep (or replaced by their expectation in plug-in mode).

pub mod holding;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{CegError, Result};
use crate::intervention::{
    indicator_distribution, DriftState, InterventionIndicator, RemedyClass, Strength,
};
use crate::semi_markov::{Dataset, EdgePartition, SemiMarkovModel};
use crate::tree::{EventTree, StagePartition};

pub use holding::{effective_sample_size, mcmc_holding_cluster, HoldingChain, HoldingPrior, HoldingSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Intervened,
    Idle,
}

impl FitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMode::Intervened => "intervened",
            FitMode::Idle => "idle",
        }
    }
}

/// Dirichlet hyperparameters per vertex (slot order) plus holding priors.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorState {
    pub phantom_units: f64,
    /// Per vertex, aligned with `StagePartition::slots`; empty for leaves.
    pub alpha: Vec<Vec<f64>>,
    pub holding: HoldingPrior,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorFile {
    pub phantom_units: f64,
    /// vertex id -> edge label -> alpha
    pub alpha: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub holding: HoldingPrior,
}

impl PriorState {
    /// Stage hyperparameters: the sum of its vertices' slot-aligned alphas.
    pub fn stage_alpha(&self, partition: &StagePartition, s: usize) -> Vec<f64> {
        let stage = &partition.stages()[s];
        let mut out = vec![0.0; partition.stage_width(s)];
        for &v in stage {
            for (o, a) in out.iter_mut().zip(&self.alpha[v]) {
                *o += a;
            }
        }
        out
    }

    /// Alphas at the root-cause vertex, in root-cause order.
    pub fn root_alpha(&self, model: &SemiMarkovModel) -> Result<Vec<f64>> {
        let tree = &model.tree;
        let v = crate::intervention::root_cause_vertex(tree, &model.paths)?;
        let slots = tree.out_edges_by_label(v);
        Ok(model
            .paths
            .root_causes
            .iter()
            .map(|e| {
                let k = slots.iter().position(|x| x == e).expect("root cause out of its vertex");
                self.alpha[v][k]
            })
            .collect())
    }

    pub fn to_file(&self, tree: &EventTree) -> PriorFile {
        let mut alpha = BTreeMap::new();
        for v in tree.internal_vertices() {
            let per: BTreeMap<String, f64> = tree
                .out_edges_by_label(v)
                .iter()
                .zip(&self.alpha[v])
                .map(|(&e, &a)| (tree.edge_data(e).label.clone(), a))
                .collect();
            alpha.insert(tree.vertex_id(v).to_string(), per);
        }
        PriorFile {
            phantom_units: self.phantom_units,
            alpha,
            holding: self.holding,
        }
    }

    pub fn from_file(file: &PriorFile, tree: &EventTree) -> Result<Self> {
        file.holding.validate()?;
        let mut alpha = vec![Vec::new(); tree.num_vertices()];
        for v in tree.internal_vertices() {
            let id = tree.vertex_id(v);
            let per = file
                .alpha
                .get(id)
                .ok_or_else(|| CegError::ConfigInvalid(format!("prior misses vertex {id}")))?;
            let mut row = Vec::new();
            for e in tree.out_edges_by_label(v) {
                let label = &tree.edge_data(e).label;
                let a = *per.get(label).ok_or_else(|| {
                    CegError::ConfigInvalid(format!("prior misses label {label} at {id}"))
                })?;
                if !(a > 0.0 && a.is_finite()) {
                    return Err(CegError::ConfigInvalid(format!("alpha at {id} must be positive")));
                }
                row.push(a);
            }
            alpha[v] = row;
        }
        Ok(PriorState {
            phantom_units: file.phantom_units,
            alpha,
            holding: file.holding,
        })
    }
}

/// Spreads `phantom_units` over the tree in proportion to the number of
/// root-to-leaf paths through each edge.
pub fn init_prior(tree: &EventTree, phantom_units: f64) -> Result<PriorState> {
    if !(phantom_units > 0.0 && phantom_units.is_finite()) {
        return Err(CegError::ConfigInvalid("phantom units must be positive".into()));
    }
    let leaves = tree.leaf_counts();
    let total = leaves[tree.root()] as f64;
    let alpha = (0..tree.num_vertices())
        .map(|v| {
            tree.out_edges_by_label(v)
                .iter()
                .map(|&e| phantom_units * leaves[tree.target(e)] as f64 / total)
                .collect()
        })
        .collect();
    Ok(PriorState {
        phantom_units,
        alpha,
        holding: HoldingPrior::default(),
    })
}

/// Dirichlet-multinomial conjugate update.
pub fn update_transition_posterior(prior: &[f64], counts: &[f64]) -> Result<Vec<f64>> {
    if prior.len() != counts.len() {
        return Err(CegError::ShapeMismatch {
            expected: prior.len(),
            got: counts.len(),
        });
    }
    Ok(prior.iter().zip(counts).map(|(a, n)| a + n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iters: usize,
    pub burnin: usize,
    #[serde(default = "default_proposal_sd")]
    pub proposal_sd: f64,
    /// Sample latent indicators inside the sweep; otherwise use their
    /// expectation.
    #[serde(default = "default_true")]
    pub sample_indicators: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_shape: Option<f64>,
}

fn default_proposal_sd() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            iters: 5000,
            burnin: 1000,
            proposal_sd: 0.1,
            sample_indicators: true,
            fixed_shape: None,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burnin {
            return Err(CegError::ConfigInvalid("iters must exceed burnin".into()));
        }
        if !(self.proposal_sd > 0.0) {
            return Err(CegError::ConfigInvalid("proposal_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Stage and holding-cluster partitions a fit is carried out under.
#[derive(Debug, Clone, PartialEq)]
pub struct FitStructure {
    pub stages: StagePartition,
    pub clusters: EdgePartition,
}

impl FitStructure {
    pub fn finest(tree: &EventTree) -> Self {
        FitStructure {
            stages: StagePartition::finest(tree),
            clusters: EdgePartition::finest(tree),
        }
    }

    pub fn of_model(model: &SemiMarkovModel) -> Self {
        FitStructure {
            stages: model.stages.clone(),
            clusters: model.clusters.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePosterior {
    pub vertices: Vec<String>,
    pub labels: Vec<String>,
    pub prior_alpha: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Posterior-expected complete-data counts pooled over the stage.
    pub expected_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPosterior {
    pub edges: Vec<String>,
    pub observations: usize,
    pub shape_mean: f64,
    pub scale_mean: f64,
    /// Posterior mean of η Γ(1 + 1/ξ).
    pub mean_holding: f64,
    pub mean_holding_sd: f64,
    pub acceptance_rate: f64,
    pub ess_shape: f64,
    pub shape_samples: Vec<f64>,
    pub scale_samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemedyPosterior {
    pub events: usize,
    pub latent_events: usize,
    /// Indicator bitstring -> fraction of (event, sweep) draws.
    pub indicator_frequencies: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mode: FitMode,
    pub iters: usize,
    pub burnin: usize,
    pub stages: Vec<StagePosterior>,
    pub clusters: Vec<ClusterPosterior>,
    pub remedies: BTreeMap<String, RemedyPosterior>,
}

impl PosteriorSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("posterior serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Posterior-mean probability of every edge, from its vertex's stage.
    pub fn edge_theta_means(&self, tree: &EventTree) -> Result<Vec<f64>> {
        let mut out = vec![f64::NAN; tree.num_edges()];
        for st in &self.stages {
            for vid in &st.vertices {
                let v = tree
                    .vertex(vid)
                    .ok_or_else(|| CegError::StructureMismatch(format!("unknown vertex {vid}")))?;
                let slots = tree.out_edges_by_label(v);
                if slots.len() != st.mean.len() {
                    return Err(CegError::StructureMismatch(format!("width mismatch at {vid}")));
                }
                for (&e, &m) in slots.iter().zip(&st.mean) {
                    out[e] = m;
                }
            }
        }
        Ok(out)
    }

    /// Posterior mean holding time of every duration-bearing edge.
    pub fn edge_mean_holding(&self, tree: &EventTree) -> Result<Vec<Option<f64>>> {
        let mut out = vec![None; tree.num_edges()];
        for c in &self.clusters {
            for id in &c.edges {
                let e = tree
                    .edge(id)
                    .ok_or_else(|| CegError::StructureMismatch(format!("unknown edge {id}")))?;
                out[e] = Some(c.mean_holding);
            }
        }
        Ok(out)
    }
}

/// Data the structure learner scores: per vertex slot counts and per edge
/// log holding times, both on the baseline (undrifted) scale in intervened
/// mode. Counts at a vertex are in label order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionData {
    pub vertex_counts: Vec<Vec<f64>>,
    pub edge_log_times: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub summary: PosteriorSummary,
    pub selection: SelectionData,
}

// ---------------------------------------------------------------------------
// prepared data

struct Step {
    edge: usize,
    ln_t: f64,
}

struct PCycle {
    steps: Vec<Step>,
}

struct PEvent {
    cycle: usize,
    remedy: usize,
    /// Consistent indicators with log prior probability.
    candidates: Vec<(InterventionIndicator, f64)>,
    expected_bits: Vec<f64>,
    current: usize,
    omega: Vec<f64>,
    beta: Vec<f64>,
}

struct Prepared {
    cycles: Vec<PCycle>,
    units: Vec<std::ops::Range<usize>>,
    events: Vec<PEvent>,
    event_after_cycle: Vec<Option<usize>>,
    unit_events: Vec<Vec<usize>>,
}

fn prepare(dataset: &Dataset, model: &SemiMarkovModel, mode: FitMode) -> Result<Prepared> {
    let tree = &model.tree;
    let root_ids = model.root_cause_ids();
    let mut cycles = Vec::new();
    let mut units = Vec::new();
    let mut events = Vec::new();
    let mut event_after_cycle = Vec::new();
    let mut unit_events = Vec::new();
    let mut dists = HashMap::new();
    for unit in &dataset.units {
        let begin = cycles.len();
        let mut evs = Vec::new();
        for (ci, c) in unit.cycles.iter().enumerate() {
            let mut at = c.start;
            let mut steps = Vec::with_capacity(c.steps.len());
            for &(e, t) in &c.steps {
                if e >= tree.num_edges() || tree.source(e) != at {
                    return Err(CegError::StructureMismatch(format!(
                        "unit {} cycle {ci} is not a connected walk",
                        unit.unit_id
                    )));
                }
                let ln_t = if tree.edge_data(e).holding.is_some() {
                    if !(t > 0.0 && t.is_finite()) {
                        return Err(CegError::StructureMismatch(format!(
                            "non-positive holding time on edge {}",
                            tree.edge_data(e).id
                        )));
                    }
                    t.ln()
                } else {
                    f64::NAN
                };
                steps.push(Step { edge: e, ln_t });
                at = tree.target(e);
            }
            if !tree.is_leaf(at) {
                return Err(CegError::StructureMismatch(format!(
                    "unit {} cycle {ci} stops before a leaf",
                    unit.unit_id
                )));
            }
            let gi = cycles.len();
            cycles.push(PCycle { steps });
            event_after_cycle.push(None);
            let Some(ev) = c.remedy.as_ref().filter(|_| mode == FitMode::Intervened) else {
                continue;
            };
            if ci + 1 == unit.cycles.len() {
                // a remedy after the final cycle influences nothing observed
                continue;
            }
            let ri = model
                .remedies
                .iter()
                .position(|r| r.id == ev.remedy_id)
                .ok_or_else(|| {
                    CegError::StructureMismatch(format!("unknown remedy {}", ev.remedy_id))
                })?;
            let spec = &model.remedies[ri];
            if !dists.contains_key(&ri) {
                dists.insert(ri, indicator_distribution(spec, &root_ids)?);
            }
            let dist = &dists[&ri];
            let rc = model.paths.root_cause_index(ev.root_cause).ok_or_else(|| {
                CegError::StructureMismatch("remedy event without a root cause".into())
            })?;
            let next_start = unit.cycles[ci + 1].start;
            let candidates: Vec<(InterventionIndicator, f64)> = match spec.class {
                RemedyClass::Perfect => vec![(dist.support[0].0.clone(), 0.0)],
                _ => {
                    let remediated = next_start == tree.root();
                    let consistent: Vec<_> = dist
                        .support
                        .iter()
                        .filter(|(ind, _)| ind.get(rc) == remediated)
                        .collect();
                    let z: f64 = consistent.iter().map(|(_, p)| p).sum();
                    if consistent.is_empty() || z <= 0.0 {
                        return Err(CegError::StructureMismatch(format!(
                            "reset after remedy {} contradicts its indicator law",
                            spec.id
                        )));
                    }
                    consistent
                        .into_iter()
                        .map(|(ind, p)| (ind.clone(), (p / z).ln()))
                        .collect()
                }
            };
            let k = root_ids.len();
            let mut expected_bits = vec![0.0; k];
            for (ind, lp) in &candidates {
                for (i, b) in expected_bits.iter_mut().enumerate() {
                    if ind.get(i) {
                        *b += lp.exp();
                    }
                }
            }
            let current = candidates
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            let omega = (0..tree.num_vertices())
                .map(|v| spec.omega.for_vertex(tree.vertex_id(v)).point())
                .collect();
            let beta = (0..tree.num_vertices())
                .map(|v| spec.beta.for_vertex(tree.vertex_id(v)).point())
                .collect();
            event_after_cycle[gi] = Some(events.len());
            evs.push(events.len());
            events.push(PEvent {
                cycle: gi,
                remedy: ri,
                candidates,
                expected_bits,
                current,
                omega,
                beta,
            });
        }
        units.push(begin..cycles.len());
        unit_events.push(evs);
    }
    if cycles.is_empty() {
        return Err(CegError::InsufficientData("dataset has no complete cycles".into()));
    }
    Ok(Prepared {
        cycles,
        units,
        events,
        event_after_cycle,
        unit_events,
    })
}

// ---------------------------------------------------------------------------
// sampler state

struct Sampler<'a> {
    model: &'a SemiMarkovModel,
    structure: &'a FitStructure,
    data: Prepared,
    scope: Vec<Vec<usize>>,
    plug_in: bool,
    /// Per cycle drift in effect while the cycle ran.
    drift: Vec<DriftState>,
    /// Interned drift classes and class per cycle.
    classes: Vec<DriftState>,
    class_of: Vec<usize>,
    theta: Vec<f64>,
    stage_theta: Vec<Vec<f64>>,
    holding: Vec<HoldingSampler>,
    cluster_ln_u: Vec<Vec<f64>>,
    // accepted counts per (class, vertex, slot)
    class_counts: Vec<Vec<Vec<f64>>>,
}

impl<'a> Sampler<'a> {
    fn tree(&self) -> &EventTree {
        &self.model.tree
    }

    fn event_bits(&self, ev: &PEvent) -> Vec<f64> {
        if self.plug_in && ev.candidates.len() > 1 {
            ev.expected_bits.clone()
        } else {
            ev.candidates[ev.current]
                .0
                 .0
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect()
        }
    }

    fn apply_event(&self, drift: &mut DriftState, ev: &PEvent, bits: &[f64]) {
        drift.apply_bits(self.tree(), &self.scope, bits, &|v| ev.omega[v], &|v| ev.beta[v]);
    }

    fn recompute_unit_drift(&mut self, u: usize) {
        let range = self.data.units[u].clone();
        let mut d = DriftState::identity(self.tree().num_edges());
        for c in range {
            self.drift[c] = d.clone();
            if let Some(j) = self.data.event_after_cycle[c] {
                let ev = &self.data.events[j];
                let bits = self.event_bits(ev);
                self.apply_event(&mut d, ev, &bits);
            }
        }
    }

    fn recompute_all_drift(&mut self) {
        for u in 0..self.data.units.len() {
            self.recompute_unit_drift(u);
        }
        self.intern_classes();
    }

    fn intern_classes(&mut self) {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        self.classes.clear();
        for (c, d) in self.drift.iter().enumerate() {
            let key: Vec<u64> = d
                .weight
                .iter()
                .chain(&d.stretch)
                .map(|x| x.to_bits())
                .collect();
            let id = *index.entry(key).or_insert_with(|| {
                self.classes.push(d.clone());
                self.classes.len() - 1
            });
            self.class_of[c] = id;
        }
        let tree = &self.model.tree;
        let nv = tree.num_vertices();
        let mut counts = vec![vec![Vec::new(); nv]; self.classes.len()];
        for per in counts.iter_mut() {
            for v in 0..nv {
                per[v] = vec![0.0; self.structure.stages.slots(v).len()];
            }
        }
        let mut ln_u = vec![Vec::new(); self.structure.clusters.len()];
        for (c, cyc) in self.data.cycles.iter().enumerate() {
            let class = self.class_of[c];
            for s in &cyc.steps {
                let v = tree.source(s.edge);
                let slot = self.structure.stages.slot_of_edge(tree, s.edge);
                counts[class][v][slot] += 1.0;
                if let Some(b) = self.structure.clusters.block_of(s.edge) {
                    ln_u[b].push(s.ln_t - self.classes[class].stretch[s.edge].ln());
                }
            }
        }
        self.class_counts = counts;
        self.cluster_ln_u = ln_u;
    }

    fn set_theta_from_stages(&mut self) {
        let tree = &self.model.tree;
        for (s, stage) in self.structure.stages.stages().iter().enumerate() {
            for &v in stage {
                for (k, &e) in self.structure.stages.slots(v).iter().enumerate() {
                    self.theta[e] = self.stage_theta[s][k];
                }
            }
        }
        debug_assert!(tree.num_edges() == self.theta.len());
    }

    fn cycle_loglik(&self, c: usize, drift: &DriftState) -> f64 {
        let tree = &self.model.tree;
        let mut ll = 0.0;
        for s in &self.data.cycles[c].steps {
            let e = s.edge;
            let v = tree.source(e);
            let out = tree.out_edges(v);
            let z: f64 = out.iter().map(|&x| self.theta[x] * drift.weight[x]).sum();
            ll += (self.theta[e] * drift.weight[e] / z).ln();
            if let Some(b) = self.structure.clusters.block_of(e) {
                let h = &self.holding[b];
                let ln_scale = h.scale().ln() + drift.stretch[e].ln();
                let z = s.ln_t - ln_scale;
                ll += h.shape.ln() - ln_scale + (h.shape - 1.0) * z - (h.shape * z).exp();
            }
        }
        ll
    }

    fn update_indicators<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for u in 0..self.data.units.len() {
            let evs = self.data.unit_events[u].clone();
            let mut touched = false;
            for j in evs {
                if self.data.events[j].candidates.len() < 2 {
                    continue;
                }
                touched = true;
                let end = self.data.units[u].end;
                let c0 = self.data.events[j].cycle;
                let mut scores = Vec::with_capacity(self.data.events[j].candidates.len());
                for k in 0..self.data.events[j].candidates.len() {
                    let mut d = self.drift[c0].clone();
                    let ev = &self.data.events[j];
                    let bits: Vec<f64> = ev.candidates[k]
                        .0
                         .0
                        .iter()
                        .map(|&b| if b { 1.0 } else { 0.0 })
                        .collect();
                    self.apply_event(&mut d, ev, &bits);
                    let mut ll = ev.candidates[k].1;
                    for c in c0 + 1..end {
                        ll += self.cycle_loglik(c, &d);
                        if let Some(j2) = self.data.event_after_cycle[c] {
                            let ev2 = &self.data.events[j2];
                            let b2 = self.event_bits(ev2);
                            self.apply_event(&mut d, ev2, &b2);
                        }
                    }
                    scores.push(ll);
                }
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut x = rng.random::<f64>() * total;
                let mut pick = w.len() - 1;
                for (k, wk) in w.iter().enumerate() {
                    if x < *wk {
                        pick = k;
                        break;
                    }
                    x -= wk;
                }
                self.data.events[j].current = pick;
                self.recompute_unit_drift(u);
            }
            let _ = touched;
        }
    }

    fn resample_strengths<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let tree = &self.model.tree;
        let mut changed = false;
        for ev in self.data.events.iter_mut() {
            let spec = &self.model.remedies[ev.remedy];
            for v in 0..tree.num_vertices() {
                let id = tree.vertex_id(v);
                let (o, b) = (spec.omega.for_vertex(id), spec.beta.for_vertex(id));
                if let Strength::LogNormal { .. } = o {
                    ev.omega[v] = o.sample(rng);
                    changed = true;
                }
                if let Strength::LogNormal { .. } = b {
                    ev.beta[v] = b.sample(rng);
                    changed = true;
                }
            }
        }
        changed
    }
}

fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, scale).expect("positive Gamma parameters").sample(rng)
}

fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = alpha.iter().map(|&a| sample_gamma(a, 1.0, rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.into_iter().map(|x| x / total).collect()
    } else {
        let a: f64 = alpha.iter().sum();
        alpha.iter().map(|x| x / a).collect()
    }
}

/// Rejected draws before `accepted` acceptances, split by slot.
fn sample_rejections<R: Rng + ?Sized>(
    accepted: f64,
    theta: &[f64],
    weight: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let reject: Vec<f64> = theta.iter().zip(weight).map(|(t, w)| t * (1.0 - w)).collect();
    let r_total: f64 = reject.iter().sum();
    let a = 1.0 - r_total;
    let mut out = vec![0.0; theta.len()];
    if accepted <= 0.0 || r_total <= 0.0 {
        return out;
    }
    // negative binomial as a Gamma-Poisson mixture
    let g = sample_gamma(accepted, r_total / a, rng);
    let mut remaining = if g > 0.0 {
        Poisson::new(g).expect("positive Poisson mean").sample(rng) as u64
    } else {
        0
    };
    let mut mass = r_total;
    for (k, &r) in reject.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == reject.len() || mass <= 0.0 {
            out[k] = remaining as f64;
            break;
        }
        let p = (r / mass).clamp(0.0, 1.0);
        let n = Binomial::new(remaining, p).expect("valid binomial").sample(rng);
        out[k] = n as f64;
        remaining -= n;
        mass -= r;
    }
    out
}

/// Fits stage probabilities and holding laws under `structure`.
pub fn fit<R: Rng + ?Sized>(
    dataset: &Dataset,
    model: &SemiMarkovModel,
    structure: &FitStructure,
    mode: FitMode,
    prior: &PriorState,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<FitOutput> {
    settings.validate()?;
    prior.holding.validate()?;
    let tree = &model.tree;
    if prior.alpha.len() != tree.num_vertices()
        || tree
            .internal_vertices()
            .iter()
            .any(|&v| prior.alpha[v].len() != tree.out_edges(v).len())
    {
        return Err(CegError::StructureMismatch("prior does not match the tree".into()));
    }
    if structure.stages.stages().iter().flatten().any(|&v| v >= tree.num_vertices()) {
        return Err(CegError::StructureMismatch("stage partition does not match the tree".into()));
    }
    let data = prepare(dataset, model, mode)?;
    let n_cycles = data.cycles.len();
    let dynamic_strength = data.events.iter().any(|ev| {
        let spec = &model.remedies[ev.remedy];
        spec.omega.default.is_random()
            || spec.beta.default.is_random()
            || spec.omega.per_vertex.values().any(|s| s.is_random())
            || spec.beta.per_vertex.values().any(|s| s.is_random())
    });
    let has_latent = data.events.iter().any(|ev| ev.candidates.len() > 1);
    let plug_in = !settings.sample_indicators;

    let stage_alpha: Vec<Vec<f64>> = (0..structure.stages.num_stages())
        .map(|s| prior.stage_alpha(&structure.stages, s))
        .collect();
    let stage_theta: Vec<Vec<f64>> = stage_alpha
        .iter()
        .map(|a| {
            let t: f64 = a.iter().sum();
            a.iter().map(|x| x / t).collect()
        })
        .collect();
    let holding = (0..structure.clusters.len())
        .map(|_| {
            HoldingSampler::new(
                settings.fixed_shape.unwrap_or(1.0),
                settings.proposal_sd,
                settings.fixed_shape.is_some(),
            )
        })
        .collect();
    let mut sm = Sampler {
        model,
        structure,
        data,
        scope: model.renewal_scope(),
        plug_in,
        drift: vec![DriftState::identity(tree.num_edges()); n_cycles],
        classes: Vec::new(),
        class_of: vec![0; n_cycles],
        theta: vec![0.0; tree.num_edges()],
        stage_theta,
        holding,
        cluster_ln_u: Vec::new(),
        class_counts: Vec::new(),
    };
    sm.set_theta_from_stages();
    sm.recompute_all_drift();
    // start the holding chains near the data
    for (b, h) in sm.holding.iter_mut().enumerate() {
        let ln_u = &sm.cluster_ln_u[b];
        if !ln_u.is_empty() {
            let n = ln_u.len() as f64;
            let s: f64 = ln_u.iter().map(|x| (h.shape * x).exp()).sum();
            h.rate = n / s;
        }
    }

    let kept = settings.iters - settings.burnin;
    let nv = tree.num_vertices();
    let nstages = structure.stages.num_stages();
    let mut mean_acc: Vec<Vec<f64>> = stage_alpha.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut sq_acc = mean_acc.clone();
    let mut rejected_acc: Vec<Vec<f64>> = (0..nv)
        .map(|v| vec![0.0; structure.stages.slots(v).len()])
        .collect();
    let mut shape_samples = vec![Vec::with_capacity(kept); structure.clusters.len()];
    let mut scale_samples = vec![Vec::with_capacity(kept); structure.clusters.len()];
    let mut ln_stretch_acc: Vec<Vec<f64>> = Vec::new();
    let mut indicator_counts: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new(); model.remedies.len()];
    let dynamic_drift = (has_latent && !plug_in) || dynamic_strength;
    if dynamic_drift {
        ln_stretch_acc = sm
            .data
            .cycles
            .iter()
            .map(|c| vec![0.0; c.steps.len()])
            .collect();
    }

    for it in 0..settings.iters {
        let burn = it < settings.burnin;
        if mode == FitMode::Intervened {
            let mut changed = false;
            if dynamic_strength && sm.resample_strengths(rng) {
                changed = true;
            }
            if changed {
                for u in 0..sm.data.units.len() {
                    sm.recompute_unit_drift(u);
                }
            }
            if has_latent && !plug_in {
                sm.update_indicators(rng);
                changed = true;
            }
            if changed {
                sm.intern_classes();
            }
        }

        // stage probabilities: impute thinned draws, then conjugate draw
        let mut complete: Vec<Vec<f64>> = stage_alpha.iter().map(|a| vec![0.0; a.len()]).collect();
        let mut rejected_now: Vec<Vec<f64>> = (0..nv)
            .map(|v| vec![0.0; structure.stages.slots(v).len()])
            .collect();
        for (class, per_vertex) in sm.class_counts.iter().enumerate() {
            let drift = &sm.classes[class];
            for (v, counts) in per_vertex.iter().enumerate() {
                if counts.is_empty() {
                    continue;
                }
                let s = structure.stages.stage_of(v).expect("internal vertex");
                for (k, c) in counts.iter().enumerate() {
                    complete[s][k] += c;
                }
                let slots = structure.stages.slots(v);
                if slots.iter().all(|&e| drift.weight[e] == 1.0) {
                    continue;
                }
                let accepted: f64 = counts.iter().sum();
                let theta: Vec<f64> = slots.iter().map(|&e| sm.theta[e]).collect();
                let weight: Vec<f64> = slots.iter().map(|&e| drift.weight[e]).collect();
                let rej = sample_rejections(accepted, &theta, &weight, rng);
                for (k, r) in rej.iter().enumerate() {
                    complete[s][k] += r;
                    rejected_now[v][k] += r;
                }
            }
        }
        for s in 0..nstages {
            let post = update_transition_posterior(&stage_alpha[s], &complete[s])?;
            sm.stage_theta[s] = sample_dirichlet(&post, rng);
            if !burn {
                let total: f64 = post.iter().sum();
                for (k, a) in post.iter().enumerate() {
                    mean_acc[s][k] += a / total;
                    sq_acc[s][k] += a * (a + 1.0) / (total * (total + 1.0));
                }
            }
        }
        sm.set_theta_from_stages();

        for b in 0..structure.clusters.len() {
            let ln_u = std::mem::take(&mut sm.cluster_ln_u[b]);
            sm.holding[b].step(&ln_u, &prior.holding, burn, rng);
            sm.cluster_ln_u[b] = ln_u;
            if !burn {
                shape_samples[b].push(sm.holding[b].shape);
                scale_samples[b].push(sm.holding[b].scale());
            }
        }

        if !burn {
            for (v, r) in rejected_now.iter().enumerate() {
                for (k, x) in r.iter().enumerate() {
                    rejected_acc[v][k] += x;
                }
            }
            if dynamic_drift {
                for (c, cyc) in sm.data.cycles.iter().enumerate() {
                    let d = &sm.classes[sm.class_of[c]];
                    for (i, s) in cyc.steps.iter().enumerate() {
                        ln_stretch_acc[c][i] += d.stretch[s.edge].ln();
                    }
                }
            }
            for ev in &sm.data.events {
                let key = if plug_in && ev.candidates.len() > 1 {
                    "expected".to_string()
                } else {
                    ev.candidates[ev.current].0.to_string()
                };
                *indicator_counts[ev.remedy].entry(key).or_insert(0.0) += 1.0;
            }
        }
    }

    let kf = kept as f64;
    let stages: Vec<StagePosterior> = structure
        .stages
        .stages()
        .iter()
        .enumerate()
        .map(|(s, members)| {
            let mean: Vec<f64> = mean_acc[s].iter().map(|x| x / kf).collect();
            let sd = sq_acc[s]
                .iter()
                .zip(&mean)
                .map(|(q, m)| (q / kf - m * m).max(0.0).sqrt())
                .collect();
            let mut expected = vec![0.0; mean.len()];
            for &v in members {
                for (k, x) in expected.iter_mut().enumerate() {
                    *x += rejected_acc[v][k] / kf;
                }
            }
            for (class, per_vertex) in sm.class_counts.iter().enumerate() {
                let _ = class;
                for &v in members {
                    for (k, x) in expected.iter_mut().enumerate() {
                        *x += per_vertex[v][k];
                    }
                }
            }
            StagePosterior {
                vertices: members.iter().map(|&v| tree.vertex_id(v).to_string()).collect(),
                labels: structure
                    .stages
                    .slots(members[0])
                    .iter()
                    .map(|&e| tree.edge_data(e).label.clone())
                    .collect(),
                prior_alpha: stage_alpha[s].clone(),
                mean,
                sd,
                expected_counts: expected,
            }
        })
        .collect();

    let clusters: Vec<ClusterPosterior> = structure
        .clusters
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, edges)| {
            let means: Vec<f64> = shape_samples[b]
                .iter()
                .zip(&scale_samples[b])
                .map(|(s, sc)| sc * gamma(1.0 + 1.0 / s))
                .collect();
            let mh = means.iter().sum::<f64>() / kf;
            let mh_sd = (means.iter().map(|m| (m - mh).powi(2)).sum::<f64>() / kf).sqrt();
            ClusterPosterior {
                edges: edges.iter().map(|&e| tree.edge_data(e).id.clone()).collect(),
                observations: sm.cluster_ln_u[b].len(),
                shape_mean: shape_samples[b].iter().sum::<f64>() / kf,
                scale_mean: scale_samples[b].iter().sum::<f64>() / kf,
                mean_holding: mh,
                mean_holding_sd: mh_sd,
                acceptance_rate: sm.holding[b].acceptance_rate(),
                ess_shape: effective_sample_size(&shape_samples[b]),
                shape_samples: shape_samples[b].clone(),
                scale_samples: scale_samples[b].clone(),
            }
        })
        .collect();

    let mut remedies = BTreeMap::new();
    for (ri, spec) in model.remedies.iter().enumerate() {
        let evs: Vec<&PEvent> = sm.data.events.iter().filter(|e| e.remedy == ri).collect();
        if evs.is_empty() {
            continue;
        }
        let total: f64 = indicator_counts[ri].values().sum();
        remedies.insert(
            spec.id.clone(),
            RemedyPosterior {
                events: evs.len(),
                latent_events: evs.iter().filter(|e| e.candidates.len() > 1).count(),
                indicator_frequencies: indicator_counts[ri]
                    .iter()
                    .map(|(k, v)| (k.clone(), v / total))
                    .collect(),
            },
        );
    }

    // selection data on the baseline scale
    let mut vertex_counts: Vec<Vec<f64>> = rejected_acc
        .iter()
        .map(|r| r.iter().map(|x| x / kf).collect())
        .collect();
    let mut edge_log_times = vec![Vec::new(); tree.num_edges()];
    for (c, cyc) in sm.data.cycles.iter().enumerate() {
        for (i, s) in cyc.steps.iter().enumerate() {
            let v = tree.source(s.edge);
            let slot = structure.stages.slot_of_edge(tree, s.edge);
            vertex_counts[v][slot] += 1.0;
            if tree.edge_data(s.edge).holding.is_some() {
                let ln_stretch = if dynamic_drift {
                    ln_stretch_acc[c][i] / kf
                } else {
                    sm.classes[sm.class_of[c]].stretch[s.edge].ln()
                };
                edge_log_times[s.edge].push(s.ln_t - ln_stretch);
            }
        }
    }

    Ok(FitOutput {
        summary: PosteriorSummary {
            mode,
            iters: settings.iters,
            burnin: settings.burnin,
            stages,
            clusters,
            remedies,
        },
        selection: SelectionData {
            vertex_counts,
            edge_log_times,
        },
    })
}

/// Raw pooled counts and log times, ignoring remedies (what the idle model
/// scores, and what the intervened model scores without drift).
pub fn raw_selection_data(dataset: &Dataset, tree: &EventTree) -> SelectionData {
    let mut vertex_counts: Vec<Vec<f64>> = (0..tree.num_vertices())
        .map(|v| vec![0.0; tree.out_edges(v).len()])
        .collect();
    let mut edge_log_times = vec![Vec::new(); tree.num_edges()];
    for u in &dataset.units {
        for c in &u.cycles {
            for &(e, t) in &c.steps {
                let v = tree.source(e);
                let slot = tree
                    .out_edges_by_label(v)
                    .iter()
                    .position(|&x| x == e)
                    .expect("edge out of its source");
                vertex_counts[v][slot] += 1.0;
                if tree.edge_data(e).holding.is_some() {
                    edge_log_times[e].push(t.ln());
                }
            }
        }
    }
    SelectionData {
        vertex_counts,
        edge_log_times,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Edge;

    fn e(id: &str, from: &str, to: &str, theta: f64) -> Edge {
        Edge {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            label: id.into(),
            theta,
            holding: None,
            failure: false,
        }
    }

    #[test]
    fn phantom_chain_and_binary_root() {
        let chain = EventTree::new(
            vec!["a".into(), "b".into(), "c".into()],
            "a",
            vec![e("x", "a", "b", 1.0), e("y", "b", "c", 1.0)],
        )
        .unwrap();
        let p = init_prior(&chain, 4.0).unwrap();
        assert_eq!(p.alpha[0], vec![4.0]);
        assert_eq!(p.alpha[1], vec![4.0]);

        let ids = ["r", "a", "b", "a1", "a2", "b1", "b2"];
        let t = EventTree::new(
            ids.iter().map(|s| s.to_string()).collect(),
            "r",
            vec![
                e("ra", "r", "a", 0.5),
                e("rb", "r", "b", 0.5),
                e("a1", "a", "a1", 0.5),
                e("a2", "a", "a2", 0.5),
                e("b1", "b", "b1", 0.5),
                e("b2", "b", "b2", 0.5),
            ],
        )
        .unwrap();
        let p = init_prior(&t, 4.0).unwrap();
        assert_eq!(p.alpha[0], vec![2.0, 2.0]);
        assert_eq!(p.alpha[1], vec![1.0, 1.0]);
        assert!(init_prior(&t, 0.0).is_err());
    }

    #[test]
    fn conjugate_update() {
        let post = update_transition_posterior(&[1.0, 1.0], &[9.0, 1.0]).unwrap();
        assert_eq!(post, vec![10.0, 2.0]);
        let total: f64 = post.iter().sum();
        assert!((post[0] / total - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(update_transition_posterior(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(
            update_transition_posterior(&[1.0], &[1.0, 2.0]),
            Err(CegError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rejection_imputation_mean() {
        // E[R] = N (1-a)/a; with theta (0.5, 0.5), w (0.5, 1): a = 0.75
        let mut rng = crate::rng::seeded(11);
        let n = 20_000;
        let mut total = 0.0;
        for _ in 0..n {
            let r = sample_rejections(3.0, &[0.5, 0.5], &[0.5, 1.0], &mut rng);
            assert_eq!(r[1], 0.0);
            total += r[0];
        }
        let mean = total / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }
}
