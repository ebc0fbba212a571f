//! Remedial interventions on a chain event graph.
//!
//! A remedy `r*` applied after a failure is classed as perfect, imperfect or
//! uncertain. Its effect enters the model through a binary indicator over the
//! root-cause edges, which is either fixed (perfect remedies) or distributed
//! through an action mixture of Beta-Bernoulli remediation laws:
//!
//! ```text
//! p(I | do(r*)) = Σ_a p(a | do(r*)) Π_e m_e(a)^I_e (1 - m_e(a))^(1 - I_e)
//! ```
//!
//! where `m_e(a)` is the mean of the Beta law on the remediation probability
//! of root cause `e` under action `a`. The indicator then reweights the
//! root-cause distribution through the hyperparameter map
//! `g: α_e ↦ α_e / (1 + ω I_e)` and stretches holding times through
//! `J: scale_e ↦ scale_e (1 + β I_e)`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CegError, Result};
use crate::semi_markov::{HoldingTimeLaw, SemiMarkovModel};
use crate::tree::{EventTree, PathPartition};

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemedyClass {
    Perfect,
    Imperfect,
    Uncertain,
}

impl RemedyClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RemedyClass::Perfect => "perfect",
            RemedyClass::Imperfect => "imperfect",
            RemedyClass::Uncertain => "uncertain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(RemedyClass::Perfect),
            "imperfect" => Ok(RemedyClass::Imperfect),
            "uncertain" => Ok(RemedyClass::Uncertain),
            other => Err(CegError::Parse(format!("unknown remedy class {other}"))),
        }
    }
}

/// Intervention strength: a fixed value or a log-normal law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strength {
    Fixed(f64),
    LogNormal { mean_log: f64, sd_log: f64 },
}

impl Strength {
    fn validate(&self, make: fn(f64) -> CegError) -> Result<()> {
        match *self {
            Strength::Fixed(v) if !v.is_finite() || v < 0.0 => Err(make(v)),
            Strength::LogNormal { mean_log, sd_log }
                if !mean_log.is_finite() || !sd_log.is_finite() || sd_log < 0.0 =>
            {
                Err(make(sd_log))
            }
            _ => Ok(()),
        }
    }

    /// Point value used by the closed-form calculus: the fixed value, or the
    /// median of the log-normal law.
    pub fn point(&self) -> f64 {
        match *self {
            Strength::Fixed(v) => v,
            Strength::LogNormal { mean_log, .. } => mean_log.exp(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Strength::Fixed(v) => v,
            Strength::LogNormal { mean_log, sd_log } => LogNormal::new(mean_log, sd_log)
                .expect("validated log-normal")
                .sample(rng),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Strength::LogNormal { .. })
    }
}

/// Per-vertex strengths with a global default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrengthSpec {
    pub default: Strength,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_vertex: BTreeMap<String, Strength>,
}

impl StrengthSpec {
    pub fn fixed(v: f64) -> Self {
        StrengthSpec {
            default: Strength::Fixed(v),
            per_vertex: BTreeMap::new(),
        }
    }

    pub fn for_vertex(&self, vertex: &str) -> Strength {
        self.per_vertex.get(vertex).copied().unwrap_or(self.default)
    }

    fn validate(&self, make: fn(f64) -> CegError) -> Result<()> {
        self.default.validate(make)?;
        self.per_vertex.values().try_for_each(|s| s.validate(make))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaLaw {
    pub a: f64,
    pub b: f64,
}

impl BetaLaw {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }
}

/// Remediation-probability laws for one root cause under one action: the
/// remedy-conditioned law (imperfect remedies) and the remedy-agnostic law
/// (uncertain remedies).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLaws {
    pub conditioned: BetaLaw,
    pub agnostic: BetaLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub id: String,
    pub probability: f64,
    /// Keyed by root-cause edge id. Root causes without an entry are never
    /// remediated by this action.
    #[serde(default)]
    pub gamma: BTreeMap<String, GammaLaws>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemedySpec {
    pub id: String,
    pub class: RemedyClass,
    #[serde(default)]
    pub targeted_roots: Vec<String>,
    #[serde(default)]
    pub actions: Vec<ActionSpec>,
    pub omega: StrengthSpec,
    pub beta: StrengthSpec,
}

impl RemedySpec {
    pub fn validate(&self) -> Result<()> {
        match self.class {
            RemedyClass::Perfect if self.targeted_roots.is_empty() => {
                return Err(CegError::RemedyInvalid(format!(
                    "perfect remedy {} targets no root cause",
                    self.id
                )))
            }
            RemedyClass::Imperfect | RemedyClass::Uncertain if self.actions.is_empty() => {
                return Err(CegError::EmptyActionSet(self.id.clone()))
            }
            _ => {}
        }
        if !self.actions.is_empty() {
            let total: f64 = self.actions.iter().map(|a| a.probability).sum();
            if (total - 1.0).abs() > PROB_TOL
                || self.actions.iter().any(|a| !(0.0..=1.0).contains(&a.probability))
            {
                return Err(CegError::RemedyInvalid(format!(
                    "action probabilities of {} sum to {total}",
                    self.id
                )));
            }
        }
        for action in &self.actions {
            for laws in action.gamma.values() {
                for law in [laws.conditioned, laws.agnostic] {
                    if !(law.a > 0.0 && law.b > 0.0 && law.a.is_finite() && law.b.is_finite()) {
                        return Err(CegError::RemedyInvalid(format!(
                            "Beta law ({}, {}) in action {} is not positive",
                            law.a, law.b, action.id
                        )));
                    }
                }
            }
        }
        self.omega.validate(CegError::NonpositiveOmega)?;
        self.beta.validate(CegError::NonpositiveBeta)?;
        Ok(())
    }

    /// Probability that root cause `root` is remediated under `action`.
    fn remediation_mean(&self, action: &ActionSpec, root: &str) -> f64 {
        action
            .gamma
            .get(root)
            .map(|l| match self.class {
                RemedyClass::Uncertain => l.agnostic.mean(),
                _ => l.conditioned.mean(),
            })
            .unwrap_or(0.0)
    }
}

/// Binary vector over root-cause edges, in root-cause order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InterventionIndicator(pub Vec<bool>);

impl InterventionIndicator {
    pub fn zeros(n: usize) -> Self {
        InterventionIndicator(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| !b)
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    /// The `index`-th vector in lexicographic enumeration of `{0,1}^n`, with
    /// the first component as the most significant bit.
    pub fn from_index(index: usize, n: usize) -> Self {
        InterventionIndicator((0..n).map(|i| index >> (n - 1 - i) & 1 == 1).collect())
    }

    pub fn parse(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(CegError::Parse(format!("bad indicator bitstring {s}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(InterventionIndicator)
    }
}

impl fmt::Display for InterventionIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorDistribution {
    pub support: Vec<(InterventionIndicator, f64)>,
}

impl IndicatorDistribution {
    pub fn total(&self) -> f64 {
        self.support.iter().map(|(_, p)| p).sum()
    }

    pub fn probability(&self, indicator: &InterventionIndicator) -> f64 {
        self.support
            .iter()
            .find(|(i, _)| i == indicator)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn is_point_mass(&self) -> bool {
        self.support.len() == 1
    }

    /// Marginal probability that bit `i` is set.
    pub fn marginal(&self, i: usize) -> f64 {
        self.support.iter().filter(|(ind, _)| ind.get(i)).map(|(_, p)| p).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InterventionIndicator {
        let u: f64 = rng.random::<f64>() * self.total();
        let mut acc = 0.0;
        for (ind, p) in &self.support {
            acc += p;
            if u < acc {
                return ind.clone();
            }
        }
        self.support.last().expect("non-empty support").0.clone()
    }
}

/// `I_e(r*) = 1` iff `e` is targeted by the remedy.
pub fn make_indicator(remedy: &RemedySpec, root_causes: &[String]) -> Result<InterventionIndicator> {
    for t in &remedy.targeted_roots {
        if !root_causes.contains(t) {
            return Err(CegError::UnknownRootCause(t.clone()));
        }
    }
    Ok(InterventionIndicator(
        root_causes.iter().map(|r| remedy.targeted_roots.contains(r)).collect(),
    ))
}

/// Distribution of the intervention indicator under `do(r*)`.
pub fn indicator_distribution(
    remedy: &RemedySpec,
    root_causes: &[String],
) -> Result<IndicatorDistribution> {
    if remedy.class == RemedyClass::Perfect {
        return Ok(IndicatorDistribution {
            support: vec![(make_indicator(remedy, root_causes)?, 1.0)],
        });
    }
    if remedy.actions.is_empty() {
        return Err(CegError::EmptyActionSet(remedy.id.clone()));
    }
    for action in &remedy.actions {
        for key in action.gamma.keys() {
            if !root_causes.contains(key) {
                return Err(CegError::UnknownRootCause(key.clone()));
            }
        }
    }
    let n = root_causes.len();
    let means: Vec<(f64, Vec<f64>)> = remedy
        .actions
        .iter()
        .map(|a| {
            (
                a.probability,
                root_causes.iter().map(|r| remedy.remediation_mean(a, r)).collect(),
            )
        })
        .collect();
    let mut support = Vec::new();
    for idx in 0..(1usize << n) {
        let ind = InterventionIndicator::from_index(idx, n);
        let p: f64 = means
            .iter()
            .map(|(pa, m)| {
                pa * m
                    .iter()
                    .zip(&ind.0)
                    .map(|(&mi, &bit)| if bit { mi } else { 1.0 - mi })
                    .product::<f64>()
            })
            .sum();
        if p > 0.0 {
            support.push((ind, p));
        }
    }
    Ok(IndicatorDistribution { support })
}

/// `α*_e = α_e / (1 + ω I_e)`.
pub fn apply_g(alpha: &[f64], indicator: &[bool], omega: f64) -> Result<Vec<f64>> {
    if !omega.is_finite() || omega < 0.0 {
        return Err(CegError::NonpositiveOmega(omega));
    }
    if alpha.len() != indicator.len() {
        return Err(CegError::ShapeMismatch {
            expected: alpha.len(),
            got: indicator.len(),
        });
    }
    Ok(alpha
        .iter()
        .zip(indicator)
        .map(|(&a, &i)| if i { a / (1.0 + omega) } else { a })
        .collect())
}

/// Multiplies the Weibull scale of every targeted edge by `1 + β`; shapes and
/// untargeted edges are unchanged.
pub fn apply_j(
    laws: &[HoldingTimeLaw],
    indicator: &[bool],
    beta: f64,
) -> Result<Vec<HoldingTimeLaw>> {
    if !beta.is_finite() || beta < 0.0 {
        return Err(CegError::NonpositiveBeta(beta));
    }
    if laws.len() != indicator.len() {
        return Err(CegError::ShapeMismatch {
            expected: laws.len(),
            got: indicator.len(),
        });
    }
    Ok(laws
        .iter()
        .zip(indicator)
        .map(|(l, &i)| {
            if i {
                HoldingTimeLaw {
                    shape: l.shape,
                    scale: l.scale * (1.0 + beta),
                }
            } else {
                *l
            }
        })
        .collect())
}

fn dirichlet_mean(alpha: &[f64]) -> Vec<f64> {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|a| a / total).collect()
}

/// Shared source vertex of the root causes.
pub fn root_cause_vertex(tree: &EventTree, partition: &PathPartition) -> Result<usize> {
    let first = *partition
        .root_causes
        .first()
        .ok_or_else(|| CegError::ModelInvalid("no root causes declared".into()))?;
    let v = tree.source(first);
    if partition.root_causes.iter().any(|&e| tree.source(e) != v) {
        return Err(CegError::ModelInvalid(
            "root-cause edges must share one source vertex".into(),
        ));
    }
    Ok(v)
}

/// `π*(E(root)|do(r*), T) = Σ_I mean(Dir(g(α_root, I, ω))) p(I | do(r*))`.
///
/// `root_alpha` is aligned with the model's root-cause order; the root-cause
/// vertex must have no out-edges besides the root causes.
pub fn intervened_root_distribution(
    model: &SemiMarkovModel,
    remedy: &RemedySpec,
    root_alpha: &[f64],
) -> Result<Vec<f64>> {
    let tree = &model.tree;
    let v = root_cause_vertex(tree, &model.paths)?;
    if tree.out_edges(v).len() != model.paths.root_causes.len() {
        return Err(CegError::ModelInvalid(
            "root-cause vertex has out-edges that are not root causes".into(),
        ));
    }
    if root_alpha.len() != model.paths.root_causes.len() {
        return Err(CegError::ShapeMismatch {
            expected: model.paths.root_causes.len(),
            got: root_alpha.len(),
        });
    }
    let omega = remedy.omega.for_vertex(tree.vertex_id(v)).point();
    let dist = indicator_distribution(remedy, &model.root_cause_ids())?;
    let mut out = vec![0.0; root_alpha.len()];
    for (ind, p) in &dist.support {
        let mean = dirichlet_mean(&apply_g(root_alpha, &ind.0, omega)?);
        for (o, m) in out.iter_mut().zip(mean) {
            *o += p * m;
        }
    }
    let total: f64 = out.iter().sum();
    Ok(out.into_iter().map(|x| x / total).collect())
}

/// Blockwise reweighting of the failure probability:
/// `Σ_e π(Λ_e(fail)|T) / π(e|T) · π*(e|do)`.
pub fn intervened_failure_probability(
    tree: &EventTree,
    partition: &PathPartition,
    intervened_root: &[f64],
) -> Result<f64> {
    if intervened_root.len() != partition.root_causes.len() {
        return Err(CegError::ShapeMismatch {
            expected: partition.root_causes.len(),
            got: intervened_root.len(),
        });
    }
    let blocks = partition.block_probabilities(tree);
    let mut total = 0.0;
    for (i, &e) in partition.root_causes.iter().enumerate() {
        // `intervened_root` is conditional on reaching the root-cause vertex
        let upstream = crate::tree::path_probability(tree, &tree.path_to(tree.source(e)))?;
        let idle = upstream * tree.edge_data(e).theta;
        if blocks[i] == 0.0 {
            continue;
        }
        if idle == 0.0 {
            return Err(CegError::ZeroRootProbability(tree.edge_data(e).id.clone()));
        }
        total += blocks[i] / idle * intervened_root[i] * upstream;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResetOutcome {
    pub vertex: usize,
    /// Set for uncertain remedies that left the root cause in place.
    pub followup_pending: bool,
}

/// Where the next cycle starts after a remedy.
pub fn reset_vertex(
    class: RemedyClass,
    realized_root_cause: usize,
    remediated: bool,
    tree: &EventTree,
) -> ResetOutcome {
    if class == RemedyClass::Perfect || remediated {
        return ResetOutcome {
            vertex: tree.root(),
            followup_pending: false,
        };
    }
    ResetOutcome {
        vertex: tree.target(realized_root_cause),
        followup_pending: class == RemedyClass::Uncertain,
    }
}

/// Edges renewed when each root cause is remediated: the root-cause edge
/// itself plus every edge below it that can still lead to a failure.
pub fn renewal_scope(tree: &EventTree, root_causes: &[usize]) -> Vec<Vec<usize>> {
    let reach = tree.reaches_failure();
    root_causes
        .iter()
        .map(|&r| {
            let head = tree.target(r);
            let mut scope = vec![r];
            scope.extend(
                (0..tree.num_edges())
                    .filter(|&e| reach[e] && tree.is_ancestor(head, tree.source(e))),
            );
            scope
        })
        .collect()
}

/// Per-edge multiplicative drift accumulated by remedies within one unit:
/// `weight` multiplies transition probabilities before renormalisation at
/// each vertex, `stretch` multiplies Weibull scales.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftState {
    pub weight: Vec<f64>,
    pub stretch: Vec<f64>,
}

impl DriftState {
    pub fn identity(num_edges: usize) -> Self {
        DriftState {
            weight: vec![1.0; num_edges],
            stretch: vec![1.0; num_edges],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.weight.iter().all(|&w| w == 1.0) && self.stretch.iter().all(|&s| s == 1.0)
    }

    /// Applies one remedy event: `g` and `J` on the renewal scope of every
    /// targeted root cause, with strengths looked up at each edge's source.
    pub fn apply(
        &mut self,
        tree: &EventTree,
        scope: &[Vec<usize>],
        indicator: &InterventionIndicator,
        omega: &dyn Fn(usize) -> f64,
        beta: &dyn Fn(usize) -> f64,
    ) {
        for (i, edges) in scope.iter().enumerate() {
            if !indicator.get(i) {
                continue;
            }
            for &e in edges {
                let v = tree.source(e);
                self.weight[e] /= 1.0 + omega(v);
                self.stretch[e] *= 1.0 + beta(v);
            }
        }
    }

    /// Like [`DriftState::apply`] with possibly fractional indicator bits
    /// (plug-in expectations); bits of exactly 0 or 1 reproduce `apply`.
    pub fn apply_bits(
        &mut self,
        tree: &EventTree,
        scope: &[Vec<usize>],
        bits: &[f64],
        omega: &dyn Fn(usize) -> f64,
        beta: &dyn Fn(usize) -> f64,
    ) {
        for (i, edges) in scope.iter().enumerate() {
            let b = bits[i];
            if b == 0.0 {
                continue;
            }
            for &e in edges {
                let v = tree.source(e);
                if b == 1.0 {
                    self.weight[e] /= 1.0 + omega(v);
                    self.stretch[e] *= 1.0 + beta(v);
                } else {
                    self.weight[e] /= (1.0 + omega(v)).powf(b);
                    self.stretch[e] *= (1.0 + beta(v)).powf(b);
                }
            }
        }
    }

    /// Drifted transition probabilities out of `v`, aligned with `out_edges(v)`.
    pub fn thetas(&self, tree: &EventTree, base: &[f64], v: usize) -> Vec<f64> {
        let out = tree.out_edges(v);
        let total: f64 = out.iter().map(|&e| base[e] * self.weight[e]).sum();
        out.iter().map(|&e| base[e] * self.weight[e] / total).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta(a: f64, b: f64) -> BetaLaw {
        BetaLaw { a, b }
    }

    fn remedy(class: RemedyClass, targeted: &[&str], actions: Vec<ActionSpec>) -> RemedySpec {
        RemedySpec {
            id: "r".into(),
            class,
            targeted_roots: targeted.iter().map(|s| s.to_string()).collect(),
            actions,
            omega: StrengthSpec::fixed(1.0),
            beta: StrengthSpec::fixed(0.5),
        }
    }

    fn roots() -> Vec<String> {
        vec!["oil supply".into(), "lightening".into()]
    }

    #[test]
    fn indicator_examples() {
        let r = roots();
        let mut rem = remedy(RemedyClass::Perfect, &["oil supply"], vec![]);
        assert_eq!(make_indicator(&rem, &r).unwrap().0, vec![true, false]);
        rem.targeted_roots.clear();
        assert!(make_indicator(&rem, &r).unwrap().is_zero());
        rem.targeted_roots = r.clone();
        assert_eq!(make_indicator(&rem, &r).unwrap().0, vec![true, true]);
        rem.targeted_roots = vec!["flood".into()];
        assert_eq!(
            make_indicator(&rem, &r).unwrap_err(),
            CegError::UnknownRootCause("flood".into())
        );
    }

    #[test]
    fn perfect_is_point_mass() {
        let rem = remedy(RemedyClass::Perfect, &["oil supply"], vec![]);
        let d = indicator_distribution(&rem, &roots()).unwrap();
        assert_eq!(d.support, vec![(InterventionIndicator(vec![true, false]), 1.0)]);
    }

    #[test]
    fn uniform_beta_imperfect() {
        let mut gamma = BTreeMap::new();
        gamma.insert(
            "a".to_string(),
            GammaLaws {
                conditioned: beta(1.0, 1.0),
                agnostic: beta(1.0, 1.0),
            },
        );
        let rem = remedy(
            RemedyClass::Imperfect,
            &[],
            vec![ActionSpec {
                id: "x".into(),
                probability: 1.0,
                gamma,
            }],
        );
        let d = indicator_distribution(&rem, &["a".to_string()]).unwrap();
        assert_eq!(d.probability(&InterventionIndicator(vec![true])), 0.5);
        assert_eq!(d.probability(&InterventionIndicator(vec![false])), 0.5);
    }

    #[test]
    fn empty_actions() {
        let rem = remedy(RemedyClass::Uncertain, &[], vec![]);
        assert_eq!(
            indicator_distribution(&rem, &roots()).unwrap_err(),
            CegError::EmptyActionSet("r".into())
        );
        assert!(rem.validate().is_err());
    }

    #[test]
    fn g_examples() {
        assert_eq!(apply_g(&[2.0, 2.0], &[false, false], 3.0).unwrap(), vec![2.0, 2.0]);
        assert_eq!(apply_g(&[2.0, 2.0], &[true, false], 1.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            apply_g(&[3.0, 6.0, 1.0], &[true, true, false], 2.0).unwrap(),
            vec![1.0, 2.0, 1.0]
        );
        assert_eq!(
            apply_g(&[1.0], &[true], -1.0).unwrap_err(),
            CegError::NonpositiveOmega(-1.0)
        );
    }

    #[test]
    fn j_examples() {
        let laws = [
            HoldingTimeLaw {
                shape: 2.0,
                scale: 10.0,
            },
            HoldingTimeLaw {
                shape: 1.0,
                scale: 3.0,
            },
        ];
        let out = apply_j(&laws, &[true, false], 0.5).unwrap();
        assert_eq!(out[0].scale, 15.0);
        assert_eq!(out[0].shape, 2.0);
        assert_eq!(out[1], laws[1]);
        assert_eq!(apply_j(&laws, &[true, true], 0.0).unwrap(), laws.to_vec());
        assert!(apply_j(&laws, &[true, true], f64::NAN).is_err());
    }

    #[test]
    fn failure_probability_two_roots() {
        use crate::tree::Edge;
        let e = |id: &str, from: &str, to: &str, theta: f64, failure: bool| Edge {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            label: id.into(),
            theta,
            holding: None,
            failure,
        };
        let tree = EventTree::new(
            ["r", "a", "b", "af", "ao", "bf", "bo"].iter().map(|s| s.to_string()).collect(),
            "r",
            vec![
                e("ra", "r", "a", 0.5, false),
                e("rb", "r", "b", 0.5, false),
                e("af", "a", "af", 0.2, true),
                e("ao", "a", "ao", 0.8, false),
                e("bf", "b", "bf", 0.8, true),
                e("bo", "b", "bo", 0.2, false),
            ],
        )
        .unwrap();
        let part = crate::tree::enumerate_failure_paths(&tree, &[0, 1], &[2, 4]).unwrap();
        let p = intervened_failure_probability(&tree, &part, &[0.8, 0.2]).unwrap();
        assert!((p - 0.32).abs() < 1e-15);
        let idle = intervened_failure_probability(&tree, &part, &[0.5, 0.5]).unwrap();
        assert!((idle - part.failure_probability(&tree)).abs() < 1e-12);
    }

    #[test]
    fn bitstrings() {
        let i = InterventionIndicator::parse("101").unwrap();
        assert_eq!(i.to_string(), "101");
        assert_eq!(InterventionIndicator::from_index(5, 3), i);
        assert!(InterventionIndicator::parse("12").is_err());
    }
}
