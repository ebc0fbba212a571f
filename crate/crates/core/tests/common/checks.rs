//! Checks shared by the regular test targets and the acceptance report. Each
//! returns a one-line summary on success and the first failure otherwise.

use std::time::Instant;

use ceg_core::intervention::{
    apply_g, apply_j, indicator_distribution, intervened_failure_probability, intervened_root_distribution,
    DriftState, InterventionIndicator, RemedyClass, RemedySpec, StrengthSpec,
};
use ceg_core::rng::seeded;
use ceg_core::semi_markov::{HoldingTimeLaw, SemiMarkovModel};
use ceg_core::tree::{enumerate_failure_paths, EventTree};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde_json::json;

use super::{ceg_disagreements, failure_probability_oracle, random_remedy, random_staged_tree, Sketch};

pub type Check = Result<String, String>;

/// Tree with a root-cause vertex `A` below the root (optionally beside a
/// failure-free branch). Root causes are `A`'s out-edges; leaves under `A`
/// are failures at random.
pub fn random_root_cause_tree<R: Rng>(rng: &mut R) -> (EventTree, Vec<usize>) {
    loop {
        let mut s = Sketch {
            children: vec![Vec::new()],
            color: vec![0],
            failure: vec![false],
        };
        let a = 1;
        s.children.push(Vec::new());
        s.color.push(0);
        s.failure.push(false);
        s.children[0].push(a);
        let with_side = rng.random::<f64>() < 0.6;
        let mut budget = 10usize;
        if with_side {
            s.children.push(Vec::new());
            s.color.push(1);
            s.failure.push(false);
            s.children[0].push(2);
            budget -= 1;
        }
        // force at least two root causes, each possibly growing a subtree
        let k = rng.random_range(2..=3);
        for _ in 0..k {
            let c = s.children.len();
            s.children.push(Vec::new());
            s.color.push(rng.random_range(0..2));
            s.failure.push(false);
            s.children[a].push(c);
            budget -= 1;
        }
        s.color[a] = 3;
        let mut frontier: Vec<usize> = s.children[a].clone();
        while budget >= 2 && !frontier.is_empty() {
            let v = frontier.remove(rng.random_range(0..frontier.len()));
            if rng.random::<f64>() < 0.6 {
                for _ in 0..2 {
                    let c = s.children.len();
                    s.children.push(Vec::new());
                    s.color.push(rng.random_range(0..2));
                    s.failure.push(false);
                    s.children[v].push(c);
                    frontier.push(c);
                }
                budget -= 2;
            }
        }
        let below_a = {
            let mut out = Vec::new();
            let mut stack = vec![a];
            while let Some(v) = stack.pop() {
                out.push(v);
                stack.extend(s.children[v].iter().copied());
            }
            out
        };
        let mut any = false;
        for &v in &below_a {
            if s.children[v].is_empty() && rng.random::<f64>() < 0.5 {
                s.failure[v] = true;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let st = super::staged_from_sketch(rng, &s);
        let tree = st.tree;
        let roots = tree.out_edges(tree.vertex("v1").unwrap()).to_vec();
        return (tree, roots);
    }
}

/// Two-level model: a component vertex whose out-edges are the `k` root
/// causes, each followed by a fail/recover split.
pub fn root_cause_model(k: usize, theta: &[f64]) -> SemiMarkovModel {
    let mut vertices = vec!["v0".to_string(), "vr".to_string()];
    let mut edges = vec![json!({"id": "comp", "from": "v0", "to": "vr", "label": "component", "theta": 1.0})];
    let mut roots = Vec::new();
    for i in 0..k {
        let c = format!("c{i}");
        vertices.extend([c.clone(), format!("f{i}"), format!("o{i}")]);
        edges.push(json!({"id": format!("r{i}"), "from": "vr", "to": c, "label": format!("cause {i}"), "theta": theta[i]}));
        edges.push(json!({"id": format!("fail{i}"), "from": c, "to": format!("f{i}"), "label": "fail", "theta": 0.3 + 0.1 * i as f64, "failure": true}));
        edges.push(json!({"id": format!("ok{i}"), "from": c, "to": format!("o{i}"), "label": "ok", "theta": 0.7 - 0.1 * i as f64}));
        roots.push(format!("r{i}"));
    }
    let file = json!({"vertices": vertices, "root": "v0", "edges": edges, "root_cause_edges": roots});
    SemiMarkovModel::from_json(&file.to_string()).unwrap()
}

fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let t: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / t).collect()
}

/// Blockwise failure probability against path enumeration on the reweighted
/// tree. Returns the largest absolute difference.
pub fn eq2_max_error(trees: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trees {
        let (tree, roots) = random_root_cause_tree(&mut rng);
        let failures: Vec<usize> = (0..tree.num_edges()).filter(|&e| tree.edge_data(e).failure).collect();
        let partition = enumerate_failure_paths(&tree, &roots, &failures).unwrap();
        let star = random_simplex(&mut rng, roots.len());
        let got = intervened_failure_probability(&tree, &partition, &star).unwrap();
        let mut edges = tree.edges().to_vec();
        for (i, &e) in roots.iter().enumerate() {
            edges[e].theta = star[i];
        }
        let want = failure_probability_oracle(&edges, tree.vertex_id(tree.root()));
        worst = worst.max((got - want).abs());
        // the identity reweighting reproduces the idle failure probability
        let idle: Vec<f64> = roots.iter().map(|&e| tree.edge_data(e).theta).collect();
        let same = intervened_failure_probability(&tree, &partition, &idle).unwrap();
        worst = worst.max((same - failure_probability_oracle(tree.edges(), "v0")).abs());
    }
    worst
}

pub struct McOutcome {
    /// Largest |closed form - Monte Carlo| in units of the Monte Carlo
    /// standard error, over indicator probabilities.
    pub indicator_z: f64,
    /// Same for the intervened root distribution.
    pub root_z: f64,
}

/// Monte Carlo for one remedy: draw an action, then γ per root cause from
/// its Beta law, then independent Bernoulli bits; map through `g` and take
/// the Dirichlet mean.
pub fn mc_compare<R: Rng>(model: &SemiMarkovModel, spec: &RemedySpec, alpha: &[f64], draws: usize, rng: &mut R) -> McOutcome {
    let roots = model.root_cause_ids();
    let k = roots.len();
    let omega = match spec.omega.default {
        ceg_core::intervention::Strength::Fixed(w) => w,
        _ => panic!("fixed omega expected"),
    };
    let laws: Vec<Vec<Option<Beta<f64>>>> = spec
        .actions
        .iter()
        .map(|a| {
            roots
                .iter()
                .map(|r| {
                    a.gamma.get(r).map(|l| {
                        let law = if spec.class == RemedyClass::Uncertain { l.agnostic } else { l.conditioned };
                        Beta::new(law.a, law.b).unwrap()
                    })
                })
                .collect()
        })
        .collect();
    let mut counts = vec![0usize; 1 << k];
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for _ in 0..draws {
        let mut u = rng.random::<f64>();
        let mut action = spec.actions.len() - 1;
        for (i, a) in spec.actions.iter().enumerate() {
            if u < a.probability {
                action = i;
                break;
            }
            u -= a.probability;
        }
        let mut idx = 0usize;
        let mut star = Vec::with_capacity(k);
        for (j, law) in laws[action].iter().enumerate() {
            let gamma = law.map(|b| b.sample(rng)).unwrap_or(0.0);
            let bit = rng.random::<f64>() < gamma;
            if bit {
                idx |= 1 << (k - 1 - j);
            }
            star.push(alpha[j] / (1.0 + omega * bit as u8 as f64));
        }
        counts[idx] += 1;
        let t: f64 = star.iter().sum();
        for j in 0..k {
            let m = star[j] / t;
            sum[j] += m;
            sq[j] += m * m;
        }
    }
    let n = draws as f64;
    let dist = indicator_distribution(spec, &roots).unwrap();
    let mut indicator_z: f64 = 0.0;
    for idx in 0..(1usize << k) {
        let ind = InterventionIndicator::from_index(idx, k);
        let p = dist.probability(&ind);
        let phat = counts[idx] as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let z = if se > 0.0 { (phat - p).abs() / se } else if phat == p { 0.0 } else { f64::INFINITY };
        indicator_z = indicator_z.max(z);
    }
    let closed = intervened_root_distribution(model, spec, alpha).unwrap();
    let mut root_z: f64 = 0.0;
    for j in 0..k {
        let mean = sum[j] / n;
        let var = (sq[j] / n - mean * mean).max(0.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 { (mean - closed[j]).abs() / se } else if (mean - closed[j]).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
        root_z = root_z.max(z);
    }
    McOutcome { indicator_z, root_z }
}

/// Criterion 1: blockwise evaluation, mixtures, closed forms and the perfect
/// point mass.
pub fn criterion_calculus() -> Check {
    let start = Instant::now();
    let eq2 = eq2_max_error(40, 101);
    if eq2 > 1e-12 {
        return Err(format!("blockwise failure probability off by {eq2:e}"));
    }
    let mut rng = seeded(202);
    let mut worst_ind: f64 = 0.0;
    let mut worst_root: f64 = 0.0;
    let specs = 24;
    for i in 0..specs {
        let k = 2 + i % 2;
        let model = root_cause_model(k, &random_simplex(&mut rng, k));
        let class = if i % 4 < 2 { RemedyClass::Imperfect } else { RemedyClass::Uncertain };
        let spec = random_remedy(&mut rng, &model.root_cause_ids(), class);
        let alpha: Vec<f64> = (0..k).map(|_| 0.5 + 4.0 * rng.random::<f64>()).collect();
        let out = mc_compare(&model, &spec, &alpha, 1_000_000, &mut rng);
        worst_ind = worst_ind.max(out.indicator_z);
        worst_root = worst_root.max(out.root_z);
    }
    if worst_ind > 3.0 || worst_root > 3.0 {
        return Err(format!(
            "Monte Carlo disagreement: indicator z {worst_ind:.2}, root z {worst_root:.2}"
        ));
    }
    // perfect remedies: exact point mass on the targeted bits
    let model = root_cause_model(3, &[0.2, 0.3, 0.5]);
    let roots = model.root_cause_ids();
    for targeted in [vec!["r0"], vec!["r1", "r2"], vec!["r0", "r1", "r2"]] {
        let spec = RemedySpec {
            id: "p".into(),
            class: RemedyClass::Perfect,
            targeted_roots: targeted.iter().map(|s| s.to_string()).collect(),
            actions: Vec::new(),
            omega: StrengthSpec::fixed(1.5),
            beta: StrengthSpec::fixed(0.5),
        };
        let d = indicator_distribution(&spec, &roots).unwrap();
        let want: Vec<bool> = roots.iter().map(|r| targeted.contains(&r.as_str())).collect();
        if d.support.len() != 1 || d.support[0].1 != 1.0 || d.support[0].0 .0 != want {
            return Err(format!("perfect remedy {targeted:?} is not a point mass"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs > 120.0 {
        return Err(format!("took {secs:.1}s"));
    }
    Ok(format!(
        "blockwise max err {eq2:.1e} on 40 trees; {specs} random remedies, max |z| indicator {worst_ind:.2}, root {worst_root:.2}; perfect point mass exact; {secs:.1}s"
    ))
}

/// Criterion 2: identity interventions change nothing.
pub fn criterion_identity() -> Check {
    let mut rng = seeded(303);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let k = 2 + i % 2;
        let model = root_cause_model(k, &random_simplex(&mut rng, k));
        let roots = model.root_cause_ids();
        let alpha: Vec<f64> = (0..k).map(|_| 0.1 + 5.0 * rng.random::<f64>()).collect();
        let idle: Vec<f64> = alpha.iter().map(|a| a / alpha.iter().sum::<f64>()).collect();
        let idle_fail = intervened_failure_probability(&model.tree, &model.paths, &idle).unwrap();
        let zeros = vec![false; k];
        let omega = 5.0 * rng.random::<f64>();
        let beta = 5.0 * rng.random::<f64>();
        // hyperparameter maps under all-zero indicators and zero strengths
        let g0 = apply_g(&alpha, &zeros, omega).unwrap();
        let ones = vec![true; k];
        let gw = apply_g(&alpha, &ones, 0.0).unwrap();
        let laws: Vec<HoldingTimeLaw> = (0..k)
            .map(|_| HoldingTimeLaw::new(0.5 + 2.0 * rng.random::<f64>(), 1.0 + 20.0 * rng.random::<f64>()).unwrap())
            .collect();
        let j0 = apply_j(&laws, &zeros, beta).unwrap();
        let jb = apply_j(&laws, &ones, 0.0).unwrap();
        for (a, b) in alpha.iter().zip(&g0) {
            worst = worst.max((a - b).abs());
        }
        for (a, b) in alpha.iter().zip(&gw) {
            worst = worst.max((a - b).abs());
        }
        for (l, m) in laws.iter().zip(j0.iter()).chain(laws.iter().zip(jb.iter())) {
            worst = worst.max((l.shape - m.shape).abs()).max((l.scale - m.scale).abs());
        }
        // an imperfect remedy that never remediates: all-zero indicator
        let mut never = random_remedy(&mut rng, &roots, RemedyClass::Imperfect);
        for a in never.actions.iter_mut() {
            a.gamma.clear();
        }
        // a perfect remedy with zero strength
        let weak = RemedySpec {
            id: "w".into(),
            class: RemedyClass::Perfect,
            targeted_roots: vec![roots[0].clone()],
            actions: Vec::new(),
            omega: StrengthSpec::fixed(0.0),
            beta: StrengthSpec::fixed(0.0),
        };
        for spec in [&never, &weak] {
            let root = intervened_root_distribution(&model, spec, &alpha).unwrap();
            for (a, b) in idle.iter().zip(&root) {
                worst = worst.max((a - b).abs());
            }
            let fail = intervened_failure_probability(&model.tree, &model.paths, &root).unwrap();
            worst = worst.max((fail - idle_fail).abs());
        }
        // drift with zero strengths or a zero indicator stays the identity
        let scope = model.renewal_scope();
        let mut d = DriftState::identity(model.tree.num_edges());
        d.apply(&model.tree, &scope, &InterventionIndicator(ones.clone()), &|_| 0.0, &|_| 0.0);
        d.apply(&model.tree, &scope, &InterventionIndicator(zeros.clone()), &|_| omega, &|_| beta);
        if !d.is_identity() {
            return Err("drift moved under an identity intervention".into());
        }
    }
    if worst > 1e-12 {
        return Err(format!("identity intervention changed a quantity by {worst:e}"));
    }
    Ok(format!("50 random models, zero indicators / ω = 0 / β = 0: max change {worst:.1e}"))
}

/// Criterion 7: CEG positions against the brute-force isomorphism oracle.
pub fn criterion_ceg() -> Check {
    let mut rng = seeded(707);
    let trees = 150;
    let mut nontrivial = 0;
    for i in 0..trees {
        let st = random_staged_tree(&mut rng, 12);
        let bad = ceg_disagreements(&st);
        if bad > 0 {
            return Err(format!("tree {i}: {bad} vertex pairs disagree with the oracle"));
        }
        let ceg = ceg_core::tree::build_ceg(&st);
        if ceg.non_sink_positions().len() < st.tree.internal_vertices().len() {
            nontrivial += 1;
        }
    }
    Ok(format!("{trees} random trees (≤ 12 vertices), {nontrivial} with merged positions; all agree"))
}

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Criterion 3: stage posteriors cover the truth and the clamped-shape
/// Weibull chain reproduces the exact Gamma posterior.
pub fn criterion_calibration() -> Check {
    use ceg_core::inference::holding::{mcmc_holding_cluster, HoldingPrior};
    use ceg_core::inference::{fit, init_prior, FitMode, FitStructure, McmcSettings};
    use ceg_core::semi_markov::{generate_dataset, GenConfig};
    use statrs::distribution::{ContinuousCDF, Gamma};

    let start = Instant::now();
    let model = super::transformer_model();
    let tree = &model.tree;
    let config = GenConfig {
        groups: 10,
        sizes: vec![5000],
        seed: 31,
        cycles_per_unit: None,
        intervention_drift: None,
    };
    let data = generate_dataset(&model, &config, 5000).map_err(|e| e.to_string())?;
    let prior = init_prior(tree, 3.0).map_err(|e| e.to_string())?;
    let settings = McmcSettings {
        iters: 2000,
        burnin: 500,
        ..McmcSettings::default()
    };
    let out = fit(
        &data,
        &model,
        &FitStructure::of_model(&model),
        FitMode::Intervened,
        &prior,
        &settings,
        &mut seeded(32),
    )
    .map_err(|e| e.to_string())?;
    let mut inside = 0;
    let mut total = 0;
    let mut worst = (0.0, String::new());
    for st in &out.summary.stages {
        let v = tree.vertex(&st.vertices[0]).unwrap();
        for (k, &e) in model.stages.slots(v).iter().enumerate() {
            let truth = tree.edge_data(e).theta;
            let gap = (st.mean[k] - truth).abs();
            // a single-edge vertex has a degenerate posterior at the truth
            let z = if st.sd[k] > 0.0 { gap / st.sd[k] } else if gap < 1e-12 { 0.0 } else { f64::INFINITY };
            total += 1;
            if z <= 3.0 {
                inside += 1;
            }
            if z > worst.0 {
                worst = (z, format!("{}:{}", st.vertices.join("+"), st.labels[k]));
            }
        }
    }
    let coverage = inside as f64 / total as f64;
    if coverage < 0.95 {
        return Err(format!(
            "{inside}/{total} stage components within 3 sd (worst {} at z = {:.2})",
            worst.1, worst.0
        ));
    }

    let law = tree.edge_data(tree.edge("e24").unwrap()).holding.unwrap();
    let mut rng = seeded(33);
    let times: Vec<f64> = (0..500).map(|_| law.sample(&mut rng)).collect();
    let hp = HoldingPrior::default();
    let chain = mcmc_holding_cluster(&times, &hp, 11_000, 1_000, Some(law.shape), &mut rng).map_err(|e| e.to_string())?;
    let s: f64 = times.iter().map(|t| t.powf(law.shape)).sum();
    let exact = Gamma::new(hp.rate_c + times.len() as f64, hp.rate_d + s).unwrap();
    let ks = ks_distance(&chain.rate, |x| exact.cdf(x));
    if ks >= 0.02 {
        return Err(format!("clamped-shape chain KS distance {ks:.4}"));
    }
    Ok(format!(
        "{inside}/{total} stage components within 3 sd ({:.1}%), worst z {:.2}; clamped-shape KS {ks:.4} on {} draws; {:.0}s",
        100.0 * coverage,
        worst.0,
        chain.rate.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn ceg(args: &[&str]) -> Result<(), String> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_ceg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ceg {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn model_path() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/transformer_model.json").to_string()
}

/// Runs every CLI subcommand into `dir` with a fixed seed and returns the
/// emitted files (relative path, bytes), wall-time files excluded.
pub fn run_pipeline(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    use ceg_core::formats::write_json;
    use ceg_core::inference::init_prior;

    let model = model_path();
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let prior = init_prior(&super::transformer_model().tree, 2.0).map_err(|e| e.to_string())?;
    write_json(&dir.join("prior.json"), &prior.to_file(&super::transformer_model().tree)).map_err(|e| e.to_string())?;
    let data = p("data.csv");
    ceg(&["--seed", "7", "simulate", "--model", &model, "--size", "200", "--out", &data])?;
    let mcmc = ["--iters", "150", "--burnin", "50"];
    let mut fit = vec!["--seed", "8", "fit", "--model", &model, "--data", &data];
    let prior_path = p("prior.json");
    let post_path = p("posterior.json");
    fit.extend(["--prior", &prior_path, "--out", &post_path]);
    fit.extend(mcmc);
    ceg(&fit)?;
    let mut sel = vec!["--seed", "9", "select", "--model", &model, "--data", &data];
    let structure_path = p("structure.json");
    sel.extend(["--out", &structure_path]);
    sel.extend(mcmc);
    ceg(&sel)?;
    ceg(&["intervene", "--model", &model, "--remedy-id", "overhaul", "--out", &p("intervene.json")])?;
    let config = serde_json::json!({
        "model": model,
        "sizes": [150],
        "replicates": 2,
        "groups": 5,
        "seed": 10,
        "mcmc": {"iters": 120, "burnin": 40}
    });
    std::fs::write(dir.join("experiment.json"), config.to_string()).map_err(|e| e.to_string())?;
    ceg(&["experiment", "--config", &p("experiment.json"), "--out", &p("exp")])?;
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "timing.json" {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Parses one emitted file and re-emits it; the result must equal the input.
pub fn round_trip(name: &str, bytes: &[u8]) -> Result<(), String> {
    use ceg_core::experiment::{CellResult, ExperimentConfig, ExperimentReport};
    use ceg_core::formats::{dataset_to_string, read_dataset, to_json_string};
    use ceg_core::inference::{PosteriorSummary, PriorFile, PriorState};
    use ceg_core::structure::{CandidatePartition, StructureFile};

    let model = super::transformer_model();
    let tree = &model.tree;
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let e = |x: ceg_core::CegError| format!("{name}: {x}");
    let j = |x: serde_json::Error| format!("{name}: {x}");
    let again = match name.rsplit('/').next().unwrap() {
        "data.csv" => dataset_to_string(&read_dataset(bytes, &model).map_err(e)?, &model).map_err(e)?,
        "prior.json" => {
            let f: PriorFile = serde_json::from_str(text).map_err(j)?;
            to_json_string(&PriorState::from_file(&f, tree).map_err(e)?.to_file(tree))
        }
        "posterior.json" => to_json_string(&PosteriorSummary::from_json(text).map_err(e)?),
        "structure.json" => {
            let f: StructureFile = serde_json::from_str(text).map_err(j)?;
            to_json_string(&CandidatePartition::from_file(&f, tree).map_err(e)?.to_file(tree))
        }
        "report.json" => ExperimentReport::from_json(text).map_err(e)?.to_json(),
        "config.json" => to_json_string(&ExperimentConfig::from_json(text).map_err(e)?),
        "experiment.json" => return ExperimentConfig::from_json(text).map(|_| ()).map_err(e),
        "intervene.json" => {
            let v: serde_json::Value = serde_json::from_str(text).map_err(j)?;
            let back: serde_json::Value = serde_json::from_str(&to_json_string(&v)).map_err(j)?;
            return if back == v { Ok(()) } else { Err(format!("{name} changed")) };
        }
        "merge_proportions.csv" | "errors.csv" => {
            let mut r = csv::Reader::from_reader(bytes);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(r.headers().map_err(|x| x.to_string())?).map_err(|x| x.to_string())?;
            for rec in r.records() {
                let rec = rec.map_err(|x| x.to_string())?;
                // numeric fields must parse back to the same text
                for f in rec.iter() {
                    if let Ok(x) = f.parse::<f64>() {
                        if x.to_string() != f {
                            return Err(format!("{name}: {f} does not round-trip"));
                        }
                    }
                }
                w.write_record(&rec).map_err(|x| x.to_string())?;
            }
            String::from_utf8(w.into_inner().map_err(|x| x.to_string())?).unwrap()
        }
        other if other.starts_with("cell_") => {
            let c: CellResult = serde_json::from_str(text).map_err(j)?;
            to_json_string(&c)
        }
        other => return Err(format!("no parser for {other}")),
    };
    if again.as_bytes() == bytes {
        Ok(())
    } else {
        Err(format!("{name} does not round-trip"))
    }
}

/// Criterion 6: two runs with the same seeds are byte-identical and every
/// artifact round-trips, including the model file itself.
pub fn criterion_determinism() -> Check {
    use ceg_core::semi_markov::SemiMarkovModel;
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fa = run_pipeline(a.path())?;
    let fb = run_pipeline(b.path())?;
    let names = |f: &[(String, Vec<u8>)]| f.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err(format!("runs emitted different files: {:?} vs {:?}", names(&fa), names(&fb)));
    }
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        if x != y {
            return Err(format!("{name} differs between identical runs"));
        }
    }
    for (name, bytes) in &fa {
        round_trip(name, bytes)?;
    }
    let model = super::transformer_model();
    let text = model.to_json();
    let back = SemiMarkovModel::from_json(&text).map_err(|e| e.to_string())?;
    if back.to_json() != text {
        return Err("model file does not round-trip".into());
    }
    Ok(format!("{} artifacts byte-identical across two runs; all round-trip (plus the model)", fa.len()))
}
