//! The simulation experiment: generate datasets, fit both modes, select
//! structures, score against the ground truth and aggregate.
//!
//! Work is split into cells `(size, phantom units, replicate)`. Every cell
//! has its own derived seeds and writes its own result file, so cells can run
//! in any order or in parallel and an interrupted run can resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CegError, Result};
use crate::formats::{to_json_string, write_json};
use crate::inference::{
    fit, init_prior, raw_selection_data, FitMode, FitStructure, McmcSettings, PosteriorSummary,
};
use crate::rng::{derive_seed, seeded};
use crate::semi_markov::{generate_dataset, GenConfig, SemiMarkovModel};
use crate::structure::{
    ahc_select, partition_distance, CandidatePartition, MergeReport, StructureFile,
    TrackedPair,
};
use crate::tree::EventTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionCounts {
    /// Posterior-expected complete-data counts from a fit on the finest
    /// structure (intervened mode only; idle always scores raw counts).
    Expected,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Model file, relative to the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    pub seed: u64,
    #[serde(default = "default_phantom")]
    pub phantom_units: Vec<f64>,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default = "default_counts")]
    pub selection_counts: SelectionCounts,
    #[serde(default = "default_modes")]
    pub modes: Vec<FitMode>,
}

fn default_groups() -> usize {
    10
}
fn default_phantom() -> Vec<f64> {
    vec![3.0]
}
fn default_counts() -> SelectionCounts {
    SelectionCounts::Expected
}
fn default_modes() -> Vec<FitMode> {
    vec![FitMode::Intervened, FitMode::Idle]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s < self.groups) {
            return Err(CegError::ConfigInvalid("every size must be at least the group count".into()));
        }
        if self.replicates == 0 || self.groups == 0 {
            return Err(CegError::ConfigInvalid("replicates and groups must be positive".into()));
        }
        if self.phantom_units.is_empty() || self.phantom_units.iter().any(|k| !(*k > 0.0)) {
            return Err(CegError::ConfigInvalid("phantom units must be positive".into()));
        }
        if self.modes.is_empty() {
            return Err(CegError::ConfigInvalid("no fitting modes".into()));
        }
        self.mcmc.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub situational: f64,
    pub cluster: f64,
    pub holding: f64,
}

/// The ground truth as a candidate partition.
pub fn truth_partition(model: &SemiMarkovModel) -> CandidatePartition {
    CandidatePartition {
        stages: model.stages.clone(),
        clusters: model.clusters.clone(),
        stage_score: 0.0,
        holding_score: 0.0,
        trace: Vec::new(),
    }
}

/// Errors of a fit under a selected structure against the ground truth.
///
/// * situational: for every true stage and slot, the mean over the stage's
///   vertices of |posterior mean θ - true θ|, averaged over (stage, slot);
/// * cluster: pairwise disagreement between selected and true partitions;
/// * holding: for every true cluster, the mean over its edges of
///   |posterior mean holding time - true mean|, averaged over clusters.
pub fn compute_errors(
    summary: &PosteriorSummary,
    selected: &CandidatePartition,
    model: &SemiMarkovModel,
) -> Result<ErrorTriple> {
    let tree = &model.tree;
    let theta = summary.edge_theta_means(tree)?;
    let mut sit = Vec::new();
    for stage in model.stages.stages() {
        let width = model.stages.slots(stage[0]).len();
        for k in 0..width {
            let dev: f64 = stage
                .iter()
                .map(|&v| {
                    let e = model.stages.slots(v)[k];
                    (theta[e] - tree.edge_data(e).theta).abs()
                })
                .sum::<f64>()
                / stage.len() as f64;
            sit.push(dev);
        }
    }
    let holding = summary.edge_mean_holding(tree)?;
    let mut hold = Vec::new();
    for block in model.clusters.blocks() {
        let mut dev = 0.0;
        for &e in block {
            let truth = model.holding(e).expect("clustered edges carry holding laws").mean();
            let est = holding[e].ok_or_else(|| {
                CegError::StructureMismatch(format!("no holding estimate for {}", tree.edge_data(e).id))
            })?;
            dev += (est - truth).abs();
        }
        hold.push(dev / block.len() as f64);
    }
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    Ok(ErrorTriple {
        situational: mean(&sit),
        cluster: partition_distance(selected, &truth_partition(model), tree)?,
        holding: mean(&hold),
    })
}

/// Element pairs that share a true stage or cluster. Multi-vertex stages are
/// named `l1, l2, ...` by depth.
pub fn tracked_pairs(model: &SemiMarkovModel) -> Vec<TrackedPair> {
    let tree = &model.tree;
    let mut stages: Vec<&Vec<usize>> = model.stages.stages().iter().filter(|s| s.len() > 1).collect();
    stages.sort_by_key(|s| (tree.depth(s[0]), tree.vertex_id(s[0]).to_string()));
    let mut out = Vec::new();
    for (i, s) in stages.iter().enumerate() {
        for a in 0..s.len() {
            for b in a + 1..s.len() {
                let name = if s.len() == 2 {
                    format!("l{}", i + 1)
                } else {
                    format!("l{}:{}~{}", i + 1, tree.vertex_id(s[a]), tree.vertex_id(s[b]))
                };
                out.push(TrackedPair {
                    name,
                    stage: true,
                    first: s[a],
                    second: s[b],
                });
            }
        }
    }
    for block in model.clusters.blocks().iter().filter(|b| b.len() > 1) {
        for a in 0..block.len() {
            for b in a + 1..block.len() {
                out.push(TrackedPair {
                    name: format!("{}~{}", tree.edge_data(block[a]).id, tree.edge_data(block[b]).id),
                    stage: false,
                    first: block[a],
                    second: block[b],
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: FitMode,
    pub structure: StructureFile,
    pub errors: ErrorTriple,
    /// Aligned with the report's tracked pairs.
    pub merged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub size: usize,
    pub phantom_units: f64,
    pub replicate: usize,
    pub data_seed: u64,
    pub modes: Vec<ModeResult>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    size: usize,
    phantom: f64,
    replicate: usize,
}

impl Cell {
    fn file_name(&self) -> String {
        format!("cell_n{}_k{}_r{}.json", self.size, self.phantom, self.replicate)
    }
}

fn mode_tag(mode: FitMode) -> u64 {
    match mode {
        FitMode::Intervened => 1,
        FitMode::Idle => 2,
    }
}

/// Selects a structure and fits under it, in one mode.
pub fn fit_and_select(
    dataset: &crate::semi_markov::Dataset,
    model: &SemiMarkovModel,
    mode: FitMode,
    phantom_units: f64,
    mcmc: &McmcSettings,
    counts: SelectionCounts,
    seed: u64,
) -> Result<(CandidatePartition, PosteriorSummary)> {
    let tree = &model.tree;
    let prior = init_prior(tree, phantom_units)?;
    let mut rng = seeded(seed);
    let selection = if mode == FitMode::Intervened && counts == SelectionCounts::Expected {
        fit(dataset, model, &FitStructure::finest(tree), mode, &prior, mcmc, &mut rng)?.selection
    } else {
        raw_selection_data(dataset, tree)
    };
    let selected = ahc_select(&selection, tree, &prior)?;
    let structure = FitStructure {
        stages: selected.stages.clone(),
        clusters: selected.clusters.clone(),
    };
    let out = fit(dataset, model, &structure, mode, &prior, mcmc, &mut rng)?;
    Ok((selected, out.summary))
}

fn run_cell(config: &ExperimentConfig, model: &SemiMarkovModel, tracked: &[TrackedPair], cell: Cell) -> Result<CellResult> {
    let data_seed = derive_seed(config.seed, &[cell.replicate as u64]);
    let gen = GenConfig {
        groups: config.groups,
        sizes: vec![cell.size],
        seed: data_seed,
        cycles_per_unit: None,
        intervention_drift: None,
    };
    let dataset = generate_dataset(model, &gen, cell.size)?;
    let mut modes = Vec::new();
    for &mode in &config.modes {
        let seed = derive_seed(
            config.seed,
            &[cell.size as u64, cell.phantom.to_bits(), cell.replicate as u64, mode_tag(mode)],
        );
        let (selected, summary) = fit_and_select(
            &dataset,
            model,
            mode,
            cell.phantom,
            &config.mcmc,
            config.selection_counts,
            seed,
        )?;
        let errors = compute_errors(&summary, &selected, model)?;
        modes.push(ModeResult {
            mode,
            structure: selected.to_file(&model.tree),
            errors,
            merged: tracked.iter().map(|t| t.merged(&selected)).collect(),
        });
    }
    Ok(CellResult {
        size: cell.size,
        phantom_units: cell.phantom,
        replicate: cell.replicate,
        data_seed,
        modes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: ErrorTriple,
    pub sd: ErrorTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGroup {
    pub size: usize,
    pub phantom_units: f64,
    pub mode: FitMode,
    pub merges: MergeReport,
    pub errors: ErrorSummary,
    /// Proportion of replicates in which every stage pair named `l*` merged.
    pub all_levels_merged: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub groups: Vec<ReportGroup>,
    pub cells: Vec<CellResult>,
}

impl ExperimentReport {
    pub fn group(&self, size: usize, phantom_units: f64, mode: FitMode) -> Option<&ReportGroup> {
        self.groups
            .iter()
            .find(|g| g.size == size && g.phantom_units == phantom_units && g.mode == mode)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

fn aggregate(config: &ExperimentConfig, tree: &EventTree, tracked: &[TrackedPair], cells: &[CellResult]) -> Vec<ReportGroup> {
    let mut out = Vec::new();
    for &size in &config.sizes {
        for &k in &config.phantom_units {
            for (mi, &mode) in config.modes.iter().enumerate() {
                let rows: Vec<&ModeResult> = cells
                    .iter()
                    .filter(|c| c.size == size && c.phantom_units == k)
                    .map(|c| &c.modes[mi])
                    .collect();
                let n = rows.len();
                let prop = |i: usize| rows.iter().filter(|r| r.merged[i]).count() as f64 / n as f64;
                let merges = MergeReport {
                    replicates: n,
                    pairs: tracked
                        .iter()
                        .enumerate()
                        .map(|(i, t)| crate::structure::MergeProportion {
                            name: t.name.clone(),
                            kind: if t.stage { "stage" } else { "cluster" }.into(),
                            first: if t.stage {
                                tree.vertex_id(t.first).to_string()
                            } else {
                                tree.edge_data(t.first).id.clone()
                            },
                            second: if t.stage {
                                tree.vertex_id(t.second).to_string()
                            } else {
                                tree.edge_data(t.second).id.clone()
                            },
                            proportion: prop(i),
                        })
                        .collect(),
                };
                let levels: Vec<usize> = tracked
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.stage)
                    .map(|(i, _)| i)
                    .collect();
                let all = rows.iter().filter(|r| levels.iter().all(|&i| r.merged[i])).count() as f64 / n as f64;
                let col = |f: fn(&ErrorTriple) -> f64| mean_sd(&rows.iter().map(|r| f(&r.errors)).collect::<Vec<_>>());
                let (sm, ss) = col(|e| e.situational);
                let (cm, cs) = col(|e| e.cluster);
                let (hm, hs) = col(|e| e.holding);
                out.push(ReportGroup {
                    size,
                    phantom_units: k,
                    mode,
                    merges,
                    errors: ErrorSummary {
                        mean: ErrorTriple {
                            situational: sm,
                            cluster: cm,
                            holding: hm,
                        },
                        sd: ErrorTriple {
                            situational: ss,
                            cluster: cs,
                            holding: hs,
                        },
                    },
                    all_levels_merged: all,
                });
            }
        }
    }
    out
}

/// Runs every cell. With `out_dir`, finished cells are stored under
/// `out_dir/cells` and reused on the next run with the same config.
pub fn run_experiment(
    config: &ExperimentConfig,
    model: &SemiMarkovModel,
    out_dir: Option<&Path>,
) -> Result<ExperimentReport> {
    config.validate()?;
    let tracked = tracked_pairs(model);
    let mut cells = Vec::new();
    for &size in &config.sizes {
        for &k in &config.phantom_units {
            for r in 0..config.replicates {
                cells.push(Cell {
                    size,
                    phantom: k,
                    replicate: r,
                });
            }
        }
    }
    let cell_dir = out_dir.map(|d| d.join("cells"));
    if let Some(d) = &cell_dir {
        fs::create_dir_all(d)?;
        let stamp = d.join("config.json");
        let current = to_json_string(config);
        if fs::read_to_string(&stamp).ok().as_deref() != Some(current.as_str()) {
            // a different config invalidates earlier cells
            for entry in fs::read_dir(d)? {
                let p = entry?.path();
                if p.extension().is_some_and(|x| x == "json") {
                    fs::remove_file(p)?;
                }
            }
            fs::write(&stamp, current)?;
        }
    }
    let results: Vec<Result<CellResult>> = cells
        .par_iter()
        .map(|&cell| {
            if let Some(d) = &cell_dir {
                let path = d.join(cell.file_name());
                if let Ok(text) = fs::read_to_string(&path) {
                    if let Ok(done) = serde_json::from_str::<CellResult>(&text) {
                        log::debug!("reusing {}", path.display());
                        return Ok(done);
                    }
                }
            }
            let t = Instant::now();
            let res = run_cell(config, model, &tracked, cell)?;
            log::info!(
                "cell n={} k={} r={} done in {:.1}s",
                cell.size,
                cell.phantom,
                cell.replicate,
                t.elapsed().as_secs_f64()
            );
            if let Some(d) = &cell_dir {
                write_json(&d.join(cell.file_name()), &res)?;
            }
            Ok(res)
        })
        .collect();
    let cells: Vec<CellResult> = results.into_iter().collect::<Result<_>>()?;
    let groups = aggregate(config, &model.tree, &tracked, &cells);
    Ok(ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        groups,
        cells,
    })
}

/// Writes `report.json`, `merge_proportions.csv` and `errors.csv`.
pub fn write_report(out_dir: &Path, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.json"), report.to_json())?;
    let mut w = csv::Writer::from_path(out_dir.join("merge_proportions.csv"))?;
    w.write_record(["size", "phantom_units", "mode", "pair", "kind", "first", "second", "proportion"])?;
    for g in &report.groups {
        for p in &g.merges.pairs {
            w.write_record([
                g.size.to_string(),
                g.phantom_units.to_string(),
                g.mode.as_str().to_string(),
                p.name.clone(),
                p.kind.clone(),
                p.first.clone(),
                p.second.clone(),
                p.proportion.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out_dir.join("errors.csv"))?;
    w.write_record(["size", "phantom_units", "mode", "metric", "mean", "sd"])?;
    for g in &report.groups {
        let m = &g.errors.mean;
        let s = &g.errors.sd;
        for (name, mean, sd) in [
            ("situational", m.situational, s.situational),
            ("cluster", m.cluster, s.cluster),
            ("holding", m.holding, s.holding),
        ] {
            w.write_record([
                g.size.to_string(),
                g.phantom_units.to_string(),
                g.mode.as_str().to_string(),
                name.to_string(),
                mean.to_string(),
                sd.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
