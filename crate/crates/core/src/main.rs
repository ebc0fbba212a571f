use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ceg_core::error::{CegError, Result};
use ceg_core::experiment::{run_experiment, write_report, ExperimentConfig, SelectionCounts};
use ceg_core::formats::{read_dataset_file, read_json, read_model, to_json_string, write_dataset_file, write_json};
use ceg_core::inference::{
    fit, init_prior, raw_selection_data, FitMode, FitStructure, McmcSettings, PriorFile, PriorState,
};
use ceg_core::intervention::{
    apply_g, apply_j, indicator_distribution, intervened_failure_probability,
    intervened_root_distribution, root_cause_vertex, RemedySpec,
};
use ceg_core::rng::seeded;
use ceg_core::semi_markov::{generate_dataset, GenConfig, SemiMarkovModel};
use ceg_core::structure::{ahc_select, CandidatePartition, StructureFile};

#[derive(Parser)]
#[command(name = "ceg", version, about = "Chain event graph failure models with remedial interventions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 20260101)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Intervened,
    Idle,
}

impl From<ModeArg> for FitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Intervened => FitMode::Intervened,
            ModeArg::Idle => FitMode::Idle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CountsArg {
    Expected,
    Raw,
}

#[derive(Args)]
struct McmcArgs {
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    /// Replace latent indicators by their expectation instead of sampling them.
    #[arg(long)]
    plug_in: bool,
    /// Clamp every Weibull shape to this value.
    #[arg(long)]
    fixed_shape: Option<f64>,
}

impl McmcArgs {
    fn settings(&self) -> McmcSettings {
        McmcSettings {
            iters: self.iters,
            burnin: self.burnin,
            sample_indicators: !self.plug_in,
            fixed_shape: self.fixed_shape,
            ..McmcSettings::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV from a model.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 10)]
        groups: usize,
        #[arg(long)]
        cycles: Option<usize>,
        /// Generate without remedy drift.
        #[arg(long)]
        no_drift: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit stage probabilities and holding laws; writes a posterior JSON.
    Fit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "intervened")]
        mode: ModeArg,
        /// Structure JSON to fit under (default: the model's declared structure).
        #[arg(long)]
        structure: Option<PathBuf>,
        /// Fit under the finest structure.
        #[arg(long, conflicts_with = "structure")]
        finest: bool,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        phantom: f64,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select a structure by AHC; writes a structure JSON.
    Select {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "intervened")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "expected")]
        counts: CountsArg,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        phantom: f64,
        #[command(flatten)]
        mcmc: McmcArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a remedy's effect on the root-cause distribution and the
    /// failure probability.
    Intervene {
        #[arg(long)]
        model: PathBuf,
        /// Remedy JSON; alternatively name a remedy declared in the model.
        #[arg(long, conflicts_with = "remedy_id")]
        remedy: Option<PathBuf>,
        #[arg(long)]
        remedy_id: Option<String>,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, default_value_t = 3.0)]
        phantom: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the simulation experiment from a config JSON.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed with --seed.
        #[arg(long)]
        override_seed: bool,
    },
}

fn load_prior(path: Option<&Path>, model: &SemiMarkovModel, phantom: f64) -> Result<PriorState> {
    match path {
        Some(p) => PriorState::from_file(&read_json::<PriorFile>(p)?, &model.tree),
        None => init_prior(&model.tree, phantom),
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.global.seed;
    match cli.command {
        Command::Simulate {
            model,
            size,
            groups,
            cycles,
            no_drift,
            out,
        } => {
            let model = read_model(&model)?;
            let config = GenConfig {
                groups,
                sizes: vec![size],
                seed,
                cycles_per_unit: cycles,
                intervention_drift: no_drift.then_some(false),
            };
            let ds = generate_dataset(&model, &config, size)?;
            write_dataset_file(&out, &ds, &model)?;
            log::info!("wrote {} units, {} cycles", ds.units.len(), ds.num_cycles());
        }
        Command::Fit {
            model,
            data,
            mode,
            structure,
            finest,
            prior,
            phantom,
            mcmc,
            out,
        } => {
            let model = read_model(&model)?;
            let ds = read_dataset_file(&data, &model)?;
            let prior = load_prior(prior.as_deref(), &model, phantom)?;
            let structure = if finest {
                FitStructure::finest(&model.tree)
            } else if let Some(p) = structure {
                let file: StructureFile = read_json(&p)?;
                let c = CandidatePartition::from_file(&file, &model.tree)?;
                FitStructure {
                    stages: c.stages,
                    clusters: c.clusters,
                }
            } else {
                FitStructure::of_model(&model)
            };
            let mut rng = seeded(seed);
            let res = fit(&ds, &model, &structure, mode.into(), &prior, &mcmc.settings(), &mut rng)?;
            write_json(&out, &res.summary)?;
        }
        Command::Select {
            model,
            data,
            mode,
            counts,
            prior,
            phantom,
            mcmc,
            out,
        } => {
            let model = read_model(&model)?;
            let ds = read_dataset_file(&data, &model)?;
            let prior = load_prior(prior.as_deref(), &model, phantom)?;
            let mode: FitMode = mode.into();
            let counts = match counts {
                CountsArg::Expected => SelectionCounts::Expected,
                CountsArg::Raw => SelectionCounts::Raw,
            };
            let selection = if mode == FitMode::Intervened && counts == SelectionCounts::Expected {
                let mut rng = seeded(seed);
                let finest = FitStructure::finest(&model.tree);
                fit(&ds, &model, &finest, mode, &prior, &mcmc.settings(), &mut rng)?.selection
            } else {
                raw_selection_data(&ds, &model.tree)
            };
            let selected = ahc_select(&selection, &model.tree, &prior)?;
            write_json(&out, &selected.to_file(&model.tree))?;
        }
        Command::Intervene {
            model,
            remedy,
            remedy_id,
            prior,
            phantom,
            out,
        } => {
            let model = read_model(&model)?;
            let spec: RemedySpec = match (remedy, remedy_id) {
                (Some(p), _) => {
                    let r: RemedySpec = read_json(&p)?;
                    r.validate()?;
                    r
                }
                (None, Some(id)) => model
                    .remedy(&id)
                    .cloned()
                    .ok_or_else(|| CegError::ConfigInvalid(format!("model declares no remedy {id}")))?,
                (None, None) => return Err(CegError::ConfigInvalid("give --remedy or --remedy-id".into())),
            };
            let prior = load_prior(prior.as_deref(), &model, phantom)?;
            let report = intervene_report(&model, &spec, &prior)?;
            let text = to_json_string(&report);
            match out {
                Some(p) => std::fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Experiment {
            config,
            out,
            override_seed,
        } => {
            let mut cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&config)?)?;
            if override_seed {
                cfg.seed = seed;
            }
            let model_path = cfg
                .model
                .clone()
                .ok_or_else(|| CegError::ConfigInvalid("experiment config names no model".into()))?;
            let base = config.parent().unwrap_or(Path::new("."));
            let model = read_model(&base.join(model_path))?;
            let start = std::time::Instant::now();
            let report = run_experiment(&cfg, &model, Some(&out))?;
            write_report(&out, &report)?;
            let timing = json!({ "wall_seconds": start.elapsed().as_secs_f64() });
            std::fs::write(out.join("timing.json"), to_json_string(&timing))?;
        }
    }
    Ok(())
}

fn intervene_report(model: &SemiMarkovModel, spec: &RemedySpec, prior: &PriorState) -> Result<serde_json::Value> {
    let tree = &model.tree;
    let roots = model.root_cause_ids();
    let dist = indicator_distribution(spec, &roots)?;
    let root_alpha = prior.root_alpha(model)?;
    let total: f64 = root_alpha.iter().sum();
    let idle_root: Vec<f64> = root_alpha.iter().map(|a| a / total).collect();
    let intervened_root = intervened_root_distribution(model, spec, &root_alpha)?;
    let idle_fail = intervened_failure_probability(tree, &model.paths, &idle_root)?;
    let int_fail = intervened_failure_probability(tree, &model.paths, &intervened_root)?;
    let v = root_cause_vertex(tree, &model.paths)?;
    let omega = spec.omega.for_vertex(tree.vertex_id(v)).point();
    let beta = spec.beta.for_vertex(tree.vertex_id(v)).point();
    let laws: Vec<_> = model
        .paths
        .root_causes
        .iter()
        .map(|&e| model.holding(e))
        .collect();
    let mut support = Vec::new();
    for (ind, p) in &dist.support {
        let alpha = apply_g(&root_alpha, &ind.0, omega)?;
        let holding = if laws.iter().all(|l| l.is_some()) {
            let l: Vec<_> = laws.iter().map(|l| l.unwrap()).collect();
            Some(apply_j(&l, &ind.0, beta)?)
        } else {
            None
        };
        support.push(json!({
            "indicator": ind.to_string(),
            "probability": p,
            "alpha": alpha,
            "root_cause_holding": holding,
        }));
    }
    Ok(json!({
        "remedy": spec.id,
        "class": spec.class.as_str(),
        "root_causes": roots,
        "indicator_distribution": support,
        "idle_root_distribution": idle_root,
        "intervened_root_distribution": intervened_root,
        "idle_failure_probability": idle_fail,
        "intervened_failure_probability": int_fail,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CEG_REMEDY_LOG", "warn")).init();
    let cli = Cli::parse();
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.threads)
            .build_global()
        {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
