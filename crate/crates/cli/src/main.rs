//! `ilab`: command-line front end for the incentive design laboratory.
//!
//! Subcommands: `train` (run a configuration to budget and emit artifacts),
//! `eval` (score a saved checkpoint), `search` (successive-elimination
//! hyperparameter search), `plot` (re-render charts from a metrics CSV),
//! and `replay` (print a step-by-step log of one frozen-policy episode).

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use incentive_lab::harness::search::{apply_hyperparameter, SearchDim, SearchSpace};
use incentive_lab::harness::{
    execute, output, successive_elimination_search, EnvChoice, ErRun, GtbRun, MetricsRecord,
    RunConfig,
};

#[derive(Parser)]
#[command(name = "ilab", version, about = "Incentive design laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags mirroring the run configuration. A `--config` TOML file, when
/// given, is overlaid on top of the flags: keys in the file win, everything
/// else keeps its flag or default value.
#[derive(Args)]
struct ConfigFlags {
    /// TOML run configuration; overrides any flags it sets.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: escape_room (er) or economy (gtb).
    #[arg(long)]
    env: Option<String>,
    /// Designer: metagrad, dual_discrete, dual_continuous, static, free.
    #[arg(long)]
    designer: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training episode budget.
    #[arg(long)]
    episodes: Option<u64>,
    /// Episodes between frozen-policy evaluations.
    #[arg(long)]
    eval_every: Option<u64>,
    /// Episodes averaged per evaluation.
    #[arg(long)]
    eval_episodes: Option<u64>,
    /// Directory for metrics CSV, checkpoint JSON, and SVG charts.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Escape-room population size.
    #[arg(long)]
    n_agents: Option<usize>,
    /// Escape-room lever threshold.
    #[arg(long)]
    lever_threshold: Option<usize>,
    /// Named numeric override, e.g. --set er.agent_lr=0.02 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigFlags {
    fn build(&self) -> Result<RunConfig> {
        let mut rc = RunConfig::default();
        if let Some(e) = &self.env {
            rc.env = e.parse().map_err(anyhow::Error::msg)?;
        }
        if let Some(d) = &self.designer {
            rc.designer = d.parse().map_err(anyhow::Error::msg)?;
        }
        if let Some(v) = self.seed {
            rc.seed = v;
        }
        if let Some(v) = self.episodes {
            rc.episodes = v;
        }
        if let Some(v) = self.eval_every {
            rc.eval_every = v;
        }
        if let Some(v) = self.eval_episodes {
            rc.eval_episodes = v;
        }
        if let Some(d) = &self.out_dir {
            rc.out_dir = Some(d.clone());
        }
        if let Some(n) = self.n_agents {
            rc.er.n_agents = n;
        }
        if let Some(m) = self.lever_threshold {
            rc.er.lever_threshold = m;
        }
        for kv in &self.set {
            let (key, value) = kv
                .split_once('=')
                .with_context(|| format!("expected KEY=VALUE, got {kv}"))?;
            let v: f64 = value.parse().with_context(|| format!("parsing value in {kv}"))?;
            apply_hyperparameter(&mut rc, key, v)?;
        }
        if let Some(path) = &self.config {
            rc = rc.overlaid_with_file(path)?;
            if rc.out_dir.is_none() {
                rc.out_dir = self.out_dir.clone();
            }
        }
        rc.validate()?;
        Ok(rc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train to the episode budget; emit metrics, checkpoint, and charts
    /// when an output directory is set.
    Train(ConfigFlags),
    /// Evaluate a checkpoint under the frozen policy and print the metrics.
    Eval {
        #[command(flatten)]
        flags: ConfigFlags,
        /// JSON checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Successive-elimination hyperparameter search.
    Search {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Searchable dimension, e.g. er.agent_lr=log:1e-3:0.1,
        /// er.entropy_coef=lin:0:0.05, or er.meta.clip_eps=set:0.1,0.2,0.3
        /// (repeatable).
        #[arg(long = "dim", value_name = "NAME=KIND:ARGS", required = true)]
        dims: Vec<String>,
        /// Configurations sampled in the first round.
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Training episodes added per candidate per round.
        #[arg(long, default_value_t = 500)]
        round_episodes: u64,
        /// Elimination rounds (each keeps the better half).
        #[arg(long, default_value_t = 3)]
        rounds: usize,
    },
    /// Re-render SVG charts from an existing metrics CSV.
    Plot {
        /// Metrics CSV written by `train`.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Basename for the emitted charts.
        #[arg(long, default_value = "run")]
        stem: String,
    },
    /// Roll one deterministic episode under a checkpoint and print the log.
    Replay {
        #[command(flatten)]
        flags: ConfigFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Episode seed for the replay rollout.
        #[arg(long, default_value_t = 0)]
        replay_seed: u64,
    },
}

fn print_record(rec: &MetricsRecord) {
    println!(
        "episode {}  test_welfare {:.4}  incentive_cost {:.4}",
        rec.episode, rec.test_welfare, rec.psi
    );
    if rec.swf != 0.0 || rec.prod != 0.0 {
        println!(
            "  swf {:.4}  productivity {:.2}  equality {:.4}",
            rec.swf, rec.prod, rec.eq
        );
    }
    if !rec.agent_returns.is_empty() {
        let rets: Vec<String> = rec.agent_returns.iter().map(|v| format!("{v:.3}")).collect();
        println!("  agent returns [{}]", rets.join(", "));
    }
}

fn parse_dim(s: &str) -> Result<SearchDim> {
    let (name, rest) = s
        .split_once('=')
        .with_context(|| format!("expected NAME=KIND:ARGS, got {s}"))?;
    let (kind, args) = rest
        .split_once(':')
        .with_context(|| format!("expected KIND:ARGS after = in {s}"))?;
    let name = name.to_string();
    Ok(match kind {
        "log" | "lin" => {
            let (lo, hi) = args
                .split_once(':')
                .with_context(|| format!("expected LO:HI in {s}"))?;
            let lo: f64 = lo.parse().context("parsing range low end")?;
            let hi: f64 = hi.parse().context("parsing range high end")?;
            if kind == "log" {
                SearchDim::LogUniform { name, lo, hi }
            } else {
                SearchDim::Uniform { name, lo, hi }
            }
        }
        "set" => {
            let options = args
                .split(',')
                .map(|v| v.parse::<f64>().context("parsing option"))
                .collect::<Result<Vec<f64>>>()?;
            SearchDim::Discrete { name, options }
        }
        other => bail!("unknown dimension kind {other} (expected log, lin, or set)"),
    })
}

/// Build the run for a saved checkpoint and mark it fully trained so the
/// evaluation uses the end-of-curriculum designer, not the pretraining one.
fn loaded_er(rc: &RunConfig, checkpoint: &PathBuf) -> Result<ErRun> {
    let mut run = ErRun::new(rc)?;
    run.load_params(checkpoint)?;
    run.episode = rc.episodes;
    Ok(run)
}

fn loaded_gtb(rc: &RunConfig, checkpoint: &PathBuf) -> Result<GtbRun> {
    let mut run = GtbRun::new(rc)?;
    run.load_params(checkpoint)?;
    run.episode = rc.episodes;
    Ok(run)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(flags) => {
            let rc = flags.build()?;
            let outcome = execute(&rc)?;
            if let Some(rec) = outcome.records.last() {
                print_record(rec);
            }
            if let Some(dir) = &rc.out_dir {
                println!("artifacts written to {}", dir.display());
            }
        }
        Command::Eval { flags, checkpoint } => {
            let rc = flags.build()?;
            let rec = match rc.env {
                EnvChoice::EscapeRoom => loaded_er(&rc, &checkpoint)?.eval_now()?,
                EnvChoice::Economy => loaded_gtb(&rc, &checkpoint)?.eval_now()?,
            };
            print_record(&rec);
        }
        Command::Search { flags, dims, batch, round_episodes, rounds } => {
            let rc = flags.build()?;
            let space = SearchSpace {
                dims: dims.iter().map(|d| parse_dim(d)).collect::<Result<Vec<_>>>()?,
            };
            let (best, reports) =
                successive_elimination_search(&rc, &space, batch, round_episodes, rounds, rc.seed)?;
            for r in &reports {
                let scored: Vec<String> = r
                    .scores
                    .iter()
                    .map(|(i, w)| format!("#{i} {w:.3}"))
                    .collect();
                println!("round {}: {}  -> keep {:?}", r.round, scored.join("  "), r.survivors);
            }
            println!("best configuration:");
            println!("{}", toml::to_string_pretty(&best)?);
            if let Some(dir) = &rc.out_dir {
                std::fs::create_dir_all(dir)?;
                let path = dir.join("search_best.toml");
                std::fs::write(&path, toml::to_string_pretty(&best)?)?;
                println!("written to {}", path.display());
            }
        }
        Command::Plot { metrics, out_dir, stem } => {
            let records = output::read_csv(&metrics)?;
            std::fs::create_dir_all(&out_dir)?;
            output::emit_plots(&out_dir, &stem, &records, None)?;
            println!("charts written to {}", out_dir.display());
        }
        Command::Replay { flags, checkpoint, replay_seed } => {
            let rc = flags.build()?;
            let log = match rc.env {
                EnvChoice::EscapeRoom => {
                    loaded_er(&rc, &checkpoint)?.replay_episode(replay_seed)?
                }
                EnvChoice::Economy => loaded_gtb(&rc, &checkpoint)?.replay_episode(replay_seed)?,
            };
            print!("{log}");
        }
    }
    Ok(())
}
