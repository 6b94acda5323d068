//! Experiment orchestration: run configuration, training loops for both
//! environments, frozen-policy evaluation, successive-elimination
//! hyperparameter search, and artifact emission (CSV metrics, SVG charts,
//! JSON checkpoints).

pub mod config;
pub mod er;
pub mod gtb;
pub mod output;
pub mod search;

use std::path::Path;

pub use config::{anneal_cap, ConfigError, DesignerChoice, EnvChoice, RunConfig};
pub use er::{run_er, ErRun, RunOutcome};
pub use gtb::{run_gtb, GtbRun};
pub use output::{MetricsRecord, OutputError};
pub use search::{successive_elimination_search, SearchDim, SearchSpace};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("non-finite value in {0}; run aborted")]
    NonFinite(String),
    #[error("{0}")]
    Internal(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Designer(#[from] crate::designers::DesignerError),
    #[error(transparent)]
    EscapeRoom(#[from] crate::env::escape_room::ErError),
    #[error(transparent)]
    Economy(#[from] crate::env::gtb::GtbError),
    #[error(transparent)]
    Tax(#[from] crate::env::gtb::tax::TaxError),
    #[error(transparent)]
    Nets(#[from] crate::nets::NetsError),
    #[error(transparent)]
    Diff(#[from] crate::diffgraph::DiffError),
}

/// Abort guard: every loss, gradient, and evaluation statistic passes
/// through here so a NaN stops the run with a labelled diagnostic.
pub fn check_finite(
    label: &str,
    vals: impl IntoIterator<Item = f64>,
) -> Result<(), HarnessError> {
    for v in vals {
        if !v.is_finite() {
            return Err(HarnessError::NonFinite(label.to_string()));
        }
    }
    Ok(())
}

/// Incremental training interface shared by both environments; the
/// hyperparameter search drives survivors through it round by round.
pub trait TrainableRun: Send {
    fn train_episode(&mut self) -> Result<(), HarnessError>;
    fn eval_now(&mut self) -> Result<MetricsRecord, HarnessError>;
    fn episode(&self) -> u64;
}

impl TrainableRun for ErRun {
    fn train_episode(&mut self) -> Result<(), HarnessError> {
        ErRun::train_episode(self)
    }
    fn eval_now(&mut self) -> Result<MetricsRecord, HarnessError> {
        ErRun::eval_now(self)
    }
    fn episode(&self) -> u64 {
        self.episode
    }
}

impl TrainableRun for GtbRun {
    fn train_episode(&mut self) -> Result<(), HarnessError> {
        GtbRun::train_episode(self)
    }
    fn eval_now(&mut self) -> Result<MetricsRecord, HarnessError> {
        GtbRun::eval_now(self)
    }
    fn episode(&self) -> u64 {
        self.episode
    }
}

pub fn make_runner(rc: &RunConfig) -> Result<Box<dyn TrainableRun>, HarnessError> {
    Ok(match rc.env {
        EnvChoice::EscapeRoom => Box::new(ErRun::new(rc)?),
        EnvChoice::Economy => Box::new(GtbRun::new(rc)?),
    })
}

/// Train to budget and return the outcome without touching the filesystem.
pub fn train_run(rc: &RunConfig) -> Result<RunOutcome, HarnessError> {
    rc.validate()?;
    match rc.env {
        EnvChoice::EscapeRoom => run_er(rc),
        EnvChoice::Economy => run_gtb(rc),
    }
}

/// Train to budget and emit metrics CSV, checkpoint, and plots into
/// `rc.out_dir` when set.
pub fn execute(rc: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let outcome = train_run(rc)?;
    if let Some(dir) = &rc.out_dir {
        emit_artifacts(dir, rc, &outcome)?;
    }
    Ok(outcome)
}

pub fn emit_artifacts(
    dir: &Path,
    rc: &RunConfig,
    outcome: &RunOutcome,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| OutputError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let stem = match rc.env {
        EnvChoice::EscapeRoom => "er",
        EnvChoice::Economy => "economy",
    };
    output::write_csv(&dir.join(format!("{stem}_metrics.csv")), &outcome.records)?;
    crate::nets::save_checkpoint(&dir.join(format!("{stem}_checkpoint.json")), &outcome.params)?;
    output::emit_plots(dir, stem, &outcome.records, outcome.final_rates.as_deref())?;
    Ok(())
}
