//! Hyperparameter search: random uniform sampling with successive
//! elimination. Each round trains every surviving candidate further from its
//! own state, then drops the lower half by evaluation welfare.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::harness::config::RunConfig;
use crate::harness::{make_runner, HarnessError, TrainableRun};

/// One searchable dimension. Continuous ranges are sampled log-uniformly or
/// uniformly; discrete dimensions pick among fixed options.
#[derive(Debug, Clone)]
pub enum SearchDim {
    LogUniform { name: String, lo: f64, hi: f64 },
    Uniform { name: String, lo: f64, hi: f64 },
    Discrete { name: String, options: Vec<f64> },
}

impl SearchDim {
    pub fn name(&self) -> &str {
        match self {
            SearchDim::LogUniform { name, .. }
            | SearchDim::Uniform { name, .. }
            | SearchDim::Discrete { name, .. } => name,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            SearchDim::LogUniform { lo, hi, .. } => {
                let (a, b) = (lo.ln(), hi.ln());
                (a + rng.gen::<f64>() * (b - a)).exp()
            }
            SearchDim::Uniform { lo, hi, .. } => lo + rng.gen::<f64>() * (hi - lo),
            SearchDim::Discrete { options, .. } => options[rng.gen_range(0..options.len())],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchSpace {
    pub dims: Vec<SearchDim>,
}

/// Set a named hyperparameter on a run configuration.
pub fn apply_hyperparameter(rc: &mut RunConfig, name: &str, v: f64) -> Result<(), HarnessError> {
    match name {
        "er.agent_lr" => rc.er.agent_lr = v,
        "er.entropy_coef" => rc.er.entropy_coef = v,
        "er.meta.alpha_id" => rc.er.meta.alpha_id = v,
        "er.meta.alpha_cost" => rc.er.meta.alpha_cost = v,
        "er.meta.clip_eps" => rc.er.meta.clip_eps = v,
        "er.meta.critic_lr" => rc.er.meta.critic_lr = v,
        "er.dual_lr" => rc.er.dual_lr = v,
        "er.explore.start" => rc.er.explore.start = v,
        "er.explore.div" => rc.er.explore.div = v.max(1.0) as u64,
        "gtb.agent.lr" => rc.gtb.agent.lr = v,
        "gtb.agent.entropy_coef" => rc.gtb.agent.entropy_coef = v,
        "gtb.meta.alpha_id" => rc.gtb.meta.alpha_id = v,
        "gtb.meta.critic_lr" => rc.gtb.meta.critic_lr = v,
        other => {
            return Err(HarnessError::Internal(format!(
                "unknown search hyperparameter: {other}"
            )))
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SearchRoundReport {
    pub round: usize,
    /// (candidate index, evaluation welfare) for every survivor entering the
    /// round, sorted best first after scoring.
    pub scores: Vec<(usize, f64)>,
    pub survivors: Vec<usize>,
}

struct Candidate {
    index: usize,
    rc: RunConfig,
    runner: Box<dyn TrainableRun>,
}

/// Run the search: sample `n_batch` configurations, then repeat
/// train-`n_episodes`-and-halve for `rounds` rounds (or until one survivor
/// remains). Returns the best configuration and per-round reports.
pub fn successive_elimination_search(
    base: &RunConfig,
    space: &SearchSpace,
    n_batch: usize,
    n_episodes: u64,
    rounds: usize,
    seed: u64,
) -> Result<(RunConfig, Vec<SearchRoundReport>), HarnessError> {
    if n_batch < 2 {
        return Err(HarnessError::Internal(format!(
            "search batch must be at least 2, got {n_batch}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ee1_ec7e);
    let mut candidates = Vec::with_capacity(n_batch);
    for index in 0..n_batch {
        let mut rc = base.clone();
        rc.seed = base.seed.wrapping_add(index as u64);
        for dim in &space.dims {
            let v = dim.sample(&mut rng);
            apply_hyperparameter(&mut rc, dim.name(), v)?;
        }
        rc.validate()?;
        let runner = make_runner(&rc)?;
        candidates.push(Candidate { index, rc, runner });
    }

    let mut reports = Vec::new();
    for round in 0..rounds {
        if candidates.len() <= 1 {
            break;
        }
        let scores: Vec<(usize, f64)> = candidates
            .par_iter_mut()
            .map(|c| {
                for _ in 0..n_episodes {
                    c.runner.train_episode()?;
                }
                let rec = c.runner.eval_now()?;
                Ok((c.index, rec.test_welfare))
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .1
                .partial_cmp(&scores[a].1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(scores[a].0.cmp(&scores[b].0))
        });
        let keep = candidates.len().div_ceil(2);
        let mut sorted_scores: Vec<(usize, f64)> =
            order.iter().map(|&i| scores[i]).collect();
        let survivors: Vec<usize> = sorted_scores.iter().take(keep).map(|&(i, _)| i).collect();
        sorted_scores.truncate(candidates.len());
        reports.push(SearchRoundReport { round, scores: sorted_scores, survivors: survivors.clone() });
        let mut kept = Vec::with_capacity(keep);
        for c in candidates.drain(..) {
            if survivors.contains(&c.index) {
                kept.push(c);
            }
        }
        candidates = kept;
    }
    let best_index = reports
        .last()
        .map(|r| r.survivors[0])
        .unwrap_or_else(|| candidates[0].index);
    let best = candidates
        .into_iter()
        .find(|c| c.index == best_index)
        .expect("best survivor present");
    Ok((best.rc, reports))
}
