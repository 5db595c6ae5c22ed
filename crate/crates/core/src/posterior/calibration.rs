use rayon::prelude::*;

use super::{summarize, PosteriorSummary};
use crate::error::{Error, Result};
use crate::model::PriorSpec;
use crate::rng::derive_seed;
use crate::sampler::{run_chains, McmcConfig, Problem};
use crate::simulator::{simulate_dataset, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub index: usize,
    /// Seed of the simulated dataset.
    pub data_seed: u64,
    /// Root seed of the fitted chains.
    pub fit_seed: u64,
    pub total_count: u64,
    pub summary: PosteriorSummary,
}

/// Frequentist behaviour of the posterior of N over simulated replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub scenario: String,
    pub n_true: usize,
    pub replicates: usize,
    /// Successful replicates in index order.
    pub results: Vec<ReplicateResult>,
    /// `(replicate index, error)` of failed fits.
    pub failures: Vec<(usize, String)>,
    pub avg_mean: f64,
    pub rmse_mean: f64,
    pub avg_mode: f64,
    pub rmse_mode: f64,
    /// Fraction of central 95% intervals containing the true N.
    pub coverage: f64,
}

impl CalibrationReport {
    fn from_results(
        scn: &Scenario,
        replicates: usize,
        results: Vec<ReplicateResult>,
        failures: Vec<(usize, String)>,
    ) -> CalibrationReport {
        let truth = scn.n_true as f64;
        let k = results.len() as f64;
        let avg = |f: fn(&PosteriorSummary) -> f64| {
            results.iter().map(|r| f(&r.summary)).sum::<f64>() / k
        };
        let rmse = |f: fn(&PosteriorSummary) -> f64| {
            (results.iter().map(|r| (f(&r.summary) - truth).powi(2)).sum::<f64>() / k).sqrt()
        };
        let covered = results.iter().filter(|r| r.summary.n.covers(truth)).count();
        CalibrationReport {
            scenario: scn.name.clone(),
            n_true: scn.n_true,
            replicates,
            avg_mean: avg(|s| s.n.mean),
            rmse_mean: rmse(|s| s.n.mean),
            avg_mode: avg(|s| s.n.mode),
            rmse_mode: rmse(|s| s.n.mode),
            coverage: covered as f64 / k,
            results,
            failures,
        }
    }
}

fn run_replicate(
    scn: &Scenario,
    index: usize,
    cfg: &McmcConfig,
    priors: &PriorSpec,
) -> Result<ReplicateResult> {
    let rep = scn.replicate(index);
    let truth = simulate_dataset(&rep)?;
    let fit_cfg = McmcConfig { seed: derive_seed(cfg.seed, index as u64), ..cfg.clone() };
    let problem = Problem {
        data: &truth.counts,
        traps: &truth.traps,
        space: &truth.space,
        marked: truth.marked.as_ref(),
    };
    let chains = run_chains(problem, priors, &fit_cfg)?;
    Ok(ReplicateResult {
        index,
        data_seed: rep.seed,
        fit_seed: fit_cfg.seed,
        total_count: truth.counts.total(),
        summary: summarize(&chains, &truth.space)?,
    })
}

/// Simulates and fits `replicates` datasets from `scn` in parallel.
///
/// Replicate `k` simulates with the scenario's replicate seed and fits with
/// a root seed derived from `cfg.seed` and `k`, so the report depends only
/// on the inputs. Failed fits are listed in the report; metrics average
/// over the successful ones and are NaN when none succeeded.
pub fn calibrate(
    scn: &Scenario,
    replicates: usize,
    cfg: &McmcConfig,
    priors: &PriorSpec,
) -> Result<CalibrationReport> {
    if replicates == 0 {
        return Err(Error::EmptyInput("calibration needs at least one replicate".into()));
    }
    scn.validate()?;
    cfg.validate()?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..replicates)
        .into_par_iter()
        .map(|k| run_replicate(scn, k, cfg, priors))
        .collect();
    let mut results = Vec::with_capacity(replicates);
    let mut failures = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => results.push(r),
            Err(e) => failures.push((
                k,
                Error::Replicate { index: k, source: Box::new(e) }.to_string(),
            )),
        }
    }
    Ok(CalibrationReport::from_results(scn, replicates, results, failures))
}
