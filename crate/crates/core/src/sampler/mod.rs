//! Metropolis-within-Gibbs samplers for the data-augmented model.
//!
//! Two formulations share one engine. The marginal sampler works with the
//! occasion-aggregated counts directly; the conditional sampler carries the
//! latent encounter frequencies and reallocates them by multinomial draws.
//! Marked individuals occupy the first `m` slots of the augmented list:
//! their inclusion flags are fixed at one and their encounter histories are
//! observed, only their activity centers move.

mod engine;
mod init;

pub use engine::Sampler;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CountData, MarkedObservations, Point, PriorSpec, StateSpace, TrapArray};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Marginal,
    Conditional,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(Algorithm::Marginal),
            "conditional" => Ok(Algorithm::Conditional),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Marginal => "marginal",
            Algorithm::Conditional => "conditional",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McmcConfig {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    /// Augmentation ceiling `M`.
    pub augmentation: usize,
    /// Random-walk scale for activity centers; `None` uses the trap spacing.
    pub proposal_sd_s: Option<f64>,
    pub proposal_sd_log_sigma: f64,
    pub proposal_sd_log_lambda0: f64,
    pub adapt: bool,
    pub seed: u64,
    /// When false every likelihood term is dropped and the chain samples
    /// the prior (validation mode).
    pub likelihood: bool,
    pub store_centers: bool,
    pub fixed_sigma: Option<f64>,
    pub fixed_lambda0: Option<f64>,
    /// Run the full invariant check every this many sweeps.
    pub validate_every: Option<usize>,
    /// Test fixture: drops the log-scale Jacobian from the sigma update.
    #[doc(hidden)]
    pub omit_sigma_jacobian: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            algorithm: Algorithm::Marginal,
            iterations: 30_000,
            burn_in: 5_000,
            thin: 5,
            chains: 3,
            augmentation: 200,
            proposal_sd_s: None,
            proposal_sd_log_sigma: 0.1,
            proposal_sd_log_lambda0: 0.1,
            adapt: true,
            seed: 1,
            likelihood: true,
            store_centers: true,
            fixed_sigma: None,
            fixed_lambda0: None,
            validate_every: None,
            omit_sigma_jacobian: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 || self.chains == 0 {
            return bad("thin and chains must be at least 1".into());
        }
        if self.augmentation == 0 {
            return bad("augmentation ceiling M must be at least 1".into());
        }
        for (name, v) in [
            ("proposal_sd_log_sigma", self.proposal_sd_log_sigma),
            ("proposal_sd_log_lambda0", self.proposal_sd_log_lambda0),
            ("proposal_sd_s", self.proposal_sd_s.unwrap_or(1.0)),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("sigma", self.fixed_sigma), ("lambda0", self.fixed_lambda0)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("fixed {name} must be positive, got {v}"));
                }
            }
        }
        if self.validate_every == Some(0) {
            return bad("validate_every must be positive".into());
        }
        Ok(())
    }

    /// Number of draws each chain keeps.
    pub fn kept_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    /// Stride between stored center snapshots: at least `thin` and at least
    /// `iterations / 2000`, rounded up to a multiple of `thin`.
    pub fn center_stride(&self) -> usize {
        let target = self.thin.max(self.iterations / 2000);
        target.div_ceil(self.thin) * self.thin
    }
}

/// Observed inputs of one fit.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub data: &'a CountData,
    pub traps: &'a TrapArray,
    pub space: &'a StateSpace,
    pub marked: Option<&'a MarkedObservations>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub sigma: f64,
    pub lambda0: f64,
    pub phi: f64,
    pub n: usize,
    pub density: f64,
}

/// Active activity centers after one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSnapshot {
    pub iteration: usize,
    pub individuals: Vec<usize>,
    pub centers: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AcceptanceRates {
    /// Over active individuals only; inactive moves are always accepted.
    pub centers: f64,
    pub sigma: f64,
    pub lambda0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalScales {
    pub centers: f64,
    pub log_sigma: f64,
    pub log_lambda0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain_id: usize,
    pub seed: u64,
    pub augmentation: usize,
    pub area: f64,
    pub draws: Vec<Draw>,
    pub center_draws: Vec<CenterSnapshot>,
    /// Post-burn-in acceptance fractions.
    pub acceptance: AcceptanceRates,
    pub proposals: ProposalScales,
}

impl ChainOutput {
    pub fn column(&self, f: impl Fn(&Draw) -> f64) -> Vec<f64> {
        self.draws.iter().map(f).collect()
    }
}

fn validate_problem(problem: &Problem<'_>, cfg: &McmcConfig) -> Result<()> {
    cfg.validate()?;
    let data = problem.data;
    if data.traps() != problem.traps.len() {
        return Err(Error::Dimension(format!(
            "{} traps but counts for {}",
            problem.traps.len(),
            data.traps()
        )));
    }
    if !problem.space.contains_traps(problem.traps) {
        return Err(Error::Config("state space does not contain every trap".into()));
    }
    let m = problem.marked.map_or(0, |h| h.len());
    if let Some(h) = problem.marked {
        h.validate_against(data)?;
    }
    if cfg.augmentation < m {
        return Err(Error::Config(format!(
            "augmentation ceiling {} is below the {m} marked individuals",
            cfg.augmentation
        )));
    }
    if cfg.likelihood && data.total() > 0 && cfg.augmentation == 0 {
        return Err(Error::Config("non-zero counts require M >= 1".into()));
    }
    Ok(())
}

/// Runs one chain with the seed derived from `cfg.seed` and `chain_id`.
pub fn run_chain(
    problem: Problem<'_>,
    priors: &PriorSpec,
    cfg: &McmcConfig,
    chain_id: usize,
) -> Result<ChainOutput> {
    validate_problem(&problem, cfg)?;
    priors.validate()?;
    let seed = derive_seed(cfg.seed, chain_id as u64);
    let mut rng = rng_from_seed(seed);
    let mut sampler = Sampler::new(problem, *priors, cfg.clone(), &mut rng)?;

    let kept = cfg.kept_draws();
    let stride = cfg.center_stride();
    let mut draws = Vec::with_capacity(kept);
    let mut center_draws = Vec::new();
    let area = problem.space.area();

    for it in 0..cfg.iterations {
        sampler.sweep(&mut rng)?;
        if cfg.adapt && it < cfg.burn_in && (it + 1) % 100 == 0 {
            sampler.adapt_proposals();
        }
        if it + 1 == cfg.burn_in {
            sampler.reset_acceptance();
        }
        if let Some(k) = cfg.validate_every {
            if (it + 1) % k == 0 {
                sampler.check_consistency()?;
            }
        }
        if it < cfg.burn_in {
            continue;
        }
        let offset = it - cfg.burn_in;
        if offset % cfg.thin == 0 {
            let p = sampler.params();
            let n = sampler.population();
            draws.push(Draw {
                iteration: it,
                sigma: p.sigma,
                lambda0: p.lambda0,
                phi: p.phi,
                n,
                density: n as f64 / area,
            });
        }
        if cfg.store_centers && offset % stride == 0 {
            center_draws.push(sampler.snapshot(it));
        }
    }

    Ok(ChainOutput {
        chain_id,
        seed,
        augmentation: cfg.augmentation,
        area,
        draws,
        center_draws,
        acceptance: sampler.acceptance_rates(),
        proposals: sampler.proposal_scales(),
    })
}

/// Runs `cfg.chains` independent chains in parallel.
pub fn run_chains(
    problem: Problem<'_>,
    priors: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<Vec<ChainOutput>> {
    (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(problem, priors, cfg, c))
        .collect()
}

/// Starting parameters and augmented state for a chain, with the latent
/// allocation filled in for the conditional algorithm.
pub fn initialize(
    problem: Problem<'_>,
    priors: &PriorSpec,
    cfg: &McmcConfig,
    rng: &mut crate::rng::Rng,
) -> Result<(crate::model::ModelParams, crate::model::AugmentedState)> {
    validate_problem(&problem, cfg)?;
    priors.validate()?;
    Ok(Sampler::new(problem, *priors, cfg.clone(), rng)?.into_parts())
}
