use rand::distr::weighted::WeightedIndex;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use super::{McmcConfig, Problem};
use crate::error::{Error, Result};
use crate::model::{AugmentedState, ModelParams, Point, PriorSpec, SigmaPrior, StateSpace};
use crate::rng::Rng;

/// Places `center` near a trap drawn with probability proportional to
/// `weights`, jittered uniformly by up to one trap spacing per axis.
fn near_weighted_trap(
    problem: &Problem<'_>,
    weights: &[f64],
    spacing: f64,
    rng: &mut Rng,
) -> Point {
    let space: &StateSpace = problem.space;
    let anchor = match WeightedIndex::new(weights) {
        Ok(dist) => problem.traps.coords()[dist.sample(rng)],
        Err(_) => return space.from_unit(rng.random(), rng.random()),
    };
    for _ in 0..100 {
        let p = Point::new(
            anchor.x + spacing * rng.random_range(-1.0..1.0),
            anchor.y + spacing * rng.random_range(-1.0..1.0),
        );
        if space.contains(p) {
            return p;
        }
    }
    anchor
}

/// Starting parameters and augmented state.
///
/// Unmarked candidates `m..m + N_free` start active near traps with
/// detections; the number of active candidates is the number of traps with
/// detections divided by the effective number of traps one individual
/// reaches at the starting sigma.
pub(crate) fn initial_state(
    problem: &Problem<'_>,
    priors: &PriorSpec,
    cfg: &McmcConfig,
    rng: &mut Rng,
) -> Result<(ModelParams, AugmentedState)> {
    let data = problem.data;
    let traps = problem.traps;
    let m_cap = cfg.augmentation;
    let marked = problem.marked;
    let n_marked = marked.map_or(0, |h| h.len());
    let n_occ = data.occasions();
    let spacing = traps.spacing();

    let sigma = match (cfg.fixed_sigma, priors.sigma) {
        (Some(s), _) => s,
        (None, SigmaPrior::Gamma { shape, rate }) => Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::Config(format!("gamma prior: {e}")))?
            .sample(rng),
        (None, SigmaPrior::Uniform { upper }) => (0.5 * spacing).min(0.5 * upper),
    };

    // Unmarked remainder per trap.
    let mut resid: Vec<f64> = data.totals().iter().map(|&n| n as f64).collect();
    if let Some(h) = marked {
        for (r, v) in resid.iter_mut().enumerate() {
            for i in 0..n_marked {
                *v -= h.histories().trap_total(i, r) as f64;
            }
        }
    }
    let n_positive = resid.iter().filter(|&&v| v > 0.0).count();
    let reach = (2.0 * std::f64::consts::PI * sigma * sigma / (spacing * spacing)).max(1.0);
    let n_free = if n_positive > 0 {
        ((n_positive as f64 / reach).ceil() as usize).max(1)
    } else {
        0
    };
    let n_active = (n_marked + n_free).max(1).min(m_cap);
    if n_positive > 0 && n_active <= n_marked {
        return Err(Error::Config(format!(
            "augmentation ceiling {m_cap} leaves no room for unmarked individuals"
        )));
    }

    let total = data.total() as f64;
    let lambda0 = match cfg.fixed_lambda0 {
        Some(l) => l,
        None if total > 0.0 => total / (n_occ as f64 * n_active as f64 * reach),
        None => 0.5,
    }
    .clamp(1e-6, 0.5 * priors.lambda0_upper);

    let mut centers = Vec::with_capacity(m_cap);
    let mut flags = vec![false; m_cap];
    for i in 0..n_marked {
        let h = marked.expect("marked present").histories();
        let w: Vec<f64> = (0..traps.len()).map(|r| h.trap_total(i, r) as f64).collect();
        centers.push(near_weighted_trap(problem, &w, spacing, rng));
        flags[i] = true;
    }
    for i in n_marked..m_cap {
        if i < n_active {
            centers.push(near_weighted_trap(problem, &resid, spacing, rng));
            flags[i] = true;
        } else {
            centers.push(problem.space.from_unit(rng.random(), rng.random()));
        }
    }
    let phi = (n_active as f64 + 1.0) / (m_cap as f64 + 2.0);
    let params = ModelParams::new(sigma, lambda0, phi)?;
    let mut state = AugmentedState::new(centers, flags)?;
    for i in 0..n_marked {
        state.fixed_mask[i] = true;
    }
    Ok((params, state))
}
