//! Brute-force validators for tiny problems.
//!
//! These deliberately avoid the likelihood helpers of [`crate::model`]
//! apart from the Poisson PMF, so that a bug in the shared intensity code
//! cannot cancel out between sampler and oracle.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Gamma, Poisson};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::model::{
    ln_poisson_pmf, AugmentedState, CountData, LatentCounts, MarkedObservations, ModelParams,
    Point, PriorSpec, SigmaPrior, StateSpace, TrapArray,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::sampler::{Algorithm, McmcConfig, Problem, Sampler};

/// Largest number of center placements the enumeration will visit.
pub const ENUMERATION_BUDGET: f64 = 1e8;

/// Posterior of N under fixed sigma and lambda0 with centers marginalized
/// on a `g x g` midpoint lattice and a discrete-uniform prior on
/// `0..=m_small`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub g: usize,
    pub sigma: f64,
    pub lambda0: f64,
    pub m_small: usize,
    /// `ln P(data | N)` for `N = 0..=m_small`.
    pub log_evidence: Vec<f64>,
    /// `P(N | data)`.
    pub probs: Vec<f64>,
}

impl GridPosterior {
    /// Total variation distance to another distribution on `0..=m_small`
    /// (missing entries count as zero).
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        let len = self.probs.len().max(other.len());
        0.5 * (0..len)
            .map(|k| {
                let a = self.probs.get(k).copied().unwrap_or(0.0);
                let b = other.get(k).copied().unwrap_or(0.0);
                (a - b).abs()
            })
            .sum::<f64>()
    }
}

/// Enumerates every placement of up to `m_small` centers on the lattice.
pub fn brute_force_n_posterior(
    data: &CountData,
    traps: &TrapArray,
    space: &StateSpace,
    sigma: f64,
    lambda0: f64,
    m_small: usize,
    g: usize,
) -> Result<GridPosterior> {
    if traps.len() > 4 || data.traps() != traps.len() {
        return Err(Error::InvalidParameter(
            "the oracle needs at most 4 traps matching the counts".into(),
        ));
    }
    if m_small > 3 || g == 0 || g > 41 {
        return Err(Error::InvalidParameter(format!(
            "oracle limits are M <= 3 and 1 <= G <= 41, got M = {m_small}, G = {g}"
        )));
    }
    if !(sigma > 0.0 && lambda0 > 0.0) {
        return Err(Error::InvalidParameter("sigma and lambda0 must be positive".into()));
    }
    let cells = g * g;
    if (cells as f64).powi(m_small as i32) > ENUMERATION_BUDGET {
        return Err(Error::Budget(format!(
            "{cells}^{m_small} center placements exceed {ENUMERATION_BUDGET:e}"
        )));
    }

    let n_r = traps.len();
    let (dx, dy) = (space.width() / g as f64, space.height() / g as f64);
    // rate[c * R + r]: per-occasion encounter rate of a center in cell c.
    let mut rate = Vec::with_capacity(cells * n_r);
    for iy in 0..g {
        for ix in 0..g {
            let c = Point::new(
                space.xmin() + (ix as f64 + 0.5) * dx,
                space.ymin() + (iy as f64 + 0.5) * dy,
            );
            for x in traps.coords() {
                let d2 = (c.x - x.x).powi(2) + (c.y - x.y).powi(2);
                rate.push(lambda0 * (-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    let counts: Vec<Vec<u64>> = data
        .rows()
        .iter()
        .map(|row| row.iter().map(|&v| v as u64).collect())
        .collect();
    let log_lik = |lam: &[f64]| -> f64 {
        let mut ll = 0.0;
        for (r, row) in counts.iter().enumerate() {
            for &n in row {
                ll += ln_poisson_pmf(n, lam[r]);
            }
        }
        ll
    };

    let mut log_evidence = Vec::with_capacity(m_small + 1);
    for n in 0..=m_small {
        // Odometer over n cell indices with running intensity sums.
        let mut idx = vec![0usize; n];
        let mut acc = vec![vec![0.0; n_r]; n + 1];
        for k in 0..n {
            for r in 0..n_r {
                acc[k + 1][r] = acc[k][r] + rate[r];
            }
        }
        // Streaming log-sum-exp over placements.
        let (mut top, mut sum, mut count) = (f64::NEG_INFINITY, 0.0, 0u64);
        loop {
            let t = log_lik(&acc[n]);
            count += 1;
            if t > top {
                sum = sum * (top - t).exp() + 1.0;
                top = t;
            } else if t > f64::NEG_INFINITY {
                sum += (t - top).exp();
            }
            let mut k = n;
            let mut done = true;
            while k > 0 {
                k -= 1;
                idx[k] += 1;
                if idx[k] < cells {
                    done = false;
                    break;
                }
                idx[k] = 0;
            }
            if done {
                break;
            }
            for j in k..n {
                let base = idx[j] * n_r;
                for r in 0..n_r {
                    acc[j + 1][r] = acc[j][r] + rate[base + r];
                }
            }
        }
        let le = if top == f64::NEG_INFINITY {
            top
        } else {
            top + sum.ln() - (count as f64).ln()
        };
        log_evidence.push(le);
    }

    let top = log_evidence.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::Data("counts are impossible for every N up to M".into()));
    }
    let w: Vec<f64> = log_evidence.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(GridPosterior {
        g,
        sigma,
        lambda0,
        m_small,
        log_evidence,
        probs: w.iter().map(|v| v / z).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationCheck {
    /// Sum over allocations of the product of individual Poisson PMFs.
    pub allocation_sum: f64,
    /// `PoissonPMF(n; sum lambda)`.
    pub pooled: f64,
    /// Largest gap between a normalized allocation weight and its
    /// multinomial probability.
    pub max_weight_error: f64,
    /// Expected share `E[z_i] / n` from the enumerated weights.
    pub shares: Vec<f64>,
    pub holds: bool,
}

/// Exhaustively checks that independent Poisson counts conditioned on
/// their total are multinomial with probabilities proportional to `lambdas`.
pub fn allocation_marginal_check(n: u32, lambdas: &[f64]) -> Result<AllocationCheck> {
    if n > 3 || lambdas.is_empty() || lambdas.len() > 3 {
        return Err(Error::InvalidParameter(
            "allocation check supports n <= 3 and 1 to 3 individuals".into(),
        ));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParameter("rates must be finite and non-negative".into()));
    }
    let k = lambdas.len();
    let total: f64 = lambdas.iter().sum();
    let mut allocations: Vec<Vec<u32>> = Vec::new();
    let mut z = vec![0u32; k];
    loop {
        if z.iter().sum::<u32>() == n {
            allocations.push(z.clone());
        }
        let mut j = 0;
        while j < k {
            z[j] += 1;
            if z[j] <= n {
                break;
            }
            z[j] = 0;
            j += 1;
        }
        if j == k {
            break;
        }
    }
    let weights: Vec<f64> = allocations
        .iter()
        .map(|a| {
            a.iter()
                .zip(lambdas)
                .map(|(&v, &l)| ln_poisson_pmf(v as u64, l).exp())
                .product()
        })
        .collect();
    let allocation_sum: f64 = weights.iter().sum();
    let pooled = ln_poisson_pmf(n as u64, total).exp();
    let mut max_weight_error: f64 = 0.0;
    let mut shares = vec![0.0; k];
    if allocation_sum > 0.0 {
        for (a, w) in allocations.iter().zip(&weights) {
            let p = w / allocation_sum;
            let mut ln_multi = ln_factorial(n as u64);
            for (&v, &l) in a.iter().zip(lambdas) {
                ln_multi -= ln_factorial(v as u64);
                if v > 0 {
                    ln_multi += v as f64 * (l / total).ln();
                }
            }
            max_weight_error = max_weight_error.max((p - ln_multi.exp()).abs());
            if n > 0 {
                for (s, &v) in shares.iter_mut().zip(a) {
                    *s += p * v as f64 / n as f64;
                }
            }
        }
    }
    let holds = (allocation_sum - pooled).abs() <= 1e-12 && max_weight_error <= 1e-12;
    Ok(AllocationCheck { allocation_sum, pooled, max_weight_error, shares, holds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeConfig {
    pub algorithm: Algorithm,
    pub sweeps: usize,
    /// Sweeps discarded before monitoring the successive-conditional chain.
    pub burn_in: usize,
    pub batches: usize,
    pub seed: u64,
    pub omit_sigma_jacobian: bool,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            algorithm: Algorithm::Marginal,
            sweeps: 50_000,
            burn_in: 1_000,
            batches: 50,
            seed: 7,
            omit_sigma_jacobian: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeStat {
    pub name: &'static str,
    pub prior_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

/// The tiny design used by the successive-conditional test: a 2 x 2 trap
/// grid with unit spacing, a one-unit buffer, two occasions and `M = 5`.
/// With marked individuals the prior on N is `m + Binomial(M - m, phi)`.
pub struct GewekeDesign {
    pub traps: TrapArray,
    pub space: StateSpace,
    pub occasions: usize,
    pub ceiling: usize,
    /// Leading candidates that are marked: always present, histories observed.
    pub marked: usize,
    pub priors: PriorSpec,
}

impl GewekeDesign {
    pub fn standard() -> Self {
        GewekeDesign {
            traps: TrapArray::grid(2, 2, 1.0, Point::new(0.0, 0.0)).expect("valid grid"),
            space: StateSpace::new(-1.0, 2.0, -1.0, 2.0).expect("valid space"),
            occasions: 2,
            ceiling: 5,
            marked: 0,
            priors: PriorSpec {
                sigma: SigmaPrior::Gamma { shape: 13.0, rate: 10.0 },
                lambda0_upper: 1.0,
            },
        }
    }
}

struct JointDraw {
    params: ModelParams,
    state: AugmentedState,
    z: LatentCounts,
    data: CountData,
}

/// Observed histories of the first `m` candidates.
fn marked_part(z: &LatentCounts, m: usize) -> Option<MarkedObservations> {
    if m == 0 {
        return None;
    }
    let mut h = LatentCounts::zeros(m, z.traps(), z.occasions());
    for i in 0..m {
        for r in 0..z.traps() {
            for (t, &v) in z.cell(i, r).iter().enumerate() {
                h.set(i, r, t, v);
            }
        }
    }
    Some(MarkedObservations::new(h))
}

fn draw_params(design: &GewekeDesign, rng: &mut Rng) -> ModelParams {
    let sigma = match design.priors.sigma {
        SigmaPrior::Gamma { shape, rate } => {
            Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng)
        }
        SigmaPrior::Uniform { upper } => upper * (1.0 - rng.random::<f64>()),
    };
    let lambda0 = design.priors.lambda0_upper * (1.0 - rng.random::<f64>());
    let phi = Beta::new(1.0, 1.0).expect("valid beta").sample(rng);
    ModelParams { sigma, lambda0, phi }
}

fn simulate_given(
    design: &GewekeDesign,
    params: &ModelParams,
    state: &AugmentedState,
    rng: &mut Rng,
) -> (LatentCounts, CountData) {
    let n_r = design.traps.len();
    let n_occ = design.occasions;
    let mut z = LatentCounts::zeros(state.ceiling(), n_r, n_occ);
    let mut counts = vec![vec![0u32; n_occ]; n_r];
    for (i, c) in state.centers.iter().enumerate() {
        if !state.flags[i] {
            continue;
        }
        for (r, x) in design.traps.coords().iter().enumerate() {
            let d2 = (c.x - x.x).powi(2) + (c.y - x.y).powi(2);
            let rate = params.lambda0 * (-d2 / (2.0 * params.sigma * params.sigma)).exp();
            if rate <= 0.0 {
                continue;
            }
            let pois = Poisson::new(rate).expect("positive rate");
            for (t, cell) in counts[r].iter_mut().enumerate() {
                let v = pois.sample(rng) as u32;
                z.set(i, r, t, v);
                *cell += v;
            }
        }
    }
    (z, CountData::new(counts).expect("rectangular counts"))
}

fn draw_joint(design: &GewekeDesign, rng: &mut Rng) -> JointDraw {
    let params = draw_params(design, rng);
    let centers: Vec<Point> = (0..design.ceiling)
        .map(|_| design.space.from_unit(rng.random(), rng.random()))
        .collect();
    let flags: Vec<bool> = (0..design.ceiling)
        .map(|i| {
            let u = rng.random::<f64>();
            i < design.marked || u < params.phi
        })
        .collect();
    let mut state = AugmentedState::new(centers, flags).expect("matching lengths");
    state.fixed_mask.iter_mut().take(design.marked).for_each(|f| *f = true);
    let (z, data) = simulate_given(design, &params, &state, rng);
    JointDraw { params, state, z, data }
}

fn monitored(params: &ModelParams, state: &AugmentedState) -> [f64; 4] {
    [params.sigma, params.lambda0, state.population() as f64, params.sigma * params.sigma]
}

const MONITORED: [&str; 4] = ["sigma", "lambda0", "N", "sigma^2"];

/// Mean and batch-means standard error.
fn batch_mean_se(x: &[f64], batches: usize) -> (f64, f64) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let b = batches.clamp(2, n);
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| x[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let bm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - bm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Successive-conditional simulation: sampler sweeps alternate with
/// re-simulation of the data from the current state. Its monitored
/// statistics are compared with independent prior draws.
pub fn geweke_style_joint_check(design: &GewekeDesign, gc: &GewekeConfig) -> Result<GewekeReport> {
    if gc.sweeps < 2 * gc.batches.max(2) {
        return Err(Error::Config("too few sweeps for the requested batches".into()));
    }
    let mut prior_rng = rng_from_seed(derive_seed(gc.seed, 0));
    let mut chain_rng = rng_from_seed(derive_seed(gc.seed, 1));

    let mut prior_cols = vec![Vec::with_capacity(gc.sweeps); MONITORED.len()];
    for _ in 0..gc.sweeps {
        let d = draw_joint(design, &mut prior_rng);
        for (col, v) in prior_cols.iter_mut().zip(monitored(&d.params, &d.state)) {
            col.push(v);
        }
    }

    let cfg = McmcConfig {
        algorithm: gc.algorithm,
        augmentation: design.ceiling,
        adapt: false,
        proposal_sd_s: Some(0.75),
        proposal_sd_log_sigma: 0.3,
        proposal_sd_log_lambda0: 0.3,
        omit_sigma_jacobian: gc.omit_sigma_jacobian,
        ..McmcConfig::default()
    };
    let start = draw_joint(design, &mut chain_rng);
    let marked = marked_part(&start.z, design.marked);
    let mut state = start.state;
    if gc.algorithm == Algorithm::Conditional {
        state.latent_z = Some(start.z);
    }
    let problem = Problem {
        data: &start.data,
        traps: &design.traps,
        space: &design.space,
        marked: marked.as_ref(),
    };
    let mut sampler = Sampler::from_parts(problem, design.priors, cfg, start.params, state)?;

    let mut chain_cols = vec![Vec::with_capacity(gc.sweeps); MONITORED.len()];
    for it in 0..gc.burn_in + gc.sweeps {
        sampler.sweep(&mut chain_rng)?;
        let params = sampler.params();
        let (z, data) = simulate_given(design, &params, sampler.state(), &mut chain_rng);
        let marked = marked_part(&z, design.marked);
        let latent = (gc.algorithm == Algorithm::Conditional).then_some(z);
        sampler.replace_data(data, latent, marked)?;
        if it >= gc.burn_in {
            for (col, v) in chain_cols.iter_mut().zip(monitored(&params, sampler.state())) {
                col.push(v);
            }
        }
    }

    let stats = MONITORED
        .iter()
        .zip(prior_cols.iter().zip(&chain_cols))
        .map(|(&name, (p, c))| {
            let (pm, pse) = batch_mean_se(p, gc.batches);
            let (cm, cse) = batch_mean_se(c, gc.batches);
            let se = (pse * pse + cse * cse).sqrt();
            let z = if se > 0.0 { (cm - pm) / se } else { 0.0 };
            GewekeStat { name, prior_mean: pm, successive_mean: cm, z }
        })
        .collect();
    Ok(GewekeReport { stats })
}
