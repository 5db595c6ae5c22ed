use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::init::initial_state;
use super::{AcceptanceRates, Algorithm, CenterSnapshot, McmcConfig, Problem, ProposalScales};
use crate::error::{Error, Result};
use crate::model::{
    conditional_loglik, ln_poisson_pmf, marginal_loglik, AugmentedState, CountData,
    LatentCounts, MarkedObservations, ModelParams, Point, PriorSpec, StateSpace, TrapArray,
};
use crate::rng::Rng;

const INIT_ATTEMPTS: usize = 25;

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    accepted: u64,
    attempted: u64,
}

impl Tally {
    fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        self.accepted += accepted as u64;
    }

    fn rate(&self) -> Option<f64> {
        (self.attempted > 0).then(|| self.accepted as f64 / self.attempted as f64)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tallies {
    centers: Tally,
    sigma: Tally,
    lambda0: Tally,
}

/// `log(new / old)` for non-negative intensities, with the zero-rate
/// conventions of the Poisson likelihood.
#[inline]
fn log_ratio(new: f64, old: f64) -> f64 {
    match (new > 0.0, old > 0.0) {
        (true, true) => ln_1p_fast((new - old) / old),
        (false, false) => 0.0,
        (false, true) => f64::NEG_INFINITY,
        (true, false) => f64::INFINITY,
    }
}

/// `ln(1 + x)`, by a three-term series where its truncation error is below
/// double precision. Far-away candidates hit the series branch.
#[inline]
fn ln_1p_fast(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        x * (1.0 - x * (0.5 - x * (1.0 / 3.0)))
    } else {
        x.ln_1p()
    }
}

#[inline]
fn accept(log_ratio: f64, rng: &mut Rng) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio == f64::NEG_INFINITY {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// Chain state plus the caches that make every update O(R) per individual.
///
/// Cached quantities:
/// * `kern[i]`: kernel row of candidate `i` at the current sigma; always
///   valid for active candidates, recomputed lazily for inactive ones.
/// * `intensity[r]`: sum of kernel rows over active unmarked candidates.
/// * `ztot[i][r]`: occasion totals of the latent (or observed) frequencies.
#[derive(Debug, Clone)]
pub struct Sampler {
    algorithm: Algorithm,
    likelihood: bool,
    data: CountData,
    traps: TrapArray,
    space: StateSpace,
    priors: PriorSpec,
    cfg: McmcConfig,
    params: ModelParams,
    state: AugmentedState,
    marked: Option<MarkedObservations>,
    n_fixed: usize,
    n_traps: usize,
    occasions: f64,

    kern: Vec<f64>,
    row_sum: Vec<f64>,
    row_valid: Vec<bool>,
    /// Compact kernel representations (see `TrapArray::kernel_repr`) of
    /// proposed sigma rows and of the most recent single-row evaluation.
    repr_len: usize,
    repr_prop: Vec<f64>,
    row_sum_prop: Vec<f64>,
    scratch: Vec<f64>,
    scratch_sum: f64,
    scratch_owner: Option<usize>,
    intensity: Vec<f64>,
    intensity_prop: Vec<f64>,

    /// Unmarked remainder of the counts, per trap and per trap-occasion.
    resid: Vec<u64>,
    resid_cells: Vec<u32>,
    positive: Vec<usize>,
    n_total: u64,
    ztot: Vec<u32>,
    zsum: Vec<u64>,
    alloc: Vec<Vec<usize>>,

    sd_centers: f64,
    sd_log_sigma: f64,
    sd_log_lambda0: f64,
    window: Tallies,
    totals: Tallies,

    order: Vec<usize>,
    cum: Vec<f64>,
    cum_idx: Vec<usize>,
}

impl Sampler {
    /// Builds a sampler from the initializer, retrying with fresh draws
    /// until the starting log-likelihood is finite.
    pub fn new(
        problem: Problem<'_>,
        priors: PriorSpec,
        cfg: McmcConfig,
        rng: &mut Rng,
    ) -> Result<Sampler> {
        for _ in 0..INIT_ATTEMPTS {
            let (params, state) = initial_state(&problem, &priors, &cfg, rng)?;
            let mut s = Sampler::build(problem, priors, cfg.clone(), params, state)?;
            if s.algorithm == Algorithm::Conditional && s.likelihood {
                if s.update_z(rng).is_err() {
                    continue;
                }
            }
            if s.full_log_likelihood().is_finite() {
                return Ok(s);
            }
        }
        Err(Error::Config(format!(
            "no initial state with finite likelihood after {INIT_ATTEMPTS} attempts"
        )))
    }

    /// Sampler at a given state. Marked individuals must occupy the first
    /// `m` slots; for the conditional algorithm `state.latent_z` must hold
    /// a complete allocation.
    pub fn from_parts(
        problem: Problem<'_>,
        priors: PriorSpec,
        cfg: McmcConfig,
        params: ModelParams,
        state: AugmentedState,
    ) -> Result<Sampler> {
        if cfg.algorithm == Algorithm::Conditional && cfg.likelihood {
            if state.latent_z.is_none() {
                return Err(Error::Config(
                    "the conditional algorithm needs latent encounter frequencies".into(),
                ));
            }
            state.check_invariants(problem.space, problem.data)?;
        }
        Sampler::build(problem, priors, cfg, params, state)
    }

    fn build(
        problem: Problem<'_>,
        priors: PriorSpec,
        cfg: McmcConfig,
        params: ModelParams,
        mut state: AugmentedState,
    ) -> Result<Sampler> {
        let data = problem.data.clone();
        let n_traps = data.traps();
        let n_occ = data.occasions();
        let m = state.ceiling();
        let n_fixed = problem.marked.map_or(0, MarkedObservations::len);
        if state.flags.len() != m || state.fixed_mask.len() != m {
            return Err(Error::Dimension("state vectors differ in length".into()));
        }
        if (0..m).any(|i| state.fixed_mask[i] != (i < n_fixed)) {
            return Err(Error::Config(
                "marked individuals must occupy the first m candidate slots".into(),
            ));
        }
        if (0..n_fixed).any(|i| !state.flags[i]) {
            return Err(Error::Data("marked individuals must be active".into()));
        }
        if let Some(i) = state.centers.iter().position(|c| !problem.space.contains(*c)) {
            return Err(Error::Data(format!("center {i} lies outside the state space")));
        }
        if cfg.algorithm == Algorithm::Conditional {
            let z = state.latent_z.get_or_insert_with(|| LatentCounts::zeros(m, n_traps, n_occ));
            if z.individuals() != m || z.traps() != n_traps || z.occasions() != n_occ {
                return Err(Error::Dimension("latent counts do not match the state".into()));
            }
        } else {
            state.latent_z = None;
        }

        let mut ztot = vec![0u32; m * n_traps];
        let mut resid_cells: Vec<u32> = data.rows().iter().flatten().copied().collect();
        if let Some(h) = problem.marked {
            let h = h.histories();
            for i in 0..n_fixed {
                for r in 0..n_traps {
                    let mut tot = 0;
                    for t in 0..n_occ {
                        let v = h.get(i, r, t);
                        tot += v;
                        resid_cells[r * n_occ + t] -= v;
                        if let Some(z) = state.latent_z.as_mut() {
                            z.set(i, r, t, v);
                        }
                    }
                    ztot[i * n_traps + r] = tot;
                }
            }
        }
        if let Some(z) = &state.latent_z {
            for i in n_fixed..m {
                for r in 0..n_traps {
                    ztot[i * n_traps + r] = z.trap_total(i, r) as u32;
                }
            }
        }
        let zsum = (0..m)
            .map(|i| ztot[i * n_traps..(i + 1) * n_traps].iter().map(|&v| v as u64).sum())
            .collect();
        let resid: Vec<u64> = resid_cells
            .chunks(n_occ)
            .map(|c| c.iter().map(|&v| v as u64).sum())
            .collect();
        let positive = (0..n_traps).filter(|&r| resid[r] > 0).collect();
        let mut alloc = vec![Vec::new(); n_traps];
        for i in n_fixed..m {
            for (r, a) in alloc.iter_mut().enumerate() {
                if ztot[i * n_traps + r] > 0 {
                    a.push(i);
                }
            }
        }

        let sd_centers = cfg.proposal_sd_s.unwrap_or_else(|| problem.traps.spacing());
        let repr_len = problem.traps.kernel_repr_len();
        let mut s = Sampler {
            algorithm: cfg.algorithm,
            likelihood: cfg.likelihood,
            n_total: data.total(),
            data,
            traps: problem.traps.clone(),
            space: *problem.space,
            priors,
            params,
            marked: problem.marked.cloned(),
            n_fixed,
            n_traps,
            occasions: n_occ as f64,
            kern: vec![0.0; m * n_traps],
            row_sum: vec![0.0; m],
            row_valid: vec![false; m],
            repr_len,
            repr_prop: vec![0.0; m * repr_len],
            row_sum_prop: vec![0.0; m],
            scratch: vec![0.0; repr_len],
            scratch_sum: 0.0,
            scratch_owner: None,
            intensity: vec![0.0; n_traps],
            intensity_prop: vec![0.0; n_traps],
            resid,
            resid_cells,
            positive,
            ztot,
            zsum,
            alloc,
            sd_centers,
            sd_log_sigma: cfg.proposal_sd_log_sigma,
            sd_log_lambda0: cfg.proposal_sd_log_lambda0,
            window: Tallies::default(),
            totals: Tallies::default(),
            order: Vec::with_capacity(m),
            cum: Vec::with_capacity(m),
            cum_idx: Vec::with_capacity(m),
            state,
            cfg,
        };
        if let Some(sigma) = s.cfg.fixed_sigma {
            s.params.sigma = sigma;
        }
        if let Some(lambda0) = s.cfg.fixed_lambda0 {
            s.params.lambda0 = lambda0;
        }
        for i in 0..m {
            if s.state.flags[i] {
                s.ensure_row(i);
            }
        }
        s.recompute_intensity();
        Ok(s)
    }

    pub fn params(&self) -> ModelParams {
        self.params
    }

    pub fn state(&self) -> &AugmentedState {
        &self.state
    }

    pub fn into_parts(self) -> (ModelParams, AugmentedState) {
        (self.params, self.state)
    }

    pub fn population(&self) -> usize {
        self.state.population()
    }

    pub fn data(&self) -> &CountData {
        &self.data
    }

    pub fn proposal_scales(&self) -> ProposalScales {
        ProposalScales {
            centers: self.sd_centers,
            log_sigma: self.sd_log_sigma,
            log_lambda0: self.sd_log_lambda0,
        }
    }

    pub fn acceptance_rates(&self) -> AcceptanceRates {
        AcceptanceRates {
            centers: self.totals.centers.rate().unwrap_or(0.0),
            sigma: self.totals.sigma.rate().unwrap_or(0.0),
            lambda0: self.totals.lambda0.rate().unwrap_or(0.0),
        }
    }

    pub fn reset_acceptance(&mut self) {
        self.totals = Tallies::default();
        self.window = Tallies::default();
    }

    /// Scales each proposal toward a 0.3 acceptance rate based on the
    /// moves since the previous call.
    pub fn adapt_proposals(&mut self) {
        fn tune(sd: &mut f64, tally: &Tally) {
            if let Some(rate) = tally.rate() {
                if rate > 0.45 {
                    *sd *= 1.1;
                } else if rate < 0.15 {
                    *sd *= 0.9;
                }
            }
        }
        tune(&mut self.sd_centers, &self.window.centers);
        tune(&mut self.sd_log_sigma, &self.window.sigma);
        tune(&mut self.sd_log_lambda0, &self.window.lambda0);
        self.window = Tallies::default();
    }

    pub fn snapshot(&self, iteration: usize) -> CenterSnapshot {
        let (individuals, centers) = self
            .state
            .centers
            .iter()
            .zip(&self.state.flags)
            .enumerate()
            .filter(|(_, (_, &w))| w)
            .map(|(i, (&c, _))| (i, c))
            .unzip();
        CenterSnapshot { iteration, individuals, centers }
    }

    fn ceiling(&self) -> usize {
        self.state.ceiling()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.kern[i * self.n_traps..(i + 1) * self.n_traps]
    }

    fn ensure_row(&mut self, i: usize) {
        if !self.row_valid[i] {
            let r = self.n_traps;
            let out = &mut self.kern[i * r..(i + 1) * r];
            self.row_sum[i] = self.traps.kernel_row(self.state.centers[i], self.params.sigma, out);
            self.row_valid[i] = true;
        }
    }

    /// Makes row `i` valid, reusing the scratch evaluation when it belongs
    /// to `i` at its current center.
    fn fill_row_after_eval(&mut self, i: usize) {
        if self.row_valid[i] {
            return;
        }
        if self.scratch_owner == Some(i) {
            let r = self.n_traps;
            let out = &mut self.kern[i * r..(i + 1) * r];
            self.traps.kernel_expand(&self.scratch, out);
            self.row_sum[i] = self.scratch_sum;
            self.row_valid[i] = true;
        } else {
            self.ensure_row(i);
        }
    }

    fn uses_latent(&self, i: usize) -> bool {
        i < self.n_fixed || self.algorithm == Algorithm::Conditional
    }

    fn recompute_intensity(&mut self) {
        self.intensity.iter_mut().for_each(|v| *v = 0.0);
        if self.algorithm != Algorithm::Marginal {
            return;
        }
        for i in self.n_fixed..self.ceiling() {
            if self.state.flags[i] {
                debug_assert!(self.row_valid[i]);
                let row = &self.kern[i * self.n_traps..(i + 1) * self.n_traps];
                for (k, &v) in self.intensity.iter_mut().zip(row) {
                    *k += v;
                }
            }
        }
    }

    /// `sum_r z_ir. * d^2(center, x_r)` over the traps where `i` was encountered.
    fn weighted_sq_dist(&self, i: usize, center: Point) -> f64 {
        if self.zsum[i] == 0 {
            return 0.0;
        }
        let tot = &self.ztot[i * self.n_traps..(i + 1) * self.n_traps];
        tot.iter()
            .zip(self.traps.coords())
            .filter(|(&z, _)| z > 0)
            .map(|(&z, x)| z as f64 * center.sq_dist(x))
            .sum()
    }

    /// Log-likelihood of the current state including normalizing constants.
    pub fn full_log_likelihood(&self) -> f64 {
        if !self.likelihood {
            return 0.0;
        }
        match (&self.state.latent_z, self.algorithm) {
            (Some(z), Algorithm::Conditional) => {
                conditional_loglik(z, &self.params, &self.state, &self.traps)
            }
            _ if self.n_fixed == 0 => {
                marginal_loglik(&self.data, &self.params, &self.state, &self.traps)
            }
            _ => {
                let n_occ = self.data.occasions();
                let resid = CountData::new(
                    self.resid_cells.chunks(n_occ).map(<[u32]>::to_vec).collect(),
                )
                .expect("residual counts are rectangular");
                let mut free = self.state.clone();
                free.flags[..self.n_fixed].iter_mut().for_each(|w| *w = false);
                let mut ll = marginal_loglik(&resid, &self.params, &free, &self.traps);
                for i in 0..self.n_fixed {
                    let c = self.state.centers[i];
                    for (r, x) in self.traps.coords().iter().enumerate() {
                        let rate = self.params.lambda0
                            * (-c.sq_dist(x) / (2.0 * self.params.sigma.powi(2))).exp();
                        let z = self.state.latent_z.as_ref();
                        for t in 0..n_occ {
                            let v = match z {
                                Some(z) => z.get(i, r, t),
                                None => self.fixed_count(i, r, t),
                            };
                            ll += ln_poisson_pmf(v as u64, rate);
                        }
                    }
                }
                ll
            }
        }
    }

    fn fixed_count(&self, i: usize, r: usize, t: usize) -> u32 {
        self.marked.as_ref().map_or(0, |h| h.histories().get(i, r, t))
    }

    /// One full sweep in the order z, w, phi, s, sigma, lambda0.
    pub fn sweep(&mut self, rng: &mut Rng) -> Result<()> {
        if self.likelihood {
            match self.algorithm {
                Algorithm::Marginal => self.recompute_intensity(),
                Algorithm::Conditional => self.update_z(rng)?,
            }
        }
        self.update_w(rng);
        self.update_phi(rng);
        self.update_s(rng);
        self.update_sigma(rng);
        self.update_lambda0(rng);
        Ok(())
    }

    /// Reallocates the unmarked remainder of every trap-occasion count among
    /// the active unmarked candidates, proportional to their kernel.
    pub fn update_z(&mut self, rng: &mut Rng) -> Result<()> {
        if self.algorithm != Algorithm::Conditional || !self.likelihood {
            return Ok(());
        }
        let n_r = self.n_traps;
        let n_occ = self.data.occasions();
        let m = self.ceiling();
        let inv2s2 = 0.5 / (self.params.sigma * self.params.sigma);
        for pi in 0..self.positive.len() {
            let r = self.positive[pi];
            let z = self.state.latent_z.as_mut().expect("conditional state has latent z");
            for i in self.alloc[r].drain(..) {
                for t in 0..n_occ {
                    z.set(i, r, t, 0);
                }
                self.zsum[i] -= self.ztot[i * n_r + r] as u64;
                self.ztot[i * n_r + r] = 0;
            }

            self.cum.clear();
            self.cum_idx.clear();
            let mut total = 0.0;
            for i in self.n_fixed..m {
                if self.state.flags[i] {
                    debug_assert!(self.row_valid[i]);
                    total += self.kern[i * n_r + r];
                    self.cum.push(total);
                    self.cum_idx.push(i);
                }
            }
            if self.cum_idx.is_empty() {
                return Err(Error::Data(format!(
                    "trap {r} has unmarked detections but no active unmarked candidate"
                )));
            }
            if !(total > 0.0) {
                // Every kernel underflowed; weight relative to the nearest candidate.
                let x = self.traps.coords()[r];
                let d2: Vec<f64> = self
                    .cum_idx
                    .iter()
                    .map(|&i| self.state.centers[i].sq_dist(&x))
                    .collect();
                let d2min = d2.iter().copied().fold(f64::INFINITY, f64::min);
                total = 0.0;
                for (c, d) in self.cum.iter_mut().zip(&d2) {
                    total += (-(d - d2min) * inv2s2).exp();
                    *c = total;
                }
            }

            let z = self.state.latent_z.as_mut().expect("conditional state has latent z");
            for t in 0..n_occ {
                for _ in 0..self.resid_cells[r * n_occ + t] {
                    let u = rng.random::<f64>() * total;
                    let j = self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1);
                    let i = self.cum_idx[j];
                    z.set(i, r, t, z.get(i, r, t) + 1);
                    if self.ztot[i * n_r + r] == 0 {
                        self.alloc[r].push(i);
                    }
                    self.ztot[i * n_r + r] += 1;
                    self.zsum[i] += 1;
                }
            }
        }
        Ok(())
    }

    /// Full-conditional probability that unmarked candidate `i` is included.
    pub fn inclusion_probability(&mut self, i: usize) -> f64 {
        let phi = self.params.phi;
        if i < self.n_fixed {
            return 1.0;
        }
        if phi <= 0.0 {
            return 0.0;
        }
        if phi >= 1.0 {
            return 1.0;
        }
        if !self.likelihood {
            return phi;
        }
        let from_row = self.row_valid[i];
        let row_sum = if from_row {
            self.row_sum[i]
        } else {
            self.scratch_sum =
                self.traps.kernel_repr(self.state.centers[i], self.params.sigma, &mut self.scratch);
            self.scratch_owner = Some(i);
            self.scratch_sum
        };
        let expected = self.occasions * self.params.lambda0 * row_sum;
        let delta = match self.algorithm {
            Algorithm::Conditional => {
                if self.zsum[i] > 0 {
                    return 1.0;
                }
                -expected
            }
            Algorithm::Marginal => {
                let row = self.row(i);
                let active = self.state.flags[i];
                let mut acc = -expected;
                for &r in &self.positive {
                    let k = if from_row { row[r] } else { self.traps.kernel_at(&self.scratch, r) };
                    let without = if active {
                        (self.intensity[r] - k).max(0.0)
                    } else {
                        self.intensity[r]
                    };
                    let term = log_ratio(without + k, without);
                    if term == f64::INFINITY {
                        return 1.0;
                    }
                    acc += self.resid[r] as f64 * term;
                }
                acc
            }
        };
        let logit = phi.ln() - (-phi).ln_1p() + delta;
        if logit >= 0.0 {
            1.0 / (1.0 + (-logit).exp())
        } else {
            let e = logit.exp();
            e / (1.0 + e)
        }
    }

    /// Gibbs update of every unmarked inclusion flag in random order.
    pub fn update_w(&mut self, rng: &mut Rng) {
        let m = self.ceiling();
        self.order.clear();
        self.order.extend(self.n_fixed..m);
        let mut order = std::mem::take(&mut self.order);
        order.shuffle(rng);
        for &i in &order {
            let p = self.inclusion_probability(i);
            let include = rng.random::<f64>() < p;
            if include == self.state.flags[i] {
                continue;
            }
            self.state.flags[i] = include;
            if include && self.likelihood {
                self.fill_row_after_eval(i);
            }
            if self.likelihood && self.algorithm == Algorithm::Marginal {
                let n_r = self.n_traps;
                let row = &self.kern[i * n_r..(i + 1) * n_r];
                if include {
                    for (k, &v) in self.intensity.iter_mut().zip(row) {
                        *k += v;
                    }
                } else {
                    for (k, &v) in self.intensity.iter_mut().zip(row) {
                        *k = (*k - v).max(0.0);
                    }
                }
            }
        }
        self.order = order;
    }

    /// Conjugate draw of phi from the `M - m` unmarked slots:
    /// `phi ~ Beta(1 + N - m, 1 + M - N)`. Marked slots are not Bernoulli
    /// trials; counting them would turn the prior on N into one
    /// proportional to `C(N, m)`.
    pub fn update_phi(&mut self, rng: &mut Rng) {
        let free = (self.population() - self.n_fixed) as f64;
        let slots = (self.ceiling() - self.n_fixed) as f64;
        let beta = Beta::new(1.0 + free, 1.0 + slots - free).expect("positive beta parameters");
        self.params.phi = beta.sample(rng);
    }

    /// Log acceptance ratio of moving candidate `i` to `proposal`. Leaves
    /// the proposed kernel row in the scratch buffer.
    pub fn center_log_ratio(&mut self, i: usize, proposal: Point) -> f64 {
        if !self.space.contains(proposal) {
            return f64::NEG_INFINITY;
        }
        if !self.likelihood || !self.state.flags[i] {
            return 0.0;
        }
        let sigma = self.params.sigma;
        self.scratch_sum = self.traps.kernel_repr(proposal, sigma, &mut self.scratch);
        self.scratch_owner = None;
        let expected =
            -self.occasions * self.params.lambda0 * (self.scratch_sum - self.row_sum[i]);
        if self.uses_latent(i) {
            let current = self.state.centers[i];
            let d2_new = self.weighted_sq_dist(i, proposal);
            let d2_old = self.weighted_sq_dist(i, current);
            return expected - (d2_new - d2_old) / (2.0 * sigma * sigma);
        }
        let row = &self.kern[i * self.n_traps..(i + 1) * self.n_traps];
        let mut acc = expected;
        for &r in &self.positive {
            let old = self.intensity[r];
            let new = (old - row[r] + self.traps.kernel_at(&self.scratch, r)).max(0.0);
            let term = log_ratio(new, old);
            if term == f64::NEG_INFINITY {
                return term;
            }
            acc += self.resid[r] as f64 * term;
        }
        acc
    }

    fn move_center(&mut self, i: usize, proposal: Point) {
        self.state.centers[i] = proposal;
        if self.scratch_owner == Some(i) {
            self.scratch_owner = None;
        }
        if !self.likelihood || !self.state.flags[i] {
            self.row_valid[i] = false;
            return;
        }
        let n_r = self.n_traps;
        let latent = self.uses_latent(i);
        let row = &mut self.kern[i * n_r..(i + 1) * n_r];
        if latent {
            self.traps.kernel_expand(&self.scratch, row);
        } else {
            for (k, &old) in self.intensity.iter_mut().zip(row.iter()) {
                *k -= old;
            }
            self.traps.kernel_expand(&self.scratch, row);
            for (k, &new) in self.intensity.iter_mut().zip(row.iter()) {
                *k = (*k + new).max(0.0);
            }
        }
        self.row_sum[i] = self.scratch_sum;
        self.row_valid[i] = true;
    }

    /// Random-walk Metropolis update of every activity center.
    pub fn update_s(&mut self, rng: &mut Rng) {
        let sd = self.sd_centers;
        for i in 0..self.ceiling() {
            let c = self.state.centers[i];
            let dx: f64 = StandardNormal.sample(rng);
            let dy: f64 = StandardNormal.sample(rng);
            let proposal = Point::new(c.x + sd * dx, c.y + sd * dy);
            let active = self.state.flags[i];
            let ok = accept(self.center_log_ratio(i, proposal), rng);
            if active {
                self.window.centers.record(ok);
                self.totals.centers.record(ok);
            }
            if ok {
                self.move_center(i, proposal);
            }
        }
    }

    /// Log acceptance ratio of replacing sigma by `proposal` under the
    /// log-scale random walk. Leaves the proposed kernel rows in the
    /// proposal buffers.
    pub fn sigma_log_ratio(&mut self, proposal: f64) -> f64 {
        let sigma = self.params.sigma;
        let prior = self.priors.sigma.ln_density(proposal) - self.priors.sigma.ln_density(sigma);
        if prior == f64::NEG_INFINITY || prior.is_nan() {
            return f64::NEG_INFINITY;
        }
        let jacobian = if self.cfg.omit_sigma_jacobian { 0.0 } else { (proposal / sigma).ln() };
        if !self.likelihood {
            return prior + jacobian;
        }
        let len = self.repr_len;
        let marginal = self.algorithm == Algorithm::Marginal;
        self.intensity_prop.iter_mut().for_each(|v| *v = 0.0);
        let mut expected_change = 0.0;
        let mut d2_weighted = 0.0;
        for i in 0..self.ceiling() {
            if !self.state.flags[i] {
                continue;
            }
            let c = self.state.centers[i];
            let latent = self.uses_latent(i);
            if latent {
                d2_weighted += self.weighted_sq_dist(i, c);
            }
            let repr = &mut self.repr_prop[i * len..(i + 1) * len];
            let sum = self.traps.kernel_repr(c, proposal, repr);
            self.row_sum_prop[i] = sum;
            expected_change += sum - self.row_sum[i];
            if !latent && marginal {
                for &r in &self.positive {
                    self.intensity_prop[r] += self.traps.kernel_at(repr, r);
                }
            }
        }
        let mut ll = -self.occasions * self.params.lambda0 * expected_change
            - 0.5 * d2_weighted * (1.0 / (proposal * proposal) - 1.0 / (sigma * sigma));
        if marginal {
            for &r in &self.positive {
                let term = log_ratio(self.intensity_prop[r], self.intensity[r]);
                if term == f64::NEG_INFINITY {
                    return term;
                }
                ll += self.resid[r] as f64 * term;
            }
        }
        prior + jacobian + ll
    }

    fn set_sigma(&mut self, proposal: f64) {
        self.params.sigma = proposal;
        if !self.likelihood {
            self.row_valid.iter_mut().for_each(|v| *v = false);
            return;
        }
        let (n_r, len) = (self.n_traps, self.repr_len);
        for i in 0..self.ceiling() {
            let active = self.state.flags[i];
            self.row_valid[i] = active;
            if active {
                let repr = &self.repr_prop[i * len..(i + 1) * len];
                self.traps.kernel_expand(repr, &mut self.kern[i * n_r..(i + 1) * n_r]);
                self.row_sum[i] = self.row_sum_prop[i];
            }
        }
        self.scratch_owner = None;
        self.recompute_intensity();
    }

    pub fn update_sigma(&mut self, rng: &mut Rng) {
        if self.cfg.fixed_sigma.is_some() {
            return;
        }
        let step: f64 = StandardNormal.sample(rng);
        let proposal = self.params.sigma * (self.sd_log_sigma * step).exp();
        let ok = accept(self.sigma_log_ratio(proposal), rng);
        self.window.sigma.record(ok);
        self.totals.sigma.record(ok);
        if ok {
            self.set_sigma(proposal);
        }
    }

    /// Log acceptance ratio of replacing lambda0 by `proposal`. The
    /// likelihood depends on lambda0 only through the total count and the
    /// summed kernel of the active population.
    pub fn lambda0_log_ratio(&self, proposal: f64) -> f64 {
        let lambda0 = self.params.lambda0;
        if self.priors.ln_lambda0_density(proposal) == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let jacobian = (proposal / lambda0).ln();
        if !self.likelihood {
            return jacobian;
        }
        let exposure: f64 = (0..self.ceiling())
            .filter(|&i| self.state.flags[i])
            .map(|i| self.row_sum[i])
            .sum();
        jacobian + self.n_total as f64 * (proposal / lambda0).ln()
            - self.occasions * (proposal - lambda0) * exposure
    }

    pub fn update_lambda0(&mut self, rng: &mut Rng) {
        if self.cfg.fixed_lambda0.is_some() {
            return;
        }
        let step: f64 = StandardNormal.sample(rng);
        let proposal = self.params.lambda0 * (self.sd_log_lambda0 * step).exp();
        let ok = accept(self.lambda0_log_ratio(proposal), rng);
        self.window.lambda0.record(ok);
        self.totals.lambda0.record(ok);
        if ok {
            self.params.lambda0 = proposal;
        }
    }

    /// Replaces the observed counts, the marked histories and (for the
    /// conditional algorithm) the latent frequencies of unmarked candidates,
    /// keeping the parameters, centers, flags and proposal scales. Used by
    /// successive-conditional simulation tests.
    pub fn replace_data(
        &mut self,
        data: CountData,
        latent: Option<LatentCounts>,
        marked: Option<MarkedObservations>,
    ) -> Result<()> {
        if marked.as_ref().map_or(0, MarkedObservations::len) != self.n_fixed {
            return Err(Error::Config("the number of marked individuals cannot change".into()));
        }
        if data.traps() != self.n_traps || data.occasions() != self.data.occasions() {
            return Err(Error::Dimension("replacement data has a different shape".into()));
        }
        if self.algorithm == Algorithm::Conditional && latent.is_none() {
            return Err(Error::Config(
                "the conditional algorithm needs the latent allocation".into(),
            ));
        }
        let mut state = self.state.clone();
        state.latent_z = latent;
        let problem = Problem { data: &data, traps: &self.traps, space: &self.space, marked: marked.as_ref() };
        if let Some(h) = problem.marked {
            h.validate_against(&data)?;
        }
        let mut next = Sampler::build(problem, self.priors, self.cfg.clone(), self.params, state)?;
        if self.algorithm == Algorithm::Conditional {
            next.state.check_invariants(&next.space, &next.data)?;
        }
        next.sd_centers = self.sd_centers;
        next.sd_log_sigma = self.sd_log_sigma;
        next.sd_log_lambda0 = self.sd_log_lambda0;
        next.window = self.window;
        next.totals = self.totals;
        *self = next;
        Ok(())
    }

    /// Full consistency check of the state and every cache.
    pub fn check_consistency(&self) -> Result<()> {
        if self.likelihood && self.algorithm == Algorithm::Conditional {
            self.state.check_invariants(&self.space, &self.data)?;
        } else if let Some(i) = self.state.centers.iter().position(|c| !self.space.contains(*c)) {
            return Err(Error::Data(format!("center {i} lies outside the state space")));
        }
        if (0..self.n_fixed).any(|i| !self.state.flags[i]) {
            return Err(Error::Data("a marked individual became inactive".into()));
        }
        if !self.likelihood {
            return Ok(());
        }
        let mut row = vec![0.0; self.n_traps];
        let mut intensity = vec![0.0; self.n_traps];
        for i in 0..self.ceiling() {
            if !self.state.flags[i] {
                if self.zsum[i] > 0 {
                    return Err(Error::Data(format!("inactive candidate {i} has encounters")));
                }
                continue;
            }
            if !self.row_valid[i] {
                return Err(Error::Data(format!("active candidate {i} has a stale kernel row")));
            }
            let sum = self.traps.kernel_row(self.state.centers[i], self.params.sigma, &mut row);
            if (sum - self.row_sum[i]).abs() > 1e-9 * sum.max(1.0) {
                return Err(Error::Data(format!("kernel row sum of candidate {i} is stale")));
            }
            if i >= self.n_fixed {
                for (k, v) in intensity.iter_mut().zip(&row) {
                    *k += v;
                }
            }
        }
        if self.algorithm == Algorithm::Marginal {
            for (r, (a, b)) in intensity.iter().zip(&self.intensity).enumerate() {
                if (a - b).abs() > 1e-9 * a.max(1.0) {
                    return Err(Error::Data(format!("cached intensity at trap {r} drifted")));
                }
            }
        }
        Ok(())
    }
}
