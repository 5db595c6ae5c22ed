//! Domain types, geometry, the Gaussian encounter kernel and the two
//! likelihood formulations of the spatial count model.
//!
//! Individuals have latent activity centers `s_i` on a rectangular state
//! space. The expected number of encounters of individual `i` at trap `r`
//! on one occasion is `lambda0 * exp(-d_ir^2 / (2 sigma^2))`. Under data
//! augmentation only candidates with `w_i = 1` are part of the population.

use statrs::function::factorial::ln_factorial;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn sq_dist(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.sq_dist(other).sqrt()
    }
}

/// Axis-aligned rectangular region holding every candidate activity center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateSpace {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl StateSpace {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        if ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
            return invalid("state-space bounds must be finite");
        }
        if xmax <= xmin || ymax <= ymin {
            return invalid(format!(
                "empty state space [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            ));
        }
        Ok(StateSpace { xmin, xmax, ymin, ymax })
    }

    pub fn xmin(&self) -> f64 {
        self.xmin
    }
    pub fn xmax(&self) -> f64 {
        self.xmax
    }
    pub fn ymin(&self) -> f64 {
        self.ymin
    }
    pub fn ymax(&self) -> f64 {
        self.ymax
    }
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }
    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed-rectangle membership.
    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn contains_traps(&self, traps: &TrapArray) -> bool {
        traps.coords().iter().all(|&p| self.contains(p))
    }

    /// Maps a pair of unit-interval variates onto the rectangle.
    pub fn from_unit(&self, u: f64, v: f64) -> Point {
        Point::new(self.xmin + u * self.width(), self.ymin + v * self.height())
    }
}

/// Coordinates of the `R` detectors.
///
/// When the array forms a product grid (few distinct x and y values) the
/// kernel factorizes per axis, which [`TrapArray::kernel_row`] exploits.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapArray {
    coords: Vec<Point>,
    axes: Option<GridAxes>,
}

#[derive(Debug, Clone, PartialEq)]
struct GridAxes {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ix: Vec<u32>,
    iy: Vec<u32>,
    /// Every (x, y) combination occurs exactly once.
    complete: bool,
}

impl GridAxes {
    fn detect(coords: &[Point]) -> Option<GridAxes> {
        fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
            let mut v: Vec<f64> = values.collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v
        }
        let xs = distinct(coords.iter().map(|p| p.x));
        let ys = distinct(coords.iter().map(|p| p.y));
        if xs.len() + ys.len() >= coords.len() {
            return None;
        }
        let find = |axis: &[f64], v: f64| {
            axis.binary_search_by(|a| a.total_cmp(&v)).expect("value on axis") as u32
        };
        let ix: Vec<u32> = coords.iter().map(|p| find(&xs, p.x)).collect();
        let iy: Vec<u32> = coords.iter().map(|p| find(&ys, p.y)).collect();
        let mut cells: Vec<(u32, u32)> = ix.iter().copied().zip(iy.iter().copied()).collect();
        cells.sort_unstable();
        cells.dedup();
        let complete = cells.len() == coords.len() && cells.len() == xs.len() * ys.len();
        Some(GridAxes { xs, ys, ix, iy, complete })
    }
}

impl TrapArray {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("trap array needs at least one trap");
        }
        if let Some(i) = coords.iter().position(|p| !p.is_finite()) {
            return invalid(format!("trap {i} has a non-finite coordinate"));
        }
        let axes = GridAxes::detect(&coords);
        Ok(TrapArray { coords, axes })
    }

    /// Regular `rows x cols` grid with its first trap at `origin`.
    pub fn grid(rows: usize, cols: usize, spacing: f64, origin: Point) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid("grid needs at least one row and column");
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return invalid(format!("grid spacing must be positive, got {spacing}"));
        }
        let mut coords = Vec::with_capacity(rows * cols);
        for row in 0..rows {
            for col in 0..cols {
                coords.push(Point::new(
                    origin.x + col as f64 * spacing,
                    origin.y + row as f64 * spacing,
                ));
            }
        }
        TrapArray::new(coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Index pairs of traps sharing identical coordinates.
    pub fn duplicates(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            let (pa, pb) = (self.coords[a], self.coords[b]);
            pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y))
        });
        order
            .windows(2)
            .filter(|w| self.coords[w[0]] == self.coords[w[1]])
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
            .collect()
    }

    /// Median distance from each trap to its nearest distinct neighbour.
    /// Falls back to one tenth of the array extent (or 1) when undefined.
    pub fn spacing(&self) -> f64 {
        let mut nn: Vec<f64> = self
            .coords
            .iter()
            .filter_map(|p| {
                self.coords
                    .iter()
                    .map(|q| p.dist(q))
                    .filter(|&d| d > 0.0)
                    .min_by(|a, b| a.total_cmp(b))
            })
            .collect();
        if nn.is_empty() {
            return 1.0;
        }
        nn.sort_by(|a, b| a.total_cmp(b));
        let mid = nn.len() / 2;
        if nn.len() % 2 == 1 {
            nn[mid]
        } else {
            0.5 * (nn[mid - 1] + nn[mid])
        }
    }

    /// Fills `out[r]` with the kernel between `center` and every trap and
    /// returns the row sum.
    pub fn kernel_row(&self, center: Point, sigma: f64, out: &mut [f64]) -> f64 {
        debug_assert_eq!(out.len(), self.len());
        match &self.axes {
            Some(_) => {
                let mut repr = vec![0.0; self.kernel_repr_len()];
                self.kernel_repr(center, sigma, &mut repr);
                self.kernel_expand(&repr, out)
            }
            None => self.kernel_row_direct(center, -0.5 / (sigma * sigma), out),
        }
    }

    fn kernel_row_direct(&self, center: Point, scale: f64, out: &mut [f64]) -> f64 {
        let mut sum = 0.0;
        for (o, p) in out.iter_mut().zip(&self.coords) {
            *o = (scale * center.sq_dist(p)).exp();
            sum += *o;
        }
        sum
    }

    /// Length of the compact kernel representation used by
    /// [`TrapArray::kernel_repr`]: one factor per distinct x and y value on
    /// a product grid, otherwise one value per trap.
    pub fn kernel_repr_len(&self) -> usize {
        match &self.axes {
            Some(a) => a.xs.len() + a.ys.len(),
            None => self.len(),
        }
    }

    /// Writes the compact kernel representation for `center` into `repr`
    /// and returns the kernel row sum. Individual entries are recovered
    /// with [`TrapArray::kernel_at`].
    pub fn kernel_repr(&self, center: Point, sigma: f64, repr: &mut [f64]) -> f64 {
        let scale = -0.5 / (sigma * sigma);
        match &self.axes {
            Some(a) => {
                let (ex, ey) = repr.split_at_mut(a.xs.len());
                let mut sx = 0.0;
                for (e, &x) in ex.iter_mut().zip(&a.xs) {
                    let d = center.x - x;
                    *e = (scale * d * d).exp();
                    sx += *e;
                }
                let mut sy = 0.0;
                for (e, &y) in ey.iter_mut().zip(&a.ys) {
                    let d = center.y - y;
                    *e = (scale * d * d).exp();
                    sy += *e;
                }
                if a.complete {
                    sx * sy
                } else {
                    a.ix.iter().zip(&a.iy).map(|(&i, &j)| ex[i as usize] * ey[j as usize]).sum()
                }
            }
            None => self.kernel_row_direct(center, scale, repr),
        }
    }

    #[inline]
    pub fn kernel_at(&self, repr: &[f64], r: usize) -> f64 {
        match &self.axes {
            Some(a) => repr[a.ix[r] as usize] * repr[a.xs.len() + a.iy[r] as usize],
            None => repr[r],
        }
    }

    /// Expands a compact representation into a full kernel row; returns its sum.
    pub fn kernel_expand(&self, repr: &[f64], out: &mut [f64]) -> f64 {
        match &self.axes {
            Some(a) => {
                let (ex, ey) = repr.split_at(a.xs.len());
                let mut sum = 0.0;
                for ((o, &i), &j) in out.iter_mut().zip(&a.ix).zip(&a.iy) {
                    *o = ex[i as usize] * ey[j as usize];
                    sum += *o;
                }
                sum
            }
            None => {
                out.copy_from_slice(repr);
                out.iter().sum()
            }
        }
    }
}

/// Trap-by-occasion count matrix with cached per-trap totals `n_r.`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountData {
    counts: Vec<Vec<u32>>,
    totals: Vec<u64>,
    occasions: usize,
}

impl CountData {
    pub fn new(counts: Vec<Vec<u32>>) -> Result<Self> {
        let occasions = counts.first().map(Vec::len).unwrap_or(0);
        if counts.is_empty() || occasions == 0 {
            return Err(Error::Dimension("count matrix must be at least 1 x 1".into()));
        }
        if let Some(r) = counts.iter().position(|row| row.len() != occasions) {
            return Err(Error::Dimension(format!(
                "trap {r} has {} occasions, expected {occasions}",
                counts[r].len()
            )));
        }
        let totals = counts
            .iter()
            .map(|row| row.iter().map(|&c| c as u64).sum())
            .collect();
        Ok(CountData { counts, totals, occasions })
    }

    pub fn zeros(traps: usize, occasions: usize) -> Result<Self> {
        CountData::new(vec![vec![0; occasions]; traps])
    }

    pub fn traps(&self) -> usize {
        self.counts.len()
    }

    pub fn occasions(&self) -> usize {
        self.occasions
    }

    pub fn get(&self, trap: usize, occasion: usize) -> u32 {
        self.counts[trap][occasion]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn total(&self) -> u64 {
        self.totals.iter().sum()
    }
}

/// Dense `individual x trap x occasion` array of encounter frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentCounts {
    individuals: usize,
    traps: usize,
    occasions: usize,
    data: Vec<u32>,
}

impl LatentCounts {
    pub fn zeros(individuals: usize, traps: usize, occasions: usize) -> Self {
        LatentCounts {
            individuals,
            traps,
            occasions,
            data: vec![0; individuals * traps * occasions],
        }
    }

    pub fn from_nested(z: &[Vec<Vec<u32>>]) -> Result<Self> {
        let traps = z.first().map(Vec::len).unwrap_or(0);
        let occasions = z.first().and_then(|r| r.first()).map(Vec::len).unwrap_or(0);
        let mut out = LatentCounts::zeros(z.len(), traps, occasions);
        for (i, rows) in z.iter().enumerate() {
            if rows.len() != traps || rows.iter().any(|o| o.len() != occasions) {
                return Err(Error::Dimension(format!(
                    "encounter history {i} is not {traps} x {occasions}"
                )));
            }
            for (r, occ) in rows.iter().enumerate() {
                for (t, &v) in occ.iter().enumerate() {
                    out.set(i, r, t, v);
                }
            }
        }
        Ok(out)
    }

    pub fn individuals(&self) -> usize {
        self.individuals
    }
    pub fn traps(&self) -> usize {
        self.traps
    }
    pub fn occasions(&self) -> usize {
        self.occasions
    }

    #[inline]
    fn idx(&self, i: usize, r: usize, t: usize) -> usize {
        (i * self.traps + r) * self.occasions + t
    }

    #[inline]
    pub fn get(&self, i: usize, r: usize, t: usize) -> u32 {
        self.data[self.idx(i, r, t)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, r: usize, t: usize, v: u32) {
        let k = self.idx(i, r, t);
        self.data[k] = v;
    }

    /// Occasions of individual `i` at trap `r`.
    pub fn cell(&self, i: usize, r: usize) -> &[u32] {
        let k = self.idx(i, r, 0);
        &self.data[k..k + self.occasions]
    }

    pub fn trap_total(&self, i: usize, r: usize) -> u64 {
        self.cell(i, r).iter().map(|&v| v as u64).sum()
    }

    pub fn individual_total(&self, i: usize) -> u64 {
        let start = self.idx(i, 0, 0);
        self.data[start..start + self.traps * self.occasions]
            .iter()
            .map(|&v| v as u64)
            .sum()
    }

    /// `sum_i z[i][r][t]`.
    pub fn column_sum(&self, r: usize, t: usize) -> u64 {
        (0..self.individuals).map(|i| self.get(i, r, t) as u64).sum()
    }
}

/// Encounter histories of the identifiable subset of the population.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkedObservations {
    histories: LatentCounts,
}

impl MarkedObservations {
    pub fn new(histories: LatentCounts) -> Self {
        MarkedObservations { histories }
    }

    pub fn from_nested(z: &[Vec<Vec<u32>>]) -> Result<Self> {
        Ok(MarkedObservations::new(LatentCounts::from_nested(z)?))
    }

    pub fn len(&self) -> usize {
        self.histories.individuals()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn histories(&self) -> &LatentCounts {
        &self.histories
    }

    /// Checks dimensions and that marked encounters never exceed the counts.
    pub fn validate_against(&self, data: &CountData) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        let h = &self.histories;
        if h.traps() != data.traps() || h.occasions() != data.occasions() {
            return Err(Error::Dimension(format!(
                "marked histories are {} x {}, counts are {} x {}",
                h.traps(),
                h.occasions(),
                data.traps(),
                data.occasions()
            )));
        }
        for r in 0..data.traps() {
            for t in 0..data.occasions() {
                let marked = h.column_sum(r, t);
                if marked > data.get(r, t) as u64 {
                    return Err(Error::Data(format!(
                        "trap {r} occasion {t}: {marked} marked encounters exceed count {}",
                        data.get(r, t)
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub sigma: f64,
    pub lambda0: f64,
    pub phi: f64,
}

impl ModelParams {
    pub fn new(sigma: f64, lambda0: f64, phi: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("sigma must be positive, got {sigma}"));
        }
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return invalid(format!("lambda0 must be positive, got {lambda0}"));
        }
        if !(0.0..=1.0).contains(&phi) {
            return invalid(format!("phi must lie in [0, 1], got {phi}"));
        }
        Ok(ModelParams { sigma, lambda0, phi })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPrior {
    /// Uniform on `(0, upper)`.
    Uniform { upper: f64 },
    /// Gamma with the given shape and rate.
    Gamma { shape: f64, rate: f64 },
}

impl SigmaPrior {
    /// Log density up to an additive constant; `-inf` outside the support.
    pub fn ln_density(&self, sigma: f64) -> f64 {
        if sigma <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            SigmaPrior::Uniform { upper } => {
                if sigma < upper {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            SigmaPrior::Gamma { shape, rate } => (shape - 1.0) * sigma.ln() - rate * sigma,
        }
    }
}

/// Prior choices. `phi` is always Uniform(0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub sigma: SigmaPrior,
    pub lambda0_upper: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            sigma: SigmaPrior::Uniform { upper: 100.0 },
            lambda0_upper: 100.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self.sigma {
            SigmaPrior::Uniform { upper } if !(upper > 0.0) => {
                return invalid(format!("sigma prior upper bound must be positive, got {upper}"))
            }
            SigmaPrior::Gamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return invalid(format!(
                    "gamma prior needs positive shape and rate, got ({shape}, {rate})"
                ))
            }
            _ => {}
        }
        if !(self.lambda0_upper > 0.0) {
            return invalid(format!(
                "lambda0 prior upper bound must be positive, got {}",
                self.lambda0_upper
            ));
        }
        Ok(())
    }

    pub fn ln_lambda0_density(&self, lambda0: f64) -> f64 {
        if lambda0 > 0.0 && lambda0 < self.lambda0_upper {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// The `M`-candidate augmented population.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub centers: Vec<Point>,
    pub flags: Vec<bool>,
    pub latent_z: Option<LatentCounts>,
    pub fixed_mask: Vec<bool>,
}

impl AugmentedState {
    /// All-unmarked state without latent encounter frequencies.
    pub fn new(centers: Vec<Point>, flags: Vec<bool>) -> Result<Self> {
        if centers.len() != flags.len() {
            return Err(Error::Dimension(format!(
                "{} centers but {} inclusion flags",
                centers.len(),
                flags.len()
            )));
        }
        let fixed_mask = vec![false; centers.len()];
        Ok(AugmentedState { centers, flags, latent_z: None, fixed_mask })
    }

    pub fn ceiling(&self) -> usize {
        self.centers.len()
    }

    pub fn population(&self) -> usize {
        self.flags.iter().filter(|&&w| w).count()
    }

    pub fn active_centers(&self) -> impl Iterator<Item = Point> + '_ {
        self.centers.iter().zip(&self.flags).filter(|(_, &w)| w).map(|(&c, _)| c)
    }

    /// Verifies every structural invariant, including the latent-count
    /// constraints against `data` when latent counts are present.
    pub fn check_invariants(&self, space: &StateSpace, data: &CountData) -> Result<()> {
        let m = self.ceiling();
        if self.flags.len() != m || self.fixed_mask.len() != m {
            return Err(Error::Dimension("state vectors differ in length".into()));
        }
        if let Some(i) = self.centers.iter().position(|c| !space.contains(*c)) {
            return Err(Error::Data(format!("center {i} lies outside the state space")));
        }
        if let Some(i) = (0..m).find(|&i| self.fixed_mask[i] && !self.flags[i]) {
            return Err(Error::Data(format!("marked individual {i} is inactive")));
        }
        if let Some(z) = &self.latent_z {
            if z.individuals() != m || z.traps() != data.traps() || z.occasions() != data.occasions()
            {
                return Err(Error::Dimension("latent counts do not match the data".into()));
            }
            for i in (0..m).filter(|&i| !self.flags[i]) {
                if z.individual_total(i) > 0 {
                    return Err(Error::Data(format!("inactive candidate {i} has encounters")));
                }
            }
            for r in 0..data.traps() {
                for t in 0..data.occasions() {
                    if z.column_sum(r, t) != data.get(r, t) as u64 {
                        return Err(Error::Data(format!(
                            "latent counts at trap {r} occasion {t} do not sum to the count"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `log Poisson(k; mean)` with `log P(0; 0) = 0` and `log P(k > 0; 0) = -inf`.
#[inline]
pub fn ln_poisson_pmf(k: u64, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if k == 0 {
        return -mean;
    }
    k as f64 * mean.ln() - mean - ln_factorial(k)
}

/// `d[i][r]`: distance between center `i` and trap `r`.
pub fn distance_matrix(traps: &TrapArray, centers: &[Point]) -> Vec<Vec<f64>> {
    centers
        .iter()
        .map(|c| traps.coords().iter().map(|x| c.dist(x)).collect())
        .collect()
}

/// Gaussian encounter kernel `exp(-d^2 / (2 sigma^2))`.
pub fn kernel(d: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return invalid(format!("sigma must be positive, got {sigma}"));
    }
    Ok((-d * d / (2.0 * sigma * sigma)).exp())
}

#[inline]
fn kernel_unchecked(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// Per-occasion expected count at every trap, `lambda0 * sum_{w_i = 1} k_ir`.
pub fn trap_intensity(params: &ModelParams, state: &AugmentedState, traps: &TrapArray) -> Vec<f64> {
    let mut out = vec![0.0; traps.len()];
    for c in state.active_centers() {
        for (o, x) in out.iter_mut().zip(traps.coords()) {
            *o += kernel_unchecked(c.dist(x), params.sigma);
        }
    }
    for o in &mut out {
        *o *= params.lambda0;
    }
    out
}

/// Log-likelihood of the occasion-aggregated counts, `n_r. ~ Poisson(T Lambda_r)`.
pub fn marginal_loglik(
    data: &CountData,
    params: &ModelParams,
    state: &AugmentedState,
    traps: &TrapArray,
) -> f64 {
    let occasions = data.occasions() as f64;
    trap_intensity(params, state, traps)
        .iter()
        .zip(data.totals())
        .map(|(&lam, &n)| ln_poisson_pmf(n, occasions * lam))
        .sum()
}

/// Log-likelihood of the latent encounter frequencies,
/// `z_irt ~ Poisson(lambda_ir w_i)`.
pub fn conditional_loglik(
    z: &LatentCounts,
    params: &ModelParams,
    state: &AugmentedState,
    traps: &TrapArray,
) -> f64 {
    let mut total = 0.0;
    for (i, (c, &w)) in state.centers.iter().zip(&state.flags).enumerate() {
        for (r, x) in traps.coords().iter().enumerate() {
            let rate = if w {
                params.lambda0 * kernel_unchecked(c.dist(x), params.sigma)
            } else {
                0.0
            };
            for &v in z.cell(i, r) {
                total += ln_poisson_pmf(v as u64, rate);
            }
            if total == f64::NEG_INFINITY {
                return total;
            }
        }
    }
    total
}

/// Bounding box of the traps expanded by `buffer` on every side.
pub fn state_space_from_traps(traps: &TrapArray, buffer: f64) -> Result<StateSpace> {
    if !(buffer >= 0.0 && buffer.is_finite()) {
        return invalid(format!("buffer must be non-negative, got {buffer}"));
    }
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in traps.coords() {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    StateSpace::new(xmin - buffer, xmax + buffer, ymin - buffer, ymax + buffer)
}
