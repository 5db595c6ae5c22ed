//! Synthetic datasets from the generative chain: uniform activity centers,
//! Poisson encounter frequencies, aggregated trap counts, and optionally a
//! randomly chosen marked subset whose histories are exported as observed.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::model::{
    state_space_from_traps, CountData, LatentCounts, MarkedObservations, Point, StateSpace,
    TrapArray,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq)]
pub enum TrapLayout {
    Grid { rows: usize, cols: usize, spacing: f64 },
    Custom(TrapArray),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub layout: TrapLayout,
    pub buffer: f64,
    pub sigma: f64,
    pub lambda0: f64,
    pub n_true: usize,
    pub occasions: usize,
    pub marked: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if let TrapLayout::Grid { rows, cols, spacing } = self.layout {
            if rows == 0 || cols == 0 {
                return bad("trap grid must have at least one row and column".into());
            }
            if !(spacing > 0.0) {
                return bad(format!("trap spacing must be positive, got {spacing}"));
            }
        }
        if !(self.buffer >= 0.0) {
            return bad(format!("buffer must be non-negative, got {}", self.buffer));
        }
        if !(self.sigma > 0.0) || !(self.lambda0 > 0.0) {
            return bad("sigma and lambda0 must be positive".into());
        }
        if self.occasions == 0 {
            return bad("at least one occasion is required".into());
        }
        if self.marked > self.n_true {
            return bad(format!(
                "cannot mark {} of {} individuals",
                self.marked, self.n_true
            ));
        }
        Ok(())
    }

    pub fn traps(&self) -> Result<TrapArray> {
        match &self.layout {
            TrapLayout::Grid { rows, cols, spacing } => {
                TrapArray::grid(*rows, *cols, *spacing, Point::new(0.0, 0.0))
            }
            TrapLayout::Custom(traps) => Ok(traps.clone()),
        }
    }

    pub fn space(&self) -> Result<StateSpace> {
        state_space_from_traps(&self.traps()?, self.buffer)
    }

    /// Same design with the seed of replicate `index`.
    pub fn replicate(&self, index: usize) -> Scenario {
        Scenario {
            seed: derive_seed(self.seed, index as u64),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTruth {
    pub traps: TrapArray,
    pub space: StateSpace,
    pub centers: Vec<Point>,
    pub z: LatentCounts,
    pub counts: CountData,
    /// Indices into `centers` of the marked individuals, in export order.
    pub marked_ids: Vec<usize>,
    pub marked: Option<MarkedObservations>,
}

pub fn simulate_dataset(scn: &Scenario) -> Result<SimulatedTruth> {
    scn.validate()?;
    let space = scn.space()?;
    let mut rng = rng_from_seed(scn.seed);
    let centers: Vec<Point> = (0..scn.n_true)
        .map(|_| space.from_unit(rng.random(), rng.random()))
        .collect();
    simulate_from_centers(scn, centers, &mut rng)
}

/// Draws encounters and counts for given activity centers. The scenario's
/// `n_true` is ignored in favour of `centers.len()`.
pub fn simulate_from_centers(
    scn: &Scenario,
    centers: Vec<Point>,
    rng: &mut Rng,
) -> Result<SimulatedTruth> {
    let traps = scn.traps()?;
    let space = scn.space()?;
    if scn.marked > centers.len() {
        return Err(Error::InvalidScenario(format!(
            "cannot mark {} of {} individuals",
            scn.marked,
            centers.len()
        )));
    }
    let r_count = traps.len();
    let t_count = scn.occasions;
    let mut z = LatentCounts::zeros(centers.len(), r_count, t_count);
    let mut counts = vec![vec![0u32; t_count]; r_count];
    let mut row = vec![0.0; r_count];
    for (i, c) in centers.iter().enumerate() {
        traps.kernel_row(*c, scn.sigma, &mut row);
        for (r, &k) in row.iter().enumerate() {
            let rate = scn.lambda0 * k;
            if rate <= 0.0 {
                continue;
            }
            let dist = Poisson::new(rate)
                .map_err(|e| Error::InvalidParameter(format!("poisson rate {rate}: {e}")))?;
            for t in 0..t_count {
                let v = dist.sample(rng) as u32;
                if v > 0 {
                    z.set(i, r, t, v);
                    counts[r][t] += v;
                }
            }
        }
    }
    let counts = CountData::new(counts)?;

    let (marked_ids, marked) = if scn.marked > 0 {
        let mut ids = sample(rng, centers.len(), scn.marked).into_vec();
        ids.sort_unstable();
        let mut h = LatentCounts::zeros(ids.len(), r_count, t_count);
        for (k, &i) in ids.iter().enumerate() {
            for r in 0..r_count {
                for t in 0..t_count {
                    h.set(k, r, t, z.get(i, r, t));
                }
            }
        }
        (ids, Some(MarkedObservations::new(h)))
    } else {
        (Vec::new(), None)
    };

    Ok(SimulatedTruth { traps, space, centers, z, counts, marked_ids, marked })
}

const PRESET_ROOT_SEED: u64 = 2011;

fn sigma_tag(sigma: f64) -> &'static str {
    match sigma {
        s if s == 0.5 => "s05",
        s if s == 0.75 => "s075",
        _ => "s10",
    }
}

/// The unmarked design grid (3 sigma x 3 N x 2 T) followed by the four
/// marked-subset designs.
pub fn preset_scenarios() -> Vec<Scenario> {
    let grid = TrapLayout::Grid { rows: 15, cols: 15, spacing: 1.0 };
    let mut out = Vec::with_capacity(22);
    for sigma in [0.5, 0.75, 1.0] {
        for n in [27usize, 45, 75] {
            for t in [5usize, 10] {
                out.push(Scenario {
                    name: format!("study1-{}-n{n}-t{t}", sigma_tag(sigma)),
                    layout: grid.clone(),
                    buffer: 3.0,
                    sigma,
                    lambda0: 0.5,
                    n_true: n,
                    occasions: t,
                    marked: 0,
                    seed: 0,
                });
            }
        }
    }
    for m in [5usize, 15, 25, 35] {
        out.push(Scenario {
            name: format!("study2-m{m}"),
            layout: grid.clone(),
            buffer: 3.0,
            sigma: 0.5,
            lambda0: 0.5,
            n_true: 75,
            occasions: 5,
            marked: m,
            seed: 0,
        });
    }
    // Study-2 designs share one population seed so that the marked subsets
    // are drawn from identical simulated populations.
    for (k, scn) in out.iter_mut().enumerate() {
        let stream = if scn.marked > 0 { 100 } else { k as u64 };
        scn.seed = derive_seed(PRESET_ROOT_SEED, stream);
    }
    out
}

pub fn preset(name: &str) -> Option<Scenario> {
    preset_scenarios().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, m: usize) -> Scenario {
        Scenario {
            name: "t".into(),
            layout: TrapLayout::Grid { rows: 4, cols: 4, spacing: 1.0 },
            buffer: 2.0,
            sigma: 0.8,
            lambda0: 0.7,
            n_true: n,
            occasions: 3,
            marked: m,
            seed: 99,
        }
    }

    #[test]
    fn empty_population_gives_zero_counts() {
        let truth = simulate_dataset(&small(0, 0)).unwrap();
        assert_eq!(truth.counts.total(), 0);
        assert!(truth.marked.is_none());
    }

    #[test]
    fn too_many_marked_is_rejected() {
        assert!(matches!(
            simulate_dataset(&small(3, 4)),
            Err(Error::InvalidScenario(_))
        ));
    }

    #[test]
    fn counts_are_row_sums_and_marked_copy_z() {
        let truth = simulate_dataset(&small(20, 6)).unwrap();
        for r in 0..truth.traps.len() {
            for t in 0..3 {
                assert_eq!(truth.z.column_sum(r, t), truth.counts.get(r, t) as u64);
            }
        }
        let marked = truth.marked.as_ref().unwrap();
        assert_eq!(marked.len(), 6);
        for (k, &i) in truth.marked_ids.iter().enumerate() {
            for r in 0..truth.traps.len() {
                assert_eq!(marked.histories().cell(k, r), truth.z.cell(i, r));
            }
        }
        marked.validate_against(&truth.counts).unwrap();
        assert!(truth.centers.iter().all(|c| truth.space.contains(*c)));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate_dataset(&small(15, 3)).unwrap();
        let b = simulate_dataset(&small(15, 3)).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&small(15, 3).replicate(1)).unwrap();
        assert_ne!(a.centers, c.centers);
    }

    #[test]
    fn presets() {
        let all = preset_scenarios();
        assert_eq!(all.len(), 22);
        let (one, two): (Vec<_>, Vec<_>) = all.iter().partition(|s| s.name.starts_with("study1"));
        assert_eq!(one.len(), 18);
        assert!(one.iter().all(|s| s.marked == 0 && s.lambda0 == 0.5));
        assert!(two.iter().all(|s| s.n_true == 75 && s.occasions == 5 && s.sigma == 0.5));
        assert_eq!(
            two.iter().map(|s| s.marked).collect::<Vec<_>>(),
            vec![5, 15, 25, 35]
        );
        assert!(two.windows(2).all(|w| w[0].seed == w[1].seed));
        let p = preset("study1-s05-n27-t5").unwrap();
        assert_eq!(p.traps().unwrap().len(), 225);
        assert_eq!(p.space().unwrap().area(), 400.0);
        assert!(preset("study1-s075-n45-t10").is_some());
        assert!(preset("study1-s10-n75-t10").is_some());
    }
}
