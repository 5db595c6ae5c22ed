//! Posterior summaries, split-chain R-hat, density rasters and the
//! replicate-based calibration used by simulation studies.

mod calibration;
mod raster;

pub use calibration::{calibrate, CalibrationReport, ReplicateResult};
pub use raster::{density_surface, DensityRaster};

use crate::error::{Error, Result};
use crate::model::StateSpace;
use crate::sampler::{ChainOutput, Draw};

/// Bins of the histogram behind the mode of a continuous parameter.
pub const MODE_BINS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSummary {
    pub mean: f64,
    pub sd: f64,
    pub mode: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// `None` with a single chain.
    pub rhat: Option<f64>,
}

impl ParamSummary {
    /// Every location and scale statistic divided by `divisor`.
    pub fn divided(&self, divisor: f64) -> ParamSummary {
        ParamSummary {
            mean: self.mean / divisor,
            sd: self.sd / divisor,
            mode: self.mode / divisor,
            q025: self.q025 / divisor,
            q50: self.q50 / divisor,
            q975: self.q975 / divisor,
            rhat: self.rhat,
        }
    }

    /// Whether `value` lies in the closed central 95% interval.
    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub sigma: ParamSummary,
    pub lambda0: ParamSummary,
    pub n: ParamSummary,
    pub density: ParamSummary,
    pub chains: usize,
    /// Kept draws pooled over chains.
    pub draws: usize,
    pub augmentation: usize,
    pub area: f64,
}

impl PosteriorSummary {
    /// `(name, summary)` rows in a fixed order.
    pub fn rows(&self) -> [(&'static str, &ParamSummary); 4] {
        [
            ("sigma", &self.sigma),
            ("lambda0", &self.lambda0),
            ("N", &self.n),
            ("D", &self.density),
        ]
    }

    /// Largest R-hat over the parameters, if computed.
    pub fn max_rhat(&self) -> Option<f64> {
        self.rows()
            .iter()
            .filter_map(|(_, s)| s.rhat)
            .fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }
}

/// Empirical quantile by linear interpolation between order statistics.
/// `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample mean and standard deviation (`n - 1` denominator, 0 for one value).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Most frequent integer value; ties go to the smallest.
pub fn integer_mode(x: &[f64]) -> f64 {
    let mut v: Vec<i64> = x.iter().map(|&a| a.round() as i64).collect();
    v.sort_unstable();
    let (mut best, mut best_count) = (v[0], 0usize);
    let mut i = 0;
    while i < v.len() {
        let j = i + v[i..].iter().take_while(|&&a| a == v[i]).count();
        if j - i > best_count {
            best = v[i];
            best_count = j - i;
        }
        i = j;
    }
    best as f64
}

/// Center of the fullest of [`MODE_BINS`] equal-width bins spanning the
/// sample range; ties go to the lowest bin.
pub fn histogram_mode(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return lo;
    }
    let width = (hi - lo) / MODE_BINS as f64;
    let mut counts = [0usize; MODE_BINS];
    for &v in x {
        let k = (((v - lo) / width) as usize).min(MODE_BINS - 1);
        counts[k] += 1;
    }
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    lo + (best as f64 + 0.5) * width
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is cut into two halves (the middle draw is dropped for odd
/// lengths; chains shorter than 4 are not split). Returns 1 when every
/// half is constant at a common value and infinity when the halves are
/// constant at different values.
pub fn rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::EmptyInput("R-hat needs at least two chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("R-hat needs chains of equal length".into()));
    }
    if n < 2 {
        return Err(Error::EmptyInput("R-hat needs at least two draws per chain".into()));
    }
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        if n >= 4 {
            let half = n / 2;
            parts.push(&c[..half]);
            parts.push(&c[n - half..]);
        } else {
            parts.push(c);
        }
    }
    let len = parts[0].len() as f64;
    let stats: Vec<(f64, f64)> = parts
        .iter()
        .map(|p| {
            let (m, sd) = mean_sd(p);
            (m, sd * sd)
        })
        .collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, sd_means) = mean_sd(&means);
    let b_over_n = sd_means * sd_means;
    if w <= 0.0 {
        return Ok(if b_over_n > 0.0 { f64::INFINITY } else { 1.0 });
    }
    let v = (len - 1.0) / len * w + b_over_n;
    Ok((v / w).sqrt())
}

fn summarize_columns(columns: &[Vec<f64>], integer: bool) -> Result<ParamSummary> {
    let mut pooled: Vec<f64> = columns.iter().flatten().copied().collect();
    let (mean, sd) = mean_sd(&pooled);
    let mode = if integer { integer_mode(&pooled) } else { histogram_mode(&pooled) };
    pooled.sort_by(|a, b| a.total_cmp(b));
    let rhat = if columns.len() >= 2 {
        let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
        Some(rhat(&refs)?)
    } else {
        None
    };
    Ok(ParamSummary {
        mean,
        sd,
        mode,
        q025: quantile(&pooled, 0.025),
        q50: quantile(&pooled, 0.5),
        q975: quantile(&pooled, 0.975),
        rhat,
    })
}

/// Pooled summaries of sigma, lambda0, N and D over all chains. D is the
/// N summary divided by the state-space area.
pub fn summarize(chains: &[ChainOutput], space: &StateSpace) -> Result<PosteriorSummary> {
    let first = chains
        .first()
        .ok_or_else(|| Error::EmptyInput("no chains to summarize".into()))?;
    let kept = first.draws.len();
    if kept == 0 {
        return Err(Error::EmptyInput("chains hold no kept draws".into()));
    }
    if chains.iter().any(|c| c.draws.len() != kept) {
        return Err(Error::Dimension("chains have different numbers of kept draws".into()));
    }
    let column =
        |f: fn(&Draw) -> f64| -> Vec<Vec<f64>> { chains.iter().map(|c| c.column(f)).collect() };
    let n = summarize_columns(&column(|d| d.n as f64), true)?;
    let area = space.area();
    Ok(PosteriorSummary {
        sigma: summarize_columns(&column(|d| d.sigma), false)?,
        lambda0: summarize_columns(&column(|d| d.lambda0), false)?,
        density: n.divided(area),
        n,
        chains: chains.len(),
        draws: kept * chains.len(),
        augmentation: first.augmentation,
        area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&x, 0.5), 3.0);
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 5.0);
        assert!((quantile(&x, 0.1) - 1.4).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.975), 7.0);
    }

    #[test]
    fn modes() {
        assert_eq!(integer_mode(&[4.0, 4.0, 5.0]), 4.0);
        assert_eq!(integer_mode(&[5.0, 4.0, 5.0, 4.0]), 4.0);
        assert_eq!(histogram_mode(&[2.5, 2.5]), 2.5);
        let x: Vec<f64> = (0..100).map(|i| if i < 60 { 1.0 } else { i as f64 }).collect();
        let m = histogram_mode(&x);
        assert!((m - 1.0).abs() <= 0.5 * 98.0 / 512.0 + 1e-12);
    }

    #[test]
    fn rhat_hand_case() {
        let c = [1.0, 2.0, 3.0, 4.0];
        // Halves [1,2] and [3,4]: W = 1/2, B/n = 4/3, V = W/2 + 4/3.
        let expected = ((0.25 + 4.0 / 3.0) / 0.5f64).sqrt();
        let r = rhat(&[&c, &c]).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!((r - 1.779513).abs() < 1e-6);
    }

    #[test]
    fn rhat_conventions() {
        assert_eq!(rhat(&[&[0.0; 6], &[0.0; 6]]).unwrap(), 1.0);
        assert_eq!(rhat(&[&[0.0; 6], &[1.0; 6]]).unwrap(), f64::INFINITY);
        assert!(rhat(&[&[1.0, 2.0]]).is_err());
        assert!(rhat(&[&[1.0, 2.0], &[1.0]]).is_err());
    }
}
