use crate::error::{Error, Result};
use crate::model::{Point, StateSpace};
use crate::sampler::ChainOutput;

/// Posterior expected number of activity centers per square pixel.
///
/// Pixels tile the state space from its lower-left corner; when the pixel
/// size does not divide a side the last column or row extends past it.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRaster {
    pub origin: Point,
    pub pixel: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major from the bottom row: `values[iy * nx + ix]`.
    pub values: Vec<f64>,
    /// Center snapshots averaged.
    pub draws: usize,
}

impl DensityRaster {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Pixel containing `p`, with points on the upper edges assigned to
    /// the last pixel.
    pub fn pixel_of(&self, p: Point) -> (usize, usize) {
        let ix = ((p.x - self.origin.x) / self.pixel).floor().max(0.0) as usize;
        let iy = ((p.y - self.origin.y) / self.pixel).floor().max(0.0) as usize;
        (ix.min(self.nx - 1), iy.min(self.ny - 1))
    }
}

fn cells(side: f64, pixel: f64) -> usize {
    let ratio = side / pixel;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 * ratio.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Averages, over every stored center snapshot of every chain, the count
/// of active centers falling in each pixel.
pub fn density_surface(
    chains: &[ChainOutput],
    space: &StateSpace,
    pixel: f64,
) -> Result<DensityRaster> {
    if !(pixel > 0.0 && pixel.is_finite()) {
        return Err(Error::InvalidParameter(format!("pixel size must be positive, got {pixel}")));
    }
    // Same rounding slack as `cells`.
    let slack = 1.0 + 1e-9;
    if pixel > space.width() * slack || pixel > space.height() * slack {
        return Err(Error::InvalidParameter(format!(
            "pixel size {pixel} exceeds a state-space side ({} x {})",
            space.width(),
            space.height()
        )));
    }
    let draws: usize = chains.iter().map(|c| c.center_draws.len()).sum();
    if draws == 0 {
        return Err(Error::EmptyInput("no stored activity-center draws".into()));
    }
    let (nx, ny) = (cells(space.width(), pixel), cells(space.height(), pixel));
    let mut raster = DensityRaster {
        origin: Point::new(space.xmin(), space.ymin()),
        pixel,
        nx,
        ny,
        values: vec![0.0; nx * ny],
        draws,
    };
    let mut counts = vec![0u64; nx * ny];
    for snap in chains.iter().flat_map(|c| &c.center_draws) {
        for &c in &snap.centers {
            let (ix, iy) = raster.pixel_of(c);
            counts[iy * nx + ix] += 1;
        }
    }
    for (v, &c) in raster.values.iter_mut().zip(&counts) {
        *v = c as f64 / draws as f64;
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{AcceptanceRates, CenterSnapshot, ProposalScales};

    fn chain(snaps: Vec<Vec<Point>>) -> ChainOutput {
        ChainOutput {
            chain_id: 0,
            seed: 0,
            augmentation: 10,
            area: 16.0,
            draws: Vec::new(),
            center_draws: snaps
                .into_iter()
                .enumerate()
                .map(|(k, centers)| CenterSnapshot {
                    iteration: k,
                    individuals: (0..centers.len()).collect(),
                    centers,
                })
                .collect(),
            acceptance: AcceptanceRates::default(),
            proposals: ProposalScales { centers: 1.0, log_sigma: 0.1, log_lambda0: 0.1 },
        }
    }

    #[test]
    fn single_pixel_and_mass() {
        let space = StateSpace::new(0.0, 4.0, 0.0, 4.0).unwrap();
        let c = chain(vec![vec![Point::new(1.5, 2.5)]; 3]);
        let r = density_surface(&[c], &space, 1.0).unwrap();
        assert_eq!((r.nx, r.ny), (4, 4));
        assert_eq!(r.value(1, 2), 1.0);
        assert_eq!(r.total(), 1.0);

        let c = chain(vec![
            vec![Point::new(0.0, 0.0), Point::new(4.0, 4.0)],
            vec![Point::new(3.9, 0.1)],
            vec![],
        ]);
        let r = density_surface(&[c], &space, 2.0).unwrap();
        assert!((r.total() - 1.0).abs() < 1e-12);
        assert!((r.value(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.value(1, 0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_validation() {
        let space = StateSpace::new(0.0, 4.0, 0.0, 2.0).unwrap();
        let c = chain(vec![vec![Point::new(1.0, 1.0)]]);
        assert!(matches!(
            density_surface(&[c.clone()], &space, 3.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(density_surface(&[c.clone()], &space, 0.0).is_err());
        let r = density_surface(&[c], &space, 1.5).unwrap();
        assert_eq!((r.nx, r.ny), (3, 2));
        assert!(matches!(
            density_surface(&[chain(vec![])], &space, 1.0),
            Err(Error::EmptyInput(_))
        ));
    }
}
