//! Toy datasets.

use crate::error::{invalid, Error, Result};
use crate::estimator::DataSource;
use crate::oracle::MixtureOracle;
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub const DATASET_NAMES: [&str; 3] = ["gaussian1d", "mog1d", "two-moons-2d"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetParams {
    /// gaussian1d mean and std.
    pub mean: f64,
    pub std: f64,
    /// mog1d component means are `±offset`.
    pub offset: f64,
    pub component_std: f64,
    /// two-moons noise scale; noise is clipped to three times this.
    pub noise: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0, offset: 1.0, component_std: 0.1, noise: 0.1 }
    }
}

/// A finite set of points, drawn once from a seeded generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    points: Vec<f64>,
    oracle: Option<MixtureOracle>,
    bounds: Option<Vec<(f64, f64)>>,
}

pub fn make_dataset(name: &str, params: &DatasetParams, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("dataset needs at least one point"));
    }
    let mut rng = stream_rng(seed, Stream::Data, u64::MAX);
    let (dim, points, oracle, bounds) = match name {
        "gaussian1d" => {
            let o = MixtureOracle::gaussian(params.mean, params.std)?;
            (1, (0..n).map(|_| o.draw(&mut rng)).collect(), Some(o), None)
        }
        "mog1d" => {
            let o = MixtureOracle::symmetric_pair(params.offset, params.component_std)?;
            (1, (0..n).map(|_| o.draw(&mut rng)).collect(), Some(o), None)
        }
        "two-moons-2d" => {
            let eta = params.noise;
            if !(eta >= 0.0) {
                return Err(invalid("two-moons noise must be nonnegative"));
            }
            let mut pts = Vec::with_capacity(2 * n);
            for i in 0..n {
                let theta = PI * rng.random::<f64>();
                let (x, y) = if i % 2 == 0 { (theta.cos(), theta.sin()) } else { (1.0 - theta.cos(), 0.5 - theta.sin()) };
                let mut jitter = || eta * rng.sample::<f64, _>(StandardNormal).clamp(-3.0, 3.0);
                pts.push(x + jitter());
                pts.push(y + jitter());
            }
            let m = 3.0 * eta;
            (2, pts, None, Some(vec![(-1.0 - m, 2.0 + m), (-0.5 - m, 1.0 + m)]))
        }
        _ => return Err(Error::UnknownName { kind: "dataset", name: name.into() }),
    };
    Ok(Dataset { name: name.into(), dim, points, oracle, bounds })
}

impl Dataset {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// The generating mixture, for one-dimensional datasets.
    pub fn oracle(&self) -> Option<&MixtureOracle> {
        self.oracle.as_ref()
    }

    /// Box containing every point, when known in closed form.
    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim).map(|d| (0..self.len()).map(|i| self.point(i)[d]).sum::<f64>() / n).collect()
    }
}

impl DataSource for Dataset {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let i = rng.random_range(0..self.len());
        out.copy_from_slice(self.point(i));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_mean() {
        let n = 20_000;
        let d = make_dataset("gaussian1d", &DatasetParams::default(), n, 1).unwrap();
        assert!(d.mean()[0].abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn mog_moments_match_oracle() {
        let n = 50_000;
        let d = make_dataset("mog1d", &DatasetParams::default(), n, 2).unwrap();
        let o = d.oracle().unwrap();
        let m = d.mean()[0];
        let m2 = (0..n).map(|i| d.point(i)[0].powi(2)).sum::<f64>() / n as f64;
        let sd = o.variance().sqrt();
        assert!((m - o.mean()).abs() < 4.0 * sd / (n as f64).sqrt());
        assert!((m2 - o.second_moment()).abs() < 0.02);
    }

    #[test]
    fn moons_in_box() {
        let d = make_dataset("two-moons-2d", &DatasetParams::default(), 5000, 3).unwrap();
        let b = d.bounds().unwrap().to_vec();
        for i in 0..d.len() {
            let p = d.point(i);
            assert!(p[0] >= b[0].0 && p[0] <= b[0].1 && p[1] >= b[1].0 && p[1] <= b[1].1);
        }
    }

    #[test]
    fn errors_and_reproducibility() {
        assert!(make_dataset("cifar", &DatasetParams::default(), 10, 0).is_err());
        assert!(make_dataset("mog1d", &DatasetParams::default(), 0, 0).is_err());
        let a = make_dataset("mog1d", &DatasetParams::default(), 100, 9).unwrap();
        assert_eq!(a, make_dataset("mog1d", &DatasetParams::default(), 100, 9).unwrap());
    }
}
