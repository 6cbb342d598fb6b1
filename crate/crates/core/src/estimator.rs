//! Monte Carlo estimators of the weighted loss.
//!
//! A draw samples `t`, sets `λ = f(t)` and contributes `½ w(λ)/p(λ) ‖ε - ε̂‖²`.
//! All reported losses omit the additive constants of the ELBO.

use crate::denoiser::{predict_as, Denoiser};
use crate::error::{invalid, Error, Result};
use crate::oracle::MixtureOracle;
use crate::process::{convert_prediction, diffuse, loss_equivalence_factor, ForwardProcess, PredictionKind};
use crate::rng::{stream_rng, Stream};
use crate::schedules::{AdaptiveScheduleState, NoiseSchedule, PiecewiseSchedule};
use crate::weightings::{Weighting, WeightingKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Source of data points.
pub trait DataSource: Send + Sync {
    fn dim(&self) -> usize;
    fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
}

impl DataSource for MixtureOracle {
    fn dim(&self) -> usize {
        1
    }

    fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out[0] = self.draw(rng);
    }
}

/// How times are drawn for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeSampler {
    Iid,
    /// `t_i = (i + u)/n` with one uniform `u` per batch.
    #[default]
    LowDiscrepancy,
}

impl std::str::FromStr for TimeSampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(TimeSampler::Iid),
            "low-discrepancy" => Ok(TimeSampler::LowDiscrepancy),
            _ => Err(Error::UnknownName { kind: "time sampler", name: s.into() }),
        }
    }
}

/// Stratified times `(i + u)/n`.
pub fn low_discrepancy_times(n: usize, u: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + u) / n as f64).collect()
}

/// `n` times in `[0, 1)`.
pub fn sample_times<R: Rng + ?Sized>(mode: TimeSampler, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("cannot sample zero times"));
    }
    Ok(match mode {
        TimeSampler::Iid => (0..n).map(|_| rng.random::<f64>()).collect(),
        TimeSampler::LowDiscrepancy => low_discrepancy_times(n, rng.random::<f64>()),
    })
}

/// Result of a Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub per_sample: Option<Vec<f64>>,
}

impl LossEstimate {
    pub fn from_values(values: Vec<f64>, keep: bool) -> Self {
        let n = values.len();
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = if n > 1 { values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0) } else { 0.0 };
        Self { mean, std_error: (var / nf).sqrt(), n, per_sample: keep.then_some(values) }
    }
}

/// Squared ε-residual, or its expectation, at a log-SNR.
pub trait SquaredResidual: Sync {
    /// `‖ε - ε̂‖²` for draw `index` under `seed`.
    fn squared_residual(&self, lambda: f64, seed: u64, index: u64) -> Result<f64>;
}

/// Draws `x` and `ε`, noises, and scores a denoiser.
///
/// The residual is formed in `residual` parameterization and mapped back to
/// the ε scale with the exact equivalence factor.
pub struct DenoisingResidual<'a> {
    pub model: &'a dyn Denoiser,
    pub data: &'a dyn DataSource,
    pub proc: ForwardProcess,
    pub residual: PredictionKind,
    pub sigma_data: f64,
}

impl<'a> DenoisingResidual<'a> {
    pub fn new(model: &'a dyn Denoiser, data: &'a dyn DataSource, proc: ForwardProcess) -> Self {
        Self { model, data, proc, residual: PredictionKind::Eps, sigma_data: crate::process::DEFAULT_SIGMA_DATA }
    }

    pub fn with_residual(mut self, kind: PredictionKind) -> Self {
        self.residual = kind;
        self
    }

    /// Data and noise of draw `index`.
    pub fn draw(&self, seed: u64, index: u64) -> (Vec<f64>, Vec<f64>) {
        let d = self.data.dim();
        let mut x = vec![0.0; d];
        self.data.draw_into(&mut stream_rng(seed, Stream::Data, index), &mut x);
        let mut rng = stream_rng(seed, Stream::Noise, index);
        let eps = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (x, eps)
    }
}

impl SquaredResidual for DenoisingResidual<'_> {
    fn squared_residual(&self, lambda: f64, seed: u64, index: u64) -> Result<f64> {
        let (x, eps) = self.draw(seed, index);
        let s = diffuse(&x, lambda, &eps, self.proc)?;
        let pred = predict_as(self.model, &s.z, lambda, self.residual, self.proc, self.sigma_data)?;
        let target = convert_prediction(&eps, PredictionKind::Eps, self.residual, &s.z, lambda, self.proc, self.sigma_data)?;
        let sq: f64 = target.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
        if self.residual == PredictionKind::Eps {
            Ok(sq)
        } else {
            Ok(sq * loss_equivalence_factor(self.residual, PredictionKind::Eps, lambda, self.proc, self.sigma_data)?)
        }
    }
}

/// Expected residual of the optimal denoiser, `E‖ε - ε̂*‖² = mse(λ)`.
pub struct ExpectedResidual<'a> {
    pub oracle: &'a MixtureOracle,
    pub proc: ForwardProcess,
}

impl SquaredResidual for ExpectedResidual<'_> {
    fn squared_residual(&self, lambda: f64, _seed: u64, _index: u64) -> Result<f64> {
        Ok(self.oracle.mse(lambda, self.proc))
    }
}

/// Weighted loss estimate `½ E[(w/p) ‖ε - ε̂‖²]`.
pub fn weighted_loss_mc(
    residual: &dyn SquaredResidual,
    schedule: &dyn NoiseSchedule,
    weighting: &Weighting,
    times: TimeSampler,
    n: usize,
    seed: u64,
) -> Result<LossEstimate> {
    let values = weighted_loss_values(residual, schedule, weighting, times, n, seed)?;
    Ok(LossEstimate::from_values(values, false))
}

/// Per-draw values of [`weighted_loss_mc`], in draw order.
pub fn weighted_loss_values(
    residual: &dyn SquaredResidual,
    schedule: &dyn NoiseSchedule,
    weighting: &Weighting,
    times: TimeSampler,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let ts = sample_times(times, n, &mut stream_rng(seed, Stream::Times, 0))?;
    ts.par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let lambda = schedule.log_snr(t);
            let p = schedule.density(lambda);
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Numerical(format!("schedule density {p} at lambda={lambda} (t={t})")));
            }
            let sq = residual.squared_residual(lambda, seed, i as u64)?;
            Ok(0.5 * weighting.eval(lambda) / p * sq)
        })
        .collect()
}

/// ELBO estimate: the weighted loss with `w ≡ 1`.
pub fn elbo_mc(
    residual: &dyn SquaredResidual,
    schedule: &dyn NoiseSchedule,
    times: TimeSampler,
    n: usize,
    seed: u64,
) -> Result<LossEstimate> {
    weighted_loss_mc(residual, schedule, &Weighting::new(WeightingKind::Elbo), times, n, seed)
}

/// Weighted loss of a one-dimensional model against its oracle by quadrature,
/// `½ ∫ w(λ) [mse(λ) + E_q (ε̂*(z) - ε̂(z))²] dλ` over `[λmin, λmax]`.
///
/// The excess term uses `nodes` Gauss–Hermite nodes per mixture component and
/// the λ-integral 4-point Gauss–Legendre on each of `cells` cells.
#[allow(clippy::too_many_arguments)]
pub fn weighted_loss_quadrature(
    model: &dyn Denoiser,
    oracle: &MixtureOracle,
    weighting: &Weighting,
    proc: ForwardProcess,
    lambda_min: f64,
    lambda_max: f64,
    cells: usize,
    nodes: usize,
) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim() });
    }
    let hermite = crate::quadrature::NormalRule::new(nodes)?;
    let legendre = crate::quadrature::LegendreRule::new(4)?;
    let edges = crate::quadrature::linspace(lambda_min, lambda_max, cells.max(1) + 1);
    let parts: Vec<f64> = edges
        .par_windows(2)
        .map(|e| {
            legendre.integrate(e[0], e[1], |lambda| {
                let (a, s) = (proc.alpha(lambda), proc.sigma(lambda));
                let sd = (a * a * oracle.component_std().powi(2) + s * s).sqrt();
                let excess: f64 = oracle
                    .weights()
                    .iter()
                    .zip(oracle.means())
                    .map(|(w, m)| {
                        w * hermite.expect(|u| {
                            let z = a * m + sd * u;
                            let eps = crate::process::convert_scalar(
                                model.predict(&[z], lambda)[0],
                                model.kind(),
                                PredictionKind::Eps,
                                z,
                                lambda,
                                proc,
                                crate::process::DEFAULT_SIGMA_DATA,
                            )
                            .unwrap_or(f64::NAN);
                            let best = -s * oracle.exact_score(z, lambda, proc);
                            (eps - best).powi(2)
                        })
                    })
                    .sum();
                0.5 * weighting.eval(lambda) * (oracle.mse(lambda, proc) + excess)
            })
        })
        .collect();
    let total: f64 = parts.iter().sum();
    if !total.is_finite() {
        return Err(Error::Numerical("weighted loss quadrature is not finite".into()));
    }
    Ok(total)
}

/// Variance of an estimator across repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub config: String,
    pub var: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub means: Vec<f64>,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

const BOOTSTRAP_RESAMPLES: usize = 2000;

/// Runs `estimate(repeat)` for each repeat and reports the variance of the
/// means with a 95% percentile-bootstrap interval.
pub fn estimator_variance(config: &str, repeats: usize, seed: u64, estimate: impl Fn(u64) -> Result<f64> + Sync) -> Result<VarianceReport> {
    if repeats < 2 {
        return Err(invalid("estimator variance needs at least two repeats"));
    }
    let means = (0..repeats as u64).into_par_iter().map(&estimate).collect::<Result<Vec<f64>>>()?;
    let var = sample_variance(&means);
    let mut rng = stream_rng(seed, Stream::Bootstrap, 0);
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let resample: Vec<f64> = (0..repeats).map(|_| means[rng.random_range(0..repeats)]).collect();
            sample_variance(&resample)
        })
        .collect();
    boot.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(VarianceReport { config: config.to_string(), var, ci_lo: percentile(&boot, 0.025), ci_hi: percentile(&boot, 0.975), means })
}

/// Ratio `var(a)/var(b)` of paired repeats with a 95% paired-bootstrap interval.
pub fn paired_variance_ratio(a: &[f64], b: &[f64], seed: u64) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("paired comparison needs equal-length samples of size >= 2"));
    }
    let n = a.len();
    let mut rng = stream_rng(seed, Stream::Bootstrap, 1);
    let mut boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let ra: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let rb: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            sample_variance(&ra) / sample_variance(&rb)
        })
        .collect();
    boot.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok((sample_variance(a) / sample_variance(b), percentile(&boot, 0.025), percentile(&boot, 0.975)))
}

/// Drives an adaptive state towards its fixed point for an oracle: each
/// iteration pushes one uniformly drawn λ per bin with the exact expected
/// weighted MSE at that λ.
pub fn calibrate_adaptive(
    state: &mut AdaptiveScheduleState,
    weighting: &Weighting,
    oracle: &MixtureOracle,
    proc: ForwardProcess,
    iterations: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = stream_rng(seed, Stream::Times, 7);
    let edges = state.bin_edges.clone();
    for _ in 0..iterations {
        for e in edges.windows(2) {
            let lambda = e[0] + (e[1] - e[0]) * rng.random::<f64>();
            state.update(lambda, weighting.eval(lambda) * oracle.mse(lambda, proc))?;
        }
    }
    Ok(())
}

/// Per-bin expected value of `(w/p)·mse`, averaged within each bin by
/// Gauss–Legendre quadrature.
pub fn adaptive_bin_balance(
    schedule: &PiecewiseSchedule,
    weighting: &Weighting,
    oracle: &MixtureOracle,
    proc: ForwardProcess,
) -> Result<Vec<f64>> {
    let rule = crate::quadrature::LegendreRule::new(16)?;
    Ok(schedule
        .edges()
        .windows(2)
        .zip(schedule.masses())
        .map(|(e, m)| {
            let width = e[1] - e[0];
            let avg = rule.integrate(e[0], e[1], |l| weighting.eval(l) * oracle.mse(l, proc)) / width;
            avg / (m / width)
        })
        .collect())
}

/// Coefficient of variation.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    v.sqrt() / m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{OracleDenoiser, ZeroDenoiser};
    use crate::schedules::{adaptive_schedule, default_truncated};
    use crate::special::softplus;
    use crate::weightings::make_weighting;

    const VP: ForwardProcess = ForwardProcess::Vp;

    #[test]
    fn stratified_times() {
        assert_eq!(low_discrepancy_times(4, 0.5), vec![0.125, 0.375, 0.625, 0.875]);
        let mut rng = stream_rng(1, Stream::Times, 0);
        let ts = sample_times(TimeSampler::LowDiscrepancy, 1000, &mut rng).unwrap();
        let mut counts = vec![0; 1000];
        for t in ts {
            counts[(t * 1000.0) as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
        assert!(sample_times(TimeSampler::Iid, 0, &mut rng).is_err());
    }

    #[test]
    fn ratio_cancels_when_weighting_is_density() {
        // With w = p the estimate is half the mean squared residual.
        let g = MixtureOracle::gaussian(0.0, 1.0).unwrap();
        let s = default_truncated("cosine").unwrap();
        let r = ExpectedResidual { oracle: &g, proc: VP };
        let ts = low_discrepancy_times(64, 0.3);
        let direct: f64 = ts.iter().map(|&t| 0.5 * g.mse(s.log_snr(t), VP)).sum::<f64>() / 64.0;
        let vals = weighted_loss_values(&r, &s, &Weighting::new(WeightingKind::Elbo), TimeSampler::LowDiscrepancy, 64, 9).unwrap();
        let ts = sample_times(TimeSampler::LowDiscrepancy, 64, &mut stream_rng(9, Stream::Times, 0)).unwrap();
        let reweighted: f64 = vals.iter().zip(&ts).map(|(v, &t)| v * s.density(s.log_snr(t))).sum::<f64>() / 64.0;
        let direct2: f64 = ts.iter().map(|&t| 0.5 * g.mse(s.log_snr(t), VP)).sum::<f64>() / 64.0;
        assert!((reweighted - direct2).abs() < 1e-14);
        assert!(direct > 0.0);
    }

    #[test]
    fn elbo_matches_closed_form() {
        let g = MixtureOracle::gaussian(0.0, 1.0).unwrap();
        let model = OracleDenoiser { oracle: g.clone(), proc: VP };
        let r = DenoisingResidual::new(&model, &g, VP);
        let s = default_truncated("cosine").unwrap();
        let est = elbo_mc(&r, &s, TimeSampler::LowDiscrepancy, 200_000, 3).unwrap();
        let truth = 0.5 * (softplus(20.0) - softplus(-20.0));
        assert!((est.mean - truth).abs() < 3.0 * est.std_error, "{} ± {}", est.mean, est.std_error);
        let same = weighted_loss_mc(&r, &s, &make_weighting("elbo", &Default::default()).unwrap(), TimeSampler::LowDiscrepancy, 200_000, 3)
            .unwrap();
        assert_eq!(same, est);
        let zero = ZeroDenoiser { dim: 1, kind: PredictionKind::Eps };
        let rz = DenoisingResidual::new(&zero, &g, VP);
        let ez = elbo_mc(&rz, &s, TimeSampler::LowDiscrepancy, 100_000, 3).unwrap();
        assert!((ez.mean - 20.0).abs() < 4.0 * ez.std_error);
        assert!(ez.mean > est.mean);
    }

    #[test]
    fn residual_kind_does_not_change_values() {
        let o = MixtureOracle::symmetric_pair(1.0, 0.3).unwrap();
        let model = OracleDenoiser { oracle: o.clone(), proc: VP };
        let s = crate::schedules::truncate(crate::schedules::Schedule::Cosine { shift: 0.0 }, 12.0, -12.0).unwrap();
        let w = make_weighting("sigmoid-2", &Default::default()).unwrap();
        let base = weighted_loss_values(&DenoisingResidual::new(&model, &o, VP), &s, &w, TimeSampler::Iid, 2000, 5).unwrap();
        for kind in [PredictionKind::X, PredictionKind::V, PredictionKind::F, PredictionKind::O, PredictionKind::Score] {
            let r = DenoisingResidual::new(&model, &o, VP).with_residual(kind);
            let vals = weighted_loss_values(&r, &s, &w, TimeSampler::Iid, 2000, 5).unwrap();
            for (a, b) in base.iter().zip(&vals) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12), "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn quadrature_loss_of_optimal_and_zero_models() {
        let g = MixtureOracle::gaussian(0.0, 1.0).unwrap();
        let w = Weighting::new(WeightingKind::Elbo);
        let best = weighted_loss_quadrature(&OracleDenoiser { oracle: g.clone(), proc: VP }, &g, &w, VP, -20.0, 20.0, 200, 64).unwrap();
        let truth = 0.5 * (softplus(20.0) - softplus(-20.0));
        assert!((best - truth).abs() < 1e-9 * truth);
        let zero = weighted_loss_quadrature(&ZeroDenoiser { dim: 1, kind: PredictionKind::Eps }, &g, &w, VP, -20.0, 20.0, 200, 64).unwrap();
        assert!((zero - 20.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_replay() {
        let g = MixtureOracle::gaussian(0.0, 1.0).unwrap();
        let model = OracleDenoiser { oracle: g.clone(), proc: VP };
        let r = DenoisingResidual::new(&model, &g, VP);
        let s = default_truncated("fm-ot").unwrap();
        let a = elbo_mc(&r, &s, TimeSampler::Iid, 5000, 17).unwrap();
        let b = elbo_mc(&r, &s, TimeSampler::Iid, 5000, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_report() {
        let rep = estimator_variance("c", 50, 1, |r| Ok(r as f64)).unwrap();
        assert!((rep.var - 212.5).abs() < 1e-12);
        assert!(rep.ci_lo < rep.var && rep.var < rep.ci_hi);
        assert!(estimator_variance("c", 1, 1, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn calibrated_adaptive_balances_bins() {
        let g = MixtureOracle::gaussian(0.0, 1.0).unwrap();
        let mut st = AdaptiveScheduleState::new(-20.0, 20.0).unwrap();
        calibrate_adaptive(&mut st, &Weighting::new(WeightingKind::Elbo), &g, VP, 30_000, 2).unwrap();
        let s = adaptive_schedule(&st).unwrap();
        let bal = adaptive_bin_balance(&s, &Weighting::new(WeightingKind::Elbo), &g, VP).unwrap();
        assert!(coefficient_of_variation(&bal) < 0.05);
    }
}
