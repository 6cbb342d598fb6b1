//! Ancestral, probability-flow and reverse-SDE samplers.
//!
//! All samplers run on the time grid `t_i = i/N` from `t = 1` down to `t = 0`
//! and read the model only through its score.

use crate::denoiser::{predict_as, Denoiser};
use crate::error::{invalid, Error, Result};
use crate::process::{sde_coefficients, ForwardProcess, PredictionKind, DEFAULT_SIGMA_DATA};
use crate::rng::{stream_rng, Stream};
use crate::schedules::NoiseSchedule;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ddpm,
    OdeEuler,
    OdeHeun,
    SdeEuler,
}

pub const SAMPLER_NAMES: [&str; 4] = ["ddpm", "ode-euler", "ode-heun", "sde-euler"];

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::OdeEuler => "ode-euler",
            SamplerKind::OdeHeun => "ode-heun",
            SamplerKind::SdeEuler => "sde-euler",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(SamplerKind::Ddpm),
            "ode-euler" => Ok(SamplerKind::OdeEuler),
            "ode-heun" => Ok(SamplerKind::OdeHeun),
            "sde-euler" => Ok(SamplerKind::SdeEuler),
            _ => Err(Error::UnknownName { kind: "sampler", name: s.into() }),
        }
    }
}

/// Stochastic churn for the Heun sampler. The default disables it.
///
/// Steps whose noise level `σ` lies in `[s_tmin, s_tmax]` first raise the
/// noise to `σ(1 + γ)` with `γ = min(s_churn/N, √2 - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Churn {
    pub s_churn: f64,
    pub s_tmin: f64,
    pub s_tmax: f64,
    pub s_noise: f64,
}

impl Default for Churn {
    fn default() -> Self {
        Self { s_churn: 0.0, s_tmin: 0.0, s_tmax: f64::INFINITY, s_noise: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig<'a> {
    pub kind: SamplerKind,
    pub steps: usize,
    pub schedule: &'a dyn NoiseSchedule,
    pub proc: ForwardProcess,
    pub churn: Churn,
}

impl<'a> SamplerConfig<'a> {
    pub fn new(kind: SamplerKind, steps: usize, schedule: &'a dyn NoiseSchedule) -> Self {
        Self { kind, steps, schedule, proc: ForwardProcess::Vp, churn: Churn::default() }
    }

    pub fn with_process(mut self, proc: ForwardProcess) -> Self {
        self.proc = proc;
        self
    }

    pub fn with_churn(mut self, churn: Churn) -> Self {
        self.churn = churn;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("sampler needs at least one step"));
        }
        let (lo, hi) = (self.schedule.lambda_min(), self.schedule.lambda_max());
        if !lo.is_finite() || !hi.is_finite() {
            return Err(invalid("sampling schedule must be truncated to finite log-SNR"));
        }
        Ok(())
    }

    fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }
}

/// States `(t, λ, z)` of one chain from `t = 1` to `t = 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<(f64, f64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Vec<Vec<f64>>,
    /// Trajectory of the first chain, when requested.
    pub trajectory: Option<Trajectory>,
    pub warnings: Vec<String>,
}

fn score(model: &dyn Denoiser, z: &[f64], lambda: f64, proc: ForwardProcess) -> Result<Vec<f64>> {
    predict_as(model, z, lambda, PredictionKind::Score, proc, DEFAULT_SIGMA_DATA)
}

/// Posterior mean `x̂ = (z + σ² s)/α` from the score.
fn denoise(model: &dyn Denoiser, z: &[f64], lambda: f64, proc: ForwardProcess) -> Result<Vec<f64>> {
    let s = score(model, z, lambda, proc)?;
    let (a, s2) = (proc.alpha(lambda), proc.sigma_sq(lambda));
    Ok(z.iter().zip(&s).map(|(z, s)| (z + s2 * s) / a).collect())
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_finite(z: &[f64], step: usize) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step, what: "sampler state".into() })
    }
}

/// Draws from the prior at `λmin`.
fn prior_draw(cfg: &SamplerConfig, rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let s = cfg.proc.prior_std(cfg.schedule.lambda_min());
    gaussian(rng, dim).into_iter().map(|e| s * e).collect()
}

/// Runs `n` chains; `chain(index, rng, record)` returns the sample and, when
/// `record` is set, the trajectory.
fn run_chains(
    n: usize,
    seed: u64,
    trajectory: bool,
    chain: impl Fn(u64, &mut ChaCha8Rng, bool) -> Result<(Vec<f64>, Option<Trajectory>)> + Sync,
) -> Result<(Vec<Vec<f64>>, Option<Trajectory>)> {
    let results = (0..n as u64)
        .into_par_iter()
        .map(|i| chain(i, &mut stream_rng(seed, Stream::Sampler, i), trajectory && i == 0))
        .collect::<Result<Vec<_>>>()?;
    let mut traj = None;
    let samples = results
        .into_iter()
        .map(|(s, t)| {
            if t.is_some() {
                traj = t;
            }
            s
        })
        .collect();
    Ok((samples, traj))
}

/// Ancestral sampling with the q-posterior variance. The last step returns
/// the denoised estimate.
pub fn sample_ddpm(model: &dyn Denoiser, cfg: &SamplerConfig, n_samples: usize, seed: u64, trajectory: bool) -> Result<SampleOutput> {
    cfg.validate()?;
    if cfg.proc != ForwardProcess::Vp {
        return Err(invalid("the ancestral sampler requires the variance-preserving process"));
    }
    let mut warnings = Vec::new();
    if cfg.schedule.lambda_max() < 10.0 {
        warnings.push(format!("lambda_max = {} < 10: the final state is still noticeably noisy", cfg.schedule.lambda_max()));
    }
    let proc = cfg.proc;
    let dim = model.dim();
    let (samples, traj) = run_chains(n_samples, seed, trajectory, |_, rng, record| {
        let mut z = prior_draw(cfg, rng, dim);
        let mut states = Vec::new();
        let mut t = cfg.time(cfg.steps);
        let mut lt = cfg.schedule.log_snr(t);
        if record {
            states.push((t, lt, z.clone()));
        }
        for i in (0..cfg.steps).rev() {
            let u = cfg.time(i);
            let lu = cfg.schedule.log_snr(u);
            let x = denoise(model, &z, lt, proc)?;
            if i == 0 {
                z = x;
            } else {
                let r = (lt - lu).exp();
                let scale = r * proc.alpha(lu) / proc.alpha(lt);
                let sd = (proc.sigma_sq(lu) * -(lt - lu).exp_m1()).sqrt();
                let au = proc.alpha(lu);
                let noise = gaussian(rng, dim);
                for ((zk, xk), e) in z.iter_mut().zip(&x).zip(&noise) {
                    *zk = scale * *zk + (1.0 - r) * au * xk + sd * e;
                }
            }
            check_finite(&z, cfg.steps - i)?;
            t = u;
            lt = lu;
            if record {
                states.push((t, lt, z.clone()));
            }
        }
        Ok((z, record.then_some(Trajectory { states })))
    })?;
    Ok(SampleOutput { samples, trajectory: traj, warnings })
}

/// Probability-flow velocity `dz/dt = f z - ½ g² s`.
fn ode_velocity(model: &dyn Denoiser, cfg: &SamplerConfig, z: &[f64], t: f64) -> Result<Vec<f64>> {
    let lambda = cfg.schedule.log_snr(t);
    let c = sde_coefficients(lambda, cfg.schedule.dlog_snr_dt(t), cfg.proc);
    let s = score(model, z, lambda, cfg.proc)?;
    Ok(z.iter().zip(&s).map(|(z, s)| c.drift_coeff * z - 0.5 * c.diffusion_sq * s).collect())
}

fn axpy(z: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    z.iter().zip(d).map(|(z, d)| z + h * d).collect()
}

/// Integrates the probability-flow ODE from `z` at `t = 1` to `t = 0`.
pub fn solve_ode(
    model: &dyn Denoiser,
    cfg: &SamplerConfig,
    z1: Vec<f64>,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<(Vec<f64>, Option<Trajectory>)> {
    let heun = match cfg.kind {
        SamplerKind::OdeEuler => false,
        SamplerKind::OdeHeun => true,
        other => return Err(invalid(format!("{} is not an ODE sampler", other.name()))),
    };
    let mut z = z1;
    let mut states = Vec::new();
    if record {
        states.push((1.0, cfg.schedule.log_snr(1.0), z.clone()));
    }
    for i in (0..cfg.steps).rev() {
        let mut t = cfg.time(i + 1);
        let u = cfg.time(i);
        if heun && cfg.churn.s_churn > 0.0 {
            (z, t) = apply_churn(cfg, z, t, rng)?;
        }
        let d = ode_velocity(model, cfg, &z, t)?;
        let h = u - t;
        let euler = axpy(&z, h, &d);
        z = if heun {
            let d2 = ode_velocity(model, cfg, &euler, u)?;
            let avg: Vec<f64> = d.iter().zip(&d2).map(|(a, b)| 0.5 * (a + b)).collect();
            axpy(&z, h, &avg)
        } else {
            euler
        };
        check_finite(&z, cfg.steps - i)?;
        if record {
            states.push((u, cfg.schedule.log_snr(u), z.clone()));
        }
    }
    Ok((z, record.then_some(Trajectory { states })))
}

/// Raises the noise level at time `t` per the churn settings; returns the new
/// state and the time it sits at.
fn apply_churn(cfg: &SamplerConfig, z: Vec<f64>, t: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
    let ch = cfg.churn;
    let lambda = cfg.schedule.log_snr(t);
    let sigma = cfg.proc.sigma(lambda);
    if sigma < ch.s_tmin || sigma > ch.s_tmax {
        return Ok((z, t));
    }
    let gamma = (ch.s_churn / cfg.steps as f64).min(std::f64::consts::SQRT_2 - 1.0);
    let target = (lambda - 2.0 * gamma.ln_1p()).max(cfg.schedule.lambda_min());
    let t_hat = cfg.schedule.time(target).clamp(0.0, 1.0);
    let l_hat = cfg.schedule.log_snr(t_hat);
    let ratio = cfg.proc.alpha(l_hat) / cfg.proc.alpha(lambda);
    let extra = (cfg.proc.sigma_sq(l_hat) - ratio * ratio * cfg.proc.sigma_sq(lambda)).max(0.0).sqrt();
    let noise = gaussian(rng, z.len());
    Ok((z.iter().zip(&noise).map(|(z, e)| ratio * z + ch.s_noise * extra * e).collect(), t_hat))
}

/// Deterministic probability-flow sampling from prior draws. Returns the
/// denoised estimate at `t = 0`.
pub fn sample_ode(model: &dyn Denoiser, cfg: &SamplerConfig, n_samples: usize, seed: u64, trajectory: bool) -> Result<SampleOutput> {
    cfg.validate()?;
    let dim = model.dim();
    let (samples, traj) = run_chains(n_samples, seed, trajectory, |_, rng, record| {
        let z1 = prior_draw(cfg, rng, dim);
        let (z0, tr) = solve_ode(model, cfg, z1, rng, record)?;
        Ok((denoise(model, &z0, cfg.schedule.lambda_max(), cfg.proc)?, tr))
    })?;
    Ok(SampleOutput { samples, trajectory: traj, warnings: Vec::new() })
}

/// Euler–Maruyama on the reverse SDE `dz = [f z - g² s] dt + g dW̄`. The last
/// step adds no noise and the denoised estimate at `t = 0` is returned.
pub fn sample_sde(model: &dyn Denoiser, cfg: &SamplerConfig, n_samples: usize, seed: u64, trajectory: bool) -> Result<SampleOutput> {
    cfg.validate()?;
    let dim = model.dim();
    let proc = cfg.proc;
    let (samples, traj) = run_chains(n_samples, seed, trajectory, |_, rng, record| {
        let mut z = prior_draw(cfg, rng, dim);
        let mut states = Vec::new();
        if record {
            states.push((1.0, cfg.schedule.log_snr(1.0), z.clone()));
        }
        for i in (0..cfg.steps).rev() {
            let (t, u) = (cfg.time(i + 1), cfg.time(i));
            let lambda = cfg.schedule.log_snr(t);
            let c = sde_coefficients(lambda, cfg.schedule.dlog_snr_dt(t), proc);
            let s = score(model, &z, lambda, proc)?;
            let h = t - u;
            let g = (c.diffusion_sq.max(0.0) * h).sqrt();
            let noise = if i > 0 { gaussian(rng, dim) } else { vec![0.0; dim] };
            for ((zk, sk), e) in z.iter_mut().zip(&s).zip(&noise) {
                *zk -= (c.drift_coeff * *zk - c.diffusion_sq * sk) * h;
                *zk += g * e;
            }
            check_finite(&z, cfg.steps - i)?;
            if record {
                states.push((u, cfg.schedule.log_snr(u), z.clone()));
            }
        }
        Ok((denoise(model, &z, cfg.schedule.lambda_max(), proc)?, record.then_some(Trajectory { states })))
    })?;
    Ok(SampleOutput { samples, trajectory: traj, warnings: Vec::new() })
}

/// Dispatches on `cfg.kind`.
pub fn sample(model: &dyn Denoiser, cfg: &SamplerConfig, n_samples: usize, seed: u64, trajectory: bool) -> Result<SampleOutput> {
    match cfg.kind {
        SamplerKind::Ddpm => sample_ddpm(model, cfg, n_samples, seed, trajectory),
        SamplerKind::OdeEuler | SamplerKind::OdeHeun => sample_ode(model, cfg, n_samples, seed, trajectory),
        SamplerKind::SdeEuler => sample_sde(model, cfg, n_samples, seed, trajectory),
    }
}

/// Wasserstein-1 distance between two empirical distributions on the line,
/// `∫ |F_a - F_b| dx`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("Wasserstein distance of an empty sample"));
    }
    let sort = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(|x, y| x.total_cmp(y));
        v
    };
    let (a, b) = (sort(a), sort(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    Ok(total)
}

/// Sample mean and unbiased variance of the first coordinate.
pub fn moments(samples: &[Vec<f64>]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s[0]).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
