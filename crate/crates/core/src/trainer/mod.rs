//! Toy-scale training of a denoiser with fixed or adaptive noise schedules.

mod checkpoint;
mod data;
mod net;

pub use checkpoint::{from_bytes, read_checkpoint, to_bytes, write_checkpoint, MAGIC, VERSION};
pub use data::{make_dataset, Dataset, DatasetParams, DATASET_NAMES};
pub use net::{DenoiserNet, NetConfig};

use crate::denoiser::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::estimator::{low_discrepancy_times, DataSource};
use crate::process::{convert_prediction, convert_scalar, diffuse, ForwardProcess, PredictionKind, DEFAULT_SIGMA_DATA};
use crate::rng::{stream_rng, Stream};
use crate::schedules::{adaptive_schedule, make_schedule, truncate, AdaptiveScheduleState, NoiseSchedule, ScheduleParams, ADAPTIVE_BINS};
use crate::weightings::{make_weighting, Weighting, WeightingParams};
use rand::Rng;
use rand_distr::StandardNormal;

/// What each example contributes to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainLoss {
    /// `½ (w/p) ‖ε - ε̂‖²`.
    Weighted,
    /// `½ ‖k - k̂‖²` in the given parameterization, unweighted.
    Parameterized(PredictionKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// A schedule name or `adaptive`.
    pub schedule: String,
    pub weighting: String,
    pub weighting_params: WeightingParams,
    pub seed: u64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub loss: TrainLoss,
    pub proc: ForwardProcess,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            clip_norm: 1.0,
            batch_size: 128,
            iterations: 2000,
            schedule: "cosine".into(),
            weighting: "elbo".into(),
            weighting_params: WeightingParams::default(),
            seed: 0,
            lambda_min: -20.0,
            lambda_max: 20.0,
            loss: TrainLoss::Weighted,
            proc: ForwardProcess::Vp,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be finite and nonnegative"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid("clip norm must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if !(self.lambda_min < self.lambda_max) {
            return Err(invalid("need lambda_min < lambda_max"));
        }
        Ok(())
    }

    /// `key=value` lines describing the run.
    pub fn echo(&self) -> String {
        let loss = match self.loss {
            TrainLoss::Weighted => "weighted".to_string(),
            TrainLoss::Parameterized(k) => format!("{k:?}").to_lowercase(),
        };
        format!(
            "learning_rate={}\nclip_norm={}\nbatch_size={}\niterations={}\nschedule={}\nweighting={}\nseed={}\nlambda_min={}\nlambda_max={}\nloss={}\nprocess={}\n",
            self.learning_rate,
            self.clip_norm,
            self.batch_size,
            self.iterations,
            self.schedule,
            self.weighting,
            self.seed,
            self.lambda_min,
            self.lambda_max,
            loss,
            self.proc.name()
        )
    }

    pub fn weighting(&self) -> Result<Weighting> {
        make_weighting(&self.weighting, &self.weighting_params)
    }

    /// The fixed schedule, truncated to the configured range.
    pub fn fixed_schedule(&self) -> Result<Box<dyn NoiseSchedule>> {
        let base = make_schedule(&self.schedule, &ScheduleParams::default())?;
        let (lo, hi) = base.support();
        Ok(Box::new(truncate(base, hi.min(self.lambda_max), lo.max(self.lambda_min))?))
    }
}

/// Adam with the conventional defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, n: usize) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` to global norm at most `max_norm`; returns the norm before.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// One minibatch of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
    pub t: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Schedule density `p(λ)` at each draw.
    pub density: Vec<f64>,
}

/// Draws batch `iter`: low-discrepancy times, data and noise.
pub fn draw_batch(data: &dyn DataSource, schedule: &dyn NoiseSchedule, size: usize, seed: u64, iter: u64) -> Result<Batch> {
    if size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let t = low_discrepancy_times(size, stream_rng(seed, Stream::Times, iter).random::<f64>());
    let lambda: Vec<f64> = t.iter().map(|&t| schedule.log_snr(t)).collect();
    let density = lambda.iter().map(|&l| schedule.density(l)).collect();
    let mut data_rng = stream_rng(seed, Stream::Data, iter);
    let mut noise_rng = stream_rng(seed, Stream::Noise, iter);
    let d = data.dim();
    let mut x = Vec::with_capacity(size);
    let mut eps = Vec::with_capacity(size);
    for _ in 0..size {
        let mut p = vec![0.0; d];
        data.draw_into(&mut data_rng, &mut p);
        x.push(p);
        eps.push((0..d).map(|_| noise_rng.sample(StandardNormal)).collect());
    }
    Ok(Batch { x, eps, t, lambda, density })
}

/// Batch objective, its parameter gradient, and each example's
/// `‖ε - ε̂‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub eps_sq: Vec<f64>,
}

pub fn batch_loss(net: &DenoiserNet, batch: &Batch, weighting: &Weighting, loss: TrainLoss, proc: ForwardProcess) -> Result<BatchLoss> {
    let n = batch.x.len();
    let kind = net.kind();
    let residual = match loss {
        TrainLoss::Weighted => PredictionKind::Eps,
        TrainLoss::Parameterized(k) => k,
    };
    let sd = DEFAULT_SIGMA_DATA;
    let mut grad = vec![0.0; net.param_count()];
    let mut total = 0.0;
    let mut eps_sq = Vec::with_capacity(n);
    for i in 0..n {
        let lambda = batch.lambda[i];
        let s = diffuse(&batch.x[i], lambda, &batch.eps[i], proc)?;
        let scale = match loss {
            TrainLoss::Weighted => {
                let p = batch.density[i];
                if !(p > 0.0) {
                    return Err(Error::Numerical(format!("schedule density {p} at lambda={lambda}")));
                }
                weighting.eval(lambda) / p
            }
            TrainLoss::Parameterized(_) => 1.0,
        };
        // Every conversion is affine in the prediction with this slope.
        let slope = convert_scalar(1.0, kind, residual, 0.0, lambda, proc, sd)?;
        let target = convert_prediction(&batch.eps[i], PredictionKind::Eps, residual, &s.z, lambda, proc, sd)?;
        let mut esq = 0.0;
        let value = net.value_and_grad(&s.z, lambda, &mut grad, |out| {
            let pred = convert_prediction(out, kind, residual, &s.z, lambda, proc, sd)?;
            let eps_hat = convert_prediction(out, kind, PredictionKind::Eps, &s.z, lambda, proc, sd)?;
            esq = batch.eps[i].iter().zip(&eps_hat).map(|(a, b)| (a - b) * (a - b)).sum();
            let sq: f64 = target.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
            let g = target.iter().zip(&pred).map(|(a, b)| -scale * (a - b) * slope / n as f64).collect();
            Ok((0.5 * scale * sq, g))
        })?;
        total += value;
        eps_sq.push(esq);
    }
    Ok(BatchLoss { loss: total / n as f64, grad, eps_sq })
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: f64,
    pub lambda_bins_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub history: Vec<HistoryRow>,
    /// `(iteration, value)` pairs from the periodic evaluator.
    pub evals: Vec<(usize, f64)>,
    pub adaptive: Option<AdaptiveScheduleState>,
}

/// History as CSV `iter,loss,lambda_bins_entropy`.
pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut s = String::from("iter,loss,lambda_bins_entropy\n");
    for r in history {
        s.push_str(&format!("{},{:.16e},{:.16e}\n", r.iter, r.loss, r.lambda_bins_entropy));
    }
    s
}

/// Entropy of a schedule's mass over equal-width λ bins.
fn schedule_entropy(schedule: &dyn NoiseSchedule, lo: f64, hi: f64) -> f64 {
    let edges = crate::quadrature::linspace(lo, hi, ADAPTIVE_BINS + 1);
    edges.windows(2).map(|e| schedule.time(e[0]) - schedule.time(e[1])).filter(|m| *m > 0.0).map(|m| -m * m.ln()).sum()
}

/// Periodic evaluation hook for [`train_with_eval`].
pub struct Evaluator<'a> {
    pub every: usize,
    pub eval: &'a dyn Fn(&DenoiserNet) -> Result<f64>,
}

/// Trains `net` in place.
///
/// With `cfg.schedule == "adaptive"` the schedule is rebuilt from the EMA
/// table before every batch, and each example pushes `w(λ)‖ε - ε̂‖²/d` into
/// the bin of its λ.
pub fn train(
    net: &mut DenoiserNet,
    data: &dyn DataSource,
    cfg: &TrainConfig,
    adaptive: Option<AdaptiveScheduleState>,
) -> Result<TrainOutput> {
    train_with_eval(net, data, cfg, adaptive, None)
}

/// [`train`], also recording `eval(net)` before every `every`-th iteration
/// and after the last one.
pub fn train_with_eval(
    net: &mut DenoiserNet,
    data: &dyn DataSource,
    cfg: &TrainConfig,
    adaptive: Option<AdaptiveScheduleState>,
    evaluator: Option<Evaluator>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if evaluator.as_ref().is_some_and(|e| e.every == 0) {
        return Err(invalid("evaluation interval must be positive"));
    }
    if data.dim() != net.dim() {
        return Err(Error::DimensionMismatch { expected: net.dim(), got: data.dim() });
    }
    let weighting = cfg.weighting()?;
    let mut state = if cfg.schedule == "adaptive" {
        Some(match adaptive {
            Some(s) => s,
            None => AdaptiveScheduleState::new(cfg.lambda_min, cfg.lambda_max)?,
        })
    } else {
        None
    };
    let fixed = if state.is_none() { Some(cfg.fixed_schedule()?) } else { None };
    let fixed_entropy = fixed.as_ref().map(|s| schedule_entropy(s.as_ref(), s.lambda_min(), s.lambda_max()));
    let mut adam = Adam::new(cfg.learning_rate, net.param_count());
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut evals = Vec::new();
    let dim = net.dim() as f64;
    for iter in 0..cfg.iterations {
        if let Some(e) = &evaluator {
            if iter % e.every == 0 {
                evals.push((iter, (e.eval)(net)?));
            }
        }
        let adaptive_sched = state.as_ref().map(adaptive_schedule).transpose()?;
        let schedule: &dyn NoiseSchedule = match (&adaptive_sched, &fixed) {
            (Some(s), _) => s,
            (None, Some(s)) => s.as_ref(),
            (None, None) => unreachable!(),
        };
        let batch = draw_batch(data, schedule, cfg.batch_size, cfg.seed, iter as u64)?;
        let mut out = batch_loss(net, &batch, &weighting, cfg.loss, cfg.proc)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite { step: iter, what: "training loss".into() });
        }
        clip_global_norm(&mut out.grad, cfg.clip_norm);
        adam.step(net.params_mut(), &out.grad);
        let entropy = match state.as_mut() {
            Some(st) => {
                for (l, e) in batch.lambda.iter().zip(&out.eps_sq) {
                    st.update(*l, weighting.eval(*l) * e / dim)?;
                }
                st.entropy()
            }
            None => fixed_entropy.unwrap(),
        };
        history.push(HistoryRow { iter, loss: out.loss, lambda_bins_entropy: entropy });
    }
    if let Some(e) = &evaluator {
        evals.push((cfg.iterations, (e.eval)(net)?));
    }
    Ok(TrainOutput { history, evals, adaptive: state })
}

/// `E_q |s_net - s_oracle|²` at `lambda`, by Gauss–Hermite quadrature over
/// the noised marginal of a one-dimensional oracle.
pub fn score_error(model: &dyn Denoiser, oracle: &crate::oracle::MixtureOracle, lambda: f64, proc: ForwardProcess) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: model.dim() });
    }
    let rule = crate::quadrature::NormalRule::new(64)?;
    let (a, s) = proc.checked(lambda)?;
    let sd = (a * a * oracle.component_std().powi(2) + s * s).sqrt();
    let mut total = 0.0;
    for (w, m) in oracle.weights().iter().zip(oracle.means()) {
        total += w * rule.expect(|u| {
            let z = a * m + sd * u;
            let raw = model.predict(&[z], lambda)[0];
            let score = convert_scalar(raw, model.kind(), PredictionKind::Score, z, lambda, proc, DEFAULT_SIGMA_DATA).unwrap_or(f64::NAN);
            (score - oracle.exact_score(z, lambda, proc)).powi(2)
        });
    }
    if !total.is_finite() {
        return Err(Error::Numerical(format!("score error is not finite at lambda={lambda}")));
    }
    Ok(total)
}
