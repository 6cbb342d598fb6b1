//! Numerical checks of the weighted-loss identities on analytic oracles.
//!
//! `L(t)` is the joint KL of the optimal model from time `t` onward, so
//! `L(1)` is the prior term and `dL/dt = ½ λ'(t) mse(λ_t)`.

use crate::error::{Error, Result};
use crate::oracle::{JointKl, MixtureOracle};
use crate::process::ForwardProcess;
use crate::quadrature::{linspace, trapezoid, LegendreRule};
use crate::schedules::{truncate, NoiseSchedule, Schedule, Truncated};
use crate::weightings::{first_increase, make_weighting, Weighting, WeightingParams};
use rayon::prelude::*;

/// Log-SNR range used by the identity checks.
pub const THEOREM_LAMBDA_MIN: f64 = -12.0;
pub const THEOREM_LAMBDA_MAX: f64 = 12.0;

/// Outcome of one identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
    pub rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub grid_size: usize,
}

impl IdentityReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64, grid_size: usize) -> Self {
        let abs_err = (lhs - rhs).abs();
        let scale = lhs.abs().max(rhs.abs());
        let rel_err = if scale > 0.0 { abs_err / scale } else { 0.0 };
        let pass = if lhs.abs() < 1e-8 { abs_err <= tolerance } else { rel_err <= tolerance };
        Self { name: name.into(), lhs, rhs, abs_err, rel_err, tolerance, pass: pass && lhs.is_finite() && rhs.is_finite(), grid_size }
    }

    /// CSV header matching [`IdentityReport::csv_row`].
    pub const CSV_HEADER: &'static str = "name,lhs,rhs,abs_err,rel_err,pass";

    pub fn csv_row(&self) -> String {
        format!("{},{:.16e},{:.16e},{:.16e},{:.16e},{}", self.name, self.lhs, self.rhs, self.abs_err, self.rel_err, self.pass)
    }
}

/// Truncated schedule on the theorem range.
pub fn theorem_schedule(base: Schedule) -> Result<Truncated> {
    truncate(base, THEOREM_LAMBDA_MAX, THEOREM_LAMBDA_MIN)
}

fn table(oracle: &MixtureOracle, schedule: &dyn NoiseSchedule, proc: ForwardProcess) -> Result<JointKl> {
    JointKl::new(oracle, proc, schedule.lambda_min(), schedule.lambda_max())
}

/// Time grid on `[0, 1]` with about `n` nodes: half uniform in `t`, half
/// uniform in `λ`, plus the times of the weighting's kinks.
pub fn theorem_grid(schedule: &dyn NoiseSchedule, weighting: Option<&Weighting>, n: usize) -> Vec<f64> {
    let half = (n / 2).max(2);
    let (lo, hi) = (schedule.lambda_min(), schedule.lambda_max());
    let mut ts = linspace(0.0, 1.0, half);
    ts.extend(linspace(hi, lo, n - half).into_iter().map(|l| schedule.time(l).clamp(0.0, 1.0)));
    if let Some(w) = weighting {
        ts.extend(w.kinks().into_iter().filter(|k| *k > lo && *k < hi).map(|k| schedule.time(k)));
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    ts
}

/// Finite-difference `dL/dt` against `½ λ'(t) mse(λ_t)` at the interior
/// points of an `n_points` uniform grid. Reports the worst point.
pub fn verify_time_derivative(
    oracle: &MixtureOracle,
    schedule: &dyn NoiseSchedule,
    proc: ForwardProcess,
    n_points: usize,
    step: f64,
) -> Result<IdentityReport> {
    if n_points < 3 || step <= 0.0 || step >= 0.5 / (n_points - 1) as f64 {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} does not fit a {n_points}-point grid")));
    }
    let kl = table(oracle, schedule, proc)?;
    let ts = linspace(0.0, 1.0, n_points);
    let pairs: Vec<(f64, f64)> = ts[1..n_points - 1]
        .par_iter()
        .map(|&t| {
            let fd = (kl.at_time(t + step, schedule) - kl.at_time(t - step, schedule)) / (2.0 * step);
            let exact = 0.5 * schedule.dlog_snr_dt(t) * oracle.mse(schedule.log_snr(t), proc);
            (fd, exact)
        })
        .collect();
    let mut worst = IdentityReport::new("time_derivative", pairs[0].0, pairs[0].1, 1e-3, n_points);
    for &(fd, exact) in &pairs[1..] {
        let r = IdentityReport::new("time_derivative", fd, exact, 1e-3, n_points);
        if r.rel_err > worst.rel_err {
            worst = r;
        }
    }
    if pairs.iter().any(|p| !(p.0 < 0.0)) {
        worst.pass = false;
    }
    worst.name = format!("time_derivative[{}]", schedule.name());
    Ok(worst)
}

fn boundary_terms(kl: &JointKl, w: &Weighting, schedule: &dyn NoiseSchedule) -> Result<(f64, f64, f64, f64)> {
    let (l0, l1) = (kl.at_time(0.0, schedule), kl.at_time(1.0, schedule));
    let (w0, w1) = (w.eval(schedule.lambda_max()), w.eval(schedule.lambda_min()));
    if ![l0, l1, w0, w1].iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite boundary term; is the schedule truncated?".into()));
    }
    Ok((l0, l1, w0, w1))
}

/// `∫ -(dL/dt) w dt` against `∫ (d/dt w) L dt + w(λmax) L(0) - w(λmin) L(1)`,
/// both sides by the trapezoid rule.
pub fn verify_integration_by_parts(
    oracle: &MixtureOracle,
    schedule: &dyn NoiseSchedule,
    weighting: &Weighting,
    proc: ForwardProcess,
    n: usize,
) -> Result<IdentityReport> {
    let kl = table(oracle, schedule, proc)?;
    let (l0, l1, w0, w1) = boundary_terms(&kl, weighting, schedule)?;
    let ts = theorem_grid(schedule, Some(weighting), n);
    let (left, right): (Vec<f64>, Vec<f64>) = ts
        .par_iter()
        .map(|&t| {
            let lambda = schedule.log_snr(t);
            let dl = schedule.dlog_snr_dt(t);
            let dl_dt = 0.5 * dl * oracle.mse(lambda, proc);
            (-dl_dt * weighting.eval(lambda), weighting.derivative(lambda) * dl * kl.at_time(t, schedule))
        })
        .unzip();
    let lhs = trapezoid(&ts, &left);
    let rhs = trapezoid(&ts, &right) + w0 * l0 - w1 * l1;
    Ok(IdentityReport::new(format!("integration_by_parts[{},{}]", weighting.name(), schedule.name()), lhs, rhs, 1e-4, ts.len()))
}

/// `p_w`: density `(d/dt) w(λ_t) / w(λmin)` on `(0, 1]` plus an atom of mass
/// `w(λmax)/w(λmin)` at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwDistribution {
    pub weighting: Weighting,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `w(λmin)`, the normalizer.
    pub normalizer: f64,
    pub atom: f64,
    pub continuous_mass: f64,
    pub grid: Vec<f64>,
}

impl PwDistribution {
    pub fn density(&self, t: f64, schedule: &dyn NoiseSchedule) -> f64 {
        self.weighting.derivative(schedule.log_snr(t)) * schedule.dlog_snr_dt(t) / self.normalizer
    }

    pub fn total_mass(&self) -> f64 {
        self.atom + self.continuous_mass
    }

    /// `E_{p_w}[f(t)]`.
    pub fn expect(&self, schedule: &dyn NoiseSchedule, f: impl Fn(f64) -> f64 + Sync) -> Result<f64> {
        Ok(self.atom * f(0.0) + integrate_grid(&self.grid, |t| self.density(t, schedule) * f(t))?)
    }
}

/// Gauss–Legendre (4 points) on every cell of `grid`.
fn integrate_grid(grid: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Result<f64> {
    let rule = LegendreRule::new(4)?;
    let parts: Vec<f64> = grid.par_windows(2).map(|c| rule.integrate(c[0], c[1], &f)).collect();
    Ok(parts.iter().sum())
}

const PW_GRID: usize = 1001;
const MONOTONICITY_GRID: usize = 4001;

/// Builds `p_w` for a monotonic weighting on a truncated schedule.
pub fn build_pw(weighting: &Weighting, schedule: &dyn NoiseSchedule) -> Result<PwDistribution> {
    let (lo, hi) = (schedule.lambda_min(), schedule.lambda_max());
    if let Some((a, b)) = first_increase(weighting, &linspace(lo, hi, MONOTONICITY_GRID))? {
        return Err(Error::NotMonotonic { name: weighting.name(), lo: a, hi: b, w_lo: weighting.eval(a), w_hi: weighting.eval(b) });
    }
    let normalizer = weighting.eval(lo);
    if !(normalizer > 1e-300) || !normalizer.is_finite() {
        return Err(Error::Degenerate(normalizer));
    }
    let grid = theorem_grid(schedule, Some(weighting), PW_GRID);
    let mut pw = PwDistribution {
        weighting: *weighting,
        lambda_min: lo,
        lambda_max: hi,
        normalizer,
        atom: weighting.eval(hi) / normalizer,
        continuous_mass: 0.0,
        grid,
    };
    pw.continuous_mass = integrate_grid(&pw.grid, |t| pw.density(t, schedule))?;
    Ok(pw)
}

/// Total mass of `p_w` against one.
pub fn verify_pw_mass(weighting: &Weighting, schedule: &dyn NoiseSchedule) -> Result<IdentityReport> {
    let pw = build_pw(weighting, schedule)?;
    Ok(IdentityReport::new(format!("pw_mass[{},{}]", weighting.name(), schedule.name()), pw.total_mass(), 1.0, 1e-8, pw.grid.len()))
}

/// `L_w` against `w(λmin) (E_{p_w}[L(t)] - L(1))`.
pub fn verify_pw_expectation(
    oracle: &MixtureOracle,
    schedule: &dyn NoiseSchedule,
    weighting: &Weighting,
    proc: ForwardProcess,
) -> Result<IdentityReport> {
    let pw = build_pw(weighting, schedule)?;
    let kl = table(oracle, schedule, proc)?;
    let lw = integrate_grid(&pw.grid, |t| {
        let lambda = schedule.log_snr(t);
        -0.5 * schedule.dlog_snr_dt(t) * oracle.mse(lambda, proc) * weighting.eval(lambda)
    })?;
    let e = pw.expect(schedule, |t| kl.at_time(t, schedule))?;
    Ok(IdentityReport::new(
        format!("pw_expectation[{},{}]", weighting.name(), schedule.name()),
        lw,
        pw.normalizer * (e - kl.at_time(1.0, schedule)),
        1e-4,
        pw.grid.len(),
    ))
}

/// Area identity with Riemann–Stieltjes sums tagged at cell midpoints on an
/// `n`-point grid: `w(λmin) L(1) + Σ w(t_m) (L(t_i) - L(t_{i+1}))` against
/// `w(λmax) L(0) + Σ L(t_m) (w(t_{i+1}) - w(t_i))`.
pub fn verify_area_identity(
    oracle: &MixtureOracle,
    schedule: &dyn NoiseSchedule,
    weighting: &Weighting,
    proc: ForwardProcess,
    n: usize,
) -> Result<IdentityReport> {
    build_pw(weighting, schedule)?;
    let kl = table(oracle, schedule, proc)?;
    let (l0, l1, w0, w1) = boundary_terms(&kl, weighting, schedule)?;
    let ts = theorem_grid(schedule, Some(weighting), n);
    let at = |t: f64| (weighting.eval(schedule.log_snr(t)), kl.at_time(t, schedule));
    let nodes: Vec<(f64, f64)> = ts.par_iter().map(|&t| at(t)).collect();
    let mids: Vec<(f64, f64)> = ts.par_windows(2).map(|c| at(0.5 * (c[0] + c[1]))).collect();
    let mut lhs = w1 * l1;
    let mut rhs = w0 * l0;
    for (c, m) in nodes.windows(2).zip(&mids) {
        lhs += m.0 * (c[0].1 - c[1].1);
        rhs += m.1 * (c[1].0 - c[0].0);
    }
    Ok(IdentityReport::new(format!("area_identity[{},{}]", weighting.name(), schedule.name()), lhs, rhs, 1e-3, ts.len()))
}

/// Finite-difference `dL/dλ` against `½σ² D_F` at each point; reports the
/// worst point.
pub fn verify_fisher(oracle: &MixtureOracle, proc: ForwardProcess, lambdas: &[f64], step: f64) -> Result<IdentityReport> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("no log-SNR points".into()));
    }
    let lo = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if step <= 0.0 || !(lo - step).is_finite() || lo - step == lo || hi + step == hi {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} underflows on [{lo}, {hi}]")));
    }
    let kl = JointKl::new(oracle, proc, lo - 1.0, hi + 1.0)?;
    let pairs: Vec<(f64, f64)> = lambdas
        .par_iter()
        .map(|&l| ((kl.at_lambda(l + step) - kl.at_lambda(l - step)) / (2.0 * step), oracle.fisher_term(l, proc)))
        .collect();
    let mut worst: Option<IdentityReport> = None;
    for (fd, f) in pairs {
        let r = IdentityReport::new("fisher", fd, f, 1e-3, lambdas.len());
        if worst.as_ref().is_none_or(|w| r.rel_err > w.rel_err || !r.pass) {
            worst = Some(r);
        }
    }
    Ok(worst.unwrap())
}

/// Weightings checked by [`verify_all`].
pub const SUITE_WEIGHTINGS: [&str; 4] = ["elbo", "vpred-cosine", "sigmoid-2", "edm-monotonic"];

/// Oracles used by [`verify_all`]: a standard Gaussian and a symmetric pair.
pub fn suite_oracles() -> Result<Vec<(&'static str, MixtureOracle)>> {
    Ok(vec![("gaussian", MixtureOracle::gaussian(0.0, 1.0)?), ("pair", MixtureOracle::symmetric_pair(1.0, 0.25)?)])
}

/// Runs every identity check on the suite oracles under the cosine and
/// fm-ot schedules truncated to `[-12, 12]`.
pub fn verify_all() -> Result<Vec<IdentityReport>> {
    let proc = ForwardProcess::Vp;
    let schedules = [theorem_schedule(Schedule::Cosine { shift: 0.0 })?, theorem_schedule(Schedule::FlowMatchingOt)?];
    let weightings = SUITE_WEIGHTINGS.iter().map(|n| make_weighting(n, &WeightingParams::default())).collect::<Result<Vec<_>>>()?;
    let fisher_points = linspace(-10.0, 10.0, 11);
    let mut out = Vec::new();
    for (oname, oracle) in suite_oracles()? {
        let tag = |mut r: IdentityReport| {
            r.name = format!("{oname}:{}", r.name);
            r
        };
        for s in &schedules {
            out.push(tag(verify_time_derivative(&oracle, s, proc, 21, 1e-4)?));
            for w in &weightings {
                out.push(tag(verify_integration_by_parts(&oracle, s, w, proc, 4001)?));
                out.push(tag(verify_pw_mass(w, s)?));
                out.push(tag(verify_pw_expectation(&oracle, s, w, proc)?));
                out.push(tag(verify_area_identity(&oracle, s, w, proc, 4001)?));
            }
        }
        out.push(tag(verify_fisher(&oracle, proc, &fisher_points, 1e-3)?));
    }
    Ok(out)
}
