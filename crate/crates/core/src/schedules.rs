//! Noise schedules: maps between time `t ∈ [0, 1]` and log-SNR `λ`.

use crate::error::{invalid, Error, Result};
use crate::special::{norm_quantile, norm_sf, normal_pdf, sech};
use std::f64::consts::PI;
use std::fmt;

/// Default truncation interval for training schedules.
pub const DEFAULT_LAMBDA_MIN: f64 = -20.0;
pub const DEFAULT_LAMBDA_MAX: f64 = 20.0;

/// A strictly decreasing bijection between time and log-SNR.
pub trait NoiseSchedule: Send + Sync + fmt::Debug {
    /// `λ = f(t)`.
    fn log_snr(&self, t: f64) -> f64;
    /// `t = f⁻¹(λ)`.
    fn time(&self, lambda: f64) -> f64;
    /// `p(λ) = -d/dλ f⁻¹(λ)`.
    fn density(&self, lambda: f64) -> f64;
    /// `dλ/dt` at `t`.
    fn dlog_snr_dt(&self, t: f64) -> f64;
    /// Range of λ on which the schedule is defined, as `(λmin, λmax)`.
    fn support(&self) -> (f64, f64);
    fn name(&self) -> String;

    fn lambda_max(&self) -> f64 {
        self.log_snr(0.0)
    }
    fn lambda_min(&self) -> f64 {
        self.log_snr(1.0)
    }
}

/// Closed-form schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Cosine schedule; `shift` is `ln(64/d)` for the resolution-shifted variant.
    Cosine { shift: f64 },
    /// Training-time EDM schedule: λ ~ N(2.4, 2.4²).
    EdmTrain { mean: f64, std: f64 },
    /// Sampling-time EDM schedule of Karras et al.
    EdmSample { rho: f64, sigma_min: f64, sigma_max: f64 },
    /// Flow matching with optimal-transport paths.
    FlowMatchingOt,
}

/// Parameters for [`make_schedule`]. Unused fields are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub resolution: Option<f64>,
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { resolution: None, rho: 7.0, sigma_min: 0.002, sigma_max: 80.0 }
    }
}

/// Names accepted by [`make_schedule`].
pub const SCHEDULE_NAMES: [&str; 5] = ["cosine", "shifted-cosine", "edm-train", "edm-sample", "fm-ot"];

/// Builds a closed-form schedule by name.
pub fn make_schedule(name: &str, params: &ScheduleParams) -> Result<Schedule> {
    match name {
        "cosine" => Ok(Schedule::Cosine { shift: 0.0 }),
        "shifted-cosine" => {
            let d = params.resolution.ok_or(Error::MissingParameter("resolution"))?;
            if !(d > 0.0) {
                return Err(invalid("resolution must be positive"));
            }
            Ok(Schedule::Cosine { shift: (64.0 / d).ln() })
        }
        "edm-train" => Ok(Schedule::EdmTrain { mean: 2.4, std: 2.4 }),
        "edm-sample" => {
            let ScheduleParams { rho, sigma_min, sigma_max, .. } = *params;
            if !(sigma_min > 0.0 && sigma_max > 0.0) {
                return Err(invalid("sigma_min and sigma_max must be positive"));
            }
            if sigma_min >= sigma_max {
                return Err(invalid("sigma_min must be below sigma_max"));
            }
            if !(rho > 0.0) {
                return Err(invalid("rho must be positive"));
            }
            Ok(Schedule::EdmSample { rho, sigma_min, sigma_max })
        }
        "fm-ot" => Ok(Schedule::FlowMatchingOt),
        _ => Err(Error::UnknownName { kind: "schedule", name: name.to_string() }),
    }
}

impl Schedule {
    fn edm_sample_consts(rho: f64, sigma_min: f64, sigma_max: f64) -> (f64, f64) {
        (sigma_max.powf(1.0 / rho), sigma_min.powf(1.0 / rho))
    }
}

impl NoiseSchedule for Schedule {
    fn log_snr(&self, t: f64) -> f64 {
        match *self {
            Schedule::Cosine { shift } => -2.0 * (0.5 * PI * t).tan().ln() + 2.0 * shift,
            Schedule::EdmTrain { mean, std } => mean - std * norm_quantile(t),
            Schedule::EdmSample { rho, sigma_min, sigma_max } => {
                let (a, b) = Self::edm_sample_consts(rho, sigma_min, sigma_max);
                -2.0 * rho * (a + (1.0 - t) * (b - a)).ln()
            }
            Schedule::FlowMatchingOt => 2.0 * ((1.0 - t) / t).ln(),
        }
    }

    fn time(&self, lambda: f64) -> f64 {
        match *self {
            Schedule::Cosine { shift } => 2.0 / PI * (-0.5 * lambda + shift).exp().atan(),
            Schedule::EdmTrain { mean, std } => norm_sf((lambda - mean) / std),
            Schedule::EdmSample { rho, sigma_min, sigma_max } => {
                let (a, b) = Self::edm_sample_consts(rho, sigma_min, sigma_max);
                1.0 - ((-lambda / (2.0 * rho)).exp() - a) / (b - a)
            }
            Schedule::FlowMatchingOt => crate::special::sigmoid(-0.5 * lambda),
        }
    }

    fn density(&self, lambda: f64) -> f64 {
        match *self {
            Schedule::Cosine { shift } => sech(0.5 * lambda - shift) / (2.0 * PI),
            Schedule::EdmTrain { mean, std } => normal_pdf(lambda, mean, std),
            Schedule::EdmSample { rho, sigma_min, sigma_max } => {
                let (lo, hi) = self.support();
                if lambda < lo || lambda > hi {
                    return 0.0;
                }
                let (a, b) = Self::edm_sample_consts(rho, sigma_min, sigma_max);
                (-lambda / (2.0 * rho)).exp() / (2.0 * rho * (a - b))
            }
            Schedule::FlowMatchingOt => {
                let s = sech(0.25 * lambda);
                s * s / 8.0
            }
        }
    }

    fn dlog_snr_dt(&self, t: f64) -> f64 {
        match *self {
            Schedule::Cosine { .. } => -2.0 * PI / (PI * t).sin(),
            Schedule::EdmTrain { std, .. } => -std / normal_pdf(norm_quantile(t), 0.0, 1.0),
            Schedule::EdmSample { rho, sigma_min, sigma_max } => {
                let (a, b) = Self::edm_sample_consts(rho, sigma_min, sigma_max);
                2.0 * rho * (b - a) / (a + (1.0 - t) * (b - a))
            }
            Schedule::FlowMatchingOt => -2.0 / (t * (1.0 - t)),
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Schedule::EdmSample { sigma_min, sigma_max, .. } => (-2.0 * sigma_max.ln(), -2.0 * sigma_min.ln()),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn name(&self) -> String {
        match self {
            Schedule::Cosine { shift } if *shift == 0.0 => "cosine".into(),
            Schedule::Cosine { .. } => "shifted-cosine".into(),
            Schedule::EdmTrain { .. } => "edm-train".into(),
            Schedule::EdmSample { .. } => "edm-sample".into(),
            Schedule::FlowMatchingOt => "fm-ot".into(),
        }
    }

    fn lambda_max(&self) -> f64 {
        match self {
            Schedule::EdmSample { .. } => self.support().1,
            _ => f64::INFINITY,
        }
    }

    fn lambda_min(&self) -> f64 {
        match self {
            Schedule::EdmSample { .. } => self.support().0,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// A schedule restricted to `[λmin, λmax]` and reparameterized so that
/// `t = 0` maps to `λmax` and `t = 1` to `λmin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truncated<S = Schedule> {
    pub base: S,
    pub t0: f64,
    pub t1: f64,
    lambda_min: f64,
    lambda_max: f64,
}

/// Restricts `base` to `[lambda_min, lambda_max]`.
pub fn truncate<S: NoiseSchedule>(base: S, lambda_max: f64, lambda_min: f64) -> Result<Truncated<S>> {
    if !(lambda_min < lambda_max) {
        return Err(invalid(format!("need lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]")));
    }
    let (lo, hi) = base.support();
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()).min(1e300));
    if lambda_min < lo - tol || lambda_max > hi + tol {
        return Err(invalid(format!("[{lambda_min}, {lambda_max}] outside the support [{lo}, {hi}] of {}", base.name())));
    }
    let t0 = base.time(lambda_max).clamp(0.0, 1.0);
    let t1 = base.time(lambda_min).clamp(0.0, 1.0);
    if !(t1 > t0) {
        return Err(invalid(format!("[{lambda_min}, {lambda_max}] carries no resolvable time under {}", base.name())));
    }
    Ok(Truncated { base, t0, t1, lambda_min, lambda_max })
}

/// Closed-form schedule truncated to the default training range `[-20, 20]`.
pub fn default_truncated(name: &str) -> Result<Truncated> {
    let base = make_schedule(name, &ScheduleParams::default())?;
    let (lo, hi) = base.support();
    truncate(base, hi.min(DEFAULT_LAMBDA_MAX), lo.max(DEFAULT_LAMBDA_MIN))
}

impl<S: NoiseSchedule> Truncated<S> {
    fn base_t(&self, t: f64) -> f64 {
        self.t0 + (self.t1 - self.t0) * t
    }
}

impl<S: NoiseSchedule> NoiseSchedule for Truncated<S> {
    fn log_snr(&self, t: f64) -> f64 {
        if t <= 0.0 {
            self.lambda_max
        } else if t >= 1.0 {
            self.lambda_min
        } else {
            self.base.log_snr(self.base_t(t)).clamp(self.lambda_min, self.lambda_max)
        }
    }

    fn time(&self, lambda: f64) -> f64 {
        if lambda >= self.lambda_max {
            0.0
        } else if lambda <= self.lambda_min {
            1.0
        } else {
            ((self.base.time(lambda) - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0)
        }
    }

    fn density(&self, lambda: f64) -> f64 {
        if lambda < self.lambda_min || lambda > self.lambda_max {
            0.0
        } else {
            self.base.density(lambda) / (self.t1 - self.t0)
        }
    }

    fn dlog_snr_dt(&self, t: f64) -> f64 {
        (self.t1 - self.t0) * self.base.dlog_snr_dt(self.base_t(t))
    }

    fn support(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    fn name(&self) -> String {
        self.base.name()
    }

    fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    fn lambda_min(&self) -> f64 {
        self.lambda_min
    }
}

/// Number of bins used by the adaptive schedule.
pub const ADAPTIVE_BINS: usize = 100;
pub const ADAPTIVE_DECAY: f64 = 0.999;

/// EMA statistics of weighted MSE per log-SNR bin.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveScheduleState {
    pub bin_edges: Vec<f64>,
    pub ema: Vec<f64>,
    pub decay: f64,
    pub init_value: f64,
}

impl AdaptiveScheduleState {
    /// Fresh state with 100 bins over `[λmin, λmax]`, decay 0.999 and init 1.
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        Self::with_bins(lambda_min, lambda_max, ADAPTIVE_BINS, ADAPTIVE_DECAY, 1.0)
    }

    pub fn with_bins(lambda_min: f64, lambda_max: f64, bins: usize, decay: f64, init_value: f64) -> Result<Self> {
        if !(lambda_min < lambda_max) || bins == 0 {
            return Err(invalid("adaptive schedule needs lambda_min < lambda_max and at least one bin"));
        }
        if !(0.0..1.0).contains(&decay) || !(init_value > 0.0) {
            return Err(invalid("decay must lie in [0, 1) and init_value must be positive"));
        }
        Ok(Self {
            bin_edges: crate::quadrature::linspace(lambda_min, lambda_max, bins + 1),
            ema: vec![init_value; bins],
            decay,
            init_value,
        })
    }

    /// State with explicit bin values (all must be nonnegative).
    pub fn from_values(lambda_min: f64, lambda_max: f64, values: Vec<f64>) -> Result<Self> {
        let mut s = Self::with_bins(lambda_min, lambda_max, values.len(), ADAPTIVE_DECAY, 1.0)?;
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("bin values must be finite and nonnegative"));
        }
        s.ema = values;
        Ok(s)
    }

    pub fn lambda_min(&self) -> f64 {
        self.bin_edges[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.bin_edges.last().unwrap()
    }

    pub fn bins(&self) -> usize {
        self.ema.len()
    }

    /// Index of the bin containing `lambda`; the top edge belongs to the last bin.
    pub fn bin_index(&self, lambda: f64) -> Result<usize> {
        let (lo, hi) = (self.lambda_min(), self.lambda_max());
        if !(lambda >= lo && lambda <= hi) {
            return Err(Error::OutOfRange { lambda, min: lo, max: hi });
        }
        let width = (hi - lo) / self.bins() as f64;
        Ok((((lambda - lo) / width) as usize).min(self.bins() - 1))
    }

    /// EMA update of the bin containing `lambda`.
    pub fn update(&mut self, lambda: f64, weighted_mse: f64) -> Result<()> {
        if !(weighted_mse >= 0.0) || !weighted_mse.is_finite() {
            return Err(invalid(format!("weighted MSE must be finite and nonnegative, got {weighted_mse}")));
        }
        let b = self.bin_index(lambda)?;
        self.ema[b] = self.decay * self.ema[b] + (1.0 - self.decay) * weighted_mse;
        Ok(())
    }

    /// Shannon entropy (nats) of the normalized bin masses.
    pub fn entropy(&self) -> f64 {
        let total: f64 = self.ema.iter().sum();
        self.ema
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| {
                let p = v / total;
                -p * p.ln()
            })
            .sum()
    }
}

/// Functional form of [`AdaptiveScheduleState::update`].
pub fn adaptive_update(mut state: AdaptiveScheduleState, lambda: f64, weighted_mse: f64) -> Result<AdaptiveScheduleState> {
    state.update(lambda, weighted_mse)?;
    Ok(state)
}

/// Schedule with piecewise-constant density over equal-width bins.
///
/// `t` is the probability mass above `λ`, so the forward map is piecewise
/// linear with slope `-width / mass` in each bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSchedule {
    edges: Vec<f64>,
    mass: Vec<f64>,
    /// `above[b]` is the mass of all bins above bin `b`; `above[bins] = 0` is unused.
    above: Vec<f64>,
}

/// Schedule induced by the EMA table.
pub fn adaptive_schedule(state: &AdaptiveScheduleState) -> Result<PiecewiseSchedule> {
    let total: f64 = state.ema.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(invalid("adaptive schedule needs a positive EMA total"));
    }
    if state.ema.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("adaptive schedule needs every EMA entry positive"));
    }
    let mass: Vec<f64> = state.ema.iter().map(|v| v / total).collect();
    let n = mass.len();
    let mut above = vec![0.0; n];
    let mut acc = 0.0;
    for b in (0..n).rev() {
        above[b] = acc;
        acc += mass[b];
    }
    Ok(PiecewiseSchedule { edges: state.bin_edges.clone(), mass, above })
}

impl PiecewiseSchedule {
    fn width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Normalized bin masses, lowest λ first.
    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    fn bin_of_lambda(&self, lambda: f64) -> usize {
        let lo = self.edges[0];
        (((lambda - lo) / self.width()).max(0.0) as usize).min(self.mass.len() - 1)
    }

    fn bin_of_time(&self, t: f64) -> usize {
        // `above` is decreasing in b; bin b covers t in [above[b], above[b] + mass[b]].
        let idx = self.above.partition_point(|&a| a > t);
        idx.min(self.mass.len() - 1)
    }
}

impl NoiseSchedule for PiecewiseSchedule {
    fn log_snr(&self, t: f64) -> f64 {
        let n = self.mass.len();
        if t <= 0.0 {
            return self.edges[n];
        }
        if t >= 1.0 {
            return self.edges[0];
        }
        let b = self.bin_of_time(t);
        let frac = ((t - self.above[b]) / self.mass[b]).clamp(0.0, 1.0);
        self.edges[b + 1] - frac * self.width()
    }

    fn time(&self, lambda: f64) -> f64 {
        let n = self.mass.len();
        if lambda >= self.edges[n] {
            return 0.0;
        }
        if lambda <= self.edges[0] {
            return 1.0;
        }
        let b = self.bin_of_lambda(lambda);
        self.above[b] + self.mass[b] * (self.edges[b + 1] - lambda) / self.width()
    }

    fn density(&self, lambda: f64) -> f64 {
        let n = self.mass.len();
        if lambda < self.edges[0] || lambda > self.edges[n] {
            return 0.0;
        }
        self.mass[self.bin_of_lambda(lambda)] / self.width()
    }

    fn dlog_snr_dt(&self, t: f64) -> f64 {
        let b = self.bin_of_time(t.clamp(0.0, 1.0));
        -self.width() / self.mass[b]
    }

    fn support(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.mass.len()])
    }

    fn name(&self) -> String {
        "adaptive".into()
    }

    fn lambda_max(&self) -> f64 {
        self.edges[self.mass.len()]
    }

    fn lambda_min(&self) -> f64 {
        self.edges[0]
    }
}

impl<T: NoiseSchedule + ?Sized> NoiseSchedule for Box<T> {
    fn log_snr(&self, t: f64) -> f64 {
        (**self).log_snr(t)
    }
    fn time(&self, lambda: f64) -> f64 {
        (**self).time(lambda)
    }
    fn density(&self, lambda: f64) -> f64 {
        (**self).density(lambda)
    }
    fn dlog_snr_dt(&self, t: f64) -> f64 {
        (**self).dlog_snr_dt(t)
    }
    fn support(&self) -> (f64, f64) {
        (**self).support()
    }
    fn name(&self) -> String {
        (**self).name()
    }
    fn lambda_max(&self) -> f64 {
        (**self).lambda_max()
    }
    fn lambda_min(&self) -> f64 {
        (**self).lambda_min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{linspace, trapezoid_fn};
    use proptest::prelude::*;

    fn all_truncated() -> Vec<Truncated> {
        let p = ScheduleParams { resolution: Some(128.0), ..Default::default() };
        SCHEDULE_NAMES
            .iter()
            .map(|n| {
                let base = make_schedule(n, &p).unwrap();
                let (lo, hi) = base.support();
                truncate(base, hi.min(20.0), lo.max(-20.0)).unwrap()
            })
            .collect()
    }

    #[test]
    fn table_values() {
        let cos = make_schedule("cosine", &Default::default()).unwrap();
        assert!(cos.log_snr(0.5).abs() < 1e-15);
        // −2 ln tan(π/8), evaluated independently: tan(π/8) = √2 − 1.
        let expected = -2.0 * (2f64.sqrt() - 1.0).ln();
        assert!((cos.log_snr(0.25) - expected).abs() < 1e-14);
        assert!((expected - 1.762747174039086).abs() < 1e-14);

        let fm = make_schedule("fm-ot", &Default::default()).unwrap();
        assert_eq!(fm.time(0.0), 0.5);

        let edm = make_schedule("edm-sample", &Default::default()).unwrap();
        assert!((edm.log_snr(0.0) - 12.429216196844383).abs() < 1e-12);
        assert!((edm.log_snr(1.0) + 8.764053269347762).abs() < 1e-12);
    }

    #[test]
    fn edm_train_matches_its_density() {
        let s = make_schedule("edm-train", &Default::default()).unwrap();
        // High SNR at t = 0, median λ = 2.4 at t = 1/2.
        assert!((s.log_snr(0.5) - 2.4).abs() < 1e-12);
        assert!(s.log_snr(0.01) > s.log_snr(0.99));
        for &l in &[-3.0, 0.0, 2.4, 7.0] {
            let fd = -(s.time(l + 1e-5) - s.time(l - 1e-5)) / 2e-5;
            assert!((fd - s.density(l)).abs() < 1e-9);
        }
    }

    #[test]
    fn shifted_cosine_inverse() {
        let s = make_schedule("shifted-cosine", &ScheduleParams { resolution: Some(256.0), ..Default::default() }).unwrap();
        for i in 1..100 {
            let t = i as f64 / 100.0;
            assert!((s.time(s.log_snr(t)) - t).abs() < 1e-13);
        }
        // shift ln(64/256) moves the midpoint to 2s.
        assert!((s.log_snr(0.5) - 2.0 * 0.25f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn parameter_errors() {
        let bad = ScheduleParams { sigma_min: 2.0, sigma_max: 1.0, ..Default::default() };
        assert!(make_schedule("edm-sample", &bad).is_err());
        let bad = ScheduleParams { sigma_min: -1.0, ..Default::default() };
        assert!(make_schedule("edm-sample", &bad).is_err());
        assert!(matches!(make_schedule("linear", &Default::default()), Err(Error::UnknownName { .. })));
        assert!(make_schedule("shifted-cosine", &Default::default()).is_err());
    }

    #[test]
    fn truncation_endpoints() {
        let s = default_truncated("cosine").unwrap();
        let t0 = 2.0 / PI * (-10f64).exp().atan();
        assert!((s.t0 - t0).abs() < 1e-18);
        assert!((s.t0 - 2.890249293e-5).abs() < 1e-14);
        assert_eq!(s.log_snr(0.0), 20.0);
        assert_eq!(s.log_snr(1.0), -20.0);
        assert_eq!(s.density(20.5), 0.0);

        let edm = make_schedule("edm-sample", &Default::default()).unwrap();
        let (lo, hi) = edm.support();
        let id = truncate(edm, hi, lo).unwrap();
        assert!(id.t0.abs() < 1e-12 && (id.t1 - 1.0).abs() < 1e-12);
        assert!(truncate(edm, 20.0, -20.0).is_err());
        assert!(truncate(Schedule::FlowMatchingOt, -1.0, 1.0).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        for s in all_truncated() {
            let (lo, hi) = s.support();
            let m = trapezoid_fn(|l| s.density(l), lo, hi, 2001);
            assert!((m - 1.0).abs() < 1e-6, "{}: {m}", s.name());
        }
    }

    #[test]
    fn round_trip_and_monotone() {
        for s in all_truncated() {
            let ts = linspace(0.0, 1.0, 1001);
            let mut prev = f64::INFINITY;
            for &t in &ts {
                let l = s.log_snr(t);
                assert!(l < prev, "{} not decreasing at {t}", s.name());
                prev = l;
                assert!((s.time(l) - t).abs() < 1e-9, "{} round trip at {t}", s.name());
            }
        }
    }

    #[test]
    fn density_is_minus_inverse_derivative() {
        for s in all_truncated() {
            let (lo, hi) = s.support();
            for l in linspace(lo, hi, 103).into_iter().skip(1).take(101) {
                let h = 1e-4;
                let p = s.density(l);
                // A central difference of t cannot resolve masses below ~1e-7
                // in double precision (the edm-train lower tail).
                if p < 1e-6 {
                    continue;
                }
                let fd = -(s.time(l + h) - s.time(l - h)) / (2.0 * h);
                assert!((fd - p).abs() <= 1e-5 * p, "{} at {l}: {fd} vs {p}", s.name());
            }
        }
    }

    #[test]
    fn derivative_in_time() {
        for s in all_truncated() {
            for i in 1..20 {
                let t = i as f64 / 20.0;
                let h = 1e-6;
                let fd = (s.log_snr(t + h) - s.log_snr(t - h)) / (2.0 * h);
                let d = s.dlog_snr_dt(t);
                assert!((fd - d).abs() < 1e-5 * d.abs(), "{} at {t}", s.name());
                // Chain rule: dλ/dt · p(λ) = -1.
                assert!((d * s.density(s.log_snr(t)) + 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fm_ot_density_closed_form() {
        let s = Schedule::FlowMatchingOt;
        for l in linspace(-20.0, 20.0, 101) {
            let c = 1.0 / (0.25 * l).cosh();
            assert!((s.density(l) - c * c / 8.0).abs() < 1e-10);
        }
    }

    #[test]
    fn adaptive_ema_arithmetic() {
        let mut st = AdaptiveScheduleState::new(-20.0, 20.0).unwrap();
        st.update(3.0, 1.0).unwrap();
        assert_eq!(st.ema[st.bin_index(3.0).unwrap()], 1.0);
        st.update(3.0, 2.0).unwrap();
        assert!((st.ema[st.bin_index(3.0).unwrap()] - 1.001).abs() < 1e-15);
        assert!(st.update(25.0, 1.0).is_err());
        assert!(st.update(0.0, -1.0).is_err());
        for _ in 0..20000 {
            st.update(-7.0, 4.0).unwrap();
        }
        assert!((st.ema[st.bin_index(-7.0).unwrap()] - 4.0).abs() < 1e-6);
        assert_eq!(st.bin_index(20.0).unwrap(), 99);
    }

    #[test]
    fn adaptive_uniform_is_linear() {
        let st = AdaptiveScheduleState::new(-20.0, 20.0).unwrap();
        let s = adaptive_schedule(&st).unwrap();
        for t in linspace(0.0, 1.0, 101) {
            assert!((s.log_snr(t) - (20.0 - 40.0 * t)).abs() < 1e-12);
        }
        assert!((s.density(1.3) - 1.0 / 40.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_sigmoid_bins() {
        let st = AdaptiveScheduleState::new(-20.0, 20.0).unwrap();
        let vals = st.bin_edges.windows(2).map(|e| crate::special::sigmoid(0.5 * (e[0] + e[1]))).collect();
        let st = AdaptiveScheduleState::from_values(-20.0, 20.0, vals).unwrap();
        let s = adaptive_schedule(&st).unwrap();
        // E_p[1/p] = λmax − λmin, evaluated by quadrature of p · (1/p).
        let e: f64 = st
            .bin_edges
            .windows(2)
            .map(|e| {
                let c = 0.5 * (e[0] + e[1]);
                (e[1] - e[0]) * s.density(c) / s.density(c)
            })
            .sum();
        assert!((e - 40.0).abs() < 1e-12);
        let mass = trapezoid_fn(|l| s.density(l), -20.0, 20.0, 40001);
        assert!((mass - 1.0).abs() < 1e-3);
    }

    #[test]
    fn adaptive_two_bin_toy() {
        let st = AdaptiveScheduleState::from_values(-1.0, 1.0, vec![3.0, 1.0]).unwrap();
        let s = adaptive_schedule(&st).unwrap();
        // Mass 1/4 above 0, 3/4 below: t(0) = 1/4.
        assert!((s.time(0.0) - 0.25).abs() < 1e-15);
        let slope_lo = (s.time(-0.5) - s.time(-0.25)) / 0.25;
        let slope_hi = (s.time(0.25) - s.time(0.5)) / 0.25;
        assert!((slope_lo / slope_hi - 3.0).abs() < 1e-12);
        assert_eq!(s.log_snr(0.0), 1.0);
        assert_eq!(s.log_snr(1.0), -1.0);
    }

    #[test]
    fn adaptive_rejects_zero_table() {
        let st = AdaptiveScheduleState::from_values(-1.0, 1.0, vec![0.0, 0.0]).unwrap();
        assert!(adaptive_schedule(&st).is_err());
    }

    proptest! {
        #[test]
        fn adaptive_round_trip(vals in proptest::collection::vec(1e-6f64..10.0, 1..40), t in 0.0f64..1.0) {
            let st = AdaptiveScheduleState::from_values(-5.0, 7.0, vals).unwrap();
            let s = adaptive_schedule(&st).unwrap();
            let l = s.log_snr(t);
            prop_assert!((s.time(l) - t).abs() < 1e-12);
            prop_assert!((-5.0..=7.0).contains(&l));
        }

        #[test]
        fn adaptive_strictly_decreasing(vals in proptest::collection::vec(1e-6f64..10.0, 1..40)) {
            let st = AdaptiveScheduleState::from_values(-20.0, 20.0, vals).unwrap();
            let s = adaptive_schedule(&st).unwrap();
            let lams: Vec<f64> = linspace(0.0, 1.0, 1001).into_iter().map(|t| s.log_snr(t)).collect();
            prop_assert!(lams.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn truncation_round_trip(lo in -30.0f64..0.0, width in 0.5f64..40.0, t in 0.0f64..=1.0) {
            for base in [Schedule::Cosine { shift: 0.0 }, Schedule::FlowMatchingOt, Schedule::EdmTrain { mean: 2.4, std: 2.4 }] {
                match truncate(base, lo + width, lo) {
                    // Round-off in the base time is amplified by 1/(t1 - t0).
                    Ok(s) => prop_assert!((s.time(s.log_snr(t)) - t).abs() < 1e-9 + 1e-15 / (s.t1 - s.t0)),
                    // Only possible when the whole window sits in a tail that rounds to t = 1.
                    Err(_) => prop_assert!(base.time(lo + width) == 1.0),
                }
            }
        }
    }
}
