//! Analytic one-dimensional Gaussian-mixture data distributions.
//!
//! For data `x ~ Σ π_i N(m_i, s²)` the noised marginal is again a mixture,
//! `z ~ Σ π_i N(α m_i, α² s² + σ²)`, so the score, the optimal denoiser and
//! its expected error are available without training.

use crate::error::{invalid, Error, Result};
use crate::process::{convert_scalar, ForwardProcess, PredictionKind};
use crate::quadrature::{LegendreRule, NormalRule};
use crate::rng::{stream_rng, Stream};
use crate::schedules::NoiseSchedule;
use crate::special::softplus;
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::OnceLock;

/// Nodes per mixture component for expectations over `z`.
pub const HERMITE_NODES: usize = 129;

/// Responsibility switches narrower than this many marginal standard
/// deviations are integrated with refined Gauss–Legendre panels.
const SHARP_WIDTH: f64 = 0.5;
/// Half-width of each component window, in marginal standard deviations.
const U_MAX: f64 = 10.0;
/// Base panel width, in marginal standard deviations.
const BASE_PANEL: f64 = 0.5;
/// Half-width of the refined region around a switch, in switch widths.
const SWITCH_SPAN: f64 = 40.0;
/// Refined panel width, in switch widths.
const SWITCH_PANEL: f64 = 2.0;

struct Rules {
    hermite: NormalRule,
    legendre: LegendreRule,
}

fn fine_rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        hermite: NormalRule::new(HERMITE_NODES).expect("valid Gauss-Hermite order"),
        legendre: LegendreRule::new(8).expect("valid Gauss-Legendre order"),
    })
}

fn coarse_rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        hermite: NormalRule::new(97).expect("valid Gauss-Hermite order"),
        legendre: LegendreRule::new(6).expect("valid Gauss-Legendre order"),
    })
}

fn hermite() -> &'static NormalRule {
    &fine_rules().hermite
}

/// Mixture of Gaussians with a shared component standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOracle {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<f64>,
    component_std: f64,
}

impl MixtureOracle {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, component_std: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(invalid("mixture needs matching, nonempty weights and means"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mixture weights must be nonnegative and means finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if !(component_std >= 0.0) || !component_std.is_finite() {
            return Err(invalid("component std must be finite and nonnegative"));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { weights, log_weights, means, component_std })
    }

    /// Single Gaussian `N(mean, std²)`.
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], std)
    }

    /// Equal-weight pair of components at `±offset`.
    pub fn symmetric_pair(offset: f64, std: f64) -> Result<Self> {
        Self::new(vec![0.5, 0.5], vec![-offset, offset], std)
    }

    /// Uniform distribution over `2^bits` point masses at `linspace(-1, 1, 2^bits)`.
    pub fn low_bit(bits: u32) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(invalid("low-bit oracle needs 1 <= bits <= 16"));
        }
        let k = 1usize << bits;
        Self::new(vec![1.0 / k as f64; k], crate::quadrature::linspace(-1.0, 1.0, k), 0.0)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn component_std(&self) -> f64 {
        self.component_std
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    /// `E[x²]`.
    pub fn second_moment(&self) -> f64 {
        let s2 = self.component_std * self.component_std;
        self.weights.iter().zip(&self.means).map(|(w, m)| w * (m * m + s2)).sum()
    }

    pub fn variance(&self) -> f64 {
        self.second_moment() - self.mean().powi(2)
    }

    /// Variance of each component of the noised marginal.
    fn marginal_var(&self, a: f64, s: f64) -> f64 {
        a * a * self.component_std * self.component_std + s * s
    }

    /// Responsibility-weighted offset `Σ_j r_j(z) (m_j - m_ref)`.
    fn mean_offset(&self, z: f64, a: f64, v: f64, m_ref: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (lw, m) in self.log_weights.iter().zip(&self.means) {
            let d = z - a * m;
            best = best.max(lw - d * d / (2.0 * v));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (lw, m) in self.log_weights.iter().zip(&self.means) {
            let d = z - a * m;
            let r = (lw - d * d / (2.0 * v) - best).exp();
            num += r * (m - m_ref);
            den += r;
        }
        num / den
    }

    /// `∇_z log q(z_λ)` of the exact noised marginal.
    pub fn exact_score(&self, z: f64, lambda: f64, proc: ForwardProcess) -> f64 {
        let (a, s) = (proc.alpha(lambda), proc.sigma(lambda));
        let v = self.marginal_var(a, s);
        // z − α E[m|z] written relative to the first mean to keep precision.
        let m0 = self.means[0];
        -((z - a * m0) - a * self.mean_offset(z, a, v, m0)) / v
    }

    /// Posterior-mean predictor in the requested parameterization.
    pub fn optimal_denoiser(&self, z: f64, lambda: f64, proc: ForwardProcess, kind: PredictionKind, sigma_data: f64) -> Result<f64> {
        let s = proc.sigma(lambda);
        if !(s > 0.0) {
            return Err(Error::Degenerate(lambda));
        }
        let eps = -s * self.exact_score(z, lambda, proc);
        convert_scalar(eps, PredictionKind::Eps, kind, z, lambda, proc, sigma_data)
    }

    /// Breakpoints of the upper envelope of the component log-densities,
    /// as `(z, width)` where `width` is the z-scale of the responsibility switch.
    fn switches(&self, a: f64, v: f64) -> Vec<(f64, f64)> {
        let mut lines: Vec<(f64, f64)> = self
            .log_weights
            .iter()
            .zip(&self.means)
            .filter(|(lw, _)| lw.is_finite())
            .map(|(lw, m)| (a * m / v, lw - a * a * m * m / (2.0 * v)))
            .collect();
        lines.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.partial_cmp(&q.1).unwrap()));
        lines.dedup_by(|q, p| q.0 == p.0);
        let cross = |p: (f64, f64), q: (f64, f64)| (p.1 - q.1) / (q.0 - p.0);
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for l in lines {
            while hull.len() >= 2 {
                let (p, q) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                if cross(p, l) <= cross(p, q) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(l);
        }
        hull.windows(2).map(|w| (cross(w[0], w[1]), 1.0 / (w[1].0 - w[0].0))).collect()
    }

    /// `E_{q(z)} Var(m | z)`, the spread of the component means that the
    /// optimal denoiser cannot resolve.
    ///
    /// Gauss–Hermite per component while responsibilities vary slowly on the
    /// node spacing; otherwise composite Gauss–Legendre in `z`, refined around
    /// every switch between dominant components.
    fn spread(&self, a: f64, v: f64, rules: &Rules) -> f64 {
        let sv = v.sqrt();
        let sharp: Vec<(f64, f64)> = self.switches(a, v).into_iter().filter(|&(_, w)| w < SHARP_WIDTH * sv).collect();
        if sharp.is_empty() {
            return self
                .weights
                .iter()
                .zip(&self.means)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, m)| {
                    w * rules.hermite.expect(|u| {
                        let d = self.mean_offset(a * m + sv * u, a, v, *m);
                        d * d
                    })
                })
                .sum();
        }
        // Union of the component windows |z - α m_i| ≤ U_MAX √v.
        let mut centres: Vec<f64> = self.weights.iter().zip(&self.means).filter(|(w, _)| **w > 0.0).map(|(_, m)| a * m).collect();
        centres.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let mut windows: Vec<(f64, f64)> = Vec::new();
        for c in centres {
            let (lo, hi) = (c - U_MAX * sv, c + U_MAX * sv);
            match windows.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => windows.push((lo, hi)),
            }
        }
        let mut edges = Vec::new();
        for &(lo, hi) in &windows {
            let panels = ((hi - lo) / (BASE_PANEL * sv)).ceil() as usize;
            edges.extend(crate::quadrature::linspace(lo, hi, panels + 1));
        }
        for &(z, w) in &sharp {
            let panels = (2.0 * SWITCH_SPAN / SWITCH_PANEL) as usize;
            let fine = crate::quadrature::linspace(z - SWITCH_SPAN * w, z + SWITCH_SPAN * w, panels + 1);
            edges.extend(fine.into_iter().filter(|e| windows.iter().any(|&(lo, hi)| *e > lo && *e < hi)));
        }
        edges.sort_by(|p, q| p.partial_cmp(q).unwrap());
        edges.dedup();
        let norm = 1.0 / (2.0 * std::f64::consts::PI * v).sqrt();
        // Moments are taken about the dominant component so that the
        // variance never cancels catastrophically.
        let integrand = |z: f64| {
            let (mut best, mut m_ref) = (f64::NEG_INFINITY, 0.0);
            for (lw, m) in self.log_weights.iter().zip(&self.means) {
                let d = z - a * m;
                let e = lw - d * d / (2.0 * v);
                if e > best {
                    best = e;
                    m_ref = *m;
                }
            }
            let (mut den, mut first, mut second) = (0.0, 0.0, 0.0);
            for (lw, m) in self.log_weights.iter().zip(&self.means) {
                let d = z - a * m;
                let r = (lw - d * d / (2.0 * v) - best).exp();
                let dm = m - m_ref;
                den += r;
                first += r * dm;
                second += r * dm * dm;
            }
            let mu = first / den;
            norm * best.exp() * den * (second / den - mu * mu).max(0.0)
        };
        edges
            .windows(2)
            .filter(|e| windows.iter().any(|&(lo, hi)| e[0] >= lo && e[1] <= hi))
            .map(|e| rules.legendre.integrate(e[0], e[1], integrand))
            .sum()
    }

    fn mse_with(&self, lambda: f64, proc: ForwardProcess, rules: &Rules) -> f64 {
        let (a, s) = (proc.alpha(lambda), proc.sigma(lambda));
        let v = self.marginal_var(a, s);
        if !(v > 0.0) {
            return 0.0;
        }
        let irreducible = a * a * self.component_std * self.component_std / v;
        let c = s * a / v;
        let spread = if self.means.len() == 1 { 0.0 } else { self.spread(a, v, rules) };
        irreducible + c * c * spread
    }

    /// `E_{x,ε} (ε - ε̂*(z_λ))²` by Gauss–Hermite quadrature.
    pub fn mse(&self, lambda: f64, proc: ForwardProcess) -> f64 {
        self.mse_with(lambda, proc, fine_rules())
    }

    /// Quadrature MSE with a convergence check against a coarser rule.
    pub fn mse_checked(&self, lambda: f64, proc: ForwardProcess) -> Result<f64> {
        let fine = self.mse(lambda, proc);
        let coarse = self.mse_with(lambda, proc, coarse_rules());
        if (fine - coarse).abs() > 1e-9 + 1e-5 * fine.abs() {
            return Err(Error::Numerical(format!("Gauss-Hermite quadrature did not converge at lambda={lambda}: {fine} vs {coarse}")));
        }
        Ok(fine)
    }

    /// Monte Carlo MSE: `(mean, standard error)` over `n` draws.
    pub fn mse_monte_carlo(&self, lambda: f64, proc: ForwardProcess, n: usize, seed: u64) -> (f64, f64) {
        let (a, s) = (proc.alpha(lambda), proc.sigma(lambda));
        let mut rng = stream_rng(seed, Stream::Noise, 0);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let x = self.draw(&mut rng);
            let e: f64 = rng.sample(StandardNormal);
            let z = a * x + s * e;
            let eh = -s * self.exact_score(z, lambda, proc);
            let r = (e - eh).powi(2);
            sum += r;
            sum_sq += r * r;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
        (mean, (var / nf).sqrt())
    }

    /// Per-λ MSE over a grid.
    pub fn mse_curve(&self, grid: &[f64], proc: ForwardProcess, method: MseMethod) -> Result<Vec<f64>> {
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("lambda grid must be increasing"));
        }
        grid.iter()
            .enumerate()
            .map(|(i, &l)| match method {
                MseMethod::Quadrature => self.mse_checked(l, proc),
                MseMethod::MonteCarlo { draws, seed } => Ok(self.mse_monte_carlo(l, proc, draws, seed.wrapping_add(i as u64)).0),
            })
            .collect()
    }

    /// `E_x KL(q(z|x) ‖ p(z))` at `λmin` for the process prior.
    pub fn prior_kl(&self, lambda_min: f64, proc: ForwardProcess) -> f64 {
        match proc {
            ForwardProcess::Vp => {
                let a2 = proc.alpha_sq(lambda_min);
                0.5 * (a2 * (self.second_moment() - 1.0) + softplus(lambda_min))
            }
            ForwardProcess::Ve => 0.5 * self.second_moment() * lambda_min.exp(),
        }
    }

    /// `½σ² E_x E_{z|x} (∇log q(z|x) - ∇log q(z))²`, by quadrature over
    /// the data and the noise directly.
    pub fn fisher_term(&self, lambda: f64, proc: ForwardProcess) -> f64 {
        let (a, s) = (proc.alpha(lambda), proc.sigma(lambda));
        let rule = hermite();
        let mut total = 0.0;
        for (w, m) in self.weights.iter().zip(&self.means) {
            let inner = |x: f64| {
                rule.expect(|u| {
                    let z = a * x + s * u;
                    let d = -(z - a * x) / (s * s) - self.exact_score(z, lambda, proc);
                    d * d
                })
            };
            let e = if self.component_std == 0.0 { inner(*m) } else { rule.expect(|eta| inner(m + self.component_std * eta)) };
            total += w * e;
        }
        0.5 * s * s * total
    }

    /// Draws one data point.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = i;
                break;
            }
        }
        let m = self.means[idx];
        if self.component_std > 0.0 {
            let e: f64 = rng.sample(StandardNormal);
            m + self.component_std * e
        } else {
            m
        }
    }
}

/// How [`MixtureOracle::mse_curve`] evaluates each point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MseMethod {
    Quadrature,
    MonteCarlo { draws: usize, seed: u64 },
}

/// Joint KL `L` of the optimal model as a function of the log-SNR reached,
/// `L(λ) = KL_prior(λmin) + ½ ∫_{λmin}^{λ} mse(λ') dλ'`.
///
/// The integral is tabulated on cells of width at most 0.02 with a 4-point
/// Gauss–Legendre rule per cell, so differences of nearby values keep full
/// relative precision.
#[derive(Debug, Clone)]
pub struct JointKl {
    oracle: MixtureOracle,
    proc: ForwardProcess,
    edges: Vec<f64>,
    cumulative: Vec<f64>,
    prior: f64,
    rule: LegendreRule,
}

impl JointKl {
    pub fn new(oracle: &MixtureOracle, proc: ForwardProcess, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min < lambda_max) || !lambda_min.is_finite() || !lambda_max.is_finite() {
            return Err(invalid(format!("joint KL needs finite endpoints, got [{lambda_min}, {lambda_max}]")));
        }
        let prior = oracle.prior_kl(lambda_min, proc);
        if !prior.is_finite() {
            return Err(Error::Numerical("prior KL is not finite".into()));
        }
        let cells = ((lambda_max - lambda_min) / 0.02).ceil().max(1.0) as usize;
        let edges = crate::quadrature::linspace(lambda_min, lambda_max, cells + 1);
        let rule = LegendreRule::new(4)?;
        let mut cumulative = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for e in edges.windows(2) {
            acc += 0.5 * rule.integrate(e[0], e[1], |l| oracle.mse(l, proc));
            cumulative.push(acc);
        }
        Ok(Self { oracle: oracle.clone(), proc, edges, cumulative, prior, rule })
    }

    pub fn lambda_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn prior_term(&self) -> f64 {
        self.prior
    }

    pub fn oracle(&self) -> &MixtureOracle {
        &self.oracle
    }

    pub fn process(&self) -> ForwardProcess {
        self.proc
    }

    /// `L` once the path has reached log-SNR `lambda` (clamped to the table).
    pub fn at_lambda(&self, lambda: f64) -> f64 {
        let l = lambda.clamp(self.lambda_min(), self.lambda_max());
        let n = self.edges.len() - 1;
        let width = (self.lambda_max() - self.lambda_min()) / n as f64;
        let c = (((l - self.lambda_min()) / width) as usize).min(n - 1);
        let partial = if l > self.edges[c] { 0.5 * self.rule.integrate(self.edges[c], l, |x| self.oracle.mse(x, self.proc)) } else { 0.0 };
        self.prior + self.cumulative[c] + partial
    }

    /// `L(t)` along a schedule whose range lies within the table.
    pub fn at_time(&self, t: f64, schedule: &dyn NoiseSchedule) -> f64 {
        self.at_lambda(schedule.log_snr(t))
    }

    /// `dL/dλ = ½ mse(λ)`.
    pub fn derivative(&self, lambda: f64) -> f64 {
        0.5 * self.oracle.mse(lambda, self.proc)
    }
}

/// `L(t)` for the optimal model on `schedule` (VP process).
pub fn joint_kl(oracle: &MixtureOracle, t: f64, schedule: &dyn NoiseSchedule, proc: ForwardProcess) -> Result<f64> {
    let table = JointKl::new(oracle, proc, schedule.lambda_min(), schedule.lambda_max())?;
    Ok(table.at_time(t, schedule))
}

/// A tabulated curve over log-SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct KlCurve {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
}

/// Low-bit KL curves and their per-bit differences.
#[derive(Debug, Clone, PartialEq)]
pub struct LowBitCurves {
    pub bits: Vec<u32>,
    pub lambdas: Vec<f64>,
    /// `L_n(λ)` per requested bit depth.
    pub kl: Vec<KlCurve>,
    /// `dL_n/dλ = ½ mse_n(λ)`.
    pub dkl: Vec<KlCurve>,
    /// `dL_n/dλ - dL_{n-1}/dλ`, with the zero curve for `n = 1`.
    pub per_bit: Vec<KlCurve>,
    /// Area under each per-bit curve, in nats.
    pub areas: Vec<f64>,
    /// Log-SNR at the maximum of each per-bit curve.
    pub peaks: Vec<f64>,
}

/// Cumulative integral of tabulated values, starting at zero.
///
/// Uses the four-point cubic rule on uniform grids and the trapezoid rule
/// otherwise.
pub fn cumulative_integral(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let uniform = n >= 4 && xs.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs());
    for k in 0..n - 1 {
        let step = if uniform {
            let c = h / 24.0;
            if k == 0 {
                c * (9.0 * ys[0] + 19.0 * ys[1] - 5.0 * ys[2] + ys[3])
            } else if k == n - 2 {
                c * (ys[n - 4] - 5.0 * ys[n - 3] + 19.0 * ys[n - 2] + 9.0 * ys[n - 1])
            } else {
                c * (-ys[k - 1] + 13.0 * ys[k] + 13.0 * ys[k + 1] - ys[k + 2])
            }
        } else {
            0.5 * (xs[k + 1] - xs[k]) * (ys[k] + ys[k + 1])
        };
        out[k + 1] = out[k] + step;
    }
    out
}

/// KL curves of the low-bit oracles on a λ grid.
///
/// `kl` starts from the prior term at `grid[0]` and accumulates `½ mse`.
pub fn lowbit_curves(bits: &[u32], grid: &[f64]) -> Result<LowBitCurves> {
    use rayon::prelude::*;
    if bits.is_empty() || bits.windows(2).any(|b| b[1] <= b[0]) || bits[0] == 0 {
        return Err(invalid("bit depths must be nonempty, increasing and positive"));
    }
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("lambda grid must be increasing with at least three points"));
    }
    let proc = ForwardProcess::Vp;
    let mut depths: Vec<u32> = bits.iter().flat_map(|&n| [n - 1, n]).collect();
    depths.sort_unstable();
    depths.dedup();
    let mut half_mse = std::collections::BTreeMap::new();
    for &n in &depths {
        let values = if n == 0 {
            vec![0.0; grid.len()]
        } else {
            let o = MixtureOracle::low_bit(n)?;
            grid.par_iter().map(|&l| 0.5 * o.mse(l, proc)).collect()
        };
        half_mse.insert(n, values);
    }
    let (mut kl, mut dkl, mut per_bit, mut areas, mut peaks) = (vec![], vec![], vec![], vec![], vec![]);
    for &n in bits {
        let d = half_mse[&n].clone();
        let diff: Vec<f64> = d.iter().zip(&half_mse[&(n - 1)]).map(|(a, b)| a - b).collect();
        let max = diff.iter().cloned().fold(f64::MIN, f64::max);
        let edge = diff[0].abs().max(diff[diff.len() - 1].abs());
        if edge > 1e-4 * max {
            return Err(invalid(format!(
                "grid [{}, {}] too narrow for bit {n}: boundary value {edge} vs peak {max}",
                grid[0],
                grid[grid.len() - 1]
            )));
        }
        let imax = diff.iter().enumerate().fold(0, |b, (i, v)| if *v > diff[b] { i } else { b });
        areas.push(*cumulative_integral(grid, &diff).last().unwrap());
        peaks.push(grid[imax]);
        let prior = MixtureOracle::low_bit(n)?.prior_kl(grid[0], proc);
        let values = cumulative_integral(grid, &d).into_iter().map(|c| prior + c).collect();
        kl.push(KlCurve { lambdas: grid.to_vec(), values });
        dkl.push(KlCurve { lambdas: grid.to_vec(), values: d });
        per_bit.push(KlCurve { lambdas: grid.to_vec(), values: diff });
    }
    Ok(LowBitCurves { bits: bits.to_vec(), lambdas: grid.to_vec(), kl, dkl, per_bit, areas, peaks })
}
