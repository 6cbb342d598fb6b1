//! Forward processes and score-model parameterizations.

use crate::error::{invalid, Error, Result};
use crate::special::sigmoid;

/// Default `σ̃_data` of the F-parameterization.
pub const DEFAULT_SIGMA_DATA: f64 = 0.5;

/// Forward process `z = α_λ x + σ_λ ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardProcess {
    /// Variance preserving: `α² = sigmoid(λ)`, `σ² = sigmoid(-λ)`.
    #[default]
    Vp,
    /// Variance exploding: `α = 1`, `σ² = e^{-λ}`.
    Ve,
}

impl ForwardProcess {
    pub fn alpha_sq(self, lambda: f64) -> f64 {
        match self {
            ForwardProcess::Vp => sigmoid(lambda),
            ForwardProcess::Ve => 1.0,
        }
    }

    pub fn sigma_sq(self, lambda: f64) -> f64 {
        match self {
            ForwardProcess::Vp => sigmoid(-lambda),
            ForwardProcess::Ve => (-lambda).exp(),
        }
    }

    pub fn alpha(self, lambda: f64) -> f64 {
        self.alpha_sq(lambda).sqrt()
    }

    pub fn sigma(self, lambda: f64) -> f64 {
        self.sigma_sq(lambda).sqrt()
    }

    /// Standard deviation of the terminal distribution `p(z₁)` at `λmin`.
    pub fn prior_std(self, lambda_min: f64) -> f64 {
        match self {
            ForwardProcess::Vp => 1.0,
            ForwardProcess::Ve => (-0.5 * lambda_min).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ForwardProcess::Vp => "vp",
            ForwardProcess::Ve => "ve",
        }
    }

    pub(crate) fn checked(self, lambda: f64) -> Result<(f64, f64)> {
        let (a, s) = (self.alpha(lambda), self.sigma(lambda));
        if !(a > 0.0 && s > 0.0 && a.is_finite() && s.is_finite()) {
            return Err(Error::Degenerate(lambda));
        }
        Ok((a, s))
    }
}

impl std::str::FromStr for ForwardProcess {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" => Ok(ForwardProcess::Vp),
            "ve" => Ok(ForwardProcess::Ve),
            _ => Err(Error::UnknownName { kind: "process", name: s.into() }),
        }
    }
}

/// Quantity predicted by a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictionKind {
    Eps,
    X,
    V,
    Score,
    F,
    O,
}

impl PredictionKind {
    pub const ALL: [PredictionKind; 6] =
        [PredictionKind::Eps, PredictionKind::X, PredictionKind::V, PredictionKind::Score, PredictionKind::F, PredictionKind::O];
}

impl std::str::FromStr for PredictionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eps" => Ok(PredictionKind::Eps),
            "x" => Ok(PredictionKind::X),
            "v" => Ok(PredictionKind::V),
            "score" => Ok(PredictionKind::Score),
            "f" => Ok(PredictionKind::F),
            "o" => Ok(PredictionKind::O),
            _ => Err(Error::UnknownName { kind: "prediction kind", name: s.into() }),
        }
    }
}

/// A noised data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
    pub lambda: f64,
    pub z: Vec<f64>,
}

/// `z = α x + σ ε`.
pub fn diffuse(x: &[f64], lambda: f64, eps: &[f64], proc: ForwardProcess) -> Result<Sample> {
    if x.len() != eps.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: eps.len() });
    }
    let (a, s) = (proc.alpha(lambda), proc.sigma(lambda));
    let z = x.iter().zip(eps).map(|(xi, ei)| a * xi + s * ei).collect();
    Ok(Sample { x: x.to_vec(), eps: eps.to_vec(), lambda, z })
}

/// Coefficients with `x = c_skip z + c_out F`; `c_skip` absorbs the `1/α` rescaling of `z`.
fn f_coefficients(lambda: f64, proc: ForwardProcess, sigma_data: f64) -> (f64, f64) {
    let a = proc.alpha(lambda);
    let inv_snr = (-lambda).exp();
    let sd2 = sigma_data * sigma_data;
    let c_skip = sd2 / (inv_snr + sd2) / a;
    let c_out = (-0.5 * lambda).exp() * sigma_data / (inv_snr + sd2).sqrt();
    (c_skip, c_out)
}

fn to_eps(v: f64, kind: PredictionKind, z: f64, a: f64, s: f64, lambda: f64, proc: ForwardProcess, sd: f64) -> f64 {
    match kind {
        PredictionKind::Eps => v,
        PredictionKind::X => (z - a * v) / s,
        PredictionKind::V => (a * v + s * z) / (a * a + s * s),
        PredictionKind::Score => -s * v,
        PredictionKind::F => {
            let (c_skip, c_out) = f_coefficients(lambda, proc, sd);
            let x = c_skip * z + c_out * v;
            (z - a * x) / s
        }
        PredictionKind::O => (z - a * v) / (s + a),
    }
}

fn from_eps(e: f64, kind: PredictionKind, z: f64, a: f64, s: f64, lambda: f64, proc: ForwardProcess, sd: f64) -> f64 {
    match kind {
        PredictionKind::Eps => e,
        PredictionKind::X => (z - s * e) / a,
        PredictionKind::V => ((a * a + s * s) * e - s * z) / a,
        PredictionKind::Score => -e / s,
        PredictionKind::F => {
            let (c_skip, c_out) = f_coefficients(lambda, proc, sd);
            let x = (z - s * e) / a;
            (x - c_skip * z) / c_out
        }
        PredictionKind::O => (z - s * e) / a - e,
    }
}

/// Converts a prediction between parameterizations at fixed `(z, λ)`.
pub fn convert_prediction(
    value: &[f64],
    from: PredictionKind,
    to: PredictionKind,
    z: &[f64],
    lambda: f64,
    proc: ForwardProcess,
    sigma_data: f64,
) -> Result<Vec<f64>> {
    if value.len() != z.len() {
        return Err(Error::DimensionMismatch { expected: z.len(), got: value.len() });
    }
    if from == to {
        return Ok(value.to_vec());
    }
    if (from == PredictionKind::F || to == PredictionKind::F) && !(sigma_data > 0.0) {
        return Err(invalid("F-parameterization needs sigma_data > 0"));
    }
    let (a, s) = proc.checked(lambda)?;
    Ok(value
        .iter()
        .zip(z)
        .map(|(&v, &zi)| {
            let e = to_eps(v, from, zi, a, s, lambda, proc, sigma_data);
            from_eps(e, to, zi, a, s, lambda, proc, sigma_data)
        })
        .collect())
}

/// Scalar form of [`convert_prediction`].
pub fn convert_scalar(
    value: f64,
    from: PredictionKind,
    to: PredictionKind,
    z: f64,
    lambda: f64,
    proc: ForwardProcess,
    sigma_data: f64,
) -> Result<f64> {
    Ok(convert_prediction(&[value], from, to, &[z], lambda, proc, sigma_data)?[0])
}

/// `c_k` with `‖ε - ε̂‖² = c_k ‖k - k̂‖²`.
fn eps_factor(kind: PredictionKind, lambda: f64, proc: ForwardProcess, sd: f64) -> Result<f64> {
    let (a2, s2) = (proc.alpha_sq(lambda), proc.sigma_sq(lambda));
    if !(a2 > 0.0 && s2 > 0.0) {
        return Err(Error::Degenerate(lambda));
    }
    Ok(match kind {
        PredictionKind::Eps => 1.0,
        PredictionKind::X => a2 / s2,
        PredictionKind::V => a2 / ((a2 + s2) * (a2 + s2)),
        PredictionKind::Score => s2,
        PredictionKind::F => {
            if !(sd > 0.0) {
                return Err(invalid("F-parameterization needs sigma_data > 0"));
            }
            let sd2 = sd * sd;
            sd2 / ((-lambda).exp() + sd2)
        }
        PredictionKind::O => {
            let r = 1.0 + (s2 / a2).sqrt();
            1.0 / (r * r)
        }
    })
}

/// Factor `c` with `‖to - tô‖² = c · ‖from - from̂‖²` at this λ.
///
/// For instance `X → EPS` at `λ = ln 4` gives 4 and `V → EPS` at `λ = 0`
/// gives 1/2 under VP.
pub fn loss_equivalence_factor(
    from: PredictionKind,
    to: PredictionKind,
    lambda: f64,
    proc: ForwardProcess,
    sigma_data: f64,
) -> Result<f64> {
    Ok(eps_factor(from, lambda, proc, sigma_data)? / eps_factor(to, lambda, proc, sigma_data)?)
}

/// Drift coefficient `f(t)` (with drift `f(t)·z`) and squared diffusion `g(t)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeCoefficients {
    pub drift_coeff: f64,
    pub diffusion_sq: f64,
}

pub fn sde_coefficients(lambda: f64, dlambda_dt: f64, proc: ForwardProcess) -> SdeCoefficients {
    match proc {
        ForwardProcess::Vp => {
            let g2 = -dlambda_dt * sigmoid(-lambda);
            SdeCoefficients { drift_coeff: -0.5 * g2, diffusion_sq: g2 }
        }
        ForwardProcess::Ve => SdeCoefficients { drift_coeff: 0.0, diffusion_sq: -dlambda_dt * (-lambda).exp() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linspace;
    use proptest::prelude::*;
    use PredictionKind::*;

    const PROCS: [ForwardProcess; 2] = [ForwardProcess::Vp, ForwardProcess::Ve];

    #[test]
    fn vp_normalization() {
        for l in linspace(-20.0, 20.0, 101) {
            let p = ForwardProcess::Vp;
            assert!((p.alpha_sq(l) + p.sigma_sq(l) - 1.0).abs() < 1e-14);
            assert!(((p.alpha_sq(l) / p.sigma_sq(l)).ln() - l).abs() < 1e-12);
            let v = ForwardProcess::Ve;
            assert!(((v.alpha_sq(l) / v.sigma_sq(l)).ln() - l).abs() < 1e-12);
        }
    }

    #[test]
    fn diffuse_examples() {
        let s = diffuse(&[1.0], 0.0, &[0.0], ForwardProcess::Vp).unwrap();
        assert!((s.z[0] - 0.5f64.sqrt()).abs() < 1e-16);
        let s = diffuse(&[1.0], 3.3, &[0.0], ForwardProcess::Ve).unwrap();
        assert_eq!(s.z[0], 1.0);
        let s = diffuse(&[1.0], 2.0, &[-1.0], ForwardProcess::Vp).unwrap();
        let expected = (1.0 / (1.0 + (-2f64).exp())).sqrt() - (1.0 / (1.0 + 2f64.exp())).sqrt();
        assert!((s.z[0] - expected).abs() < 1e-15);
        assert!((expected - 0.5932501380835191).abs() < 1e-14);
        assert!(diffuse(&[1.0, 2.0], 0.0, &[0.0], ForwardProcess::Vp).is_err());
    }

    #[test]
    fn conversion_examples() {
        let vp = ForwardProcess::Vp;
        let sc = convert_scalar(1.0, Eps, Score, 0.3, 0.0, vp, 0.5).unwrap();
        assert!((sc + 2f64.sqrt()).abs() < 1e-15);
        let r = 0.5f64.sqrt();
        let x = (0.5 - r * 0.2) / r;
        let v_expected = r * 0.2 - r * x;
        let v = convert_scalar(0.2, Eps, V, 0.5, 0.0, vp, 0.5).unwrap();
        assert!((v - v_expected).abs() < 1e-15);
        assert!((v + 0.21716).abs() < 1e-5);
        assert!(convert_scalar(1.0, Eps, Score, 0.0, f64::INFINITY, vp, 0.5).is_err());
        assert!(convert_scalar(1.0, Eps, F, 0.0, 0.0, vp, 0.0).is_err());
    }

    #[test]
    fn v_and_o_definitions() {
        // v = α ε − σ x and o = x − ε for a consistent (x, ε, z).
        for p in PROCS {
            let (x, e, l) = (0.7, -1.3, 0.8);
            let z = diffuse(&[x], l, &[e], p).unwrap().z[0];
            let (a, s) = (p.alpha(l), p.sigma(l));
            let v = convert_scalar(e, Eps, V, z, l, p, 0.5).unwrap();
            let o = convert_scalar(e, Eps, O, z, l, p, 0.5).unwrap();
            let xh = convert_scalar(e, Eps, X, z, l, p, 0.5).unwrap();
            assert!((xh - x).abs() < 1e-14);
            assert!((o - (x - e)).abs() < 1e-14);
            if p == ForwardProcess::Vp {
                assert!((v - (a * e - s * x)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn equivalence_factor_examples() {
        let vp = ForwardProcess::Vp;
        assert!((loss_equivalence_factor(X, Eps, 4f64.ln(), vp, 0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!((loss_equivalence_factor(V, Eps, 0.0, vp, 0.5).unwrap() - 0.5).abs() < 1e-15);
        for l in linspace(-10.0, 10.0, 21) {
            assert!((loss_equivalence_factor(F, V, l, vp, 1.0).unwrap() - 1.0).abs() < 1e-13);
            let v = loss_equivalence_factor(V, Eps, l, vp, 0.5).unwrap();
            assert!((v - 1.0 / ((-l).exp() + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn sde_examples() {
        let c = sde_coefficients(0.0, -2.0, ForwardProcess::Vp);
        assert_eq!(c.diffusion_sq, 1.0);
        assert_eq!(c.drift_coeff, -0.5);
        assert_eq!(sde_coefficients(1.0, -3.0, ForwardProcess::Ve).drift_coeff, 0.0);
        assert_eq!(sde_coefficients(1.0, 0.0, ForwardProcess::Vp).diffusion_sq, 0.0);
    }

    #[test]
    fn vp_sde_matches_log_form() {
        // g² = d/dt log(1 + e^{-λ_t}) for λ_t = 3 − 5t.
        let lam = |t: f64| 3.0 - 5.0 * t;
        let t = 0.4;
        let h = 1e-6;
        let f = |t: f64| (1.0 + (-lam(t)).exp()).ln();
        let fd = (f(t + h) - f(t - h)) / (2.0 * h);
        let c = sde_coefficients(lam(t), -5.0, ForwardProcess::Vp);
        assert!((c.diffusion_sq - fd).abs() < 1e-8);
    }

    #[test]
    fn conditional_score_is_minus_eps_over_sigma() {
        for p in PROCS {
            let (x, e, l) = (0.4, 0.9, -1.1);
            let (a, s) = (p.alpha(l), p.sigma(l));
            let z = a * x + s * e;
            let logq = |z: f64| -0.5 * ((z - a * x) / s).powi(2);
            let h = 1e-5;
            let fd = (logq(z + h) - logq(z - h)) / (2.0 * h);
            assert!((fd + e / s).abs() < 1e-6);
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #[test]
        fn round_trips(v in -5.0f64..5.0, z in -5.0f64..5.0, l in -12.0f64..12.0, vp in any::<bool>()) {
            let p = if vp { ForwardProcess::Vp } else { ForwardProcess::Ve };
            for a in PredictionKind::ALL {
                for b in PredictionKind::ALL {
                    let w = convert_scalar(v, a, b, z, l, p, 0.5).unwrap();
                    let back = convert_scalar(w, b, a, z, l, p, 0.5).unwrap();
                    // Relative to the scale of the quantities entering the map.
                    let scale = v.abs().max(z.abs() * p.alpha(l).max(1.0 / p.sigma(l))).max(1.0);
                    prop_assert!((back - v).abs() <= 1e-12 * scale * (1.0 + (0.5 * l.abs()).exp()),
                        "{a:?}->{b:?}: {v} -> {w} -> {back}");
                }
            }
        }

        #[test]
        fn residual_factors(x in -3.0f64..3.0, e in -3.0f64..3.0, eh in -3.0f64..3.0, l in -12.0f64..12.0, vp in any::<bool>()) {
            let p = if vp { ForwardProcess::Vp } else { ForwardProcess::Ve };
            let z = diffuse(&[x], l, &[e], p).unwrap().z[0];
            let de = (e - eh).powi(2);
            for k in PredictionKind::ALL {
                let truth = convert_scalar(e, Eps, k, z, l, p, 0.5).unwrap();
                let pred = convert_scalar(eh, Eps, k, z, l, p, 0.5).unwrap();
                let dk = (truth - pred).powi(2);
                let c = loss_equivalence_factor(k, Eps, l, p, 0.5).unwrap();
                prop_assert!(rel(de, c * dk) < 1e-9 || (de - c * dk).abs() < 1e-12, "{k:?}");
            }
        }
    }
}
