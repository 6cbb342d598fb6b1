//! Weighting functions `w(λ)` of the weighted diffusion loss.

use crate::error::{invalid, Error, Result};
use crate::special::{norm_cdf, normal_pdf, sech, sigmoid};

/// Closed-form weighting families. Values are unnormalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingKind {
    Elbo,
    Iddpm,
    Edm,
    VPredCosine,
    FmOt,
    Indi,
    P2 {
        k: f64,
        gamma: f64,
    },
    MinSnr {
        gamma: f64,
    },
    Sigmoid {
        k: f64,
    },
    /// EDM held at its maximum `peak_value` for λ below `peak`.
    EdmMonotonic {
        peak: f64,
        peak_value: f64,
    },
    FiveBitLike,
}

/// A weighting `λ ↦ w(λ - 2·shift)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weighting {
    pub kind: WeightingKind,
    pub shift: f64,
}

/// Optional parameters for [`make_weighting`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightingParams {
    pub k: Option<f64>,
    pub gamma: Option<f64>,
}

pub const WEIGHTING_NAMES: [&str; 11] =
    ["elbo", "iddpm", "edm", "vpred-cosine", "fm-ot", "indi", "p2", "min-snr", "sigmoid-k", "edm-monotonic", "five-bit-like"];

const EDM_MEAN: f64 = 2.4;
const EDM_STD: f64 = 2.4;

/// Builds a weighting by name. `sigmoid-k` requires `k`; also accepts
/// `sigmoid-<k>` as shorthand (e.g. `sigmoid-2`).
pub fn make_weighting(name: &str, params: &WeightingParams) -> Result<Weighting> {
    let kind = match name {
        "elbo" => WeightingKind::Elbo,
        "iddpm" => WeightingKind::Iddpm,
        "edm" => WeightingKind::Edm,
        "vpred-cosine" => WeightingKind::VPredCosine,
        "fm-ot" => WeightingKind::FmOt,
        "indi" => WeightingKind::Indi,
        "p2" => {
            let gamma = params.gamma.unwrap_or(1.0);
            if !(gamma > 0.0) {
                return Err(invalid("p2 needs gamma > 0"));
            }
            WeightingKind::P2 { k: params.k.unwrap_or(1.0), gamma }
        }
        "min-snr" => {
            let gamma = params.gamma.unwrap_or(5.0);
            if !(gamma > 0.0) {
                return Err(invalid("min-snr needs gamma > 0"));
            }
            WeightingKind::MinSnr { gamma }
        }
        "sigmoid-k" => WeightingKind::Sigmoid { k: params.k.ok_or(Error::MissingParameter("k"))? },
        "edm-monotonic" => return monotonize_edm(&Weighting::new(WeightingKind::Edm)),
        "five-bit-like" => WeightingKind::FiveBitLike,
        other => match other.strip_prefix("sigmoid-").and_then(|k| k.parse::<f64>().ok()) {
            Some(k) => WeightingKind::Sigmoid { k },
            None => return Err(Error::UnknownName { kind: "weighting", name: name.to_string() }),
        },
    };
    Ok(Weighting::new(kind))
}

impl Weighting {
    pub fn new(kind: WeightingKind) -> Self {
        Self { kind, shift: 0.0 }
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            WeightingKind::Elbo => "elbo".to_string(),
            WeightingKind::Iddpm => "iddpm".into(),
            WeightingKind::Edm => "edm".into(),
            WeightingKind::VPredCosine => "vpred-cosine".into(),
            WeightingKind::FmOt => "fm-ot".into(),
            WeightingKind::Indi => "indi".into(),
            WeightingKind::P2 { .. } => "p2".into(),
            WeightingKind::MinSnr { .. } => "min-snr".into(),
            WeightingKind::Sigmoid { k } => format!("sigmoid-{k}"),
            WeightingKind::EdmMonotonic { .. } => "edm-monotonic".into(),
            WeightingKind::FiveBitLike => "five-bit-like".into(),
        };
        if self.shift == 0.0 {
            base
        } else {
            format!("{base}-shifted")
        }
    }

    /// Whether the family is nonincreasing in λ.
    pub fn declared_monotonic(&self) -> bool {
        matches!(
            self.kind,
            WeightingKind::Elbo
                | WeightingKind::VPredCosine
                | WeightingKind::FmOt
                | WeightingKind::Indi
                | WeightingKind::Sigmoid { .. }
                | WeightingKind::EdmMonotonic { .. }
                | WeightingKind::FiveBitLike
        )
    }

    /// `w(λ)`.
    pub fn eval(&self, lambda: f64) -> f64 {
        unshifted_value(&self.kind, lambda - 2.0 * self.shift)
    }

    /// `dw/dλ`; one-sided (right) derivative at kinks.
    pub fn derivative(&self, lambda: f64) -> f64 {
        unshifted_derivative(&self.kind, lambda - 2.0 * self.shift)
    }

    /// Points in λ where `w` is not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        let k = match self.kind {
            WeightingKind::EdmMonotonic { peak, .. } => vec![peak],
            WeightingKind::MinSnr { gamma } => vec![gamma.ln()],
            _ => Vec::new(),
        };
        k.into_iter().map(|l| l + 2.0 * self.shift).collect()
    }
}

fn edm(l: f64) -> f64 {
    normal_pdf(l, EDM_MEAN, EDM_STD) * ((-l).exp() + 0.25)
}

fn edm_derivative(l: f64) -> f64 {
    let n = normal_pdf(l, EDM_MEAN, EDM_STD);
    n * (-(l - EDM_MEAN) / (EDM_STD * EDM_STD) * ((-l).exp() + 0.25) - (-l).exp())
}

fn unshifted_value(kind: &WeightingKind, l: f64) -> f64 {
    match *kind {
        WeightingKind::Elbo => 1.0,
        WeightingKind::Iddpm => sech(0.5 * l),
        WeightingKind::Edm => edm(l),
        WeightingKind::VPredCosine | WeightingKind::FmOt => (-0.5 * l).exp(),
        WeightingKind::Indi => {
            let s = sech(0.25 * l);
            (-l).exp() * s * s
        }
        WeightingKind::P2 { k, gamma } => sech(0.5 * l) * (k + l.exp()).powf(-gamma),
        WeightingKind::MinSnr { gamma } => sech(0.5 * l) * (gamma * (-l).exp()).min(1.0),
        WeightingKind::Sigmoid { k } => sigmoid(k - l),
        WeightingKind::EdmMonotonic { peak, peak_value } => {
            if l < peak {
                peak_value
            } else {
                edm(l)
            }
        }
        WeightingKind::FiveBitLike => norm_cdf(-2.0 * (l - 8.4)),
    }
}

fn unshifted_derivative(kind: &WeightingKind, l: f64) -> f64 {
    match *kind {
        WeightingKind::Elbo => 0.0,
        WeightingKind::Iddpm => -0.5 * sech(0.5 * l) * (0.5 * l).tanh(),
        WeightingKind::Edm => edm_derivative(l),
        WeightingKind::VPredCosine | WeightingKind::FmOt => -0.5 * (-0.5 * l).exp(),
        WeightingKind::Indi => {
            let s = sech(0.25 * l);
            (-l).exp() * s * s * (-1.0 - 0.5 * (0.25 * l).tanh())
        }
        WeightingKind::P2 { k, gamma } => {
            let w = unshifted_value(kind, l);
            w * (-0.5 * (0.5 * l).tanh() - gamma * sigmoid(l - k.ln()))
        }
        WeightingKind::MinSnr { gamma } => {
            let w = unshifted_value(kind, l);
            let d = -0.5 * (0.5 * l).tanh();
            if l >= gamma.ln() {
                w * (d - 1.0)
            } else {
                w * d
            }
        }
        WeightingKind::Sigmoid { k } => -sigmoid(k - l) * sigmoid(l - k),
        WeightingKind::EdmMonotonic { peak, .. } => {
            if l < peak {
                0.0
            } else {
                edm_derivative(l)
            }
        }
        WeightingKind::FiveBitLike => -2.0 * normal_pdf(-2.0 * (l - 8.4), 0.0, 1.0),
    }
}

/// Location of the maximum of the EDM weighting, by golden-section search.
pub fn edm_argmax() -> f64 {
    golden_section_max(edm, -10.0, 10.0, 1e-10)
}

/// Golden-section maximization of a unimodal `f` on `[a, b]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// EDM weighting made nonincreasing by holding it at its maximum left of the peak.
pub fn monotonize_edm(w: &Weighting) -> Result<Weighting> {
    match w.kind {
        WeightingKind::Edm => {
            let peak = edm_argmax();
            Ok(Weighting { kind: WeightingKind::EdmMonotonic { peak, peak_value: edm(peak) }, shift: w.shift })
        }
        WeightingKind::EdmMonotonic { .. } => Ok(*w),
        _ => Err(invalid(format!("monotonize_edm expects the EDM weighting, got {}", w.name()))),
    }
}

/// Resolution shift `s = ln(64/d)`: returns `λ ↦ w(λ - 2s)`.
pub fn shift_weighting(w: &Weighting, resolution: f64) -> Result<Weighting> {
    if !(resolution > 0.0) {
        return Err(invalid("resolution must be positive"));
    }
    Ok(Weighting { kind: w.kind, shift: w.shift + (64.0 / resolution).ln() })
}

/// True iff `w(λ_{i+1}) ≤ w(λ_i)(1 + 1e-12)` along the grid.
pub fn is_monotonic(w: &Weighting, grid: &[f64]) -> Result<bool> {
    Ok(first_increase(w, grid)?.is_none())
}

/// First consecutive grid pair on which `w` increases, if any.
pub fn first_increase(w: &Weighting, grid: &[f64]) -> Result<Option<(f64, f64)>> {
    if grid.len() < 2 {
        return Err(invalid("monotonicity check needs at least two grid points"));
    }
    if grid.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(invalid("grid must be strictly increasing"));
    }
    Ok(grid.windows(2).find(|p| w.eval(p[1]) > w.eval(p[0]) * (1.0 + 1e-12)).map(|p| (p[0], p[1])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linspace;
    use proptest::prelude::*;

    fn w(name: &str) -> Weighting {
        make_weighting(name, &WeightingParams { k: Some(2.0), ..Default::default() }).unwrap()
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(w("elbo").eval(3.7), 1.0);
        assert_eq!(w("iddpm").eval(0.0), 1.0);
        assert_eq!(w("sigmoid-k").eval(2.0), 0.5);
        assert_eq!(w("sigmoid-2").eval(2.0), 0.5);
        // N(2.4; 2.4, 2.4²) · (e^{-2.4} + 0.25), written out independently.
        let n = 1.0 / (2.4 * (2.0 * std::f64::consts::PI).sqrt());
        let expected = n * ((-2.4f64).exp() + 0.25);
        assert!((w("edm").eval(2.4) - expected).abs() < 1e-15);
        assert!((expected - 0.05663616552457794).abs() < 1e-15);
        assert_eq!(w("vpred-cosine").eval(0.0), 1.0);
        assert!((w("vpred-cosine").eval(2.0) - 0.36787944117144233).abs() < 1e-16);
    }

    #[test]
    fn table_monotonicity_column() {
        let grid = linspace(-20.0, 20.0, 2001);
        let expected = [
            ("elbo", true),
            ("iddpm", false),
            ("edm", false),
            ("vpred-cosine", true),
            ("fm-ot", true),
            ("indi", true),
            ("p2", false),
            ("min-snr", false),
            ("sigmoid-k", true),
            ("edm-monotonic", true),
            ("five-bit-like", true),
        ];
        for (name, mono) in expected {
            let wt = w(name);
            assert_eq!(is_monotonic(&wt, &grid).unwrap(), mono, "{name}");
            assert_eq!(wt.declared_monotonic(), mono, "{name}");
        }
        assert!(is_monotonic(&w("elbo"), &[]).is_err());
    }

    #[test]
    fn nonnegative_on_grid() {
        for name in WEIGHTING_NAMES {
            let wt = w(name);
            for l in linspace(-20.0, 20.0, 2001) {
                assert!(wt.eval(l) >= 0.0, "{name} at {l}");
            }
        }
    }

    #[test]
    fn vpred_equals_fm_ot() {
        for l in linspace(-20.0, 20.0, 2001) {
            assert_eq!(w("vpred-cosine").eval(l), w("fm-ot").eval(l));
        }
    }

    #[test]
    fn edge_parameters() {
        let p2 = make_weighting("p2", &WeightingParams { k: Some(1.0), gamma: Some(1.0) }).unwrap();
        let p2_0 = Weighting::new(WeightingKind::P2 { k: 1.0, gamma: 0.0 });
        for l in linspace(-20.0, 20.0, 401) {
            assert_eq!(p2_0.eval(l), w("iddpm").eval(l));
            assert!(p2.eval(l) <= w("iddpm").eval(l));
        }
        let m = make_weighting("min-snr", &WeightingParams { gamma: Some(1.0), ..Default::default() }).unwrap();
        assert_eq!(m.eval(0.0), 1.0);
        assert!((m.eval(1e-9) - m.eval(-1e-9)).abs() < 1e-8);
        assert!(make_weighting("p2", &WeightingParams { gamma: Some(0.0), ..Default::default() }).is_err());
        assert!(matches!(make_weighting("sigmoid-k", &Default::default()), Err(Error::MissingParameter(_))));
        assert!(make_weighting("nope", &Default::default()).is_err());
    }

    #[test]
    fn edm_monotonic_peak() {
        let peak = edm_argmax();
        let grid = linspace(-20.0, 20.0, 400001);
        let dense = grid.iter().copied().fold((0.0, f64::MIN), |(a, v), l| if edm(l) > v { (l, edm(l)) } else { (a, v) });
        assert!((peak - dense.0).abs() < 1e-4);
        assert!(edm(peak) >= dense.1 && edm(peak) - dense.1 < 1e-9);
        // dw/dλ vanishes at the peak.
        assert!(edm_derivative(peak).abs() < 1e-6);
        let m = w("edm-monotonic");
        assert_eq!(m.eval(peak + 3.0), w("edm").eval(peak + 3.0));
        assert_eq!(m.eval(peak - 5.0), edm(peak));
        assert!(monotonize_edm(&w("elbo")).is_err());
    }

    #[test]
    fn shift_moves_peak() {
        let m = w("edm-monotonic");
        let shifted = shift_weighting(&m, 128.0).unwrap();
        let s = 0.5f64.ln();
        let p0 = golden_section_max(|l| w("edm").eval(l), -10.0, 10.0, 1e-10);
        let sh_edm = shift_weighting(&w("edm"), 128.0).unwrap();
        let p1 = golden_section_max(|l| sh_edm.eval(l), -10.0, 10.0, 1e-10);
        assert!((p1 - p0 - 2.0 * s).abs() < 1e-6);
        assert!((shifted.kinks()[0] - p1).abs() < 1e-6);
        assert_eq!(shift_weighting(&m, 64.0).unwrap(), m);
    }

    #[test]
    fn shifted_vpred_is_a_constant_multiple() {
        let v = w("vpred-cosine");
        let sv = shift_weighting(&v, 256.0).unwrap();
        let r0 = sv.eval(0.0) / v.eval(0.0);
        for l in linspace(-20.0, 20.0, 101) {
            assert!((sv.eval(l) / v.eval(l) - r0).abs() < 1e-12 * r0);
        }
        assert!((r0 - (64.0f64 / 256.0).ln().exp()).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for name in WEIGHTING_NAMES {
            let wt = shift_weighting(&w(name), 96.0).unwrap();
            for l in linspace(-15.0, 15.0, 61) {
                if wt.kinks().iter().any(|k| (k - l).abs() < 1e-3) {
                    continue;
                }
                let h = 1e-5;
                let fd = (wt.eval(l + h) - wt.eval(l - h)) / (2.0 * h);
                let d = wt.derivative(l);
                assert!((fd - d).abs() < 1e-6 * (1.0 + d.abs()), "{name} at {l}: {fd} vs {d}");
            }
        }
    }

    proptest! {
        #[test]
        fn declared_monotone_never_increases(a in -20.0f64..20.0, b in -20.0f64..20.0, d in 16.0f64..1024.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for name in WEIGHTING_NAMES {
                let wt = shift_weighting(&w(name), d).unwrap();
                if wt.declared_monotonic() {
                    prop_assert!(wt.eval(hi) <= wt.eval(lo) * (1.0 + 1e-12));
                }
            }
        }
    }
}
