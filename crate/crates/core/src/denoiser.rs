//! Score sources: anything that predicts a parameterization of the denoiser.

use crate::error::{Error, Result};
use crate::oracle::MixtureOracle;
use crate::process::{convert_prediction, ForwardProcess, PredictionKind};

/// A denoiser `(z, λ) ↦ prediction` in its native parameterization.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> PredictionKind;
    fn predict(&self, z: &[f64], lambda: f64) -> Vec<f64>;
}

/// Prediction converted to `kind`.
pub fn predict_as(
    model: &dyn Denoiser,
    z: &[f64],
    lambda: f64,
    kind: PredictionKind,
    proc: ForwardProcess,
    sigma_data: f64,
) -> Result<Vec<f64>> {
    if z.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: z.len() });
    }
    let raw = model.predict(z, lambda);
    convert_prediction(&raw, model.kind(), kind, z, lambda, proc, sigma_data)
}

/// The Bayes-optimal ε-predictor of a mixture oracle.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub oracle: MixtureOracle,
    pub proc: ForwardProcess,
}

impl Denoiser for OracleDenoiser {
    fn dim(&self) -> usize {
        1
    }

    fn kind(&self) -> PredictionKind {
        PredictionKind::Eps
    }

    fn predict(&self, z: &[f64], lambda: f64) -> Vec<f64> {
        let s = self.proc.sigma(lambda);
        vec![-s * self.oracle.exact_score(z[0], lambda, self.proc)]
    }
}

/// Predicts zero in its parameterization.
#[derive(Debug, Clone, Copy)]
pub struct ZeroDenoiser {
    pub dim: usize,
    pub kind: PredictionKind,
}

impl Denoiser for ZeroDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn predict(&self, _z: &[f64], _lambda: f64) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}
