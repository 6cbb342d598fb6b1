//! A small multilayer perceptron over `[z, embed(λ)]` with hand-written
//! reverse-mode gradients.

use crate::denoiser::Denoiser;
use crate::error::{invalid, Error, Result};
use crate::process::PredictionKind;
use crate::rng::{stream_rng, Stream};
use crate::special::sigmoid;
use rand::Rng;
use rand_distr::StandardNormal;

/// Lowest and highest embedding frequency, applied to `λ/4`.
const MIN_FREQ: f64 = 0.5;
const MAX_FREQ: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub dim: usize,
    /// Number of sinusoidal features of `λ/4`; must be even and at least 2.
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub kind: PredictionKind,
    pub zero_final: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { dim: 1, embed_dim: 16, hidden: vec![64, 64], kind: PredictionKind::Eps, zero_final: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    w: usize,
    b: usize,
    inp: usize,
    out: usize,
}

fn layout(cfg: &NetConfig) -> Result<(Vec<Layer>, usize)> {
    if cfg.dim == 0 || cfg.embed_dim < 2 || !cfg.embed_dim.is_multiple_of(2) || cfg.hidden.contains(&0) {
        return Err(invalid("network needs dim >= 1, an even embedding >= 2 and nonzero widths"));
    }
    let mut widths = vec![cfg.dim + cfg.embed_dim];
    widths.extend(&cfg.hidden);
    widths.push(cfg.dim);
    let mut layers = Vec::new();
    let mut offset = 0;
    for w in widths.windows(2) {
        let (inp, out) = (w[0], w[1]);
        layers.push(Layer { w: offset, b: offset + inp * out, inp, out });
        offset += inp * out + out;
    }
    Ok((layers, offset))
}

/// `silu(x) = x·sigmoid(x)` and its derivative.
fn silu(x: f64) -> (f64, f64) {
    let s = sigmoid(x);
    (x * s, s * (1.0 + x * (1.0 - s)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    config: NetConfig,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
struct Tape {
    inputs: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl DenoiserNet {
    /// Random initialization with weights `N(0, 1/fan_in)` and zero biases.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let (layers, count) = layout(&config)?;
        let mut params = vec![0.0; count];
        let mut rng = stream_rng(seed, Stream::Init, 0);
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            if i == last && config.zero_final {
                continue;
            }
            let scale = (1.0 / l.inp as f64).sqrt();
            for p in &mut params[l.w..l.b] {
                *p = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { config, layers, params })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        let (layers, count) = layout(&config)?;
        if params.len() != count {
            return Err(Error::DimensionMismatch { expected: count, got: params.len() });
        }
        Ok(Self { config, layers, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Sinusoidal features `sin(f_k λ/4), cos(f_k λ/4)` over geometrically
    /// spaced frequencies.
    pub fn embed(&self, lambda: f64) -> Vec<f64> {
        let k = self.config.embed_dim / 2;
        let x = lambda / 4.0;
        let mut out = Vec::with_capacity(2 * k);
        for i in 0..k {
            let f = if k == 1 { MIN_FREQ } else { MIN_FREQ * (MAX_FREQ / MIN_FREQ).powf(i as f64 / (k - 1) as f64) };
            let (s, c) = (f * x).sin_cos();
            out.push(s);
            out.push(c);
        }
        out
    }

    fn run(&self, z: &[f64], lambda: f64, tape: Option<&mut Tape>) -> Result<Vec<f64>> {
        if z.len() != self.config.dim {
            return Err(Error::DimensionMismatch { expected: self.config.dim, got: z.len() });
        }
        let mut h: Vec<f64> = z.iter().copied().chain(self.embed(lambda)).collect();
        let last = self.layers.len() - 1;
        let mut tape = tape;
        for (i, l) in self.layers.iter().enumerate() {
            let w = &self.params[l.w..l.b];
            let b = &self.params[l.b..l.b + l.out];
            let mut a: Vec<f64> = b.to_vec();
            for (o, ao) in a.iter_mut().enumerate() {
                let row = &w[o * l.inp..(o + 1) * l.inp];
                *ao += row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
            }
            if i < last {
                let (act, slope): (Vec<f64>, Vec<f64>) = a.iter().map(|&x| silu(x)).unzip();
                if let Some(t) = tape.as_deref_mut() {
                    t.inputs.push(std::mem::replace(&mut h, act));
                    t.slopes.push(slope);
                } else {
                    h = act;
                }
            } else {
                if let Some(t) = tape.as_deref_mut() {
                    t.inputs.push(h);
                }
                return Ok(a);
            }
        }
        unreachable!("network has at least one layer")
    }

    pub fn forward(&self, z: &[f64], lambda: f64) -> Result<Vec<f64>> {
        self.run(z, lambda, None)
    }

    /// Evaluates the network, asks `loss` for the value and output gradient,
    /// and accumulates parameter gradients into `grad`.
    pub fn value_and_grad(
        &self,
        z: &[f64],
        lambda: f64,
        grad: &mut [f64],
        loss: impl FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: grad.len() });
        }
        let mut tape = Tape { inputs: Vec::new(), slopes: Vec::new() };
        let out = self.run(z, lambda, Some(&mut tape))?;
        let (value, mut g) = loss(&out)?;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[i];
            let w = &self.params[l.w..l.b];
            let mut g_in = vec![0.0; l.inp];
            for (o, go) in g.iter().enumerate() {
                grad[l.b + o] += go;
                let row = &w[o * l.inp..(o + 1) * l.inp];
                let grow = &mut grad[l.w + o * l.inp..l.w + (o + 1) * l.inp];
                for j in 0..l.inp {
                    grow[j] += go * input[j];
                    g_in[j] += go * row[j];
                }
            }
            if i > 0 {
                for (gj, s) in g_in.iter_mut().zip(&tape.slopes[i - 1]) {
                    *gj *= s;
                }
            }
            g = g_in;
        }
        Ok(value)
    }
}

impl Denoiser for DenoiserNet {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn kind(&self) -> PredictionKind {
        self.config.kind
    }

    fn predict(&self, z: &[f64], lambda: f64) -> Vec<f64> {
        self.forward(z, lambda).expect("input dimension checked by caller")
    }
}
