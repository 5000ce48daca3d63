//! Weighted-sum attention over a sequence.
//!
//! Each timestep gets a scalar score `e_t = tanh(w·x_t + b)`. Scores are
//! normalized to weights `a_t` and the output is the context `Σ_t a_t x_t`.

use super::{init_params, LayerSpec, LayerState};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{softmax_backward_into, softmax_into, Tensor};

/// Threshold below which linear normalization is rejected.
const LINEAR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// `a = softmax(e)`.
    #[default]
    Softmax,
    /// `a_t = e_t / Σ_j e_j`. Weights may be negative; undefined when the sum vanishes.
    Linear,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::Softmax => "softmax",
            NormMode::Linear => "linear",
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "softmax" => Ok(NormMode::Softmax),
            "linear" => Ok(NormMode::Linear),
            other => Err(format!("unknown attention normalization `{other}`")),
        }
    }
}

/// Per-row scores, weights and context of one attention pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `B×T` raw scores `e`.
    pub scores: Tensor,
    /// `B×T` normalized weights `a`.
    pub weights: Tensor,
    /// `B×D` context vectors.
    pub context: Tensor,
}

struct AttentionCache {
    xs: Tensor,
    out: AttentionOutput,
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub mode: NormMode,
    pub state: LayerState,
}

impl Attention {
    pub fn new(dim: usize, mode: NormMode, rng: &mut Rng) -> Self {
        Self::from_state(init_params(&LayerSpec::Attention { dim }, rng), mode)
    }

    pub fn from_state(state: LayerState, mode: NormMode) -> Self {
        Self { mode, state }
    }

    pub fn dim(&self) -> usize {
        self.state.param("w").len()
    }

    pub fn infer(&self, xs: &Tensor) -> Result<AttentionOutput> {
        let d = self.dim();
        let (b, steps) = match *xs.shape() {
            [b, t, dd] if dd == d && t >= 1 => (b, t),
            ref s => {
                return Err(Error::dim(format!(
                    "attention expects B×T×{d} input with T ≥ 1, got {s:?}"
                )))
            }
        };
        let w = self.state.param("w").data();
        let bias = self.state.param("b").data()[0];
        let mut scores = vec![0.0; b * steps];
        let mut weights = vec![0.0; b * steps];
        let mut context = vec![0.0; b * d];

        for bi in 0..b {
            let rows = &xs.data()[bi * steps * d..(bi + 1) * steps * d];
            let e = &mut scores[bi * steps..(bi + 1) * steps];
            for (et, x) in e.iter_mut().zip(rows.chunks(d)) {
                let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                *et = (s + bias).tanh();
            }
            let a = &mut weights[bi * steps..(bi + 1) * steps];
            match self.mode {
                NormMode::Softmax => softmax_into(e, a),
                NormMode::Linear => {
                    let total: f64 = e.iter().sum();
                    if total.abs() < LINEAR_EPS {
                        return Err(Error::DegenerateNormalization(total.abs()));
                    }
                    for (ai, ei) in a.iter_mut().zip(e.iter()) {
                        *ai = ei / total;
                    }
                }
            }
            let ctx = &mut context[bi * d..(bi + 1) * d];
            for (at, x) in a.iter().zip(rows.chunks(d)) {
                for (c, xv) in ctx.iter_mut().zip(x) {
                    *c += at * xv;
                }
            }
        }
        Ok(AttentionOutput {
            scores: Tensor::new(&[b, steps], scores)?,
            weights: Tensor::new(&[b, steps], weights)?,
            context: Tensor::new(&[b, d], context)?,
        })
    }

    pub fn forward(&mut self, xs: &Tensor) -> Result<AttentionOutput> {
        let out = self.infer(xs)?;
        self.state.put_cache(AttentionCache {
            xs: xs.clone(),
            out: out.clone(),
        });
        Ok(out)
    }

    /// Gradient wrt the input sequence from a gradient on the context.
    pub fn backward(&mut self, d_context: &Tensor) -> Result<Tensor> {
        let AttentionCache { xs, out } = self.state.take_cache("attention")?;
        let (b, steps, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
        d_context.expect_shape(&[b, d])?;
        let w = self.state.param("w").clone();
        let mut dxs = vec![0.0; xs.len()];
        let mut dw = vec![0.0; d];
        let mut db = 0.0;
        let mut da = vec![0.0; steps];
        let mut de = vec![0.0; steps];

        for bi in 0..b {
            let rows = &xs.data()[bi * steps * d..(bi + 1) * steps * d];
            let dctx = &d_context.data()[bi * d..(bi + 1) * d];
            let e = &out.scores.data()[bi * steps..(bi + 1) * steps];
            let a = &out.weights.data()[bi * steps..(bi + 1) * steps];
            let dx = &mut dxs[bi * steps * d..(bi + 1) * steps * d];

            for t in 0..steps {
                let x = &rows[t * d..(t + 1) * d];
                da[t] = x.iter().zip(dctx).map(|(p, q)| p * q).sum();
                for (g, c) in dx[t * d..(t + 1) * d].iter_mut().zip(dctx) {
                    *g += a[t] * c;
                }
            }
            match self.mode {
                NormMode::Softmax => softmax_backward_into(a, &da, &mut de),
                NormMode::Linear => {
                    let total: f64 = e.iter().sum();
                    let inner: f64 = a.iter().zip(&da).map(|(p, q)| p * q).sum();
                    for t in 0..steps {
                        de[t] = (da[t] - inner) / total;
                    }
                }
            }
            for t in 0..steps {
                let ds = de[t] * (1.0 - e[t] * e[t]);
                db += ds;
                let x = &rows[t * d..(t + 1) * d];
                for (g, xv) in dw.iter_mut().zip(x) {
                    *g += ds * xv;
                }
                for (g, wv) in dx[t * d..(t + 1) * d].iter_mut().zip(w.data()) {
                    *g += ds * wv;
                }
            }
        }
        for (acc, v) in self.state.grad_mut("w").data_mut().iter_mut().zip(&dw) {
            *acc += v;
        }
        self.state.grad_mut("b").data_mut()[0] += db;
        Tensor::new(xs.shape(), dxs)
    }
}
