//! Analytic gradients against central finite differences, layer by layer
//! and for a whole small model.

use crate::error::{Error, Result};
use crate::layers::{
    init_params, lstm_step, lstm_step_backward, Attention, BiLstm, Conv2d, Dense, LayerSpec,
    MaxPool, NormMode, Padding,
};
use crate::model::{build_model, Backbone, Model, ModelConfig};
use crate::rng::Rng;
use crate::tensor::{
    finite_difference_grad, max_rel_error, rel_error, softmax_rows, Activation, Tensor,
};
use crate::training::{cross_entropy, cross_entropy_logit_grad};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub const LAYERS: [&str; 8] = [
    "dense",
    "conv2d",
    "maxpool",
    "lstm_step",
    "bilstm",
    "attention_softmax",
    "attention_linear",
    "softmax_ce",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub layer: String,
    pub seeds: usize,
    /// Worst relative error over every seed, input and parameter.
    pub max_rel_err: f64,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).expect("positive shape")
}

fn compare(analytic: &Tensor, f: impl FnMut(&Tensor) -> f64, at: &Tensor) -> Result<f64> {
    let numeric = finite_difference_grad(f, at, STEP)?;
    max_rel_error(analytic, &numeric)
}

fn check_dense(rng: &mut Rng) -> Result<f64> {
    let mut d = Dense::new(4, 3, Activation::Tanh, rng);
    *d.state.param_mut("b") = uniform(&[3], -0.5, 0.5, rng);
    let x = uniform(&[5, 4], -1.0, 1.0, rng);
    let r = uniform(&[5, 3], -1.0, 1.0, rng);
    d.forward(&x)?;
    let dx = d.backward(&r)?;
    let mut worst = compare(&dx, |v| d.infer(v).unwrap().dot(&r).unwrap(), &x)?;
    for name in ["w", "b"] {
        let p = d.state.param(name).clone();
        let f = |v: &Tensor| {
            let mut probe = d.clone();
            *probe.state.param_mut(name) = v.clone();
            probe.infer(&x).unwrap().dot(&r).unwrap()
        };
        worst = worst.max(compare(d.state.grad(name), f, &p)?);
    }
    Ok(worst)
}

fn check_conv(rng: &mut Rng) -> Result<f64> {
    // Alternate between stride-1 same padding and stride-2 valid padding.
    let (stride, padding, side) = if rng.below(2) == 0 {
        (1, Padding::Same, 5)
    } else {
        (2, Padding::Valid, 6)
    };
    let mut conv = Conv2d::new(3, 2, 3, stride, padding, Activation::Relu, rng);
    *conv.state.param_mut("bias") = uniform(&[3], -0.2, 0.2, rng);
    let x = uniform(&[2, side, side, 2], -1.0, 1.0, rng);
    let y = conv.forward(&x)?;
    let r = uniform(y.shape(), -1.0, 1.0, rng);
    let dx = conv.backward(&r)?;
    let mut worst = compare(&dx, |v| conv.infer(v).unwrap().dot(&r).unwrap(), &x)?;
    for name in ["kernel", "bias"] {
        let p = conv.state.param(name).clone();
        let f = |v: &Tensor| {
            let mut probe = conv.clone();
            *probe.state.param_mut(name) = v.clone();
            probe.infer(&x).unwrap().dot(&r).unwrap()
        };
        worst = worst.max(compare(conv.state.grad(name), f, &p)?);
    }
    Ok(worst)
}

fn check_pool(rng: &mut Rng) -> Result<f64> {
    let mut pool = MaxPool::new(2, 2);
    let x = uniform(&[2, 4, 5, 3], -1.0, 1.0, rng);
    let y = pool.forward(&x)?;
    let r = uniform(y.shape(), -1.0, 1.0, rng);
    let dx = pool.backward(&r)?;
    compare(&dx, |v| pool.infer(v).unwrap().dot(&r).unwrap(), &x)
}

fn check_lstm_step(rng: &mut Rng) -> Result<f64> {
    let (inputs, units, batch) = (3, 4, 2);
    let mut state = init_params(&LayerSpec::Lstm { inputs, units }, rng);
    let names: Vec<String> = state.params().map(|(n, _)| n.to_string()).collect();
    for name in &names {
        let noise = uniform(state.param(name).shape(), -0.3, 0.3, rng);
        *state.param_mut(name) = state.param(name).add(&noise)?;
    }
    let x = uniform(&[batch, inputs], -1.0, 1.0, rng);
    let h0 = uniform(&[batch, units], -1.0, 1.0, rng);
    let c0 = uniform(&[batch, units], -1.0, 1.0, rng);
    let rh = uniform(&[batch, units], -1.0, 1.0, rng);
    let rc = uniform(&[batch, units], -1.0, 1.0, rng);
    let objective = |x: &Tensor, h: &Tensor, c: &Tensor, s: &crate::layers::LayerState| {
        let (h1, c1, _) = lstm_step(x, h, c, s).unwrap();
        h1.dot(&rh).unwrap() + c1.dot(&rc).unwrap()
    };
    let (_, _, cache) = lstm_step(&x, &h0, &c0, &state)?;
    let (dx, dh, dc) = lstm_step_backward(&mut state, cache, &rh, &rc)?;
    let mut worst = compare(&dx, |v| objective(v, &h0, &c0, &state), &x)?;
    worst = worst.max(compare(&dh, |v| objective(&x, v, &c0, &state), &h0)?);
    worst = worst.max(compare(&dc, |v| objective(&x, &h0, v, &state), &c0)?);
    for name in &names {
        let p = state.param(name).clone();
        let f = |v: &Tensor| {
            let mut probe = state.clone();
            *probe.param_mut(name) = v.clone();
            objective(&x, &h0, &c0, &probe)
        };
        worst = worst.max(compare(state.grad(name), f, &p)?);
    }
    Ok(worst)
}

fn check_bilstm(rng: &mut Rng) -> Result<f64> {
    let mut bi = BiLstm::new(3, 4, rng);
    let xs = uniform(&[2, 4, 3], -1.0, 1.0, rng);
    let r = uniform(&[2, 4, 8], -1.0, 1.0, rng);
    bi.forward(&xs)?;
    let dxs = bi.backward(&r)?;
    let mut worst = compare(&dxs, |v| bi.infer(v).unwrap().dot(&r).unwrap(), &xs)?;
    for dir in 0..2 {
        let names: Vec<String> = {
            let lstm = if dir == 0 { &bi.fwd } else { &bi.bwd };
            lstm.state.params().map(|(n, _)| n.to_string()).collect()
        };
        for name in &names {
            let (p, g) = {
                let lstm = if dir == 0 { &bi.fwd } else { &bi.bwd };
                (
                    lstm.state.param(name).clone(),
                    lstm.state.grad(name).clone(),
                )
            };
            let f = |v: &Tensor| {
                let mut probe = bi.clone();
                let lstm = if dir == 0 {
                    &mut probe.fwd
                } else {
                    &mut probe.bwd
                };
                *lstm.state.param_mut(name) = v.clone();
                probe.infer(&xs).unwrap().dot(&r).unwrap()
            };
            worst = worst.max(compare(&g, f, &p)?);
        }
    }
    Ok(worst)
}

fn check_attention(mode: NormMode, rng: &mut Rng) -> Result<f64> {
    let mut att = Attention::new(3, mode, rng);
    att.state.param_mut("b").data_mut()[0] = rng.uniform_range(0.5, 1.0);
    // Linear normalization divides by Σe; positive scores keep it away from 0.
    let xs = if mode == NormMode::Linear {
        att.state
            .param_mut("w")
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = v.abs() + 0.1);
        uniform(&[2, 4, 3], 0.0, 1.0, rng)
    } else {
        uniform(&[2, 4, 3], -1.0, 1.0, rng)
    };
    let r = uniform(&[2, 3], -1.0, 1.0, rng);
    att.forward(&xs)?;
    let dxs = att.backward(&r)?;
    let mut worst = compare(
        &dxs,
        |v| att.infer(v).unwrap().context.dot(&r).unwrap(),
        &xs,
    )?;
    for name in ["w", "b"] {
        let p = att.state.param(name).clone();
        let f = |v: &Tensor| {
            let mut probe = att.clone();
            *probe.state.param_mut(name) = v.clone();
            probe.infer(&xs).unwrap().context.dot(&r).unwrap()
        };
        worst = worst.max(compare(att.state.grad(name), f, &p)?);
    }
    Ok(worst)
}

fn check_softmax_ce(rng: &mut Rng) -> Result<f64> {
    let logits = uniform(&[6, 2], -3.0, 3.0, rng);
    let labels: Vec<usize> = (0..6).map(|_| rng.below(2)).collect();
    let analytic = cross_entropy_logit_grad(&softmax_rows(&logits)?, &labels)?;
    compare(
        &analytic,
        |z| cross_entropy(&softmax_rows(z).unwrap(), &labels).unwrap(),
        &logits,
    )
}

/// Worst relative error of one layer check at one seed.
pub fn check_layer(layer: &str, seed: u64) -> Result<f64> {
    let mut rng = Rng::new(seed);
    match layer {
        "dense" => check_dense(&mut rng),
        "conv2d" => check_conv(&mut rng),
        "maxpool" => check_pool(&mut rng),
        "lstm_step" => check_lstm_step(&mut rng),
        "bilstm" => check_bilstm(&mut rng),
        "attention_softmax" => check_attention(NormMode::Softmax, &mut rng),
        "attention_linear" => check_attention(NormMode::Linear, &mut rng),
        "softmax_ce" => check_softmax_ce(&mut rng),
        other => Err(Error::config(
            "layer",
            format!(
                "unknown layer `{other}`; expected one of {}",
                LAYERS.join(", ")
            ),
        )),
    }
}

/// Runs `seeds` checks for every layer (or only `only`), seeds derived from
/// `seed`.
pub fn run_suite(seed: u64, only: Option<&str>, seeds: usize) -> Result<Vec<LayerCheck>> {
    let layers: Vec<&str> = match only {
        Some(name) => {
            if !LAYERS.contains(&name) {
                check_layer(name, seed)?;
            }
            vec![name]
        }
        None => LAYERS.to_vec(),
    };
    layers
        .into_iter()
        .map(|layer| {
            let mut worst: f64 = 0.0;
            for k in 0..seeds {
                worst = worst.max(check_layer(layer, crate::rng::derive_seed(seed, k as u64))?);
            }
            Ok(LayerCheck {
                layer: layer.to_string(),
                seeds,
                max_rel_err: worst,
            })
        })
        .collect()
}

/// The small model used for the end-to-end check: T=3, 8×8×3 frames,
/// 4 LSTM units.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        seq_len: 3,
        frame_h: 8,
        frame_w: 8,
        channels: 3,
        backbone: Backbone::SmallA,
        frame_feature_dim: 6,
        lstm_units: 4,
        use_attention: true,
        dense_head: vec![5],
        dropout_rates: vec![0.25, 0.25],
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheck {
    /// Worst relative error over the compared coordinates.
    pub max_rel_err: f64,
    pub compared: usize,
    /// Coordinates where `θ ± h` fall on different linear pieces of a ReLU
    /// or max-pool, so the central difference is not a derivative estimate.
    pub kinks: usize,
}

impl ModelCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

/// `CE(plus) − CE(minus)` for two-class logits, evaluated as one
/// expression so the rounding error scales with the difference rather than
/// with the loss. Per row, with `d = z_other − z_label`, the loss is
/// `ln(1 + e^d)` and the difference is
/// `ln(1 + e^{d−}·expm1(d+ − d−) / (1 + e^{d−}))`.
pub fn cross_entropy_difference(plus: &Tensor, minus: &Tensor, labels: &[usize]) -> f64 {
    let margin = |z: &Tensor, b: usize, l: usize| z.data()[2 * b + (1 - l)] - z.data()[2 * b + l];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| {
            let (dp, dm) = (margin(plus, b, l), margin(minus, b, l));
            let em = dm.exp();
            (em * (dp - dm).exp_m1() / (1.0 + em)).ln_1p()
        })
        .sum();
    total / labels.len() as f64
}

/// Cross-entropy gradient of every parameter of a small model, dropout
/// included (each probe replays the same masks), against central
/// differences. A coordinate is compared only when the probes at `θ − h`,
/// `θ` and `θ + h` share one activation pattern.
pub fn check_model(config: &ModelConfig, seed: u64) -> Result<ModelCheck> {
    let mut rng = Rng::new(seed);
    let mut model = build_model(config, &rng.fork(1))?;
    let shape = [
        2,
        config.seq_len,
        config.frame_h,
        config.frame_w,
        config.channels,
    ];
    let frames = uniform(&shape, 0.0, 1.0, &mut rng);
    let labels = vec![0, 1];
    let dropout = rng.fork(2);

    if config.num_classes != 2 {
        return Err(Error::config(
            "num_classes",
            "the end-to-end check assumes two classes",
        ));
    }
    let base_pattern = model.activation_pattern(&frames, true, &mut dropout.clone())?;
    let probs = model.forward(&frames, true, &mut dropout.clone())?;
    model.backward_logits(&cross_entropy_logit_grad(&probs, &labels)?)?;
    let grads: Vec<(String, Tensor)> = model
        .gradients()
        .into_iter()
        .map(|(n, g)| (n, g.clone()))
        .collect();
    let mut probe = model.clone();
    let eval = |probe: &Model| -> Result<(Tensor, Vec<u32>)> {
        let pattern = probe.activation_pattern(&frames, true, &mut dropout.clone())?;
        let logits = probe
            .clone()
            .forward_logits(&frames, true, &mut dropout.clone())?;
        Ok((logits, pattern))
    };
    let mut out = ModelCheck {
        max_rel_err: 0.0,
        compared: 0,
        kinks: 0,
    };
    for (name, grad) in &grads {
        for i in 0..grad.len() {
            let orig = probe.parameter_mut(name).unwrap().data()[i];
            probe.parameter_mut(name).unwrap().data_mut()[i] = orig + STEP;
            let (plus, p_plus) = eval(&probe)?;
            probe.parameter_mut(name).unwrap().data_mut()[i] = orig - STEP;
            let (minus, p_minus) = eval(&probe)?;
            probe.parameter_mut(name).unwrap().data_mut()[i] = orig;
            if p_plus != base_pattern || p_minus != base_pattern {
                out.kinks += 1;
                continue;
            }
            let numeric = cross_entropy_difference(&plus, &minus, &labels) / (2.0 * STEP);
            out.max_rel_err = out.max_rel_err.max(rel_error(grad.data()[i], numeric));
            out.compared += 1;
        }
    }
    Ok(out)
}
