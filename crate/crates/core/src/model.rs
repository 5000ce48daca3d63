//! The clip classifier:
//!
//! ```text
//! frames ─ TimeDistributed(conv blocks → dense) ─ Dropout ─ BiLSTM
//!        ─ Attention (or last timestep) ─ [Dense ─ Dropout]* ─ Dense(2) ─ softmax
//! ```

use std::fmt;
use std::str::FromStr;

use crate::config::{join_list, parse_bool, parse_kv, parse_list, parse_value, write_kv};
use crate::error::{Error, Result};
use crate::layers::{
    relu_pattern, Attention, AttentionOutput, BiLstm, Conv2d, Dense, Dropout, Layer, LayerState,
    MaxPool, NormMode, Padding, Sequential, TimeDistributed,
};
use crate::rng::{Rng, Stream};
use crate::tensor::{softmax_rows, softmax_rows_backward, Activation, Tensor};

/// Small conv-pool stacks of increasing depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backbone {
    SmallA,
    SmallB,
    SmallC,
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Backbone::SmallA, Backbone::SmallB, Backbone::SmallC];

    /// Filters of each 3×3 conv + 2×2 max-pool block.
    pub fn widths(self) -> &'static [usize] {
        match self {
            Backbone::SmallA => &[16, 32],
            Backbone::SmallB => &[16, 32, 64],
            Backbone::SmallC => &[16, 32, 64, 64],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backbone::SmallA => "small-a",
            Backbone::SmallB => "small-b",
            Backbone::SmallC => "small-c",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backbone::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::config("backbone", format!("unknown backbone `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub channels: usize,
    pub backbone: Backbone,
    pub frame_feature_dim: usize,
    pub lstm_units: usize,
    pub use_attention: bool,
    pub attention_norm: NormMode,
    pub dense_head: Vec<usize>,
    /// Site 0 follows the backbone; site `i + 1` follows `dense_head[i]`.
    pub dropout_rates: Vec<f64>,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seq_len: 15,
            frame_h: 100,
            frame_w: 100,
            channels: 3,
            backbone: Backbone::SmallA,
            frame_feature_dim: 128,
            lstm_units: 64,
            use_attention: true,
            attention_norm: NormMode::Softmax,
            dense_head: vec![64],
            dropout_rates: vec![0.5, 0.5],
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 12] = [
        "seq_len",
        "frame_h",
        "frame_w",
        "channels",
        "backbone",
        "frame_feature_dim",
        "lstm_units",
        "use_attention",
        "attention_norm",
        "dense_head",
        "dropout_rates",
        "num_classes",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("frame_h", self.frame_h),
            ("frame_w", self.frame_w),
            ("channels", self.channels),
            ("frame_feature_dim", self.frame_feature_dim),
            ("lstm_units", self.lstm_units),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.num_classes != 2 {
            return Err(Error::config(
                "num_classes",
                "only binary classification (2) is supported",
            ));
        }
        if self.dense_head.contains(&0) {
            return Err(Error::config("dense_head", "widths must be positive"));
        }
        if self.dropout_rates.len() != self.dense_head.len() + 1 {
            return Err(Error::config(
                "dropout_rates",
                format!(
                    "need {} rates (one after the backbone, one per dense layer), got {}",
                    self.dense_head.len() + 1,
                    self.dropout_rates.len()
                ),
            ));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return Err(Error::config(
                "dropout_rates",
                format!("rate {r} outside [0, 1)"),
            ));
        }
        let min_side = 1usize << self.backbone.widths().len();
        if self.frame_h < min_side {
            return Err(Error::config(
                "frame_h",
                format!(
                    "{} needs frames of at least {min_side} pixels",
                    self.backbone
                ),
            ));
        }
        if self.frame_w < min_side {
            return Err(Error::config(
                "frame_w",
                format!(
                    "{} needs frames of at least {min_side} pixels",
                    self.backbone
                ),
            ));
        }
        Ok(())
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seq_len" => self.seq_len = parse_value(key, value)?,
            "frame_h" => self.frame_h = parse_value(key, value)?,
            "frame_w" => self.frame_w = parse_value(key, value)?,
            "channels" => self.channels = parse_value(key, value)?,
            "backbone" => self.backbone = value.parse()?,
            "frame_feature_dim" => self.frame_feature_dim = parse_value(key, value)?,
            "lstm_units" => self.lstm_units = parse_value(key, value)?,
            "use_attention" => self.use_attention = parse_bool(key, value)?,
            "attention_norm" => {
                self.attention_norm = value.parse().map_err(|e: String| Error::config(key, e))?
            }
            "dense_head" => self.dense_head = parse_list(key, value)?,
            "dropout_rates" => self.dropout_rates = parse_list(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seq_len", self.seq_len.to_string()),
            ("frame_h", self.frame_h.to_string()),
            ("frame_w", self.frame_w.to_string()),
            ("channels", self.channels.to_string()),
            ("backbone", self.backbone.to_string()),
            ("frame_feature_dim", self.frame_feature_dim.to_string()),
            ("lstm_units", self.lstm_units.to_string()),
            ("use_attention", self.use_attention.to_string()),
            ("attention_norm", self.attention_norm.name().to_string()),
            ("dense_head", join_list(&self.dense_head)),
            ("dropout_rates", join_list(&self.dropout_rates)),
            ("num_classes", self.num_classes.to_string()),
        ]
    }

    /// Canonical `key=value` text. Floats use shortest round-trip formatting,
    /// so `from_text(to_text())` reproduces every field exactly.
    pub fn to_text(&self) -> String {
        write_kv(self.to_pairs())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bilstm_output_dim(&self) -> usize {
        2 * self.lstm_units
    }
}

/// What the last training-mode forward pass needs for backward.
#[derive(Debug, Clone)]
struct ForwardRecord {
    probs: Tensor,
    steps: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    frame_net: TimeDistributed,
    feature_dropout: Dropout,
    bilstm: BiLstm,
    attention: Option<Attention>,
    head: Vec<(Dense, Dropout)>,
    output: Dense,
    record: Option<ForwardRecord>,
}

/// Builds and initializes a model. All parameters come from the `Init`
/// substream of `rng`.
pub fn build_model(config: &ModelConfig, rng: &Rng) -> Result<Model> {
    Model::new(config.clone(), rng)
}

impl Model {
    pub fn new(config: ModelConfig, rng: &Rng) -> Result<Self> {
        config.validate()?;
        let mut init = rng.substream(Stream::Init);

        let mut layers = Vec::new();
        let (mut h, mut w, mut c) = (config.frame_h, config.frame_w, config.channels);
        for &width in config.backbone.widths() {
            let conv = Conv2d::new(3, c, width, 1, Padding::Same, Activation::Relu, &mut init);
            let pool = MaxPool::new(2, 2);
            (h, w) = pool.output_hw(h, w)?;
            c = width;
            layers.push(Layer::Conv2d(conv));
            layers.push(Layer::MaxPool(pool));
        }
        layers.push(Layer::flatten());
        layers.push(Layer::Dense(Dense::new(
            h * w * c,
            config.frame_feature_dim,
            Activation::Relu,
            &mut init,
        )));
        let frame_net = TimeDistributed::new(Sequential::new(layers));

        let feature_dropout = Dropout::new(config.dropout_rates[0])?;
        let bilstm = BiLstm::new(config.frame_feature_dim, config.lstm_units, &mut init);
        let d = config.bilstm_output_dim();
        let attention = config
            .use_attention
            .then(|| Attention::new(d, config.attention_norm, &mut init));

        let mut head = Vec::new();
        let mut width_in = d;
        for (i, &width) in config.dense_head.iter().enumerate() {
            let dense = Dense::new(width_in, width, Activation::Relu, &mut init);
            head.push((dense, Dropout::new(config.dropout_rates[i + 1])?));
            width_in = width;
        }
        let output = Dense::new(
            width_in,
            config.num_classes,
            Activation::Identity,
            &mut init,
        );

        Ok(Self {
            config,
            frame_net,
            feature_dropout,
            bilstm,
            attention,
            head,
            output,
            record: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, frames: &Tensor) -> Result<usize> {
        let c = &self.config;
        match *frames.shape() {
            [b, t, h, w, ch]
                if t == c.seq_len && h == c.frame_h && w == c.frame_w && ch == c.channels =>
            {
                Ok(b)
            }
            ref s => Err(Error::dim(format!(
                "model expects B×{}×{}×{}×{} clips, got {s:?}",
                c.seq_len, c.frame_h, c.frame_w, c.channels
            ))),
        }
    }

    /// Class probabilities `B×2`. With `training`, dropout is active (drawing
    /// from `rng`) and caches are kept for [`Model::backward_logits`].
    pub fn forward(&mut self, frames: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let logits = self.forward_logits(frames, training, rng)?;
        let probs = softmax_rows(&logits)?;
        probs.check_finite("model output")?;
        Ok(probs)
    }

    /// Pre-softmax scores `B×2`; otherwise identical to [`Model::forward`].
    pub fn forward_logits(
        &mut self,
        frames: &Tensor,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Tensor> {
        self.check_input(frames)?;
        let feats = self.frame_net.forward(frames)?;
        let feats = self.feature_dropout.forward(&feats, rng, training);
        let seq = self.bilstm.forward(&feats)?;
        let steps = seq.shape()[1];
        let mut z = match &mut self.attention {
            Some(att) => att.forward(&seq)?.context,
            None => last_step(&seq),
        };
        for (dense, dropout) in &mut self.head {
            z = dense.forward(&z)?;
            z = dropout.forward(&z, rng, training);
        }
        let logits = self.output.forward(&z)?;
        logits.check_finite("model logits")?;
        self.record = Some(ForwardRecord {
            probs: softmax_rows(&logits)?,
            steps,
        });
        Ok(logits)
    }

    /// Dropout-free forward pass that leaves the model untouched.
    pub fn infer(&self, frames: &Tensor) -> Result<Tensor> {
        self.check_input(frames)?;
        let feats = self.frame_net.infer(frames)?;
        let seq = self.bilstm.infer(&feats)?;
        let mut z = match &self.attention {
            Some(att) => att.infer(&seq)?.context,
            None => last_step(&seq),
        };
        for (dense, _) in &self.head {
            z = dense.infer(&z)?;
        }
        let probs = softmax_rows(&self.output.infer(&z)?)?;
        probs.check_finite("model output")?;
        Ok(probs)
    }

    /// Branch choices of every piecewise-linear unit (ReLU on/off, max-pool
    /// argmax) for the pass [`Model::forward`] would make with the same
    /// `training` flag and `rng` state. Two parameter settings with equal
    /// patterns lie on the same smooth piece of the loss.
    pub fn activation_pattern(
        &self,
        frames: &Tensor,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Vec<u32>> {
        self.check_input(frames)?;
        let mut pattern = Vec::new();
        let feats = self.frame_net.infer_with_pattern(frames, &mut pattern)?;
        let feats = self.feature_dropout.clone().forward(&feats, rng, training);
        let seq = self.bilstm.infer(&feats)?;
        let mut z = match &self.attention {
            Some(att) => att.infer(&seq)?.context,
            None => last_step(&seq),
        };
        for (dense, dropout) in &self.head {
            z = dense.infer(&z)?;
            relu_pattern(&z, &mut pattern);
            z = dropout.clone().forward(&z, rng, training);
        }
        Ok(pattern)
    }

    /// Attention scores and weights for each clip, if the model has attention.
    pub fn attention_weights(&self, frames: &Tensor) -> Result<Option<AttentionOutput>> {
        self.check_input(frames)?;
        match &self.attention {
            None => Ok(None),
            Some(att) => {
                let seq = self.bilstm.infer(&self.frame_net.infer(frames)?)?;
                att.infer(&seq).map(Some)
            }
        }
    }

    /// Predicted labels (argmax; exact ties go to class 0).
    pub fn predict(&self, frames: &Tensor) -> Result<Vec<usize>> {
        Ok(predict_labels(&self.infer(frames)?))
    }

    /// Probabilities from the last training-mode forward pass.
    pub fn last_probs(&self) -> Option<&Tensor> {
        self.record.as_ref().map(|r| &r.probs)
    }

    /// Backpropagates a gradient on the pre-softmax logits, accumulating
    /// every parameter gradient.
    pub fn backward_logits(&mut self, dlogits: &Tensor) -> Result<()> {
        let record = self.record.take().ok_or_else(|| {
            Error::Contract("model: backward called without a preceding forward".into())
        })?;
        dlogits.expect_shape(record.probs.shape())?;
        let mut g = self.output.backward(dlogits)?;
        for (dense, dropout) in self.head.iter_mut().rev() {
            g = dropout.backward(&g)?;
            g = dense.backward(&g)?;
        }
        let dseq = match &mut self.attention {
            Some(att) => att.backward(&g)?,
            None => scatter_last_step(&g, record.steps),
        };
        let dfeats = self.bilstm.backward(&dseq)?;
        let dfeats = self.feature_dropout.backward(&dfeats)?;
        self.frame_net.backward(&dfeats)?;
        Ok(())
    }

    /// Backpropagates a gradient on the output probabilities.
    pub fn backward_probs(&mut self, dprobs: &Tensor) -> Result<()> {
        let probs = self
            .record
            .as_ref()
            .ok_or_else(|| {
                Error::Contract("model: backward called without a preceding forward".into())
            })?
            .probs
            .clone();
        self.backward_logits(&softmax_rows_backward(&probs, dprobs)?)
    }

    /// Parameterized layers in a fixed order with stable names.
    pub fn states(&self) -> Vec<(String, &LayerState)> {
        let mut out: Vec<(String, &LayerState)> = self
            .frame_net
            .net
            .states()
            .into_iter()
            .map(|(n, s)| (format!("frames.{n}"), s))
            .collect();
        out.push(("bilstm.fwd".into(), &self.bilstm.fwd.state));
        out.push(("bilstm.bwd".into(), &self.bilstm.bwd.state));
        if let Some(att) = &self.attention {
            out.push(("attention".into(), &att.state));
        }
        for (i, (dense, _)) in self.head.iter().enumerate() {
            out.push((format!("head.{i}"), &dense.state));
        }
        out.push(("output".into(), &self.output.state));
        out
    }

    pub fn states_mut(&mut self) -> Vec<(String, &mut LayerState)> {
        let mut out: Vec<(String, &mut LayerState)> = self
            .frame_net
            .net
            .states_mut()
            .into_iter()
            .map(|(n, s)| (format!("frames.{n}"), s))
            .collect();
        out.push(("bilstm.fwd".into(), &mut self.bilstm.fwd.state));
        out.push(("bilstm.bwd".into(), &mut self.bilstm.bwd.state));
        if let Some(att) = &mut self.attention {
            out.push(("attention".into(), &mut att.state));
        }
        for (i, (dense, _)) in self.head.iter_mut().enumerate() {
            out.push((format!("head.{i}"), &mut dense.state));
        }
        out.push(("output".into(), &mut self.output.state));
        out
    }

    /// Every parameter as `(layer.param, tensor)`.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.states()
            .into_iter()
            .flat_map(|(layer, s)| {
                s.params()
                    .map(move |(p, t)| (format!("{layer}.{p}"), t))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn gradients(&self) -> Vec<(String, &Tensor)> {
        self.states()
            .into_iter()
            .flat_map(|(layer, s)| {
                s.grads()
                    .map(move |(p, t)| (format!("{layer}.{p}"), t))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Mutable access to one parameter by its full name.
    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (layer, param) = name.rsplit_once('.')?;
        self.states_mut()
            .into_iter()
            .find(|(n, s)| n == layer && s.params().any(|(p, _)| p == param))
            .map(|(_, s)| s.param_mut(param))
    }

    pub fn num_params(&self) -> usize {
        self.states().iter().map(|(_, s)| s.num_params()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, s) in self.states_mut() {
            s.zero_grads();
        }
    }
}

/// Row-wise argmax over class probabilities; exact ties pick class 0.
pub fn predict_labels(probs: &Tensor) -> Vec<usize> {
    let classes = probs.shape()[1];
    probs
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn last_step(seq: &Tensor) -> Tensor {
    let (b, t, d) = (seq.shape()[0], seq.shape()[1], seq.shape()[2]);
    let mut out = Vec::with_capacity(b * d);
    for bi in 0..b {
        out.extend_from_slice(&seq.data()[(bi * t + t - 1) * d..][..d]);
    }
    Tensor::new(&[b, d], out).expect("last step shape")
}

fn scatter_last_step(g: &Tensor, steps: usize) -> Tensor {
    let (b, d) = (g.shape()[0], g.shape()[1]);
    let mut out = Tensor::zeros(&[b, steps, d]);
    for bi in 0..b {
        out.data_mut()[(bi * steps + steps - 1) * d..][..d]
            .copy_from_slice(&g.data()[bi * d..][..d]);
    }
    out
}
