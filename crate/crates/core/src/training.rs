//! Loss, optimizer, learning-rate schedule and the epoch loop.

use std::time::Instant;

use indexmap::IndexMap;

use crate::config::{parse_kv, parse_value, write_kv};
use crate::data::{batch_iter, load_batch, Manifest};
use crate::error::{Error, Result};
use crate::layers::LayerState;
use crate::model::{predict_labels, Model, ModelConfig};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

/// Minimum val_loss decrease that counts as an improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;
/// Epochs without reductions after the learning rate drops.
pub const PLATEAU_COOLDOWN: usize = 1;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            min_lr: 5e-5,
            batch_size: 64,
            max_epochs: 50,
            plateau_patience: 3,
            plateau_factor: 0.5,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 8] = [
        "initial_lr",
        "min_lr",
        "batch_size",
        "max_epochs",
        "plateau_patience",
        "plateau_factor",
        "early_stop_patience",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::config("initial_lr", "must be positive"));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return Err(Error::config("min_lr", "need 0 < min_lr <= initial_lr"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("plateau_factor", "must lie in (0, 1)"));
        }
        if self.plateau_patience == 0 {
            return Err(Error::config("plateau_patience", "must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early_stop_patience", "must be at least 1"));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "initial_lr" => self.initial_lr = parse_value(key, value)?,
            "min_lr" => self.min_lr = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "max_epochs" => self.max_epochs = parse_value(key, value)?,
            "plateau_patience" => self.plateau_patience = parse_value(key, value)?,
            "plateau_factor" => self.plateau_factor = parse_value(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("initial_lr", self.initial_lr.to_string()),
            ("min_lr", self.min_lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("plateau_factor", self.plateau_factor.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Everything a training run needs: model shape, optimizer schedule and the
/// train/val/test split fractions. Serialized as one canonical text file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: (f64, f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: (0.7, 0.15, 0.15),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "split_train" => self.split.0 = parse_value(key, value)?,
            "split_val" => self.split.1 = parse_value(key, value)?,
            "split_test" => self.split.2 = parse_value(key, value)?,
            k if TrainConfig::KEYS.contains(&k) => self.train.set(k, value)?,
            k => self.model.set(k, value)?,
        }
        Ok(())
    }

    /// Applies every pair in `text` on top of `self`. Unknown keys are errors.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split_train",
                "split fractions must sum to 1",
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.train.to_pairs());
        pairs.push(("split_train", self.split.0.to_string()));
        pairs.push(("split_val", self.split.1.to_string()));
        pairs.push(("split_test", self.split.2.to_string()));
        write_kv(pairs)
    }
}

fn check_labels(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    probs.expect_rank(2, "cross_entropy probs")?;
    let (b, k) = (probs.shape()[0], probs.shape()[1]);
    if labels.len() != b {
        return Err(Error::dim(format!("{} labels for {b} rows", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k || l > 1) {
        return Err(Error::dim(format!("label {l} outside {{0, 1}}")));
    }
    Ok((b, k))
}

/// Mean negative log-likelihood of the true labels, probabilities clamped
/// to `[1e-12, 1]`.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (b, k) = check_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs.data()[i * k + l].clamp(PROB_FLOOR, 1.0).ln())
        .sum();
    Ok(total / b as f64)
}

/// Gradient of softmax followed by cross-entropy with respect to the
/// logits: `(p − onehot) / B`.
pub fn cross_entropy_logit_grad(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = check_labels(probs, labels)?;
    let mut g = probs.scale(1.0 / b as f64);
    for (i, &l) in labels.iter().enumerate() {
        g.data_mut()[i * k + l] -= 1.0 / b as f64;
    }
    Ok(g)
}

/// Adam with bias correction. Moment buffers are keyed by
/// `layer.param` and persist across steps.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: IndexMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, states: Vec<(String, &mut LayerState)>, lr: f64) -> Result<()> {
        if !states.iter().any(|(_, s)| s.has_grads()) {
            return Err(Error::Contract(
                "adam: step called before any backward pass".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (layer, state) in states {
            for (name, p, g) in state.params_and_grads_mut() {
                let (m, v) = self
                    .moments
                    .entry(format!("{layer}.{name}"))
                    .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
                let iter = p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
                for ((w, &gi), (mi, vi)) in iter {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    let m_hat = *mi / bc1;
                    let v_hat = *vi / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Halves (by `plateau_factor`) the learning rate when val_loss stalls for
/// `plateau_patience` epochs, never going below `min_lr`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    best: f64,
    wait: usize,
    cooldown: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            wait: 0,
            cooldown: 0,
        }
    }
}

impl PlateauScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds one epoch's val_loss and returns the learning rate for the
    /// next epoch.
    pub fn step(&mut self, val_loss: f64, lr: f64, cfg: &TrainConfig) -> f64 {
        let improved = val_loss < self.best - IMPROVEMENT_THRESHOLD;
        if improved {
            self.best = val_loss;
            self.wait = 0;
        }
        if self.cooldown > 0 {
            self.cooldown -= 1;
            self.wait = 0;
            return lr;
        }
        if improved {
            return lr;
        }
        self.wait += 1;
        if self.wait >= cfg.plateau_patience && lr > cfg.min_lr {
            self.cooldown = PLATEAU_COOLDOWN;
            self.wait = 0;
            return (lr * cfg.plateau_factor).max(cfg.min_lr);
        }
        lr
    }
}

/// Replays the scheduler over a val_loss history starting from
/// `initial_lr`; entry `i` is the rate after epoch `i + 1`.
pub fn reduce_lr_on_plateau(history: &[f64], cfg: &TrainConfig) -> Vec<f64> {
    let mut sched = PlateauScheduler::new();
    let mut lr = cfg.initial_lr;
    history
        .iter()
        .map(|&loss| {
            lr = sched.step(loss, lr, cfg);
            lr
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

/// True labels and argmax predictions seen during one epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochPredictions {
    pub train_true: Vec<usize>,
    pub train_pred: Vec<usize>,
    pub val_true: Vec<usize>,
    pub val_pred: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// Parameters from the epoch with the lowest val_loss.
    pub model: Model,
    pub stats: Vec<EpochStats>,
    pub predictions: Vec<EpochPredictions>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Dropout-free evaluation over a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        accuracy(&self.labels, &self.predictions)
    }
}

pub fn accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .zip(predictions)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len() as f64
}

pub fn evaluate(model: &Model, manifest: &Manifest, batch_size: usize) -> Result<Evaluation> {
    if manifest.is_empty() {
        return Err(Error::data(&manifest.root, "manifest is empty"));
    }
    let ids: Vec<usize> = (0..manifest.len()).collect();
    let mut total = 0.0;
    let mut labels = Vec::with_capacity(ids.len());
    let mut predictions = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size.max(1)) {
        let batch = load_batch(manifest, chunk, model.config())?;
        let probs = model.infer(&batch.frames)?;
        total += cross_entropy(&probs, &batch.labels)? * chunk.len() as f64;
        predictions.extend(predict_labels(&probs));
        labels.extend(batch.labels);
    }
    let loss = total / ids.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("evaluation loss is {loss}")));
    }
    Ok(Evaluation {
        loss,
        labels,
        predictions,
    })
}

/// One optimizer step on a batch; returns the batch loss and the training-mode
/// probabilities.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    frames: &Tensor,
    labels: &[usize],
    lr: f64,
    dropout_rng: &mut Rng,
) -> Result<(f64, Tensor)> {
    model.zero_grads();
    let probs = model.forward(frames, true, dropout_rng)?;
    let loss = cross_entropy(&probs, labels)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("training loss is {loss}")));
    }
    model.backward_logits(&cross_entropy_logit_grad(&probs, labels)?)?;
    adam.step(model.states_mut(), lr)?;
    Ok((loss, probs))
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut Model,
    adam: &mut Adam,
    train: &Manifest,
    val: &Manifest,
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    dropout_rng: &mut Rng,
) -> Result<(EpochStats, EpochPredictions)> {
    let start = Instant::now();
    let mut shuffle_rng = Rng::new(cfg.seed)
        .substream(Stream::Shuffle)
        .fork(epoch as u64);
    let model_cfg = model.config().clone();
    let mut preds = EpochPredictions::default();
    let mut loss_sum = 0.0;
    for batch in batch_iter(train, &model_cfg, cfg.batch_size, &mut shuffle_rng, true)? {
        let batch = batch?;
        let (loss, probs) = train_step(model, adam, &batch.frames, &batch.labels, lr, dropout_rng)?;
        loss_sum += loss * batch.len() as f64;
        preds.train_pred.extend(predict_labels(&probs));
        preds.train_true.extend(batch.labels);
    }
    let eval = evaluate(model, val, cfg.batch_size)?;
    let stats = EpochStats {
        epoch,
        train_loss: loss_sum / train.len() as f64,
        train_acc: accuracy(&preds.train_true, &preds.train_pred),
        val_loss: eval.loss,
        val_acc: eval.accuracy(),
        lr,
        seconds: start.elapsed().as_secs_f64(),
    };
    preds.val_true = eval.labels;
    preds.val_pred = eval.predictions;
    Ok((stats, preds))
}

/// Trains `model`; see [`fit_with`].
pub fn fit(model: Model, train: &Manifest, val: &Manifest, cfg: &TrainConfig) -> Result<FitOutput> {
    fit_with(model, train, val, cfg, |_| {})
}

/// Epoch loop with plateau scheduling, best-val_loss retention and early
/// stopping. `on_epoch` sees each epoch's stats as soon as they exist.
/// All randomness derives from `cfg.seed`.
pub fn fit_with(
    mut model: Model,
    train: &Manifest,
    val: &Manifest,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<FitOutput> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data(&train.root, "training manifest is empty"));
    }
    if val.is_empty() {
        return Err(Error::data(&val.root, "validation manifest is empty"));
    }
    let mut adam = Adam::new();
    let mut sched = PlateauScheduler::new();
    let mut dropout_rng = Rng::new(cfg.seed).substream(Stream::Dropout);
    let mut lr = cfg.initial_lr;
    let mut best: Option<(f64, Model, usize)> = None;
    let mut since_best = 0;
    let mut stats = Vec::new();
    let mut predictions = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let (s, p) = run_epoch(
            &mut model,
            &mut adam,
            train,
            val,
            cfg,
            epoch,
            lr,
            &mut dropout_rng,
        )
        .map_err(|e| Error::Epoch {
            epoch,
            source: Box::new(e),
        })?;
        on_epoch(&s);
        let improved = best
            .as_ref()
            .is_none_or(|(b, _, _)| s.val_loss < b - IMPROVEMENT_THRESHOLD);
        if improved {
            best = Some((s.val_loss, model.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
        }
        lr = sched.step(s.val_loss, lr, cfg);
        stats.push(s);
        predictions.push(p);
        if since_best >= cfg.early_stop_patience {
            break;
        }
    }

    let (model, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model, 0),
    };
    Ok(FitOutput {
        model,
        stats,
        predictions,
        best_epoch,
    })
}

pub const STATS_HEADER: [&str; 7] = [
    "epoch",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "lr",
    "seconds",
];

/// Fixed 6-decimal formatting used by every CSV the crate writes.
pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_stats_csv(path: &std::path::Path, stats: &[EpochStats]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::data(path, e.to_string()))?;
    w.write_record(STATS_HEADER)?;
    for s in stats {
        w.write_record([
            s.epoch.to_string(),
            fmt6(s.train_loss),
            fmt6(s.train_acc),
            fmt6(s.val_loss),
            fmt6(s.val_acc),
            fmt6(s.lr),
            fmt6(s.seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_stats_csv(path: &std::path::Path) -> Result<Vec<EpochStats>> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::data(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| {
                Error::data(path, format!("bad value in column {}", STATS_HEADER[i]))
            })
        };
        out.push(EpochStats {
            epoch: f(0)? as usize,
            train_loss: f(1)?,
            train_acc: f(2)?,
            val_loss: f(3)?,
            val_acc: f(4)?,
            lr: f(5)?,
            seconds: f(6)?,
        });
    }
    Ok(out)
}
