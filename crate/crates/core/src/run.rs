//! One complete training run: split, fit, checkpoint, test evaluation and
//! report files.

use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint::save_model;
use crate::data::{split_dataset, Manifest};
use crate::error::{Error, Result};
use crate::metrics::{confusion, emit_report, RunReport};
use crate::model::build_model;
use crate::rng::{Rng, Stream};
use crate::training::{
    evaluate, fit_with, write_stats_csv, EpochStats, Evaluation, FitOutput, RunConfig,
};

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Stratified split drawn from the `Split` substream of `seed`.
pub fn split_for_run(manifest: &Manifest, cfg: &RunConfig, seed: u64) -> Result<Splits> {
    let mut rng = Rng::new(seed).substream(Stream::Split);
    let (train, val, test) = split_dataset(manifest, cfg.split, &mut rng)?;
    for (name, part) in [("train", &train), ("val", &val)] {
        if part.is_empty() {
            return Err(Error::data(
                &manifest.root,
                format!(
                    "{name} split is empty; the dataset has {} clips",
                    manifest.len()
                ),
            ));
        }
    }
    Ok(Splits { train, val, test })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub fit: FitOutput,
    /// Evaluation of the kept model on the test split (val when test is empty).
    pub test: Evaluation,
}

/// Builds a model from `cfg`, trains it and writes `config.txt`, `stats.csv`,
/// `best.ckpt` plus the report files into `out_dir`.
pub fn train_run(
    splits: &Splits,
    cfg: &RunConfig,
    id: usize,
    out_dir: &Path,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join("config.txt");
    fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;

    let model = build_model(&cfg.model, &Rng::new(cfg.train.seed))?;
    let start = Instant::now();
    let fit = fit_with(model, &splits.train, &splits.val, &cfg.train, on_epoch)?;
    let seconds = start.elapsed().as_secs_f64();
    write_stats_csv(&out_dir.join("stats.csv"), &fit.stats)?;
    save_model(&fit.model, &out_dir.join("best.ckpt"))?;

    let eval_set = if splits.test.is_empty() {
        &splits.val
    } else {
        &splits.test
    };
    let test = evaluate(&fit.model, eval_set, cfg.train.batch_size)?;
    let cm = confusion(&test.labels, &test.predictions)?;
    let report = RunReport {
        id,
        model: cfg.model.backbone.to_string(),
        use_attention: cfg.model.use_attention,
        min_lr: cfg.train.min_lr,
        batch_size: cfg.train.batch_size,
        accuracy: cm.accuracy(),
        f1_class0: cm.f1(0),
        f1_class1: cm.f1(1),
        confusion: cm,
        seconds,
        stats: fit.stats.clone(),
    };
    emit_report(&report, out_dir)?;
    Ok(RunOutput { report, fit, test })
}
