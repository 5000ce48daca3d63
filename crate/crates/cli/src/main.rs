//! `conflictnet` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (dataset, frame or checkpoint files), 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use conflictnet::checkpoint::load_model;
use conflictnet::data::{generate_synthetic, Manifest, SynthSpec, CLASS_NAMES};
use conflictnet::gradcheck::{self, check_model, run_suite, tiny_model_config};
use conflictnet::grid::{run_grid, GridSpec, Scale};
use conflictnet::metrics::{confusion, ConfusionMatrix};
use conflictnet::run::{split_for_run, train_run};
use conflictnet::training::{evaluate, RunConfig};
use conflictnet::{config::parse_kv, Error};

#[derive(Debug, Parser)]
#[command(
    name = "conflictnet",
    version,
    about = "Train and evaluate a CNN + BiLSTM + attention video clip classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class clip dataset.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Clips per class.
        #[arg(long, default_value_t = 200)]
        clips_per_class: usize,
        /// Frames per clip (at least 15).
        #[arg(long, default_value_t = 15)]
        frames: usize,
        /// Frame size as HxW, e.g. 100x100.
        #[arg(long, default_value = "100x100", value_parser = parse_size)]
        size: (usize, usize),
        /// Generator seed (falls back to CONFLICTNET_SEED, then 0).
        #[arg(long, env = "CONFLICTNET_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Split a dataset, train a model and write run outputs.
    Train {
        /// Dataset directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        /// key=value config file; keys not listed keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run output directory.
        #[arg(long)]
        out: PathBuf,
        /// Seed for split, initialization, dropout and shuffling; overrides
        /// the config file (falls back to CONFLICTNET_SEED).
        #[arg(long, env = "CONFLICTNET_SEED")]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        /// Checkpoint file (best.ckpt).
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        /// Which part of the dataset to evaluate. Splits are recomputed from
        /// the config.txt next to the checkpoint when present.
        #[arg(long, default_value = "all", value_parser = ["all", "train", "val", "test"])]
        split: String,
        /// Split seed when there is no config.txt next to the checkpoint.
        #[arg(long, env = "CONFLICTNET_SEED", default_value_t = 0)]
        seed: u64,
        /// Batch size for evaluation.
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Base seed (falls back to CONFLICTNET_SEED, then 0).
        #[arg(long, env = "CONFLICTNET_SEED", default_value_t = 0)]
        seed: u64,
        /// Check one layer only: dense, conv2d, maxpool, lstm_step, bilstm,
        /// attention_softmax, attention_linear, softmax_ce, or model for the
        /// end-to-end check.
        #[arg(long)]
        layer: Option<String>,
        /// Random seeds per layer.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Run the 12-cell experiment grid.
    Grid {
        /// Dataset directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for grid.csv and per-run directories.
        #[arg(long)]
        out: PathBuf,
        /// Master seed (falls back to CONFLICTNET_SEED, then 0).
        #[arg(long, env = "CONFLICTNET_SEED", default_value_t = 0)]
        seed: u64,
        /// desk: small frames and layers; full: default model, 50 epochs.
        #[arg(long, default_value = "desk")]
        scale: Scale,
        /// Optional key=value overrides applied to the scale preset.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("expected HxW with positive integers, got `{s}`"))
    };
    Ok((parse(h)?, parse(w)?))
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Data { .. } | Error::Io { .. } | Error::Csv(_) => 2,
            Error::BadMagic
            | Error::UnsupportedVersion(_)
            | Error::Truncated(_)
            | Error::ShapeDisagreement { .. }
            | Error::Format(_) => 2,
            Error::Numeric(_) | Error::DegenerateNormalization(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn print_section(title: &str, text: &str) {
    println!("# {title}");
    print!("{text}");
    println!();
}

fn print_confusion(cm: &ConfusionMatrix) {
    println!("confusion (rows true, cols predicted):");
    println!("{:>14} {:>12} {:>12}", "", CLASS_NAMES[0], CLASS_NAMES[1]);
    for (t, row) in cm.counts.iter().enumerate() {
        println!("{:>14} {:>12} {:>12}", CLASS_NAMES[t], row[0], row[1]);
    }
}

fn cmd_synth(
    out: &Path,
    clips_per_class: usize,
    frames: usize,
    size: (usize, usize),
    seed: u64,
) -> CmdResult {
    let spec = SynthSpec {
        clips_per_class,
        frames,
        height: size.0,
        width: size.1,
        seed,
        ..SynthSpec::default()
    };
    print_section(
        "synth",
        &format!(
            "out={}\nclips_per_class={clips_per_class}\nframes={frames}\nsize={}x{}\nseed={seed}\n",
            out.display(),
            size.0,
            size.1
        ),
    );
    let manifest = generate_synthetic(&spec, out)?;
    println!(
        "wrote {} clips; manifest: {}",
        manifest.len(),
        out.join(conflictnet::data::MANIFEST_FILE).display()
    );
    Ok(())
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        cfg.apply_text(&read_text(path)?)?;
    }
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    print_section("resolved config", &cfg.to_text());

    let manifest = Manifest::read(data)?;
    let splits = split_for_run(&manifest, &cfg, cfg.train.seed)?;
    println!(
        "clips: {} train, {} val, {} test",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    println!("epoch  train_loss  train_acc  val_loss  val_acc  lr        seconds");
    let result = train_run(&splits, &cfg, 1, out, |s| {
        println!(
            "{:>5}  {:>10.4}  {:>9.4}  {:>8.4}  {:>7.4}  {:<8.2e}  {:>7.2}",
            s.epoch, s.train_loss, s.train_acc, s.val_loss, s.val_acc, s.lr, s.seconds
        );
    })?;
    let r = &result.report;
    println!("best epoch: {}", result.fit.best_epoch);
    println!(
        "test accuracy {:.4}  f1 nonviolence {:.4}  f1 violence {:.4}  ({:.1} s)",
        r.accuracy, r.f1_class0, r.f1_class1, r.seconds
    );
    print_confusion(&r.confusion);
    println!("outputs in {}", out.display());
    Ok(())
}

fn cmd_eval(
    model_path: &Path,
    data: &Path,
    split: &str,
    seed: u64,
    batch_size: usize,
) -> CmdResult {
    let model = load_model(model_path)?;
    let manifest = Manifest::read(data)?;
    let run_config = model_path.parent().map(|d| d.join("config.txt"));
    let cfg = match run_config.filter(|p| p.exists()) {
        Some(path) => RunConfig::from_text(&read_text(&path)?)?,
        None => {
            let mut cfg = RunConfig::default();
            cfg.train.seed = seed;
            cfg
        }
    };
    let mut resolved = model.config().to_text();
    resolved.push_str(&format!(
        "split={split}\nsplit_seed={}\nsplit_fractions={},{},{}\n",
        cfg.train.seed, cfg.split.0, cfg.split.1, cfg.split.2
    ));
    print_section("eval", &resolved);

    let subset = match split {
        "all" => manifest,
        part => {
            let s = split_for_run(&manifest, &cfg, cfg.train.seed)?;
            match part {
                "train" => s.train,
                "val" => s.val,
                _ => s.test,
            }
        }
    };
    let eval = evaluate(&model, &subset, batch_size)?;
    let cm = confusion(&eval.labels, &eval.predictions)?;
    println!("clips {}  loss {:.6}", subset.len(), eval.loss);
    println!(
        "accuracy {:.4}  f1 nonviolence {:.4}  f1 violence {:.4}",
        cm.accuracy(),
        cm.f1(0),
        cm.f1(1)
    );
    print_confusion(&cm);
    Ok(())
}

fn cmd_gradcheck(seed: u64, layer: Option<&str>, seeds: usize) -> CmdResult {
    if seeds == 0 {
        return Err(Failure {
            code: 1,
            message: "--seeds must be at least 1".into(),
        });
    }
    print_section(
        "gradcheck",
        &format!(
            "seed={seed}\nlayer={}\nseeds={seeds}\nstep={:e}\ntolerance={:e}\n",
            layer.unwrap_or("all"),
            gradcheck::STEP,
            gradcheck::TOLERANCE
        ),
    );
    let mut failed = false;
    println!(
        "{:<20} {:>5}  {:>11}  status",
        "layer", "seeds", "max_rel_err"
    );
    if layer != Some("model") {
        for check in run_suite(seed, layer, seeds)? {
            failed |= !check.passed();
            println!(
                "{:<20} {:>5}  {:>11.3e}  {}",
                check.layer,
                check.seeds,
                check.max_rel_err,
                if check.passed() { "ok" } else { "FAIL" }
            );
        }
    }
    if layer.is_none() || layer == Some("model") {
        let check = check_model(&tiny_model_config(), seed)?;
        failed |= !check.passed();
        println!(
            "{:<20} {:>5}  {:>11.3e}  {}  ({} coordinates compared, {} straddling a kink skipped)",
            "model",
            1,
            check.max_rel_err,
            if check.passed() { "ok" } else { "FAIL" },
            check.compared,
            check.kinks
        );
    }
    if failed {
        return Err(Failure {
            code: 3,
            message: format!("relative error at or above {:e}", gradcheck::TOLERANCE),
        });
    }
    Ok(())
}

fn cmd_grid(data: &Path, out: &Path, seed: u64, scale: Scale, config: Option<&Path>) -> CmdResult {
    let mut spec = GridSpec::new(scale, seed);
    if let Some(path) = config {
        spec.overrides = parse_kv(&read_text(path)?)?.into_iter().collect();
    }
    let base = spec.base_config()?;
    base.validate()?;
    print_section(
        "grid base config (per-run backbone, attention, min_lr, batch_size and seed vary)",
        &format!("{}master_seed={seed}\n", base.to_text()),
    );
    let manifest = Manifest::read(data)?;
    let rows = run_grid(&manifest, &spec, out, |row| {
        match &row.result {
        Ok(r) => println!(
            "run {:>2}  {:<8} attention={:<3} min_lr={:<7} batch={:<4} acc {:.4}  f1 {:.4}/{:.4}  {:.1} s",
            r.id,
            r.model,
            conflictnet::metrics::yes_no(r.use_attention),
            r.min_lr,
            r.batch_size,
            r.accuracy,
            r.f1_class0,
            r.f1_class1,
            r.seconds
        ),
        Err(msg) => eprintln!("run {:>2} failed: {msg}", row.cell.id),
    }
    })?;
    let failures = rows.iter().filter(|r| r.result.is_err()).count();
    println!(
        "grid: {} runs, {failures} failed; {}",
        rows.len(),
        out.join("grid.csv").display()
    );
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth {
            out,
            clips_per_class,
            frames,
            size,
            seed,
        } => cmd_synth(&out, clips_per_class, frames, size, seed),
        Command::Train {
            data,
            config,
            out,
            seed,
        } => cmd_train(&data, config.as_deref(), &out, seed),
        Command::Eval {
            model,
            data,
            split,
            seed,
            batch_size,
        } => cmd_eval(&model, &data, &split, seed, batch_size),
        Command::Gradcheck { seed, layer, seeds } => cmd_gradcheck(seed, layer.as_deref(), seeds),
        Command::Grid {
            data,
            out,
            seed,
            scale,
            config,
        } => cmd_grid(&data, &out, seed, scale, config.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
