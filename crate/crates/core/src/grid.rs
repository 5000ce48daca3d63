//! The 12-run experiment grid: three backbones, attention off/on, and two
//! (min_lr, batch_size) settings.

use std::fs;
use std::path::Path;

use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::metrics::{write_rows, yes_no, RunReport, REPORT_HEADER};
use crate::model::Backbone;
use crate::rng::derive_seed;
use crate::run::{split_for_run, train_run};
use crate::training::{fmt6, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Small frames and layers; minutes on one CPU.
    Desk,
    /// Default model dimensions and 50 epochs.
    Full,
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(format!("unknown scale `{s}` (expected desk or full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub id: usize,
    pub backbone: Backbone,
    pub use_attention: bool,
    pub min_lr: f64,
    pub batch_size: usize,
}

/// Ids 1–6 without attention, 7–12 with. Within each half: (5e-4, 128) for
/// the three backbones, then (5e-5, 64).
pub fn grid_cells() -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(12);
    for use_attention in [false, true] {
        for (min_lr, batch_size) in [(5e-4, 128), (5e-5, 64)] {
            for backbone in Backbone::ALL {
                cells.push(GridCell {
                    id: cells.len() + 1,
                    backbone,
                    use_attention,
                    min_lr,
                    batch_size,
                });
            }
        }
    }
    cells
}

/// Base configuration for a scale, before the cell's own settings.
pub fn scale_preset(scale: Scale) -> RunConfig {
    let mut cfg = RunConfig::default();
    if scale == Scale::Desk {
        let m = &mut cfg.model;
        m.seq_len = 8;
        m.frame_h = 16;
        m.frame_w = 16;
        m.frame_feature_dim = 32;
        m.lstm_units = 16;
        m.dense_head = vec![32];
        cfg.train.max_epochs = 15;
        cfg.train.early_stop_patience = 5;
    }
    cfg
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub scale: Scale,
    pub master_seed: u64,
    /// `key=value` overrides applied to the scale preset before the cell
    /// settings.
    pub overrides: Vec<(String, String)>,
}

impl GridSpec {
    pub fn new(scale: Scale, master_seed: u64) -> Self {
        Self {
            scale,
            master_seed,
            overrides: Vec::new(),
        }
    }

    pub fn base_config(&self) -> Result<RunConfig> {
        let mut cfg = scale_preset(self.scale);
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn run_config(&self, cell: &GridCell) -> Result<RunConfig> {
        let mut cfg = self.base_config()?;
        cfg.model.backbone = cell.backbone;
        cfg.model.use_attention = cell.use_attention;
        cfg.train.min_lr = cell.min_lr;
        cfg.train.batch_size = cell.batch_size;
        cfg.train.seed = derive_seed(self.master_seed, cell.id as u64);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub cell: GridCell,
    pub result: std::result::Result<RunReport, String>,
}

impl GridRow {
    fn csv_row(&self) -> Vec<String> {
        let c = &self.cell;
        match &self.result {
            Ok(report) => report.row(),
            Err(_) => vec![
                c.id.to_string(),
                c.backbone.to_string(),
                yes_no(c.use_attention).to_string(),
                fmt6(c.min_lr),
                c.batch_size.to_string(),
                "NaN".into(),
                "NaN".into(),
                "NaN".into(),
                "NaN".into(),
            ],
        }
    }
}

/// Runs every cell in id order under `out_dir/runs/<id>` and writes
/// `out_dir/grid.csv`. All runs share one data split drawn from the master
/// seed; each run trains with its own derived seed. A failed run is
/// recorded (NaN metrics plus `error.txt`) and the grid continues.
pub fn run_grid(
    manifest: &Manifest,
    spec: &GridSpec,
    out_dir: &Path,
    mut on_run: impl FnMut(&GridRow),
) -> Result<Vec<GridRow>> {
    let base = spec.base_config()?;
    base.validate()?;
    let splits = split_for_run(manifest, &base, spec.master_seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    for cell in grid_cells() {
        let run_dir = out_dir.join("runs").join(format!("{:02}", cell.id));
        let result = spec
            .run_config(&cell)
            .and_then(|cfg| train_run(&splits, &cfg, cell.id, &run_dir, |_| {}))
            .map(|out| out.report)
            .map_err(|e| e.to_string());
        if let Err(msg) = &result {
            fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            let path = run_dir.join("error.txt");
            fs::write(&path, format!("{msg}\n")).map_err(|e| Error::io(&path, e))?;
        }
        let row = GridRow { cell, result };
        on_run(&row);
        rows.push(row);
    }
    let csv_rows: Vec<Vec<String>> = rows.iter().map(GridRow::csv_row).collect();
    write_rows(&out_dir.join("grid.csv"), &REPORT_HEADER, &csv_rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_follow_protocol_layout() {
        let cells = grid_cells();
        assert_eq!(cells.len(), 12);
        assert!(cells.iter().enumerate().all(|(i, c)| c.id == i + 1));
        assert!(cells[..6].iter().all(|c| !c.use_attention));
        assert!(cells[6..].iter().all(|c| c.use_attention));
        for half in cells.chunks(6) {
            assert!(half[..3]
                .iter()
                .all(|c| (c.min_lr, c.batch_size) == (5e-4, 128)));
            assert!(half[3..]
                .iter()
                .all(|c| (c.min_lr, c.batch_size) == (5e-5, 64)));
            let names: Vec<_> = half[..3].iter().map(|c| c.backbone).collect();
            assert_eq!(names, Backbone::ALL.to_vec());
        }
    }

    #[test]
    fn run_seeds_are_distinct() {
        let spec = GridSpec::new(Scale::Desk, 42);
        let mut seeds: Vec<u64> = grid_cells()
            .iter()
            .map(|c| spec.run_config(c).unwrap().train.seed)
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 12);
    }
}
