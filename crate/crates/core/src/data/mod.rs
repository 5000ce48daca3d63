//! Clip datasets on disk.
//!
//! Layout: `<root>/manifest.csv` (header `clip_dir,label,frame_count`) and
//! one directory per clip holding `frame_000.ppm`, `frame_001.ppm`, ...

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub mod ppm;
mod synth;

pub use synth::{clip_rng, generate_synthetic, render_clip, trajectory, SynthSpec, Trajectory};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CLASS_NAMES: [&str; 2] = ["nonviolence", "violence"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipRecord {
    /// Relative to the dataset root (or absolute).
    pub clip_dir: PathBuf,
    /// 0 = nonviolence, 1 = violence.
    pub label: usize,
    pub frame_count: usize,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:03}.ppm")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clip_path(&self, rec: &ClipRecord) -> PathBuf {
        self.root.join(&rec.clip_dir)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| Error::data(&path, format!("cannot open manifest: {e}")))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::data(&path, e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["clip_dir", "label", "frame_count"] {
            return Err(Error::data(
                &path,
                "header must be clip_dir,label,frame_count",
            ));
        }
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| Error::data(&path, e.to_string()))?;
            let bad = |what: &str| Error::data(&path, format!("row {}: invalid {what}", i + 1));
            let label: usize = row[1].trim().parse().map_err(|_| bad("label"))?;
            if label > 1 {
                return Err(bad("label (must be 0 or 1)"));
            }
            let frame_count: usize = row[2].trim().parse().map_err(|_| bad("frame_count"))?;
            if frame_count == 0 {
                return Err(bad("frame_count (must be positive)"));
            }
            records.push(ClipRecord {
                clip_dir: PathBuf::from(row[0].trim()),
                label,
                frame_count,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            records,
        })
    }

    pub fn write(&self) -> Result<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|e| Error::data(&path, e.to_string()))?;
        w.write_record(["clip_dir", "label", "frame_count"])?;
        for r in &self.records {
            w.write_record([
                r.clip_dir.to_string_lossy().as_ref(),
                &r.label.to_string(),
                &r.frame_count.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Evenly spread frame indices `round(i·(n−1)/(T−1))`. Clips shorter than
/// `seq_len` use each frame once and then repeat the last one.
pub fn sample_frames(n_frames: usize, seq_len: usize) -> Vec<usize> {
    let n = n_frames.max(1);
    if seq_len == 1 {
        return vec![0];
    }
    let spread = |i: usize, count: usize| -> usize {
        if count == 1 {
            0
        } else {
            ((i * (n - 1)) as f64 / (count - 1) as f64).round() as usize
        }
    };
    if n >= seq_len {
        (0..seq_len).map(|i| spread(i, seq_len)).collect()
    } else {
        let mut out: Vec<usize> = (0..n).map(|i| spread(i, n)).collect();
        out.resize(seq_len, n - 1);
        out
    }
}

/// Decodes the given frames of a clip, resized to `hw`, as `H·W·3` floats each.
pub fn load_frames(dir: &Path, indices: &[usize], hw: (usize, usize)) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(indices.len() * hw.0 * hw.1 * 3);
    for &i in indices {
        let img = ppm::read(&dir.join(frame_file_name(i)))?;
        out.extend(ppm::resize_to_unit(&img, hw.0, hw.1));
    }
    Ok(out)
}

/// All frames of a clip as `n×H×W×3` in `[0, 1]`.
pub fn load_clip(manifest: &Manifest, rec: &ClipRecord, hw: (usize, usize)) -> Result<Tensor> {
    let indices: Vec<usize> = (0..rec.frame_count).collect();
    let data = load_frames(&manifest.clip_path(rec), &indices, hw)?;
    Tensor::new(&[rec.frame_count, hw.0, hw.1, 3], data)
}

/// A batch of clips `B×T×H×W×C` with labels.
#[derive(Debug, Clone)]
pub struct ClipBatch {
    pub frames: Tensor,
    pub labels: Vec<usize>,
}

impl ClipBatch {
    pub fn new(frames: Tensor, labels: Vec<usize>) -> Result<Self> {
        frames.expect_rank(5, "clip batch")?;
        if frames.shape()[0] != labels.len() {
            return Err(Error::dim(format!(
                "{} labels for a batch of {}",
                labels.len(),
                frames.shape()[0]
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::dim(format!("label {l} outside {{0, 1}}")));
        }
        if frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric(
                "clip batch values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { frames, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loads the given manifest entries as one batch shaped for `config`.
pub fn load_batch(
    manifest: &Manifest,
    indices: &[usize],
    config: &ModelConfig,
) -> Result<ClipBatch> {
    if config.channels != 3 {
        return Err(Error::config("channels", "PPM datasets provide 3 channels"));
    }
    let hw = (config.frame_h, config.frame_w);
    let clips: Vec<Vec<f64>> = indices
        .par_iter()
        .map(|&i| {
            let rec = &manifest.records[i];
            let picks = sample_frames(rec.frame_count, config.seq_len);
            load_frames(&manifest.clip_path(rec), &picks, hw)
        })
        .collect::<Result<_>>()?;
    let frames = Tensor::new(
        &[indices.len(), config.seq_len, hw.0, hw.1, 3],
        clips.concat(),
    )?;
    let labels = indices.iter().map(|&i| manifest.records[i].label).collect();
    ClipBatch::new(frames, labels)
}

/// Stratified split into `(train, val, test)`. Per class, `round(f·n)`
/// clips go to train and to val, the rest to test. Each split keeps
/// manifest order.
pub fn split_dataset(
    manifest: &Manifest,
    fractions: (f64, f64, f64),
    rng: &mut Rng,
) -> Result<(Manifest, Manifest, Manifest)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9
    {
        return Err(Error::config(
            "fractions",
            format!("must be in [0,1] and sum to 1, got ({ft}, {fv}, {fs})"),
        ));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in 0..2 {
        let mut idx: Vec<usize> = (0..manifest.len())
            .filter(|&i| manifest.records[i].label == label)
            .collect();
        rng.shuffle(&mut idx);
        let n = idx.len();
        let n_train = ((ft * n as f64).round() as usize).min(n);
        let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    let pick = |mut ids: Vec<usize>| {
        ids.sort_unstable();
        Manifest {
            root: manifest.root.clone(),
            records: ids
                .into_iter()
                .map(|i| manifest.records[i].clone())
                .collect(),
        }
    };
    let [a, b, c] = parts;
    Ok((pick(a), pick(b), pick(c)))
}

/// Yields one epoch of batches; the last batch may be short.
pub struct BatchIter<'a> {
    manifest: &'a Manifest,
    config: &'a ModelConfig,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIter<'_> {
    /// Clip indices of each batch, in delivery order.
    pub fn plan(&self) -> Vec<Vec<usize>> {
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<ClipBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let ids = &self.order[self.pos..end];
        self.pos = end;
        Some(load_batch(self.manifest, ids, self.config))
    }
}

/// One pass over `manifest`. With `shuffle`, the order is drawn from `rng`.
pub fn batch_iter<'a>(
    manifest: &'a Manifest,
    config: &'a ModelConfig,
    batch_size: usize,
    rng: &mut Rng,
    shuffle: bool,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    if manifest.is_empty() {
        return Err(Error::data(&manifest.root, "manifest is empty"));
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    Ok(BatchIter {
        manifest,
        config,
        order,
        batch_size,
        pos: 0,
    })
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
