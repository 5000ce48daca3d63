//! Seeded synthetic conflict clips.
//!
//! Every clip shows a red blob and a green blob on a noisy dark background.
//! Class 0: the blobs glide along separate horizontal lanes, bouncing off
//! the side walls. Class 1: the blobs approach each other, meet, and then
//! shake around the meeting point with large per-frame jitter.

use std::fs;
use std::path::{Path, PathBuf};

use super::ppm::{self, RgbImage};
use super::{create_dir, frame_file_name, ClipRecord, Manifest};
use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};

const BACKGROUND: f64 = 30.0;
const BLOB_INTENSITY: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Per-frame blob speed range, in units of the frame side.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Per-frame jitter amplitude for class 1 after contact.
    pub jitter: f64,
    /// Blob centres closer than this count as overlapping.
    pub overlap_threshold: f64,
    pub blob_radius: f64,
    /// Background noise amplitude in 8-bit levels.
    pub noise: u8,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clips_per_class: 200,
            frames: 15,
            height: 100,
            width: 100,
            seed: 0,
            speed_min: 0.01,
            speed_max: 0.03,
            jitter: 0.06,
            overlap_threshold: 0.1,
            blob_radius: 0.12,
            noise: 10,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_class == 0 {
            return Err(Error::config("clips_per_class", "must be at least 1"));
        }
        if self.frames < 15 {
            return Err(Error::config("frames", "must be at least 15"));
        }
        if self.height < 2 || self.width < 2 {
            return Err(Error::config("size", "frames must be at least 2x2"));
        }
        if !(0.0 < self.speed_min && self.speed_min <= self.speed_max) {
            return Err(Error::config("speed", "need 0 < speed_min <= speed_max"));
        }
        if !(self.blob_radius > 0.0 && self.blob_radius < 0.25) {
            return Err(Error::config("blob_radius", "must lie in (0, 0.25)"));
        }
        if !(self.jitter >= 0.0 && self.jitter <= self.overlap_threshold.max(0.0) + 0.1) {
            return Err(Error::config(
                "jitter",
                "must be non-negative and comparable to the overlap threshold",
            ));
        }
        Ok(())
    }
}

/// Blob centres per frame in normalized `(x, y)` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub a: Vec<(f64, f64)>,
    pub b: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn distances(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
            .collect()
    }

    pub fn mean_distance(&self) -> f64 {
        let d = self.distances();
        d.iter().sum::<f64>() / d.len() as f64
    }
}

fn bounce(pos: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let mut t = (pos - lo).rem_euclid(2.0 * span);
    if t > span {
        t = 2.0 * span - t;
    }
    lo + t
}

/// Draws the motion of one clip.
pub fn trajectory(spec: &SynthSpec, label: usize, rng: &mut Rng) -> Trajectory {
    let n = spec.frames;
    let r = spec.blob_radius;
    let (lo, hi) = (r, 1.0 - r);
    let speed = |rng: &mut Rng| {
        let s = rng.uniform_range(spec.speed_min, spec.speed_max);
        if rng.uniform() < 0.5 {
            -s
        } else {
            s
        }
    };
    if label == 0 {
        let lanes = if rng.uniform() < 0.5 {
            (0.25, 0.75)
        } else {
            (0.75, 0.25)
        };
        let (va, vb) = (speed(rng), speed(rng));
        let (xa, xb) = (rng.uniform_range(lo, hi), rng.uniform_range(lo, hi));
        let wobble = (rng.uniform_range(0.0, 6.3), rng.uniform_range(0.0, 6.3));
        let path = |x0: f64, v: f64, lane: f64, phase: f64| -> Vec<(f64, f64)> {
            (0..n)
                .map(|t| {
                    let x = bounce(x0 + v * t as f64, lo, hi);
                    let y = lane + 0.02 * (0.4 * t as f64 + phase).sin();
                    (x, y)
                })
                .collect()
        };
        Trajectory {
            a: path(xa, va, lanes.0, wobble.0),
            b: path(xb, vb, lanes.1, wobble.1),
        }
    } else {
        let meet = (rng.uniform_range(0.35, 0.65), rng.uniform_range(0.35, 0.65));
        let contact = ((n as f64 * rng.uniform_range(0.3, 0.5)).round() as usize).clamp(1, n - 1);
        let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
        let reach = rng.uniform_range(0.25, 0.35);
        let start_a = (meet.0 + reach * angle.cos(), meet.1 + reach * angle.sin());
        let start_b = (meet.0 - reach * angle.cos(), meet.1 - reach * angle.sin());
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for t in 0..n {
            if t < contact {
                let s = t as f64 / contact as f64;
                let lerp = |p: (f64, f64)| (p.0 + (meet.0 - p.0) * s, p.1 + (meet.1 - p.1) * s);
                a.push(lerp(start_a));
                b.push(lerp(start_b));
            } else {
                let mut shake = || {
                    (
                        meet.0 + rng.uniform_range(-spec.jitter, spec.jitter),
                        meet.1 + rng.uniform_range(-spec.jitter, spec.jitter),
                    )
                };
                a.push(shake());
                b.push(shake());
            }
        }
        Trajectory { a, b }
    }
}

/// Rasterizes a trajectory. Blob A adds red, blob B adds green.
pub fn render_clip(spec: &SynthSpec, traj: &Trajectory, rng: &mut Rng) -> Vec<RgbImage> {
    let (w, h) = (spec.width, spec.height);
    let side = w.min(h) as f64;
    let radius = spec.blob_radius * side;
    let noise = f64::from(spec.noise);
    traj.a
        .iter()
        .zip(&traj.b)
        .map(|(&pa, &pb)| {
            let mut img = RgbImage::new(w, h);
            let ca = (pa.0 * w as f64, pa.1 * h as f64);
            let cb = (pb.0 * w as f64, pb.1 * h as f64);
            for y in 0..h {
                for x in 0..w {
                    let p = (x as f64 + 0.5, y as f64 + 0.5);
                    let inside = |c: (f64, f64)| {
                        (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2) <= radius * radius
                    };
                    let mut rgb = [0.0; 3];
                    for v in &mut rgb {
                        *v = BACKGROUND + rng.uniform_range(-noise, noise);
                    }
                    if inside(ca) {
                        rgb[0] += BLOB_INTENSITY;
                    }
                    if inside(cb) {
                        rgb[1] += BLOB_INTENSITY;
                    }
                    img.put(x, y, rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
                }
            }
            img
        })
        .collect()
}

/// Per-clip generator stream; independent of how many clips precede it.
pub fn clip_rng(seed: u64, clip_id: usize) -> Rng {
    Rng::new(seed)
        .substream(Stream::Generator)
        .fork(clip_id as u64)
}

/// Writes `2 · clips_per_class` clips plus the manifest under `out_dir`.
/// Labels alternate 0, 1, 0, 1, ... in clip id order.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    create_dir(out_dir)?;
    let mut records = Vec::with_capacity(2 * spec.clips_per_class);
    for id in 0..2 * spec.clips_per_class {
        let label = id % 2;
        let mut rng = clip_rng(spec.seed, id);
        let traj = trajectory(spec, label, &mut rng);
        let frames = render_clip(spec, &traj, &mut rng);
        let rel = PathBuf::from("clips").join(format!("{id:06}"));
        let dir = out_dir.join(&rel);
        create_dir(&dir)?;
        for (i, img) in frames.iter().enumerate() {
            let path = dir.join(frame_file_name(i));
            fs::write(&path, ppm::encode(img)).map_err(|e| Error::io(&path, e))?;
        }
        records.push(ClipRecord {
            clip_dir: rel,
            label,
            frame_count: spec.frames,
        });
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.write()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounce_stays_in_range() {
        for i in -200..200 {
            let v = bounce(i as f64 * 0.037, 0.1, 0.9);
            assert!((0.1..=0.9).contains(&v));
        }
        assert!((bounce(0.95, 0.1, 0.9) - 0.85).abs() < 1e-12);
        assert!((bounce(0.05, 0.1, 0.9) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn class_zero_never_meets() {
        let spec = SynthSpec::default();
        for id in 0..200 {
            let t = trajectory(&spec, 0, &mut clip_rng(3, id));
            assert!(t.distances().iter().all(|&d| d > 2.0 * spec.blob_radius));
        }
    }

    #[test]
    fn class_one_overlaps_after_contact() {
        let spec = SynthSpec::default();
        for id in 0..200 {
            let t = trajectory(&spec, 1, &mut clip_rng(3, id));
            let d = t.distances();
            let last = &d[(spec.frames * 6) / 10..];
            let limit = 2.0 * spec.jitter * std::f64::consts::SQRT_2;
            assert!(last.iter().all(|&x| x <= limit + 1e-12));
        }
    }

    #[test]
    fn rejects_short_clips() {
        let spec = SynthSpec {
            frames: 10,
            ..SynthSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
