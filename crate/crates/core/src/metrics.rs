//! Confusion matrix, per-class F1 and run reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::CLASS_NAMES;
use crate::error::{Error, Result};
use crate::training::{fmt6, EpochStats};

/// 2×2 tally; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

pub fn confusion(labels_true: &[usize], labels_pred: &[usize]) -> Result<ConfusionMatrix> {
    if labels_true.len() != labels_pred.len() {
        return Err(Error::dim(format!(
            "{} true labels vs {} predictions",
            labels_true.len(),
            labels_pred.len()
        )));
    }
    if labels_true.is_empty() {
        return Err(Error::dim("confusion matrix needs at least one label"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in labels_true.iter().zip(labels_pred) {
        if t > 1 || p > 1 {
            return Err(Error::dim(format!(
                "label pair ({t}, {p}) outside {{0, 1}}"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    pub fn error_rate(&self) -> f64 {
        (self.total() - self.correct()) as f64 / self.total() as f64
    }

    pub fn precision(&self, class: usize) -> f64 {
        let predicted = self.counts[0][class] + self.counts[1][class];
        ratio(self.counts[class][class], predicted)
    }

    pub fn recall(&self, class: usize) -> f64 {
        let actual = self.counts[class][0] + self.counts[class][1];
        ratio(self.counts[class][class], actual)
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self {
            counts: self.counts.map(|row| row.map(|c| c * k)),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_per_class(cm: &ConfusionMatrix) -> (f64, f64) {
    (cm.f1(0), cm.f1(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub id: usize,
    pub model: String,
    pub use_attention: bool,
    pub min_lr: f64,
    pub batch_size: usize,
    pub accuracy: f64,
    pub f1_class0: f64,
    pub f1_class1: f64,
    pub confusion: ConfusionMatrix,
    pub seconds: f64,
    pub stats: Vec<EpochStats>,
}

pub const REPORT_HEADER: [&str; 9] = [
    "id",
    "model",
    "attention",
    "min_lr",
    "batch_size",
    "accuracy",
    "f1_class0",
    "f1_class1",
    "seconds",
];

pub fn yes_no(flag: bool) -> &'static str {
    if flag {
        "Yes"
    } else {
        "No"
    }
}

impl RunReport {
    /// One CSV row in [`REPORT_HEADER`] order.
    pub fn row(&self) -> Vec<String> {
        vec![
            self.id.to_string(),
            self.model.clone(),
            yes_no(self.use_attention).to_string(),
            fmt6(self.min_lr),
            self.batch_size.to_string(),
            fmt6(self.accuracy),
            fmt6(self.f1_class0),
            fmt6(self.f1_class1),
            fmt6(self.seconds),
        ]
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::data(path, e.to_string()))
}

pub(crate) fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `confusion.csv`, `curves.svg` and `timing.csv`.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_rows(&out_dir.join("report.csv"), &REPORT_HEADER, &[report.row()])?;

    let c = &report.confusion.counts;
    let confusion_rows: Vec<Vec<String>> = (0..2)
        .map(|t| {
            vec![
                CLASS_NAMES[t].to_string(),
                c[t][0].to_string(),
                c[t][1].to_string(),
            ]
        })
        .collect();
    write_rows(
        &out_dir.join("confusion.csv"),
        &["true", "pred_nonviolence", "pred_violence"],
        &confusion_rows,
    )?;

    let mut total = 0.0;
    let timing_rows: Vec<Vec<String>> = report
        .stats
        .iter()
        .map(|s| {
            total += s.seconds;
            vec![s.epoch.to_string(), fmt6(s.seconds), fmt6(total)]
        })
        .collect();
    write_rows(
        &out_dir.join("timing.csv"),
        &["epoch", "seconds", "cumulative_seconds"],
        &timing_rows,
    )?;

    let svg_path = out_dir.join("curves.svg");
    fs::write(&svg_path, curves_svg(&report.stats)).map_err(|e| Error::io(&svg_path, e))
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 40.0;

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

fn panel(svg: &mut String, x0: f64, title: &str, series: &[Series], y_range: Option<(f64, f64)>) {
    let n = series.first().map_or(0, |s| s.values.len());
    let (lo, hi) = y_range.unwrap_or_else(|| {
        let hi = series
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        (0.0, if hi > 0.0 { hi } else { 1.0 })
    });
    let (left, top) = (x0 + MARGIN, MARGIN);
    let (w, h) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        r#"<g class="panel"><text x="{:.1}" y="20" font-size="13" text-anchor="middle">{title}</text>"#,
        left + w / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left:.1}" y="{top:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + h,
        fmt_tick(lo),
        left - 4.0,
        top + 8.0,
        fmt_tick(hi)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">epoch</text>"#,
        left + w / 2.0,
        top + h + 28.0
    );
    for (k, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let fx = if n > 1 {
                    i as f64 / (n - 1) as f64
                } else {
                    0.5
                };
                let v = if v.is_finite() { v.clamp(lo, hi) } else { hi };
                let fy = (v - lo) / (hi - lo);
                format!("{:.2},{:.2}", left + fx * w, top + (1.0 - fy) * h)
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-series="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            s.name,
            points.join(" "),
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{}">{}</text>"#,
            left + 6.0,
            top + 14.0 + 12.0 * k as f64,
            s.color,
            s.name
        );
    }
    svg.push_str("</g>\n");
}

fn fmt_tick(v: f64) -> String {
    format!("{v:.2}")
}

/// Two panels: accuracy and loss against epoch, train and val in each.
pub fn curves_svg(stats: &[EpochStats]) -> String {
    let pick = |f: fn(&EpochStats) -> f64| stats.iter().map(f).collect::<Vec<_>>();
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        2.0 * PANEL_W,
        PANEL_H,
        2.0 * PANEL_W,
        PANEL_H
    );
    svg.push('\n');
    panel(
        &mut svg,
        0.0,
        "Accuracy",
        &[
            Series {
                name: "train_acc",
                color: "#1f77b4",
                values: pick(|s| s.train_acc),
            },
            Series {
                name: "val_acc",
                color: "#ff7f0e",
                values: pick(|s| s.val_acc),
            },
        ],
        Some((0.0, 1.0)),
    );
    panel(
        &mut svg,
        PANEL_W,
        "Loss",
        &[
            Series {
                name: "train_loss",
                color: "#1f77b4",
                values: pick(|s| s.train_loss),
            },
            Series {
                name: "val_loss",
                color: "#ff7f0e",
                values: pick(|s| s.val_loss),
            },
        ],
        None,
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn perfect_and_constant_predictions() {
        let labels = [0, 1, 1, 0, 1];
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm.counts, [[2, 0], [0, 3]]);
        assert_eq!(f1_per_class(&cm), (1.0, 1.0));

        let cm = confusion(&labels, &[0; 5]).unwrap();
        assert_eq!(cm.counts[0][1] + cm.counts[1][1], 0);
    }

    #[test]
    fn confusion_errors() {
        assert!(confusion(&[0, 1], &[0]).is_err());
        assert!(confusion(&[], &[]).is_err());
        assert!(confusion(&[2], &[0]).is_err());
    }

    #[test]
    fn f1_degenerate_convention() {
        let cm = ConfusionMatrix {
            counts: [[10, 0], [10, 0]],
        };
        let (f0, f1) = f1_per_class(&cm);
        assert_eq!(f1, 0.0);
        assert!((f0 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_longhand() {
        let cm = ConfusionMatrix {
            counts: [[50, 10], [5, 35]],
        };
        // class 0: P = 50/55, R = 50/60; class 1: P = 35/45, R = 35/40.
        let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let (f0, f1) = f1_per_class(&cm);
        assert!((f0 - f(50.0 / 55.0, 50.0 / 60.0)).abs() < 1e-15);
        assert!((f1 - f(35.0 / 45.0, 35.0 / 40.0)).abs() < 1e-15);
        assert_eq!(cm.accuracy(), 0.85);
    }

    #[test]
    fn accuracy_plus_error_is_one_and_f1_scale_invariant() {
        let mut rng = Rng::new(6);
        for _ in 0..200 {
            let n = 1 + rng.below(30);
            let t: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let cm = confusion(&t, &p).unwrap();
            assert_eq!(cm.accuracy() + cm.error_rate(), 1.0);
            let k = 1 + rng.below(9) as u64;
            assert_eq!(f1_per_class(&cm), f1_per_class(&cm.scaled(k)));
        }
    }

    #[test]
    fn svg_handles_empty_and_single_epoch() {
        assert!(curves_svg(&[]).matches("<polyline").count() == 4);
        let one = EpochStats {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.6,
            val_loss: f64::NAN,
            val_acc: 0.5,
            lr: 1e-3,
            seconds: 1.0,
        };
        assert!(!curves_svg(&[one]).contains("NaN"));
    }
}
