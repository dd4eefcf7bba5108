//! Confusion counts, F-measures and per-category aggregation.
//!
//! Counts are summed over a whole video before the F-measure is taken, so a
//! video's score is not the mean of its per-frame scores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::{list_indexed_images, read_mask, Label, LabelFrame, Mask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn evaluated(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: ConfusionCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Adds one frame to `counts`. Excluded, out-of-ROI and unlabeled pixels
/// are skipped.
pub fn accumulate(
    pred: &Mask,
    gt: &LabelFrame,
    counts: ConfusionCounts,
) -> Result<ConfusionCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut c = counts;
    for (&p, &l) in pred.iter().zip(gt.labels()) {
        match (l, p) {
            (Label::Foreground, true) => c.tp += 1,
            (Label::Foreground, false) => c.fn_ += 1,
            (Label::Background, true) => c.fp += 1,
            (Label::Background, false) => c.tn += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// `TP / (TP + (FN + FP) / 2)`, or `None` when nothing was detected or
/// missed.
pub fn f_measure(c: &ConfusionCounts) -> Option<f64> {
    let denom = c.tp as f64 + (c.fn_ + c.fp) as f64 / 2.0;
    (denom > 0.0).then(|| c.tp as f64 / denom)
}

pub fn evaluate_sequence(preds: &[Mask], gts: &[LabelFrame]) -> Result<ConfusionCounts> {
    if preds.len() != gts.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    preds
        .iter()
        .zip(gts)
        .try_fold(ConfusionCounts::default(), |acc, (p, g)| {
            accumulate(p, g, acc)
        })
}

/// Scores mask images in `pred_dir` against `gts`, matching files to frames
/// by the number in their name. Every frame with evaluated pixels needs a
/// prediction.
pub fn evaluate_mask_directory(
    pred_dir: &Path,
    frame_indices: &[u32],
    gts: &[LabelFrame],
) -> Result<ConfusionCounts> {
    if frame_indices.len() != gts.len() {
        return Err(Error::Invalid(
            "frame indices and ground truth differ in length".into(),
        ));
    }
    let files = list_indexed_images(pred_dir)?;
    let mut counts = ConfusionCounts::default();
    let mut missing = Vec::new();
    for (&index, gt) in frame_indices.iter().zip(gts) {
        if !gt.labels().iter().any(|l| l.is_evaluated()) {
            continue;
        }
        match files.binary_search_by_key(&index, |f| f.index) {
            Ok(i) => counts = accumulate(&read_mask(&files[i].path)?, gt, counts)?,
            Err(_) => missing.push(index),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "{} evaluated frames have no prediction in {} (first missing: {})",
            missing.len(),
            pred_dir.display(),
            missing[0]
        )));
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video: String,
    pub category: String,
    pub counts: ConfusionCounts,
    pub f: Option<f64>,
}

impl VideoScore {
    pub fn new(
        video: impl Into<String>,
        category: impl Into<String>,
        counts: ConfusionCounts,
    ) -> Self {
        VideoScore {
            video: video.into(),
            category: category.into(),
            f: f_measure(&counts),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    /// Mean over videos with a defined F-measure.
    pub f: Option<f64>,
    pub videos: usize,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: Vec<VideoScore>,
    pub categories: Vec<CategoryScore>,
    /// Mean of the defined category means.
    pub overall: Option<f64>,
    pub notes: Vec<String>,
    pub config_echo: String,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn aggregate(videos: Vec<VideoScore>, config_echo: impl Into<String>) -> Result<EvalReport> {
    if videos.is_empty() {
        return Err(Error::Invalid("no videos to aggregate".into()));
    }
    let mut by_category: BTreeMap<&str, Vec<&VideoScore>> = BTreeMap::new();
    for v in &videos {
        by_category.entry(&v.category).or_default().push(v);
    }
    let mut notes = Vec::new();
    let categories: Vec<CategoryScore> = by_category
        .iter()
        .map(|(&name, vs)| {
            let defined: Vec<f64> = vs.iter().filter_map(|v| v.f).collect();
            for v in vs.iter().filter(|v| v.f.is_none()) {
                notes.push(format!(
                    "{}/{}: F undefined (no foreground and no false positives), left out of the mean",
                    name, v.video
                ));
            }
            CategoryScore {
                category: name.to_string(),
                f: mean(&defined),
                videos: vs.len(),
                undefined: vs.len() - defined.len(),
            }
        })
        .collect();
    let category_means: Vec<f64> = categories.iter().filter_map(|c| c.f).collect();
    let overall = mean(&category_means);
    Ok(EvalReport {
        videos,
        categories,
        overall,
        notes,
        config_echo: config_echo.into(),
    })
}

fn fmt_f(f: Option<f64>) -> String {
    f.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

impl EvalReport {
    /// Tab-separated table, one row per video plus category and overall rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("kind\tcategory\tvideo\tf_measure\ttp\ttn\tfp\tfn\n");
        for v in &self.videos {
            let c = &v.counts;
            let _ = writeln!(
                out,
                "video\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                v.category,
                v.video,
                fmt_f(v.f),
                c.tp,
                c.tn,
                c.fp,
                c.fn_
            );
        }
        for c in &self.categories {
            let _ = writeln!(out, "category\t{}\t-\t{}\t\t\t\t", c.category, fmt_f(c.f));
        }
        let _ = writeln!(out, "overall\t-\t-\t{}\t\t\t\t", fmt_f(self.overall));
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Overall F-measure: {}", fmt_f(self.overall));
        let _ = writeln!(out);
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{:<24} F = {}  ({} videos, {} undefined)",
                c.category,
                fmt_f(c.f),
                c.videos,
                c.undefined
            );
        }
        let _ = writeln!(out);
        for v in &self.videos {
            let _ = writeln!(
                out,
                "  {:<22} {:<22} F = {}  TP={} FP={} FN={} TN={}",
                v.category,
                v.video,
                fmt_f(v.f),
                v.counts.tp,
                v.counts.fp,
                v.counts.fn_,
                v.counts.tn
            );
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out, "\nNotes:");
            for n in &self.notes {
                let _ = writeln!(out, "  - {n}");
            }
        }
        if !self.config_echo.is_empty() {
            let _ = writeln!(out, "\nConfiguration:\n{}", self.config_echo);
        }
        out
    }

    /// Writes `report.tsv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = dir.join("report.tsv");
        fs::write(&table, self.to_tsv()).map_err(|e| Error::io(&table, e))?;
        let summary = dir.join("summary.txt");
        fs::write(&summary, self.summary()).map_err(|e| Error::io(&summary, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labels(rows: &[&[Label]]) -> LabelFrame {
        let h = rows.len();
        let w = rows[0].len();
        LabelFrame::new(ndarray::Array2::from_shape_fn((h, w), |(i, j)| rows[i][j]))
    }

    #[test]
    fn two_by_two_toy() {
        use Label::{Background as B, Foreground as F};
        let gt = labels(&[&[F, B], &[B, F]]);
        let pred = array![[true, true], [false, true]];
        let c = accumulate(&pred, &gt, ConfusionCounts::default()).unwrap();
        assert_eq!(
            c,
            ConfusionCounts {
                tp: 2,
                tn: 1,
                fp: 1,
                fn_: 0
            }
        );
        assert_eq!(c.evaluated(), 4);
    }

    #[test]
    fn skipped_labels_leave_counts_unchanged() {
        for l in [Label::Excluded, Label::OutOfRoi, Label::Unlabeled] {
            let gt = LabelFrame::filled(3, 3, l);
            let pred = ndarray::Array2::from_elem((3, 3), true);
            let c = accumulate(&pred, &gt, ConfusionCounts::default()).unwrap();
            assert_eq!(c, ConfusionCounts::default());
        }
    }

    #[test]
    fn f_measure_examples() {
        let c = ConfusionCounts {
            tp: 8,
            fn_: 1,
            fp: 1,
            tn: 0,
        };
        assert!((f_measure(&c).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(
            f_measure(&ConfusionCounts {
                tp: 3,
                ..Default::default()
            }),
            Some(1.0)
        );
        assert_eq!(
            f_measure(&ConfusionCounts {
                fp: 3,
                ..Default::default()
            }),
            Some(0.0)
        );
        assert_eq!(
            f_measure(&ConfusionCounts {
                tn: 9,
                ..Default::default()
            }),
            None
        );
    }

    #[test]
    fn aggregation_means() {
        let c = |tp, fp| ConfusionCounts {
            tp,
            fp,
            fn_: 0,
            tn: 0,
        };
        // F = tp / (tp + fp/2).
        let videos = vec![
            VideoScore::new("a1", "A", c(4, 2)),
            VideoScore::new("a2", "A", c(5, 0)),
            VideoScore::new("b1", "B", c(3, 4)),
            VideoScore::new(
                "b2",
                "B",
                ConfusionCounts {
                    tn: 5,
                    ..Default::default()
                },
            ),
        ];
        let r = aggregate(videos, "").unwrap();
        assert!((r.categories[0].f.unwrap() - 0.9).abs() < 1e-12);
        assert!((r.categories[1].f.unwrap() - 0.6).abs() < 1e-12);
        assert!((r.overall.unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(r.categories[1].undefined, 1);
        assert_eq!(r.notes.len(), 1);
        assert!(aggregate(Vec::new(), "").is_err());
    }

    #[test]
    fn report_tables_mark_undefined() {
        let r = aggregate(
            vec![VideoScore::new(
                "v",
                "c",
                ConfusionCounts {
                    tn: 1,
                    ..Default::default()
                },
            )],
            "seed = 1",
        )
        .unwrap();
        assert!(r.to_tsv().contains("n/a"));
        assert!(r.summary().contains("seed = 1"));
        assert_eq!(r.overall, None);
    }
}
