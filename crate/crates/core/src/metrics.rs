//! Overlap and pixel-classification metrics on binary masks.
//!
//! Masks are slices of `0.0`/`1.0`. Ratios whose denominator is zero (both
//! masks empty, no positives, no negatives) evaluate to 1.0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{data_err, shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            dice: self.dice(),
            iou: self.iou(),
            accuracy: self.accuracy(),
            sensitivity: self.sensitivity(),
            specificity: self.specificity(),
        }
    }
}

fn as_bit(v: f64, what: &str, i: usize) -> Result<bool> {
    if v == 1.0 {
        Ok(true)
    } else if v == 0.0 {
        Ok(false)
    } else {
        Err(data_err!("{what} mask value {v} at index {i} is not binary"))
    }
}

pub fn confusion_counts(gt: &[f64], pred: &[f64]) -> Result<Confusion> {
    if gt.len() != pred.len() {
        return Err(shape_err!(
            "ground truth has {} pixels, prediction has {}",
            gt.len(),
            pred.len()
        ));
    }
    let mut c = Confusion::default();
    for (i, (&g, &p)) in gt.iter().zip(pred).enumerate() {
        match (as_bit(g, "ground-truth", i)?, as_bit(p, "predicted", i)?) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn dice(gt: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(confusion_counts(gt, pred)?.dice())
}

pub fn iou(gt: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(confusion_counts(gt, pred)?.iou())
}

pub fn accuracy(gt: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(confusion_counts(gt, pred)?.accuracy())
}

pub fn sensitivity(gt: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(confusion_counts(gt, pred)?.sensitivity())
}

pub fn specificity(gt: &[f64], pred: &[f64]) -> Result<f64> {
    Ok(confusion_counts(gt, pred)?.specificity())
}

/// Hard mask: 1 where `p >= threshold`.
pub fn binarize(probs: &Tensor, threshold: f64) -> Tensor {
    probs.map(|p| if p >= threshold { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl MetricReport {
    fn values(&self) -> [f64; 5] {
        [self.dice, self.iou, self.accuracy, self.sensitivity, self.specificity]
    }

    fn from_values(v: [f64; 5]) -> Self {
        MetricReport {
            dice: v[0],
            iou: v[1],
            accuracy: v[2],
            sensitivity: v[3],
            specificity: v[4],
        }
    }
}

/// Mean and sample standard deviation of each metric over a set of images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: MetricReport,
    pub sd: MetricReport,
    pub count: usize,
}

pub fn summarize(reports: &[MetricReport]) -> MetricSummary {
    let n = reports.len();
    if n == 0 {
        return MetricSummary::default();
    }
    let mut mean = [0.0; 5];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut sd = [0.0; 5];
    if n > 1 {
        for r in reports {
            for ((s, v), m) in sd.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2);
            }
        }
        sd.iter_mut().for_each(|s| *s = (*s / (n - 1) as f64).sqrt());
    }
    MetricSummary {
        mean: MetricReport::from_values(mean),
        sd: MetricReport::from_values(sd),
        count: n,
    }
}

pub const REPORT_HEADER: &str = "dataset,model,dice,iou,accuracy,sensitivity,specificity";

/// One CSV row of a metric report (no trailing newline).
pub fn report_row(dataset: &str, model: &str, r: &MetricReport) -> String {
    let mut s = format!("{dataset},{model}");
    for v in r.values() {
        let _ = write!(s, ",{v:.6}");
    }
    s
}
