//! Pixel accuracy, per-class IoU and mIoU.
//!
//! Counts are kept as a full truth-by-prediction confusion matrix so that
//! several images can be merged (micro-aggregation) before any ratio is taken.
//! Classes absent from the ground truth have no accuracy and are left out of
//! the mean IoU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelmap::{ClassId, ClassPalette, LabelMap};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("dimension mismatch: prediction {pred:?}, truth {truth:?}")]
    DimensionMismatch { pred: (u32, u32), truth: (u32, u32) },
    #[error("class id {0} is outside the palette")]
    UnknownClass(ClassId),
    #[error("confusion matrices have different class counts")]
    ClassCountMismatch,
}

/// `matrix[t * n + p]` counts pixels with truth `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    classes: usize,
    matrix: Vec<u64>,
}

impl ConfusionCounts {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            matrix: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: ClassId, pred: ClassId) -> u64 {
        self.matrix[truth as usize * self.classes + pred as usize]
    }

    pub fn tp(&self, c: ClassId) -> u64 {
        self.get(c, c)
    }

    /// Predicted `c` where the truth is another class.
    pub fn fp(&self, c: ClassId) -> u64 {
        (0..self.classes)
            .map(|t| self.get(t as ClassId, c))
            .sum::<u64>()
            - self.tp(c)
    }

    /// Truth `c` predicted as another class.
    pub fn fn_(&self, c: ClassId) -> u64 {
        self.truth_total(c) - self.tp(c)
    }

    pub fn truth_total(&self, c: ClassId) -> u64 {
        let row = c as usize * self.classes;
        self.matrix[row..row + self.classes].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.tp(c as ClassId)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<(), EvalError> {
        if self.classes != other.classes {
            return Err(EvalError::ClassCountMismatch);
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(
    pred: &LabelMap,
    truth: &LabelMap,
    palette: &ClassPalette,
) -> Result<ConfusionCounts, EvalError> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(EvalError::DimensionMismatch {
            pred: (pred.width(), pred.height()),
            truth: (truth.width(), truth.height()),
        });
    }
    let n = palette.len();
    let mut counts = ConfusionCounts::zeros(n);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        if p as usize >= n {
            return Err(EvalError::UnknownClass(p));
        }
        if t as usize >= n {
            return Err(EvalError::UnknownClass(t));
        }
        counts.matrix[t as usize * n + p as usize] += 1;
    }
    Ok(counts)
}

/// Per-class `TP / (TP + FN)` (`None` when the class is absent from the
/// truth) and total `sum TP / pixels`.
pub fn pixel_accuracy(counts: &ConfusionCounts) -> (Vec<Option<f64>>, f64) {
    let per_class = (0..counts.classes)
        .map(|c| {
            let c = c as ClassId;
            let denom = counts.tp(c) + counts.fn_(c);
            (denom > 0).then(|| counts.tp(c) as f64 / denom as f64)
        })
        .collect();
    let total = if counts.total() == 0 {
        0.0
    } else {
        counts.trace() as f64 / counts.total() as f64
    };
    (per_class, total)
}

/// Per-class `TP / (TP + FP + FN)` (`None` when the class appears in neither
/// map) and the mean over classes present in the truth.
pub fn iou(counts: &ConfusionCounts) -> (Vec<Option<f64>>, f64) {
    let per_class: Vec<Option<f64>> = (0..counts.classes)
        .map(|c| {
            let c = c as ClassId;
            let denom = counts.tp(c) + counts.fp(c) + counts.fn_(c);
            (denom > 0).then(|| counts.tp(c) as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = (0..counts.classes)
        .filter(|&c| counts.truth_total(c as ClassId) > 0)
        .filter_map(|c| per_class[c])
        .collect();
    let miou = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per_class, miou)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub id: ClassId,
    pub name: String,
    pub pixel_accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub in_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassScore>,
    pub total_accuracy: f64,
    pub miou: f64,
}

impl EvalReport {
    pub fn from_counts(counts: &ConfusionCounts, palette: &ClassPalette) -> Self {
        let (acc, total_accuracy) = pixel_accuracy(counts);
        let (ious, miou) = iou(counts);
        let classes = palette
            .entries()
            .iter()
            .map(|e| ClassScore {
                id: e.id,
                name: e.name.clone(),
                pixel_accuracy: acc.get(e.id as usize).copied().flatten(),
                iou: ious.get(e.id as usize).copied().flatten(),
                in_truth: counts.truth_total(e.id) > 0,
            })
            .collect();
        Self {
            classes,
            total_accuracy,
            miou,
        }
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Mean IoU over the listed classes that appear in the truth.
    pub fn mean_iou_over(&self, ids: &[ClassId]) -> Option<f64> {
        let v: Vec<f64> = self
            .classes
            .iter()
            .filter(|c| ids.contains(&c.id) && c.in_truth)
            .filter_map(|c| c.iou)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Plain-text table with scores in percent.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>9} {:>9}\n", "class", "acc %", "IoU %");
        for c in &self.classes {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
            s.push_str(&format!(
                "{:<12} {:>9} {:>9}\n",
                c.name,
                f(c.pixel_accuracy),
                f(c.iou)
            ));
        }
        s.push_str(&format!(
            "{:<12} {:>9.2} {:>9.2}\n",
            "total/mIoU",
            100.0 * self.total_accuracy,
            100.0 * self.miou
        ));
        s
    }
}

pub fn evaluate(
    pred: &LabelMap,
    truth: &LabelMap,
    palette: &ClassPalette,
) -> Result<EvalReport, EvalError> {
    Ok(EvalReport::from_counts(
        &confusion(pred, truth, palette)?,
        palette,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub id: ClassId,
    pub name: String,
    pub iou_delta: Option<f64>,
    pub accuracy_delta: Option<f64>,
}

/// Before/after comparison against the same truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub before: EvalReport,
    pub after: EvalReport,
    pub deltas: Vec<ClassDelta>,
    pub miou_delta: f64,
}

impl AblationReport {
    pub fn from_reports(before: EvalReport, after: EvalReport) -> Self {
        let deltas = before
            .classes
            .iter()
            .zip(&after.classes)
            .map(|(b, a)| ClassDelta {
                id: b.id,
                name: b.name.clone(),
                iou_delta: a.iou.zip(b.iou).map(|(a, b)| a - b),
                accuracy_delta: a.pixel_accuracy.zip(b.pixel_accuracy).map(|(a, b)| a - b),
            })
            .collect();
        let miou_delta = after.miou - before.miou;
        Self {
            before,
            after,
            deltas,
            miou_delta,
        }
    }

    /// Two rows (Before/After) of per-class IoU plus mIoU, in percent.
    pub fn table(&self) -> String {
        let names: Vec<&str> = self
            .before
            .classes
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        let mut s = format!("{:<8}", "Method");
        for n in &names {
            s.push_str(&format!(" {:>9}", n));
        }
        s.push_str(&format!(" {:>9}\n", "mIoU"));
        for (label, r) in [("Before", &self.before), ("After", &self.after)] {
            s.push_str(&format!("{:<8}", label));
            for c in &r.classes {
                match c.iou.filter(|_| c.in_truth) {
                    Some(v) => s.push_str(&format!(" {:>9.1}", 100.0 * v)),
                    None => s.push_str(&format!(" {:>9}", "-")),
                }
            }
            s.push_str(&format!(" {:>9.1}\n", 100.0 * r.miou));
        }
        s
    }
}

pub fn ablation(
    pred_before: &LabelMap,
    pred_after: &LabelMap,
    truth: &LabelMap,
    palette: &ClassPalette,
) -> Result<AblationReport, EvalError> {
    Ok(AblationReport::from_reports(
        evaluate(pred_before, truth, palette)?,
        evaluate(pred_after, truth, palette)?,
    ))
}
