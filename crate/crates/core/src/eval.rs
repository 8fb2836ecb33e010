//! Confusion matrices and the error metrics derived from them.

use serde::Serialize;

use crate::volume::LabelVolume;
use crate::{Error, Result};

/// Entry `(i, j)` counts voxels with reference label `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_labels: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(num_labels: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_labels * num_labels {
            return Err(Error::shape("confusion counts must be num_labels^2"));
        }
        Ok(Self { num_labels, counts })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    #[inline]
    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.num_labels + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_labels).map(|i| self.get(i, i)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("reference");
        for j in 0..self.num_labels {
            s.push_str(&format!(",pred_{j}"));
        }
        s.push('\n');
        for i in 0..self.num_labels {
            s.push_str(&i.to_string());
            for j in 0..self.num_labels {
                s.push_str(&format!(",{}", self.get(i, j)));
            }
            s.push('\n');
        }
        s
    }
}

/// Tallies `pred` against `reference` over voxels where `mask` is nonzero
/// (all voxels without a mask).
pub fn confusion(
    pred: &LabelVolume,
    reference: &LabelVolume,
    mask: Option<&LabelVolume>,
) -> Result<ConfusionMatrix> {
    if pred.shape() != reference.shape() {
        return Err(Error::shape("prediction and reference grids differ"));
    }
    if pred.num_labels() != reference.num_labels() {
        return Err(Error::shape(format!(
            "prediction has {} labels, reference {}",
            pred.num_labels(),
            reference.num_labels()
        )));
    }
    if let Some(m) = mask {
        if m.shape() != pred.shape() {
            return Err(Error::shape("mask grid differs"));
        }
    }
    let l = pred.num_labels();
    let mut counts = vec![0u64; l * l];
    for (i, (&p, &r)) in pred.labels().iter().zip(reference.labels()).enumerate() {
        if mask.is_some_and(|m| m.labels()[i] == 0) {
            continue;
        }
        counts[r as usize * l + p as usize] += 1;
    }
    ConfusionMatrix::from_counts(l, counts)
}

/// Percentage of evaluated voxels that are misclassified.
pub fn global_error(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("empty confusion matrix"));
    }
    Ok(100.0 * (total - cm.trace()) as f64 / total as f64)
}

/// Pooled true-positive rate over non-background reference voxels, in
/// percent.
pub fn tp_rate_nuclei(cm: &ConfusionMatrix) -> Result<f64> {
    let l = cm.num_labels;
    let mut hits = 0u64;
    let mut total = 0u64;
    for i in 1..l {
        hits += cm.get(i, i);
        total += (0..l).map(|j| cm.get(i, j)).sum::<u64>();
    }
    if total == 0 {
        return Err(Error::invalid("no non-background reference voxels"));
    }
    Ok(100.0 * hits as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub global_error_pct: f64,
    /// `None` when the reference has no foreground voxels.
    pub tp_nuclei_pct: Option<f64>,
    /// Per label; `None` when nothing was predicted as that label.
    pub precision: Vec<Option<f64>>,
    /// Per label; `None` when the label is absent from the reference.
    pub recall: Vec<Option<f64>>,
    pub evaluated_voxels: u64,
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let l = cm.num_labels;
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = (0..l)
        .map(|j| ratio(cm.get(j, j), (0..l).map(|i| cm.get(i, j)).sum()))
        .collect();
    let recall = (0..l)
        .map(|i| ratio(cm.get(i, i), (0..l).map(|j| cm.get(i, j)).sum()))
        .collect();
    Ok(MetricsReport {
        global_error_pct: global_error(cm)?,
        tp_nuclei_pct: tp_rate_nuclei(cm).ok(),
        precision,
        recall,
        evaluated_voxels: cm.total(),
    })
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut s = format!(
            "evaluated voxels : {}\nglobal error (%) : {:.3}\nTP nuclei (%)    : {}\n",
            self.evaluated_voxels,
            self.global_error_pct,
            self.tp_nuclei_pct
                .map_or("n/a".into(), |v| format!("{v:.3}"))
        );
        s.push_str("label  precision  recall\n");
        for (i, (p, r)) in self.precision.iter().zip(&self.recall).enumerate() {
            s.push_str(&format!("{i:>5}  {:>9}  {:>6}\n", fmt(*p), fmt(*r)));
        }
        s
    }
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
/// A single value has an undefined S.E.M., reported as 0.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
