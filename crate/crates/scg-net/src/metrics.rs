//! Confusion-matrix evaluation: per-class F1, mean F1, overall accuracy.

use crate::error::{Error, Result};
use crate::tensor::{IntTensor, Tensor};

/// Metrics of one evaluation: confusion counts are row = true class,
/// column = predicted class.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub classes: usize,
    pub confusion: Vec<u64>,
    pub per_class_f1: Vec<f64>,
    pub mean_f1: f64,
    pub overall_accuracy: f64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<u64>, classes: usize) -> Self {
        assert_eq!(confusion.len(), classes * classes);
        let total: u64 = confusion.iter().sum();
        let trace: u64 = (0..classes).map(|k| confusion[k * classes + k]).sum();
        let overall_accuracy = if total == 0 { 0.0 } else { trace as f64 / total as f64 };
        let per_class_f1: Vec<f64> = (0..classes)
            .map(|k| {
                let tp = confusion[k * classes + k];
                let fp: u64 = (0..classes).filter(|&r| r != k).map(|r| confusion[r * classes + k]).sum();
                let fn_: u64 = (0..classes).filter(|&c| c != k).map(|c| confusion[k * classes + c]).sum();
                let denom = 2 * tp + fp + fn_;
                if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 }
            })
            .collect();
        let mean_f1 = per_class_f1.iter().sum::<f64>() / classes as f64;
        MetricsReport { classes, confusion, per_class_f1, mean_f1, overall_accuracy }
    }

    /// Merge counts from another shard; metrics are recomputed.
    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        assert_eq!(self.classes, other.classes);
        let confusion: Vec<u64> = self
            .confusion
            .iter()
            .zip(&other.confusion)
            .map(|(a, b)| a + b)
            .collect();
        MetricsReport::from_confusion(confusion, self.classes)
    }

    /// Flat `key = value` rendering.
    pub fn to_key_value_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("oa = {}\n", self.overall_accuracy));
        out.push_str(&format!("mf1 = {}\n", self.mean_f1));
        for (k, f1) in self.per_class_f1.iter().enumerate() {
            out.push_str(&format!("f1_class{k} = {f1}\n"));
        }
        out
    }

    /// CSV rows `class,f1` followed by the `oa` and `mf1` summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,f1\n");
        for (k, f1) in self.per_class_f1.iter().enumerate() {
            out.push_str(&format!("{k},{f1}\n"));
        }
        out.push_str(&format!("oa,{}\n", self.overall_accuracy));
        out.push_str(&format!("mf1,{}\n", self.mean_f1));
        out
    }
}

/// Argmax over the class axis; ties resolve to the lowest class index.
pub fn argmax_predictions(logits: &Tensor) -> Result<IntTensor> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch { op: "argmax", lhs: s.to_vec(), rhs: vec![] });
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let mut preds = vec![0u8; b * plane];
    for bi in 0..b {
        for p in 0..plane {
            let mut best = 0usize;
            let mut best_v = logits.data()[(bi * c) * plane + p];
            for ch in 1..c {
                let v = logits.data()[(bi * c + ch) * plane + p];
                if v > best_v {
                    best_v = v;
                    best = ch;
                }
            }
            preds[bi * plane + p] = best as u8;
        }
    }
    IntTensor::new(preds, &[b, h, w])
}

/// Confusion counts of predictions against labels.
pub fn confusion_counts(preds: &IntTensor, labels: &IntTensor, classes: usize) -> Result<Vec<u64>> {
    if preds.shape != labels.shape {
        return Err(Error::ShapeMismatch {
            op: "confusion",
            lhs: preds.shape.clone(),
            rhs: labels.shape.clone(),
        });
    }
    let mut confusion = vec![0u64; classes * classes];
    for (&p, &y) in preds.data.iter().zip(&labels.data) {
        let (p, y) = (p as usize, y as usize);
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        confusion[y * classes + p] += 1;
    }
    Ok(confusion)
}

/// Argmax plus confusion-matrix metrics in one step.
pub fn evaluate(logits: &Tensor, labels: &IntTensor) -> Result<MetricsReport> {
    let classes = logits.shape()[1];
    let preds = argmax_predictions(logits)?;
    let confusion = confusion_counts(&preds, labels, classes)?;
    Ok(MetricsReport::from_confusion(confusion, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let labels = IntTensor::new(vec![0, 1, 1, 0], &[1, 2, 2]).unwrap();
        let mut logits = vec![0.0; 2 * 4];
        for (p, &l) in labels.data.iter().enumerate() {
            logits[l as usize * 4 + p] = 5.0;
        }
        let report = evaluate(&Tensor::from_vec(logits, &[1, 2, 2, 2]).unwrap(), &labels).unwrap();
        assert_eq!(report.overall_accuracy, 1.0);
        assert_eq!(report.per_class_f1, vec![1.0, 1.0]);
        assert_eq!(report.mean_f1, 1.0);
    }

    #[test]
    fn all_zero_predictions_on_balanced_labels() {
        // logits favor class 0 everywhere; labels half 0 / half 1
        let labels = IntTensor::new(vec![0, 0, 1, 1], &[1, 2, 2]).unwrap();
        let mut logits = vec![0.0; 2 * 4];
        for p in 0..4 {
            logits[p] = 1.0;
        }
        let report = evaluate(&Tensor::from_vec(logits, &[1, 2, 2, 2]).unwrap(), &labels).unwrap();
        assert_eq!(report.overall_accuracy, 0.5);
        assert!((report.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.per_class_f1[1], 0.0);
        assert!((report.mean_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn confusion_conserves_pixel_count() {
        let labels = IntTensor::new(vec![0, 1, 2, 2, 1, 0], &[1, 2, 3]).unwrap();
        let logits = Tensor::zeros(&[1, 3, 2, 3]);
        let report = evaluate(&logits, &labels).unwrap();
        assert_eq!(report.confusion.iter().sum::<u64>(), 6);
    }

    #[test]
    fn argmax_ties_pick_lowest_class() {
        let logits = Tensor::zeros(&[1, 3, 1, 2]);
        let preds = argmax_predictions(&logits).unwrap();
        assert_eq!(preds.data, vec![0, 0]);
    }

    #[test]
    fn merge_is_associative_accumulation() {
        let a = MetricsReport::from_confusion(vec![3, 1, 0, 2], 2);
        let b = MetricsReport::from_confusion(vec![1, 0, 2, 4], 2);
        let merged = a.merge(&b);
        assert_eq!(merged.confusion, vec![4, 1, 2, 6]);
        assert_eq!(merged.confusion.iter().sum::<u64>(), 13);
    }

    #[test]
    fn matches_brute_force_counting_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        for _ in 0..20 {
            let c = 3usize;
            let logits_data: Vec<f64> = (0..c * 64).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels_data: Vec<u8> = (0..64).map(|_| rng.random_range(0..c as u8)).collect();
            let logits = Tensor::from_vec(logits_data.clone(), &[1, c, 8, 8]).unwrap();
            let labels = IntTensor::new(labels_data.clone(), &[1, 8, 8]).unwrap();
            let report = evaluate(&logits, &labels).unwrap();

            // brute force: recount every pixel independently
            let mut counts = vec![0u64; c * c];
            for p in 0..64 {
                let mut best = 0;
                for ch in 1..c {
                    if logits_data[ch * 64 + p] > logits_data[best * 64 + p] {
                        best = ch;
                    }
                }
                counts[labels_data[p] as usize * c + best] += 1;
            }
            assert_eq!(report.confusion, counts);
            let trace: u64 = (0..c).map(|k| counts[k * c + k]).sum();
            assert_eq!(report.overall_accuracy, trace as f64 / 64.0);
        }
    }
}
