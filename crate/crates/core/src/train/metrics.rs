//! Evaluation metrics over dataset splits.

use crate::error::{HopeError, Result};
use crate::real::Real;
use crate::synth::{gather_labels, make_view_batch, SyntheticDataset};
use crate::train::model::{argmax_rows, Predictor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Per cluster: (nodes evaluated, accuracy). Clusters absent from the
    /// split report (0, 0.0).
    pub per_cluster: Vec<(usize, f64)>,
    pub head_accuracy: f64,
    pub tail_accuracy: f64,
    /// head_accuracy - tail_accuracy.
    pub tail_head_gap: f64,
}

/// Score a frozen predictor over the given node indices.
pub fn evaluate<T: Real, P: Predictor<T>>(
    predictor: &P,
    ds: &SyntheticDataset<T>,
    indices: &[usize],
) -> Result<EvalMetrics> {
    if indices.is_empty() {
        return Err(HopeError::EmptySplit);
    }
    let batch = make_view_batch(ds, indices)?;
    let labels = gather_labels(ds, indices);
    let logits = predictor.predict(&batch)?;
    let classes = ds.spec.num_classes;
    let preds = argmax_rows(&logits, classes);

    let mut correct = 0usize;
    let mut confusion = vec![0usize; classes * classes]; // [true][pred]
    let mut cluster_total = vec![0usize; ds.spec.num_clusters];
    let mut cluster_correct = vec![0usize; ds.spec.num_clusters];
    let mut head = (0usize, 0usize);
    let mut tail = (0usize, 0usize);

    for (row, &node) in indices.iter().enumerate() {
        let truth = labels[row];
        let pred = preds[row];
        let hit = truth == pred;
        if hit {
            correct += 1;
        }
        confusion[truth * classes + pred] += 1;
        let c = ds.cluster_of[node];
        cluster_total[c] += 1;
        if hit {
            cluster_correct[c] += 1;
        }
        let side = if ds.is_tail[node] { &mut tail } else { &mut head };
        side.0 += 1;
        if hit {
            side.1 += 1;
        }
    }

    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = confusion[c * classes + c] as f64;
        let pred_c: f64 = (0..classes).map(|t| confusion[t * classes + c]).sum::<usize>() as f64;
        let true_c: f64 = (0..classes).map(|p| confusion[c * classes + p]).sum::<usize>() as f64;
        let precision = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        let recall = if true_c > 0.0 { tp / true_c } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
    }

    let per_cluster = cluster_total
        .iter()
        .zip(&cluster_correct)
        .map(|(&t, &c)| (t, if t > 0 { c as f64 / t as f64 } else { 0.0 }))
        .collect();
    let head_accuracy = if head.0 > 0 {
        head.1 as f64 / head.0 as f64
    } else {
        0.0
    };
    let tail_accuracy = if tail.0 > 0 {
        tail.1 as f64 / tail.0 as f64
    } else {
        0.0
    };

    Ok(EvalMetrics {
        accuracy: correct as f64 / indices.len() as f64,
        macro_f1: f1_sum / classes as f64,
        per_cluster,
        head_accuracy,
        tail_accuracy,
        tail_head_gap: head_accuracy - tail_accuracy,
    })
}
