//! Elastic capacity selection.
//!
//! Selection is detached from the tape: the mask is a constant as far as
//! gradients are concerned, and gradients reach the router only through the
//! sigmoid gates on selected entries.

use crate::real::Real;
use std::cmp::Ordering;

/// How the per-expert mask is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    /// Quality threshold, stability floor, capacity ceiling.
    Elastic {
        delta: f64,
        k_frac: f64,
        c_frac: f64,
    },
    /// Quality threshold only; no floor, no ceiling. Ablation baseline.
    ThresholdOnly { delta: f64 },
}

/// Selection mask plus the intermediate candidate sets, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct RoutingState {
    pub batch: usize,
    pub experts: usize,
    /// batch x experts, row-major.
    pub scores: Vec<f64>,
    /// batch x experts, row-major; true = selected.
    pub mask: Vec<bool>,
    /// batch x experts, row-major; zero wherever mask is false. Filled in by
    /// the gate computation.
    pub gates: Vec<f64>,
    /// Per expert: nodes passing the quality threshold.
    pub qual: Vec<Vec<usize>>,
    /// Per expert: the mandatory top-K nodes.
    pub stab: Vec<Vec<usize>>,
    /// Per expert: the candidate pool (union of the two).
    pub omega: Vec<Vec<usize>>,
    pub k_count: usize,
    pub c_count: usize,
}

impl RoutingState {
    pub fn score(&self, v: usize, m: usize) -> f64 {
        self.scores[v * self.experts + m]
    }

    pub fn selected(&self, v: usize, m: usize) -> bool {
        self.mask[v * self.experts + m]
    }

    /// Row indices selected for expert m, ascending.
    pub fn rows_for_expert(&self, m: usize) -> Vec<usize> {
        (0..self.batch).filter(|&v| self.selected(v, m)).collect()
    }

    pub fn column_popcount(&self, m: usize) -> usize {
        (0..self.batch).filter(|&v| self.selected(v, m)).count()
    }

    /// Mask column as multiplicative constants for the gate product.
    pub fn mask_column<T: Real>(&self, m: usize) -> Vec<T> {
        (0..self.batch)
            .map(|v| if self.selected(v, m) { T::one() } else { T::zero() })
            .collect()
    }

    /// Nodes selected by no expert.
    pub fn dead_nodes(&self) -> Vec<usize> {
        (0..self.batch)
            .filter(|&v| (0..self.experts).all(|m| !self.selected(v, m)))
            .collect()
    }
}

/// Integer selection bounds for a batch: the stability floor is at least 1
/// and never exceeds the batch; the capacity ceiling is at least the floor.
pub fn derived_counts(batch: usize, experts: usize, k_frac: f64, c_frac: f64) -> (usize, usize) {
    let avg = batch as f64 / experts as f64;
    let k = ((k_frac * avg).round() as usize).max(1).min(batch);
    let c = ((c_frac * avg).round() as usize).max(k);
    (k, c)
}

/// Order candidate rows by score descending, then node index ascending.
fn rank_by_score(rows: &mut [usize], col: &[f64]) {
    rows.sort_by(|&a, &b| {
        col[b]
            .partial_cmp(&col[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
}

/// Apply the three selection criteria independently per expert column.
///
/// Scores are a batch x experts row-major matrix. Returns the mask with
/// gates zeroed; the caller fills gates after computing them on the tape.
pub fn elastic_select<T: Real>(
    scores: &[T],
    batch: usize,
    experts: usize,
    mode: &SelectionMode,
) -> RoutingState {
    assert_eq!(scores.len(), batch * experts);
    let scores_f64: Vec<f64> = scores.iter().map(|s| s.to_f64()).collect();

    let mut state = RoutingState {
        batch,
        experts,
        scores: scores_f64,
        mask: vec![false; batch * experts],
        gates: vec![0.0; batch * experts],
        qual: vec![Vec::new(); experts],
        stab: vec![Vec::new(); experts],
        omega: vec![Vec::new(); experts],
        k_count: 0,
        c_count: 0,
    };

    match *mode {
        SelectionMode::ThresholdOnly { delta } => {
            state.c_count = batch;
            for m in 0..experts {
                for v in 0..batch {
                    if state.score(v, m) > delta {
                        state.mask[v * experts + m] = true;
                        state.qual[m].push(v);
                    }
                }
                state.omega[m] = state.qual[m].clone();
            }
        }
        SelectionMode::Elastic {
            delta,
            k_frac,
            c_frac,
        } => {
            let (k_count, c_count) = derived_counts(batch, experts, k_frac, c_frac);
            state.k_count = k_count;
            state.c_count = c_count;
            for m in 0..experts {
                let col: Vec<f64> = (0..batch).map(|v| state.score(v, m)).collect();

                let qual: Vec<usize> = (0..batch).filter(|&v| col[v] > delta).collect();

                let mut ranked: Vec<usize> = (0..batch).collect();
                rank_by_score(&mut ranked, &col);
                let mut stab = ranked[..k_count].to_vec();
                stab.sort_unstable();

                let mut omega = qual.clone();
                for &v in &stab {
                    if !omega.contains(&v) {
                        omega.push(v);
                    }
                }
                omega.sort_unstable();

                let mut chosen = omega.clone();
                rank_by_score(&mut chosen, &col);
                chosen.truncate(c_count);
                for &v in &chosen {
                    state.mask[v * experts + m] = true;
                }

                state.qual[m] = qual;
                state.stab[m] = stab;
                state.omega[m] = omega;
            }
        }
    }
    state
}
