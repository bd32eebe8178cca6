//! Training reports: one JSON line per epoch, one summary line at the end.

use crate::error::{HopeError, Result};
use crate::train::metrics::EvalMetrics;
use crate::train::model::{HeadKind, Variant};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub task_loss: f64,
    pub ortho_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Per-expert selected fraction of the batch; sums to the mean number of
    /// active experts per node.
    pub expert_load: Vec<f64>,
    /// Mean active experts per node divided by the expert count.
    pub sparsity: f64,
    /// Fraction of batch rows selected by no expert.
    pub dead_node_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_offdiag_cos: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub seed: u64,
    pub head_kind: HeadKind,
    pub variant: Variant,
    pub lambda: f64,
    pub epochs: usize,
    pub final_val: EvalMetrics,
    pub final_test: EvalMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_offdiag_cos: Option<f64>,
    pub wall_clock_total_s: f64,
}

/// One line of a JSONL report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Epoch(EpochRecord),
    Summary(SummaryRecord),
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub summary: SummaryRecord,
}

impl TrainReport {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, &ReportLine::Epoch(e.clone()))
                .map_err(|e| HopeError::Format(e.to_string()))?;
            writeln!(w)?;
        }
        serde_json::to_writer(&mut w, &ReportLine::Summary(self.summary.clone()))
            .map_err(|e| HopeError::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut epochs = Vec::new();
        let mut summary = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine =
                serde_json::from_str(&line).map_err(|e| HopeError::Format(e.to_string()))?;
            match parsed {
                ReportLine::Epoch(e) => epochs.push(e),
                ReportLine::Summary(s) => summary = Some(s),
            }
        }
        Ok(TrainReport {
            epochs,
            summary: summary.ok_or_else(|| HopeError::Format("report has no summary line".into()))?,
        })
    }

    /// The report as JSON values with wall-clock fields removed; two runs of
    /// the same config must agree on this exactly.
    pub fn numeric_fingerprint(&self) -> Vec<serde_json::Value> {
        let mut out = Vec::new();
        for e in &self.epochs {
            let mut v = serde_json::to_value(ReportLine::Epoch(e.clone())).expect("serializable");
            v.as_object_mut().unwrap().remove("wall_clock_s");
            out.push(v);
        }
        let mut v = serde_json::to_value(ReportLine::Summary(self.summary.clone())).expect("serializable");
        v.as_object_mut().unwrap().remove("wall_clock_total_s");
        out.push(v);
        out
    }
}
