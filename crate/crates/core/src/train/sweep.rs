//! Hyperparameter grid sweeps over the routing and loss knobs.

use crate::error::{HopeError, Result};
use crate::head::HopeConfig;
use crate::real::Real;
use crate::synth::SyntheticDataset;
use crate::train::model::{HeadKind, Variant};
use crate::train::report::TrainReport;
use crate::train::run::{train, TrainSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Delta,
    KFrac,
    CFrac,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Delta => "delta",
            SweepParam::KFrac => "k_frac",
            SweepParam::CFrac => "c_frac",
        }
    }

    pub fn apply(&self, cfg: &mut HopeConfig, value: f64) {
        match self {
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::Delta => cfg.delta = value,
            SweepParam::KFrac => cfg.k_frac = value,
            SweepParam::CFrac => cfg.c_frac = value,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    pub per_seed_val_acc: Vec<f64>,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
}

pub struct SweepOutcome {
    pub entries: Vec<SweepEntry>,
    /// reports[value_index][seed_index]
    pub reports: Vec<Vec<TrainReport>>,
}

/// One full training run per (value, seed), all on the same dataset and
/// split; entries are collated per value.
pub fn sweep<T: Real>(
    param: SweepParam,
    values: &[f64],
    ds: &SyntheticDataset<T>,
    base_cfg: &HopeConfig,
    settings: &TrainSettings,
    seeds: &[u64],
) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(HopeError::Config("sweep values must be nonempty".into()));
    }
    if seeds.is_empty() {
        return Err(HopeError::Config("sweep needs at least one seed".into()));
    }
    let mut entries = Vec::with_capacity(values.len());
    let mut reports = Vec::with_capacity(values.len());
    for &value in values {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut value_reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base_cfg.clone();
            param.apply(&mut cfg, value);
            cfg.seed = seed;
            let outcome = train(HeadKind::Hope, Variant::Full, ds, &cfg, settings)?;
            per_seed.push(outcome.report.summary.final_val.accuracy);
            value_reports.push(outcome.report);
        }
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let var = if per_seed.len() > 1 {
            per_seed.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        entries.push(SweepEntry {
            value,
            per_seed_val_acc: per_seed,
            mean_val_acc: mean,
            std_val_acc: var.sqrt(),
        });
        reports.push(value_reports);
    }
    Ok(SweepOutcome { entries, reports })
}
