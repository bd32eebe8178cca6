//! Full-batch training loop with per-epoch routing diagnostics.

use crate::error::{HopeError, Result};
use crate::head::{ExecMode, HopeConfig, RoutingState};
use crate::real::Real;
use crate::synth::{gather_labels, make_view_batch, split, SyntheticDataset};
use crate::train::adam::{AdamConfig, OptimState};
use crate::train::metrics::evaluate;
use crate::train::model::{argmax_rows, HeadKind, Model, Variant};
use crate::train::report::{EpochRecord, SummaryRecord, TrainReport};
use serde::{Deserialize, Serialize};
use std::time::Instant;

fn default_train_frac() -> f64 {
    0.6
}
fn default_val_frac() -> f64 {
    0.2
}
fn default_epochs() -> usize {
    300
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optim: AdamConfig,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: default_epochs(),
            optim: AdamConfig::default(),
            train_frac: default_train_frac(),
            val_frac: default_val_frac(),
        }
    }
}

/// Per-expert load statistics derived from one routing state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoutingDiagnostics {
    pub counts: Vec<usize>,
    pub loads: Vec<f64>,
    /// Mean active experts per node / expert count.
    pub sparsity: f64,
    pub dead_nodes: Vec<usize>,
    pub dead_node_rate: f64,
}

pub fn routing_diagnostics(routing: &RoutingState) -> RoutingDiagnostics {
    let counts: Vec<usize> = (0..routing.experts).map(|m| routing.column_popcount(m)).collect();
    let loads: Vec<f64> = counts.iter().map(|&c| c as f64 / routing.batch as f64).collect();
    let total: usize = counts.iter().sum();
    let dead_nodes = routing.dead_nodes();
    RoutingDiagnostics {
        sparsity: total as f64 / (routing.batch * routing.experts) as f64,
        dead_node_rate: dead_nodes.len() as f64 / routing.batch as f64,
        counts,
        loads,
        dead_nodes,
    }
}

pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub report: TrainReport,
}

/// Train one model on the dataset's stratified train split and record the
/// full per-epoch trace. Deterministic given (dataset, cfg, settings): the
/// split seed is the dataset seed, the init seed is `cfg.seed`.
pub fn train<T: Real>(
    kind: HeadKind,
    variant: Variant,
    ds: &SyntheticDataset<T>,
    cfg: &HopeConfig,
    settings: &TrainSettings,
) -> Result<TrainOutcome<T>> {
    if cfg.meta_paths != ds.spec.views || cfg.dim != ds.spec.dim || cfg.out_dim != ds.spec.num_classes
    {
        return Err(HopeError::Config(format!(
            "head dims ({}, {}, {}) do not match dataset ({}, {}, {})",
            cfg.meta_paths, cfg.dim, cfg.out_dim, ds.spec.views, ds.spec.dim, ds.spec.num_classes
        )));
    }
    let run_start = Instant::now();
    let splits = split(ds, settings.train_frac, settings.val_frac, ds.spec.seed)?;
    let train_batch = make_view_batch(ds, &splits.train)?;
    let train_labels = gather_labels(ds, &splits.train);

    let mut model = Model::init(kind, variant, cfg)?;
    let lens: Vec<usize> = model.params().iter().map(|(_, _, d)| d.len()).collect();
    let mut optim = OptimState::new(settings.optim.clone(), &lens);

    let enforce_bounds = matches!(kind, HeadKind::Hope)
        && !matches!(variant, Variant::NoPrototypeExperts | Variant::NoElasticCapacity);

    let mut epochs_out = Vec::with_capacity(settings.epochs);
    for epoch in 1..=settings.epochs {
        let t0 = Instant::now();
        let mut pass = model.forward_pass(&train_batch, ExecMode::Sparse, true)?;
        let losses = model.attach_loss(&mut pass, &train_labels)?;
        if !losses.total.is_finite() {
            return Err(HopeError::Diverged {
                epoch,
                loss: losses.total,
            });
        }
        if enforce_bounds {
            let routing = pass.routing.as_ref().expect("hope pass has routing");
            for m in 0..routing.experts {
                let pop = routing.column_popcount(m);
                if pop < routing.k_count || pop > routing.c_count {
                    return Err(HopeError::Contract(format!(
                        "epoch {epoch}: expert {m} popcount {pop} outside [{}, {}]",
                        routing.k_count, routing.c_count
                    )));
                }
            }
        }

        let train_acc = {
            let preds = argmax_rows(pass.tape.value(pass.logits), cfg.out_dim);
            let hits = preds.iter().zip(&train_labels).filter(|(p, l)| p == l).count();
            hits as f64 / train_labels.len() as f64
        };
        let diag = pass.routing.as_ref().map(routing_diagnostics);

        pass.tape.backward(losses.total_id)?;
        let grads: Vec<Vec<T>> = pass
            .param_ids
            .iter()
            .map(|&id| pass.tape.grad(id).expect("trainable leaf").to_vec())
            .collect();
        {
            let mut params = model.params_mut();
            let mut slots: Vec<&mut Vec<T>> = params.iter_mut().map(|(_, _, d)| &mut **d).collect();
            optim.step(&mut slots, &grads)?;
        }

        let val_acc = evaluate(&model, ds, &splits.val)?.accuracy;
        epochs_out.push(EpochRecord {
            epoch,
            total_loss: losses.total,
            task_loss: losses.task,
            ortho_loss: losses.ortho,
            aux_loss: losses.aux,
            train_acc,
            val_acc,
            expert_load: diag.as_ref().map(|d| d.loads.clone()).unwrap_or_default(),
            sparsity: diag.as_ref().map(|d| d.sparsity).unwrap_or(0.0),
            dead_node_rate: diag.as_ref().map(|d| d.dead_node_rate).unwrap_or(0.0),
            max_offdiag_cos: model.max_offdiag_cos(),
            wall_clock_s: t0.elapsed().as_secs_f64(),
        });
    }

    let final_val = evaluate(&model, ds, &splits.val)?;
    let final_test = evaluate(&model, ds, &splits.test)?;
    let summary = SummaryRecord {
        seed: cfg.seed,
        head_kind: kind,
        variant,
        lambda: match (kind, variant) {
            (HeadKind::Hope, Variant::NoOrthoLoss) => 0.0,
            (HeadKind::Hope, _) => cfg.lambda,
            (HeadKind::Linear, _) => 0.0,
        },
        epochs: settings.epochs,
        final_val,
        final_test,
        max_offdiag_cos: model.max_offdiag_cos(),
        wall_clock_total_s: run_start.elapsed().as_secs_f64(),
    };

    Ok(TrainOutcome {
        model,
        report: TrainReport {
            epochs: epochs_out,
            summary,
        },
    })
}
