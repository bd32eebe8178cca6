//! Forward+backward wall-clock scaling over batch size.

use crate::error::{HopeError, Result};
use crate::head::{ExecMode, HopeConfig, ViewBatch};
use crate::train::model::{HeadKind, Model, Variant};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

fn default_batch_sizes() -> Vec<usize> {
    vec![256, 512, 1024, 2048]
}
fn default_reps() -> usize {
    20
}
fn default_warmup() -> usize {
    3
}
fn default_meta_paths() -> usize {
    4
}
fn default_dim() -> usize {
    64
}
fn default_out_dim() -> usize {
    8
}
fn default_layers() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_meta_paths")]
    pub meta_paths: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_out_dim")]
    pub out_dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_sizes: default_batch_sizes(),
            reps: default_reps(),
            warmup: default_warmup(),
            meta_paths: default_meta_paths(),
            dim: default_dim(),
            out_dim: default_out_dim(),
            layers: default_layers(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch: usize,
    pub median_s: f64,
}

/// Median forward+backward time per batch size. Single-threaded, warmed up,
/// >= `reps` timed repetitions per size.
pub fn bench_scaling(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.batch_sizes.is_empty() || cfg.batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HopeError::Config(
            "batch_sizes must be non-empty and strictly ascending".into(),
        ));
    }
    if cfg.reps < 1 {
        return Err(HopeError::Config("reps must be >= 1".into()));
    }
    let mut head_cfg = HopeConfig::with_dims(cfg.meta_paths, cfg.dim, cfg.out_dim);
    head_cfg.layers = cfg.layers;
    head_cfg.seed = cfg.seed;
    let model: Model<f32> = Model::init(HeadKind::Hope, Variant::Full, &head_cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut rows = Vec::with_capacity(cfg.batch_sizes.len());
    for &b in &cfg.batch_sizes {
        let views: Vec<Vec<f32>> = (0..cfg.meta_paths)
            .map(|_| (0..b * cfg.dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let batch = ViewBatch::new(views, b, cfg.dim)?;
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..cfg.out_dim)).collect();

        let one_step = || -> Result<f64> {
            let start = Instant::now();
            let mut pass = model.forward_pass(&batch, ExecMode::Sparse, true)?;
            let losses = model.attach_loss(&mut pass, &labels)?;
            pass.tape.backward(losses.total_id)?;
            Ok(start.elapsed().as_secs_f64())
        };

        for _ in 0..cfg.warmup {
            one_step()?;
        }
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            times.push(one_step()?);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
        };
        rows.push(BenchRow { batch: b, median_s: median });
    }
    Ok(rows)
}

/// Consecutive-size time ratios, one per adjacent pair.
pub fn scaling_ratios(rows: &[BenchRow]) -> Vec<f64> {
    rows.windows(2).map(|w| w[1].median_s / w[0].median_s).collect()
}
