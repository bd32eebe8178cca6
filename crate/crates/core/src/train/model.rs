//! Trainable model wrappers: the head under each ablation variant, the
//! learned-router baseline, and the plain linear head it all competes with.

use crate::diff::{Tape, TensorId};
use crate::error::{HopeError, Result};
use crate::head::{
    dynamic_forward, fuse, insert_batch, mlp_apply, shared_forward, total_loss, BoundLinear,
    BoundMlp, ExecMode, ForwardOpts, HopeConfig, HopeHead, Linear, Mlp, RoutingState,
    SelectionMode, ViewBatch,
};
use crate::real::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

/// Ablation variants. Exactly one is active per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoSharedPathway,
    NoPrototypeExperts,
    NoElasticCapacity,
    NoOrthoLoss,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoSharedPathway,
        Variant::NoPrototypeExperts,
        Variant::NoElasticCapacity,
        Variant::NoOrthoLoss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSharedPathway => "no_shared_pathway",
            Variant::NoPrototypeExperts => "no_prototype_experts",
            Variant::NoElasticCapacity => "no_elastic_capacity",
            Variant::NoOrthoLoss => "no_ortho_loss",
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::NoSharedPathway => 1,
            Variant::NoPrototypeExperts => 2,
            Variant::NoElasticCapacity => 3,
            Variant::NoOrthoLoss => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| HopeError::Format(format!("unknown variant tag {tag}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Hope,
    Linear,
}

/// Weight of the load-balancing auxiliary loss in the learned-router
/// baseline.
pub const AUX_LOSS_WEIGHT: f64 = 0.5;
/// Experts activated per node by the learned-router baseline.
pub const ROUTER_TOP_K: usize = 2;

/// The single global linear projection the head replaces.
#[derive(Debug, Clone)]
pub struct LinearBaselineHead<T> {
    pub linear: Linear<T>,
}

impl<T: Real> LinearBaselineHead<T> {
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LinearBaselineHead {
            linear: Linear::init(in_dim, out_dim, &mut rng),
        }
    }
}

/// A head plus its variant-specific extras.
#[derive(Debug, Clone)]
pub struct HopeModel<T> {
    pub head: HopeHead<T>,
    pub variant: Variant,
    /// Present only for the learned-router baseline.
    pub router: Option<Mlp<T>>,
}

impl<T: Real> HopeModel<T> {
    pub fn init(cfg: &HopeConfig, variant: Variant) -> Result<Self> {
        let head = match variant {
            Variant::NoSharedPathway => HopeHead::init_variant(cfg, true, false)?,
            Variant::NoPrototypeExperts => HopeHead::init_variant(cfg, false, true)?,
            _ => HopeHead::init(cfg)?,
        };
        let router = (variant == Variant::NoPrototypeExperts).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x524F5554));
            Mlp {
                layers: vec![
                    Linear::init(cfg.meta_paths * cfg.dim, cfg.dim, &mut rng),
                    Linear::init(cfg.dim, cfg.meta_paths, &mut rng),
                ],
            }
        });
        Ok(HopeModel {
            head,
            variant,
            router,
        })
    }

    fn selection_override(&self) -> Option<SelectionMode> {
        match self.variant {
            Variant::NoElasticCapacity => Some(SelectionMode::ThresholdOnly {
                delta: self.head.cfg.delta,
            }),
            _ => None,
        }
    }

    fn effective_lambda(&self) -> f64 {
        match self.variant {
            Variant::NoOrthoLoss => 0.0,
            _ => self.head.cfg.lambda,
        }
    }
}

/// One model forward on its own tape, parameters bound in canonical order.
pub struct ModelPass<T> {
    pub tape: Tape<T>,
    pub param_ids: Vec<TensorId>,
    pub logits: TensorId,
    pub routing: Option<RoutingState>,
    pub aux: Option<TensorId>,
    bound: Option<crate::head::BoundHead>,
}

/// Loss values for one step; `total` stays on the tape for backward.
#[derive(Debug, Clone)]
pub struct LossValues {
    pub total_id: TensorId,
    pub total: f64,
    pub task: f64,
    pub ortho: f64,
    pub aux: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Model<T> {
    Hope(HopeModel<T>),
    Linear(LinearBaselineHead<T>),
}

impl<T: Real> Model<T> {
    pub fn init(kind: HeadKind, variant: Variant, cfg: &HopeConfig) -> Result<Self> {
        match kind {
            HeadKind::Hope => Ok(Model::Hope(HopeModel::init(cfg, variant)?)),
            HeadKind::Linear => Ok(Model::Linear(LinearBaselineHead::init(
                cfg.meta_paths * cfg.dim,
                cfg.out_dim,
                cfg.seed,
            ))),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Model::Hope(_) => HeadKind::Hope,
            Model::Linear(_) => HeadKind::Linear,
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            Model::Hope(m) => m.variant,
            Model::Linear(_) => Variant::Full,
        }
    }

    pub fn params(&self) -> Vec<(String, Vec<usize>, &Vec<T>)> {
        match self {
            Model::Hope(m) => {
                let mut out = m.head.params();
                if let Some(router) = &m.router {
                    for (i, layer) in router.layers.iter().enumerate() {
                        out.push((format!("router.w{i}"), vec![layer.in_dim, layer.out_dim], &layer.w));
                        out.push((format!("router.b{i}"), vec![layer.out_dim], &layer.b));
                    }
                }
                out
            }
            Model::Linear(l) => vec![
                (
                    "linear.w".into(),
                    vec![l.linear.in_dim, l.linear.out_dim],
                    &l.linear.w,
                ),
                ("linear.b".into(), vec![l.linear.out_dim], &l.linear.b),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, Vec<usize>, &mut Vec<T>)> {
        match self {
            Model::Hope(m) => {
                let mut out = m.head.params_mut();
                if let Some(router) = &mut m.router {
                    for (i, layer) in router.layers.iter_mut().enumerate() {
                        let shape_w = vec![layer.in_dim, layer.out_dim];
                        let shape_b = vec![layer.out_dim];
                        out.push((format!("router.w{i}"), shape_w, &mut layer.w));
                        out.push((format!("router.b{i}"), shape_b, &mut layer.b));
                    }
                }
                out
            }
            Model::Linear(l) => {
                let shape_w = vec![l.linear.in_dim, l.linear.out_dim];
                let shape_b = vec![l.linear.out_dim];
                vec![
                    ("linear.w".into(), shape_w, &mut l.linear.w),
                    ("linear.b".into(), shape_b, &mut l.linear.b),
                ]
            }
        }
    }

    pub fn set_param(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        for (n, shape, slot) in self.params_mut() {
            if n == name {
                let expect: usize = shape.iter().product();
                if data.len() != expect {
                    return Err(HopeError::ShapeMismatch {
                        op: "set_param",
                        lhs: shape,
                        rhs: vec![data.len()],
                    });
                }
                *slot = data;
                return Ok(());
            }
        }
        Err(HopeError::Format(format!("unknown parameter {name}")))
    }

    /// Largest |cos| between distinct prototypes, when the model has them.
    pub fn max_offdiag_cos(&self) -> Option<f64> {
        let Model::Hope(m) = self else { return None };
        let protos = m.head.prototypes.as_ref()?;
        let mut worst = 0.0f64;
        for i in 0..protos.len() {
            for j in (i + 1)..protos.len() {
                let dot: f64 = protos[i]
                    .iter()
                    .zip(&protos[j])
                    .map(|(a, b)| a.to_f64() * b.to_f64())
                    .sum();
                let ni: f64 = protos[i].iter().map(|x| x.to_f64().powi(2)).sum::<f64>().sqrt();
                let nj: f64 = protos[j].iter().map(|x| x.to_f64().powi(2)).sum::<f64>().sqrt();
                if ni > 0.0 && nj > 0.0 {
                    worst = worst.max((dot / (ni * nj)).abs());
                }
            }
        }
        Some(worst)
    }

    /// Forward with parameters bound for training.
    pub fn forward_pass(&self, batch: &ViewBatch<T>, exec: ExecMode, trainable: bool) -> Result<ModelPass<T>> {
        match self {
            Model::Hope(m) => match m.variant {
                Variant::NoPrototypeExperts => vanilla_forward(m, batch, exec, trainable),
                _ => {
                    let opts = ForwardOpts {
                        trainable,
                        track_input_grads: false,
                        exec,
                        selection: m.selection_override(),
                        fixed_mask: None,
                    };
                    let pass = m.head.forward(batch, &opts)?;
                    Ok(ModelPass {
                        param_ids: pass.bound.ordered.clone(),
                        tape: pass.tape,
                        logits: pass.logits,
                        routing: Some(pass.routing),
                        aux: None,
                        bound: Some(pass.bound),
                    })
                }
            },
            Model::Linear(l) => {
                let mut tape = Tape::new();
                let w = tape.leaf(
                    l.linear.w.clone(),
                    vec![l.linear.in_dim, l.linear.out_dim],
                    trainable,
                );
                let b = tape.leaf(l.linear.b.clone(), vec![l.linear.out_dim], trainable);
                let ids = insert_batch(&mut tape, batch, false)?;
                let proj = tape.matmul(ids.all, w)?;
                let logits = tape.add_bias(proj, b)?;
                Ok(ModelPass {
                    tape,
                    param_ids: vec![w, b],
                    logits,
                    routing: None,
                    aux: None,
                    bound: None,
                })
            }
        }
    }

    /// Append the objective to a pass's tape: cross-entropy task loss, plus
    /// the orthogonality penalty for prototype heads or the load-balancing
    /// auxiliary loss for the learned-router baseline.
    pub fn attach_loss(&self, pass: &mut ModelPass<T>, labels: &[usize]) -> Result<LossValues> {
        match self {
            Model::Hope(m) => {
                let bound = pass.bound.as_ref().expect("hope pass carries bound head");
                let lambda = m.effective_lambda();
                let terms = total_loss(
                    &mut pass.tape,
                    bound,
                    pass.logits,
                    labels,
                    lambda,
                    m.head.cfg.cos_eps,
                )?;
                let mut total_id = terms.total;
                let mut aux_value = None;
                if let Some(aux) = pass.aux {
                    let weighted = pass.tape.scale_const(aux, T::from_f64(AUX_LOSS_WEIGHT));
                    total_id = pass.tape.add(total_id, weighted)?;
                    aux_value = Some(pass.tape.scalar_value(aux).to_f64());
                }
                Ok(LossValues {
                    total_id,
                    total: pass.tape.scalar_value(total_id).to_f64(),
                    task: pass.tape.scalar_value(terms.task).to_f64(),
                    ortho: pass.tape.scalar_value(terms.ortho).to_f64(),
                    aux: aux_value,
                })
            }
            Model::Linear(_) => {
                let task = pass.tape.cross_entropy(pass.logits, labels)?;
                Ok(LossValues {
                    total_id: task,
                    total: pass.tape.scalar_value(task).to_f64(),
                    task: pass.tape.scalar_value(task).to_f64(),
                    ortho: 0.0,
                    aux: None,
                })
            }
        }
    }
}

/// Shared pathway plus learned-router dynamic pathway: softmax router probs,
/// top-k mask, probability-weighted expert outputs, and the switch-style
/// load-balancing term M * sum_m f_m * P_m left on the tape.
fn vanilla_forward<T: Real>(
    model: &HopeModel<T>,
    batch: &ViewBatch<T>,
    exec: ExecMode,
    trainable: bool,
) -> Result<ModelPass<T>> {
    let router = model.router.as_ref().expect("vanilla variant carries a router");
    let cfg = &model.head.cfg;
    let (b, m_count) = (batch.batch, cfg.meta_paths);

    let mut tape = Tape::new();
    let bound = model.head.bind(&mut tape, trainable);
    let mut param_ids = bound.ordered.clone();
    let bound_router = BoundMlp {
        layers: router
            .layers
            .iter()
            .map(|layer| {
                let w = tape.leaf(layer.w.clone(), vec![layer.in_dim, layer.out_dim], trainable);
                let bias = tape.leaf(layer.b.clone(), vec![layer.out_dim], trainable);
                param_ids.push(w);
                param_ids.push(bias);
                BoundLinear { w, b: bias }
            })
            .collect(),
    };
    let batch_ids = insert_batch(&mut tape, batch, false)?;

    let z_s = shared_forward(&mut tape, &bound, &batch_ids)?;
    let router_logits = mlp_apply(&mut tape, &bound_router, batch_ids.all)?;
    let probs = tape.softmax_rows(router_logits)?;

    // top-k per row by probability, ties to the lower expert index
    let k = ROUTER_TOP_K.min(m_count);
    let pvals: Vec<f64> = tape.value(probs).iter().map(|p| p.to_f64()).collect();
    let mut mask = vec![false; b * m_count];
    for v in 0..b {
        let mut order: Vec<usize> = (0..m_count).collect();
        order.sort_by(|&x, &y| {
            pvals[v * m_count + y]
                .partial_cmp(&pvals[v * m_count + x])
                .unwrap_or(Ordering::Equal)
                .then(x.cmp(&y))
        });
        for &m in order.iter().take(k) {
            mask[v * m_count + m] = true;
        }
    }
    let mut routing = RoutingState {
        batch: b,
        experts: m_count,
        scores: pvals,
        mask,
        gates: vec![0.0; b * m_count],
        qual: vec![Vec::new(); m_count],
        stab: vec![Vec::new(); m_count],
        omega: vec![Vec::new(); m_count],
        k_count: k,
        c_count: b,
    };

    let mut gate_cols = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let col = tape.select_col(probs, m)?;
        let gated = tape.mul_const(col, routing.mask_column::<T>(m))?;
        let vals = tape.value(gated);
        for v in 0..b {
            routing.gates[v * m_count + m] = vals[v].to_f64();
        }
        gate_cols.push(gated);
    }

    let z_d = dynamic_forward(&mut tape, &bound, &batch_ids, &gate_cols, &routing, cfg.ln_eps, exec)?;
    let logits = fuse(&mut tape, &bound, z_s, z_d)?;

    // load-balancing loss: dispatch fractions are constants, mean router
    // probabilities stay differentiable
    let mut aux = tape.zeros(vec![1]);
    for m in 0..m_count {
        let dispatched = routing.column_popcount(m) as f64 / b as f64;
        let col = tape.select_col(probs, m)?;
        let mean_prob = tape.mean(col);
        let term = tape.scale_const(mean_prob, T::from_f64(m_count as f64 * dispatched));
        aux = tape.add(aux, term)?;
    }

    Ok(ModelPass {
        tape,
        param_ids,
        logits,
        routing: Some(routing),
        aux: Some(aux),
        bound: Some(bound),
    })
}

/// Anything that maps a batch of views to logits without mutating itself.
pub trait Predictor<T: Real> {
    fn predict(&self, batch: &ViewBatch<T>) -> Result<Vec<T>>;
}

impl<T: Real> Predictor<T> for Model<T> {
    fn predict(&self, batch: &ViewBatch<T>) -> Result<Vec<T>> {
        let pass = self.forward_pass(batch, ExecMode::Sparse, false)?;
        Ok(pass.tape.value(pass.logits).to_vec())
    }
}

pub fn argmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
