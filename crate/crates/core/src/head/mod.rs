//! The projection head: shared pathway over the concatenated views, prototype
//! routing with elastic capacity selection, sparsely gated per-view experts,
//! and the fused output with its two-term loss.

mod forward;
mod routing;

pub use forward::{
    alignment_scores, dynamic_forward, fuse, gate_weights, grad_check_composite, insert_batch,
    ortho_loss, score_matrix, shared_forward, total_loss, BoundBatch, ExecMode, ForwardOpts,
    ForwardPass, LossTerms,
};
pub use routing::{elastic_select, derived_counts, RoutingState, SelectionMode};

use crate::diff::{Tape, TensorId};
use crate::error::{HopeError, Result};
use crate::real::Real;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn default_ln_eps() -> f64 {
    1e-5
}
fn default_cos_eps() -> f64 {
    1e-12
}

/// Architecture and routing hyperparameters.
///
/// `k_frac` and `c_frac` are multipliers of the average per-expert load B/M;
/// the integer counts derived from them are computed per batch (see
/// [`derived_counts`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopeConfig {
    /// Number of meta-path views, M.
    pub meta_paths: usize,
    /// Embedding width per view, d.
    pub dim: usize,
    /// Fusion output width (class count for classification).
    pub out_dim: usize,
    /// Layers per expert MLP, L.
    pub layers: usize,
    /// Quality threshold for the routing score.
    pub delta: f64,
    /// Stability floor as a fraction of average load.
    pub k_frac: f64,
    /// Capacity ceiling as a fraction of average load.
    pub c_frac: f64,
    /// Orthogonality penalty weight.
    pub lambda: f64,
    /// Initial gate temperature; the trained parameter is its log.
    pub tau_init: f64,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
    #[serde(default = "default_cos_eps")]
    pub cos_eps: f64,
    pub seed: u64,
}

impl HopeConfig {
    /// Paper-default routing settings for the given architecture sizes.
    pub fn with_dims(meta_paths: usize, dim: usize, out_dim: usize) -> Self {
        HopeConfig {
            meta_paths,
            dim,
            out_dim,
            layers: 2,
            delta: 0.5,
            k_frac: 0.5,
            c_frac: 3.0,
            lambda: 0.5,
            tau_init: 1.0,
            ln_eps: default_ln_eps(),
            cos_eps: default_cos_eps(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.meta_paths < 1 || self.dim < 1 || self.layers < 1 || self.out_dim < 1 {
            return Err(HopeError::Config(format!(
                "meta_paths, dim, layers, out_dim must all be >= 1 (got {}, {}, {}, {})",
                self.meta_paths, self.dim, self.layers, self.out_dim
            )));
        }
        if !(self.k_frac > 0.0 && self.c_frac >= self.k_frac) {
            return Err(HopeError::Config(format!(
                "need c_frac >= k_frac > 0 (got k_frac={}, c_frac={})",
                self.k_frac, self.c_frac
            )));
        }
        if !(self.delta > -1.0 && self.delta < 1.0) {
            return Err(HopeError::Config(format!(
                "delta must lie in (-1, 1), got {}",
                self.delta
            )));
        }
        if self.lambda < 0.0 {
            return Err(HopeError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau_init > 0.0) {
            return Err(HopeError::Config(format!(
                "tau_init must be > 0, got {}",
                self.tau_init
            )));
        }
        if !(self.ln_eps > 0.0 && self.cos_eps > 0.0) {
            return Err(HopeError::Config("eps values must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-node, per-view embeddings plus their column concatenation.
#[derive(Debug, Clone)]
pub struct ViewBatch<T> {
    /// M blocks, each batch x dim row-major.
    pub views: Vec<Vec<T>>,
    /// batch x (M * dim), blocks in view order.
    pub all: Vec<T>,
    pub batch: usize,
    pub dim: usize,
}

impl<T: Real> ViewBatch<T> {
    pub fn new(views: Vec<Vec<T>>, batch: usize, dim: usize) -> Result<Self> {
        for (m, v) in views.iter().enumerate() {
            if v.len() != batch * dim {
                return Err(HopeError::ShapeMismatch {
                    op: "view_batch",
                    lhs: vec![batch, dim],
                    rhs: vec![m, v.len()],
                });
            }
        }
        let m_count = views.len();
        let mut all = vec![T::zero(); batch * m_count * dim];
        for v in 0..batch {
            for (m, view) in views.iter().enumerate() {
                let dst = v * m_count * dim + m * dim;
                all[dst..dst + dim].copy_from_slice(&view[v * dim..(v + 1) * dim]);
            }
        }
        Ok(ViewBatch {
            views,
            all,
            batch,
            dim,
        })
    }

    pub fn meta_paths(&self) -> usize {
        self.views.len()
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Vec<T>, // in_dim x out_dim, row-major
    pub b: Vec<T>, // out_dim
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Real> Linear<T> {
    pub(crate) fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Linear {
            w,
            b: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Real> Mlp<T> {
    /// `layers` linear maps in_dim -> width -> ... -> width with ReLU between
    /// them and no activation after the last.
    pub(crate) fn init(in_dim: usize, width: usize, layers: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut v = Vec::with_capacity(layers);
        let mut cur = in_dim;
        for _ in 0..layers {
            v.push(Linear::init(cur, width, rng));
            cur = width;
        }
        Mlp { layers: v }
    }
}

#[derive(Debug, Clone)]
pub struct DynamicExpert<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mlp: Mlp<T>,
}

/// All learnable state of the head.
///
/// `prototypes` and `shared` are optional so the ablation harness can drop
/// them structurally; the standard head always has both.
#[derive(Debug, Clone)]
pub struct HopeHead<T> {
    pub cfg: HopeConfig,
    pub prototypes: Option<Vec<Vec<T>>>,
    pub shared: Option<Mlp<T>>,
    pub experts: Vec<DynamicExpert<T>>,
    pub theta_tau: Vec<T>, // single element, tau = exp(theta_tau)
    pub fusion: Linear<T>,
}

/// Structural layout of a head's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadShape {
    pub meta_paths: usize,
    pub dim: usize,
    pub out_dim: usize,
    pub layers: usize,
    pub has_prototypes: bool,
    pub has_shared: bool,
}

impl HeadShape {
    /// Canonical parameter order: prototypes, shared MLP, experts, theta_tau,
    /// fusion. Every consumer of head parameters (optimizer, checkpoint,
    /// gradient checks) relies on this order.
    pub fn schema(&self) -> Vec<(String, Vec<usize>)> {
        let (m, d, l) = (self.meta_paths, self.dim, self.layers);
        let mut out = Vec::new();
        if self.has_prototypes {
            for i in 0..m {
                out.push((format!("prototype.{i}"), vec![d]));
            }
        }
        if self.has_shared {
            let mut cur = m * d;
            for li in 0..l {
                out.push((format!("shared.w{li}"), vec![cur, d]));
                out.push((format!("shared.b{li}"), vec![d]));
                cur = d;
            }
        }
        for i in 0..m {
            out.push((format!("expert{i}.ln.gamma"), vec![d]));
            out.push((format!("expert{i}.ln.beta"), vec![d]));
            let mut cur = d;
            for li in 0..l {
                out.push((format!("expert{i}.w{li}"), vec![cur, d]));
                out.push((format!("expert{i}.b{li}"), vec![d]));
                cur = d;
            }
        }
        out.push(("theta_tau".into(), vec![1]));
        out.push(("fusion.w".into(), vec![2 * d, self.out_dim]));
        out.push(("fusion.b".into(), vec![self.out_dim]));
        out
    }
}

impl<T: Real> HopeHead<T> {
    /// Initialize the full head: fan-in uniform MLP weights, zero biases,
    /// unit-normalized Gaussian prototypes, theta_tau = ln(tau_init).
    pub fn init(cfg: &HopeConfig) -> Result<Self> {
        Self::init_variant(cfg, true, true)
    }

    /// Structural ablations: drop the shared expert and/or the prototype
    /// bank. Used by the training harness, never by the standard model.
    pub fn init_variant(cfg: &HopeConfig, with_prototypes: bool, with_shared: bool) -> Result<Self> {
        cfg.validate()?;
        let (m, d, l) = (cfg.meta_paths, cfg.dim, cfg.layers);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let prototypes = with_prototypes.then(|| {
            (0..m)
                .map(|_| {
                    let raw: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                    raw.iter().map(|&x| T::from_f64(x / norm)).collect()
                })
                .collect::<Vec<Vec<T>>>()
        });

        let shared = with_shared.then(|| Mlp::init(m * d, d, l, &mut rng));

        let experts = (0..m)
            .map(|_| DynamicExpert {
                gamma: vec![T::one(); d],
                beta: vec![T::zero(); d],
                mlp: Mlp::init(d, d, l, &mut rng),
            })
            .collect();

        let fusion = Linear::init(2 * d, cfg.out_dim, &mut rng);

        Ok(HopeHead {
            cfg: cfg.clone(),
            prototypes,
            shared,
            experts,
            theta_tau: vec![T::from_f64(cfg.tau_init.ln())],
            fusion,
        })
    }

    pub fn shape(&self) -> HeadShape {
        HeadShape {
            meta_paths: self.cfg.meta_paths,
            dim: self.cfg.dim,
            out_dim: self.cfg.out_dim,
            layers: self.cfg.layers,
            has_prototypes: self.prototypes.is_some(),
            has_shared: self.shared.is_some(),
        }
    }

    pub fn tau(&self) -> T {
        self.theta_tau[0].exp()
    }

    /// Parameters in canonical schema order.
    pub fn params(&self) -> Vec<(String, Vec<usize>, &Vec<T>)> {
        let schema = self.shape().schema();
        let mut refs: Vec<&Vec<T>> = Vec::with_capacity(schema.len());
        if let Some(ps) = &self.prototypes {
            for p in ps {
                refs.push(p);
            }
        }
        if let Some(s) = &self.shared {
            for layer in &s.layers {
                refs.push(&layer.w);
                refs.push(&layer.b);
            }
        }
        for e in &self.experts {
            refs.push(&e.gamma);
            refs.push(&e.beta);
            for layer in &e.mlp.layers {
                refs.push(&layer.w);
                refs.push(&layer.b);
            }
        }
        refs.push(&self.theta_tau);
        refs.push(&self.fusion.w);
        refs.push(&self.fusion.b);
        debug_assert_eq!(refs.len(), schema.len());
        schema
            .into_iter()
            .zip(refs)
            .map(|((n, s), r)| (n, s, r))
            .collect()
    }

    /// Mutable parameters in the same canonical order as [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<(String, Vec<usize>, &mut Vec<T>)> {
        let schema = self.shape().schema();
        let mut refs: Vec<&mut Vec<T>> = Vec::with_capacity(schema.len());
        if let Some(ps) = &mut self.prototypes {
            for p in ps.iter_mut() {
                refs.push(p);
            }
        }
        if let Some(s) = &mut self.shared {
            for layer in &mut s.layers {
                refs.push(&mut layer.w);
                refs.push(&mut layer.b);
            }
        }
        for e in &mut self.experts {
            refs.push(&mut e.gamma);
            refs.push(&mut e.beta);
            for layer in &mut e.mlp.layers {
                refs.push(&mut layer.w);
                refs.push(&mut layer.b);
            }
        }
        refs.push(&mut self.theta_tau);
        refs.push(&mut self.fusion.w);
        refs.push(&mut self.fusion.b);
        debug_assert_eq!(refs.len(), schema.len());
        schema
            .into_iter()
            .zip(refs)
            .map(|((n, s), r)| (n, s, r))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, _, d)| d.len()).sum()
    }

    /// Replace one named parameter (checkpoint loading).
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

    /// Bind all parameters as tape leaves in canonical order.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundHead {
        let shape = self.shape();
        let ids: Vec<TensorId> = self
            .params()
            .into_iter()
            .map(|(_, s, d)| tape.leaf(d.clone(), s, trainable))
            .collect();
        BoundHead::from_ordered(&shape, self.cfg.out_dim, ids)
    }
}

#[derive(Debug, Clone)]
pub struct BoundLinear {
    pub w: TensorId,
    pub b: TensorId,
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
}

#[derive(Debug, Clone)]
pub struct BoundExpert {
    pub gamma: TensorId,
    pub beta: TensorId,
    pub mlp: BoundMlp,
}

/// Tape-resident view of a head's parameters, in canonical order.
#[derive(Debug, Clone)]
pub struct BoundHead {
    pub shape: HeadShape,
    pub prototypes: Option<Vec<TensorId>>,
    pub shared: Option<BoundMlp>,
    pub experts: Vec<BoundExpert>,
    pub theta_tau: TensorId,
    pub fusion: BoundLinear,
    pub ordered: Vec<TensorId>,
}

impl BoundHead {
    /// Reassemble the structured view from ids laid out in schema order.
    pub fn from_ordered(shape: &HeadShape, _out_dim: usize, ids: Vec<TensorId>) -> Self {
        let (m, l) = (shape.meta_paths, shape.layers);
        let mut it = ids.iter().copied();
        let prototypes = shape
            .has_prototypes
            .then(|| (0..m).map(|_| it.next().expect("schema")).collect::<Vec<_>>());
        let shared = shape.has_shared.then(|| BoundMlp {
            layers: (0..l)
                .map(|_| BoundLinear {
                    w: it.next().expect("schema"),
                    b: it.next().expect("schema"),
                })
                .collect(),
        });
        let experts = (0..m)
            .map(|_| BoundExpert {
                gamma: it.next().expect("schema"),
                beta: it.next().expect("schema"),
                mlp: BoundMlp {
                    layers: (0..l)
                        .map(|_| BoundLinear {
                            w: it.next().expect("schema"),
                            b: it.next().expect("schema"),
                        })
                        .collect(),
                },
            })
            .collect();
        let theta_tau = it.next().expect("schema");
        let fusion = BoundLinear {
            w: it.next().expect("schema"),
            b: it.next().expect("schema"),
        };
        assert!(it.next().is_none(), "extra ids beyond schema");
        BoundHead {
            shape: *shape,
            prototypes,
            shared,
            experts,
            theta_tau,
            fusion,
            ordered: ids,
        }
    }
}

/// Apply a bound MLP: x -> linear -> ReLU -> ... -> linear.
pub(crate) fn mlp_apply<T: Real>(tape: &mut Tape<T>, mlp: &BoundMlp, x: TensorId) -> Result<TensorId> {
    let mut cur = x;
    let last = mlp.layers.len() - 1;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let h = tape.matmul(cur, layer.w)?;
        cur = tape.add_bias(h, layer.b)?;
        if i != last {
            cur = tape.relu(cur);
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests;
