//! Forward graph assembly: both pathways, gating, fusion, and the losses.

use crate::diff::{grad_check, Tape, TensorId, DEFAULT_STEP};
use crate::error::{HopeError, Result};
use crate::head::routing::{elastic_select, RoutingState, SelectionMode};
use crate::head::{mlp_apply, BoundHead, HopeHead, ViewBatch};
use crate::real::Real;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Whether dynamic experts run on gathered selected rows or densely on the
/// whole batch with the mask applied afterwards. Both must agree to 1e-6.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sparse,
    Dense,
}

#[derive(Debug, Clone)]
pub struct ForwardOpts {
    pub trainable: bool,
    /// Also track gradients into the view embeddings (backbone direction).
    pub track_input_grads: bool,
    pub exec: ExecMode,
    /// Override the config-derived selection mode.
    pub selection: Option<SelectionMode>,
    /// Hold the selection fixed (batch x experts row-major). Used by the
    /// composite gradient check, where finite differences must not flip the
    /// mask.
    pub fixed_mask: Option<Vec<bool>>,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        ForwardOpts {
            trainable: true,
            track_input_grads: false,
            exec: ExecMode::Sparse,
            selection: None,
            fixed_mask: None,
        }
    }
}

/// Tape-resident batch: per-view leaves plus their concatenation.
#[derive(Debug, Clone)]
pub struct BoundBatch {
    pub views: Vec<TensorId>,
    pub all: TensorId,
    pub batch: usize,
}

/// Insert the batch as leaves and build the concatenated representation on
/// the tape so gradients can flow back into the views when requested.
pub fn insert_batch<T: Real>(
    tape: &mut Tape<T>,
    batch: &ViewBatch<T>,
    requires_grad: bool,
) -> Result<BoundBatch> {
    let views: Vec<TensorId> = batch
        .views
        .iter()
        .map(|v| tape.leaf(v.clone(), vec![batch.batch, batch.dim], requires_grad))
        .collect();
    let all = tape.concat_cols(&views)?;
    Ok(BoundBatch {
        views,
        all,
        batch: batch.batch,
    })
}

/// Stability representation: the shared expert over the concatenated views.
/// Heads without a shared pathway contribute exact zeros.
pub fn shared_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundHead,
    batch: &BoundBatch,
) -> Result<TensorId> {
    match &bound.shared {
        Some(mlp) => mlp_apply(tape, mlp, batch.all),
        None => Ok(tape.zeros(vec![batch.batch, bound.shape.dim])),
    }
}

/// Per-expert relevance scores: cosine of each view row against that
/// expert's prototype. Returns one [batch] tensor per expert.
pub fn alignment_scores<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundHead,
    batch: &BoundBatch,
    cos_eps: f64,
) -> Result<Vec<TensorId>> {
    let protos = bound
        .prototypes
        .as_ref()
        .ok_or_else(|| HopeError::Contract("head has no prototype bank".into()))?;
    let eps = T::from_f64(cos_eps);
    protos
        .iter()
        .zip(&batch.views)
        .map(|(&p, &v)| tape.cosine_rows(v, p, eps))
        .collect()
}

/// Read score columns off the tape into a batch x experts row-major matrix.
pub fn score_matrix<T: Real>(tape: &Tape<T>, cols: &[TensorId], batch: usize) -> Vec<T> {
    let experts = cols.len();
    let mut out = vec![T::zero(); batch * experts];
    for (m, &c) in cols.iter().enumerate() {
        let data = tape.value(c);
        for v in 0..batch {
            out[v * experts + m] = data[v];
        }
    }
    out
}

/// Gate weights g = sigmoid(score / tau) * mask, with tau = exp(theta_tau).
/// The mask enters as a constant; gradients flow through scores and
/// theta_tau only. Returns one [batch] tensor per expert.
pub fn gate_weights<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundHead,
    score_cols: &[TensorId],
    routing: &RoutingState,
) -> Result<Vec<TensorId>> {
    let neg_theta = tape.neg(bound.theta_tau);
    let inv_tau = tape.exp(neg_theta);
    score_cols
        .iter()
        .enumerate()
        .map(|(m, &col)| {
            let scaled = tape.mul_scalar(col, inv_tau)?;
            let sig = tape.sigmoid(scaled);
            tape.mul_const(sig, routing.mask_column::<T>(m))
        })
        .collect()
}

/// Sparse weighted sum of activated experts over layer-normalized views.
pub fn dynamic_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundHead,
    batch: &BoundBatch,
    gate_cols: &[TensorId],
    routing: &RoutingState,
    ln_eps: f64,
    exec: ExecMode,
) -> Result<TensorId> {
    let eps = T::from_f64(ln_eps);
    let b = batch.batch;
    let mut z_d = tape.zeros(vec![b, bound.shape.dim]);
    for (m, expert) in bound.experts.iter().enumerate() {
        let contribution = match exec {
            ExecMode::Sparse => {
                let rows = routing.rows_for_expert(m);
                if rows.is_empty() {
                    continue;
                }
                let sub = tape.gather_rows(batch.views[m], &rows)?;
                let normed = tape.layer_norm(sub, expert.gamma, expert.beta, eps)?;
                let out = mlp_apply(tape, &expert.mlp, normed)?;
                let full = tape.scatter_rows(out, &rows, b)?;
                tape.scale_rows(full, gate_cols[m])?
            }
            ExecMode::Dense => {
                let normed = tape.layer_norm(batch.views[m], expert.gamma, expert.beta, eps)?;
                let out = mlp_apply(tape, &expert.mlp, normed)?;
                tape.scale_rows(out, gate_cols[m])?
            }
        };
        z_d = tape.add(z_d, contribution)?;
    }
    Ok(z_d)
}

/// Fused output: W_fusion [z_s || z_d] + b. These are the task logits.
pub fn fuse<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundHead,
    z_s: TensorId,
    z_d: TensorId,
) -> Result<TensorId> {
    let cat = tape.concat_cols(&[z_s, z_d])?;
    let proj = tape.matmul(cat, bound.fusion.w)?;
    tape.add_bias(proj, bound.fusion.b)
}

/// Sum of squared pairwise prototype cosines over ordered pairs i != j.
/// Zero when the head has no prototype bank or only one expert.
pub fn ortho_loss<T: Real>(tape: &mut Tape<T>, bound: &BoundHead, cos_eps: f64) -> Result<TensorId> {
    let eps = T::from_f64(cos_eps);
    let mut acc = tape.zeros(vec![1]);
    let Some(protos) = bound.prototypes.as_ref() else {
        return Ok(acc);
    };
    for i in 0..protos.len() {
        for j in (i + 1)..protos.len() {
            let c = tape.cosine_rows(protos[i], protos[j], eps)?;
            let sq = tape.mul(c, c)?;
            acc = tape.add(acc, sq)?;
        }
    }
    // each unordered pair contributes twice in the ordered sum
    Ok(tape.scale_const(acc, T::from_f64(2.0)))
}

/// The two loss terms and their weighted total, all on the tape.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub task: TensorId,
    pub ortho: TensorId,
    pub total: TensorId,
}

/// total = task + lambda * ortho as a single fused tape expression.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    bound: &BoundHead,
    logits: TensorId,
    labels: &[usize],
    lambda: f64,
    cos_eps: f64,
) -> Result<LossTerms> {
    let task = tape.cross_entropy(logits, labels)?;
    let ortho = ortho_loss(tape, bound, cos_eps)?;
    let weighted = tape.scale_const(ortho, T::from_f64(lambda));
    let total = tape.add(task, weighted)?;
    Ok(LossTerms { task, ortho, total })
}

/// One complete forward pass: tape, bound parameters, routing diagnostics,
/// and the logits node.
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub bound: BoundHead,
    pub batch_ids: BoundBatch,
    pub score_cols: Vec<TensorId>,
    pub gate_cols: Vec<TensorId>,
    pub logits: TensorId,
    pub routing: RoutingState,
}

impl<T: Real> ForwardPass<T> {
    pub fn logits_values(&self) -> &[T] {
        self.tape.value(self.logits)
    }

    /// Append the loss terms to this pass's tape.
    pub fn loss(&mut self, labels: &[usize], lambda: f64, cos_eps: f64) -> Result<LossTerms> {
        total_loss(&mut self.tape, &self.bound, self.logits, labels, lambda, cos_eps)
    }
}

impl<T: Real> HopeHead<T> {
    /// Compose both pathways into logits and routing diagnostics.
    pub fn forward(&self, batch: &ViewBatch<T>, opts: &ForwardOpts) -> Result<ForwardPass<T>> {
        if batch.meta_paths() != self.cfg.meta_paths || batch.dim != self.cfg.dim {
            return Err(HopeError::ShapeMismatch {
                op: "forward",
                lhs: vec![self.cfg.meta_paths, self.cfg.dim],
                rhs: vec![batch.meta_paths(), batch.dim],
            });
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, opts.trainable);
        let batch_ids = insert_batch(&mut tape, batch, opts.track_input_grads)?;

        let z_s = shared_forward(&mut tape, &bound, &batch_ids)?;
        let score_cols = alignment_scores(&mut tape, &bound, &batch_ids, self.cfg.cos_eps)?;
        let scores = score_matrix(&tape, &score_cols, batch.batch);

        let mut routing = match &opts.fixed_mask {
            Some(mask) => {
                assert_eq!(mask.len(), batch.batch * self.cfg.meta_paths);
                let mut r = elastic_select(
                    &scores,
                    batch.batch,
                    self.cfg.meta_paths,
                    &self.selection_mode(),
                );
                r.mask = mask.clone();
                r
            }
            None => {
                let mode = opts.selection.unwrap_or_else(|| self.selection_mode());
                elastic_select(&scores, batch.batch, self.cfg.meta_paths, &mode)
            }
        };

        let gate_cols = gate_weights(&mut tape, &bound, &score_cols, &routing)?;
        for (m, &g) in gate_cols.iter().enumerate() {
            let vals = tape.value(g);
            for v in 0..batch.batch {
                routing.gates[v * self.cfg.meta_paths + m] = vals[v].to_f64();
            }
        }

        let z_d = dynamic_forward(
            &mut tape,
            &bound,
            &batch_ids,
            &gate_cols,
            &routing,
            self.cfg.ln_eps,
            opts.exec,
        )?;
        let logits = fuse(&mut tape, &bound, z_s, z_d)?;

        Ok(ForwardPass {
            tape,
            bound,
            batch_ids,
            score_cols,
            gate_cols,
            logits,
            routing,
        })
    }

    pub fn selection_mode(&self) -> SelectionMode {
        SelectionMode::Elastic {
            delta: self.cfg.delta,
            k_frac: self.cfg.k_frac,
            c_frac: self.cfg.c_frac,
        }
    }
}

/// Finite-difference check of the full composed forward at 64-bit with the
/// selection mask held fixed. Returns the worst relative error over every
/// parameter gradient.
pub fn grad_check_composite(cfg: &crate::head::HopeConfig, batch_size: usize, seed: u64) -> Result<f64> {
    let head: HopeHead<f64> = HopeHead::init(cfg)?;
    let shape = head.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views: Vec<Vec<f64>> = (0..cfg.meta_paths)
        .map(|_| (0..batch_size * cfg.dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let batch = ViewBatch::new(views, batch_size, cfg.dim)?;
    let labels: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..cfg.out_dim)).collect();

    // Freeze the mask from an unperturbed pass.
    let pass = head.forward(&batch, &ForwardOpts::default())?;
    let mask = pass.routing.mask.clone();

    let schema = shape.schema();
    let shapes: Vec<Vec<usize>> = schema.iter().map(|(_, s)| s.clone()).collect();
    let init: Vec<Vec<f64>> = head.params().into_iter().map(|(_, _, d)| d.clone()).collect();

    let cfg = cfg.clone();
    grad_check(&shapes, &init, DEFAULT_STEP, false, move |tape, ids| {
        let bound = BoundHead::from_ordered(&shape, cfg.out_dim, ids.to_vec());
        let batch_ids = insert_batch(tape, &batch, false)?;
        let z_s = shared_forward(tape, &bound, &batch_ids)?;
        let score_cols = alignment_scores(tape, &bound, &batch_ids, cfg.cos_eps)?;
        let scores = score_matrix(tape, &score_cols, batch.batch);
        let mut routing = elastic_select(
            &scores,
            batch.batch,
            cfg.meta_paths,
            &SelectionMode::Elastic {
                delta: cfg.delta,
                k_frac: cfg.k_frac,
                c_frac: cfg.c_frac,
            },
        );
        routing.mask = mask.clone();
        let gate_cols = gate_weights(tape, &bound, &score_cols, &routing)?;
        let z_d = dynamic_forward(tape, &bound, &batch_ids, &gate_cols, &routing, cfg.ln_eps, ExecMode::Dense)?;
        let logits = fuse(tape, &bound, z_s, z_d)?;
        let terms = total_loss(tape, &bound, logits, &labels, cfg.lambda, cfg.cos_eps)?;
        Ok(terms.total)
    })
}
