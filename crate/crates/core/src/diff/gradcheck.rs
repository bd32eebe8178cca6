//! Central-difference gradient checking.
//!
//! The checker is the independent oracle for every backward rule: it rebuilds
//! the forward pass per perturbed coordinate and never reads tape gradients
//! while doing so. Runs at f64 only; f32 cancellation noise would drown the
//! tolerances.

use crate::diff::tape::{Tape, TensorId};
use crate::error::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error with a small floor so coordinates with near-zero true
/// gradient do not amplify finite-difference noise into false failures.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compare tape gradients of a scalar-valued builder against central finite
/// differences over every coordinate of every parameter. Returns the worst
/// relative error.
///
/// `build` must be a pure function of the parameter data it is given.
pub fn grad_check<F>(
    shapes: &[Vec<usize>],
    init: &[Vec<f64>],
    h: f64,
    inject_fault: bool,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[TensorId]) -> Result<TensorId>,
{
    assert_eq!(shapes.len(), init.len());

    // Analytic pass.
    let mut tape = Tape::new();
    tape.inject_backward_fault(inject_fault);
    let ids: Vec<TensorId> = shapes
        .iter()
        .zip(init)
        .map(|(s, d)| tape.leaf(d.clone(), s.clone(), true))
        .collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).expect("backward allocates all grads").to_vec())
        .collect();

    let eval = |params: &[Vec<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<TensorId> = shapes
            .iter()
            .zip(params)
            .map(|(s, d)| t.leaf(d.clone(), s.clone(), false))
            .collect();
        let loss = build(&mut t, &ids)?;
        Ok(t.scalar_value(loss))
    };

    let mut params: Vec<Vec<f64>> = init.to_vec();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for c in 0..params[p].len() {
            let orig = params[p][c];
            params[p][c] = orig + h;
            let up = eval(&params)?;
            params[p][c] = orig - h;
            let down = eval(&params)?;
            params[p][c] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = rel_err(analytic[p][c], fd);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Result of one named gradient check.
#[derive(Debug, Clone)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Same as [`rand_vec`] but keeps every entry away from zero, for ops with a
/// kink or a singularity at the origin.
fn rand_vec_off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Contract every output coordinate against a fixed random weighting so the
/// upstream gradient is non-uniform; uniform seeds can hide transposition
/// mistakes in backward rules.
fn weighted_sum(t: &mut Tape<f64>, out: TensorId, rng: &mut ChaCha8Rng) -> Result<TensorId> {
    let n = t.value(out).len();
    let w = rand_vec(rng, n);
    let weighted = t.mul_const(out, w)?;
    Ok(t.sum(weighted))
}

/// Run the per-op gradient check suite: one named entry per differentiable
/// op. `inject_fault` corrupts the matmul backward rule as a negative
/// control; a healthy checker must then report a large matmul error.
pub fn op_suite(seed: u64, inject_fault: bool) -> Result<Vec<OpReport>> {
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 4], vec![4, 2]],
            &[rand_vec(&mut rng, 12), rand_vec(&mut rng, 8)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let c = t.matmul(ids[0], ids[1])?;
                weighted_sum(t, c, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "matmul",
            max_rel_err: err,
            threshold: 1e-6,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![5, 8], vec![8], vec![8]],
            &[
                rand_vec(&mut rng, 40),
                rand_vec(&mut rng, 8),
                rand_vec(&mut rng, 8),
            ],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "layer_norm",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![4, 6], vec![6]],
            &[rand_vec_off_zero(&mut rng, 24), rand_vec_off_zero(&mut rng, 6)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let s = t.cosine_rows(ids[0], ids[1], 1e-12)?;
                weighted_sum(t, s, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "cosine_rows",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 5]],
            &[rand_vec(&mut rng, 15)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.sigmoid(ids[0]);
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "sigmoid",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 5]],
            &[rand_vec_off_zero(&mut rng, 15)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.relu(ids[0]);
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "relu",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![2, 4]],
            &[rand_vec(&mut rng, 8)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.exp(ids[0]);
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "exp",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![2, 4]],
            &[rand_vec(&mut rng, 8)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.neg(ids[0]);
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "neg",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 4], vec![3, 4]],
            &[rand_vec(&mut rng, 12), rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.add(ids[0], ids[1])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "add",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![4, 3], vec![3]],
            &[rand_vec(&mut rng, 12), rand_vec(&mut rng, 3)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.add_bias(ids[0], ids[1])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "add_bias",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 4], vec![3, 4]],
            &[rand_vec(&mut rng, 12), rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.mul(ids[0], ids[1])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "mul",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 4], vec![1]],
            &[rand_vec(&mut rng, 12), rand_vec(&mut rng, 1)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.mul_scalar(ids[0], ids[1])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "mul_scalar",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let c = rand_vec(&mut rng, 12);
        let err = grad_check(
            &[vec![3, 4]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.mul_const(ids[0], c.clone())?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "mul_const",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 4]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.scale_const(ids[0], 0.73);
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "scale_const",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![4, 5], vec![4]],
            &[rand_vec(&mut rng, 20), rand_vec(&mut rng, 4)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.scale_rows(ids[0], ids[1])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "scale_rows",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 2], vec![3, 4], vec![3, 1]],
            &[
                rand_vec(&mut rng, 6),
                rand_vec(&mut rng, 12),
                rand_vec(&mut rng, 3),
            ],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.concat_cols(&[ids[0], ids[1], ids[2]])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "concat_cols",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![5, 3]],
            &[rand_vec(&mut rng, 15)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                // duplicate row on purpose: gather must accumulate
                let y = t.gather_rows(ids[0], &[4, 1, 1, 0])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "gather_rows",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![3, 4]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.scatter_rows(ids[0], &[5, 0, 2], 6)?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "scatter_rows",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![4, 3]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.softmax_rows(ids[0])?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "softmax_rows",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let r = rng.clone();
        let err = grad_check(
            &[vec![4, 3]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| {
                let y = t.select_col(ids[0], 1)?;
                weighted_sum(t, y, &mut r.clone())
            },
        )?;
        reports.push(OpReport {
            name: "select_col",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let err = grad_check(
            &[vec![3, 4]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            |t, ids| Ok(t.sum(ids[0])),
        )?;
        reports.push(OpReport {
            name: "sum",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let err = grad_check(
            &[vec![3, 4]],
            &[rand_vec(&mut rng, 12)],
            DEFAULT_STEP,
            inject_fault,
            |t, ids| Ok(t.mean(ids[0])),
        )?;
        reports.push(OpReport {
            name: "mean",
            max_rel_err: err,
            threshold: 1e-5,
        });
    }
    {
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let err = grad_check(
            &[vec![6, 3]],
            &[rand_vec(&mut rng, 18)],
            DEFAULT_STEP,
            inject_fault,
            move |t, ids| t.cross_entropy(ids[0], &labels),
        )?;
        reports.push(OpReport {
            name: "cross_entropy",
            max_rel_err: err,
            threshold: 1e-6,
        });
    }

    Ok(reports)
}
