//! Finite-difference sweep over every differentiable graph op.
//!
//! Each case builds a small random instance, projects the op output to a
//! scalar through fixed mixing weights, and compares reverse-mode gradients
//! against central differences for every input coordinate.

use super::gradcheck::{check_param_grads, GradCheckReport, DEFAULT_STEP};
use super::graph::{Graph, NodeId};
use super::params::ParamSet;
use super::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub struct OpCheck {
    pub name: &'static str,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_err: f64,
}

type Builder = fn(&mut Graph, &ParamSet, &CaseData) -> NodeId;

/// Immutable per-case side data (indices, noise draws) shared between the
/// analytic and the finite-difference evaluations.
pub struct CaseData {
    idx: Vec<usize>,
    noise: Tensor,
}

fn tensor(rng: &mut ChaCha20Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
}

fn project_and_grad(ps: &ParamSet, data: &CaseData, build: Builder) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let out = build(&mut g, ps, data);
    let shape = g.value(out).shape().to_vec();
    let n = g.value(out).len();
    let w: Vec<f64> = (0..n).map(|i| 0.4 + (0.37 * i as f64).sin()).collect();
    let wn = g.constant(Tensor::new(shape, w));
    let mixed = g.mul(out, wn);
    let loss = g.sum(mixed);
    g.backward(loss);
    (g.value(loss).scalar_value(), g.param_grads(ps))
}

fn check_case(
    ps: &ParamSet,
    data: &CaseData,
    build: Builder,
) -> GradCheckReport {
    let (_, analytic) = project_and_grad(ps, data, build);
    check_param_grads(ps, &analytic, DEFAULT_STEP, |w| {
        project_and_grad(w, data, build).0
    })
}

struct Case {
    name: &'static str,
    setup: fn(&mut ChaCha20Rng) -> (ParamSet, CaseData),
    build: Builder,
}

fn no_data() -> CaseData {
    CaseData {
        idx: Vec::new(),
        noise: Tensor::scalar(0.0),
    }
}

fn two_mats(rng: &mut ChaCha20Rng) -> (ParamSet, CaseData) {
    let mut ps = ParamSet::new();
    ps.add("a", tensor(rng, &[3, 4], -2.0, 2.0));
    ps.add("b", tensor(rng, &[3, 4], -2.0, 2.0));
    (ps, no_data())
}

fn one_mat(rng: &mut ChaCha20Rng) -> (ParamSet, CaseData) {
    let mut ps = ParamSet::new();
    ps.add("a", tensor(rng, &[3, 4], -2.0, 2.0));
    (ps, no_data())
}

fn one_vec(rng: &mut ChaCha20Rng) -> (ParamSet, CaseData) {
    let mut ps = ParamSet::new();
    ps.add("a", tensor(rng, &[5], -2.0, 2.0));
    (ps, no_data())
}

fn param(g: &mut Graph, ps: &ParamSet, name: &str) -> NodeId {
    g.param(ps, ps.id(name).unwrap())
}

const CASES: &[Case] = &[
    Case {
        name: "add",
        setup: two_mats,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.add(a, b)
        },
    },
    Case {
        name: "sub",
        setup: two_mats,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.sub(a, b)
        },
    },
    Case {
        name: "mul",
        setup: two_mats,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.mul(a, b)
        },
    },
    Case {
        name: "neg",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.neg(a)
        },
    },
    Case {
        name: "scale",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.scale(a, -1.7)
        },
    },
    Case {
        name: "add_const",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.add_const(a, 0.9)
        },
    },
    Case {
        name: "matmul",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3, 4], -1.5, 1.5));
            ps.add("b", tensor(rng, &[4, 2], -1.5, 1.5));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.matmul(a, b)
        },
    },
    Case {
        name: "matmul_vec_mat",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[4], -1.5, 1.5));
            ps.add("b", tensor(rng, &[4, 3], -1.5, 1.5));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.matmul(a, b)
        },
    },
    Case {
        name: "matmul_mat_vec",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3, 4], -1.5, 1.5));
            ps.add("b", tensor(rng, &[4], -1.5, 1.5));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.matmul(a, b)
        },
    },
    Case {
        name: "add_row_vec",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3, 4], -2.0, 2.0));
            ps.add("b", tensor(rng, &[4], -2.0, 2.0));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.add_row_vec(a, b)
        },
    },
    Case {
        name: "add_col_vec",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3, 4], -2.0, 2.0));
            ps.add("b", tensor(rng, &[3], -2.0, 2.0));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.add_col_vec(a, b)
        },
    },
    Case {
        name: "concat",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3], -2.0, 2.0));
            ps.add("b", tensor(rng, &[4], -2.0, 2.0));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.concat(a, b)
        },
    },
    Case {
        name: "vcat",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[2, 3], -2.0, 2.0));
            ps.add("b", tensor(rng, &[4, 3], -2.0, 2.0));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            g.vcat(a, b)
        },
    },
    Case {
        name: "embedding_lookup",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[6, 3], -1.0, 1.0));
            let idx = (0..5).map(|_| rng.random_range(0..6)).collect();
            (
                ps,
                CaseData {
                    idx,
                    noise: Tensor::scalar(0.0),
                },
            )
        },
        build: |g, ps, d| {
            let a = param(g, ps, "a");
            g.embedding(a, &d.idx)
        },
    },
    Case {
        name: "softmax_vec",
        setup: one_vec,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.softmax(a, 0)
        },
    },
    Case {
        name: "softmax_rows",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.softmax(a, 1)
        },
    },
    Case {
        name: "softmax_cols",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.softmax(a, 0)
        },
    },
    Case {
        name: "log_softmax_vec",
        setup: one_vec,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.log_softmax(a, 0)
        },
    },
    Case {
        name: "log_softmax_rows",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.log_softmax(a, 1)
        },
    },
    Case {
        name: "log_softmax_cols",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.log_softmax(a, 0)
        },
    },
    Case {
        name: "logsumexp_vec",
        setup: one_vec,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.logsumexp(a, 0)
        },
    },
    Case {
        name: "logsumexp_rows",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.logsumexp(a, 1)
        },
    },
    Case {
        name: "logsumexp_cols",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.logsumexp(a, 0)
        },
    },
    Case {
        name: "softplus",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.softplus(a)
        },
    },
    Case {
        name: "tanh",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.tanh(a)
        },
    },
    Case {
        name: "sigmoid",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.sigmoid(a)
        },
    },
    Case {
        name: "ln",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3, 4], 0.2, 3.0));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.ln(a)
        },
    },
    Case {
        name: "abs",
        setup: |rng| {
            // Keep inputs away from the kink at zero.
            let mut ps = ParamSet::new();
            let mut t = tensor(rng, &[3, 4], 0.2, 2.0);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                if i % 2 == 0 {
                    *v = -*v;
                }
            }
            ps.add("a", t);
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.abs(a)
        },
    },
    Case {
        name: "gaussian_sample",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("u", tensor(rng, &[3, 4], -2.0, 2.0));
            ps.add("s", tensor(rng, &[3, 4], 0.1, 2.0));
            let noise = tensor(rng, &[3, 4], -1.5, 1.5);
            (
                ps,
                CaseData {
                    idx: Vec::new(),
                    noise,
                },
            )
        },
        build: |g, ps, d| {
            let u = param(g, ps, "u");
            let s = param(g, ps, "s");
            g.gaussian_sample(u, s, d.noise.clone())
        },
    },
    Case {
        name: "sum",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.sum(a)
        },
    },
    Case {
        name: "sum_axis0",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.sum_axis(a, 0)
        },
    },
    Case {
        name: "sum_axis1",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.sum_axis(a, 1)
        },
    },
    Case {
        name: "row",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.row(a, 1)
        },
    },
    Case {
        name: "col",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.col(a, 2)
        },
    },
    Case {
        name: "rows_slice",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.rows_slice(a, 1, 2)
        },
    },
    Case {
        name: "cols_slice",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.cols_slice(a, 1, 3)
        },
    },
    Case {
        name: "slice1",
        setup: one_vec,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.slice1(a, 1, 3)
        },
    },
    Case {
        name: "gather",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[6], -2.0, 2.0));
            let idx = (0..4).map(|_| rng.random_range(0..6)).collect();
            (
                ps,
                CaseData {
                    idx,
                    noise: Tensor::scalar(0.0),
                },
            )
        },
        build: |g, ps, d| {
            let a = param(g, ps, "a");
            g.gather(a, &d.idx)
        },
    },
    Case {
        name: "select_per_row",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[3, 4], -2.0, 2.0));
            let idx = (0..3).map(|_| rng.random_range(0..4)).collect();
            (
                ps,
                CaseData {
                    idx,
                    noise: Tensor::scalar(0.0),
                },
            )
        },
        build: |g, ps, d| {
            let a = param(g, ps, "a");
            g.select_per_row(a, &d.idx)
        },
    },
    Case {
        name: "stack_rows",
        setup: |rng| {
            let mut ps = ParamSet::new();
            ps.add("a", tensor(rng, &[4], -2.0, 2.0));
            ps.add("b", tensor(rng, &[4], -2.0, 2.0));
            (ps, no_data())
        },
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            let b = param(g, ps, "b");
            // Reuse a row so fan-out accumulation is exercised too.
            g.stack_rows(&[a, b, a])
        },
    },
    Case {
        name: "transpose",
        setup: one_mat,
        build: |g, ps, _| {
            let a = param(g, ps, "a");
            g.transpose(a)
        },
    },
];

/// Runs `instances` random finite-difference checks per op and returns one
/// aggregated row per op (worst relative error over all instances).
pub fn check_all_ops(seed: u64, instances: usize) -> Vec<OpCheck> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    CASES
        .iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            let mut coords = 0;
            for _ in 0..instances {
                let (ps, data) = (case.setup)(&mut rng);
                let report = check_case(&ps, &data, case.build);
                worst = worst.max(report.max_rel_err);
                coords += report.checked;
            }
            OpCheck {
                name: case.name,
                instances,
                coords,
                max_rel_err: worst,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::DEFAULT_TOL;

    #[test]
    fn every_op_passes_finite_difference_checks() {
        for op in check_all_ops(0xC0FFEE, 20) {
            assert!(
                op.max_rel_err <= DEFAULT_TOL,
                "{}: max rel err {} over {} coords",
                op.name,
                op.max_rel_err,
                op.coords
            );
        }
    }
}
