//! LSTM cell and bidirectional layers built from graph ops.
//!
//! Gate layout inside the fused projection is `[input, forget, cell, output]`.
//! Weights are initialized uniformly in `±1/sqrt(fan_in)`, biases at zero.

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamSet};
use super::Tensor;
use rand::Rng;

/// Parameter handles for one direction of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    /// Registers `<prefix>.w_x` (`[in, 4h]`), `<prefix>.w_h` (`[h, 4h]`) and
    /// `<prefix>.b` (`[4h]`).
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bx = 1.0 / (in_dim as f64).sqrt();
        let bh = 1.0 / (hidden as f64).sqrt();
        LstmParams {
            w_x: ps.add(
                format!("{prefix}.w_x"),
                Tensor::uniform(&[in_dim, 4 * hidden], bx, rng),
            ),
            w_h: ps.add(
                format!("{prefix}.w_h"),
                Tensor::uniform(&[hidden, 4 * hidden], bh, rng),
            ),
            b: ps.add(format!("{prefix}.b"), Tensor::zeros(&[4 * hidden])),
            hidden,
        }
    }
}

/// One LSTM step. `x` is `[in]`, `h_prev`/`c_prev` are `[h]`; returns (h, c).
pub fn lstm_cell(
    g: &mut Graph,
    ps: &ParamSet,
    p: &LstmParams,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> (NodeId, NodeId) {
    let h = p.hidden;
    let w_x = g.param(ps, p.w_x);
    let w_h = g.param(ps, p.w_h);
    let b = g.param(ps, p.b);

    let zx = g.matmul(x, w_x);
    let zh = g.matmul(h_prev, w_h);
    let z0 = g.add(zx, zh);
    let z = g.add(z0, b);

    let zi = g.slice1(z, 0, h);
    let zf = g.slice1(z, h, h);
    let zc = g.slice1(z, 2 * h, h);
    let zo = g.slice1(z, 3 * h, h);

    let gate_i = g.sigmoid(zi);
    let gate_f = g.sigmoid(zf);
    let cand = g.tanh(zc);
    let gate_o = g.sigmoid(zo);

    let keep = g.mul(gate_f, c_prev);
    let write = g.mul(gate_i, cand);
    let c = g.add(keep, write);
    let c_act = g.tanh(c);
    let h_out = g.mul(gate_o, c_act);
    (h_out, c)
}

/// Runs one direction over the rows of `input` (`[L, in]`), starting from
/// zero state. `reverse` walks the rows back to front; the returned hidden
/// states are always in sentence order.
pub fn lstm_sequence(
    g: &mut Graph,
    ps: &ParamSet,
    p: &LstmParams,
    input: NodeId,
    reverse: bool,
) -> Vec<NodeId> {
    let len = g.value(input).rows();
    let mut h = g.constant(Tensor::zeros(&[p.hidden]));
    let mut c = g.constant(Tensor::zeros(&[p.hidden]));
    let order: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    let mut states = vec![None; len];
    for t in order {
        let x = g.row(input, t);
        let (h2, c2) = lstm_cell(g, ps, p, x, h, c);
        h = h2;
        c = c2;
        states[t] = Some(h);
    }
    states.into_iter().map(|s| s.unwrap()).collect()
}

/// Bidirectional layer: per position, concat(forward h, backward h). Input
/// `[L, in]`, output `[L, 2h]`.
pub fn bilstm_layer(
    g: &mut Graph,
    ps: &ParamSet,
    fwd: &LstmParams,
    bwd: &LstmParams,
    input: NodeId,
) -> NodeId {
    let hf = lstm_sequence(g, ps, fwd, input, false);
    let hb = lstm_sequence(g, ps, bwd, input, true);
    let rows: Vec<NodeId> = hf
        .into_iter()
        .zip(hb)
        .map(|(f, b)| g.concat(f, b))
        .collect();
    g.stack_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_param_grads, DEFAULT_STEP, DEFAULT_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn zero_params(ps: &mut ParamSet, in_dim: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_x: ps.add("z.w_x", Tensor::zeros(&[in_dim, 4 * hidden])),
            w_h: ps.add("z.w_h", Tensor::zeros(&[hidden, 4 * hidden])),
            b: ps.add("z.b", Tensor::zeros(&[4 * hidden])),
            hidden,
        }
    }

    #[test]
    fn zero_weights_zero_state_give_zero_outputs() {
        let mut ps = ParamSet::new();
        let p = zero_params(&mut ps, 3, 2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        let h0 = g.constant(Tensor::zeros(&[2]));
        let c0 = g.constant(Tensor::zeros(&[2]));
        let (h, c) = lstm_cell(&mut g, &ps, &p, x, h0, c0);
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
        assert_eq!(g.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn length_one_sequence_makes_directions_agree() {
        // Forward and backward passes see the same single input and the same
        // parameters, so their hidden states must be equal.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let p = LstmParams::init(&mut ps, "l", 3, 2, &mut rng);
        let mut g = Graph::new();
        let input = g.constant(Tensor::new(vec![1, 3], vec![0.3, -0.7, 1.1]));
        let f = lstm_sequence(&mut g, &ps, &p, input, false);
        let b = lstm_sequence(&mut g, &ps, &p, input, true);
        assert_eq!(g.value(f[0]).data(), g.value(b[0]).data());
    }

    #[test]
    fn lstm_cell_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let mut ps = ParamSet::new();
        let p = LstmParams::init(&mut ps, "l", 3, 2, &mut rng);
        let x_val = Tensor::from_vec(vec![0.4, -1.2, 0.9]);
        let h_val = Tensor::from_vec(vec![0.1, -0.3]);
        let c_val = Tensor::from_vec(vec![0.2, 0.5]);

        let run = |ps: &ParamSet| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new();
            let x = g.constant(x_val.clone());
            let h0 = g.constant(h_val.clone());
            let c0 = g.constant(c_val.clone());
            let (h, c) = lstm_cell(&mut g, ps, &p, x, h0, c0);
            let hs = g.sum(h);
            let cs = g.sum(c);
            let loss0 = g.add(hs, cs);
            // A nonlinearity on top so second-order terms are exercised.
            let loss1 = g.tanh(loss0);
            let loss = g.sum(loss1);
            g.backward(loss);
            (g.value(loss).scalar_value(), g.param_grads(ps))
        };
        let (_, analytic) = run(&ps);
        let report = check_param_grads(&ps, &analytic, DEFAULT_STEP, |w| run(w).0);
        assert!(
            report.ok(DEFAULT_TOL),
            "worst {} [{}]: rel err {}",
            report.worst_param,
            report.worst_index,
            report.max_rel_err
        );
    }
}
