//! Variational encoder: embeddings, two stacked bidirectional LSTM layers,
//! and linear heads for the latent mean and (softplus) scale.
//!
//! Position 0 is the latent of a pseudo-sentence made of the single dummy
//! token (the NULL id); the decoder never reconstructs it, but it serves as
//! the NULL position of the alignment model. Sampling is reparameterized:
//! `y = u + s .* eps` with caller-supplied noise, so inference passes zeros
//! and gets `y = u`.

use super::EncoderIds;
use crate::corpus::NULL_ID;
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::lstm::bilstm_layer;
use crate::tensor::params::ParamSet;
use crate::tensor::Tensor;

/// Per-position latent state for one sentence, dummy position included:
/// all matrices are `[len + 1, latent]`.
#[derive(Debug, Clone, Copy)]
pub struct LatentBatch {
    pub u: NodeId,
    pub s: NodeId,
    pub y: NodeId,
}

/// Runs the encoder stack over token ids, producing one latent row per
/// position (no dummy here).
fn encode_rows(g: &mut Graph, ps: &ParamSet, enc: &EncoderIds, ids: &[usize]) -> NodeId {
    let emb_table = g.param(ps, enc.emb);
    let emb = g.embedding(emb_table, ids);
    let h1 = bilstm_layer(g, ps, &enc.l1_fwd, &enc.l1_bwd, emb);
    let h2 = bilstm_layer(g, ps, &enc.l2_fwd, &enc.l2_bwd, h1);
    let w_h = g.param(ps, enc.w_h);
    g.matmul(h2, w_h)
}

/// Encodes a sentence plus the dummy pseudo-sentence. `noise` must be
/// `[len + 1, latent]`; row 0 is the dummy draw.
pub fn encode(
    g: &mut Graph,
    ps: &ParamSet,
    enc: &EncoderIds,
    token_ids: &[u32],
    noise: Tensor,
) -> LatentBatch {
    let ids: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
    let dummy = encode_rows(g, ps, enc, &[NULL_ID as usize]);
    let words = encode_rows(g, ps, enc, &ids);
    let h = g.vcat(dummy, words);

    let w_u = g.param(ps, enc.w_u);
    let b_u = g.param(ps, enc.b_u);
    let w_s = g.param(ps, enc.w_s);
    let b_s = g.param(ps, enc.b_s);

    let u_lin = g.matmul(h, w_u);
    let u = g.add_row_vec(u_lin, b_u);
    let s_lin = g.matmul(h, w_s);
    let s_aff = g.add_row_vec(s_lin, b_s);
    let s = g.softplus(s_aff);
    let y = g.gaussian_sample(u, s, noise);
    LatentBatch { u, s, y }
}
