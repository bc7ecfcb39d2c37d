//! Differentiable objective terms for the VAE aligners.
//!
//! Every term is built on a per-sentence graph and shares a single latent
//! sample: reconstruction (target words from their own latents, dummy
//! excluded), alignment (IBM-1 uniform marginalization or the HMM forward
//! recursion over jump-parameterized transitions), the analytic Gaussian KL,
//! the three-term posterior agreement cost, and the monolingual objectives.

use super::encoder::{encode, LatentBatch};
use super::{DecoderIds, Direction, Family, ObjectiveWeights, VaeModel};
use crate::corpus::Sentence;
use crate::error::{CoreError, Result};
use crate::tensor::graph::{Graph, NodeId};
use crate::tensor::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// `-sum_{i>=1} log softmax(W_v y_i + b_v)[e_i]`; the dummy latent is never
/// reconstructed.
pub fn reconstruction_loss(
    g: &mut Graph,
    ps: &ParamSet,
    dec: &DecoderIds,
    latent: &LatentBatch,
    token_ids: &[u32],
) -> NodeId {
    let words = g.rows_slice(latent.y, 1, token_ids.len());
    let w_v = g.param(ps, dec.w_v);
    let b_v = g.param(ps, dec.b_v);
    let lin = g.matmul(words, w_v);
    let logits = g.add_row_vec(lin, b_v);
    let lsm = g.log_softmax(logits, 1);
    let ids: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
    let picked = g.select_per_row(lsm, &ids);
    let total = g.sum(picked);
    g.neg(total)
}

/// Analytic `KL(N(u, diag(s^2)) || N(0, I))`, summed over positions and
/// dimensions. The dummy latent participates unless excluded.
pub fn kl_term(g: &mut Graph, latent: &LatentBatch, include_dummy: bool) -> NodeId {
    let (mut u, mut s) = (latent.u, latent.s);
    if !include_dummy {
        let rows = g.value(u).rows();
        u = g.rows_slice(u, 1, rows - 1);
        s = g.rows_slice(s, 1, rows - 1);
    }
    let u2 = g.mul(u, u);
    let s2 = g.mul(s, s);
    let ln_s = g.ln(s);
    let ln_s2 = g.scale(ln_s, 2.0);
    let a = g.add(u2, s2);
    let b = g.sub(a, ln_s2);
    let c = g.add_const(b, -1.0);
    let total = g.sum(c);
    g.scale(total, 0.5)
}

/// Emission log-probabilities `[states, vocab]` from latents through a
/// language's decoder matrix (no bias, matching the emission softmax).
fn emission_log_probs(g: &mut Graph, ps: &ParamSet, w_v: ParamId, y: NodeId) -> NodeId {
    let w = g.param(ps, w_v);
    let logits = g.matmul(y, w);
    g.log_softmax(logits, 1)
}

/// `-sum_j log( 1/(I+1) sum_i p(f_j | y_i) )`.
pub fn ibm1_alignment_loss(
    g: &mut Graph,
    ps: &ParamSet,
    emit: &DecoderIds,
    latent: &LatentBatch,
    source_ids: &[u32],
) -> NodeId {
    let lsm = emission_log_probs(g, ps, emit.w_v, latent.y);
    let states = g.value(lsm).rows();
    let mut total: Option<NodeId> = None;
    for &f in source_ids {
        let col = g.col(lsm, f as usize);
        let lse = g.logsumexp(col, 0);
        total = Some(match total {
            Some(t) => g.add(t, lse),
            None => lse,
        });
    }
    let sum = total.expect("ibm1_alignment_loss: empty source sentence");
    let neg = g.neg(sum);
    g.add_const(neg, source_ids.len() as f64 * (states as f64).ln())
}

/// Log-transition matrix `[states, states]`: row `i_prev` is the softmax of
/// the jump logits `W_delta y_{i_prev}` restricted to the feasible landings
/// `0..states`, renormalized.
fn transition_matrix(
    g: &mut Graph,
    ps: &ParamSet,
    w_delta: ParamId,
    latent: &LatentBatch,
    states: usize,
) -> NodeId {
    assert!(
        states as i64 <= super::JUMP_WINDOW + 1,
        "sentence too long for the jump window: {} states > {}",
        states,
        super::JUMP_WINDOW + 1
    );
    let wd = g.param(ps, w_delta);
    let mut rows = Vec::with_capacity(states);
    for i_prev in 0..states {
        let y_prev = g.row(latent.y, i_prev);
        let logits = g.matmul(y_prev, wd);
        let idx: Vec<usize> = (0..states)
            .map(|i| (i as i64 - i_prev as i64 + super::JUMP_WINDOW) as usize)
            .collect();
        let feasible = g.gather(logits, &idx);
        rows.push(g.log_softmax(feasible, 0));
    }
    g.stack_rows(&rows)
}

/// Emission column nodes (one `[states]` vector per source word) plus the
/// transition matrix: everything the HMM recursions need.
struct HmmParts {
    trans: NodeId,
    emit_cols: Vec<NodeId>,
}

fn hmm_parts(
    g: &mut Graph,
    ps: &ParamSet,
    emit: &DecoderIds,
    jump: &DecoderIds,
    latent: &LatentBatch,
    source_ids: &[u32],
) -> HmmParts {
    let lsm = emission_log_probs(g, ps, emit.w_v, latent.y);
    let states = g.value(lsm).rows();
    let trans = transition_matrix(g, ps, jump.w_delta, latent, states);
    let emit_cols = source_ids
        .iter()
        .map(|&f| g.col(lsm, f as usize))
        .collect();
    HmmParts { trans, emit_cols }
}

/// Forward recursion; returns the per-word alpha vectors.
fn hmm_alphas(g: &mut Graph, parts: &HmmParts) -> Vec<NodeId> {
    let mut alphas = Vec::with_capacity(parts.emit_cols.len());
    let init = g.row(parts.trans, 0);
    let first = g.add(init, parts.emit_cols[0]);
    alphas.push(first);
    for col in &parts.emit_cols[1..] {
        let prev = *alphas.last().unwrap();
        let m = g.add_col_vec(parts.trans, prev);
        let lse = g.logsumexp(m, 0);
        alphas.push(g.add(lse, *col));
    }
    alphas
}

/// `-log sum_paths prod_j p(a_j | a_{j-1}) p(f_j | y_{a_j})`, the chain
/// starting from the virtual `a_0 = 0` (the dummy/NULL position).
pub fn hmm_alignment_loss(
    g: &mut Graph,
    ps: &ParamSet,
    emit: &DecoderIds,
    jump: &DecoderIds,
    latent: &LatentBatch,
    source_ids: &[u32],
) -> NodeId {
    let parts = hmm_parts(g, ps, emit, jump, latent, source_ids);
    let alphas = hmm_alphas(g, &parts);
    let total = g.logsumexp(*alphas.last().unwrap(), 0);
    g.neg(total)
}

/// Differentiable alignment posteriors `[J, states]` under the current
/// latent sample: softmax rows for IBM-1, forward-backward for the HMM.
pub fn alignment_posteriors(
    g: &mut Graph,
    ps: &ParamSet,
    family: Family,
    emit: &DecoderIds,
    jump: &DecoderIds,
    latent: &LatentBatch,
    source_ids: &[u32],
) -> NodeId {
    match family {
        Family::Ibm1 => {
            let lsm = emission_log_probs(g, ps, emit.w_v, latent.y);
            let rows: Vec<NodeId> = source_ids
                .iter()
                .map(|&f| {
                    let col = g.col(lsm, f as usize);
                    g.softmax(col, 0)
                })
                .collect();
            g.stack_rows(&rows)
        }
        Family::Hmm => {
            let parts = hmm_parts(g, ps, emit, jump, latent, source_ids);
            let alphas = hmm_alphas(g, &parts);
            let j_max = parts.emit_cols.len();
            let states = g.value(parts.trans).rows();
            let mut betas = vec![NodeId(0); j_max];
            betas[j_max - 1] = g.constant(Tensor::zeros(&[states]));
            for j in (0..j_max - 1).rev() {
                let v0 = g.add(parts.emit_cols[j + 1], betas[j + 1]);
                let m = g.add_row_vec(parts.trans, v0);
                betas[j] = g.logsumexp(m, 1);
            }
            let rows: Vec<NodeId> = alphas
                .iter()
                .zip(&betas)
                .map(|(&a, &b)| {
                    let ab = g.add(a, b);
                    g.softmax(ab, 0)
                })
                .collect();
            g.stack_rows(&rows)
        }
    }
}

/// Materializes the neural emission and transition scores for one latent
/// batch as a plain log-space lattice; inference decodes it with the same
/// machinery as the count-based models.
pub fn inference_scores(
    g: &mut Graph,
    model: &VaeModel,
    dir: Direction,
    latent: &LatentBatch,
    emitted_ids: &[u32],
) -> crate::lattice::Lattice {
    let parts = hmm_parts(
        g,
        &model.params,
        model.emit_decoder(dir),
        model.recon_decoder(dir),
        latent,
        emitted_ids,
    );
    let states = g.value(parts.trans).rows();
    let trans: Vec<Vec<f64>> = (0..states)
        .map(|r| g.value(parts.trans).row_slice(r).to_vec())
        .collect();
    let emis: Vec<Vec<f64>> = parts
        .emit_cols
        .iter()
        .map(|&c| g.value(c).data().to_vec())
        .collect();
    crate::lattice::Lattice::new(emis, trans)
}

/// Three-term agreement cost between directional posteriors.
///
/// `gamma_fwd` is `[J, I+1]` (source words against target positions),
/// `gamma_rev` is `[I, J+1]`. Returns
/// `sum_{i>0,j>0} |gamma_fwd[j][i] - gamma_rev[i][j]|` plus the two null
/// consistency terms `sum_j |1 - gamma_fwd[j][0] - sum_i gamma_rev[i][j]|`
/// and its mirror.
pub fn agreement_cost(g: &mut Graph, gamma_fwd: NodeId, gamma_rev: NodeId) -> NodeId {
    for (name, gamma) in [("fwd", gamma_fwd), ("rev", gamma_rev)] {
        let v = g.value(gamma);
        for r in 0..v.rows() {
            let sum: f64 = v.row_slice(r).iter().sum();
            assert!(
                (sum - 1.0).abs() < 1e-9,
                "agreement_cost: {} posterior row {} sums to {}",
                name,
                r,
                sum
            );
        }
    }
    let j_max = g.value(gamma_fwd).rows();
    let i_max = g.value(gamma_rev).rows();
    assert_eq!(
        g.value(gamma_fwd).cols(),
        i_max + 1,
        "agreement_cost: fwd posterior is [J, I+1], rev is [I, J+1]"
    );
    assert_eq!(g.value(gamma_rev).cols(), j_max + 1, "agreement_cost: shape");

    let a1 = g.cols_slice(gamma_fwd, 1, i_max);
    let b1 = g.cols_slice(gamma_rev, 1, j_max);
    let b1t = g.transpose(b1);
    let diff = g.sub(a1, b1t);
    let abs = g.abs(diff);
    let non_null = g.sum(abs);

    // |1 - p(a_j = 0) - sum_i p(b_i = j)| per source word j.
    let a0 = g.col(gamma_fwd, 0);
    let b_mass = g.sum_axis(b1, 0);
    let fwd_sum = g.add(a0, b_mass);
    let fwd_neg = g.neg(fwd_sum);
    let fwd_gap = g.add_const(fwd_neg, 1.0);
    let fwd_abs = g.abs(fwd_gap);
    let null_fwd = g.sum(fwd_abs);

    let b0 = g.col(gamma_rev, 0);
    let a_mass = g.sum_axis(a1, 0);
    let rev_sum = g.add(b0, a_mass);
    let rev_neg = g.neg(rev_sum);
    let rev_gap = g.add_const(rev_neg, 1.0);
    let rev_abs = g.abs(rev_gap);
    let null_rev = g.sum(rev_abs);

    let n = g.add(non_null, null_fwd);
    g.add(n, null_rev)
}

/// Raw (unweighted) values of the three ELBO terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct ElboTerms {
    pub recon: f64,
    pub align: f64,
    pub kl: f64,
}

/// One direction's weighted ELBO on a pair, all terms sharing the latent
/// sample in `noise`. Returns the total node, the raw term values, and the
/// latent batch (for reuse by agreement costs).
pub fn elbo(
    g: &mut Graph,
    model: &VaeModel,
    dir: Direction,
    src: &Sentence,
    tgt: &Sentence,
    weights: &ObjectiveWeights,
    noise: Tensor,
) -> Result<(NodeId, ElboTerms, LatentBatch)> {
    let (encoded, emitted) = match dir {
        Direction::Forward => (tgt, src),
        Direction::Reverse => (src, tgt),
    };
    let enc = model.encoder(dir)?;
    let latent = encode(g, &model.params, enc, &encoded.ids, noise);
    let recon = reconstruction_loss(
        g,
        &model.params,
        model.recon_decoder(dir),
        &latent,
        &encoded.ids,
    );
    let align = match model.cfg.family {
        Family::Ibm1 => ibm1_alignment_loss(
            g,
            &model.params,
            model.emit_decoder(dir),
            &latent,
            &emitted.ids,
        ),
        Family::Hmm => hmm_alignment_loss(
            g,
            &model.params,
            model.emit_decoder(dir),
            model.recon_decoder(dir),
            &latent,
            &emitted.ids,
        ),
    };
    let kl = kl_term(g, &latent, model.cfg.kl_include_dummy);
    let terms = ElboTerms {
        recon: g.value(recon).scalar_value(),
        align: g.value(align).scalar_value(),
        kl: g.value(kl).scalar_value(),
    };
    let wr = g.scale(recon, weights.alpha);
    let wa = g.scale(align, weights.beta);
    let wk = g.scale(kl, weights.gamma);
    let ra = g.add(wr, wa);
    let total = g.add(ra, wk);
    Ok((total, terms, latent))
}

/// Breakdown of the joint objective: term names with raw values, six entries
/// for +SP, nine with the agreement cost.
#[derive(Debug, Clone)]
pub struct JointTerms {
    pub terms: Vec<(&'static str, f64)>,
}

/// Joint +SP objective: both directions' weighted ELBOs over shared language
/// decoders, optionally plus the delta-weighted agreement cost (+AC).
#[allow(clippy::too_many_arguments)]
pub fn joint_sp_objective(
    g: &mut Graph,
    model: &VaeModel,
    src: &Sentence,
    tgt: &Sentence,
    weights: &ObjectiveWeights,
    noise_fwd: Tensor,
    noise_rev: Tensor,
    agreement: bool,
) -> Result<(NodeId, JointTerms)> {
    if !model.cfg.shared || !model.is_joint() {
        return Err(CoreError::Config(
            "joint objective requires a +SP model with both encoders".into(),
        ));
    }
    let (fwd_total, fwd_terms, fwd_latent) =
        elbo(g, model, Direction::Forward, src, tgt, weights, noise_fwd)?;
    let (rev_total, rev_terms, rev_latent) =
        elbo(g, model, Direction::Reverse, src, tgt, weights, noise_rev)?;
    let mut total = g.add(fwd_total, rev_total);
    let mut terms = vec![
        ("recon_fwd", fwd_terms.recon),
        ("align_fwd", fwd_terms.align),
        ("kl_fwd", fwd_terms.kl),
        ("recon_rev", rev_terms.recon),
        ("align_rev", rev_terms.align),
        ("kl_rev", rev_terms.kl),
    ];
    if agreement {
        let gamma_fwd = alignment_posteriors(
            g,
            &model.params,
            model.cfg.family,
            model.emit_decoder(Direction::Forward),
            model.recon_decoder(Direction::Forward),
            &fwd_latent,
            &src.ids,
        );
        let gamma_rev = alignment_posteriors(
            g,
            &model.params,
            model.cfg.family,
            model.emit_decoder(Direction::Reverse),
            model.recon_decoder(Direction::Reverse),
            &rev_latent,
            &tgt.ids,
        );
        let parts = agreement_parts(g, gamma_fwd, gamma_rev);
        terms.push(("agree_links", g.value(parts.0).scalar_value()));
        terms.push(("agree_null_fwd", g.value(parts.1).scalar_value()));
        terms.push(("agree_null_rev", g.value(parts.2).scalar_value()));
        let s0 = g.add(parts.0, parts.1);
        let agree = g.add(s0, parts.2);
        let weighted = g.scale(agree, weights.delta);
        total = g.add(total, weighted);
    }
    Ok((total, JointTerms { terms }))
}

/// The three agreement summands as separate nodes (used for the nine-term
/// breakdown; `agreement_cost` is their sum).
fn agreement_parts(g: &mut Graph, gamma_fwd: NodeId, gamma_rev: NodeId) -> (NodeId, NodeId, NodeId) {
    let j_max = g.value(gamma_fwd).rows();
    let i_max = g.value(gamma_rev).rows();
    let a1 = g.cols_slice(gamma_fwd, 1, i_max);
    let b1 = g.cols_slice(gamma_rev, 1, j_max);
    let b1t = g.transpose(b1);
    let diff = g.sub(a1, b1t);
    let abs = g.abs(diff);
    let non_null = g.sum(abs);

    let a0 = g.col(gamma_fwd, 0);
    let b_mass = g.sum_axis(b1, 0);
    let f_sum = g.add(a0, b_mass);
    let f_neg = g.neg(f_sum);
    let f_gap = g.add_const(f_neg, 1.0);
    let f_abs = g.abs(f_gap);
    let null_fwd = g.sum(f_abs);

    let b0 = g.col(gamma_rev, 0);
    let a_mass = g.sum_axis(a1, 0);
    let r_sum = g.add(b0, a_mass);
    let r_neg = g.neg(r_sum);
    let r_gap = g.add_const(r_neg, 1.0);
    let r_abs = g.abs(r_gap);
    let null_rev = g.sum(r_abs);
    (non_null, null_fwd, null_rev)
}

/// Plain autoencoding on a monolingual sentence:
/// `mu * (alpha * reconstruction + gamma * KL)`.
pub fn mono_objective(
    g: &mut Graph,
    model: &VaeModel,
    dir: Direction,
    sentence: &Sentence,
    weights: &ObjectiveWeights,
    noise: Tensor,
) -> Result<(NodeId, ElboTerms)> {
    let enc = model.encoder(dir)?;
    let latent = encode(g, &model.params, enc, &sentence.ids, noise);
    let recon = reconstruction_loss(
        g,
        &model.params,
        model.recon_decoder(dir),
        &latent,
        &sentence.ids,
    );
    let kl = kl_term(g, &latent, model.cfg.kl_include_dummy);
    let terms = ElboTerms {
        recon: g.value(recon).scalar_value(),
        align: 0.0,
        kl: g.value(kl).scalar_value(),
    };
    let wr = g.scale(recon, weights.alpha);
    let wk = g.scale(kl, weights.gamma);
    let s = g.add(wr, wk);
    Ok((g.scale(s, weights.mu), terms))
}

/// Denoising variant: encode the *noisy* sentence and pay the alignment cost
/// of generating the clean one from its latents (IBM-1 by default), plus the
/// KL of the noisy latents: `mu * (beta * align + gamma * KL)`.
pub fn mono_noise_objective(
    g: &mut Graph,
    model: &VaeModel,
    dir: Direction,
    clean: &Sentence,
    noisy: &Sentence,
    weights: &ObjectiveWeights,
    noise: Tensor,
) -> Result<(NodeId, ElboTerms)> {
    let enc = model.encoder(dir)?;
    let latent = encode(g, &model.params, enc, &noisy.ids, noise);
    let dec = model.recon_decoder(dir);
    let align = if model.cfg.noise_family_ibm1 || model.cfg.family == Family::Ibm1 {
        ibm1_alignment_loss(g, &model.params, dec, &latent, &clean.ids)
    } else {
        hmm_alignment_loss(g, &model.params, dec, dec, &latent, &clean.ids)
    };
    let kl = kl_term(g, &latent, model.cfg.kl_include_dummy);
    let terms = ElboTerms {
        recon: 0.0,
        align: g.value(align).scalar_value(),
        kl: g.value(kl).scalar_value(),
    };
    let wa = g.scale(align, weights.beta);
    let wk = g.scale(kl, weights.gamma);
    let s = g.add(wa, wk);
    Ok((g.scale(s, weights.mu), terms))
}
