//! VAE training loop and deterministic inference.
//!
//! One latent sample per sentence per step, shared by every term it feeds;
//! the dummy draw is taken once per batch so y_0 is identical across the
//! pairs of a step. Gradients are averaged per batch (parallel and
//! monolingual contributions each over their own batch), globally
//! norm-clipped and applied with Adam. A NaN in any term aborts with the
//! term's name. Inference encodes with zero noise (y = u) and decodes by
//! posterior argmax (IBM-1) or Viterbi (HMM).

use super::encoder::encode;
use super::losses::{
    alignment_posteriors, elbo, joint_sp_objective, mono_noise_objective, mono_objective,
};
use super::{Direction, Family, NoiseConfig, ObjectiveWeights, VaeModel};
use crate::corpus::alignment::{AlignmentSet, LinkFlag};
use crate::corpus::Sentence;
use crate::error::{CoreError, Result};
use crate::lattice::Lattice;
use crate::noise;
use crate::tensor::adam::{clip_global_norm, AdamConfig, AdamState};
use crate::tensor::graph::Graph;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Pair = (Sentence, Sentence);

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub weights: ObjectiveWeights,
    /// Add the three posterior-agreement terms (+AC; needs a +SP model).
    pub agreement: bool,
    /// Add the plain monolingual autoencoding term for mono batches.
    pub mono: bool,
    /// Add the denoising term for mono batches.
    pub mono_noise: Option<NoiseConfig>,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 100,
            adam: AdamConfig::default(),
            seed: 1,
            weights: ObjectiveWeights::default(),
            agreement: false,
            mono: false,
            mono_noise: None,
            grad_clip: 5.0,
        }
    }
}

/// Per-epoch means of the raw objective terms (per sentence pair; joint
/// models sum their two directions). `encoded_tokens` allows per-token
/// views of the reconstruction and KL columns.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub align: f64,
    pub kl: f64,
    pub agree: f64,
    pub mono: f64,
    pub total: f64,
    pub encoded_tokens: usize,
    pub pairs: usize,
}

impl EpochStats {
    pub fn tsv_header() -> &'static str {
        "epoch\trecon\talign\tkl\tagree\tmono\ttotal"
    }

    pub fn to_tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.recon, self.align, self.kl, self.agree, self.mono, self.total
        )
    }

    pub fn kl_per_token(&self) -> f64 {
        self.kl * self.pairs as f64 / self.encoded_tokens as f64
    }

    pub fn recon_per_token(&self) -> f64 {
        self.recon * self.pairs as f64 / self.encoded_tokens as f64
    }
}

fn noise_tensor(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| crate::bruteforce::standard_normal(rng))
        .collect();
    Tensor::new(vec![rows, cols], data)
}

/// Sentence noise: fresh per-position rows under a shared dummy row.
fn sentence_noise(dummy: &Tensor, len: usize, latent: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let mut data = dummy.data().to_vec();
    data.extend((0..len * latent).map(|_| crate::bruteforce::standard_normal(rng)));
    Tensor::new(vec![len + 1, latent], data)
}

fn check_finite(value: f64, term: &str, pair_index: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(CoreError::Diverged(format!(
            "non-finite {} term on pair {}",
            term, pair_index
        )))
    }
}

/// Trains in place. `mono` sentences carry the direction whose language they
/// belong to; mono batches are interleaved 1:1 with parallel batches.
pub fn vae_train(
    model: &mut VaeModel,
    pairs: &[Pair],
    mono: &[(Direction, Sentence)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if cfg.agreement && !model.cfg.shared {
        return Err(CoreError::Config(
            "+AC requires the shared (+SP) joint model".into(),
        ));
    }
    if (cfg.mono || cfg.mono_noise.is_some()) && mono.is_empty() {
        return Err(CoreError::Config(
            "monolingual objective enabled but no monolingual data given".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let latent = model.cfg.latent;
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut mono_cursor = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = EpochStats {
            epoch,
            recon: 0.0,
            align: 0.0,
            kl: 0.0,
            agree: 0.0,
            mono: 0.0,
            total: 0.0,
            encoded_tokens: 0,
            pairs: 0,
        };

        for chunk in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Tensor> = model
                .params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect();
            let dummy_fwd = noise_tensor(1, latent, &mut rng);
            let dummy_rev = noise_tensor(1, latent, &mut rng);

            for &idx in chunk {
                let (src, tgt) = &pairs[idx];
                let mut g = Graph::new();
                let total_node = if model.cfg.shared {
                    let nf = sentence_noise(&dummy_fwd, tgt.len(), latent, &mut rng);
                    let nr = sentence_noise(&dummy_rev, src.len(), latent, &mut rng);
                    let (total, breakdown) = joint_sp_objective(
                        &mut g,
                        model,
                        src,
                        tgt,
                        &cfg.weights,
                        nf,
                        nr,
                        cfg.agreement,
                    )?;
                    for (name, v) in &breakdown.terms {
                        check_finite(*v, name, idx)?;
                        match *name {
                            "recon_fwd" | "recon_rev" => acc.recon += v,
                            "align_fwd" | "align_rev" => acc.align += v,
                            "kl_fwd" | "kl_rev" => acc.kl += v,
                            _ => acc.agree += v,
                        }
                    }
                    acc.encoded_tokens += src.len() + tgt.len();
                    total
                } else {
                    let nf = sentence_noise(&dummy_fwd, tgt.len(), latent, &mut rng);
                    let (total, terms, _) =
                        elbo(&mut g, model, Direction::Forward, src, tgt, &cfg.weights, nf)?;
                    check_finite(terms.recon, "reconstruction", idx)?;
                    check_finite(terms.align, "alignment", idx)?;
                    check_finite(terms.kl, "kl", idx)?;
                    acc.recon += terms.recon;
                    acc.align += terms.align;
                    acc.kl += terms.kl;
                    acc.encoded_tokens += tgt.len();
                    total
                };
                check_finite(g.value(total_node).scalar_value(), "total", idx)?;
                acc.total += g.value(total_node).scalar_value();
                acc.pairs += 1;
                g.backward(total_node);
                let scale = 1.0 / chunk.len() as f64;
                for (a, d) in grads.iter_mut().zip(g.param_grads(&model.params)) {
                    for (x, y) in a.data_mut().iter_mut().zip(d.data()) {
                        *x += y * scale;
                    }
                }
            }

            // Interleaved monolingual batch.
            if (cfg.mono || cfg.mono_noise.is_some()) && !mono.is_empty() {
                let take = chunk.len().min(mono.len());
                let scale = 1.0 / take as f64;
                for _ in 0..take {
                    let (dir, sent) = &mono[mono_cursor % mono.len()];
                    mono_cursor += 1;
                    let mut g = Graph::new();
                    let mut mono_total = 0.0;
                    if cfg.mono {
                        let dummy = match dir {
                            Direction::Forward => &dummy_fwd,
                            Direction::Reverse => &dummy_rev,
                        };
                        let n = sentence_noise(dummy, sent.len(), latent, &mut rng);
                        let (node, terms) =
                            mono_objective(&mut g, model, *dir, sent, &cfg.weights, n)?;
                        check_finite(terms.recon, "mono reconstruction", mono_cursor)?;
                        mono_total += g.value(node).scalar_value();
                        g.backward(node);
                        for (a, d) in grads.iter_mut().zip(g.param_grads(&model.params)) {
                            for (x, y) in a.data_mut().iter_mut().zip(d.data()) {
                                *x += y * scale;
                            }
                        }
                    }
                    if let Some(nc) = cfg.mono_noise {
                        let noisy = noise::corrupt(sent, &nc, &mut rng);
                        let dummy = match dir {
                            Direction::Forward => &dummy_fwd,
                            Direction::Reverse => &dummy_rev,
                        };
                        let n = sentence_noise(dummy, noisy.len(), latent, &mut rng);
                        let mut g = Graph::new();
                        let (node, terms) = mono_noise_objective(
                            &mut g,
                            model,
                            *dir,
                            sent,
                            &noisy,
                            &cfg.weights,
                            n,
                        )?;
                        check_finite(terms.align, "mono denoising", mono_cursor)?;
                        mono_total += g.value(node).scalar_value();
                        g.backward(node);
                        for (a, d) in grads.iter_mut().zip(g.param_grads(&model.params)) {
                            for (x, y) in a.data_mut().iter_mut().zip(d.data()) {
                                *x += y * scale;
                            }
                        }
                    }
                    acc.mono += mono_total;
                }
            }

            clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(&mut model.params, &grads);
        }

        let n = acc.pairs.max(1) as f64;
        acc.recon /= n;
        acc.align /= n;
        acc.kl /= n;
        acc.agree /= n;
        acc.mono /= n;
        acc.total /= n;
        stats.push(acc);
    }
    Ok(stats)
}

/// Zero-noise latents for one sentence, values only.
fn infer_latents(model: &VaeModel, dir: Direction, encoded: &Sentence) -> Result<(Graph, super::encoder::LatentBatch)> {
    let mut g = Graph::new();
    let enc = model.encoder(dir)?;
    let zero = Tensor::zeros(&[encoded.len() + 1, model.cfg.latent]);
    let lb = encode(&mut g, &model.params, enc, &encoded.ids, zero);
    Ok((g, lb))
}

/// Deterministic alignment of one pair in the given direction. Links whose
/// best position is 0 (NULL) are left out.
pub fn vae_align(
    model: &VaeModel,
    dir: Direction,
    src: &Sentence,
    tgt: &Sentence,
) -> Result<AlignmentSet> {
    let (encoded, emitted) = match dir {
        Direction::Forward => (tgt, src),
        Direction::Reverse => (src, tgt),
    };
    let (mut g, lb) = infer_latents(model, dir, encoded)?;
    let path: Vec<usize> = match model.cfg.family {
        Family::Ibm1 => {
            let gamma = alignment_posteriors(
                &mut g,
                &model.params,
                Family::Ibm1,
                model.emit_decoder(dir),
                model.recon_decoder(dir),
                &lb,
                &emitted.ids,
            );
            let v = g.value(gamma);
            (0..v.rows())
                .map(|r| {
                    let row = v.row_slice(r);
                    let mut best = 0usize;
                    let mut bp = f64::NEG_INFINITY;
                    for (i, &p) in row.iter().enumerate() {
                        if p > bp {
                            bp = p;
                            best = i;
                        }
                    }
                    best
                })
                .collect()
        }
        Family::Hmm => {
            let lat = hmm_inference_lattice(&mut g, model, dir, &lb, &emitted.ids);
            lat.viterbi()
        }
    };
    // `path[j]` aligns emitted word j+1 to encoded position path[j]. The
    // result stays in the direction's native orientation: forward links are
    // (source, target), reverse links are (target, source) like any
    // swap-trained directional model, and get transposed downstream.
    let (j_len, i_len) = (emitted.len() as u32, encoded.len() as u32);
    let mut out = AlignmentSet::new(j_len, i_len);
    for (j, &i) in path.iter().enumerate() {
        if i > 0 {
            out.insert(j as u32 + 1, i as u32, LinkFlag::Sure);
        }
    }
    Ok(out)
}

/// Materializes the neural emission/transition scores as a plain lattice
/// (used for Viterbi decoding and shared with the count-based code).
fn hmm_inference_lattice(
    g: &mut Graph,
    model: &VaeModel,
    dir: Direction,
    lb: &super::encoder::LatentBatch,
    emitted_ids: &[u32],
) -> Lattice {
    use super::losses::inference_scores;
    inference_scores(g, model, dir, lb, emitted_ids)
}

/// Fraction of encoded words whose reconstruction argmax is the word itself,
/// with deterministic latents (y = u).
pub fn reconstruction_accuracy(
    model: &VaeModel,
    dir: Direction,
    sentences: &[&Sentence],
) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for sent in sentences {
        let (mut g, lb) = infer_latents(model, dir, sent)?;
        let dec = model.recon_decoder(dir);
        let words = g.rows_slice(lb.y, 1, sent.len());
        let w_v = g.param(&model.params, dec.w_v);
        let b_v = g.param(&model.params, dec.b_v);
        let lin = g.matmul(words, w_v);
        let logits = g.add_row_vec(lin, b_v);
        let v = g.value(logits);
        for (r, &gold) in sent.ids.iter().enumerate() {
            let row = v.row_slice(r);
            let mut best = 0usize;
            let mut bv = f64::NEG_INFINITY;
            for (i, &x) in row.iter().enumerate() {
                if x > bv {
                    bv = x;
                    best = i;
                }
            }
            total += 1;
            if best == gold as usize {
                hits += 1;
            }
        }
    }
    Ok(if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    })
}
