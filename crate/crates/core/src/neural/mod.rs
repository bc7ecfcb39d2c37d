//! Neural aligners: EM-trained emission-network baselines and the VAE
//! models with parameter sharing, agreement costs and monolingual
//! objectives.
//!
//! A [`VaeModel`] holds one encoder per trained direction and one decoder
//! per *language*. In the forward (source -> target) direction the target
//! language is encoded; its decoder reconstructs the target words and owns
//! the jump matrix for that direction, while the source language's decoder
//! matrix (without bias) emits source words. Under joint training the two
//! language decoders are therefore shared between the directions by
//! construction, which is exactly the +SP scheme: the network reconstructing
//! a language and the network emitting it in the opposite direction are one
//! object.

pub mod encoder;
pub mod losses;
pub mod neural_em;
pub mod train;

use crate::error::{CoreError, Result};
use crate::tensor::lstm::LstmParams;
use crate::tensor::params::{ParamId, ParamSet};
use crate::tensor::Tensor;
use rand::Rng;

/// Alignment family of the latent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Ibm1,
    Hmm,
}

/// Jump support of the neural transition model: `W_delta` has one column per
/// jump in `[-150, +150]`.
pub const JUMP_WINDOW: i64 = crate::classic::JUMP_WINDOW;
pub const JUMP_BUCKETS: usize = crate::classic::JUMP_BUCKETS;

/// Term weights of the training objective: alpha (reconstruction), beta
/// (alignment), gamma (KL), delta (agreement), mu (monolingual).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub mu: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            alpha: 10.0,
            beta: 50.0,
            gamma: 0.5,
            delta: 1.0,
            mu: 1.0,
        }
    }
}

/// Word-drop / local-shuffle noise for the monolingual denoising objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub p_drop: f64,
    /// Maximum displacement; every word moves by at most this many positions.
    pub shuffle_k: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_drop: 0.1,
            shuffle_k: 3,
        }
    }
}

/// The two training directions. Forward aligns source words to the target
/// sentence (the target language is encoded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// The two languages of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lang {
    Src,
    Tgt,
}

impl Direction {
    /// Language being encoded / reconstructed in this direction.
    pub fn encoded_lang(self) -> Lang {
        match self {
            Direction::Forward => Lang::Tgt,
            Direction::Reverse => Lang::Src,
        }
    }

    /// Language being emitted through the alignment model.
    pub fn emitted_lang(self) -> Lang {
        match self {
            Direction::Forward => Lang::Src,
            Direction::Reverse => Lang::Tgt,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeConfig {
    pub family: Family,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    /// Train both directions jointly with shared language decoders (+SP).
    pub shared: bool,
    /// Count the dummy latent y_0 in the KL term.
    pub kl_include_dummy: bool,
    /// Use the IBM-1 lattice for the monolingual denoising term even when
    /// the model family is HMM.
    pub noise_family_ibm1: bool,
}

impl VaeConfig {
    pub fn new(family: Family, src_vocab: usize, tgt_vocab: usize) -> Self {
        VaeConfig {
            family,
            src_vocab,
            tgt_vocab,
            emb_dim: 128,
            hidden: 64,
            latent: 64,
            shared: false,
            kl_include_dummy: true,
            noise_family_ibm1: true,
        }
    }

    fn vocab(&self, lang: Lang) -> usize {
        match lang {
            Lang::Src => self.src_vocab,
            Lang::Tgt => self.tgt_vocab,
        }
    }
}

/// Parameter handles for one encoder (token embeddings, two bidirectional
/// LSTM layers, projection to the latent mean and scale).
#[derive(Debug, Clone, Copy)]
pub struct EncoderIds {
    pub emb: ParamId,
    pub l1_fwd: LstmParams,
    pub l1_bwd: LstmParams,
    pub l2_fwd: LstmParams,
    pub l2_bwd: LstmParams,
    pub w_h: ParamId,
    pub w_u: ParamId,
    pub b_u: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
}

/// Parameter handles for one language's decoder: vocabulary projection (with
/// bias for reconstruction, without for emission) and the jump matrix used
/// when this language is the encoded side.
#[derive(Debug, Clone, Copy)]
pub struct DecoderIds {
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_delta: ParamId,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub cfg: VaeConfig,
    pub params: ParamSet,
    enc_tgt: EncoderIds,
    enc_src: Option<EncoderIds>,
    dec_src: DecoderIds,
    dec_tgt: DecoderIds,
}

fn init_encoder(
    ps: &mut ParamSet,
    prefix: &str,
    vocab: usize,
    cfg: &VaeConfig,
    rng: &mut impl Rng,
) -> EncoderIds {
    let eb = 1.0 / (cfg.emb_dim as f64).sqrt();
    let hb = 1.0 / (2.0 * cfg.hidden as f64).sqrt();
    let lb = 1.0 / (cfg.latent as f64).sqrt();
    EncoderIds {
        emb: ps.add(
            format!("{prefix}.emb"),
            Tensor::uniform(&[vocab, cfg.emb_dim], eb, rng),
        ),
        l1_fwd: LstmParams::init(ps, &format!("{prefix}.l1.fwd"), cfg.emb_dim, cfg.hidden, rng),
        l1_bwd: LstmParams::init(ps, &format!("{prefix}.l1.bwd"), cfg.emb_dim, cfg.hidden, rng),
        l2_fwd: LstmParams::init(
            ps,
            &format!("{prefix}.l2.fwd"),
            2 * cfg.hidden,
            cfg.hidden,
            rng,
        ),
        l2_bwd: LstmParams::init(
            ps,
            &format!("{prefix}.l2.bwd"),
            2 * cfg.hidden,
            cfg.hidden,
            rng,
        ),
        w_h: ps.add(
            format!("{prefix}.w_h"),
            Tensor::uniform(&[2 * cfg.hidden, cfg.latent], hb, rng),
        ),
        w_u: ps.add(
            format!("{prefix}.w_u"),
            Tensor::uniform(&[cfg.latent, cfg.latent], lb, rng),
        ),
        b_u: ps.add(format!("{prefix}.b_u"), Tensor::zeros(&[cfg.latent])),
        w_s: ps.add(
            format!("{prefix}.w_s"),
            Tensor::uniform(&[cfg.latent, cfg.latent], lb, rng),
        ),
        b_s: ps.add(format!("{prefix}.b_s"), Tensor::zeros(&[cfg.latent])),
    }
}

fn init_decoder(
    ps: &mut ParamSet,
    prefix: &str,
    vocab: usize,
    cfg: &VaeConfig,
    rng: &mut impl Rng,
) -> DecoderIds {
    let lb = 1.0 / (cfg.latent as f64).sqrt();
    DecoderIds {
        w_v: ps.add(
            format!("{prefix}.W_v"),
            Tensor::uniform(&[cfg.latent, vocab], lb, rng),
        ),
        b_v: ps.add(format!("{prefix}.b_v"), Tensor::zeros(&[vocab])),
        w_delta: ps.add(
            format!("{prefix}.W_delta"),
            Tensor::uniform(&[cfg.latent, JUMP_BUCKETS], lb, rng),
        ),
    }
}

impl VaeModel {
    /// Fresh model with all randomness drawn from `seed`.
    pub fn seeded(cfg: VaeConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        VaeModel::new(cfg, &mut rng)
    }

    pub fn new(cfg: VaeConfig, rng: &mut impl Rng) -> Self {
        let mut ps = ParamSet::new();
        let enc_tgt = init_encoder(&mut ps, "enc.tgt", cfg.tgt_vocab, &cfg, rng);
        let enc_src = cfg
            .shared
            .then(|| init_encoder(&mut ps, "enc.src", cfg.src_vocab, &cfg, rng));
        let dec_src = init_decoder(&mut ps, "dec.src", cfg.src_vocab, &cfg, rng);
        let dec_tgt = init_decoder(&mut ps, "dec.tgt", cfg.tgt_vocab, &cfg, rng);
        VaeModel {
            cfg,
            params: ps,
            enc_tgt,
            enc_src,
            dec_src,
            dec_tgt,
        }
    }

    /// Rebinds handles onto an existing parameter set (checkpoint load).
    pub fn from_params(cfg: VaeConfig, params: ParamSet) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
        use rand::SeedableRng;
        let fresh = VaeModel::new(cfg.clone(), &mut rng);
        if fresh.params.len() != params.len() {
            return Err(CoreError::Data(format!(
                "checkpoint has {} parameters, model wants {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for ((want_name, want_t), (got_name, got_t)) in fresh.params.iter().zip(params.iter()) {
            if want_name != got_name || want_t.shape() != got_t.shape() {
                return Err(CoreError::Data(format!(
                    "checkpoint mismatch: expected {} {:?}, found {} {:?}",
                    want_name,
                    want_t.shape(),
                    got_name,
                    got_t.shape()
                )));
            }
        }
        Ok(VaeModel { params, ..fresh })
    }

    pub fn encoder(&self, dir: Direction) -> Result<&EncoderIds> {
        match dir {
            Direction::Forward => Ok(&self.enc_tgt),
            Direction::Reverse => self.enc_src.as_ref().ok_or_else(|| {
                CoreError::Config(
                    "reverse direction requires a jointly trained (+SP) model".into(),
                )
            }),
        }
    }

    pub fn decoder(&self, lang: Lang) -> &DecoderIds {
        match lang {
            Lang::Src => &self.dec_src,
            Lang::Tgt => &self.dec_tgt,
        }
    }

    /// Decoder reconstructing this direction's encoded language.
    pub fn recon_decoder(&self, dir: Direction) -> &DecoderIds {
        self.decoder(dir.encoded_lang())
    }

    /// Decoder emitting this direction's source words (matrix only, no bias).
    pub fn emit_decoder(&self, dir: Direction) -> &DecoderIds {
        self.decoder(dir.emitted_lang())
    }

    /// Vocabulary generated by the emission model of `dir`.
    pub fn emitted_vocab(&self, dir: Direction) -> usize {
        self.cfg.vocab(dir.emitted_lang())
    }

    pub fn encoded_vocab(&self, dir: Direction) -> usize {
        self.cfg.vocab(dir.encoded_lang())
    }

    pub fn is_joint(&self) -> bool {
        self.enc_src.is_some()
    }
}
