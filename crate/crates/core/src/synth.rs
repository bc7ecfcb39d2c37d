//! Synthetic dictionary corpus with known gold alignments, used by the
//! acceptance suite and the `synth` subcommand.
//!
//! Each pair samples distinct source words from a bijective lexicon
//! (`s17 <-> t17`), translates word for word, and locally reorders the
//! target side with the bounded shuffle, so every word moves by at most
//! `reorder_k` positions and the gold links are the tracked permutation.

use crate::corpus::alignment::{AlignmentSet, LinkFlag};
use crate::noise::bounded_shuffle_perm;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub reorder_k: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 50,
            pairs: 2000,
            min_len: 3,
            max_len: 10,
            reorder_k: 2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub src_lines: Vec<String>,
    pub tgt_lines: Vec<String>,
    pub gold: Vec<AlignmentSet>,
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len);
    assert!(
        cfg.max_len <= cfg.vocab_size,
        "synth: sentences sample distinct words, so max_len must fit the vocabulary"
    );
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut src_lines = Vec::with_capacity(cfg.pairs);
    let mut tgt_lines = Vec::with_capacity(cfg.pairs);
    let mut gold = Vec::with_capacity(cfg.pairs);
    let mut ids: Vec<usize> = (0..cfg.vocab_size).collect();

    for _ in 0..cfg.pairs {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        ids.shuffle(&mut rng);
        let words = &ids[..len];
        let perm = bounded_shuffle_perm(len, cfg.reorder_k, &mut rng);

        let src: Vec<String> = words.iter().map(|w| format!("s{w:02}")).collect();
        let mut tgt = vec![String::new(); len];
        let mut links = AlignmentSet::new(len as u32, len as u32);
        for (j, &w) in words.iter().enumerate() {
            let i = perm[j];
            tgt[i] = format!("t{w:02}");
            links.insert(j as u32 + 1, i as u32 + 1, LinkFlag::Sure);
        }
        src_lines.push(src.join(" "));
        tgt_lines.push(tgt.join(" "));
        gold.push(links);
    }
    SynthCorpus {
        src_lines,
        tgt_lines,
        gold,
    }
}
