//! Sentence corruption for the monolingual denoising objective: independent
//! word drops (never emptying the sentence) followed by a bounded local
//! shuffle.
//!
//! The shuffle adds a uniform draw from `[0, k)` to every index and stably
//! re-sorts; because the perturbation is less than k, no word can move by
//! more than k positions in either direction.

use crate::corpus::Sentence;
use crate::neural::NoiseConfig;
use rand::Rng;

pub fn corrupt(sentence: &Sentence, cfg: &NoiseConfig, rng: &mut impl Rng) -> Sentence {
    let mut kept: Vec<u32> = sentence
        .ids
        .iter()
        .copied()
        .filter(|_| !(cfg.p_drop > 0.0 && rng.random_range(0.0..1.0) < cfg.p_drop))
        .collect();
    if kept.is_empty() {
        let pick = rng.random_range(0..sentence.ids.len());
        kept.push(sentence.ids[pick]);
    }
    if cfg.shuffle_k > 0 && kept.len() > 1 {
        let mut keyed: Vec<(f64, u32)> = kept
            .iter()
            .enumerate()
            .map(|(i, &id)| (i as f64 + rng.random_range(0.0..cfg.shuffle_k as f64), id))
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        kept = keyed.into_iter().map(|(_, id)| id).collect();
    }
    Sentence::word_level(kept)
}

/// Permutation form of the bounded shuffle, for callers that need to track
/// where each position went: returns `perm` with `perm[old] = new`.
pub fn bounded_shuffle_perm(len: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if k == 0 || len <= 1 {
        return (0..len).collect();
    }
    let mut keyed: Vec<(f64, usize)> = (0..len)
        .map(|i| (i as f64 + rng.random_range(0.0..k as f64), i))
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut perm = vec![0usize; len];
    for (new_pos, &(_, old)) in keyed.iter().enumerate() {
        perm[old] = new_pos;
    }
    perm
}
