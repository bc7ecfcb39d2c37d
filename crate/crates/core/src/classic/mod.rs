//! Count-based IBM-1 and HMM aligners trained by exact EM.
//!
//! Emission tables are dense `[target vocab, source vocab]` tensors whose
//! rows are distributions over source tokens; row 0 is the NULL word. The
//! HMM transition model is a pooled jump distribution over
//! `d = a_j - a_{j-1}` in `[-JUMP_WINDOW, +JUMP_WINDOW]`, renormalized per
//! sentence over the feasible landing positions, with NULL treated as an
//! ordinary position (the chain starts at the virtual `a_0 = 0`).

use crate::corpus::alignment::{AlignmentSet, LinkFlag};
use crate::corpus::{Sentence, NULL_ID};
use crate::lattice::Lattice;
use crate::tensor::Tensor;

/// Largest jump magnitude the HMM distinguishes; mirrors the neural jump
/// matrix (301 buckets).
pub const JUMP_WINDOW: i64 = 150;
pub const JUMP_BUCKETS: usize = (2 * JUMP_WINDOW + 1) as usize;

/// Additive smoothing applied on every M-step renormalization.
pub const SMOOTH_EPS: f64 = 1e-12;

pub type Pair = (Sentence, Sentence);

/// Conditional table `t(f | e)` with one row per target id (NULL included).
#[derive(Debug, Clone)]
pub struct Ibm1Table {
    pub t: Tensor,
}

impl Ibm1Table {
    pub fn uniform(target_vocab: usize, source_vocab: usize) -> Self {
        let p = 1.0 / source_vocab as f64;
        Ibm1Table {
            t: Tensor::full(&[target_vocab, source_vocab], p),
        }
    }

    pub fn prob(&self, e: u32, f: u32) -> f64 {
        self.t.at2(e as usize, f as usize)
    }

    pub fn target_vocab(&self) -> usize {
        self.t.rows()
    }

    pub fn source_vocab(&self) -> usize {
        self.t.cols()
    }

    /// Max deviation of any row sum from 1.
    pub fn normalization_error(&self) -> f64 {
        (0..self.t.rows())
            .map(|e| (self.t.row_slice(e).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Target-position sequence for one pair: NULL then the target words.
fn target_positions(tgt: &Sentence) -> Vec<u32> {
    let mut ids = Vec::with_capacity(tgt.len() + 1);
    ids.push(NULL_ID);
    ids.extend_from_slice(&tgt.ids);
    ids
}

fn normalize_rows(counts: &mut Tensor) {
    let (rows, cols) = (counts.rows(), counts.cols());
    for r in 0..rows {
        let row = &mut counts.data_mut()[r * cols..(r + 1) * cols];
        let total: f64 = row.iter().sum::<f64>() + SMOOTH_EPS * cols as f64;
        for v in row.iter_mut() {
            *v = (*v + SMOOTH_EPS) / total;
        }
    }
}

/// One exact EM sweep. Returns the re-estimated table and the corpus
/// log-likelihood under the *input* table.
pub fn ibm1_em_step(pairs: &[Pair], table: &Ibm1Table) -> (Ibm1Table, f64) {
    let (rows, cols) = (table.target_vocab(), table.source_vocab());
    let mut counts = Tensor::zeros(&[rows, cols]);
    let mut ll = 0.0;
    for (src, tgt) in pairs {
        let positions = target_positions(tgt);
        let states = positions.len() as f64;
        for &f in &src.ids {
            let mut norm = 0.0;
            for &e in &positions {
                norm += table.prob(e, f);
            }
            ll += (norm / states).ln();
            for &e in &positions {
                let gamma = table.prob(e, f) / norm;
                counts.data_mut()[e as usize * cols + f as usize] += gamma;
            }
        }
    }
    normalize_rows(&mut counts);
    (Ibm1Table { t: counts }, ll)
}

/// Runs `iterations` EM sweeps from a uniform table; also returns the
/// log-likelihood trace (one value per sweep, measured before its update).
pub fn train_ibm1(
    pairs: &[Pair],
    target_vocab: usize,
    source_vocab: usize,
    iterations: usize,
) -> (Ibm1Table, Vec<f64>) {
    let mut table = Ibm1Table::uniform(target_vocab, source_vocab);
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (next, ll) = ibm1_em_step(pairs, &table);
        table = next;
        trace.push(ll);
    }
    (table, trace)
}

/// IBM-1 posterior rows `p(a_j = i | f_j)` for one pair.
pub fn ibm1_posteriors(table: &Ibm1Table, src: &Sentence, tgt: &Sentence) -> Vec<Vec<f64>> {
    let positions = target_positions(tgt);
    src.ids
        .iter()
        .map(|&f| {
            let probs: Vec<f64> = positions.iter().map(|&e| table.prob(e, f)).collect();
            let norm: f64 = probs.iter().sum();
            probs.into_iter().map(|p| p / norm).collect()
        })
        .collect()
}

/// Argmax decode; position 0 wins ties and maps to "unaligned".
pub fn decode_ibm1(table: &Ibm1Table, src: &Sentence, tgt: &Sentence) -> AlignmentSet {
    let positions = target_positions(tgt);
    let mut set = AlignmentSet::new(src.len() as u32, tgt.len() as u32);
    for (j, &f) in src.ids.iter().enumerate() {
        let mut best_i = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (i, &e) in positions.iter().enumerate() {
            let p = table.prob(e, f);
            if p > best {
                best = p;
                best_i = i;
            }
        }
        if best_i > 0 {
            set.insert(j as u32 + 1, best_i as u32, LinkFlag::Sure);
        }
    }
    set
}

#[derive(Debug, Clone)]
pub struct HmmParams {
    pub emission: Tensor,
    /// Distribution over jumps `d  in [-JUMP_WINDOW, +JUMP_WINDOW]`, index
    /// `d + JUMP_WINDOW`; sums to 1.
    pub jump: Tensor,
}

impl HmmParams {
    pub fn new(emission: Tensor, jump: Tensor) -> Self {
        assert_eq!(jump.len(), JUMP_BUCKETS, "hmm: jump table size");
        HmmParams { emission, jump }
    }

    pub fn uniform_jump(emission: Tensor) -> Self {
        HmmParams::new(
            emission,
            Tensor::full(&[JUMP_BUCKETS], 1.0 / JUMP_BUCKETS as f64),
        )
    }

    pub fn jump_prob(&self, d: i64) -> f64 {
        if d.abs() > JUMP_WINDOW {
            0.0
        } else {
            self.jump.data()[(d + JUMP_WINDOW) as usize]
        }
    }

    /// Row-normalized log transitions over `states` landing positions.
    fn log_transitions(&self, states: usize) -> Vec<Vec<f64>> {
        (0..states)
            .map(|ip| {
                let weights: Vec<f64> = (0..states)
                    .map(|i| self.jump_prob(i as i64 - ip as i64))
                    .collect();
                let z: f64 = weights.iter().sum();
                weights.into_iter().map(|w| (w / z).ln()).collect()
            })
            .collect()
    }

    pub fn lattice(&self, src: &Sentence, tgt: &Sentence) -> Lattice {
        let positions = target_positions(tgt);
        let emission = src
            .ids
            .iter()
            .map(|&f| {
                positions
                    .iter()
                    .map(|&e| self.emission.at2(e as usize, f as usize).ln())
                    .collect()
            })
            .collect();
        Lattice::new(emission, self.log_transitions(positions.len()))
    }
}

/// One Baum-Welch sweep with jump-pooled transition counts. Returns the new
/// parameters and the corpus log-likelihood under the input parameters.
pub fn hmm_em_step(pairs: &[Pair], params: &HmmParams) -> (HmmParams, f64) {
    let (rows, cols) = (params.emission.rows(), params.emission.cols());
    let mut emit_counts = Tensor::zeros(&[rows, cols]);
    let mut jump_counts = Tensor::zeros(&[JUMP_BUCKETS]);
    let mut ll = 0.0;
    for (src, tgt) in pairs {
        let positions = target_positions(tgt);
        let lat = params.lattice(src, tgt);
        ll += lat.forward();
        let gamma = lat.posteriors();
        for (j, row) in gamma.iter().enumerate() {
            let f = src.ids[j] as usize;
            for (i, &p) in row.iter().enumerate() {
                emit_counts.data_mut()[positions[i] as usize * cols + f] += p;
            }
        }
        let xi = lat.expected_transitions();
        for (ip, row) in xi.iter().enumerate() {
            for (i, &p) in row.iter().enumerate() {
                let d = i as i64 - ip as i64;
                if d.abs() <= JUMP_WINDOW {
                    jump_counts.data_mut()[(d + JUMP_WINDOW) as usize] += p;
                }
            }
        }
    }
    normalize_rows(&mut emit_counts);
    let total: f64 = jump_counts.data().iter().sum::<f64>() + SMOOTH_EPS * JUMP_BUCKETS as f64;
    for v in jump_counts.data_mut() {
        *v = (*v + SMOOTH_EPS) / total;
    }
    (HmmParams::new(emit_counts, jump_counts), ll)
}

/// Standard pipeline: IBM-1 warm-up for the emissions, then HMM sweeps with
/// jumps starting uniform. Returns the HMM log-likelihood trace.
pub fn train_hmm(
    pairs: &[Pair],
    target_vocab: usize,
    source_vocab: usize,
    ibm1_init_iterations: usize,
    iterations: usize,
) -> (HmmParams, Vec<f64>) {
    let (table, _) = train_ibm1(pairs, target_vocab, source_vocab, ibm1_init_iterations);
    let mut params = HmmParams::uniform_jump(table.t);
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (next, ll) = hmm_em_step(pairs, &params);
        params = next;
        trace.push(ll);
    }
    (params, trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HmmDecode {
    Viterbi,
    PosteriorArgmax,
}

pub fn decode_hmm(
    params: &HmmParams,
    src: &Sentence,
    tgt: &Sentence,
    mode: HmmDecode,
) -> AlignmentSet {
    let lat = params.lattice(src, tgt);
    let path: Vec<usize> = match mode {
        HmmDecode::Viterbi => lat.viterbi(),
        HmmDecode::PosteriorArgmax => lat
            .posteriors()
            .iter()
            .map(|row| {
                let mut best = 0;
                let mut bp = f64::NEG_INFINITY;
                for (i, &p) in row.iter().enumerate() {
                    if p > bp {
                        bp = p;
                        best = i;
                    }
                }
                best
            })
            .collect(),
    };
    let mut set = AlignmentSet::new(src.len() as u32, tgt.len() as u32);
    for (j, &i) in path.iter().enumerate() {
        if i > 0 {
            set.insert(j as u32 + 1, i as u32, LinkFlag::Sure);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    /// Tiny corpus builder: each pair is (source words, target words).
    fn corpus(pairs: &[(&str, &str)]) -> (Vec<Pair>, Vocabulary, Vocabulary) {
        let mut sv = Vocabulary::new();
        let mut tv = Vocabulary::new();
        let built = pairs
            .iter()
            .map(|(s, t)| {
                let sids = s.split_whitespace().map(|w| sv.intern(w)).collect();
                let tids = t.split_whitespace().map(|w| tv.intern(w)).collect();
                (Sentence::word_level(sids), Sentence::word_level(tids))
            })
            .collect();
        (built, sv, tv)
    }

    #[test]
    fn single_pair_splits_counts_between_null_and_word() {
        let (pairs, sv, tv) = corpus(&[("x", "e")]);
        let table = Ibm1Table::uniform(tv.len(), sv.len());
        let (next, _) = ibm1_em_step(&pairs, &table);
        let x = sv.id("x").unwrap();
        let e = tv.id("e").unwrap();
        // Expected counts are 1/2 for NULL and 1/2 for "e"; each row then
        // renormalizes to put all mass on "x".
        assert!((next.prob(NULL_ID, x) - 1.0).abs() < 1e-9);
        assert!((next.prob(e, x) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ibm1_loglik_is_nondecreasing() {
        let (pairs, sv, tv) = corpus(&[
            ("x", "e"),
            ("y", "f"),
            ("x y", "e f"),
            ("y x", "f e"),
            ("x x y", "e e f"),
        ]);
        let (_, trace) = train_ibm1(&pairs, tv.len(), sv.len(), 10);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "ll dropped: {:?}", trace);
        }
    }

    #[test]
    fn cross_pair_disambiguates_lexicon() {
        let (pairs, sv, tv) = corpus(&[("x", "e"), ("y", "f"), ("x y", "e f")]);
        let mut table = Ibm1Table::uniform(tv.len(), sv.len());
        for _ in 0..2 {
            table = ibm1_em_step(&pairs, &table).0;
        }
        let x = sv.id("x").unwrap();
        assert!(
            table.prob(tv.id("e").unwrap(), x) > table.prob(tv.id("f").unwrap(), x),
            "t(x|e) should beat t(x|f)"
        );
    }

    #[test]
    fn rows_stay_normalized() {
        let (pairs, sv, tv) = corpus(&[("x y", "e f"), ("y", "f")]);
        let (table, _) = train_ibm1(&pairs, tv.len(), sv.len(), 3);
        assert!(table.normalization_error() < 1e-9);
    }

    #[test]
    fn decode_follows_the_table() {
        let (pairs, sv, tv) = corpus(&[("x", "e")]);
        let mut table = Ibm1Table::uniform(tv.len(), sv.len());
        let e = tv.id("e").unwrap() as usize;
        let x = sv.id("x").unwrap() as usize;
        let cols = table.source_vocab();
        // Hard-wire t(x|e) = 1.
        for f in 0..cols {
            table.t.data_mut()[e * cols + f] = 0.0;
        }
        table.t.data_mut()[e * cols + x] = 1.0;
        let set = decode_ibm1(&table, &pairs[0].0, &pairs[0].1);
        assert_eq!(set.links().collect::<Vec<_>>(), vec![(1, 1, LinkFlag::Sure)]);
    }

    #[test]
    fn argmax_at_null_leaves_word_unaligned() {
        let (pairs, sv, tv) = corpus(&[("x", "e")]);
        let mut table = Ibm1Table::uniform(tv.len(), sv.len());
        let x = sv.id("x").unwrap() as usize;
        let cols = table.source_vocab();
        table.t.data_mut()[NULL_ID as usize * cols + x] = 0.9;
        let set = decode_ibm1(&table, &pairs[0].0, &pairs[0].1);
        assert!(set.is_empty());
    }

    #[test]
    fn hmm_on_single_position_matches_ibm1_update() {
        // With I = J = 1 there is no transition structure to exploit: the
        // emission update must coincide with IBM-1's.
        let (pairs, sv, tv) = corpus(&[("x", "e")]);
        let table = Ibm1Table::uniform(tv.len(), sv.len());
        let (ibm_next, ibm_ll) = ibm1_em_step(&pairs, &table);
        let hmm = HmmParams::uniform_jump(table.t.clone());
        let (hmm_next, hmm_ll) = hmm_em_step(&pairs, &hmm);
        assert!((ibm_ll - hmm_ll).abs() < 1e-12);
        for (a, b) in ibm_next.t.data().iter().zip(hmm_next.emission.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hmm_loglik_is_nondecreasing() {
        let (pairs, sv, tv) = corpus(&[
            ("x y", "e f"),
            ("y x", "f e"),
            ("x y z", "e f g"),
            ("z", "g"),
        ]);
        let (_, trace) = train_hmm(&pairs, tv.len(), sv.len(), 3, 10);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "ll dropped: {:?}", trace);
        }
    }

    #[test]
    fn pooled_jump_counts_match_enumeration() {
        let (pairs, sv, tv) = corpus(&[("x y z", "e f"), ("y x", "f e g")]);
        let (table, _) = train_ibm1(&pairs, tv.len(), sv.len(), 2);
        let params = HmmParams::uniform_jump(table.t);

        // Pool brute-force pair posteriors by jump for every pair.
        let mut want = vec![0.0; JUMP_BUCKETS];
        for (src, tgt) in &pairs {
            let lat = params.lattice(src, tgt);
            let xi = crate::bruteforce::lattice_expected_transitions(&lat);
            for (ip, row) in xi.iter().enumerate() {
                for (i, &p) in row.iter().enumerate() {
                    want[(i as i64 - ip as i64 + JUMP_WINDOW) as usize] += p;
                }
            }
        }
        // Reproduce the E-step pooling (pre-normalization) via one step's
        // output: counts are recoverable up to the shared normalizer, so
        // compare normalized vectors.
        let (next, _) = hmm_em_step(&pairs, &params);
        let wz: f64 = want.iter().sum();
        for (g, w) in next.jump.data().iter().zip(&want) {
            assert!((g - w / wz).abs() < 1e-8, "{} vs {}", g, w / wz);
        }
    }

    #[test]
    fn uniform_jump_hmm_posteriors_equal_ibm1() {
        let (pairs, sv, tv) = corpus(&[("x y", "e f g")]);
        let (table, _) = train_ibm1(&pairs, tv.len(), sv.len(), 2);
        let params = HmmParams::uniform_jump(table.t.clone());
        let (src, tgt) = &pairs[0];
        let hmm_gamma = params.lattice(src, tgt).posteriors();
        let ibm_gamma = ibm1_posteriors(&table, src, tgt);
        for (hr, ir) in hmm_gamma.iter().zip(&ibm_gamma) {
            for (h, i) in hr.iter().zip(ir) {
                assert!((h - i).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn viterbi_decode_matches_bruteforce_argmax() {
        let (pairs, sv, tv) = corpus(&[("x y", "e f"), ("y x", "f e"), ("x", "e")]);
        let (params, _) = train_hmm(&pairs, tv.len(), sv.len(), 2, 3);
        for (src, tgt) in &pairs {
            let lat = params.lattice(src, tgt);
            let (want, _) = crate::bruteforce::lattice_viterbi(&lat);
            let set = decode_hmm(&params, src, tgt, HmmDecode::Viterbi);
            let got: Vec<usize> = (1..=src.len() as u32)
                .map(|j| {
                    set.links()
                        .find(|&(lj, _, _)| lj == j)
                        .map(|(_, i, _)| i as usize)
                        .unwrap_or(0)
                })
                .collect();
            assert_eq!(got, want);
        }
    }
}
