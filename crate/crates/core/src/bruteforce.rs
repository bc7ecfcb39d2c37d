//! Exhaustive reference implementations used by the test and acceptance
//! suites. Everything here enumerates the full alignment space (or samples
//! it) and is deliberately independent of the dynamic-programming and
//! autodiff code paths it verifies. Desk-sized inputs only.

use crate::lattice::Lattice;
use rand::Rng;

/// Iterates every alignment path `a in {0..states-1}^j_max`.
pub fn all_paths(j_max: usize, states: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = states.checked_pow(j_max as u32).expect("path space too big");
    (0..total).map(move |mut code| {
        let mut path = vec![0usize; j_max];
        for slot in path.iter_mut() {
            *slot = code % states;
            code /= states;
        }
        path
    })
}

/// Total log-likelihood by summing every path's probability.
pub fn lattice_loglik(lat: &Lattice) -> f64 {
    let scores: Vec<f64> = all_paths(lat.num_words(), lat.num_states())
        .map(|p| lat.path_score(&p))
        .collect();
    crate::lattice::logsumexp(&scores)
}

/// Posterior `p(a_j = i)` by enumeration.
pub fn lattice_posteriors(lat: &Lattice) -> Vec<Vec<f64>> {
    let (j_max, states) = (lat.num_words(), lat.num_states());
    let ll = lattice_loglik(lat);
    let mut post = vec![vec![0.0; states]; j_max];
    for path in all_paths(j_max, states) {
        let p = (lat.path_score(&path) - ll).exp();
        for (j, &i) in path.iter().enumerate() {
            post[j][i] += p;
        }
    }
    post
}

/// Expected transition-pair counts `xi[i_prev][i]` by enumeration, with the
/// virtual start `a_0 = 0`.
pub fn lattice_expected_transitions(lat: &Lattice) -> Vec<Vec<f64>> {
    let (j_max, states) = (lat.num_words(), lat.num_states());
    let ll = lattice_loglik(lat);
    let mut xi = vec![vec![0.0; states]; states];
    for path in all_paths(j_max, states) {
        let p = (lat.path_score(&path) - ll).exp();
        let mut prev = 0usize;
        for &i in &path {
            xi[prev][i] += p;
            prev = i;
        }
    }
    xi
}

/// Best path and its score. Ties are resolved exactly like the lattice
/// decoder: the candidate whose final state is smaller wins, then earlier
/// back-pointers; enumerating paths most-significant-position-last and
/// keeping strict improvements reproduces that order.
pub fn lattice_viterbi(lat: &Lattice) -> (Vec<usize>, f64) {
    let mut best_path = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for path in all_paths(lat.num_words(), lat.num_states()) {
        let s = lat.path_score(&path);
        if s > best {
            best = s;
            best_path = path;
        }
    }
    (best_path, best)
}

/// IBM-1 negative alignment log-likelihood by enumerating uniform-prior
/// alignments: `-sum_j log( 1/(I+1) sum_i p(f_j | i) )` computed the long way
/// round, from `word_logprobs[j][i] = log p(f_j | position i)`.
pub fn ibm1_alignment_loss(word_logprobs: &[Vec<f64>]) -> f64 {
    let j_max = word_logprobs.len();
    let states = word_logprobs[0].len();
    let uniform = -(states as f64).ln();
    let scores: Vec<f64> = all_paths(j_max, states)
        .map(|path| {
            path.iter()
                .enumerate()
                .map(|(j, &i)| uniform + word_logprobs[j][i])
                .sum()
        })
        .collect();
    -crate::lattice::logsumexp(&scores)
}

/// HMM negative alignment log-likelihood by path enumeration.
pub fn hmm_alignment_loss(lat: &Lattice) -> f64 {
    -lattice_loglik(lat)
}

/// Monte-Carlo estimate of `KL(N(u, diag(s^2)) || N(0, I))` from `samples`
/// draws of the density ratio.
pub fn monte_carlo_kl(u: &[f64], s: &[f64], samples: usize, rng: &mut impl Rng) -> f64 {
    assert_eq!(u.len(), s.len());
    let mut total = 0.0;
    for _ in 0..samples {
        let mut log_q = 0.0;
        let mut log_p = 0.0;
        for (&ud, &sd) in u.iter().zip(s) {
            let eps = standard_normal(rng);
            let x = ud + sd * eps;
            // Constants cancel between q and p.
            log_q += -0.5 * eps * eps - sd.ln();
            log_p += -0.5 * x * x;
        }
        total += log_q - log_p;
    }
    total / samples as f64
}

/// Box-Muller standard normal; deterministic for a seeded RNG.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_enumeration_counts() {
        assert_eq!(all_paths(3, 4).count(), 64);
        assert_eq!(all_paths(1, 1).next().unwrap(), vec![0]);
    }

    #[test]
    fn mc_kl_is_zero_at_the_prior() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let kl = monte_carlo_kl(&[0.0, 0.0], &[1.0, 1.0], 20000, &mut rng);
        assert!(kl.abs() < 0.05, "got {}", kl);
    }
}
