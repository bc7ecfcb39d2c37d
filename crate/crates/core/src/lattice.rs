//! Log-space alignment lattice shared by the count-based and neural HMM
//! models: forward/backward scores, link posteriors and Viterbi decoding.
//!
//! Conventions: source positions are 0-based rows `j = 0..J`; target
//! positions are columns `i = 0..=I` with column 0 the NULL word. The chain
//! starts from the virtual alignment `a_0 = 0`, so transition row 0 doubles
//! as the initial distribution. NULL participates in jumps as an ordinary
//! position.

#![allow(clippy::needless_range_loop)]

/// Dense log-probability lattice for one sentence pair.
#[derive(Debug, Clone)]
pub struct Lattice {
    /// `log_emission[j][i] = log p(f_j | position i)`; J rows, I+1 columns.
    pub log_emission: Vec<Vec<f64>>,
    /// `log_transition[i_prev][i] = log p(a_j = i | a_{j-1} = i_prev)`;
    /// (I+1) x (I+1), rows normalized.
    pub log_transition: Vec<Vec<f64>>,
}

impl Lattice {
    pub fn new(log_emission: Vec<Vec<f64>>, log_transition: Vec<Vec<f64>>) -> Self {
        let states = log_transition.len();
        assert!(states > 0, "lattice: no states");
        assert!(
            log_transition.iter().all(|r| r.len() == states),
            "lattice: transition matrix must be square"
        );
        assert!(
            !log_emission.is_empty() && log_emission.iter().all(|r| r.len() == states),
            "lattice: emission rows must have {} entries",
            states
        );
        Lattice {
            log_emission,
            log_transition,
        }
    }

    /// Uniform-transition lattice (every row `1/(I+1)`), which makes the HMM
    /// collapse to IBM-1 on the same emissions.
    pub fn with_uniform_transitions(log_emission: Vec<Vec<f64>>) -> Self {
        let states = log_emission[0].len();
        let lp = -(states as f64).ln();
        let row = vec![lp; states];
        Lattice::new(log_emission, vec![row; states])
    }

    pub fn num_words(&self) -> usize {
        self.log_emission.len()
    }

    pub fn num_states(&self) -> usize {
        self.log_transition.len()
    }

    fn alpha(&self) -> Vec<Vec<f64>> {
        let (j_max, states) = (self.num_words(), self.num_states());
        let mut alpha = vec![vec![0.0; states]; j_max];
        let mut buf = vec![0.0; states];
        for i in 0..states {
            alpha[0][i] = self.log_transition[0][i] + self.log_emission[0][i];
        }
        for j in 1..j_max {
            for i in 0..states {
                for (ip, b) in buf.iter_mut().enumerate() {
                    *b = alpha[j - 1][ip] + self.log_transition[ip][i];
                }
                alpha[j][i] = logsumexp(&buf) + self.log_emission[j][i];
            }
        }
        alpha
    }

    fn beta(&self) -> Vec<Vec<f64>> {
        let (j_max, states) = (self.num_words(), self.num_states());
        let mut beta = vec![vec![0.0; states]; j_max];
        let mut buf = vec![0.0; states];
        for j in (0..j_max.saturating_sub(1)).rev() {
            for i in 0..states {
                for (inext, b) in buf.iter_mut().enumerate() {
                    *b = self.log_transition[i][inext]
                        + self.log_emission[j + 1][inext]
                        + beta[j + 1][inext];
                }
                beta[j][i] = logsumexp(&buf);
            }
        }
        beta
    }

    /// Total log-likelihood `log sum_paths prod_j p(a_j|a_{j-1}) p(f_j|a_j)`.
    pub fn forward(&self) -> f64 {
        let alpha = self.alpha();
        logsumexp(alpha.last().unwrap())
    }

    /// Same quantity from the backward recursion; used as a consistency check.
    pub fn backward_loglik(&self) -> f64 {
        let beta = self.beta();
        let states = self.num_states();
        let first: Vec<f64> = (0..states)
            .map(|i| self.log_transition[0][i] + self.log_emission[0][i] + beta[0][i])
            .collect();
        logsumexp(&first)
    }

    /// Posterior link probabilities `gamma[j][i] = p(a_j = i | f, e)`; each
    /// row sums to 1.
    pub fn posteriors(&self) -> Vec<Vec<f64>> {
        let alpha = self.alpha();
        let beta = self.beta();
        let ll = logsumexp(alpha.last().unwrap());
        alpha
            .iter()
            .zip(&beta)
            .map(|(a_row, b_row)| {
                a_row
                    .iter()
                    .zip(b_row)
                    .map(|(&a, &b)| (a + b - ll).exp())
                    .collect()
            })
            .collect()
    }

    /// Expected transition counts pooled over positions, as
    /// `xi[i_prev][i] = sum_j p(a_{j-1} = i_prev, a_j = i | f, e)`, including
    /// the initial step from the virtual `a_0 = 0`.
    pub fn expected_transitions(&self) -> Vec<Vec<f64>> {
        let (j_max, states) = (self.num_words(), self.num_states());
        let alpha = self.alpha();
        let beta = self.beta();
        let ll = logsumexp(alpha.last().unwrap());
        let mut xi = vec![vec![0.0; states]; states];
        // Initial step: a_0 = 0 with probability 1, so the pair posterior is
        // just gamma_0.
        for i in 0..states {
            xi[0][i] += (alpha[0][i] + beta[0][i] - ll).exp();
        }
        for j in 1..j_max {
            for ip in 0..states {
                for i in 0..states {
                    let lp = alpha[j - 1][ip]
                        + self.log_transition[ip][i]
                        + self.log_emission[j][i]
                        + beta[j][i]
                        - ll;
                    xi[ip][i] += lp.exp();
                }
            }
        }
        xi
    }

    /// Max-product decode. Ties prefer the smaller target position, first at
    /// the final state and then at each back-pointer.
    pub fn viterbi(&self) -> Vec<usize> {
        let (j_max, states) = (self.num_words(), self.num_states());
        let mut score = vec![vec![f64::NEG_INFINITY; states]; j_max];
        let mut back = vec![vec![0usize; states]; j_max];
        for i in 0..states {
            score[0][i] = self.log_transition[0][i] + self.log_emission[0][i];
        }
        for j in 1..j_max {
            for i in 0..states {
                let mut best = f64::NEG_INFINITY;
                let mut best_ip = 0;
                for ip in 0..states {
                    let s = score[j - 1][ip] + self.log_transition[ip][i];
                    if s > best {
                        best = s;
                        best_ip = ip;
                    }
                }
                score[j][i] = best + self.log_emission[j][i];
                back[j][i] = best_ip;
            }
        }
        let mut last = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &s) in score[j_max - 1].iter().enumerate() {
            if s > best {
                best = s;
                last = i;
            }
        }
        let mut path = vec![0usize; j_max];
        path[j_max - 1] = last;
        for j in (1..j_max).rev() {
            path[j - 1] = back[j][path[j]];
        }
        path
    }

    /// Score of a specific alignment path under this lattice.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.num_words());
        let mut prev = 0usize;
        let mut total = 0.0;
        for (j, &i) in path.iter().enumerate() {
            total += self.log_transition[prev][i] + self.log_emission[j][i];
            prev = i;
        }
        total
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    crate::tensor::graph::logsumexp_slice(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bruteforce;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_lattice(rng: &mut ChaCha20Rng, j_max: usize, states: usize) -> Lattice {
        let emission = (0..j_max)
            .map(|_| {
                (0..states)
                    .map(|_| rng.random_range(-3.0..0.0))
                    .collect::<Vec<_>>()
            })
            .collect();
        // Normalized random transition rows.
        let transition = (0..states)
            .map(|_| {
                let raw: Vec<f64> = (0..states).map(|_| rng.random_range(-2.0..2.0)).collect();
                let z = logsumexp(&raw);
                raw.into_iter().map(|x| x - z).collect::<Vec<_>>()
            })
            .collect();
        Lattice::new(emission, transition)
    }

    #[test]
    fn single_word_uniform_matches_hand_formula() {
        // J=1, I=1, uniform transitions: log((p(f|e0) + p(f|e1)) / 2).
        let e = vec![vec![(0.3f64).ln(), (0.6f64).ln()]];
        let lat = Lattice::with_uniform_transitions(e);
        let want = ((0.3 + 0.6) / 2.0f64).ln();
        assert!((lat.forward() - want).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_enumeration_on_2x2() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        for _ in 0..20 {
            let lat = random_lattice(&mut rng, 2, 3);
            let brute = bruteforce::lattice_loglik(&lat);
            assert!((lat.forward() - brute).abs() < 1e-10);
            assert!((lat.backward_loglik() - brute).abs() < 1e-10);
        }
    }

    #[test]
    fn single_path_lattice_returns_path_score() {
        // Transition and emission allow exactly one path: (1, 0).
        let ninf = -1e10;
        let emission = vec![vec![ninf, -0.5], vec![-0.25, ninf]];
        let transition = vec![vec![ninf, -0.1], vec![-0.3, ninf]];
        let lat = Lattice::new(emission, transition);
        let want = -0.1 + -0.5 + -0.3 + -0.25;
        assert!((lat.forward() - want).abs() < 1e-9);
        assert_eq!(lat.viterbi(), vec![1, 0]);
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        for _ in 0..100 {
            let j_max = rng.random_range(1..5);
            let states = rng.random_range(1..5);
            let lat = random_lattice(&mut rng, j_max, states);
            for row in lat.posteriors() {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "row sums to {}", s);
            }
        }
    }

    #[test]
    fn uniform_lattice_has_uniform_posteriors() {
        let states = 4;
        let emission = vec![vec![-1.3; states]; 3];
        let lat = Lattice::with_uniform_transitions(emission);
        for row in lat.posteriors() {
            for &p in &row {
                assert!((p - 1.0 / states as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posteriors_match_enumeration() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for _ in 0..20 {
            let lat = random_lattice(&mut rng, 2, 3);
            let got = lat.posteriors();
            let want = bruteforce::lattice_posteriors(&lat);
            for (gr, wr) in got.iter().zip(&want) {
                for (g, w) in gr.iter().zip(wr) {
                    assert!((g - w).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        for _ in 0..50 {
            let lat = random_lattice(&mut rng, 2, 3);
            let got = lat.viterbi();
            let (want_path, want_score) = bruteforce::lattice_viterbi(&lat);
            assert_eq!(got, want_path);
            assert!((lat.path_score(&got) - want_score).abs() < 1e-12);
        }
    }

    #[test]
    fn all_equal_scores_decode_to_zeros() {
        let emission = vec![vec![-1.0; 3]; 4];
        let transition = vec![vec![-1.0; 3]; 3];
        let lat = Lattice::new(emission, transition);
        assert_eq!(lat.viterbi(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn viterbi_score_never_exceeds_total() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        for _ in 0..50 {
            let lat = random_lattice(&mut rng, 3, 4);
            let path = lat.viterbi();
            assert!(lat.path_score(&path) <= lat.forward() + 1e-12);
        }
    }

    #[test]
    fn expected_transitions_match_enumeration() {
        let mut rng = ChaCha20Rng::seed_from_u64(26);
        for _ in 0..20 {
            let lat = random_lattice(&mut rng, 3, 3);
            let got = lat.expected_transitions();
            let want = bruteforce::lattice_expected_transitions(&lat);
            for (gr, wr) in got.iter().zip(&want) {
                for (g, w) in gr.iter().zip(wr) {
                    assert!((g - w).abs() < 1e-8, "{} vs {}", g, w);
                }
            }
        }
    }
}
