//! Neural emission baselines (IBM1+NN, HMM+NN) trained with EM.
//!
//! The emission network is a low-rank factorization of the translation
//! table: embedding (128) -> linear (64) -> linear (V) -> softmax, mirroring
//! the VAE decoder capacity. Each EM iteration materializes the full table,
//! computes exact posteriors (one corpus pass), then the M-step runs Adam on
//! the expected complete-data log-likelihood with the posteriors frozen; the
//! HMM jump distribution is re-estimated in closed form from pooled counts.

use super::Family;
use crate::classic::{self, HmmParams, Ibm1Table, Pair, JUMP_BUCKETS, JUMP_WINDOW, SMOOTH_EPS};
use crate::corpus::{Sentence, NULL_ID};
use crate::error::Result;
use crate::tensor::adam::{AdamConfig, AdamState};
use crate::tensor::graph::Graph;
use crate::tensor::params::{ParamId, ParamSet};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct EmissionNet {
    pub params: ParamSet,
    emb: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    pub target_vocab: usize,
    pub source_vocab: usize,
}

impl EmissionNet {
    pub fn new(
        target_vocab: usize,
        source_vocab: usize,
        emb_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut ps = ParamSet::new();
        let eb = 1.0 / (emb_dim as f64).sqrt();
        let hb = 1.0 / (hidden as f64).sqrt();
        let emb = ps.add("em.emb", Tensor::uniform(&[target_vocab, emb_dim], eb, rng));
        let w1 = ps.add("em.l1.w", Tensor::uniform(&[emb_dim, hidden], eb, rng));
        let b1 = ps.add("em.l1.b", Tensor::zeros(&[hidden]));
        let w2 = ps.add("em.out.w", Tensor::uniform(&[hidden, source_vocab], hb, rng));
        let b2 = ps.add("em.out.b", Tensor::zeros(&[source_vocab]));
        EmissionNet {
            params: ps,
            emb,
            w1,
            b1,
            w2,
            b2,
            target_vocab,
            source_vocab,
        }
    }

    fn logits_graph(&self, g: &mut Graph, ps: &ParamSet, rows: &[usize]) -> crate::tensor::graph::NodeId {
        let emb = g.param(ps, self.emb);
        let x = g.embedding(emb, rows);
        let w1 = g.param(ps, self.w1);
        let b1 = g.param(ps, self.b1);
        let h_lin = g.matmul(x, w1);
        let h = g.add_row_vec(h_lin, b1);
        let w2 = g.param(ps, self.w2);
        let b2 = g.param(ps, self.b2);
        let o_lin = g.matmul(h, w2);
        g.add_row_vec(o_lin, b2)
    }

    /// Rebinds handles onto loaded parameters (dimensions come from the
    /// tensor shapes; extra entries such as the jump table are ignored).
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let need = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| crate::error::CoreError::Data(format!("checkpoint is missing {name}")))
        };
        let emb = need("em.emb")?;
        let w1 = need("em.l1.w")?;
        let b1 = need("em.l1.b")?;
        let w2 = need("em.out.w")?;
        let b2 = need("em.out.b")?;
        let target_vocab = params.get(emb).rows();
        let source_vocab = params.get(w2).cols();
        Ok(EmissionNet {
            params,
            emb,
            w1,
            b1,
            w2,
            b2,
            target_vocab,
            source_vocab,
        })
    }

    /// Materializes `t(f | e)` for every target id as a dense table.
    pub fn table(&self) -> Ibm1Table {
        let rows: Vec<usize> = (0..self.target_vocab).collect();
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, &self.params, &rows);
        let probs = g.softmax(logits, 1);
        Ibm1Table {
            t: g.value(probs).clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeuralEmConfig {
    pub family: Family,
    pub iterations: usize,
    /// Adam steps per M-step (full-batch over the used target rows).
    pub m_steps: usize,
    pub adam: AdamConfig,
    pub emb_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for NeuralEmConfig {
    fn default() -> Self {
        NeuralEmConfig {
            family: Family::Ibm1,
            iterations: 10,
            m_steps: 50,
            adam: AdamConfig::default(),
            emb_dim: 128,
            hidden: 64,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NeuralEmModel {
    pub net: EmissionNet,
    /// Present for the HMM family.
    pub jump: Option<Tensor>,
    pub family: Family,
}

impl NeuralEmModel {
    /// Count-model view of the current network (plus jump table for HMM).
    pub fn as_hmm(&self) -> Option<HmmParams> {
        self.jump
            .as_ref()
            .map(|j| HmmParams::new(self.net.table().t, j.clone()))
    }

    pub fn decode(&self, src: &Sentence, tgt: &Sentence) -> crate::corpus::alignment::AlignmentSet {
        match self.family {
            Family::Ibm1 => classic::decode_ibm1(&self.net.table(), src, tgt),
            Family::Hmm => classic::decode_hmm(
                &self.as_hmm().expect("hmm model without jump table"),
                src,
                tgt,
                classic::HmmDecode::Viterbi,
            ),
        }
    }
}

/// Per-iteration diagnostics: corpus log-likelihood under the entering
/// parameters and the expected complete-data log-likelihood before/after
/// the M-step (posteriors frozen).
#[derive(Debug, Clone, Copy)]
pub struct EmIteration {
    pub loglik: f64,
    pub cdll_first: f64,
    pub cdll_last: f64,
}

/// IBM-1 posteriors over NULL + target positions, straight from the table.
pub fn ibm1_estep_posteriors(table: &Ibm1Table, src: &Sentence, tgt: &Sentence) -> Vec<Vec<f64>> {
    let mut positions = vec![NULL_ID];
    positions.extend_from_slice(&tgt.ids);
    src.ids
        .iter()
        .map(|&f| {
            let raw: Vec<f64> = positions.iter().map(|&e| table.prob(e, f)).collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|p| p / z).collect()
        })
        .collect()
}

struct EStep {
    counts: Tensor,
    jump_counts: Tensor,
    loglik: f64,
}

fn e_step(pairs: &[Pair], table: &Ibm1Table, jump: Option<&Tensor>, family: Family) -> EStep {
    let (rows, cols) = (table.target_vocab(), table.source_vocab());
    let mut counts = Tensor::zeros(&[rows, cols]);
    let mut jump_counts = Tensor::zeros(&[JUMP_BUCKETS]);
    let mut loglik = 0.0;
    for (src, tgt) in pairs {
        let mut positions = vec![NULL_ID];
        positions.extend_from_slice(&tgt.ids);
        match family {
            Family::Ibm1 => {
                let states = positions.len() as f64;
                let gamma = ibm1_estep_posteriors(table, src, tgt);
                for (j, row) in gamma.iter().enumerate() {
                    let f = src.ids[j];
                    let mut z = 0.0;
                    for (i, &e) in positions.iter().enumerate() {
                        counts.data_mut()[e as usize * cols + f as usize] += row[i];
                        z += table.prob(e, f);
                    }
                    loglik += (z / states).ln();
                }
            }
            Family::Hmm => {
                let params = HmmParams::new(table.t.clone(), jump.expect("jump").clone());
                let lat = params.lattice(src, tgt);
                loglik += lat.forward();
                for (j, row) in lat.posteriors().iter().enumerate() {
                    let f = src.ids[j];
                    for (i, &p) in row.iter().enumerate() {
                        counts.data_mut()[positions[i] as usize * cols + f as usize] += p;
                    }
                }
                for (ip, row) in lat.expected_transitions().iter().enumerate() {
                    for (i, &p) in row.iter().enumerate() {
                        let d = i as i64 - ip as i64;
                        if d.abs() <= JUMP_WINDOW {
                            jump_counts.data_mut()[(d + JUMP_WINDOW) as usize] += p;
                        }
                    }
                }
            }
        }
    }
    EStep {
        counts,
        jump_counts,
        loglik,
    }
}

/// Normalized expected complete-data log-likelihood of the emission part and
/// its gradient-ready loss node.
fn cdll_loss(
    net: &EmissionNet,
    ps: &ParamSet,
    rows: &[usize],
    weights: &Tensor,
    total: f64,
) -> (Graph, crate::tensor::graph::NodeId) {
    let mut g = Graph::new();
    let logits = net.logits_graph(&mut g, ps, rows);
    let lsm = g.log_softmax(logits, 1);
    let w = g.constant(weights.clone());
    let prod = g.mul(lsm, w);
    let s = g.sum(prod);
    let loss = g.scale(s, -1.0 / total);
    (g, loss)
}

pub fn neural_em_train(
    pairs: &[Pair],
    target_vocab: usize,
    source_vocab: usize,
    cfg: &NeuralEmConfig,
) -> Result<(NeuralEmModel, Vec<EmIteration>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut net = EmissionNet::new(target_vocab, source_vocab, cfg.emb_dim, cfg.hidden, &mut rng);
    let mut jump = match cfg.family {
        Family::Ibm1 => None,
        Family::Hmm => Some(Tensor::full(&[JUMP_BUCKETS], 1.0 / JUMP_BUCKETS as f64)),
    };
    let mut adam = AdamState::new(&net.params, cfg.adam);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let table = net.table();
        let es = e_step(pairs, &table, jump.as_ref(), cfg.family);

        // Dense count matrix restricted to target rows that got any mass.
        let cols = source_vocab;
        let used_rows: Vec<usize> = (0..target_vocab)
            .filter(|&e| es.counts.row_slice(e).iter().any(|&c| c > 0.0))
            .collect();
        let mut weights = Tensor::zeros(&[used_rows.len(), cols]);
        for (k, &e) in used_rows.iter().enumerate() {
            weights.data_mut()[k * cols..(k + 1) * cols]
                .copy_from_slice(es.counts.row_slice(e));
        }
        let total: f64 = weights.data().iter().sum();

        let mut cdll_first = 0.0;
        let mut cdll_last = 0.0;
        for step in 0..cfg.m_steps {
            let (mut g, loss) = cdll_loss(&net, &net.params.clone(), &used_rows, &weights, total);
            let val = -g.value(loss).scalar_value() * total;
            if step == 0 {
                cdll_first = val;
            }
            cdll_last = val;
            g.backward(loss);
            let grads = g.param_grads(&net.params);
            adam.step(&mut net.params, &grads);
        }
        // Closed-form jump update.
        if let Some(j) = &mut jump {
            let z: f64 =
                es.jump_counts.data().iter().sum::<f64>() + SMOOTH_EPS * JUMP_BUCKETS as f64;
            for (dst, &c) in j.data_mut().iter_mut().zip(es.jump_counts.data()) {
                *dst = (c + SMOOTH_EPS) / z;
            }
        }
        trace.push(EmIteration {
            loglik: es.loglik,
            cdll_first,
            cdll_last,
        });
    }
    Ok((
        NeuralEmModel {
            net,
            jump,
            family: cfg.family,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classic::ibm1_posteriors;

    fn pairs_from(ids: &[(&[u32], &[u32])]) -> Vec<Pair> {
        ids.iter()
            .map(|(s, t)| {
                (
                    Sentence::word_level(s.to_vec()),
                    Sentence::word_level(t.to_vec()),
                )
            })
            .collect()
    }

    #[test]
    fn estep_matches_classic_posteriors_through_the_table() {
        // Whatever table the network realizes, the neural E-step must equal
        // the count-based IBM-1 posteriors computed from that same table.
        let mut rng = ChaCha20Rng::seed_from_u64(71);
        let net = EmissionNet::new(6, 7, 5, 4, &mut rng);
        let table = net.table();
        let src = Sentence::word_level(vec![2, 5, 3]);
        let tgt = Sentence::word_level(vec![4, 2]);
        let got = ibm1_estep_posteriors(&table, &src, &tgt);
        let want = ibm1_posteriors(&table, &src, &tgt);
        for (gr, wr) in got.iter().zip(&want) {
            for (g, w) in gr.iter().zip(wr) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn table_rows_are_distributions() {
        let mut rng = ChaCha20Rng::seed_from_u64(72);
        let net = EmissionNet::new(9, 11, 6, 4, &mut rng);
        let table = net.table();
        assert!(table.normalization_error() < 1e-12);
    }

    #[test]
    fn cdll_does_not_decrease_over_m_steps() {
        let pairs = pairs_from(&[
            (&[2, 3], &[2, 3]),
            (&[3, 2], &[3, 2]),
            (&[4, 2], &[4, 2]),
            (&[3, 4], &[3, 4]),
        ]);
        let cfg = NeuralEmConfig {
            iterations: 3,
            m_steps: 40,
            emb_dim: 8,
            hidden: 6,
            seed: 5,
            ..Default::default()
        };
        let (_, trace) = neural_em_train(&pairs, 5, 5, &cfg).unwrap();
        for it in &trace {
            assert!(
                it.cdll_last >= it.cdll_first - 1e-9,
                "M-step regressed: {} -> {}",
                it.cdll_first,
                it.cdll_last
            );
        }
    }

    #[test]
    fn learns_a_tiny_dictionary() {
        // Bijective toy dictionary; after a few EM iterations the decoder
        // should align words to their translations.
        let pairs = pairs_from(&[
            (&[2, 3], &[2, 3]),
            (&[3, 2], &[3, 2]),
            (&[4, 3], &[4, 3]),
            (&[2, 4], &[2, 4]),
            (&[3, 4, 2], &[3, 4, 2]),
        ]);
        let cfg = NeuralEmConfig {
            iterations: 6,
            m_steps: 60,
            emb_dim: 8,
            hidden: 6,
            seed: 6,
            ..Default::default()
        };
        let (model, trace) = neural_em_train(&pairs, 5, 5, &cfg).unwrap();
        assert!(trace.last().unwrap().loglik > trace.first().unwrap().loglik);
        let set = model.decode(&pairs[0].0, &pairs[0].1);
        let links: Vec<_> = set.links().map(|(j, i, _)| (j, i)).collect();
        assert_eq!(links, vec![(1, 1), (2, 2)]);
    }

    #[test]
    fn hmm_family_learns_jump_structure() {
        // Monotone pairs: jumps of +1 dominate.
        let pairs = pairs_from(&[
            (&[2, 3, 4], &[2, 3, 4]),
            (&[3, 4, 2], &[3, 4, 2]),
            (&[4, 2, 3], &[4, 2, 3]),
        ]);
        let cfg = NeuralEmConfig {
            family: Family::Hmm,
            iterations: 5,
            m_steps: 50,
            emb_dim: 8,
            hidden: 6,
            seed: 7,
            ..Default::default()
        };
        let (model, _) = neural_em_train(&pairs, 5, 5, &cfg).unwrap();
        let jump = model.jump.as_ref().unwrap();
        let plus_one = jump.data()[(1 + JUMP_WINDOW) as usize];
        let minus_five = jump.data()[(-5 + JUMP_WINDOW) as usize];
        assert!(plus_one > minus_five * 10.0);
    }
}
