//! Alignment evaluation (AER, precision/recall/F, binary aligned/unaligned
//! accuracy, null-link analysis, directional agreement) and symmetrization
//! heuristics (intersection, union, grow-diag-final).
//!
//! Corpus-level rates are micro-averaged: counts are pooled over all pairs
//! before dividing. Undefined 0/0 rates are reported as 1 together with a
//! zero-denominator flag, except precision with an empty hypothesis, which
//! is 0 by convention.

use crate::corpus::alignment::{AlignmentSet, LinkFlag};
use crate::error::{CoreError, Result};

/// Pooled link counts against a sure/possible reference.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkCounts {
    pub hyp: usize,
    pub hyp_and_sure: usize,
    pub hyp_and_poss: usize,
    pub sure: usize,
}

impl LinkCounts {
    pub fn add(&mut self, other: &LinkCounts) {
        self.hyp += other.hyp;
        self.hyp_and_sure += other.hyp_and_sure;
        self.hyp_and_poss += other.hyp_and_poss;
        self.sure += other.sure;
    }
}

fn check_lengths(hyp: &AlignmentSet, reference: &AlignmentSet) -> Result<()> {
    if hyp.source_len != reference.source_len || hyp.target_len != reference.target_len {
        return Err(CoreError::Data(format!(
            "sentence length mismatch: hypothesis ({}, {}) vs reference ({}, {})",
            hyp.source_len, hyp.target_len, reference.source_len, reference.target_len
        )));
    }
    Ok(())
}

/// Counts for one pair. Hypothesis flags are ignored (every predicted link
/// counts as A); reference sure links are S, all reference links are P.
pub fn link_counts(hyp: &AlignmentSet, reference: &AlignmentSet) -> Result<LinkCounts> {
    check_lengths(hyp, reference)?;
    let mut c = LinkCounts {
        hyp: hyp.len(),
        sure: reference.sure_count(),
        ..Default::default()
    };
    for (j, i, _) in hyp.links() {
        if reference.contains_sure(j, i) {
            c.hyp_and_sure += 1;
        }
        if reference.contains(j, i) {
            c.hyp_and_poss += 1;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    pub aer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Set when |A| = 0 (precision forced to 0).
    pub zero_hyp: bool,
    /// Set when |S| = 0 (recall reported as 1).
    pub zero_sure: bool,
}

pub fn metrics_from_counts(c: &LinkCounts) -> Metrics {
    let zero_hyp = c.hyp == 0;
    let zero_sure = c.sure == 0;
    let aer = if c.hyp + c.sure == 0 {
        0.0
    } else {
        1.0 - (c.hyp_and_sure + c.hyp_and_poss) as f64 / (c.hyp + c.sure) as f64
    };
    let precision = if zero_hyp {
        0.0
    } else {
        c.hyp_and_poss as f64 / c.hyp as f64
    };
    let recall = if zero_sure {
        1.0
    } else {
        c.hyp_and_sure as f64 / c.sure as f64
    };
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Metrics {
        aer,
        precision,
        recall,
        f_measure,
        zero_hyp,
        zero_sure,
    }
}

/// Corpus AER with pooled counts.
pub fn aer(hyps: &[AlignmentSet], refs: &[AlignmentSet]) -> Result<f64> {
    Ok(metrics_from_counts(&pool_counts(hyps, refs)?).aer)
}

pub fn pool_counts(hyps: &[AlignmentSet], refs: &[AlignmentSet]) -> Result<LinkCounts> {
    if hyps.len() != refs.len() {
        return Err(CoreError::Data(format!(
            "hypothesis has {} sentences, reference {}",
            hyps.len(),
            refs.len()
        )));
    }
    let mut total = LinkCounts::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&link_counts(h, r)?);
    }
    Ok(total)
}

/// Word-level aligned/unaligned decisions pooled over both sides.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullCounts {
    pub words: usize,
    pub correct: usize,
    pub predicted_unaligned: usize,
    pub reference_unaligned: usize,
    pub both_unaligned: usize,
}

impl NullCounts {
    pub fn add(&mut self, other: &NullCounts) {
        self.words += other.words;
        self.correct += other.correct;
        self.predicted_unaligned += other.predicted_unaligned;
        self.reference_unaligned += other.reference_unaligned;
        self.both_unaligned += other.both_unaligned;
    }

    pub fn accuracy(&self) -> f64 {
        if self.words == 0 {
            1.0
        } else {
            self.correct as f64 / self.words as f64
        }
    }

    /// Precision/recall treating "unaligned" as the positive class; the
    /// second member of the pair flags a 0/0 reported as 1.
    pub fn null_precision(&self) -> (f64, bool) {
        if self.predicted_unaligned == 0 {
            (1.0, true)
        } else {
            (
                self.both_unaligned as f64 / self.predicted_unaligned as f64,
                false,
            )
        }
    }

    pub fn null_recall(&self) -> (f64, bool) {
        if self.reference_unaligned == 0 {
            (1.0, true)
        } else {
            (
                self.both_unaligned as f64 / self.reference_unaligned as f64,
                false,
            )
        }
    }
}

/// A word is reference-unaligned when it appears in no S or P link.
pub fn null_counts(hyp: &AlignmentSet, reference: &AlignmentSet) -> Result<NullCounts> {
    check_lengths(hyp, reference)?;
    let mut c = NullCounts::default();
    let mut tally = |pred_aligned: bool, ref_aligned: bool| {
        c.words += 1;
        if pred_aligned == ref_aligned {
            c.correct += 1;
        }
        if !pred_aligned {
            c.predicted_unaligned += 1;
            if !ref_aligned {
                c.both_unaligned += 1;
            }
        }
        if !ref_aligned {
            c.reference_unaligned += 1;
        }
    };
    for j in 1..=hyp.source_len {
        tally(hyp.source_is_aligned(j), reference.source_is_aligned(j));
    }
    for i in 1..=hyp.target_len {
        tally(hyp.target_is_aligned(i), reference.target_is_aligned(i));
    }
    Ok(c)
}

fn harmonized_lengths(a: &AlignmentSet, b: &AlignmentSet) -> (u32, u32) {
    (
        a.source_len.max(b.source_len),
        a.target_len.max(b.target_len),
    )
}

/// Set intersection; both inputs must already be in (source, target)
/// orientation. Output links are all sure.
pub fn intersect(a: &AlignmentSet, b: &AlignmentSet) -> AlignmentSet {
    let (sl, tl) = harmonized_lengths(a, b);
    let mut out = AlignmentSet::new(sl, tl);
    for (j, i, _) in a.links() {
        if b.contains(j, i) {
            out.insert(j, i, LinkFlag::Sure);
        }
    }
    out
}

pub fn union_links(a: &AlignmentSet, b: &AlignmentSet) -> AlignmentSet {
    let (sl, tl) = harmonized_lengths(a, b);
    let mut out = AlignmentSet::new(sl, tl);
    for (j, i, _) in a.links().chain(b.links()) {
        out.insert(j, i, LinkFlag::Sure);
    }
    out
}

const NEIGHBORS: [(i64, i64); 8] = [
    (-1, 0),
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

/// Moses-convention grow-diag-final: start from the intersection, grow with
/// union links in the 8-neighborhood of current links whenever either
/// endpoint is still unaligned (scanning the grid row-major to a fixpoint),
/// then a final pass over forward links and then reverse links adds any
/// remaining union link with an unaligned endpoint.
pub fn grow_diag_final(fwd: &AlignmentSet, rev: &AlignmentSet) -> AlignmentSet {
    let (sl, tl) = harmonized_lengths(fwd, rev);
    let union = union_links(fwd, rev);
    let mut out = intersect(fwd, rev);
    let mut src_cov = vec![false; sl as usize + 1];
    let mut tgt_cov = vec![false; tl as usize + 1];
    for (j, i, _) in out.links() {
        src_cov[j as usize] = true;
        tgt_cov[i as usize] = true;
    }

    loop {
        let mut added = false;
        for j in 1..=sl {
            for i in 1..=tl {
                if !out.contains(j, i) {
                    continue;
                }
                for (dj, di) in NEIGHBORS {
                    let nj = j as i64 + dj;
                    let ni = i as i64 + di;
                    if nj < 1 || ni < 1 || nj > sl as i64 || ni > tl as i64 {
                        continue;
                    }
                    let (nj, ni) = (nj as u32, ni as u32);
                    if out.contains(nj, ni) || !union.contains(nj, ni) {
                        continue;
                    }
                    if !src_cov[nj as usize] || !tgt_cov[ni as usize] {
                        out.insert(nj, ni, LinkFlag::Sure);
                        src_cov[nj as usize] = true;
                        tgt_cov[ni as usize] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }

    for dir in [fwd, rev] {
        for (j, i, _) in dir.links() {
            if !out.contains(j, i) && (!src_cov[j as usize] || !tgt_cov[i as usize]) {
                out.insert(j, i, LinkFlag::Sure);
                src_cov[j as usize] = true;
                tgt_cov[i as usize] = true;
            }
        }
    }
    out
}

/// Agreement between the two directions plus the intersection heuristic's
/// AER against a reference.
#[derive(Debug, Clone, Copy)]
pub struct AgreementStats {
    pub num_agree: usize,
    pub ratio_fwd: f64,
    pub ratio_rev: f64,
    pub intersection_aer: f64,
}

pub fn agreement_report(
    fwd: &[AlignmentSet],
    rev: &[AlignmentSet],
    refs: &[AlignmentSet],
) -> Result<AgreementStats> {
    if fwd.len() != rev.len() || fwd.len() != refs.len() {
        return Err(CoreError::Data(
            "agreement report needs equal sentence counts".into(),
        ));
    }
    let mut agree = 0usize;
    let mut n_fwd = 0usize;
    let mut n_rev = 0usize;
    let inters: Vec<AlignmentSet> = fwd
        .iter()
        .zip(rev)
        .map(|(f, r)| {
            n_fwd += f.len();
            n_rev += r.len();
            let x = intersect(f, r);
            agree += x.len();
            x
        })
        .collect();
    let mut fixed: Vec<AlignmentSet> = Vec::with_capacity(inters.len());
    for (x, r) in inters.iter().zip(refs) {
        let mut x = x.clone();
        x.set_lengths(r.source_len, r.target_len)?;
        fixed.push(x);
    }
    Ok(AgreementStats {
        num_agree: agree,
        ratio_fwd: if n_fwd == 0 {
            1.0
        } else {
            agree as f64 / n_fwd as f64
        },
        ratio_rev: if n_rev == 0 {
            1.0
        } else {
            agree as f64 / n_rev as f64
        },
        intersection_aer: aer(&fixed, refs)?,
    })
}

/// Full report over a corpus; agreement and reconstruction-accuracy fields
/// are filled in only when available.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub counts: LinkCounts,
    pub metrics: Metrics,
    pub nulls: NullCounts,
    pub agreement: Option<AgreementStats>,
    pub r_acc: Option<f64>,
}

pub fn evaluate(hyps: &[AlignmentSet], refs: &[AlignmentSet]) -> Result<EvalReport> {
    let counts = pool_counts(hyps, refs)?;
    let mut nulls = NullCounts::default();
    for (h, r) in hyps.iter().zip(refs) {
        nulls.add(&null_counts(h, r)?);
    }
    Ok(EvalReport {
        counts,
        metrics: metrics_from_counts(&counts),
        nulls,
        agreement: None,
        r_acc: None,
    })
}

impl EvalReport {
    /// `metric<TAB>value` lines; key names are part of the report format.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('\t');
            s.push_str(&v);
            s.push('\n');
        };
        kv("report_version", "1".into());
        kv("aer", format!("{:.6}", self.metrics.aer));
        kv("precision", format!("{:.6}", self.metrics.precision));
        kv("recall", format!("{:.6}", self.metrics.recall));
        kv("f_measure", format!("{:.6}", self.metrics.f_measure));
        kv("accuracy", format!("{:.6}", self.nulls.accuracy()));
        kv("links_hyp", self.counts.hyp.to_string());
        kv("links_hyp_and_sure", self.counts.hyp_and_sure.to_string());
        kv("links_hyp_and_possible", self.counts.hyp_and_poss.to_string());
        kv("links_sure", self.counts.sure.to_string());
        kv("zero_hyp_flag", (self.metrics.zero_hyp as u8).to_string());
        kv("zero_sure_flag", (self.metrics.zero_sure as u8).to_string());
        kv(
            "unaligned_predicted",
            self.nulls.predicted_unaligned.to_string(),
        );
        kv(
            "unaligned_reference",
            self.nulls.reference_unaligned.to_string(),
        );
        let (np, np_flag) = self.nulls.null_precision();
        let (nr, nr_flag) = self.nulls.null_recall();
        kv("null_precision", format!("{:.6}", np));
        kv("null_precision_zero_denominator", (np_flag as u8).to_string());
        kv("null_recall", format!("{:.6}", nr));
        kv("null_recall_zero_denominator", (nr_flag as u8).to_string());
        if let Some(a) = &self.agreement {
            kv("agree_links", a.num_agree.to_string());
            kv("agree_ratio_fwd", format!("{:.6}", a.ratio_fwd));
            kv("agree_ratio_rev", format!("{:.6}", a.ratio_rev));
            kv("intersection_aer", format!("{:.6}", a.intersection_aer));
        }
        if let Some(r) = self.r_acc {
            kv("reconstruction_accuracy", format!("{:.6}", r));
        }
        s
    }

    /// One line per pair: `index aer precision recall f links_hyp`.
    pub fn per_sentence_tsv(hyps: &[AlignmentSet], refs: &[AlignmentSet]) -> Result<String> {
        let mut s = String::from("sentence\taer\tprecision\trecall\tf_measure\tlinks_hyp\n");
        for (n, (h, r)) in hyps.iter().zip(refs).enumerate() {
            let m = metrics_from_counts(&link_counts(h, r)?);
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                n + 1,
                m.aer,
                m.precision,
                m.recall,
                m.f_measure,
                h.len()
            ));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(links: &[(u32, u32)], sl: u32, tl: u32) -> AlignmentSet {
        let mut s = AlignmentSet::new(sl, tl);
        for &(j, i) in links {
            s.insert(j, i, LinkFlag::Sure);
        }
        s
    }

    #[test]
    fn perfect_hypothesis_has_zero_aer() {
        let r = set(&[(1, 1), (2, 2)], 2, 2);
        let h = r.clone();
        let m = metrics_from_counts(&link_counts(&h, &r).unwrap());
        assert_eq!(m.aer, 0.0);
        assert_eq!((m.precision, m.recall, m.f_measure), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_hypothesis_has_aer_one() {
        let r = set(&[(1, 1)], 2, 2);
        let h = AlignmentSet::new(2, 2);
        let m = metrics_from_counts(&link_counts(&h, &r).unwrap());
        assert_eq!(m.aer, 1.0);
        assert!(m.zero_hyp);
        assert_eq!(m.precision, 0.0);
    }

    #[test]
    fn hand_case_gives_one_third() {
        // A = {(1,1),(2,2)}, S = {(1,1)}, P = {(1,1),(2,3)}.
        let h = set(&[(1, 1), (2, 2)], 2, 3);
        let mut r = AlignmentSet::new(2, 3);
        r.insert(1, 1, LinkFlag::Sure);
        r.insert(2, 3, LinkFlag::Possible);
        let c = link_counts(&h, &r).unwrap();
        assert_eq!(
            c,
            LinkCounts {
                hyp: 2,
                hyp_and_sure: 1,
                hyp_and_poss: 1,
                sure: 1
            }
        );
        let m = metrics_from_counts(&c);
        assert!((m.aer - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.precision - 0.5).abs() < 1e-15);
        assert!((m.recall - 1.0).abs() < 1e-15);
        assert!((m.f_measure - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let h = set(&[(1, 1)], 2, 2);
        let r = set(&[(1, 1)], 2, 3);
        assert!(link_counts(&h, &r).is_err());
    }

    #[test]
    fn sure_only_reference_ties_aer_to_f() {
        let h = set(&[(1, 2), (2, 2), (3, 1)], 3, 3);
        let r = set(&[(1, 1), (2, 2)], 3, 3);
        let m = metrics_from_counts(&link_counts(&h, &r).unwrap());
        assert!((m.aer - (1.0 - m.f_measure)).abs() < 1e-12);
    }

    #[test]
    fn null_stats_hand_case() {
        // 2x2 pair, hyp {(1,1)}, ref S = {(1,1),(2,2)}: predictions call
        // src2/tgt2 unaligned, reference says nothing is unaligned.
        let h = set(&[(1, 1)], 2, 2);
        let r = set(&[(1, 1), (2, 2)], 2, 2);
        let c = null_counts(&h, &r).unwrap();
        assert_eq!(c.words, 4);
        assert_eq!(c.correct, 2);
        assert_eq!(c.predicted_unaligned, 2);
        assert_eq!(c.reference_unaligned, 0);
        let (p, flag) = c.null_precision();
        assert_eq!(p, 0.0);
        assert!(!flag);
        assert_eq!(c.accuracy(), 0.5);
        let (rec, rflag) = c.null_recall();
        assert_eq!(rec, 1.0);
        assert!(rflag);
    }

    #[test]
    fn fully_aligned_everything_is_accurate() {
        let h = set(&[(1, 1), (2, 2)], 2, 2);
        let r = h.clone();
        let c = null_counts(&h, &r).unwrap();
        assert_eq!(c.accuracy(), 1.0);
        let (p, flag) = c.null_precision();
        assert_eq!((p, flag), (1.0, true));
    }

    #[test]
    fn null_stats_symmetric_under_transposition() {
        let h = set(&[(1, 2), (3, 1)], 3, 2);
        let r = set(&[(1, 2), (2, 1)], 3, 2);
        let a = null_counts(&h, &r).unwrap();
        let b = null_counts(&h.transposed(), &r.transposed()).unwrap();
        assert_eq!(a.accuracy(), b.accuracy());
        assert_eq!(a.words, b.words);
    }

    #[test]
    fn intersect_union_basics() {
        let a = set(&[(1, 1), (2, 2)], 3, 2);
        let b = set(&[(1, 1), (3, 2)], 3, 2);
        let x = intersect(&a, &b);
        assert_eq!(x.links().map(|(j, i, _)| (j, i)).collect::<Vec<_>>(), vec![(1, 1)]);
        let u = union_links(&a, &b);
        assert_eq!(u.len(), 3);
        // Disjoint sets.
        let c = set(&[(2, 1)], 3, 2);
        let d = set(&[(3, 2)], 3, 2);
        assert!(intersect(&c, &d).is_empty());
        assert_eq!(union_links(&c, &d).len(), 2);
        // Idempotence.
        assert_eq!(intersect(&a, &a), set(&[(1, 1), (2, 2)], 3, 2));
    }

    #[test]
    fn gdf_identical_directions_are_a_fixpoint() {
        let a = set(&[(1, 2), (2, 1), (3, 3)], 3, 3);
        assert_eq!(grow_diag_final(&a, &a), a);
    }

    #[test]
    fn gdf_hand_trace() {
        // fwd {(1,1),(2,2)}, rev {(1,1),(3,2)}: intersection {(1,1)}, grow
        // adds (2,2) (diagonal neighbor, source 2 unaligned), final adds
        // (3,2) (source 3 unaligned).
        let fwd = set(&[(1, 1), (2, 2)], 3, 2);
        let rev = set(&[(1, 1), (3, 2)], 3, 2);
        let out = grow_diag_final(&fwd, &rev);
        assert_eq!(out, set(&[(1, 1), (2, 2), (3, 2)], 3, 2));
    }

    #[test]
    fn gdf_is_between_intersection_and_union() {
        let fwd = set(&[(1, 1), (2, 3), (4, 2)], 4, 3);
        let rev = set(&[(1, 1), (2, 2), (3, 3)], 4, 3);
        let gdf = grow_diag_final(&fwd, &rev);
        let inter = intersect(&fwd, &rev);
        let uni = union_links(&fwd, &rev);
        for (j, i, _) in inter.links() {
            assert!(gdf.contains(j, i));
        }
        for (j, i, _) in gdf.links() {
            assert!(uni.contains(j, i));
        }
    }

    #[test]
    fn agreement_hand_case() {
        let fwd = vec![set(&[(1, 1), (2, 2)], 3, 2)];
        let rev = vec![set(&[(1, 1), (3, 2)], 3, 2)];
        let refs = vec![set(&[(1, 1)], 3, 2)];
        let a = agreement_report(&fwd, &rev, &refs).unwrap();
        assert_eq!(a.num_agree, 1);
        assert!((a.ratio_fwd - 0.5).abs() < 1e-15);
        assert!((a.ratio_rev - 0.5).abs() < 1e-15);
        assert_eq!(a.intersection_aer, 0.0);
    }

    #[test]
    fn report_tsv_has_versioned_keys() {
        let h = vec![set(&[(1, 1)], 1, 1)];
        let r = vec![set(&[(1, 1)], 1, 1)];
        let rep = evaluate(&h, &r).unwrap();
        let tsv = rep.to_tsv();
        assert!(tsv.starts_with("report_version\t1\n"));
        assert!(tsv.contains("aer\t0.000000\n"));
    }
}
