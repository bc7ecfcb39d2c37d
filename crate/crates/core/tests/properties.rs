//! Randomized invariants over the corpus, alignment and evaluation layers.

use proptest::prelude::*;
use valign_core::corpus::alignment::{
    format_links, project_to_words, read_alignment, write_alignment, AlignmentSet, LinkFlag,
};
use valign_core::corpus::bpe;
use valign_core::eval;

fn word_strategy() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[abcd]{1,6}").unwrap()
}

fn corpus_strategy() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(
        proptest::collection::vec(word_strategy(), 1..6).prop_map(|ws| ws.join(" ")),
        1..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bpe_roundtrips_every_training_line(lines in corpus_strategy(), merges in 0usize..12) {
        let model = bpe::train(&lines, merges, bpe::DEFAULT_MARKER).unwrap();
        for line in &lines {
            let (tokens, spans) = model.apply_line(line);
            prop_assert_eq!(bpe::decode(&tokens, bpe::DEFAULT_MARKER), line.clone());
            // Spans are non-decreasing and count the words.
            prop_assert!(spans.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*spans.last().unwrap() as usize, line.split(' ').count());
        }
    }
}

fn links_strategy(max: u32) -> impl Strategy<Value = Vec<(u32, u32, bool)>> {
    proptest::collection::vec(
        (1..=max, 1..=max, proptest::bool::ANY),
        0..12,
    )
}

fn build_set(links: &[(u32, u32, bool)], sl: u32, tl: u32) -> AlignmentSet {
    let mut s = AlignmentSet::new(sl, tl);
    for &(j, i, sure) in links {
        s.insert(
            j.min(sl).max(1),
            i.min(tl).max(1),
            if sure { LinkFlag::Sure } else { LinkFlag::Possible },
        );
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn alignment_files_roundtrip(sets in proptest::collection::vec(links_strategy(9), 1..5)) {
        let dir = std::env::temp_dir().join(format!("valign-prop-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("rt-{:x}.aln", rand_suffix(&sets)));
        let sets: Vec<AlignmentSet> = sets.iter().map(|l| build_set(l, 9, 9)).collect();
        // Lengths shrink to the max index on read, so compare links.
        write_alignment(&path, &sets).unwrap();
        let back = read_alignment(&path).unwrap();
        prop_assert_eq!(back.len(), sets.len());
        for (a, b) in sets.iter().zip(&back) {
            prop_assert_eq!(
                a.links().collect::<Vec<_>>(),
                b.links().collect::<Vec<_>>()
            );
            prop_assert_eq!(format_links(a), format_links(b));
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn projection_is_monotone_in_links(
        links in links_strategy(6),
        extra in (1u32..=6, 1u32..=6),
        splits in proptest::collection::vec(1u32..=3, 6),
    ) {
        // Spans: word k covers splits[k] consecutive subwords.
        let mut spans = Vec::new();
        for (w, &n) in splits.iter().enumerate() {
            for _ in 0..n {
                spans.push(w as u32 + 1);
            }
        }
        let max = spans.len() as u32;
        let base = build_set(&links, max, max);
        let mut bigger = base.clone();
        bigger.insert(extra.0.min(max), extra.1.min(max), LinkFlag::Sure);

        let p_base = project_to_words(&base, &spans, &spans).unwrap();
        let p_big = project_to_words(&bigger, &spans, &spans).unwrap();
        for (j, i, _) in p_base.links() {
            prop_assert!(p_big.contains(j, i), "adding a subword link dropped ({}, {})", j, i);
        }
    }

    #[test]
    fn sure_only_references_tie_aer_to_f(hyp in links_strategy(8), reff in links_strategy(8)) {
        let h = build_set(&hyp, 8, 8);
        // Force the reference to sure-only (S = P).
        let r = build_set(
            &reff.iter().map(|&(j, i, _)| (j, i, true)).collect::<Vec<_>>(),
            8,
            8,
        );
        let m = eval::metrics_from_counts(&eval::link_counts(&h, &r).unwrap());
        if !r.is_empty() && !h.is_empty() {
            prop_assert!((m.aer - (1.0 - m.f_measure)).abs() < 1e-12,
                "aer {} vs 1-f {}", m.aer, 1.0 - m.f_measure);
        }
    }

    #[test]
    fn gdf_sits_between_intersection_and_union(
        fwd in links_strategy(7),
        rev in links_strategy(7),
    ) {
        let f = build_set(&fwd, 7, 7);
        let r = build_set(&rev, 7, 7);
        let inter = eval::intersect(&f, &r);
        let uni = eval::union_links(&f, &r);
        let gdf = eval::grow_diag_final(&f, &r);
        for (j, i, _) in inter.links() {
            prop_assert!(gdf.contains(j, i));
        }
        for (j, i, _) in gdf.links() {
            prop_assert!(uni.contains(j, i));
        }
    }

    #[test]
    fn counts_are_consistent(hyp in links_strategy(8), reff in links_strategy(8)) {
        let h = build_set(&hyp, 8, 8);
        let r = build_set(&reff, 8, 8);
        let c = eval::link_counts(&h, &r).unwrap();
        prop_assert!(c.hyp_and_sure <= c.hyp_and_poss);
        prop_assert!(c.hyp_and_poss <= c.hyp);
        let m = eval::metrics_from_counts(&c);
        for v in [m.aer, m.precision, m.recall, m.f_measure] {
            prop_assert!((0.0..=1.0).contains(&v), "rate {} out of range", v);
        }
    }

    #[test]
    fn adding_a_mutually_sure_link_never_hurts_aer(
        hyp in links_strategy(6),
        reff in links_strategy(6),
        new_link in (1u32..=6, 1u32..=6),
    ) {
        let h = build_set(&hyp, 6, 6);
        let mut r = build_set(&reff, 6, 6);
        r.insert(new_link.0, new_link.1, LinkFlag::Sure);
        let before = eval::metrics_from_counts(&eval::link_counts(&h, &r).unwrap()).aer;
        let mut h2 = h.clone();
        h2.insert(new_link.0, new_link.1, LinkFlag::Sure);
        let after = eval::metrics_from_counts(&eval::link_counts(&h2, &r).unwrap()).aer;
        prop_assert!(after <= before + 1e-12, "aer rose from {} to {}", before, after);
    }
}

fn rand_suffix<T: std::hash::Hash>(v: &T) -> u64 {
    use std::hash::Hasher;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}
