//! Byte-pair encoding over whitespace-pretokenized text.
//!
//! Training starts from characters inside each word and repeatedly merges
//! the most frequent adjacent symbol pair, breaking frequency ties by
//! lexicographic order of the pair. Applied subwords carry a continuation
//! marker (`@@` by default) on every non-final piece, and decoding strips
//! it back out, so models are trained per language with no end-of-word
//! symbol.

use crate::error::{CoreError, Result};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const DEFAULT_MARKER: &str = "@@";

#[derive(Debug, Clone)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    marker: String,
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>, marker: impl Into<String>) -> Self {
        let mut ranks = HashMap::new();
        for (i, m) in merges.iter().enumerate() {
            let prev = ranks.insert(m.clone(), i);
            assert!(prev.is_none(), "bpe: duplicate merge {:?}", m);
        }
        BpeModel {
            merges,
            ranks,
            marker: marker.into(),
        }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Splits one word into marked subwords.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        while syms.len() > 1 {
            let mut best: Option<usize> = None;
            for k in 0..syms.len() - 1 {
                if let Some(&r) = self
                    .ranks
                    .get(&(syms[k].clone(), syms[k + 1].clone()))
                {
                    if best.is_none_or(|b| r < b) {
                        best = Some(r);
                    }
                }
            }
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut out = Vec::with_capacity(syms.len());
            let mut k = 0;
            while k < syms.len() {
                if k + 1 < syms.len() && syms[k] == *l && syms[k + 1] == *r {
                    out.push(format!("{l}{r}"));
                    k += 2;
                } else {
                    out.push(std::mem::take(&mut syms[k]));
                    k += 1;
                }
            }
            syms = out;
        }
        let last = syms.len().saturating_sub(1);
        for s in &mut syms[..last] {
            s.push_str(&self.marker);
        }
        syms
    }

    /// Splits a whitespace-tokenized line; returns the subword tokens and
    /// the 1-based index of the originating word for each.
    pub fn apply_line(&self, line: &str) -> (Vec<String>, Vec<u32>) {
        let mut tokens = Vec::new();
        let mut spans = Vec::new();
        for (w, word) in line.split_whitespace().enumerate() {
            for piece in self.apply_word(word) {
                tokens.push(piece);
                spans.push(w as u32 + 1);
            }
        }
        (tokens, spans)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = format!("BPE v1 {}\n", self.marker);
        for (l, r) in &self.merges {
            body.push_str(l);
            body.push(' ');
            body.push_str(r);
            body.push('\n');
        }
        fs::write(path.as_ref(), body).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let name = path.as_ref().display().to_string();
        let text = fs::read_to_string(path.as_ref()).map_err(|e| CoreError::io(&path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::format(&name, 1, "missing header"))?;
        let marker = header
            .strip_prefix("BPE v1 ")
            .ok_or_else(|| CoreError::format(&name, 1, "expected 'BPE v1 <marker>' header"))?
            .to_string();
        if marker.is_empty() || marker.contains(char::is_whitespace) {
            return Err(CoreError::format(&name, 1, "bad continuation marker"));
        }
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut it = line.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()));
                }
                _ => {
                    return Err(CoreError::format(
                        &name,
                        n + 2,
                        "expected 'left right' merge",
                    ))
                }
            }
        }
        Ok(BpeModel::new(merges, marker))
    }
}

/// Learns up to `num_merges` merges, stopping early when no adjacent pair is
/// left. Pair frequencies are counted over running text (word types weighted
/// by corpus frequency).
pub fn train<S: AsRef<str>>(lines: &[S], num_merges: usize, marker: &str) -> Result<BpeModel> {
    let mut word_freq: HashMap<&str, u64> = HashMap::new();
    for line in lines {
        for word in line.as_ref().split_whitespace() {
            *word_freq.entry(word).or_insert(0) += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(CoreError::Data("bpe: empty training corpus".into()));
    }

    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .into_iter()
        .map(|(w, n)| (w.chars().map(|c| c.to_string()).collect(), n))
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pair_freq: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, n) in &words {
            for k in 0..syms.len().saturating_sub(1) {
                *pair_freq
                    .entry((syms[k].as_str(), syms[k + 1].as_str()))
                    .or_insert(0) += n;
            }
        }
        // Highest count wins; ties go to the lexicographically smallest
        // pair, which makes the selection independent of hash order.
        let best = pair_freq
            .into_iter()
            .max_by(|(pa, na), (pb, nb)| na.cmp(nb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());

        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut k = 0;
            while k < syms.len() {
                if k + 1 < syms.len() && syms[k] == l && syms[k + 1] == r {
                    out.push(format!("{l}{r}"));
                    k += 2;
                } else {
                    out.push(std::mem::take(&mut syms[k]));
                    k += 1;
                }
            }
            *syms = out;
        }
        merges.push((l, r));
    }
    Ok(BpeModel::new(merges, marker))
}

/// Joins marked subwords back into the original line (single spaces between
/// words).
pub fn decode<S: AsRef<str>>(tokens: &[S], marker: &str) -> String {
    let mut words = Vec::new();
    let mut current = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        match tok.strip_suffix(marker) {
            Some(stem) if !stem.is_empty() => current.push_str(stem),
            _ => {
                current.push_str(tok);
                words.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_repeated_pair_is_learned() {
        let model = train(&["ab ab"], 1, DEFAULT_MARKER).unwrap();
        assert_eq!(model.merges(), &[("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn zero_merges_learns_nothing() {
        let model = train(&["whatever text here"], 0, DEFAULT_MARKER).unwrap();
        assert!(model.merges().is_empty());
    }

    #[test]
    fn frequency_tie_breaks_lexicographically() {
        // (a,a) and (a,b) both occur once; (a,a) is smaller.
        let model = train(&["aa ab"], 1, DEFAULT_MARKER).unwrap();
        assert_eq!(model.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(train(&[" ", ""], 5, DEFAULT_MARKER).is_err());
    }

    #[test]
    fn apply_marks_non_final_subwords() {
        let model = BpeModel::new(vec![("a".into(), "b".into())], DEFAULT_MARKER);
        assert_eq!(model.apply_word("abc"), vec!["ab@@", "c"]);
    }

    #[test]
    fn no_merges_fall_back_to_characters() {
        let model = BpeModel::new(vec![], DEFAULT_MARKER);
        assert_eq!(model.apply_word("ab"), vec!["a@@", "b"]);
    }

    #[test]
    fn stops_early_when_pairs_run_out() {
        let model = train(&["ab"], 100, DEFAULT_MARKER).unwrap();
        assert_eq!(model.merges().len(), 1);
    }

    #[test]
    fn roundtrip_on_corpus_lines() {
        let lines = ["the cat sat", "low lower lowest", "abc abd abe"];
        let model = train(&lines, 6, DEFAULT_MARKER).unwrap();
        for line in &lines {
            let (toks, spans) = model.apply_line(line);
            assert_eq!(decode(&toks, DEFAULT_MARKER), *line);
            assert_eq!(*spans.last().unwrap() as usize, line.split(' ').count());
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let d = std::env::temp_dir().join(format!("valign-bpe-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        let p = d.join("model.bpe");
        let model = train(&["banana bandana"], 4, DEFAULT_MARKER).unwrap();
        model.save(&p).unwrap();
        let loaded = BpeModel::load(&p).unwrap();
        assert_eq!(model.merges(), loaded.merges());
        assert_eq!(model.marker(), loaded.marker());
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn malformed_model_file_reports_line() {
        let d = std::env::temp_dir().join(format!("valign-bpe-bad-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        let p = d.join("bad.bpe");
        fs::write(&p, "BPE v1 @@\na b\nbroken\n").unwrap();
        let err = BpeModel::load(&p).unwrap_err();
        assert!(err.to_string().contains(":3:"), "got {}", err);
        fs::remove_dir_all(&d).ok();
    }
}
