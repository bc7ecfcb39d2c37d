//! Corpus ingestion: vocabularies, indexed sentences and parallel data.
//!
//! Two special tokens exist on every side: `<null>` (id 0), which doubles as
//! the target's NULL position 0 and as the encoder's dummy pseudo-sentence
//! token, and `<unk>` (id 1) for test tokens unseen in training.

pub mod alignment;
pub mod bpe;

use crate::error::{CoreError, Result};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub const NULL_TOKEN: &str = "<null>";
pub const UNK_TOKEN: &str = "<unk>";
pub const NULL_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

/// Bijective token <-> id map with contiguous ids `[0, V)`.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.intern(NULL_TOKEN);
        v.intern(UNK_TOKEN);
        v
    }

    /// Returns the id of `token`, inserting it if new.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Id lookup without insertion; unknown tokens map to `<unk>`.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens in id order.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|s| s.as_str())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let body: String = self.tokens.iter().map(|t| format!("{t}\n")).collect();
        fs::write(path.as_ref(), body).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| CoreError::io(&path, e))?;
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (n, line) in text.lines().enumerate() {
            if v.index.contains_key(line) {
                return Err(CoreError::format(
                    path.as_ref().display().to_string(),
                    n + 1,
                    format!("duplicate token {:?}", line),
                ));
            }
            v.intern(line);
        }
        if v.len() < 2 || v.token(NULL_ID) != NULL_TOKEN || v.token(UNK_ID) != UNK_TOKEN {
            return Err(CoreError::Data(format!(
                "{}: vocabulary must start with {} and {}",
                path.as_ref().display(),
                NULL_TOKEN,
                UNK_TOKEN
            )));
        }
        Ok(v)
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

/// Indexed sentence. `word_spans[k]` is the 1-based index of the word that
/// subword `k` came from; for word-level sentences it is just `1..=len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub ids: Vec<u32>,
    pub word_spans: Vec<u32>,
}

impl Sentence {
    pub fn new(ids: Vec<u32>, word_spans: Vec<u32>) -> Self {
        assert!(!ids.is_empty(), "sentence: empty");
        assert_eq!(ids.len(), word_spans.len(), "sentence: span length mismatch");
        assert!(word_spans[0] == 1, "sentence: spans must start at 1");
        assert!(
            word_spans.windows(2).all(|w| w[0] <= w[1]),
            "sentence: spans must be non-decreasing"
        );
        Sentence { ids, word_spans }
    }

    pub fn word_level(ids: Vec<u32>) -> Self {
        let spans = (1..=ids.len() as u32).collect();
        Sentence::new(ids, spans)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of underlying words (last span value).
    pub fn num_words(&self) -> u32 {
        *self.word_spans.last().unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Sentence, Sentence)>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

/// Ingestion knobs. `max_len` keeps only pairs where *both* sides are
/// strictly shorter; it is meant for training data, so test loaders pass
/// `None`. `marker` derives word spans from a BPE continuation marker.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub max_len: Option<usize>,
    pub lowercase: bool,
    pub marker: Option<String>,
}

fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| CoreError::io(&path, e))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn tokenize(line: &str, lowercase: bool) -> Vec<String> {
    let line = if lowercase {
        line.to_lowercase()
    } else {
        line.to_string()
    };
    line.split_whitespace().map(|t| t.to_string()).collect()
}

/// Word spans for a token sequence: with a marker, a token ending in it
/// continues the current word; otherwise every token starts its own word.
fn spans_for(tokens: &[String], marker: Option<&str>) -> Vec<u32> {
    let mut spans = Vec::with_capacity(tokens.len());
    let mut word = 1u32;
    let mut continuing = false;
    for tok in tokens {
        if !continuing && !spans.is_empty() {
            word += 1;
        }
        spans.push(word);
        continuing = match marker {
            Some(m) => tok.ends_with(m) && tok.len() > m.len(),
            None => false,
        };
    }
    spans
}

struct RawPair {
    src: Vec<String>,
    tgt: Vec<String>,
}

fn read_raw_pairs(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<Vec<RawPair>> {
    let src_lines = read_lines(&source_path)?;
    let tgt_lines = read_lines(&target_path)?;
    if src_lines.len() != tgt_lines.len() {
        return Err(CoreError::Data(format!(
            "line count mismatch: {} has {} lines, {} has {}",
            source_path.as_ref().display(),
            src_lines.len(),
            target_path.as_ref().display(),
            tgt_lines.len()
        )));
    }
    let mut pairs = Vec::new();
    for (n, (sl, tl)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let src = tokenize(sl, opts.lowercase);
        let tgt = tokenize(tl, opts.lowercase);
        if src.is_empty() {
            return Err(CoreError::format(
                source_path.as_ref().display().to_string(),
                n + 1,
                "empty sentence",
            ));
        }
        if tgt.is_empty() {
            return Err(CoreError::format(
                target_path.as_ref().display().to_string(),
                n + 1,
                "empty sentence",
            ));
        }
        pairs.push(RawPair { src, tgt });
    }
    Ok(pairs)
}

/// Loads a parallel corpus and builds fresh vocabularies over the retained
/// pairs (plus the special tokens).
pub fn load_parallel(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
    opts: &LoadOptions,
) -> Result<ParallelCorpus> {
    let raw = read_raw_pairs(source_path, target_path, opts)?;
    let mut src_vocab = Vocabulary::new();
    let mut tgt_vocab = Vocabulary::new();
    let marker = opts.marker.as_deref();
    let mut pairs = Vec::new();
    for p in &raw {
        if let Some(max) = opts.max_len {
            if p.src.len() >= max || p.tgt.len() >= max {
                continue;
            }
        }
        let src_ids = p.src.iter().map(|t| src_vocab.intern(t)).collect();
        let tgt_ids = p.tgt.iter().map(|t| tgt_vocab.intern(t)).collect();
        pairs.push((
            Sentence::new(src_ids, spans_for(&p.src, marker)),
            Sentence::new(tgt_ids, spans_for(&p.tgt, marker)),
        ));
    }
    Ok(ParallelCorpus {
        pairs,
        src_vocab,
        tgt_vocab,
    })
}

/// Loads test data against frozen vocabularies; unknown tokens become
/// `<unk>` and no length filtering is applied.
pub fn load_parallel_with_vocabs(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    opts: &LoadOptions,
) -> Result<Vec<(Sentence, Sentence)>> {
    let raw = read_raw_pairs(source_path, target_path, opts)?;
    let marker = opts.marker.as_deref();
    Ok(raw
        .iter()
        .map(|p| {
            let src_ids = p.src.iter().map(|t| src_vocab.id_or_unk(t)).collect();
            let tgt_ids = p.tgt.iter().map(|t| tgt_vocab.id_or_unk(t)).collect();
            (
                Sentence::new(src_ids, spans_for(&p.src, marker)),
                Sentence::new(tgt_ids, spans_for(&p.tgt, marker)),
            )
        })
        .collect())
}

/// Loads monolingual sentences, extending `vocab` with new tokens.
pub fn load_mono(
    path: impl AsRef<Path>,
    vocab: &mut Vocabulary,
    opts: &LoadOptions,
) -> Result<Vec<Sentence>> {
    let lines = read_lines(&path)?;
    let marker = opts.marker.as_deref();
    let mut out = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        let toks = tokenize(line, opts.lowercase);
        if toks.is_empty() {
            return Err(CoreError::format(
                path.as_ref().display().to_string(),
                n + 1,
                "empty sentence",
            ));
        }
        if let Some(max) = opts.max_len {
            if toks.len() >= max {
                continue;
            }
        }
        let ids = toks.iter().map(|t| vocab.intern(t)).collect();
        out.push(Sentence::new(ids, spans_for(&toks, marker)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("valign-corpus-{}-{}", tag, std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn three_matching_lines_give_three_pairs() {
        let d = tmpdir("basic");
        let s = write_file(&d, "s.txt", "a b\nc\nd e f\n");
        let t = write_file(&d, "t.txt", "x\ny z\nw\n");
        let c = load_parallel(&s, &t, &LoadOptions::default()).unwrap();
        assert_eq!(c.pairs.len(), 3);
        assert_eq!(c.pairs[0].0.len(), 2);
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn max_len_excludes_boundary_length() {
        let d = tmpdir("maxlen");
        let long_src = vec!["w"; 50].join(" ");
        let s = write_file(&d, "s.txt", &format!("{}\nshort one\n", long_src));
        let t = write_file(&d, "t.txt", "x\ny z\n");
        let opts = LoadOptions {
            max_len: Some(50),
            ..Default::default()
        };
        let c = load_parallel(&s, &t, &opts).unwrap();
        assert_eq!(c.pairs.len(), 1, "50-token side must be excluded");
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn line_count_mismatch_is_an_error() {
        let d = tmpdir("mismatch");
        let s = write_file(&d, "s.txt", "a\nb\nc\n");
        let t = write_file(&d, "t.txt", "x\ny\nz\nw\n");
        assert!(load_parallel(&s, &t, &LoadOptions::default()).is_err());
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn empty_line_is_an_error_with_line_number() {
        let d = tmpdir("empty");
        let s = write_file(&d, "s.txt", "a\n\nc\n");
        let t = write_file(&d, "t.txt", "x\ny\nz\n");
        let err = load_parallel(&s, &t, &LoadOptions::default()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "got {}", err);
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn vocab_ids_are_stable_and_contiguous() {
        let d = tmpdir("vocab");
        let s = write_file(&d, "s.txt", "b a b\na c\n");
        let t = write_file(&d, "t.txt", "x\ny\n");
        let c1 = load_parallel(&s, &t, &LoadOptions::default()).unwrap();
        let c2 = load_parallel(&s, &t, &LoadOptions::default()).unwrap();
        let v1: Vec<&str> = c1.src_vocab.iter().collect();
        let v2: Vec<&str> = c2.src_vocab.iter().collect();
        assert_eq!(v1, v2);
        assert_eq!(v1, vec![NULL_TOKEN, UNK_TOKEN, "b", "a", "c"]);
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn unknown_test_tokens_map_to_unk() {
        let d = tmpdir("unk");
        let s = write_file(&d, "s.txt", "a b\n");
        let t = write_file(&d, "t.txt", "x y\n");
        let c = load_parallel(&s, &t, &LoadOptions::default()).unwrap();
        let s2 = write_file(&d, "s2.txt", "a zzz\n");
        let t2 = write_file(&d, "t2.txt", "x y\n");
        let pairs =
            load_parallel_with_vocabs(&s2, &t2, &c.src_vocab, &c.tgt_vocab, &LoadOptions::default())
                .unwrap();
        assert_eq!(pairs[0].0.ids[1], UNK_ID);
        fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn marker_spans_group_subwords() {
        let toks: Vec<String> = ["ab@@", "c", "d@@", "e@@", "f"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(spans_for(&toks, Some("@@")), vec![1, 1, 2, 2, 2]);
        assert_eq!(spans_for(&toks, None), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn vocabulary_save_load_roundtrip() {
        let d = tmpdir("vsave");
        let mut v = Vocabulary::new();
        v.intern("hello");
        v.intern("world");
        let p = d.join("v.vocab");
        v.save(&p).unwrap();
        let v2 = Vocabulary::load(&p).unwrap();
        assert_eq!(v.len(), v2.len());
        assert_eq!(v2.id("world"), Some(3));
        fs::remove_dir_all(&d).ok();
    }
}
