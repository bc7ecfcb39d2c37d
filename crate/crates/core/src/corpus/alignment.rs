//! Alignment link sets, Pharaoh-format files and subword-to-word projection.
//!
//! Positions are 1-indexed on both sides; a source word with no link is
//! unaligned (NULL links are never materialized). Possible links are a
//! superset of sure links: a link stored as `Sure` counts for P as well.

use crate::error::{CoreError, Result};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkFlag {
    Sure,
    Possible,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentSet {
    links: BTreeMap<(u32, u32), LinkFlag>,
    pub source_len: u32,
    pub target_len: u32,
}

impl AlignmentSet {
    pub fn new(source_len: u32, target_len: u32) -> Self {
        AlignmentSet {
            links: BTreeMap::new(),
            source_len,
            target_len,
        }
    }

    /// Inserts a link; a link both sure and possible stays sure.
    pub fn insert(&mut self, j: u32, i: u32, flag: LinkFlag) {
        assert!(
            j >= 1 && j <= self.source_len && i >= 1 && i <= self.target_len,
            "alignment link ({}, {}) outside lengths ({}, {})",
            j,
            i,
            self.source_len,
            self.target_len
        );
        self.links
            .entry((j, i))
            .and_modify(|f| {
                if flag == LinkFlag::Sure {
                    *f = LinkFlag::Sure;
                }
            })
            .or_insert(flag);
    }

    /// Links in (j, i) order.
    pub fn links(&self) -> impl Iterator<Item = (u32, u32, LinkFlag)> + '_ {
        self.links.iter().map(|(&(j, i), &f)| (j, i, f))
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Membership in P (any stored link).
    pub fn contains(&self, j: u32, i: u32) -> bool {
        self.links.contains_key(&(j, i))
    }

    pub fn contains_sure(&self, j: u32, i: u32) -> bool {
        self.links.get(&(j, i)) == Some(&LinkFlag::Sure)
    }

    pub fn sure_count(&self) -> usize {
        self.links.values().filter(|f| **f == LinkFlag::Sure).count()
    }

    pub fn source_is_aligned(&self, j: u32) -> bool {
        self.links.range((j, 0)..=(j, u32::MAX)).next().is_some()
    }

    pub fn target_is_aligned(&self, i: u32) -> bool {
        self.links.keys().any(|&(_, li)| li == i)
    }

    /// Swaps the two sides; used to bring reverse-direction alignments into
    /// (source, target) orientation at load time.
    pub fn transposed(&self) -> AlignmentSet {
        let mut out = AlignmentSet::new(self.target_len, self.source_len);
        for (j, i, f) in self.links() {
            out.insert(i, j, f);
        }
        out
    }

    /// Grows the recorded lengths so every link fits (used after parsing,
    /// where true lengths are unknown).
    fn fit_lengths(&mut self) {
        for &(j, i) in self.links.keys() {
            self.source_len = self.source_len.max(j);
            self.target_len = self.target_len.max(i);
        }
    }

    /// Pins lengths from external knowledge, failing if any link falls
    /// outside.
    pub fn set_lengths(&mut self, source_len: u32, target_len: u32) -> Result<()> {
        for &(j, i) in self.links.keys() {
            if j > source_len || i > target_len {
                return Err(CoreError::Data(format!(
                    "link ({}, {}) outside sentence lengths ({}, {})",
                    j, i, source_len, target_len
                )));
            }
        }
        self.source_len = source_len;
        self.target_len = target_len;
        Ok(())
    }
}

/// Reads one alignment set per line: `j-i` for sure links, `j?i` for
/// possible links. Lengths are inferred from the largest indices.
pub fn read_alignment(path: impl AsRef<Path>) -> Result<Vec<AlignmentSet>> {
    let name = path.as_ref().display().to_string();
    let text = fs::read_to_string(path.as_ref()).map_err(|e| CoreError::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        out.push(parse_line(line, &name, n + 1)?);
    }
    Ok(out)
}

fn parse_line(line: &str, name: &str, lineno: usize) -> Result<AlignmentSet> {
    let mut set = AlignmentSet::new(0, 0);
    let mut staged = Vec::new();
    for tok in line.split_whitespace() {
        let (sep_pos, flag) = match (tok.find('-'), tok.find('?')) {
            (Some(p), None) => (p, LinkFlag::Sure),
            (None, Some(p)) => (p, LinkFlag::Possible),
            _ => {
                return Err(CoreError::format(
                    name,
                    lineno,
                    format!("malformed link token {:?}", tok),
                ))
            }
        };
        let j: u32 = tok[..sep_pos].parse().map_err(|_| {
            CoreError::format(name, lineno, format!("malformed link token {:?}", tok))
        })?;
        let i: u32 = tok[sep_pos + 1..].parse().map_err(|_| {
            CoreError::format(name, lineno, format!("malformed link token {:?}", tok))
        })?;
        if j == 0 || i == 0 {
            return Err(CoreError::format(
                name,
                lineno,
                format!("positions are 1-indexed, got {:?}", tok),
            ));
        }
        staged.push((j, i, flag));
    }
    set.source_len = staged.iter().map(|&(j, _, _)| j).max().unwrap_or(0);
    set.target_len = staged.iter().map(|&(_, i, _)| i).max().unwrap_or(0);
    for (j, i, f) in staged {
        set.insert(j, i, f);
    }
    set.fit_lengths();
    Ok(set)
}

/// Writes sets in the format `read_alignment` parses; round-trips bit-exact.
pub fn write_alignment(path: impl AsRef<Path>, sets: &[AlignmentSet]) -> Result<()> {
    let mut body = String::new();
    for set in sets {
        body.push_str(&format_links(set));
        body.push('\n');
    }
    fs::write(path.as_ref(), body).map_err(|e| CoreError::io(path, e))
}

pub fn format_links(set: &AlignmentSet) -> String {
    let mut parts = Vec::with_capacity(set.len());
    for (j, i, f) in set.links() {
        let sep = match f {
            LinkFlag::Sure => '-',
            LinkFlag::Possible => '?',
        };
        parts.push(format!("{j}{sep}{i}"));
    }
    parts.join(" ")
}

/// Projects subword links up to word level: a word pair is linked iff at
/// least one of its subword pairs is. The word link is sure when any
/// contributing subword link is sure.
pub fn project_to_words(
    sub: &AlignmentSet,
    src_spans: &[u32],
    tgt_spans: &[u32],
) -> Result<AlignmentSet> {
    let src_words = src_spans.last().copied().unwrap_or(0);
    let tgt_words = tgt_spans.last().copied().unwrap_or(0);
    let mut out = AlignmentSet::new(src_words, tgt_words);
    for (j, i, f) in sub.links() {
        if j as usize > src_spans.len() || i as usize > tgt_spans.len() {
            return Err(CoreError::Data(format!(
                "subword link ({}, {}) outside spans ({}, {})",
                j,
                i,
                src_spans.len(),
                tgt_spans.len()
            )));
        }
        out.insert(src_spans[j as usize - 1], tgt_spans[i as usize - 1], f);
    }
    Ok(out)
}
