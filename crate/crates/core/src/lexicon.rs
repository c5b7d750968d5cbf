//! The symbolic bilingual dictionary.
//!
//! Entries are `source -> [(target, count)]`. Candidate weights are relative
//! frequencies `q(t|s)` over the (at most [`MAX_CANDIDATES`]) most frequent
//! targets of a source word.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{Error, Result};

pub const MAX_CANDIDATES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub target: String,
    pub count: u64,
    pub weight: f64,
}

/// Per-source-word indicator features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EntryFeatures {
    pub in_dictionary: bool,
    pub unique_translation: bool,
    pub in_target_vocab: bool,
}

impl EntryFeatures {
    pub fn as_array(self) -> [f64; 3] {
        [
            self.in_dictionary as u8 as f64,
            self.unique_translation as u8 as f64,
            self.in_target_vocab as u8 as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BilingualLexicon {
    // candidates sorted by descending count, then target
    entries: BTreeMap<String, Vec<(String, u64)>>,
}

impl BilingualLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from `(source, target, count)` triples; duplicates are summed.
    pub fn from_triples<I, S, T>(triples: I) -> Self
    where
        I: IntoIterator<Item = (S, T, u64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut acc: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (s, t, c) in triples {
            if c > 0 {
                *acc.entry(s.into()).or_default().entry(t.into()).or_default() += c;
            }
        }
        Self::from_nested(acc)
    }

    fn from_nested(acc: BTreeMap<String, BTreeMap<String, u64>>) -> Self {
        let entries = acc
            .into_iter()
            .filter(|(_, m)| !m.is_empty())
            .map(|(s, m)| {
                let mut cands: Vec<(String, u64)> = m.into_iter().collect();
                cands.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                (s, cands)
            })
            .collect();
        BilingualLexicon { entries }
    }

    pub fn triples(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.entries
            .iter()
            .flat_map(|(s, c)| c.iter().map(move |(t, n)| (s.as_str(), t.as_str(), *n)))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_sources(&self) -> usize {
        self.entries.len()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn targets(&self) -> BTreeSet<&str> {
        self.entries
            .values()
            .flat_map(|c| c.iter().map(|(t, _)| t.as_str()))
            .collect()
    }

    /// Weighted candidates for `word`, highest weight first; empty if absent.
    pub fn lookup(&self, word: &str) -> Vec<Candidate> {
        let Some(cands) = self.entries.get(word) else {
            return Vec::new();
        };
        let kept = &cands[..cands.len().min(MAX_CANDIDATES)];
        let total: u64 = kept.iter().map(|(_, c)| c).sum();
        kept.iter()
            .map(|(t, c)| Candidate {
                target: t.clone(),
                count: *c,
                weight: *c as f64 / total as f64,
            })
            .collect()
    }

    /// `q(target | word)`, zero when the pair is absent or truncated away.
    pub fn weight(&self, word: &str, target: &str) -> f64 {
        self.lookup(word)
            .into_iter()
            .find(|c| c.target == target)
            .map_or(0.0, |c| c.weight)
    }

    pub fn entry_features(&self, word: &str, tgt_vocab: &Vocab) -> EntryFeatures {
        let n = self.entries.get(word).map_or(0, Vec::len);
        EntryFeatures {
            in_dictionary: n > 0,
            unique_translation: n == 1,
            in_target_vocab: tgt_vocab.contains(word),
        }
    }

    /// Keep only entries with `count >= min_count`.
    pub fn filter_min_count(&self, min_count: u64) -> Self {
        Self::from_triples(
            self.triples()
                .filter(|&(_, _, c)| c >= min_count)
                .map(|(s, t, c)| (s.to_owned(), t.to_owned(), c)),
        )
    }

    /// Union with counts summed on shared pairs. Neither input is modified.
    pub fn merge(&self, additions: &BilingualLexicon) -> Self {
        Self::from_triples(
            self.triples()
                .chain(additions.triples())
                .map(|(s, t, c)| (s.to_owned(), t.to_owned(), c)),
        )
    }

    /// `source<TAB>target<TAB>count`, sorted by source then descending count.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (s, t, c) in self.triples() {
            writeln!(w, "{s}\t{t}\t{c}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut triples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: n + 1, msg };
            let mut cols = line.split('\t');
            let (Some(s), Some(t), Some(c), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(parse_err("expected source<TAB>target<TAB>count".into()));
            };
            let c: u64 = c.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
            if c == 0 {
                return Err(parse_err("count must be positive".into()));
            }
            triples.push((s.to_owned(), t.to_owned(), c));
        }
        Ok(Self::from_triples(triples))
    }
}

/// How the neural vocabularies and the dictionary overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapStats {
    pub dict_sources: usize,
    pub dict_sources_in_src_vocab: usize,
    pub dict_targets: usize,
    pub dict_targets_in_tgt_vocab: usize,
}

pub fn overlap_stats(lex: &BilingualLexicon, src_vocab: &Vocab, tgt_vocab: &Vocab) -> OverlapStats {
    let targets = lex.targets();
    OverlapStats {
        dict_sources: lex.num_sources(),
        dict_sources_in_src_vocab: lex.sources().filter(|s| src_vocab.contains(s)).count(),
        dict_targets: targets.len(),
        dict_targets_in_tgt_vocab: targets.iter().filter(|t| tgt_vocab.contains(t)).count(),
    }
}
