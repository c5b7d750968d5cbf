use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Token/id mapping over tokens seen at least `lexbar` times.
///
/// Ids 0..4 are reserved for [`SPECIALS`]; the rest are ordered by
/// descending count, ties broken lexicographically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    lexbar: u64,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    lexbar: u64,
    entries: Vec<(String, u64)>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_ranked(r.entries, r.lexbar)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            lexbar: v.lexbar,
            entries: v.entries().map(|(t, c)| (t.to_owned(), c)).collect(),
        }
    }
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.counts == other.counts && self.lexbar == other.lexbar
    }
}

impl Vocab {
    pub fn build<'a, I, S>(sentences: I, lexbar: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        if lexbar < 1 {
            return Err(Error::Invalid("lexbar must be at least 1".into()));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        let mut total = 0usize;
        for s in sentences {
            for tok in s.as_ref() {
                total += 1;
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if total == 0 {
            return Err(Error::Empty("build_vocab"));
        }
        let entries = counts
            .into_iter()
            .filter(|(t, _)| !SPECIALS.contains(t))
            .map(|(t, c)| (t.to_owned(), c))
            .collect();
        Ok(Self::from_ranked(entries, lexbar))
    }

    /// Build from (token, count) entries, re-applying the threshold and ranking.
    pub fn from_ranked(mut entries: Vec<(String, u64)>, lexbar: u64) -> Self {
        entries.retain(|(t, c)| *c >= lexbar && !SPECIALS.contains(&t.as_str()));
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut counts = vec![0; SPECIALS.len()];
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            tokens,
            counts,
            lexbar,
            index,
        }
    }

    pub fn lexbar(&self) -> u64 {
        self.lexbar
    }

    /// Number of ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == SPECIALS.len()
    }

    /// Number of real (non-reserved) tokens.
    pub fn num_real(&self) -> usize {
        self.tokens.len() - SPECIALS.len()
    }

    /// True for real tokens in the vocabulary.
    pub fn contains(&self, token: &str) -> bool {
        self.index
            .get(token)
            .is_some_and(|&i| i as usize >= SPECIALS.len())
    }

    pub fn id(&self, token: &str) -> u32 {
        match self.index.get(token) {
            Some(&i) if i as usize >= SPECIALS.len() => i,
            _ => UNK,
        }
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    /// Real tokens with counts, in rank order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .skip(SPECIALS.len())
            .map(|(t, &c)| (t.as_str(), c))
    }

    /// Map tokens to ids; target framing wraps the sequence in BOS/EOS.
    pub fn encode(&self, sentence: &[String], target_side: bool) -> Vec<u32> {
        let body = sentence.iter().map(|t| self.id(t));
        if target_side {
            std::iter::once(BOS).chain(body).chain(std::iter::once(EOS)).collect()
        } else {
            body.collect()
        }
    }

    /// Map ids back to surface tokens, dropping PAD/BOS and stopping at EOS.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).to_owned())
            .collect()
    }

    /// `token<TAB>count` per line in rank order.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        for (t, c) in self.entries() {
            writeln!(w, "{t}\t{c}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>, lexbar: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: "expected token<TAB>count".into(),
            })?;
            let count = count.parse::<u64>().map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })?;
            entries.push((tok.to_owned(), count));
        }
        Ok(Self::from_ranked(entries, lexbar))
    }
}

/// Raw type counts for one corpus side.
pub fn type_counts<'a, I, S>(sentences: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a S>,
    S: AsRef<[String]> + 'a + ?Sized,
{
    let mut counts = BTreeMap::new();
    for s in sentences {
        for t in s.as_ref() {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    counts
}
