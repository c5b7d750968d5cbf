//! Parallel corpora, frequency-thresholded vocabularies and BPE.

mod bpe;
mod vocab;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bpe::{merge_back, BpeModel, END_OF_WORD};
pub use vocab::{type_counts, Vocab, BOS, EOS, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};

/// Whitespace tokens of one sentence.
pub type Sentence = Vec<String>;

/// Default training length cap in tokens.
pub const MAX_TRAIN_LEN: usize = 100;

pub fn tokenize(line: &str) -> Sentence {
    line.split_whitespace().map(str::to_owned).collect()
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(tokenize).collect())
}

pub fn write_lines(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{}", s.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Line-aligned source/target sentence pairs with no empty side.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParallelCorpus {
    pairs: Vec<(Sentence, Sentence)>,
}

impl ParallelCorpus {
    /// Pairs with an empty side are dropped.
    pub fn new(pairs: Vec<(Sentence, Sentence)>) -> Self {
        ParallelCorpus {
            pairs: pairs
                .into_iter()
                .filter(|(s, t)| !s.is_empty() && !t.is_empty())
                .collect(),
        }
    }

    /// Zip two sides; differing line counts are an error naming the first unmatched line.
    pub fn from_sides(src: Vec<Sentence>, tgt: Vec<Sentence>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::Misaligned(src.len().min(tgt.len()) + 1));
        }
        Ok(Self::new(src.into_iter().zip(tgt).collect()))
    }

    pub fn from_files(src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<Self> {
        Self::from_sides(read_lines(src)?, read_lines(tgt)?)
    }

    pub fn write(&self, src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<()> {
        let (s, t): (Vec<_>, Vec<_>) = self.pairs.iter().cloned().unzip();
        write_lines(src, &s)?;
        write_lines(tgt, &t)
    }

    pub fn pairs(&self) -> &[(Sentence, Sentence)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|(s, _)| s)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|(_, t)| t)
    }

    /// Drop pairs where either side exceeds `max_len` tokens.
    pub fn cap_length(&self, max_len: usize) -> Self {
        ParallelCorpus {
            pairs: self
                .pairs
                .iter()
                .filter(|(s, t)| s.len() <= max_len && t.len() <= max_len)
                .cloned()
                .collect(),
        }
    }

    /// Swap source and target sides.
    pub fn reversed(&self) -> Self {
        ParallelCorpus {
            pairs: self.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
        }
    }

    pub fn shuffled(&self, seed: u64) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        ParallelCorpus { pairs }
    }

    pub fn concat(&self, other: &ParallelCorpus) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.extend(other.pairs.iter().cloned());
        ParallelCorpus { pairs }
    }

    /// Hold out `fraction` of the pairs (at least `min_dev`) as a dev split.
    pub fn split_dev(&self, fraction: f64, min_dev: usize, seed: u64) -> Result<(Self, Self)> {
        let want = ((self.len() as f64 * fraction).ceil() as usize).max(min_dev);
        if want >= self.len() {
            return Err(Error::Invalid(format!(
                "corpus of {} pairs is too small for a dev split of {}",
                self.len(),
                want
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut dev_mask = vec![false; self.len()];
        idx[..want].iter().for_each(|&i| dev_mask[i] = true);
        let (mut train, mut dev) = (Vec::new(), Vec::new());
        for (p, is_dev) in self.pairs.iter().zip(dev_mask) {
            if is_dev {
                dev.push(p.clone());
            } else {
                train.push(p.clone());
            }
        }
        Ok((ParallelCorpus { pairs: train }, ParallelCorpus { pairs: dev }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        tokenize(text)
    }

    #[test]
    fn misaligned_sides_name_the_line() {
        let err = ParallelCorpus::from_sides(vec![s("a"), s("b")], vec![s("x")]).unwrap_err();
        assert!(matches!(err, Error::Misaligned(2)));
    }

    #[test]
    fn empty_pairs_filtered_and_caps_apply() {
        let c = ParallelCorpus::new(vec![
            (s("a b"), s("x y")),
            (s(""), s("z")),
            (s("a b c d"), s("x")),
        ]);
        assert_eq!(c.len(), 2);
        assert_eq!(c.cap_length(3).len(), 1);
    }

    #[test]
    fn shuffle_and_split_preserve_pairs() {
        let pairs: Vec<_> = (0..50)
            .map(|i| (s(&format!("s{i}")), s(&format!("t{i}"))))
            .collect();
        let c = ParallelCorpus::new(pairs);
        let sh = c.shuffled(3);
        assert_eq!(sh.len(), c.len());
        let mut a = sh.pairs().to_vec();
        a.sort();
        let mut b = c.pairs().to_vec();
        b.sort();
        assert_eq!(a, b);
        let (train, dev) = c.split_dev(0.01, 5, 1).unwrap();
        assert_eq!((train.len(), dev.len()), (45, 5));
        assert!(c.split_dev(0.5, 50, 1).is_err());
    }
}
