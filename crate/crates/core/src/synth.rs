//! Synthetic parallel data with a known bijective lexicon.
//!
//! Source word `s{k}` always translates to `t{k}` and word order is kept, so
//! every correct translation is known. Words fall into frequency tiers so that
//! a LexBar cut-off leaves chosen words out of the neural vocabulary while the
//! aligner still sees them often enough to enter the dictionary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Always-present high-frequency words.
    pub frequent: usize,
    /// Tiers of (number of words, training occurrences per word), rarest last.
    pub tiers: Vec<(usize, usize)>,
    /// Words never seen in training.
    pub unseen: usize,
    /// Designated test words, taken from the front of `designated_tier`.
    pub designated: usize,
    pub designated_tier: usize,
    /// How many test sentences each designated word appears in.
    pub designated_repeats: usize,
    pub dev_pairs: usize,
    /// Tier whose words appear once in each dev sentence.
    pub dev_tier: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 17,
            train_pairs: 2000,
            min_len: 4,
            max_len: 8,
            frequent: 80,
            tiers: vec![(100, 5), (120, 3), (100, 2), (50, 1)],
            unseen: 50,
            designated: 50,
            designated_tier: 1,
            designated_repeats: 2,
            dev_pairs: 100,
            dev_tier: 2,
        }
    }
}

impl SynthConfig {
    pub fn vocab_size(&self) -> usize {
        self.frequent + self.tiers.iter().map(|t| t.0).sum::<usize>() + self.unseen
    }
}

/// A test sentence whose translation hinges on one word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub source_word: String,
    pub target_word: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    /// Sentences containing one designated (rare but seen) word each.
    pub test_seen: ParallelCorpus,
    pub seen_slots: Vec<Slot>,
    /// Sentences containing one word never seen in training.
    pub test_unseen: ParallelCorpus,
    pub unseen_slots: Vec<Slot>,
}

impl SynthData {
    /// Both test parts, seen first.
    pub fn test(&self) -> ParallelCorpus {
        self.test_seen.concat(&self.test_unseen)
    }

    pub fn slots(&self) -> Vec<Slot> {
        self.seen_slots.iter().chain(&self.unseen_slots).cloned().collect()
    }
}

pub fn source_word(k: usize) -> String {
    format!("s{k}")
}

pub fn target_word(k: usize) -> String {
    format!("t{k}")
}

fn translate(src: &Sentence) -> Sentence {
    src.iter().map(|w| format!("t{}", &w[1..])).collect()
}

struct Layout {
    frequent: Vec<usize>,
    tiers: Vec<Vec<usize>>,
    unseen: Vec<usize>,
}

fn layout(cfg: &SynthConfig) -> Layout {
    let mut next = 0;
    let mut take = |n: usize| {
        let v: Vec<usize> = (next..next + n).collect();
        next += n;
        v
    };
    let frequent = take(cfg.frequent);
    let tiers = cfg.tiers.iter().map(|&(n, _)| take(n)).collect();
    let unseen = take(cfg.unseen);
    Layout {
        frequent,
        tiers,
        unseen,
    }
}

/// A sentence of random length with `fixed` words at random positions and frequent filler.
fn sentence(rng: &mut ChaCha8Rng, cfg: &SynthConfig, frequent: &[usize], fixed: &[usize]) -> Sentence {
    let len = rng.gen_range(cfg.min_len.max(fixed.len())..=cfg.max_len.max(fixed.len()));
    let mut words: Vec<usize> = (0..len - fixed.len())
        .map(|_| frequent[rng.gen_range(0..frequent.len())])
        .collect();
    for &f in fixed {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, f);
    }
    words.into_iter().map(source_word).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.frequent == 0 {
        return Err(Error::Invalid("bad synthetic sentence lengths or vocabulary".into()));
    }
    if cfg.designated_tier >= cfg.tiers.len()
        || cfg.dev_tier >= cfg.tiers.len()
        || cfg.designated > cfg.tiers[cfg.designated_tier].0
    {
        return Err(Error::Invalid("designated or dev tier out of range".into()));
    }
    let lay = layout(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // training: every tier word occupies exactly its quota of random slots
    let lengths: Vec<usize> = (0..cfg.train_pairs)
        .map(|_| rng.gen_range(cfg.min_len..=cfg.max_len))
        .collect();
    let slots: usize = lengths.iter().sum();
    let mut rare: Vec<usize> = Vec::new();
    for (words, &(_, count)) in lay.tiers.iter().zip(&cfg.tiers) {
        for &w in words {
            rare.extend(std::iter::repeat_n(w, count));
        }
    }
    if rare.len() > slots {
        return Err(Error::Invalid("tiers need more slots than the corpus has".into()));
    }
    let mut cells: Vec<Option<usize>> = vec![None; slots];
    let mut positions: Vec<usize> = (0..slots).collect();
    positions.shuffle(&mut rng);
    for (&p, &w) in positions.iter().zip(&rare) {
        cells[p] = Some(w);
    }
    let mut train = Vec::with_capacity(cfg.train_pairs);
    let mut off = 0;
    for &len in &lengths {
        let s: Sentence = cells[off..off + len]
            .iter()
            .map(|c| source_word(c.unwrap_or_else(|| lay.frequent[rng.gen_range(0..lay.frequent.len())])))
            .collect();
        off += len;
        let t = translate(&s);
        train.push((s, t));
    }

    let mut dev = Vec::with_capacity(cfg.dev_pairs);
    let dev_words = &lay.tiers[cfg.dev_tier];
    for i in 0..cfg.dev_pairs {
        let s = sentence(&mut rng, cfg, &lay.frequent, &[dev_words[i % dev_words.len()]]);
        let t = translate(&s);
        dev.push((s, t));
    }

    let designated = &lay.tiers[cfg.designated_tier][..cfg.designated];
    let companions = &lay.tiers[0];
    let mut seen = Vec::new();
    let mut seen_slots = Vec::new();
    for r in 0..cfg.designated_repeats {
        for (i, &d) in designated.iter().enumerate() {
            let m = companions[(i + r * designated.len()) % companions.len()];
            let s = sentence(&mut rng, cfg, &lay.frequent, &[d, m]);
            seen.push((s.clone(), translate(&s)));
            seen_slots.push(Slot {
                source_word: source_word(d),
                target_word: target_word(d),
            });
        }
    }
    let mut unseen = Vec::new();
    let mut unseen_slots = Vec::new();
    for &u in &lay.unseen {
        let s = sentence(&mut rng, cfg, &lay.frequent, &[u]);
        unseen.push((s.clone(), translate(&s)));
        unseen_slots.push(Slot {
            source_word: source_word(u),
            target_word: target_word(u),
        });
    }
    Ok(SynthData {
        train: ParallelCorpus::new(train),
        dev: ParallelCorpus::new(dev),
        test_seen: ParallelCorpus::new(seen),
        seen_slots,
        test_unseen: ParallelCorpus::new(unseen),
        unseen_slots,
    })
}

/// Which slots have their target word present in the matching hypothesis.
pub fn slot_hits(hyps: &[Sentence], slots: &[Slot]) -> Vec<bool> {
    hyps.iter()
        .zip(slots)
        .map(|(h, s)| h.contains(&s.target_word))
        .collect()
}
