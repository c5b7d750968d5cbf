//! Statistical word alignment and dictionary extraction.
//!
//! IBM Model 1 is trained by EM in each direction (with a NULL source word),
//! Viterbi links are intersected, and surviving links are counted into a
//! [`BilingualLexicon`]. An HMM jump model can refine Model 1 before the
//! Viterbi step.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;

/// Probability used for pairs never seen together.
pub const PROB_FLOOR: f64 = 1e-12;
const NULL_ID: u32 = 0;
const MAX_JUMP: i64 = 7;

#[derive(Debug, Clone, Default)]
struct Interner {
    ids: HashMap<String, u32>,
    words: Vec<String>,
}

impl Interner {
    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&i) = self.ids.get(w) {
            return i;
        }
        let i = self.words.len() as u32;
        self.words.push(w.to_owned());
        self.ids.insert(w.to_owned(), i);
        i
    }

    fn get(&self, w: &str) -> Option<u32> {
        self.ids.get(w).copied()
    }
}

/// Lexical translation probabilities `t(target | source)`.
#[derive(Debug, Clone)]
pub struct TranslationTable {
    src: Interner,
    tgt: Interner,
    probs: HashMap<(u32, u32), f64>,
}

impl TranslationTable {
    /// `t(tgt | src)`; `None` is the NULL source. Unseen pairs give 0.
    pub fn prob(&self, tgt: &str, src: Option<&str>) -> f64 {
        let s = match src {
            Some(w) => self.src.get(w),
            None => Some(NULL_ID),
        };
        match (s, self.tgt.get(tgt)) {
            (Some(s), Some(t)) => self.probs.get(&(s, t)).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    fn prob_ids(&self, s: u32, t: u32) -> f64 {
        self.probs.get(&(s, t)).copied().unwrap_or(0.0)
    }

    /// Sum of `t(. | s)` for every conditioning word (NULL reported as `None`).
    pub fn source_sums(&self) -> Vec<(Option<String>, f64)> {
        let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
        let mut keys: Vec<_> = self.probs.iter().collect();
        keys.sort_by_key(|(k, _)| **k);
        for ((s, _), p) in keys {
            *sums.entry(*s).or_default() += p;
        }
        sums.into_iter()
            .map(|(s, v)| {
                let name = (s != NULL_ID).then(|| self.src.words[s as usize].clone());
                (name, v)
            })
            .collect()
    }
}

/// Model 1 outcome: the final table and the data log-likelihood seen at each E-step.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub table: TranslationTable,
    pub log_likelihood: Vec<f64>,
}

type Encoded = Vec<(Vec<u32>, Vec<u32>)>;

fn encode_corpus(corpus: &ParallelCorpus) -> (Interner, Interner, Encoded) {
    let mut src = Interner::default();
    src.intern("\u{0}NULL");
    let mut tgt = Interner::default();
    let enc = corpus
        .pairs()
        .iter()
        .map(|(s, t)| {
            let mut sv = vec![NULL_ID];
            sv.extend(s.iter().map(|w| src.intern(w)));
            let tv = t.iter().map(|w| tgt.intern(w)).collect();
            (sv, tv)
        })
        .collect();
    (src, tgt, enc)
}

/// IBM Model 1 EM from a uniform start; `t(target | source)`.
pub fn model1_em(corpus: &ParallelCorpus, iterations: usize) -> Result<EmResult> {
    if corpus.is_empty() {
        return Err(Error::Empty("model1_em"));
    }
    if iterations < 1 {
        return Err(Error::Invalid("model1_em needs at least one iteration".into()));
    }
    let (src, tgt, enc) = encode_corpus(corpus);
    let uniform = 1.0 / tgt.words.len() as f64;
    let mut probs: HashMap<(u32, u32), f64> = HashMap::new();
    let mut history = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let t = |s: u32, f: u32| {
            if it == 0 {
                uniform
            } else {
                probs.get(&(s, f)).copied().unwrap_or(0.0)
            }
        };
        let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
        let mut totals = vec![0.0; src.words.len()];
        let mut ll = 0.0;
        for (sv, tv) in &enc {
            for &f in tv {
                let z: f64 = sv.iter().map(|&e| t(e, f)).sum();
                ll += (z / sv.len() as f64).ln();
                for &e in sv {
                    let c = t(e, f) / z;
                    *counts.entry((e, f)).or_default() += c;
                    totals[e as usize] += c;
                }
            }
        }
        history.push(ll);
        probs = counts
            .into_iter()
            .map(|((e, f), c)| ((e, f), c / totals[e as usize]))
            .collect();
    }
    Ok(EmResult {
        table: TranslationTable { src, tgt, probs },
        log_likelihood: history,
    })
}

/// A set of `(source index, target index)` links for one sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AlignmentLinks {
    pub src_len: usize,
    pub tgt_len: usize,
    pub links: BTreeSet<(usize, usize)>,
}

impl AlignmentLinks {
    pub fn new(src_len: usize, tgt_len: usize, links: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let links: BTreeSet<_> = links.into_iter().collect();
        if let Some(&(i, j)) = links.iter().find(|(i, j)| *i >= src_len || *j >= tgt_len) {
            return Err(Error::Invalid(format!(
                "link {i}-{j} outside a {src_len}x{tgt_len} pair"
            )));
        }
        Ok(AlignmentLinks {
            src_len,
            tgt_len,
            links,
        })
    }

    /// Swap the roles of source and target.
    pub fn transposed(&self) -> Self {
        AlignmentLinks {
            src_len: self.tgt_len,
            tgt_len: self.src_len,
            links: self.links.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    pub fn to_pharaoh(&self) -> String {
        self.links
            .iter()
            .map(|(i, j)| format!("{i}-{j}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_pharaoh(line: &str, src_len: usize, tgt_len: usize) -> Result<Self> {
        let mut links = Vec::new();
        for item in line.split_whitespace() {
            let (i, j) = item
                .split_once('-')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| Error::Invalid(format!("bad link `{item}`")))?;
            links.push((i, j));
        }
        Self::new(src_len, tgt_len, links)
    }
}

/// Link each target word to its most probable source word, or to nothing when
/// NULL is strictly more probable. Ties go to the lowest source index.
pub fn viterbi_align(table: &TranslationTable, src: &[String], tgt: &[String]) -> AlignmentLinks {
    let mut links = BTreeSet::new();
    for (j, f) in tgt.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in src.iter().enumerate() {
            let p = table.prob(f, Some(e)).max(PROB_FLOOR);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        let null = table.prob(f, None).max(PROB_FLOOR);
        if let Some((i, p)) = best {
            if null <= p {
                links.insert((i, j));
            }
        }
    }
    AlignmentLinks {
        src_len: src.len(),
        tgt_len: tgt.len(),
        links,
    }
}

/// Exact set intersection of two link sets over the same pair, both in (src, tgt) order.
pub fn intersect(forward: &AlignmentLinks, backward: &AlignmentLinks) -> Result<AlignmentLinks> {
    if forward.src_len != backward.src_len || forward.tgt_len != backward.tgt_len {
        return Err(Error::Invalid(format!(
            "cannot intersect {}x{} with {}x{} links",
            forward.src_len, forward.tgt_len, backward.src_len, backward.tgt_len
        )));
    }
    Ok(AlignmentLinks {
        src_len: forward.src_len,
        tgt_len: forward.tgt_len,
        links: forward.links.intersection(&backward.links).copied().collect(),
    })
}

/// First-order HMM over source positions with a distance-bucketed jump model.
#[derive(Debug, Clone)]
pub struct HmmAligner {
    table: TranslationTable,
    jumps: Vec<f64>,
}

fn jump_bucket(d: i64) -> usize {
    (d.clamp(-MAX_JUMP, MAX_JUMP) + MAX_JUMP) as usize
}

impl HmmAligner {
    fn transition(&self, from: usize, len: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..len)
            .map(|i| self.jumps[jump_bucket(i as i64 - from as i64)])
            .collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / z).collect()
    }

    fn emissions(&self, sv: &[u32], tv: &[u32]) -> Vec<Vec<f64>> {
        tv.iter()
            .map(|&f| {
                sv.iter()
                    .map(|&e| self.table.prob_ids(e, f).max(PROB_FLOOR))
                    .collect()
            })
            .collect()
    }

    /// Most probable state path; every target word gets one link.
    pub fn viterbi(&self, src: &[String], tgt: &[String]) -> AlignmentLinks {
        let (i_len, j_len) = (src.len(), tgt.len());
        let sv: Vec<u32> = src
            .iter()
            .map(|w| self.table.src.get(w).unwrap_or(u32::MAX))
            .collect();
        let tv: Vec<u32> = tgt
            .iter()
            .map(|w| self.table.tgt.get(w).unwrap_or(u32::MAX))
            .collect();
        let em = self.emissions(&sv, &tv);
        let trans: Vec<Vec<f64>> = (0..i_len).map(|k| self.transition(k, i_len)).collect();
        let mut score: Vec<f64> = (0..i_len)
            .map(|i| (1.0 / i_len as f64).ln() + em[0][i].ln())
            .collect();
        let mut back = vec![vec![0usize; i_len]; j_len];
        for j in 1..j_len {
            let mut next = vec![f64::NEG_INFINITY; i_len];
            for i in 0..i_len {
                for (k, row) in trans.iter().enumerate() {
                    let s = score[k] + row[i].ln();
                    if s > next[i] {
                        next[i] = s;
                        back[j][i] = k;
                    }
                }
                next[i] += em[j][i].ln();
            }
            score = next;
        }
        let mut best = 0;
        for i in 1..i_len {
            if score[i] > score[best] {
                best = i;
            }
        }
        let mut links = BTreeSet::new();
        let mut state = best;
        for j in (0..j_len).rev() {
            links.insert((state, j));
            state = back[j][state];
        }
        AlignmentLinks {
            src_len: i_len,
            tgt_len: j_len,
            links,
        }
    }
}

/// Baum-Welch refinement of a Model 1 table with a jump distribution.
pub fn hmm_em(corpus: &ParallelCorpus, init: &TranslationTable, iterations: usize) -> Result<HmmAligner> {
    if corpus.is_empty() {
        return Err(Error::Empty("hmm_em"));
    }
    let mut model = HmmAligner {
        table: init.clone(),
        jumps: vec![1.0; 2 * MAX_JUMP as usize + 1],
    };
    let enc: Encoded = corpus
        .pairs()
        .iter()
        .map(|(s, t)| {
            let sv = s.iter().map(|w| model.table.src.get(w).unwrap_or(u32::MAX)).collect();
            let tv = t.iter().map(|w| model.table.tgt.get(w).unwrap_or(u32::MAX)).collect();
            (sv, tv)
        })
        .collect();
    for _ in 0..iterations {
        let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
        let mut totals: HashMap<u32, f64> = HashMap::new();
        let mut jump_counts = vec![0.0; model.jumps.len()];
        for (sv, tv) in &enc {
            let (il, jl) = (sv.len(), tv.len());
            let em = model.emissions(sv, tv);
            let trans: Vec<Vec<f64>> = (0..il).map(|k| model.transition(k, il)).collect();
            let mut alpha = vec![vec![0.0; il]; jl];
            let mut scale = vec![0.0; jl];
            for i in 0..il {
                alpha[0][i] = em[0][i] / il as f64;
            }
            scale[0] = alpha[0].iter().sum();
            alpha[0].iter_mut().for_each(|a| *a /= scale[0]);
            for j in 1..jl {
                for i in 0..il {
                    let inflow: f64 = (0..il).map(|k| alpha[j - 1][k] * trans[k][i]).sum();
                    alpha[j][i] = inflow * em[j][i];
                }
                scale[j] = alpha[j].iter().sum();
                let c = scale[j];
                alpha[j].iter_mut().for_each(|a| *a /= c);
            }
            let mut beta = vec![vec![1.0; il]; jl];
            for j in (0..jl - 1).rev() {
                for k in 0..il {
                    beta[j][k] = (0..il)
                        .map(|i| trans[k][i] * em[j + 1][i] * beta[j + 1][i])
                        .sum::<f64>()
                        / scale[j + 1];
                }
            }
            for j in 0..jl {
                for i in 0..il {
                    let g = alpha[j][i] * beta[j][i];
                    if sv[i] != u32::MAX && tv[j] != u32::MAX {
                        *counts.entry((sv[i], tv[j])).or_default() += g;
                        *totals.entry(sv[i]).or_default() += g;
                    }
                    if j > 0 {
                        for k in 0..il {
                            let xi = alpha[j - 1][k] * trans[k][i] * em[j][i] * beta[j][i] / scale[j];
                            jump_counts[jump_bucket(i as i64 - k as i64)] += xi;
                        }
                    }
                }
            }
        }
        model.table.probs = counts
            .into_iter()
            .map(|(k, c)| (k, c / totals[&k.0]))
            .collect();
        let z: f64 = jump_counts.iter().sum::<f64>() + jump_counts.len() as f64 * 1e-3;
        model.jumps = jump_counts.iter().map(|c| (c + 1e-3) / z).collect();
    }
    Ok(model)
}

/// Which directional model produces the Viterbi links.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignConfig {
    pub iterations: usize,
    pub hmm_iterations: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            iterations: 5,
            hmm_iterations: None,
        }
    }
}

fn directional_links(corpus: &ParallelCorpus, cfg: &AlignConfig) -> Result<Vec<AlignmentLinks>> {
    let m1 = model1_em(corpus, cfg.iterations)?;
    Ok(match cfg.hmm_iterations {
        Some(n) => {
            let hmm = hmm_em(corpus, &m1.table, n)?;
            corpus.pairs().iter().map(|(s, t)| hmm.viterbi(s, t)).collect()
        }
        None => corpus
            .pairs()
            .iter()
            .map(|(s, t)| viterbi_align(&m1.table, s, t))
            .collect(),
    })
}

/// Train both directions and intersect their Viterbi links per pair.
pub fn symmetrized_links(corpus: &ParallelCorpus, cfg: &AlignConfig) -> Result<Vec<AlignmentLinks>> {
    let forward = directional_links(corpus, cfg)?;
    let backward = directional_links(&corpus.reversed(), cfg)?;
    forward
        .iter()
        .zip(&backward)
        .map(|(f, b)| intersect(f, &b.transposed()))
        .collect()
}

/// Count word pairs over all links; keep those seen at least `min_count` times.
pub fn extract_dictionary(
    corpus: &ParallelCorpus,
    links: &[AlignmentLinks],
    min_count: u64,
) -> Result<BilingualLexicon> {
    if min_count < 1 {
        return Err(Error::Invalid("min_count must be at least 1".into()));
    }
    if links.len() != corpus.len() {
        return Err(Error::Invalid(format!(
            "{} link sets for {} sentence pairs",
            links.len(),
            corpus.len()
        )));
    }
    let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for ((s, t), l) in corpus.pairs().iter().zip(links) {
        if l.src_len != s.len() || l.tgt_len != t.len() {
            return Err(Error::Invalid("link set does not match its sentence pair".into()));
        }
        for &(i, j) in &l.links {
            *counts.entry((s[i].as_str(), t[j].as_str())).or_default() += 1;
        }
    }
    Ok(BilingualLexicon::from_triples(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|((s, t), c)| (s.to_owned(), t.to_owned(), c)),
    ))
}

pub fn write_pharaoh(path: impl AsRef<Path>, links: &[AlignmentLinks]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for l in links {
        writeln!(w, "{}", l.to_pharaoh()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read one Pharaoh line per pair of `corpus`.
pub fn read_pharaoh(path: impl AsRef<Path>, corpus: &ParallelCorpus) -> Result<Vec<AlignmentLinks>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != corpus.len() {
        return Err(Error::Misaligned(lines.len().min(corpus.len()) + 1));
    }
    lines
        .iter()
        .zip(corpus.pairs())
        .enumerate()
        .map(|(n, (line, (s, t)))| {
            AlignmentLinks::parse_pharaoh(line, s.len(), t.len()).map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use proptest::prelude::*;

    fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus::new(pairs.iter().map(|(s, t)| (tokenize(s), tokenize(t))).collect())
    }

    #[test]
    fn toy_em_concentrates_on_cooccurrence() {
        let c = corpus(&[("a", "x"), ("a b", "x y")]);
        let r = model1_em(&c, 10).unwrap();
        // reference values from a hand-run EM: t(x|a) = 0.949, t(y|b) = 0.9909
        assert!(r.table.prob("x", Some("a")) > 0.9);
        assert!((r.table.prob("x", Some("a")) - 0.949).abs() < 5e-4);
        assert!((r.table.prob("y", Some("b")) - 0.9909).abs() < 5e-4);
        let l = viterbi_align(&r.table, &tokenize("a b"), &tokenize("x y"));
        assert_eq!(l.links, BTreeSet::from([(0, 0), (1, 1)]));
    }

    #[test]
    fn single_pair_mass_stays_on_observed_target() {
        let c = corpus(&[("a", "x")]);
        let r = model1_em(&c, 3).unwrap();
        assert_eq!(r.table.prob("x", Some("a")), 1.0);
        assert_eq!(r.table.prob("x", None), 1.0);
        assert_eq!(r.table.prob("y", Some("a")), 0.0);
    }

    #[test]
    fn em_errors() {
        assert!(matches!(
            model1_em(&ParallelCorpus::default(), 3),
            Err(Error::Empty(_))
        ));
        assert!(model1_em(&corpus(&[("a", "x")]), 0).is_err());
    }

    #[test]
    fn viterbi_single_and_ties() {
        let c = corpus(&[("a", "x")]);
        let t = model1_em(&c, 1).unwrap().table;
        assert_eq!(
            viterbi_align(&t, &tokenize("a"), &tokenize("x")).links,
            BTreeSet::from([(0, 0)])
        );
        // one uniform iteration over a 2x2 pair: every t equals 1/2
        let c2 = corpus(&[("p q", "u v")]);
        let t2 = model1_em(&c2, 1).unwrap().table;
        let l = viterbi_align(&t2, &tokenize("p q"), &tokenize("u v"));
        assert_eq!(l.links, BTreeSet::from([(0, 0), (0, 1)]));
    }

    #[test]
    fn intersection_cases() {
        let mk = |v: &[(usize, usize)]| AlignmentLinks::new(3, 2, v.iter().copied()).unwrap();
        let f = mk(&[(0, 0), (1, 1), (2, 1)]);
        let b = mk(&[(0, 0), (1, 1)]);
        assert_eq!(intersect(&f, &b).unwrap(), b);
        assert_eq!(intersect(&f, &f).unwrap(), f);
        assert!(intersect(&mk(&[(0, 0)]), &mk(&[(1, 1)])).unwrap().links.is_empty());
        let other = AlignmentLinks::new(2, 2, []).unwrap();
        assert!(intersect(&f, &other).is_err());
    }

    #[test]
    fn pharaoh_roundtrip() {
        let l = AlignmentLinks::new(3, 3, [(0, 0), (2, 1)]).unwrap();
        assert_eq!(l.to_pharaoh(), "0-0 2-1");
        assert_eq!(AlignmentLinks::parse_pharaoh("2-1 0-0", 3, 3).unwrap(), l);
        assert!(AlignmentLinks::parse_pharaoh("5-0", 3, 3).is_err());
        assert!(AlignmentLinks::parse_pharaoh("x", 3, 3).is_err());
    }

    #[test]
    fn dictionary_min_count() {
        let c = corpus(&[("a", "x"), ("a", "x")]);
        let links = vec![AlignmentLinks::new(1, 1, [(0, 0)]).unwrap(); 2];
        let d2 = extract_dictionary(&c, &links, 2).unwrap();
        assert_eq!(d2.lookup("a")[0].count, 2);
        assert!(extract_dictionary(&c, &links, 3).unwrap().is_empty());
        assert!(extract_dictionary(&c, &links, 0).is_err());
    }

    #[test]
    fn identity_corpus_aligns_diagonally() {
        let c = corpus(&[
            ("a b c", "a b c"),
            ("b c d", "b c d"),
            ("c d a", "c d a"),
            ("d a b", "d a b"),
        ]);
        let links = symmetrized_links(&c, &AlignConfig { iterations: 10, hmm_iterations: None }).unwrap();
        for l in &links {
            assert_eq!(l.links, BTreeSet::from([(0, 0), (1, 1), (2, 2)]));
        }
    }

    #[test]
    fn hmm_recovers_monotone_links() {
        let c = corpus(&[
            ("a b c", "x y z"),
            ("b c d", "y z w"),
            ("c d a", "z w x"),
            ("d a b", "w x y"),
            ("a c", "x z"),
        ]);
        let cfg = AlignConfig {
            iterations: 10,
            hmm_iterations: Some(5),
        };
        let links = symmetrized_links(&c, &cfg).unwrap();
        assert_eq!(links[0].links, BTreeSet::from([(0, 0), (1, 1), (2, 2)]));
        assert_eq!(links[4].links, BTreeSet::from([(0, 0), (1, 1)]));
    }

    fn arb_corpus() -> impl Strategy<Value = ParallelCorpus> {
        proptest::collection::vec(
            (
                proptest::collection::vec("[a-e]", 1..6),
                proptest::collection::vec("[v-z]", 1..6),
            ),
            1..25,
        )
        .prop_map(ParallelCorpus::new)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn em_likelihood_monotone_and_normalized(c in arb_corpus()) {
            let r = model1_em(&c, 8).unwrap();
            for w in r.log_likelihood.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", r.log_likelihood);
            }
            for (_, s) in r.table.source_sums() {
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn intersection_is_subset_of_both(c in arb_corpus()) {
            let cfg = AlignConfig::default();
            let fwd = directional_links(&c, &cfg).unwrap();
            let bwd = directional_links(&c.reversed(), &cfg).unwrap();
            let sym = symmetrized_links(&c, &cfg).unwrap();
            for ((f, b), s) in fwd.iter().zip(&bwd).zip(&sym) {
                prop_assert!(s.links.is_subset(&f.links));
                prop_assert!(s.links.is_subset(&b.transposed().links));
            }
        }
    }
}
