//! Corpus BLEU-4 and vocabulary coverage statistics.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::corpus::{type_counts, ParallelCorpus, Sentence};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;

pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU with its sufficient statistics (case-sensitive, tokenized input).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// On a 0-100 scale.
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub smoothed: bool,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        write!(
            f,
            "BLEU = {:.2}, {} (BP = {:.3}, hyp_len = {}, ref_len = {}, case-sensitive{})",
            self.bleu,
            p.join("/"),
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len,
            if self.smoothed { ", add-one smoothing" } else { "" }
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

pub fn bleu(hyps: &[Sentence], refs: &[Sentence]) -> Result<BleuReport> {
    bleu_with(hyps, refs, false)
}

/// BLEU-4; with `smoothing`, orders above one use add-one counts.
pub fn bleu_with(hyps: &[Sentence], refs: &[Sentence], smoothing: bool) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Empty("bleu input"));
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
            totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = if smoothing && n > 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        // a corpus too short for order n has no wrong n-grams
        precisions[n] = if t == 0 { 1.0 } else { m as f64 / t as f64 };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    let bleu = if hyp_len == 0 || precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        smoothed: smoothing,
    })
}

/// Vocabulary and dictionary coverage at one LexBar value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub lexbar: u64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub src_unk_types: usize,
    pub tgt_unk_types: usize,
    pub src_unk_in_dict: usize,
    /// Fraction of source UNK types with a dictionary entry (1 when there are none).
    pub src_unk_coverage: f64,
    /// Types that occur on both sides of the corpus.
    pub shared_types: usize,
}

pub fn coverage_report(corpus: &ParallelCorpus, lexbars: &[u64], lex: &BilingualLexicon) -> Result<Vec<CoverageRow>> {
    if corpus.is_empty() {
        return Err(Error::Empty("coverage corpus"));
    }
    let src = type_counts(corpus.sources());
    let tgt = type_counts(corpus.targets());
    let shared = src.keys().filter(|w| tgt.contains_key(*w)).count();
    lexbars
        .iter()
        .map(|&lexbar| {
            if lexbar < 1 {
                return Err(Error::Invalid("lexbar must be at least 1".into()));
            }
            let src_unk: BTreeSet<&str> = src
                .iter()
                .filter(|(_, &c)| c < lexbar)
                .map(|(w, _)| w.as_str())
                .collect();
            let tgt_unk = tgt.values().filter(|&&c| c < lexbar).count();
            let covered = src_unk.iter().filter(|w| lex.contains(w)).count();
            Ok(CoverageRow {
                lexbar,
                src_vocab: src.len() - src_unk.len(),
                tgt_vocab: tgt.len() - tgt_unk,
                src_unk_types: src_unk.len(),
                tgt_unk_types: tgt_unk,
                src_unk_in_dict: covered,
                src_unk_coverage: if src_unk.is_empty() {
                    1.0
                } else {
                    covered as f64 / src_unk.len() as f64
                },
                shared_types: shared,
            })
        })
        .collect()
}

/// Aligned-column text table.
pub fn render_coverage_text(rows: &[CoverageRow]) -> String {
    let header = [
        "lexbar", "src.voc", "tgt.voc", "src.unk", "tgt.unk", "unk.in.dict", "coverage", "shared",
    ];
    let mut lines = vec![header.iter().map(|h| format!("{h:>11}")).collect::<Vec<_>>().join(" ")];
    for r in rows {
        let cells = [
            r.lexbar.to_string(),
            r.src_vocab.to_string(),
            r.tgt_vocab.to_string(),
            r.src_unk_types.to_string(),
            r.tgt_unk_types.to_string(),
            r.src_unk_in_dict.to_string(),
            format!("{:.4}", r.src_unk_coverage),
            r.shared_types.to_string(),
        ];
        lines.push(cells.iter().map(|c| format!("{c:>11}")).collect::<Vec<_>>().join(" "));
    }
    lines.join("\n") + "\n"
}

/// One JSON object per row.
pub fn render_coverage_json(rows: &[CoverageRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
