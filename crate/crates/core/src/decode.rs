//! Greedy and beam decoding with threshold-gated copying and dictionary use.
//!
//! At every step a variant offers a ranked list of choices with selection
//! scores: decoder probabilities, attention weights over source positions
//! (PG copy) or language-model scores of dictionary candidates (Lex
//! variants). Greedy decoding takes the first choice; beam search accumulates
//! log selection scores, so a beam of one reproduces greedy decoding.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{merge_back, read_lines, Sentence, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::fusion::{
    argmax_first, fuse, lexpn_replace_traced, pg_copy, pn_replace_traced, FusionStepState, Provenance,
    TraceRecord, LOG_FLOOR,
};
use crate::lexicon::BilingualLexicon;
use crate::model::{DecoderState, EncodedSource, Seq2Seq, StepNodes, Variant};
use crate::numerics::Graph;

/// Output length cap for a source of `n` tokens.
pub fn length_cap(n: usize) -> usize {
    2 * n + 5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Overrides the default length cap.
    pub max_steps: Option<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 1,
            max_steps: None,
        }
    }
}

/// A decoded sentence with its per-token trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub tokens: Vec<String>,
    pub trace: Vec<TraceRecord>,
    /// Sum of log selection scores, including the end-of-sentence decision.
    pub log_score: f64,
    pub steps: usize,
}

/// One ranked option at a decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub token: String,
    pub feed: u32,
    pub score: f64,
    pub provenance: Provenance,
    pub end: bool,
}

fn ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

fn neural_choices(model: &Seq2Seq, p_dec: &[f64], k: usize) -> Vec<Choice> {
    let vocab = model.tgt_vocab();
    let make = |i: usize| Choice {
        token: vocab.token(i as u32).to_owned(),
        feed: i as u32,
        score: ln(p_dec[i]),
        provenance: Provenance::Neural,
        end: i as u32 == EOS,
    };
    let allowed = |i: &usize| *i as u32 != PAD && *i as u32 != BOS;
    if k == 1 {
        let mut best: Option<usize> = None;
        for i in (0..p_dec.len()).filter(allowed) {
            if best.is_none_or(|b| p_dec[i] > p_dec[b]) {
                best = Some(i);
            }
        }
        return best.into_iter().map(make).collect();
    }
    let mut idx: Vec<usize> = (0..p_dec.len()).filter(allowed).collect();
    idx.sort_by(|&a, &b| p_dec[b].total_cmp(&p_dec[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(make).collect()
}

fn feed_id(model: &Seq2Seq, token: &str) -> u32 {
    model.tgt_vocab().id(token)
}

/// Ranked choices for one step of `variant` (at most `k`).
pub fn step_choices(
    model: &Seq2Seq,
    lex: &BilingualLexicon,
    src: &[String],
    st: &FusionStepState,
    k: usize,
) -> Result<Vec<Choice>> {
    let cfg = model.config();
    let vocab = model.tgt_vocab();
    match cfg.variant {
        Variant::PgCopy if cfg.soft_copy => {
            let d = pg_copy(st, src, vocab)?;
            let mut all: Vec<(String, f64, Provenance, u32)> = d
                .vocab_probs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i as u32 != PAD && *i as u32 != BOS)
                .map(|(i, &p)| (vocab.token(i as u32).to_owned(), p, Provenance::Neural, i as u32))
                .collect();
            all.extend(d.extra.iter().map(|e| (e.surface.clone(), e.prob, e.provenance, UNK)));
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            all.truncate(k);
            Ok(all
                .into_iter()
                .map(|(token, p, provenance, feed)| Choice {
                    token,
                    feed,
                    score: ln(p),
                    provenance,
                    end: feed == EOS,
                })
                .collect())
        }
        Variant::PgCopy if st.p_gen <= cfg.threshold => {
            let mut idx: Vec<usize> = (0..src.len()).collect();
            idx.sort_by(|&a, &b| st.alpha[b].total_cmp(&st.alpha[a]).then(a.cmp(&b)));
            let mut out: Vec<Choice> = Vec::new();
            for i in idx {
                if out.iter().any(|c| c.token == src[i]) {
                    continue;
                }
                out.push(Choice {
                    token: src[i].clone(),
                    feed: feed_id(model, &src[i]),
                    score: ln(st.alpha[i]),
                    provenance: Provenance::Copied,
                    end: false,
                });
                if out.len() == k {
                    break;
                }
            }
            Ok(out)
        }
        v if v.is_lex_fused() && st.p_gen < cfg.threshold => {
            let pos = argmax_first(st.pointer());
            let cands = lex.lookup(&src[pos]);
            if cands.is_empty() {
                return Ok(neural_choices(model, &st.p_dec, k));
            }
            let unk = st.p_dec[UNK as usize];
            let mut scored: Vec<(f64, f64, String)> = cands
                .into_iter()
                .map(|c| {
                    let s = if vocab.contains(&c.target) {
                        st.p_dec[vocab.id(&c.target) as usize]
                    } else {
                        c.weight * unk
                    };
                    (s, c.weight, c.target)
                })
                .collect();
            scored.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then(b.1.total_cmp(&a.1))
                    .then_with(|| a.2.cmp(&b.2))
            });
            scored.truncate(k);
            Ok(scored
                .into_iter()
                .map(|(s, _, token)| Choice {
                    feed: feed_id(model, &token),
                    score: ln(s),
                    provenance: Provenance::Dictionary,
                    end: false,
                    token,
                })
                .collect())
        }
        _ => Ok(neural_choices(model, &st.p_dec, k)),
    }
}

struct Session<'a> {
    model: &'a Seq2Seq,
    lex: &'a BilingualLexicon,
    src: &'a [String],
    g: Graph<'a>,
    enc: EncodedSource,
}

impl<'a> Session<'a> {
    fn new(model: &'a Seq2Seq, lex: &'a BilingualLexicon, src: &'a [String]) -> Result<Self> {
        let mut g = Graph::new(model.params());
        let ids = model.src_vocab().encode(src, false);
        let feats: Option<Vec<[f64; 3]>> = model.variant().has_features().then(|| {
            src.iter()
                .map(|w| lex.entry_features(w, model.tgt_vocab()).as_array())
                .collect()
        });
        let enc = model.encode_graph(&mut g, &ids, feats.as_deref(), &mut None)?;
        Ok(Session {
            model,
            lex,
            src,
            g,
            enc,
        })
    }

    fn step(&mut self, state: &DecoderState, feed: u32) -> Result<(StepNodes, FusionStepState)> {
        let nodes = self.model.step_graph(&mut self.g, &self.enc, state, feed, &mut None)?;
        let st = FusionStepState::from_nodes(&self.g, &nodes);
        Ok((nodes, st))
    }

    fn record(&self, st: &FusionStepState, choice: &Choice) -> Result<TraceRecord> {
        let variant = self.model.variant();
        let pre_norm_mass = if variant.is_lex_fused() {
            fuse(variant, st, self.src, self.lex, self.model.tgt_vocab())?.pre_norm_mass
        } else {
            1.0
        };
        Ok(TraceRecord {
            token: choice.token.clone(),
            provenance: choice.provenance,
            p_gen: variant.is_fused().then_some(st.p_gen),
            position: argmax_first(st.pointer()),
            pre_norm_mass,
        })
    }
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<String>,
    trace: Vec<TraceRecord>,
    alphas: Vec<Vec<f64>>,
    score: f64,
    steps: usize,
    state: DecoderState,
    feed: u32,
}

fn post_hoc(model: &Seq2Seq, lex: &BilingualLexicon, src: &[String], hyp: Hyp) -> Translation {
    let replaced = match model.variant() {
        Variant::PnCopy => Some(pn_replace_traced(&hyp.tokens, &hyp.alphas, src)),
        Variant::Lexpn => Some(lexpn_replace_traced(&hyp.tokens, &hyp.alphas, src, lex)),
        _ => None,
    };
    let mut trace = hyp.trace;
    let tokens = match replaced {
        Some(r) => {
            for (rec, (tok, prov)) in trace.iter_mut().zip(&r) {
                if rec.token != *tok {
                    rec.token = tok.clone();
                    rec.provenance = *prov;
                }
            }
            r.into_iter().map(|(t, _)| t).collect()
        }
        None => hyp.tokens,
    };
    Translation {
        tokens,
        trace,
        log_score: hyp.score,
        steps: hyp.steps,
    }
}

fn empty_translation() -> Translation {
    Translation {
        tokens: Vec::new(),
        trace: Vec::new(),
        log_score: 0.0,
        steps: 0,
    }
}

pub fn greedy_translate(model: &Seq2Seq, lex: &BilingualLexicon, src: &[String]) -> Result<Translation> {
    decode(model, lex, src, &DecodeOptions::default())
}

pub fn beam_translate(model: &Seq2Seq, lex: &BilingualLexicon, src: &[String], beam: usize) -> Result<Translation> {
    decode(
        model,
        lex,
        src,
        &DecodeOptions {
            beam,
            max_steps: None,
        },
    )
}

fn normalized(h: &Hyp) -> f64 {
    h.score / h.steps.max(1) as f64
}

/// Beam search; `beam = 1` is greedy decoding.
pub fn decode(model: &Seq2Seq, lex: &BilingualLexicon, src: &[String], opts: &DecodeOptions) -> Result<Translation> {
    if opts.beam < 1 {
        return Err(Error::Invalid("beam must be at least 1".into()));
    }
    if src.is_empty() {
        return Ok(empty_translation());
    }
    let cap = opts.max_steps.unwrap_or_else(|| length_cap(src.len()));
    let mut sess = Session::new(model, lex, src)?;
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        trace: Vec::new(),
        alphas: Vec::new(),
        score: 0.0,
        steps: 0,
        state: sess.enc.initial.clone(),
        feed: BOS,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..cap {
        let mut pool: Vec<(f64, usize, usize, Choice, TraceRecord, StepNodes, Vec<f64>)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let (nodes, st) = sess.step(&h.state, h.feed)?;
            let choices = step_choices(model, lex, src, &st, opts.beam)?;
            for (rank, c) in choices.into_iter().enumerate() {
                let rec = sess.record(&st, &c)?;
                pool.push((h.score + c.score, hi, rank, c, rec, nodes.clone(), st.alpha.clone()));
            }
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        pool.truncate(opts.beam);
        let mut next = Vec::new();
        for (score, hi, _, c, rec, nodes, alpha) in pool {
            let mut h = live[hi].clone();
            h.score = score;
            h.steps += 1;
            if c.end {
                finished.push(h);
                continue;
            }
            h.tokens.push(c.token);
            h.trace.push(rec);
            h.alphas.push(alpha);
            h.state = nodes.state;
            h.feed = c.feed;
            next.push(h);
        }
        live = next;
        if finished.len() >= opts.beam || live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    let best = finished
        .into_iter()
        .max_by(|a, b| match normalized(a).total_cmp(&normalized(b)) {
            Ordering::Equal => b.tokens.cmp(&a.tokens),
            o => o,
        })
        .expect("at least one hypothesis");
    Ok(post_hoc(model, lex, src, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TranslateOptions {
    pub decode: DecodeOptions,
    /// Join BPE pieces on the output side.
    pub merge_bpe: bool,
}

/// Translate every sentence; output order follows input order.
pub fn translate_corpus(
    model: &Seq2Seq,
    lex: &BilingualLexicon,
    sources: &[Sentence],
    opts: &TranslateOptions,
) -> Result<Vec<Translation>> {
    sources
        .iter()
        .map(|s| {
            let mut t = decode(model, lex, s, &opts.decode)?;
            if opts.merge_bpe {
                t.tokens = merge_back(&t.tokens);
            }
            Ok(t)
        })
        .collect()
}

#[derive(Serialize)]
struct TraceLine<'a> {
    sentence: usize,
    step: usize,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

/// One JSON object per emitted token, tagged with sentence and step indices.
pub fn write_trace(path: impl AsRef<Path>, translations: &[Translation]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (sentence, t) in translations.iter().enumerate() {
        for (step, record) in t.trace.iter().enumerate() {
            let line = serde_json::to_string(&TraceLine {
                sentence,
                step,
                record,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Translate a file line by line; returns the number of lines written.
pub fn translate_file(
    model: &Seq2Seq,
    lex: &BilingualLexicon,
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    trace: Option<&Path>,
    opts: &TranslateOptions,
) -> Result<usize> {
    let sources = read_lines(input)?;
    let out = translate_corpus(model, lex, &sources, opts)?;
    let hyps: Vec<Sentence> = out.iter().map(|t| t.tokens.clone()).collect();
    crate::corpus::write_lines(output, &hyps)?;
    if let Some(p) = trace {
        write_trace(p, &out)?;
    }
    Ok(hyps.len())
}

#[cfg(test)]
mod tests;
