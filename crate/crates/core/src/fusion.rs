//! Copy and dictionary fusion heads.
//!
//! Each head mixes the decoder distribution with mass routed through source
//! positions, either by copying the source word (PG copy) or through its
//! dictionary translations (Lex variants). The Lex mixtures are renormalized
//! over the extended vocabulary; the total before normalization is kept as a
//! diagnostic. Plain `f64` versions serve decoding and inspection, graph
//! versions serve training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocab, UNK};
use crate::error::{Error, Result};
use crate::lexicon::BilingualLexicon;
use crate::model::{StepNodes, Variant};
use crate::numerics::{Graph, NodeId};

/// Smallest argument passed to `ln` in every loss term.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Neural,
    Copied,
    Dictionary,
}

/// Head outputs for one decoder step.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionStepState {
    pub alpha: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub p_gen: f64,
    pub pc: Option<Vec<f64>>,
    pub p_dec: Vec<f64>,
}

impl FusionStepState {
    /// Read head values off a decoded step. Variants without a gate report `p_gen = 1`.
    pub fn from_nodes(g: &Graph, step: &StepNodes) -> Self {
        FusionStepState {
            alpha: g.value(step.alpha).to_vec(),
            beta: step.beta.map(|b| g.value(b).to_vec()),
            p_gen: step.p_gen.map_or(1.0, |p| g.scalar_value(p)),
            pc: step.pc.map(|p| g.value(p).to_vec()),
            p_dec: g.value(step.p_dec).to_vec(),
        }
    }

    /// Pointer weights used to pick a source position: β when present, else α.
    pub fn pointer(&self) -> &[f64] {
        self.beta.as_deref().unwrap_or(&self.alpha)
    }

    fn require_beta(&self) -> Result<&[f64]> {
        self.beta
            .as_deref()
            .ok_or_else(|| Error::Invalid("step state has no pointer weights".into()))
    }

    fn require_pc(&self) -> Result<&[f64]> {
        self.pc
            .as_deref()
            .ok_or_else(|| Error::Invalid("step state has no dictionary gate".into()))
    }
}

/// An entry outside the neural lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraEntry {
    pub surface: String,
    pub prob: f64,
    pub provenance: Provenance,
}

/// Probability over the neural lexicon plus surfaces introduced at this step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDistribution {
    pub vocab_probs: Vec<f64>,
    pub extra: Vec<ExtraEntry>,
    pub pre_norm_mass: f64,
}

impl ExtendedDistribution {
    fn neural(p_dec: &[f64]) -> Self {
        ExtendedDistribution {
            vocab_probs: p_dec.to_vec(),
            extra: Vec::new(),
            pre_norm_mass: 1.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.vocab_probs.iter().sum::<f64>() + self.extra.iter().map(|e| e.prob).sum::<f64>()
    }

    pub fn min(&self) -> f64 {
        self.vocab_probs
            .iter()
            .copied()
            .chain(self.extra.iter().map(|e| e.prob))
            .fold(f64::INFINITY, f64::min)
    }

    /// Probability of a surface form; in-lexicon surfaces resolve through `vocab`.
    pub fn prob(&self, surface: &str, vocab: &Vocab) -> f64 {
        if vocab.contains(surface) {
            return self.vocab_probs[vocab.id(surface) as usize];
        }
        self.extra
            .iter()
            .find(|e| e.surface == surface)
            .map_or(0.0, |e| e.prob)
    }

    /// Highest-probability entry; ties go to the vocabulary, then to the smaller surface.
    pub fn argmax(&self, vocab: &Vocab) -> (String, f64, Provenance) {
        let mut best = (UNK as usize, f64::NEG_INFINITY);
        for (i, &p) in self.vocab_probs.iter().enumerate() {
            if p > best.1 {
                best = (i, p);
            }
        }
        let mut out = (vocab.token(best.0 as u32).to_owned(), best.1, Provenance::Neural);
        for e in &self.extra {
            if e.prob > out.1 {
                out = (e.surface.clone(), e.prob, e.provenance);
            }
        }
        out
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

struct Accumulator<'v> {
    vocab: &'v Vocab,
    probs: Vec<f64>,
    extra: BTreeMap<String, (f64, Provenance)>,
}

impl<'v> Accumulator<'v> {
    fn new(vocab: &'v Vocab, p_dec: &[f64], p_gen: f64) -> Self {
        Accumulator {
            vocab,
            probs: p_dec.iter().map(|p| p_gen * p).collect(),
            extra: BTreeMap::new(),
        }
    }

    fn add(&mut self, surface: &str, mass: f64, prov: Provenance) {
        if self.vocab.contains(surface) {
            self.probs[self.vocab.id(surface) as usize] += mass;
        } else {
            self.extra.entry(surface.to_owned()).or_insert((0.0, prov)).0 += mass;
        }
    }

    fn finish(self, mass: f64) -> ExtendedDistribution {
        ExtendedDistribution {
            vocab_probs: self.probs.iter().map(|p| p / mass).collect(),
            extra: self
                .extra
                .into_iter()
                .map(|(surface, (p, provenance))| ExtraEntry {
                    surface,
                    prob: p / mass,
                    provenance,
                })
                .collect(),
            pre_norm_mass: mass,
        }
    }
}

fn check_lengths(st: &FusionStepState, src: &[String], vocab: &Vocab) -> Result<()> {
    if st.alpha.len() != src.len() {
        return Err(Error::Shape {
            op: "fusion",
            expected: vec![src.len()],
            got: vec![st.alpha.len()],
        });
    }
    if st.p_dec.len() != vocab.len() {
        return Err(Error::Shape {
            op: "fusion",
            expected: vec![vocab.len()],
            got: vec![st.p_dec.len()],
        });
    }
    Ok(())
}

/// `p_gen·P_dec(w) + (1 − p_gen)·Σ_{x_i = w} α_i`.
pub fn pg_copy(st: &FusionStepState, src: &[String], vocab: &Vocab) -> Result<ExtendedDistribution> {
    check_lengths(st, src, vocab)?;
    let mut acc = Accumulator::new(vocab, &st.p_dec, st.p_gen);
    for (w, a) in src.iter().zip(&st.alpha) {
        acc.add(w, (1.0 - st.p_gen) * a, Provenance::Copied);
    }
    Ok(acc.finish(1.0))
}

/// Per-position weight of the dictionary term for a Lex variant.
pub fn dictionary_coefficients(variant: Variant, st: &FusionStepState) -> Result<Vec<f64>> {
    let open = 1.0 - st.p_gen;
    Ok(match variant {
        Variant::Lexpg => st.alpha.iter().map(|a| open * a).collect(),
        Variant::LexpgS => st.require_beta()?.iter().map(|b| open * b).collect(),
        Variant::LexpgF => st
            .require_pc()?
            .iter()
            .zip(&st.alpha)
            .map(|(pc, a)| pc * a)
            .collect(),
        Variant::LexpgSf => st
            .require_beta()?
            .iter()
            .zip(st.require_pc()?)
            .map(|(b, pc)| b * (open + pc) / 2.0)
            .collect(),
        other => {
            return Err(Error::Invalid(format!(
                "variant {other} has no dictionary term"
            )))
        }
    })
}

fn lex_mix(
    variant: Variant,
    st: &FusionStepState,
    src: &[String],
    lex: &BilingualLexicon,
    vocab: &Vocab,
) -> Result<ExtendedDistribution> {
    check_lengths(st, src, vocab)?;
    let coef = dictionary_coefficients(variant, st)?;
    if coef.len() != src.len() {
        return Err(Error::Shape {
            op: "fusion",
            expected: vec![src.len()],
            got: vec![coef.len()],
        });
    }
    let mut acc = Accumulator::new(vocab, &st.p_dec, st.p_gen);
    let mut mass = st.p_gen;
    for (w, c) in src.iter().zip(&coef) {
        let cands = lex.lookup(w);
        if cands.is_empty() {
            continue;
        }
        mass += c;
        for cand in cands {
            acc.add(&cand.target, c * cand.weight, Provenance::Dictionary);
        }
    }
    if mass <= 0.0 {
        return Ok(ExtendedDistribution {
            pre_norm_mass: 0.0,
            ..ExtendedDistribution::neural(&st.p_dec)
        });
    }
    Ok(acc.finish(mass))
}

/// Gated dictionary mixture weighted by attention.
pub fn lexpg(st: &FusionStepState, src: &[String], lex: &BilingualLexicon, vocab: &Vocab) -> Result<ExtendedDistribution> {
    lex_mix(Variant::Lexpg, st, src, lex, vocab)
}

/// As [`lexpg`] with the separate pointer weights β.
pub fn lexpg_s(st: &FusionStepState, src: &[String], lex: &BilingualLexicon, vocab: &Vocab) -> Result<ExtendedDistribution> {
    lex_mix(Variant::LexpgS, st, src, lex, vocab)
}

/// Joint (p_gen, PC) gate; position weights PC_i·α_i.
pub fn lexpg_f(st: &FusionStepState, src: &[String], lex: &BilingualLexicon, vocab: &Vocab) -> Result<ExtendedDistribution> {
    lex_mix(Variant::LexpgF, st, src, lex, vocab)
}

/// Position weights β_i·((1 − p_gen) + PC_i)/2.
pub fn lexpg_sf(st: &FusionStepState, src: &[String], lex: &BilingualLexicon, vocab: &Vocab) -> Result<ExtendedDistribution> {
    lex_mix(Variant::LexpgSf, st, src, lex, vocab)
}

/// Output distribution of any variant; unfused variants return the decoder distribution.
pub fn fuse(
    variant: Variant,
    st: &FusionStepState,
    src: &[String],
    lex: &BilingualLexicon,
    vocab: &Vocab,
) -> Result<ExtendedDistribution> {
    match variant {
        Variant::Baseline | Variant::PnCopy | Variant::Lexpn => {
            check_lengths(st, src, vocab)?;
            Ok(ExtendedDistribution::neural(&st.p_dec))
        }
        Variant::PgCopy => pg_copy(st, src, vocab),
        v => lex_mix(v, st, src, lex, vocab),
    }
}

fn replace_unks<F>(output: &[String], alphas: &[Vec<f64>], src: &[String], mut pick: F) -> Vec<(String, Provenance)>
where
    F: FnMut(&str) -> (String, Provenance),
{
    let unk = crate::corpus::SPECIALS[UNK as usize];
    output
        .iter()
        .enumerate()
        .map(|(t, tok)| match alphas.get(t) {
            Some(a) if tok == unk && !src.is_empty() && !a.is_empty() => {
                let i = argmax_first(a).min(src.len() - 1);
                pick(&src[i])
            }
            _ => (tok.clone(), Provenance::Neural),
        })
        .collect()
}

/// Replace every UNK by the source word it attends to most.
pub fn pn_replace(output: &[String], alphas: &[Vec<f64>], src: &[String]) -> Vec<String> {
    pn_replace_traced(output, alphas, src).into_iter().map(|(t, _)| t).collect()
}

pub fn pn_replace_traced(output: &[String], alphas: &[Vec<f64>], src: &[String]) -> Vec<(String, Provenance)> {
    replace_unks(output, alphas, src, |w| (w.to_owned(), Provenance::Copied))
}

/// Replace every UNK by the top dictionary translation of its attended source
/// word, copying the word when it has no entry.
pub fn lexpn_replace(output: &[String], alphas: &[Vec<f64>], src: &[String], lex: &BilingualLexicon) -> Vec<String> {
    lexpn_replace_traced(output, alphas, src, lex)
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

pub fn lexpn_replace_traced(
    output: &[String],
    alphas: &[Vec<f64>],
    src: &[String],
    lex: &BilingualLexicon,
) -> Vec<(String, Provenance)> {
    replace_unks(output, alphas, src, |w| match lex.lookup(w).first() {
        Some(c) => (c.target.clone(), Provenance::Dictionary),
        None => (w.to_owned(), Provenance::Copied),
    })
}

/// Where the gold token lives in the extended vocabulary of one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldTarget {
    /// In the neural lexicon (possibly the UNK id for an unreachable word).
    Vocab(u32),
    /// Outside the neural lexicon but reachable through copying or the dictionary.
    Extra(String),
}

/// Resolve a gold surface for a variant; unreachable out-of-lexicon words map to UNK.
pub fn resolve_gold(variant: Variant, gold: &str, src: &[String], lex: &BilingualLexicon, vocab: &Vocab) -> GoldTarget {
    if vocab.contains(gold) {
        return GoldTarget::Vocab(vocab.id(gold));
    }
    let reachable = match variant {
        Variant::PgCopy => src.iter().any(|w| w == gold),
        v if v.is_lex_fused() => src.iter().any(|w| lex.weight(w, gold) > 0.0),
        _ => false,
    };
    if reachable {
        GoldTarget::Extra(gold.to_owned())
    } else {
        GoldTarget::Vocab(UNK)
    }
}

/// Graph node for the fused probability of `target` at one step.
pub fn fused_prob_graph(
    g: &mut Graph,
    variant: Variant,
    step: &StepNodes,
    src: &[String],
    lex: &BilingualLexicon,
    vocab: &Vocab,
    target: &GoldTarget,
) -> Result<NodeId> {
    let p_gen = step
        .p_gen
        .ok_or_else(|| Error::Invalid(format!("variant {variant} has no gate")))?;
    let n = src.len();
    let surface = match target {
        GoldTarget::Vocab(id) if *id != UNK => Some(vocab.token(*id)),
        GoldTarget::Vocab(_) => None,
        GoldTarget::Extra(s) => Some(s.as_str()),
    };
    let mut terms = Vec::new();
    if let GoldTarget::Vocab(id) = target {
        let p = g.pick(step.p_dec, *id as usize)?;
        terms.push(g.mul(p_gen, p)?);
    }
    if variant == Variant::PgCopy {
        let matches: Vec<f64> = src
            .iter()
            .map(|w| f64::from(u8::from(Some(w.as_str()) == surface)))
            .collect();
        if matches.iter().any(|&m| m > 0.0) {
            let m = g.constant(matches);
            let copied = g.dot(step.alpha, m)?;
            let open = g.one_minus(p_gen)?;
            terms.push(g.mul(open, copied)?);
        }
        return sum_terms(g, &terms);
    }
    let coef = coefficients_graph(g, variant, step, n)?;
    let q: Vec<f64> = src
        .iter()
        .map(|w| surface.map_or(0.0, |s| lex.weight(w, s)))
        .collect();
    let covered: Vec<f64> = src
        .iter()
        .map(|w| f64::from(u8::from(lex.contains(w))))
        .collect();
    if q.iter().any(|&v| v > 0.0) {
        let q = g.constant(q);
        terms.push(g.dot(coef, q)?);
    }
    let num = sum_terms(g, &terms)?;
    if covered.iter().all(|&v| v == 0.0) {
        return g.div(num, p_gen);
    }
    let m = g.constant(covered);
    let dict_mass = g.dot(coef, m)?;
    let z = g.add(p_gen, dict_mass)?;
    g.div(num, z)
}

fn sum_terms(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    match terms {
        [] => Ok(g.scalar(0.0)),
        [t] => Ok(*t),
        _ => {
            let s = g.stack(terms)?;
            g.sum(s)
        }
    }
}

fn coefficients_graph(g: &mut Graph, variant: Variant, step: &StepNodes, n: usize) -> Result<NodeId> {
    let need = |x: Option<NodeId>, what: &str| {
        x.ok_or_else(|| Error::Invalid(format!("variant {variant} step lacks {what}")))
    };
    let p_gen = need(step.p_gen, "p_gen")?;
    match variant {
        Variant::Lexpg => {
            let open = g.one_minus(p_gen)?;
            g.mul_scalar(step.alpha, open)
        }
        Variant::LexpgS => {
            let open = g.one_minus(p_gen)?;
            g.mul_scalar(need(step.beta, "beta")?, open)
        }
        Variant::LexpgF => g.mul(need(step.pc, "pc")?, step.alpha),
        Variant::LexpgSf => {
            let open = g.one_minus(p_gen)?;
            let open = g.broadcast(open, n)?;
            let avg = g.add(open, need(step.pc, "pc")?)?;
            let w = g.mul(need(step.beta, "beta")?, avg)?;
            g.scale(w, 0.5)
        }
        other => Err(Error::Invalid(format!("variant {other} has no dictionary term"))),
    }
}

/// One line of a decoding trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub token: String,
    pub provenance: Provenance,
    pub p_gen: Option<f64>,
    pub position: usize,
    pub pre_norm_mass: f64,
}
