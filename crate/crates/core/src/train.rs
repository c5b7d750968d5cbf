//! Teacher-forced training: loss composition, Adam, batching, early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, Sentence, BOS, EOS};
use crate::decode::{translate_corpus, DecodeOptions, TranslateOptions};
use crate::error::{Error, Result};
use crate::eval::bleu_with;
use crate::fusion::{fused_prob_graph, resolve_gold, GoldTarget, LOG_FLOOR};
use crate::lexicon::BilingualLexicon;
use crate::model::{Dropout, Seq2Seq};
use crate::numerics::{Gradients, Graph, NodeId, ParamStore};

/// Summed loss terms over some number of target tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll_decoder: f64,
    pub nll_fused: f64,
    pub gamma_term: f64,
    pub total: f64,
    pub tokens: usize,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.nll_decoder += o.nll_decoder;
        self.nll_fused += o.nll_fused;
        self.gamma_term += o.gamma_term;
        self.total += o.total;
        self.tokens += o.tokens;
    }

    /// Per-token averages.
    pub fn mean(&self) -> LossBreakdown {
        let n = self.tokens.max(1) as f64;
        LossBreakdown {
            nll_decoder: self.nll_decoder / n,
            nll_fused: self.nll_fused / n,
            gamma_term: self.gamma_term / n,
            total: self.total / n,
            tokens: self.tokens,
        }
    }
}

/// Weights of the decoder, fused and gate terms in the total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub decoder: f64,
    pub fused: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            decoder: 1.0,
            fused: 1.0,
            gamma: 1.0,
        }
    }
}

/// Build the loss graph of one sentence pair. Returns the total node and its parts.
pub fn sentence_loss<'p>(
    g: &mut Graph<'p>,
    model: &Seq2Seq,
    lex: &BilingualLexicon,
    src: &[String],
    tgt: &[String],
    weights: &LossWeights,
    max_len: usize,
    drop: &mut Option<Dropout>,
) -> Result<(NodeId, LossBreakdown)> {
    if tgt.len() > max_len {
        return Err(Error::Invalid(format!(
            "target of {} tokens exceeds the length cap {max_len}",
            tgt.len()
        )));
    }
    let variant = model.variant();
    let vocab = model.tgt_vocab();
    let ids = model.src_vocab().encode(src, false);
    let feats: Option<Vec<[f64; 3]>> = variant.has_features().then(|| {
        src.iter()
            .map(|w| lex.entry_features(w, vocab).as_array())
            .collect()
    });
    let enc = model.encode_graph(g, &ids, feats.as_deref(), drop)?;
    let mut state = enc.initial.clone();
    let mut prev = BOS;
    let mut terms = Vec::new();
    let mut parts = LossBreakdown::default();
    for t in 0..=tgt.len() {
        let step = model.step_graph(g, &enc, &state, prev, drop)?;
        let (gold_id, gold_surface) = match tgt.get(t) {
            Some(w) => (vocab.id(w), Some(w.as_str())),
            None => (EOS, None),
        };
        let p = g.pick(step.p_dec, gold_id as usize)?;
        let lp = g.log(p, LOG_FLOOR)?;
        let nll = g.scale(lp, -weights.decoder)?;
        parts.nll_decoder -= g.scalar_value(lp);
        terms.push(nll);
        if variant.is_fused() {
            let target = match gold_surface {
                Some(w) => resolve_gold(variant, w, src, lex, vocab),
                None => GoldTarget::Vocab(EOS),
            };
            let pf = fused_prob_graph(g, variant, &step, src, lex, vocab, &target)?;
            let lpf = g.log(pf, LOG_FLOOR)?;
            parts.nll_fused -= g.scalar_value(lpf);
            terms.push(g.scale(lpf, -weights.fused)?);
            if gold_surface.is_some_and(|w| !vocab.contains(w)) {
                let p_gen = step.p_gen.expect("fused variants have a gate");
                let open = g.one_minus(p_gen)?;
                let lo = g.log(open, LOG_FLOOR)?;
                parts.gamma_term -= g.scalar_value(lo);
                terms.push(g.scale(lo, -weights.gamma)?);
            }
        }
        state = step.state;
        prev = gold_id;
        parts.tokens += 1;
    }
    let stacked = g.stack(&terms)?;
    let total = g.sum(stacked)?;
    parts.total = weights.decoder * parts.nll_decoder
        + weights.fused * parts.nll_fused
        + weights.gamma * parts.gamma_term;
    Ok((total, parts))
}

/// Loss of a batch without dropout, optionally accumulating gradients.
pub fn step_loss(
    model: &Seq2Seq,
    lex: &BilingualLexicon,
    batch: &[(Sentence, Sentence)],
    weights: &LossWeights,
    max_len: usize,
    grads: Option<&mut Gradients>,
) -> Result<LossBreakdown> {
    let mut sum = LossBreakdown::default();
    let mut grads = grads;
    for (s, t) in batch {
        let mut g = Graph::new(model.params());
        let (total, parts) = sentence_loss(&mut g, model, lex, s, t, weights, max_len, &mut None)?;
        if let Some(gr) = grads.as_deref_mut() {
            g.backward(total, gr)?;
        }
        sum.add(&parts);
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, (id, g)) in grads.iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..g.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub max_len: usize,
    /// Add-one smoothing of the dev BLEU used for model selection.
    pub dev_smoothing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 50,
            batch_size: 64,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
            patience: 5,
            seed: 1,
            weights: LossWeights::default(),
            max_len: 100,
            dev_smoothing: true,
        }
    }
}

/// Optimizer and early-stopping bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: Adam,
    pub best_dev: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub seed: u64,
}

/// One metric-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nll_decoder: f64,
    pub nll_fused: f64,
    pub gamma_term: f64,
    pub total: f64,
    pub tokens: usize,
    pub dev_bleu: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Seq2Seq,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined word
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Batches of similar target length, in a seeded order.
pub fn make_batches(corpus: &ParallelCorpus, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.sort_by_key(|&i| (corpus.pairs()[i].1.len(), i));
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    batches
}

/// Dev BLEU of greedy output.
pub fn dev_bleu(model: &Seq2Seq, lex: &BilingualLexicon, dev: &ParallelCorpus, smoothing: bool) -> Result<f64> {
    let sources: Vec<Sentence> = dev.sources().cloned().collect();
    let refs: Vec<Sentence> = dev.targets().cloned().collect();
    let opts = TranslateOptions {
        decode: DecodeOptions::default(),
        merge_bpe: false,
    };
    let hyps: Vec<Sentence> = translate_corpus(model, lex, &sources, &opts)?
        .into_iter()
        .map(|t| t.tokens)
        .collect();
    Ok(bleu_with(&hyps, &refs, smoothing)?.bleu)
}

/// Run one epoch of updates; returns summed losses.
pub fn train_epoch(
    model: &mut Seq2Seq,
    lex: &BilingualLexicon,
    corpus: &ParallelCorpus,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<LossBreakdown> {
    let epoch_seed = mix(state.seed, state.epoch as u64);
    let rate = model.config().dropout;
    let mut sum = LossBreakdown::default();
    let mut grads = Gradients::zeros_like(model.params());
    for batch in make_batches(corpus, cfg.batch_size, epoch_seed) {
        grads.reset();
        let mut tokens = 0;
        for &i in &batch {
            let (s, t) = &corpus.pairs()[i];
            let mut drop = (rate > 0.0).then(|| Dropout::new(rate, mix(epoch_seed, i as u64 + 1)));
            let mut g = Graph::new(model.params());
            let (total, parts) = sentence_loss(&mut g, model, lex, s, t, &cfg.weights, cfg.max_len, &mut drop)?;
            g.backward(total, &mut grads)?;
            tokens += parts.tokens;
            sum.add(&parts);
        }
        grads.scale(1.0 / tokens.max(1) as f64);
        grads.clip_global_norm(cfg.clip_norm);
        state.adam.update(model.params_mut(), &grads)?;
    }
    state.epoch += 1;
    Ok(sum)
}

/// Train until dev BLEU stops improving for `patience` epochs; the best model is returned.
pub fn train(
    init: Seq2Seq,
    lex: &BilingualLexicon,
    corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if dev.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let corpus = corpus.cap_length(cfg.max_len);
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut model = init;
    let mut state = TrainState {
        epoch: 0,
        adam: Adam::new(model.params(), cfg.adam),
        best_dev: None,
        best_epoch: 0,
        bad_epochs: 0,
        seed: cfg.seed,
    };
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut stopped_early = false;
    while state.epoch < cfg.max_epochs {
        let start = Instant::now();
        let sum = train_epoch(&mut model, lex, &corpus, cfg, &mut state)?;
        let bleu = dev_bleu(&model, lex, dev, cfg.dev_smoothing)?;
        let mean = sum.mean();
        let rec = EpochRecord {
            epoch: state.epoch,
            nll_decoder: mean.nll_decoder,
            nll_fused: mean.nll_fused,
            gamma_term: mean.gamma_term,
            total: mean.total,
            tokens: sum.tokens,
            dev_bleu: bleu,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        log.push(rec);
        if state.best_dev.is_none_or(|b| bleu > b) {
            state.best_dev = Some(bleu);
            state.best_epoch = state.epoch;
            state.bad_epochs = 0;
            best = model.clone();
        } else {
            state.bad_epochs += 1;
            if state.bad_epochs >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch: state.best_epoch,
        stopped_early,
    })
}

/// Share of gold tokens (end marker included) that are the decoder argmax under teacher forcing.
pub fn teacher_forced_accuracy(model: &Seq2Seq, lex: &BilingualLexicon, corpus: &ParallelCorpus) -> Result<f64> {
    let vocab = model.tgt_vocab();
    let (mut hit, mut total) = (0usize, 0usize);
    for (s, t) in corpus.pairs() {
        let mut g = Graph::new(model.params());
        let ids = model.src_vocab().encode(s, false);
        let feats: Option<Vec<[f64; 3]>> = model
            .variant()
            .has_features()
            .then(|| s.iter().map(|w| lex.entry_features(w, vocab).as_array()).collect());
        let enc = model.encode_graph(&mut g, &ids, feats.as_deref(), &mut None)?;
        let mut state = enc.initial.clone();
        let mut prev = BOS;
        for gold in vocab.encode(t, true).into_iter().skip(1) {
            let step = model.step_graph(&mut g, &enc, &state, prev, &mut None)?;
            let p = g.value(step.p_dec);
            let mut best = 0;
            for i in 0..p.len() {
                if p[i] > p[best] {
                    best = i;
                }
            }
            hit += usize::from(best as u32 == gold);
            total += 1;
            state = step.state;
            prev = gold;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests;
