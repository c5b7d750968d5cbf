//! Attentional encoder-decoder with the parameters of every fusion head.
//!
//! All computation is recorded on a [`Graph`]; training differentiates it and
//! decoding only reads node values.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{Graph, LstmLayer, NodeId, ParamId, ParamStore, Tensor};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Which output head the model trains and decodes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    PnCopy,
    PgCopy,
    Lexpn,
    Lexpg,
    LexpgS,
    LexpgF,
    LexpgSf,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::PnCopy,
        Variant::PgCopy,
        Variant::Lexpn,
        Variant::Lexpg,
        Variant::LexpgS,
        Variant::LexpgF,
        Variant::LexpgSf,
    ];

    /// Variants with a trained fusion head.
    pub const FUSED: [Variant; 5] = [
        Variant::PgCopy,
        Variant::Lexpg,
        Variant::LexpgS,
        Variant::LexpgF,
        Variant::LexpgSf,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PnCopy => "pn_copy",
            Variant::PgCopy => "pg_copy",
            Variant::Lexpn => "lexpn",
            Variant::Lexpg => "lexpg",
            Variant::LexpgS => "lexpg_s",
            Variant::LexpgF => "lexpg_f",
            Variant::LexpgSf => "lexpg_sf",
        }
    }

    /// Trains an extra output head beyond the decoder softmax.
    pub fn is_fused(self) -> bool {
        Self::FUSED.contains(&self)
    }

    /// Mixes dictionary translations into its output distribution.
    pub fn is_lex_fused(self) -> bool {
        matches!(
            self,
            Variant::Lexpg | Variant::LexpgS | Variant::LexpgF | Variant::LexpgSf
        )
    }

    /// Has a separate pointer attention (β).
    pub fn has_pointer(self) -> bool {
        matches!(self, Variant::LexpgS | Variant::LexpgSf)
    }

    /// Has the feature-driven joint gate (p_gen, PC).
    pub fn has_features(self) -> bool {
        matches!(self, Variant::LexpgF | Variant::LexpgSf)
    }

    /// Gate p_gen = σ(w·c + b) computed from the context vector.
    pub fn has_context_gate(self) -> bool {
        matches!(self, Variant::PgCopy | Variant::Lexpg | Variant::LexpgS)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub variant: Variant,
    /// Gate threshold on p_gen used at inference.
    pub threshold: f64,
    /// PG copy: pick the argmax of the mixed distribution instead of hard gating.
    pub soft_copy: bool,
    pub dropout: f64,
    pub seed: u64,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            hidden_dim: 256,
            layers: 2,
            variant: Variant::Baseline,
            threshold: 0.5,
            soft_copy: false,
            dropout: 0.2,
            seed: 1,
            src_vocab_size: 0,
            tgt_vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invalid(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Attention {
    w: ParamId,
    u: ParamId,
    v: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FeatureGate {
    w_pc: ParamId,
    u_pc: ParamId,
    o_pc: ParamId,
    v_pc: ParamId,
    w_g: ParamId,
    b_g: ParamId,
    v_g: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    src_emb: ParamId,
    tgt_emb: ParamId,
    enc_fwd: Vec<LstmLayer>,
    enc_bwd: Vec<LstmLayer>,
    dec: Vec<LstmLayer>,
    init: Vec<(ParamId, ParamId)>,
    att: Attention,
    combine: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    gen: Option<(ParamId, ParamId)>,
    ptr: Option<Attention>,
    feat: Option<FeatureGate>,
}

/// Shapes of every parameter implied by a config, in creation order.
fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
    let mut out = vec![
        ("src_emb".to_owned(), vec![cfg.src_vocab_size, e]),
        ("tgt_emb".to_owned(), vec![cfg.tgt_vocab_size, e]),
    ];
    let mut lstm = |prefix: String, input: usize| {
        out.push((format!("{prefix}.weight"), vec![4 * h, input + h]));
        out.push((format!("{prefix}.bias"), vec![4 * h]));
    };
    for l in 0..cfg.layers {
        let input = if l == 0 { e } else { 2 * h };
        lstm(format!("enc.fwd.{l}"), input);
        lstm(format!("enc.bwd.{l}"), input);
    }
    for l in 0..cfg.layers {
        lstm(format!("dec.{l}"), if l == 0 { e + h } else { h });
    }
    for l in 0..cfg.layers {
        out.push((format!("init.{l}.weight"), vec![h, h]));
        out.push((format!("init.{l}.bias"), vec![h]));
    }
    let attention = |out: &mut Vec<(String, Vec<usize>)>, p: &str| {
        out.push((format!("{p}.w"), vec![h, h]));
        out.push((format!("{p}.u"), vec![h, 2 * h]));
        out.push((format!("{p}.v"), vec![h]));
    };
    attention(&mut out, "att");
    out.push(("combine".into(), vec![h, 3 * h]));
    out.push(("out.weight".into(), vec![cfg.tgt_vocab_size, h]));
    out.push(("out.bias".into(), vec![cfg.tgt_vocab_size]));
    if cfg.variant.has_context_gate() {
        out.push(("gen.w".into(), vec![2 * h]));
        out.push(("gen.b".into(), vec![1]));
    }
    if cfg.variant.has_pointer() {
        attention(&mut out, "ptr");
    }
    if cfg.variant.has_features() {
        out.push(("pc.w".into(), vec![h, h]));
        out.push(("pc.u".into(), vec![h, 2 * h]));
        out.push(("pc.o".into(), vec![h, 3]));
        out.push(("pc.v".into(), vec![h]));
        out.push(("pgen.w".into(), vec![h, h]));
        out.push(("pgen.b".into(), vec![h]));
        out.push(("pgen.v".into(), vec![h]));
    }
    out
}

impl Layout {
    fn bind(ps: &ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let find = |n: &str| {
            ps.find(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
        };
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        let mut enc_fwd = Vec::new();
        let mut enc_bwd = Vec::new();
        let mut dec = Vec::new();
        let mut init = Vec::new();
        for l in 0..cfg.layers {
            let input = if l == 0 { e } else { 2 * h };
            enc_fwd.push(LstmLayer::bind(ps, &format!("enc.fwd.{l}"), input, h)?);
            enc_bwd.push(LstmLayer::bind(ps, &format!("enc.bwd.{l}"), input, h)?);
            dec.push(LstmLayer::bind(ps, &format!("dec.{l}"), if l == 0 { e + h } else { h }, h)?);
            init.push((find(&format!("init.{l}.weight"))?, find(&format!("init.{l}.bias"))?));
        }
        let attention = |p: &str| -> Result<Attention> {
            Ok(Attention {
                w: find(&format!("{p}.w"))?,
                u: find(&format!("{p}.u"))?,
                v: find(&format!("{p}.v"))?,
            })
        };
        let v = cfg.variant;
        Ok(Layout {
            src_emb: find("src_emb")?,
            tgt_emb: find("tgt_emb")?,
            enc_fwd,
            enc_bwd,
            dec,
            init,
            att: attention("att")?,
            combine: find("combine")?,
            out_w: find("out.weight")?,
            out_b: find("out.bias")?,
            gen: if v.has_context_gate() {
                Some((find("gen.w")?, find("gen.b")?))
            } else {
                None
            },
            ptr: if v.has_pointer() { Some(attention("ptr")?) } else { None },
            feat: if v.has_features() {
                Some(FeatureGate {
                    w_pc: find("pc.w")?,
                    u_pc: find("pc.u")?,
                    o_pc: find("pc.o")?,
                    v_pc: find("pc.v")?,
                    w_g: find("pgen.w")?,
                    b_g: find("pgen.b")?,
                    v_g: find("pgen.v")?,
                })
            } else {
                None
            },
        })
    }
}

/// Inverted-dropout masks drawn from a dedicated stream.
pub struct Dropout {
    rng: ChaCha8Rng,
    keep: f64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rng: ChaCha8Rng::seed_from_u64(seed),
            keep: 1.0 - rate,
        }
    }

    fn apply(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        if self.keep >= 1.0 {
            return Ok(x);
        }
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < self.keep {
                    1.0 / self.keep
                } else {
                    0.0
                }
            })
            .collect();
        g.dropout(x, mask)
    }
}

fn maybe_drop(drop: &mut Option<Dropout>, g: &mut Graph, x: NodeId) -> Result<NodeId> {
    match drop {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// Encoder output plus per-position projections reused at every decoder step.
#[derive(Debug, Clone)]
pub struct EncodedSource {
    pub states: Vec<NodeId>,
    att_keys: Vec<NodeId>,
    ptr_keys: Option<Vec<NodeId>>,
    pc_keys: Option<Vec<NodeId>>,
    pub initial: DecoderState,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Recurrent decoder state: per-layer (hidden, cell) plus the fed-back ĥ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNodes {
    pub hidden: NodeId,
    pub cell: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderState {
    pub layers: Vec<LayerNodes>,
    pub combined: NodeId,
}

/// Everything one decoder step produces.
#[derive(Debug, Clone)]
pub struct StepNodes {
    pub state: DecoderState,
    pub h_dec: NodeId,
    pub context: NodeId,
    pub combined: NodeId,
    pub alpha: NodeId,
    pub p_dec: NodeId,
    pub beta: Option<NodeId>,
    pub p_gen: Option<NodeId>,
    pub pc: Option<NodeId>,
}

/// Parameters, vocabularies and config of one trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    config: ModelConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    params: ParamStore,
    layout: Layout,
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let r = (6.0 / (n + 1) as f64).sqrt();
    Tensor::vector((0..n).map(|_| rng.gen_range(-r..=r)).collect())
}

impl Seq2Seq {
    /// Fresh parameters drawn from `config.seed`; vocab sizes are taken from the vocabs.
    pub fn new(mut config: ModelConfig, src_vocab: Vocab, tgt_vocab: Vocab) -> Result<Self> {
        config.src_vocab_size = src_vocab.len();
        config.tgt_vocab_size = tgt_vocab.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut ps = ParamStore::new();
        for (name, shape) in parameter_shapes(&config) {
            if name.ends_with(".weight") && name.starts_with(['e', 'd']) {
                let prefix = name.trim_end_matches(".weight");
                let h = config.hidden_dim;
                LstmLayer::new(&mut ps, prefix, shape[1] - h, h, &mut rng);
            } else if name.ends_with(".bias") && name.starts_with(['e', 'd']) {
                continue;
            } else if name.ends_with(".bias") || name.ends_with(".b") {
                ps.add_zeros(name, &shape);
            } else if shape.len() == 2 {
                ps.add_matrix(name, shape[0], shape[1], &mut rng);
            } else {
                ps.add(name, random_vector(shape[0], &mut rng));
            }
        }
        let layout = Layout::bind(&ps, &config)?;
        Ok(Seq2Seq {
            config,
            src_vocab,
            tgt_vocab,
            params: ps,
            layout,
        })
    }

    /// Assemble a model from stored parameters, validating names and shapes.
    pub fn from_parts(config: ModelConfig, src_vocab: Vocab, tgt_vocab: Vocab, params: ParamStore) -> Result<Self> {
        config.validate()?;
        if config.src_vocab_size != src_vocab.len() || config.tgt_vocab_size != tgt_vocab.len() {
            return Err(Error::Checkpoint("vocabulary size does not match config".into()));
        }
        let expected = parameter_shapes(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    params.get(id).shape(),
                    shape
                )));
            }
        }
        let layout = Layout::bind(&params, &config)?;
        Ok(Seq2Seq {
            config,
            src_vocab,
            tgt_vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn src_vocab(&self) -> &Vocab {
        &self.src_vocab
    }

    pub fn tgt_vocab(&self) -> &Vocab {
        &self.tgt_vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Inference-time settings that do not touch parameters.
    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.threshold = threshold;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    pub fn set_soft_copy(&mut self, soft: bool) {
        self.config.soft_copy = soft;
    }

    fn run_layer(
        &self,
        g: &mut Graph,
        layer: &LstmLayer,
        inputs: &[NodeId],
        reverse: bool,
    ) -> Result<Vec<NodeId>> {
        let h0 = g.constant(vec![0.0; layer.hidden_size]);
        let c0 = g.constant(vec![0.0; layer.hidden_size]);
        let (mut h, mut c) = (h0, c0);
        let mut out = vec![h0; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for i in order {
            (h, c) = layer.step(g, inputs[i], h, c)?;
            out[i] = h;
        }
        Ok(out)
    }

    /// Bidirectional encoder. `features` (one triple per position) are required for +F variants.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        src: &[u32],
        features: Option<&[[f64; 3]]>,
        drop: &mut Option<Dropout>,
    ) -> Result<EncodedSource> {
        if src.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        let lay = &self.layout;
        let emb = g.param(lay.src_emb);
        let mut inputs = Vec::with_capacity(src.len());
        for &id in src {
            if id as usize >= self.config.src_vocab_size {
                return Err(Error::Invalid(format!("source id {id} out of range")));
            }
            inputs.push(g.row(emb, id as usize)?);
        }
        let mut finals = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            if l > 0 {
                for x in inputs.iter_mut() {
                    *x = maybe_drop(drop, g, *x)?;
                }
            }
            let fwd = self.run_layer(g, &lay.enc_fwd[l], &inputs, false)?;
            let bwd = self.run_layer(g, &lay.enc_bwd[l], &inputs, true)?;
            finals.push(*fwd.last().expect("nonempty"));
            inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| g.concat(&[f, b]))
                .collect::<Result<_>>()?;
        }
        let states = inputs;
        let keys = |g: &mut Graph, u: ParamId| -> Result<Vec<NodeId>> {
            let u = g.param(u);
            states.iter().map(|&s| g.matvec(u, s)).collect()
        };
        let att_keys = keys(g, lay.att.u)?;
        let ptr_keys = match lay.ptr {
            Some(p) => Some(keys(g, p.u)?),
            None => None,
        };
        let pc_keys = match lay.feat {
            Some(f) => {
                let feats = features.ok_or_else(|| {
                    Error::Invalid(format!("variant {} needs entry features", self.config.variant))
                })?;
                if feats.len() != src.len() {
                    return Err(Error::Shape {
                        op: "entry_features",
                        expected: vec![src.len()],
                        got: vec![feats.len()],
                    });
                }
                let base = keys(g, f.u_pc)?;
                let o = g.param(f.o_pc);
                let mut out = Vec::with_capacity(base.len());
                for (b, feat) in base.iter().zip(feats) {
                    let fv = g.constant(feat.to_vec());
                    let of = g.matvec(o, fv)?;
                    out.push(g.add(*b, of)?);
                }
                Some(out)
            }
            None => None,
        };
        let mut layers = Vec::with_capacity(self.config.layers);
        for (l, &fin) in finals.iter().enumerate() {
            let (w, b) = lay.init[l];
            let (w, b) = (g.param(w), g.param(b));
            let pre = g.matvec(w, fin)?;
            let pre = g.add(pre, b)?;
            let hidden = g.tanh(pre)?;
            let cell = g.constant(vec![0.0; self.config.hidden_dim]);
            layers.push(LayerNodes { hidden, cell });
        }
        let combined = g.constant(vec![0.0; self.config.hidden_dim]);
        Ok(EncodedSource {
            states,
            att_keys,
            ptr_keys,
            pc_keys,
            initial: DecoderState { layers, combined },
        })
    }

    fn additive_scores(
        g: &mut Graph,
        att: Attention,
        query: NodeId,
        keys: &[NodeId],
    ) -> Result<NodeId> {
        let (w, v) = (g.param(att.w), g.param(att.v));
        let q = g.matvec(w, query)?;
        let mut scores = Vec::with_capacity(keys.len());
        for &k in keys {
            let s = g.add(q, k)?;
            let s = g.tanh(s)?;
            scores.push(g.dot(v, s)?);
        }
        let s = g.stack(&scores)?;
        g.softmax(s)
    }

    /// Attention weights over source positions and the resulting context.
    pub fn attend_graph(&self, g: &mut Graph, h_dec: NodeId, enc: &EncodedSource) -> Result<(NodeId, NodeId)> {
        if g.value(h_dec).len() != self.config.hidden_dim {
            return Err(Error::Shape {
                op: "attend",
                expected: vec![self.config.hidden_dim],
                got: vec![g.value(h_dec).len()],
            });
        }
        let alpha = Self::additive_scores(g, self.layout.att, h_dec, &enc.att_keys)?;
        let context = g.weighted_sum(alpha, &enc.states)?;
        Ok((alpha, context))
    }

    /// One decoder step fed with target id `y_prev` (input feeding of ĥ).
    pub fn step_graph(
        &self,
        g: &mut Graph,
        enc: &EncodedSource,
        prev: &DecoderState,
        y_prev: u32,
        drop: &mut Option<Dropout>,
    ) -> Result<StepNodes> {
        let lay = &self.layout;
        if y_prev as usize >= self.config.tgt_vocab_size {
            return Err(Error::Invalid(format!("target id {y_prev} out of range")));
        }
        if prev.layers.len() != self.config.layers {
            return Err(Error::Shape {
                op: "decode_step",
                expected: vec![self.config.layers],
                got: vec![prev.layers.len()],
            });
        }
        let emb = g.param(lay.tgt_emb);
        let y = g.row(emb, y_prev as usize)?;
        let mut x = g.concat(&[y, prev.combined])?;
        let mut layers = Vec::with_capacity(self.config.layers);
        for (l, st) in prev.layers.iter().enumerate() {
            if l > 0 {
                x = maybe_drop(drop, g, x)?;
            }
            let (h, c) = lay.dec[l].step(g, x, st.hidden, st.cell)?;
            layers.push(LayerNodes { hidden: h, cell: c });
            x = h;
        }
        let h_dec = x;
        let (alpha, context) = self.attend_graph(g, h_dec, enc)?;
        let cw = g.param(lay.combine);
        let ch = g.concat(&[context, h_dec])?;
        let combined = g.matvec(cw, ch)?;
        let combined = g.tanh(combined)?;
        let (ow, ob) = (g.param(lay.out_w), g.param(lay.out_b));
        let logits = g.matvec(ow, combined)?;
        let logits = g.add(logits, ob)?;
        let p_dec = g.softmax(logits)?;

        let mut p_gen = None;
        if let Some((w, b)) = lay.gen {
            let (w, b) = (g.param(w), g.param(b));
            let s = g.dot(w, context)?;
            let s = g.add(s, b)?;
            p_gen = Some(g.sigmoid(s)?);
        }
        let beta = match (lay.ptr, &enc.ptr_keys) {
            (Some(p), Some(keys)) => Some(Self::additive_scores(g, p, h_dec, keys)?),
            _ => None,
        };
        let mut pc = None;
        if let (Some(f), Some(keys)) = (lay.feat, &enc.pc_keys) {
            let n = keys.len();
            let w_pc = g.param(f.w_pc);
            let v_pc = g.param(f.v_pc);
            let q = g.matvec(w_pc, combined)?;
            let mut scores = Vec::with_capacity(n + 1);
            let (w_g, b_g, v_g) = (g.param(f.w_g), g.param(f.b_g), g.param(f.v_g));
            let gq = g.matvec(w_g, combined)?;
            let gq = g.add(gq, b_g)?;
            let gq = g.tanh(gq)?;
            scores.push(g.dot(v_g, gq)?);
            for &k in keys {
                let s = g.add(q, k)?;
                let s = g.tanh(s)?;
                scores.push(g.dot(v_pc, s)?);
            }
            let joint = g.stack(&scores)?;
            let joint = g.softmax(joint)?;
            p_gen = Some(g.pick(joint, 0)?);
            pc = Some(g.slice(joint, 1, n)?);
        }
        Ok(StepNodes {
            state: DecoderState { layers, combined },
            h_dec,
            context,
            combined,
            alpha,
            p_dec,
            beta,
            p_gen,
            pc,
        })
    }

    /// Encoder states as plain tensors (one per source position).
    pub fn encode(&self, src: &[u32], features: Option<&[[f64; 3]]>) -> Result<Vec<Tensor>> {
        let mut g = Graph::new(&self.params);
        let enc = self.encode_graph(&mut g, src, features, &mut None)?;
        Ok(enc.states.iter().map(|&s| g.tensor(s).clone()).collect())
    }

    /// Attention of a decoder state over given encoder states.
    pub fn attend(&self, h_dec: &Tensor, states: &[Tensor]) -> Result<(Vec<f64>, Tensor)> {
        if states.is_empty() {
            return Err(Error::Empty("encoder states"));
        }
        let mut g = Graph::new(&self.params);
        let h = g.input(h_dec.clone());
        let u = g.param(self.layout.att.u);
        let mut nodes = Vec::new();
        let mut keys = Vec::new();
        for s in states {
            if s.len() != 2 * self.config.hidden_dim {
                return Err(Error::Shape {
                    op: "attend",
                    expected: vec![2 * self.config.hidden_dim],
                    got: s.shape().to_vec(),
                });
            }
            let n = g.input(s.clone());
            keys.push(g.matvec(u, n)?);
            nodes.push(n);
        }
        let enc = EncodedSource {
            states: nodes,
            att_keys: keys,
            ptr_keys: None,
            pc_keys: None,
            initial: DecoderState {
                layers: vec![],
                combined: h,
            },
        };
        let (a, c) = self.attend_graph(&mut g, h, &enc)?;
        Ok((g.value(a).to_vec(), g.tensor(c).clone()))
    }

    /// Total scalar count over all parameters.
    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }
}
