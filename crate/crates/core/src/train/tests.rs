use super::*;
use crate::corpus::{tokenize, Vocab};
use crate::fusion::{fuse, FusionStepState};
use crate::model::{ModelConfig, Variant};
use crate::numerics::{grad_check, Tensor};
use rand::Rng;

fn vocab(words: &str) -> Vocab {
    Vocab::build(&[tokenize(words)], 1).unwrap()
}

fn model(variant: Variant, seed: u64) -> Seq2Seq {
    let cfg = ModelConfig {
        embed_dim: 3,
        hidden_dim: 3,
        layers: 1,
        variant,
        seed,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    Seq2Seq::new(cfg, vocab("a b c"), vocab("x y z")).unwrap()
}

fn lex() -> BilingualLexicon {
    BilingualLexicon::from_triples([("a", "x", 2u64), ("q", "Q", 1), ("q", "y", 1), ("b", "B", 3)])
}

fn pair(s: &str, t: &str) -> (Sentence, Sentence) {
    (tokenize(s), tokenize(t))
}

#[test]
fn gamma_vanishes_when_targets_are_known() {
    for v in Variant::FUSED {
        let m = model(v, 1);
        let l = step_loss(&m, &lex(), &[pair("a q b", "x y z x")], &LossWeights::default(), 100, None).unwrap();
        assert_eq!(l.gamma_term, 0.0);
        assert!(l.nll_fused > 0.0 && l.nll_decoder > 0.0);
        assert_eq!(l.tokens, 5);
    }
    let b = step_loss(&model(Variant::Baseline, 1), &lex(), &[pair("a", "Q")], &LossWeights::default(), 100, None).unwrap();
    assert_eq!((b.nll_fused, b.gamma_term), (0.0, 0.0));
    assert_eq!(b.total, b.nll_decoder);
}

#[test]
fn gamma_clamps_at_log_floor() {
    let mut m = model(Variant::Lexpg, 2);
    m.params_mut().assign("gen.b", Tensor::vector(vec![60.0])).unwrap();
    let l = step_loss(&m, &lex(), &[pair("q", "Q")], &LossWeights::default(), 100, None).unwrap();
    assert!((l.gamma_term + LOG_FLOOR.ln()).abs() < 1e-9, "{}", l.gamma_term);
}

#[test]
fn length_cap_is_enforced() {
    let m = model(Variant::Baseline, 1);
    assert!(step_loss(&m, &lex(), &[pair("a", "x y z")], &LossWeights::default(), 2, None).is_err());
}

#[test]
fn terms_match_hand_computation() {
    for v in [Variant::Lexpg, Variant::LexpgSf, Variant::PgCopy] {
        let m = model(v, 5);
        let l = lex();
        let (src, tgt) = pair("a q", "Q x");
        let got = step_loss(&m, &l, &[(src.clone(), tgt.clone())], &LossWeights::default(), 100, None).unwrap();
        // recompute from the value-level distributions along the gold path
        let vocab = m.tgt_vocab();
        let mut g = Graph::new(m.params());
        let feats: Vec<[f64; 3]> = src.iter().map(|w| l.entry_features(w, vocab).as_array()).collect();
        let enc = m.encode_graph(&mut g, &m.src_vocab().encode(&src, false), Some(&feats), &mut None).unwrap();
        let mut state = enc.initial.clone();
        let mut prev = BOS;
        let (mut dec, mut fused, mut gamma) = (0.0, 0.0, 0.0);
        for gold in ["Q", "x", "</s>"] {
            let step = m.step_graph(&mut g, &enc, &state, prev, &mut None).unwrap();
            let st = FusionStepState::from_nodes(&g, &step);
            let id = if gold == "</s>" { EOS } else { vocab.id(gold) };
            dec -= st.p_dec[id as usize].ln();
            let d = fuse(v, &st, &src, &l, vocab).unwrap();
            let p = if gold == "</s>" {
                d.vocab_probs[EOS as usize]
            } else if vocab.contains(gold) || d.prob(gold, vocab) > 0.0 {
                d.prob(gold, vocab)
            } else {
                d.vocab_probs[1]
            };
            fused -= p.ln();
            if gold == "Q" {
                gamma -= (1.0 - st.p_gen).ln();
            }
            state = step.state;
            prev = id;
        }
        assert!((got.nll_decoder - dec).abs() < 1e-10, "{v}");
        assert!((got.nll_fused - fused).abs() < 1e-10, "{v}");
        assert!((got.gamma_term - gamma).abs() < 1e-10, "{v}");
        assert!((got.total - dec - fused - gamma).abs() < 1e-10);
    }
}

#[test]
fn adam_first_step_has_magnitude_lr() {
    let mut ps = ParamStore::new();
    let id = ps.add("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
    let mut g = Gradients::zeros_like(&ps);
    g.get_mut(id).copy_from_slice(&[0.3, -7.0, 1e-3]);
    let mut adam = Adam::new(&ps, AdamConfig::default());
    let before = ps.get(id).data().to_vec();
    adam.update(&mut ps, &g).unwrap();
    for (a, b) in ps.get(id).data().iter().zip(&before) {
        assert!(((a - b).abs() - 1e-3).abs() < 1e-6);
    }
    let zero = Gradients::zeros_like(&ps);
    let snapshot = ps.clone();
    let mut fresh = Adam::new(&ps, AdamConfig::default());
    for _ in 0..3 {
        fresh.update(&mut ps, &zero).unwrap();
    }
    assert_eq!(ps, snapshot);
    g.get_mut(id)[0] = f64::NAN;
    assert!(adam.update(&mut ps, &g).is_err());
}

#[test]
fn adam_trajectory_on_square() {
    let mut ps = ParamStore::new();
    let id = ps.add("t", Tensor::vector(vec![1.0]));
    let mut adam = Adam::new(&ps, AdamConfig::default());
    let (lr, b1, b2, eps) = (1e-3f64, 0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=3 {
        let grad = 2.0 * theta;
        m = b1 * m + (1.0 - b1) * grad;
        v = b2 * v + (1.0 - b2) * grad * grad;
        theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        let mut g = Gradients::zeros_like(&ps);
        g.get_mut(id)[0] = 2.0 * ps.get(id).data()[0];
        adam.update(&mut ps, &g).unwrap();
        assert!((ps.get(id).data()[0] - theta).abs() < 1e-12);
    }
}

fn toy_corpus() -> Vec<(Sentence, Sentence)> {
    vec![pair("a q b", "x Q z"), pair("b c", "B y"), pair("q a q", "y x Q w")]
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for v in Variant::ALL {
        let m = model(v, 11);
        let l = lex();
        let batch = toy_corpus();
        let w = LossWeights::default();
        let mut grads = Gradients::zeros_like(m.params());
        step_loss(&m, &l, &batch, &w, 100, Some(&mut grads)).unwrap();
        let theta = m.params().flatten();
        let mut probe = m.clone();
        let report = grad_check(
            |x| {
                probe.params_mut().unflatten(x).unwrap();
                step_loss(&probe, &l, &batch, &w, 100, None).unwrap().total
            },
            &theta,
            &grads.flatten(),
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{v}: {:?}", report.max_rel_error);
    }
}

fn copy_corpus(n: usize, seed: u64) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = (0..12).map(|k| format!("w{k}")).collect();
    let pairs = (0..n)
        .map(|_| {
            let len = rng.gen_range(2..5);
            let s: Sentence = (0..len).map(|_| words[rng.gen_range(0..words.len())].clone()).collect();
            (s.clone(), s)
        })
        .collect();
    ParallelCorpus::new(pairs)
}

fn corpus_model(c: &ParallelCorpus, variant: Variant, h: usize) -> Seq2Seq {
    let cfg = ModelConfig {
        embed_dim: h,
        hidden_dim: h,
        layers: 1,
        variant,
        seed: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let sv = Vocab::build(c.sources(), 1).unwrap();
    let tv = Vocab::build(c.targets(), 1).unwrap();
    Seq2Seq::new(cfg, sv, tv).unwrap()
}

fn fast_config() -> TrainConfig {
    TrainConfig {
        batch_size: 10,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn baseline_memorizes_small_copy_corpus() {
    let c = copy_corpus(50, 1);
    let mut m = corpus_model(&c, Variant::Baseline, 16);
    let cfg = fast_config();
    let mut state = TrainState {
        epoch: 0,
        adam: Adam::new(m.params(), cfg.adam),
        best_dev: None,
        best_epoch: 0,
        bad_epochs: 0,
        seed: 1,
    };
    let l = BilingualLexicon::new();
    let mut acc = 0.0;
    for _ in 0..200 {
        train_epoch(&mut m, &l, &c, &cfg, &mut state).unwrap();
        if state.epoch.is_multiple_of(10) {
            acc = teacher_forced_accuracy(&m, &l, &c).unwrap();
            if acc >= 0.99 {
                break;
            }
        }
    }
    assert!(acc >= 0.99, "accuracy {acc} after {} epochs", state.epoch);
}

#[test]
fn lexpg_sf_loss_decreases() {
    let c = copy_corpus(50, 2);
    let mut m = corpus_model(&c, Variant::LexpgSf, 8);
    let l = BilingualLexicon::from_triples(
        (0..12).map(|k| (format!("w{k}"), format!("w{k}"), 1u64)),
    );
    let cfg = TrainConfig {
        adam: AdamConfig {
            lr: 5e-3,
            ..AdamConfig::default()
        },
        ..fast_config()
    };
    let mut state = TrainState {
        epoch: 0,
        adam: Adam::new(m.params(), cfg.adam),
        best_dev: None,
        best_epoch: 0,
        bad_epochs: 0,
        seed: 4,
    };
    let mut totals = Vec::new();
    for _ in 0..11 {
        totals.push(train_epoch(&mut m, &l, &c, &cfg, &mut state).unwrap().total);
    }
    let down = totals.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(down >= 9, "{totals:?}");
}

#[test]
fn training_is_reproducible_and_keeps_best() {
    let c = copy_corpus(40, 3);
    let (tr, dev) = c.split_dev(0.25, 5, 1).unwrap();
    let init = {
        let mut m = corpus_model(&c, Variant::Lexpg, 8);
        let mut cfg = m.config().clone();
        cfg.dropout = 0.2;
        m = Seq2Seq::from_parts(cfg, m.src_vocab().clone(), m.tgt_vocab().clone(), m.params().clone()).unwrap();
        m
    };
    let l = BilingualLexicon::new();
    let cfg = TrainConfig {
        max_epochs: 12,
        patience: 2,
        ..fast_config()
    };
    let a = train(init.clone(), &l, &tr, &dev, &cfg, &mut |_| {}).unwrap();
    let b = train(init.clone(), &l, &tr, &dev, &cfg, &mut |_| {}).unwrap();
    assert_eq!(a.model.to_bytes().unwrap(), b.model.to_bytes().unwrap());
    let best = a.log.iter().map(|r| r.dev_bleu).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(dev_bleu(&a.model, &l, &dev, true).unwrap(), best);
    assert_eq!(a.log[a.best_epoch - 1].dev_bleu, best);
    if a.stopped_early {
        assert_eq!(a.log.len(), a.best_epoch + cfg.patience);
    }
    assert!(train(init, &l, &tr, &ParallelCorpus::default(), &cfg, &mut |_| {}).is_err());
}

#[test]
fn batches_cover_every_pair_once() {
    let c = copy_corpus(37, 5);
    let b = make_batches(&c, 8, 9);
    let mut all: Vec<usize> = b.iter().flatten().copied().collect();
    all.sort();
    assert_eq!(all, (0..37).collect::<Vec<_>>());
    assert_eq!(b, make_batches(&c, 8, 9));
    for batch in &b {
        let lens: Vec<usize> = batch.iter().map(|&i| c.pairs()[i].1.len()).collect();
        assert!(lens.windows(2).all(|w| w[0] <= w[1]));
    }
}
