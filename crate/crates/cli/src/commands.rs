use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use lexfuse::align::{read_pharaoh, symmetrized_links, write_pharaoh, AlignConfig, extract_dictionary};
use lexfuse::corpus::{read_lines, write_lines, BpeModel, ParallelCorpus, Sentence};
use lexfuse::decode::{translate_file, DecodeOptions, TranslateOptions};
use lexfuse::eval::{bleu_with, coverage_report, render_coverage_json, render_coverage_text};
use lexfuse::lexicon::BilingualLexicon;
use lexfuse::model::Seq2Seq;
use lexfuse::pipeline::{evaluate, init_model, size_report};
use lexfuse::synth::{generate, SynthConfig};
use lexfuse::train::{train, EpochRecord, TrainOutcome};

use crate::config::RunConfig;
use crate::{Command, RunArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Align {
            src,
            tgt,
            out,
            iterations,
            hmm,
        } => align(&src, &tgt, &out, iterations, hmm),
        Command::DictBuild {
            src,
            tgt,
            links,
            out,
            min_count,
        } => dict_build(&src, &tgt, &links, &out, min_count),
        Command::Train { run, out, log } => {
            let cfg = resolve(&run)?;
            cfg.validate_for_training()?;
            let outcome = train_run(&cfg, log.as_deref())?;
            outcome.model.save(&out)?;
            write_file(&out.with_extension("config"), &cfg.to_text())?;
            eprintln!(
                "best epoch {} of {}{}; wrote {}",
                outcome.best_epoch,
                outcome.log.len(),
                if outcome.stopped_early { " (early stop)" } else { "" },
                out.display()
            );
            Ok(())
        }
        Command::Translate {
            model,
            input,
            output,
            dict,
            trace,
            beam,
            threshold,
            soft_copy,
            max_steps,
            merge_back,
        } => {
            let mut m = Seq2Seq::load(&model)?;
            if let Some(t) = threshold {
                m.set_threshold(t)?;
            }
            if soft_copy {
                m.set_soft_copy(true);
            }
            let lex = load_dict(dict.as_deref())?;
            let opts = TranslateOptions {
                decode: DecodeOptions { beam, max_steps },
                merge_bpe: merge_back,
            };
            let n = translate_file(&m, &lex, &input, &output, trace.as_deref(), &opts)?;
            eprintln!("translated {n} lines into {}", output.display());
            Ok(())
        }
        Command::Eval {
            hyp,
            reference,
            smooth,
            json,
        } => {
            let hyps = read_lines(&hyp)?;
            let refs = read_lines(&reference)?;
            let report = bleu_with(&hyps, &refs, smooth)?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!("{report}");
            }
            Ok(())
        }
        Command::Coverage {
            src,
            tgt,
            dict,
            lexbars,
            json,
        } => {
            let corpus = ParallelCorpus::from_files(&src, &tgt)?;
            let lex = load_dict(dict.as_deref())?;
            let rows = coverage_report(&corpus, &lexbars, &lex)?;
            if json {
                print!("{}", render_coverage_json(&rows)?);
            } else {
                print!("{}", render_coverage_text(&rows));
            }
            Ok(())
        }
        Command::DictMerge { base, add, out } => {
            let mut lex = BilingualLexicon::read_tsv(&base)?;
            let before = lex.num_entries();
            for p in &add {
                lex = lex.merge(&BilingualLexicon::read_tsv(p)?);
            }
            lex.write_tsv(&out)?;
            eprintln!("{} entries -> {} entries", before, lex.num_entries());
            Ok(())
        }
        Command::BpeLearn { input, merges, out } => {
            let mut lines: Vec<Sentence> = Vec::new();
            for p in &input {
                lines.extend(read_lines(p)?);
            }
            let model = BpeModel::learn(&lines, merges);
            model.write(&out)?;
            eprintln!("learned {} merges", model.merges().len());
            Ok(())
        }
        Command::BpeApply { codes, input, output } => {
            let model = BpeModel::read(&codes)?;
            let out: Vec<Sentence> = read_lines(&input)?.iter().map(|s| model.apply(s)).collect();
            write_lines(&output, &out)?;
            Ok(())
        }
        Command::SweepLexbar {
            run,
            test_src,
            test_tgt,
            lexbars,
            out_dir,
        } => {
            let mut cfg = resolve(&run)?;
            if test_src.is_some() {
                cfg.test_src = test_src;
            }
            if test_tgt.is_some() {
                cfg.test_tgt = test_tgt;
            }
            sweep(cfg, &lexbars, &out_dir)
        }
        Command::Inspect {
            trace,
            sentence,
            size,
            model,
            dict,
            json,
        } => {
            if size {
                let Some(model) = model else {
                    bail!("--size needs --model");
                };
                inspect_size(&model, dict.as_deref(), json)
            } else if let Some(trace) = trace {
                inspect_trace(&trace, sentence)
            } else {
                bail!("nothing to inspect: give --trace or --size");
            }
        }
        Command::Synth { out_dir, seed } => synth(&out_dir, seed),
    }
}

/// Config file (or the environment default) with command-line overrides applied.
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    let paths = [
        (&args.train_src, &mut cfg.train_src),
        (&args.train_tgt, &mut cfg.train_tgt),
        (&args.dev_src, &mut cfg.dev_src),
        (&args.dev_tgt, &mut cfg.dev_tgt),
        (&args.dict, &mut cfg.dict),
    ];
    for (flag, slot) in paths {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    macro_rules! over {
        ($($f:ident),*) => {
            $(if let Some(v) = args.$f { cfg.$f = v; })*
        };
    }
    over!(variant, lexbar, seed, threshold, beam, embed_dim, hidden_dim, layers, dropout, max_epochs, patience, batch_size, lr);
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn load_dict(path: Option<&Path>) -> Result<BilingualLexicon> {
    Ok(match path {
        Some(p) => BilingualLexicon::read_tsv(p)?,
        None => BilingualLexicon::new(),
    })
}

fn nonempty_corpus(src: &Path, tgt: &Path) -> Result<ParallelCorpus> {
    let corpus = ParallelCorpus::from_files(src, tgt)?;
    ensure!(!corpus.is_empty(), "{} / {}: no sentence pairs", src.display(), tgt.display());
    Ok(corpus)
}

fn align(src: &Path, tgt: &Path, out: &Path, iterations: usize, hmm: Option<usize>) -> Result<()> {
    let corpus = nonempty_corpus(src, tgt)?;
    let cfg = AlignConfig {
        iterations,
        hmm_iterations: hmm,
    };
    let links = symmetrized_links(&corpus, &cfg)?;
    write_pharaoh(out, &links)?;
    let total: usize = links.iter().map(|l| l.links.len()).sum();
    eprintln!("{} pairs, {} links", corpus.len(), total);
    Ok(())
}

fn dict_build(src: &Path, tgt: &Path, links: &Path, out: &Path, min_count: u64) -> Result<()> {
    let corpus = nonempty_corpus(src, tgt)?;
    let links = read_pharaoh(links, &corpus)?;
    let lex = extract_dictionary(&corpus, &links, min_count)?;
    lex.write_tsv(out)?;
    eprintln!("{} sources, {} entries", lex.num_sources(), lex.num_entries());
    Ok(())
}

fn split_corpora(cfg: &RunConfig) -> Result<(ParallelCorpus, ParallelCorpus)> {
    let (Some(ts), Some(tt)) = (&cfg.train_src, &cfg.train_tgt) else {
        bail!("training corpus not configured");
    };
    let corpus = nonempty_corpus(ts, tt)?;
    match (&cfg.dev_src, &cfg.dev_tgt) {
        (Some(ds), Some(dt)) => Ok((corpus, nonempty_corpus(ds, dt)?)),
        _ => Ok(corpus.split_dev(cfg.dev_fraction, 1, cfg.seed)?),
    }
}

/// Train per `cfg`, appending one JSON line per epoch to `log`.
pub fn train_run(cfg: &RunConfig, log: Option<&Path>) -> Result<TrainOutcome> {
    let (corpus, dev) = split_corpora(cfg)?;
    let lex = load_dict(cfg.dict.as_deref())?;
    let model = init_model(&corpus, cfg.lexbar, cfg.model_config())?;
    eprintln!(
        "{}: {} pairs, vocab {}/{}, {} parameters",
        cfg.variant,
        corpus.len(),
        model.src_vocab().len(),
        model.tgt_vocab().len(),
        model.num_parameters()
    );
    let mut sink = match log {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let mut write_err = None;
    let mut on_epoch = |r: &EpochRecord| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev BLEU {:.2}  {:.1}s",
            r.epoch, r.total, r.dev_bleu, r.wall_seconds
        );
        if let Some(w) = sink.as_mut() {
            let line = serde_json::to_string(r).expect("epoch record serializes");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                write_err.get_or_insert(e);
            }
        }
    };
    let outcome = train(model, &lex, &corpus, &dev, &cfg.train_config(), &mut on_epoch)?;
    if let Some(e) = write_err {
        return Err(e).context("writing metric log");
    }
    Ok(outcome)
}

fn sweep(mut cfg: RunConfig, lexbars: &[u64], out_dir: &Path) -> Result<()> {
    ensure!(!lexbars.is_empty(), "no LexBar values given");
    cfg.validate_for_training()?;
    let (Some(test_src), Some(test_tgt)) = (cfg.test_src.clone(), cfg.test_tgt.clone()) else {
        bail!("sweep-lexbar needs a test set (`test_src`, `test_tgt`)");
    };
    let test = nonempty_corpus(&test_src, &test_tgt)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let lex = load_dict(cfg.dict.as_deref())?;
    let opts = TranslateOptions {
        decode: DecodeOptions {
            beam: cfg.beam,
            max_steps: None,
        },
        merge_bpe: false,
    };
    let mut rows = Vec::new();
    for &lb in lexbars {
        cfg.lexbar = lb;
        let outcome = train_run(&cfg, Some(&out_dir.join(format!("lexbar{lb}.log.jsonl"))))?;
        let ckpt = out_dir.join(format!("lexbar{lb}.ckpt"));
        outcome.model.save(&ckpt)?;
        let (_, report) = evaluate(&outcome.model, &lex, &test, &opts)?;
        let size = size_report(&outcome.model, &lex)?;
        rows.push((lb, report.bleu, size));
    }
    let mut table = format!(
        "# variant {} seed {}\n{:>7} {:>8} {:>8} {:>8} {:>11} {:>11}\n",
        cfg.variant, cfg.seed, "lexbar", "bleu", "src.voc", "tgt.voc", "parameters", "bytes"
    );
    let mut data = String::from("lexbar\tbleu\tsrc_vocab\ttgt_vocab\tparameters\tcheckpoint_bytes\n");
    for (lb, bleu, s) in &rows {
        table.push_str(&format!(
            "{:>7} {:>8.2} {:>8} {:>8} {:>11} {:>11}\n",
            lb, bleu, s.src_vocab, s.tgt_vocab, s.parameters, s.checkpoint_bytes
        ));
        data.push_str(&format!(
            "{lb}\t{bleu}\t{}\t{}\t{}\t{}\n",
            s.src_vocab, s.tgt_vocab, s.parameters, s.checkpoint_bytes
        ));
    }
    write_file(&out_dir.join("sweep.txt"), &table)?;
    write_file(&out_dir.join("sweep.tsv"), &data)?;
    print!("{table}");
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn inspect_size(model: &Path, dict: Option<&Path>, json: bool) -> Result<()> {
    let m = Seq2Seq::load(model)?;
    let lex = load_dict(dict)?;
    let report = size_report(&m, &lex)?;
    let dict_bytes = match dict {
        Some(p) => fs::metadata(p).with_context(|| format!("reading {}", p.display()))?.len(),
        None => 0,
    };
    if json {
        let mut v = serde_json::to_value(&report)?;
        v["dictionary_bytes"] = dict_bytes.into();
        println!("{v}");
    } else {
        println!(
            "checkpoint  {} bytes, {} parameters, vocab {}/{} (lexbar {})",
            report.checkpoint_bytes,
            report.parameters,
            report.src_vocab,
            report.tgt_vocab,
            m.src_vocab().lexbar()
        );
        println!(
            "dictionary  {} bytes, {} sources, {} entries",
            dict_bytes, report.dictionary_sources, report.dictionary_entries
        );
    }
    Ok(())
}

fn inspect_trace(path: &Path, only: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    println!(
        "{:>5} {:>4}  {:<20} {:<10} {:>7} {:>4} {:>9}",
        "sent", "step", "token", "source", "p_gen", "pos", "mass"
    );
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{}: line {}", path.display(), n + 1))?;
        let field = |k: &str| {
            v.get(k)
                .with_context(|| format!("{}: line {} lacks `{k}`", path.display(), n + 1))
        };
        let sentence = field("sentence")?.as_u64().unwrap_or(0) as usize;
        if only.is_some_and(|s| s != sentence) {
            continue;
        }
        let p_gen = match field("p_gen")?.as_f64() {
            Some(p) => format!("{p:.4}"),
            None => "-".into(),
        };
        println!(
            "{:>5} {:>4}  {:<20} {:<10} {:>7} {:>4} {:>9.4}",
            sentence,
            field("step")?.as_u64().unwrap_or(0),
            field("token")?.as_str().unwrap_or(""),
            field("provenance")?.as_str().unwrap_or(""),
            p_gen,
            field("position")?.as_u64().unwrap_or(0),
            field("pre_norm_mass")?.as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn synth(out_dir: &Path, seed: u64) -> Result<()> {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&cfg)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let p = |name: &str| -> PathBuf { out_dir.join(name) };
    data.train.write(p("train.src"), p("train.tgt"))?;
    data.dev.write(p("dev.src"), p("dev.tgt"))?;
    data.test().write(p("test.src"), p("test.tgt"))?;
    data.test_seen.write(p("test_seen.src"), p("test_seen.tgt"))?;
    data.test_unseen.write(p("test_unseen.src"), p("test_unseen.tgt"))?;
    let mut slots = String::from("line\tsource\ttarget\tkind\n");
    let kinds = data
        .seen_slots
        .iter()
        .map(|s| (s, "seen"))
        .chain(data.unseen_slots.iter().map(|s| (s, "unseen")));
    for (i, (s, kind)) in kinds.enumerate() {
        slots.push_str(&format!("{}\t{}\t{}\t{kind}\n", i + 1, s.source_word, s.target_word));
    }
    write_file(&p("slots.tsv"), &slots)?;
    eprintln!(
        "wrote {} train, {} dev, {} test pairs to {}",
        data.train.len(),
        data.dev.len(),
        data.test_seen.len() + data.test_unseen.len(),
        out_dir.display()
    );
    Ok(())
}
