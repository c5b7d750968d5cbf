//! End-to-end helpers shared by the command line and the experiment suites.

use serde::Serialize;

use crate::align::{extract_dictionary, symmetrized_links, AlignConfig};
use crate::corpus::{ParallelCorpus, Sentence, Vocab};
use crate::decode::{translate_corpus, TranslateOptions, Translation};
use crate::error::{Error, Result};
use crate::eval::{bleu, BleuReport};
use crate::lexicon::BilingualLexicon;
use crate::model::{ModelConfig, Seq2Seq};

/// Align `corpus` in both directions and keep dictionary pairs seen `min_count` times.
pub fn build_lexicon(corpus: &ParallelCorpus, align: &AlignConfig, min_count: u64) -> Result<BilingualLexicon> {
    let links = symmetrized_links(corpus, align)?;
    extract_dictionary(corpus, &links, min_count)
}

/// Entries read off `extra` after aligning it jointly with `base`.
pub fn expansion_lexicon(
    base: &ParallelCorpus,
    extra: &ParallelCorpus,
    align: &AlignConfig,
    min_count: u64,
) -> Result<BilingualLexicon> {
    if extra.is_empty() {
        return Err(Error::Empty("expansion corpus"));
    }
    let joint = base.concat(extra);
    let links = symmetrized_links(&joint, align)?;
    extract_dictionary(extra, &links[base.len()..], min_count)
}

pub fn build_vocabs(corpus: &ParallelCorpus, lexbar: u64) -> Result<(Vocab, Vocab)> {
    Ok((
        Vocab::build(corpus.sources(), lexbar)?,
        Vocab::build(corpus.targets(), lexbar)?,
    ))
}

/// A fresh model over vocabularies cut at `lexbar`.
pub fn init_model(corpus: &ParallelCorpus, lexbar: u64, config: ModelConfig) -> Result<Seq2Seq> {
    let (sv, tv) = build_vocabs(corpus, lexbar)?;
    Seq2Seq::new(config, sv, tv)
}

/// Translate the source side of `test` and score it against the target side.
pub fn evaluate(
    model: &Seq2Seq,
    lex: &BilingualLexicon,
    test: &ParallelCorpus,
    opts: &TranslateOptions,
) -> Result<(Vec<Translation>, BleuReport)> {
    let sources: Vec<Sentence> = test.sources().cloned().collect();
    let refs: Vec<Sentence> = test.targets().cloned().collect();
    let out = translate_corpus(model, lex, &sources, opts)?;
    let hyps: Vec<Sentence> = out.iter().map(|t| t.tokens.clone()).collect();
    let report = bleu(&hyps, &refs)?;
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SizeReport {
    pub checkpoint_bytes: usize,
    pub parameters: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub dictionary_sources: usize,
    pub dictionary_entries: usize,
}

pub fn size_report(model: &Seq2Seq, lex: &BilingualLexicon) -> Result<SizeReport> {
    Ok(SizeReport {
        checkpoint_bytes: model.to_bytes()?.len(),
        parameters: model.num_parameters(),
        src_vocab: model.src_vocab().len(),
        tgt_vocab: model.tgt_vocab().len(),
        dictionary_sources: lex.num_sources(),
        dictionary_entries: lex.num_entries(),
    })
}
