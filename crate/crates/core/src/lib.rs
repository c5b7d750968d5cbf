//! Neural machine translation with a hot-swappable bilingual dictionary.
//!
//! An attentional LSTM encoder-decoder is combined with a symbolic word-level
//! lexicon through pointer-style fusion heads. The crate also contains the
//! pieces needed to build that lexicon from parallel text (IBM Model 1
//! alignment with intersection symmetrization), a BPE segmenter, training,
//! greedy/beam decoding and corpus BLEU.

pub mod align;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod lexicon;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
