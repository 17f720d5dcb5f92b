//! Synthetic scene-captioning corpus: region features with detector-shaped
//! interfaces and a grammar that writes captions at every length level.

pub mod corpus;
pub mod grammar;
pub mod scene;
pub mod vocab;

pub use corpus::{generate_corpus, Corpus, CorpusError};
pub use grammar::{CaptionGrammar, Unreachable};
pub use scene::{ObjectLabel, Region, Scene};
pub use vocab::{Vocabulary, BOS, EOS, MASK};
