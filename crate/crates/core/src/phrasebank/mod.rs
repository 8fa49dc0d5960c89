//! Relation phrases: normalization, embedding, witness-family parsing and
//! the clustered open vocabulary.

mod embed;
mod normalize;
mod parse;
mod pool;

pub use embed::{cosine, embed_phrase, EMBED_DIM};
pub use normalize::normalize_phrase;
pub use parse::{
    argmax_family, polarity, Lexicon, LexiconEntry, LexiconError, Polarity, WitnessFamily, DIRECTIONAL, EXACT_MASS,
    SHIPPED_LEXICON,
};
pub use pool::{build_pool, shipped_pool, PhrasePool, PoolError, RelationPhrase, CLUSTER_THRESHOLD};
