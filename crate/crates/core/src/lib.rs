//! Slot-preserving paraphrase augmentation for small skill grammars.
//!
//! The crate covers the full loop: parse a skill grammar and sample
//! annotated utterances from it, mine paraphrase pairs by word overlap,
//! train a two-stage encoder-decoder paraphraser with a copying mechanism,
//! generate paraphrases with beam search and a slot filter, and measure the
//! downstream effect on intent-classification and slot-tagging baselines.

pub mod dataset;
pub mod decode;
pub mod error;
pub mod grammar;
pub mod metrics;
pub mod mining;
pub mod nlu;
pub mod pipeline;
pub mod seq2seq;
pub mod slotcopy;
pub mod textcore;

pub use error::{Error, Result};

// The guide's code blocks double as doc-tests so `cargo test` keeps the
// book in sync with the library.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }

    chapter!(Introduction, "../../../book/src/introduction.md");
    chapter!(Grammars, "../../../book/src/grammars.md");
    chapter!(Mining, "../../../book/src/mining.md");
    chapter!(SlotCopying, "../../../book/src/slot-copying.md");
    chapter!(Model, "../../../book/src/model.md");
    chapter!(Decoding, "../../../book/src/decoding.md");
    chapter!(Nlu, "../../../book/src/nlu.md");
    chapter!(Metrics, "../../../book/src/metrics.md");
    chapter!(Pipeline, "../../../book/src/pipeline.md");
}
