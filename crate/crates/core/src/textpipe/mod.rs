//! Text ingestion: preprocessing rules, capped vocabularies, numericalisation
//! and labeled CSV loading.

mod corpus;
mod preprocess;
mod vocab;

pub use corpus::{
    load_corpus_lines, load_labeled_csv, numericalize_labeled, split_corpus, split_indices,
    LabeledRecord, NumericalizedCorpus, SplitTag,
};
pub use preprocess::{preprocess, preprocess_all};
pub use vocab::{Vocabulary, DEFAULT_MAX_VOCAB};

pub const UNK: &str = "xxunk";
pub const PAD: &str = "xxpad";
pub const BOS: &str = "xxbos";
pub const UP: &str = "xxup";
pub const MAJ: &str = "xxmaj";
pub const REP: &str = "xxrep";
pub const WREP: &str = "xxwrep";

/// Reserved tokens in id order; unknown and padding sit at 0 and 1.
pub const SPECIALS: [&str; 7] = [UNK, PAD, BOS, UP, MAJ, REP, WREP];

pub const UNK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const BOS_ID: u32 = 2;

pub fn is_special(token: &str) -> bool {
    SPECIALS.contains(&token)
}

/// Binary class of a labeled document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NotHate = 0,
    Hate = 1,
}

impl Label {
    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::NotHate),
            1 => Some(Label::Hate),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::NotHate => "not hate",
            Label::Hate => "hate",
        }
    }
}
