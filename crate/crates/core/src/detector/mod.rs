//! Sentence- and fragment-level detectors.
//!
//! Two implementations share the [`Detector`] interface: a deterministic
//! pattern lexicon and a small gated multi-task network whose sentence
//! head scales the input of its token head.

mod decode;
pub mod lexicon;
pub mod mgn;
pub mod synthetic;
mod train;

pub use decode::{decode_fragments, TokenPrediction};
pub use lexicon::{lexicon_detect, Lexicon, LexiconDetector, LexiconError, Pattern};
pub use mgn::{
    EncodedSentence, GateInput, GradCheckReport, LabeledSentence, MgnConfig, MgnDetector,
    MgnError, MgnParameters, MgnWeights, SentenceOutput, Vocabulary,
};
pub use train::{evaluate, label_sentences, train, EvalReport, TrainReport};

use serde::{Deserialize, Serialize};

use crate::model::{Fragment, SentenceFlag};
use crate::text::TokenizedText;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorInfo {
    pub name: String,
    pub version: String,
}

/// Output of a detector over one text: a probability per sentence and
/// every fragment it found (unthresholded).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Detection {
    pub sentence_flags: Vec<SentenceFlag>,
    pub fragments: Vec<Fragment>,
}

impl Detection {
    /// Keeps only fragments whose confidence is at least `threshold`.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.fragments.retain(|f| f.confidence >= threshold);
        self
    }
}

/// Deterministic, read-only analysis of tokenized text.
pub trait Detector: Send + Sync {
    fn info(&self) -> DetectorInfo;

    fn analyze(&self, text: &TokenizedText) -> Detection;
}
