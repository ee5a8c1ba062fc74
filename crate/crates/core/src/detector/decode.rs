use serde::{Deserialize, Serialize};

use crate::model::Fragment;
use crate::technique::{TechniqueLabel, NUM_CLASSES};
use crate::text::TokenizedText;

use super::mgn::MgnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPrediction {
    pub token_index: usize,
    pub class_distribution: [f64; NUM_CLASSES],
    pub predicted: TechniqueLabel,
}

impl TokenPrediction {
    /// Wraps a probability vector; the prediction is its argmax, with ties
    /// resolved towards the lower class index (so `NoTechnique` wins ties).
    pub fn from_distribution(token_index: usize, class_distribution: [f64; NUM_CLASSES]) -> Self {
        let mut best = 0;
        for (i, p) in class_distribution.iter().enumerate().skip(1) {
            if *p > class_distribution[best] {
                best = i;
            }
        }
        TokenPrediction {
            token_index,
            class_distribution,
            predicted: TechniqueLabel::ALL[best],
        }
    }

    pub fn probability(&self, label: TechniqueLabel) -> f64 {
        self.class_distribution[label.class_index()]
    }
}

/// Merges runs of consecutive tokens that share a predicted technique into
/// fragments. Runs never cross a sentence boundary. A fragment's confidence
/// is the mean probability of its technique over the run; fragments below
/// `threshold` are dropped.
pub fn decode_fragments(
    text: &TokenizedText,
    predictions: &[TokenPrediction],
    threshold: f64,
) -> Result<Vec<Fragment>, MgnError> {
    if predictions.len() != text.token_count() {
        return Err(MgnError::PredictionCount {
            expected: text.token_count(),
            got: predictions.len(),
        });
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MgnError::Threshold(threshold));
    }
    let mut fragments = Vec::new();
    for sentence in text.sentences() {
        let mut run: Option<(TechniqueLabel, usize, f64)> = None;
        let close = |run: Option<(TechniqueLabel, usize, f64)>, end: usize, out: &mut Vec<Fragment>| {
            if let Some((technique, begin, sum)) = run {
                let confidence = (sum / (end - begin + 1) as f64).clamp(0.0, 1.0);
                if confidence >= threshold {
                    out.push(
                        Fragment::over_tokens(text, technique, begin, end, confidence)
                            .expect("run lies inside the token list"),
                    );
                }
            }
        };
        for i in sentence.token_range() {
            let pred = &predictions[i];
            let label = pred.predicted;
            match run {
                Some((t, b, sum)) if t == label => run = Some((t, b, sum + pred.probability(label))),
                _ => {
                    close(run.take(), i.saturating_sub(1), &mut fragments);
                    if label.is_technique() {
                        run = Some((label, i, pred.probability(label)));
                    }
                }
            }
        }
        close(run, sentence.last_token, &mut fragments);
    }
    Ok(fragments)
}
