//! Seeded synthetic corpus with a planted, learnable signal.
//!
//! Every technique owns two trigger words that never occur elsewhere.
//! Even-indexed sentences carry one or two trigger spans of one to three
//! tokens; odd-indexed sentences are filler only.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mgn::LabeledSentence;
use crate::technique::TechniqueLabel;

const FILLER: [&str; 24] = [
    "the", "council", "said", "on", "monday", "that", "report", "city", "would", "review",
    "budget", "plans", "for", "next", "year", "officials", "met", "with", "local", "residents",
    "and", "school", "roads", "water",
];

/// The two trigger words of `technique` (empty for `NoTechnique`).
pub fn trigger_words(technique: TechniqueLabel) -> Vec<String> {
    if !technique.is_technique() {
        return Vec::new();
    }
    let k = technique.class_index();
    vec![format!("zq{k}a"), format!("zq{k}b")]
}

pub fn generate(sentences: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let techniques: Vec<TechniqueLabel> = TechniqueLabel::techniques().collect();
    (0..sentences)
        .map(|i| {
            let len = rng.gen_range(5..=10);
            let mut tokens: Vec<String> =
                (0..len).map(|_| FILLER.choose(&mut rng).unwrap().to_string()).collect();
            let mut labels = vec![TechniqueLabel::NoTechnique; len];
            if i % 2 == 0 {
                let n_spans = rng.gen_range(1..=2);
                let chosen: Vec<_> = techniques.choose_multiple(&mut rng, n_spans).copied().collect();
                // insert from the back so earlier positions stay valid
                let mut slots: Vec<usize> = (0..=len).collect();
                slots.shuffle(&mut rng);
                let mut slots: Vec<usize> = slots.into_iter().take(n_spans).collect();
                slots.sort_unstable_by(|a, b| b.cmp(a));
                for (slot, technique) in slots.into_iter().zip(chosen) {
                    let words = trigger_words(technique);
                    let span_len = rng.gen_range(1..=3);
                    for _ in 0..span_len {
                        tokens.insert(slot, words.choose(&mut rng).unwrap().clone());
                        labels.insert(slot, technique);
                    }
                }
            }
            LabeledSentence::new(tokens, labels)
        })
        .collect()
}

/// Renders sentences as plain text, one sentence per line.
pub fn render(corpus: &[LabeledSentence]) -> String {
    corpus
        .iter()
        .map(|s| {
            let mut line = s.tokens.join(" ");
            if let Some(first) = line.get(..1) {
                line.replace_range(..1, &first.to_uppercase());
            }
            line.push_str(".\n");
            line
        })
        .collect()
}
