use serde::{Deserialize, Serialize};

use super::mgn::{EncodedSentence, LabeledSentence, MgnConfig, MgnError, MgnParameters, Vocabulary};
use crate::model::SpanRecord;
use crate::technique::TechniqueLabel;
use crate::text::TokenizedText;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Loss before each update; the last entry is the loss after training.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss")
    }
}

/// Full-batch training with Adam. The vocabulary is built from `corpus`, the
/// weights are initialized from `config.seed`, and the token-head bias is
/// projected back onto its constraint after every step, so the same corpus
/// and config always give the same parameters.
pub fn train(
    corpus: &[LabeledSentence],
    config: MgnConfig,
) -> Result<(MgnParameters, TrainReport), MgnError> {
    if corpus.is_empty() {
        return Err(MgnError::EmptyBatch);
    }
    if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
        return Err(MgnError::Invalid(format!("learning rate {}", config.learning_rate)));
    }
    let vocab = Vocabulary::build(corpus.iter().flat_map(|s| s.tokens.iter()));
    let mut params = MgnParameters::init(vocab, config);
    let batch: Vec<EncodedSentence> = corpus.iter().map(|s| params.encode(s)).collect();

    let mut m = params.weights.clone();
    let mut v = params.weights.clone();
    for t in m.tensors_mut().into_iter().chain(v.tensors_mut()) {
        t.fill(0.0);
    }
    let lr = params.config.learning_rate;
    let mut losses = Vec::with_capacity(params.config.epochs + 1);
    for epoch in 0..params.config.epochs {
        let (loss, grad) = match params.loss_and_gradient(&batch) {
            Ok(r) => r,
            Err(MgnError::NonFinite(_)) => return Err(diverged(epoch, &losses)),
            Err(e) => return Err(e),
        };
        losses.push(loss);
        let step = (epoch + 1) as i32;
        let c1 = 1.0 - BETA1.powi(step);
        let c2 = 1.0 - BETA2.powi(step);
        let grads = grad.tensors();
        let ms = m.tensors_mut();
        let vs = v.tensors_mut();
        for (k, w) in params.weights.tensors_mut().into_iter().enumerate() {
            for j in 0..w.len() {
                let g = grads[k][j];
                ms[k][j] = BETA1 * ms[k][j] + (1.0 - BETA1) * g;
                vs[k][j] = BETA2 * vs[k][j] + (1.0 - BETA2) * g * g;
                w[j] -= lr * (ms[k][j] / c1) / ((vs[k][j] / c2).sqrt() + ADAM_EPS);
            }
        }
        params.project_bias();
        if !params.weights.all_finite() {
            return Err(diverged(epoch, &losses));
        }
    }
    match params.loss(&batch) {
        Ok(loss) => losses.push(loss),
        Err(MgnError::NonFinite(_)) => return Err(diverged(params.config.epochs, &losses)),
        Err(e) => return Err(e),
    }
    let report = TrainReport {
        epochs: params.config.epochs,
        losses,
    };
    Ok((params, report))
}

fn diverged(epoch: usize, losses: &[f64]) -> MgnError {
    MgnError::Diverged {
        epoch,
        last_loss: losses.last().copied().unwrap_or(f64::NAN),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub token_precision: f64,
    pub token_recall: f64,
    /// Micro-averaged over technique tokens; a token counts as a true
    /// positive only when the predicted technique equals the gold one.
    pub token_f1: f64,
    pub sentence_precision: f64,
    pub sentence_recall: f64,
    /// F1 of the propaganda class at probability 0.5.
    pub sentence_f1: f64,
    pub tokens: usize,
    pub sentences: usize,
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

pub fn evaluate(params: &MgnParameters, corpus: &[LabeledSentence]) -> Result<EvalReport, MgnError> {
    let (mut ttp, mut tfp, mut tfn) = (0, 0, 0);
    let (mut stp, mut sfp, mut sfn) = (0, 0, 0);
    let mut tokens = 0;
    for s in corpus {
        let enc = params.encode(s);
        if enc.token_ids.len() != enc.labels.len() {
            return Err(MgnError::LabelCount {
                tokens: enc.token_ids.len(),
                labels: enc.labels.len(),
            });
        }
        let out = params.forward(&enc.token_ids)?;
        tokens += enc.token_ids.len();
        for (pred, gold) in out.tokens.iter().zip(&enc.labels) {
            let (p, g) = (pred.predicted, *gold);
            if p == g {
                if g.is_technique() {
                    ttp += 1;
                }
                continue;
            }
            if p.is_technique() {
                tfp += 1;
            }
            if g.is_technique() {
                tfn += 1;
            }
        }
        match (out.sentence_prob >= 0.5, s.is_propaganda) {
            (true, true) => stp += 1,
            (true, false) => sfp += 1,
            (false, true) => sfn += 1,
            (false, false) => {}
        }
    }
    let (token_precision, token_recall, token_f1) = prf(ttp, tfp, tfn);
    let (sentence_precision, sentence_recall, sentence_f1) = prf(stp, sfp, sfn);
    Ok(EvalReport {
        token_precision,
        token_recall,
        token_f1,
        sentence_precision,
        sentence_recall,
        sentence_f1,
        tokens,
        sentences: corpus.len(),
    })
}

/// Turns an annotated text into per-sentence training examples. A token
/// takes the technique of any span overlapping it; where spans overlap the
/// one listed last wins.
pub fn label_sentences(text: &TokenizedText, spans: &[SpanRecord]) -> Vec<LabeledSentence> {
    let mut labels = vec![TechniqueLabel::NoTechnique; text.token_count()];
    for span in spans {
        for (i, token) in text.tokens().iter().enumerate() {
            if token.char_begin < span.char_end && span.char_begin < token.char_end {
                labels[i] = span.technique;
            }
        }
    }
    text.sentences()
        .iter()
        .map(|s| {
            LabeledSentence::new(
                text.sentence_surfaces(s).map(str::to_string).collect(),
                labels[s.token_range()].to_vec(),
            )
        })
        .collect()
}
