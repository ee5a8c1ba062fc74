//! Multi-granularity gated network.
//!
//! Each token is embedded and passed through one ReLU feed-forward layer.
//! The sentence head reads the mean of the token states and produces a
//! logit `s`; a one-dimensional gate `w = sigmoid(W_g * s + b_g)` then
//! scales every token state before the 19-way token head. The token-head
//! bias is constrained so that `NoTechnique` wins whenever the gate closes.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{decode_fragments, TokenPrediction};
use super::{Detection, Detector, DetectorInfo};
use crate::model::SentenceFlag;
use crate::technique::{TechniqueLabel, NUM_CLASSES};
use crate::text::TokenizedText;

pub const MODEL_FORMAT: &str = "propscope-mgn";
pub const MODEL_VERSION: u32 = 1;
pub const UNK: &str = "<unk>";

/// Denominator floor for the relative error in [`MgnParameters::grad_check`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum MgnError {
    #[error("token index {index} out of vocabulary (size {vocab_size})")]
    OutOfVocabulary { index: usize, vocab_size: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("empty batch")]
    EmptyBatch,
    #[error("sentence has {tokens} tokens but {labels} labels")]
    LabelCount { tokens: usize, labels: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch} (last finite loss {last_loss})")]
    Diverged { epoch: usize, last_loss: f64 },
    #[error("expected {expected} token predictions, got {got}")]
    PredictionCount { expected: usize, got: usize },
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// What the gate projects: the sentence logit or the sentence probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateInput {
    #[default]
    Logit,
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgnConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the sentence loss relative to the token loss.
    pub task_weight: f64,
    /// Every technique bias is kept at or below `-bias_margin`.
    pub bias_margin: f64,
    pub gate_input: GateInput,
}

impl Default for MgnConfig {
    fn default() -> Self {
        MgnConfig {
            embed_dim: 8,
            hidden_dim: 16,
            learning_rate: 0.05,
            epochs: 200,
            seed: 7,
            task_weight: 1.0,
            bias_margin: 1.0,
            gate_input: GateInput::Logit,
        }
    }
}

/// Lowercased word list; index 0 is the reserved unknown-word entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Vocabulary in order of first appearance.
    pub fn build<'a, I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str> + 'a,
    {
        let mut vocab = Vocabulary::from(vec![UNK.to_string()]);
        for w in words {
            let w = w.as_ref().to_lowercase();
            if !vocab.index.contains_key(&w) {
                vocab.index.insert(w.clone(), vocab.words.len());
                vocab.words.push(w);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Index of `word` (case-insensitive), or 0 when unknown.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }
}

/// Every trainable tensor. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgnWeights {
    /// vocab × embed
    pub embedding: Array2<f64>,
    /// hidden × embed
    pub enc_weight: Array2<f64>,
    pub enc_bias: Array1<f64>,
    pub sent_weight: Array1<f64>,
    pub sent_bias: f64,
    pub gate_weight: f64,
    pub gate_bias: f64,
    /// classes × hidden
    pub tok_weight: Array2<f64>,
    pub tok_bias: Array1<f64>,
}

pub const TENSOR_NAMES: [&str; 9] = [
    "embedding",
    "enc_weight",
    "enc_bias",
    "sent_weight",
    "sent_bias",
    "gate_weight",
    "gate_bias",
    "tok_weight",
    "tok_bias",
];

impl MgnWeights {
    pub fn zeros(vocab: usize, embed: usize, hidden: usize) -> Self {
        MgnWeights {
            embedding: Array2::zeros((vocab, embed)),
            enc_weight: Array2::zeros((hidden, embed)),
            enc_bias: Array1::zeros(hidden),
            sent_weight: Array1::zeros(hidden),
            sent_bias: 0.0,
            gate_weight: 0.0,
            gate_bias: 0.0,
            tok_weight: Array2::zeros((NUM_CLASSES, hidden)),
            tok_bias: Array1::zeros(NUM_CLASSES),
        }
    }

    /// Uniform fan-in scaled initialization; the gate starts as the
    /// identity on the sentence logit and the token bias sits on its bound.
    pub fn random(vocab: usize, embed: usize, hidden: usize, margin: f64, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(vocab, embed, hidden);
        let mut fill = |xs: &mut [f64], scale: f64| {
            for x in xs {
                *x = rng.gen_range(-scale..scale);
            }
        };
        fill(w.embedding.as_slice_mut().unwrap(), 1.0);
        fill(w.enc_weight.as_slice_mut().unwrap(), 1.0 / (embed as f64).sqrt());
        fill(w.enc_bias.as_slice_mut().unwrap(), 0.1);
        fill(w.sent_weight.as_slice_mut().unwrap(), 1.0 / (hidden as f64).sqrt());
        fill(w.tok_weight.as_slice_mut().unwrap(), 1.0 / (hidden as f64).sqrt());
        w.gate_weight = 1.0;
        w.tok_bias.fill(-margin);
        w.tok_bias[0] = 0.0;
        w
    }

    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            self.embedding.as_slice().expect("standard layout"),
            self.enc_weight.as_slice().expect("standard layout"),
            self.enc_bias.as_slice().expect("standard layout"),
            self.sent_weight.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.sent_bias),
            std::slice::from_ref(&self.gate_weight),
            std::slice::from_ref(&self.gate_bias),
            self.tok_weight.as_slice().expect("standard layout"),
            self.tok_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.embedding.as_slice_mut().expect("standard layout"),
            self.enc_weight.as_slice_mut().expect("standard layout"),
            self.enc_bias.as_slice_mut().expect("standard layout"),
            self.sent_weight.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.sent_bias),
            std::slice::from_mut(&mut self.gate_weight),
            std::slice::from_mut(&mut self.gate_bias),
            self.tok_weight.as_slice_mut().expect("standard layout"),
            self.tok_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// A training sentence over surface tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<TechniqueLabel>,
    pub is_propaganda: bool,
}

impl LabeledSentence {
    /// The sentence flag is derived from the token labels.
    pub fn new(tokens: Vec<String>, labels: Vec<TechniqueLabel>) -> Self {
        let is_propaganda = labels.iter().any(|l| l.is_technique());
        LabeledSentence {
            tokens,
            labels,
            is_propaganda,
        }
    }
}

/// A training sentence over vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub token_ids: Vec<usize>,
    pub labels: Vec<TechniqueLabel>,
    pub is_propaganda: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceOutput {
    pub sentence_logit: f64,
    pub sentence_prob: f64,
    pub gate: f64,
    pub tokens: Vec<TokenPrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgnParameters {
    pub vocab: Vocabulary,
    pub weights: MgnWeights,
    pub config: MgnConfig,
}

struct Cache {
    pre: Vec<Array1<f64>>,
    hidden: Vec<Array1<f64>>,
    pooled: Array1<f64>,
    logit: f64,
    prob: f64,
    gate: f64,
    probs: Vec<Array1<f64>>,
    log_norm: Vec<f64>,
    logits: Vec<Array1<f64>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Returns (softmax, log-sum-exp).
fn softmax(logits: &Array1<f64>) -> (Array1<f64>, f64) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let exps = logits.mapv(|x| (x - max).exp());
    let sum = exps.sum();
    (exps / sum, max + sum.ln())
}

impl MgnParameters {
    /// Randomly initialized parameters for `vocab`, seeded from the config.
    pub fn init(vocab: Vocabulary, config: MgnConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let weights = MgnWeights::random(
            vocab.len(),
            config.embed_dim,
            config.hidden_dim,
            config.bias_margin,
            &mut rng,
        );
        MgnParameters { vocab, weights, config }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.embedding.nrows()
    }

    /// Clamps the token-head bias back onto its constraint set.
    pub fn project_bias(&mut self) {
        let margin = self.config.bias_margin;
        let b = &mut self.weights.tok_bias;
        b[0] = 0.0;
        for x in b.iter_mut().skip(1) {
            *x = x.min(-margin);
        }
    }

    /// Dimensions, finiteness and the token-bias constraint.
    pub fn validate(&self) -> Result<(), MgnError> {
        let w = &self.weights;
        let (v, d, h) = (self.vocab.len(), self.config.embed_dim, self.config.hidden_dim);
        let dims_ok = w.embedding.dim() == (v, d)
            && w.enc_weight.dim() == (h, d)
            && w.enc_bias.len() == h
            && w.sent_weight.len() == h
            && w.tok_weight.dim() == (NUM_CLASSES, h)
            && w.tok_bias.len() == NUM_CLASSES;
        if !dims_ok {
            return Err(MgnError::Invalid("tensor dimensions disagree with config".into()));
        }
        if !w.all_finite() {
            return Err(MgnError::NonFinite("weights".into()));
        }
        if !(self.config.bias_margin > 0.0) {
            return Err(MgnError::Invalid("bias margin must be positive".into()));
        }
        if w.tok_bias[0] != 0.0 || w.tok_bias.iter().skip(1).any(|b| *b > -self.config.bias_margin) {
            return Err(MgnError::Invalid("token bias violates the no-technique constraint".into()));
        }
        Ok(())
    }

    fn run(&self, token_ids: &[usize]) -> Result<Cache, MgnError> {
        if token_ids.is_empty() {
            return Err(MgnError::EmptySentence);
        }
        let w = &self.weights;
        let v = self.vocab_size();
        let h = w.enc_bias.len();
        let mut pre = Vec::with_capacity(token_ids.len());
        let mut hidden = Vec::with_capacity(token_ids.len());
        let mut pooled = Array1::zeros(h);
        for &id in token_ids {
            if id >= v {
                return Err(MgnError::OutOfVocabulary { index: id, vocab_size: v });
            }
            let z = w.enc_weight.dot(&w.embedding.row(id)) + &w.enc_bias;
            let a = z.mapv(|x| x.max(0.0));
            pooled += &a;
            pre.push(z);
            hidden.push(a);
        }
        pooled /= token_ids.len() as f64;
        let logit = w.sent_weight.dot(&pooled) + w.sent_bias;
        let prob = sigmoid(logit);
        let gate_in = match self.config.gate_input {
            GateInput::Logit => logit,
            GateInput::Probability => prob,
        };
        let gate = sigmoid(w.gate_weight * gate_in + w.gate_bias);
        let mut probs = Vec::with_capacity(token_ids.len());
        let mut log_norm = Vec::with_capacity(token_ids.len());
        let mut logits = Vec::with_capacity(token_ids.len());
        for a in &hidden {
            let l = w.tok_weight.dot(&(a * gate)) + &w.tok_bias;
            let (p, lse) = softmax(&l);
            probs.push(p);
            log_norm.push(lse);
            logits.push(l);
        }
        Ok(Cache {
            pre,
            hidden,
            pooled,
            logit,
            prob,
            gate,
            probs,
            log_norm,
            logits,
        })
    }

    /// Sentence probability, gate value and per-token class distributions.
    pub fn forward(&self, token_ids: &[usize]) -> Result<SentenceOutput, MgnError> {
        let c = self.run(token_ids)?;
        let tokens = c
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut dist = [0.0; NUM_CLASSES];
                dist.copy_from_slice(p.as_slice().expect("contiguous"));
                TokenPrediction::from_distribution(i, dist)
            })
            .collect();
        Ok(SentenceOutput {
            sentence_logit: c.logit,
            sentence_prob: c.prob,
            gate: c.gate,
            tokens,
        })
    }

    pub fn encode(&self, sentence: &LabeledSentence) -> EncodedSentence {
        EncodedSentence {
            token_ids: self.vocab.encode(&sentence.tokens),
            labels: sentence.labels.clone(),
            is_propaganda: sentence.is_propaganda,
        }
    }

    fn check_batch(batch: &[EncodedSentence]) -> Result<(), MgnError> {
        if batch.is_empty() {
            return Err(MgnError::EmptyBatch);
        }
        for s in batch {
            if s.token_ids.is_empty() {
                return Err(MgnError::EmptySentence);
            }
            if s.token_ids.len() != s.labels.len() {
                return Err(MgnError::LabelCount {
                    tokens: s.token_ids.len(),
                    labels: s.labels.len(),
                });
            }
        }
        Ok(())
    }

    /// Mean token cross-entropy plus `task_weight` times the mean sentence
    /// binary cross-entropy.
    pub fn loss(&self, batch: &[EncodedSentence]) -> Result<f64, MgnError> {
        Self::check_batch(batch)?;
        let tokens: usize = batch.iter().map(|s| s.token_ids.len()).sum();
        let mut token_ce = 0.0;
        let mut sentence_ce = 0.0;
        for s in batch {
            let c = self.run(&s.token_ids)?;
            for (i, label) in s.labels.iter().enumerate() {
                token_ce += c.log_norm[i] - c.logits[i][label.class_index()];
            }
            let y = if s.is_propaganda { 1.0 } else { 0.0 };
            sentence_ce += softplus(c.logit) - y * c.logit;
        }
        let loss = token_ce / tokens as f64 + self.config.task_weight * sentence_ce / batch.len() as f64;
        if !loss.is_finite() {
            return Err(MgnError::NonFinite("loss".into()));
        }
        Ok(loss)
    }

    /// Loss and its analytic gradient with respect to every weight.
    pub fn loss_and_gradient(&self, batch: &[EncodedSentence]) -> Result<(f64, MgnWeights), MgnError> {
        Self::check_batch(batch)?;
        let w = &self.weights;
        let mut grad = MgnWeights::zeros(self.vocab_size(), w.embedding.ncols(), w.enc_bias.len());
        let tokens: usize = batch.iter().map(|s| s.token_ids.len()).sum();
        let tok_scale = 1.0 / tokens as f64;
        let sent_scale = self.config.task_weight / batch.len() as f64;
        let mut loss = 0.0;

        for s in batch {
            let c = self.run(&s.token_ids)?;
            let n = s.token_ids.len();
            let gate = c.gate;

            // token head
            let mut d_gate = 0.0;
            let mut d_hidden = Vec::with_capacity(n);
            for i in 0..n {
                let y = s.labels[i].class_index();
                loss += tok_scale * (c.log_norm[i] - c.logits[i][y]);
                let mut dl = c.probs[i].clone();
                dl[y] -= 1.0;
                dl *= tok_scale;
                let scaled = &c.hidden[i] * gate;
                for (r, g) in dl.iter().enumerate() {
                    grad.tok_weight.row_mut(r).scaled_add(*g, &scaled);
                }
                grad.tok_bias += &dl;
                let du = w.tok_weight.t().dot(&dl);
                d_gate += du.dot(&c.hidden[i]);
                d_hidden.push(du * gate);
            }

            // gate
            let d_pre_gate = d_gate * gate * (1.0 - gate);
            let gate_in = match self.config.gate_input {
                GateInput::Logit => c.logit,
                GateInput::Probability => c.prob,
            };
            grad.gate_weight += d_pre_gate * gate_in;
            grad.gate_bias += d_pre_gate;
            let d_gate_in = d_pre_gate * w.gate_weight;
            let mut d_logit = match self.config.gate_input {
                GateInput::Logit => d_gate_in,
                GateInput::Probability => d_gate_in * c.prob * (1.0 - c.prob),
            };

            // sentence head
            let y = if s.is_propaganda { 1.0 } else { 0.0 };
            loss += sent_scale * (softplus(c.logit) - y * c.logit);
            d_logit += sent_scale * (c.prob - y);
            grad.sent_weight.scaled_add(d_logit, &c.pooled);
            grad.sent_bias += d_logit;
            let d_pooled = &w.sent_weight * (d_logit / n as f64);

            // encoder and embeddings
            for (i, &id) in s.token_ids.iter().enumerate() {
                let mut dz = &d_hidden[i] + &d_pooled;
                dz.zip_mut_with(&c.pre[i], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                let x = w.embedding.row(id);
                for (r, g) in dz.iter().enumerate() {
                    grad.enc_weight.row_mut(r).scaled_add(*g, &x);
                }
                grad.enc_bias += &dz;
                let dx = w.enc_weight.t().dot(&dz);
                grad.embedding.row_mut(id).scaled_add(1.0, &dx);
            }
        }
        if !loss.is_finite() {
            return Err(MgnError::NonFinite("loss".into()));
        }
        if !grad.all_finite() {
            return Err(MgnError::NonFinite("gradient".into()));
        }
        Ok((loss, grad))
    }

    /// Compares the analytic gradient with central finite differences of
    /// step `step` for every parameter. The relative error of one entry is
    /// `|a - n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
    pub fn grad_check(&self, batch: &[EncodedSentence], step: f64) -> Result<GradCheckReport, MgnError> {
        let (_, grad) = self.loss_and_gradient(batch)?;
        let mut probe = self.clone();
        let mut report = GradCheckReport {
            max_relative_error: 0.0,
            worst_tensor: TENSOR_NAMES[0],
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        let grads = grad.tensors();
        for (k, name) in TENSOR_NAMES.iter().enumerate() {
            for j in 0..grads[k].len() {
                let original = self.weights.tensors()[k][j];
                probe.weights.tensors_mut()[k][j] = original + step;
                let up = probe.loss(batch)?;
                probe.weights.tensors_mut()[k][j] = original - step;
                let down = probe.loss(batch)?;
                probe.weights.tensors_mut()[k][j] = original;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grads[k][j];
                let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
                let rel = (analytic - numeric).abs() / denom;
                if !rel.is_finite() {
                    return Err(MgnError::NonFinite(format!("{name}[{j}]")));
                }
                report.checked += 1;
                if rel > report.max_relative_error {
                    report.max_relative_error = rel;
                    report.worst_tensor = name;
                    report.worst_index = j;
                    report.analytic = analytic;
                    report.numeric = numeric;
                }
            }
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<(), MgnError> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            vocab_size: self.vocab.len(),
            embed_dim: self.config.embed_dim,
            hidden_dim: self.config.hidden_dim,
            classes: NUM_CLASSES,
            seed: self.config.seed,
            params: self.clone(),
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(&file)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MgnError> {
        let file: ModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(MgnError::Invalid(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let p = file.params;
        if file.vocab_size != p.vocab.len()
            || file.embed_dim != p.config.embed_dim
            || file.hidden_dim != p.config.hidden_dim
            || file.classes != NUM_CLASSES
        {
            return Err(MgnError::Invalid("header dimensions disagree with tensors".into()));
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    classes: usize,
    seed: u64,
    params: MgnParameters,
}

/// Detector backed by trained network parameters. Unknown words map to the
/// reserved unknown-word index.
#[derive(Debug, Clone)]
pub struct MgnDetector {
    params: MgnParameters,
}

impl MgnDetector {
    pub fn new(params: MgnParameters) -> Result<Self, MgnError> {
        params.validate()?;
        Ok(MgnDetector { params })
    }

    pub fn params(&self) -> &MgnParameters {
        &self.params
    }
}

impl Detector for MgnDetector {
    fn info(&self) -> DetectorInfo {
        DetectorInfo {
            name: "mgn".into(),
            version: format!(
                "v{MODEL_VERSION}-d{}-h{}-seed{}",
                self.params.config.embed_dim, self.params.config.hidden_dim, self.params.config.seed
            ),
        }
    }

    fn analyze(&self, text: &TokenizedText) -> Detection {
        let mut sentence_flags = Vec::with_capacity(text.sentences().len());
        let mut predictions = Vec::with_capacity(text.token_count());
        for sentence in text.sentences() {
            let ids: Vec<usize> = text
                .sentence_surfaces(sentence)
                .map(|w| self.params.vocab.id(w))
                .collect();
            let out = self
                .params
                .forward(&ids)
                .expect("validated parameters and in-vocabulary ids");
            sentence_flags.push(SentenceFlag {
                sentence_index: sentence.index,
                propaganda_probability: out.sentence_prob,
            });
            predictions.extend(out.tokens.into_iter().map(|mut p| {
                p.token_index += sentence.first_token;
                p
            }));
        }
        let fragments = decode_fragments(text, &predictions, 0.0).expect("one prediction per token");
        Detection {
            sentence_flags,
            fragments,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TechniqueLabel::*;

    fn small(seed: u64, gate_input: GateInput) -> MgnParameters {
        let vocab = Vocabulary::build((0..19).map(|i| format!("w{i}")));
        assert_eq!(vocab.len(), 20);
        let config = MgnConfig {
            embed_dim: 4,
            hidden_dim: 5,
            seed,
            gate_input,
            ..MgnConfig::default()
        };
        let mut p = MgnParameters::init(vocab, config);
        // move the biases off their bound so every coordinate is generic
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for b in p.weights.tok_bias.iter_mut().skip(1) {
            *b -= rng.gen_range(0.0..0.5);
        }
        p.weights.gate_bias = rng.gen_range(-0.5..0.5);
        p.weights.sent_bias = rng.gen_range(-0.5..0.5);
        p
    }

    fn batch(seed: u64) -> Vec<EncodedSentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|_| {
                let n = rng.gen_range(2..7);
                let token_ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..20)).collect();
                let labels: Vec<TechniqueLabel> = (0..n)
                    .map(|_| TechniqueLabel::ALL[if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..19) }])
                    .collect();
                let is_propaganda = labels.iter().any(|l| l.is_technique());
                EncodedSentence { token_ids, labels, is_propaganda }
            })
            .collect()
    }

    #[test]
    fn distributions_are_normalized() {
        let p = small(1, GateInput::Logit);
        for s in batch(2) {
            let out = p.forward(&s.token_ids).unwrap();
            assert!((0.0..=1.0).contains(&out.gate));
            assert!((0.0..=1.0).contains(&out.sentence_prob));
            for t in &out.tokens {
                let sum: f64 = t.class_distribution.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(t.class_distribution.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn closed_gate_predicts_no_technique() {
        let mut p = small(3, GateInput::Logit);
        p.weights.tok_weight.mapv_inplace(|x| x * 5.0);
        p.weights.gate_weight = 0.0;
        p.weights.gate_bias = -50.0;
        for s in batch(4) {
            let out = p.forward(&s.token_ids).unwrap();
            assert!(out.gate <= 1e-6);
            assert!(out.tokens.iter().all(|t| t.predicted == NoTechnique));
        }
    }

    #[test]
    fn zero_weights_hand_computed_softmax() {
        let vocab = Vocabulary::build(["x"]);
        let mut p = MgnParameters::init(vocab, MgnConfig { embed_dim: 3, hidden_dim: 2, ..MgnConfig::default() });
        let b = p.weights.tok_bias.clone();
        p.weights = MgnWeights::zeros(2, 3, 2);
        p.weights.tok_bias = b;
        p.validate().unwrap();
        let out = p.forward(&[1]).unwrap();
        // 1 / (1 + 18 e^-1)
        let expected = 1.0 / (1.0 + 18.0 * (-1.0f64).exp());
        assert!((expected - 0.131_201_9).abs() < 1e-6);
        assert!((out.tokens[0].probability(NoTechnique) - expected).abs() < 1e-12);
        assert_eq!(out.tokens[0].predicted, NoTechnique);
    }

    #[test]
    fn uniform_distribution_loss_is_ln19() {
        let vocab = Vocabulary::build(["x"]);
        let mut p = MgnParameters::init(vocab, MgnConfig { embed_dim: 2, hidden_dim: 2, task_weight: 0.0, ..MgnConfig::default() });
        p.weights = MgnWeights::zeros(2, 2, 2);
        let sent = EncodedSentence { token_ids: vec![1, 0, 1], labels: vec![Doubt, NoTechnique, Slogans], is_propaganda: true };
        let loss = p.loss(&[sent]).unwrap();
        assert!((loss - 19f64.ln()).abs() < 1e-12);
        assert!((19f64.ln() - 2.9444).abs() < 1e-4);
    }

    #[test]
    fn task_weight_zero_is_pure_token_loss() {
        let mut p = small(5, GateInput::Logit);
        let b = batch(6);
        p.config.task_weight = 0.0;
        let token_only = p.loss(&b).unwrap();
        p.config.task_weight = 1.0;
        let both = p.loss(&b).unwrap();
        assert!(both > token_only);
        let mut flipped = b.clone();
        for s in &mut flipped {
            s.is_propaganda = !s.is_propaganda;
        }
        p.config.task_weight = 0.0;
        assert_eq!(p.loss(&flipped).unwrap(), token_only);
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let vocab = Vocabulary::build(["x"]);
        let mut p = MgnParameters::init(vocab, MgnConfig { embed_dim: 1, hidden_dim: 1, ..MgnConfig::default() });
        p.weights = MgnWeights::zeros(2, 1, 1);
        p.weights.tok_bias.fill(-40.0);
        p.weights.tok_bias[0] = 0.0;
        p.weights.sent_bias = -40.0;
        let sent = EncodedSentence { token_ids: vec![1, 1], labels: vec![NoTechnique; 2], is_propaganda: false };
        assert!(p.loss(&[sent]).unwrap() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            for gate in [GateInput::Logit, GateInput::Probability] {
                let p = small(seed, gate);
                let report = p.grad_check(&batch(seed + 100), 1e-5).unwrap();
                assert_eq!(report.checked, p.weights.num_params());
                assert!(report.max_relative_error < 1e-4, "{seed} {gate:?}: {report:?}");
            }
        }
    }

    #[test]
    fn token_bias_gradient_at_critical_point() {
        // all labels NoTechnique, everything else zero: the bias gradient is
        // still checked against finite differences
        let vocab = Vocabulary::build(["a", "b"]);
        let mut p = MgnParameters::init(vocab, MgnConfig { embed_dim: 2, hidden_dim: 3, ..MgnConfig::default() });
        p.weights.tok_weight.fill(0.0);
        let b = vec![EncodedSentence { token_ids: vec![1, 2, 1], labels: vec![NoTechnique; 3], is_propaganda: false }];
        let report = p.grad_check(&b, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
        let (_, g) = p.loss_and_gradient(&b).unwrap();
        assert!(g.tok_bias[0] < 0.0);
        assert!(g.tok_bias.iter().skip(1).all(|x| *x > 0.0));
    }

    #[test]
    fn first_order_taylor() {
        let p = small(9, GateInput::Logit);
        let b = batch(10);
        let (loss, g) = p.loss_and_gradient(&b).unwrap();
        let eps = 1e-6;
        let mut q = p.clone();
        q.weights.enc_weight[[2, 1]] += eps;
        let predicted = loss + g.enc_weight[[2, 1]] * eps;
        assert!((q.loss(&b).unwrap() - predicted).abs() < 1e-10);
    }

    #[test]
    fn errors() {
        let p = small(1, GateInput::Logit);
        assert!(matches!(p.forward(&[20]), Err(MgnError::OutOfVocabulary { index: 20, .. })));
        assert!(matches!(p.forward(&[]), Err(MgnError::EmptySentence)));
        assert!(matches!(p.loss(&[]), Err(MgnError::EmptyBatch)));
        let bad = EncodedSentence { token_ids: vec![1, 2], labels: vec![Doubt], is_propaganda: true };
        assert!(matches!(p.loss(&[bad]), Err(MgnError::LabelCount { .. })));
    }

    #[test]
    fn vocabulary_lookup() {
        let v = Vocabulary::build(["The", "wall", "the"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("THE"), 1);
        assert_eq!(v.id("unseen"), 0);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"["<unk>","the","wall"]"#);
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.id("wall"), 2);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut p = small(4, GateInput::Probability);
        p.project_bias();
        p.save(&path).unwrap();
        let back = MgnParameters::load(&path).unwrap();
        assert_eq!(back, p);

        let mut broken = p.clone();
        broken.weights.tok_bias[3] = 0.5;
        broken.save(&path).unwrap();
        assert!(matches!(MgnParameters::load(&path), Err(MgnError::Invalid(_))));
    }
}
