//! Linear softmax policy trained on annotated demonstrations with plain or
//! confidence-weighted cross-entropy.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hcot::{QARecord, StepReasoning};
use crate::sim::{Action, MAX_STEPS};
use crate::world::{CategoryVocab, RoomType};

pub const NUM_ACTIONS: usize = 6;
pub const MODEL_KIND: &str = "policy";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    PureText,
    Cot,
    Hcot,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::PureText, FeatureSet::Cot, FeatureSet::Hcot];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::PureText => "pure_text",
            FeatureSet::Cot => "cot",
            FeatureSet::Hcot => "hcot",
        }
    }

    /// Feature dimensionality for a vocabulary of `n` object categories.
    pub fn dim_for(self, n: usize) -> usize {
        let base = n + n + NUM_ACTIONS + 2;
        match self {
            FeatureSet::PureText => base,
            FeatureSet::Cot => base + NUM_ACTIONS,
            FeatureSet::Hcot => base + NUM_ACTIONS + RoomType::COUNT + 2,
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureSet::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature set `{s}` (expected pure_text, cot or hcot)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    pub label: usize,
    pub confidence: f64,
}

/// Encodes one reasoning step. Layout, in order: visible-category bag,
/// target one-hot, previous-action one-hot, pitch, normalized step; `cot`
/// appends the suggested action; `hcot` further appends the inferred room,
/// its confidence and the maximum relevance, and scales each bag entry by
/// that category's relevance to the target.
pub fn featurize_reasoning(r: &StepReasoning, vocab: &CategoryVocab, set: FeatureSet) -> Result<Vec<f64>> {
    let n = vocab.len();
    let mut x = vec![0.0; set.dim_for(n)];
    for o in &r.subgoals {
        let i = vocab.index_of(&o.category)?;
        x[i] = match set {
            FeatureSet::Hcot => r.relevance_scores.get(&o.category).copied().unwrap_or(0.0),
            _ => 1.0,
        };
    }
    x[n + vocab.index_of(&r.target_category)?] = 1.0;
    let mut at = 2 * n;
    if let Some(a) = r.previous_action {
        x[at + a.ordinal()] = 1.0;
    }
    at += NUM_ACTIONS;
    x[at] = f64::from(r.pitch);
    x[at + 1] = r.step_index as f64 / f64::from(MAX_STEPS);
    at += 2;
    if set == FeatureSet::PureText {
        return Ok(x);
    }
    x[at + r.suggested_action.ordinal()] = 1.0;
    at += NUM_ACTIONS;
    if set == FeatureSet::Cot {
        return Ok(x);
    }
    x[at + r.inferred_room.room_type.index()] = 1.0;
    at += RoomType::COUNT;
    x[at] = r.inferred_room.confidence;
    x[at + 1] = r.max_relevance();
    Ok(x)
}

pub fn featurize(record: &QARecord, vocab: &CategoryVocab, set: FeatureSet) -> Result<TrainingExample> {
    Ok(TrainingExample {
        features: featurize_reasoning(&record.reasoning, vocab, set)?,
        label: record.label_action.ordinal(),
        confidence: record.confidence,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Row-major `NUM_ACTIONS x dim`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; NUM_ACTIONS],
            bias: vec![0.0; NUM_ACTIONS],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        NUM_ACTIONS * (self.dim() + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat parameter access: weights row-major, then biases.
    pub fn get(&self, i: usize) -> f64 {
        let d = self.dim();
        if i < NUM_ACTIONS * d {
            self.weights[i / d][i % d]
        } else {
            self.bias[i - NUM_ACTIONS * d]
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let d = self.dim();
        if i < NUM_ACTIONS * d {
            self.weights[i / d][i % d] = v;
        } else {
            self.bias[i - NUM_ACTIONS * d] = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.weights.len() != NUM_ACTIONS || self.bias.len() != NUM_ACTIONS || self.weights.iter().any(|r| r.len() != d) {
            return Err(Error::Validation(format!("policy parameters must be {NUM_ACTIONS} x D plus {NUM_ACTIONS} biases")));
        }
        if self.weights.iter().flatten().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("policy parameters contain non-finite values".into()));
        }
        Ok(())
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Greedy action and the full action distribution; ties go to the lowest
/// ordinal.
pub fn predict(params: &PolicyParams, features: &[f64]) -> (Action, Vec<f64>) {
    let p = softmax(&params.logits(features));
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    (Action::from_ordinal(best).expect("six actions"), p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Ce,
    Adaptive,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossMode::Ce),
            "adaptive" => Ok(LossMode::Adaptive),
            _ => Err(Error::Config(format!("unknown loss `{s}` (expected ce or adaptive)"))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ce => "ce",
            LossMode::Adaptive => "adaptive",
        })
    }
}

fn check_example(params: &PolicyParams, ex: &TrainingExample) -> Result<()> {
    if ex.features.len() != params.dim() {
        return Err(Error::Precondition(format!(
            "feature length {} does not match policy dimension {}",
            ex.features.len(),
            params.dim()
        )));
    }
    if ex.label >= NUM_ACTIONS {
        return Err(Error::Precondition(format!("label {} is not an action ordinal", ex.label)));
    }
    if let Some(i) = ex.features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("feature {i} is {}", ex.features[i])));
    }
    Ok(())
}

/// Cross-entropy of the labelled action and its exact gradient, laid out
/// like [`PolicyParams`].
pub fn ce_loss(params: &PolicyParams, ex: &TrainingExample) -> Result<(f64, PolicyParams)> {
    check_example(params, ex)?;
    let z = params.logits(&ex.features);
    let loss = log_sum_exp(&z) - z[ex.label];
    let mut g = softmax(&z);
    g[ex.label] -= 1.0;
    let grad = PolicyParams {
        weights: g.iter().map(|gk| ex.features.iter().map(|x| gk * x).collect()).collect(),
        bias: g,
    };
    Ok((loss, grad))
}

/// Sigmoid sample weight `1 / (1 + exp(-alpha (c - beta)))`.
pub fn adaptive_weight(c: f64, alpha: f64, beta: f64) -> f64 {
    let t = alpha * (c - beta);
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Confidence-weighted cross-entropy. The weight is data: no gradient flows
/// into the confidence.
pub fn adaptive_loss(params: &PolicyParams, ex: &TrainingExample, alpha: f64, beta: f64) -> Result<(f64, PolicyParams)> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::Precondition(format!("alpha must be positive, got {alpha}")));
    }
    let w = adaptive_weight(ex.confidence, alpha, beta);
    let (loss, mut grad) = ce_loss(params, ex)?;
    grad.weights.iter_mut().flatten().chain(grad.bias.iter_mut()).for_each(|g| *g *= w);
    Ok((w * loss, grad))
}

pub fn loss(params: &PolicyParams, ex: &TrainingExample, mode: LossMode, alpha: f64, beta: f64) -> Result<(f64, PolicyParams)> {
    match mode {
        LossMode::Ce => ce_loss(params, ex),
        LossMode::Adaptive => adaptive_loss(params, ex, alpha, beta),
    }
}

/// Gradient components smaller than this are compared absolutely.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-5;
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Largest discrepancy between the analytic gradient and central finite
/// differences over every parameter: relative where the gradient is
/// appreciable, absolute below [`GRADIENT_CHECK_FLOOR`].
pub fn gradient_check(params: &PolicyParams, ex: &TrainingExample, mode: LossMode, alpha: f64, beta: f64) -> Result<f64> {
    let (_, grad) = loss(params, ex, mode, alpha, beta)?;
    let mut p = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = p.get(i);
        p.set(i, orig + GRADIENT_CHECK_STEP);
        let up = loss(&p, ex, mode, alpha, beta)?.0;
        p.set(i, orig - GRADIENT_CHECK_STEP);
        let down = loss(&p, ex, mode, alpha, beta)?.0;
        p.set(i, orig);
        let numeric = (up - down) / (2.0 * GRADIENT_CHECK_STEP);
        let analytic = grad.get(i);
        let scale = numeric.abs().max(analytic.abs());
        let err = if scale < GRADIENT_CHECK_FLOOR {
            (numeric - analytic).abs()
        } else {
            (numeric - analytic).abs() / scale
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Ce,
            alpha: 10.0,
            beta: 0.5,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Mini-batch momentum SGD from zero initialization over seeded shuffles.
pub fn train(dataset: &[TrainingExample], config: &TrainConfig) -> Result<(PolicyParams, Vec<EpochLog>)> {
    config.validate()?;
    let first = dataset.first().ok_or_else(|| Error::Precondition("training set is empty".into()))?;
    let dim = first.features.len();
    let mut params = PolicyParams::zeros(dim);
    for ex in dataset {
        check_example(&params, ex)?;
    }
    let mut velocity = PolicyParams::zeros(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut acc = PolicyParams::zeros(dim);
            for &i in batch {
                let (l, g) = loss(&params, &dataset[i], config.loss_mode, config.alpha, config.beta)?;
                if !l.is_finite() {
                    return Err(Error::Divergence(format!("loss is {l} at epoch {epoch}, batch {b}, example {i}")));
                }
                total += l;
                for k in 0..acc.len() {
                    acc.set(k, acc.get(k) + g.get(k));
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for k in 0..params.len() {
                let v = config.momentum * velocity.get(k) - config.learning_rate * acc.get(k) * scale;
                velocity.set(k, v);
                params.set(k, params.get(k) + v);
            }
        }
        params.validate().map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
        let correct = dataset.iter().filter(|ex| predict(&params, &ex.features).0.ordinal() == ex.label).count();
        log.push(EpochLog {
            epoch,
            mean_loss: total / dataset.len() as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
        });
    }
    Ok((params, log))
}

/// A trained policy with everything needed to run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub format_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub feature_set: FeatureSet,
    pub vocab_hash: String,
    pub config: TrainConfig,
    pub params: PolicyParams,
}

impl PolicyModel {
    pub fn new(feature_set: FeatureSet, vocab: &CategoryVocab, config: TrainConfig, params: PolicyParams, manifest_hash: Option<&str>) -> Self {
        Self {
            format_version: crate::artifact::FORMAT_VERSION,
            kind: MODEL_KIND.into(),
            manifest_hash: manifest_hash.map(str::to_string),
            feature_set,
            vocab_hash: vocab.fingerprint(),
            config,
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m: PolicyModel = serde_json::from_slice(bytes).map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
        if m.kind != MODEL_KIND || m.format_version != crate::artifact::FORMAT_VERSION {
            return Err(Error::Validation(format!("not a v{} policy model", crate::artifact::FORMAT_VERSION)));
        }
        m.params.validate()?;
        Ok(m)
    }

    /// Fails unless the model was trained against `vocab`.
    pub fn check_vocab(&self, vocab: &CategoryVocab) -> Result<()> {
        if self.vocab_hash != vocab.fingerprint() {
            return Err(Error::Validation("model vocabulary hash does not match".into()));
        }
        if self.params.dim() != self.feature_set.dim_for(vocab.len()) {
            return Err(Error::Validation(format!(
                "model dimension {} does not fit feature set {}",
                self.params.dim(),
                self.feature_set
            )));
        }
        Ok(())
    }
}

pub fn epoch_log_to_jsonl(log: &[EpochLog], manifest_hash: Option<&str>) -> Result<Vec<u8>> {
    crate::artifact::to_jsonl(&crate::artifact::Header::new("training_log", manifest_hash), log)
}
