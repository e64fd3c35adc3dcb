//! Hookable decoder-only language models.
//!
//! [`LanguageModel`] is the seam between the pipeline and whatever computes
//! logits: the in-process [`TinyTransformer`], the constructed
//! [`planted::PlantedModel`], or an external process speaking the
//! [`backend`] protocol. A [`Session`] layers interventions and activation
//! capture on top of a shared, immutable model.

pub mod backend;
pub mod planted;
pub mod tokenizer;
mod transformer;
pub mod weights;

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hash::SplitMix64;

pub use transformer::{load_model, ModelConfig, TinyTransformer};

// ---------------------------------------------------------------------------
// Interventions and capture
// ---------------------------------------------------------------------------

/// Token position for capture requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Position {
    /// Final position of whatever sequence is being run.
    Last,
    At(usize),
}

impl Position {
    pub fn resolve(self, len: usize) -> usize {
        match self {
            Position::Last => len.saturating_sub(1),
            Position::At(p) => p,
        }
    }
}

impl Serialize for Position {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Position::Last => s.serialize_str("last"),
            Position::At(p) => s.serialize_u64(*p as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Position {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(p) => Ok(Position::At(p)),
            Raw::Name(s) if s == "last" => Ok(Position::Last),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("bad position `{s}`"))),
        }
    }
}

/// `h_L <- h_L + alpha * vector` at the output of block `layer`, every position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub layer: usize,
    pub vector: Vec<f32>,
    pub alpha: f32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InterventionSpec {
    pub entries: Vec<Intervention>,
}

impl InterventionSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(layer: usize, vector: Vec<f32>, alpha: f32) -> Self {
        Self {
            entries: vec![Intervention {
                layer,
                vector,
                alpha,
            }],
        }
    }

    pub fn push(&mut self, layer: usize, vector: Vec<f32>, alpha: f32) {
        self.entries.push(Intervention {
            layer,
            vector,
            alpha,
        });
    }

    pub fn validate(&self, n_layers: usize, d_model: usize) -> Result<()> {
        for e in &self.entries {
            if e.layer >= n_layers {
                return Err(Error::InvalidIntervention(format!(
                    "layer {} out of range (model has {n_layers})",
                    e.layer
                )));
            }
            if e.vector.len() != d_model {
                return Err(Error::InvalidIntervention(format!(
                    "vector length {} != d_model {d_model}",
                    e.vector.len()
                )));
            }
            if !e.alpha.is_finite() {
                return Err(Error::InvalidIntervention("alpha is not finite".into()));
            }
        }
        Ok(())
    }

    /// Entries that actually move the residual stream at `layer`.
    /// Zero-alpha entries are skipped, so `alpha = 0` is an exact no-op.
    pub fn active_at(&self, layer: usize) -> impl Iterator<Item = &Intervention> {
        self.entries
            .iter()
            .filter(move |e| e.layer == layer && e.alpha != 0.0)
    }

    /// Add every active entry for `layer` to one residual row.
    pub fn apply_row(&self, layer: usize, row: &mut [f32]) {
        for e in self.active_at(layer) {
            for (h, v) in row.iter_mut().zip(&e.vector) {
                *h += e.alpha * v;
            }
        }
    }
}

/// Last-position logits plus any requested residual captures, keyed by
/// `(layer, resolved position)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f32>,
    pub captured: BTreeMap<(usize, usize), Vec<f32>>,
}

// ---------------------------------------------------------------------------
// Model trait
// ---------------------------------------------------------------------------

/// Incremental decoding: feed tokens one at a time and read next-token logits.
pub trait DecodeState {
    /// Logits for the token following everything fed so far.
    fn logits(&self) -> &[f32];
    fn push(&mut self, token: u32) -> Result<()>;
    fn len(&self) -> usize;
}

pub trait LanguageModel: Send + Sync {
    fn n_layers(&self) -> usize;
    fn d_model(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn max_seq(&self) -> usize;

    fn encode(&self, text: &str) -> Result<Vec<u32>>;
    fn decode(&self, tokens: &[u32]) -> Result<String>;

    /// Token id carrying an option letter. Must resolve to exactly one token.
    fn letter_token(&self, letter: &str) -> Result<u32>;

    fn bos(&self) -> Option<u32>;
    fn eos(&self) -> Option<u32>;

    /// Run the full sequence with interventions applied at every position.
    fn forward(
        &self,
        tokens: &[u32],
        interventions: &InterventionSpec,
        captures: &[(usize, Position)],
    ) -> Result<ForwardOutput>;

    /// Start incremental decoding after `prompt`. The default recomputes the
    /// whole sequence per step; models with a cache override it.
    fn start_decode<'a>(
        &'a self,
        prompt: &[u32],
        interventions: &'a InterventionSpec,
    ) -> Result<Box<dyn DecodeState + 'a>> {
        let out = self.forward(prompt, interventions, &[])?;
        Ok(Box::new(RecomputeDecoder {
            model: self,
            interventions,
            tokens: prompt.to_vec(),
            logits: out.logits,
        }))
    }

    /// BOS (if any) followed by the encoded text.
    fn prompt_tokens(&self, text: &str) -> Result<Vec<u32>> {
        let mut out: Vec<u32> = self.bos().into_iter().collect();
        out.extend(self.encode(text)?);
        Ok(out)
    }
}

struct RecomputeDecoder<'a, M: LanguageModel + ?Sized> {
    model: &'a M,
    interventions: &'a InterventionSpec,
    tokens: Vec<u32>,
    logits: Vec<f32>,
}

impl<M: LanguageModel + ?Sized> DecodeState for RecomputeDecoder<'_, M> {
    fn logits(&self) -> &[f32] {
        &self.logits
    }

    fn push(&mut self, token: u32) -> Result<()> {
        self.tokens.push(token);
        self.logits = self.model.forward(&self.tokens, self.interventions, &[])?.logits;
        Ok(())
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

pub(crate) fn check_tokens(tokens: &[u32], vocab: usize, max_seq: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if tokens.len() > max_seq {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: max_seq,
        });
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::TokenOutOfRange { token: t, vocab });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Sampling helpers
// ---------------------------------------------------------------------------

/// Natural-log softmax of one entry, in f64.
pub fn log_softmax_at(logits: &[f32], index: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(f64::from(z)));
    let sum: f64 = logits.iter().map(|&z| (f64::from(z) - max).exp()).sum();
    f64::from(logits[index]) - max - sum.ln()
}

/// Greedy pick; ties go to the lowest token id.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

fn sample(logits: &[f32], temperature: f64, rng: &mut SplitMix64) -> usize {
    if temperature == 0.0 {
        return argmax(logits);
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(f64::from(z)));
    let weights: Vec<f64> = logits
        .iter()
        .map(|&z| ((f64::from(z) - max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.next_f64() * total;
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    // rounding left a sliver past the end
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

/// Generated continuation with the model's own log-probabilities (temperature 1)
/// for each emitted token. EOS is not included.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub logprobs: Vec<f64>,
}

/// Which model scores a steered continuation for perplexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerplexityScoring {
    /// The steered model scores its own continuation.
    #[default]
    SelfScored,
    /// The unsteered model scores the steered continuation.
    BaselineScored,
}

/// Per-caller view over a shared model: interventions plus capture requests.
pub struct Session<'m, M: LanguageModel + ?Sized> {
    model: &'m M,
    interventions: InterventionSpec,
    capture_requests: Vec<(usize, Position)>,
    captured: BTreeMap<(usize, Position), Vec<f32>>,
}

impl<'m, M: LanguageModel + ?Sized> Session<'m, M> {
    pub fn new(model: &'m M) -> Self {
        Self {
            model,
            interventions: InterventionSpec::none(),
            capture_requests: Vec::new(),
            captured: BTreeMap::new(),
        }
    }

    pub fn with_interventions(model: &'m M, spec: InterventionSpec) -> Result<Self> {
        let mut s = Self::new(model);
        s.set_interventions(spec)?;
        Ok(s)
    }

    pub fn model(&self) -> &'m M {
        self.model
    }

    pub fn interventions(&self) -> &InterventionSpec {
        &self.interventions
    }

    pub fn set_interventions(&mut self, spec: InterventionSpec) -> Result<()> {
        spec.validate(self.model.n_layers(), self.model.d_model())?;
        self.interventions = spec;
        Ok(())
    }

    pub fn clear_interventions(&mut self) {
        self.interventions = InterventionSpec::none();
    }

    pub fn request_capture(&mut self, layer: usize, position: Position) {
        if !self.capture_requests.contains(&(layer, position)) {
            self.capture_requests.push((layer, position));
        }
    }

    pub fn captured(&self, layer: usize, position: Position) -> Option<&[f32]> {
        self.captured.get(&(layer, position)).map(Vec::as_slice)
    }

    /// Pre-softmax logits at the final position. Captures are refreshed.
    pub fn forward_last_logits(&mut self, tokens: &[u32]) -> Result<Vec<f32>> {
        let out = self
            .model
            .forward(tokens, &self.interventions, &self.capture_requests)?;
        self.captured.clear();
        for &(layer, pos) in &self.capture_requests {
            if let Some(v) = out.captured.get(&(layer, pos.resolve(tokens.len()))) {
                self.captured.insert((layer, pos), v.clone());
            }
        }
        Ok(out.logits)
    }

    /// Sample up to `max_new` tokens. `temperature == 0` is greedy.
    /// Stops early at EOS or when the context is full.
    pub fn generate(
        &self,
        prompt: &[u32],
        max_new: usize,
        temperature: f64,
        gen_seed: u64,
    ) -> Result<Generation> {
        if max_new == 0 {
            return Err(Error::InvalidConfig("max_new must be at least 1".into()));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad temperature {temperature}")));
        }
        check_tokens(prompt, self.model.vocab_size(), self.model.max_seq())?;
        let mut rng = SplitMix64::new(gen_seed);
        let mut state = self.model.start_decode(prompt, &self.interventions)?;
        let mut out = Generation {
            tokens: Vec::new(),
            logprobs: Vec::new(),
        };
        while out.tokens.len() < max_new {
            let logits = state.logits();
            let tok = sample(logits, temperature, &mut rng);
            if Some(tok as u32) == self.model.eos() {
                break;
            }
            out.logprobs.push(log_softmax_at(logits, tok));
            out.tokens.push(tok as u32);
            if state.len() >= self.model.max_seq() || out.tokens.len() == max_new {
                break;
            }
            state.push(tok as u32)?;
        }
        Ok(out)
    }

    /// `exp(mean NLL)` of up to `window` generated tokens.
    pub fn perplexity(
        &self,
        prompt: &[u32],
        window: usize,
        temperature: f64,
        gen_seed: u64,
        scoring: PerplexityScoring,
    ) -> Result<f64> {
        let gen = self.generate(prompt, window, temperature, gen_seed)?;
        if gen.tokens.is_empty() {
            return Err(Error::EmptyContinuation);
        }
        let logprobs = match scoring {
            PerplexityScoring::SelfScored => gen.logprobs,
            PerplexityScoring::BaselineScored => {
                let none = InterventionSpec::none();
                let mut state = self.model.start_decode(prompt, &none)?;
                let mut lp = Vec::with_capacity(gen.tokens.len());
                for (i, &t) in gen.tokens.iter().enumerate() {
                    lp.push(log_softmax_at(state.logits(), t as usize));
                    if i + 1 < gen.tokens.len() {
                        state.push(t)?;
                    }
                }
                lp
            }
        };
        let mean_nll = -logprobs.iter().sum::<f64>() / logprobs.len() as f64;
        Ok(mean_nll.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_serde() {
        assert_eq!(serde_json::to_string(&Position::Last).unwrap(), "\"last\"");
        assert_eq!(serde_json::from_str::<Position>("3").unwrap(), Position::At(3));
        assert_eq!(serde_json::from_str::<Position>("\"last\"").unwrap(), Position::Last);
        assert!(serde_json::from_str::<Position>("\"first\"").is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn log_softmax_uniform() {
        let lp = log_softmax_at(&[0.0; 4], 2);
        assert!((lp - (0.25f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn intervention_validation() {
        let spec = InterventionSpec::single(3, vec![0.0; 4], 0.2);
        assert!(spec.validate(4, 4).is_ok());
        assert!(spec.validate(3, 4).is_err());
        assert!(spec.validate(4, 5).is_err());
        let nan = InterventionSpec::single(0, vec![0.0; 4], f32::NAN);
        assert!(nan.validate(4, 4).is_err());
    }
}
