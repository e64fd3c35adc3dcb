//! A constructed model with a known answer, for verifying the steering stack.
//!
//! The residual stream at the output of layer `L` for a text `t` is
//!
//! ```text
//! r_L(t) = noise(t) + [L >= planted_layer] * s(t) * u_axis(t) + sum of injections at layers <= L
//! ```
//!
//! where `u_X = e_0`, `u_Y = e_1`, and `noise(t)` is a hashed, text-dependent
//! vector supported on coordinates 3.. only. `s(t)` is +1 for a contrast text
//! ending in a positive-pole option, -1 for one ending in a negative-pole
//! option, and a per-scenario prior in `[-0.5, 0.5]` for a rendered probe.
//!
//! For a probe prompt the model reads the pole preference
//! `pi = <u_axis, r_planted_layer>` and puts `+gain*pi/2` on the letter showing
//! the positive-pole option and `-gain*pi/2` on the other letter. Only the
//! planted layer's residual reaches the option logits, so a layer search must
//! rank it first, and steering along `u_X` cannot move `Y` questions.
//!
//! For any other text the next-token logits follow a fixed cyclic byte
//! pattern with margin `pattern_logit`, plus `|<e_2, r_last>| * g_i` on every
//! non-target token (`g_i` in `[0.5, 1.5)`, hashed). Steering along `e_2`
//! therefore flattens the distribution monotonically in `|alpha|`.

use std::collections::{BTreeMap, HashMap};

use super::tokenizer;
use super::{check_tokens, ForwardOutput, InterventionSpec, LanguageModel, Position};
use crate::dataset::{Axis, Scenario};
use crate::error::{Error, Result};
use crate::hash::hash64;

const PATTERN: &[u8] = b"the quick brown fox jumps over the lazy dog. ";
const NOISE_DIRECTION: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub planted_layer: usize,
    /// Logit scale applied to the pole preference.
    pub gain: f32,
    /// Amplitude of the hashed noise coordinates.
    pub noise_scale: f32,
    pub pattern_logit: f32,
    pub max_seq: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 16,
            planted_layer: 5,
            gain: 2.0,
            noise_scale: 0.5,
            pattern_logit: 6.0,
            max_seq: 2048,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedModel {
    config: PlantedConfig,
    high: HashMap<String, (Axis, f32)>,
    low: HashMap<String, Axis>,
}

/// Unit basis vector carrying the planted pole signal for `axis`.
pub fn pole_direction(axis: Axis, d_model: usize) -> Vec<f32> {
    let mut v = vec![0.0; d_model];
    v[match axis {
        Axis::X => 0,
        Axis::Y => 1,
    }] = 1.0;
    v
}

/// Unit vector that perturbs generation without touching the option logits.
pub fn noise_direction(d_model: usize) -> Vec<f32> {
    let mut v = vec![0.0; d_model];
    v[NOISE_DIRECTION] = 1.0;
    v
}

fn unit_hash(seed: u64, bytes: &[u8]) -> f32 {
    (hash64(seed, bytes) >> 40) as f32 / (1u64 << 24) as f32
}

impl PlantedModel {
    pub fn new(config: PlantedConfig, scenarios: &[Scenario]) -> Result<Self> {
        if config.d_model < 4 {
            return Err(Error::InvalidConfig("planted model needs d_model >= 4".into()));
        }
        if config.planted_layer >= config.n_layers {
            return Err(Error::InvalidConfig("planted layer out of range".into()));
        }
        let mut high = HashMap::new();
        let mut low = HashMap::new();
        for s in scenarios {
            let prior = unit_hash(11, s.option_high.as_bytes()) - 0.5;
            high.insert(s.option_high.clone(), (s.axis, prior));
            low.insert(s.option_low.clone(), s.axis);
        }
        Ok(Self { config, high, low })
    }

    pub fn config(&self) -> &PlantedConfig {
        &self.config
    }

    fn noise(&self, text: &[u8]) -> Vec<f32> {
        let d = self.config.d_model;
        let base = hash64(3, text);
        (0..d)
            .map(|i| {
                if i <= NOISE_DIRECTION {
                    0.0
                } else {
                    let u = unit_hash(base, &(i as u64).to_le_bytes());
                    (u - 0.5) * 2.0 * self.config.noise_scale
                }
            })
            .collect()
    }

    /// Pole signal for contrast texts: (axis, +-1) from the option suffix.
    fn contrast_signal(&self, text: &str) -> Option<(Axis, f32)> {
        let mut best: Option<(usize, Axis, f32)> = None;
        let mut consider = |opt: &str, axis: Axis, s: f32| {
            if text.ends_with(opt) && text.len() > opt.len() && text.as_bytes()[text.len() - opt.len() - 1] == b' ' {
                if best.is_none_or(|(len, _, _)| opt.len() > len) {
                    best = Some((opt.len(), axis, s));
                }
            }
        };
        for (opt, &(axis, _)) in &self.high {
            consider(opt, axis, 1.0);
        }
        for (opt, &axis) in &self.low {
            consider(opt, axis, -1.0);
        }
        best.map(|(_, a, s)| (a, s))
    }

    /// For a rendered probe: (axis, prior, positive pole shown as letter A).
    fn probe_signal(&self, text: &str) -> Option<(Axis, f32, bool)> {
        if !text.contains("What will you do (A/B)?") {
            return None;
        }
        let line = |prefix: &str| {
            text.lines()
                .find_map(|l| l.strip_prefix(prefix))
                .map(str::to_string)
        };
        let (a, b) = (line("Option A: ")?, line("Option B: ")?);
        if let Some(&(axis, prior)) = self.high.get(&a) {
            Some((axis, prior, true))
        } else {
            self.high.get(&b).map(|&(axis, prior)| (axis, prior, false))
        }
    }

    fn residuals(&self, tokens: &[u32], spec: &InterventionSpec) -> (Vec<Vec<f32>>, String) {
        let text = tokenizer::decode(tokens);
        let d = self.config.d_model;
        let mut r = self.noise(text.as_bytes());
        let signal = self
            .probe_signal(&text)
            .map(|(axis, prior, _)| (axis, prior))
            .or_else(|| self.contrast_signal(&text));
        let mut out = Vec::with_capacity(self.config.n_layers);
        for l in 0..self.config.n_layers {
            if l == self.config.planted_layer {
                if let Some((axis, s)) = signal {
                    let u = pole_direction(axis, d);
                    for (rv, uv) in r.iter_mut().zip(&u) {
                        *rv += s * uv;
                    }
                }
            }
            spec.apply_row(l, &mut r);
            out.push(r.clone());
        }
        (out, text)
    }
}

impl LanguageModel for PlantedModel {
    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn vocab_size(&self) -> usize {
        tokenizer::VOCAB_SIZE
    }

    fn max_seq(&self) -> usize {
        self.config.max_seq
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        Ok(tokenizer::encode(text))
    }

    fn decode(&self, tokens: &[u32]) -> Result<String> {
        Ok(tokenizer::decode(tokens))
    }

    fn letter_token(&self, letter: &str) -> Result<u32> {
        tokenizer::letter_token(letter)
    }

    fn bos(&self) -> Option<u32> {
        Some(tokenizer::BOS)
    }

    fn eos(&self) -> Option<u32> {
        Some(tokenizer::EOS)
    }

    /// Every position sees the same residual as the last one; the model has
    /// no positional structure.
    fn forward(
        &self,
        tokens: &[u32],
        interventions: &InterventionSpec,
        captures: &[(usize, Position)],
    ) -> Result<ForwardOutput> {
        check_tokens(tokens, tokenizer::VOCAB_SIZE, self.config.max_seq)?;
        interventions.validate(self.config.n_layers, self.config.d_model)?;
        let (res, text) = self.residuals(tokens, interventions);
        let mut logits = vec![0f32; tokenizer::VOCAB_SIZE];

        if let Some((axis, _, high_is_a)) = self.probe_signal(&text) {
            let u = pole_direction(axis, self.config.d_model);
            let pi: f32 = res[self.config.planted_layer]
                .iter()
                .zip(&u)
                .map(|(a, b)| a * b)
                .sum();
            let half = self.config.gain * pi / 2.0;
            let (a, b) = if high_is_a { (half, -half) } else { (-half, half) };
            logits[tokenizer::letter_token("A")? as usize] = a;
            logits[tokenizer::letter_token("B")? as usize] = b;
        } else {
            let last_byte = tokens
                .iter()
                .rev()
                .find(|&&t| t >= tokenizer::BYTE_OFFSET)
                .map(|&t| (t - tokenizer::BYTE_OFFSET) as u8);
            let next = match last_byte.and_then(|b| PATTERN.iter().position(|&p| p == b)) {
                Some(i) => PATTERN[(i + 1) % PATTERN.len()],
                None => PATTERN[0],
            };
            let target = (u32::from(next) + tokenizer::BYTE_OFFSET) as usize;
            let eta = res[self.config.n_layers - 1][NOISE_DIRECTION].abs();
            for (i, z) in logits.iter_mut().enumerate() {
                if i == target {
                    *z = self.config.pattern_logit;
                } else {
                    *z = eta * (0.5 + unit_hash(5, &(i as u64).to_le_bytes()));
                }
            }
        }

        let mut captured = BTreeMap::new();
        for &(layer, pos) in captures {
            if layer < self.config.n_layers {
                captured.insert((layer, pos.resolve(tokens.len())), res[layer].clone());
            }
        }
        Ok(ForwardOutput { logits, captured })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Domain, Scenario};

    fn scenarios() -> Vec<Scenario> {
        vec![
            Scenario::new("x", "A165", Domain::Family, "Trust?", "Be careful", "Trust them").unwrap(),
            Scenario::new("y", "F063", Domain::Legal, "God?", "Pray first", "Decide secularly").unwrap(),
        ]
    }

    #[test]
    fn contrast_texts_carry_signal_only_from_planted_layer() {
        let m = PlantedModel::new(PlantedConfig::default(), &scenarios()).unwrap();
        let caps: Vec<_> = (0..8).map(|l| (l, Position::Last)).collect();
        let pos = tokenizer::encode("Trust? Trust them");
        let neg = tokenizer::encode("Trust? Be careful");
        let none = InterventionSpec::none();
        let a = m.forward(&pos, &none, &caps).unwrap().captured;
        let b = m.forward(&neg, &none, &caps).unwrap().captured;
        for l in 0..8 {
            let (pa, pb) = (&a[&(l, pos.len() - 1)], &b[&(l, neg.len() - 1)]);
            let expected = if l >= 5 { 2.0 } else { 0.0 };
            assert_eq!(pa[0] - pb[0], expected);
            assert_eq!(pa[1], 0.0);
        }
    }

    #[test]
    fn unrelated_text_follows_the_pattern() {
        let m = PlantedModel::new(PlantedConfig::default(), &scenarios()).unwrap();
        let logits = m
            .forward(&tokenizer::encode("the"), &InterventionSpec::none(), &[])
            .unwrap()
            .logits;
        let best = crate::model::argmax(&logits) as u32;
        assert_eq!(best, u32::from(b' ') + tokenizer::BYTE_OFFSET);
    }
}
