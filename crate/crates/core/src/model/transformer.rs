//! Small pre-LayerNorm decoder: learned positions, GELU MLP, output head tied
//! to the token embedding. Runs in f32 on the CPU with a per-sequence KV cache.
//!
//! Every row is computed with the same loop order whether it is processed in
//! a full pass or one token at a time, so cached decoding is bitwise equal to
//! recomputation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tokenizer;
use super::weights::{Tensor, TensorFile};
use super::{check_tokens, DecodeState, ForwardOutput, InterventionSpec, LanguageModel, Position};
use crate::error::{Error, Result};

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: tokenizer::VOCAB_SIZE,
            d_model: 32,
            n_layers: 8,
            n_heads: 4,
            d_ff: 128,
            max_seq: 1024,
            init_seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.vocab_size < tokenizer::VOCAB_SIZE {
            return bad(format!(
                "vocab_size {} cannot hold the {} byte-level tokens",
                self.vocab_size,
                tokenizer::VOCAB_SIZE
            ));
        }
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("all dimensions must be at least 1".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.max_seq < 8 {
            return bad(format!("max_seq {} < 8", self.max_seq));
        }
        Ok(())
    }

    /// Parameter names and shapes in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ff);
        let mut out = vec![
            ("tok_emb".to_string(), vec![self.vocab_size, d]),
            ("pos_emb".to_string(), vec![self.max_seq, d]),
        ];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            out.extend([
                (p("ln1.weight"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.wo"), vec![d, d]),
                (p("ln2.weight"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("mlp.w1"), vec![d, f]),
                (p("mlp.b1"), vec![f]),
                (p("mlp.w2"), vec![f, d]),
                (p("mlp.b2"), vec![d]),
            ]);
        }
        out.push(("ln_f.weight".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_g: Vec<f32>,
    ln1_b: Vec<f32>,
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    ln2_g: Vec<f32>,
    ln2_b: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
}

/// Immutable model handle; share it across threads by reference.
#[derive(Debug, Clone)]
pub struct TinyTransformer {
    config: ModelConfig,
    tok_emb: Vec<f32>,
    pos_emb: Vec<f32>,
    blocks: Vec<Block>,
    lnf_g: Vec<f32>,
    lnf_b: Vec<f32>,
}

/// Seeded weights, or weights read from `weights_path` and checked against `config`.
pub fn load_model(config: &ModelConfig, weights_path: Option<&Path>) -> Result<TinyTransformer> {
    match weights_path {
        None => TinyTransformer::init(config),
        Some(path) => TinyTransformer::from_tensor_file(config, &TensorFile::read(path)?),
    }
}

impl TinyTransformer {
    /// Standard-normal weights scaled by `1/sqrt(d_model)`; LayerNorm gains 1,
    /// all biases 0. Draws come from ChaCha8 seeded with `init_seed`, in
    /// canonical parameter order.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let scale = 1.0 / (config.d_model as f32).sqrt();
        let mut file = TensorFile::default();
        for (name, shape) in config.param_shapes() {
            let len = shape.iter().product();
            let data = if name.ends_with(".weight") && shape.len() == 1 {
                vec![1.0; len]
            } else if shape.len() == 1 {
                vec![0.0; len]
            } else {
                (0..len)
                    .map(|_| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect()
            };
            file.tensors.push((name, Tensor::new(shape, data)));
        }
        Self::from_tensor_file(config, &file)
    }

    pub fn from_tensor_file(config: &ModelConfig, file: &TensorFile) -> Result<Self> {
        config.validate()?;
        let take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let t = file
                .get(name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: file has {:?}, config needs {shape:?}",
                    t.shape
                )));
            }
            Ok(t.data.clone())
        };
        let (d, f, v, s) = (config.d_model, config.d_ff, config.vocab_size, config.max_seq);
        let tok_emb = take("tok_emb", &[v, d])?;
        let pos_emb = take("pos_emb", &[s, d])?;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |n: &str| format!("blocks.{l}.{n}");
            blocks.push(Block {
                ln1_g: take(&p("ln1.weight"), &[d])?,
                ln1_b: take(&p("ln1.bias"), &[d])?,
                wq: take(&p("attn.wq"), &[d, d])?,
                wk: take(&p("attn.wk"), &[d, d])?,
                wv: take(&p("attn.wv"), &[d, d])?,
                wo: take(&p("attn.wo"), &[d, d])?,
                ln2_g: take(&p("ln2.weight"), &[d])?,
                ln2_b: take(&p("ln2.bias"), &[d])?,
                w1: take(&p("mlp.w1"), &[d, f])?,
                b1: take(&p("mlp.b1"), &[f])?,
                w2: take(&p("mlp.w2"), &[f, d])?,
                b2: take(&p("mlp.b2"), &[d])?,
            });
        }
        let lnf_g = take("ln_f.weight", &[d])?;
        let lnf_b = take("ln_f.bias", &[d])?;
        Ok(Self {
            config: config.clone(),
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
        })
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut file = TensorFile::default();
        file.metadata.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        let (d, f, v, s) = (
            self.config.d_model,
            self.config.d_ff,
            self.config.vocab_size,
            self.config.max_seq,
        );
        let mut put = |name: String, shape: Vec<usize>, data: &[f32]| {
            file.tensors.push((name, Tensor::new(shape, data.to_vec())));
        };
        put("tok_emb".into(), vec![v, d], &self.tok_emb);
        put("pos_emb".into(), vec![s, d], &self.pos_emb);
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{l}.{n}");
            put(p("ln1.weight"), vec![d], &b.ln1_g);
            put(p("ln1.bias"), vec![d], &b.ln1_b);
            put(p("attn.wq"), vec![d, d], &b.wq);
            put(p("attn.wk"), vec![d, d], &b.wk);
            put(p("attn.wv"), vec![d, d], &b.wv);
            put(p("attn.wo"), vec![d, d], &b.wo);
            put(p("ln2.weight"), vec![d], &b.ln2_g);
            put(p("ln2.bias"), vec![d], &b.ln2_b);
            put(p("mlp.w1"), vec![d, f], &b.w1);
            put(p("mlp.b1"), vec![f], &b.b1);
            put(p("mlp.w2"), vec![f, d], &b.w2);
            put(p("mlp.b2"), vec![d], &b.b2);
        }
        put("ln_f.weight".into(), vec![d], &self.lnf_g);
        put("ln_f.bias".into(), vec![d], &self.lnf_b);
        file
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Process `tokens` appended after whatever `cache` already holds.
    /// Returns logits for the last new row. `captures` are absolute positions.
    fn run(
        &self,
        cache: &mut KvCache,
        tokens: &[u32],
        spec: &InterventionSpec,
        captures: &[(usize, usize)],
        captured: &mut BTreeMap<(usize, usize), Vec<f32>>,
    ) -> Vec<f32> {
        let cfg = &self.config;
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let n = tokens.len();
        let start = cache.len;
        let hd = d / cfg.n_heads;
        let scale = 1.0 / (hd as f32).sqrt();

        let mut x = vec![0f32; n * d];
        for (i, &t) in tokens.iter().enumerate() {
            let te = &self.tok_emb[t as usize * d..(t as usize + 1) * d];
            let pe = &self.pos_emb[(start + i) * d..(start + i + 1) * d];
            for (j, xv) in x[i * d..(i + 1) * d].iter_mut().enumerate() {
                *xv = te[j] + pe[j];
            }
        }

        let mut h = vec![0f32; n * d];
        let mut q = vec![0f32; n * d];
        let mut k = vec![0f32; n * d];
        let mut v = vec![0f32; n * d];
        let mut att = vec![0f32; n * d];
        let mut tmp = vec![0f32; n * d];
        let mut hidden = vec![0f32; n * ff];
        let mut scores = vec![0f32; start + n];

        for (l, blk) in self.blocks.iter().enumerate() {
            layer_norm_rows(&x, &mut h, &blk.ln1_g, &blk.ln1_b, d);
            matmul(&h, &blk.wq, d, d, &mut q);
            matmul(&h, &blk.wk, d, d, &mut k);
            matmul(&h, &blk.wv, d, d, &mut v);
            cache.k[l].extend_from_slice(&k);
            cache.v[l].extend_from_slice(&v);
            let (kc, vc) = (&cache.k[l], &cache.v[l]);

            att.iter_mut().for_each(|a| *a = 0.0);
            for i in 0..n {
                let p = start + i;
                for head in 0..cfg.n_heads {
                    let off = head * hd;
                    let qh = &q[i * d + off..i * d + off + hd];
                    let mut max = f32::NEG_INFINITY;
                    for (j, s) in scores[..=p].iter_mut().enumerate() {
                        let kh = &kc[j * d + off..j * d + off + hd];
                        *s = dot(qh, kh) * scale;
                        max = max.max(*s);
                    }
                    let mut sum = 0f32;
                    for s in scores[..=p].iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let out = &mut att[i * d + off..i * d + off + hd];
                    for (j, s) in scores[..=p].iter().enumerate() {
                        let w = s / sum;
                        let vh = &vc[j * d + off..j * d + off + hd];
                        for (o, vv) in out.iter_mut().zip(vh) {
                            *o += w * vv;
                        }
                    }
                }
            }
            matmul(&att, &blk.wo, d, d, &mut tmp);
            add_in_place(&mut x, &tmp);

            layer_norm_rows(&x, &mut h, &blk.ln2_g, &blk.ln2_b, d);
            matmul(&h, &blk.w1, d, ff, &mut hidden);
            for row in hidden.chunks_exact_mut(ff) {
                for (hv, b) in row.iter_mut().zip(&blk.b1) {
                    *hv = gelu(*hv + b);
                }
            }
            matmul(&hidden, &blk.w2, ff, d, &mut tmp);
            for row in tmp.chunks_exact_mut(d) {
                add_in_place(row, &blk.b2);
            }
            add_in_place(&mut x, &tmp);

            for row in x.chunks_exact_mut(d) {
                spec.apply_row(l, row);
            }
            for &(cl, pos) in captures {
                if cl == l && pos >= start && pos < start + n {
                    let i = pos - start;
                    captured.insert((l, pos), x[i * d..(i + 1) * d].to_vec());
                }
            }
        }
        cache.len += n;

        let last = &x[(n - 1) * d..n * d];
        let mut hf = vec![0f32; d];
        layer_norm_rows(last, &mut hf, &self.lnf_g, &self.lnf_b, d);
        self.tok_emb
            .chunks_exact(d)
            .map(|e| dot(&hf, e))
            .collect()
    }
}

#[derive(Debug)]
struct KvCache {
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    fn new(n_layers: usize) -> Self {
        Self {
            k: vec![Vec::new(); n_layers],
            v: vec![Vec::new(); n_layers],
            len: 0,
        }
    }
}

struct CachedDecoder<'a> {
    model: &'a TinyTransformer,
    spec: &'a InterventionSpec,
    cache: KvCache,
    logits: Vec<f32>,
}

impl DecodeState for CachedDecoder<'_> {
    fn logits(&self) -> &[f32] {
        &self.logits
    }

    fn push(&mut self, token: u32) -> Result<()> {
        let cfg = &self.model.config;
        if token as usize >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: cfg.vocab_size,
            });
        }
        if self.cache.len + 1 > cfg.max_seq {
            return Err(Error::SequenceTooLong {
                len: self.cache.len + 1,
                max: cfg.max_seq,
            });
        }
        self.logits = self
            .model
            .run(&mut self.cache, &[token], self.spec, &[], &mut BTreeMap::new());
        Ok(())
    }

    fn len(&self) -> usize {
        self.cache.len
    }
}

impl LanguageModel for TinyTransformer {
    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn d_model(&self) -> usize {
        self.config.d_model
    }

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
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

    fn forward(
        &self,
        tokens: &[u32],
        interventions: &InterventionSpec,
        captures: &[(usize, Position)],
    ) -> Result<ForwardOutput> {
        check_tokens(tokens, self.config.vocab_size, self.config.max_seq)?;
        interventions.validate(self.config.n_layers, self.config.d_model)?;
        let resolved: Vec<(usize, usize)> = captures
            .iter()
            .map(|&(l, p)| (l, p.resolve(tokens.len())))
            .collect();
        let mut cache = KvCache::new(self.config.n_layers);
        let mut captured = BTreeMap::new();
        let logits = self.run(&mut cache, tokens, interventions, &resolved, &mut captured);
        Ok(ForwardOutput { logits, captured })
    }

    fn start_decode<'a>(
        &'a self,
        prompt: &[u32],
        interventions: &'a InterventionSpec,
    ) -> Result<Box<dyn DecodeState + 'a>> {
        check_tokens(prompt, self.config.vocab_size, self.config.max_seq)?;
        interventions.validate(self.config.n_layers, self.config.d_model)?;
        let mut cache = KvCache::new(self.config.n_layers);
        let logits = self.run(&mut cache, prompt, interventions, &[], &mut BTreeMap::new());
        Ok(Box::new(CachedDecoder {
            model: self,
            spec: interventions,
            cache,
            logits,
        }))
    }
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_in_place(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out[rows, n_out] = input[rows, n_in] @ w[n_in, n_out]`, one row at a time.
fn matmul(input: &[f32], w: &[f32], n_in: usize, n_out: usize, out: &mut [f32]) {
    for (row, o) in input.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        o.iter_mut().for_each(|v| *v = 0.0);
        for (k, &a) in row.iter().enumerate() {
            let wr = &w[k * n_out..(k + 1) * n_out];
            for (ov, wv) in o.iter_mut().zip(wr) {
                *ov += a * wv;
            }
        }
    }
}

fn layer_norm_rows(x: &[f32], out: &mut [f32], g: &[f32], b: &[f32], d: usize) {
    for (row, o) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            o[j] = (row[j] - mean) * inv * g[j] + b[j];
        }
    }
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}
