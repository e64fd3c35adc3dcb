//! Contrastive mean-difference steering vectors and the per-layer search that
//! decides where to inject them.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Axis, LabeledScenario, Qid, Scenario};
use crate::error::{Error, Result};
use crate::model::weights::{Tensor, TensorFile};
use crate::model::{InterventionSpec, LanguageModel, Position};
use crate::persona::PersonaProfile;
use crate::probing::{probe_all, ProbeResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastPair {
    pub scenario_id: String,
    pub text_pos: String,
    pub text_neg: String,
}

pub fn build_pairs(scenarios: &[Scenario], axis: Axis) -> Vec<ContrastPair> {
    scenarios
        .iter()
        .filter(|s| s.axis == axis)
        .map(|s| ContrastPair {
            scenario_id: s.id.clone(),
            text_pos: format!("{} {}", s.scenario_text, s.option_high),
            text_neg: format!("{} {}", s.scenario_text, s.option_low),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVectorSet {
    pub axis: Axis,
    pub n: usize,
    pub vectors: BTreeMap<usize, Vec<f32>>,
}

impl SteeringVectorSet {
    pub fn zeros(axis: Axis, n_layers: usize, d_model: usize) -> Self {
        Self {
            axis,
            n: 1,
            vectors: (0..n_layers).map(|l| (l, vec![0.0; d_model])).collect(),
        }
    }

    pub fn vector(&self, layer: usize) -> Result<&[f32]> {
        self.vectors
            .get(&layer)
            .map(Vec::as_slice)
            .ok_or(Error::MissingLayerVector(layer))
    }

    /// `(layer, v_layer, alpha)` for every listed layer.
    pub fn interventions(&self, layers: &[usize], alpha: f32) -> Result<InterventionSpec> {
        let mut spec = InterventionSpec::none();
        for &l in layers {
            spec.push(l, self.vector(l)?.to_vec(), alpha);
        }
        Ok(spec)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.metadata.insert("axis".into(), Value::from(self.axis.to_string()));
        f.metadata.insert("n".into(), Value::from(self.n));
        for (l, v) in &self.vectors {
            f.tensors
                .push((format!("layer.{l}"), Tensor::new(vec![v.len()], v.clone())));
        }
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let bad = |m: &str| Error::WeightsFormat(format!("steering vector file: {m}"));
        let axis: Axis = f
            .metadata
            .get("axis")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing axis"))?
            .parse()?;
        let n = f
            .metadata
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("missing n"))? as usize;
        let mut vectors = BTreeMap::new();
        for (name, t) in &f.tensors {
            let layer = name
                .strip_prefix("layer.")
                .and_then(|l| l.parse().ok())
                .ok_or_else(|| bad(&format!("unexpected tensor {name}")))?;
            vectors.insert(layer, t.data.clone());
        }
        Ok(Self { axis, n, vectors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?)
    }
}

/// Residuals after every block at the final token of `text`.
pub fn capture_final<M: LanguageModel + ?Sized>(model: &M, text: &str) -> Result<Vec<Vec<f32>>> {
    let tokens = model.prompt_tokens(text)?;
    let caps: Vec<(usize, Position)> = (0..model.n_layers()).map(|l| (l, Position::Last)).collect();
    let mut out = model.forward(&tokens, &InterventionSpec::none(), &caps)?;
    let last = tokens.len() - 1;
    (0..model.n_layers())
        .map(|l| {
            out.captured
                .remove(&(l, last))
                .ok_or_else(|| Error::Backend(format!("model returned no capture for layer {l}")))
        })
        .collect()
}

/// `v_L = mean over pairs of (a+_L - a-_L)`, accumulated in f64 in pair order.
pub fn extract_vectors<M: LanguageModel + ?Sized>(
    model: &M,
    pairs: &[ContrastPair],
    axis: Axis,
) -> Result<SteeringVectorSet> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let diffs: Vec<Vec<Vec<f32>>> = pairs
        .par_iter()
        .map(|p| {
            let pos = capture_final(model, &p.text_pos)?;
            let neg = capture_final(model, &p.text_neg)?;
            Ok(pos
                .iter()
                .zip(&neg)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let (n_layers, d) = (model.n_layers(), model.d_model());
    let mut sums = vec![vec![0f64; d]; n_layers];
    for per_layer in &diffs {
        for (acc, diff) in sums.iter_mut().zip(per_layer) {
            for (a, &x) in acc.iter_mut().zip(diff) {
                *a += f64::from(x);
            }
        }
    }
    let n = pairs.len();
    Ok(SteeringVectorSet {
        axis,
        n,
        vectors: sums
            .into_iter()
            .enumerate()
            .map(|(l, s)| (l, s.into_iter().map(|x| (x / n as f64) as f32).collect()))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCell {
    pub layer: usize,
    pub qid: Qid,
    pub differential: f64,
}

/// Per-question view over the selected layers: the strongest shift in the
/// steering direction and whether it clears the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub qid: Qid,
    pub best_layer: usize,
    pub differential: f64,
    pub meets_threshold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSearchReport {
    pub axis: Axis,
    pub alpha: f64,
    pub threshold: f64,
    pub cells: Vec<LayerCell>,
    pub layer_means: BTreeMap<usize, f64>,
    pub selected: Vec<usize>,
    pub questions: Vec<QuestionSummary>,
}

fn per_qid_differential(
    probe_set: &[LabeledScenario],
    baseline: &[ProbeResult],
    steered: &[ProbeResult],
) -> BTreeMap<Qid, f64> {
    let mut acc: BTreeMap<Qid, (f64, usize)> = BTreeMap::new();
    for ((ls, b), s) in probe_set.iter().zip(baseline).zip(steered) {
        let e = acc.entry(ls.scenario.qid).or_default();
        e.0 += s.p_high - b.p_high;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(q, (sum, n))| (q, sum / n as f64))
        .collect()
}

/// Steer one layer at a time and rank layers by mean |differential| across
/// questions. Ties go to the lower layer.
pub fn layer_search<M: LanguageModel + ?Sized>(
    model: &M,
    vectors: &SteeringVectorSet,
    probe_set: &[LabeledScenario],
    alpha: f32,
    k: usize,
    threshold: f64,
) -> Result<LayerSearchReport> {
    if alpha == 0.0 {
        return Err(Error::ZeroAlpha);
    }
    if probe_set.is_empty() {
        return Err(Error::EmptyProbeSet);
    }
    let n_layers = model.n_layers();
    for l in 0..n_layers {
        vectors.vector(l)?;
    }
    let baseline = probe_all(model, probe_set, None, &InterventionSpec::none())?;
    let mut cells = Vec::new();
    let mut layer_means = BTreeMap::new();
    for layer in 0..n_layers {
        let spec = vectors.interventions(&[layer], alpha)?;
        let steered = probe_all(model, probe_set, None, &spec)?;
        let diffs = per_qid_differential(probe_set, &baseline, &steered);
        let mean_abs = diffs.values().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
        layer_means.insert(layer, mean_abs);
        cells.extend(diffs.into_iter().map(|(qid, differential)| LayerCell {
            layer,
            qid,
            differential,
        }));
    }
    let mut ranked: Vec<usize> = (0..n_layers).collect();
    ranked.sort_by(|&a, &b| layer_means[&b].total_cmp(&layer_means[&a]).then(a.cmp(&b)));
    ranked.truncate(k.min(n_layers));

    let sign = f64::from(alpha.signum());
    let mut questions: BTreeMap<Qid, QuestionSummary> = BTreeMap::new();
    for &layer in &ranked {
        for c in cells.iter().filter(|c| c.layer == layer) {
            let better = questions
                .get(&c.qid)
                .is_none_or(|q| sign * c.differential > sign * q.differential);
            if better {
                questions.insert(
                    c.qid,
                    QuestionSummary {
                        qid: c.qid,
                        best_layer: layer,
                        differential: c.differential,
                        meets_threshold: sign * c.differential >= threshold,
                    },
                );
            }
        }
    }
    Ok(LayerSearchReport {
        axis: vectors.axis,
        alpha: f64::from(alpha),
        threshold,
        cells,
        layer_means,
        selected: ranked,
        questions: questions.into_values().collect(),
    })
}

impl LayerSearchReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json("layer report", e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// `layer,qid,differential` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "qid", "differential"])?;
        for c in &self.cells {
            w.write_record([c.layer.to_string(), c.qid.to_string(), c.differential.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn check_alpha(alpha: f64, cap: f64, force: bool) -> Result<()> {
    if !force && alpha.abs() > cap {
        return Err(Error::AlphaOverCap { alpha: alpha.abs(), cap });
    }
    Ok(())
}

/// Probe with `(L, v_L, alpha)` injected at every listed layer.
#[allow(clippy::too_many_arguments)]
pub fn steered_probe<M: LanguageModel + ?Sized>(
    model: &M,
    vectors: &SteeringVectorSet,
    layers: &[usize],
    alpha: f64,
    alpha_cap: f64,
    force: bool,
    probe_set: &[LabeledScenario],
    persona: Option<&PersonaProfile>,
) -> Result<Vec<ProbeResult>> {
    if layers.is_empty() {
        return Err(Error::EmptyLayers);
    }
    check_alpha(alpha, alpha_cap, force)?;
    let spec = vectors.interventions(layers, alpha as f32)?;
    probe_all(model, probe_set, persona, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{assign_labels, synthetic::canonical_dataset, Domain};
    use crate::model::ForwardOutput;

    /// Captures are looked up by exact text; everything else is zero.
    struct Rigged {
        table: BTreeMap<String, Vec<f32>>,
    }

    impl LanguageModel for Rigged {
        fn n_layers(&self) -> usize {
            1
        }
        fn d_model(&self) -> usize {
            2
        }
        fn vocab_size(&self) -> usize {
            crate::model::tokenizer::VOCAB_SIZE
        }
        fn max_seq(&self) -> usize {
            512
        }
        fn encode(&self, text: &str) -> Result<Vec<u32>> {
            Ok(crate::model::tokenizer::encode(text))
        }
        fn decode(&self, tokens: &[u32]) -> Result<String> {
            Ok(crate::model::tokenizer::decode(tokens))
        }
        fn letter_token(&self, letter: &str) -> Result<u32> {
            crate::model::tokenizer::letter_token(letter)
        }
        fn bos(&self) -> Option<u32> {
            None
        }
        fn eos(&self) -> Option<u32> {
            None
        }
        fn forward(
            &self,
            tokens: &[u32],
            _: &InterventionSpec,
            captures: &[(usize, Position)],
        ) -> Result<ForwardOutput> {
            let text = crate::model::tokenizer::decode(tokens);
            let v = self.table.get(&text).cloned().unwrap_or(vec![0.0, 0.0]);
            let mut out = ForwardOutput {
                logits: vec![0.0; self.vocab_size()],
                ..Default::default()
            };
            for &(l, p) in captures {
                out.captured.insert((l, p.resolve(tokens.len())), v.clone());
            }
            Ok(out)
        }
    }

    fn pair(id: &str) -> ContrastPair {
        ContrastPair {
            scenario_id: id.into(),
            text_pos: format!("{id} pos"),
            text_neg: format!("{id} neg"),
        }
    }

    #[test]
    fn pairs_per_axis() {
        let ds = canonical_dataset();
        let pairs = build_pairs(&ds, Axis::X);
        assert_eq!(pairs.len(), 300);
        for (p, s) in pairs.iter().zip(ds.iter().filter(|s| s.axis == Axis::X)) {
            assert!(p.text_pos.starts_with(&s.scenario_text));
            assert!(p.text_neg.starts_with(&s.scenario_text));
            assert_ne!(p.text_pos, p.text_neg);
        }
        let only_y: Vec<_> = ds.iter().filter(|s| s.axis == Axis::Y).cloned().collect();
        assert!(build_pairs(&only_y, Axis::X).is_empty());
    }

    #[test]
    fn single_pair_identity_and_cancellation() {
        let mut table = BTreeMap::new();
        table.insert("a pos".to_string(), vec![1.0, 2.0]);
        let m = Rigged { table };
        let v = extract_vectors(&m, &[pair("a")], Axis::X).unwrap();
        assert_eq!(v.vectors[&0], vec![1.0, 2.0]);
        assert_eq!(v.n, 1);

        let mut table = BTreeMap::new();
        table.insert("a pos".to_string(), vec![1.0, -3.0]);
        table.insert("b neg".to_string(), vec![1.0, -3.0]);
        let m = Rigged { table };
        let v = extract_vectors(&m, &[pair("a"), pair("b")], Axis::Y).unwrap();
        assert_eq!(v.vectors[&0], vec![0.0, 0.0]);
        assert!(matches!(extract_vectors(&m, &[], Axis::X), Err(Error::EmptyPairs)));
    }

    #[test]
    fn vector_file_round_trip() {
        let mut v = SteeringVectorSet::zeros(Axis::Y, 3, 4);
        v.n = 17;
        v.vectors.get_mut(&1).unwrap()[2] = -0.75;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        v.save(&path).unwrap();
        assert_eq!(SteeringVectorSet::load(&path).unwrap(), v);
    }

    #[test]
    fn search_preconditions_and_zero_vectors() {
        let m = Rigged {
            table: BTreeMap::new(),
        };
        let ds: Vec<_> = canonical_dataset()
            .into_iter()
            .filter(|s| s.domain == Domain::Legal)
            .take(10)
            .collect();
        let probe = assign_labels(&ds, 42);
        let zeros = SteeringVectorSet::zeros(Axis::X, 1, 2);
        assert!(matches!(
            layer_search(&m, &zeros, &probe, 0.0, 4, 0.25),
            Err(Error::ZeroAlpha)
        ));
        assert!(matches!(
            layer_search(&m, &zeros, &[], 0.2, 4, 0.25),
            Err(Error::EmptyProbeSet)
        ));
        let r = layer_search(&m, &zeros, &probe, 0.2, 4, 0.25).unwrap();
        assert_eq!(r.selected, vec![0]);
        assert!(r.cells.iter().all(|c| c.differential == 0.0));
    }

    #[test]
    fn steered_probe_checks() {
        let m = Rigged {
            table: BTreeMap::new(),
        };
        let probe = assign_labels(&canonical_dataset()[..3], 42);
        let v = SteeringVectorSet::zeros(Axis::X, 1, 2);
        assert!(matches!(
            steered_probe(&m, &v, &[0], 0.5, 0.4, false, &probe, None),
            Err(Error::AlphaOverCap { .. })
        ));
        assert_eq!(steered_probe(&m, &v, &[0], 0.5, 0.4, true, &probe, None).unwrap().len(), 3);
        assert!(matches!(
            steered_probe(&m, &v, &[3], 0.2, 0.4, false, &probe, None),
            Err(Error::MissingLayerVector(3))
        ));
        assert!(matches!(
            steered_probe(&m, &v, &[], 0.2, 0.4, false, &probe, None),
            Err(Error::EmptyLayers)
        ));
    }
}
