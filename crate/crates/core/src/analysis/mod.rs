//! Placement on the Inglehart-Welzel plane and the metrics derived from it.
//!
//! A coordinate per axis is `offset + scale * (2 * raw - 1)`, where `raw` is the
//! (optionally weighted) mean of `mean_p` over that axis's questions.

pub mod plot;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Axis, Domain, LabeledScenario, Qid, Scenario};
use crate::error::{Error, Result};
use crate::hash::hash64;
use crate::model::{LanguageModel, PerplexityScoring, Session};
use crate::probing::{aggregate, probe_all, GroupBy, QuestionScore};
use crate::steering::SteeringVectorSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisCalibration {
    pub offset: f64,
    pub scale: f64,
}

impl Default for AxisCalibration {
    fn default() -> Self {
        Self {
            offset: 0.0,
            scale: 2.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub x: AxisCalibration,
    pub y: AxisCalibration,
    /// Per-question loadings; absent questions weigh 1.
    pub weights: BTreeMap<Qid, f64>,
}

impl ProjectionConfig {
    fn axis(&self, axis: Axis) -> AxisCalibration {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CulturalCoordinate {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub per_question: BTreeMap<Qid, f64>,
    pub n_x: usize,
    pub n_y: usize,
}

impl CulturalCoordinate {
    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

/// Scores grouped by domain are first pooled per question, weighted by `n`.
fn per_question(scores: &[QuestionScore]) -> BTreeMap<Qid, f64> {
    let mut acc: BTreeMap<Qid, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let e = acc.entry(s.qid).or_default();
        e.0 += s.mean_p * s.n as f64;
        e.1 += s.n;
    }
    acc.into_iter()
        .map(|(q, (sum, n))| (q, if n == 0 { 0.0 } else { sum / n as f64 }))
        .collect()
}

/// Weighted mean of `mean_p` per axis, before calibration.
pub fn axis_raw(
    per_question: &BTreeMap<Qid, f64>,
    weights: &BTreeMap<Qid, f64>,
    axis: Axis,
) -> Result<(f64, usize)> {
    let (mut num, mut den, mut n) = (0.0, 0.0, 0);
    for (q, &p) in per_question.iter().filter(|(q, _)| q.axis() == axis) {
        let w = weights.get(q).copied().unwrap_or(1.0);
        num += w * p;
        den += w;
        n += 1;
    }
    if n == 0 || den == 0.0 {
        return Err(Error::AxisWithoutQuestions(axis.to_string()));
    }
    Ok((num / den, n))
}

pub fn project(
    scores: &[QuestionScore],
    config: &ProjectionConfig,
    label: &str,
) -> Result<CulturalCoordinate> {
    let pq = per_question(scores);
    let coord = |axis: Axis| -> Result<(f64, usize)> {
        let (raw, n) = axis_raw(&pq, &config.weights, axis)?;
        let c = config.axis(axis);
        Ok((c.offset + c.scale * (2.0 * raw - 1.0), n))
    };
    let (x, n_x) = coord(Axis::X)?;
    let (y, n_y) = coord(Axis::Y)?;
    Ok(CulturalCoordinate {
        label: label.to_string(),
        x,
        y,
        per_question: pq,
        n_x,
        n_y,
    })
}

/// Least-squares `(offset, scale)` per axis so that projected raw scores
/// match anchor coordinates. Each sample is `(raw_x, raw_y, anchor_x, anchor_y)`.
pub fn fit_calibration(samples: &[(f64, f64, f64, f64)]) -> Result<(AxisCalibration, AxisCalibration)> {
    if samples.len() < 2 {
        return Err(Error::DegenerateVariance(
            "calibration needs at least two anchor countries".into(),
        ));
    }
    let fit = |pts: Vec<(f64, f64)>, axis: &str| -> Result<AxisCalibration> {
        let n = pts.len() as f64;
        let mu = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mt = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mu).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mu) * (p.1 - mt)).sum();
        if sxx == 0.0 {
            return Err(Error::DegenerateVariance(format!(
                "model scores on axis {axis} are identical across anchors"
            )));
        }
        let scale = sxy / sxx;
        Ok(AxisCalibration {
            offset: mt - scale * mu,
            scale,
        })
    };
    let xs = samples.iter().map(|s| (2.0 * s.0 - 1.0, s.2)).collect();
    let ys = samples.iter().map(|s| (2.0 * s.1 - 1.0, s.3)).collect();
    Ok((fit(xs, "X")?, fit(ys, "Y")?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementRecord {
    pub target_axis: Axis,
    pub delta_intended: f64,
    pub delta_unintended: f64,
    pub e: f64,
}

pub fn entanglement(
    baseline: &CulturalCoordinate,
    steered: &CulturalCoordinate,
    target_axis: Axis,
) -> Result<EntanglementRecord> {
    let di = steered.get(target_axis) - baseline.get(target_axis);
    let du = steered.get(target_axis.other()) - baseline.get(target_axis.other());
    if di == 0.0 {
        return Err(Error::ZeroIntendedShift);
    }
    Ok(EntanglementRecord {
        target_axis,
        delta_intended: di,
        delta_unintended: du,
        e: du.abs() / di.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Human reference coordinates per country.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HumanAnchors {
    pub coords: BTreeMap<String, Point>,
}

impl HumanAnchors {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let a: HumanAnchors = read_json(path)?;
        if let Some((c, _)) = a.coords.iter().find(|(_, p)| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidConfig(format!("anchor for {c} is not finite")));
        }
        Ok(a)
    }
}

pub fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn distance(coord: &CulturalCoordinate, anchors: &HumanAnchors, country: &str) -> Result<f64> {
    let p = anchors
        .coords
        .get(country)
        .ok_or_else(|| Error::UnknownCountry(country.to_string()))?;
    Ok(euclid((coord.x, coord.y), (p.x, p.y)))
}

/// Pearson correlation of the anchor x and y coordinates.
pub fn axis_correlation(anchors: &HumanAnchors) -> Result<f64> {
    let pts: Vec<(f64, f64)> = anchors.coords.values().map(|p| (p.x, p.y)).collect();
    pearson(&pts)
}

pub fn pearson(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::DegenerateVariance("need at least two points".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance("an axis is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCell {
    pub source: Domain,
    pub target: Domain,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShiftMatrix {
    pub axis_steered: Axis,
    pub alpha: f64,
    pub cells: Vec<DomainCell>,
}

/// Projects one probe run, pooling results per question.
pub fn coordinate_of<M: LanguageModel + ?Sized>(
    model: &M,
    probe_set: &[LabeledScenario],
    spec: &crate::model::InterventionSpec,
    projection: &ProjectionConfig,
    label: &str,
) -> Result<CulturalCoordinate> {
    let results = probe_all(model, probe_set, None, spec)?;
    let dataset: Vec<Scenario> = probe_set.iter().map(|l| l.scenario.clone()).collect();
    project(&aggregate(&results, &dataset, GroupBy::Qid)?, projection, label)
}

/// Cell `(s, t)` is the coordinate shift on target domain `t` when steering
/// with vectors extracted from source domain `s`.
pub fn domain_matrix<M: LanguageModel + ?Sized>(
    model: &M,
    runs: &BTreeMap<Domain, SteeringVectorSet>,
    probe_sets: &BTreeMap<Domain, Vec<LabeledScenario>>,
    layers: &[usize],
    alpha: f32,
    axis: Axis,
    projection: &ProjectionConfig,
) -> Result<DomainShiftMatrix> {
    for d in Domain::ALL {
        if !runs.contains_key(&d) || !probe_sets.contains_key(&d) {
            return Err(Error::MissingDomain(d.to_string()));
        }
    }
    let none = crate::model::InterventionSpec::none();
    let mut cells = Vec::with_capacity(9);
    for t in Domain::ALL {
        let base = coordinate_of(model, &probe_sets[&t], &none, projection, "baseline")?;
        for s in Domain::ALL {
            let spec = runs[&s].interventions(layers, alpha)?;
            let steered = coordinate_of(model, &probe_sets[&t], &spec, projection, "steered")?;
            cells.push(DomainCell {
                source: s,
                target: t,
                dx: steered.x - base.x,
                dy: steered.y - base.y,
            });
        }
    }
    cells.sort_by_key(|c| (c.source, c.target));
    Ok(DomainShiftMatrix {
        axis_steered: axis,
        alpha: f64::from(alpha),
        cells,
    })
}

impl DomainShiftMatrix {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target", "dx", "dy"])?;
        for c in &self.cells {
            w.write_record([
                c.source.to_string(),
                c.target.to_string(),
                c.dx.to_string(),
                c.dy.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplPoint {
    pub alpha: f64,
    pub mean_ppl: f64,
    /// Prompts that produced at least one token before EOS.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexitySettings {
    pub window: usize,
    pub temperature: f64,
    pub seed: u64,
    pub scoring: PerplexityScoring,
}

/// Mean perplexity over `prompts` for each alpha. Each prompt gets its own
/// sampling seed derived from the global seed and its text, shared across
/// alphas. Prompts whose continuation is empty are skipped.
pub fn perplexity_curve<M: LanguageModel + ?Sized>(
    model: &M,
    vectors: &SteeringVectorSet,
    layers: &[usize],
    alphas: &[f64],
    prompts: &[String],
    settings: &PerplexitySettings,
) -> Result<Vec<PplPoint>> {
    if prompts.is_empty() {
        return Err(Error::EmptyPrompts);
    }
    if !alphas.contains(&0.0) {
        return Err(Error::MissingZeroAlpha);
    }
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let spec = vectors.interventions(layers, alpha as f32)?;
        let values: Vec<Option<f64>> = prompts
            .par_iter()
            .map(|p| {
                let session = Session::with_interventions(model, spec.clone())?;
                let tokens = model.prompt_tokens(p)?;
                let seed = hash64(settings.seed, p.as_bytes());
                match session.perplexity(
                    &tokens,
                    settings.window,
                    settings.temperature,
                    seed,
                    settings.scoring,
                ) {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::EmptyContinuation) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        let kept: Vec<f64> = values.into_iter().flatten().collect();
        if kept.is_empty() {
            return Err(Error::EmptyContinuation);
        }
        out.push(PplPoint {
            alpha,
            mean_ppl: kept.iter().sum::<f64>() / kept.len() as f64,
            n: kept.len(),
        });
    }
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}
