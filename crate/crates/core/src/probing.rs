//! Forced-choice probing: render a scenario, read the `A`/`B` logits, and turn
//! them into the probability of the positive-pole option.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Domain, LabelKey, LabeledScenario, Qid, Scenario};
use crate::error::{Error, Result};
use crate::model::{InterventionSpec, LanguageModel, Session};
use crate::persona::{PersonaKind, PersonaProfile};

pub const QUESTION: &str = "What will you do (A/B)?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub scenario_id: String,
    pub key: LabelKey,
    #[serde(rename = "logit_A")]
    pub logit_a: f64,
    #[serde(rename = "logit_B")]
    pub logit_b: f64,
    pub p_high: f64,
    pub persona_kind: PersonaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub qid: Qid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    pub mean_p: f64,
    pub n: usize,
    /// Filled in by [`rescale`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescaled: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WvsRange {
    pub min: f64,
    pub max: f64,
    pub high_pole_at_max: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WvsRangeConfig {
    pub ranges: BTreeMap<Qid, WvsRange>,
}

impl Default for WvsRangeConfig {
    fn default() -> Self {
        let r = |min, max, high_pole_at_max| WvsRange {
            min,
            max,
            high_pole_at_max,
        };
        let table = [
            ("Y01", r(1.0, 10.0, false)),
            ("Y02", r(0.0, 1.0, true)),
            ("Y03", r(1.0, 10.0, true)),
            ("Y04", r(1.0, 4.0, true)),
            ("Y05", r(1.0, 4.0, true)),
            ("X01", r(0.0, 1.0, true)),
            ("X02", r(1.0, 4.0, false)),
            ("X03", r(1.0, 10.0, true)),
            ("X04", r(0.0, 1.0, true)),
            ("X05", r(0.0, 1.0, true)),
        ];
        Self {
            ranges: table
                .into_iter()
                .map(|(q, r)| (q.parse().expect("static qid"), r))
                .collect(),
        }
    }
}

impl WvsRangeConfig {
    pub fn check(&self) -> Result<()> {
        for (qid, r) in &self.ranges {
            if !(r.min < r.max) {
                return Err(Error::InvalidConfig(format!(
                    "range for {qid} needs min < max, got ({}, {})",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupBy {
    #[default]
    Qid,
    QidDomain,
}

/// Persona preamble, blank line, then the scenario with options in letter order.
pub fn render_prompt(labeled: &LabeledScenario, persona: Option<&PersonaProfile>) -> String {
    let (a, b) = labeled.options();
    let body = format!(
        "{}\nOption A: {a}\nOption B: {b}\n{QUESTION}",
        labeled.scenario.scenario_text
    );
    match persona {
        Some(p) if p.kind != PersonaKind::None => format!("{}\n\n{body}", p.text),
        _ => body,
    }
}

/// Softmax probability of the letter carrying the positive pole.
pub fn compute_p(logit_a: f64, logit_b: f64, key: LabelKey) -> Result<f64> {
    if !logit_a.is_finite() || !logit_b.is_finite() {
        return Err(Error::NonFiniteLogit);
    }
    let (pos, neg) = match key {
        LabelKey::HighIsA => (logit_a, logit_b),
        LabelKey::HighIsB => (logit_b, logit_a),
    };
    let m = pos.max(neg);
    let (ep, en) = ((pos - m).exp(), (neg - m).exp());
    Ok(ep / (ep + en))
}

pub fn probe<M: LanguageModel + ?Sized>(
    session: &mut Session<'_, M>,
    labeled: &LabeledScenario,
    persona: Option<&PersonaProfile>,
) -> Result<ProbeResult> {
    let model = session.model();
    let (ta, tb) = (model.letter_token("A")?, model.letter_token("B")?);
    let tokens = model.prompt_tokens(&render_prompt(labeled, persona))?;
    let logits = session.forward_last_logits(&tokens)?;
    let read = |t: u32| {
        logits
            .get(t as usize)
            .map(|&z| f64::from(z))
            .ok_or(Error::TokenOutOfRange {
                token: t,
                vocab: logits.len(),
            })
    };
    let (za, zb) = (read(ta)?, read(tb)?);
    Ok(ProbeResult {
        scenario_id: labeled.scenario.id.clone(),
        key: labeled.key,
        logit_a: za,
        logit_b: zb,
        p_high: compute_p(za, zb, labeled.key)?,
        persona_kind: persona.map_or(PersonaKind::None, |p| p.kind),
        country: persona.map(|p| p.country.clone()),
    })
}

/// Probe every scenario in parallel, one session each. Output order follows
/// the input order regardless of scheduling.
pub fn probe_all<M: LanguageModel + ?Sized>(
    model: &M,
    probe_set: &[LabeledScenario],
    persona: Option<&PersonaProfile>,
    interventions: &InterventionSpec,
) -> Result<Vec<ProbeResult>> {
    interventions.validate(model.n_layers(), model.d_model())?;
    probe_set
        .par_iter()
        .map(|ls| {
            let mut session = Session::with_interventions(model, interventions.clone())?;
            probe(&mut session, ls, persona).map_err(|e| e.in_scenario(&ls.scenario.id))
        })
        .collect()
}

/// Mean `p_high` per group. Results are summed in scenario-id order so the
/// output does not depend on input order.
pub fn aggregate(
    results: &[ProbeResult],
    dataset: &[Scenario],
    group_by: GroupBy,
) -> Result<Vec<QuestionScore>> {
    let index: BTreeMap<&str, &Scenario> = dataset.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut sorted: Vec<&ProbeResult> = results.iter().collect();
    sorted.sort_by(|a, b| {
        a.scenario_id
            .cmp(&b.scenario_id)
            .then((a.key as u8).cmp(&(b.key as u8)))
            .then(a.p_high.total_cmp(&b.p_high))
    });
    let mut groups: BTreeMap<(Qid, Option<Domain>), (f64, usize)> = BTreeMap::new();
    for r in sorted {
        let s = index
            .get(r.scenario_id.as_str())
            .ok_or_else(|| Error::DanglingScenario(r.scenario_id.clone()))?;
        let domain = match group_by {
            GroupBy::Qid => None,
            GroupBy::QidDomain => Some(s.domain),
        };
        let g = groups.entry((s.qid, domain)).or_default();
        g.0 += r.p_high;
        g.1 += 1;
    }
    Ok(groups
        .into_iter()
        .map(|((qid, domain), (sum, n))| QuestionScore {
            qid,
            domain,
            mean_p: sum / n as f64,
            n,
            rescaled: None,
        })
        .collect())
}

pub fn rescale(score: &QuestionScore, config: &WvsRangeConfig) -> Result<QuestionScore> {
    let r = config
        .ranges
        .get(&score.qid)
        .ok_or_else(|| Error::MissingRange(score.qid.to_string()))?;
    let t = if r.high_pole_at_max {
        score.mean_p
    } else {
        1.0 - score.mean_p
    };
    Ok(QuestionScore {
        rescaled: Some(r.min + t * (r.max - r.min)),
        ..score.clone()
    })
}

pub fn write_results(path: impl AsRef<Path>, results: &[ProbeResult]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in results {
        let line = serde_json::to_string(r).map_err(|e| Error::json("probe result", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ProbeResult>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}

/// Scores as CSV with a header row.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: &[QuestionScore]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["qid", "domain", "mean_p", "n", "rescaled"])?;
    for s in scores {
        w.write_record([
            s.qid.to_string(),
            s.domain.map(|d| d.to_string()).unwrap_or_default(),
            s.mean_p.to_string(),
            s.n.to_string(),
            s.rescaled.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::assign_label;
    use crate::persona::build_basic;
    use proptest::prelude::*;

    fn scenario(id: &str, wvs: &str, domain: Domain) -> Scenario {
        Scenario::new(id, wvs, domain, "A dilemma.", "Low path", "High path").unwrap()
    }

    fn labeled(key: LabelKey) -> LabeledScenario {
        LabeledScenario {
            scenario: scenario("s", "A165", Domain::Family),
            key,
            seed_trace: 0,
        }
    }

    #[test]
    fn prompt_template() {
        let p = render_prompt(&labeled(LabelKey::HighIsA), None);
        assert_eq!(
            p,
            "A dilemma.\nOption A: High path\nOption B: Low path\nWhat will you do (A/B)?"
        );
        let p = render_prompt(&labeled(LabelKey::HighIsB), None);
        assert!(p.contains("Option A: Low path\nOption B: High path"));
        let persona = build_basic("Denmark").unwrap();
        let p = render_prompt(&labeled(LabelKey::HighIsA), Some(&persona));
        assert!(p.starts_with("You are a person born in Denmark and live in Denmark\n\nA dilemma."));
    }

    #[test]
    fn compute_p_examples() {
        assert_eq!(compute_p(1.0, 1.0, LabelKey::HighIsA).unwrap(), 0.5);
        assert!((compute_p(3f64.ln(), 0.0, LabelKey::HighIsA).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(compute_p(1000.0, -1000.0, LabelKey::HighIsA).unwrap(), 1.0);
        assert_eq!(compute_p(1000.0, -1000.0, LabelKey::HighIsB).unwrap(), 0.0);
        assert!(matches!(
            compute_p(f64::NAN, 0.0, LabelKey::HighIsA),
            Err(Error::NonFiniteLogit)
        ));
    }

    #[test]
    fn aggregate_examples() {
        let ds = vec![
            scenario("a", "A165", Domain::Family),
            scenario("b", "A165", Domain::Legal),
            scenario("c", "A165", Domain::Legal),
            scenario("d", "F063", Domain::Legal),
        ];
        let r = |id: &str, p: f64| ProbeResult {
            scenario_id: id.into(),
            key: LabelKey::HighIsA,
            logit_a: 0.0,
            logit_b: 0.0,
            p_high: p,
            persona_kind: PersonaKind::None,
            country: None,
        };
        let one = aggregate(&[r("d", 0.7)], &ds, GroupBy::Qid).unwrap();
        assert_eq!((one[0].mean_p, one[0].n), (0.7, 1));
        let three = aggregate(&[r("a", 0.2), r("b", 0.4), r("c", 0.9)], &ds, GroupBy::Qid).unwrap();
        assert_eq!(three.len(), 1);
        assert!((three[0].mean_p - 0.5).abs() < 1e-15);
        let by_domain =
            aggregate(&[r("a", 0.2), r("b", 0.4), r("c", 0.9)], &ds, GroupBy::QidDomain).unwrap();
        assert_eq!(by_domain.len(), 2);
        assert!((by_domain[1].mean_p - 0.65).abs() < 1e-15);
        assert!(matches!(
            aggregate(&[r("zz", 0.1)], &ds, GroupBy::Qid),
            Err(Error::DanglingScenario(_))
        ));
    }

    #[test]
    fn rescale_examples() {
        let cfg = WvsRangeConfig::default();
        let s = |qid: &str, p| QuestionScore {
            qid: qid.parse().unwrap(),
            domain: None,
            mean_p: p,
            n: 1,
            rescaled: None,
        };
        assert_eq!(rescale(&s("Y03", 0.0), &cfg).unwrap().rescaled, Some(1.0));
        assert_eq!(rescale(&s("Y03", 1.0), &cfg).unwrap().rescaled, Some(10.0));
        assert_eq!(rescale(&s("X02", 0.5), &cfg).unwrap().rescaled, Some(2.5));
        let empty = WvsRangeConfig {
            ranges: BTreeMap::new(),
        };
        assert!(matches!(rescale(&s("Y03", 0.5), &empty), Err(Error::MissingRange(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let rs = vec![ProbeResult {
            scenario_id: "x".into(),
            key: LabelKey::HighIsB,
            logit_a: 0.25,
            logit_b: -1.5,
            p_high: compute_p(0.25, -1.5, LabelKey::HighIsB).unwrap(),
            persona_kind: PersonaKind::Basic,
            country: Some("India".into()),
        }];
        write_results(&path, &rs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"logit_A\":0.25"));
        assert_eq!(read_results(&path).unwrap(), rs);
    }

    proptest! {
        #[test]
        fn keys_are_complementary(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let s = compute_p(a, b, LabelKey::HighIsA).unwrap() + compute_p(a, b, LabelKey::HighIsB).unwrap();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn translation_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -100.0f64..100.0) {
            let p = compute_p(a, b, LabelKey::HighIsA).unwrap();
            let q = compute_p(a + c, b + c, LabelKey::HighIsA).unwrap();
            prop_assert!((p - q).abs() <= 1e-12);
        }

        #[test]
        fn aggregate_ignores_order(ps in proptest::collection::vec(0.0f64..1.0, 1..20), rot in 0usize..20) {
            let ds: Vec<Scenario> = (0..ps.len())
                .map(|i| scenario(&format!("s{i}"), if i % 2 == 0 { "A165" } else { "F063" }, Domain::Legal))
                .collect();
            let mut rs: Vec<ProbeResult> = ps.iter().enumerate().map(|(i, &p)| ProbeResult {
                scenario_id: format!("s{i}"),
                key: assign_label(&ds[i], 42).key,
                logit_a: 0.0,
                logit_b: 0.0,
                p_high: p,
                persona_kind: PersonaKind::None,
                country: None,
            }).collect();
            let a = aggregate(&rs, &ds, GroupBy::QidDomain).unwrap();
            let k = rot % rs.len();
            rs.rotate_left(k);
            rs.reverse();
            prop_assert_eq!(a, aggregate(&rs, &ds, GroupBy::QidDomain).unwrap());
        }
    }
}
