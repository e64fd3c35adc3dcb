//! Behavioral scenario dataset: loading, validation, splitting, labeling.
//!
//! Files use the teacher-model output shape (a JSON list of objects with
//! `wvs_id`, `dimension`, `domain`, `scenario_text`, `options` and `mapping`)
//! plus an optional `id`. When `id` is absent it defaults to the hex
//! [`hash64`] of `wvs_id`, `domain` and `scenario_text` joined by `0x1F`.

mod prompt;
pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hash::{hash64, SplitMix64};

pub use prompt::{emit_generation_prompt, GenerationConfig};

// ---------------------------------------------------------------------------
// Axes, domains and question codes
// ---------------------------------------------------------------------------

/// Inglehart-Welzel axis. `X` is Survival vs Self-Expression, `Y` is
/// Traditional vs Secular-Rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const ALL: [Axis; 2] = [Axis::X, Axis::Y];

    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }

    /// Name used in the teacher-model `dimension` and `mapping` fields.
    pub fn dimension_key(self) -> &'static str {
        match self {
            Axis::Y => "Dimension 1",
            Axis::X => "Dimension 2",
        }
    }

    pub fn dimension_title(self) -> &'static str {
        match self {
            Axis::Y => "Traditional vs. Secular-Rational",
            Axis::X => "Survival vs. Self-Expression",
        }
    }

    fn parse_dimension(s: &str) -> Option<Axis> {
        let t = s.trim().to_ascii_lowercase();
        if t == "y" || t == "dimension 1" || t.contains("secular") || t.contains("traditional") {
            Some(Axis::Y)
        } else if t == "x"
            || t == "dimension 2"
            || t.contains("survival")
            || t.contains("self-expression")
        {
            Some(Axis::X)
        } else {
            None
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "X",
            Axis::Y => "Y",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            other => Err(Error::InvalidAxis(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Family,
    Workplace,
    Legal,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Family, Domain::Workplace, Domain::Legal];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Family => "family",
            Domain::Workplace => "workplace",
            Domain::Legal => "legal",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "family" => Ok(Domain::Family),
            "workplace" => Ok(Domain::Workplace),
            "legal" => Ok(Domain::Legal),
            other => Err(Error::MissingDomain(other.to_string())),
        }
    }
}

/// Internal question code: axis letter plus index 1..=5 (`X01`..`Y05`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Qid {
    axis: Axis,
    index: u8,
}

impl Qid {
    pub fn new(axis: Axis, index: u8) -> Option<Qid> {
        (1..=5).contains(&index).then_some(Qid { axis, index })
    }

    pub fn axis(self) -> Axis {
        self.axis
    }

    pub fn index(self) -> u8 {
        self.index
    }

    /// All ten codes, X01..X05 then Y01..Y05.
    pub fn all() -> impl Iterator<Item = Qid> {
        Axis::ALL
            .into_iter()
            .flat_map(|axis| (1..=5).map(move |index| Qid { axis, index }))
    }

    pub fn wvs_id(self) -> &'static str {
        WVS_ITEMS
            .iter()
            .find(|item| item.qid == (self.axis, self.index))
            .map(|item| item.wvs_id)
            .expect("every qid has a WVS item")
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.axis, self.index)
    }
}

impl FromStr for Qid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidQid(s.to_string());
        let s = s.trim();
        if s.len() != 3 {
            return Err(bad());
        }
        let axis: Axis = s[..1].parse().map_err(|_| bad())?;
        let index: u8 = s[1..].parse().map_err(|_| bad())?;
        Qid::new(axis, index).ok_or_else(bad)
    }
}

impl Serialize for Qid {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Qid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One WVS item of the cultural map.
#[derive(Debug, Clone, Copy)]
pub struct WvsItem {
    pub wvs_id: &'static str,
    pub qid: (Axis, u8),
    pub label: &'static str,
    pub low: &'static str,
    pub high: &'static str,
}

/// The ten items, in the order the generation prompt lists them.
pub const WVS_ITEMS: [WvsItem; 10] = [
    WvsItem { wvs_id: "F063", qid: (Axis::Y, 1), label: "Importance of God", low: "God is very important", high: "God is not very important" },
    WvsItem { wvs_id: "Y003", qid: (Axis::Y, 2), label: "Autonomy Index", low: "Child learns obedience/faith", high: "Child learns independence" },
    WvsItem { wvs_id: "F120", qid: (Axis::Y, 3), label: "Abortion", low: "Never justifiable", high: "Justifiable" },
    WvsItem { wvs_id: "G006", qid: (Axis::Y, 4), label: "National Pride", low: "Strong sense", high: "Weak sense" },
    WvsItem { wvs_id: "E018", qid: (Axis::Y, 5), label: "Authority", low: "Favors more respect", high: "Favors less respect" },
    WvsItem { wvs_id: "Y002", qid: (Axis::X, 1), label: "Security/Expression", low: "Economic/physical security", high: "Self-expression" },
    WvsItem { wvs_id: "A008", qid: (Axis::X, 2), label: "Happiness", low: "Not very happy", high: "Very happy" },
    WvsItem { wvs_id: "F118", qid: (Axis::X, 3), label: "Homosexuality", low: "Never justifiable", high: "Justifiable" },
    WvsItem { wvs_id: "E025", qid: (Axis::X, 4), label: "Political Action", low: "Would not sign a petition", high: "Has or would sign" },
    WvsItem { wvs_id: "A165", qid: (Axis::X, 5), label: "Trust", low: "Be very careful", high: "Most people can be trusted" },
];

pub fn wvs_item(wvs_id: &str) -> Option<&'static WvsItem> {
    WVS_ITEMS.iter().find(|item| item.wvs_id == wvs_id)
}

/// Fixed WVS id to question code correspondence.
pub fn qid_for_wvs(wvs_id: &str) -> Result<Qid> {
    wvs_item(wvs_id)
        .map(|item| Qid {
            axis: item.qid.0,
            index: item.qid.1,
        })
        .ok_or_else(|| Error::UnknownWvsId(wvs_id.to_string()))
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub id: String,
    pub wvs_id: String,
    pub qid: Qid,
    pub axis: Axis,
    pub domain: Domain,
    pub scenario_text: String,
    /// Negative pole (Traditional or Survival).
    pub option_low: String,
    /// Positive pole (Secular-Rational or Self-Expression).
    pub option_high: String,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        wvs_id: &str,
        domain: Domain,
        scenario_text: impl Into<String>,
        option_low: impl Into<String>,
        option_high: impl Into<String>,
    ) -> Result<Scenario> {
        let qid = qid_for_wvs(wvs_id)?;
        let s = Scenario {
            id: id.into(),
            wvs_id: wvs_id.to_string(),
            qid,
            axis: qid.axis(),
            domain,
            scenario_text: scenario_text.into(),
            option_low: option_low.into(),
            option_high: option_high.into(),
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidScenario {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.option_low.trim().is_empty() || self.option_high.trim().is_empty() {
            return fail("empty option text");
        }
        if self.option_low == self.option_high {
            return fail("options are identical");
        }
        if self.axis != self.qid.axis() {
            return fail("axis inconsistent with qid");
        }
        Ok(())
    }

    pub fn default_id(wvs_id: &str, domain: &str, scenario_text: &str) -> String {
        let mut buf = Vec::with_capacity(wvs_id.len() + domain.len() + scenario_text.len() + 2);
        buf.extend_from_slice(wvs_id.as_bytes());
        buf.push(0x1F);
        buf.extend_from_slice(domain.as_bytes());
        buf.push(0x1F);
        buf.extend_from_slice(scenario_text.as_bytes());
        format!("{:016x}", hash64(0, &buf))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawOptions {
    #[serde(rename = "A")]
    a: String,
    #[serde(rename = "B")]
    b: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawScenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    wvs_id: String,
    dimension: String,
    domain: String,
    scenario_text: String,
    options: RawOptions,
    mapping: BTreeMap<String, String>,
    #[serde(flatten, skip_serializing)]
    extra: BTreeMap<String, serde_json::Value>,
}

impl RawScenario {
    fn into_scenario(self) -> Result<Scenario> {
        let id = self
            .id
            .clone()
            .unwrap_or_else(|| Scenario::default_id(&self.wvs_id, &self.domain, &self.scenario_text));
        if !self.extra.is_empty() {
            let keys: Vec<&str> = self.extra.keys().map(String::as_str).collect();
            log::warn!("scenario {id}: ignoring unknown keys {keys:?}");
        }
        let qid = qid_for_wvs(&self.wvs_id)?;
        let invalid = |reason: String| Error::InvalidScenario {
            id: id.clone(),
            reason,
        };
        let axis = Axis::parse_dimension(&self.dimension)
            .ok_or_else(|| invalid(format!("unrecognized dimension `{}`", self.dimension)))?;
        if axis != qid.axis() {
            return Err(invalid(format!(
                "dimension `{}` disagrees with {} ({})",
                self.dimension,
                self.wvs_id,
                qid
            )));
        }
        let domain: Domain = self
            .domain
            .parse()
            .map_err(|_| invalid(format!("unknown domain `{}`", self.domain)))?;
        let letter = self.mapping.get(axis.dimension_key()).ok_or_else(|| Error::InvalidMapping {
            id: id.clone(),
            reason: format!("mapping has no `{}` entry", axis.dimension_key()),
        })?;
        let (option_high, option_low) = match letter.trim() {
            "A" => (self.options.a, self.options.b),
            "B" => (self.options.b, self.options.a),
            other => {
                return Err(Error::InvalidMapping {
                    id,
                    reason: format!("mapping names nonexistent option `{other}`"),
                })
            }
        };
        let s = Scenario {
            id,
            wvs_id: self.wvs_id,
            qid,
            axis,
            domain,
            scenario_text: self.scenario_text,
            option_low,
            option_high,
        };
        s.check()?;
        Ok(s)
    }

    fn from_scenario(s: &Scenario) -> RawScenario {
        let mut mapping = BTreeMap::new();
        mapping.insert(s.axis.dimension_key().to_string(), "B".to_string());
        RawScenario {
            id: Some(s.id.clone()),
            wvs_id: s.wvs_id.clone(),
            dimension: s.axis.dimension_title().to_string(),
            domain: s.domain.to_string(),
            scenario_text: s.scenario_text.clone(),
            options: RawOptions {
                a: s.option_low.clone(),
                b: s.option_high.clone(),
            },
            mapping,
            extra: BTreeMap::new(),
        }
    }
}

/// Parse a dataset from JSON text.
pub fn parse_dataset(json: &str) -> Result<Vec<Scenario>> {
    let raw: Vec<RawScenario> =
        serde_json::from_str(json).map_err(|e| Error::json("scenario dataset", e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(raw.len());
    for r in raw {
        let s = r.into_scenario()?;
        if !seen.insert(s.id.clone()) {
            return Err(Error::DuplicateId(s.id));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Serialize scenarios back into the file shape. Option A always carries the
/// low pole; the mapping names only the scenario's own dimension.
pub fn serialize_dataset(scenarios: &[Scenario]) -> String {
    let raw: Vec<RawScenario> = scenarios.iter().map(RawScenario::from_scenario).collect();
    serde_json::to_string_pretty(&raw).expect("scenario serialization cannot fail")
}

pub fn save_dataset(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_dataset(scenarios) + "\n").map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

pub const CANONICAL_TOTAL: usize = 600;
pub const CANONICAL_PER_DOMAIN: usize = 200;
pub const CANONICAL_PER_QID: usize = 60;
pub const CANONICAL_PER_CELL: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub per_domain: BTreeMap<Domain, usize>,
    pub per_qid: BTreeMap<Qid, usize>,
    /// Keyed `"{qid}/{domain}"`.
    pub per_cell: BTreeMap<String, usize>,
    pub passed: bool,
    pub failures: Vec<String>,
}

fn cell_key(qid: Qid, domain: Domain) -> String {
    format!("{qid}/{domain}")
}

/// Count the dataset against the canonical 600 / 200 / 60 / 20 layout.
pub fn validate(dataset: &[Scenario]) -> ValidationReport {
    let mut per_domain: BTreeMap<Domain, usize> = Domain::ALL.iter().map(|&d| (d, 0)).collect();
    let mut per_qid: BTreeMap<Qid, usize> = Qid::all().map(|q| (q, 0)).collect();
    let mut per_cell: BTreeMap<String, usize> = Qid::all()
        .flat_map(|q| Domain::ALL.iter().map(move |&d| (cell_key(q, d), 0)))
        .collect();
    for s in dataset {
        *per_domain.entry(s.domain).or_default() += 1;
        *per_qid.entry(s.qid).or_default() += 1;
        *per_cell.entry(cell_key(s.qid, s.domain)).or_default() += 1;
    }

    let mut failures = Vec::new();
    if dataset.len() != CANONICAL_TOTAL {
        failures.push(format!("total {} != {CANONICAL_TOTAL}", dataset.len()));
    }
    for (d, &n) in &per_domain {
        if n != CANONICAL_PER_DOMAIN {
            failures.push(format!("domain {d}: {n} != {CANONICAL_PER_DOMAIN}"));
        }
    }
    for (q, &n) in &per_qid {
        if n != CANONICAL_PER_QID {
            failures.push(format!("qid {q}: {n} != {CANONICAL_PER_QID}"));
        }
    }
    for (c, &n) in &per_cell {
        if n != CANONICAL_PER_CELL {
            failures.push(format!("cell {c}: {n} != {CANONICAL_PER_CELL}"));
        }
    }
    ValidationReport {
        total: dataset.len(),
        per_domain,
        per_qid,
        per_cell,
        passed: failures.is_empty(),
        failures,
    }
}

// ---------------------------------------------------------------------------
// Split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub optimization: Vec<Scenario>,
    pub evaluation: Vec<Scenario>,
}

/// Stratified split. Within each `(qid, domain)` cell the items are sorted by
/// id, shuffled with a [`SplitMix64`] seeded by
/// `hash64(global_seed, "{qid}|{domain}")`, and the first `ceil(ratio * len)`
/// go to optimization.
pub fn split(dataset: &[Scenario], global_seed: u64, ratio: f64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cells: BTreeMap<(Qid, Domain), Vec<&Scenario>> = BTreeMap::new();
    for s in dataset {
        cells.entry((s.qid, s.domain)).or_default().push(s);
    }
    let mut out = DatasetSplit {
        optimization: Vec::new(),
        evaluation: Vec::new(),
    };
    for ((qid, domain), mut items) in cells {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let seed = hash64(global_seed, format!("{qid}|{domain}").as_bytes());
        SplitMix64::new(seed).shuffle(&mut items);
        let take = (ratio * items.len() as f64).ceil() as usize;
        for (i, s) in items.into_iter().enumerate() {
            if i < take {
                out.optimization.push(s.clone());
            } else {
                out.evaluation.push(s.clone());
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Label randomization
// ---------------------------------------------------------------------------

/// Which option letter carries the positive pole in one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelKey {
    HighIsA,
    HighIsB,
}

impl LabelKey {
    pub fn flipped(self) -> LabelKey {
        match self {
            LabelKey::HighIsA => LabelKey::HighIsB,
            LabelKey::HighIsB => LabelKey::HighIsA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledScenario {
    pub scenario: Scenario,
    pub key: LabelKey,
    pub seed_trace: u64,
}

impl LabeledScenario {
    /// Option texts in letter order `(A, B)`.
    pub fn options(&self) -> (&str, &str) {
        let s = &self.scenario;
        match self.key {
            LabelKey::HighIsA => (&s.option_high, &s.option_low),
            LabelKey::HighIsB => (&s.option_low, &s.option_high),
        }
    }

    pub fn with_key(&self, key: LabelKey) -> LabeledScenario {
        LabeledScenario {
            key,
            ..self.clone()
        }
    }
}

/// `HighIsA` iff the low bit of `hash64(global_seed, id)` is zero.
pub fn assign_label(scenario: &Scenario, global_seed: u64) -> LabeledScenario {
    let h = hash64(global_seed, scenario.id.as_bytes());
    let key = if h & 1 == 0 {
        LabelKey::HighIsA
    } else {
        LabelKey::HighIsB
    };
    LabeledScenario {
        scenario: scenario.clone(),
        key,
        seed_trace: h,
    }
}

pub fn assign_labels(scenarios: &[Scenario], global_seed: u64) -> Vec<LabeledScenario> {
    scenarios.iter().map(|s| assign_label(s, global_seed)).collect()
}

pub fn filter_axis(scenarios: &[Scenario], axis: Axis) -> Vec<Scenario> {
    scenarios.iter().filter(|s| s.axis == axis).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(wvs: &str, dim: &str, domain: &str, letter: &str) -> String {
        format!(
            r#"{{"wvs_id":"{wvs}","dimension":"{dim}","domain":"{domain}",
               "scenario_text":"Your company is considering replacing religious holidays.",
               "options":{{"A":"Support","B":"Oppose"}},
               "mapping":{{"Dimension 1":"{letter}","Dimension 2":"{letter}"}}}}"#
        )
    }

    #[test]
    fn reference_entry_maps_to_y01() {
        let json = format!("[{}]", entry("F063", "Traditional vs. Secular-Rational", "workplace", "A"));
        let ds = parse_dataset(&json).unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds[0];
        assert_eq!(s.qid.to_string(), "Y01");
        assert_eq!(s.axis, Axis::Y);
        assert_eq!(s.domain, Domain::Workplace);
        assert_eq!(s.option_high, "Support");
        assert_eq!(s.option_low, "Oppose");
        assert_eq!(s.id.len(), 16);
    }

    #[test]
    fn empty_array_is_empty_dataset() {
        assert!(parse_dataset("[]").unwrap().is_empty());
    }

    #[test]
    fn unknown_wvs_id_rejected() {
        let json = format!("[{}]", entry("Z999", "Dimension 1", "legal", "A"));
        assert!(matches!(parse_dataset(&json), Err(Error::UnknownWvsId(id)) if id == "Z999"));
    }

    #[test]
    fn mapping_to_missing_letter_rejected() {
        let json = format!("[{}]", entry("A165", "Survival vs. Self-Expression", "legal", "C"));
        assert!(matches!(parse_dataset(&json), Err(Error::InvalidMapping { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let one = entry("A165", "Dimension 2", "legal", "B");
        let json = format!("[{one},{one}]");
        assert!(matches!(parse_dataset(&json), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn dimension_must_agree_with_item() {
        let json = format!("[{}]", entry("A165", "Dimension 1", "legal", "B"));
        assert!(matches!(parse_dataset(&json), Err(Error::InvalidScenario { .. })));
    }

    #[test]
    fn identical_options_rejected() {
        let json = r#"[{"wvs_id":"A008","dimension":"X","domain":"family","scenario_text":"t",
            "options":{"A":"same","B":"same"},"mapping":{"Dimension 2":"A"}}]"#;
        assert!(matches!(parse_dataset(json), Err(Error::InvalidScenario { .. })));
    }

    #[test]
    fn unknown_keys_are_tolerated() {
        let json = r#"[{"wvs_id":"A008","dimension":"X","domain":"family","scenario_text":"t",
            "options":{"A":"a","B":"b"},"mapping":{"Dimension 2":"A"},"notes":"extra"}]"#;
        assert_eq!(parse_dataset(json).unwrap().len(), 1);
    }

    #[test]
    fn qid_table_matches_items() {
        let expected = [
            ("F063", "Y01"), ("Y003", "Y02"), ("F120", "Y03"), ("G006", "Y04"), ("E018", "Y05"),
            ("Y002", "X01"), ("A008", "X02"), ("F118", "X03"), ("E025", "X04"), ("A165", "X05"),
        ];
        for (wvs, q) in expected {
            assert_eq!(qid_for_wvs(wvs).unwrap().to_string(), q);
            assert_eq!(q.parse::<Qid>().unwrap().wvs_id(), wvs);
        }
    }

    #[test]
    fn split_rejects_bad_input() {
        let ds = synthetic::canonical_dataset();
        assert!(matches!(split(&ds, 42, 0.0), Err(Error::InvalidRatio(_))));
        assert!(matches!(split(&ds, 42, 1.0), Err(Error::InvalidRatio(_))));
        assert!(matches!(split(&[], 42, 0.5), Err(Error::EmptyDataset)));
    }

    #[test]
    fn singleton_cell_goes_to_optimization() {
        let s = Scenario::new("only", "F120", Domain::Legal, "t", "lo", "hi").unwrap();
        let sp = split(&[s], 42, 0.5).unwrap();
        assert_eq!(sp.optimization.len(), 1);
        assert!(sp.evaluation.is_empty());
    }

    #[test]
    fn label_is_deterministic() {
        let s = Scenario::new("s1", "F120", Domain::Legal, "t", "lo", "hi").unwrap();
        let a = assign_label(&s, 42);
        let b = assign_label(&s, 42);
        assert_eq!(a.key, b.key);
        assert_eq!(a.seed_trace, hash64(42, b"s1"));
    }

    #[test]
    fn options_follow_key() {
        let s = Scenario::new("s1", "F120", Domain::Legal, "t", "lo", "hi").unwrap();
        let l = assign_label(&s, 42);
        assert_eq!(l.with_key(LabelKey::HighIsA).options(), ("hi", "lo"));
        assert_eq!(l.with_key(LabelKey::HighIsB).options(), ("lo", "hi"));
    }
}
