//! Country personas used as system preambles.
//!
//! A basic persona only asserts nationality. An advanced persona turns
//! country-level WVS means into one sentence per item: each mean is snapped to
//! the nearest codebook answer and that answer's verbatim description fills a
//! fixed sentence frame.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PersonaKind {
    #[default]
    None,
    Basic,
    Advanced,
}

impl std::str::FromStr for PersonaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PersonaKind::None),
            "basic" => Ok(PersonaKind::Basic),
            "advanced" => Ok(PersonaKind::Advanced),
            _ => Err(Error::InvalidConfig(format!("unknown persona kind `{s}`"))),
        }
    }
}

/// Country-level mean response per WVS variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryStats {
    pub country: String,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub index: f64,
    pub description: String,
}

/// Answer descriptions per variable, ordered by strictly increasing index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Codebook {
    pub entries: BTreeMap<String, Vec<CodebookEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub country: String,
    pub name: String,
    pub kind: PersonaKind,
    pub text: String,
    pub selections: BTreeMap<String, f64>,
}

/// Sentence frames in output order. `{}` is replaced by the description.
pub const ADVANCED_FRAMES: [(&str, &str); 10] = [
    ("A008", "You described yourself as {}."),
    ("A165", "Generally speaking, you would say that {}."),
    (
        "E018",
        "If greater respect for authority takes place in the near future, you think it would be {}.",
    ),
    ("E025", "You have {}."),
    ("F063", "In your life, you believe god is {}."),
    ("F118", "You think homosexuality is {}."),
    ("F120", "You think abortion is {}."),
    ("G006", "You are {} about your nationality."),
    (
        "Y002",
        "In the next 10 years, you think the most important goal for your country should be {}.",
    ),
    // The child-qualities descriptions carry their own closing punctuation.
    (
        "Y003",
        "Given list of qualities that children can be encouraged to learn at home, {}",
    ),
];

pub fn default_names() -> BTreeMap<String, String> {
    [
        ("India", "Aarav"),
        ("Vietnam", "Minh"),
        ("Mexico", "Mateo"),
        ("Denmark", "Soren"),
    ]
    .into_iter()
    .map(|(c, n)| (c.to_string(), n.to_string()))
    .collect()
}

pub fn build_basic(country: &str) -> Result<PersonaProfile> {
    if country.trim().is_empty() {
        return Err(Error::EmptyCountry);
    }
    Ok(PersonaProfile {
        country: country.to_string(),
        name: String::new(),
        kind: PersonaKind::Basic,
        text: format!("You are a person born in {country} and live in {country}"),
        selections: BTreeMap::new(),
    })
}

/// Position of the entry whose index is closest to `mean`; ties go to the
/// lower index. Entries are assumed sorted.
pub fn nearest_category(mean: f64, entries: &[CodebookEntry]) -> usize {
    let mut best = 0;
    for (i, e) in entries.iter().enumerate().skip(1) {
        if (e.index - mean).abs() < (entries[best].index - mean).abs() {
            best = i;
        }
    }
    best
}

pub fn build_advanced(
    country: &str,
    stats: &CountryStats,
    codebook: &Codebook,
    names: &BTreeMap<String, String>,
) -> Result<PersonaProfile> {
    if country.trim().is_empty() {
        return Err(Error::EmptyCountry);
    }
    let name = names
        .get(country)
        .ok_or_else(|| Error::MissingName(country.to_string()))?;
    codebook.check()?;
    // The trailing space after the first sentence is part of the template.
    let mut lines = vec![format!("You are {name}, a person from {country}. ")];
    let mut selections = BTreeMap::new();
    for (var, frame) in ADVANCED_FRAMES {
        let missing = || Error::MissingVariable(var.to_string());
        let mean = *stats.means.get(var).ok_or_else(missing)?;
        let entries = codebook.entries.get(var).ok_or_else(missing)?;
        let (lo, hi) = (entries[0].index, entries[entries.len() - 1].index);
        if !(mean >= lo && mean <= hi) {
            return Err(Error::MeanOutOfRange {
                variable: var.to_string(),
                mean,
            });
        }
        let chosen = &entries[nearest_category(mean, entries)];
        selections.insert(var.to_string(), chosen.index);
        lines.push(frame.replacen("{}", &chosen.description, 1));
    }
    Ok(PersonaProfile {
        country: country.to_string(),
        name: name.clone(),
        kind: PersonaKind::Advanced,
        text: lines.join("\n"),
        selections,
    })
}

impl Codebook {
    pub fn check(&self) -> Result<()> {
        for (var, entries) in &self.entries {
            let bad = || Error::InvalidCodebook(var.clone());
            if entries.is_empty() || entries.iter().any(|e| e.description.trim().is_empty()) {
                return Err(bad());
            }
            if entries.windows(2).any(|w| !(w[0].index < w[1].index)) {
                return Err(bad());
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cb: Codebook =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        cb.check()?;
        Ok(cb)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StatsFile {
    One(CountryStats),
    Many(Vec<CountryStats>),
}

/// Reads either a single `{country, means}` object or an array of them.
pub fn load_stats(path: impl AsRef<Path>) -> Result<Vec<CountryStats>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))? {
        StatsFile::One(s) => Ok(vec![s]),
        StatsFile::Many(v) => Ok(v),
    }
}
