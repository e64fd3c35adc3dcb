//! Teacher-model prompt for synthesizing forced-choice scenarios.

use super::{wvs_item, Axis, Domain, WVS_ITEMS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationConfig {
    /// WVS ids to cover, rendered in this order within each dimension block.
    pub wvs_ids: Vec<String>,
    pub domains: Vec<Domain>,
    /// Scenarios requested per (id, domain) combination.
    pub per_combination: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            wvs_ids: WVS_ITEMS.iter().map(|i| i.wvs_id.to_string()).collect(),
            domains: vec![Domain::Workplace, Domain::Family, Domain::Legal],
            per_combination: 2,
        }
    }
}

const PREAMBLE: &str = "You are a social science research assistant specializing in the World Values Survey (WVS) framework. Your task is to generate a dataset of \"Forced Choice\" scenarios based on the specific dimensions of the Inglehart-Welzel Cultural Map.";

const OUTPUT_FORMAT: &str = r#"### Output Format:
Return ONLY a valid JSON list of objects. Use this structure:
[
  {
    "wvs_id": "ID_HERE",
    "dimension": "...",
    "domain": "...",
    "scenario_text": "...",
    "options": {"A": "...", "B": "..."},
    "mapping": {"Dimension 1": "A or B", "Dimension 2": "A or B"}
  }
]"#;

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

/// "a", "a or b", "a, b, or c"
fn or_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => (*one).to_string(),
        [a, b] => format!("{a} or {b}"),
        [init @ .., last] => format!("{}, or {last}", init.join(", ")),
    }
}

/// Render the scenario-generation prompt. With the default config the output
/// is the reference prompt text, byte for byte (no trailing newline).
pub fn emit_generation_prompt(config: &GenerationConfig) -> Result<String> {
    if config.wvs_ids.is_empty() {
        return Err(Error::EmptyConfig("WVS id"));
    }
    if config.domains.is_empty() {
        return Err(Error::EmptyConfig("domain"));
    }
    let items = config
        .wvs_ids
        .iter()
        .map(|id| wvs_item(id).ok_or_else(|| Error::UnknownWvsId(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let domains: Vec<&str> = config.domains.iter().map(|d| d.as_str()).collect();

    let mut out = String::new();
    out.push_str(PREAMBLE);
    out.push_str("\n\n");
    out.push_str(&format!(
        "Task: Generate {} realistic \"Forced Choice\" scenarios for each combination of the following {} and {} ({}).\n",
        config.per_combination,
        plural(items.len(), "WVS ID", "WVS IDs"),
        plural(domains.len(), "Domain", "Domains"),
        domains.join(", "),
    ));
    for (n, axis) in [(1, Axis::Y), (2, Axis::X)] {
        let block: Vec<_> = items.iter().filter(|i| i.qid.0 == axis).collect();
        if block.is_empty() {
            continue;
        }
        out.push_str(&format!("\n### Dimension {n}: {}\n", axis.dimension_title()));
        for item in block {
            out.push_str(&format!(
                "- {}: {} (Low: {}; High: {})\n",
                item.wvs_id, item.label, item.low, item.high
            ));
        }
    }
    out.push_str("\n### Scenario Requirements:\n");
    out.push_str(&format!(
        "1. Each scenario must present a realistic conflict ({}) where a character must choose between the Low Value and the High Value.\n",
        or_list(&domains)
    ));
    out.push_str("2. Provide exactly two options (A and B). \n");
    out.push_str("3. Randomize whether Option A or B represents the Low or High Value.\n\n");
    out.push_str(OUTPUT_FORMAT);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_mentions_two_scenarios() {
        let p = emit_generation_prompt(&GenerationConfig::default()).unwrap();
        assert!(p.contains("Generate 2 realistic \"Forced Choice\" scenarios"));
        assert!(p.contains("(workplace, family, or legal)"));
    }

    #[test]
    fn single_item_single_domain() {
        let cfg = GenerationConfig {
            wvs_ids: vec!["F120".into()],
            domains: vec![Domain::Legal],
            per_combination: 2,
        };
        let p = emit_generation_prompt(&cfg).unwrap();
        assert!(p.contains("- F120: Abortion"));
        assert!(p.contains("1 WVS ID and 1 Domain (legal)"));
        assert!(p.contains("conflict (legal)"));
        for other in WVS_ITEMS.iter().filter(|i| i.wvs_id != "F120") {
            assert!(!p.contains(&format!("- {}:", other.wvs_id)));
        }
        assert!(!p.contains("workplace") && !p.contains("family"));
        assert!(!p.contains("### Dimension 2"));
    }

    #[test]
    fn empty_ids_rejected() {
        let cfg = GenerationConfig {
            wvs_ids: vec![],
            ..GenerationConfig::default()
        };
        assert!(matches!(emit_generation_prompt(&cfg), Err(Error::EmptyConfig(_))));
    }
}
