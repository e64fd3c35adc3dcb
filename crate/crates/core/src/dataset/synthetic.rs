//! Synthetic, fully balanced scenario set (600 items, 20 per question and
//! domain) for smoke tests, benchmarks and the bundled example data.
//!
//! The texts are templated and carry no real cultural content; they only
//! need to be distinct, realistic in length and correctly pole-mapped.

use serde_json::{json, Value};

use super::{Domain, Scenario, WVS_ITEMS};
use crate::hash::hash64;

struct Topic {
    dilemma: &'static str,
    options: [(&'static str, &'static str); 4],
}

// (low pole, high pole) option texts per item, in WVS_ITEMS order.
const TOPICS: [Topic; 10] = [
    Topic {
        dilemma: "must decide whether a religious custom should shape the plan",
        options: [
            ("Keep the religious observance central", "Adopt a secular arrangement"),
            ("Ask a faith leader to guide the choice", "Decide on practical grounds alone"),
            ("Schedule around the holy days", "Treat the holy days like any other day"),
            ("Open the event with a prayer", "Skip the prayer and start directly"),
        ],
    },
    Topic {
        dilemma: "has to choose which quality a child should be taught first",
        options: [
            ("Stress obedience to elders", "Encourage independent thinking"),
            ("Insist on following the family faith", "Let the child explore beliefs freely"),
            ("Reward strict rule following", "Reward taking initiative"),
            ("Keep the child under close guidance", "Give the child room to decide"),
        ],
    },
    Topic {
        dilemma: "is asked to take a position on access to abortion",
        options: [
            ("Oppose the access in all cases", "Support access as a personal choice"),
            ("Refuse to endorse the policy", "Endorse the policy publicly"),
            ("Side with the prohibition", "Side with the right to choose"),
            ("Advise against the procedure", "Respect the decision to proceed"),
        ],
    },
    Topic {
        dilemma: "must respond to a debate about national symbols",
        options: [
            ("Defend the national symbols proudly", "Treat the symbols as unimportant"),
            ("Put the national anthem on the agenda", "Leave the anthem out"),
            ("Favor the domestic candidate for patriotic reasons", "Pick the best candidate regardless of origin"),
            ("Fly the flag at the entrance", "Keep the entrance neutral"),
        ],
    },
    Topic {
        dilemma: "faces a demand to defer to a senior authority",
        options: [
            ("Follow the senior figure without question", "Challenge the instruction openly"),
            ("Accept the ruling as final", "Appeal the ruling"),
            ("Let the eldest make the call", "Put the matter to a vote"),
            ("Obey the directive", "Ask for the reasoning first"),
        ],
    },
    Topic {
        dilemma: "must choose between a secure option and a fulfilling one",
        options: [
            ("Take the stable, well paid option", "Take the option that allows self expression"),
            ("Prioritize savings and safety", "Prioritize creativity and voice"),
            ("Keep the guaranteed income", "Pursue the meaningful project"),
            ("Choose the safer neighborhood", "Choose the more vibrant community"),
        ],
    },
    Topic {
        dilemma: "is asked how the recent events have affected their outlook",
        options: [
            ("Admit feeling discouraged about life", "Say that life feels good overall"),
            ("Withdraw from the celebration", "Join the celebration cheerfully"),
            ("Focus on what went wrong", "Focus on what went well"),
            ("Decline the invitation out of gloom", "Accept the invitation with enthusiasm"),
        ],
    },
    Topic {
        dilemma: "has to react to a same-sex couple asking for equal treatment",
        options: [
            ("Refuse the equal treatment", "Grant the equal treatment"),
            ("Keep the old rule in place", "Change the rule to include them"),
            ("Avoid the couple's request", "Welcome the couple's request"),
            ("Object to the recognition", "Support the recognition"),
        ],
    },
    Topic {
        dilemma: "is invited to sign a petition about a contested decision",
        options: [
            ("Stay out of the petition", "Sign the petition"),
            ("Keep quiet to avoid trouble", "Add their name publicly"),
            ("Let others handle the protest", "Help collect signatures"),
            ("Decline to get involved", "Join the campaign"),
        ],
    },
    Topic {
        dilemma: "must decide how far to trust a stranger in the matter",
        options: [
            ("Verify everything before trusting them", "Take them at their word"),
            ("Keep the valuables locked away", "Lend the item without a deposit"),
            ("Insist on a written guarantee", "Rely on a handshake"),
            ("Assume they might cheat", "Assume they mean well"),
        ],
    },
];

const ACTORS: [(Domain, [&str; 5]); 3] = [
    (Domain::Family, ["A parent", "An older sibling", "A grandmother", "A newly married partner", "An uncle"]),
    (Domain::Workplace, ["A team manager", "A new employee", "An HR officer", "A shift supervisor", "A startup founder"]),
    (Domain::Legal, ["A judge", "A city council member", "A defense lawyer", "A juror", "A policy advisor"]),
];

const PRESSURES: [&str; 4] = [
    "and the decision is due this week",
    "while others are watching closely",
    "knowing the choice will set a precedent",
    "with little time to consult anyone",
];

fn actors(domain: Domain) -> &'static [&'static str; 5] {
    &ACTORS.iter().find(|(d, _)| *d == domain).expect("all domains listed").1
}

/// The 600-item balanced set, in (item, domain, index) order.
pub fn canonical_dataset() -> Vec<Scenario> {
    let mut out = Vec::with_capacity(600);
    for (item, topic) in WVS_ITEMS.iter().zip(TOPICS.iter()) {
        for domain in Domain::ALL {
            let names = actors(domain);
            for i in 0..20usize {
                let qid = super::qid_for_wvs(item.wvs_id).expect("table id");
                let id = format!("{qid}-{domain}-{i:02}");
                let text = format!(
                    "{} in a {} setting {}, {}.",
                    names[i % 5],
                    domain,
                    topic.dilemma,
                    PRESSURES[i / 5]
                );
                let (low, high) = topic.options[(i + i / 5) % 4];
                out.push(
                    Scenario::new(id, item.wvs_id, domain, text, low, high)
                        .expect("synthetic scenario is valid"),
                );
            }
        }
    }
    out
}

/// The canonical set in the teacher-model JSON shape, with the high-pole
/// letter chosen per scenario by `hash64(7, id)` parity.
pub fn canonical_dataset_json() -> Value {
    let items: Vec<Value> = canonical_dataset()
        .iter()
        .map(|s| {
            let high_is_a = hash64(7, s.id.as_bytes()) & 1 == 0;
            let (a, b, letter) = if high_is_a {
                (&s.option_high, &s.option_low, "A")
            } else {
                (&s.option_low, &s.option_high, "B")
            };
            json!({
                "id": s.id,
                "wvs_id": s.wvs_id,
                "dimension": s.axis.dimension_title(),
                "domain": s.domain.as_str(),
                "scenario_text": s.scenario_text,
                "options": {"A": a, "B": b},
                "mapping": {"Dimension 1": letter, "Dimension 2": letter},
            })
        })
        .collect();
    Value::Array(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_dataset;

    #[test]
    fn json_form_loads_back_to_the_same_scenarios() {
        let text = serde_json::to_string(&canonical_dataset_json()).unwrap();
        assert_eq!(parse_dataset(&text).unwrap(), canonical_dataset());
    }

    #[test]
    fn both_letters_used_for_the_high_pole() {
        let v = canonical_dataset_json();
        let letters: std::collections::HashSet<String> = v
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["mapping"]["Dimension 1"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(letters.len(), 2);
    }
}
