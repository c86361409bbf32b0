use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{BodyPart, PromptTokens, Template};
use crate::error::Result;

/// Sub-prompt per body part; a missing entry means a zeroed prompt feature.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartPrompts(pub BTreeMap<BodyPart, PromptTokens>);

impl PartPrompts {
    pub fn get(&self, part: BodyPart) -> Option<&PromptTokens> {
        self.0.get(&part)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Part name to sub-prompt text, `None` for zeroed parts.
    pub fn describe(&self) -> BTreeMap<String, Option<String>> {
        BodyPart::ALL
            .iter()
            .map(|&p| (p.name().to_string(), self.get(p).map(|t| t.text())))
            .collect()
    }
}

/// Serializable form of a routing decision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub parts: BTreeMap<String, Option<String>>,
}

/// Splits a prompt into per-part sub-prompts by the template table; overrides win.
pub fn route_prompt(tokens: Option<&PromptTokens>, overrides: &BTreeMap<BodyPart, PromptTokens>) -> PartPrompts {
    let mut by_part: BTreeMap<BodyPart, Vec<Template>> = BTreeMap::new();
    if let Some(t) = tokens {
        for template in t.templates() {
            for &part in template.parts() {
                by_part.entry(part).or_default().push(template);
            }
        }
    }
    let mut out: BTreeMap<BodyPart, PromptTokens> =
        by_part.into_iter().map(|(part, ts)| (part, PromptTokens::from_templates(&ts))).collect();
    for (&part, p) in overrides {
        out.insert(part, p.clone());
    }
    PartPrompts(out)
}

/// Parses free text (empty means no prompt) and routes it.
pub fn route_text(text: &str, overrides: &BTreeMap<BodyPart, PromptTokens>) -> Result<PartPrompts> {
    if text.trim().is_empty() {
        return Ok(route_prompt(None, overrides));
    }
    Ok(route_prompt(Some(&PromptTokens::parse(text)?), overrides))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn words(p: &PartPrompts, part: BodyPart) -> Option<Vec<&'static str>> {
        p.get(part).map(|t| t.words())
    }

    #[test]
    fn table_lookup() {
        let r = route_text("wave while walk", &BTreeMap::new()).unwrap();
        assert_eq!(words(&r, BodyPart::Upper), Some(vec!["wave"]));
        assert_eq!(words(&r, BodyPart::Lower), Some(vec!["walk"]));
        assert_eq!(words(&r, BodyPart::Hands), None);
        let sit = route_text("sit", &BTreeMap::new()).unwrap();
        assert_eq!(words(&sit, BodyPart::Upper), Some(vec!["sit"]));
        assert_eq!(words(&sit, BodyPart::Lower), Some(vec!["sit"]));
    }

    #[test]
    fn empty_prompt_zeroes_everything() {
        assert!(route_text("", &BTreeMap::new()).unwrap().is_empty());
        assert!(route_text("a person is", &BTreeMap::new()).unwrap().is_empty());
    }

    #[test]
    fn overrides_win() {
        let mut o = BTreeMap::new();
        o.insert(BodyPart::Hands, PromptTokens::from_templates(&[Template::Wave]));
        o.insert(BodyPart::Lower, PromptTokens::from_templates(&[Template::Sit]));
        let r = route_text("walk", &o).unwrap();
        assert_eq!(words(&r, BodyPart::Hands), Some(vec!["wave"]));
        assert_eq!(words(&r, BodyPart::Lower), Some(vec!["sit"]));
    }

    #[test]
    fn unknown_word_lists_vocabulary() {
        match route_text("dance", &BTreeMap::new()) {
            Err(Error::Routing { word, valid }) => {
                assert_eq!(word, "dance");
                assert!(valid.contains("walk") && valid.contains("stand_still"));
            }
            other => panic!("expected routing error, got {other:?}"),
        }
    }
}
