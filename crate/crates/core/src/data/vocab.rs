use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::clip::BodyPart;
use crate::error::{Error, Result};

/// Parametric motion templates of the text-to-motion corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Walk,
    Sit,
    Wave,
    Kneel,
    Stretch,
    StandStill,
    Circle,
}

impl Template {
    pub const ALL: [Template; 7] = [
        Template::Walk,
        Template::Sit,
        Template::Wave,
        Template::Kneel,
        Template::Stretch,
        Template::StandStill,
        Template::Circle,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Template::Walk => "walk",
            Template::Sit => "sit",
            Template::Wave => "wave",
            Template::Kneel => "kneel",
            Template::Stretch => "stretch",
            Template::StandStill => "stand_still",
            Template::Circle => "circle",
        }
    }

    pub fn id(self) -> usize {
        Template::ALL.iter().position(|&t| t == self).expect("listed")
    }

    /// Body parts a template drives; also the prompt routing table.
    pub fn parts(self) -> &'static [BodyPart] {
        match self {
            Template::Wave | Template::Stretch => &[BodyPart::Upper],
            Template::Walk | Template::Circle | Template::Kneel | Template::StandStill => &[BodyPart::Lower],
            Template::Sit => &[BodyPart::Lower, BodyPart::Upper],
        }
    }

    pub fn valid_words() -> String {
        Template::ALL.iter().map(|t| t.word()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Template::ALL
            .iter()
            .copied()
            .find(|t| t.word() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

/// Non-template words allowed in prompts.
pub const CONNECTIVES: [&str; 6] = ["while", "and", "then", "a", "person", "is"];
pub const VOCAB_SIZE: usize = Template::ALL.len() + CONNECTIVES.len();

pub fn word_of(id: usize) -> Option<&'static str> {
    if id < Template::ALL.len() {
        Some(Template::ALL[id].word())
    } else {
        CONNECTIVES.get(id - Template::ALL.len()).copied()
    }
}

pub fn id_of(word: &str) -> Option<usize> {
    if let Ok(t) = word.parse::<Template>() {
        return Some(t.id());
    }
    CONNECTIVES
        .iter()
        .position(|&c| c == word)
        .map(|p| p + Template::ALL.len())
}

/// A non-empty token-id sequence over the fixed vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PromptTokens(Vec<usize>);

impl PromptTokens {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Empty("prompt".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= VOCAB_SIZE) {
            return Err(Error::UnknownToken(bad));
        }
        Ok(Self(ids))
    }

    pub fn from_templates(templates: &[Template]) -> Self {
        let mut ids = Vec::new();
        for (i, t) in templates.iter().enumerate() {
            if i > 0 {
                ids.push(id_of("while").expect("connective"));
            }
            ids.push(t.id());
        }
        Self(ids)
    }

    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let ids = words
            .iter()
            .map(|w| {
                id_of(w.as_ref()).ok_or_else(|| Error::Routing {
                    word: w.as_ref().to_string(),
                    valid: valid_vocabulary(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids)
    }

    /// Parses free text such as `"wave while walking"` or `"Sit."`.
    pub fn parse(text: &str) -> Result<Self> {
        let lowered = text.to_lowercase();
        let cleaned: String = lowered
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '_' { c } else { ' ' })
            .collect();
        let raw: Vec<&str> = cleaned.split_whitespace().collect();
        let mut words = Vec::new();
        let mut i = 0;
        while i < raw.len() {
            let w = raw[i];
            if matches!(w, "stand" | "standing" | "stands") && raw.get(i + 1) == Some(&"still") {
                words.push("stand_still".to_string());
                i += 2;
                continue;
            }
            words.push(normalize(w).to_string());
            i += 1;
        }
        Self::from_words(&words)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn words(&self) -> Vec<&'static str> {
        self.0.iter().map(|&i| word_of(i).expect("validated")).collect()
    }

    /// Template words present, deduplicated and ordered.
    pub fn templates(&self) -> BTreeSet<Template> {
        self.0
            .iter()
            .filter(|&&i| i < Template::ALL.len())
            .map(|&i| Template::ALL[i])
            .collect()
    }

    /// Jaccard overlap of template-word sets.
    pub fn similarity(&self, other: &PromptTokens) -> f64 {
        let a = self.templates();
        let b = other.templates();
        let union = a.union(&b).count();
        if union == 0 {
            return 1.0;
        }
        a.intersection(&b).count() as f64 / union as f64
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }
}

fn valid_vocabulary() -> String {
    let mut all: Vec<&str> = Template::ALL.iter().map(|t| t.word()).collect();
    all.extend(CONNECTIVES);
    all.join(", ")
}

fn normalize(word: &str) -> &str {
    match word {
        "walking" | "walks" | "walked" => "walk",
        "sitting" | "sits" | "sat" => "sit",
        "waving" | "waves" | "waved" => "wave",
        "kneeling" | "kneels" | "knelt" => "kneel",
        "stretching" | "stretches" | "stretched" => "stretch",
        "circling" | "circles" | "circled" => "circle",
        other => other,
    }
}
