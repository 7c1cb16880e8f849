//! Prompt templates and their rendering.
//!
//! Template bodies live in `prompts/fixtures/<id>.txt` and are compiled in.
//! Placeholders are written `{{name}}`. Every prompt goes out as a single
//! user message.

mod assemble;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::ChatMessage;

pub(crate) use assemble::bird_query;
pub use assemble::{
    assemble_generation_prompt, few_shot_block, link_info_block, GenerationInputs, FILTER_OUTPUT_FORMAT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ElementsSpider,
    ElementsBird,
    InfoFilter,
    Classification,
    GenEasy,
    GenJoin,
    GenNestedFamily,
    SpecBird,
    SelfCorrection,
    ActiveLearningSpider,
    ActiveLearningBird,
}

impl TemplateId {
    pub const ALL: [TemplateId; 11] = [
        TemplateId::ElementsSpider,
        TemplateId::ElementsBird,
        TemplateId::InfoFilter,
        TemplateId::Classification,
        TemplateId::GenEasy,
        TemplateId::GenJoin,
        TemplateId::GenNestedFamily,
        TemplateId::SpecBird,
        TemplateId::SelfCorrection,
        TemplateId::ActiveLearningSpider,
        TemplateId::ActiveLearningBird,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ElementsSpider => "elements_spider",
            TemplateId::ElementsBird => "elements_bird",
            TemplateId::InfoFilter => "info_filter",
            TemplateId::Classification => "classification",
            TemplateId::GenEasy => "gen_easy",
            TemplateId::GenJoin => "gen_join",
            TemplateId::GenNestedFamily => "gen_nested_family",
            TemplateId::SpecBird => "spec_bird",
            TemplateId::SelfCorrection => "self_correction",
            TemplateId::ActiveLearningSpider => "active_learning_spider",
            TemplateId::ActiveLearningBird => "active_learning_bird",
        }
    }

    /// Raw template text, exactly as stored in the fixture file.
    pub fn body(self) -> &'static str {
        match self {
            TemplateId::ElementsSpider => include_str!("../../prompts/fixtures/elements_spider.txt"),
            TemplateId::ElementsBird => include_str!("../../prompts/fixtures/elements_bird.txt"),
            TemplateId::InfoFilter => include_str!("../../prompts/fixtures/info_filter.txt"),
            TemplateId::Classification => include_str!("../../prompts/fixtures/classification.txt"),
            TemplateId::GenEasy => include_str!("../../prompts/fixtures/gen_easy.txt"),
            TemplateId::GenJoin => include_str!("../../prompts/fixtures/gen_join.txt"),
            TemplateId::GenNestedFamily => include_str!("../../prompts/fixtures/gen_nested_family.txt"),
            TemplateId::SpecBird => include_str!("../../prompts/fixtures/spec_bird.txt"),
            TemplateId::SelfCorrection => include_str!("../../prompts/fixtures/self_correction.txt"),
            TemplateId::ActiveLearningSpider => {
                include_str!("../../prompts/fixtures/active_learning_spider.txt")
            }
            TemplateId::ActiveLearningBird => {
                include_str!("../../prompts/fixtures/active_learning_bird.txt")
            }
        }
    }

    pub fn template(self) -> PromptTemplate {
        PromptTemplate::new(self)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template `{template}` needs a binding for `{name}`")]
    MissingPlaceholder { template: TemplateId, name: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("{0}")]
    InvalidInput(String),
}

pub type Bindings = BTreeMap<String, String>;

/// Build a binding map from `(name, value)` pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: &'static str,
    pub required_placeholders: BTreeSet<&'static str>,
}

impl PromptTemplate {
    pub fn new(id: TemplateId) -> Self {
        let body = id.body();
        let required_placeholders = segments(body)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Placeholder(name) => Some(name),
                Segment::Literal(_) => None,
            })
            .collect();
        PromptTemplate {
            id,
            body,
            required_placeholders,
        }
    }

    /// Substitute every placeholder verbatim. A line holding nothing but a
    /// placeholder bound to the empty string disappears with its newline.
    pub fn render_text(&self, bindings: &Bindings) -> Result<String, PromptError> {
        for name in &self.required_placeholders {
            if !bindings.contains_key(*name) {
                return Err(PromptError::MissingPlaceholder {
                    template: self.id,
                    name: (*name).to_string(),
                });
            }
        }
        let mut out = String::with_capacity(self.body.len() + 256);
        for line in self.body.split_inclusive('\n') {
            let bare = line.trim_end_matches('\n');
            if let Some(name) = sole_placeholder(bare) {
                if bindings[name].is_empty() {
                    continue;
                }
            }
            for seg in segments(line) {
                match seg {
                    Segment::Literal(text) => out.push_str(text),
                    Segment::Placeholder(name) => out.push_str(&bindings[name]),
                }
            }
        }
        Ok(out)
    }
}

enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'a str),
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

/// Split template text into literals and `{{name}}` markers. Brace runs that
/// do not enclose a lowercase identifier stay literal.
fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut literal_start = 0;
    let mut i = 0;
    while let Some(pos) = text[i..].find("{{") {
        let open = i + pos;
        let Some(len) = text[open + 2..].find("}}") else { break };
        let name = &text[open + 2..open + 2 + len];
        if is_placeholder_name(name) {
            if open > literal_start {
                out.push(Segment::Literal(&text[literal_start..open]));
            }
            out.push(Segment::Placeholder(name));
            i = open + 4 + len;
            literal_start = i;
        } else {
            i = open + 1;
        }
    }
    if literal_start < text.len() {
        out.push(Segment::Literal(&text[literal_start..]));
    }
    out
}

fn sole_placeholder(line: &str) -> Option<&str> {
    let name = line.strip_prefix("{{")?.strip_suffix("}}")?;
    is_placeholder_name(name).then_some(name)
}

/// A rendered prompt together with the bindings that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template: TemplateId,
    pub messages: Vec<ChatMessage>,
    pub bindings: Bindings,
}

impl PromptBundle {
    /// Concatenated message text.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn render(id: TemplateId, bindings: &Bindings) -> Result<PromptBundle, PromptError> {
    let text = id.template().render_text(bindings)?;
    Ok(PromptBundle {
        template: id,
        messages: vec![ChatMessage::user(text)],
        bindings: bindings.clone(),
    })
}

/// [`render`] addressed by template name.
pub fn render_named(id: &str, bindings: &Bindings) -> Result<PromptBundle, PromptError> {
    render(id.parse()?, bindings)
}
