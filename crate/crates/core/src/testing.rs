//! A deterministic stand-in model for offline runs and tests.
//!
//! [`MockModel`] recognises which stage a prompt belongs to from the
//! template's opening text and answers with scripted text. The correction
//! and active-learning stages echo the SQL under review unless scripted.

use crate::llm::{BackendReply, ChatBackend, ChatRequest, LlmError};
use crate::workflow::{STAGE_ACTIVE, STAGE_CLASSIFY, STAGE_CORRECT, STAGE_ELEMENTS, STAGE_FILTER, STAGE_GENERATE};

/// Pipeline stage that produced `prompt`, judged by template text.
pub fn stage_of_prompt(prompt: &str) -> &'static str {
    if prompt.starts_with("Assuming that you are a natural language processing expert") {
        STAGE_ELEMENTS
    } else if prompt.contains("\n### need\nYou are a data analyst.") {
        STAGE_FILTER
    } else if prompt.starts_with("For the given question that requires writing SQL, classify") {
        STAGE_CLASSIFY
    } else if prompt.starts_with("For the given question, use the Database scheme to fix") {
        STAGE_CORRECT
    } else if prompt.starts_with("Please determine the type of question.")
        || prompt.starts_with("You are an experienced SQL engineer.")
    {
        STAGE_ACTIVE
    } else {
        STAGE_GENERATE
    }
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.rfind(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// Continuation of a prompt seeded with `SELECT`.
fn seeded_continuation(sql: &str) -> String {
    let t = sql.trim();
    match t.get(..6) {
        Some(head) if head.eq_ignore_ascii_case("select") => t[6..].to_string(),
        _ => t.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct MockModel {
    pub elements: String,
    pub filter: String,
    pub classification: String,
    pub generation: String,
    /// Raw completion for self-correction; `None` echoes the draft.
    pub correction: Option<String>,
    /// Raw completion for active learning; `None` echoes the input SQL.
    pub active: Option<String>,
}

impl MockModel {
    pub fn respond(&self, prompt: &str) -> String {
        match stage_of_prompt(prompt) {
            STAGE_ELEMENTS => self.elements.clone(),
            STAGE_FILTER => self.filter.clone(),
            STAGE_CLASSIFY => self.classification.clone(),
            STAGE_CORRECT => self.correction.clone().unwrap_or_else(|| {
                let draft = between(prompt, "### SQLite SQL QUERY:\n", "\n### Fixed SQL QUERY:").unwrap_or("");
                seeded_continuation(draft)
            }),
            STAGE_ACTIVE => self.active.clone().unwrap_or_else(|| {
                if prompt.starts_with("Please determine") {
                    let sql = between(prompt, "original SQL: ", "\nA:").unwrap_or("");
                    format!("The question is not an extremum problem, so i should use the original SQL as the modified SQL.\nThe modified SQL: {sql}")
                } else {
                    let sql = between(prompt, "SQLite SQL QUERY: ", "\nFixed SQL QUERY:").unwrap_or("");
                    seeded_continuation(sql)
                }
            }),
            _ => self.generation.clone(),
        }
    }
}

impl ChatBackend for MockModel {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, LlmError> {
        let prompt = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        Ok(BackendReply::text(self.respond(prompt)))
    }
}
