use super::{bindings, render, PromptBundle, PromptError, TemplateId};
use crate::shots::FewShotExample;
use crate::{Profile, QuestionClass};

/// Per-entity matching shape requested from the information filter.
pub const FILTER_OUTPUT_FORMAT: &str = r#"{"<entity>": ["<table.column>", ...]}"#;

const SPEC_HEADER: &str = "### specification\n";
const BIRD_JSON_RULE: &str =
    "6.The output format must strictly meet the given json specification: {\"sql\": \"ccc\"}\n";

#[derive(Debug, Clone)]
pub struct GenerationInputs<'a> {
    pub class: QuestionClass,
    /// Rendered CREATE TABLE text of the (possibly pruned) schema.
    pub schema_text: &'a str,
    /// `a.b = c.d` entries; an empty slice omits the block.
    pub link_info: &'a [String],
    pub main_metric: &'a str,
    pub query: &'a str,
    /// Bird evidence; ignored under the Spider profile.
    pub hint: Option<&'a str>,
    pub shots: &'a [FewShotExample],
    pub profile: Profile,
}

/// Examples as `Question:` / `SQL:` pairs separated by blank lines.
pub fn few_shot_block(shots: &[FewShotExample]) -> String {
    shots
        .iter()
        .map(|s| format!("Question: {}\nSQL: {}", s.question.trim(), s.sql.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// `Foreign_keys: [a.b = c.d, ...]`, or empty when there are no links.
pub fn link_info_block(links: &[String]) -> String {
    if links.is_empty() {
        String::new()
    } else {
        format!("Foreign_keys: [{}]", links.join(", "))
    }
}

fn generation_template(class: QuestionClass) -> TemplateId {
    match class {
        QuestionClass::Easy => TemplateId::GenEasy,
        QuestionClass::Join => TemplateId::GenJoin,
        QuestionClass::Nested | QuestionClass::JoinNested => TemplateId::GenNestedFamily,
    }
}

/// Bird question text: the question followed by its evidence line.
pub(crate) fn bird_query(query: &str, hint: Option<&str>) -> String {
    match hint.map(str::trim).filter(|h| !h.is_empty()) {
        Some(h) => format!("{query}\nHINT: {h}"),
        None => query.to_string(),
    }
}

pub fn assemble_generation_prompt(inputs: &GenerationInputs<'_>) -> Result<PromptBundle, PromptError> {
    if inputs.schema_text.trim().is_empty() {
        return Err(PromptError::InvalidInput("schema text is empty".into()));
    }
    let mut table_info = inputs.schema_text.to_string();
    if inputs.class != QuestionClass::Easy && !inputs.link_info.is_empty() {
        table_info.push('\n');
        table_info.push_str(&link_info_block(inputs.link_info));
    }
    let query = match inputs.profile {
        Profile::Spider => inputs.query.to_string(),
        Profile::Bird => bird_query(inputs.query, inputs.hint),
    };
    let id = generation_template(inputs.class);
    let b = bindings([
        ("few_shot", few_shot_block(inputs.shots)),
        ("table_info", table_info),
        ("main_metric", inputs.main_metric.to_string()),
        ("query", query),
    ]);
    let mut bundle = render(id, &b)?;
    if inputs.profile == Profile::Bird {
        let text = &mut bundle.messages[0].content;
        let at = text
            .rfind(SPEC_HEADER)
            .expect("generation templates end with a specification");
        text.truncate(at + SPEC_HEADER.len());
        text.push_str(TemplateId::SpecBird.body());
        text.push_str(BIRD_JSON_RULE);
    }
    Ok(bundle)
}
