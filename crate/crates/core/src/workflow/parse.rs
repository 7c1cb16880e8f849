use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::sql_lex::first_statement_end;
use crate::{Profile, QuestionClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found")]
    NoJson,
    #[error("missing or malformed key `{0}`")]
    MissingKey(String),
    #[error("no `Label: <join>, <nested>` line found")]
    LabelNotFound,
    #[error("no SQL statement found")]
    NoSql,
    #[error("no `The modified SQL:` marker found")]
    NoMarker,
    #[error("empty completion")]
    EmptyCompletion,
}

/// First `{...}` span, scanning left to right, that is balanced (ignoring
/// braces inside JSON strings) and parses as a JSON object.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(rel) = text[start..].find('{') {
        let open = start + rel;
        if let Some(close) = balanced_end(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ElementsResult {
    /// Spider `entities`, or Bird `query_entities`.
    pub entities: Vec<String>,
    /// Bird `hint_entities`; empty under Spider.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hint_entities: Vec<String>,
    pub rewritten_query: String,
}

impl ElementsResult {
    /// Entities handed to the information filter.
    pub fn all_entities(&self) -> Vec<String> {
        self.entities.iter().chain(&self.hint_entities).cloned().collect()
    }
}

fn string_list(map: &Map<String, Value>, key: &str) -> Result<Vec<String>, ParseError> {
    match map.get(key) {
        Some(Value::Array(items)) => Ok(items.iter().map(value_text).collect()),
        _ => Err(ParseError::MissingKey(key.into())),
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Strings from a value that may be a list, a single string or absent.
fn loose_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items.iter().map(value_text).collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.clone()],
        Some(Value::Null) | None => Vec::new(),
        Some(other) => vec![other.to_string()],
    }
}

pub fn parse_elements(text: &str, profile: Profile) -> Result<ElementsResult, ParseError> {
    let map = extract_json_object(text).ok_or(ParseError::NoJson)?;
    let rewritten_query = match map.get("query") {
        Some(Value::String(q)) if !q.trim().is_empty() => q.trim().to_string(),
        _ => return Err(ParseError::MissingKey("query".into())),
    };
    let (entities, hint_entities) = match profile {
        Profile::Spider => (string_list(&map, "entities")?, Vec::new()),
        Profile::Bird => (
            string_list(&map, "query_entities")?,
            string_list(&map, "hint_entities")?,
        ),
    };
    Ok(ElementsResult {
        entities,
        hint_entities,
        rewritten_query,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredTable {
    pub table: String,
    pub where_note: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterResult {
    pub element_matching: BTreeMap<String, Vec<String>>,
    pub main_metric_method: String,
    pub required_tables: Vec<RequiredTable>,
    pub join_note: String,
    pub draft_sql: String,
    pub all_fields: Vec<String>,
}

fn get_ci<'a>(map: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.get(key).or_else(|| {
        map.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
    })
}

fn text_field(map: &Map<String, Value>, key: &str) -> String {
    get_ci(map, key).map(value_text).unwrap_or_default()
}

pub fn parse_filter(text: &str) -> Result<FilterResult, ParseError> {
    const TABLES: &str = "Required table information";
    let map = extract_json_object(text).ok_or(ParseError::NoJson)?;
    let tables = match get_ci(&map, TABLES) {
        Some(Value::Array(items)) if !items.is_empty() => items,
        _ => return Err(ParseError::MissingKey(TABLES.into())),
    };
    let mut required_tables = Vec::new();
    for item in tables {
        let Value::Object(t) = item else { continue };
        let table = text_field(t, "Table name");
        if table.trim().is_empty() {
            continue;
        }
        required_tables.push(RequiredTable {
            table: table.trim().to_string(),
            where_note: text_field(t, "where statement condition"),
            columns: loose_list(get_ci(t, "All field names required by SQL under this table")),
        });
    }
    if required_tables.is_empty() {
        return Err(ParseError::MissingKey(TABLES.into()));
    }
    let element_matching = match get_ci(&map, "Element matching") {
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), loose_list(Some(v)))).collect(),
        _ => BTreeMap::new(),
    };
    let main_metric_method = map
        .iter()
        .find(|(k, _)| k.trim().to_ascii_lowercase().ends_with("calculation method"))
        .map(|(_, v)| value_text(v))
        .unwrap_or_default();
    Ok(FilterResult {
        element_matching,
        main_metric_method,
        required_tables,
        join_note: text_field(&map, "Multiple table joint fields and conditions"),
        draft_sql: text_field(&map, "sql"),
        all_fields: loose_list(get_ci(&map, "All fields")),
    })
}

static LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)label\s*:\s*(non[\s_-]*join|join)\s*,\s*(non[\s_-]*nested|nested)").expect("label pattern")
});

/// Class from the last `Label: <A>, <B>` in the response.
pub fn parse_label(text: &str) -> Result<QuestionClass, ParseError> {
    let caps = LABEL.captures_iter(text).last().ok_or(ParseError::LabelNotFound)?;
    let join = !caps[1].to_ascii_lowercase().starts_with("non");
    let nested = !caps[2].to_ascii_lowercase().starts_with("non");
    Ok(QuestionClass::from_labels(join, nested))
}

fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Cut at the first top-level `;` or blank line, then trim.
fn single_statement(sql: &str) -> String {
    let mut end = first_statement_end(sql).unwrap_or(sql.len());
    if let Some(blank) = sql.find("\n\n").or_else(|| sql.find("\n\r\n")) {
        end = end.min(blank);
    }
    sql[..end].trim().to_string()
}

static LEADING_QUERY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^(select|with)\b").expect("leading pattern"));
static ANY_QUERY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^\s*(select|with)\b").expect("query pattern"));

/// `sql` value of the response's JSON object.
pub fn parse_sql_json(text: &str) -> Result<String, ParseError> {
    let map = extract_json_object(text).ok_or(ParseError::NoJson)?;
    match map.get("sql").or_else(|| get_ci(&map, "sql")) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        _ => Err(ParseError::MissingKey("sql".into())),
    }
}

/// Fallback when no JSON is usable: the first line-initial SELECT/WITH
/// statement.
pub fn extract_first_statement(text: &str) -> Option<String> {
    let body = strip_fences(text);
    let m = ANY_QUERY.find(&body)?;
    let sql = single_statement(body[m.start()..].trim_start());
    (!sql.is_empty()).then_some(sql)
}

/// Generation output: JSON first, then the bare-statement fallback.
pub fn parse_generated_sql(text: &str) -> Result<(String, bool), ParseError> {
    match parse_sql_json(text) {
        Ok(sql) => Ok((sql, false)),
        Err(_) => extract_first_statement(text)
            .map(|s| (s, true))
            .ok_or(ParseError::NoSql),
    }
}

/// Completion of a prompt that ends in the seed token `SELECT`.
pub fn apply_select_seed(completion: &str) -> Result<String, ParseError> {
    let body = strip_fences(completion);
    let body = body.trim();
    if body.is_empty() {
        return Err(ParseError::EmptyCompletion);
    }
    let full = if LEADING_QUERY.is_match(body) {
        body.to_string()
    } else {
        format!("SELECT {body}")
    };
    Ok(single_statement(&full))
}

const MODIFIED_MARKER: &str = "the modified sql:";

/// Text after the last `The modified SQL:` marker.
pub fn parse_modified_sql(text: &str) -> Result<String, ParseError> {
    let lower = text.to_ascii_lowercase();
    let at = lower.rfind(MODIFIED_MARKER).ok_or(ParseError::NoMarker)?;
    let rest = strip_fences(&text[at + MODIFIED_MARKER.len()..]);
    let sql = single_statement(rest.trim());
    if sql.is_empty() {
        Err(ParseError::NoSql)
    } else {
        Ok(sql)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_inside_prose_and_fences() {
        let text = "Sure! {not json} here:\n```json\n{\"sql\": \"SELECT '}' FROM t\"}\n```\nDone.";
        let map = extract_json_object(text).unwrap();
        assert_eq!(map["sql"], "SELECT '}' FROM t");
    }

    #[test]
    fn outermost_object_wins_over_nested_one() {
        let map = extract_json_object(r#"x {"a": {"b": 1}, "c": 2} y"#).unwrap();
        assert_eq!(map.len(), 2);
    }

    #[test]
    fn elements_spider_and_bird() {
        let r = parse_elements(
            r#"output: {"entities": ["age older than 56", "number of heads of the departments"], "query": "Number of department heads over 56 years old"}"#,
            Profile::Spider,
        )
        .unwrap();
        assert_eq!(r.entities, ["age older than 56", "number of heads of the departments"]);
        assert_eq!(r.rewritten_query, "Number of department heads over 56 years old");
        let r = parse_elements(
            r#"{"query_entities": ["player", "the Purple Cap"], "hint_entities": ["Player_Name", "Season_Year", "DOB"], "query": "The name of youngest player to have won the Purple Cap."}"#,
            Profile::Bird,
        )
        .unwrap();
        assert_eq!(r.hint_entities, ["Player_Name", "Season_Year", "DOB"]);
        assert_eq!(r.all_entities().len(), 5);
    }

    #[test]
    fn elements_errors() {
        assert_eq!(
            parse_elements("I think the entities are ages.", Profile::Spider),
            Err(ParseError::NoJson)
        );
        assert_eq!(
            parse_elements(r#"{"entities": []}"#, Profile::Spider),
            Err(ParseError::MissingKey("query".into()))
        );
        assert_eq!(
            parse_elements(r#"{"entities": [], "query": "q"}"#, Profile::Bird),
            Err(ParseError::MissingKey("query_entities".into()))
        );
    }

    #[test]
    fn filter_fields() {
        let text = r#"Step by step... {"Element matching": {"singers": ["singer.Name"]}, "Number of singers calculation method": "count(*)", "Required table information": [{"Table name": "singer", "where statement condition": "", "All field names required by SQL under this table": ["Singer_ID", "Name"]}], "Multiple table joint fields and conditions": "", "sql": "SELECT count(*) FROM singer", "All fields": ["singer.Singer_ID"]}"#;
        let f = parse_filter(text).unwrap();
        assert_eq!(f.element_matching["singers"], ["singer.Name"]);
        assert_eq!(f.main_metric_method, "count(*)");
        assert_eq!(f.required_tables[0].columns, ["Singer_ID", "Name"]);
        assert_eq!(f.draft_sql, "SELECT count(*) FROM singer");
        assert_eq!(f.all_fields, ["singer.Singer_ID"]);
        assert!(parse_filter(r#"{"sql": "x"}"#).is_err());
        assert!(parse_filter(r#"{"Required table information": []}"#).is_err());
    }

    #[test]
    fn label_variants() {
        assert_eq!(
            parse_label("blah\nLabel: NON-JOIN, NON-NESTED").unwrap(),
            QuestionClass::Easy
        );
        assert_eq!(parse_label("Label: JOIN, NESTED").unwrap(), QuestionClass::JoinNested);
        assert_eq!(parse_label("label : non join ,nested.").unwrap(), QuestionClass::Nested);
        assert_eq!(
            parse_label("Label: NON-JOIN, NESTED\n...\n**Label: JOIN, NON-NESTED**").unwrap(),
            QuestionClass::Join
        );
        assert_eq!(parse_label("It needs a join."), Err(ParseError::LabelNotFound));
    }

    #[test]
    fn generated_sql_paths() {
        assert_eq!(
            parse_generated_sql(r#"{"sql": "SELECT avg(hours) FROM projects"}"#).unwrap(),
            ("SELECT avg(hours) FROM projects".to_string(), false)
        );
        assert_eq!(
            parse_generated_sql("```json\n{\"sql\": \"SELECT avg(hours) FROM projects\"}\n```")
                .unwrap()
                .0,
            "SELECT avg(hours) FROM projects"
        );
        assert_eq!(
            parse_generated_sql("Here you go:\nSELECT name FROM stadium\n\nThis lists names.").unwrap(),
            ("SELECT name FROM stadium".to_string(), true)
        );
        assert_eq!(parse_generated_sql("I cannot answer."), Err(ParseError::NoSql));
    }

    #[test]
    fn select_seed_rule() {
        assert_eq!(
            apply_select_seed(" T2.name FROM instructor AS T2 JOIN advisor AS T1 ON T2.id = T1.i_id").unwrap(),
            "SELECT T2.name FROM instructor AS T2 JOIN advisor AS T1 ON T2.id = T1.i_id"
        );
        assert_eq!(apply_select_seed("SELECT a FROM t;").unwrap(), "SELECT a FROM t");
        assert_eq!(apply_select_seed("select a FROM t").unwrap(), "select a FROM t");
        assert_eq!(
            apply_select_seed("selection FROM t").unwrap(),
            "SELECT selection FROM t"
        );
        assert_eq!(
            apply_select_seed(" count(*) FROM t\n\nThe query counts rows.").unwrap(),
            "SELECT count(*) FROM t"
        );
        assert_eq!(apply_select_seed("  \n"), Err(ParseError::EmptyCompletion));
    }

    #[test]
    fn modified_sql_marker() {
        let text = "A: The question is an extremum problem, so i should modify the SQL.\nThe modified SQL: SELECT T2.name FROM advisor AS T1 JOIN instructor AS T2 ON T1.i_id = T2.id JOIN student AS T3 ON T1.s_id = T3.id ORDER BY T3.tot_cred DESC LIMIT 1";
        assert!(parse_modified_sql(text)
            .unwrap()
            .ends_with("ORDER BY T3.tot_cred DESC LIMIT 1"));
        let two = "The modified SQL: SELECT 1\nWait.\nThe modified SQL: SELECT avg(hours) FROM projects";
        assert_eq!(parse_modified_sql(two).unwrap(), "SELECT avg(hours) FROM projects");
        assert_eq!(parse_modified_sql("SELECT 1"), Err(ParseError::NoMarker));
        assert_eq!(parse_modified_sql("The modified SQL:   "), Err(ParseError::NoSql));
    }
}
