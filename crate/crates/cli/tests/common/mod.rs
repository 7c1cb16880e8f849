//! Shared fixtures for the cli integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sqlflow_cli::config::{EndpointConfig, RunSettings};
use sqlflow_core::llm::{BackendReply, ChatBackend, ChatRequest, LlmError, ReplayMode};
use sqlflow_core::testing::MockModel;
use sqlflow_core::workflow::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn replay_dir() -> PathBuf {
    fixtures().join("replay")
}

pub fn catalog_path() -> PathBuf {
    fixtures().join("catalog/tables.json")
}

/// Materialise `<root>/<db_id>/<db_id>.sqlite` from every seed script.
pub fn build_db_root(root: &Path) -> PathBuf {
    for entry in fs::read_dir(fixtures().join("dbs")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("sql") {
            continue;
        }
        let id = path.file_stem().unwrap().to_str().unwrap().to_string();
        let dir = root.join(&id);
        fs::create_dir_all(&dir).unwrap();
        let db = dir.join(format!("{id}.sqlite"));
        let _ = fs::remove_file(&db);
        let conn = rusqlite::Connection::open(&db).unwrap();
        conn.execute_batch(&fs::read_to_string(&path).unwrap()).unwrap();
    }
    root.to_path_buf()
}

/// Settings for a run over the replay fixtures.
pub fn replay_settings(out: &Path, cache: &Path, replay: ReplayMode, workers: usize) -> RunSettings {
    RunSettings {
        dataset: replay_dir().join("dataset.jsonl"),
        catalog: catalog_path(),
        db_root: None,
        library: Some(replay_dir().join("library.jsonl")),
        cache: cache.to_path_buf(),
        out: out.to_path_buf(),
        replay,
        workers,
        sample: None,
        pipeline: PipelineConfig::default(),
        endpoint: EndpointConfig::default(),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FilterScript {
    pub matching: BTreeMap<String, Vec<String>>,
    pub method: String,
    pub tables: Vec<TableScript>,
    pub join: String,
    pub sql: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TableScript {
    pub table: String,
    #[serde(rename = "where")]
    pub where_clause: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct QuestionScript {
    pub entities: Vec<String>,
    pub rewritten: String,
    pub filter: FilterScript,
    pub classification: String,
    pub generation: String,
    #[serde(default)]
    pub correction: Option<String>,
    #[serde(default)]
    pub active: Option<String>,
}

impl QuestionScript {
    pub fn elements_text(&self) -> String {
        let body = serde_json::json!({ "entities": self.entities, "query": self.rewritten });
        format!("output: {body}")
    }

    pub fn filter_text(&self) -> String {
        let f = &self.filter;
        let tables: Vec<serde_json::Value> = f
            .tables
            .iter()
            .map(|t| {
                serde_json::json!({
                    "Table name": t.table,
                    "where statement condition": t.where_clause,
                    "All field names required by SQL under this table": t.columns,
                })
            })
            .collect();
        let mut map = serde_json::Map::new();
        map.insert("Element matching".into(), serde_json::to_value(&f.matching).unwrap());
        map.insert(
            format!("{} calculation method", self.rewritten),
            f.method.clone().into(),
        );
        map.insert("Required table information".into(), tables.into());
        map.insert(
            "Multiple table joint fields and conditions".into(),
            f.join.clone().into(),
        );
        map.insert("sql".into(), f.sql.clone().into());
        map.insert("All fields".into(), serde_json::to_value(&f.fields).unwrap());
        format!(
            "Let's think step by step about which tables are needed.\n```json\n{}\n```",
            serde_json::to_string_pretty(&serde_json::Value::Object(map)).unwrap()
        )
    }

    fn mock(&self) -> MockModel {
        MockModel {
            elements: self.elements_text(),
            filter: self.filter_text(),
            classification: self.classification.clone(),
            generation: self.generation.clone(),
            correction: self.correction.clone(),
            active: self.active.clone(),
        }
    }
}

/// Answers each prompt from the script of the question it is about. The
/// question is the one whose last mention sits furthest into the prompt, so
/// few-shot examples ahead of it do not confuse the lookup.
pub struct ScriptedModel {
    pub questions: BTreeMap<String, QuestionScript>,
}

impl ScriptedModel {
    pub fn load() -> Self {
        let text = fs::read_to_string(replay_dir().join("script.json")).unwrap();
        ScriptedModel {
            questions: serde_json::from_str(&text).unwrap(),
        }
    }

    pub fn respond(&self, prompt: &str) -> Option<String> {
        let (_, script) = self
            .questions
            .iter()
            .filter_map(|(q, s)| prompt.rfind(q.as_str()).map(|at| (at, s)))
            .max_by_key(|(at, _)| *at)?;
        Some(script.mock().respond(prompt))
    }
}

impl ChatBackend for ScriptedModel {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, LlmError> {
        let prompt = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        match self.respond(prompt) {
            Some(text) => Ok(BackendReply::text(text)),
            None => Err(LlmError::InvalidRequest("prompt names no scripted question".into())),
        }
    }
}
