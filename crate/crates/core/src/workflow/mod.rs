//! The staged question-to-SQL pipeline.
//!
//! Stages run strictly in order: identify_elements, filter_information,
//! classify_question, generate_sql, self_correction, active_learning. Each
//! records its prompt, raw response, parsed value and any fallback in the
//! trace. Parse failures never abort a question; only a failed generation,
//! a systemic endpoint error or a replay miss does.

mod parse;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::llm::{ChatRequest, LlmError, LlmGateway, Provenance};
use crate::prompt::{
    assemble_generation_prompt, bindings, bird_query, link_info_block, render, GenerationInputs, PromptBundle,
    TemplateId, FILTER_OUTPUT_FORMAT,
};
use crate::schema::{prune_schema, render_ddl, render_link_info, Catalog, DatabaseSchema, Selection};
use crate::shots::{retrieve, RetrievalMode, RetrievalQuery, ShotLibrary, SimilarityStrategy, TrigramCosine};
use crate::{Profile, QuestionClass, QuestionTask};

pub use parse::{
    apply_select_seed, extract_first_statement, extract_json_object, parse_elements, parse_filter, parse_generated_sql,
    parse_label, parse_modified_sql, parse_sql_json, ElementsResult, FilterResult, ParseError, RequiredTable,
};

pub const STAGE_ELEMENTS: &str = "identify_elements";
pub const STAGE_FILTER: &str = "filter_information";
pub const STAGE_CLASSIFY: &str = "classify_question";
pub const STAGE_GENERATE: &str = "generate_sql";
pub const STAGE_CORRECT: &str = "self_correction";
pub const STAGE_ACTIVE: &str = "active_learning";

/// Canonical stage order; every trace is a subsequence of it.
pub const STAGE_ORDER: [&str; 6] = [
    STAGE_ELEMENTS,
    STAGE_FILTER,
    STAGE_CLASSIFY,
    STAGE_GENERATE,
    STAGE_CORRECT,
    STAGE_ACTIVE,
];

/// Stage switches for ablation runs. `true` disables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Skips both information stages; the full schema is used throughout.
    pub info_filter: bool,
    /// Skips classification; generation uses the Join template.
    pub classification: bool,
    pub self_correct: bool,
    pub active_learning: bool,
    /// Omits the foreign-key link block from every prompt.
    pub hfk: bool,
}

impl Ablations {
    pub const FLAGS: [&'static str; 6] = [
        "info_filter",
        "classification",
        "self_correct",
        "active_learning",
        "active_and_correct",
        "hfk",
    ];

    pub fn none() -> Self {
        Self::default()
    }

    pub fn set(&mut self, flag: &str) -> Result<(), String> {
        match flag.trim() {
            "info_filter" => self.info_filter = true,
            "classification" => self.classification = true,
            "self_correct" => self.self_correct = true,
            "active_learning" => self.active_learning = true,
            "active_and_correct" => {
                self.self_correct = true;
                self.active_learning = true;
            }
            "hfk" => self.hfk = true,
            other => {
                return Err(format!(
                    "unknown ablation flag `{other}` (expected one of {})",
                    Self::FLAGS.join(", ")
                ))
            }
        }
        Ok(())
    }

    pub fn only(flag: &str) -> Result<Self, String> {
        let mut a = Self::none();
        a.set(flag)?;
        Ok(a)
    }

    /// Canonical flag names in effect.
    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.info_filter {
            out.push("info_filter");
        }
        if self.classification {
            out.push("classification");
        }
        if self.self_correct {
            out.push("self_correct");
        }
        if self.active_learning {
            out.push("active_learning");
        }
        if self.hfk {
            out.push("hfk");
        }
        out
    }

    /// Stages whose prompts a single flag may change.
    pub fn governed_stages(flag: &str) -> &'static [&'static str] {
        match flag {
            "info_filter" => &[
                STAGE_ELEMENTS,
                STAGE_FILTER,
                STAGE_CLASSIFY,
                STAGE_GENERATE,
                STAGE_CORRECT,
                STAGE_ACTIVE,
            ],
            "classification" => &[STAGE_CLASSIFY, STAGE_GENERATE],
            "self_correct" => &[STAGE_CORRECT],
            "active_learning" => &[STAGE_ACTIVE],
            "active_and_correct" => &[STAGE_CORRECT, STAGE_ACTIVE],
            "hfk" => &[STAGE_GENERATE, STAGE_CORRECT, STAGE_ACTIVE],
            _ => &[],
        }
    }
}

impl FromStr for Ablations {
    type Err = String;

    /// Comma-separated flag list; empty means none.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut a = Ablations::none();
        for flag in s.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            a.set(flag)?;
        }
        Ok(a)
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

/// Which schema a later stage sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaView {
    #[default]
    Pruned,
    Full,
}

impl FromStr for SchemaView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pruned" => Ok(SchemaView::Pruned),
            "full" => Ok(SchemaView::Full),
            other => Err(format!("unknown schema view `{other}` (expected pruned or full)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub shot_mode: RetrievalMode,
    pub shot_count: usize,
    pub seed: u64,
    pub ablations: Ablations,
    pub classification_schema: SchemaView,
    pub correction_schema: SchemaView,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            profile: Profile::Spider,
            model: "gpt-4".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            shot_mode: RetrievalMode::TemSim,
            shot_count: 3,
            seed: 0,
            ablations: Ablations::none(),
            classification_schema: SchemaView::Pruned,
            correction_schema: SchemaView::Pruned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub template: TemplateId,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub usage_estimated: bool,
}

impl StageRecord {
    fn new(stage: &str, bundle: &PromptBundle) -> Self {
        StageRecord {
            stage: stage.to_string(),
            template: bundle.template,
            prompt: bundle.text(),
            raw_response: None,
            parsed: None,
            parse_error: None,
            call_error: None,
            fallback: None,
            warnings: Vec::new(),
            prompt_tokens: 0,
            completion_tokens: 0,
            latency_ms: 0,
            provenance: None,
            attempts: 0,
            usage_estimated: false,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub task: QuestionTask,
    pub profile: Profile,
    pub ablations: Vec<String>,
    pub shot_mode: RetrievalMode,
    pub shot_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<QuestionClass>,
    /// Questions of the demonstrations placed in the generation prompt.
    #[serde(default)]
    pub shots: Vec<String>,
    pub stages: Vec<StageRecord>,
    /// One line per fallback taken, prefixed with the stage name.
    #[serde(default)]
    pub fallbacks: Vec<String>,
    pub final_sql: String,
    pub status: TraceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The failure dooms every other question too (credentials, endpoint).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub systemic: bool,
}

impl PipelineTrace {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn stage_names(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.stage.as_str()).collect()
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.stages.iter().map(|s| s.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.stages.iter().map(|s| s.completion_tokens).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens() + self.completion_tokens()
    }

    pub fn latency_ms(&self) -> u64 {
        self.stages.iter().map(|s| s.latency_ms).sum()
    }
}

/// Why a question stopped early.
#[derive(Debug)]
struct Abort {
    message: String,
    systemic: bool,
}

/// Full-schema prompt text, optionally followed by the link block.
fn schema_text(schema: &DatabaseSchema, with_links: bool) -> String {
    let mut text = render_ddl(schema, None).unwrap_or_else(|e| format!("-- schema unavailable: {e}"));
    if with_links {
        let block = link_info_block(&render_link_info(schema, None));
        if !block.is_empty() {
            text.push('\n');
            text.push_str(&block);
        }
    }
    text
}

fn clean_name(name: &str) -> &str {
    name.trim()
        .trim_matches(|c| matches!(c, '`' | '"' | '\'' | '[' | ']'))
        .trim()
}

/// Split `table.column`; a bare name yields no table.
fn split_qualified(name: &str) -> (Option<&str>, &str) {
    let name = clean_name(name);
    match name.rsplit_once('.') {
        Some((t, c)) => (Some(clean_name(t)), clean_name(c)),
        None => (None, name),
    }
}

/// Turn the filter's table and field lists into a keep-set. Unresolvable
/// names are dropped with a warning.
pub fn resolve_selection(schema: &DatabaseSchema, filter: &FilterResult) -> (Selection, Vec<String>) {
    let mut sel = Selection::new();
    let mut warnings = Vec::new();
    for rt in &filter.required_tables {
        let table = match schema.resolve_table(clean_name(&rt.table)) {
            Ok(t) => t,
            Err(e) => {
                warnings.push(format!("dropped {e}"));
                continue;
            }
        };
        let mut cols = Vec::new();
        for raw in &rt.columns {
            let (qual, col) = split_qualified(raw);
            if let Some(q) = qual {
                if !schema.resolve_table(q).is_ok_and(|t| t.name == table.name) {
                    warnings.push(format!("dropped field `{raw}` listed under table `{}`", table.name));
                    continue;
                }
            }
            match schema.resolve_column(table, col) {
                Ok(c) => cols.push(c.name.as_str()),
                Err(e) => warnings.push(format!("dropped {e}")),
            }
        }
        if cols.is_empty() {
            if !sel.contains_table(&table.name) {
                warnings.push(format!(
                    "no resolvable fields for table `{}`; keeping all of its columns",
                    table.name
                ));
                sel.add_table(&table.name);
            }
        } else {
            sel.add_columns(&table.name, cols);
        }
    }
    for raw in &filter.all_fields {
        let (qual, col) = split_qualified(raw);
        match qual {
            Some(q) => {
                let Ok(table) = schema.resolve_table(q) else {
                    warnings.push(format!("dropped field `{raw}`: unknown table"));
                    continue;
                };
                if !sel.contains_table(&table.name) {
                    warnings.push(format!("dropped field `{raw}`: table `{}` not listed", table.name));
                    continue;
                }
                match schema.resolve_column(table, col) {
                    Ok(c) => {
                        sel.add_columns(&table.name, [c.name.as_str()]);
                    }
                    Err(e) => warnings.push(format!("dropped {e}")),
                }
            }
            None => {
                let mut found = false;
                for table in &schema.tables {
                    if !sel.contains_table(&table.name) {
                        continue;
                    }
                    if let Ok(c) = schema.resolve_column(table, col) {
                        sel.add_columns(&table.name, [c.name.as_str()]);
                        found = true;
                    }
                }
                if !found {
                    warnings.push(format!("dropped field `{raw}`: not in any listed table"));
                }
            }
        }
    }
    (sel, warnings)
}

/// Runs the pipeline for one question at a time; share it across workers.
pub struct Workflow {
    gateway: Arc<LlmGateway>,
    catalog: Arc<Catalog>,
    library: Option<Arc<ShotLibrary>>,
    strategy: Arc<dyn SimilarityStrategy>,
    config: PipelineConfig,
}

struct Run<'a> {
    task: &'a QuestionTask,
    trace: PipelineTrace,
}

impl Run<'_> {
    fn fallback(&mut self, record: &mut StageRecord, note: impl Into<String>) {
        let note = note.into();
        self.trace.fallbacks.push(format!("{}: {note}", record.stage));
        record.fallback = Some(note);
    }
}

impl Workflow {
    pub fn new(gateway: Arc<LlmGateway>, catalog: Arc<Catalog>, config: PipelineConfig) -> Self {
        Workflow {
            gateway,
            catalog,
            library: None,
            strategy: Arc::new(TrigramCosine),
            config,
        }
    }

    pub fn with_library(mut self, library: Arc<ShotLibrary>) -> Self {
        self.library = Some(library);
        self
    }

    pub fn with_strategy(mut self, strategy: Arc<dyn SimilarityStrategy>) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<LlmGateway> {
        &self.gateway
    }

    /// Send one stage prompt, retrying once on a transient failure.
    fn call(&self, record: &mut StageRecord, bundle: &PromptBundle) -> Result<String, LlmError> {
        let mut request = ChatRequest::new(self.config.model.clone(), bundle.messages.clone());
        request.temperature = self.config.temperature;
        request.max_output_tokens = self.config.max_output_tokens;
        let mut result = self.gateway.complete(&record.stage, &request);
        if let Err(e) = &result {
            if e.is_transient() {
                log::warn!("{}: {e}; retrying stage once", record.stage);
                result = self.gateway.complete(&record.stage, &request);
            }
        }
        match result {
            Ok(resp) => {
                record.raw_response = Some(resp.content.clone());
                record.prompt_tokens = resp.prompt_tokens;
                record.completion_tokens = resp.completion_tokens;
                record.latency_ms = resp.latency.as_millis() as u64;
                record.provenance = Some(resp.provenance);
                record.attempts = resp.attempts;
                record.usage_estimated = resp.usage_estimated;
                Ok(resp.content)
            }
            Err(e) => {
                record.call_error = Some(e.to_string());
                Err(e)
            }
        }
    }

    /// Call and classify the failure: systemic errors and replay misses stop
    /// the question, anything else is left to the stage fallback.
    fn call_or_abort(
        &self,
        run: &mut Run<'_>,
        record: &mut StageRecord,
        bundle: &PromptBundle,
    ) -> Result<Option<String>, Abort> {
        match self.call(record, bundle) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.is_systemic() || matches!(e, LlmError::ReplayMiss { .. }) => {
                run.trace.stages.push(record.clone());
                Err(Abort {
                    message: format!("{}: {e}", record.stage),
                    systemic: e.is_systemic(),
                })
            }
            Err(e) => {
                run.fallback(record, format!("call failed ({e})"));
                Ok(None)
            }
        }
    }

    pub fn run_pipeline(&self, task: &QuestionTask) -> PipelineTrace {
        let mut run = Run {
            task,
            trace: PipelineTrace {
                manifest_hash: None,
                task: task.clone(),
                profile: self.config.profile,
                ablations: self.config.ablations.names().into_iter().map(String::from).collect(),
                shot_mode: self.config.shot_mode,
                shot_count: self.config.shot_count,
                class: None,
                shots: Vec::new(),
                stages: Vec::new(),
                fallbacks: Vec::new(),
                final_sql: String::new(),
                status: TraceStatus::Ok,
                error: None,
                systemic: false,
            },
        };
        if let Err(abort) = self.run_stages(&mut run) {
            run.trace.status = TraceStatus::Failed;
            run.trace.error = Some(abort.message);
            run.trace.systemic = abort.systemic;
            run.trace.final_sql.clear();
        }
        run.trace
    }

    fn run_stages(&self, run: &mut Run<'_>) -> Result<(), Abort> {
        let task = run.task;
        if let Err(e) = task.validate() {
            return Err(Abort {
                message: format!("invalid task: {e}"),
                systemic: false,
            });
        }
        let schema = self.catalog.get(&task.db_id).cloned().ok_or_else(|| Abort {
            message: format!("unknown database `{}`", task.db_id),
            systemic: false,
        })?;
        let ablate = self.config.ablations;

        let (main_metric, pruned) = if ablate.info_filter {
            (task.question.clone(), (*schema).clone())
        } else {
            let elements = self.identify_elements(run)?;
            let pruned = self.filter_information(run, &elements, &schema)?;
            (elements.rewritten_query, pruned)
        };

        let class = if ablate.classification {
            QuestionClass::Join
        } else {
            let view = match self.config.classification_schema {
                SchemaView::Pruned => &pruned,
                SchemaView::Full => &*schema,
            };
            let c = self.classify_question(run, view)?;
            run.trace.class = Some(c);
            c
        };

        let Some(draft) = self.generate_sql(run, class, &pruned, &schema, &main_metric)? else {
            return Err(Abort {
                message: format!("{STAGE_GENERATE}: no SQL could be extracted"),
                systemic: false,
            });
        };
        run.trace.final_sql = draft.clone();

        let correction_view = match self.config.correction_schema {
            SchemaView::Pruned => &pruned,
            SchemaView::Full => &*schema,
        };
        let table_info = schema_text(correction_view, !ablate.hfk);
        let mut sql = draft;
        if !ablate.self_correct {
            sql = self.self_correct(run, &table_info, &sql)?;
            run.trace.final_sql = sql.clone();
        }
        if !ablate.active_learning {
            sql = self.active_learn(run, &table_info, &sql)?;
            run.trace.final_sql = sql;
        }
        Ok(())
    }

    fn identify_elements(&self, run: &mut Run<'_>) -> Result<ElementsResult, Abort> {
        let task = run.task;
        let profile = self.config.profile;
        let (id, b) = match profile {
            Profile::Spider => (
                TemplateId::ElementsSpider,
                bindings([("query", task.question.as_str())]),
            ),
            Profile::Bird => (
                TemplateId::ElementsBird,
                bindings([
                    ("query", task.question.as_str()),
                    ("hint", task.hint.as_deref().unwrap_or("")),
                ]),
            ),
        };
        let bundle = render(id, &b).expect("elements bindings are complete");
        let mut record = StageRecord::new(STAGE_ELEMENTS, &bundle);
        let fallback = ElementsResult {
            entities: Vec::new(),
            hint_entities: Vec::new(),
            rewritten_query: task.question.clone(),
        };
        let result = match self.call_or_abort(run, &mut record, &bundle)? {
            Some(text) => match parse_elements(&text, profile) {
                Ok(r) => r,
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    run.fallback(&mut record, "no entities; original question kept");
                    fallback
                }
            },
            None => fallback,
        };
        record.parsed = Some(serde_json::to_value(&result).expect("elements serialize"));
        run.trace.stages.push(record);
        Ok(result)
    }

    fn filter_information(
        &self,
        run: &mut Run<'_>,
        elements: &ElementsResult,
        schema: &DatabaseSchema,
    ) -> Result<DatabaseSchema, Abort> {
        let task = run.task;
        let query = match self.config.profile {
            Profile::Spider => task.question.clone(),
            Profile::Bird => bird_query(&task.question, task.hint.as_deref()),
        };
        let limitation = serde_json::to_string(&elements.all_entities()).expect("strings serialize");
        let b = bindings([
            ("table_info", schema_text(schema, false)),
            ("query", query),
            ("limitation", limitation),
            ("main_metric", elements.rewritten_query.clone()),
            ("output_format", FILTER_OUTPUT_FORMAT.to_string()),
        ]);
        let bundle = render(TemplateId::InfoFilter, &b).expect("filter bindings are complete");
        let mut record = StageRecord::new(STAGE_FILTER, &bundle);
        let mut pruned = None;
        if let Some(text) = self.call_or_abort(run, &mut record, &bundle)? {
            match parse_filter(&text) {
                Ok(filter) => {
                    let (sel, warnings) = resolve_selection(schema, &filter);
                    record.warnings = warnings;
                    if sel.is_empty() {
                        run.fallback(&mut record, "no table resolved; full schema kept");
                    } else {
                        match prune_schema(schema, &sel) {
                            Ok(p) => pruned = Some(p),
                            Err(e) => run.fallback(&mut record, format!("pruning failed ({e}); full schema kept")),
                        }
                    }
                    record.parsed = Some(json!({ "filter": filter }));
                }
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    run.fallback(&mut record, "full schema kept");
                }
            }
        }
        let pruned = pruned.unwrap_or_else(|| schema.clone());
        let kept: serde_json::Map<String, Value> = pruned
            .tables
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    json!(t.columns.iter().map(|c| &c.name).collect::<Vec<_>>()),
                )
            })
            .collect();
        match record.parsed.as_mut() {
            Some(Value::Object(m)) => {
                m.insert("kept".into(), Value::Object(kept));
            }
            _ => record.parsed = Some(json!({ "kept": kept })),
        }
        run.trace.stages.push(record);
        Ok(pruned)
    }

    fn classify_question(&self, run: &mut Run<'_>, schema: &DatabaseSchema) -> Result<QuestionClass, Abort> {
        let b = bindings([
            ("table_info", schema_text(schema, false)),
            ("query", run.task.question.clone()),
        ]);
        let bundle = render(TemplateId::Classification, &b).expect("classification bindings are complete");
        let mut record = StageRecord::new(STAGE_CLASSIFY, &bundle);
        let class = match self.call_or_abort(run, &mut record, &bundle)? {
            Some(text) => match parse_label(&text) {
                Ok(c) => c,
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    run.fallback(&mut record, "class defaults to join");
                    QuestionClass::Join
                }
            },
            None => QuestionClass::Join,
        };
        record.parsed = Some(json!(class));
        run.trace.stages.push(record);
        Ok(class)
    }

    fn generate_sql(
        &self,
        run: &mut Run<'_>,
        class: QuestionClass,
        pruned: &DatabaseSchema,
        full: &DatabaseSchema,
        main_metric: &str,
    ) -> Result<Option<String>, Abort> {
        let task = run.task;
        let shots: Vec<_> = match &self.library {
            Some(lib) => {
                let q = RetrievalQuery {
                    mode: self.config.shot_mode,
                    class,
                    question: &task.question,
                    schema: full,
                    k: self.config.shot_count,
                    seed: self.config.seed,
                };
                retrieve(lib, &q, self.strategy.as_ref())
                    .into_iter()
                    .map(|r| r.example.clone())
                    .collect()
            }
            None => Vec::new(),
        };
        run.trace.shots = shots.iter().map(|s| s.question.clone()).collect();
        let links = if self.config.ablations.hfk {
            Vec::new()
        } else {
            render_link_info(pruned, None)
        };
        let schema_text = schema_text(pruned, false);
        let inputs = GenerationInputs {
            class,
            schema_text: &schema_text,
            link_info: &links,
            main_metric,
            query: &task.question,
            hint: task.hint.as_deref(),
            shots: &shots,
            profile: self.config.profile,
        };
        let bundle = assemble_generation_prompt(&inputs).map_err(|e| Abort {
            message: format!("{STAGE_GENERATE}: {e}"),
            systemic: false,
        })?;
        let mut record = StageRecord::new(STAGE_GENERATE, &bundle);
        let mut sql = None;
        if let Some(text) = self.call_or_abort(run, &mut record, &bundle)? {
            match parse_generated_sql(&text) {
                Ok((s, secondary)) => {
                    if secondary {
                        record.parse_error = Some(ParseError::NoJson.to_string());
                        run.fallback(&mut record, "bare statement extracted");
                    }
                    record.parsed = Some(json!(s));
                    sql = Some(s);
                }
                Err(e) => record.parse_error = Some(e.to_string()),
            }
        }
        run.trace.stages.push(record);
        Ok(sql)
    }

    fn self_correct(&self, run: &mut Run<'_>, table_info: &str, draft: &str) -> Result<String, Abort> {
        let task = run.task;
        let query = match self.config.profile {
            Profile::Spider => task.question.clone(),
            Profile::Bird => bird_query(&task.question, task.hint.as_deref()),
        };
        let b = bindings([("table_info", table_info), ("query", query.as_str()), ("sql", draft)]);
        let bundle = render(TemplateId::SelfCorrection, &b).expect("correction bindings are complete");
        let mut record = StageRecord::new(STAGE_CORRECT, &bundle);
        let sql = match self.call_or_abort(run, &mut record, &bundle)? {
            Some(text) => match apply_select_seed(&text) {
                Ok(s) => s,
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    run.fallback(&mut record, "draft kept");
                    draft.to_string()
                }
            },
            None => draft.to_string(),
        };
        record.parsed = Some(json!(sql));
        run.trace.stages.push(record);
        Ok(sql)
    }

    fn active_learn(&self, run: &mut Run<'_>, table_info: &str, sql: &str) -> Result<String, Abort> {
        let task = run.task;
        let bundle = match self.config.profile {
            Profile::Spider => render(
                TemplateId::ActiveLearningSpider,
                &bindings([
                    ("query", task.question.as_str()),
                    ("table_info", table_info),
                    ("sql", sql),
                ]),
            ),
            Profile::Bird => {
                let hint = match task.hint.as_deref().map(str::trim).filter(|h| !h.is_empty()) {
                    Some(h) => format!("\nHINT: {h}"),
                    None => String::new(),
                };
                render(
                    TemplateId::ActiveLearningBird,
                    &bindings([
                        ("table_info", table_info),
                        ("query", task.question.as_str()),
                        ("hint", hint.as_str()),
                        ("sql", sql),
                    ]),
                )
            }
        }
        .expect("active-learning bindings are complete");
        let mut record = StageRecord::new(STAGE_ACTIVE, &bundle);
        let out = match self.call_or_abort(run, &mut record, &bundle)? {
            Some(text) => {
                let parsed = match self.config.profile {
                    Profile::Spider => parse_modified_sql(&text),
                    Profile::Bird => apply_select_seed(&text),
                };
                match parsed {
                    Ok(s) => s,
                    Err(e) => {
                        record.parse_error = Some(e.to_string());
                        run.fallback(&mut record, "input SQL kept");
                        sql.to_string()
                    }
                }
            }
            None => sql.to_string(),
        };
        record.parsed = Some(json!(out));
        run.trace.stages.push(record);
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
