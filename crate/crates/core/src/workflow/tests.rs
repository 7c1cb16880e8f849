use std::sync::atomic::{AtomicU32, Ordering};

use super::*;
use crate::llm::{BackendReply, ChatBackend};
use crate::schema::fixtures;
use crate::shots::FewShotExample;
use crate::testing::{stage_of_prompt, MockModel};

const QUESTION: &str = "Show the name of stadiums that held concerts in 2014.";

fn catalog() -> Arc<Catalog> {
    Arc::new(Catalog::new([fixtures::stadium_concert(), fixtures::pets()]))
}

fn mock() -> MockModel {
    MockModel {
        elements: r#"{"entities": ["name of stadiums", "concerts in 2014"], "query": "Names of stadiums with a concert in 2014"}"#.into(),
        filter: r#"{"Element matching": {"name of stadiums": ["stadium.Name"]}, "Names of stadiums with a concert in 2014 calculation method": "filter by year", "Required table information": [{"Table name": "stadium", "where statement condition": "", "All field names required by SQL under this table": ["Name"]}, {"Table name": "concert", "where statement condition": "Year = 2014", "All field names required by SQL under this table": ["concert.Year"]}], "Multiple table joint fields and conditions": "concert.Stadium_ID = stadium.Stadium_ID", "sql": "", "All fields": ["stadium.Name", "concert.Year", "Location_typo"]}"#.into(),
        classification: "A: Let's think step by step.\nLabel: JOIN, NON-NESTED".into(),
        generation: r#"```json
{"sql": "SELECT T2.Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID WHERE T1.Year = 2014"}
```"#
            .into(),
        correction: None,
        active: None,
    }
}

fn workflow_with(model: impl ChatBackend + 'static, config: PipelineConfig) -> Workflow {
    let gateway = LlmGateway::live(Arc::new(model)).with_sleeper(|_| {});
    Workflow::new(Arc::new(gateway), catalog(), config)
}

fn task() -> QuestionTask {
    QuestionTask::new(QUESTION, "concert_singer")
}

#[test]
fn full_pipeline_runs_all_stages_in_order() {
    let wf = workflow_with(mock(), PipelineConfig::default());
    let trace = wf.run_pipeline(&task());
    assert_eq!(trace.stage_names(), STAGE_ORDER);
    assert_eq!(trace.status, TraceStatus::Ok);
    assert_eq!(trace.class, Some(QuestionClass::Join));
    assert_eq!(
        trace.final_sql,
        "SELECT T2.Name FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID WHERE T1.Year = 2014"
    );
    assert!(trace.fallbacks.is_empty(), "{:?}", trace.fallbacks);
    let filter = trace.stage(STAGE_FILTER).unwrap();
    assert_eq!(filter.warnings.len(), 1, "{:?}", filter.warnings);
    // The pruned schema keeps selected columns plus key closure.
    let kept = &filter.parsed.as_ref().unwrap()["kept"];
    assert_eq!(kept["stadium"], json!(["Stadium_ID", "Name"]));
    assert_eq!(kept["concert"], json!(["concert_ID", "Stadium_ID", "Year"]));
    let gen = trace.stage(STAGE_GENERATE).unwrap();
    assert!(gen
        .prompt
        .contains("### HINT: The question may need connection operation like JOIN."));
    assert!(gen
        .prompt
        .contains("Foreign_keys: [concert.Stadium_ID = stadium.Stadium_ID]"));
    assert!(gen
        .prompt
        .contains("calculation methods of 'Names of stadiums with a concert in 2014'"));
    assert!(!gen.prompt.contains("Location"));
    let ledger = wf.gateway().ledger().snapshot();
    assert_eq!(ledger.total.calls, 6);
    assert_eq!(ledger.total.total_tokens(), trace.total_tokens());
    assert_eq!(ledger.total, ledger.summed_stages());
}

#[test]
fn unparseable_stages_take_flagged_fallbacks() {
    let model = MockModel {
        elements: "I would say the entities are stadiums.".into(),
        filter: "no json".into(),
        classification: "It needs a join".into(),
        generation: "Here it is:\nSELECT name FROM stadium\n\nDone.".into(),
        correction: Some("   ".into()),
        active: Some("no marker here".into()),
    };
    let wf = workflow_with(model, PipelineConfig::default());
    let trace = wf.run_pipeline(&task());
    assert_eq!(trace.status, TraceStatus::Ok);
    assert_eq!(trace.final_sql, "SELECT name FROM stadium");
    assert_eq!(trace.class, Some(QuestionClass::Join));
    assert_eq!(trace.fallbacks.len(), 6, "{:?}", trace.fallbacks);
    for (stage, want) in trace.stages.iter().zip(STAGE_ORDER) {
        assert_eq!(stage.stage, want);
        assert!(stage.fallback.is_some(), "{want}");
    }
    // The filter fallback keeps every table.
    let gen = trace.stage(STAGE_GENERATE).unwrap();
    assert!(gen.prompt.contains("Location text"));
    assert!(gen.prompt.contains(
        "calculation methods of '{QUESTION}'"
            .replace("{QUESTION}", QUESTION)
            .as_str()
    ));
}

#[test]
fn generation_without_sql_aborts_with_empty_prediction() {
    let mut m = mock();
    m.generation = "I cannot help with that.".into();
    let trace = workflow_with(m, PipelineConfig::default()).run_pipeline(&task());
    assert_eq!(trace.status, TraceStatus::Failed);
    assert!(trace.final_sql.is_empty());
    assert_eq!(trace.stages.last().unwrap().stage, STAGE_GENERATE);
    assert!(!trace.systemic);
}

#[test]
fn unknown_database_fails_without_calls() {
    let wf = workflow_with(mock(), PipelineConfig::default());
    let trace = wf.run_pipeline(&QuestionTask::new("q", "nowhere"));
    assert_eq!(trace.status, TraceStatus::Failed);
    assert!(trace.stages.is_empty());
    assert_eq!(wf.gateway().ledger().snapshot().total.calls, 0);
}

#[test]
fn auth_failure_is_systemic() {
    let backend = |_: &ChatRequest| -> Result<BackendReply, LlmError> { Err(LlmError::Auth("bad key".into())) };
    let trace = workflow_with(backend, PipelineConfig::default()).run_pipeline(&task());
    assert!(trace.systemic);
    assert_eq!(trace.stages.len(), 1);
    assert!(trace.stages[0].call_error.is_some());
}

#[test]
fn transient_failure_gets_one_stage_retry() {
    static CALLS: AtomicU32 = AtomicU32::new(0);
    let m = mock();
    let backend = move |r: &ChatRequest| -> Result<BackendReply, LlmError> {
        let prompt = &r.messages[0].content;
        if stage_of_prompt(prompt) == STAGE_CLASSIFY && CALLS.fetch_add(1, Ordering::SeqCst) == 0 {
            return Err(LlmError::Transport("reset".into()));
        }
        Ok(BackendReply::text(m.respond(prompt)))
    };
    let gateway = LlmGateway::live(Arc::new(backend)).with_retry(crate::llm::RetryPolicy::none());
    let wf = Workflow::new(Arc::new(gateway), catalog(), PipelineConfig::default());
    let trace = wf.run_pipeline(&task());
    assert!(trace.fallbacks.is_empty(), "{:?}", trace.fallbacks);
    assert_eq!(trace.class, Some(QuestionClass::Join));
    let snap = wf.gateway().ledger().snapshot();
    assert_eq!(snap.stages[STAGE_CLASSIFY].failed_calls, 1);
    assert_eq!(snap.stages[STAGE_CLASSIFY].calls, 1);
}

#[test]
fn everything_ablated_leaves_one_call_with_full_schema() {
    let config = PipelineConfig {
        ablations: "info_filter,classification,active_and_correct".parse().unwrap(),
        ..PipelineConfig::default()
    };
    let wf = workflow_with(mock(), config);
    let trace = wf.run_pipeline(&task());
    assert_eq!(trace.stage_names(), [STAGE_GENERATE]);
    let gen = &trace.stages[0];
    assert!(gen.prompt.contains("Location text"));
    assert!(gen.prompt.contains(&format!("calculation methods of '{QUESTION}'")));
    assert_eq!(wf.gateway().ledger().snapshot().total.calls, 1);
}

#[test]
fn self_correct_ablation_drops_one_stage_and_one_call() {
    let base = workflow_with(mock(), PipelineConfig::default());
    let full = base.run_pipeline(&task());
    let config = PipelineConfig {
        ablations: Ablations::only("self_correct").unwrap(),
        ..PipelineConfig::default()
    };
    let wf = workflow_with(mock(), config);
    let trace = wf.run_pipeline(&task());
    assert!(trace.stage(STAGE_CORRECT).is_none());
    assert_eq!(trace.stages.len(), full.stages.len() - 1);
    assert_eq!(wf.gateway().ledger().snapshot().total.calls, 5);
}

#[test]
fn hfk_ablation_removes_link_block() {
    let config = PipelineConfig {
        ablations: Ablations::only("hfk").unwrap(),
        ..PipelineConfig::default()
    };
    let trace = workflow_with(mock(), config).run_pipeline(&task());
    for s in &trace.stages {
        assert!(!s.prompt.contains("Foreign_keys: ["), "{}", s.stage);
    }
}

#[test]
fn classification_ablation_uses_join_template() {
    let mut m = mock();
    m.classification = "Label: NON-JOIN, NON-NESTED".into();
    let config = PipelineConfig {
        ablations: Ablations::only("classification").unwrap(),
        ..PipelineConfig::default()
    };
    let trace = workflow_with(m, config).run_pipeline(&task());
    assert!(trace.stage(STAGE_CLASSIFY).is_none());
    assert_eq!(trace.class, None);
    assert_eq!(trace.stage(STAGE_GENERATE).unwrap().template, TemplateId::GenJoin);
}

#[test]
fn seeded_completions_are_prefixed() {
    let mut m = mock();
    m.correction = Some(" T2.Name FROM stadium AS T2".into());
    let trace = workflow_with(m, PipelineConfig::default()).run_pipeline(&task());
    assert_eq!(
        trace.stage(STAGE_CORRECT).unwrap().parsed,
        Some(json!("SELECT T2.Name FROM stadium AS T2"))
    );
    assert_eq!(trace.final_sql, "SELECT T2.Name FROM stadium AS T2");
}

#[test]
fn bird_profile_threads_the_hint() {
    let mut m = mock();
    m.elements = r#"{"query_entities": ["stadiums"], "hint_entities": ["Year"], "query": "Stadiums in 2014"}"#.into();
    let config = PipelineConfig {
        profile: Profile::Bird,
        ..PipelineConfig::default()
    };
    let t = task().with_hint("in 2014 refers to Year = 2014");
    let trace = workflow_with(m, config).run_pipeline(&t);
    assert_eq!(trace.status, TraceStatus::Ok, "{:?}", trace.error);
    assert!(trace
        .stage(STAGE_ELEMENTS)
        .unwrap()
        .prompt
        .ends_with("hint: in 2014 refers to Year = 2014\noutput:\n"));
    let gen = trace.stage(STAGE_GENERATE).unwrap();
    assert!(gen.prompt.contains("\nHINT: in 2014 refers to Year = 2014\n"));
    assert!(gen.prompt.contains("cast(A as REAL)"));
    let active = trace.stage(STAGE_ACTIVE).unwrap();
    assert_eq!(active.template, TemplateId::ActiveLearningBird);
    assert!(active.prompt.contains(&format!(
        "Question: {QUESTION}\nHINT: in 2014 refers to Year = 2014\nSQLite SQL QUERY: "
    )));
    assert!(trace
        .stage(STAGE_FILTER)
        .unwrap()
        .prompt
        .contains("Entity information: [\"stadiums\",\"Year\"]"));
}

#[test]
fn shots_come_from_the_library() {
    let mut lib = ShotLibrary::new();
    lib.insert(FewShotExample::new(
        "How many concerts?",
        "how many [TAB]s?",
        "SELECT count(*) FROM concert",
        QuestionClass::Easy,
        "concert_singer",
    ));
    lib.insert(FewShotExample::new(
        "Show the name of stadiums that held concerts in 2015.",
        "show the [COL] of stadiums that held concerts in [VAL].",
        "SELECT 1",
        QuestionClass::Join,
        "concert_singer",
    ));
    let gateway = LlmGateway::live(Arc::new(mock()));
    let wf = Workflow::new(Arc::new(gateway), catalog(), PipelineConfig::default()).with_library(Arc::new(lib));
    let trace = wf.run_pipeline(&task());
    assert_eq!(trace.shots, ["Show the name of stadiums that held concerts in 2015."]);
    assert!(trace.stage(STAGE_GENERATE).unwrap().prompt.starts_with(
        "Question: Show the name of stadiums that held concerts in 2015.\nSQL: SELECT 1\n### Database scheme:"
    ));
}

#[test]
fn runs_are_deterministic_under_a_fixed_model() {
    let a = workflow_with(mock(), PipelineConfig::default()).run_pipeline(&task());
    let b = workflow_with(mock(), PipelineConfig::default()).run_pipeline(&task());
    let strip = |mut t: PipelineTrace| {
        for s in &mut t.stages {
            s.latency_ms = 0;
        }
        serde_json::to_string(&t).unwrap()
    };
    assert_eq!(strip(a), strip(b));
}

#[test]
fn ablation_flags_parse() {
    let a: Ablations = "self_correct, hfk".parse().unwrap();
    assert_eq!(a.names(), ["self_correct", "hfk"]);
    assert_eq!("".parse::<Ablations>().unwrap(), Ablations::none());
    assert!("everything".parse::<Ablations>().is_err());
    let both = Ablations::only("active_and_correct").unwrap();
    assert!(both.self_correct && both.active_learning);
}

#[test]
fn selection_resolution_drops_unknown_names() {
    let schema = fixtures::stadium_concert();
    let f = FilterResult {
        required_tables: vec![
            RequiredTable {
                table: "`Concert`".into(),
                where_note: String::new(),
                columns: vec![
                    "concert_Name".into(),
                    "year".into(),
                    "stadium.Name".into(),
                    "ghost".into(),
                ],
            },
            RequiredTable {
                table: "stadum".into(),
                where_note: String::new(),
                columns: vec![],
            },
        ],
        all_fields: vec!["Theme".into(), "stadium.Capacity".into()],
        ..FilterResult::default()
    };
    let (sel, warnings) = resolve_selection(&schema, &f);
    let entries: Vec<_> = sel
        .entries()
        .map(|(t, c)| (t.to_string(), c.map(|c| c.join(","))))
        .collect();
    assert_eq!(
        entries,
        [("concert".to_string(), Some("concert_Name,Theme,Year".to_string()))]
    );
    assert_eq!(warnings.len(), 4, "{warnings:?}");
    assert!(warnings.iter().any(|w| w.contains("did you mean `stadium`")));
}
