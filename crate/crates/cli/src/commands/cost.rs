use std::fmt::Write as _;

use anyhow::anyhow;
use serde::{Deserialize, Serialize};
use sqlflow_core::llm::{StageUsage, UsageSnapshot};
use sqlflow_core::workflow::{PipelineTrace, STAGE_ORDER};

use crate::args::CostArgs;
use crate::error::CliResult;
use crate::io::{ensure_parent, read_jsonl, require_file, write_json};

/// Per-question magnitudes of a GPT-4 run of the full six-stage workflow,
/// printed beside measured figures for scale.
pub const REFERENCE_TOKENS: u64 = 5611;
pub const REFERENCE_SECONDS: f64 = 4.55;

/// Rebuild ledger-shaped usage from the stage records of finished traces.
pub fn usage_from_traces(traces: &[PipelineTrace]) -> UsageSnapshot {
    let mut snap = UsageSnapshot::default();
    for t in traces {
        for s in &t.stages {
            if s.call_error.is_some() {
                continue;
            }
            let e = snap.stages.entry(s.stage.clone()).or_default();
            e.calls += 1;
            e.attempts += u64::from(s.attempts);
            e.prompt_tokens += s.prompt_tokens;
            e.completion_tokens += s.completion_tokens;
            e.latency_ms += s.latency_ms;
            e.estimated += u64::from(s.usage_estimated);
            if s.provenance == Some(sqlflow_core::llm::Provenance::Replay) {
                e.replayed += 1;
            }
        }
    }
    snap.total = snap.summed_stages();
    snap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub latency_ms: u64,
    /// Averages divide by questions, not calls.
    pub avg_tokens: f64,
    pub avg_latency_ms: f64,
}

impl StageCost {
    fn new(stage: &str, u: &StageUsage, questions: usize) -> Self {
        let n = questions as f64;
        StageCost {
            stage: stage.to_string(),
            calls: u.calls,
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
            total_tokens: u.total_tokens(),
            latency_ms: u.latency_ms,
            avg_tokens: u.total_tokens() as f64 / n,
            avg_latency_ms: u.latency_ms as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCost {
    pub index: usize,
    pub db_id: String,
    pub stages: usize,
    pub tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub avg_tokens: u64,
    pub avg_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub questions: usize,
    pub stages: Vec<StageCost>,
    pub total: StageCost,
    pub per_question: Vec<QuestionCost>,
    pub estimated_calls: u64,
    pub reference: Reference,
}

pub fn cost_report(traces: &[PipelineTrace]) -> anyhow::Result<CostReport> {
    if traces.is_empty() {
        return Err(anyhow!("no traces to summarize"));
    }
    let usage = usage_from_traces(traces);
    let n = traces.len();
    let mut stages: Vec<StageCost> = STAGE_ORDER
        .iter()
        .filter_map(|s| usage.stages.get(*s).map(|u| StageCost::new(s, u, n)))
        .collect();
    // Stage names outside the canonical list go last, by name.
    for (name, u) in &usage.stages {
        if !STAGE_ORDER.contains(&name.as_str()) {
            stages.push(StageCost::new(name, u, n));
        }
    }
    let per_question = traces
        .iter()
        .enumerate()
        .map(|(i, t)| QuestionCost {
            index: i,
            db_id: t.task.db_id.clone(),
            stages: t.stages.len(),
            tokens: t.total_tokens(),
            latency_ms: t.latency_ms(),
        })
        .collect();
    Ok(CostReport {
        manifest_hash: traces.iter().find_map(|t| t.manifest_hash.clone()),
        questions: n,
        stages,
        total: StageCost::new("total", &usage.total, n),
        per_question,
        estimated_calls: usage.total.estimated,
        reference: Reference {
            avg_tokens: REFERENCE_TOKENS,
            avg_seconds: REFERENCE_SECONDS,
        },
    })
}

impl CostReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<20}{:>7}{:>14}{:>14}\n",
            "stage", "calls", "avg tokens", "avg time (s)"
        );
        for s in self.stages.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{:<20}{:>7}{:>14.1}{:>14.3}",
                s.stage,
                s.calls,
                s.avg_tokens,
                s.avg_latency_ms / 1000.0
            );
        }
        let _ = writeln!(out, "questions: {}", self.questions);
        if self.estimated_calls > 0 {
            let _ = writeln!(out, "calls with estimated token counts: {}", self.estimated_calls);
        }
        let _ = writeln!(
            out,
            "reference magnitude (GPT-4, full workflow): ~{} tokens, {:.2} s per question",
            self.reference.avg_tokens, self.reference.avg_seconds
        );
        out
    }
}

pub fn report_cost(args: &CostArgs) -> CliResult<CostReport> {
    require_file(&args.traces, "traces")?;
    let traces: Vec<PipelineTrace> = read_jsonl(&args.traces)?;
    let report = cost_report(&traces).map_err(|e| anyhow!("{}: {e}", args.traces.display()))?;
    if let Some(out) = &args.out {
        ensure_parent(out)?;
        write_json(out, &report)?;
    }
    Ok(report)
}
