use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{anyhow, bail};
use serde::{Deserialize, Serialize};
use sqlflow_core::eval::{aggregate, evaluate_item, EvalRecord, ItemOutcome, MetricsReport, OpenDbLimit, Prediction};
use sqlflow_core::schema::db_path;
use sqlflow_core::workflow::PipelineTrace;

use crate::args::EvalArgs;
use crate::commands::cost::usage_from_traces;
use crate::error::CliResult;
use crate::io::{ensure_parent, read_dataset, read_jsonl, require_file, write_json};

/// How results are compared. Reported so readers know the protocol.
pub const COMPARISON: &str = "single-database execution match";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidGold {
    pub index: usize,
    pub db_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
    pub comparison: String,
    pub metrics: MetricsReport,
    pub records: Vec<EvalRecord>,
    pub invalid_gold: Vec<InvalidGold>,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut out = self.metrics.render_table();
        let fails: Vec<String> = self
            .metrics
            .failures
            .iter()
            .map(|(k, n)| format!("{}={n}", k.as_str()))
            .collect();
        out.push_str(&format!("failures: {}\n", fails.join(" ")));
        if !self.invalid_gold.is_empty() {
            out.push_str(&format!("excluded (gold SQL failed): {}\n", self.invalid_gold.len()));
        }
        if self.metrics.unlabeled > 0 {
            out.push_str(&format!(
                "unlabeled items (counted in All only): {}\n",
                self.metrics.unlabeled
            ));
        }
        if let Some(c) = &self.metrics.cost {
            out.push_str(&format!(
                "avg tokens/question: {:.1}  avg latency/question: {:.2} s\n",
                c.avg_tokens_per_question,
                c.avg_latency_ms_per_question / 1000.0
            ));
        }
        out.push_str(&format!("comparison: {}\n", self.comparison));
        out
    }
}

pub fn default_report_path(predictions: &std::path::Path) -> PathBuf {
    predictions.with_file_name("report.json")
}

pub fn evaluate(args: &EvalArgs) -> CliResult<EvalReport> {
    require_file(&args.predictions, "predictions")?;
    require_file(&args.dataset, "dataset")?;
    if !args.db_root.is_dir() {
        return Err(anyhow!("database root not found: {}", args.db_root.display()).into());
    }
    let preds: Vec<Prediction> = read_jsonl(&args.predictions)?;
    let tasks = read_dataset(&args.dataset)?;
    if preds.len() != tasks.len() {
        return Err(anyhow!(
            "{} predictions for {} dataset items; predictions must follow dataset order",
            preds.len(),
            tasks.len()
        )
        .into());
    }
    for (i, (p, t)) in preds.iter().zip(&tasks).enumerate() {
        if p.db_id != t.db_id || p.question != t.question {
            return Err(anyhow!(
                "prediction {} does not match dataset item {} ({} vs {})",
                i + 1,
                i + 1,
                p.db_id,
                t.db_id
            )
            .into());
        }
    }
    let manifest_hash = preds.iter().find_map(|p| p.manifest_hash.clone());
    let timeout = Duration::from_secs(args.timeout_secs);
    let workers = args.workers.max(1);
    let limit = OpenDbLimit::new(workers);
    let outcomes: Mutex<Vec<Option<ItemOutcome>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.min(tasks.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let (Some(task), Some(pred)) = (tasks.get(i), preds.get(i)) else {
                    break;
                };
                let path = db_path(&args.db_root, &task.db_id);
                let o = limit.with_slot(|| evaluate_item(i, task, &pred.predicted_sql, &path, timeout));
                outcomes.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(o);
            });
        }
    });
    let mut records = Vec::new();
    let mut invalid_gold = Vec::new();
    for (i, o) in outcomes
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .enumerate()
    {
        match o.expect("every item evaluated") {
            ItemOutcome::Scored(r) => records.push(r),
            ItemOutcome::InvalidGold { index, reason } => {
                log::warn!("item {}: gold SQL failed: {reason}", index + 1);
                invalid_gold.push(InvalidGold {
                    index,
                    db_id: tasks[i].db_id.clone(),
                    reason,
                })
            }
        }
    }
    let usage = match &args.traces {
        Some(p) => {
            let traces: Vec<PipelineTrace> = read_jsonl(p)?;
            Some(usage_from_traces(&traces))
        }
        None => None,
    };
    let metrics = aggregate(&records, invalid_gold.len(), usage.as_ref()).map_err(|e| anyhow!("{e}"))?;
    let report = EvalReport {
        manifest_hash,
        comparison: COMPARISON.into(),
        metrics,
        records,
        invalid_gold,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_report_path(&args.predictions));
    ensure_parent(&out)?;
    write_json(&out, &report)?;
    Ok(report)
}

/// Fail early on a report whose counts do not add up.
pub fn check_conservation(report: &EvalReport) -> anyhow::Result<()> {
    let m = &report.metrics;
    let bucketed: usize = m.buckets.iter().map(|(_, b)| b.total).sum();
    if bucketed + m.unlabeled != m.overall.total {
        bail!("bucket totals do not sum to the overall total");
    }
    let failed: usize = m.failures.values().sum();
    if m.overall.matches + failed != m.overall.total {
        bail!("matches and failures do not sum to the overall total");
    }
    Ok(())
}
