//! Execution accuracy: run predicted and gold SQL on SQLite, compare the
//! results, and fold the verdicts into per-difficulty metrics.
//!
//! Each item is judged against its single database file. There is no
//! distilled test-suite of alternate databases.

mod exec;
mod metrics;

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::task::QuestionTask;

pub use exec::{
    exec_match, execute_on, execute_sql, open_read_only, Cell, ExecResult, ExecStatus, Row, DEFAULT_TIMEOUT,
};
pub use metrics::{aggregate, round3, BucketStats, CostSummary, EvalRecord, FailureKind, MetricsError, MetricsReport};

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub db_id: String,
    pub question: String,
    pub predicted_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

/// Verdict for one item. Gold failures take the item out of the score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemOutcome {
    Scored(EvalRecord),
    InvalidGold { index: usize, reason: String },
}

/// Judge one prediction against its gold SQL on `db_path`.
pub fn evaluate_item(
    index: usize,
    task: &QuestionTask,
    predicted_sql: &str,
    db_path: &Path,
    timeout: Duration,
) -> ItemOutcome {
    let Some(gold_sql) = task.gold_sql.as_deref() else {
        return ItemOutcome::InvalidGold {
            index,
            reason: "item has no gold SQL".into(),
        };
    };
    let record = |matched: bool, failure: Option<FailureKind>, reason: Option<String>| EvalRecord {
        index,
        db_id: task.db_id.clone(),
        question: task.question.clone(),
        difficulty: task.difficulty,
        predicted_sql: predicted_sql.to_string(),
        gold_sql: gold_sql.to_string(),
        matched,
        failure,
        reason,
    };
    if !db_path.is_file() {
        return ItemOutcome::Scored(record(
            false,
            Some(FailureKind::PredError),
            Some(format!("database not found: {}", db_path.display())),
        ));
    }
    let gold = execute_sql(db_path, gold_sql, timeout);
    if !gold.is_ok() {
        return ItemOutcome::InvalidGold {
            index,
            reason: gold.error.unwrap_or_default(),
        };
    }
    if predicted_sql.trim().is_empty() {
        return ItemOutcome::Scored(record(
            false,
            Some(FailureKind::PredError),
            Some("empty prediction".into()),
        ));
    }
    let pred = execute_sql(db_path, predicted_sql, timeout);
    let rec = match pred.status {
        ExecStatus::SqlError => record(false, Some(FailureKind::PredError), pred.error),
        ExecStatus::Timeout => record(false, Some(FailureKind::Timeout), pred.error),
        ExecStatus::Ok if exec_match(&pred, &gold, gold_sql) => record(true, None, None),
        ExecStatus::Ok => record(false, Some(FailureKind::Mismatch), None),
    };
    ItemOutcome::Scored(rec)
}

/// Counting gate capping how many databases are open at once.
#[derive(Debug)]
pub struct OpenDbLimit {
    free: Mutex<usize>,
    cv: Condvar,
}

impl OpenDbLimit {
    pub fn new(cap: usize) -> Self {
        OpenDbLimit {
            free: Mutex::new(cap.max(1)),
            cv: Condvar::new(),
        }
    }

    /// Run `f` while holding one slot.
    pub fn with_slot<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
            while *free == 0 {
                free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
            }
            *free -= 1;
        }
        struct Release<'a>(&'a OpenDbLimit);
        impl Drop for Release<'_> {
            fn drop(&mut self) {
                *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
                self.0.cv.notify_one();
            }
        }
        let _release = Release(self);
        f()
    }
}
