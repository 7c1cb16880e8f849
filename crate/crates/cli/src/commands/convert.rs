use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use sqlflow_core::{Difficulty, QuestionTask};

use crate::args::ConvertArgs;
use crate::error::CliResult;
use crate::io::{ensure_parent, read_text, require_file, write_jsonl};

#[derive(Debug, Deserialize)]
struct SpiderItem {
    db_id: String,
    question: String,
    query: String,
    #[serde(default, alias = "hardness")]
    difficulty: Option<String>,
}

#[derive(Debug, Deserialize)]
struct BirdItem {
    db_id: String,
    question: String,
    #[serde(default)]
    evidence: String,
    #[serde(alias = "SQL")]
    sql: String,
    #[serde(default)]
    difficulty: Option<String>,
}

/// Labels from a JSON array of strings or one label per line.
fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .with_context(|| format!("{}: expected a JSON array of labels", path.display()));
    }
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn parse_difficulty(label: Option<&str>, index: usize) -> Result<Option<Difficulty>> {
    match label.map(str::trim).filter(|l| !l.is_empty()) {
        None => Ok(None),
        Some(l) => l.parse().map(Some).map_err(|e| anyhow!("item {}: {e}", index + 1)),
    }
}

fn apply_labels(tasks: &mut [QuestionTask], labels: Option<&Path>) -> Result<()> {
    let Some(path) = labels else { return Ok(()) };
    let labels = read_labels(path)?;
    if labels.len() != tasks.len() {
        bail!("{} difficulty labels for {} items", labels.len(), tasks.len());
    }
    for (i, (t, l)) in tasks.iter_mut().zip(&labels).enumerate() {
        t.difficulty = parse_difficulty(Some(l), i)?;
    }
    Ok(())
}

pub fn spider_dev(args: &ConvertArgs) -> CliResult<usize> {
    require_file(&args.input, "input")?;
    let items: Vec<SpiderItem> = serde_json::from_str(&read_text(&args.input)?)
        .with_context(|| format!("{}: expected a Spider dev JSON array", args.input.display()))?;
    let mut tasks = items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let mut t = QuestionTask::new(it.question, it.db_id).with_gold(it.query);
            t.difficulty = parse_difficulty(it.difficulty.as_deref(), i)?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    apply_labels(&mut tasks, args.difficulty.as_deref())?;
    ensure_parent(&args.out)?;
    write_jsonl(&args.out, &tasks)?;
    Ok(tasks.len())
}

pub fn bird_dev(args: &ConvertArgs) -> CliResult<usize> {
    require_file(&args.input, "input")?;
    let items: Vec<BirdItem> = serde_json::from_str(&read_text(&args.input)?)
        .with_context(|| format!("{}: expected a Bird dev JSON array", args.input.display()))?;
    let mut tasks = items
        .into_iter()
        .enumerate()
        .map(|(i, it)| {
            let mut t = QuestionTask::new(it.question, it.db_id).with_gold(it.sql);
            if !it.evidence.trim().is_empty() {
                t.hint = Some(it.evidence);
            }
            t.difficulty = parse_difficulty(it.difficulty.as_deref(), i)?;
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    apply_labels(&mut tasks, args.difficulty.as_deref())?;
    ensure_parent(&args.out)?;
    write_jsonl(&args.out, &tasks)?;
    Ok(tasks.len())
}
