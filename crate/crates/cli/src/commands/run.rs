use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};
use sqlflow_core::eval::Prediction;
use sqlflow_core::llm::{ChatBackend, LlmGateway, OpenAiBackend, ReplayCache, ReplayMode, API_KEY_ENV};
use sqlflow_core::schema::Catalog;
use sqlflow_core::shots::ShotLibrary;
use sqlflow_core::workflow::{PipelineTrace, TraceStatus, Workflow};
use sqlflow_core::QuestionTask;

use crate::config::RunSettings;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_parent, jsonl_line, read_dataset, require_file, write_json};
use crate::manifest::{blob_hash, manifest_hash, prompt_fixture_hash, InputDigests, RunManifest, RunPaths, RunSummary};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const USAGE_FILE: &str = "usage.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
}

/// Indices of a seeded sample of `n` out of `len`, in input order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(Vec<u8>, usize)> = (0..len)
        .map(|i| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update((i as u64).to_le_bytes());
            (h.finalize().to_vec(), i)
        })
        .collect();
    keyed.sort();
    let mut picked: Vec<usize> = keyed.into_iter().take(n).map(|(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

fn skipped_trace(template: &PipelineTrace, task: &QuestionTask, reason: &str) -> PipelineTrace {
    PipelineTrace {
        task: task.clone(),
        class: None,
        shots: Vec::new(),
        stages: Vec::new(),
        fallbacks: Vec::new(),
        final_sql: String::new(),
        status: TraceStatus::Failed,
        error: Some(reason.to_string()),
        systemic: false,
        ..template.clone()
    }
}

fn live_backend(settings: &RunSettings) -> Option<Arc<dyn ChatBackend>> {
    if settings.replay == ReplayMode::Strict {
        return None;
    }
    let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
    if key.is_none() {
        log::warn!("{API_KEY_ENV} is not set; only cached responses can be served");
        return None;
    }
    Some(Arc::new(OpenAiBackend::new(
        settings.endpoint.base_url.clone(),
        key,
        Duration::from_secs(settings.endpoint.timeout_secs),
    )))
}

/// Run the workflow over every task. `backend` replaces the configured
/// endpoint when given.
pub fn run(settings: &RunSettings, backend: Option<Arc<dyn ChatBackend>>) -> CliResult<RunOutcome> {
    let started_at = chrono::Utc::now().to_rfc3339();
    require_file(&settings.catalog, "catalog")?;
    require_file(&settings.dataset, "dataset")?;
    let dataset_bytes =
        fs::read(&settings.dataset).with_context(|| format!("cannot read {}", settings.dataset.display()))?;
    let catalog_bytes =
        fs::read(&settings.catalog).with_context(|| format!("cannot read {}", settings.catalog.display()))?;
    let mut tasks = read_dataset(&settings.dataset)?;
    if let Some(n) = settings.sample {
        let keep = sample_indices(tasks.len(), n, settings.pipeline.seed);
        tasks = keep.into_iter().map(|i| tasks[i].clone()).collect();
    }
    let mut catalog = Catalog::load(&settings.catalog).map_err(|e| anyhow!("{}: {e}", settings.catalog.display()))?;
    if let Some(root) = &settings.db_root {
        catalog = catalog.with_db_root(root);
    }
    let (library, library_hash) = match &settings.library {
        Some(p) => {
            require_file(p, "shot library")?;
            let bytes = fs::read(p).with_context(|| format!("cannot read {}", p.display()))?;
            let lib = ShotLibrary::load(p).map_err(|e| anyhow!("{e}"))?;
            (Some(Arc::new(lib)), Some(blob_hash(&bytes)))
        }
        None => (None, None),
    };
    let inputs = InputDigests {
        prompt_fixtures: prompt_fixture_hash(),
        dataset: blob_hash(&dataset_bytes),
        catalog: blob_hash(&catalog_bytes),
        library: library_hash,
    };
    let hash = manifest_hash(&settings.pipeline, &inputs);

    let backend = backend.or_else(|| live_backend(settings));
    let cache = (settings.replay != ReplayMode::Off).then(|| ReplayCache::new(&settings.cache));
    let gateway = Arc::new(LlmGateway::new(backend, cache, settings.replay));
    let mut workflow = Workflow::new(gateway.clone(), Arc::new(catalog), settings.pipeline.clone());
    if let Some(lib) = library {
        workflow = workflow.with_library(lib);
    }

    fs::create_dir_all(&settings.out).with_context(|| format!("cannot create {}", settings.out.display()))?;
    let paths = RunPaths {
        dataset: settings.dataset.clone(),
        catalog: settings.catalog.clone(),
        library: settings.library.clone(),
        cache: settings.cache.clone(),
        predictions: settings.out.join(PREDICTIONS_FILE),
        traces: settings.out.join(TRACES_FILE),
        usage: settings.out.join(USAGE_FILE),
    };
    let summary = drive(
        &workflow,
        &tasks,
        settings.workers,
        &hash,
        &paths.predictions,
        &paths.traces,
    )?;

    let usage = gateway.ledger().snapshot();
    write_json(&paths.usage, &json_with_hash(&usage, &hash))?;
    let manifest = RunManifest {
        manifest_hash: hash,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        pipeline: settings.pipeline.clone(),
        replay: settings.replay,
        workers: settings.workers,
        endpoint: settings.endpoint.base_url.clone(),
        inputs,
        paths,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        summary,
    };
    write_json(&settings.out.join(MANIFEST_FILE), &manifest)?;
    if let Some(err) = &manifest.summary.systemic_error {
        return Err(CliError::endpoint(anyhow!("run stopped: {err}")));
    }
    Ok(RunOutcome { manifest })
}

fn json_with_hash<T: serde::Serialize>(value: &T, hash: &str) -> serde_json::Value {
    let mut v = serde_json::to_value(value).expect("usage serializes");
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("manifest_hash".into(), hash.into());
    }
    v
}

/// Worker pool feeding a single in-order writer.
fn drive(
    workflow: &Workflow,
    tasks: &[QuestionTask],
    workers: usize,
    hash: &str,
    predictions_path: &Path,
    traces_path: &Path,
) -> CliResult<RunSummary> {
    ensure_parent(predictions_path)?;
    let open = |p: &Path| {
        fs::File::create(p)
            .map(BufWriter::new)
            .with_context(|| format!("cannot create {}", p.display()))
    };
    let mut preds = open(predictions_path)?;
    let mut traces = open(traces_path)?;
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut summary = RunSummary {
        tasks: tasks.len(),
        ..RunSummary::default()
    };
    let mut template: Option<PipelineTrace> = None;

    let write_result = std::thread::scope(|scope| -> anyhow::Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, PipelineTrace)>();
        for _ in 0..workers.min(tasks.len().max(1)) {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let mut trace = workflow.run_pipeline(task);
                trace.manifest_hash = Some(hash.to_string());
                if trace.systemic {
                    stop.store(true, Ordering::SeqCst);
                }
                log::info!("[{}/{}] {} {:?}", i + 1, tasks.len(), task.db_id, trace.status);
                if tx.send((i, trace)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, PipelineTrace> = BTreeMap::new();
        let mut cursor = 0usize;
        let mut emit = |trace: &PipelineTrace, summary: &mut RunSummary| -> anyhow::Result<()> {
            let pred = Prediction {
                db_id: trace.task.db_id.clone(),
                question: trace.task.question.clone(),
                predicted_sql: trace.final_sql.clone(),
                manifest_hash: Some(hash.to_string()),
            };
            preds.write_all(jsonl_line(&pred).as_bytes())?;
            traces.write_all(jsonl_line(trace).as_bytes())?;
            match trace.status {
                TraceStatus::Ok => summary.ok += 1,
                TraceStatus::Failed => summary.failed += 1,
            }
            if !trace.fallbacks.is_empty() {
                summary.with_fallbacks += 1;
            }
            if trace.systemic && summary.systemic_error.is_none() {
                summary.systemic_error = trace.error.clone();
            }
            Ok(())
        };
        for (i, trace) in rx {
            if template.is_none() {
                template = Some(trace.clone());
            }
            pending.insert(i, trace);
            while let Some(t) = pending.remove(&cursor) {
                emit(&t, &mut summary)?;
                cursor += 1;
            }
        }
        // Anything still missing was never started because the run stopped.
        for i in cursor..tasks.len() {
            let t = match pending.remove(&i) {
                Some(t) => t,
                None => {
                    summary.skipped += 1;
                    let base = template.as_ref().expect("a stopped run produced at least one trace");
                    skipped_trace(
                        base,
                        &tasks[i],
                        "not run: an earlier question hit a systemic endpoint error",
                    )
                }
            };
            emit(&t, &mut summary)?;
        }
        Ok(())
    });
    write_result?;
    preds.flush().context("cannot write predictions")?;
    traces.flush().context("cannot write traces")?;
    Ok(summary)
}
