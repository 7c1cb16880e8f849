//! Run settings: a TOML file overlaid with command-line flags.
//!
//! Relative paths inside the file resolve against the file's directory.
//! Flags always win.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sqlflow_core::llm::ReplayMode;
use sqlflow_core::workflow::{Ablations, PipelineConfig};

use crate::args::RunArgs;
use crate::io::read_text;

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: DEFAULT_BASE_URL.into(),
            timeout_secs: 120,
        }
    }
}

/// Shape of the `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub db_root: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub replay: Option<ReplayMode>,
    pub workers: Option<usize>,
    /// Comma list, merged into `pipeline.ablations`.
    pub ablate: Option<String>,
    pub pipeline: PipelineConfig,
    pub endpoint: EndpointConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset,
            &mut cfg.catalog,
            &mut cfg.db_root,
            &mut cfg.library,
            &mut cfg.cache,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Everything `run` needs, fully resolved.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub dataset: PathBuf,
    pub catalog: PathBuf,
    pub db_root: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub cache: PathBuf,
    pub out: PathBuf,
    pub replay: ReplayMode,
    pub workers: usize,
    pub sample: Option<usize>,
    pub pipeline: PipelineConfig,
    pub endpoint: EndpointConfig,
}

impl RunSettings {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let mut pipeline = file.pipeline.clone();
        if let Some(list) = &file.ablate {
            merge_ablations(&mut pipeline.ablations, list)?;
        }
        if let Some(list) = &args.ablate {
            merge_ablations(&mut pipeline.ablations, list)?;
        }
        if let Some(mode) = args.shots {
            pipeline.shot_mode = mode;
        }
        if let Some(k) = args.k {
            pipeline.shot_count = k;
        }
        if let Some(p) = args.profile {
            pipeline.profile = p;
        }
        if let Some(seed) = args.seed {
            pipeline.seed = seed;
        }
        if let Some(model) = &args.model {
            pipeline.model = model.clone();
        }
        let mut endpoint = file.endpoint.clone();
        if let Some(url) = &args.base_url {
            endpoint.base_url = url.clone();
        }
        let required = |flag: Option<&PathBuf>, file: Option<&PathBuf>, name: &str| {
            flag.or(file)
                .cloned()
                .ok_or_else(|| anyhow!("missing --{name} (or `{name}` in the config file)"))
        };
        let out = required(args.out.as_ref(), file.out.as_ref(), "out")?;
        let workers = args.workers.or(file.workers).unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            return Err(anyhow!("--workers must be at least 1"));
        }
        Ok(RunSettings {
            dataset: required(args.dataset.as_ref(), file.dataset.as_ref(), "dataset")?,
            catalog: required(args.catalog.as_ref(), file.catalog.as_ref(), "catalog")?,
            db_root: args.db_root.clone().or(file.db_root),
            library: args.library.clone().or(file.library),
            cache: args.cache.clone().or(file.cache).unwrap_or_else(|| out.join("cache")),
            replay: args.replay.or(file.replay).unwrap_or_default(),
            workers,
            sample: args.sample,
            out,
            pipeline,
            endpoint,
        })
    }
}

fn merge_ablations(into: &mut Ablations, list: &str) -> Result<()> {
    for flag in list.split(',').map(str::trim).filter(|f| !f.is_empty()) {
        into.set(flag).map_err(|e| anyhow!(e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use clap::Parser;

    use super::*;
    use crate::args::{Cli, Command};

    fn run_args(argv: &[&str]) -> RunArgs {
        match Cli::parse_from(argv).command {
            Command::Run(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_file_and_paths_resolve_against_it() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(
            &cfg,
            "dataset = \"data/dev.jsonl\"\ncatalog = \"tables.json\"\nout = \"/abs/out\"\nablate = \"hfk\"\nworkers = 2\n\n[pipeline]\nshot_count = 5\nprofile = \"bird\"\n\n[endpoint]\nbase_url = \"http://localhost:9\"\n",
        )
        .unwrap();
        let args = run_args(&[
            "sqlflow",
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--k",
            "2",
            "--ablate",
            "self_correct",
        ]);
        let s = RunSettings::resolve(&args).unwrap();
        assert_eq!(s.dataset, dir.path().join("data/dev.jsonl"));
        assert_eq!(s.out, PathBuf::from("/abs/out"));
        assert_eq!(s.cache, PathBuf::from("/abs/out/cache"));
        assert_eq!(s.pipeline.shot_count, 2);
        assert_eq!(s.pipeline.profile, sqlflow_core::Profile::Bird);
        assert_eq!(s.pipeline.ablations.names(), ["self_correct", "hfk"]);
        assert_eq!(s.workers, 2);
        assert_eq!(s.replay, ReplayMode::Record);
        assert_eq!(s.endpoint.base_url, "http://localhost:9");
    }

    #[test]
    fn defaults_without_a_file() {
        let s = RunSettings::resolve(&run_args(&[
            "sqlflow",
            "run",
            "--dataset",
            "d",
            "--catalog",
            "c",
            "--out",
            "o",
        ]))
        .unwrap();
        assert_eq!(s.pipeline, PipelineConfig::default());
        assert_eq!(s.workers, DEFAULT_WORKERS);
        assert_eq!(s.endpoint, EndpointConfig::default());
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(RunSettings::resolve(&run_args(&["sqlflow", "run", "--catalog", "c", "--out", "o"])).is_err());
        let bad = run_args(&[
            "sqlflow",
            "run",
            "--dataset",
            "d",
            "--catalog",
            "c",
            "--out",
            "o",
            "--ablate",
            "nope",
        ]);
        assert!(RunSettings::resolve(&bad)
            .unwrap_err()
            .to_string()
            .contains("unknown ablation flag"));
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("x.toml");
        std::fs::write(&cfg, "colour = 1\n").unwrap();
        let a = run_args(&["sqlflow", "run", "--config", cfg.to_str().unwrap()]);
        assert!(RunSettings::resolve(&a).is_err());
    }
}
