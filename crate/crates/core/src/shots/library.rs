use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{build_skeleton, classify_gold_sql_or_join, SimilarityStrategy};
use crate::schema::{Catalog, DatabaseSchema};
use crate::QuestionClass;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    pub skeleton: String,
    pub sql: String,
    pub class: QuestionClass,
    pub db_id: String,
}

impl FewShotExample {
    pub fn new(
        question: impl Into<String>,
        skeleton: impl Into<String>,
        sql: impl Into<String>,
        class: QuestionClass,
        db_id: impl Into<String>,
    ) -> Self {
        FewShotExample {
            question: question.into(),
            skeleton: skeleton.into(),
            sql: sql.into(),
            class,
            db_id: db_id.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Deduplicated demonstrations in insertion order, with one index list per
/// class. Every example sits in exactly one partition.
#[derive(Debug, Clone, Default)]
pub struct ShotLibrary {
    examples: Vec<FewShotExample>,
    partitions: [Vec<usize>; 4],
    seen: HashSet<(String, String)>,
}

impl ShotLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the example unless its (question, sql) pair is already present.
    pub fn insert(&mut self, example: FewShotExample) -> bool {
        if !self.seen.insert((example.question.clone(), example.sql.clone())) {
            return false;
        }
        self.partitions[example.class.index()].push(self.examples.len());
        self.examples.push(example);
        true
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[FewShotExample] {
        &self.examples
    }

    pub fn partition(&self, class: QuestionClass) -> impl Iterator<Item = &FewShotExample> {
        self.partitions[class.index()].iter().map(|&i| &self.examples[i])
    }

    pub fn class_counts(&self) -> BTreeMap<QuestionClass, usize> {
        QuestionClass::ALL
            .iter()
            .map(|&c| (c, self.partitions[c.index()].len()))
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LibraryError> {
        let mut lib = ShotLibrary::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(line).map_err(|source| LibraryError::Json { line: n + 1, source })?;
            lib.insert(ex);
        }
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self, LibraryError> {
        let io = |source| LibraryError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::open(path).map_err(io)?;
        let mut lib = ShotLibrary::new();
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(&line).map_err(|source| LibraryError::Json { line: n + 1, source })?;
            lib.insert(ex);
        }
        Ok(lib)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), LibraryError> {
        let io = |source| LibraryError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }
}

/// One training pair offered to [`build_library`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingItem {
    pub question: String,
    #[serde(alias = "query")]
    pub sql: String,
    pub db_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub inserted: usize,
    pub duplicates: usize,
    /// Items whose db_id is not in the catalog.
    pub unknown_db: Vec<String>,
    /// Items whose SQL could not be classified and defaulted to Join.
    pub unparseable_sql: usize,
    pub class_counts: BTreeMap<QuestionClass, usize>,
}

pub fn build_library(items: &[TrainingItem], catalog: &Catalog) -> (ShotLibrary, BuildReport) {
    let mut lib = ShotLibrary::new();
    let mut report = BuildReport::default();
    for item in items {
        let Some(schema) = catalog.get(&item.db_id) else {
            log::warn!("skipping training item for unknown database `{}`", item.db_id);
            report.unknown_db.push(item.db_id.clone());
            continue;
        };
        let (class, flagged) = classify_gold_sql_or_join(&item.sql);
        if flagged {
            report.unparseable_sql += 1;
        }
        let ex = FewShotExample::new(
            item.question.clone(),
            build_skeleton(&item.question, schema),
            item.sql.clone(),
            class,
            item.db_id.clone(),
        );
        if lib.insert(ex) {
            report.inserted += 1;
        } else {
            report.duplicates += 1;
        }
    }
    report.class_counts = lib.class_counts();
    (lib, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    ZeroShot,
    Random,
    QuesSim,
    #[default]
    TemSim,
    TemSimWo,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 5] = [
        RetrievalMode::ZeroShot,
        RetrievalMode::Random,
        RetrievalMode::QuesSim,
        RetrievalMode::TemSim,
        RetrievalMode::TemSimWo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::ZeroShot => "zero_shot",
            RetrievalMode::Random => "random",
            RetrievalMode::QuesSim => "ques_sim",
            RetrievalMode::TemSim => "tem_sim",
            RetrievalMode::TemSimWo => "tem_sim_wo",
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RetrievalMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            format!("unknown shot mode `{s}` (expected zero_shot, random, ques_sim, tem_sim or tem_sim_wo)")
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<'a> {
    pub example: &'a FewShotExample,
    /// Similarity score; `None` under random draws.
    pub score: Option<f64>,
}

pub struct RetrievalQuery<'a> {
    pub mode: RetrievalMode,
    pub class: QuestionClass,
    pub question: &'a str,
    pub schema: &'a DatabaseSchema,
    pub k: usize,
    pub seed: u64,
}

/// Up to `k` demonstrations, best first. Equal scores keep library order,
/// except that an exact text match outranks other perfect scores.
pub fn retrieve<'a>(
    library: &'a ShotLibrary,
    query: &RetrievalQuery<'_>,
    strategy: &dyn SimilarityStrategy,
) -> Vec<Retrieved<'a>> {
    if query.k == 0 {
        return Vec::new();
    }
    let pool: Vec<&FewShotExample> = match query.mode {
        RetrievalMode::ZeroShot => return Vec::new(),
        RetrievalMode::TemSimWo => library.examples().iter().collect(),
        _ => library.partition(query.class).collect(),
    };
    match query.mode {
        RetrievalMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(query.seed ^ text_seed(query.question));
            let k = query.k.min(pool.len());
            rand::seq::index::sample(&mut rng, pool.len(), k)
                .into_iter()
                .map(|i| Retrieved {
                    example: pool[i],
                    score: None,
                })
                .collect()
        }
        RetrievalMode::QuesSim => rank(pool, query.question, |e| &e.question, query.k, strategy),
        _ => {
            let skeleton = build_skeleton(query.question, query.schema);
            rank(pool, &skeleton, |e| &e.skeleton, query.k, strategy)
        }
    }
}

fn rank<'a>(
    pool: Vec<&'a FewShotExample>,
    probe: &str,
    field: impl Fn(&FewShotExample) -> &str,
    k: usize,
    strategy: &dyn SimilarityStrategy,
) -> Vec<Retrieved<'a>> {
    let mut scored: Vec<(f64, bool, usize, &FewShotExample)> = pool
        .into_iter()
        .enumerate()
        .map(|(i, e)| (strategy.score(probe, field(e)), field(e) == probe, i, e))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    scored
        .into_iter()
        .take(k)
        .map(|(s, _, _, e)| Retrieved {
            example: e,
            score: Some(s),
        })
        .collect()
}

fn text_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}
