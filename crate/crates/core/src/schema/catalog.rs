use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use super::{ColumnDef, DatabaseSchema, ForeignKey, TableDef};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed catalog entry {db_id}: {reason}")]
    MalformedCatalog { db_id: String, reason: String },
    #[error("duplicate db_id `{0}` in catalog")]
    DuplicateDbId(String),
}

fn malformed(db_id: &str, reason: impl Into<String>) -> CatalogError {
    CatalogError::MalformedCatalog {
        db_id: db_id.to_string(),
        reason: reason.into(),
    }
}

#[derive(Deserialize)]
struct RawEntry {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<RawKey>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

/// Bird catalogs list composite keys as nested arrays.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawKey {
    One(usize),
    Many(Vec<usize>),
}

/// Load a Spider-format `tables.json`.
pub fn load_spider_catalog(path: &Path) -> Result<BTreeMap<String, DatabaseSchema>, CatalogError> {
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spider_catalog(&text)
}

pub fn parse_spider_catalog(text: &str) -> Result<BTreeMap<String, DatabaseSchema>, CatalogError> {
    let entries: Vec<serde_json::Value> = serde_json::from_str(text)?;
    let mut out = BTreeMap::new();
    for (pos, value) in entries.into_iter().enumerate() {
        let label = value
            .get("db_id")
            .and_then(|v| v.as_str())
            .map_or_else(|| format!("#{pos}"), str::to_string);
        let raw: RawEntry = serde_json::from_value(value).map_err(|e| malformed(&label, e.to_string()))?;
        let schema = convert(raw)?;
        if out.contains_key(&schema.db_id) {
            return Err(CatalogError::DuplicateDbId(schema.db_id));
        }
        out.insert(schema.db_id.clone(), schema);
    }
    Ok(out)
}

fn convert(raw: RawEntry) -> Result<DatabaseSchema, CatalogError> {
    let db = raw.db_id.as_str();
    if raw.column_types.len() != raw.column_names_original.len() {
        return Err(malformed(
            db,
            format!(
                "{} column names but {} column types",
                raw.column_names_original.len(),
                raw.column_types.len()
            ),
        ));
    }
    let mut tables: Vec<TableDef> = raw
        .table_names_original
        .iter()
        .map(|n| TableDef::new(n.clone(), Vec::new()))
        .collect();
    // Global column index -> (table, position within table).
    let mut index: Vec<Option<(usize, usize)>> = Vec::with_capacity(raw.column_names_original.len());
    for (i, ((table_idx, name), ty)) in raw.column_names_original.iter().zip(&raw.column_types).enumerate() {
        if *table_idx < 0 {
            // The "*" pseudo-column.
            index.push(None);
            continue;
        }
        let t = usize::try_from(*table_idx).unwrap_or(usize::MAX);
        let table = tables
            .get_mut(t)
            .ok_or_else(|| malformed(db, format!("column {i} refers to table index {t}")))?;
        index.push(Some((t, table.columns.len())));
        table.columns.push(ColumnDef::new(name.clone(), ty.clone()));
    }
    let lookup = |i: usize| -> Result<(usize, usize), CatalogError> {
        index
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| malformed(db, format!("column index {i} out of range")))
    };
    for key in &raw.primary_keys {
        let cols = match key {
            RawKey::One(i) => vec![*i],
            RawKey::Many(v) => v.clone(),
        };
        for i in cols {
            let (t, c) = lookup(i)?;
            tables[t].columns[c].is_primary_key = true;
        }
    }
    let mut fks = Vec::with_capacity(raw.foreign_keys.len());
    for &(from, to) in &raw.foreign_keys {
        let (ft, fc) = lookup(from)?;
        let (tt, tc) = lookup(to)?;
        fks.push(ForeignKey {
            from_table: tables[ft].name.clone(),
            from_column: tables[ft].columns[fc].name.clone(),
            to_table: tables[tt].name.clone(),
            to_column: tables[tt].columns[tc].name.clone(),
        });
    }
    DatabaseSchema::new(raw.db_id.clone(), tables, fks).map_err(|e| malformed(db, e.to_string()))
}

/// All schemas for a benchmark, keyed by db_id.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    schemas: BTreeMap<String, Arc<DatabaseSchema>>,
}

impl Catalog {
    pub fn new(schemas: impl IntoIterator<Item = DatabaseSchema>) -> Self {
        Catalog {
            schemas: schemas.into_iter().map(|s| (s.db_id.clone(), Arc::new(s))).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        Ok(Self::new(load_spider_catalog(path)?.into_values()))
    }

    /// Point every schema at `<db_root>/<db_id>/<db_id>.sqlite`.
    pub fn with_db_root(self, db_root: &Path) -> Self {
        Catalog {
            schemas: self
                .schemas
                .into_iter()
                .map(|(id, s)| {
                    let mut s = Arc::unwrap_or_clone(s);
                    s.sqlite_path = Some(db_path(db_root, &id));
                    (id, Arc::new(s))
                })
                .collect(),
        }
    }

    pub fn get(&self, db_id: &str) -> Option<&Arc<DatabaseSchema>> {
        self.schemas.get(db_id)
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<DatabaseSchema>> {
        self.schemas.values()
    }
}

pub fn db_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}
