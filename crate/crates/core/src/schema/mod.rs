//! Database catalogs: loading, prompt rendering and pruning.
//!
//! Schemas are immutable once built and are shared behind `Arc` by the
//! pipeline workers.

mod catalog;
mod ddl;
mod prune;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{db_path, load_spider_catalog, parse_spider_catalog, Catalog, CatalogError};
pub use ddl::{parse_ddl, render_ddl, render_link_info};
pub use prune::prune_schema;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub sql_type: String,
    pub is_primary_key: bool,
    /// Set when the column is an endpoint of a foreign key in the source
    /// catalog. Survives pruning so that join keys stay visible even after
    /// the partner table has been dropped.
    #[serde(default)]
    pub in_foreign_key: bool,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, sql_type: impl Into<String>) -> Self {
        ColumnDef {
            name: name.into(),
            sql_type: sql_type.into(),
            is_primary_key: false,
            in_foreign_key: false,
        }
    }

    pub fn primary(mut self) -> Self {
        self.is_primary_key = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>) -> Self {
        TableDef {
            name: name.into(),
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        resolve_index(self.columns.iter().map(|c| c.name.as_str()), name)
            .ok()
            .map(|i| &self.columns[i])
    }

    pub fn primary_keys(&self) -> impl Iterator<Item = &ColumnDef> {
        self.columns.iter().filter(|c| c.is_primary_key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

impl ForeignKey {
    pub fn new(from_table: &str, from_column: &str, to_table: &str, to_column: &str) -> Self {
        ForeignKey {
            from_table: from_table.to_string(),
            from_column: from_column.to_string(),
            to_table: to_table.to_string(),
            to_column: to_column.to_string(),
        }
    }
}

impl fmt::Display for ForeignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{} = {}.{}",
            self.from_table, self.from_column, self.to_table, self.to_column
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub db_id: String,
    pub tables: Vec<TableDef>,
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sqlite_path: Option<PathBuf>,
}

impl DatabaseSchema {
    /// Builds a schema, checking every invariant and marking foreign-key
    /// endpoint columns.
    pub fn new(
        db_id: impl Into<String>,
        mut tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKey>,
    ) -> Result<Self, SchemaError> {
        let db_id = db_id.into();
        if db_id.trim().is_empty() {
            return Err(SchemaError::Invalid("db_id is empty".into()));
        }
        let mut table_names = BTreeSet::new();
        for table in &tables {
            if table.name.trim().is_empty() {
                return Err(SchemaError::Invalid(format!("{db_id}: empty table name")));
            }
            if !table_names.insert(table.name.to_lowercase()) {
                return Err(SchemaError::Invalid(format!(
                    "{db_id}: duplicate table `{}`",
                    table.name
                )));
            }
            if table.columns.is_empty() {
                return Err(SchemaError::Invalid(format!(
                    "{db_id}: table `{}` has no columns",
                    table.name
                )));
            }
            let mut col_names = BTreeSet::new();
            for col in &table.columns {
                if col.name.trim().is_empty() {
                    return Err(SchemaError::Invalid(format!(
                        "{db_id}: empty column name in `{}`",
                        table.name
                    )));
                }
                if !col_names.insert(col.name.to_lowercase()) {
                    return Err(SchemaError::Invalid(format!(
                        "{db_id}: duplicate column `{}.{}`",
                        table.name, col.name
                    )));
                }
            }
        }
        for fk in &foreign_keys {
            for (t, c) in [(&fk.from_table, &fk.from_column), (&fk.to_table, &fk.to_column)] {
                let (ti, ci) = locate(&tables, t, c)
                    .ok_or_else(|| SchemaError::Invalid(format!("{db_id}: foreign key endpoint `{t}.{c}` missing")))?;
                tables[ti].columns[ci].in_foreign_key = true;
            }
        }
        Ok(DatabaseSchema {
            db_id,
            tables,
            foreign_keys,
            sqlite_path: None,
        })
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        resolve_index(self.tables.iter().map(|t| t.name.as_str()), name)
            .ok()
            .map(|i| &self.tables[i])
    }

    /// Full selection of every table and column, in catalog order.
    pub fn full_selection(&self) -> Selection {
        let mut sel = Selection::new();
        for t in &self.tables {
            sel.add_columns(&t.name, t.columns.iter().map(|c| c.name.as_str()));
        }
        sel
    }

    /// Resolve a table name: exact match first, then the unique
    /// case-insensitive match, else an error carrying a suggestion.
    pub fn resolve_table(&self, name: &str) -> Result<&TableDef, NameError> {
        resolve_index(self.tables.iter().map(|t| t.name.as_str()), name)
            .map(|i| &self.tables[i])
            .map_err(|suggestion| NameError::UnknownTable {
                name: name.to_string(),
                suggestion,
            })
    }

    pub fn resolve_column<'a>(&'a self, table: &'a TableDef, name: &str) -> Result<&'a ColumnDef, NameError> {
        resolve_index(table.columns.iter().map(|c| c.name.as_str()), name)
            .map(|i| &table.columns[i])
            .map_err(|suggestion| NameError::UnknownColumn {
                table: table.name.clone(),
                name: name.to_string(),
                suggestion,
            })
    }
}

fn locate(tables: &[TableDef], table: &str, column: &str) -> Option<(usize, usize)> {
    let ti = resolve_index(tables.iter().map(|t| t.name.as_str()), table).ok()?;
    let ci = resolve_index(tables[ti].columns.iter().map(|c| c.name.as_str()), column).ok()?;
    Some((ti, ci))
}

/// Exact match preferred, then unique case-insensitive match. On failure,
/// returns the closest candidate as a suggestion.
pub(crate) fn resolve_index<'a>(
    candidates: impl Iterator<Item = &'a str> + Clone,
    name: &str,
) -> Result<usize, Option<String>> {
    let name = name.trim();
    if let Some(i) = candidates.clone().position(|c| c == name) {
        return Ok(i);
    }
    let folded: Vec<usize> = candidates
        .clone()
        .enumerate()
        .filter(|(_, c)| c.eq_ignore_ascii_case(name))
        .map(|(i, _)| i)
        .collect();
    if folded.len() == 1 {
        return Ok(folded[0]);
    }
    Err(suggest(candidates, name))
}

fn suggest<'a>(candidates: impl Iterator<Item = &'a str>, name: &str) -> Option<String> {
    let needle = name.to_lowercase();
    let limit = (needle.chars().count() / 3).max(1);
    candidates
        .map(|c| (strsim::damerau_levenshtein(&c.to_lowercase(), &needle), c))
        .filter(|(d, _)| *d <= limit)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.to_string())
}

/// Tables and columns picked out of a schema. Names are compared
/// case-insensitively; a table added without columns selects all of them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    tables: BTreeMap<String, SelectedTable>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SelectedTable {
    name: String,
    /// `None` means every column.
    columns: Option<BTreeMap<String, String>>,
}

impl Selection {
    pub fn new() -> Self {
        Self::default()
    }

    /// Select a whole table.
    pub fn add_table(&mut self, table: &str) -> &mut Self {
        let entry = self.entry(table);
        entry.columns = None;
        self
    }

    pub fn add_columns<'a>(&mut self, table: &str, columns: impl IntoIterator<Item = &'a str>) -> &mut Self {
        let entry = self.entry(table);
        if let Some(cols) = entry.columns.as_mut() {
            for c in columns {
                cols.entry(c.trim().to_lowercase())
                    .or_insert_with(|| c.trim().to_string());
            }
        }
        self
    }

    fn entry(&mut self, table: &str) -> &mut SelectedTable {
        self.tables
            .entry(table.trim().to_lowercase())
            .or_insert_with(|| SelectedTable {
                name: table.trim().to_string(),
                columns: Some(BTreeMap::new()),
            })
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn contains_table(&self, table: &str) -> bool {
        self.tables.contains_key(&table.to_lowercase())
    }

    pub fn contains_column(&self, table: &str, column: &str) -> bool {
        match self.tables.get(&table.to_lowercase()) {
            Some(SelectedTable { columns: None, .. }) => true,
            Some(SelectedTable {
                columns: Some(cols), ..
            }) => cols.contains_key(&column.to_lowercase()),
            None => false,
        }
    }

    /// (table name, explicitly selected column names or `None` for all).
    pub fn entries(&self) -> impl Iterator<Item = (&str, Option<Vec<&str>>)> {
        self.tables.values().map(|t| {
            (
                t.name.as_str(),
                t.columns.as_ref().map(|c| c.values().map(String::as_str).collect()),
            )
        })
    }

    /// Check every name against `schema`, collecting all failures.
    pub fn validate(&self, schema: &DatabaseSchema) -> Result<(), SchemaError> {
        let mut errors = Vec::new();
        for (table, columns) in self.entries() {
            match schema.resolve_table(table) {
                Ok(def) => {
                    for col in columns.into_iter().flatten() {
                        if let Err(e) = schema.resolve_column(def, col) {
                            errors.push(e);
                        }
                    }
                }
                Err(e) => errors.push(e),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SchemaError::UnknownNames(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("unknown table `{name}`{}", hint(.suggestion))]
    UnknownTable { name: String, suggestion: Option<String> },
    #[error("unknown column `{table}.{name}`{}", hint(.suggestion))]
    UnknownColumn {
        table: String,
        name: String,
        suggestion: Option<String>,
    },
}

impl NameError {
    pub fn suggestion(&self) -> Option<&str> {
        match self {
            NameError::UnknownTable { suggestion, .. } | NameError::UnknownColumn { suggestion, .. } => {
                suggestion.as_deref()
            }
        }
    }
}

fn hint(suggestion: &Option<String>) -> String {
    suggestion
        .as_ref()
        .map(|s| format!(" (did you mean `{s}`?)"))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("{}", join_errors(.0))]
    UnknownNames(Vec<NameError>),
    #[error("selection is empty")]
    EmptySelection,
    #[error("invalid schema: {0}")]
    Invalid(String),
}

fn join_errors(errors: &[NameError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// The concert/stadium pair used throughout the prompt examples.
    pub fn stadium_concert() -> DatabaseSchema {
        DatabaseSchema::new(
            "concert_singer",
            vec![
                TableDef::new(
                    "stadium",
                    vec![
                        ColumnDef::new("Stadium_ID", "int").primary(),
                        ColumnDef::new("Location", "text"),
                        ColumnDef::new("Name", "text"),
                        ColumnDef::new("Capacity", "int"),
                    ],
                ),
                TableDef::new(
                    "concert",
                    vec![
                        ColumnDef::new("concert_ID", "int").primary(),
                        ColumnDef::new("concert_Name", "text"),
                        ColumnDef::new("Theme", "text"),
                        ColumnDef::new("Stadium_ID", "text"),
                        ColumnDef::new("Year", "text"),
                    ],
                ),
            ],
            vec![ForeignKey::new("concert", "Stadium_ID", "stadium", "Stadium_ID")],
        )
        .unwrap()
    }

    /// Three tables, three foreign keys.
    pub fn pets() -> DatabaseSchema {
        DatabaseSchema::new(
            "pets_1",
            vec![
                TableDef::new(
                    "Student",
                    vec![
                        ColumnDef::new("StuID", "INTEGER").primary(),
                        ColumnDef::new("LName", "VARCHAR(12)"),
                        ColumnDef::new("Age", "INTEGER"),
                        ColumnDef::new("Advisor", "INTEGER"),
                    ],
                ),
                TableDef::new(
                    "Has_Pet",
                    vec![ColumnDef::new("StuID", "INTEGER"), ColumnDef::new("PetID", "INTEGER")],
                ),
                TableDef::new(
                    "Pets",
                    vec![
                        ColumnDef::new("PetID", "INTEGER").primary(),
                        ColumnDef::new("PetType", "VARCHAR(20)"),
                        ColumnDef::new("weight", "REAL"),
                    ],
                ),
            ],
            vec![
                ForeignKey::new("Has_Pet", "StuID", "Student", "StuID"),
                ForeignKey::new("Has_Pet", "PetID", "Pets", "PetID"),
                ForeignKey::new("Student", "Advisor", "Student", "StuID"),
            ],
        )
        .unwrap()
    }
}
