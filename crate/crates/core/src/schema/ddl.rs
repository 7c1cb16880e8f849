//! CREATE TABLE rendering in the prompt style (one column per line, no
//! column commas, key constraints last) and the matching parser.

use std::fmt::Write as _;

use super::{ColumnDef, DatabaseSchema, ForeignKey, SchemaError, Selection, TableDef};

fn fk_selected(fk: &ForeignKey, selection: Option<&Selection>) -> bool {
    selection.map_or(true, |sel| {
        sel.contains_column(&fk.from_table, &fk.from_column) && sel.contains_column(&fk.to_table, &fk.to_column)
    })
}

/// Render `schema` (or the selected part of it) as prompt DDL.
pub fn render_ddl(schema: &DatabaseSchema, selection: Option<&Selection>) -> Result<String, SchemaError> {
    if let Some(sel) = selection {
        sel.validate(schema)?;
    }
    let mut blocks = Vec::new();
    for table in &schema.tables {
        if selection.is_some_and(|s| !s.contains_table(&table.name)) {
            continue;
        }
        let columns: Vec<&ColumnDef> = table
            .columns
            .iter()
            .filter(|c| selection.map_or(true, |s| s.contains_column(&table.name, &c.name)))
            .collect();
        let mut block = format!("CREATE TABLE {} (\n", table.name);
        for col in &columns {
            if col.sql_type.is_empty() {
                let _ = writeln!(block, "{}", col.name);
            } else {
                let _ = writeln!(block, "{} {}", col.name, col.sql_type);
            }
        }
        let mut constraints = Vec::new();
        let pk: Vec<&str> = columns
            .iter()
            .filter(|c| c.is_primary_key)
            .map(|c| c.name.as_str())
            .collect();
        if !pk.is_empty() {
            constraints.push(format!("PRIMARY KEY ({})", pk.join(", ")));
        }
        for fk in &schema.foreign_keys {
            if fk.from_table == table.name && fk_selected(fk, selection) {
                constraints.push(format!(
                    "FOREIGN KEY ({}) REFERENCES {}({})",
                    fk.from_column, fk.to_table, fk.to_column
                ));
            }
        }
        if !constraints.is_empty() {
            block.push_str(&constraints.join(",\n"));
            block.push('\n');
        }
        block.push_str(");");
        blocks.push(block);
    }
    Ok(blocks.join("\n\n"))
}

/// Foreign keys as `from_table.from_column = to_table.to_column`, catalog
/// order, restricted to keys whose endpoints are both selected.
pub fn render_link_info(schema: &DatabaseSchema, selection: Option<&Selection>) -> Vec<String> {
    schema
        .foreign_keys
        .iter()
        .filter(|fk| fk_selected(fk, selection))
        .map(ToString::to_string)
        .collect()
}

/// Parse DDL in the format produced by [`render_ddl`].
pub fn parse_ddl(db_id: &str, text: &str) -> Result<DatabaseSchema, SchemaError> {
    let mut tables: Vec<TableDef> = Vec::new();
    let mut pending_fks: Vec<ForeignKey> = Vec::new();
    let mut current: Option<TableDef> = None;
    let mut pk_cols: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim().trim_end_matches(',').trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| SchemaError::Invalid(format!("line {}: {msg}", lineno + 1));
        let upper = line.to_ascii_uppercase();
        if let Some(rest) = upper.strip_prefix("CREATE TABLE ") {
            if current.is_some() {
                return Err(err("nested CREATE TABLE"));
            }
            let name_len = rest.trim_end_matches('(').trim().len();
            let start = "CREATE TABLE ".len();
            current = Some(TableDef::new(line[start..start + name_len].trim(), Vec::new()));
            pk_cols.clear();
            continue;
        }
        let table = current.as_mut().ok_or_else(|| err("content outside CREATE TABLE"))?;
        if line == ");" || line == ")" {
            for col in &mut table.columns {
                if pk_cols.iter().any(|p| p.eq_ignore_ascii_case(&col.name)) {
                    col.is_primary_key = true;
                }
            }
            tables.push(current.take().unwrap());
        } else if upper.starts_with("PRIMARY KEY") {
            pk_cols.extend(paren_list(line).ok_or_else(|| err("bad PRIMARY KEY"))?);
        } else if upper.starts_with("FOREIGN KEY") {
            let from = paren_list(line).ok_or_else(|| err("bad FOREIGN KEY"))?;
            let refs = upper.find("REFERENCES").ok_or_else(|| err("missing REFERENCES"))?;
            let target = &line[refs + "REFERENCES".len()..];
            let open = target.find('(').ok_or_else(|| err("bad REFERENCES"))?;
            let to_table = target[..open].trim();
            let to = paren_list(&target[open..]).ok_or_else(|| err("bad REFERENCES"))?;
            for (f, t) in from.iter().zip(&to) {
                pending_fks.push(ForeignKey::new(&table.name, f, to_table, t));
            }
        } else {
            let (name, ty) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            table.columns.push(ColumnDef::new(name, ty.trim()));
        }
    }
    if current.is_some() {
        return Err(SchemaError::Invalid("unterminated CREATE TABLE".into()));
    }
    DatabaseSchema::new(db_id, tables, pending_fks)
}

fn paren_list(s: &str) -> Option<Vec<String>> {
    let open = s.find('(')?;
    let close = open + s[open..].find(')')?;
    Some(
        s[open + 1..close]
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect(),
    )
}
