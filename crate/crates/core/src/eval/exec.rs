use std::cmp::Ordering;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};

use crate::sql_lex::has_top_level_order_by;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// VM instructions between deadline checks.
const PROGRESS_STEP: i32 = 1000;

/// A result cell after normalization. Reals are rounded to six decimals and
/// an integral real collapses onto the equal integer, so `1.0` matches `1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    pub fn real(x: f64) -> Cell {
        if x.is_nan() {
            return Cell::Real(f64::NAN);
        }
        let r = (x * 1e6).round() / 1e6;
        if r.fract() == 0.0 && r.abs() < 9.0e15 {
            Cell::Int(r as i64)
        } else {
            // -0.0 cannot reach here: it is integral.
            Cell::Real(r)
        }
    }

    fn from_ref(v: ValueRef<'_>) -> Cell {
        match v {
            ValueRef::Null => Cell::Null,
            ValueRef::Integer(i) => Cell::Int(i),
            ValueRef::Real(x) => Cell::real(x),
            ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Int(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }
}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Int(a), Cell::Int(b)) => a.cmp(b),
            (Cell::Real(a), Cell::Real(b)) => a.total_cmp(b),
            // An Int never equals a Real after normalization.
            (Cell::Int(a), Cell::Real(b)) => (*a as f64).total_cmp(b).then(Ordering::Less),
            (Cell::Real(a), Cell::Int(b)) => a.total_cmp(&(*b as f64)).then(Ordering::Greater),
            (Cell::Text(a), Cell::Text(b)) => a.cmp(b),
            (Cell::Blob(a), Cell::Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cell {}

impl Hash for Cell {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Cell::Null => {}
            Cell::Int(i) => i.hash(state),
            Cell::Real(x) => x.to_bits().hash(state),
            Cell::Text(t) => t.hash(state),
            Cell::Blob(b) => b.hash(state),
        }
    }
}

pub type Row = Vec<Cell>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SqlError,
    Timeout,
}

/// Outcome of running one statement. `rows` is empty unless `status` is ok.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub rows: Vec<Row>,
    pub column_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExecResult {
    pub fn ok(column_count: usize, rows: Vec<Row>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == column_count));
        ExecResult {
            status: ExecStatus::Ok,
            rows,
            column_count,
            error: None,
        }
    }

    pub fn sql_error(message: impl Into<String>) -> Self {
        ExecResult {
            status: ExecStatus::SqlError,
            rows: Vec::new(),
            column_count: 0,
            error: Some(message.into()),
        }
    }

    pub fn timeout(after: Duration) -> Self {
        ExecResult {
            status: ExecStatus::Timeout,
            rows: Vec::new(),
            column_count: 0,
            error: Some(format!("interrupted after {} ms", after.as_millis())),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// Open `db_path` read-only. Missing files are an error, never created.
pub fn open_read_only(db_path: &Path) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(
        db_path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )?;
    conn.pragma_update(None, "query_only", true)?;
    Ok(conn)
}

/// Run `sql` against the database at `db_path` and fetch every row. Failures
/// of any kind come back as a non-ok status.
pub fn execute_sql(db_path: &Path, sql: &str, timeout: Duration) -> ExecResult {
    if !db_path.is_file() {
        return ExecResult::sql_error(format!("database not found: {}", db_path.display()));
    }
    match open_read_only(db_path) {
        Ok(conn) => execute_on(&conn, sql, timeout),
        Err(e) => ExecResult::sql_error(e.to_string()),
    }
}

/// [`execute_sql`] on an already open connection.
pub fn execute_on(conn: &Connection, sql: &str, timeout: Duration) -> ExecResult {
    let deadline = Instant::now() + timeout;
    conn.progress_handler(PROGRESS_STEP, Some(move || Instant::now() >= deadline));
    let result = run(conn, sql);
    conn.progress_handler(PROGRESS_STEP, None::<fn() -> bool>);
    match result {
        Ok((cols, rows)) => ExecResult::ok(cols, rows),
        Err(e) if e.sqlite_error_code() == Some(ErrorCode::OperationInterrupted) => ExecResult::timeout(timeout),
        Err(e) => ExecResult::sql_error(e.to_string()),
    }
}

fn run(conn: &Connection, sql: &str) -> rusqlite::Result<(usize, Vec<Row>)> {
    let sql = sql.trim().trim_end_matches(';').trim_end();
    let mut stmt = conn.prepare(sql)?;
    let cols = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        let mut cells = Vec::with_capacity(cols);
        for i in 0..cols {
            cells.push(Cell::from_ref(row.get_ref(i)?));
        }
        out.push(cells);
    }
    Ok((cols, out))
}

/// Execution-accuracy match. Row order matters only when the gold statement
/// sorts at its top level; otherwise rows compare as multisets.
pub fn exec_match(pred: &ExecResult, gold: &ExecResult, gold_sql: &str) -> bool {
    if !pred.is_ok() || !gold.is_ok() || pred.column_count != gold.column_count {
        return false;
    }
    if pred.rows.len() != gold.rows.len() {
        return false;
    }
    if has_top_level_order_by(gold_sql) {
        return pred.rows == gold.rows;
    }
    let mut a = pred.rows.clone();
    let mut b = gold.rows.clone();
    a.sort();
    b.sort();
    a == b
}
