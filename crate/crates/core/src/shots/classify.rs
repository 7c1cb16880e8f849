use thiserror::Error;

use crate::sql_lex::{tokenize, Token, TokenKind};
use crate::QuestionClass;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable SQL: {0}")]
pub struct UnparseableSql(pub String);

const CLAUSE_END: [&str; 11] = [
    "where",
    "group",
    "order",
    "having",
    "limit",
    "union",
    "intersect",
    "except",
    "on",
    "using",
    "window",
];

/// Structural class of a gold query.
///
/// Join: an explicit JOIN, or a FROM list of two or more relations at any
/// depth. Nested: a SELECT inside parentheses, or a set operator.
pub fn classify_gold_sql(sql: &str) -> Result<QuestionClass, UnparseableSql> {
    let tokens = tokenize(sql).map_err(|e| UnparseableSql(e.to_string()))?;
    let first = tokens.first().ok_or_else(|| UnparseableSql("empty statement".into()))?;
    if !(first.is_kw("select") || first.is_kw("with")) {
        return Err(UnparseableSql(format!("statement starts with `{}`", first.text)));
    }
    if let Some(semi) = tokens.iter().position(|t| t.kind == TokenKind::Semicolon) {
        if tokens[semi + 1..].iter().any(|t| t.kind != TokenKind::Semicolon) {
            return Err(UnparseableSql("more than one statement".into()));
        }
    }
    let join = tokens.iter().any(|t| t.is_kw("join"))
        || tokens
            .iter()
            .enumerate()
            .any(|(i, t)| t.is_kw("from") && from_list_len(&tokens[i + 1..], t.depth) >= 2);
    let nested = tokens
        .iter()
        .any(|t| (t.is_kw("select") && t.depth > 0) || t.is_kw("union") || t.is_kw("intersect") || t.is_kw("except"));
    Ok(QuestionClass::from_labels(join, nested))
}

/// [`classify_gold_sql`] with the Join fallback; the flag marks a fallback.
pub fn classify_gold_sql_or_join(sql: &str) -> (QuestionClass, bool) {
    match classify_gold_sql(sql) {
        Ok(c) => (c, false),
        Err(_) => (QuestionClass::Join, true),
    }
}

/// Relations in the FROM list that starts right after `FROM` at `depth`.
fn from_list_len(rest: &[Token], depth: usize) -> usize {
    let mut count = 1;
    for t in rest {
        if t.depth < depth {
            break;
        }
        if t.depth != depth {
            continue;
        }
        if t.kind == TokenKind::Semicolon || CLAUSE_END.iter().any(|kw| t.is_kw(kw)) {
            break;
        }
        if t.kind == TokenKind::Comma {
            count += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use QuestionClass::*;

    #[test]
    fn plain_aggregate_is_easy() {
        assert_eq!(classify_gold_sql("SELECT avg(hours) FROM projects").unwrap(), Easy);
        assert_eq!(classify_gold_sql("SELECT count(*) FROM singer;").unwrap(), Easy);
    }

    #[test]
    fn except_with_join_is_join_nested() {
        let sql = "SELECT name FROM stadium EXCEPT SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_ID = T2.stadium_ID WHERE T1.year = 2014";
        assert_eq!(classify_gold_sql(sql).unwrap(), JoinNested);
    }

    #[test]
    fn in_subquery_is_nested() {
        assert_eq!(
            classify_gold_sql("SELECT a FROM t WHERE x IN (SELECT x FROM u)").unwrap(),
            Nested
        );
    }

    #[test]
    fn in_literal_list_is_not_nested() {
        assert_eq!(classify_gold_sql("SELECT a FROM t WHERE x IN (1, 2, 3)").unwrap(), Easy);
    }

    #[test]
    fn comma_join_counts_at_any_depth() {
        assert_eq!(
            classify_gold_sql("SELECT a.x FROM a, b WHERE a.id = b.id").unwrap(),
            Join
        );
        assert_eq!(
            classify_gold_sql("SELECT x FROM t WHERE y > (SELECT max(y) FROM u, v WHERE u.k = v.k)").unwrap(),
            JoinNested
        );
    }

    #[test]
    fn select_list_commas_are_not_relations() {
        assert_eq!(classify_gold_sql("SELECT a, b, c FROM t ORDER BY a, b").unwrap(), Easy);
        assert_eq!(
            classify_gold_sql("SELECT count(*), max(a) FROM t GROUP BY b, c").unwrap(),
            Easy
        );
    }

    #[test]
    fn subquery_in_from_ends_at_its_paren() {
        let sql = "SELECT n FROM (SELECT name AS n FROM singer) WHERE n > 1";
        assert_eq!(classify_gold_sql(sql).unwrap(), Nested);
    }

    #[test]
    fn unparseable_falls_back_to_join() {
        assert!(classify_gold_sql("SELECT 'oops FROM t").is_err());
        assert!(classify_gold_sql("DELETE FROM t").is_err());
        assert!(classify_gold_sql("SELECT 1; SELECT 2").is_err());
        assert_eq!(classify_gold_sql_or_join(""), (Join, true));
        assert_eq!(classify_gold_sql_or_join("SELECT 1"), (Easy, false));
    }
}
