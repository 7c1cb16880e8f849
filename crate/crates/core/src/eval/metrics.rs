use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::UsageSnapshot;
use crate::task::Difficulty;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    PredError,
    Mismatch,
    Timeout,
}

impl FailureKind {
    pub const ALL: [FailureKind; 3] = [FailureKind::PredError, FailureKind::Mismatch, FailureKind::Timeout];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::PredError => "pred_error",
            FailureKind::Mismatch => "mismatch",
            FailureKind::Timeout => "timeout",
        }
    }
}

/// One scored item. `failure` is `None` exactly when `matched` holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub db_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    pub predicted_sql: String,
    pub gold_sql: String,
    #[serde(rename = "match")]
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl EvalRecord {
    pub fn is_consistent(&self) -> bool {
        self.matched == self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no evaluation records to aggregate")]
    EmptyRecordSet,
}

/// Round to three decimals, the precision every report uses.
pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub total: usize,
    pub matches: usize,
    /// `matches / total` to three decimals; `None` for an empty bucket.
    pub ex: Option<f64>,
}

impl BucketStats {
    fn add(&mut self, matched: bool) {
        self.total += 1;
        self.matches += usize::from(matched);
    }

    fn finish(mut self) -> Self {
        self.ex = (self.total > 0).then(|| round3(self.matches as f64 / self.total as f64));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub calls: u64,
    pub total_tokens: u64,
    pub avg_tokens_per_question: f64,
    pub avg_latency_ms_per_question: f64,
}

impl CostSummary {
    pub fn from_usage(usage: &UsageSnapshot, questions: usize) -> Self {
        let n = questions.max(1) as f64;
        CostSummary {
            calls: usage.total.calls,
            total_tokens: usage.total.total_tokens(),
            avg_tokens_per_question: usage.total.total_tokens() as f64 / n,
            avg_latency_ms_per_question: usage.total.latency_ms as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Difficulty buckets in Easy/Medium/Hard/Extra order.
    pub buckets: Vec<(Difficulty, BucketStats)>,
    pub overall: BucketStats,
    /// Items without a difficulty label; counted in `overall` only.
    pub unlabeled: usize,
    pub failures: BTreeMap<FailureKind, usize>,
    /// Items dropped because the gold query itself failed.
    pub invalid_gold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostSummary>,
}

impl MetricsReport {
    pub fn bucket(&self, d: Difficulty) -> &BucketStats {
        &self
            .buckets
            .iter()
            .find(|(b, _)| *b == d)
            .expect("all buckets present")
            .1
    }

    /// Plain-text table with one column per difficulty and a final `All`.
    pub fn render_table(&self) -> String {
        let cell = |s: &BucketStats, ex: bool| match (ex, s.ex) {
            (false, _) => s.total.to_string(),
            (true, Some(v)) => format!("{v:.3}"),
            (true, None) => "-".to_string(),
        };
        let mut out = String::new();
        let header = ["", "Easy", "Medium", "Hard", "Extra", "All"];
        for h in header {
            let _ = write!(out, "{h:<8}");
        }
        out = out.trim_end().to_string();
        out.push('\n');
        for (label, ex) in [("count", false), ("EX", true)] {
            let mut line = format!("{label:<8}");
            for (_, s) in &self.buckets {
                let _ = write!(line, "{:<8}", cell(s, ex));
            }
            line.push_str(&cell(&self.overall, ex));
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

/// Fold scored items into per-difficulty and overall execution accuracy.
pub fn aggregate(
    records: &[EvalRecord],
    invalid_gold: usize,
    usage: Option<&UsageSnapshot>,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecordSet);
    }
    let mut buckets: Vec<(Difficulty, BucketStats)> =
        Difficulty::ALL.iter().map(|d| (*d, BucketStats::default())).collect();
    let mut overall = BucketStats::default();
    let mut unlabeled = 0;
    let mut failures: BTreeMap<FailureKind, usize> = FailureKind::ALL.iter().map(|k| (*k, 0)).collect();
    for r in records {
        overall.add(r.matched);
        match r.difficulty {
            Some(d) => buckets[d as usize].1.add(r.matched),
            None => unlabeled += 1,
        }
        if let Some(kind) = r.failure {
            *failures.get_mut(&kind).expect("all kinds present") += 1;
        }
    }
    Ok(MetricsReport {
        buckets: buckets.into_iter().map(|(d, s)| (d, s.finish())).collect(),
        overall: overall.finish(),
        unlabeled,
        failures,
        invalid_gold,
        cost: usage.map(|u| CostSummary::from_usage(u, records.len())),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn rec(matched: bool, difficulty: Option<Difficulty>, failure: Option<FailureKind>) -> EvalRecord {
        EvalRecord {
            index: 0,
            db_id: "d".into(),
            question: "q".into(),
            difficulty,
            predicted_sql: "SELECT 1".into(),
            gold_sql: "SELECT 1".into(),
            matched,
            failure,
            reason: None,
        }
    }

    fn bucket_records(d: Difficulty, matches: usize, total: usize) -> Vec<EvalRecord> {
        (0..total)
            .map(|i| {
                if i < matches {
                    rec(true, Some(d), None)
                } else {
                    rec(false, Some(d), Some(FailureKind::Mismatch))
                }
            })
            .collect()
    }

    #[test]
    fn three_of_four() {
        let mut rs = vec![rec(true, None, None); 3];
        rs.push(rec(false, None, Some(FailureKind::PredError)));
        let m = aggregate(&rs, 0, None).unwrap();
        assert_eq!(m.overall.ex, Some(0.75));
        assert_eq!(m.unlabeled, 4);
        assert!(m.buckets.iter().all(|(_, b)| b.total == 0 && b.ex.is_none()));
        assert_eq!(m.failures[&FailureKind::PredError], 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(aggregate(&[], 0, None), Err(MetricsError::EmptyRecordSet));
    }

    #[test]
    fn zero_matches_tallies_every_kind() {
        let rs = vec![
            rec(false, None, Some(FailureKind::PredError)),
            rec(false, None, Some(FailureKind::Mismatch)),
            rec(false, None, Some(FailureKind::Timeout)),
        ];
        let m = aggregate(&rs, 2, None).unwrap();
        assert_eq!(m.overall.ex, Some(0.0));
        assert!(m.failures.values().all(|c| *c == 1));
        assert_eq!(m.invalid_gold, 2);
        assert!(m.render_table().contains("0.000"));
    }

    #[test]
    fn dev_bucket_counts_reproduce_the_reference_row() {
        let mut rs = Vec::new();
        for (d, m, t) in [
            (Difficulty::Easy, 221, 248),
            (Difficulty::Medium, 398, 446),
            (Difficulty::Hard, 147, 174),
            (Difficulty::Extra, 117, 166),
        ] {
            rs.extend(bucket_records(d, m, t));
        }
        let m = aggregate(&rs, 0, None).unwrap();
        let row: Vec<String> = m.buckets.iter().map(|(_, b)| format!("{:.3}", b.ex.unwrap())).collect();
        assert_eq!(row.join(" "), "0.891 0.892 0.845 0.705");
        assert_eq!(format!("{:.3}", m.overall.ex.unwrap()), "0.854");
        assert_eq!(m.overall.total, 1034);
        let table = m.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(
            lines[0].split_whitespace().collect::<Vec<_>>(),
            ["Easy", "Medium", "Hard", "Extra", "All"]
        );
        assert_eq!(
            lines[1].split_whitespace().collect::<Vec<_>>(),
            ["count", "248", "446", "174", "166", "1034"]
        );
        assert_eq!(
            lines[2].split_whitespace().collect::<Vec<_>>(),
            ["EX", "0.891", "0.892", "0.845", "0.705", "0.854"]
        );
    }

    #[test]
    fn cost_summary_divides_by_questions() {
        let mut usage = UsageSnapshot::default();
        usage.total.calls = 12;
        usage.total.prompt_tokens = 1000;
        usage.total.completion_tokens = 200;
        usage.total.latency_ms = 900;
        let m = aggregate(&[rec(true, None, None), rec(true, None, None)], 0, Some(&usage)).unwrap();
        let c = m.cost.unwrap();
        assert_eq!(c.avg_tokens_per_question, 600.0);
        assert_eq!(c.avg_latency_ms_per_question, 450.0);
    }

    fn arb_record() -> impl Strategy<Value = EvalRecord> {
        (
            prop::option::of(prop::sample::select(Difficulty::ALL.to_vec())),
            prop::option::of(prop::sample::select(FailureKind::ALL.to_vec())),
        )
            .prop_map(|(d, f)| rec(f.is_none(), d, f))
    }

    proptest! {
        #[test]
        fn counts_are_conserved(rs in prop::collection::vec(arb_record(), 1..60)) {
            let m = aggregate(&rs, 0, None).unwrap();
            let bucketed: usize = m.buckets.iter().map(|(_, b)| b.total).sum();
            prop_assert_eq!(bucketed + m.unlabeled, m.overall.total);
            prop_assert_eq!(m.overall.total, rs.len());
            let failed: usize = m.failures.values().sum();
            prop_assert_eq!(m.overall.matches + failed, rs.len());
            prop_assert_eq!(m.overall.ex.unwrap(), round3(m.overall.matches as f64 / rs.len() as f64));
        }
    }
}
