//! Benchmark items and the small enums shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Dataset flavour. Selects prompt variants and hint handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Spider,
    Bird,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Spider => "spider",
            Profile::Bird => "bird",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spider" => Ok(Profile::Spider),
            "bird" => Ok(Profile::Bird),
            other => Err(format!("unknown profile `{other}` (expected spider or bird)")),
        }
    }
}

/// Structural class of the SQL a question needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionClass {
    Easy,
    Join,
    Nested,
    JoinNested,
}

impl QuestionClass {
    pub const ALL: [QuestionClass; 4] = [
        QuestionClass::Easy,
        QuestionClass::Join,
        QuestionClass::Nested,
        QuestionClass::JoinNested,
    ];

    /// Total map from the two binary labels onto the four classes.
    pub fn from_labels(join: bool, nested: bool) -> Self {
        match (join, nested) {
            (false, false) => QuestionClass::Easy,
            (true, false) => QuestionClass::Join,
            (false, true) => QuestionClass::Nested,
            (true, true) => QuestionClass::JoinNested,
        }
    }

    pub fn needs_join(self) -> bool {
        matches!(self, QuestionClass::Join | QuestionClass::JoinNested)
    }

    pub fn needs_nesting(self) -> bool {
        matches!(self, QuestionClass::Nested | QuestionClass::JoinNested)
    }

    pub fn index(self) -> usize {
        match self {
            QuestionClass::Easy => 0,
            QuestionClass::Join => 1,
            QuestionClass::Nested => 2,
            QuestionClass::JoinNested => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionClass::Easy => "easy",
            QuestionClass::Join => "join",
            QuestionClass::Nested => "nested",
            QuestionClass::JoinNested => "join_nested",
        }
    }
}

impl fmt::Display for QuestionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Difficulty label supplied alongside a dataset. Never computed here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::Extra,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Extra => "extra",
        }
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "easy" | "simple" => Ok(Difficulty::Easy),
            "medium" | "moderate" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            "extra" | "extra hard" | "extra_hard" | "challenging" => Ok(Difficulty::Extra),
            other => Err(format!("unknown difficulty label `{other}`")),
        }
    }
}

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTask {
    pub question: String,
    pub db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    /// Bird evidence text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

impl QuestionTask {
    pub fn new(question: impl Into<String>, db_id: impl Into<String>) -> Self {
        QuestionTask {
            question: question.into(),
            db_id: db_id.into(),
            gold_sql: None,
            hint: None,
            difficulty: None,
        }
    }

    pub fn with_gold(mut self, sql: impl Into<String>) -> Self {
        self.gold_sql = Some(sql.into());
        self
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = Some(hint.into());
        self
    }

    pub fn with_difficulty(mut self, difficulty: Difficulty) -> Self {
        self.difficulty = Some(difficulty);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.db_id.trim().is_empty() {
            return Err("db_id is empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_is_total_and_injective() {
        let mut seen = std::collections::HashSet::new();
        for join in [false, true] {
            for nested in [false, true] {
                let class = QuestionClass::from_labels(join, nested);
                assert_eq!(class.needs_join(), join);
                assert_eq!(class.needs_nesting(), nested);
                seen.insert(class);
            }
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn task_round_trips_without_optional_fields() {
        let task = QuestionTask::new("How many singers do we have?", "concert_singer");
        let json = serde_json::to_string(&task).unwrap();
        assert_eq!(
            json,
            r#"{"question":"How many singers do we have?","db_id":"concert_singer"}"#
        );
        let back: QuestionTask = serde_json::from_str(&json).unwrap();
        assert_eq!(back, task);
    }

    #[test]
    fn difficulty_accepts_bird_labels() {
        assert_eq!("simple".parse::<Difficulty>().unwrap(), Difficulty::Easy);
        assert_eq!("challenging".parse::<Difficulty>().unwrap(), Difficulty::Extra);
        assert!("unknown".parse::<Difficulty>().is_err());
    }
}
