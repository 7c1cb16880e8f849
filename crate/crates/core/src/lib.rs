//! Staged LLM text-to-SQL workflow: schema handling, prompt rendering,
//! few-shot retrieval, the stage orchestrator and an execution-accuracy
//! evaluator.

pub mod eval;
pub mod llm;
pub mod prompt;
pub mod schema;
pub mod shots;
pub mod sql_lex;
pub mod task;
pub mod testing;
pub mod workflow;

pub use task::{Difficulty, Profile, QuestionClass, QuestionTask};
