//! Few-shot demonstrations: question skeletons, structural classes of gold
//! SQL, the class-partitioned library and its retrieval modes.

mod classify;
mod library;
mod similarity;
mod skeleton;

pub use classify::{classify_gold_sql, classify_gold_sql_or_join, UnparseableSql};
pub use library::{
    build_library, retrieve, BuildReport, FewShotExample, LibraryError, RetrievalMode, RetrievalQuery, Retrieved,
    ShotLibrary, TrainingItem,
};
pub use similarity::{strategy_by_name, SimilarityStrategy, TrigramCosine};
pub use skeleton::{build_skeleton, COL, TAB, VAL};
