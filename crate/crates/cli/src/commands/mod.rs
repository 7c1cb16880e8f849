pub mod convert;
pub mod cost;
pub mod eval;
pub mod run;
pub mod shots;
