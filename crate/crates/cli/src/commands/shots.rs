use anyhow::anyhow;
use sqlflow_core::schema::Catalog;
use sqlflow_core::shots::{build_library, BuildReport};

use crate::args::ShotsBuildArgs;
use crate::error::CliResult;
use crate::io::{ensure_parent, read_training, require_file};

pub fn build(args: &ShotsBuildArgs) -> CliResult<BuildReport> {
    require_file(&args.catalog, "catalog")?;
    require_file(&args.train, "training file")?;
    let catalog = Catalog::load(&args.catalog).map_err(|e| anyhow!("{}: {e}", args.catalog.display()))?;
    let items = read_training(&args.train)?;
    let (library, report) = build_library(&items, &catalog);
    ensure_parent(&args.out)?;
    library.save(&args.out).map_err(|e| anyhow!("{e}"))?;
    Ok(report)
}

pub fn render(report: &BuildReport) -> String {
    let mut out = String::new();
    for (class, n) in &report.class_counts {
        out.push_str(&format!("{:<12}{n}\n", class.as_str()));
    }
    out.push_str(&format!("{:<12}{}\n", "total", report.inserted));
    out.push_str(&format!("duplicates skipped: {}\n", report.duplicates));
    if !report.unknown_db.is_empty() {
        out.push_str(&format!("unknown databases skipped: {}\n", report.unknown_db.len()));
    }
    if report.unparseable_sql > 0 {
        out.push_str(&format!(
            "unparseable SQL filed under join: {}\n",
            report.unparseable_sql
        ));
    }
    out
}
