//! Operator surface for the sqlflow workflow: shot library builds, dataset
//! runs with replayable traces, execution-accuracy scoring and cost reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

use args::{Cli, Command, ConvertCommand, ShotsCommand};
use commands::{convert, cost, eval, run, shots};
use config::RunSettings;
use error::CliResult;

/// Execute one parsed command line, printing its human-readable output.
pub fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Shots(ShotsCommand::Build(a)) => {
            let report = shots::build(a)?;
            print!("{}", shots::render(&report));
            println!("library written to {}", a.out.display());
        }
        Command::Run(a) => {
            let settings = RunSettings::resolve(a)?;
            let outcome = run::run(&settings, None)?;
            let s = &outcome.manifest.summary;
            println!(
                "{} questions: {} ok, {} failed, {} with fallbacks",
                s.tasks, s.ok, s.failed, s.with_fallbacks
            );
            println!(
                "manifest {} in {}",
                outcome.manifest.manifest_hash,
                settings.out.display()
            );
        }
        Command::Eval(a) => {
            let report = eval::evaluate(a)?;
            print!("{}", report.render());
        }
        Command::ReportCost(a) => {
            let report = cost::report_cost(a)?;
            print!("{}", report.render());
        }
        Command::Convert(ConvertCommand::SpiderDev(a)) => {
            let n = convert::spider_dev(a)?;
            println!("{n} items written to {}", a.out.display());
        }
        Command::Convert(ConvertCommand::BirdDev(a)) => {
            let n = convert::bird_dev(a)?;
            println!("{n} items written to {}", a.out.display());
        }
    }
    Ok(())
}
