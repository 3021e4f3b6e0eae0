//! Command-line runner for the linbp-core experiments. Every subcommand emits
//! CSV rows in one schema and, optionally, an SVG line plot.

pub mod commands;
pub mod error;
pub mod plot;
pub mod record;

pub use commands::{Cli, Command, Opts};
pub use error::{CliError, Result};
pub use plot::write_svg_lineplot;
pub use record::{write_csv, RunRecord};

use clap::{CommandFactory, Parser};

fn usage() -> String {
    Cli::command().render_usage().to_string()
}

/// Parses `argv` and runs it. Returns the process exit code: 0 on success,
/// 2 for argument errors, 1 for runtime failures.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            if text.contains("Usage:") {
                eprint!("{text}");
            } else {
                eprint!("{text}\n{}\n", usage());
            }
            return 2;
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            for line in summary {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if code == 2 {
                eprintln!("\n{}", usage());
            }
            code
        }
    }
}
