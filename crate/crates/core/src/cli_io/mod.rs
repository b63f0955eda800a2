//! Script parsing, run orchestration, shape files and reports.

pub mod bruker;
pub mod report;
pub mod runner;
pub mod script;

pub use bruker::{format_bruker, parse_bruker, BrukerError, BrukerShape};
pub use report::{svg_panels, Panel, Series, Table};
pub use runner::{
    run, run_script_file, sweep_table, waveform_table, RunError, RunOptions, RunReport, RunSummary,
};
pub use script::{
    parse_script, Flags, GridSpec, MakeDirective, MakeSource, ScriptConfig, ScriptError,
};
