//! Configuration, data files, and run artifacts.
//!
//! Three input files drive a run — a network description, a household
//! profile table, and a tariff table — tied together by a TOML config.
//! Outputs are a JSON report per scheme plus flat CSV series suitable for
//! plotting, line-delimited logs of trades/verdicts/blocking, and a
//! manifest whose digest pins down every byte of the inputs.

mod config;
mod report;
mod tables;

pub use config::{FilesSection, HemsSection, RunConfig, RunSection};
pub use report::{
    comparison_rows, format_comparison, sha256_file, sha256_hex, write_comparison,
    write_report_files, ComparisonRow, RunManifest,
};
pub use tables::{
    read_injections, read_profiles, read_tariffs, write_profiles, write_tariffs, INJECTION_HEADER,
    PROFILE_HEADER, TARIFF_HEADER,
};
