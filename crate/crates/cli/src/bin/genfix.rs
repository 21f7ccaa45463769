//! Regenerate the deterministic fixture set.
//!
//! Usage: `genfix [DIR]` (default `fixtures`). Rebuilding into the same
//! directory reproduces every file byte for byte.

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    match stresslab_cli::fixtures::build_all(&dir) {
        Ok(summary) => {
            println!(
                "fixtures written to {}: {} price rows, {} headline feeds, {} frozen responses",
                dir.display(),
                summary.price_rows,
                summary.headline_files,
                summary.response_lines
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("genfix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
