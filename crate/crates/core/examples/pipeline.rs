//! Runs the default pipeline and prints the report.
//!
//! `cargo run --release -p mfli-core --example pipeline [config.json]`

use mfli::{eval::run_pipeline, Config, Exec};

fn main() -> mfli::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::default(),
    };
    let report = run_pipeline(&config, None, Exec::default())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
