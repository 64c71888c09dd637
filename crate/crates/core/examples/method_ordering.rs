//! Trains every method on the desk dataset and prints the comparisons.

use diffloc::config::Config;
use diffloc::experiments::{desk_ordering, generate};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = match std::env::args().nth(1) {
        Some(path) => Config::load(std::path::Path::new(&path))?,
        None => Config::desk(),
    };
    let data = generate(&cfg)?;
    let report = desk_ordering(&cfg, &data)?;
    for c in report.checks()? {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}
