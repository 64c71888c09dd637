//! MLP score networks with and without time-decaying soft labels, compared
//! on their worst single-BS error.
//!
//! Usage: `soft_label_ablation [n_seeds]`

use diffloc::config::Config;
use diffloc::experiments::{ablation_votes, generate, soft_label_ablation};
use diffloc::model::Method;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let n: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let cfg = Config::desk();
    let data = generate(&cfg)?;
    let seeds: Vec<u64> = (1..=n).collect();
    let rows = soft_label_ablation(&cfg, &data, Method::DifflocMlp, &seeds)?;
    for r in &rows {
        println!("seed {} soft {:<5} per-BS {:?} cm", r.seed, r.soft_label, r.report.per_bs_mean_cm());
    }
    let (wins, n) = ablation_votes(&rows);
    println!("soft labels lower the worst single-BS error for {wins} of {n} seeds");
    Ok(())
}
