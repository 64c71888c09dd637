//! DDIM retrained for short schedules against consistency sampling with the
//! same number of steps.
//!
//! Usage: `step_sweep [steps,...]`  (default 2,5,10)

use diffloc::config::Config;
use diffloc::experiments::{generate, step_sweep};
use diffloc::model::Method;
use diffloc::pipeline::{train_all, TrainOptions};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let steps: Vec<usize> = match std::env::args().nth(1) {
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![2, 5, 10],
    };
    let cfg = Config::desk();
    let data = generate(&cfg)?;
    let ct = train_all(&cfg, &data, Method::DifflocCt, &TrainOptions::from_config(&cfg))?;
    for r in step_sweep(&cfg, &data, &steps, Method::DifflocUnet, &ct)? {
        println!("{:<13} {:>3} steps ({:>4} passes): mean {:.1} cm", r.method.name(), r.steps, r.forward_passes, r.stats.mean_cm);
    }
    Ok(())
}
