//! Grid classifier per BS with log-space product fusion of the cell
//! posteriors, next to the supervised regression baseline.

use diffloc::config::Config;
use diffloc::experiments::{evaluate_test, generate};
use diffloc::infer::InferOptions;
use diffloc::model::Method;
use diffloc::pipeline::{grid_for, train_all, TrainOptions};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = Config::desk();
    let data = generate(&cfg)?;
    let grid = grid_for(&cfg, &data)?;
    println!("grid: {} x {} cells of {} m", grid.nx, grid.ny, grid.spacing);
    let opts = InferOptions::from_config(&cfg)?;
    for method in [Method::Grid, Method::Supervised] {
        let models = train_all(&cfg, &data, method, &TrainOptions::from_config(&cfg))?;
        let r = evaluate_test(&models, &data, &opts)?;
        for (b, s) in &r.per_bs {
            println!("{method} BS {b}: mean {:.1} cm", s.mean_cm);
        }
        if let Some(s) = r.fused {
            println!("{method} combined: mean {:.1} cm, p90 {:.1} cm", s.mean_cm, s.p90_cm);
        }
    }
    Ok(())
}
