//! Consistency training per BS, then fused few-step inference with 1, 2 and
//! 4 network evaluations per BS.

use diffloc::config::Config;
use diffloc::consistency::StepPlan;
use diffloc::dataset::Split;
use diffloc::eval::ErrorStats;
use diffloc::experiments::generate;
use diffloc::infer::{estimate, InferOptions};
use diffloc::model::Method;
use diffloc::pipeline::{train_all, TrainOptions};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = Config::desk();
    let data = generate(&cfg)?;
    let models = train_all(&cfg, &data, Method::DifflocCt, &TrainOptions::from_config(&cfg))?;
    let refs: Vec<_> = models.iter().collect();
    let test = data.indices(Split::Test);
    let truth = data.positions(&test);
    for s in [1, 2, 4] {
        let opts = InferOptions { ct_plan: StepPlan::uniform(s)?, ..InferOptions::from_config(&cfg)? };
        let stats = ErrorStats::from_estimates(&estimate(&refs, &data, &test, &opts)?, &truth)?;
        println!("S = {s}: mean {:.1} cm, p90 {:.1} cm", stats.mean_cm, stats.p90_cm);
    }
    Ok(())
}
