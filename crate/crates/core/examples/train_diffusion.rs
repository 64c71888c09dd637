//! Trains per-BS DSM score networks on the desk data and reports single-BS
//! and fused DDIM errors. Takes a few minutes on one core.
//!
//! Usage: `train_diffusion [diffloc-unet|diffloc-mlp] [epochs]`

use diffloc::config::Config;
use diffloc::experiments::{evaluate_test, generate};
use diffloc::infer::InferOptions;
use diffloc::model::Method;
use diffloc::pipeline::{train_all, TrainOptions};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let method: Method = args.next().map(|s| s.parse()).transpose()?.unwrap_or(Method::DifflocUnet);
    let mut cfg = Config::desk();
    if let Some(e) = args.next() {
        cfg.train.max_epochs = e.parse()?;
    }
    let data = generate(&cfg)?;
    let models = train_all(&cfg, &data, method, &TrainOptions::from_config(&cfg))?;
    for m in &models {
        println!("BS {}: {} epochs, best val loss {:?}", m.bs_index(), m.meta.epochs, m.meta.best_val_loss);
    }
    let r = evaluate_test(&models, &data, &InferOptions::from_config(&cfg)?)?;
    for (b, s) in &r.per_bs {
        println!("BS {b} alone: mean {:.1} cm, p50 {:.1} cm", s.mean_cm, s.p50_cm);
    }
    if let Some(s) = r.fused {
        println!("fused:      mean {:.1} cm, p50 {:.1} cm", s.mean_cm, s.p50_cm);
    }
    Ok(())
}
