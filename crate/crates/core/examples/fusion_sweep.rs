//! Fused error against the number of BSs, over sampled BS subsets, written
//! as CSV tables and an SVG chart under `report/`.

use diffloc::config::Config;
use diffloc::dataset::Split;
use diffloc::eval::fusion_sweep;
use diffloc::experiments::{fusion_chart, fusion_tables, generate};
use diffloc::infer::InferOptions;
use diffloc::model::Method;
use diffloc::pipeline::{train_all, TrainOptions};
use diffloc::plot::write_svg;
use diffloc::report::emit_report;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = Config::desk();
    let data = generate(&cfg)?;
    let models = train_all(&cfg, &data, Method::DifflocCt, &TrainOptions::from_config(&cfg))?;
    let refs: Vec<_> = models.iter().collect();
    let sweep = fusion_sweep(&refs, &data, &data.indices(Split::Test), cfg.eval.max_subsets, &InferOptions::from_config(&cfg)?)?;
    for s in &sweep.sizes {
        println!("{} BSs: median of subset means {:.1} cm over {} subsets", s.size, s.median_mean_cm, s.n_subsets);
    }
    let out = std::path::Path::new("report");
    emit_report(&fusion_tables(&sweep)?, out)?;
    write_svg(&fusion_chart(&sweep).to_svg(), &out.join("error_vs_bs.svg"))?;
    Ok(())
}
