//! Command-line driver. `main` only parses arguments and calls [`run`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::Config;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fusion_sweep, ErrorReport, EvalMode};
use crate::experiments::{
    ablation_table, ablation_votes, errors_table, fusion_chart, fusion_tables, generate, snr_chart, snr_experiment,
    snr_table, soft_label_ablation, step_chart, step_sweep, step_table, SnrRegime,
};
use crate::geometry::Point2;
use crate::infer::{estimate, InferOptions};
use crate::model::{Method, ModelBundle};
use crate::persist::{load_checkpoint, load_dataset, save_checkpoint, save_dataset};
use crate::pipeline::{train_all, train_one, TrainOptions};
use crate::plot::{trajectory_svg, write_svg};
use crate::report::{emit_report, Cell, Table};

#[derive(Debug, Parser)]
#[command(name = "diffloc", version, about = "Multi-BS positioning with score-based fusion of channel fingerprints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; the desk profile when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the config value.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    pub fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::desk(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the scene and write a dataset file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method and write its checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        /// `all` or a BS index; ignored by the supervised baseline.
        #[arg(long, default_value = "all")]
        bs: String,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-sample estimates of a split.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// CSV file for the estimates.
        #[arg(long)]
        out: PathBuf,
    },
    /// Error report on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        /// Only the fused estimate.
        #[arg(long, conflicts_with = "per_bs")]
        fused: bool,
        /// Only single-BS estimates.
        #[arg(long)]
        per_bs: bool,
        /// Report directory.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Fused error for BS subsets of every size.
    SweepFusion {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Retrain DDIM per step count and compare with few-step consistency sampling.
    SweepSteps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory with trained consistency checkpoints, if any.
        #[arg(long)]
        ct_models: Option<PathBuf>,
        /// Method retrained for each DDIM schedule length.
        #[arg(long, default_value = "diffloc-unet")]
        method: Method,
        /// Comma-separated step counts; the config list when omitted.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Error against channel SNR for the three training regimes.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of clean_train, mixed_train, per_snr_train.
        #[arg(long, value_delimiter = ',')]
        regimes: Vec<String>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Train with and without soft labels over several seeds.
    AblateSoftlabel {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "diffloc-mlp")]
        method: Method,
        /// Number of seeds, counted up from the base seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint files or directories of `.ckpt` files.
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Method to use when the checkpoints hold several.
    #[arg(long = "model-method")]
    pub method: Option<Method>,
    /// Comma-separated BS indices to keep.
    #[arg(long = "use-bs", value_delimiter = ',')]
    pub use_bs: Vec<usize>,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::arg(format!("unknown split `{s}` (train, val or test)"))),
        }
    }
}

/// File name of a checkpoint inside a model directory.
pub fn checkpoint_name(b: &ModelBundle) -> String {
    if b.meta.method.is_per_bs() {
        format!("{}_bs{}.ckpt", b.meta.method, b.bs_index())
    } else {
        format!("{}.ckpt", b.meta.method)
    }
}

fn checkpoint_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::arg("no checkpoint files found"));
    }
    Ok(out)
}

/// Loads checkpoints and keeps one method's models.
pub fn load_models(args: &ModelArgs) -> Result<Vec<ModelBundle>> {
    let all = checkpoint_files(&args.models)?.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let mut by_method: BTreeMap<String, Vec<ModelBundle>> = BTreeMap::new();
    for b in all {
        by_method.entry(b.meta.method.name().to_owned()).or_default().push(b);
    }
    let mut models = match args.method {
        Some(m) => by_method
            .remove(m.name())
            .ok_or_else(|| Error::arg(format!("no {m} checkpoints among the given models")))?,
        None if by_method.len() == 1 => by_method.into_values().next().expect("one entry"),
        None => {
            return Err(Error::arg(format!(
                "checkpoints hold several methods ({}); pick one with --model-method",
                by_method.keys().cloned().collect::<Vec<_>>().join(", ")
            )))
        }
    };
    if !args.use_bs.is_empty() {
        models.retain(|b| !b.meta.method.is_per_bs() || args.use_bs.contains(&b.bs_index()));
        if models.is_empty() {
            return Err(Error::arg("no models left after the BS filter"));
        }
    }
    models.sort_by_key(|b| b.meta.bs.clone());
    Ok(models)
}

fn print_report(r: &ErrorReport) {
    for (b, s) in &r.per_bs {
        println!("{:<13} bs {b:<3} mean {:>10.2} cm  p50 {:>10.2}  p90 {:>10.2}  max {:>10.2}", r.method.name(), s.mean_cm, s.p50_cm, s.p90_cm, s.max_cm);
    }
    if let Some(s) = &r.fused {
        println!("{:<13} fused  mean {:>10.2} cm  p50 {:>10.2}  p90 {:>10.2}  max {:>10.2}", r.method.name(), s.mean_cm, s.p50_cm, s.p90_cm, s.max_cm);
    }
    println!("n_test {}", r.n_test);
}

fn write_tables(tables: &[Table], out: &Path) -> Result<()> {
    for p in emit_report(tables, out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Test samples of the user with the most of them, in time order.
fn longest_track(data: &Dataset, indices: &[usize]) -> Vec<usize> {
    let mut by_user: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_user.entry(data.samples[i].user).or_default().push(i);
    }
    let mut best = by_user.into_values().max_by_key(|v| v.len()).unwrap_or_default();
    best.sort_by(|&a, &b| data.samples[a].timestamp.total_cmp(&data.samples[b].timestamp));
    best
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = common.load()?;
            let data = generate(&cfg)?;
            save_dataset(&data, &out)?;
            println!("wrote {} samples ({} BSs, d = {}) to {}", data.len(), data.n_bs(), data.fp_dim(), out.display());
        }
        Command::Train { common, data, method, bs, out } => {
            let cfg = common.load()?;
            let data = load_dataset(&data)?;
            let opts = TrainOptions::from_config(&cfg);
            let bundles = match bs.as_str() {
                "all" => train_all(&cfg, &data, method, &opts)?,
                n => {
                    let b = n.parse().map_err(|_| Error::arg(format!("--bs takes `all` or an index, got `{n}`")))?;
                    vec![train_one(&cfg, &data, method, b, &opts)?]
                }
            };
            for b in &bundles {
                let p = out.join(checkpoint_name(b));
                save_checkpoint(b, &p)?;
                println!(
                    "wrote {} ({} epochs, best val loss {})",
                    p.display(),
                    b.meta.epochs,
                    b.meta.best_val_loss.map_or("n/a".into(), |v| format!("{v:.6}"))
                );
            }
        }
        Command::Infer { common, models, data, split, out } => {
            let cfg = common.load()?;
            let models = load_models(&models)?;
            let data = load_dataset(&data)?;
            let idx = data.indices(split);
            let refs: Vec<&ModelBundle> = models.iter().collect();
            let est = estimate(&refs, &data, &idx, &InferOptions::from_config(&cfg)?)?;
            let mut t = Table::new(
                out.file_stem().and_then(|s| s.to_str()).unwrap_or("estimates"),
                &["index", "user", "timestamp", "true_x", "true_y", "est_x", "est_y", "error_cm"],
            );
            for (&i, e) in idx.iter().zip(&est) {
                let s = &data.samples[i];
                t.push(vec![
                    i.into(),
                    Cell::Int(s.user as i64),
                    s.timestamp.into(),
                    s.position.x.into(),
                    s.position.y.into(),
                    e.x.into(),
                    e.y.into(),
                    crate::eval::error_cm(*e, s.position).into(),
                ])?;
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            t.write_csv(&out)?;
            println!("wrote {} estimates to {}", est.len(), out.display());
        }
        Command::Eval { common, models, data, fused, per_bs, out } => {
            let cfg = common.load()?;
            let models = load_models(&models)?;
            let data = load_dataset(&data)?;
            let mode = match (fused, per_bs) {
                (true, _) => EvalMode::FUSED,
                (_, true) => EvalMode::PER_BS,
                _ => EvalMode::BOTH,
            };
            let opts = InferOptions::from_config(&cfg)?;
            let refs: Vec<&ModelBundle> = models.iter().collect();
            let test = data.indices(Split::Test);
            let report = evaluate(&refs, &data, &test, mode, &opts)?;
            print_report(&report);
            write_tables(&[errors_table("errors", std::slice::from_ref(&report))?], &out)?;
            let track = longest_track(&data, &test);
            if track.len() > 1 {
                let est: Vec<Point2> = estimate(&refs, &data, &track, &opts)?;
                let svg = trajectory_svg("Estimated trajectory", &data.positions(&track), &[(report.method.name().into(), est)]);
                let p = out.join("trajectory.svg");
                write_svg(&svg, &p)?;
                println!("wrote {}", p.display());
            }
        }
        Command::SweepFusion { common, models, data, out } => {
            let cfg = common.load()?;
            let models = load_models(&models)?;
            let data = load_dataset(&data)?;
            let refs: Vec<&ModelBundle> = models.iter().collect();
            let sweep =
                fusion_sweep(&refs, &data, &data.indices(Split::Test), cfg.eval.max_subsets, &InferOptions::from_config(&cfg)?)?;
            for s in &sweep.sizes {
                println!(
                    "size {}: {} subsets, mean error min {:.2} / median {:.2} / max {:.2} cm",
                    s.size, s.n_subsets, s.min_mean_cm, s.median_mean_cm, s.max_mean_cm
                );
            }
            write_tables(&fusion_tables(&sweep)?, &out)?;
            write_svg(&fusion_chart(&sweep).to_svg(), &out.join("error_vs_bs.svg"))?;
        }
        Command::SweepSteps { common, data, ct_models, method, steps, out } => {
            let cfg = common.load()?;
            let data = load_dataset(&data)?;
            let ct = match ct_models {
                Some(p) => load_models(&ModelArgs { models: vec![p], method: Some(Method::DifflocCt), use_bs: Vec::new() })?,
                None => Vec::new(),
            };
            let steps = if steps.is_empty() { cfg.eval.step_counts.clone() } else { steps };
            let rows = step_sweep(&cfg, &data, &steps, method, &ct)?;
            for r in &rows {
                println!("{:<13} steps {:>4}: mean {:.2} cm ({} forward passes)", r.method.name(), r.steps, r.stats.mean_cm, r.forward_passes);
            }
            write_tables(&[step_table(&rows)?], &out)?;
            write_svg(&step_chart(&rows).to_svg(), &out.join("error_vs_steps.svg"))?;
        }
        Command::SweepSnr { common, regimes, out } => {
            let cfg = common.load()?;
            let regimes = if regimes.is_empty() {
                SnrRegime::ALL.to_vec()
            } else {
                regimes
                    .iter()
                    .map(|r| {
                        SnrRegime::ALL
                            .into_iter()
                            .find(|g| g.name() == r)
                            .ok_or_else(|| Error::arg(format!("unknown regime `{r}`")))
                    })
                    .collect::<Result<_>>()?
            };
            let rows = snr_experiment(&cfg, &regimes, &cfg.eval.snrs_db, cfg.eval.snr_method)?;
            for r in &rows {
                println!("{:<14} {:>5} dB: mean {:.2} cm", r.regime.name(), r.snr_db, r.stats.mean_cm);
            }
            write_tables(&[snr_table(&rows)?], &out)?;
            write_svg(&snr_chart(&rows).to_svg(), &out.join("error_vs_snr.svg"))?;
        }
        Command::AblateSoftlabel { common, data, method, seeds, out } => {
            let cfg = common.load()?;
            let data = load_dataset(&data)?;
            let seeds: Vec<u64> = (0..seeds.max(1)).map(|i| cfg.seed.wrapping_add(i)).collect();
            let rows = soft_label_ablation(&cfg, &data, method, &seeds)?;
            for r in &rows {
                println!(
                    "seed {} soft_label {:<5}: worst per-BS mean {:.2} cm",
                    r.seed,
                    r.soft_label,
                    r.report.max_per_bs_mean_cm().unwrap_or(f64::NAN)
                );
            }
            let (wins, n) = ablation_votes(&rows);
            println!("soft labels lower the worst per-BS error for {wins} of {n} seeds");
            write_tables(&[ablation_table(&rows)?], &out)?;
        }
    }
    info!("done");
    Ok(())
}
