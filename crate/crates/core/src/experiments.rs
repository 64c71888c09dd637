//! Experiments built from training, inference and evaluation, plus the
//! tables and charts they emit.

use log::info;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::consistency::StepPlan;
use crate::dataset::{Dataset, NoisePlan, Split, SplitMode};
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};
use crate::eval::{evaluate, ErrorReport, ErrorStats, EvalMode, FusionSweep};
use crate::infer::{estimate, InferOptions};
use crate::model::{Method, ModelBundle};
use crate::pipeline::{train_all, TrainOptions};
use crate::plot::{LineChart, Series};
use crate::report::{Cell, Table};
use crate::scene::Scene;

/// Generates the configured dataset.
pub fn generate(cfg: &Config) -> Result<Dataset> {
    Dataset::generate(&Scene::new(cfg.scene_config())?, &cfg.generate_spec())
}

/// Same scene, trajectories and splits as [`generate`], with a different noise plan.
pub fn generate_with_noise(cfg: &Config, noise: NoisePlan) -> Result<Dataset> {
    let mut spec = cfg.generate_spec();
    spec.noise = noise;
    Dataset::generate(&Scene::new(cfg.scene_config())?, &spec)
}

fn refs(b: &[ModelBundle]) -> Vec<&ModelBundle> {
    b.iter().collect()
}

fn test_indices(data: &Dataset) -> Result<Vec<usize>> {
    let idx = data.indices(Split::Test);
    if idx.is_empty() {
        return Err(Error::arg("test split is empty"));
    }
    Ok(idx)
}

/// Evaluates trained models on the dataset's test split.
pub fn evaluate_test(bundles: &[ModelBundle], data: &Dataset, opts: &InferOptions) -> Result<ErrorReport> {
    evaluate(&refs(bundles), data, &test_indices(data)?, EvalMode::BOTH, opts)
}

// ------------------------------------------------------------ step sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub method: Method,
    pub steps: usize,
    /// Network evaluations per estimate, all BSs included.
    pub forward_passes: usize,
    pub stats: ErrorStats,
}

/// DDIM network evaluations for one estimate with a `steps`-step schedule.
pub fn ddim_forward_passes(steps: usize, n_bs: usize, n_seeds: usize) -> usize {
    (steps - 1) * n_bs * n_seeds
}

/// Error against inference steps. DDIM models are retrained with a
/// `steps`-step schedule for each count; the consistency models are trained
/// once and sampled with `steps` uniformly spaced times.
pub fn step_sweep(
    cfg: &Config,
    data: &Dataset,
    steps: &[usize],
    ddim_method: Method,
    ct_bundles: &[ModelBundle],
) -> Result<Vec<StepRow>> {
    let test = test_indices(data)?;
    let truth = data.positions(&test);
    let base = InferOptions::from_config(cfg)?;
    let mut rows = Vec::new();
    for &s in steps {
        if s < 2 {
            return Err(Error::arg("step counts must be at least 2"));
        }
        let opts = TrainOptions { schedule: ScheduleSpec { steps: s, ..cfg.diffusion.schedule() }, ..TrainOptions::from_config(cfg) };
        let ddim = train_all(cfg, data, ddim_method, &opts)?;
        let est = estimate(&refs(&ddim), data, &test, &base)?;
        let stats = ErrorStats::from_estimates(&est, &truth)?;
        info!("{ddim_method} T={s}: mean {:.1} cm", stats.mean_cm);
        rows.push(StepRow { method: ddim_method, steps: s, forward_passes: ddim_forward_passes(s, ddim.len(), base.n_seeds), stats });
        if !ct_bundles.is_empty() {
            let opts = InferOptions { ct_plan: StepPlan::uniform(s)?, ..base.clone() };
            let est = estimate(&refs(ct_bundles), data, &test, &opts)?;
            let stats = ErrorStats::from_estimates(&est, &truth)?;
            info!("diffloc-ct S={s}: mean {:.1} cm", stats.mean_cm);
            rows.push(StepRow { method: Method::DifflocCt, steps: s, forward_passes: s * ct_bundles.len(), stats });
        }
    }
    Ok(rows)
}

// -------------------------------------------------------- SNR robustness

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrRegime {
    /// Train on clean fingerprints.
    CleanTrain,
    /// Train once on samples whose SNR is drawn from the test list.
    MixedTrain,
    /// Train a separate model set at every test SNR.
    PerSnrTrain,
}

impl SnrRegime {
    pub const ALL: [SnrRegime; 3] = [SnrRegime::CleanTrain, SnrRegime::MixedTrain, SnrRegime::PerSnrTrain];

    pub fn name(self) -> &'static str {
        match self {
            SnrRegime::CleanTrain => "clean_train",
            SnrRegime::MixedTrain => "mixed_train",
            SnrRegime::PerSnrTrain => "per_snr_train",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub regime: SnrRegime,
    pub snr_db: f64,
    pub stats: ErrorStats,
}

pub fn snr_experiment(cfg: &Config, regimes: &[SnrRegime], snrs_db: &[f64], method: Method) -> Result<Vec<SnrRow>> {
    if snrs_db.is_empty() {
        return Err(Error::arg("no SNR values given"));
    }
    let opts = InferOptions::from_config(cfg)?;
    let topts = TrainOptions::from_config(cfg);
    let tests = snrs_db
        .iter()
        .map(|&s| generate_with_noise(cfg, NoisePlan::Fixed(s)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let run = |regime, models: &[ModelBundle], k: usize, rows: &mut Vec<SnrRow>| -> Result<()> {
        let idx = test_indices(&tests[k])?;
        let est = estimate(&refs(models), &tests[k], &idx, &opts)?;
        let stats = ErrorStats::from_estimates(&est, &tests[k].positions(&idx))?;
        info!("{} at {} dB: mean {:.1} cm", SnrRegime::name(regime), snrs_db[k], stats.mean_cm);
        rows.push(SnrRow { regime, snr_db: snrs_db[k], stats });
        Ok(())
    };
    for &regime in regimes {
        match regime {
            SnrRegime::CleanTrain | SnrRegime::MixedTrain => {
                let noise = if regime == SnrRegime::CleanTrain { NoisePlan::Clean } else { NoisePlan::Mixed(snrs_db.to_vec()) };
                let models = train_all(cfg, &generate_with_noise(cfg, noise)?, method, &topts)?;
                for k in 0..snrs_db.len() {
                    run(regime, &models, k, &mut rows)?;
                }
            }
            SnrRegime::PerSnrTrain => {
                for k in 0..snrs_db.len() {
                    let models = train_all(cfg, &tests[k], method, &topts)?;
                    run(regime, &models, k, &mut rows)?;
                }
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------- soft-label ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub soft_label: bool,
    pub report: ErrorReport,
}

/// Trains `method` with and without soft labels for every seed.
pub fn soft_label_ablation(cfg: &Config, data: &Dataset, method: Method, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if !method.is_generative() || method == Method::DifflocCt {
        return Err(Error::arg("soft labels apply to the DSM-trained methods"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for soft in [true, false] {
            let mut c = cfg.clone();
            c.seed = seed;
            let mut opts = TrainOptions::from_config(&c);
            opts.soft_label.enabled = soft;
            let models = train_all(&c, data, method, &opts)?;
            let report = evaluate_test(&models, data, &InferOptions::from_config(&c)?)?;
            info!("seed {seed} soft={soft}: per-BS {:?} cm", report.per_bs_mean_cm());
            rows.push(AblationRow { seed, soft_label: soft, report });
        }
    }
    Ok(rows)
}

/// Seeds for which the run without soft labels has the larger worst per-BS error.
pub fn ablation_votes(rows: &[AblationRow]) -> (usize, usize) {
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    let worst = |seed, soft| {
        rows.iter()
            .find(|r| r.seed == seed && r.soft_label == soft)
            .and_then(|r| r.report.max_per_bs_mean_cm())
    };
    let wins = seeds
        .iter()
        .filter(|&&s| matches!((worst(s, false), worst(s, true)), (Some(off), Some(on)) if off > on))
        .count();
    (wins, seeds.len())
}

// ------------------------------------------------------ OOD evaluations

/// Models trained on pedestrians, tested on the configured fast movers.
pub fn high_speed_eval(cfg: &Config, bundles: &[ModelBundle]) -> Result<ErrorReport> {
    let fast = Dataset::generate(&Scene::new(cfg.scene_config())?, &cfg.high_speed_spec())?;
    evaluate_test(bundles, &fast, &InferOptions::from_config(cfg)?)
}

/// Trains and tests on a split that holds out whole users.
pub fn user_holdout_eval(cfg: &Config, method: Method) -> Result<ErrorReport> {
    let mut c = cfg.clone();
    c.data.split_mode = SplitMode::UserHoldout;
    let data = generate(&c)?;
    let models = train_all(&c, &data, method, &TrainOptions::from_config(&c))?;
    evaluate_test(&models, &data, &InferOptions::from_config(&c)?)
}

// ------------------------------------------------- desk method ordering

/// Everything needed to compare the methods on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// UNet DDIM per BS and fused over all BSs.
    pub unet: ErrorReport,
    /// Nested prefixes `{0}`, `{0,1}`, ... of the UNet models.
    pub nested: Vec<(Vec<usize>, ErrorStats)>,
    pub ct_two_step: ErrorStats,
    pub ct_four_step: ErrorStats,
    /// UNet DDIM retrained with a 2-step schedule.
    pub ddim_two_step: ErrorStats,
    pub grid: ErrorStats,
    pub supervised: ErrorStats,
}

/// One named pass/fail comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl OrderingReport {
    pub fn unet_fused(&self) -> Result<&ErrorStats> {
        self.unet.fused.as_ref().ok_or_else(|| Error::State("UNet report has no fused row".into()))
    }

    pub fn checks(&self) -> Result<Vec<OrderingCheck>> {
        let fused = self.unet_fused()?.mean_cm;
        let singles = self.unet.per_bs_mean_cm();
        let medians: Vec<f64> = self.nested.iter().map(|(_, s)| s.p50_cm).collect();
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(", ");
        Ok(vec![
            OrderingCheck {
                name: "fused beats every single BS",
                pass: !singles.is_empty() && singles.iter().all(|&m| fused < m),
                detail: format!("fused {fused:.1} cm, single {} cm", fmt(&singles)),
            },
            OrderingCheck {
                name: "median non-increasing over nested subsets",
                pass: medians.windows(2).all(|w| w[1] <= w[0]),
                detail: format!("medians {} cm", fmt(&medians)),
            },
            OrderingCheck {
                name: "two-step consistency beats two-step DDIM",
                pass: self.ct_two_step.mean_cm < self.ddim_two_step.mean_cm,
                detail: format!(
                    "CT S=2 {:.1} cm (S=4 {:.1}), DDIM T=2 {:.1} cm",
                    self.ct_two_step.mean_cm, self.ct_four_step.mean_cm, self.ddim_two_step.mean_cm
                ),
            },
            OrderingCheck {
                name: "grid fusion worse than fused UNet",
                pass: self.grid.mean_cm > fused,
                detail: format!("grid {:.1} cm, UNet {fused:.1} cm", self.grid.mean_cm),
            },
            OrderingCheck {
                name: "supervised worse than fused UNet",
                pass: self.supervised.mean_cm > fused,
                detail: format!("supervised {:.1} cm, UNet {fused:.1} cm", self.supervised.mean_cm),
            },
        ])
    }
}

/// Trains every method on `data` and gathers the comparisons of [`OrderingReport`].
pub fn desk_ordering(cfg: &Config, data: &Dataset) -> Result<OrderingReport> {
    let test = test_indices(data)?;
    let truth = data.positions(&test);
    let opts = InferOptions::from_config(cfg)?;
    let topts = TrainOptions::from_config(cfg);
    let fused_stats = |models: &[&ModelBundle], o: &InferOptions| ErrorStats::from_estimates(&estimate(models, data, &test, o)?, &truth);

    let unet_models = train_all(cfg, data, Method::DifflocUnet, &topts)?;
    let all = refs(&unet_models);
    let unet = evaluate(&all, data, &test, EvalMode::BOTH, &opts)?;
    let mut nested = Vec::new();
    for k in 1..=all.len() {
        let s = fused_stats(&all[..k], &opts)?;
        nested.push(((0..k).map(|i| all[i].bs_index()).collect(), s));
    }
    info!("UNet per-BS {:?}, fused {:?}", unet.per_bs_mean_cm(), unet.fused_mean_cm());

    let ct = train_all(cfg, data, Method::DifflocCt, &topts)?;
    let ct_at = |s: usize| -> Result<ErrorStats> {
        fused_stats(&refs(&ct), &InferOptions { ct_plan: StepPlan::uniform(s)?, ..opts.clone() })
    };
    let (ct_two_step, ct_four_step) = (ct_at(2)?, ct_at(4)?);

    let two = TrainOptions { schedule: ScheduleSpec { steps: 2, ..topts.schedule }, ..topts.clone() };
    let ddim_two_step = fused_stats(&refs(&train_all(cfg, data, Method::DifflocUnet, &two)?), &opts)?;
    let grid = fused_stats(&refs(&train_all(cfg, data, Method::Grid, &topts)?), &opts)?;
    let supervised = fused_stats(&refs(&train_all(cfg, data, Method::Supervised, &topts)?), &opts)?;
    Ok(OrderingReport { unet, nested, ct_two_step, ct_four_step, ddim_two_step, grid, supervised })
}

// ---------------------------------------------------------------- tables

const STAT_HEADERS: [&str; 5] = ["n", "mean_cm", "p50_cm", "p90_cm", "max_cm"];

fn stat_cells(s: &ErrorStats) -> Vec<Cell> {
    vec![s.n.into(), s.mean_cm.into(), s.p50_cm.into(), s.p90_cm.into(), s.max_cm.into()]
}

fn headers(lead: &[&'static str]) -> Vec<&'static str> {
    lead.iter().chain(STAT_HEADERS.iter()).copied().collect()
}

/// `method,bs,n,mean_cm,p50_cm,p90_cm,max_cm`; `bs` is `fused` for the combined row.
pub fn errors_table(name: &str, reports: &[ErrorReport]) -> Result<Table> {
    let mut t = Table::new(name, &headers(&["method", "bs"]));
    for r in reports {
        for (b, s) in &r.per_bs {
            t.push([vec![r.method.name().into(), b.to_string().into()], stat_cells(s)].concat())?;
        }
        if let Some(s) = &r.fused {
            t.push([vec![r.method.name().into(), "fused".into()], stat_cells(s)].concat())?;
        }
    }
    Ok(t)
}

fn subset_label(bs: &[usize]) -> String {
    bs.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

/// `fusion_subsets.csv` (`size,bs,...stats`) and `fusion_sizes.csv`.
pub fn fusion_tables(sweep: &FusionSweep) -> Result<[Table; 2]> {
    let mut subsets = Table::new("fusion_subsets", &headers(&["size", "bs"]));
    for r in &sweep.subsets {
        subsets.push([vec![r.bs.len().into(), subset_label(&r.bs).into()], stat_cells(&r.stats)].concat())?;
    }
    let mut sizes = Table::new(
        "fusion_sizes",
        &["size", "n_subsets", "min_mean_cm", "median_mean_cm", "max_mean_cm", "median_p50_cm"],
    );
    for s in &sweep.sizes {
        sizes.push(vec![
            s.size.into(),
            s.n_subsets.into(),
            s.min_mean_cm.into(),
            s.median_mean_cm.into(),
            s.max_mean_cm.into(),
            s.median_p50_cm.into(),
        ])?;
    }
    Ok([subsets, sizes])
}

pub fn fusion_chart(sweep: &FusionSweep) -> LineChart {
    let pick = |f: fn(&crate::eval::SizeSummary) -> f64, name: &str| Series {
        name: name.into(),
        points: sweep.sizes.iter().map(|s| (s.size as f64, f(s))).collect(),
    };
    LineChart {
        title: "Error vs number of fused BSs".into(),
        x_label: "BSs".into(),
        y_label: "mean error (cm)".into(),
        log_y: true,
        series: vec![
            pick(|s| s.min_mean_cm, "min"),
            pick(|s| s.median_mean_cm, "median"),
            pick(|s| s.max_mean_cm, "max"),
        ],
    }
}

pub fn step_table(rows: &[StepRow]) -> Result<Table> {
    let mut t = Table::new("steps", &headers(&["method", "steps", "forward_passes"]));
    for r in rows {
        t.push([vec![r.method.name().into(), r.steps.into(), r.forward_passes.into()], stat_cells(&r.stats)].concat())?;
    }
    Ok(t)
}

pub fn step_chart(rows: &[StepRow]) -> LineChart {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let name = r.method.name();
        match series.iter_mut().find(|s| s.name == name) {
            Some(s) => s.points.push((r.steps as f64, r.stats.mean_cm)),
            None => series.push(Series { name: name.into(), points: vec![(r.steps as f64, r.stats.mean_cm)] }),
        }
    }
    LineChart {
        title: "Error vs inference steps".into(),
        x_label: "steps".into(),
        y_label: "mean error (cm)".into(),
        log_y: true,
        series,
    }
}

pub fn snr_table(rows: &[SnrRow]) -> Result<Table> {
    let mut t = Table::new("snr", &headers(&["regime", "snr_db"]));
    for r in rows {
        t.push([vec![r.regime.name().into(), r.snr_db.into()], stat_cells(&r.stats)].concat())?;
    }
    Ok(t)
}

pub fn snr_chart(rows: &[SnrRow]) -> LineChart {
    let series = SnrRegime::ALL
        .iter()
        .map(|&g| Series {
            name: g.name().into(),
            points: rows.iter().filter(|r| r.regime == g).map(|r| (r.snr_db, r.stats.mean_cm)).collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    LineChart {
        title: "Error vs SNR".into(),
        x_label: "SNR (dB)".into(),
        y_label: "mean error (cm)".into(),
        log_y: true,
        series,
    }
}

pub fn ablation_table(rows: &[AblationRow]) -> Result<Table> {
    let mut t = Table::new("softlabel_ablation", &headers(&["seed", "soft_label", "bs"]));
    for r in rows {
        let lead = |bs: String| vec![Cell::Int(r.seed as i64), Cell::Text(r.soft_label.to_string()), bs.into()];
        for (b, s) in &r.report.per_bs {
            t.push([lead(b.to_string()), stat_cells(s)].concat())?;
        }
        if let Some(s) = &r.report.fused {
            t.push([lead("fused".into()), stat_cells(s)].concat())?;
        }
    }
    Ok(t)
}
