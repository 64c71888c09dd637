//! Error against channel SNR for models trained clean, on mixed SNRs, and
//! per SNR. Trains seven model sets; expect tens of minutes on one core.
//!
//! Usage: `snr_robustness [regime,...]`

use diffloc::config::Config;
use diffloc::experiments::{snr_experiment, SnrRegime};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = Config::desk();
    let regimes: Vec<SnrRegime> = match std::env::args().nth(1) {
        Some(list) => list
            .split(',')
            .map(|r| SnrRegime::ALL.into_iter().find(|g| g.name() == r).ok_or_else(|| anyhow::anyhow!("unknown regime {r}")))
            .collect::<anyhow::Result<_>>()?,
        None => vec![SnrRegime::CleanTrain],
    };
    for row in snr_experiment(&cfg, &regimes, &cfg.eval.snrs_db, cfg.eval.snr_method)? {
        println!("{:<14} {:>4} dB: mean {:.1} cm", row.regime.name(), row.snr_db, row.stats.mean_cm);
    }
    Ok(())
}
