//! Synthesizes one channel, runs the delay-domain preprocessing and prints
//! where the CIR energy sits and what the fingerprint looks like.

use diffloc::config::Config;
use diffloc::fingerprint::Preprocessor;
use diffloc::scene::Scene;

fn main() -> anyhow::Result<()> {
    let cfg = Config::desk();
    let scene = Scene::new(cfg.scene_config())?;
    let ue = scene.spawn_polygon().centroid();
    let pre = Preprocessor::new(cfg.scene.n_subcarriers, cfg.data.taps)?;
    for bs in 0..scene.n_bs() {
        let paths = scene.paths(ue, bs)?;
        let cfr = scene.synthesize_cfr(ue, bs)?;
        let cir = pre.transform().cfr_to_cir(&cfr)?;
        let kept = pre.truncated_cir(&cfr)?.energy() / cir.energy();
        let fp = pre.fingerprint(&cfr)?;
        let strongest = fp.magnitudes().iter().cloned().fold(0.0, f64::max);
        println!(
            "BS {bs}: {} paths, shortest delay {:.1} ns, {:.1}% of CIR energy in {} taps, d = {}, peak |h| {strongest:.3}",
            paths.len(),
            paths.iter().map(|p| p.delay_s).fold(f64::INFINITY, f64::min) * 1e9,
            100.0 * kept,
            pre.taps(),
            fp.dim(),
        );
    }
    Ok(())
}
