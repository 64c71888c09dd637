//! Shared tiny profile for integration tests.

use diffloc::config::Config;

/// A scene and training budget small enough for debug-speed tests.
pub fn tiny_config() -> Config {
    let mut cfg = Config::desk();
    cfg.seed = 11;
    cfg.scene.n_subcarriers = 64;
    cfg.scene.n_rx = 2;
    cfg.data.n_ue = 4;
    cfg.data.n_snapshots = 5;
    cfg.data.taps = 8;
    cfg.model.unet_hidden = vec![16, 32, 64];
    cfg.model.unet_decoder = vec![32, 16, 16];
    cfg.model.mlp_hidden = vec![32, 16];
    cfg.diffusion.steps = 20;
    cfg.train.max_epochs = 2;
    cfg.grid.spacing_m = 6.0;
    cfg
}
