//! Generates the desk dataset, writes it to disk and reads it back.
//!
//! Usage: `generate_dataset [config.toml] [out.dset]`

use diffloc::config::Config;
use diffloc::dataset::Split;
use diffloc::experiments::generate;
use diffloc::persist::{load_dataset, save_dataset};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::desk(),
    };
    let out = args.next().unwrap_or_else(|| "desk.dset".into());
    let data = generate(&cfg)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:?}: {} samples", data.indices(split).len());
    }
    save_dataset(&data, out.as_ref())?;
    let back = load_dataset(out.as_ref())?;
    println!("wrote {out}: {} samples, {} BSs, d = {}, round trip equal: {}", back.len(), back.n_bs(), back.fp_dim(), back == data);
    Ok(())
}
