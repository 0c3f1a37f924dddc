//! Runs the desk-scale replication and prints the comparison table.
//!
//! `cargo run --release -p pvad-core --example replicate -- [seeds] [config.toml]`

use std::time::Instant;

use pvad::config::RunConfig;
use pvad::experiment::{self, Variant};

fn main() -> pvad::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.get(1) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Some(n) = args.first() {
        cfg.experiment.seeds = n.parse().expect("seed count");
    }
    let start = Instant::now();
    let log = |msg: &str| eprintln!("[{:7.1}s] {msg}", start.elapsed().as_secs_f64());
    let p = experiment::prepare(&cfg, &log)?;
    log(&experiment::corpus_summary(&p));
    let runs = experiment::run_all(&p, &log)?;
    let cmp = experiment::summarize(&runs)?;
    println!("{}", cmp.to_table());
    for v in Variant::ALL {
        let m = |f| experiment::mean_over_seeds(&runs, v, f).map_or(f64::NAN, |x| 100.0 * x);
        println!(
            "{:<14} clean {:6.2}  noisy {:6.2}  seen<=5dB {:6.2}",
            v.name(),
            m(experiment::clean_map),
            m(experiment::noisy_map),
            m(experiment::low_snr_seen_map)
        );
    }
    log("done");
    Ok(())
}
