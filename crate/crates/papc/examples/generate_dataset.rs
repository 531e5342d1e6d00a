//! Generate a dataset of propagation samples and read it back.
//!
//! ```bash
//! cargo run --example generate_dataset
//! ```

use papc::config::preset;
use papc::dataset::{read_dataset, write_dataset, Dataset};
use papc::scenario::SampleGenerator;

fn main() -> papc::Result<()> {
    let preset = preset("scenario0")?;
    let cfg = preset.scenario;
    println!(
        "scenario0: {} BSs, up to {} users, {:.0} BS/km², pilots {} of {} symbols",
        cfg.m,
        cfg.k_max,
        cfg.m as f64 / cfg.area_km2,
        cfg.tau_p,
        cfg.tau
    );

    // BS placement is fixed by the scenario seed; every sample draws
    // fresh users, shadowing, and pilots from its own index.
    let gen = SampleGenerator::new(cfg.clone());
    let ds = Dataset::generate(&gen, 0, 256);
    println!(
        "generated {} samples, contamination fraction {:.3}",
        ds.len(),
        ds.contamination_fraction()
    );

    let path = std::env::temp_dir().join("papc-example-scenario0.papcds");
    write_dataset(&path, &ds)?;
    let loaded = read_dataset(&path)?;
    assert_eq!(loaded, ds);
    println!("round-tripped through {}", path.display());

    let s = &loaded.samples[0];
    let beta_db_min = s.beta.iter().fold(f64::INFINITY, |a, &b| a.min(10.0 * b.log10()));
    let beta_db_max = s.beta.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(10.0 * b.log10()));
    println!(
        "sample 0: K_active={}, pilots {:?}, beta range [{:.1}, {:.1}] dB",
        s.k_active, s.pilots, beta_db_min, beta_db_max
    );
    Ok(())
}
