//! Max-min power control on one sample with the accelerated projected
//! gradient solver, compared against equal power allocation.
//!
//! ```bash
//! cargo run --example maxmin_apg
//! ```

use papc::config::preset;
use papc::optim::{apg_solve, ApgConfig};
use papc::scenario::SampleGenerator;
use papc::se::{epa, evaluate_power, is_feasible};

fn main() -> papc::Result<()> {
    let cfg = preset("scenario0")?.scenario;
    let gen = SampleGenerator::new(cfg.clone());
    let s = gen.sample(7);
    let phi = s.pilot_gram(cfg.k_max);

    let mu_epa = epa(cfg.m, cfg.k_max, s.k_active, cfg.n_antennas);
    let (se_epa, u_epa) = evaluate_power(&s.beta, &phi, &mu_epa, &cfg);

    let result = apg_solve(&s.beta, &phi, &cfg, &ApgConfig::default())?;
    assert!(is_feasible(&result.mu, cfg.n_antennas));
    let (se_apg, _) = evaluate_power(&s.beta, &phi, &result.mu, &cfg);

    println!("per-user SE, EPA vs APG:");
    for k in 0..s.k_active {
        println!(
            "  user {k}: {:.3} -> {:.3} bits/s/Hz",
            se_epa.se[k], se_apg.se[k]
        );
    }
    println!("\nutility: EPA {u_epa:.4} -> APG {:.4} ({} iterations)", result.utility, result.iters);

    // The trace's running max never decreases; print every 25th entry.
    println!("\nutility trace:");
    let mut running = f64::NEG_INFINITY;
    for (i, &u) in result.trace.iter().enumerate() {
        running = running.max(u);
        if i % 25 == 0 || i + 1 == result.trace.len() {
            println!("  iter {i:4}: {u:.6} (best so far {running:.6})");
        }
    }
    Ok(())
}
