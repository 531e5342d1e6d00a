//! Closed-form physical layer on one sample: MMSE estimate variance,
//! per-user SINR and spectral efficiency, and the soft-minimum utility,
//! all under equal power allocation.
//!
//! ```bash
//! cargo run --example closed_form_se
//! ```

use papc::config::preset;
use papc::scenario::SampleGenerator;
use papc::se::{epa, evaluate_power, mmse_variance, utility};

fn main() -> papc::Result<()> {
    let cfg = preset("scenario0")?.scenario;
    let gen = SampleGenerator::new(cfg.clone());
    let s = gen.sample(0);
    let phi = s.pilot_gram(cfg.k_max);

    let nu = mmse_variance(&s.beta, &phi, cfg.zeta_p, cfg.tau_p);
    println!("estimate-to-channel variance ratios (BS 0):");
    for k in 0..cfg.k_max {
        println!("  user {k}: nu/beta = {:.4}", nu[[0, k]] / s.beta[[0, k]]);
    }

    let mu = epa(cfg.m, cfg.k_max, s.k_active, cfg.n_antennas);
    let (sev, u) = evaluate_power(&s.beta, &phi, &mu, &cfg);
    println!("\nequal power allocation:");
    for k in 0..cfg.k_max {
        println!(
            "  user {k}: SINR = {:8.2}, SE = {:.3} bits/s/Hz",
            sev.gamma[k], sev.se[k]
        );
    }
    let min_se = sev.se.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("\nmin SE = {min_se:.4}");
    println!("soft-min utility (lambda = {}) = {u:.4}", cfg.lambda_smooth);
    // The soft minimum is sandwiched within ln(K)/lambda of the true min.
    let bound = (s.k_active as f64).ln() / cfg.lambda_smooth;
    assert!(u >= min_se && u <= min_se + bound);
    println!("sandwich: {min_se:.4} <= {u:.4} <= {:.4}", min_se + bound);

    // Sharper smoothing tracks the hard minimum.
    let se: Vec<f64> = sev.se.iter().cloned().collect();
    for lambda in [1.0, 3.0, 10.0, 50.0] {
        println!("  lambda {lambda:5}: utility = {:.5}", utility(&se, lambda));
    }
    Ok(())
}
