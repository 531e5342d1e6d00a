//! One network, varying user counts. Fading columns of absent users are
//! padded with a tiny constant and the pilot gram with zeros; the
//! network's output columns for those users are exactly zero, so one
//! model dimensioned for K_max serves any smaller K without retraining.
//!
//! ```bash
//! cargo run --example varying_users
//! ```

use papc::config::preset;
use papc::net::{papc_infer, PapcHyper, PapcParams};
use papc::scenario::{pad_fading, pilot_gram, SampleGenerator};
use papc::se::{evaluate_power, is_feasible};

fn main() -> papc::Result<()> {
    let mut cfg = preset("mini")?.scenario;
    cfg.k_min = Some(2);
    let hyper = PapcHyper {
        m: cfg.m,
        k_max: cfg.k_max,
        m_bar: 40,
        heads: 5,
        blocks: 2,
        d_mod: 16,
    };
    // Untrained weights; the structural guarantees hold regardless.
    let params = PapcParams::init(hyper, 3)?;
    let gen = SampleGenerator::new(cfg.clone());

    for index in 0..6u64 {
        let s = gen.sample(index);
        let phi = s.pilot_gram(cfg.k_max);
        let mu = papc_infer(&params, &s.beta, &phi, cfg.n_antennas);
        assert!(is_feasible(&mu, cfg.n_antennas));
        let padded_power: f64 = (s.k_active..cfg.k_max)
            .map(|k| (0..cfg.m).map(|m| mu[[m, k]].abs()).sum::<f64>())
            .sum();
        let (_, u) = evaluate_power(&s.beta, &phi, &mu, &cfg);
        println!(
            "sample {index}: K_active = {}, padded-column power = {padded_power:.1}, utility = {u:.4}",
            s.k_active
        );
    }

    // The same effect from explicit padding of a smaller instance.
    let small = gen.sample(100);
    let k = 3.min(small.k_active);
    let beta_small = small.beta.slice(ndarray::s![.., ..k]).to_owned();
    let beta_padded = pad_fading(&beta_small, cfg.k_max, cfg.pad_beta);
    let phi_padded = pilot_gram(&small.pilots[..k], k, cfg.k_max);
    let mu = papc_infer(&params, &beta_padded, &phi_padded, cfg.n_antennas);
    println!(
        "\nexplicitly padded K={k}: output is {}x{}, padded columns all zero: {}",
        mu.nrows(),
        mu.ncols(),
        (k..cfg.k_max).all(|col| (0..cfg.m).all(|m| mu[[m, col]] == 0.0))
    );
    Ok(())
}
