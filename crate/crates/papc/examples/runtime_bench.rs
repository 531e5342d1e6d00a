//! Per-sample run-time comparison of the three power-control routes:
//! equal power allocation, transformer inference, and the iterative APG
//! solver, single-threaded.
//!
//! ```bash
//! cargo run --release --example runtime_bench
//! ```

use papc::config::preset;
use papc::net::{papc_infer, PapcHyper, PapcParams};
use papc::optim::{apg_solve, ApgConfig};
use papc::scenario::SampleGenerator;
use papc::se::epa;
use std::time::Instant;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn main() -> papc::Result<()> {
    let preset = preset("scenario0")?;
    let cfg = preset.scenario;
    let hyper = PapcHyper {
        m: cfg.m,
        k_max: cfg.k_max,
        m_bar: preset.m_bar,
        heads: preset.heads,
        blocks: preset.blocks,
        d_mod: preset.d_mod,
    };
    let params = PapcParams::init(hyper, 1)?;
    let gen = SampleGenerator::new(cfg.clone());
    let samples: Vec<_> = (0..12).map(|i| gen.sample(i)).collect();
    let apg_cfg = ApgConfig::default();

    let mut t_epa = Vec::new();
    let mut t_net = Vec::new();
    let mut t_apg = Vec::new();
    for rep in 0..5 {
        for s in &samples {
            let phi = s.pilot_gram(cfg.k_max);

            let t = Instant::now();
            std::hint::black_box(epa(cfg.m, cfg.k_max, s.k_active, cfg.n_antennas));
            t_epa.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            std::hint::black_box(papc_infer(&params, &s.beta, &phi, cfg.n_antennas));
            t_net.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            std::hint::black_box(apg_solve(&s.beta, &phi, &cfg, &apg_cfg)?);
            t_apg.push(t.elapsed().as_secs_f64());
        }
        if rep == 0 {
            println!("warmup repetition done");
        }
    }

    let (e, n, a) = (median(t_epa), median(t_net), median(t_apg));
    println!("median wall-clock per sample:");
    println!("  EPA            {:>10.1} us", e * 1e6);
    println!("  PAPC inference {:>10.1} us  ({:.0}x EPA)", n * 1e6, n / e);
    println!("  APG solve      {:>10.1} us  ({:.0}x PAPC)", a * 1e6, a / n);
    assert!(e < n && n < a, "expected EPA < PAPC < APG");
    println!("ordering EPA < PAPC inference < APG holds");
    Ok(())
}
