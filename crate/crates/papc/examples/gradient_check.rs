//! Reverse-mode gradients vs central finite differences, for the
//! utility-of-power-matrix pipeline and for a small transformer loss.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use ndarray::Array2;
use papc::autodiff::Tape;
use papc::config::preset;
use papc::net::{papc_forward, PapcHyper, PapcParams, ProjectionMode};
use papc::scenario::SampleGenerator;
use papc::se::{epa, evaluate_power};
use papc::se_graph::{se_node, utility_from_se_node, utility_node, UtilityConstants};

fn main() -> papc::Result<()> {
    let cfg = preset("scenario0")?.scenario;
    let gen = SampleGenerator::new(cfg.clone());
    let s = gen.sample(0);
    let phi = s.pilot_gram(cfg.k_max);
    let consts = UtilityConstants::new(&s.beta, &phi, &cfg);

    // Utility of the power matrix: the gradient the APG solver uses.
    let mu0 = epa(cfg.m, cfg.k_max, s.k_active, cfg.n_antennas);
    let mut tape = Tape::new();
    let mu = tape.leaf(mu0.clone());
    let u = utility_node(&mut tape, mu, &consts);
    tape.backward(u);
    let grad = tape.grad(mu).unwrap().clone();

    let h = 1e-6;
    let mut probe = mu0.clone();
    let mut worst: f64 = 0.0;
    for m in 0..cfg.m {
        for k in 0..cfg.k_max {
            let orig = probe[[m, k]];
            probe[[m, k]] = orig + h;
            let up = evaluate_power(&s.beta, &phi, &probe, &cfg).1;
            probe[[m, k]] = orig - h;
            let um = evaluate_power(&s.beta, &phi, &probe, &cfg).1;
            probe[[m, k]] = orig;
            let fd = (up - um) / (2.0 * h);
            if fd.abs() > 1e-8 {
                worst = worst.max((grad[[m, k]] - fd).abs() / fd.abs());
            }
        }
    }
    println!("utility-of-power gradient: {} entries, max rel err vs FD = {worst:.2e}", grad.len());

    // Full transformer loss on a small model.
    let hyper = PapcHyper { m: 10, k_max: 4, m_bar: 16, heads: 2, blocks: 2, d_mod: 16 };
    let mut params = PapcParams::init(hyper, 42)?;
    let loss_of = |p: &PapcParams| {
        let mut t = Tape::new();
        let fwd = papc_forward(&mut t, p, &s.beta, &phi, cfg.n_antennas, ProjectionMode::None, false);
        let se = se_node(&mut t, fwd.output, &consts);
        let u = utility_from_se_node(&mut t, se, &consts);
        t.value(u)[[0, 0]]
    };

    let mut tape = Tape::new();
    let fwd = papc_forward(&mut tape, &params, &s.beta, &phi, cfg.n_antennas, ProjectionMode::None, true);
    let se = se_node(&mut tape, fwd.output, &consts);
    let u = utility_from_se_node(&mut tape, se, &consts);
    tape.backward(u);
    let grads: Vec<Array2<f64>> = fwd
        .param_vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(tape.dim(v))))
        .collect();

    // Spot-check two entries of every parameter array.
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (ai, g) in grads.iter().enumerate() {
        for (r, c) in [(0, 0), (g.nrows() - 1, g.ncols() - 1)] {
            let orig = params.arrays()[ai][[r, c]];
            params.arrays_mut()[ai][[r, c]] = orig + h;
            let fp = loss_of(&params);
            params.arrays_mut()[ai][[r, c]] = orig - h;
            let fm = loss_of(&params);
            params.arrays_mut()[ai][[r, c]] = orig;
            let fd = (fp - fm) / (2.0 * h);
            if fd.abs() > 1e-8 {
                worst = worst.max((g[[r, c]] - fd).abs() / fd.abs());
                checked += 1;
            }
        }
    }
    println!("transformer loss gradient: {checked} spot checks, max rel err = {worst:.2e}");
    assert!(worst < 1e-5);
    Ok(())
}
