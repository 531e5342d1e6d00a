//! The SINR → spectral-efficiency → soft-minimum utility pipeline
//! expressed on the autodiff tape, so gradients with respect to the
//! power matrix (and, upstream, network weights) come out of one
//! backward pass.
//!
//! The matrix formulation used here: with `W[m][i] = mu[m][i] *
//! sqrt(nu[m][i]) / beta[m][i]` and `T = sqrt(phi) ⊙ (Wᵀ B)`,
//!
//! ```text
//! gamma_k = zd*T[k][k]^2 / ( zd*(sum_i T[i][k]^2 - T[k][k]^2)
//!           + (zd/N) * (Bᵀ r)[k] + 1/N^2 ),     r[m] = sum_i mu[m][i]^2
//! ```
//!
//! which matches the closed form in [`crate::se`] term by term. Logs of
//! the positive-denominator ratio avoid a division primitive:
//! `ln(1 + gamma) = ln(den + num) - ln(den)`.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::config::ScenarioConfig;
use crate::scenario::active_mask;
use crate::se::mmse_variance;

/// Constant (non-differentiated) inputs of the utility graph for one
/// sample: everything derived from `beta`, `phi` and the scenario.
#[derive(Debug, Clone)]
pub struct UtilityConstants {
    /// M × K: `sqrt(nu)/beta`, the weight taking `mu` to the coherent sums.
    pub cross_weight: Array2<f64>,
    /// M × K fading matrix.
    pub beta: Array2<f64>,
    /// K × K elementwise square root of the pilot gram.
    pub sqrt_phi: Array2<f64>,
    /// 1 × K row; 1 for active users, 0 for padded ones.
    pub mask: Array2<f64>,
    pub k_active: usize,
    pub zeta_d: f64,
    pub n_antennas: usize,
    /// `1 - tau_p/tau`.
    pub prefactor: f64,
    pub lambda: f64,
}

impl UtilityConstants {
    pub fn new(beta: &Array2<f64>, phi: &Array2<f64>, cfg: &ScenarioConfig) -> Self {
        let nu = mmse_variance(beta, phi, cfg.zeta_p, cfg.tau_p);
        let mut cross_weight = nu.map(|v| v.sqrt());
        cross_weight /= beta;
        let mask_row = active_mask(phi);
        let k_active = mask_row.iter().filter(|&&v| v > 0.0).count();
        assert!(k_active >= 1, "utility needs at least one active user");
        Self {
            cross_weight,
            beta: beta.clone(),
            sqrt_phi: phi.map(|v| v.sqrt()),
            mask: mask_row.insert_axis(ndarray::Axis(0)).to_owned(),
            k_active,
            zeta_d: cfg.zeta_d,
            n_antennas: cfg.n_antennas,
            prefactor: cfg.se_prefactor(),
            lambda: cfg.lambda_smooth,
        }
    }
}

/// Per-user SE (1 × K) of the power matrix node `mu`; padded users get 0.
pub fn se_node(tape: &mut Tape, mu: Var, c: &UtilityConstants) -> Var {
    let (m, k) = tape.dim(mu);
    assert_eq!(c.beta.dim(), (m, k), "se_node: beta shape {:?} vs mu {:?}", c.beta.dim(), (m, k));
    let n = c.n_antennas as f64;

    let cross_weight = tape.constant(c.cross_weight.clone());
    let beta = tape.constant(c.beta.clone());
    let sqrt_phi = tape.constant(c.sqrt_phi.clone());
    let ones_row = tape.constant(Array2::ones((1, k)));
    let eye = tape.constant(Array2::eye(k));
    let ones_col = tape.constant(Array2::ones((k, 1)));

    // T[i][k] = sqrt(phi[i][k]) * sum_m mu[m][i]*cross_weight[m][i]*beta[m][k]
    let weighted = tape.hadamard(mu, cross_weight);
    let weighted_t = tape.transpose(weighted);
    let coherent = tape.matmul(weighted_t, beta);
    let t = tape.hadamard(coherent, sqrt_phi);
    let t2 = tape.square(t);

    // Column sums of T² and its diagonal.
    let col_sums = tape.matmul(ones_row, t2);
    let diag_only = tape.hadamard(t2, eye);
    let diag = tape.matmul(ones_row, diag_only);

    let numerator = tape.scalar_mul(diag, c.zeta_d);
    let off_diag = tape.sub(col_sums, diag);
    let coherent_interference = tape.scalar_mul(off_diag, c.zeta_d);

    // Beamforming-uncertainty power: (zd/N) * sum_m (sum_i mu[m][i]^2) beta[m][k]
    let mu2 = tape.square(mu);
    let row_power = tape.matmul(mu2, ones_col);
    let beta_t = tape.transpose(beta);
    let bf_col = tape.matmul(beta_t, row_power);
    let bf_row = tape.transpose(bf_col);
    let bf_power = tape.scalar_mul(bf_row, c.zeta_d / n);

    let interference = tape.add(coherent_interference, bf_power);
    let den = tape.scalar_add(interference, 1.0 / (n * n));

    // se = prefactor * log2(1 + num/den) = prefactor/ln2 * (ln(den+num) - ln(den))
    let den_plus_num = tape.add(den, numerator);
    let ln_total = tape.ln(den_plus_num);
    let ln_den = tape.ln(den);
    let diff = tape.sub(ln_total, ln_den);
    tape.scalar_mul(diff, c.prefactor / std::f64::consts::LN_2)
}

/// Soft-minimum utility (1 × 1) over the active users of `se` (1 × K).
///
/// The max shift is read off the current values and enters the graph as
/// a constant; the gradient is unchanged by the shift.
pub fn utility_from_se_node(tape: &mut Tape, se: Var, c: &UtilityConstants) -> Var {
    let lambda = c.lambda;
    let t = tape.scalar_mul(se, -lambda);
    let shift = tape
        .value(t)
        .iter()
        .zip(c.mask.iter())
        .filter(|(_, &m)| m > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.scalar_add(t, -shift);
    let expd = tape.exp(shifted);
    let mask = tape.constant(c.mask.clone());
    let masked = tape.hadamard(expd, mask);
    let total = tape.sum_all(masked);
    let ln_sum = tape.ln(total);
    let centered = tape.scalar_add(ln_sum, shift - (c.k_active as f64).ln());
    tape.scalar_mul(centered, -1.0 / lambda)
}

/// Utility (1 × 1) of the power matrix node `mu`.
pub fn utility_node(tape: &mut Tape, mu: Var, c: &UtilityConstants) -> Var {
    let se = se_node(tape, mu, c);
    utility_from_se_node(tape, se, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::dataset::Dataset;
    use crate::scenario::SampleGenerator;
    use crate::se;

    /// Tape and closed-form paths must agree to machine precision.
    #[test]
    fn tape_utility_matches_closed_form() {
        let cfg = preset("mini").unwrap().scenario;
        let gen = SampleGenerator::new(cfg.clone());
        let ds = Dataset::generate(&gen, 0, 4);
        for i in 0..ds.len() {
            let sample = &ds.samples[i];
            let phi = ds.phi(i);
            let mu = se::epa(cfg.m, cfg.k_max, sample.k_active, cfg.n_antennas);
            let (sev, u_ref) = se::evaluate_power(&sample.beta, &phi, &mu, &cfg);

            let consts = UtilityConstants::new(&sample.beta, &phi, &cfg);
            let mut tape = Tape::new();
            let mu_var = tape.leaf(mu);
            let se_var = se_node(&mut tape, mu_var, &consts);
            let u_var = utility_from_se_node(&mut tape, se_var, &consts);

            for k in 0..cfg.k_max {
                let a = tape.value(se_var)[[0, k]];
                let b = sev.se[k];
                assert!(
                    (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                    "sample {i} user {k}: tape {a} vs closed form {b}"
                );
            }
            let u_tape = tape.value(u_var)[[0, 0]];
            assert!(
                (u_tape - u_ref).abs() <= 1e-12 * u_ref.abs().max(1.0),
                "sample {i}: tape {u_tape} vs closed form {u_ref}"
            );
        }
    }

    #[test]
    fn varying_k_padded_users_have_zero_se_and_zero_gradient_columns() {
        let mut cfg = preset("mini").unwrap().scenario;
        cfg.k_min = Some(4);
        let gen = SampleGenerator::new(cfg.clone());
        // Find a sample with padding.
        let sample = (0..100)
            .map(|i| gen.sample(i))
            .find(|s| s.k_active < cfg.k_max)
            .expect("varying-K sample");
        let phi = sample.pilot_gram(cfg.k_max);
        let consts = UtilityConstants::new(&sample.beta, &phi, &cfg);
        let mu = se::epa(cfg.m, cfg.k_max, sample.k_active, cfg.n_antennas);

        let mut tape = Tape::new();
        let mu_var = tape.leaf(mu);
        let se_var = se_node(&mut tape, mu_var, &consts);
        let u = utility_from_se_node(&mut tape, se_var, &consts);
        for k in sample.k_active..cfg.k_max {
            assert_eq!(tape.value(se_var)[[0, k]], 0.0);
        }
        tape.backward(u);
        let g = tape.grad(mu_var).unwrap();
        // At mu = 0 in a padded column the power term is quadratic, so the
        // gradient there vanishes.
        for m in 0..cfg.m {
            for k in sample.k_active..cfg.k_max {
                assert!(g[[m, k]].abs() < 1e-30, "grad[{m}][{k}] = {}", g[[m, k]]);
            }
        }
    }

    #[test]
    fn utility_gradient_matches_finite_differences() {
        let cfg = preset("scenario0").unwrap().scenario;
        let gen = SampleGenerator::new(cfg.clone());
        let ds = Dataset::generate(&gen, 0, 1);
        let sample = &ds.samples[0];
        let phi = ds.phi(0);
        let consts = UtilityConstants::new(&sample.beta, &phi, &cfg);
        let mu0 = se::epa(cfg.m, cfg.k_max, sample.k_active, cfg.n_antennas);

        let mut tape = Tape::new();
        let mu_var = tape.leaf(mu0.clone());
        let u = utility_node(&mut tape, mu_var, &consts);
        tape.backward(u);
        let grad = tape.grad(mu_var).unwrap().clone();

        let h = 1e-6;
        let mut probe = mu0.clone();
        for m in 0..cfg.m {
            for k in 0..cfg.k_max {
                let orig = probe[[m, k]];
                probe[[m, k]] = orig + h;
                let (_, up) = se::evaluate_power(&sample.beta, &phi, &probe, &cfg);
                probe[[m, k]] = orig - h;
                let (_, um) = se::evaluate_power(&sample.beta, &phi, &probe, &cfg);
                probe[[m, k]] = orig;
                let fd = (up - um) / (2.0 * h);
                let ad = grad[[m, k]];
                if fd.abs() > 1e-8 {
                    let rel = (ad - fd).abs() / fd.abs();
                    assert!(rel < 1e-6, "grad[{m}][{k}]: ad {ad}, fd {fd}, rel {rel}");
                } else {
                    assert!((ad - fd).abs() < 1e-7);
                }
            }
        }
    }
}
