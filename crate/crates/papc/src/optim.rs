//! Optimizers: ADAM with the warmup/inverse-sqrt learning-rate schedule
//! for network training, and a Nesterov-accelerated projected gradient
//! (APG) solver that maximizes the smoothed-minimum utility directly
//! over the power matrix.

use ndarray::Array2;

use crate::autodiff::Tape;
use crate::config::ScenarioConfig;
use crate::scenario::active_mask;
use crate::se::{epa, evaluate_power, project_s};
use crate::se_graph::{utility_node, UtilityConstants};
use crate::{Error, Result};

/// Warmup schedule: `d_mod^{-0.5} * min(n^{-0.5}, n * n_warmup^{-1.5})`.
/// Ramps linearly up to `n = n_warmup`, then decays as `1/sqrt(n)`.
pub fn lr_schedule(n_step: usize, d_mod: usize, n_warmup: usize) -> f64 {
    assert!(n_step >= 1, "lr_schedule: steps are 1-based");
    let n = n_step as f64;
    let w = n_warmup as f64;
    (d_mod as f64).powf(-0.5) * (n.powf(-0.5)).min(n * w.powf(-1.5))
}

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub d_mod: usize,
    pub n_warmup: usize,
}

impl AdamConfig {
    pub fn new(d_mod: usize, n_warmup: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-9, d_mod, n_warmup }
    }
}

/// ADAM state: first/second moment per parameter array plus the step
/// counter driving the schedule.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    n_step: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            m: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
            v: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
            n_step: 0,
        }
    }

    pub fn n_step(&self) -> usize {
        self.n_step
    }

    /// One update with bias correction; returns the learning rate used.
    /// Any NaN gradient aborts with a diagnostic.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<f64> {
        assert_eq!(params.len(), self.m.len(), "adam: parameter list length changed");
        assert_eq!(grads.len(), self.m.len(), "adam: gradient list length mismatch");
        for (i, g) in grads.iter().enumerate() {
            if g.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric(format!(
                    "NaN gradient in parameter array {i} at step {}",
                    self.n_step + 1
                )));
            }
        }
        self.n_step += 1;
        let lr = lr_schedule(self.n_step, self.cfg.d_mod, self.cfg.n_warmup);
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.n_step as i32);
        let bc2 = 1.0 - b2.powi(self.n_step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.dim(), g.dim(), "adam: param/grad shape mismatch");
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
                });
        }
        Ok(lr)
    }
}

/// APG solver knobs. The step size is found by backtracking from
/// `eta0` with factor `shrink` under the quadratic-model test
/// `u(cand) >= u(y) + <grad, cand - y> - (armijo_c/eta)*||cand - y||²`,
/// which by the descent lemma accepts once `eta <= 2*armijo_c/L` and
/// stays sound when momentum extrapolates `y` outside the feasible set.
/// Momentum restarts whenever the accepted utility decreases.
#[derive(Debug, Clone, Copy)]
pub struct ApgConfig {
    pub max_iters: usize,
    pub eta0: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    pub restart: bool,
    /// Early stop when the running-max utility improves by less than
    /// this over `stop_window` iterations.
    pub stop_tol: f64,
    pub stop_window: usize,
}

impl Default for ApgConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            eta0: 1.0,
            shrink: 0.5,
            armijo_c: 0.5,
            max_backtracks: 40,
            restart: true,
            stop_tol: 1e-7,
            stop_window: 25,
        }
    }
}

/// Outcome of one APG run.
#[derive(Debug, Clone)]
pub struct ApgResult {
    /// Best feasible iterate encountered.
    pub mu: Array2<f64>,
    /// Its utility.
    pub utility: f64,
    /// Accepted-iterate utility per iteration.
    pub trace: Vec<f64>,
    pub iters: usize,
}

/// Utility and its gradient with respect to `mu`, by reverse-mode
/// differentiation through the SE pipeline.
pub fn utility_and_grad(consts: &UtilityConstants, mu: &Array2<f64>) -> (f64, Array2<f64>) {
    let mut tape = Tape::new();
    let mu_var = tape.leaf(mu.clone());
    let u = utility_node(&mut tape, mu_var, consts);
    let value = tape.value(u)[[0, 0]];
    tape.backward(u);
    let grad = tape.grad(mu_var).cloned().unwrap_or_else(|| Array2::zeros(mu.dim()));
    (value, grad)
}

/// Convenience wrapper building the constants from raw inputs.
pub fn utility_grad(
    beta: &Array2<f64>,
    phi: &Array2<f64>,
    mu: &Array2<f64>,
    cfg: &ScenarioConfig,
) -> (f64, Array2<f64>) {
    let consts = UtilityConstants::new(beta, phi, cfg);
    utility_and_grad(&consts, mu)
}

/// Maximizes the smoothed-minimum utility over the feasible set,
/// starting from equal power allocation.
pub fn apg_solve(
    beta: &Array2<f64>,
    phi: &Array2<f64>,
    cfg: &ScenarioConfig,
    apg: &ApgConfig,
) -> Result<ApgResult> {
    let (m, k_max) = beta.dim();
    let k_active = active_mask(phi).iter().filter(|&&v| v > 0.0).count();
    if k_active == 0 {
        return Err(Error::Data("apg: no active users".into()));
    }
    let consts = UtilityConstants::new(beta, phi, cfg);
    let utility_of = |mu: &Array2<f64>| evaluate_power(beta, phi, mu, cfg).1;

    let mut mu = epa(m, k_max, k_active, cfg.n_antennas);
    let mut mu_prev = mu.clone();
    let mut u_curr = utility_of(&mu);
    if !u_curr.is_finite() {
        return Err(Error::Numeric(format!("apg: non-finite utility {u_curr} at start")));
    }

    let mut best_u = u_curr;
    let mut best_mu = mu.clone();
    let mut best_hist = vec![best_u];
    let mut trace = Vec::with_capacity(apg.max_iters);
    let mut momentum = 1usize;
    let mut eta_init = apg.eta0;
    let mut iters = 0;

    for _ in 0..apg.max_iters {
        iters += 1;
        let extrap = (momentum as f64 - 1.0) / (momentum as f64 + 2.0);
        let y = &mu + &((&mu - &mu_prev) * extrap);
        let (u_y, grad) = utility_and_grad(&consts, &y);
        if !u_y.is_finite() {
            return Err(Error::Numeric(format!("apg: non-finite utility {u_y} at iter {iters}")));
        }

        // Backtracking line search against the quadratic model around y.
        let mut eta = eta_init;
        let mut accepted = None;
        let mut exhausted = false;
        for _ in 0..apg.max_backtracks {
            let candidate = project_s(&(&y + &(&grad * eta)), cfg.n_antennas);
            let u_c = utility_of(&candidate);
            let mut along = 0.0;
            let mut step_sq = 0.0;
            for ((&g, &c), &yv) in grad.iter().zip(candidate.iter()).zip(y.iter()) {
                let d = c - yv;
                along += g * d;
                step_sq += d * d;
            }
            if u_c.is_finite() && u_c >= u_y + along - apg.armijo_c / eta * step_sq {
                accepted = Some((candidate, u_c));
                break;
            }
            eta *= apg.shrink;
        }
        let (candidate, u_c) = match accepted {
            Some(pair) => pair,
            // Line search exhausted: fall back to the smallest step.
            None => {
                exhausted = true;
                let candidate = project_s(&(&y + &(&grad * eta)), cfg.n_antennas);
                let u_c = utility_of(&candidate);
                if !u_c.is_finite() {
                    return Err(Error::Numeric(format!(
                        "apg: non-finite utility after line search at iter {iters}"
                    )));
                }
                (candidate, u_c)
            }
        };

        let rejected = apg.restart && u_c < u_curr;
        if rejected {
            // Function-value restart: drop the extrapolated move, keep the
            // current iterate, and resume as a plain gradient step.
            momentum = 1;
            mu_prev = mu.clone();
            trace.push(u_curr);
        } else {
            mu_prev = std::mem::replace(&mut mu, candidate);
            momentum += 1;
            u_curr = u_c;
            trace.push(u_c);
            if u_c > best_u {
                best_u = u_c;
                best_mu = mu.clone();
            }
        }
        best_hist.push(best_u);
        // Re-open the step size; never inherit a collapsed eta from an
        // exhausted or rejected search.
        eta_init = if exhausted || rejected { apg.eta0 } else { (eta * 2.0).min(1e6) };

        if best_hist.len() > apg.stop_window {
            let window_ago = best_hist[best_hist.len() - 1 - apg.stop_window];
            if best_u - window_ago < apg.stop_tol {
                break;
            }
        }
    }

    Ok(ApgResult { mu: best_mu, utility: best_u, trace, iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::dataset::Dataset;
    use crate::scenario::{pilot_gram, SampleGenerator};
    use crate::se::is_feasible;
    use ndarray::Array2;

    #[test]
    fn lr_schedule_frozen_values() {
        // Frozen from the schedule formula.
        let peak = lr_schedule(4000, 16, 4000);
        assert!((peak - 0.003952847075210474).abs() < 1e-18, "peak {peak}");
        let first = lr_schedule(1, 16, 4000);
        assert!((first - 9.882117688026185e-7).abs() < 1e-20, "first {first}");
    }

    #[test]
    fn lr_schedule_peaks_at_warmup_and_is_continuous() {
        let w = 4000;
        let at = lr_schedule(w, 16, w);
        assert!(lr_schedule(w - 1, 16, w) < at);
        assert!(lr_schedule(w + 1, 16, w) < at);
        // The two branches meet at n = n_warmup.
        let ramp = (16f64).powf(-0.5) * w as f64 * (w as f64).powf(-1.5);
        assert!((at - ramp).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut p = Array2::from_elem((2, 2), 1.5);
        let g = Array2::zeros((2, 2));
        let mut adam = Adam::new(AdamConfig::new(16, 4000), &[(2, 2)]);
        adam.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p, Array2::from_elem((2, 2), 1.5));
    }

    #[test]
    fn adam_single_step_matches_hand_formula() {
        let g0 = 0.37;
        let mut p = Array2::from_elem((1, 1), 2.0);
        let g = Array2::from_elem((1, 1), g0);
        let cfg = AdamConfig::new(16, 4000);
        let mut adam = Adam::new(cfg, &[(1, 1)]);
        let lr = adam.step(&mut [&mut p], &[g]).unwrap();
        // After one step the bias corrections cancel: delta = -lr*g/(|g|+eps).
        let expect = 2.0 - lr * g0 / (g0.abs() + cfg.eps);
        assert!((p[[0, 0]] - expect).abs() < 1e-15, "got {}, want {expect}", p[[0, 0]]);
        assert!((lr - lr_schedule(1, 16, 4000)).abs() < 1e-20);
    }

    #[test]
    fn adam_constant_gradient_approaches_sign_step() {
        let mut p = Array2::from_elem((1, 1), 0.0);
        let g = Array2::from_elem((1, 1), -3.7);
        let mut adam = Adam::new(AdamConfig::new(16, 4000), &[(1, 1)]);
        let mut prev = p[[0, 0]];
        let mut lr = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..300 {
            lr = adam.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
            last_delta = p[[0, 0]] - prev;
            prev = p[[0, 0]];
        }
        // Moving against the (negative) gradient: delta -> +lr.
        let ratio = last_delta / lr;
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn adam_rejects_nan_gradients() {
        let mut p = Array2::zeros((1, 1));
        let g = Array2::from_elem((1, 1), f64::NAN);
        let mut adam = Adam::new(AdamConfig::new(16, 4000), &[(1, 1)]);
        assert!(matches!(adam.step(&mut [&mut p], &[g]), Err(Error::Numeric(_))));
    }

    #[test]
    fn apg_single_user_beats_epa_and_stays_feasible() {
        let mut cfg = preset("scenario0").unwrap().scenario;
        cfg.k_max = 1;
        cfg.m = 4;
        cfg.area_km2 = 0.004;
        let gen = SampleGenerator::new(cfg.clone());
        let s = gen.sample(0);
        let phi = pilot_gram(&s.pilots, 1, 1);
        let epa_u = evaluate_power(&s.beta, &phi, &epa(4, 1, 1, cfg.n_antennas), &cfg).1;
        let result = apg_solve(&s.beta, &phi, &cfg, &ApgConfig::default()).unwrap();
        assert!(is_feasible(&result.mu, cfg.n_antennas));
        assert!(result.utility >= epa_u, "apg {} < epa {epa_u}", result.utility);
    }

    #[test]
    fn apg_improves_on_epa_for_random_samples() {
        use rayon::prelude::*;
        let cfg = preset("scenario0").unwrap().scenario;
        let gen = SampleGenerator::new(cfg.clone());
        let ds = Dataset::generate(&gen, 0, 500);
        let improved: usize = (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let s = &ds.samples[i];
                let phi = ds.phi(i);
                let epa_u =
                    evaluate_power(&s.beta, &phi, &epa(cfg.m, cfg.k_max, s.k_active, 4), &cfg).1;
                let result = apg_solve(&s.beta, &phi, &cfg, &ApgConfig::default()).unwrap();
                assert!(result.utility >= epa_u - 1e-12);
                assert!(is_feasible(&result.mu, cfg.n_antennas));
                assert!(result.trace.iter().all(|u| u.is_finite()));
                usize::from(result.utility > epa_u + 1e-6)
            })
            .sum();
        // Strict improvement on at least 95% of the samples.
        assert!(improved >= 475, "strict improvement on only {improved}/500 samples");
    }

    #[test]
    fn apg_fixed_point_residual_shrinks() {
        let cfg = preset("scenario0").unwrap().scenario;
        let gen = SampleGenerator::new(cfg.clone());
        for idx in [3, 5] {
            let s = gen.sample(idx);
            let phi = s.pilot_gram(cfg.k_max);
            let consts = UtilityConstants::new(&s.beta, &phi, &cfg);
            let eta = 1.0;
            let residual = |mu: &Array2<f64>| {
                let (_, g) = utility_and_grad(&consts, mu);
                let stepped = project_s(&(mu + &(g * eta)), cfg.n_antennas);
                (&stepped - mu).map(|d| d * d).sum().sqrt() / eta
            };
            let start = epa(cfg.m, cfg.k_max, s.k_active, cfg.n_antennas);
            let r0 = residual(&start);
            let result = apg_solve(
                &s.beta,
                &phi,
                &cfg,
                &ApgConfig { max_iters: 600, stop_tol: 0.0, ..ApgConfig::default() },
            )
            .unwrap();
            let r1 = residual(&result.mu);
            assert!(r1 <= 1e-3 * r0, "sample {idx}: residual {r1} vs initial {r0}");
        }
    }

    #[test]
    fn gradient_symmetric_for_duplicate_users() {
        let cfg = preset("scenario0").unwrap().scenario;
        let gen = SampleGenerator::new(cfg.clone());
        let s = gen.sample(5);
        let mut beta = s.beta.clone();
        for m in 0..cfg.m {
            beta[[m, 1]] = beta[[m, 0]];
        }
        // Users 0 and 1 share a pilot and have identical fading.
        let phi = pilot_gram(&[0, 0, 1, 2], 4, 4);
        let mu = epa(cfg.m, cfg.k_max, 4, cfg.n_antennas);
        let (_, g) = utility_grad(&beta, &phi, &mu, &cfg);
        for m in 0..cfg.m {
            let rel = (g[[m, 0]] - g[[m, 1]]).abs() / g[[m, 0]].abs().max(1e-30);
            assert!(rel < 1e-9, "asymmetric gradient at BS {m}: {} vs {}", g[[m, 0]], g[[m, 1]]);
        }
    }

    #[test]
    fn large_lambda_concentrates_gradient_on_worst_user() {
        let mut cfg = preset("scenario0").unwrap().scenario;
        cfg.lambda_smooth = 100.0;
        let gen = SampleGenerator::new(cfg.clone());
        // Well-separated instance: weaken user 0 into the noise-limited
        // regime (the SINR is scale-free while interference dominates, so
        // the factor must push zeta_p*tau_p*beta below 1).
        let s = gen.sample(2);
        let mut beta = s.beta.clone();
        for m in 0..cfg.m {
            beta[[m, 0]] *= 1e-7;
        }
        let phi = Array2::eye(cfg.k_max);
        let mu = epa(cfg.m, cfg.k_max, cfg.k_max, cfg.n_antennas);
        let (sev, _) = evaluate_power(&beta, &phi, &mu, &cfg);
        let worst = (0..cfg.k_max)
            .min_by(|&a, &b| sev.se[a].partial_cmp(&sev.se[b]).unwrap())
            .unwrap();
        assert_eq!(worst, 0);
        assert!(sev.se[worst] < 0.1 * sev.se[1]);
        let (_, g) = utility_grad(&beta, &phi, &mu, &cfg);
        let total: f64 = g.iter().map(|v| v.abs()).sum();
        let on_worst: f64 = (0..cfg.m).map(|m| g[[m, worst]].abs()).sum();
        assert!(
            on_worst / total >= 0.99,
            "gradient mass on worst user {} of total {total}",
            on_worst
        );
    }
}
