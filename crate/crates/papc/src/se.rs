//! Closed-form physical-layer math: MMSE channel-estimate variance,
//! downlink SINR and spectral efficiency under matched-filter
//! beamforming, the smoothed-minimum utility, the per-BS power constraint
//! set with its Euclidean projection, and the equal power allocation
//! baseline.
//!
//! Conventions: `beta` is the M × K large-scale fading matrix (linear
//! scale, strictly positive), `phi` the K × K pilot gram, `mu` the M × K
//! power-control matrix. The feasible set `S` is
//! `{ mu >= 0, sum_k mu[m][k]^2 <= 1/N for every row m }`.

use ndarray::{Array1, Array2, Axis};

/// Feasibility slack used when asserting membership in `S`.
pub const TOL_FEAS: f64 = 1e-12;

/// Mean-square value of the MMSE channel estimate per antenna element:
/// `nu[m][k] = zp*tp*beta[m][k]^2 / (1 + zp*tp * sum_i beta[m][i]*phi[i][k])`.
pub fn mmse_variance(beta: &Array2<f64>, phi: &Array2<f64>, zeta_p: f64, tau_p: usize) -> Array2<f64> {
    let (m, k) = beta.dim();
    assert_eq!(phi.dim(), (k, k), "phi must be K x K");
    let zt = zeta_p * tau_p as f64;
    // contaminated[m][k] = sum_i beta[m][i] * phi[i][k]
    let contaminated = beta.dot(phi);
    let mut nu = Array2::zeros((m, k));
    for mi in 0..m {
        for ki in 0..k {
            let b = beta[[mi, ki]];
            nu[[mi, ki]] = zt * b * b / (1.0 + zt * contaminated[[mi, ki]]);
        }
    }
    nu
}

/// Per-user SINR and spectral efficiency for a given power allocation.
#[derive(Debug, Clone)]
pub struct SeVector {
    pub gamma: Array1<f64>,
    pub se: Array1<f64>,
}

/// Downlink SINR per user.
///
/// `gamma_k = zd*(mu̅_k' v_kk)^2 / ( sum_{i != k} zd*(mu̅_i' v_ik)^2
///            + (zd/N) * sum_i ||D_k mu̅_i||^2 + 1/N^2 )`
/// with the cross vector `v_ik[m] = sqrt(phi[i][k]) * sqrt(nu[m][i]) *
/// beta[m][k]/beta[m][i]` and `D_k = diag(sqrt(beta[.,k]))`.
pub fn sinr(
    beta: &Array2<f64>,
    phi: &Array2<f64>,
    nu: &Array2<f64>,
    mu: &Array2<f64>,
    zeta_d: f64,
    n_antennas: usize,
) -> Array1<f64> {
    let n = n_antennas as f64;
    sinr_with_noise(beta, phi, nu, mu, zeta_d, n_antennas, 1.0 / (n * n))
}

/// SINR with an explicit constant noise term (the public entry point uses
/// `1/N^2`); the seam lets tests exercise the zero-noise scale structure.
pub(crate) fn sinr_with_noise(
    beta: &Array2<f64>,
    phi: &Array2<f64>,
    nu: &Array2<f64>,
    mu: &Array2<f64>,
    zeta_d: f64,
    n_antennas: usize,
    noise: f64,
) -> Array1<f64> {
    let (m, k) = beta.dim();
    assert_eq!(nu.dim(), (m, k), "nu must match beta");
    assert_eq!(mu.dim(), (m, k), "mu must match beta");
    assert_eq!(phi.dim(), (k, k), "phi must be K x K");
    let n = n_antennas as f64;

    // weighted[m][i] = mu[m][i] * sqrt(nu[m][i]) / beta[m][i]
    // cross[i][k]    = sqrt(phi[i][k]) * sum_m weighted[m][i] * beta[m][k]
    let mut weighted = Array2::zeros((m, k));
    for mi in 0..m {
        for i in 0..k {
            weighted[[mi, i]] = mu[[mi, i]] * nu[[mi, i]].sqrt() / beta[[mi, i]];
        }
    }
    let mut cross = weighted.t().dot(beta);
    for i in 0..k {
        for ki in 0..k {
            cross[[i, ki]] *= phi[[i, ki]].sqrt();
        }
    }

    // row_power[m] = sum_i mu[m][i]^2;  bf_power[k] = sum_m row_power[m]*beta[m][k]
    let row_power: Array1<f64> = mu.map(|x| x * x).sum_axis(Axis(1));
    let bf_power = beta.t().dot(&row_power);

    let mut gamma = Array1::zeros(k);
    for ki in 0..k {
        let coherent = cross[[ki, ki]];
        let numerator = zeta_d * coherent * coherent;
        let mut interference = 0.0;
        for i in 0..k {
            if i != ki {
                interference += zeta_d * cross[[i, ki]] * cross[[i, ki]];
            }
        }
        let denom = interference + zeta_d / n * bf_power[ki] + noise;
        gamma[ki] = numerator / denom;
    }
    gamma
}

/// Lower-bound spectral efficiency in bits/s/Hz:
/// `se_k = (1 - tau_p/tau) * log2(1 + gamma_k)`.
pub fn spectral_efficiency(gamma: &Array1<f64>, tau: usize, tau_p: usize) -> SeVector {
    let prefactor = 1.0 - tau_p as f64 / tau as f64;
    let se = gamma.map(|&g| prefactor * (1.0 + g).log2());
    SeVector { gamma: gamma.clone(), se }
}

/// Soft-minimum utility over the given (active-user) SE values:
/// `u = -(1/lambda) * ln( (1/K) * sum_k exp(-lambda*se_k) )`,
/// computed with a max shift. Satisfies
/// `min(se) <= u <= min(se) + ln(K)/lambda`.
pub fn utility(se_active: &[f64], lambda: f64) -> f64 {
    assert!(!se_active.is_empty(), "utility needs at least one active user");
    assert!(lambda > 0.0, "lambda must be positive");
    let k = se_active.len() as f64;
    // t_k = -lambda * se_k, shifted by c = max t.
    let c = se_active
        .iter()
        .map(|&s| -lambda * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = se_active.iter().map(|&s| (-lambda * s - c).exp()).sum();
    -(c + sum.ln() - k.ln()) / lambda
}

/// Euclidean projection onto `S` (nonnegative orthant intersected with
/// the per-row L2 ball of radius `1/sqrt(N)`), realized row by row as
/// clamp-then-scale.
///
/// Exactness (KKT): for one row, minimize `||y - x||^2` s.t. `y >= 0`,
/// `||y|| <= r`. Stationarity gives `y = max(x, 0) / (1 + theta)` with
/// multiplier `theta >= 0` for the ball. If `||max(x,0)|| <= r` then
/// `theta = 0` and `y = max(x, 0)` is feasible and optimal. Otherwise
/// complementary slackness forces `||y|| = r`, so `1 + theta =
/// ||max(x,0)|| / r`, i.e. the clamped row scaled onto the sphere.
/// Scaling by a positive factor preserves nonnegativity, so the
/// composition is the exact projection.
pub fn project_s(mat: &Array2<f64>, n_antennas: usize) -> Array2<f64> {
    let mut out = mat.clone();
    project_s_inplace(&mut out, n_antennas);
    out
}

/// In-place variant of [`project_s`].
pub fn project_s_inplace(mat: &mut Array2<f64>, n_antennas: usize) {
    let radius = 1.0 / (n_antennas as f64).sqrt();
    for mut row in mat.rows_mut() {
        let mut norm_sq = 0.0;
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
            norm_sq += *v * *v;
        }
        if norm_sq > radius * radius {
            let scale = radius / norm_sq.sqrt();
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// Whether every entry is nonnegative and every row norm² is within
/// `1/N + TOL_FEAS`.
pub fn is_feasible(mat: &Array2<f64>, n_antennas: usize) -> bool {
    let bound = 1.0 / n_antennas as f64 + TOL_FEAS;
    mat.iter().all(|&v| v >= 0.0)
        && mat
            .rows()
            .into_iter()
            .all(|row| row.iter().map(|&v| v * v).sum::<f64>() <= bound)
}

/// Equal power allocation: every BS splits full power evenly over the
/// active users, `mu[m][k] = 1/sqrt(N*K_active)` for `k < k_active` and 0
/// for padded columns. Row norms sit exactly on the constraint boundary.
pub fn epa(m: usize, k_max: usize, k_active: usize, n_antennas: usize) -> Array2<f64> {
    assert!(k_active >= 1 && k_active <= k_max, "k_active out of range");
    let value = 1.0 / ((n_antennas * k_active) as f64).sqrt();
    let mut mu = Array2::zeros((m, k_max));
    mu.slice_mut(ndarray::s![.., ..k_active]).fill(value);
    mu
}

/// Convenience: SINR + SE + utility for one sample and power allocation.
/// Utility is taken over the active users only (`phi` diagonal == 1).
pub fn evaluate_power(
    beta: &Array2<f64>,
    phi: &Array2<f64>,
    mu: &Array2<f64>,
    cfg: &crate::config::ScenarioConfig,
) -> (SeVector, f64) {
    let nu = mmse_variance(beta, phi, cfg.zeta_p, cfg.tau_p);
    let gamma = sinr(beta, phi, &nu, mu, cfg.zeta_d, cfg.n_antennas);
    let sev = spectral_efficiency(&gamma, cfg.tau, cfg.tau_p);
    let active: Vec<f64> = (0..phi.nrows())
        .filter(|&k| phi[[k, k]] > 0.0)
        .map(|k| sev.se[k])
        .collect();
    let u = utility(&active, cfg.lambda_smooth);
    (sev, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn mmse_variance_matches_frozen_scalar_oracle() {
        // Hand instance: zeta_p * tau_p = 1e10, both users share a pilot.
        // Reference values computed with 40-digit arithmetic.
        let beta = arr2(&[[1e-7, 2e-7], [3e-7, 5e-8]]);
        let phi = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let nu = mmse_variance(&beta, &phi, 1e9, 10);
        let expect = [
            [3.332222592469177e-8, 1.3328890369876708e-7],
            [2.570694087403599e-7, 7.140816909454442e-9],
        ];
        for m in 0..2 {
            for k in 0..2 {
                let rel = (nu[[m, k]] - expect[m][k]).abs() / expect[m][k];
                assert!(rel < 1e-15, "nu[{m}][{k}] rel err {rel}");
            }
        }
    }

    #[test]
    fn mmse_variance_limits() {
        // zeta_p -> 0 gives nu = 0.
        let beta = arr2(&[[1e-7, 2e-7]]);
        let phi = Array2::eye(2);
        let nu = mmse_variance(&beta, &phi, 0.0, 20);
        assert!(nu.iter().all(|&v| v == 0.0));
        // Single user, zp*tp*beta >> 1: nu -> beta (perfect estimation).
        let beta = arr2(&[[1.0e-3]]);
        let phi = Array2::eye(1);
        let nu = mmse_variance(&beta, &phi, 1e12, 20);
        let rel = (nu[[0, 0]] - beta[[0, 0]]).abs() / beta[[0, 0]];
        assert!(rel < 1e-7, "asymptote rel err {rel}");
        // nu < beta always when zp*tp > 0.
        assert!(nu[[0, 0]] < beta[[0, 0]]);
    }

    #[test]
    fn sinr_zero_power_is_zero() {
        let beta = arr2(&[[1e-7, 2e-7], [3e-7, 5e-8]]);
        let phi = Array2::eye(2);
        let nu = mmse_variance(&beta, &phi, 1e9, 10);
        let mu = Array2::zeros((2, 2));
        let gamma = sinr(&beta, &phi, &nu, &mu, 1e12, 4);
        assert!(gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sinr_scale_structure_in_zeta_d() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let beta = Array2::from_shape_fn((3, 2), |_| 10f64.powf(rng.random_range(-9.0..-6.0)));
        let phi = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let nu = mmse_variance(&beta, &phi, 3e11, 20);
        let mu = Array2::from_shape_fn((3, 2), |_| rng.random_range(0.0..0.3));
        // With the constant noise term zeroed, gamma is invariant to zeta_d.
        let g1 = sinr_with_noise(&beta, &phi, &nu, &mu, 1e12, 4, 0.0);
        let g2 = sinr_with_noise(&beta, &phi, &nu, &mu, 7e12, 4, 0.0);
        for k in 0..2 {
            let rel = (g1[k] - g2[k]).abs() / g1[k];
            assert!(rel < 1e-12, "zero-noise invariance violated: {rel}");
        }
        // With the noise term present, gamma is nondecreasing in zeta_d.
        let lo = sinr(&beta, &phi, &nu, &mu, 1e11, 4);
        let hi = sinr(&beta, &phi, &nu, &mu, 1e12, 4);
        for k in 0..2 {
            assert!(hi[k] >= lo[k]);
        }
    }

    #[test]
    fn orthogonal_pilots_remove_coherent_cross_terms() {
        // With phi = I the i != k coherent terms vanish; check against a
        // direct evaluation with those terms deleted.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let m = 3;
        let k = 3;
        let beta = Array2::from_shape_fn((m, k), |_| 10f64.powf(rng.random_range(-9.0..-6.0)));
        let phi = Array2::eye(k);
        let nu = mmse_variance(&beta, &phi, 3e11, 20);
        let mu = Array2::from_shape_fn((m, k), |_| rng.random_range(0.0..0.3));
        let zeta_d = 1.5e12;
        let n = 4usize;
        let gamma = sinr(&beta, &phi, &nu, &mu, zeta_d, n);
        for ki in 0..k {
            let coherent: f64 = (0..m).map(|mi| mu[[mi, ki]] * nu[[mi, ki]].sqrt()).sum();
            let num = zeta_d * coherent * coherent;
            let bf: f64 = (0..k)
                .map(|i| (0..m).map(|mi| mu[[mi, i]] * mu[[mi, i]] * beta[[mi, ki]]).sum::<f64>())
                .sum();
            let den = zeta_d / n as f64 * bf + 1.0 / (n * n) as f64;
            let rel = (gamma[ki] - num / den).abs() / (num / den);
            assert!(rel < 1e-12, "rel err {rel}");
        }
    }

    #[test]
    fn spectral_efficiency_values() {
        let gamma = ndarray::arr1(&[0.0, 1.0, 3.0]);
        let sev = spectral_efficiency(&gamma, 200, 20);
        assert_eq!(sev.se[0], 0.0);
        assert!((sev.se[1] - 0.9).abs() < 1e-15);
        assert!((sev.se[2] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn utility_constant_and_softmin_limit() {
        // All-equal SE collapses to that value.
        let u = utility(&[2.5, 2.5, 2.5], 3.0);
        assert!((u - 2.5).abs() < 1e-12);
        // Large lambda approaches the hard minimum.
        let u = utility(&[0.0, 10.0], 50.0);
        assert!(u >= 0.0 - 1e-12 && u <= 2f64.ln() / 50.0 + 1e-12);
        // Frozen high-precision reference for se=(1,2), lambda=3.
        let u = utility(&[1.0, 2.0], 3.0);
        assert!((u - 1.2148532763287344).abs() < 1e-14, "u = {u}");
    }

    #[test]
    fn utility_sandwich_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let k = rng.random_range(1..8usize);
            let se: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..12.0)).collect();
            let lambda = rng.random_range(0.5..60.0);
            let u = utility(&se, lambda);
            let min = se.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            assert!(u >= min - 1e-12);
            assert!(u <= min + (k as f64).ln() / lambda + 1e-12);
        }
    }

    #[test]
    fn utility_is_overflow_safe() {
        // Without the max shift these would under/overflow.
        let u = utility(&[1000.0, 1000.5], 50.0);
        assert!(u.is_finite() && u >= 1000.0 - 1e-9);
        let u = utility(&[-800.0, -799.0], 1.0);
        assert!(u.is_finite() && u >= -800.0 - 1e-9);
    }

    #[test]
    fn projection_worked_example() {
        // Row (-1, 3, 4), N=4: clamp to (0,3,4), norm 5 > 1/2, scale by 0.1.
        let mat = arr2(&[[-1.0, 3.0, 4.0]]);
        let out = project_s(&mat, 4);
        let want = arr2(&[[0.0, 0.3, 0.4]]);
        for (o, w) in out.iter().zip(want.iter()) {
            assert!((o - w).abs() < 1e-15, "got {o}, want {w}");
        }
    }

    #[test]
    fn projection_identity_and_zero() {
        let feasible = arr2(&[[0.1, 0.2], [0.0, 0.05]]);
        assert_eq!(project_s(&feasible, 4), feasible);
        let zeros = Array2::zeros((3, 2));
        assert_eq!(project_s(&zeros, 4), zeros);
    }

    #[test]
    fn projection_idempotent_and_nonexpansive() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..200 {
            let rows = rng.random_range(1..4usize);
            let cols = rng.random_range(2..9usize);
            let a = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0));
            let b = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-2.0..2.0));
            let pa = project_s(&a, 4);
            let pb = project_s(&b, 4);
            assert!(is_feasible(&pa, 4));
            let ppa = project_s(&pa, 4);
            for (x, y) in pa.iter().zip(ppa.iter()) {
                assert!((x - y).abs() <= 1e-15);
            }
            let d_in: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            let d_out: f64 = pa.iter().zip(pb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            assert!(d_out <= d_in + 1e-12);
        }
    }

    #[test]
    fn epa_structure() {
        let mu = epa(2, 4, 4, 4);
        assert!(mu.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        for row in mu.rows() {
            let norm_sq: f64 = row.iter().map(|&v| v * v).sum();
            assert!((norm_sq - 0.25).abs() < 1e-15);
        }
        // Padded users get zero; active entries split the full budget.
        let mu = epa(3, 4, 2, 4);
        for m in 0..3 {
            assert_eq!(mu[[m, 2]], 0.0);
            assert_eq!(mu[[m, 3]], 0.0);
            assert!((mu[[m, 0]] - 1.0 / (8f64).sqrt()).abs() < 1e-15);
            let norm_sq: f64 = mu.row(m).iter().map(|&v| v * v).sum();
            assert!((norm_sq - 0.25).abs() < 1e-15);
        }
    }
}
