//! Scenario generation: BS/user placement on a flat torus, three-slope
//! path loss with log-normal shadowing, pilot assignment, and the padded
//! sample record consumed by the models.
//!
//! Determinism contract: BS positions depend only on `(cfg.seed)`; sample
//! `p` depends only on `(cfg, cfg.seed, p)`. Streams of one ChaCha12
//! generator keep the two independent (stream 0 for BS placement, stream
//! `p + 1` for sample `p`).

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ScenarioConfig;

/// A 2-D point in km on the torus `[0, side)²`.
pub type Point = [f64; 2];

/// BS and user coordinates of one sample.
#[derive(Debug, Clone)]
pub struct Placement {
    pub bs_xy: Vec<Point>,
    pub user_xy: Vec<Point>,
}

/// One generated sample: active-user count, pilot indices of the active
/// users, and the fading matrix padded out to `k_max` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub k_active: usize,
    /// Pilot index per active user, each in `[0, tau_p)`.
    pub pilots: Vec<u16>,
    /// M × k_max, linear scale; columns `>= k_active` hold the pad value.
    pub beta: Array2<f64>,
}

impl Sample {
    /// Reconstructs the pilot gram matrix for this sample.
    pub fn pilot_gram(&self, k_max: usize) -> Array2<f64> {
        pilot_gram(&self.pilots, self.k_active, k_max)
    }
}

/// Wrap-around (toroidal) Euclidean distance with per-axis wrapping.
pub fn torus_distance(a: Point, b: Point, side: f64) -> f64 {
    let mut acc = 0.0;
    for axis in 0..2 {
        let d = (a[axis] - b[axis]).abs();
        let d = d.min(side - d);
        acc += d * d;
    }
    acc.sqrt()
}

/// Three-slope path loss in dB: `-L0 - 15 log10(d1) - 20 log10(d')` with
/// `d'` clamped into `[d0, d1]`.
pub fn path_loss_db(d_km: f64, cfg: &ScenarioConfig) -> f64 {
    let d_eff = d_km.clamp(cfg.d0_km, cfg.d1_km);
    -cfg.l0_db - 15.0 * cfg.d1_km.log10() - 20.0 * d_eff.log10()
}

/// RNG for the fixed BS placement of a scenario.
fn bs_rng(cfg: &ScenarioConfig) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    rng
}

/// RNG for sample `index`; independent of the BS stream and of every
/// other sample.
pub fn sample_rng(cfg: &ScenarioConfig, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index + 1);
    rng
}

fn uniform_points(count: usize, side: f64, rng: &mut impl Rng) -> Vec<Point> {
    (0..count)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect()
}

/// BS coordinates, drawn i.i.d. uniform and fixed per scenario seed.
pub fn bs_positions(cfg: &ScenarioConfig) -> Vec<Point> {
    uniform_points(cfg.m, cfg.side_km(), &mut bs_rng(cfg))
}

/// Draws a placement: BS coordinates are re-derived from `cfg.seed`
/// (identical on every call), user coordinates come from `rng`.
pub fn make_placement(cfg: &ScenarioConfig, k_active: usize, rng: &mut impl Rng) -> Placement {
    Placement {
        bs_xy: bs_positions(cfg),
        user_xy: uniform_points(k_active, cfg.side_km(), rng),
    }
}

/// Large-scale fading matrix in linear scale: `beta_dB = PL(d) + z`,
/// `z ~ Normal(0, sigma_sh²)` i.i.d. per BS/user pair.
pub fn draw_fading(cfg: &ScenarioConfig, placement: &Placement, rng: &mut impl Rng) -> Array2<f64> {
    let m = placement.bs_xy.len();
    let k = placement.user_xy.len();
    let side = cfg.side_km();
    let shadow = Normal::new(0.0, cfg.sigma_sh_db).expect("sigma_sh must be finite");
    let mut beta = Array2::zeros((m, k));
    for (mi, bs) in placement.bs_xy.iter().enumerate() {
        for (ki, user) in placement.user_xy.iter().enumerate() {
            let d = torus_distance(*bs, *user, side);
            let db = path_loss_db(d, cfg) + shadow.sample(rng);
            beta[[mi, ki]] = 10f64.powf(db / 10.0);
        }
    }
    beta
}

/// Pilot assignment: the first `min(k, tau_p)` users get distinct pilots
/// `0..min(k, tau_p)`, the rest draw uniformly from the pilot set.
pub fn assign_pilots(k: usize, tau_p: usize, rng: &mut impl Rng) -> Vec<u16> {
    let unique = k.min(tau_p);
    let mut pilots: Vec<u16> = (0..unique as u16).collect();
    for _ in unique..k {
        pilots.push(rng.random_range(0..tau_p as u16));
    }
    pilots
}

/// K_max × K_max gram matrix of squared pilot inner products under the
/// orthogonal-reuse policy: entry (i, j) is 1 iff both users are active
/// and share a pilot; rows/columns of inactive users are zero.
pub fn pilot_gram(pilots: &[u16], k_active: usize, k_max: usize) -> Array2<f64> {
    assert!(k_active <= k_max, "k_active {k_active} exceeds k_max {k_max}");
    assert!(pilots.len() >= k_active, "pilot list shorter than k_active");
    let mut phi = Array2::zeros((k_max, k_max));
    for i in 0..k_active {
        for j in 0..k_active {
            if pilots[i] == pilots[j] {
                phi[[i, j]] = 1.0;
            }
        }
    }
    phi
}

/// Pads a fading matrix out to `k_max` columns with the pad constant.
pub fn pad_fading(beta: &Array2<f64>, k_max: usize, pad: f64) -> Array2<f64> {
    let (m, k_active) = beta.dim();
    assert!(k_active <= k_max, "k_active {k_active} exceeds k_max {k_max}");
    let mut out = Array2::from_elem((m, k_max), pad);
    out.slice_mut(ndarray::s![.., ..k_active]).assign(beta);
    out
}

/// Mask row of active users from a pilot gram (its diagonal).
pub fn active_mask(phi: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter((0..phi.nrows()).map(|k| if phi[[k, k]] > 0.0 { 1.0 } else { 0.0 }))
}

/// Deterministic sample generator for a scenario: owns the fixed BS
/// placement and derives each sample from its index alone.
#[derive(Debug, Clone)]
pub struct SampleGenerator {
    cfg: ScenarioConfig,
    bs_xy: Vec<Point>,
}

impl SampleGenerator {
    pub fn new(cfg: ScenarioConfig) -> Self {
        let bs_xy = bs_positions(&cfg);
        Self { cfg, bs_xy }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn bs_positions(&self) -> &[Point] {
        &self.bs_xy
    }

    /// Generates sample `index`. Draw order within the per-sample stream:
    /// active-user count (varying-K mode only), user positions,
    /// shadowing, pilot assignment.
    pub fn sample(&self, index: u64) -> Sample {
        let mut rng = sample_rng(&self.cfg, index);
        let k_active = match self.cfg.k_min {
            Some(k_min) => rng.random_range(k_min..=self.cfg.k_max),
            None => self.cfg.k_max,
        };
        let placement = Placement {
            bs_xy: self.bs_xy.clone(),
            user_xy: uniform_points(k_active, self.cfg.side_km(), &mut rng),
        };
        let beta_active = draw_fading(&self.cfg, &placement, &mut rng);
        let pilots = assign_pilots(k_active, self.cfg.tau_p, &mut rng);
        let beta = pad_fading(&beta_active, self.cfg.k_max, self.cfg.pad_beta);
        Sample { k_active, pilots, beta }
    }
}
