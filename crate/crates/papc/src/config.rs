//! Scenario configuration: physical and protocol constants plus the named
//! presets used throughout the examples and tests.

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

/// Default padding value for inactive-user fading columns (linear scale).
pub const PAD_BETA: f64 = 6e-13;

/// All physical and protocol constants of one propagation scenario.
///
/// Distances are in km, powers in linear scale unless a field name says dB.
/// `zeta_p`/`zeta_d` are transmit SNRs (dimensionless, linear).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of base stations.
    pub m: usize,
    /// Maximum number of users (network is dimensioned for this many).
    pub k_max: usize,
    /// Minimum user count when generating varying-K datasets; `None`
    /// means every sample has exactly `k_max` users.
    pub k_min: Option<usize>,
    /// Antennas per BS.
    pub n_antennas: usize,
    /// Square deployment area in km²; side length is `sqrt(area_km2)`.
    pub area_km2: f64,
    /// Coherence block length in symbols.
    pub tau: usize,
    /// Pilot sequence length in symbols.
    pub tau_p: usize,
    /// Soft-minimum smoothing parameter.
    pub lambda_smooth: f64,
    /// Uplink pilot transmit SNR (linear).
    pub zeta_p: f64,
    /// Downlink data transmit SNR (linear).
    pub zeta_d: f64,
    /// Path-loss constant L0 in dB.
    pub l0_db: f64,
    /// First path-loss breakpoint in km.
    pub d0_km: f64,
    /// Second path-loss breakpoint in km.
    pub d1_km: f64,
    /// Shadow-fading standard deviation in dB.
    pub sigma_sh_db: f64,
    /// Receiver noise figure in dB.
    pub noise_figure_db: f64,
    /// Channel bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power spectral density in dBm/Hz.
    pub n0_dbm_hz: f64,
    /// Stored total noise power in dBm; `validate` recomputes it from
    /// `bandwidth_hz`/`noise_figure_db`/`n0_dbm_hz` and demands agreement
    /// within 0.01 dB.
    pub p_n_dbm: f64,
    /// Padding value for inactive fading columns (linear).
    pub pad_beta: f64,
    /// Base PRNG seed; fully determines BS placement and every sample.
    pub seed: u64,
}

impl ScenarioConfig {
    /// Side length of the square deployment area in km.
    pub fn side_km(&self) -> f64 {
        self.area_km2.sqrt()
    }

    /// Total noise power in watts recomputed from the noise parameters.
    pub fn noise_power_w(&self) -> f64 {
        self.bandwidth_hz * 10f64.powf((self.n0_dbm_hz + self.noise_figure_db - 30.0) / 10.0)
    }

    /// Total noise power in dBm recomputed from the noise parameters.
    pub fn noise_power_dbm(&self) -> f64 {
        10.0 * self.noise_power_w().log10() + 30.0
    }

    /// Spectral-efficiency prefactor `1 - tau_p/tau`.
    pub fn se_prefactor(&self) -> f64 {
        1.0 - self.tau_p as f64 / self.tau as f64
    }

    /// Checks structural invariants and the stored-vs-recomputed noise
    /// power consistency (0.01 dB tolerance).
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.m <= self.k_max {
            return Err(Error::Config(format!(
                "require m > k_max > 0, got m={} k_max={}",
                self.m, self.k_max
            )));
        }
        if self.n_antennas == 0 {
            return Err(Error::Config("n_antennas must be >= 1".into()));
        }
        if self.tau_p >= self.tau {
            return Err(Error::Config(format!(
                "require tau_p < tau, got tau_p={} tau={}",
                self.tau_p, self.tau
            )));
        }
        for (name, value) in [
            ("area_km2", self.area_km2),
            ("lambda_smooth", self.lambda_smooth),
            ("zeta_p", self.zeta_p),
            ("zeta_d", self.zeta_d),
            ("d0_km", self.d0_km),
            ("d1_km", self.d1_km),
            ("pad_beta", self.pad_beta),
        ] {
            if !value.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {value}")));
            }
        }
        if self.d0_km >= self.d1_km {
            return Err(Error::Config(format!(
                "require d0 < d1, got d0={} d1={}",
                self.d0_km, self.d1_km
            )));
        }
        if self.area_km2 <= 0.0 {
            return Err(Error::Config("area_km2 must be positive".into()));
        }
        if let Some(k_min) = self.k_min {
            if k_min == 0 || k_min > self.k_max {
                return Err(Error::Config(format!(
                    "require 1 <= k_min <= k_max, got k_min={} k_max={}",
                    k_min, self.k_max
                )));
            }
        }
        if self.lambda_smooth <= 0.0 {
            return Err(Error::Config("lambda_smooth must be positive".into()));
        }
        if self.pad_beta <= 0.0 {
            return Err(Error::Config("pad_beta must be positive".into()));
        }
        let recomputed = self.noise_power_dbm();
        if (recomputed - self.p_n_dbm).abs() > 0.01 {
            return Err(Error::Config(format!(
                "noise power inconsistency: stored {} dBm, recomputed {:.4} dBm",
                self.p_n_dbm, recomputed
            )));
        }
        Ok(())
    }
}

fn base_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        m: 10,
        k_max: 4,
        k_min: None,
        n_antennas: 4,
        area_km2: 0.01,
        tau: 200,
        tau_p: 20,
        lambda_smooth: 3.0,
        zeta_p: 0.0,
        zeta_d: 0.0,
        l0_db: 140.72,
        d0_km: 0.01,
        d1_km: 0.05,
        sigma_sh_db: 8.0,
        noise_figure_db: 9.0,
        bandwidth_hz: 20e6,
        n0_dbm_hz: -173.98,
        p_n_dbm: -91.97,
        pad_beta: PAD_BETA,
        seed: 1,
    };
    let p_n = cfg.noise_power_w();
    cfg.zeta_p = 0.2 / p_n;
    cfg.zeta_d = 1.0 / p_n;
    cfg
}

/// A named scenario preset: propagation constants plus the network
/// hyperparameters paired with it.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub scenario: ScenarioConfig,
    /// Transformer model width.
    pub m_bar: usize,
    /// Attention heads.
    pub heads: usize,
    /// Transformer blocks.
    pub blocks: usize,
    /// Width constant of the warmup learning-rate schedule.
    pub d_mod: usize,
    /// Hidden width of the parameter-matched FCN baseline, when defined.
    pub fcn_width: Option<usize>,
}

/// Looks up a preset by name (`scenario0`..`scenario3`, `mini`).
pub fn preset(name: &str) -> Result<Preset> {
    let p = match name {
        "scenario0" => Preset {
            name: "scenario0",
            scenario: base_config(),
            m_bar: 80,
            heads: 5,
            blocks: 3,
            d_mod: 16,
            fcn_width: Some(160),
        },
        "scenario1" => Preset {
            name: "scenario1",
            scenario: ScenarioConfig {
                m: 100,
                k_max: 20,
                area_km2: 0.1,
                ..base_config()
            },
            m_bar: 500,
            heads: 5,
            blocks: 3,
            d_mod: 100,
            fcn_width: Some(1000),
        },
        "scenario2" => Preset {
            name: "scenario2",
            scenario: ScenarioConfig {
                m: 100,
                k_max: 40,
                area_km2: 0.1,
                ..base_config()
            },
            m_bar: 500,
            heads: 5,
            blocks: 3,
            d_mod: 100,
            fcn_width: Some(571),
        },
        "scenario3" => Preset {
            name: "scenario3",
            scenario: ScenarioConfig {
                m: 100,
                k_max: 80,
                k_min: Some(40),
                area_km2: 0.1,
                ..base_config()
            },
            m_bar: 500,
            heads: 5,
            blocks: 3,
            d_mod: 100,
            fcn_width: None,
        },
        // Desk-scale contaminated scenario: tau_p < k_max forces pilot
        // reuse; area keeps the 1000 BS/km² density.
        "mini" => Preset {
            name: "mini",
            scenario: ScenarioConfig {
                m: 20,
                k_max: 8,
                tau_p: 4,
                area_km2: 0.02,
                ..base_config()
            },
            m_bar: 80,
            heads: 5,
            blocks: 3,
            d_mod: 16,
            fcn_width: None,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected scenario0..scenario3 or mini)"
            )))
        }
    };
    Ok(p)
}

/// Names of all shipped presets.
pub fn preset_names() -> &'static [&'static str] {
    &["scenario0", "scenario1", "scenario2", "scenario3", "mini"]
}

/// Sections other than `[scenario]`, passed through verbatim.
pub type ExtraSections = BTreeMap<String, BTreeMap<String, String>>;

/// Parses a flat `key = value` config file with `[section]` headers.
///
/// The `[scenario]` section mirrors [`ScenarioConfig`] field names and may
/// start from a preset via `preset = scenario0`. Unknown keys are errors.
/// Returns the scenario plus any remaining sections verbatim so callers
/// (e.g. the trainer) can consume their own keys.
pub fn parse_config_file(path: &Path) -> Result<(Preset, ExtraSections)> {
    let text = std::fs::read_to_string(path)?;
    let mut sections: ExtraSections = BTreeMap::new();
    let mut current = String::from("scenario");
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected 'key = value', got '{raw}'",
                path.display(),
                lineno + 1
            )));
        };
        sections
            .entry(current.clone())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
    }

    let mut scen_keys = sections.remove("scenario").unwrap_or_default();
    let preset_name = scen_keys.remove("preset").unwrap_or_else(|| "scenario0".into());
    let mut p = preset(&preset_name)?;
    apply_scenario_keys(&mut p, &scen_keys)?;
    p.scenario.validate()?;
    Ok((p, sections))
}

fn apply_scenario_keys(p: &mut Preset, keys: &BTreeMap<String, String>) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| Error::Config(format!("invalid value for {key}: '{value}'")))
    }
    let cfg = &mut p.scenario;
    for (key, value) in keys {
        match key.as_str() {
            "m" => cfg.m = parse(key, value)?,
            "k_max" => cfg.k_max = parse(key, value)?,
            "k_min" => {
                cfg.k_min = if value.is_empty() || value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "n_antennas" => cfg.n_antennas = parse(key, value)?,
            "area_km2" => cfg.area_km2 = parse(key, value)?,
            "tau" => cfg.tau = parse(key, value)?,
            "tau_p" => cfg.tau_p = parse(key, value)?,
            "lambda_smooth" => cfg.lambda_smooth = parse(key, value)?,
            "zeta_p" => cfg.zeta_p = parse(key, value)?,
            "zeta_d" => cfg.zeta_d = parse(key, value)?,
            "l0_db" => cfg.l0_db = parse(key, value)?,
            "d0_km" => cfg.d0_km = parse(key, value)?,
            "d1_km" => cfg.d1_km = parse(key, value)?,
            "sigma_sh_db" => cfg.sigma_sh_db = parse(key, value)?,
            "noise_figure_db" => cfg.noise_figure_db = parse(key, value)?,
            "bandwidth_hz" => cfg.bandwidth_hz = parse(key, value)?,
            "n0_dbm_hz" => cfg.n0_dbm_hz = parse(key, value)?,
            "p_n_dbm" => cfg.p_n_dbm = parse(key, value)?,
            "pad_beta" => cfg.pad_beta = parse(key, value)?,
            "seed" => cfg.seed = parse(key, value)?,
            "m_bar" => p.m_bar = parse(key, value)?,
            "heads" => p.heads = parse(key, value)?,
            "blocks" => p.blocks = parse(key, value)?,
            "d_mod" => p.d_mod = parse(key, value)?,
            "fcn_width" => p.fcn_width = Some(parse(key, value)?),
            other => {
                return Err(Error::Config(format!("unknown scenario key '{other}'")));
            }
        }
    }
    Ok(())
}

/// Renders a scenario back into config-file form (used by run manifests).
pub fn scenario_to_text(cfg: &ScenarioConfig) -> String {
    let mut s = String::from("[scenario]\n");
    s.push_str(&format!("m = {}\n", cfg.m));
    s.push_str(&format!("k_max = {}\n", cfg.k_max));
    if let Some(k_min) = cfg.k_min {
        s.push_str(&format!("k_min = {k_min}\n"));
    }
    s.push_str(&format!("n_antennas = {}\n", cfg.n_antennas));
    s.push_str(&format!("area_km2 = {}\n", cfg.area_km2));
    s.push_str(&format!("tau = {}\n", cfg.tau));
    s.push_str(&format!("tau_p = {}\n", cfg.tau_p));
    s.push_str(&format!("lambda_smooth = {}\n", cfg.lambda_smooth));
    s.push_str(&format!("zeta_p = {}\n", cfg.zeta_p));
    s.push_str(&format!("zeta_d = {}\n", cfg.zeta_d));
    s.push_str(&format!("l0_db = {}\n", cfg.l0_db));
    s.push_str(&format!("d0_km = {}\n", cfg.d0_km));
    s.push_str(&format!("d1_km = {}\n", cfg.d1_km));
    s.push_str(&format!("sigma_sh_db = {}\n", cfg.sigma_sh_db));
    s.push_str(&format!("noise_figure_db = {}\n", cfg.noise_figure_db));
    s.push_str(&format!("bandwidth_hz = {}\n", cfg.bandwidth_hz));
    s.push_str(&format!("n0_dbm_hz = {}\n", cfg.n0_dbm_hz));
    s.push_str(&format!("p_n_dbm = {}\n", cfg.p_n_dbm));
    s.push_str(&format!("pad_beta = {}\n", cfg.pad_beta));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            let p = preset(name).unwrap();
            p.scenario.validate().unwrap();
        }
    }

    #[test]
    fn noise_power_matches_stored_value() {
        let cfg = preset("scenario0").unwrap().scenario;
        // Frozen from the noise model: BW * 10^((N0 + Nf - 30)/10).
        let rel = (cfg.noise_power_w() - 6.353748141299541e-13).abs() / 6.353748141299541e-13;
        assert!(rel < 1e-12, "rel err {rel}");
        assert!((cfg.noise_power_dbm() - (-91.96970004336019)).abs() < 1e-9);
        assert!((cfg.noise_power_dbm() - cfg.p_n_dbm).abs() <= 0.01);
    }

    #[test]
    fn transmit_snrs_follow_noise_power() {
        let cfg = preset("scenario2").unwrap().scenario;
        let p_n = cfg.noise_power_w();
        assert!((cfg.zeta_p - 0.2 / p_n).abs() / cfg.zeta_p < 1e-15);
        assert!((cfg.zeta_d - 1.0 / p_n).abs() / cfg.zeta_d < 1e-15);
    }

    #[test]
    fn density_is_1000_bs_per_km2() {
        for name in ["scenario0", "scenario1", "scenario2", "scenario3", "mini"] {
            let cfg = preset(name).unwrap().scenario;
            let density = cfg.m as f64 / cfg.area_km2;
            assert!((density - 1000.0).abs() < 1e-9, "{name}: density {density}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = base_config();
        cfg.k_max = cfg.m;
        assert!(cfg.validate().is_err());

        let mut cfg = base_config();
        cfg.tau_p = cfg.tau;
        assert!(cfg.validate().is_err());

        let mut cfg = base_config();
        cfg.p_n_dbm = -90.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(
            &path,
            "[scenario]\npreset = mini\nseed = 99\n# comment\nlambda_smooth = 5.0\n\n[train]\nepochs = 2\n",
        )
        .unwrap();
        let (p, rest) = parse_config_file(&path).unwrap();
        assert_eq!(p.scenario.seed, 99);
        assert_eq!(p.scenario.m, 20);
        assert_eq!(p.scenario.lambda_smooth, 5.0);
        assert_eq!(rest["train"]["epochs"], "2");
    }
}
