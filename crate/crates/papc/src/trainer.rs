//! Unsupervised training: maximize the empirical mean soft-minimum
//! utility over dataset samples by gradient ascent on the network
//! weights, plus the evaluation harness shared by all algorithms.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::checkpoint::write_checkpoint;
use crate::config::ScenarioConfig;
use crate::dataset::{read_dataset, Dataset};
use crate::net::{
    fcn_forward, fcn_infer, fcn_width_for_parity, papc_forward, papc_infer, FcnParams, Model,
    PapcHyper, PapcParams, ProjectionMode,
};
use crate::optim::{apg_solve, Adam, AdamConfig, ApgConfig};
use crate::scenario::Sample;
use crate::se::{epa, evaluate_power};
use crate::se_graph::{utility_from_se_node, utility_node, UtilityConstants};
use crate::{Error, Result};

/// Which network to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Papc,
    Fcn,
}

/// Training-run configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub scenario: ScenarioConfig,
    pub hyper: PapcHyper,
    pub model_kind: ModelKind,
    /// FCN hidden width; `None` derives it to match the transformer's
    /// parameter count.
    pub fcn_width: Option<usize>,
    pub dataset: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_warmup: usize,
    /// Worker threads for batch sharding; 1 = single-shard, fully
    /// deterministic mode. 0 uses all cores (still deterministic for a
    /// fixed worker count, since shards reduce in index order).
    pub workers: usize,
    pub projection: ProjectionMode,
    /// Held-out tail fraction of the dataset used for per-epoch
    /// validation.
    pub validation_frac: f64,
    /// Report the best-validation epoch instead of the last one.
    pub use_best: bool,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Output directory for checkpoints and metrics; `None` keeps
    /// everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// Desk-scale defaults for a preset: 16 epochs, batch 256.
    pub fn new(preset: &crate::config::Preset, dataset: PathBuf) -> Self {
        Self {
            scenario: preset.scenario.clone(),
            hyper: PapcHyper {
                m: preset.scenario.m,
                k_max: preset.scenario.k_max,
                m_bar: preset.m_bar,
                heads: preset.heads,
                blocks: preset.blocks,
                d_mod: preset.d_mod,
            },
            model_kind: ModelKind::Papc,
            fcn_width: preset.fcn_width,
            dataset,
            epochs: 16,
            batch_size: 256,
            seed: preset.scenario.seed,
            n_warmup: 400,
            workers: 0,
            projection: ProjectionMode::default(),
            validation_frac: 0.05,
            use_best: false,
            checkpoint_every: 0,
            out_dir: None,
        }
    }
}

/// One metrics-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub mean_batch_utility: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<MetricRow>,
    /// Mean validation utility per epoch (empty when no validation split).
    pub validation: Vec<f64>,
    pub param_count: usize,
    pub steps: usize,
}

fn model_grads(tape: &Tape, vars: &[crate::autodiff::Var]) -> Vec<Array2<f64>> {
    vars.iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Array2::zeros(tape.dim(v))))
        .collect()
}

/// Forward + utility for one sample on a fresh tape; returns the sample
/// utility and `∂u/∂θ` in canonical order.
fn sample_utility_and_grads(
    model: &Model,
    sample: &Sample,
    cfg: &ScenarioConfig,
    mode: ProjectionMode,
) -> (f64, Vec<Array2<f64>>) {
    let phi = sample.pilot_gram(sample.beta.ncols());
    let consts = UtilityConstants::new(&sample.beta, &phi, cfg);
    let mut tape = Tape::new();
    let (u_var, vars) = match model {
        Model::Papc(p) => {
            let fwd = papc_forward(&mut tape, p, &sample.beta, &phi, cfg.n_antennas, mode, true);
            let se = crate::se_graph::se_node(&mut tape, fwd.output, &consts);
            (utility_from_se_node(&mut tape, se, &consts), fwd.param_vars)
        }
        Model::Fcn(p) => {
            let fwd = fcn_forward(&mut tape, p, &sample.beta, cfg.n_antennas, mode, true);
            (utility_node(&mut tape, fwd.output, &consts), fwd.param_vars)
        }
    };
    let u = tape.value(u_var)[[0, 0]];
    tape.backward(u_var);
    (u, model_grads(&tape, &vars))
}

/// The training-path utility of one sample, computed by the closed-form
/// evaluator at the forward output. Must agree with the tape value.
pub fn sample_training_utility(
    model: &Model,
    sample: &Sample,
    cfg: &ScenarioConfig,
    mode: ProjectionMode,
) -> f64 {
    let phi = sample.pilot_gram(sample.beta.ncols());
    let mut tape = Tape::new();
    let out = match model {
        Model::Papc(p) => {
            papc_forward(&mut tape, p, &sample.beta, &phi, cfg.n_antennas, mode, false).output
        }
        Model::Fcn(p) => {
            fcn_forward(&mut tape, p, &sample.beta, cfg.n_antennas, mode, false).output
        }
    };
    let mu = tape.value(out).clone();
    evaluate_power(&sample.beta, &phi, &mu, cfg).1
}

fn shuffle_indices(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0x5A5A_0000 + epoch as u64);
    let mut indices: Vec<usize> = (0..len).collect();
    indices.shuffle(&mut rng);
    indices
}

fn build_model(cfg: &TrainConfig, ds: &Dataset) -> Result<Model> {
    match cfg.model_kind {
        ModelKind::Papc => Ok(Model::Papc(PapcParams::init(cfg.hyper, cfg.seed)?)),
        ModelKind::Fcn => {
            if ds.samples.iter().any(|s| s.k_active != ds.k_max) {
                return Err(Error::Data(
                    "FCN cannot train on a varying-K dataset (flattened input is fixed-size)"
                        .into(),
                ));
            }
            let width = match cfg.fcn_width {
                Some(w) => w,
                None => {
                    let papc = PapcParams::init(cfg.hyper, cfg.seed)?;
                    fcn_width_for_parity(cfg.hyper.m, cfg.hyper.k_max, papc.param_count())
                }
            };
            Ok(Model::Fcn(FcnParams::init(
                cfg.hyper.m,
                cfg.hyper.k_max,
                width,
                cfg.hyper.d_mod,
                cfg.seed,
            )?))
        }
    }
}

fn mean_utility_over(
    model: &Model,
    samples: &[Sample],
    cfg: &ScenarioConfig,
    mode: ProjectionMode,
    workers: usize,
) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let chunk = chunk_size(samples.len(), workers);
    let total: f64 = samples
        .par_chunks(chunk)
        .map(|chunk| {
            chunk
                .iter()
                .map(|s| sample_training_utility(model, s, cfg, mode))
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / samples.len() as f64
}

fn chunk_size(len: usize, workers: usize) -> usize {
    let workers = if workers == 0 { rayon::current_num_threads() } else { workers };
    len.div_ceil(workers.max(1)).max(1)
}

/// Trains a model per the configuration. Gradients within a batch are
/// shard-summed in index order, so a fixed worker count reproduces runs
/// bit-for-bit; `workers = 1` is the reference single-shard mode.
pub fn train(cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.scenario.validate()?;
    cfg.hyper.validate()?;
    let ds = read_dataset(&cfg.dataset)?;
    if ds.m != cfg.hyper.m || ds.k_max != cfg.hyper.k_max {
        return Err(Error::Data(format!(
            "dataset ({}, {}) does not match model ({}, {})",
            ds.m, ds.k_max, cfg.hyper.m, cfg.hyper.k_max
        )));
    }
    if ds.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.batch_size > ds.len() {
        return Err(Error::Config(format!(
            "batch_size {} must be in 1..={}",
            cfg.batch_size,
            ds.len()
        )));
    }

    let val_len = ((ds.len() as f64 * cfg.validation_frac).ceil() as usize).min(ds.len() - 1);
    let (train_samples, val_samples) = ds.samples.split_at(ds.len() - val_len);

    let mut model = build_model(cfg, &ds)?;
    let shapes: Vec<(usize, usize)> = model.arrays().iter().map(|a| a.dim()).collect();
    let mut adam = Adam::new(AdamConfig::new(cfg.hyper.d_mod, cfg.n_warmup), &shapes);

    let mut metrics = Vec::new();
    let mut validation = Vec::new();
    let mut last_good = model.clone();
    let mut best: Option<(f64, Model)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let order = shuffle_indices(train_samples.len(), cfg.seed, epoch);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < cfg.batch_size {
                // Keep every step a full batch; the tail re-enters after
                // the next shuffle.
                continue;
            }
            step += 1;
            let chunk = chunk_size(batch.len(), cfg.workers);
            let shard_results: Vec<(f64, Vec<Array2<f64>>)> = batch
                .par_chunks(chunk)
                .map(|shard| {
                    let mut sum_u = 0.0;
                    let mut sum_grads: Option<Vec<Array2<f64>>> = None;
                    for &idx in shard {
                        let (u, grads) = sample_utility_and_grads(
                            &model,
                            &train_samples[idx],
                            &cfg.scenario,
                            cfg.projection,
                        );
                        sum_u += u;
                        match &mut sum_grads {
                            Some(acc) => {
                                for (a, g) in acc.iter_mut().zip(grads) {
                                    *a += &g;
                                }
                            }
                            slot => *slot = Some(grads),
                        }
                    }
                    (sum_u, sum_grads.expect("non-empty shard"))
                })
                .collect();

            // Reduce shards in index order.
            let mut mean_u = 0.0;
            let mut grads: Option<Vec<Array2<f64>>> = None;
            for (sum_u, shard_grads) in shard_results {
                mean_u += sum_u;
                match &mut grads {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(shard_grads) {
                            *a += &g;
                        }
                    }
                    slot => *slot = Some(shard_grads),
                }
            }
            mean_u /= batch.len() as f64;
            // Loss is the negated mean utility.
            let scale = -1.0 / batch.len() as f64;
            let loss_grads: Vec<Array2<f64>> =
                grads.expect("non-empty batch").into_iter().map(|g| g * scale).collect();

            let lr = {
                let mut arrays = model.arrays_mut();
                match adam.step(&mut arrays, &loss_grads) {
                    Ok(lr) => lr,
                    Err(e) => {
                        // Preserve the last epoch-boundary state on abort.
                        if let Some(dir) = &cfg.out_dir {
                            let _ = write_checkpoint(&dir.join("last-good.papcck"), &last_good);
                        }
                        return Err(e);
                    }
                }
            };
            metrics.push(MetricRow { epoch, step, lr, mean_batch_utility: mean_u });
        }

        if !val_samples.is_empty() {
            let val_u =
                mean_utility_over(&model, val_samples, &cfg.scenario, cfg.projection, cfg.workers);
            validation.push(val_u);
            if best.as_ref().is_none_or(|(b, _)| val_u > *b) {
                best = Some((val_u, model.clone()));
            }
        }
        last_good = model.clone();

        if let Some(dir) = &cfg.out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                write_checkpoint(&dir.join(format!("epoch-{epoch:03}.papcck")), &model)?;
            }
        }
    }

    if cfg.use_best {
        if let Some((_, best_model)) = best {
            model = best_model;
        }
    }

    let report = TrainReport {
        metrics,
        validation,
        param_count: model.param_count(),
        steps: step,
    };
    Ok((model, report))
}

/// Renders the metrics log as CSV (`epoch,step,lr,mean_batch_utility`).
pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("epoch,step,lr,mean_batch_utility\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.step, r.lr, r.mean_batch_utility));
    }
    out
}

/// Algorithm under evaluation.
pub enum EvalModel<'a> {
    Papc(&'a PapcParams),
    Fcn(&'a FcnParams),
    Epa,
    Apg(&'a ApgConfig),
}

impl EvalModel<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalModel::Papc(_) => "papc",
            EvalModel::Fcn(_) => "fcn",
            EvalModel::Epa => "epa",
            EvalModel::Apg(_) => "apg",
        }
    }
}

/// One (sample, user) spectral-efficiency record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUserSe {
    pub sample: u32,
    pub user: u32,
    pub se: f64,
}

/// Evaluation summary over a dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_user: Vec<PerUserSe>,
    pub per_sample_utility: Vec<f64>,
    pub mean_utility: f64,
    pub mean_se: f64,
    /// 10th percentile of the per-user SE distribution (the minimum SE
    /// seen by the top 90% of users).
    pub p10_se: f64,
    pub min_se: f64,
    /// Mean APG iteration count, when the algorithm is APG.
    pub mean_iters: Option<f64>,
}

/// Linear-interpolation percentile of a sorted slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Evaluates an algorithm on every sample: feasible power matrices in,
/// per-user SE and per-sample utility out.
pub fn evaluate(
    model: &EvalModel,
    ds: &Dataset,
    cfg: &ScenarioConfig,
    workers: usize,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    if let EvalModel::Fcn(p) = model {
        if ds.samples.iter().any(|s| s.k_active != p.k) {
            return Err(Error::Data(format!(
                "FCN trained for K={} cannot evaluate samples with other user counts",
                p.k
            )));
        }
    }
    let chunk = chunk_size(ds.len(), workers);
    let indexed: Vec<(usize, &Sample)> = ds.samples.iter().enumerate().collect();
    let per_sample: Vec<(Vec<f64>, f64, usize)> = indexed
        .par_chunks(chunk)
        .map(|shard| {
            shard
                .iter()
                .map(|(_, s)| {
                    let phi = s.pilot_gram(ds.k_max);
                    let (mu, iters) = match model {
                        EvalModel::Papc(p) => (papc_infer(p, &s.beta, &phi, cfg.n_antennas), 0),
                        EvalModel::Fcn(p) => (fcn_infer(p, &s.beta, cfg.n_antennas), 0),
                        EvalModel::Epa => (epa(ds.m, ds.k_max, s.k_active, cfg.n_antennas), 0),
                        EvalModel::Apg(apg_cfg) => {
                            let r = apg_solve(&s.beta, &phi, cfg, apg_cfg)
                                .expect("apg failed during evaluation");
                            (r.mu, r.iters)
                        }
                    };
                    let (sev, u) = evaluate_power(&s.beta, &phi, &mu, cfg);
                    let active_se: Vec<f64> = (0..s.k_active).map(|k| sev.se[k]).collect();
                    (active_se, u, iters)
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut per_user = Vec::new();
    let mut per_sample_utility = Vec::with_capacity(ds.len());
    let mut total_iters = 0usize;
    for (i, (active_se, u, iters)) in per_sample.into_iter().enumerate() {
        for (k, se) in active_se.into_iter().enumerate() {
            per_user.push(PerUserSe { sample: i as u32, user: k as u32, se });
        }
        per_sample_utility.push(u);
        total_iters += iters;
    }

    let mut sorted: Vec<f64> = per_user.iter().map(|r| r.se).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_utility = per_sample_utility.iter().sum::<f64>() / per_sample_utility.len() as f64;
    let mean_se = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let report = EvalReport {
        mean_utility,
        mean_se,
        p10_se: percentile(&sorted, 0.10),
        min_se: sorted[0],
        mean_iters: matches!(model, EvalModel::Apg(_))
            .then(|| total_iters as f64 / per_sample_utility.len() as f64),
        per_user,
        per_sample_utility,
    };
    Ok(report)
}

/// Renders the per-user SE dump as CSV (`sample_id,user_id,se_bits_s_hz`).
pub fn se_dump_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("sample_id,user_id,se_bits_s_hz\n");
    for r in &report.per_user {
        out.push_str(&format!("{},{},{}\n", r.sample, r.user, r.se));
    }
    out
}

/// Writes a file, creating parent directories as needed.
pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}
