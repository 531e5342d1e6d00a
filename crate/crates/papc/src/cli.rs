//! Command-line surface: `gen`, `train`, `eval`, `bench`, `apg`.
//!
//! Every command writes a run manifest listing the exact configuration,
//! seeds, git revision, per-phase wall-clock timings, and a SHA-256 hash
//! of every artifact it produced. Exit codes: 0 success, 2 configuration,
//! 3 data/IO, 4 numeric failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{parse_config_file, preset, scenario_to_text, Preset};
use crate::dataset::{read_dataset, write_dataset, Dataset};
use crate::net::{papc_infer, Model, ProjectionMode};
use crate::optim::{apg_solve, ApgConfig};
use crate::scenario::SampleGenerator;
use crate::se::{epa, evaluate_power};
use crate::trainer::{
    evaluate, metrics_to_csv, se_dump_to_csv, train, write_text, EvalModel, EvalReport,
    ModelKind, TrainConfig,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "papc",
    about = "Cell-free massive MIMO downlink power control lab",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of propagation samples.
    Gen(GenArgs),
    /// Train a power-control network on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint or baseline on a dataset.
    Eval(EvalArgs),
    /// Time EPA, model inference, and APG on the same samples.
    Bench(BenchArgs),
    /// Run the APG solver on selected samples and export utility traces.
    Apg(ApgArgs),
}

#[derive(Args, Clone)]
struct ScenarioSource {
    /// Named preset (scenario0..scenario3, mini).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Config file with a [scenario] section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioSource {
    fn load(&self) -> Result<Preset> {
        let mut p = match (&self.preset, &self.config) {
            (Some(name), None) => preset(name)?,
            (None, Some(path)) => parse_config_file(path)?.0,
            (None, None) => preset("scenario0")?,
            (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
        };
        if let Some(seed) = self.seed {
            p.scenario.seed = seed;
        }
        p.scenario.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    scenario: ScenarioSource,
    /// Number of samples to generate.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// First sample index (use a disjoint range for test splits).
    #[arg(long, default_value_t = 0)]
    first_index: u64,
    /// Enable varying-K generation with this minimum user count.
    #[arg(long)]
    k_min: Option<usize>,
    /// Padding constant override for inactive fading columns.
    #[arg(long)]
    pad_beta: Option<f64>,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioSource,
    /// Training dataset path.
    #[arg(long)]
    dataset: PathBuf,
    /// Model kind: papc or fcn.
    #[arg(long, default_value = "papc")]
    model: String,
    #[arg(long, default_value_t = 16)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Warmup steps of the learning-rate schedule.
    #[arg(long, default_value_t = 400)]
    warmup: usize,
    /// Worker threads (1 = single-shard deterministic mode, 0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Apply the feasibility projection inside the training graph
    /// (straight-through gradients) instead of training on the raw
    /// squashed outputs.
    #[arg(long, default_value_t = false)]
    project_straight_through: bool,
    /// Keep the best-validation epoch instead of the last.
    #[arg(long, default_value_t = false)]
    use_best: bool,
    /// Checkpoint every N epochs (0 = final only).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// FCN hidden width (default: parameter parity with the transformer).
    #[arg(long)]
    fcn_width: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioSource,
    /// Checkpoint path, or one of the baselines: epa, apg.
    #[arg(long)]
    model: String,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// APG iteration cap when evaluating the apg baseline.
    #[arg(long, default_value_t = 300)]
    apg_iters: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioSource,
    /// Trained checkpoint to time.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Timing repetitions per algorithm.
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Cap the number of samples timed per repetition.
    #[arg(long, default_value_t = 16)]
    max_samples: usize,
    /// APG iteration cap while timing.
    #[arg(long, default_value_t = 300)]
    apg_iters: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ApgArgs {
    #[command(flatten)]
    scenario: ScenarioSource,
    #[arg(long)]
    dataset: PathBuf,
    /// Sample index to solve.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Utility trace CSV output.
    #[arg(long)]
    trace: PathBuf,
}

/// Run manifest: configuration snapshot, seeds, revision, timings, and
/// content hashes of every artifact written.
pub struct Manifest {
    text: String,
    artifacts: Vec<(PathBuf, String)>,
    phases: Vec<(String, f64)>,
}

impl Manifest {
    pub fn new(command: &str, invocation: &[String]) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "command = {command}");
        let _ = writeln!(text, "invocation = {}", invocation.join(" "));
        let _ = writeln!(text, "git = {}", git_describe());
        Self { text, artifacts: Vec::new(), phases: Vec::new() }
    }

    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key} = {value}");
    }

    pub fn config_block(&mut self, block: &str) {
        self.text.push('\n');
        self.text.push_str(block);
    }

    pub fn phase(&mut self, name: &str, seconds: f64) {
        self.phases.push((name.to_string(), seconds));
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.artifacts.push((path.to_path_buf(), hex));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = self.text.clone();
        out.push_str("\n[timings]\n");
        for (name, secs) in &self.phases {
            let _ = writeln!(out, "{name}_s = {secs:.6}");
        }
        out.push_str("\n[artifacts]\n");
        for (p, hash) in &self.artifacts {
            let _ = writeln!(out, "{} = sha256:{hash}", p.display());
        }
        write_text(path, &out)
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Entry point used by the binary: parses `std::env::args`, returns the
/// process exit code.
pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    match run_with_args(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses and executes one invocation (first element is the program name).
pub fn run_with_args(args: &[String]) -> Result<()> {
    let cli = Cli::try_parse_from(args).map_err(|e| {
        // clap renders its own message (also for --help); keep its text.
        let rendered = e.render().to_string();
        if e.use_stderr() {
            Error::Config(rendered)
        } else {
            print!("{rendered}");
            Error::Config(String::new())
        }
    });
    let cli = match cli {
        Ok(c) => c,
        Err(Error::Config(msg)) if msg.is_empty() => return Ok(()),
        Err(e) => return Err(e),
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(a, args),
        Command::Train(a) => cmd_train(a, args),
        Command::Eval(a) => cmd_eval(a, args),
        Command::Bench(a) => cmd_bench(a, args),
        Command::Apg(a) => cmd_apg(a, args),
    }
}

fn cmd_gen(args: GenArgs, invocation: &[String]) -> Result<()> {
    let mut p = args.scenario.load()?;
    if let Some(k_min) = args.k_min {
        p.scenario.k_min = Some(k_min);
    }
    if let Some(pad) = args.pad_beta {
        p.scenario.pad_beta = pad;
    }
    p.scenario.validate()?;

    let mut manifest = Manifest::new("gen", invocation);
    manifest.note("preset", p.name);
    manifest.note("samples", args.samples);
    manifest.note("first_index", args.first_index);
    manifest.config_block(&scenario_to_text(&p.scenario));

    let t0 = Instant::now();
    let gen = SampleGenerator::new(p.scenario.clone());
    let ds = Dataset::generate(&gen, args.first_index, args.samples);
    manifest.phase("generate", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_dataset(&args.out, &ds)?;
    manifest.phase("write", t1.elapsed().as_secs_f64());
    manifest.artifact(&args.out)?;
    manifest.write(&manifest_path_for(&args.out))?;

    println!(
        "wrote {}: M={} K_max={} P={} tau_p={} contamination={:.3}",
        args.out.display(),
        ds.m,
        ds.k_max,
        ds.len(),
        ds.tau_p,
        ds.contamination_fraction()
    );
    Ok(())
}

fn manifest_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.txt");
    artifact.with_file_name(name)
}

fn cmd_train(args: TrainArgs, invocation: &[String]) -> Result<()> {
    let p = args.scenario.load()?;
    let model_kind = match args.model.as_str() {
        "papc" => ModelKind::Papc,
        "fcn" => ModelKind::Fcn,
        other => {
            return Err(Error::Config(format!(
                "unknown model '{other}' (expected papc or fcn)"
            )))
        }
    };

    let mut cfg = TrainConfig::new(&p, args.dataset.clone());
    cfg.model_kind = model_kind;
    cfg.epochs = args.epochs;
    cfg.batch_size = args.batch_size;
    cfg.n_warmup = args.warmup;
    cfg.workers = args.workers;
    cfg.projection = if args.project_straight_through {
        ProjectionMode::StraightThrough
    } else {
        ProjectionMode::None
    };
    cfg.use_best = args.use_best;
    cfg.checkpoint_every = args.checkpoint_every;
    if args.fcn_width.is_some() {
        cfg.fcn_width = args.fcn_width;
    }
    cfg.out_dir = Some(args.out_dir.clone());
    std::fs::create_dir_all(&args.out_dir)?;

    let mut manifest = Manifest::new("train", invocation);
    manifest.note("preset", p.name);
    manifest.note("model", &args.model);
    manifest.note("epochs", cfg.epochs);
    manifest.note("batch_size", cfg.batch_size);
    manifest.note("n_warmup", cfg.n_warmup);
    manifest.note("workers", cfg.workers);
    manifest.note("seed", cfg.seed);
    manifest.note(
        "projection",
        match cfg.projection {
            ProjectionMode::StraightThrough => "straight-through",
            ProjectionMode::None => "raw-outputs",
        },
    );
    manifest.config_block(&scenario_to_text(&cfg.scenario));

    let t0 = Instant::now();
    let (model, report) = train(&cfg)?;
    manifest.phase("train", t0.elapsed().as_secs_f64());
    manifest.note("param_count", report.param_count);
    manifest.note("steps", report.steps);

    let ckpt_path = args.out_dir.join("checkpoint.papcck");
    write_checkpoint(&ckpt_path, &model)?;
    let metrics_path = args.out_dir.join("metrics.csv");
    write_text(&metrics_path, &metrics_to_csv(&report.metrics))?;
    manifest.artifact(&ckpt_path)?;
    manifest.artifact(&metrics_path)?;
    if !report.validation.is_empty() {
        let mut val = String::from("epoch,mean_validation_utility\n");
        for (i, u) in report.validation.iter().enumerate() {
            let _ = writeln!(val, "{},{}", i + 1, u);
        }
        let val_path = args.out_dir.join("validation.csv");
        write_text(&val_path, &val)?;
        manifest.artifact(&val_path)?;
    }
    manifest.write(&args.out_dir.join("manifest.txt"))?;

    let last = report.metrics.last().map(|r| r.mean_batch_utility).unwrap_or(f64::NAN);
    println!(
        "trained {} ({} params, {} steps): final batch utility {:.4} -> {}",
        args.model,
        report.param_count,
        report.steps,
        last,
        ckpt_path.display()
    );
    Ok(())
}

fn summary_text(report: &EvalReport, algorithm: &str, samples: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "algorithm = {algorithm}");
    let _ = writeln!(s, "samples = {samples}");
    let _ = writeln!(s, "per_user_rows = {}", report.per_user.len());
    let _ = writeln!(s, "mean_utility = {}", report.mean_utility);
    let _ = writeln!(s, "mean_se = {}", report.mean_se);
    let _ = writeln!(s, "p10_per_user_se = {}", report.p10_se);
    let _ = writeln!(s, "min_se = {}", report.min_se);
    if let Some(iters) = report.mean_iters {
        let _ = writeln!(s, "mean_apg_iters = {iters}");
    }
    s
}

fn cmd_eval(args: EvalArgs, invocation: &[String]) -> Result<()> {
    let p = args.scenario.load()?;
    let ds = read_dataset(&args.dataset)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut manifest = Manifest::new("eval", invocation);
    manifest.note("preset", p.name);
    manifest.note("model", &args.model);
    manifest.note("dataset", args.dataset.display());
    manifest.note("samples", ds.len());
    manifest.config_block(&scenario_to_text(&p.scenario));

    let apg_cfg = ApgConfig { max_iters: args.apg_iters, ..ApgConfig::default() };
    let loaded;
    let model = match args.model.as_str() {
        "epa" => EvalModel::Epa,
        "apg" => EvalModel::Apg(&apg_cfg),
        path => {
            loaded = read_checkpoint(Path::new(path))?;
            match &loaded {
                Model::Papc(m) => EvalModel::Papc(m),
                Model::Fcn(m) => EvalModel::Fcn(m),
            }
        }
    };

    let t0 = Instant::now();
    let report = evaluate(&model, &ds, &p.scenario, args.workers)?;
    manifest.phase("evaluate", t0.elapsed().as_secs_f64());

    let tag = model.name();
    let se_path = args.out_dir.join(format!("se_{tag}.csv"));
    write_text(&se_path, &se_dump_to_csv(&report))?;
    let summary = summary_text(&report, tag, ds.len());
    let summary_path = args.out_dir.join(format!("summary_{tag}.txt"));
    write_text(&summary_path, &summary)?;
    manifest.artifact(&se_path)?;
    manifest.artifact(&summary_path)?;
    manifest.write(&args.out_dir.join(format!("manifest_{tag}.txt")))?;

    print!("{summary}");
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn cmd_bench(args: BenchArgs, invocation: &[String]) -> Result<()> {
    let p = args.scenario.load()?;
    let ds = read_dataset(&args.dataset)?;
    if ds.is_empty() {
        return Err(Error::Data("bench needs a non-empty dataset".into()));
    }
    let model = read_checkpoint(&args.checkpoint)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let count = ds.len().min(args.max_samples);
    let apg_cfg = ApgConfig { max_iters: args.apg_iters, ..ApgConfig::default() };

    let mut manifest = Manifest::new("bench", invocation);
    manifest.note("preset", p.name);
    manifest.note("checkpoint", args.checkpoint.display());
    manifest.note("samples_timed", count);
    manifest.note("repetitions", args.repetitions);
    manifest.note("threads", 1);

    // Single-threaded by construction: plain sequential loops below.
    let mut epa_times = Vec::new();
    let mut model_times = Vec::new();
    let mut apg_times = Vec::new();
    let cfg = &p.scenario;
    for _ in 0..args.repetitions.max(1) {
        for s in ds.samples.iter().take(count) {
            let phi = s.pilot_gram(ds.k_max);

            let t = Instant::now();
            let mu = epa(ds.m, ds.k_max, s.k_active, cfg.n_antennas);
            std::hint::black_box(&mu);
            epa_times.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            let mu = match &model {
                Model::Papc(m) => papc_infer(m, &s.beta, &phi, cfg.n_antennas),
                Model::Fcn(m) => crate::net::fcn_infer(m, &s.beta, cfg.n_antennas),
            };
            std::hint::black_box(&mu);
            model_times.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            let r = apg_solve(&s.beta, &phi, cfg, &apg_cfg)?;
            std::hint::black_box(&r.mu);
            apg_times.push(t.elapsed().as_secs_f64());
        }
    }

    let epa_median = median(&mut epa_times);
    let model_median = median(&mut model_times);
    let apg_median = median(&mut apg_times);
    let ordering_ok = epa_median < model_median && model_median < apg_median;

    let mut report = String::new();
    let _ = writeln!(report, "samples_timed = {count}");
    let _ = writeln!(report, "repetitions = {}", args.repetitions);
    if args.repetitions < 2 {
        let _ = writeln!(report, "warning = single repetition; variance unreliable");
    }
    let _ = writeln!(report, "median_epa_s = {epa_median:.9}");
    let _ = writeln!(report, "median_{}_s = {model_median:.9}", model.kind_name());
    let _ = writeln!(report, "median_apg_s = {apg_median:.9}");
    let _ = writeln!(report, "ordering_epa_lt_model_lt_apg = {ordering_ok}");
    let report_path = args.out_dir.join("bench.txt");
    write_text(&report_path, &report)?;
    manifest.artifact(&report_path)?;
    manifest.write(&args.out_dir.join("manifest_bench.txt"))?;
    print!("{report}");

    if !ordering_ok {
        return Err(Error::Numeric(
            "run-time ordering EPA < model < APG violated".into(),
        ));
    }
    Ok(())
}

fn cmd_apg(args: ApgArgs, invocation: &[String]) -> Result<()> {
    let p = args.scenario.load()?;
    let ds = read_dataset(&args.dataset)?;
    if args.sample >= ds.len() {
        return Err(Error::Data(format!(
            "sample {} out of range (dataset has {})",
            args.sample,
            ds.len()
        )));
    }
    let s = &ds.samples[args.sample];
    let phi = ds.phi(args.sample);
    let apg_cfg = ApgConfig { max_iters: args.iters, ..ApgConfig::default() };

    let mut manifest = Manifest::new("apg", invocation);
    manifest.note("preset", p.name);
    manifest.note("sample", args.sample);

    let t0 = Instant::now();
    let result = apg_solve(&s.beta, &phi, &p.scenario, &apg_cfg)?;
    manifest.phase("solve", t0.elapsed().as_secs_f64());

    let mut csv = String::from("iter,utility\n");
    for (i, u) in result.trace.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, u);
    }
    write_text(&args.trace, &csv)?;
    manifest.artifact(&args.trace)?;
    manifest.write(&manifest_path_for(&args.trace))?;

    let epa_u = evaluate_power(
        &s.beta,
        &phi,
        &epa(ds.m, ds.k_max, s.k_active, p.scenario.n_antennas),
        &p.scenario,
    )
    .1;
    println!(
        "sample {}: apg utility {:.6} (epa {:.6}) in {} iters -> {}",
        args.sample,
        result.utility,
        epa_u,
        result.iters,
        args.trace.display()
    );
    Ok(())
}
