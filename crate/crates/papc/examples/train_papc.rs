//! Train a small transformer on a reduced dataset and compare it with
//! the baselines. A fast demonstration, not the full recipe; expect a
//! couple of minutes on a laptop.
//!
//! ```bash
//! cargo run --example train_papc
//! ```

use papc::config::preset;
use papc::dataset::{write_dataset, Dataset};
use papc::net::Model;
use papc::optim::ApgConfig;
use papc::scenario::SampleGenerator;
use papc::trainer::{evaluate, train, EvalModel, TrainConfig};

fn main() -> papc::Result<()> {
    let preset = preset("scenario0")?;
    let gen = SampleGenerator::new(preset.scenario.clone());

    let train_path = std::env::temp_dir().join("papc-example-train.papcds");
    write_dataset(&train_path, &Dataset::generate(&gen, 0, 4000))?;
    // Test split from a disjoint index range.
    let test_ds = Dataset::generate(&gen, 1_000_000, 300);

    let mut cfg = TrainConfig::new(&preset, train_path);
    cfg.epochs = 6;
    cfg.batch_size = 128;
    cfg.n_warmup = 150;
    println!(
        "training PAPC: m_bar={}, heads={}, blocks={}, {} epochs, batch {}",
        cfg.hyper.m_bar, cfg.hyper.heads, cfg.hyper.blocks, cfg.epochs, cfg.batch_size
    );

    let started = std::time::Instant::now();
    let (model, report) = train(&cfg)?;
    println!(
        "{} parameters, {} steps, {:.0}s",
        report.param_count,
        report.steps,
        started.elapsed().as_secs_f64()
    );
    for (epoch, v) in report.validation.iter().enumerate() {
        println!("  epoch {:2}: validation utility {v:.4}", epoch + 1);
    }

    let Model::Papc(params) = &model else { unreachable!() };
    let epa = evaluate(&EvalModel::Epa, &test_ds, &preset.scenario, 0)?;
    let papc = evaluate(&EvalModel::Papc(params), &test_ds, &preset.scenario, 0)?;
    let apg_cfg = ApgConfig::default();
    let apg = evaluate(&EvalModel::Apg(&apg_cfg), &test_ds, &preset.scenario, 0)?;
    println!("\nmean utility on {} fresh samples:", test_ds.len());
    println!("  EPA  {:.4}", epa.mean_utility);
    println!("  PAPC {:.4}", papc.mean_utility);
    println!("  APG  {:.4}", apg.mean_utility);
    let gap = (papc.mean_utility - epa.mean_utility) / (apg.mean_utility - epa.mean_utility);
    println!("gap closure EPA -> APG: {:.0}%", 100.0 * gap);
    Ok(())
}
