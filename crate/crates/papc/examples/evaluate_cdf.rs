//! Evaluate algorithms over a test set and export per-user SE values,
//! the raw material for CDF plots.
//!
//! ```bash
//! cargo run --example evaluate_cdf
//! ```

use papc::config::preset;
use papc::dataset::Dataset;
use papc::optim::ApgConfig;
use papc::scenario::SampleGenerator;
use papc::trainer::{evaluate, percentile, se_dump_to_csv, write_text, EvalModel};

fn main() -> papc::Result<()> {
    let cfg = preset("scenario0")?.scenario;
    let gen = SampleGenerator::new(cfg.clone());
    let test_ds = Dataset::generate(&gen, 500_000, 300);

    let apg_cfg = ApgConfig::default();
    for model in [EvalModel::Epa, EvalModel::Apg(&apg_cfg)] {
        let name = model.name();
        let report = evaluate(&model, &test_ds, &cfg, 0)?;

        let path = std::env::temp_dir().join(format!("papc-example-se-{name}.csv"));
        write_text(&path, &se_dump_to_csv(&report))?;

        let mut sorted: Vec<f64> = report.per_user.iter().map(|r| r.se).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("{name}: {} per-user SE rows -> {}", sorted.len(), path.display());
        println!("  mean utility   {:.4}", report.mean_utility);
        println!("  min SE         {:.4}", report.min_se);
        println!("  p10 SE         {:.4}  (min SE of the top 90% of users)", report.p10_se);
        for q in [0.25, 0.5, 0.75, 0.9] {
            println!("  p{:<3.0} SE        {:.4}", q * 100.0, percentile(&sorted, q));
        }
        if let Some(iters) = report.mean_iters {
            println!("  mean APG iters {iters:.1}");
        }
    }
    println!("\nplot the CDFs from the CSV dumps with any tool you like.");
    Ok(())
}
