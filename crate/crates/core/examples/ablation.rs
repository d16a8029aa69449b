//! Trains the full pipeline and both ablations under one budget.

use depthnet::synthetic_data::{generate_dataset, SceneConfig};
use depthnet::training::{run_ablation_suite, TrainConfig, Variant};

fn main() -> depthnet::Result<()> {
    let scene = SceneConfig { width: 48, height: 32, ..SceneConfig::default() };
    let train = generate_dataset(&scene, 12, 1000)?;
    let heldout = generate_dataset(&scene, 4, 2000)?;
    let config = TrainConfig { stage2_epochs: 3, ..TrainConfig::default() };
    for run in run_ablation_suite(&train, &heldout, &config, &Variant::ALL)? {
        println!(
            "{:<7} rmse {:>8.1} mm  mae {:>8.1} mm  completion calls {}",
            run.variant.as_str(),
            run.report.rmse,
            run.report.mae,
            run.lcn_calls
        );
    }
    Ok(())
}
