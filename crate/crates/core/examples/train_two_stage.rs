//! Trains the full pipeline on a small dataset, saves a checkpoint, reloads
//! it and scores the held-out scenes at several sparsity levels.

use depthnet::synthetic_data::{generate_dataset, SceneConfig};
use depthnet::training::{
    epoch_means, load_checkpoint, save_checkpoint, sweep, sweep_csv, train_two_stage, Pipeline,
    TrainConfig,
};

fn main() -> depthnet::Result<()> {
    let scene = SceneConfig::default();
    let train = generate_dataset(&scene, 16, 1000)?;
    let heldout = generate_dataset(&scene, 4, 2000)?;
    let config = TrainConfig::default();

    let out = train_two_stage(&train, &config)?;
    println!("stage 1 epoch means {:?}", epoch_means(&out.losses, 1));
    println!("stage 2 epoch means {:?}", epoch_means(&out.losses, 2));

    let path = std::env::temp_dir().join("depthnet_example.ckpt");
    save_checkpoint(&path, &out.to_checkpoint())?;
    let pipeline = Pipeline::from_checkpoint(&load_checkpoint(&path)?);
    print!("held-out:\n{}", pipeline.evaluate(&heldout)?.to_text());
    print!("{}", sweep_csv(&sweep(&pipeline, &heldout, &[1, 4, 16], 0)?));
    Ok(())
}
