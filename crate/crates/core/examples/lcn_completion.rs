//! Fits the point completion net to one scene for a few Adam steps.

use depthnet::geometry::unproject;
use depthnet::lcn::{lcn_forward, LcnConfig, LcnParams};
use depthnet::pointcloud_metrics::{chamfer, chamfer_loss};
use depthnet::synthetic_data::{generate_scene, SceneConfig};
use depthnet::tensor::Graph;
use depthnet::training::{adam_step, AdamConfig, AdamState};

fn main() -> depthnet::Result<()> {
    let scene = SceneConfig { width: 48, height: 32, ..SceneConfig::default() };
    let s = generate_scene(&scene, 1)?;
    let sparse = unproject(&s.sparse, &s.k)?;
    let dense = unproject(&s.gt, &s.k)?;

    let config = LcnConfig { grid_extent: 1.0, ..LcnConfig::default() };
    let mut lcn = LcnParams::new(config.clone(), 0)?;
    println!("{} parameters, {} sparse points", lcn.param_count(), sparse.len());
    let mut adam = AdamState::new(lcn.params.tensors());
    for step in 0..=100 {
        let mut g = Graph::new();
        let bound = lcn.params.bind(&mut g);
        let out = lcn_forward(&mut g, &bound, &config, &sparse)?;
        let loss = chamfer_loss(&mut g, out, &dense)?;
        if step % 20 == 0 {
            println!("step {step:>2}: chamfer {:.4}", g.value(loss).data()[0]);
        }
        g.backward(loss)?;
        let grads = bound.grads(&g);
        adam_step(lcn.params.tensors_mut(), &grads, &mut adam, 0.003, &AdamConfig::default())?;
    }
    let completed = lcn.complete(&sparse)?;
    println!(
        "raw {:.4} vs completed {:.4} ({} points)",
        chamfer(&sparse, &dense)?.value,
        chamfer(&completed, &dense)?.value,
        completed.len()
    );
    Ok(())
}
