//! Scores a nearest-neighbour fill of the sparse input against ground truth.

use depthnet::eval_metrics::{nn_fill_baseline, MetricsAccumulator};
use depthnet::synthetic_data::{generate_dataset, SceneConfig};

fn main() -> depthnet::Result<()> {
    let samples = generate_dataset(&SceneConfig::default(), 8, 2000)?;
    let mut acc = MetricsAccumulator::default();
    for s in &samples {
        acc.add(&nn_fill_baseline(&s.sparse)?, &s.gt)?;
    }
    let r = acc.report()?;
    println!("nearest-neighbour fill over {} scenes", samples.len());
    print!("{}", r.to_text());
    Ok(())
}
