//! Generates a handful of synthetic scenes and writes them to disk.
//!
//! `cargo run --example gen_data -- /tmp/scenes`

use depthnet::synthetic_data::{generate_dataset, read_dataset, write_dataset, SceneConfig};
use std::path::PathBuf;

fn main() -> depthnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("depthnet_scenes"));
    let config = SceneConfig::default();
    let samples = generate_dataset(&config, 4, 0)?;
    for s in &samples {
        println!(
            "seed {:>20}: {}x{} sparse points {}",
            s.seed.unwrap_or_default(),
            s.k.width,
            s.k.height,
            s.sparse.valid_count()
        );
    }
    write_dataset(&out, &samples)?;
    let back = read_dataset(&out)?;
    println!("wrote and re-read {} samples under {}", back.len(), out.display());
    Ok(())
}
