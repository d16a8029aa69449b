//! Unprojects a depth image to a cloud, projects it back with a z-buffer,
//! then keeps a quarter of the points.

use depthnet::geometry::{project_zbuffer, subsample, unproject};
use depthnet::synthetic_data::{generate_scene, SceneConfig};

fn main() -> depthnet::Result<()> {
    let s = generate_scene(&SceneConfig::default(), 3)?;
    let cloud = unproject(&s.gt, &s.k)?;
    let back = project_zbuffer(&cloud, &s.k);
    println!("{} points, round trip exact: {}", cloud.len(), back.depth == s.gt);
    println!("dropped behind {} outside {}", back.dropped_behind, back.dropped_outside);

    let quarter = subsample(&s.gt, 0.25, 7)?;
    println!("subsampled {} -> {}", s.gt.valid_count(), quarter.valid_count());
    Ok(())
}
