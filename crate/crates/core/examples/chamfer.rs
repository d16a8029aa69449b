//! Chamfer distance between two point clouds, hashed and brute force.

use depthnet::geometry::PointCloud;
use depthnet::pointcloud_metrics::{chamfer, chamfer_bruteforce};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(2.0..8.0)])
            .collect(),
    )
}

fn main() -> depthnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = cloud(&mut rng, 2000);
    let b = cloud(&mut rng, 1500);
    let fast = chamfer(&a, &b)?;
    let slow = chamfer_bruteforce(&a, &b)?;
    println!("hashed:      {:.6} ({:.6} + {:.6})", fast.value, fast.term1, fast.term2);
    println!("brute force: {:.6}", slow.value);
    let shifted = chamfer(&a, &a.translated([0.1, 0.0, 0.0]))?;
    println!("cloud vs itself shifted 10 cm: {:.6}", shifted.value);
    Ok(())
}
