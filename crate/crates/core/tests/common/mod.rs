#![allow(dead_code)]

use depthnet::geometry::{CameraIntrinsics, DepthImage, Point3, PointCloud};
use depthnet::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_cloud(r: &mut ChaCha8Rng, n: usize, half: f64) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    r.gen_range(-half..half),
                    r.gen_range(-half..half),
                    r.gen_range(-half..half),
                ]
            })
            .collect(),
    )
}

pub fn camera(width: usize, height: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(
        0.8 * width as f64,
        0.8 * width as f64,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
    )
    .unwrap()
}

/// Sparse depth image with roughly `fill` of the pixels valid.
pub fn random_sparse(r: &mut ChaCha8Rng, w: usize, h: usize, fill: f64) -> DepthImage {
    let values = (0..w * h)
        .map(|_| if r.gen_bool(fill) { r.gen_range(0.5..30.0) } else { 0.0 })
        .collect();
    DepthImage::new(w, h, values).unwrap()
}

/// Reference Chamfer distance written independently of the library.
pub fn chamfer_oracle(a: &[Point3], b: &[Point3]) -> f64 {
    let one_way = |p: &[Point3], q: &[Point3]| {
        p.iter()
            .map(|x| {
                q.iter()
                    .map(|y| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / p.len() as f64
    };
    one_way(a, b) + one_way(b, a)
}

/// Points sorted lexicographically by their bit patterns, for multiset comparison.
pub fn sorted_points(mut pts: Vec<Point3>) -> Vec<Point3> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts
}
