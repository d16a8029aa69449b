//! Pinhole camera model, depth images, point clouds and the conversions
//! between them.

pub mod io;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Point3 = [f64; 3];

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Continuous image coordinates of a camera-frame point with `z > 0`.
    pub fn project_point(&self, p: Point3) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    /// Camera-frame point seen at pixel `(u, v)` with depth `d`.
    pub fn unproject_pixel(&self, u: f64, v: f64, d: f64) -> Point3 {
        [(u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d]
    }
}

/// Depth in meters on an `height × width` grid, `0` meaning missing.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "depth image {width}×{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Range {
                value: *bad,
                message: "depths must be finite and non-negative".into(),
            });
        }
        Ok(DepthImage {
            width,
            height,
            values,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    /// Panics on a negative or non-finite depth.
    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        assert!(d.is_finite() && d >= 0.0, "invalid depth {d}");
        self.values[v * self.width + u] = d;
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&d| d > 0.0).count()
    }

    /// `(u, v, depth)` for every valid pixel in row-major order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(|(i, &d)| (i % self.width, i / self.width, d))
    }

    /// `1 × H × W` tensor with values `d / max_depth`; missing stays 0.
    pub fn to_tensor(&self, max_depth: f64) -> Tensor {
        let data = self.values.iter().map(|d| d / max_depth).collect();
        Tensor::new([1, self.height, self.width], data).expect("extents agree")
    }

    /// Binary validity mask shaped like [`DepthImage::to_tensor`].
    pub fn mask_tensor(&self) -> Tensor {
        let data = self
            .values
            .iter()
            .map(|&d| if d > 0.0 { 1.0 } else { 0.0 })
            .collect();
        Tensor::new([1, self.height, self.width], data).expect("extents agree")
    }

    pub fn check_extents(&self, k: &CameraIntrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(Error::Dimension(format!(
                "depth image is {}×{} but intrinsics describe {}×{}",
                self.width, self.height, k.width, k.height
            )));
        }
        Ok(())
    }
}

/// Unordered camera-frame points in meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, t: Point3) -> Self {
        PointCloud::new(
            self.points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        )
    }

    /// `N × 3` tensor. Fails on an empty cloud.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::EmptyInput("point cloud"));
        }
        let data = self.points.iter().flat_map(|p| p.iter().copied()).collect();
        Tensor::new([self.len(), 3], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.shape().len() != 2 || t.shape()[1] != 3 {
            return Err(Error::Dimension(format!(
                "point tensor must be N×3, got {:?}",
                t.shape()
            )));
        }
        Ok(PointCloud::new(
            t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        ))
    }
}

/// Back-projects every valid pixel to a camera-frame point.
pub fn unproject(depth: &DepthImage, k: &CameraIntrinsics) -> Result<PointCloud> {
    depth.check_extents(k)?;
    Ok(PointCloud::new(
        depth
            .valid_pixels()
            .map(|(u, v, d)| k.unproject_pixel(u as f64, v as f64, d))
            .collect(),
    ))
}

/// Result of [`project_zbuffer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub depth: DepthImage,
    /// Points with `z <= 0` (or non-finite coordinates).
    pub dropped_behind: usize,
    /// Points landing outside the image.
    pub dropped_outside: usize,
}

/// Round half up.
fn round_pixel(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Projects a cloud with one-pixel splats, keeping the nearest depth per pixel.
pub fn project_zbuffer(cloud: &PointCloud, k: &CameraIntrinsics) -> Projection {
    let mut depth = DepthImage::empty(k.width, k.height);
    let mut dropped_behind = 0;
    let mut dropped_outside = 0;
    for &p in &cloud.points {
        if !(p[2] > 0.0) || !p.iter().all(|c| c.is_finite()) {
            dropped_behind += 1;
            continue;
        }
        let (uf, vf) = k.project_point(p);
        let (u, v) = (round_pixel(uf), round_pixel(vf));
        if !(u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64) {
            dropped_outside += 1;
            continue;
        }
        let idx = v as usize * k.width + u as usize;
        let cur = depth.values[idx];
        if cur == 0.0 || p[2] < cur {
            depth.values[idx] = p[2];
        }
    }
    Projection {
        depth,
        dropped_behind,
        dropped_outside,
    }
}

/// Keeps a uniformly random subset of `round(valid · keep_ratio)` valid pixels.
pub fn subsample(depth: &DepthImage, keep_ratio: f64, seed: u64) -> Result<DepthImage> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "keep ratio must lie in (0, 1], got {keep_ratio}"
        )));
    }
    let valid: Vec<usize> = (0..depth.values.len())
        .filter(|&i| depth.values[i] > 0.0)
        .collect();
    let keep = (valid.len() as f64 * keep_ratio).round() as usize;
    if keep == valid.len() {
        return Ok(depth.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DepthImage::empty(depth.width, depth.height);
    for j in sample(&mut rng, valid.len(), keep) {
        let i = valid[j];
        out.values[i] = depth.values[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 60.0, 40.0, 120, 80).unwrap()
    }

    #[test]
    fn principal_point_unprojects_to_optical_axis() {
        let k = cam();
        let mut d = DepthImage::empty(120, 80);
        d.set(60, 40, 5.0);
        let c = unproject(&d, &k).unwrap();
        assert_eq!(c.points, vec![[0.0, 0.0, 5.0]]);
    }

    #[test]
    fn unproject_hand_computed_x() {
        let k = cam();
        let mut d = DepthImage::empty(120, 80);
        d.set(80, 40, 5.0);
        let c = unproject(&d, &k).unwrap();
        // (80 - 60) * 5 / 100
        assert_eq!(c.points[0][0], 1.0);
    }

    #[test]
    fn empty_depth_gives_empty_cloud_and_extent_mismatch_errors() {
        let k = cam();
        assert!(unproject(&DepthImage::empty(120, 80), &k).unwrap().is_empty());
        assert!(matches!(
            unproject(&DepthImage::empty(10, 80), &k),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zbuffer_keeps_nearest() {
        let k = cam();
        let far = k.unproject_pixel(10.0, 12.0, 7.0);
        let near = k.unproject_pixel(10.0, 12.0, 3.0);
        let p = project_zbuffer(&PointCloud::new(vec![far, near]), &k);
        assert_eq!(p.depth.get(10, 12), 3.0);
        assert_eq!(p.depth.valid_count(), 1);
    }

    #[test]
    fn zbuffer_drops_points_behind_and_outside() {
        let k = cam();
        let cloud = PointCloud::new(vec![[0.0, 0.0, -1.0], [100.0, 0.0, 1.0], [0.0, 0.0, 2.0]]);
        let p = project_zbuffer(&cloud, &k);
        assert_eq!(p.dropped_behind, 1);
        assert_eq!(p.dropped_outside, 1);
        assert_eq!(p.depth.valid_count(), 1);
    }

    #[test]
    fn rounding_is_half_up() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        // u = 1.5 rounds to 2, v = 0.5 rounds to 1
        let p = project_zbuffer(&PointCloud::new(vec![[1.5, 0.5, 1.0]]), &k);
        assert_eq!(p.depth.get(2, 1), 1.0);
    }

    #[test]
    fn subsample_counts_and_identity() {
        let mut d = DepthImage::empty(1216, 352);
        for i in 0..17_000 {
            d.values[(i * 7919) % (1216 * 352)] = 1.0 + (i % 50) as f64;
        }
        assert_eq!(d.valid_count(), 17_000);
        let q = subsample(&d, 0.25, 1).unwrap();
        assert_eq!(q.valid_count(), 4_250);
        assert_eq!(subsample(&d, 1.0, 1).unwrap(), d);
        assert_eq!(subsample(&d, 0.25, 9).unwrap(), subsample(&d, 0.25, 9).unwrap());
        assert!(subsample(&d, 0.0, 1).is_err());
    }

    #[test]
    fn negative_depth_rejected() {
        assert!(DepthImage::new(2, 1, vec![1.0, -1.0]).is_err());
        assert!(DepthImage::new(2, 1, vec![1.0]).is_err());
    }
}
