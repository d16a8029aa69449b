//! Procedural scenes standing in for real driving data.
//!
//! A scene is a ground plane, a fronto-parallel back wall and a handful of
//! floating fronto-parallel boxes, seen by a pinhole camera. Ground-truth
//! depth is the nearest surface per pixel; color is per-surface albedo with
//! depth shading, so color edges coincide with depth edges. Sparse depth
//! samples the ground truth along horizontal scan lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::io::{
    read_calibration, read_depth_pgm, read_rgb_ppm, write_calibration, write_depth_pgm,
    write_rgb_ppm, RgbImage,
};
use crate::geometry::{CameraIntrinsics, DepthImage};

pub const RGB_FILE: &str = "rgb.ppm";
pub const SPARSE_FILE: &str = "sparse.pgm";
pub const GT_FILE: &str = "gt.pgm";
pub const CALIB_FILE: &str = "calib.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub n_boxes: usize,
    /// Rows between simulated scan lines.
    pub scanline_period: usize,
    /// Per-point drop probability along scan lines. `None` picks exactly
    /// `round(target_density · W · H)` scan-line points instead.
    pub dropout: Option<f64>,
    /// Fraction of pixels carrying a sparse measurement.
    pub target_density: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 96,
            height: 64,
            z_min: 2.0,
            z_max: 20.0,
            n_boxes: 4,
            scanline_period: 4,
            dropout: None,
            target_density: 0.04,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if v == 0 || v % 16 != 0 {
                return Err(Error::Dimension(format!("{name} {v} is not a multiple of 16")));
            }
        }
        if !(self.z_min > 0.0 && self.z_min < self.z_max) {
            return Err(Error::Config(format!(
                "need 0 < z_min < z_max, got {} and {}",
                self.z_min, self.z_max
            )));
        }
        if self.scanline_period == 0 {
            return Err(Error::Config("scanline period must be positive".into()));
        }
        if !(self.target_density > 0.0 && self.target_density <= 1.0) {
            return Err(Error::Config(format!(
                "target density must lie in (0, 1], got {}",
                self.target_density
            )));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Default camera for these extents: square pixels, centred principal point.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = 0.8 * self.width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    fn scan_rows(&self) -> impl Iterator<Item = usize> + '_ {
        (self.scanline_period / 2..self.height).step_by(self.scanline_period)
    }
}

/// Fronto-parallel rectangle at depth `z`, spanning `[x0, x1] × [y0, y1]`
/// in camera coordinates (y down).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBox {
    pub z: f64,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub albedo: [f64; 3],
}

/// Surfaces of a generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    /// Ground plane `y = camera_height`.
    pub camera_height: f64,
    /// Back wall `z = wall_z`.
    pub wall_z: f64,
    pub boxes: Vec<SceneBox>,
    pub ground_albedo: [f64; 3],
    pub wall_albedo: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub rgb: RgbImage,
    pub sparse: DepthImage,
    pub gt: DepthImage,
    pub k: CameraIntrinsics,
    /// Known for generated samples; absent when read back from disk.
    pub seed: Option<u64>,
    pub layout: Option<SceneLayout>,
}

fn albedo(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.gen_range(0.2..0.95),
        rng.gen_range(0.2..0.95),
        rng.gen_range(0.2..0.95),
    ]
}

fn random_layout(config: &SceneConfig, k: &CameraIntrinsics, rng: &mut impl Rng) -> SceneLayout {
    // nearest ground point (bottom row) sits at 1.2·z_min
    let t_bottom = ((config.height - 1) as f64 - k.cy) / k.fy;
    let camera_height = 1.2 * config.z_min * t_bottom;
    let wall_z = rng.gen_range(0.75 * config.z_max..config.z_max);
    let boxes = (0..config.n_boxes)
        .map(|_| {
            let z = rng.gen_range(1.5 * config.z_min..(0.8 * wall_z).max(1.5 * config.z_min + 1e-3));
            let half_w = z * k.cx / k.fx;
            let half_h = z * k.cy / k.fy;
            let w = rng.gen_range(0.15..0.6) * 2.0 * half_w;
            let h = rng.gen_range(0.15..0.6) * 2.0 * half_h;
            let xc = rng.gen_range(-half_w..half_w);
            let yc = rng.gen_range(-half_h..camera_height.min(half_h));
            SceneBox {
                z,
                x0: xc - w / 2.0,
                x1: xc + w / 2.0,
                y0: yc - h / 2.0,
                y1: yc + h / 2.0,
                albedo: albedo(rng),
            }
        })
        .collect();
    SceneLayout {
        camera_height,
        wall_z,
        boxes,
        ground_albedo: albedo(rng),
        wall_albedo: albedo(rng),
    }
}

/// Renders depth and color by z-buffering surfaces: wall, ground, then
/// each box over the pixel range its rectangle projects to.
fn render(config: &SceneConfig, k: &CameraIntrinsics, layout: &SceneLayout) -> (DepthImage, RgbImage) {
    let (w, h) = (config.width, config.height);
    let mut depth = vec![layout.wall_z; w * h];
    let mut color = vec![layout.wall_albedo; w * h];
    for v in 0..h {
        let t = (v as f64 - k.cy) / k.fy;
        if t <= 0.0 {
            continue;
        }
        let zg = layout.camera_height / t;
        if zg < layout.wall_z {
            for u in 0..w {
                depth[v * w + u] = zg;
                color[v * w + u] = layout.ground_albedo;
            }
        }
    }
    for b in &layout.boxes {
        let u_lo = (k.fx * b.x0 / b.z + k.cx).ceil().max(0.0) as usize;
        let u_hi = (k.fx * b.x1 / b.z + k.cx).floor().min((w - 1) as f64);
        let v_lo = (k.fy * b.y0 / b.z + k.cy).ceil().max(0.0) as usize;
        let v_hi = (k.fy * b.y1 / b.z + k.cy).floor().min((h - 1) as f64);
        if u_hi < 0.0 || v_hi < 0.0 {
            continue;
        }
        for v in v_lo..=v_hi as usize {
            for u in u_lo..=u_hi as usize {
                let i = v * w + u;
                if b.z < depth[i] {
                    depth[i] = b.z;
                    color[i] = b.albedo;
                }
            }
        }
    }
    let n = w * h;
    let mut rgb = vec![0.0; 3 * n];
    for i in 0..n {
        let shade = 1.0 - 0.5 * (depth[i] - config.z_min) / (config.z_max - config.z_min);
        for c in 0..3 {
            rgb[c * n + i] = (color[i][c] * shade).clamp(0.0, 1.0);
        }
    }
    (
        DepthImage::new(w, h, depth).expect("rendered depths are finite and positive"),
        RgbImage {
            width: w,
            height: h,
            data: rgb,
        },
    )
}

fn scan(config: &SceneConfig, gt: &DepthImage, rng: &mut impl Rng) -> Result<DepthImage> {
    let w = config.width;
    let candidates: Vec<usize> = config
        .scan_rows()
        .flat_map(|v| (0..w).map(move |u| v * w + u))
        .collect();
    let mut sparse = DepthImage::empty(w, config.height);
    let keep: Vec<usize> = match config.dropout {
        Some(p) => candidates.into_iter().filter(|_| rng.gen::<f64>() >= p).collect(),
        None => {
            let target = (config.target_density * (w * config.height) as f64).round() as usize;
            if target > candidates.len() {
                return Err(Error::Config(format!(
                    "density {} needs {target} points but scan lines only cover {}",
                    config.target_density,
                    candidates.len()
                )));
            }
            sample(rng, candidates.len(), target)
                .into_iter()
                .map(|j| candidates[j])
                .collect()
        }
    };
    for i in keep {
        let (u, v) = (i % w, i / w);
        sparse.set(u, v, gt.get(u, v));
    }
    Ok(sparse)
}

/// Deterministic scene for `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SceneSample> {
    config.validate()?;
    let k = config.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = random_layout(config, &k, &mut rng);
    let (gt, rgb) = render(config, &k, &layout);
    let sparse = scan(config, &gt, &mut rng)?;
    Ok(SceneSample {
        rgb,
        sparse,
        gt,
        k,
        seed: Some(seed),
        layout: Some(layout),
    })
}

/// Per-sample seed `i` of a dataset rooted at `base`.
pub fn sample_seed(base: u64, i: usize) -> u64 {
    // splitmix64 finaliser keeps neighbouring bases from sharing scenes
    let mut z = base
        .wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_dataset(config: &SceneConfig, count: usize, base_seed: u64) -> Result<Vec<SceneSample>> {
    (0..count)
        .map(|i| generate_scene(config, sample_seed(base_seed, i)))
        .collect()
}

pub fn write_sample(dir: &Path, s: &SceneSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rgb_ppm(&dir.join(RGB_FILE), &s.rgb)?;
    write_depth_pgm(&dir.join(SPARSE_FILE), &s.sparse)?;
    write_depth_pgm(&dir.join(GT_FILE), &s.gt)?;
    write_calibration(&dir.join(CALIB_FILE), &s.k)
}

pub fn read_sample(dir: &Path) -> Result<SceneSample> {
    let rgb = read_rgb_ppm(&dir.join(RGB_FILE))?;
    let sparse = read_depth_pgm(&dir.join(SPARSE_FILE))?;
    let gt = read_depth_pgm(&dir.join(GT_FILE))?;
    let k = read_calibration(&dir.join(CALIB_FILE))?;
    for (name, w, h) in [
        (RGB_FILE, rgb.width, rgb.height),
        (SPARSE_FILE, sparse.width(), sparse.height()),
        (GT_FILE, gt.width(), gt.height()),
    ] {
        if w != k.width || h != k.height {
            return Err(Error::format(
                dir.join(name),
                format!("extent {w}×{h} disagrees with calibration {}×{}", k.width, k.height),
            ));
        }
    }
    Ok(SceneSample {
        rgb,
        sparse,
        gt,
        k,
        seed: None,
        layout: None,
    })
}

pub fn sample_dir_name(i: usize) -> String {
    format!("sample_{i:04}")
}

/// Writes `sample_NNNN/` directories plus a manifest of
/// `name seed=<seed> valid=<sparse count>` lines.
pub fn write_dataset(dir: &Path, samples: &[SceneSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, s) in samples.iter().enumerate() {
        let name = sample_dir_name(i);
        write_sample(&dir.join(&name), s)?;
        let seed = s.seed.map_or_else(|| "unknown".to_string(), |v| v.to_string());
        let _ = writeln!(manifest, "{name} seed={seed} valid={}", s.sparse.valid_count());
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

/// Reads every sample listed in the manifest, restoring recorded seeds.
pub fn read_dataset(dir: &Path) -> Result<Vec<SceneSample>> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut parts = line.split_whitespace();
        let name = parts.next().expect("non-empty line");
        let mut s = read_sample(&dir.join(name))?;
        s.seed = parts
            .find_map(|p| p.strip_prefix("seed="))
            .and_then(|v| v.parse().ok());
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::format(path, "manifest lists no samples"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_density_exact() {
        let c = SceneConfig::default();
        let a = generate_scene(&c, 11).unwrap();
        let b = generate_scene(&c, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.sparse.valid_count(), 246);
    }

    #[test]
    fn sparse_is_subset_of_gt() {
        let c = SceneConfig {
            n_boxes: 0,
            ..SceneConfig::default()
        };
        let s = generate_scene(&c, 3).unwrap();
        for (u, v, d) in s.sparse.valid_pixels() {
            assert_eq!(d, s.gt.get(u, v));
        }
        assert_eq!(s.gt.valid_count(), 96 * 64);
    }

    #[test]
    fn rejects_bad_extents() {
        let c = SceneConfig {
            width: 50,
            ..SceneConfig::default()
        };
        let err = generate_scene(&c, 0).unwrap_err().to_string();
        assert!(err.contains("multiple of 16"), "{err}");
    }

    #[test]
    fn dropout_mode_is_bernoulli_on_scan_rows() {
        let c = SceneConfig {
            dropout: Some(0.5),
            ..SceneConfig::default()
        };
        let s = generate_scene(&c, 5).unwrap();
        for (_, v, _) in s.sparse.valid_pixels() {
            assert_eq!(v % 4, 2);
        }
        let n = s.sparse.valid_count();
        assert!(n > 600 && n < 940, "{n}");
    }
}
