//! LiDAR completion net: coarse densification in 3D.
//!
//! A per-point MLP followed by max pooling produces one global feature for
//! the whole sparse cloud. Every input point is kept as a landmark and emits
//! `s²` new points: for each lattice seed `(a, b)` a shared decoder MLP maps
//! `[global, landmark, a, b]` to an offset, and the output point is
//! `landmark + offset`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::{init_uniform, Bound, Graph, ParamSet, Tensor, Var};

/// Width of the per-landmark local input: xyz plus the 2D lattice seed.
const LOCAL_DIM: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct LcnConfig {
    /// Per-point encoder widths, starting at 3 and ending at the global width.
    pub pointnet_dims: Vec<usize>,
    /// Decoder widths, starting at `global_dim + 5` and ending at 3.
    pub decoder_dims: Vec<usize>,
    /// Patch side `s`; every landmark emits `s²` points.
    pub patch_side: usize,
    /// Half-width of the dimensionless folding lattice.
    pub grid_extent: f64,
    /// Meters per network unit for point inputs and offset outputs.
    pub coord_scale: f64,
}

impl Default for LcnConfig {
    fn default() -> Self {
        LcnConfig {
            pointnet_dims: vec![3, 64, 128, 256],
            decoder_dims: vec![256 + LOCAL_DIM, 128, 64, 3],
            patch_side: 2,
            grid_extent: 0.05,
            coord_scale: 10.0,
        }
    }
}

impl LcnConfig {
    /// Preset with a 1024-wide global feature.
    pub fn paper_scale() -> Self {
        LcnConfig {
            pointnet_dims: vec![3, 64, 128, 1024],
            decoder_dims: vec![1024 + LOCAL_DIM, 128, 64, 3],
            ..Self::default()
        }
    }

    /// Compact preset for gradient checks and quick experiments.
    pub fn tiny() -> Self {
        LcnConfig {
            pointnet_dims: vec![3, 8, 12],
            decoder_dims: vec![12 + LOCAL_DIM, 8, 3],
            ..Self::default()
        }
    }

    pub fn global_dim(&self) -> usize {
        *self.pointnet_dims.last().unwrap_or(&0)
    }

    pub fn points_per_landmark(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pointnet_dims.len() < 2 || self.pointnet_dims[0] != 3 {
            return bad(format!("pointnet dims must start at 3: {:?}", self.pointnet_dims));
        }
        if self.decoder_dims.len() < 2 || *self.decoder_dims.last().unwrap() != 3 {
            return bad(format!("decoder dims must end at 3: {:?}", self.decoder_dims));
        }
        if self.decoder_dims[0] != self.global_dim() + LOCAL_DIM {
            return bad(format!(
                "decoder input width {} must equal global width {} + {LOCAL_DIM}",
                self.decoder_dims[0],
                self.global_dim()
            ));
        }
        if self.pointnet_dims.iter().chain(&self.decoder_dims).any(|&d| d == 0) {
            return bad("zero layer width".into());
        }
        if self.patch_side == 0 {
            return bad("patch side must be at least 1".into());
        }
        if !(self.grid_extent >= 0.0 && self.coord_scale > 0.0) {
            return bad("grid extent must be >= 0 and coord scale > 0".into());
        }
        Ok(())
    }

    /// Lattice seeds `(a, b)` covering `[-r, r]²`, row-major.
    pub fn grid(&self) -> Vec<[f64; 2]> {
        let s = self.patch_side;
        let r = self.grid_extent;
        let coord = |i: usize| {
            if s == 1 {
                0.0
            } else {
                -r + 2.0 * r * i as f64 / (s - 1) as f64
            }
        };
        (0..s)
            .flat_map(|i| (0..s).map(move |j| [coord(i), coord(j)]))
            .collect()
    }
}

/// Exact scalar count of all weights and biases for `config`.
pub fn lcn_param_count(config: &LcnConfig) -> usize {
    let dense = |dims: &[usize]| dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    dense(&config.pointnet_dims) + dense(&config.decoder_dims)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcnParams {
    pub config: LcnConfig,
    pub params: ParamSet,
}

impl LcnParams {
    /// Uniform fan-in initialisation, except the decoder output layer which
    /// starts at zero so every patch point begins on its landmark.
    pub fn new(config: LcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (i, w) in config.pointnet_dims.windows(2).enumerate() {
            params.insert(format!("enc.{i}.w"), init_uniform(&[w[0], w[1]], w[0], &mut rng));
            params.insert(format!("enc.{i}.b"), Tensor::zeros([w[1]]));
        }
        let last = config.decoder_dims.len() - 2;
        for (i, w) in config.decoder_dims.windows(2).enumerate() {
            let weight = if i == last {
                Tensor::zeros([w[0], w[1]])
            } else {
                init_uniform(&[w[0], w[1]], w[0], &mut rng)
            };
            params.insert(format!("dec.{i}.w"), weight);
            params.insert(format!("dec.{i}.b"), Tensor::zeros([w[1]]));
        }
        Ok(LcnParams { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Zeroes the decoder output layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.config.decoder_dims.len() - 2;
        for name in [format!("dec.{last}.w"), format!("dec.{last}.b")] {
            let t = self.params.get_mut(&name).expect("output layer exists");
            t.data_mut().fill(0.0);
        }
    }

    /// Inference without gradients.
    pub fn complete(&self, sparse: &PointCloud) -> Result<PointCloud> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let out = lcn_forward(&mut g, &bound, &self.config, sparse)?;
        PointCloud::from_tensor(g.value(out))
    }
}

fn dense(g: &mut Graph, p: &Bound<'_>, prefix: &str, x: Var, relu: bool) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"));
    let b = p.get(&format!("{prefix}.b"));
    let y = g.matmul(x, w)?;
    let y = g.add_row(y, b)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Records the completion net on `g`, returning the `N·s² × 3` dense cloud
/// (meters). Output row `i·s² + j` belongs to landmark `i` and seed `j`.
pub fn lcn_forward(
    g: &mut Graph,
    params: &Bound<'_>,
    config: &LcnConfig,
    sparse: &PointCloud,
) -> Result<Var> {
    if sparse.is_empty() {
        return Err(Error::EmptyInput("completion net needs at least one point"));
    }
    let n = sparse.len();
    let k = config.points_per_landmark();
    let m = n * k;
    let inv = 1.0 / config.coord_scale;

    let scaled: Vec<f64> = sparse
        .points
        .iter()
        .flat_map(|p| p.iter().map(move |c| c * inv))
        .collect();
    let mut h = g.constant(Tensor::new([n, 3], scaled)?);
    for i in 0..config.pointnet_dims.len() - 1 {
        h = dense(g, params, &format!("enc.{i}"), h, true)?;
    }
    let global = g.maxpool_points(h)?;

    let grid = config.grid();
    let mut local = Vec::with_capacity(m * LOCAL_DIM);
    let mut anchors = Vec::with_capacity(m * 3);
    for p in &sparse.points {
        for seed in &grid {
            local.extend([p[0] * inv, p[1] * inv, p[2] * inv, seed[0], seed[1]]);
            anchors.extend_from_slice(p);
        }
    }
    let repeated = g.repeat_rows(global, m)?;
    let local = g.constant(Tensor::new([m, LOCAL_DIM], local)?);
    let mut h = g.concat(&[repeated, local], 1)?;
    let layers = config.decoder_dims.len() - 1;
    for i in 0..layers {
        h = dense(g, params, &format!("dec.{i}"), h, i + 1 < layers)?;
    }
    let offsets = g.scale(h, config.coord_scale);
    let anchors = g.constant(Tensor::new([m, 3], anchors)?);
    g.add(anchors, offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_cloud(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 * 0.7;
                    [t.sin() * 3.0, t.cos() * 0.5, 5.0 + (i % 7) as f64]
                })
                .collect(),
        )
    }

    #[test]
    fn single_layer_count() {
        let dims: &[usize] = &[3, 4];
        assert_eq!(dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>(), 16);
    }

    #[test]
    fn default_count_matches_layer_sum() {
        // 3·64+64 + 64·128+128 + 128·256+256 + 261·128+128 + 128·64+64 + 64·3+3
        assert_eq!(lcn_param_count(&LcnConfig::default()), 83_587);
        let p = LcnParams::new(LcnConfig::default(), 0).unwrap();
        assert_eq!(p.param_count(), 83_587);
    }

    #[test]
    fn output_cardinality_and_zero_init_collapse() {
        let cloud = ring_cloud(100);
        let p = LcnParams::new(LcnConfig::default(), 1).unwrap();
        let out = p.complete(&cloud).unwrap();
        assert_eq!(out.len(), 400);
        for (i, q) in out.points.iter().enumerate() {
            assert_eq!(*q, cloud.points[i / 4]);
        }
    }

    #[test]
    fn grid_spans_extent() {
        let c = LcnConfig {
            patch_side: 3,
            ..LcnConfig::default()
        };
        let g = c.grid();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], [-0.05, -0.05]);
        assert_eq!(g[8], [0.05, 0.05]);
        let one = LcnConfig {
            patch_side: 1,
            ..LcnConfig::default()
        };
        assert_eq!(one.grid(), vec![[0.0, 0.0]]);
    }

    #[test]
    fn empty_input_and_bad_config() {
        let p = LcnParams::new(LcnConfig::tiny(), 0).unwrap();
        assert!(matches!(p.complete(&PointCloud::default()), Err(Error::EmptyInput(_))));
        let bad = LcnConfig {
            decoder_dims: vec![7, 3],
            ..LcnConfig::tiny()
        };
        assert!(LcnParams::new(bad, 0).is_err());
    }
}
