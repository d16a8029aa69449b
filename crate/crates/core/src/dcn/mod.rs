//! Depth completion net: image-space refinement.
//!
//! The dual-pathway network runs two residual encoders (dual-depth and
//! RGB-D) down to 1/16 resolution. The decoder climbs back with
//! upsample-then-convolve stages; at every level it *adds* the dual-depth
//! skip feature and *concatenates* the RGB-D skip feature, followed by a 1×1
//! fusion convolution. The single-pathway variant has one encoder over all
//! six channels and concatenation-only skips.

mod blocks;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::DepthImage;
use crate::tensor::{init_uniform, Bound, Graph, ParamSet, Tensor, Var};
use blocks::{conv, declare_conv, declare_encoder, encoder_forward, stage_widths, ParamSpec};

/// Spatial extents must be multiples of this (four stride-2 stages).
pub const DOWNSAMPLE: usize = 16;

/// Input channels of the dual-depth pathway: projected dense depth, sparse depth.
pub const DUAL_CHANNELS: usize = 2;
/// Input channels of the RGB-D pathway: R, G, B, sparse depth.
pub const RGBD_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DcnKind {
    /// Two encoders, sum-fused dual-depth skips, concat-fused RGB-D skips.
    DualPathway,
    /// One encoder over the stacked six channels, concat-only skips.
    SinglePathway,
}

impl DcnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DcnKind::DualPathway => "dual",
            DcnKind::SinglePathway => "single",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dual" => Ok(DcnKind::DualPathway),
            "single" => Ok(DcnKind::SinglePathway),
            _ => Err(Error::Config(format!("unknown network kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcnConfig {
    pub kind: DcnKind,
    /// Width of the full-resolution stem and the first stage.
    pub base_channels: usize,
    pub blocks_per_stage: usize,
    /// Multiplies every feature width; lets budget matching move in small steps.
    pub width_scale: f64,
}

impl Default for DcnConfig {
    fn default() -> Self {
        DcnConfig {
            kind: DcnKind::DualPathway,
            base_channels: 16,
            blocks_per_stage: 2,
            width_scale: 1.0,
        }
    }
}

impl DcnConfig {
    pub fn paper_scale() -> Self {
        DcnConfig {
            base_channels: 64,
            ..Self::default()
        }
    }

    pub fn tiny() -> Self {
        DcnConfig {
            base_channels: 2,
            blocks_per_stage: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.blocks_per_stage == 0 || !(self.width_scale > 0.0) {
            return Err(Error::Config(format!(
                "base channels and blocks per stage must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Single-pathway config whose parameter count is closest to that of
    /// `self`, searching the width scale in steps of 0.01 over `[1, 3]`.
    pub fn matched_single_pathway(&self) -> DcnConfig {
        let target = dcn_param_count(self) as f64;
        (100..=300)
            .map(|s| DcnConfig {
                kind: DcnKind::SinglePathway,
                width_scale: self.width_scale * s as f64 / 100.0,
                ..self.clone()
            })
            .min_by(|a, b| {
                let da = (dcn_param_count(a) as f64 - target).abs();
                let db = (dcn_param_count(b) as f64 - target).abs();
                da.total_cmp(&db)
            })
            .expect("non-empty search range")
    }
}

/// Names, shapes and fan-ins of every parameter, in storage order.
fn layout(config: &DcnConfig) -> Vec<ParamSpec> {
    let mut l = Vec::new();
    let widths = stage_widths(config);
    match config.kind {
        DcnKind::DualPathway => {
            declare_encoder(&mut l, "left", DUAL_CHANNELS, config);
            declare_encoder(&mut l, "right", RGBD_CHANNELS, config);
            declare_conv(&mut l, "dec.fuse4", widths[4], 2 * widths[4], 1);
        }
        DcnKind::SinglePathway => {
            declare_encoder(&mut l, "enc", DUAL_CHANNELS + RGBD_CHANNELS, config);
        }
    }
    for k in (0..4).rev() {
        let w = widths[k];
        declare_conv(&mut l, &format!("dec.up{k}"), w, widths[k + 1], 3);
        declare_conv(&mut l, &format!("dec.fuse{k}"), w, 2 * w, 1);
    }
    declare_conv(&mut l, "dec.out", 1, widths[0], 3);
    l
}

/// Exact scalar count for `config`.
pub fn dcn_param_count(config: &DcnConfig) -> usize {
    layout(config)
        .iter()
        .map(|(_, shape, _)| shape.iter().product::<usize>())
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DcnParams {
    pub config: DcnConfig,
    pub params: ParamSet,
}

impl DcnParams {
    pub fn new(config: DcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, fan_in) in layout(&config) {
            let t = if fan_in == 0 {
                Tensor::zeros(shape)
            } else {
                init_uniform(&shape, fan_in, &mut rng)
            };
            params.insert(name, t);
        }
        Ok(DcnParams { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Inference without gradients; returns the `1×H×W` normalized depth.
    pub fn predict(&self, dual: &Tensor, rgbd: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let d = g.constant(dual.clone());
        let r = g.constant(rgbd.clone());
        let out = dcn_forward(&mut g, &bound, &self.config, d, r)?;
        Ok(g.value(out).clone())
    }
}

fn check_input(shape: &[usize], channels: usize, what: &str) -> Result<(usize, usize)> {
    if shape.len() != 3 || shape[0] != channels {
        return Err(Error::Dimension(format!(
            "{what} input must be {channels}×H×W, got {shape:?}"
        )));
    }
    for (name, extent) in [("height", shape[1]), ("width", shape[2])] {
        if extent % DOWNSAMPLE != 0 {
            return Err(Error::Dimension(format!(
                "{name} {extent} is not a multiple of {DOWNSAMPLE}"
            )));
        }
    }
    Ok((shape[1], shape[2]))
}

/// Records the network on `g`; returns the `1×H×W` linear output in
/// normalized depth units.
pub fn dcn_forward(
    g: &mut Graph,
    p: &Bound<'_>,
    config: &DcnConfig,
    dual: Var,
    rgbd: Var,
) -> Result<Var> {
    let hw = check_input(g.shape(dual), DUAL_CHANNELS, "dual-depth")?;
    if check_input(g.shape(rgbd), RGBD_CHANNELS, "RGB-D")? != hw {
        return Err(Error::Dimension(format!(
            "pathway extents differ: {:?} vs {:?}",
            g.shape(dual),
            g.shape(rgbd)
        )));
    }
    let x = match config.kind {
        DcnKind::DualPathway => {
            let left = encoder_forward(g, p, "left", dual, config)?;
            let right = encoder_forward(g, p, "right", rgbd, config)?;
            let cat = g.concat(&[left[4], right[4]], 0)?;
            let mut x = conv(g, p, "dec.fuse4", cat, 1, true)?;
            for k in (0..4).rev() {
                let up = g.upsample_nearest2x(x)?;
                let up = conv(g, p, &format!("dec.up{k}"), up, 1, true)?;
                let summed = g.add(up, left[k])?;
                let cat = g.concat(&[summed, right[k]], 0)?;
                x = conv(g, p, &format!("dec.fuse{k}"), cat, 1, true)?;
            }
            x
        }
        DcnKind::SinglePathway => {
            let input = g.concat(&[dual, rgbd], 0)?;
            let feats = encoder_forward(g, p, "enc", input, config)?;
            let mut x = feats[4];
            for k in (0..4).rev() {
                let up = g.upsample_nearest2x(x)?;
                let up = conv(g, p, &format!("dec.up{k}"), up, 1, true)?;
                let cat = g.concat(&[up, feats[k]], 0)?;
                x = conv(g, p, &format!("dec.fuse{k}"), cat, 1, true)?;
            }
            x
        }
    };
    conv(g, p, "dec.out", x, 1, false)
}

/// `d / max_depth` with missing pixels kept at 0.
pub fn normalize_depth(d: &DepthImage, max_depth: f64) -> Result<Tensor> {
    if !(max_depth > 0.0) {
        return Err(Error::Config(format!("max depth must be positive, got {max_depth}")));
    }
    Ok(d.to_tensor(max_depth))
}

/// Inverse of [`normalize_depth`]; negative values clamp to 0.
pub fn denormalize(t: &Tensor, max_depth: f64) -> Result<DepthImage> {
    let s = t.shape();
    let (h, w) = match s {
        [1, h, w] | [h, w] => (*h, *w),
        _ => {
            return Err(Error::Dimension(format!(
                "expected 1×H×W or H×W depth tensor, got {s:?}"
            )))
        }
    };
    let values = t.data().iter().map(|v| (v * max_depth).max(0.0)).collect();
    DepthImage::new(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let d = DepthImage::new(2, 1, vec![10.0, 0.0]).unwrap();
        let t = normalize_depth(&d, 20.0).unwrap();
        assert_eq!(t.data(), &[0.5, 0.0]);
        assert_eq!(denormalize(&t, 20.0).unwrap(), d);
        let neg = Tensor::new([1, 1, 1], vec![-0.3]).unwrap();
        assert_eq!(denormalize(&neg, 20.0).unwrap().values(), &[0.0]);
        assert!(normalize_depth(&d, 0.0).is_err());
    }

    #[test]
    fn shape_contract() {
        let p = DcnParams::new(DcnConfig::tiny(), 3).unwrap();
        let out = p
            .predict(&Tensor::zeros([2, 64, 96]), &Tensor::zeros([4, 64, 96]))
            .unwrap();
        assert_eq!(out.shape(), &[1, 64, 96]);
    }

    #[test]
    fn indivisible_extent_names_multiple() {
        let p = DcnParams::new(DcnConfig::tiny(), 3).unwrap();
        let err = p
            .predict(&Tensor::zeros([2, 50, 96]), &Tensor::zeros([4, 50, 96]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("multiple of 16"), "{err}");
        assert!(err.contains("50"), "{err}");
    }

    #[test]
    fn single_pathway_budget_within_ten_percent() {
        for base in [4, 8, 16] {
            let full = DcnConfig {
                base_channels: base,
                ..DcnConfig::default()
            };
            let single = full.matched_single_pathway();
            let (a, b) = (dcn_param_count(&full) as f64, dcn_param_count(&single) as f64);
            assert!((b - a).abs() / a <= 0.10, "base {base}: {a} vs {b}");
        }
    }
}
