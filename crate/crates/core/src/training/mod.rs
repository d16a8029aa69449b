//! Two-stage training: the completion net first (Chamfer loss, depth net
//! frozen), then the depth net (masked MSE, completion net frozen).

mod ablation;
mod adam;
mod checkpoint;

use std::cell::Cell;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ablation::{run_ablation, run_ablation_suite, sweep, sweep_csv, AblationRun, SweepRow};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};

use crate::dcn::{dcn_forward, denormalize, normalize_depth, DcnConfig, DcnKind, DcnParams};
use crate::error::{Error, Result};
use crate::eval_metrics::{MetricsAccumulator, MetricsReport};
use crate::geometry::io::RgbImage;
use crate::geometry::{project_zbuffer, unproject, CameraIntrinsics, DepthImage, PointCloud};
use crate::lcn::{lcn_forward, LcnConfig, LcnParams};
use crate::pointcloud_metrics::chamfer_loss;
use crate::synthetic_data::SceneSample;
use crate::tensor::{Bound, Graph, Tensor, Var};

/// Exported predictions are clamped to at least this depth (meters) so
/// inverse-depth metrics stay defined.
pub const MIN_PRED_DEPTH: f64 = 0.001;

pub const LOSS_CSV_HEADER: &str = "step,stage,loss,lr";

/// Pipeline variant for the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Completion net feeding the dual-pathway depth net.
    Full,
    /// No completion net: the dual-depth channel carries the sparse depth twice.
    Model1,
    /// Single-pathway, concat-only depth net with a matched parameter budget.
    Model2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Model1, Variant::Model2];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Model1 => "model1",
            Variant::Model2 => "model2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "model1" => Ok(Variant::Model1),
            "model2" => Ok(Variant::Model2),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected full, model1 or model2)"
            ))),
        }
    }

    pub fn uses_lcn(self) -> bool {
        self != Variant::Model1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage1_halving_steps: usize,
    pub stage2_halving_epochs: usize,
    pub batch_size: usize,
    /// Depth normalisation constant and prediction ceiling, meters.
    pub max_depth: f64,
    pub seed: u64,
    pub variant: Variant,
    pub lcn: LcnConfig,
    /// Depth net of the full model; `Model2` derives its own from this.
    pub dcn: DcnConfig,
}

impl Default for TrainConfig {
    /// Paper optimiser settings and schedule with desk-sized networks. The
    /// folding lattice spans `[-1, 1]²`: with tighter lattices the seeds are
    /// too close for the decoder to tell apart within a desk training budget.
    fn default() -> Self {
        TrainConfig {
            lr0: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            stage1_epochs: 1,
            stage2_epochs: 11,
            stage1_halving_steps: 2000,
            stage2_halving_epochs: 5,
            batch_size: 1,
            max_depth: 20.0,
            seed: 0,
            variant: Variant::Full,
            lcn: LcnConfig {
                grid_extent: 1.0,
                ..LcnConfig::default()
            },
            dcn: DcnConfig {
                base_channels: 16,
                blocks_per_stage: 1,
                ..DcnConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr0", self.lr0),
            ("adam_eps", self.adam_eps),
            ("max_depth", self.max_depth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("stage1_epochs", self.stage1_epochs),
            ("stage2_epochs", self.stage2_epochs),
            ("stage1_halving_steps", self.stage1_halving_steps),
            ("stage2_halving_epochs", self.stage2_halving_epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.lcn.validate()?;
        self.dcn.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// The depth-net config actually trained for `self.variant`.
    pub fn effective_dcn(&self) -> DcnConfig {
        match self.variant {
            Variant::Model2 if self.dcn.kind == DcnKind::DualPathway => {
                self.dcn.matched_single_pathway()
            }
            _ => self.dcn.clone(),
        }
    }

    /// Stage-1 rate after `step` optimiser steps.
    pub fn stage1_lr(&self, step: usize) -> f64 {
        halve(self.lr0, step / self.stage1_halving_steps)
    }

    /// Stage-2 rate during (0-based) `epoch`.
    pub fn stage2_lr(&self, epoch: usize) -> f64 {
        halve(self.lr0, epoch / self.stage2_halving_epochs)
    }
}

/// Resolved config as `key=value` lines (the checkpoint echo).
pub fn describe_config(config: &TrainConfig) -> String {
    checkpoint::config_echo(config)
}

fn halve(lr0: f64, times: usize) -> f64 {
    lr0 * 0.5f64.powi(times.min(i32::MAX as usize) as i32)
}

/// Trained (or initialised) networks plus the glue between them.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub variant: Variant,
    pub lcn: LcnParams,
    pub dcn: DcnParams,
    pub max_depth: f64,
    lcn_calls: Cell<usize>,
}

/// Output of [`Pipeline::predict`].
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Projected completion-net cloud (the sparse input for `Model1`).
    pub coarse: DepthImage,
    pub dense: DepthImage,
}

/// Depth-net inputs for one sample.
#[derive(Clone, Debug)]
pub struct DcnInputs {
    pub dual: Tensor,
    pub rgbd: Tensor,
    pub coarse: DepthImage,
}

impl Pipeline {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            variant: config.variant,
            lcn: LcnParams::new(config.lcn.clone(), config.seed)?,
            dcn: DcnParams::new(config.effective_dcn(), config.seed.wrapping_add(1))?,
            max_depth: config.max_depth,
            lcn_calls: Cell::new(0),
        })
    }

    /// Networks from a checkpoint, ready for inference.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        Pipeline {
            variant: ckpt.config.variant,
            lcn: ckpt.lcn.clone(),
            dcn: ckpt.dcn.clone(),
            max_depth: ckpt.config.max_depth,
            lcn_calls: Cell::new(0),
        }
    }

    /// Number of completion-net forward passes recorded so far.
    pub fn lcn_calls(&self) -> usize {
        self.lcn_calls.get()
    }

    fn record_lcn(&self, g: &mut Graph, p: &Bound<'_>, sparse: &PointCloud) -> Result<Var> {
        self.lcn_calls.set(self.lcn_calls.get() + 1);
        lcn_forward(g, p, &self.lcn.config, sparse)
    }

    /// Completion-net inference on a sparse cloud.
    pub fn complete_cloud(&self, sparse: &PointCloud) -> Result<PointCloud> {
        let mut g = Graph::new();
        let bound = self.lcn.params.bind_frozen(&mut g);
        let out = self.record_lcn(&mut g, &bound, sparse)?;
        PointCloud::from_tensor(g.value(out))
    }

    /// Dual-depth channel: projected completion for the full and
    /// single-pathway models, the sparse depth itself for `Model1`.
    pub fn coarse_depth(&self, sparse: &DepthImage, k: &CameraIntrinsics) -> Result<DepthImage> {
        if !self.variant.uses_lcn() {
            sparse.check_extents(k)?;
            return Ok(sparse.clone());
        }
        let cloud = unproject(sparse, k)?;
        if cloud.is_empty() {
            return Ok(DepthImage::empty(k.width, k.height));
        }
        Ok(project_zbuffer(&self.complete_cloud(&cloud)?, k).depth)
    }

    pub fn dcn_inputs(
        &self,
        sparse: &DepthImage,
        rgb: &RgbImage,
        k: &CameraIntrinsics,
    ) -> Result<DcnInputs> {
        if rgb.width != k.width || rgb.height != k.height {
            return Err(Error::Dimension(format!(
                "color image is {}×{} but intrinsics describe {}×{}",
                rgb.width, rgb.height, k.width, k.height
            )));
        }
        let coarse = self.coarse_depth(sparse, k)?;
        let s = normalize_depth(sparse, self.max_depth)?;
        let c = normalize_depth(&coarse, self.max_depth)?;
        let (h, w) = (k.height, k.width);
        let mut dual = c.into_data();
        dual.extend_from_slice(s.data());
        let mut rgbd = rgb.data.clone();
        rgbd.extend_from_slice(s.data());
        Ok(DcnInputs {
            dual: Tensor::new([2, h, w], dual)?,
            rgbd: Tensor::new([4, h, w], rgbd)?,
            coarse,
        })
    }

    pub fn predict_parts(
        &self,
        sparse: &DepthImage,
        rgb: &RgbImage,
        k: &CameraIntrinsics,
    ) -> Result<Prediction> {
        let inputs = self.dcn_inputs(sparse, rgb, k)?;
        let out = self.dcn.predict(&inputs.dual, &inputs.rgbd)?;
        let clamped = out.data().iter().map(|v| {
            (v * self.max_depth).clamp(MIN_PRED_DEPTH, self.max_depth) / self.max_depth
        });
        let clamped = Tensor::new(out.shape().to_vec(), clamped.collect())?;
        Ok(Prediction {
            coarse: inputs.coarse,
            dense: denormalize(&clamped, self.max_depth)?,
        })
    }

    pub fn predict(&self, sample: &SceneSample) -> Result<Prediction> {
        self.predict_parts(&sample.sparse, &sample.rgb, &sample.k)
    }

    /// Metrics pooled over every ground-truth pixel of `samples`.
    pub fn evaluate(&self, samples: &[SceneSample]) -> Result<MetricsReport> {
        let mut acc = MetricsAccumulator::default();
        for s in samples {
            acc.add(&self.predict(s)?.dense, &s.gt)?;
        }
        acc.report()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    /// Optimiser step within the stage.
    pub step: usize,
    pub stage: u8,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// `step,stage,loss,lr` rows with a header.
pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.stage, r.loss, r.lr);
    }
    out
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    fs::write(path, loss_csv(records)).map_err(|e| Error::io(path, e))
}

/// Mean loss of each epoch of `stage`, in order.
pub fn epoch_means(records: &[LossRecord], stage: u8) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.stage == stage) {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.loss;
        out[r.epoch].1 += 1;
    }
    out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub pipeline: Pipeline,
    pub lcn_adam: AdamState,
    pub dcn_adam: AdamState,
    pub losses: Vec<LossRecord>,
}

impl TrainOutcome {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            lcn: self.pipeline.lcn.clone(),
            dcn: self.pipeline.dcn.clone(),
            lcn_adam: self.lcn_adam.clone(),
            dcn_adam: self.dcn_adam.clone(),
        }
    }
}

/// Checks that the dataset is non-empty and uniformly sized in multiples of 16.
pub fn check_dataset(samples: &[SceneSample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
    let (w, h) = (first.k.width, first.k.height);
    if w % crate::dcn::DOWNSAMPLE != 0 || h % crate::dcn::DOWNSAMPLE != 0 {
        return Err(Error::Config(format!(
            "sample extents {w}×{h} are not multiples of {}",
            crate::dcn::DOWNSAMPLE
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        let extents = [
            (s.k.width, s.k.height),
            (s.rgb.width, s.rgb.height),
            (s.sparse.width(), s.sparse.height()),
            (s.gt.width(), s.gt.height()),
        ];
        if extents.iter().any(|&e| e != (w, h)) {
            return Err(Error::Config(format!(
                "sample {i} extents {extents:?} differ from {w}×{h}"
            )));
        }
    }
    Ok((w, h))
}

/// Seeded epoch order; the generator advances once per epoch.
fn epoch_order(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn accumulate(acc: &mut Option<Vec<Tensor>>, grads: Vec<Tensor>) {
    match acc {
        None => *acc = Some(grads),
        Some(sum) => {
            for (s, g) in sum.iter_mut().zip(&grads) {
                for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }
}

fn mean_grads(acc: Option<Vec<Tensor>>, n: usize) -> Vec<Tensor> {
    let mut grads = acc.expect("batches are non-empty");
    let inv = 1.0 / n as f64;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= inv);
    }
    grads
}

/// Stage 1: Chamfer loss between the completed cloud and the unprojected
/// ground truth. Only completion-net parameters change.
pub fn train_stage1(
    pipeline: &mut Pipeline,
    samples: &[SceneSample],
    config: &TrainConfig,
) -> Result<(AdamState, Vec<LossRecord>)> {
    let mut state = AdamState::new(pipeline.lcn.params.tensors());
    let mut records = Vec::new();
    let clouds = samples
        .iter()
        .map(|s| Ok((unproject(&s.sparse, &s.k)?, unproject(&s.gt, &s.k)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let adam = config.adam();
    let mut step = 0;
    for epoch in 0..config.stage1_epochs {
        for batch in epoch_order(samples.len(), &mut rng).chunks(config.batch_size) {
            let lr = config.stage1_lr(step);
            let mut acc = None;
            let mut loss_sum = 0.0;
            for &i in batch {
                let (sparse, gt) = &clouds[i];
                let mut g = Graph::new();
                let bound = pipeline.lcn.params.bind(&mut g);
                let out = pipeline.record_lcn(&mut g, &bound, sparse)?;
                let loss = chamfer_loss(&mut g, out, gt)?;
                g.backward(loss)?;
                loss_sum += g.value(loss).item().expect("scalar loss");
                accumulate(&mut acc, bound.grads(&g));
            }
            let grads = mean_grads(acc, batch.len());
            adam_step(pipeline.lcn.params.tensors_mut(), &grads, &mut state, lr, &adam)?;
            records.push(LossRecord {
                step,
                stage: 1,
                epoch,
                loss: loss_sum / batch.len() as f64,
                lr,
            });
            step += 1;
        }
    }
    Ok((state, records))
}

/// Stage 2: masked MSE on normalised depth, with depth-net inputs built
/// once from the frozen completion net. Only depth-net parameters change.
pub fn train_stage2(
    pipeline: &mut Pipeline,
    samples: &[SceneSample],
    config: &TrainConfig,
) -> Result<(AdamState, Vec<LossRecord>)> {
    let mut state = AdamState::new(pipeline.dcn.params.tensors());
    let mut records = Vec::new();
    let cached = samples
        .iter()
        .map(|s| {
            let inputs = pipeline.dcn_inputs(&s.sparse, &s.rgb, &s.k)?;
            let target = normalize_depth(&s.gt, config.max_depth)?;
            Ok((inputs, target, s.gt.mask_tensor()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));
    let adam = config.adam();
    let dcn_config = pipeline.dcn.config.clone();
    let mut step = 0;
    for epoch in 0..config.stage2_epochs {
        let lr = config.stage2_lr(epoch);
        for batch in epoch_order(samples.len(), &mut rng).chunks(config.batch_size) {
            let mut acc = None;
            let mut loss_sum = 0.0;
            for &i in batch {
                let (inputs, target, mask) = &cached[i];
                let mut g = Graph::new();
                let bound = pipeline.dcn.params.bind(&mut g);
                let dual = g.constant(inputs.dual.clone());
                let rgbd = g.constant(inputs.rgbd.clone());
                let out = dcn_forward(&mut g, &bound, &dcn_config, dual, rgbd)?;
                let t = g.constant(target.clone());
                let loss = g.mse_masked(out, t, mask)?;
                g.backward(loss)?;
                loss_sum += g.value(loss).item().expect("scalar loss");
                accumulate(&mut acc, bound.grads(&g));
            }
            let grads = mean_grads(acc, batch.len());
            adam_step(pipeline.dcn.params.tensors_mut(), &grads, &mut state, lr, &adam)?;
            records.push(LossRecord {
                step,
                stage: 2,
                epoch,
                loss: loss_sum / batch.len() as f64,
                lr,
            });
            step += 1;
        }
    }
    Ok((state, records))
}

/// Runs both stages. `Model1` has no completion net to train, so its
/// stage 1 is skipped and its completion-net parameters stay at initialisation.
pub fn train_two_stage(samples: &[SceneSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(samples)?;
    let mut pipeline = Pipeline::new(config)?;
    let (lcn_adam, mut losses) = if config.variant.uses_lcn() {
        train_stage1(&mut pipeline, samples, config)?
    } else {
        (AdamState::new(pipeline.lcn.params.tensors()), Vec::new())
    };
    let (dcn_adam, stage2) = train_stage2(&mut pipeline, samples, config)?;
    losses.extend(stage2);
    Ok(TrainOutcome {
        config: config.clone(),
        pipeline,
        lcn_adam,
        dcn_adam,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_halve_exactly() {
        let c = TrainConfig::default();
        assert_eq!(c.stage1_lr(0), 0.001);
        assert_eq!(c.stage1_lr(1999), 0.001);
        assert_eq!(c.stage1_lr(2000), 0.0005);
        assert_eq!(c.stage1_lr(4000), 0.00025);
        assert_eq!(c.stage2_lr(4), 0.001);
        assert_eq!(c.stage2_lr(5), 0.0005);
        assert_eq!(c.stage2_lr(10), 0.00025);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        assert!(Variant::parse("model3").is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let c = TrainConfig {
            stage1_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train_two_stage(&[], &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn loss_csv_layout() {
        let r = LossRecord {
            step: 3,
            stage: 2,
            epoch: 0,
            loss: 0.25,
            lr: 0.001,
        };
        assert_eq!(loss_csv(&[r]), "step,stage,loss,lr\n3,2,0.25,0.001\n");
        assert_eq!(epoch_means(&[r, LossRecord { loss: 0.75, ..r }], 2), vec![0.5]);
    }
}
