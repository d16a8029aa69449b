use std::fmt::Write as _;

use super::{
    check_dataset, train_stage1, train_stage2, AdamState, Pipeline, TrainConfig, TrainOutcome,
    Variant,
};
use crate::error::{Error, Result};
use crate::eval_metrics::{MetricsAccumulator, MetricsReport};
use crate::geometry::subsample;
use crate::synthetic_data::SceneSample;

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: Variant,
    /// Held-out metrics.
    pub report: MetricsReport,
    /// Completion-net forward passes over training and evaluation.
    pub lcn_calls: usize,
    pub outcome: TrainOutcome,
}

/// Trains `variant` on `train` with the budget and seeds of `config`, then
/// scores it on `heldout`.
pub fn run_ablation(
    train: &[SceneSample],
    heldout: &[SceneSample],
    config: &TrainConfig,
    variant: Variant,
) -> Result<AblationRun> {
    let mut runs = run_ablation_suite(train, heldout, config, &[variant])?;
    Ok(runs.remove(0))
}

/// Runs several variants. Every variant that uses the completion net
/// shares one stage-1 run; since initialisation and data order depend only
/// on the seed, this matches training each variant from scratch.
pub fn run_ablation_suite(
    train: &[SceneSample],
    heldout: &[SceneSample],
    config: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRun>> {
    config.validate()?;
    check_dataset(train)?;
    let (w, h) = check_dataset(heldout)?;
    if (w, h) != (train[0].k.width, train[0].k.height) {
        return Err(Error::Config(format!(
            "held-out extents {w}×{h} differ from training extents"
        )));
    }
    let mut stage1: Option<(Pipeline, AdamState, Vec<super::LossRecord>)> = None;
    let mut runs = Vec::with_capacity(variants.len());
    for &variant in variants {
        let config = TrainConfig {
            variant,
            ..config.clone()
        };
        let mut pipeline = Pipeline::new(&config)?;
        let (lcn_adam, mut losses) = if variant.uses_lcn() {
            if stage1.is_none() {
                let mut p = Pipeline::new(&config)?;
                let (state, records) = train_stage1(&mut p, train, &config)?;
                stage1 = Some((p, state, records));
            }
            let (trained, state, records) = stage1.as_ref().expect("just filled");
            pipeline.lcn = trained.lcn.clone();
            pipeline.lcn_calls.set(trained.lcn_calls());
            (state.clone(), records.clone())
        } else {
            (AdamState::new(pipeline.lcn.params.tensors()), Vec::new())
        };
        let (dcn_adam, stage2) = train_stage2(&mut pipeline, train, &config)?;
        losses.extend(stage2);
        let report = pipeline.evaluate(heldout)?;
        runs.push(AblationRun {
            variant,
            report,
            lcn_calls: pipeline.lcn_calls(),
            outcome: TrainOutcome {
                config,
                pipeline,
                lcn_adam,
                dcn_adam,
                losses,
            },
        });
    }
    Ok(runs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    /// Sparse points are thinned to `1 / ratio` of their count.
    pub ratio: u32,
    pub report: MetricsReport,
}

/// Scores `pipeline` on `samples` with each sample's sparse depth thinned
/// by every ratio. Thinning is seeded per sample, so rows are reproducible.
pub fn sweep(
    pipeline: &Pipeline,
    samples: &[SceneSample],
    ratios: &[u32],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    check_dataset(samples)?;
    ratios
        .iter()
        .map(|&ratio| {
            if ratio == 0 {
                return Err(Error::Config("sweep ratios must be positive".into()));
            }
            let mut acc = MetricsAccumulator::default();
            for (i, s) in samples.iter().enumerate() {
                let sparse = subsample(&s.sparse, 1.0 / ratio as f64, seed.wrapping_add(i as u64))?;
                let pred = pipeline.predict_parts(&sparse, &s.rgb, &s.k)?;
                acc.add(&pred.dense, &s.gt)?;
            }
            Ok(SweepRow {
                ratio,
                report: acc.report()?,
            })
        })
        .collect()
}

/// `ratio,rmse,mae,irmse,imae` rows with a header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,rmse,mae,irmse,imae\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(out, "{},{},{},{},{}", r.ratio, m.rmse, m.mae, m.irmse, m.imae);
    }
    out
}
