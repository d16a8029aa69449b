//! Finite-difference checks of every differentiable operation and of both
//! networks end to end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcn::{dcn_forward, DcnConfig, DcnParams};
use crate::error::Result;
use crate::geometry::PointCloud;
use crate::lcn::{lcn_forward, LcnConfig, LcnParams};
use crate::pointcloud_metrics::chamfer_loss;
use crate::tensor::{grad_check_many, GradCheckReport, Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: &'static str,
    /// Worst report over all instances.
    pub report: GradCheckReport,
    pub instances: usize,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape and data agree")
}

/// Values bounded away from zero, so ReLU kinks sit outside the stencil.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Contracts a tensor-valued op with fixed random weights, so one scalar
/// exercises the whole Jacobian.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = g.constant(uniform(&mut rng, g.shape(y)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn op_cases(seed: u64) -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let s = seed;
    let mask = {
        let mut m = Tensor::zeros([1, 4, 5]);
        for v in m.data_mut() {
            *v = if r.gen_bool(0.6) { 1.0 } else { 0.0 };
        }
        m.data_mut()[0] = 1.0;
        m
    };
    let cloud = PointCloud::new(
        (0..7)
            .map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(2.0..4.0)])
            .collect(),
    );
    vec![
        ("matmul", vec![uniform(&mut r, &[3, 4]), uniform(&mut r, &[4, 2])],
            Box::new(move |g, v| { let y = g.matmul(v[0], v[1])?; project(g, y, s) })),
        ("add", vec![uniform(&mut r, &[2, 3]), uniform(&mut r, &[2, 3])],
            Box::new(move |g, v| { let y = g.add(v[0], v[1])?; project(g, y, s) })),
        ("add_row", vec![uniform(&mut r, &[3, 4]), uniform(&mut r, &[4])],
            Box::new(move |g, v| { let y = g.add_row(v[0], v[1])?; project(g, y, s) })),
        ("mul", vec![uniform(&mut r, &[2, 3]), uniform(&mut r, &[2, 3])],
            Box::new(move |g, v| { let y = g.mul(v[0], v[1])?; project(g, y, s) })),
        ("scale", vec![uniform(&mut r, &[5])],
            Box::new(move |g, v| { let y = g.scale(v[0], -1.7); project(g, y, s) })),
        ("relu", vec![off_kink(&mut r, &[3, 4])],
            Box::new(move |g, v| { let y = g.relu(v[0]); project(g, y, s) })),
        ("repeat_rows", vec![uniform(&mut r, &[1, 4])],
            Box::new(move |g, v| { let y = g.repeat_rows(v[0], 5)?; project(g, y, s) })),
        ("sum", vec![uniform(&mut r, &[2, 3])],
            Box::new(|g, v| Ok(g.sum(v[0])))),
        ("reshape", vec![uniform(&mut r, &[2, 6])],
            Box::new(move |g, v| { let y = g.reshape(v[0], &[3, 4])?; project(g, y, s) })),
        ("conv2d_3x3", vec![uniform(&mut r, &[2, 5, 6]), uniform(&mut r, &[3, 2, 3, 3]), uniform(&mut r, &[3])],
            Box::new(move |g, v| { let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?; project(g, y, s) })),
        ("conv2d_stride2", vec![uniform(&mut r, &[2, 6, 7]), uniform(&mut r, &[2, 2, 3, 3])],
            Box::new(move |g, v| { let y = g.conv2d(v[0], v[1], None, 2, 1)?; project(g, y, s) })),
        ("conv2d_1x1", vec![uniform(&mut r, &[3, 4, 4]), uniform(&mut r, &[2, 3, 1, 1]), uniform(&mut r, &[2])],
            Box::new(move |g, v| { let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?; project(g, y, s) })),
        ("upsample_nearest2x", vec![uniform(&mut r, &[2, 3, 4])],
            Box::new(move |g, v| { let y = g.upsample_nearest2x(v[0])?; project(g, y, s) })),
        ("maxpool_points", vec![uniform(&mut r, &[6, 4])],
            Box::new(move |g, v| { let y = g.maxpool_points(v[0])?; project(g, y, s) })),
        ("concat_axis0", vec![uniform(&mut r, &[1, 2, 3]), uniform(&mut r, &[2, 2, 3])],
            Box::new(move |g, v| { let y = g.concat(&[v[0], v[1]], 0)?; project(g, y, s) })),
        ("concat_axis1", vec![uniform(&mut r, &[3, 2]), uniform(&mut r, &[3, 4])],
            Box::new(move |g, v| { let y = g.concat(&[v[0], v[1]], 1)?; project(g, y, s) })),
        ("mse_masked", vec![uniform(&mut r, &[1, 4, 5]), uniform(&mut r, &[1, 4, 5])],
            Box::new(move |g, v| g.mse_masked(v[0], v[1], &mask))),
        ("chamfer_loss", vec![uniform(&mut r, &[6, 3])],
            Box::new(move |g, v| chamfer_loss(g, v[0], &cloud))),
    ]
}

/// Biases start at zero, which puts units fed by all-zero inputs exactly on
/// the ReLU kink where central differences are one-sided. Checks move them off.
fn randomize_biases(params: &mut crate::tensor::ParamSet, r: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().iter().filter(|n| n.ends_with(".b")).cloned().collect();
    for name in names {
        let t = params.get_mut(&name).expect("listed name");
        *t = off_kink(r, &t.shape().to_vec());
        t.data_mut().iter_mut().for_each(|v| *v *= 0.2);
    }
}

/// LCN forward plus Chamfer loss with respect to every network parameter.
/// The zero-initialised output layer is randomised so gradients reach all layers.
pub fn lcn_chamfer_case(seed: u64) -> Result<(LcnParams, PointCloud, PointCloud)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let config = LcnConfig {
        grid_extent: 1.0,
        ..LcnConfig::tiny()
    };
    let mut p = LcnParams::new(config, seed)?;
    randomize_biases(&mut p.params, &mut r);
    let last = p.config.decoder_dims.len() - 2;
    for name in [format!("dec.{last}.w"), format!("dec.{last}.b")] {
        let t = p.params.get_mut(&name).expect("output layer exists");
        for v in t.data_mut() {
            *v = r.gen_range(-0.3..0.3);
        }
    }
    let mut pts = |n: usize| {
        PointCloud::new(
            (0..n)
                .map(|_| [r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0), r.gen_range(3.0..8.0)])
                .collect(),
        )
    };
    let sparse = pts(5);
    let gt = pts(20);
    Ok((p, sparse, gt))
}

pub fn check_lcn_chamfer(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let (p, sparse, gt) = lcn_chamfer_case(seed)?;
    grad_check_many(
        |g, vs| {
            let b = p.params.bind_vars(vs.to_vec())?;
            let out = lcn_forward(g, &b, &p.config, &sparse)?;
            chamfer_loss(g, out, &gt)
        },
        p.params.tensors(),
        eps,
    )
}

/// Tiny DCN with masked MSE on a 16×16 input, with respect to every parameter.
pub fn check_dcn_mse(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p = DcnParams::new(DcnConfig::tiny(), seed)?;
    randomize_biases(&mut p.params, &mut r);
    let dual = uniform(&mut r, &[2, 16, 16]);
    let rgbd = uniform(&mut r, &[4, 16, 16]);
    let target = uniform(&mut r, &[1, 16, 16]);
    let mut mask = Tensor::zeros([1, 16, 16]);
    for v in mask.data_mut() {
        *v = if r.gen_bool(0.5) { 1.0 } else { 0.0 };
    }
    mask.data_mut()[0] = 1.0;
    grad_check_many(
        |g, vs| {
            let b = p.params.bind_vars(vs.to_vec())?;
            let d = g.constant(dual.clone());
            let c = g.constant(rgbd.clone());
            let out = dcn_forward(g, &b, &p.config, d, c)?;
            let t = g.constant(target.clone());
            g.mse_masked(out, t, &mask)
        },
        p.params.tensors(),
        eps,
    )
}

fn worst(acc: &mut Option<GradCheckReport>, r: GradCheckReport) {
    if acc.as_ref().map_or(true, |a| r.max_rel_error > a.max_rel_error) {
        *acc = Some(r);
    }
}

/// Runs every operation on `instances` random inputs and each network on
/// `min(instances, 3)` random instances; reports the worst error per entry.
pub fn grad_check_suite(instances: usize, seed: u64, eps: f64) -> Result<Vec<GradCheckEntry>> {
    let mut worst_by_op: Vec<(&'static str, Option<GradCheckReport>)> = Vec::new();
    for i in 0..instances {
        for (k, (name, params, f)) in op_cases(seed.wrapping_add(i as u64)).into_iter().enumerate() {
            let report = grad_check_many(|g, v| f(g, v), &params, eps)?;
            if worst_by_op.len() <= k {
                worst_by_op.push((name, None));
            }
            worst(&mut worst_by_op[k].1, report);
        }
    }
    let mut out: Vec<GradCheckEntry> = worst_by_op
        .into_iter()
        .map(|(name, r)| GradCheckEntry {
            name,
            report: r.expect("at least one instance"),
            instances,
        })
        .collect();
    let nets = instances.clamp(1, 3);
    for (name, check) in [
        ("lcn_chamfer", check_lcn_chamfer as fn(u64, f64) -> Result<GradCheckReport>),
        ("dcn_masked_mse", check_dcn_mse),
    ] {
        let mut acc = None;
        for i in 0..nets {
            worst(&mut acc, check(seed.wrapping_add(i as u64), eps)?);
        }
        out.push(GradCheckEntry {
            name,
            report: acc.expect("at least one instance"),
            instances: nets,
        });
    }
    Ok(out)
}
