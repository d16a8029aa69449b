mod common;

use common::{random_cloud, rng, sorted_points, uniform_tensor};
use depthnet::cli::{check_dcn_mse, check_lcn_chamfer};
use depthnet::dcn::{dcn_forward, dcn_param_count, DcnConfig, DcnKind, DcnParams};
use depthnet::geometry::PointCloud;
use depthnet::lcn::{lcn_forward, lcn_param_count, LcnConfig, LcnParams};
use depthnet::pointcloud_metrics::{chamfer, chamfer_loss};
use depthnet::tensor::{Graph, Tensor};
use depthnet::training::{adam_step, AdamConfig, AdamState};
use depthnet::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Tiny net with every parameter, including the output layer, randomised.
fn random_lcn(seed: u64) -> LcnParams {
    let mut p = LcnParams::new(LcnConfig::tiny(), seed).unwrap();
    let mut r = rng(seed ^ 0x55);
    for t in p.params.tensors_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
    p
}

fn shifted_cloud(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> PointCloud {
    random_cloud(r, n, 3.0).translated([0.0, 0.0, 8.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lcn_output_has_n_times_s_squared_points(seed in any::<u64>(), n in 1usize..40, side in 1usize..4) {
        let config = LcnConfig { patch_side: side, ..LcnConfig::tiny() };
        let p = LcnParams::new(config, seed).unwrap();
        let out = p.complete(&shifted_cloud(&mut rng(seed), n)).unwrap();
        prop_assert_eq!(out.len(), n * side * side);
    }

    #[test]
    fn zeroed_output_layer_collapses_onto_landmarks(seed in any::<u64>(), n in 1usize..30) {
        let mut p = random_lcn(seed);
        p.zero_output_layer();
        let input = shifted_cloud(&mut rng(seed), n);
        let out = p.complete(&input).unwrap();
        let s2 = p.config.points_per_landmark();
        for (i, q) in out.points.iter().enumerate() {
            prop_assert_eq!(*q, input.points[i / s2]);
        }
    }

    #[test]
    fn lcn_output_multiset_ignores_input_order(seed in any::<u64>(), n in 1usize..30) {
        let p = random_lcn(seed);
        let mut r = rng(seed);
        let input = shifted_cloud(&mut r, n);
        let mut pts = input.points.clone();
        pts.shuffle(&mut r);
        let a = p.complete(&input).unwrap();
        let b = p.complete(&PointCloud::new(pts)).unwrap();
        prop_assert_eq!(sorted_points(a.points), sorted_points(b.points));
    }

    #[test]
    fn dcn_output_matches_input_extent(seed in any::<u64>(), hb in 1usize..4, wb in 1usize..4, two in any::<bool>()) {
        let kind = if two { DcnKind::DualPathway } else { DcnKind::SinglePathway };
        let p = DcnParams::new(DcnConfig { kind, ..DcnConfig::tiny() }, seed).unwrap();
        let (h, w) = (16 * hb, 16 * wb);
        let mut r = rng(seed);
        let out = p.predict(&uniform_tensor(&mut r, &[2, h, w], 0.0, 1.0), &uniform_tensor(&mut r, &[4, h, w], 0.0, 1.0)).unwrap();
        prop_assert_eq!(out.shape(), &[1, h, w]);
    }

    #[test]
    fn dcn_rejects_indivisible_extents(seed in any::<u64>(), h in 1usize..70, w in 1usize..70) {
        prop_assume!(h % 16 != 0 || w % 16 != 0);
        let p = DcnParams::new(DcnConfig::tiny(), seed).unwrap();
        let err = p.predict(&Tensor::zeros([2, h, w]), &Tensor::zeros([4, h, w])).unwrap_err();
        prop_assert!(matches!(err, Error::Dimension(ref m) if m.contains("multiple of 16")), "{}", err);
    }

    #[test]
    fn param_count_is_a_function_of_config(base in 1usize..20, blocks in 1usize..3, seed in any::<u64>()) {
        let config = DcnConfig { base_channels: base, blocks_per_stage: blocks, ..DcnConfig::default() };
        let a = DcnParams::new(config.clone(), seed).unwrap();
        let b = DcnParams::new(config.clone(), seed.wrapping_add(1)).unwrap();
        prop_assert_eq!(a.param_count(), dcn_param_count(&config));
        prop_assert_eq!(b.param_count(), a.param_count());
        let matched = config.matched_single_pathway();
        let ratio = dcn_param_count(&matched) as f64 / dcn_param_count(&config) as f64;
        prop_assert!((ratio - 1.0).abs() <= 0.10, "ratio {}", ratio);
    }
}

#[test]
fn lcn_param_count_matches_instantiated_tensors() {
    for config in [LcnConfig::tiny(), LcnConfig::default(), LcnConfig::paper_scale()] {
        assert_eq!(LcnParams::new(config.clone(), 0).unwrap().param_count(), lcn_param_count(&config));
    }
    let paper = lcn_param_count(&LcnConfig::paper_scale());
    // same order of magnitude as the reported ~0.2M
    assert!((50_000..2_000_000).contains(&paper), "{paper}");
}

#[test]
fn exchanging_depth_between_pathways_changes_the_output() {
    let mut r = rng(12);
    let p = DcnParams::new(DcnConfig::tiny(), 3).unwrap();
    let a = uniform_tensor(&mut r, &[1, 32, 32], 0.0, 1.0);
    let b = uniform_tensor(&mut r, &[1, 32, 32], 0.0, 1.0);
    let c = uniform_tensor(&mut r, &[1, 32, 32], 0.0, 1.0);
    let rgb = uniform_tensor(&mut r, &[3, 32, 32], 0.0, 1.0);
    let stack = |parts: &[&Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<_> = parts.iter().map(|t| g.constant((*t).clone())).collect();
        let y = g.concat(&vs, 0).unwrap();
        g.value(y).clone()
    };
    let out = p.predict(&stack(&[&a, &b]), &stack(&[&rgb, &c])).unwrap();
    let swapped = p.predict(&stack(&[&c, &b]), &stack(&[&rgb, &a])).unwrap();
    assert_ne!(out, swapped);
}

#[test]
fn every_dcn_tensor_receives_gradient() {
    for kind in [DcnKind::DualPathway, DcnKind::SinglePathway] {
        let config = DcnConfig { kind, base_channels: 4, blocks_per_stage: 2, width_scale: 1.0 };
        let p = DcnParams::new(config.clone(), 4).unwrap();
        let mut r = rng(6);
        let mut mask = Tensor::zeros([1, 32, 32]);
        for m in mask.data_mut() {
            *m = if r.gen_bool(0.3) { 1.0 } else { 0.0 };
        }
        let mut g = Graph::new();
        let bound = p.params.bind(&mut g);
        let dual = g.constant(uniform_tensor(&mut r, &[2, 32, 32], 0.0, 1.0));
        let rgbd = g.constant(uniform_tensor(&mut r, &[4, 32, 32], 0.0, 1.0));
        let out = dcn_forward(&mut g, &bound, &config, dual, rgbd).unwrap();
        let target = g.constant(uniform_tensor(&mut r, &[1, 32, 32], 0.0, 1.0));
        let loss = g.mse_masked(out, target, &mask).unwrap();
        g.backward(loss).unwrap();
        for (name, grad) in p.params.names().iter().zip(bound.grads(&g)) {
            assert!(grad.data().iter().any(|&v| v != 0.0), "{kind:?}: `{name}` got no gradient");
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    for seed in 0..3 {
        let lcn = check_lcn_chamfer(seed, 1e-5).unwrap();
        assert!(lcn.passed(1e-4), "lcn seed {seed}: {lcn:?}");
        let dcn = check_dcn_mse(seed, 1e-5).unwrap();
        assert!(dcn.passed(1e-4), "dcn seed {seed}: {dcn:?}");
    }
}

#[test]
fn hundred_descent_steps_reduce_chamfer_on_one_cloud() {
    let mut r = rng(21);
    let config = LcnConfig { grid_extent: 1.0, ..LcnConfig::tiny() };
    let mut p = LcnParams::new(config.clone(), 2).unwrap();
    let sparse = shifted_cloud(&mut r, 12);
    let gt = shifted_cloud(&mut r, 60);
    let before = chamfer(&p.complete(&sparse).unwrap(), &gt).unwrap().value;
    let mut state = AdamState::new(p.params.tensors());
    for _ in 0..100 {
        let mut g = Graph::new();
        let bound = p.params.bind(&mut g);
        let out = lcn_forward(&mut g, &bound, &config, &sparse).unwrap();
        let loss = chamfer_loss(&mut g, out, &gt).unwrap();
        g.backward(loss).unwrap();
        let grads = bound.grads(&g);
        adam_step(p.params.tensors_mut(), &grads, &mut state, 1e-3, &AdamConfig::default()).unwrap();
    }
    let after = chamfer(&p.complete(&sparse).unwrap(), &gt).unwrap().value;
    assert!(after < before, "{after} >= {before}");
}
