use depthnet::geometry::io::decode_depth_pgm;
use depthnet::synthetic_data::{
    generate_dataset, generate_scene, read_dataset, read_sample, write_dataset, write_sample,
    SceneConfig, SceneSample, GT_FILE, MANIFEST_FILE,
};
use depthnet::Error;
use proptest::prelude::*;

/// Nearest surface hit by the ray through pixel `(u, v)`, from the layout alone.
fn ray_depth(s: &SceneSample, u: usize, v: usize) -> f64 {
    let layout = s.layout.as_ref().unwrap();
    let tx = (u as f64 - s.k.cx) / s.k.fx;
    let ty = (v as f64 - s.k.cy) / s.k.fy;
    let mut best = layout.wall_z;
    if ty > 0.0 {
        best = best.min(layout.camera_height / ty);
    }
    for b in &layout.boxes {
        let (x, y) = (b.z * tx, b.z * ty);
        if x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1 {
            best = best.min(b.z);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ground_truth_is_the_nearest_surface(seed in any::<u64>(), boxes in 0usize..8) {
        let config = SceneConfig { width: 48, height: 32, n_boxes: boxes, ..SceneConfig::default() };
        let s = generate_scene(&config, seed).unwrap();
        for v in 0..32 {
            for u in 0..48 {
                let want = ray_depth(&s, u, v);
                prop_assert!((s.gt.get(u, v) - want).abs() < 1e-9, "pixel ({}, {}): {} vs {}", u, v, s.gt.get(u, v), want);
            }
        }
    }

    #[test]
    fn sample_invariants_hold(seed in any::<u64>()) {
        let config = SceneConfig::default();
        let s = generate_scene(&config, seed).unwrap();
        prop_assert_eq!(s.gt.valid_count(), 96 * 64);
        for &d in s.gt.values() {
            prop_assert!(d >= config.z_min && d <= config.z_max, "{}", d);
        }
        for (u, v, d) in s.sparse.valid_pixels() {
            prop_assert_eq!(d, s.gt.get(u, v));
            prop_assert_eq!(v % config.scanline_period, config.scanline_period / 2);
        }
        prop_assert!(s.rgb.data.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert_eq!(&generate_scene(&config, seed).unwrap(), &s);
    }

    #[test]
    fn dropout_density_stays_near_target(seed in any::<u64>()) {
        let config = SceneConfig { dropout: Some(0.84), ..SceneConfig::default() };
        let s = generate_scene(&config, seed).unwrap();
        let density = s.sparse.valid_count() as f64 / (96.0 * 64.0);
        prop_assert!((density - 0.04).abs() <= 0.01, "{}", density);
    }
}

#[test]
fn density_within_band_over_a_hundred_seeds() {
    let config = SceneConfig::default();
    for seed in 0..100 {
        let s = generate_scene(&config, seed).unwrap();
        let n = s.sparse.valid_count();
        assert!((185..=307).contains(&n), "seed {seed}: {n}");
        assert!((n as f64 / 6144.0 - config.target_density).abs() <= 0.01);
    }
}

#[test]
fn planes_only_scene_is_consistent() {
    let config = SceneConfig { n_boxes: 0, ..SceneConfig::default() };
    let s = generate_scene(&config, 9).unwrap();
    for (u, v, d) in s.sparse.valid_pixels() {
        assert_eq!(d, s.gt.get(u, v));
    }
}

#[test]
fn bad_extents_are_dimension_errors() {
    for (width, height) in [(50, 64), (96, 40), (0, 64)] {
        let config = SceneConfig { width, height, ..SceneConfig::default() };
        assert!(matches!(generate_scene(&config, 0), Err(Error::Dimension(_))));
    }
}

#[test]
fn sample_round_trip_is_within_half_a_millimetre() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_scene(&SceneConfig::default(), 77).unwrap();
    write_sample(dir.path(), &s).unwrap();
    let back = read_sample(dir.path()).unwrap();
    assert_eq!(back.k, s.k);
    for (a, b) in [(&back.gt, &s.gt), (&back.sparse, &s.sparse)] {
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 0.0005 + 1e-12, "{x} vs {y}");
            assert_eq!(*x == 0.0, *y == 0.0);
        }
    }
    for (x, y) in back.rgb.data.iter().zip(&s.rgb.data) {
        assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn truncated_depth_file_is_a_payload_error() {
    let dir = tempfile::tempdir().unwrap();
    write_sample(dir.path(), &generate_scene(&SceneConfig::default(), 1).unwrap()).unwrap();
    let path = dir.path().join(GT_FILE);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    match read_sample(dir.path()) {
        Err(Error::PayloadLength { path: p, .. }) => assert_eq!(p, path),
        other => panic!("{other:?}"),
    }
    assert!(decode_depth_pgm(&bytes[..bytes.len() - 1], &path).is_err());
}

#[test]
fn missing_file_error_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_sample(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("rgb.ppm"), "{err}");
}

#[test]
fn dataset_round_trip_keeps_order_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = SceneConfig { width: 32, height: 16, ..SceneConfig::default() };
    let samples = generate_dataset(&config, 5, 42).unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 5);
    for (a, b) in back.iter().zip(&samples) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.sparse.valid_count(), b.sparse.valid_count());
    }
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.starts_with("sample_0000 seed="));
}
