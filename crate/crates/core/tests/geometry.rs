mod common;

use common::{camera, random_sparse, rng};
use depthnet::geometry::io::{
    decode_depth_pgm, encode_depth_pgm, read_cloud, read_depth_pgm, write_cloud, write_depth_pgm,
};
use depthnet::geometry::{project_zbuffer, subsample, unproject, DepthImage, PointCloud};
use proptest::prelude::*;
use rand::Rng;
use std::path::Path;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn project_after_unproject_is_identity(seed in any::<u64>(), w in 4usize..64, h in 4usize..48, fill in 0.01f64..1.0) {
        let k = camera(w, h);
        let d = random_sparse(&mut rng(seed), w, h, fill);
        let p = project_zbuffer(&unproject(&d, &k).unwrap(), &k);
        prop_assert_eq!(p.dropped_behind + p.dropped_outside, 0);
        prop_assert_eq!(p.depth, d);
    }

    #[test]
    fn unprojected_points_land_inside_the_image(seed in any::<u64>(), w in 4usize..64, h in 4usize..48) {
        let k = camera(w, h);
        let d = random_sparse(&mut rng(seed), w, h, 0.3);
        for p in unproject(&d, &k).unwrap().points {
            let (u, v) = k.project_point(p);
            prop_assert!(u > -0.5 && u < w as f64 - 0.5, "u = {}", u);
            prop_assert!(v > -0.5 && v < h as f64 - 0.5, "v = {}", v);
        }
    }

    #[test]
    fn zbuffer_keeps_the_minimum_depth(seed in any::<u64>(), n in 1usize..400) {
        let (w, h) = (20, 14);
        let k = camera(w, h);
        let mut r = rng(seed);
        let cloud = PointCloud::new((0..n).map(|_| {
            [r.gen_range(-15.0..15.0), r.gen_range(-10.0..10.0), r.gen_range(-2.0..20.0)]
        }).collect());
        let out = project_zbuffer(&cloud, &k);
        let mut best = vec![f64::INFINITY; w * h];
        let (mut behind, mut outside) = (0, 0);
        for p in &cloud.points {
            if p[2] <= 0.0 {
                behind += 1;
                continue;
            }
            let u = (k.fx * p[0] / p[2] + k.cx + 0.5).floor();
            let v = (k.fy * p[1] / p[2] + k.cy + 0.5).floor();
            if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                outside += 1;
                continue;
            }
            let i = v as usize * w + u as usize;
            best[i] = best[i].min(p[2]);
        }
        prop_assert_eq!((out.dropped_behind, out.dropped_outside), (behind, outside));
        for (got, want) in out.depth.values().iter().zip(&best) {
            let want = if want.is_finite() { *want } else { 0.0 };
            prop_assert_eq!(*got, want);
        }
    }

    #[test]
    fn subsample_is_an_exact_count_subset(seed in any::<u64>(), fill in 0.01f64..1.0, ratio in 0.001f64..=1.0) {
        let d = random_sparse(&mut rng(seed), 40, 30, fill);
        let s = subsample(&d, ratio, seed).unwrap();
        prop_assert_eq!(s.valid_count(), (d.valid_count() as f64 * ratio).round() as usize);
        for (u, v, z) in s.valid_pixels() {
            prop_assert_eq!(d.get(u, v), z);
        }
        prop_assert_eq!(subsample(&d, ratio, seed).unwrap(), s);
    }

    #[test]
    fn pgm_round_trip_is_millimetre_exact(seed in any::<u64>()) {
        let mut r = rng(seed);
        let values = (0..12 * 7)
            .map(|_| if r.gen_bool(0.5) { r.gen_range(1..65_535u32) as f64 / 1000.0 } else { 0.0 })
            .collect();
        let d = DepthImage::new(12, 7, values).unwrap();
        let back = decode_depth_pgm(&encode_depth_pgm(&d).unwrap(), Path::new("mem")).unwrap();
        prop_assert_eq!(back, d);
    }
}

#[test]
fn seventeen_thousand_points_thin_to_a_quarter() {
    let (w, h) = (400, 100);
    let mut values = vec![0.0; w * h];
    for (i, v) in values.iter_mut().enumerate().take(17_000) {
        *v = 1.0 + (i % 50) as f64;
    }
    let d = DepthImage::new(w, h, values).unwrap();
    assert_eq!(d.valid_count(), 17_000);
    assert_eq!(subsample(&d, 0.25, 1).unwrap().valid_count(), 4_250);
}

#[test]
fn depth_and_cloud_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = random_sparse(&mut rng(8), 16, 16, 0.4);
    let quantized = DepthImage::new(
        16,
        16,
        d.values().iter().map(|v| (v * 1000.0).round() / 1000.0).collect(),
    )
    .unwrap();
    let pgm = dir.path().join("d.pgm");
    write_depth_pgm(&pgm, &quantized).unwrap();
    assert_eq!(read_depth_pgm(&pgm).unwrap(), quantized);

    let cloud = unproject(&d, &camera(16, 16)).unwrap();
    let txt = dir.path().join("c.txt");
    write_cloud(&txt, &cloud).unwrap();
    assert_eq!(read_cloud(&txt).unwrap(), cloud);
}

#[test]
fn out_of_range_depth_cannot_be_written() {
    let d = DepthImage::new(1, 1, vec![65.536]).unwrap();
    assert!(encode_depth_pgm(&d).is_err());
    let ok = DepthImage::new(1, 1, vec![65.535]).unwrap();
    assert!(encode_depth_pgm(&ok).is_ok());
}
