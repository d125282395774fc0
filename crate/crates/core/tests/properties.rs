mod common;

use common::*;
use msfdpm::matcher::{
    align_all_levels, build_mask, correlation_field, correlation_field_with_mask, lift_index,
    pearson_values, reuse_index,
};
use msfdpm::metrics::{bd_rate, mse, performance_reduction, psnr, QualityField, RdCurve, RdPoint};
use msfdpm::{FeatureMap, FeaturePyramid, PatchGrid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_map() -> impl Strategy<Value = (FeatureMap, FeatureMap, usize)> {
    (prop_oneof![Just(4usize), Just(8)], 1usize..=4, 1usize..=4, 1usize..=4, any::<u64>()).prop_map(
        |(b, rows, cols, c, seed)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let main = noise_map(rows * b, cols * b, c, &mut r);
            let side = noise_map(rows * b, cols * b, c, &mut r);
            (main, side, b)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pearson_bounded_and_symmetric(a in prop::collection::vec(-10.0f32..10.0, 2..64), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f32> = noise_map(1, a.len(), 1, &mut r).into_vec();
        let ab = pearson_values(&a, &b).unwrap();
        let ba = pearson_values(&b, &a).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn pearson_affine_invariant_to_rounding(
        a in prop::collection::vec(-1.0f32..1.0, 8..64),
        scale in 0.5f32..2.0,
        shift in -0.5f32..0.5,
    ) {
        let b: Vec<f32> = a.iter().enumerate().map(|(n, v)| v * v + n as f32 * 0.01).collect();
        let moved: Vec<f32> = b.iter().map(|v| scale * v + shift).collect();
        let before = pearson_values(&a, &b).unwrap();
        let after = pearson_values(&a, &moved).unwrap();
        prop_assert!((before - after).abs() < 1e-5, "{before} vs {after}");
    }

    #[test]
    fn field_matches_oracle((main, side, b) in small_map()) {
        let sigma = 2.0 * b as f64;
        let field = correlation_field(&main, &side, b, sigma).unwrap();
        let oracle = brute_field(&main, &side, b, sigma);
        for (idx, &best) in oracle.best.iter().enumerate() {
            let (i, j) = (idx % oracle.main_cols, idx / oracle.main_cols);
            prop_assert_eq!(field.best(i, j), best);
            for l in 0..oracle.side_rows {
                for k in 0..oracle.side_cols {
                    prop_assert!((field.score(i, j, k, l) - oracle.score(i, j, k, l)).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn best_is_a_maximum((main, side, b) in small_map(), sigma in prop_oneof![Just(f64::INFINITY), 1.0f64..64.0]) {
        let field = correlation_field(&main, &side, b, sigma).unwrap();
        let side_grid = *field.side_grid();
        for (i, j) in field.main_grid().indices() {
            let (bk, bl) = field.best(i, j);
            let top = field.score(i, j, bk, bl);
            for (k, l) in side_grid.indices() {
                let s = field.score(i, j, k, l);
                prop_assert!(s <= top);
                if s == top {
                    // ties go to the smallest l, then the smallest k
                    prop_assert!((l, k) >= (bl, bk));
                }
            }
        }
    }

    #[test]
    fn infinite_sigma_is_unmasked((main, side, b) in small_map()) {
        let field = correlation_field(&main, &side, b, f64::INFINITY).unwrap();
        let oracle = brute_field(&main, &side, b, f64::INFINITY);
        let mask = build_mask(&main, &side, b, f64::INFINITY).unwrap();
        for (i, j) in field.main_grid().indices() {
            for (k, l) in field.side_grid().indices() {
                prop_assert_eq!(mask.value(i, j, k, l), 1.0);
            }
        }
        prop_assert_eq!(field.best_indices(), &oracle.best[..]);
    }

    #[test]
    fn tiny_sigma_picks_colocated_for_correlated_pairs((main, _side, b) in small_map(), seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let noise = noise_map(main.height(), main.width(), main.channels(), &mut r);
        let side = FeatureMap::from_fn(main.height(), main.width(), main.channels(), |y, x, c| {
            main.get(y, x, c) + 0.3 * noise.get(y, x, c)
        }).unwrap();
        let mask = build_mask(&main, &side, b, 0.05).unwrap();
        let field = correlation_field_with_mask(&main, &side, b, &mask).unwrap();
        for (i, j) in field.main_grid().indices() {
            prop_assert_eq!(field.best(i, j), (i * b, j * b));
        }
    }

    #[test]
    fn alignment_copies_whole_patches((main, side, b) in small_map(), seed in any::<u64>()) {
        prop_assume!(b == 8);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = main.dims();
        let lossless = FeaturePyramid::new([
            noise_map(h, w, c, &mut r),
            noise_map(h / 2, w / 2, c, &mut r),
            noise_map(h / 4, w / 4, c, &mut r),
            noise_map(h / 8, w / 8, c, &mut r),
        ]).unwrap();
        let field = correlation_field(&main, &side, b, 16.0).unwrap();
        let aligned = align_all_levels(&field, &lossless, b).unwrap();
        for lvl in 1..=4usize {
            let bh = b >> (lvl - 1);
            let grid = PatchGrid::over(aligned.level(lvl), bh, bh).unwrap();
            for (i, j) in grid.indices() {
                let (k1, l1) = field.best(i, j);
                let (k, l) = reuse_index(b, lvl, k1, l1).unwrap();
                let src = lossless.level(lvl);
                for dy in 0..bh {
                    for dx in 0..bh {
                        for ch in 0..c {
                            prop_assert_eq!(
                                aligned.level(lvl).get(j * bh + dy, i * bh + dx, ch),
                                src.get(l + dy, k + dx, ch)
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn lift_then_reuse_roundtrips(b in prop_oneof![Just(8usize), Just(16), Just(32)], h in 1usize..=4, k in 0usize..64, l in 0usize..64) {
        let (k1, l1) = lift_index(b, h, k, l).unwrap();
        prop_assert_eq!(reuse_index(b, h, k1, l1).unwrap(), (k, l));
        prop_assert_eq!((k1, l1), (k << (h - 1), l << (h - 1)));
    }

    #[test]
    fn fmap_roundtrip(h in 1usize..16, w in 1usize..16, c in 1usize..6, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let map = noise_map(h, w, c, &mut r);
        let mut buf = Vec::new();
        map.write_fmap(&mut buf).unwrap();
        prop_assert_eq!(buf.len(), 5 + 12 + 4 * h * w * c);
        prop_assert_eq!(FeatureMap::read_fmap(&buf[..]).unwrap(), map);
    }

    #[test]
    fn psnr_symmetric_and_mse_nonnegative(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = noise_image(12, 12, &mut r);
        let b = noise_image(12, 12, &mut r);
        prop_assert!(mse(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn bd_rate_of_uniform_scaling(scale in 0.3f64..3.0) {
        let curve = |s: f64| RdCurve::new(
            [(0.1, 28.0, 0.9), (0.2, 31.0, 0.93), (0.4, 34.0, 0.96), (0.8, 37.0, 0.98)]
                .iter()
                .map(|&(b, p, m)| RdPoint::new(b * s, p, m).unwrap())
                .collect(),
        ).unwrap();
        let got = bd_rate(&curve(1.0), &curve(scale), QualityField::Psnr).unwrap();
        prop_assert!((got - (scale - 1.0) * 100.0).abs() < 1e-6, "{got}");
    }

    #[test]
    fn pr_of_equal_gains_is_zero(g in 1e-6f64..10.0) {
        prop_assert_eq!(performance_reduction(g, g).unwrap(), 0.0);
        prop_assert!(performance_reduction(g, 0.0).unwrap() == 1.0);
    }
}
