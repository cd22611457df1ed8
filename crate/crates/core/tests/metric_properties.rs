use medsyn_core::domain::{stream, Image2D};
use medsyn_core::metrics::{mae, psnr, ssim, ssim_reference, Psnr, SsimParams};
use proptest::prelude::*;

fn image(w: usize, h: usize, seed: u64) -> Image2D {
    let mut r = stream(seed, &["img"]);
    Image2D::new(w, h, (0..w * h).map(|_| r.next_f64()).collect()).unwrap()
}

#[test]
fn fast_ssim_matches_double_loop_reference() {
    let p = SsimParams::default();
    for seed in 0..20 {
        let (a, b) = (image(64, 64, 2 * seed), image(64, 64, 2 * seed + 1));
        let d = (ssim(&a, &b, &p).unwrap() - ssim_reference(&a, &b, &p).unwrap()).abs();
        assert!(d <= 1e-9, "seed {seed}: {d:e}");
    }
}

#[test]
fn analytic_anchor_values() {
    let p = SsimParams::default();
    let zeros = Image2D::filled(16, 16, 0.0).unwrap();
    let ones = Image2D::filled(16, 16, 1.0).unwrap();
    let c1 = p.c1();
    assert!((ssim(&zeros, &ones, &p).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
    assert_eq!(mae(&zeros, &ones).unwrap(), 255.0);
    assert_eq!(psnr(&zeros, &ones).unwrap(), Psnr::Db(0.0));
    let half = Image2D::filled(16, 16, 0.5).unwrap();
    let Psnr::Db(db) = psnr(&zeros, &half).unwrap() else { panic!("finite psnr expected") };
    assert!((db - 6.0206).abs() < 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_identity_symmetry_and_bounds(seed in any::<u64>(), w in 11usize..24, h in 11usize..24) {
        let p = SsimParams::default();
        let (a, b) = (image(w, h, seed), image(w, h, seed ^ 0x9e37));
        prop_assert_eq!(ssim(&a, &a, &p).unwrap(), 1.0);
        let ab = ssim(&a, &b, &p).unwrap();
        prop_assert!((ab - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn mae_is_a_scaled_metric(seed in any::<u64>()) {
        let (a, b, c) = (image(8, 8, seed), image(8, 8, seed + 1), image(8, 8, seed + 2));
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let (ab, bc, ac) = (mae(&a, &b).unwrap(), mae(&b, &c).unwrap(), mae(&a, &c).unwrap());
        prop_assert!((ab - mae(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!((0.0..=255.0).contains(&ab));
    }

    #[test]
    fn psnr_identical_only_for_equal_images(seed in any::<u64>()) {
        let a = image(8, 8, seed);
        prop_assert_eq!(psnr(&a, &a).unwrap(), Psnr::Identical);
        let b = image(8, 8, seed + 7);
        prop_assert!(psnr(&a, &b).unwrap().db().unwrap() > 0.0);
    }
}
