use gpm_core::compositor::{pixel_composite, poisson_blend};
use gpm_core::graph_cut::LabelMap;
use gpm_core::metrics::{evaluate, masked_ssim, psnr, seam_pixels, seam_report, sg_score};
use gpm_core::synthetic::{synthetic_image, SyntheticConfig};
use gpm_testkit::{naive_masked_ssim, naive_psnr, naive_sg, random_label_map};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(rng: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

#[test]
fn sg_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let img = noise_image(&mut rng, 24, 20);
        let labels = random_label_map(&mut rng, 6, 5, 3).resize_nearest(24, 20);
        let got = sg_score(&img, &seam_pixels(&labels, 24, 20)).unwrap().value;
        assert!((got - naive_sg(&img, &labels)).abs() < 1e-6);
    }
}

#[test]
fn psnr_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let a = noise_image(&mut rng, 17, 9);
        let b = noise_image(&mut rng, 17, 9);
        assert!((psnr(&a, &b).unwrap() - naive_psnr(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn masked_ssim_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let stack: Vec<RgbImage> = (0..3).map(|_| noise_image(&mut rng, 32, 24)).collect();
        let blended = noise_image(&mut rng, 32, 24);
        let labels = random_label_map(&mut rng, 8, 6, 3).resize_nearest(32, 24);
        let got = masked_ssim(&blended, &stack, &labels).unwrap().value;
        let want = naive_masked_ssim(&blended, &stack, &labels);
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn hard_composite_has_unit_masked_ssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let stack: Vec<RgbImage> = (0..4).map(|_| noise_image(&mut rng, 40, 40)).collect();
        let labels = random_label_map(&mut rng, 10, 10, 4);
        let comp = pixel_composite(&stack, &labels).unwrap();
        let report = evaluate(&comp.image, &stack, &labels).unwrap();
        assert_eq!(report.masked_ssim, 1.0);
        assert!(report.psnr_infinite);
        assert_eq!(report.psnr_db, None);
    }
}

#[test]
fn sg_is_invariant_to_relabeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = noise_image(&mut rng, 16, 16);
    let labels = random_label_map(&mut rng, 4, 4, 3).resize_nearest(16, 16);
    let relabeled: Vec<u16> = labels.iter().map(|&l| (l + 1) % 3).collect();
    assert_eq!(
        sg_score(&img, &seam_pixels(&labels, 16, 16)).unwrap(),
        sg_score(&img, &seam_pixels(&relabeled, 16, 16)).unwrap()
    );
}

#[test]
fn poisson_lowers_sg_on_the_synthetic_stack() {
    let cfg = SyntheticConfig::default();
    let stack: Vec<RgbImage> = (0..cfg.n_images).map(|i| synthetic_image(&cfg, i)).collect();
    // The split the segmenter finds on this fixture: image 0 left, image 1 right.
    let mut labels = LabelMap::constant(16, 16, 0);
    for y in 0..16 {
        for x in 8..16 {
            labels.labels[y * 16 + x] = 1;
        }
    }
    let comp = pixel_composite(&stack, &labels).unwrap();
    let blended = poisson_blend(&comp, &stack, 0).unwrap();
    let hard = seam_report(&comp.image, &stack, &comp.fullres_labels).unwrap();
    let soft = seam_report(&blended.image, &stack, &comp.fullres_labels).unwrap();
    assert!(soft.sg_score < hard.sg_score, "{} vs {}", soft.sg_score, hard.sg_score);
    println!("hard {hard:?}\nsoft {soft:?}");
    assert!(hard.within_stack_range(), "{hard:?}");
}
