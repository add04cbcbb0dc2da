//! Property-based invariants across the library surface.
//!
//! These lean on two exactness facts used throughout the crate: scaling
//! by a power of two commutes with floating-point rounding, and the
//! weighted loss is literally computed as its recombination formula.

// No glob import: the trainer's `Strategy` enum would shadow proptest's
// `Strategy` trait.
use gtmean_core::{
    base_loss, decode_ppm, encode_ppm, eta_sweep, finite_difference_check, gt_mean_loss,
    mean_brightness, psnr, ssim, weight_w, GtMeanConfig, ImageTensor, LambdaMode, LossKind,
    MetricMode, RawTensor, SweepSpec, Tensor, DEFAULT_MEAN_FLOOR,
};
use proptest::prelude::*;

fn image_strategy(channels: usize, max_dim: usize) -> impl Strategy<Value = ImageTensor> {
    (2..=max_dim, 2..=max_dim).prop_flat_map(move |(h, w)| {
        prop::collection::vec(0.0f64..=1.0, channels * h * w)
            .prop_map(move |data| ImageTensor::new(channels, h, w, data).unwrap())
    })
}

/// Pairs with elementwise gaps of at least `gap` and bright values, so
/// loss gradients are bounded away from zero and means sit far above the
/// default floor.
fn gapped_pair_strategy(gap: f64) -> impl Strategy<Value = (ImageTensor, ImageTensor)> {
    (2usize..=4, 2usize..=4)
        .prop_flat_map(move |(h, w)| {
            let n = h * w;
            (
                Just((h, w)),
                prop::collection::vec(0.35f64..0.65, n),
                prop::collection::vec(gap..2.0 * gap, n),
                prop::collection::vec(prop::bool::ANY, n),
            )
        })
        .prop_map(|((h, w), base, mags, signs)| {
            let pred = ImageTensor::new(1, h, w, base.clone()).unwrap();
            let tdata: Vec<f64> = base
                .iter()
                .zip(mags.iter().zip(&signs))
                .map(|(&b, (&m, &s))| if s { b + m } else { b - m })
                .collect();
            let target = ImageTensor::new(1, h, w, tdata).unwrap();
            (pred, target)
        })
}

proptest! {
    #[test]
    fn ppm_round_trip_stays_within_quantization(img in image_strategy(3, 5)) {
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        prop_assert_eq!(back.shape(), img.shape());
        let worst = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        // Rounding to 255 levels loses at most half a level.
        prop_assert!(worst <= 1.0 / 510.0 + 1e-12, "worst {}", worst);
    }

    #[test]
    fn ppm_bytes_survive_decode_encode_exactly(
        (w, h) in (1usize..=4, 1usize..=4),
        seed in any::<u64>(),
    ) {
        // Arbitrary payload bytes under a canonical header: re-encoding
        // the decoded image reproduces the input byte for byte.
        let n = 3 * w * h;
        let payload: Vec<u8> = (0..n).map(|i| {
            let mixed = (i as u64).wrapping_mul(1442695040888963407);
            (seed.wrapping_mul(6364136223846793005).wrapping_add(mixed) >> 33) as u8
        }).collect();
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(&payload);
        let img = decode_ppm(&bytes).unwrap();
        let re = encode_ppm(&img);
        prop_assert_eq!(re, bytes);
    }

    #[test]
    fn mean_scales_exactly_by_dyadic_factors(img in image_strategy(1, 5)) {
        let (c, h, w) = img.shape();
        let halved: Vec<f64> = img.data().iter().map(|v| 0.5 * v).collect();
        let halved = ImageTensor::new(c, h, w, halved).unwrap();
        prop_assert_eq!(mean_brightness(&halved), 0.5 * mean_brightness(&img));
    }

    #[test]
    fn brightness_weight_is_clipped_and_symmetric(
        mu_a in 0.01f64..1.0,
        mu_b in 0.01f64..1.0,
        sigma in 0.01f64..0.5,
    ) {
        let ab = weight_w(mu_a, mu_b, sigma, DEFAULT_MEAN_FLOOR).unwrap();
        let ba = weight_w(mu_b, mu_a, sigma, DEFAULT_MEAN_FLOOR).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.w));
        prop_assert!(ab.d_b >= 0.0);
        prop_assert_eq!(ab.d_b.to_bits(), ba.d_b.to_bits(), "distance is symmetric");
    }

    #[test]
    fn gt_mean_aligned_term_matches_materialized_rescale(
        (pred, target) in gapped_pair_strategy(0.1),
    ) {
        // The fused implementation never materializes lambda * pred; this
        // recomputes the aligned term the slow way.
        let out = gt_mean_loss(LossKind::L1, &pred, &target, &GtMeanConfig::default()).unwrap();
        let (c, h, w) = pred.shape();
        let scaled: Vec<f64> = pred.data().iter().map(|v| out.diag.lambda * v).collect();
        let scaled = RawTensor::new(c, h, w, scaled).unwrap();
        let (aligned, _) = base_loss(LossKind::L1, &scaled, &target).unwrap();
        let tol = 1e-12 * aligned.abs().max(1.0);
        prop_assert!((out.diag.aligned_term - aligned).abs() <= tol);
        let recombined = out.diag.w * out.diag.original_term
            + (1.0 - out.diag.w) * out.diag.aligned_term;
        prop_assert_eq!(out.value.to_bits(), recombined.to_bits());
    }

    #[test]
    fn sigma_zero_is_bitwise_base_loss(img in image_strategy(1, 4), seed in any::<u64>()) {
        let (c, h, w) = img.shape();
        let tdata: Vec<f64> = (0..c * h * w)
            .map(|i| {
                let x = seed.wrapping_add(i as u64).wrapping_mul(6364136223846793005);
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let target = ImageTensor::new(c, h, w, tdata).unwrap();
        let cfg = GtMeanConfig { sigma_coeff: 0.0, ..GtMeanConfig::default() };
        let out = gt_mean_loss(LossKind::L1, &img, &target, &cfg).unwrap();
        let (value, grad) = base_loss(LossKind::L1, &img, &target).unwrap();
        prop_assert_eq!(out.value.to_bits(), value.to_bits());
        prop_assert_eq!(out.grad.data(), grad.data());
        prop_assert_eq!(out.diag.w, 1.0);
        prop_assert!(out.diag.d_b.is_infinite());
    }

    #[test]
    fn psnr_is_symmetric(a in image_strategy(1, 6), seed in any::<u64>()) {
        let (c, h, w) = a.shape();
        let bdata: Vec<f64> = (0..c * h * w)
            .map(|i| {
                let x = seed.wrapping_add(i as u64 * 31).wrapping_mul(6364136223846793005);
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let b = ImageTensor::new(c, h, w, bdata).unwrap();
        let ab = psnr(&a, &b, MetricMode::Normal).unwrap();
        let ba = psnr(&b, &a, MetricMode::Normal).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn gt_mean_psnr_ignores_dyadic_prediction_rescale(img in image_strategy(3, 4)) {
        // Build a half-brightness prediction; scaling it by 2 must not
        // change the brightness-forgiving PSNR (the aligned tensors are
        // bitwise identical).
        let (c, h, w) = img.shape();
        let quarter: Vec<f64> = img.data().iter().map(|v| 0.25 * v).collect();
        let half: Vec<f64> = img.data().iter().map(|v| 0.5 * v).collect();
        let mean: f64 = quarter.iter().sum::<f64>() / quarter.len() as f64;
        prop_assume!(mean > 1e-3);
        let a = ImageTensor::new(c, h, w, quarter).unwrap();
        let b = ImageTensor::new(c, h, w, half).unwrap();
        let pa = psnr(&a, &img, MetricMode::GtMean).unwrap();
        let pb = psnr(&b, &img, MetricMode::GtMean).unwrap();
        prop_assert_eq!(pa.to_bits(), pb.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_of_an_image_with_itself_is_exactly_one(
        (h, w) in (11usize..=13, 11usize..=13),
        seed in any::<u64>(),
    ) {
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let x = seed.wrapping_add(i as u64).wrapping_mul(6364136223846793005);
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let img = ImageTensor::new(1, h, w, data).unwrap();
        prop_assert_eq!(ssim(&img, &img, MetricMode::Normal).unwrap(), 1.0);
    }

    #[test]
    fn gradients_agree_with_finite_differences_on_smooth_losses(
        (h, w) in (2usize..=3, 2usize..=3),
        seed in any::<u64>(),
    ) {
        // Equal-mean construction: elementwise gaps at least 0.1 with
        // exactly zero mean offset, so per-element gradients stay bounded
        // away from zero and lambda sits at 1.
        let n = h * w;
        let mut pdata = Vec::with_capacity(n);
        let mut tdata = Vec::with_capacity(n);
        for i in 0..n {
            let x = seed.wrapping_add(i as u64).wrapping_mul(2862933555777941757);
            let base = 0.4 + 0.2 * ((x >> 11) as f64 / (1u64 << 53) as f64);
            let mag = 0.1 + 0.05 * ((x >> 7) & 0xff) as f64 / 255.0;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            pdata.push(base);
            tdata.push(base + sign * mag);
        }
        if n % 2 == 1 {
            // Odd count: drop the unpaired offset so means still match.
            let last = n - 1;
            tdata[last] = pdata[last];
        }
        let pred = ImageTensor::new(1, h, w, pdata).unwrap();
        let target = RawTensor::new(1, h, w, tdata).unwrap();
        for kind in [LossKind::L2, LossKind::charbonnier()] {
            for mode in [LambdaMode::Differentiable, LambdaMode::Detached] {
                let cfg = GtMeanConfig { lambda_mode: mode, ..GtMeanConfig::default() };
                let rel = finite_difference_check(kind, Some(&cfg), &pred, &target, 1e-6).unwrap();
                prop_assert!(rel <= 1e-5, "{kind:?} {mode:?}: rel {rel}");
            }
        }
    }

    #[test]
    fn landscape_rows_recombine_for_single_pairs(
        (pred, target) in gapped_pair_strategy(0.08),
    ) {
        let spec = SweepSpec { steps: 11, sigma_list: vec![0.1], ..SweepSpec::default() };
        let sweeps = eta_sweep(
            std::slice::from_ref(&pred),
            std::slice::from_ref(&target),
            &spec,
            &GtMeanConfig::default(),
        )
        .unwrap();
        for row in &sweeps[0].rows {
            let back = row.weight * row.original_loss + (1.0 - row.weight) * row.aligned_term;
            let tol = 1e-12 * row.gt_mean_loss.abs().max(1.0);
            prop_assert!((row.gt_mean_loss - back).abs() <= tol, "eta {}", row.eta);
        }
    }
}
