//! Randomized invariants over the numeric core.

use proptest::prelude::*;

use mlr_core::init::normal_init;
use mlr_core::ops::{
    conv2d_forward, conv_output_hw, maxpool2x2_backward, maxpool2x2_forward, Activation,
    ConvLayerSpec,
};
use mlr_core::pipeline::{
    apply_scalers, assemble_multimodal, fit_scalers, fix_length, Labels, UtteranceRecord,
};
use mlr_core::Tensor;

fn spec(cin: usize, cout: usize, k: usize, p: usize, s: usize) -> ConvLayerSpec {
    ConvLayerSpec {
        in_channels: cin,
        out_channels: cout,
        kernel: (k, k),
        padding: (p, p),
        stride: (s, s),
        has_batchnorm: false,
        activation: Activation::Identity,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_dims_follow_closed_form(
        h in 1usize..12, w in 1usize..12,
        k in 1usize..6, p in 0usize..3, s in 1usize..3,
        c in 1usize..3, o in 1usize..3,
        seed in 0u64..1000,
    ) {
        let sp = spec(c, o, k, p, s);
        let input = normal_init(&[1, c, h, w], seed, 1.0);
        let weights = normal_init(&sp.weight_dims(), seed + 1, 0.5);
        let bias = Tensor::zeros(&[o]);
        match conv_output_hw(&sp, h, w) {
            Ok((oh, ow)) => {
                prop_assert_eq!(oh, (h + 2 * p - k) / s + 1);
                prop_assert_eq!(ow, (w + 2 * p - k) / s + 1);
                let out = conv2d_forward(&input, &weights, &bias, &sp).unwrap();
                prop_assert_eq!(out.dims(), &[1, o, oh, ow]);
            }
            Err(_) => {
                // formula inapplicable: padded input smaller than the kernel
                prop_assert!(h + 2 * p < k || w + 2 * p < k);
                prop_assert!(conv2d_forward(&input, &weights, &bias, &sp).is_err());
            }
        }
    }

    #[test]
    fn maxpool_conserves_gradient_mass(
        h in 2usize..9, w in 2usize..9, c in 1usize..3, seed in 0u64..1000,
    ) {
        let input = normal_init(&[1, c, h, w], seed, 1.0);
        let (out, map) = maxpool2x2_forward(&input).unwrap();
        let grad_out = normal_init(out.dims(), seed + 7, 1.0);
        let gi = maxpool2x2_backward(&grad_out, &map).unwrap();
        let a: f64 = gi.data().iter().sum();
        let b: f64 = grad_out.data().iter().sum();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn pipeline_composition_lands_in_unit_square(
        words in 1usize..40, seed in 0u64..1000,
    ) {
        let audio = normal_init(&[words, 3], seed, 2.0);
        let vision = normal_init(&[words, 2], seed + 1, 5.0);
        let text = normal_init(&[words, 4], seed + 2, 0.7);
        let x = assemble_multimodal(&audio, &vision, &text).unwrap();
        let x = fix_length(&x, 20).unwrap();
        let rec = UtteranceRecord::new(
            x.clone(), (3, 2, 4), Labels::default(), "p".into(), "prop".into(),
        ).unwrap();
        let stats = fit_scalers(&[rec], "train").unwrap();
        let out = apply_scalers(&x, &stats).unwrap();
        prop_assert_eq!(out.dims(), &[20, 9]);
        prop_assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn refitting_normalized_data_is_idempotent(
        rows in 4usize..30, cols in 1usize..6, seed in 0u64..1000,
    ) {
        let x = normal_init(&[rows, cols], seed, 3.0);
        let rec = |t: &Tensor| UtteranceRecord::new(
            t.clone(), (cols, 0, 0), Labels::default(), "i".into(), "prop".into(),
        ).unwrap();
        let stats = fit_scalers(&[rec(&x)], "train").unwrap();
        let once = apply_scalers(&x, &stats).unwrap();
        // fit set == apply set, so no clipping occurs and a second
        // standardize+minmax reduces to the identity
        let stats2 = fit_scalers(&[rec(&once)], "train").unwrap();
        let twice = apply_scalers(&once, &stats2).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn fix_length_always_yields_requested_rows(
        words in 1usize..50, n in 1usize..30, cols in 1usize..5, seed in 0u64..1000,
    ) {
        let x = normal_init(&[words, cols], seed, 1.0);
        let y = fix_length(&x, n).unwrap();
        prop_assert_eq!(y.dims(), &[n, cols]);
        // the kept tail is bitwise identical
        let keep = words.min(n);
        let src = &x.data()[(words - keep) * cols..];
        let dst = &y.data()[(n - keep) * cols..];
        prop_assert_eq!(src, dst);
    }
}
