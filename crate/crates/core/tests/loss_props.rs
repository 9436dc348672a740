//! Algebraic properties of the training losses.

use proptest::prelude::*;
use ses_core::losses::{
    discriminator_loss, feature_matching_loss, generator_adv_loss, multiscale_spectral_loss, si_snr, FeatureMap,
    FeatureStack, LogitSet, SpectralLossConfig, SpectrumKind,
};
use ses_core::signal::Waveform;

fn small_cfg(kind: SpectrumKind) -> SpectralLossConfig {
    SpectralLossConfig { scales: vec![64, 128], epsilon: 1e-5, kind }
}

fn logits() -> impl Strategy<Value = LogitSet> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 1..6), 1..5).prop_map(LogitSet)
}

fn stack_pair() -> impl Strategy<Value = (FeatureStack, FeatureStack)> {
    prop::collection::vec(prop::collection::vec((1usize..3, 1usize..5), 1..4), 1..4).prop_flat_map(|shape| {
        let maps = move || {
            shape
                .iter()
                .map(|layers| {
                    layers
                        .iter()
                        .map(|&(c, t)| {
                            prop::collection::vec(-2.0f64..2.0, c * t)
                                .prop_map(move |values| FeatureMap { channels: c, values })
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        (maps().prop_map(FeatureStack), maps().prop_map(FeatureStack))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_loss_vanishes_only_on_equal_signals(x in prop::collection::vec(-1.0f64..1.0, 256), at in 0usize..256, bump in 0.05f64..0.5) {
        for kind in [SpectrumKind::Linear, SpectrumKind::Mel { n_mels: 16 }] {
            let cfg = small_cfg(kind);
            let w = Waveform::new(x.clone(), 24000).unwrap();
            prop_assert_eq!(multiscale_spectral_loss(&w, &w, &cfg).unwrap(), 0.0);
            let mut y = x.clone();
            y[at] += bump;
            let l = multiscale_spectral_loss(&w, &Waveform::new(y, 24000).unwrap(), &cfg).unwrap();
            prop_assert!(l > 0.0 && l.is_finite());
        }
    }

    #[test]
    fn hinge_losses_are_bounded_below(real in logits(), fake in logits()) {
        prop_assert!(generator_adv_loss(&fake).unwrap() >= 0.0);
        if real.0.len() == fake.0.len() {
            let d = discriminator_loss(&real, &fake).unwrap();
            prop_assert!(d >= 0.0);
            // shifting every real logit up and every fake logit down never increases L_D
            let up = LogitSet(real.0.iter().map(|l| l.iter().map(|v| v + 0.5).collect()).collect());
            let down = LogitSet(fake.0.iter().map(|l| l.iter().map(|v| v - 0.5).collect()).collect());
            prop_assert!(discriminator_loss(&up, &down).unwrap() <= d + 1e-12);
        }
    }

    #[test]
    fn feature_matching_is_a_homogeneous_distance((a, b) in stack_pair(), c in 0.1f64..10.0) {
        prop_assert_eq!(feature_matching_loss(&a, &a).unwrap(), 0.0);
        let ab = feature_matching_loss(&a, &b).unwrap();
        prop_assert!((ab - feature_matching_loss(&b, &a).unwrap()).abs() <= 1e-12);
        let scale = |s: &FeatureStack| FeatureStack(
            s.0.iter().map(|l| l.iter().map(|m| FeatureMap { channels: m.channels, values: m.values.iter().map(|v| v * c).collect() }).collect()).collect(),
        );
        let scaled = feature_matching_loss(&scale(&a), &scale(&b)).unwrap();
        prop_assert!((scaled - c * ab).abs() <= 1e-9 * (1.0 + c * ab));
    }

    #[test]
    fn si_snr_is_scale_invariant(x in prop::collection::vec(-1.0f64..1.0, 64), n in prop::collection::vec(-0.1f64..0.1, 64), g in 0.1f64..10.0) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let r = Waveform::new(x.clone(), 24000).unwrap();
        let e: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        let base = si_snr(&r, &Waveform::new(e.clone(), 24000).unwrap()).unwrap();
        let scaled = si_snr(&r, &Waveform::new(e.iter().map(|v| v * g).collect(), 24000).unwrap()).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9);
    }
}
