//! Mixing algebra and crop statistics.

use proptest::prelude::*;
use ses_core::data::{add_noise, mix_at_snr, prepare_example, synth_corpus, NoiseMixSpec};
use ses_core::signal::Waveform;

fn wave(v: Vec<f64>) -> Waveform {
    Waveform::new(v, 24000).unwrap()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn nonzero(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len).prop_filter("needs energy", |v| power(v) > 1e-6)
}

proptest! {
    #[test]
    fn mixture_hits_the_requested_snr((c, n) in (8usize..200).prop_flat_map(|l| (nonzero(l), nonzero(l))), snr in -10.0f64..30.0) {
        let (mixed, scale) = add_noise(&wave(c.clone()), &wave(n.clone()), snr).unwrap();
        let added: Vec<f64> = mixed.samples().iter().zip(&c).map(|(m, c)| m - c).collect();
        let measured = 10.0 * (power(&c) / power(&added)).log10();
        prop_assert!((measured - snr).abs() < 1e-6);
        let want = 10f64.powf(-snr / 20.0) * (power(&c).sqrt() / power(&n).sqrt());
        prop_assert!((scale - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn prepared_pairs_keep_the_bookkeeping(seed in any::<u64>()) {
        let corpus = synth_corpus(2, 0.5, 24000, 9).unwrap();
        let spec = NoiseMixSpec { crop_secs: 0.05, ..NoiseMixSpec::default() };
        let ex = prepare_example(&corpus.clean[0], Some(&corpus.noise[0]), &spec, seed).unwrap();
        prop_assert_eq!(ex.target.len(), 1200);
        prop_assert_eq!(ex.input.len(), 1200);
        let peak = ex.target.peak();
        prop_assert!((0.285 - 1e-12..=0.95 + 1e-12).contains(&peak), "peak {}", peak);
        // input − target is the scaled noise, at the recorded SNR.
        let snr = ex.snr_db.unwrap();
        prop_assert!((0.0..=15.0).contains(&snr));
        let diff: Vec<f64> = ex.input.samples().iter().zip(ex.target.samples()).map(|(a, b)| a - b).collect();
        let measured = 10.0 * (ex.target.power() / power(&diff)).log10();
        prop_assert!((measured - snr).abs() < 1e-6);
        let again = prepare_example(&corpus.clean[0], Some(&corpus.noise[0]), &spec, seed).unwrap();
        prop_assert_eq!(again, ex);
    }
}

#[test]
fn zero_db_mix_has_equal_powers() {
    let c = wave((0..500).map(|n| (n as f64 * 0.1).sin()).collect());
    let n = wave((0..500).map(|n| ((n * 7919 % 101) as f64 / 50.0) - 1.0).collect());
    let m = mix_at_snr(&c, &n, 0.0).unwrap();
    let added: Vec<f64> = m.samples().iter().zip(c.samples()).map(|(a, b)| a - b).collect();
    assert!((power(&added) / c.power() - 1.0).abs() < 1e-6);
    assert!(mix_at_snr(&c, &wave(vec![0.0; 500]), 0.0).is_err());
}

#[test]
fn crop_start_is_uniform() {
    let clip = wave((0..24000).map(|n| (n as f64 * 0.01).sin()).collect());
    let spec = NoiseMixSpec::default();
    let positions = 24000 - spec.crop_len(24000) + 1;
    const BINS: usize = 10;
    const DRAWS: usize = 10_000;
    let mut hist = [0usize; BINS];
    for seed in 0..DRAWS as u64 {
        let start = prepare_example(&clip, None, &spec, seed).unwrap().start;
        hist[start * BINS / positions] += 1;
    }
    for (b, &count) in hist.iter().enumerate() {
        let lo = (b * positions).div_ceil(BINS);
        let hi = ((b + 1) * positions).div_ceil(BINS);
        let p = (hi - lo) as f64 / positions as f64;
        let mean = DRAWS as f64 * p;
        let sd = (DRAWS as f64 * p * (1.0 - p)).sqrt();
        assert!((count as f64 - mean).abs() <= 5.0 * sd, "bin {b}: {count} vs {mean:.1} ± {sd:.1}");
    }
}
