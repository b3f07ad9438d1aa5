//! Randomized invariants across modules.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmera_core::coarsegrain::{apply_layer, Compression};
use wmera_core::finegrain::fine_grain_weights;
use wmera_core::ingest::{decode_wav, encode_sample, haar_preprocess, make_windows, FeatureScaler, RawSample};
use wmera_core::{svd_split, DenseTensor, Mps, Truncation, WaveletMeraLayer};

fn tensor(shape: Vec<usize>, seed: u64) -> DenseTensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
}

fn wav(samples: &[i16]) -> Vec<u8> {
    let n = (samples.len() * 2) as u32;
    let mut b = b"RIFF".to_vec();
    b.extend((36 + n).to_le_bytes());
    b.extend(b"WAVEfmt ");
    b.extend(16u32.to_le_bytes());
    b.extend([1, 0, 1, 0]);
    b.extend(8000u32.to_le_bytes());
    b.extend(16000u32.to_le_bytes());
    b.extend([2, 0, 16, 0]);
    b.extend(b"data");
    b.extend(n.to_le_bytes());
    for s in samples {
        b.extend(s.to_le_bytes());
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_split_respects_truncation(
        shape in prop::collection::vec(1usize..5, 2..5),
        cut in 1usize..4,
        delta in 0.0f64..0.5,
        chi in 1usize..6,
        seed in any::<u64>(),
    ) {
        let cut = cut.min(shape.len() - 1);
        let t = tensor(shape.clone(), seed);
        let left: Vec<usize> = (0..cut).collect();
        let res = svd_split(&t, &left, Truncation::new(delta, chi).unwrap()).unwrap();
        let s = &res.singular_values;
        prop_assert!(!s.is_empty() && s.len() <= chi);
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.len() == 1 || s.iter().all(|&x| x >= delta));
        // discarded weight equals the squared residual
        let k = s.len();
        let mut us = res.left_factor.clone();
        us.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v *= s[i % k]);
        let rec = us.contract(&res.right_factor, &[(cut, 0)]).unwrap();
        let resid: f64 = rec.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((resid - res.truncation_error).abs() <= 1e-10 * t.norm_sqr().max(1.0));
    }

    #[test]
    fn canonical_forms_preserve_the_state(n in 2usize..7, bond in 1usize..4, c in 0usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Mps::random(&vec![2; n], bond, 1.0, &mut rng);
        let c = c.min(n - 1);
        let can = m.canonicalize(c).unwrap();
        prop_assert!(can.check_gauge(1e-12));
        let (a, b) = (m.to_dense(), can.to_dense());
        prop_assert!(a.max_abs_diff(&b) <= 1e-12 * a.norm().max(1.0));
        prop_assert!((can.norm_sqr() - a.norm_sqr()).abs() <= 1e-10 * a.norm_sqr().max(1.0));
    }

    #[test]
    fn layers_are_orthogonal_for_any_angles(tu in -3.2f64..3.2, tv in -3.2f64..3.2) {
        let l = WaveletMeraLayer::new(tu, tv, 8).unwrap();
        prop_assert!(l.constraint_violation() < 1e-14);
        let d = l.stencil().d;
        prop_assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fine_then_coarse_is_identity(tu in -1.6f64..1.6, tv in -1.6f64..1.6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = WaveletMeraLayer::new(tu, tv, 8).unwrap();
        let w = Mps::random(&[2; 4], 2, 1.0, &mut rng);
        let fine = fine_grain_weights(&w, &layer, Truncation::exact()).unwrap().weights;
        let back = apply_layer(&fine, &layer, Compression::exact()).unwrap();
        let (a, b) = (w.to_dense(), back.to_dense());
        prop_assert!(a.max_abs_diff(&b) <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn windows_count_and_labels(series in prop::collection::vec(-10.0f64..10.0, 9..80), k in 2u32..4) {
        let p = 1usize << k;
        prop_assume!(series.len() > p);
        let w = make_windows(&series, p, "s").unwrap();
        prop_assert_eq!(w.len(), series.len() - p);
        for (s, win) in w.iter().enumerate() {
            prop_assert_eq!(&win.values[..], &series[s..s + p]);
            prop_assert_eq!(win.label, series[s + p]);
        }
    }

    #[test]
    fn haar_passes_compose(v in prop::collection::vec(-5.0f64..5.0, 32), a in 0usize..3, b in 0usize..3) {
        let once = haar_preprocess(&v, a + b).unwrap();
        let twice = haar_preprocess(&haar_preprocess(&v, a).unwrap(), b).unwrap();
        prop_assert_eq!(once.len(), v.len() >> (a + b));
        for (x, y) in once.iter().zip(&twice) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn scaler_is_monotone_and_bounded(v in prop::collection::vec(-100.0f64..100.0, 2..40), probe in prop::collection::vec(-300.0f64..300.0, 2..10)) {
        let s = RawSample::new(v, 1.0, "x").unwrap();
        prop_assume!(s.values.iter().any(|&x| x != s.values[0]));
        let sc = FeatureScaler::fit(std::slice::from_ref(&s)).unwrap();
        let mut sorted = probe.clone();
        sorted.sort_by(f64::total_cmp);
        let mapped = sc.apply(&sorted);
        prop_assert!(mapped.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn encoding_is_a_bond_one_qubit_chain(x in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let m = encode_sample(&x).unwrap();
        prop_assert_eq!(m.max_bond(), 1);
        prop_assert!(m.site_dims().iter().all(|&d| d == 2));
        let norm: f64 = x.iter().map(|v| 1.0 + v * v).product();
        prop_assert!((m.norm_sqr() - norm).abs() < 1e-12 * norm);
    }

    #[test]
    fn wav_decoding_is_exact(samples in prop::collection::vec(any::<i16>(), 0..64)) {
        let v = decode_wav(&wav(&samples)).unwrap();
        prop_assert_eq!(v.len(), samples.len());
        for (x, s) in v.iter().zip(&samples) {
            prop_assert_eq!(*x, *s as f64 / 32768.0);
        }
    }
}
