use proptest::prelude::*;

use trurm_core::afd::{decompose_series, AfdParams};
use trurm_core::dsp;
use trurm_core::fpe::{decrypt_segment, dtw_distance, encrypt_segment, estimate_t_res, EncryptionKey, PerturbationParams};
use trurm_core::io::{decode_segments, encode_segments};
use trurm_core::preprocess::{PhaseSegment, SegmentTruth};
use trurm_core::ptn::sdab::{band_distributions_from_mean, reallocation_mask};
use trurm_core::ptn::{istft, stft, StftConfig};
use trurm_core::RESP_BAND;

const FS: f64 = 20.0;

fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

fn breathing() -> impl Strategy<Value = Vec<f64>> {
    (0.12f64..0.45, 0.2f64..3.0, 0.0f64..6.0, prop::collection::vec(-0.3f64..0.3, 400)).prop_map(|(f, a, ph, noise)| {
        noise
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let t = i as f64 / FS;
                a * (std::f64::consts::TAU * f * t + ph).sin() + 0.3 * a * (2.0 * std::f64::consts::TAU * f * t).sin() + n
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn key_hex_round_trips(bits in prop::collection::vec(any::<bool>(), 8..64usize)) {
        let n = bits.len() / 4 * 4;
        let k = EncryptionKey::from_bits(bits[..n].to_vec()).unwrap();
        let back = EncryptionKey::from_hex(&k.to_hex()).unwrap();
        prop_assert_eq!(back.bits(), k.bits());
        prop_assert_eq!(k.fingerprint().len(), 8);
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in signal(1..30), b in signal(1..30)) {
        prop_assert_eq!(dtw_distance(&a, &a), 0.0);
        prop_assert!((dtw_distance(&a, &b) - dtw_distance(&b, &a)).abs() <= 1e-9 * dtw_distance(&a, &b).max(1.0));
        prop_assert!(dtw_distance(&a, &b) >= 0.0);
    }

    #[test]
    fn stft_round_trip(x in signal(64..900)) {
        let cfg = StftConfig::default().fit(x.len());
        prop_assume!(x.len() >= cfg.window);
        let s = stft(&x, FS, &cfg).unwrap();
        prop_assert!(dsp::rel_l2_error(&istft(&s), &x) < 1e-6);
    }

    #[test]
    fn band_distributions_are_valid_and_masks_bounded(
        m in prop::collection::vec(0.0f64..10.0, 513),
        theta in prop::collection::vec(-8.0f64..8.0, 20),
        zero_frac in 0.0f64..1.0,
    ) {
        let freqs: Vec<f64> = (0..513).map(|k| k as f64 * FS / 1024.0).collect();
        let m: Vec<f64> = m.iter().enumerate().map(|(i, v)| if (i as f64 / 513.0) < zero_frac { 0.0 } else { *v }).collect();
        let bd = band_distributions_from_mean(&m, &freqs, RESP_BAND, &theta).unwrap();
        for d in [&bd.p_b, &bd.p_o, &bd.q_b, &bd.q_o] {
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.iter().all(|v| *v >= 0.0));
        }
        let mask = reallocation_mask(&bd);
        prop_assert!(bd.f_b.iter().all(|&k| (0.5..=2.0).contains(&mask[k])));
        prop_assert!(bd.f_o.iter().all(|&k| (0.25..=1.0).contains(&mask[k])));
    }

    #[test]
    fn segments_encode_round_trip(phase in signal(1..200), start in 0.0f64..1e4, idx in 0usize..1000, rate in 5.0f64..40.0, label in prop::option::of(0u32..13)) {
        let seg = PhaseSegment {
            phase,
            sample_rate: FS,
            start_time: start,
            source_id: format!("p{idx}"),
            segment_index: idx,
            truth: Some(SegmentTruth { resp_rate_bpm: rate, id_label: label }),
        };
        let back = decode_segments(&encode_segments(std::slice::from_ref(&seg)).unwrap()).unwrap();
        prop_assert_eq!(back, vec![seg]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn encryption_is_deterministic_and_invertible(x in breathing(), seed in any::<u64>(), beta_amp in 0.0f64..1000.0, beta_phase in 0.0f64..1000.0) {
        let d = decompose_series(&x, FS, &AfdParams::default()).unwrap();
        let key = EncryptionKey::random(128, seed).unwrap();
        let pp = PerturbationParams { beta_amp, beta_phase, ..PerturbationParams::default() };
        let t_res = estimate_t_res(&d.x_ure, FS);
        let a = encrypt_segment(&d, &key, &pp, t_res, FS).unwrap();
        prop_assert_eq!(&a, &encrypt_segment(&d, &key, &pp, t_res, FS).unwrap());
        let back = decrypt_segment(&a, &key).unwrap();
        prop_assert!(dsp::rel_l2_error(&back.x_pd, &d.x_pd) < 1e-6);
        prop_assert!(dsp::rel_l2_error(&back.x_ot, &d.x_ot) < 1e-6);
        prop_assert_eq!(&back.x_ure, &d.x_ure);
        let in_band = |v: &[f64]| dsp::band_energy(v, FS, RESP_BAND);
        let (e0, e1) = (in_band(&d.x_ot), in_band(&a.x_ot_enc));
        prop_assert!((e1 - e0).abs() <= 1e-9 * e0.max(1e-12 * dsp::energy(&d.x_ot)));
    }
}
