use std::sync::OnceLock;

use ndarray::Array2;
use proptest::prelude::*;
use pvad::apc::{make_apc_pairs, ApcModel};
use pvad::audio::AudioBuffer;
use pvad::data::noise::average_power_spectrum;
use pvad::data::{make_multispeaker, mtr_augment, synth_corpus, MtrConfig, NoiseBank, RirPool, SynthConfig, Utterance};
use pvad::eval::{average_precision, map_score};
use pvad::features::{frame_count, FeatureConfig, LogMel};
use pvad::pvad::{combine, PvadClass};
use pvad::rng::SeedStreams;
use pvad::speaker::{cosine_similarity, SpeakerEmbedding};
use rand::SeedableRng;

fn feat() -> FeatureConfig {
    FeatureConfig::default()
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -1.0f64..1.0], n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("needs a positive", |(_, l)| l.iter().any(|&p| p))
    })
}

proptest! {
    #[test]
    fn short_appends_add_at_most_one_frame(n in 0usize..20_000, extra in 0usize..160) {
        let cfg = feat();
        let before = frame_count(n, &cfg);
        let after = frame_count(n + extra, &cfg);
        prop_assert!(after >= before && after <= before + 1);
    }

    #[test]
    fn ap_is_invariant_under_monotone_maps((scores, labels) in scores_and_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let ap = average_precision(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(ap, average_precision(&mapped, &labels).unwrap());
        prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-12);
    }

    #[test]
    fn map_lies_between_class_aps(aps in prop::array::uniform3(0.0f64..=1.0)) {
        let m = map_score(aps);
        let lo = aps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = aps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= m + 1e-15 && m <= hi + 1e-15);
    }

    #[test]
    fn combine_keeps_the_posterior_ratio(z_s in 1e-6f64..=1.0, s in 1e-6f64..(1.0 - 1e-6)) {
        let [z_ns, tss, ntss] = combine(1.0 - z_s, z_s, s);
        prop_assert!((z_ns + tss + ntss - 1.0).abs() < 1e-9);
        prop_assert!((tss / ntss - s / (1.0 - s)).abs() <= 1e-9 * (s / (1.0 - s)).max(1.0));
    }

    #[test]
    fn larger_similarity_never_flips_tss_to_ntss(z_s in 0.0f64..=1.0, s1 in 0.0f64..=1.0, ds in 0.0f64..=1.0) {
        let argmax = |p: [f64; 3]| (0..3).fold(0, |best, i| if p[i] > p[best] { i } else { best });
        let s2 = (s1 + ds).min(1.0);
        let before = argmax(combine(1.0 - z_s, z_s, s1));
        let after = argmax(combine(1.0 - z_s, z_s, s2));
        prop_assert!(!(before == PvadClass::Tss.index() && after == PvadClass::Ntss.index()));
    }

    #[test]
    fn cosine_ignores_positive_rescaling(
        a in prop::collection::vec(-1.0f32..1.0, 8),
        b in prop::collection::vec(-1.0f32..1.0, 8),
        ka in 0.01f32..100.0,
        kb in 0.01f32..100.0,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let plain = cosine_similarity(&SpeakerEmbedding::new(&a).unwrap(), &SpeakerEmbedding::new(&b).unwrap());
        let sa: Vec<f32> = a.iter().map(|v| v * ka).collect();
        let sb: Vec<f32> = b.iter().map(|v| v * kb).collect();
        let scaled = cosine_similarity(&SpeakerEmbedding::new(&sa).unwrap(), &SpeakerEmbedding::new(&sb).unwrap());
        prop_assert!((plain - scaled).abs() < 1e-6);
    }

    #[test]
    fn apc_targets_are_clean_frames_n_ahead(t in 2usize..30, n in 1usize..5, seed in any::<u64>()) {
        prop_assume!(t > n);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let clean = Array2::from_shape_fn((t, 3), |_| rand::Rng::random_range(&mut r, -1.0f32..1.0));
        let noisy = clean.mapv(|v| v + 0.5);
        let pair = make_apc_pairs(clean.view(), Some(noisy.view()), n).unwrap();
        prop_assert_eq!(pair.len(), t - n);
        for i in 0..t - n {
            prop_assert_eq!(pair.targets.row(i), clean.row(i + n));
            prop_assert_eq!(pair.inputs.row(i), noisy.row(i));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn louder_audio_never_lowers_log_mel(seed in any::<u64>(), g in 1.01f32..4.0) {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..2000).map(|_| rand::Rng::random_range(&mut r, -0.2f32..0.2)).collect();
        let lm = LogMel::new(&feat()).unwrap();
        let base = lm.compute(&AudioBuffer::new(x.clone(), 16_000).unwrap(), "").unwrap();
        let loud = lm.compute(&AudioBuffer::new(x.iter().map(|v| v * g).collect(), 16_000).unwrap(), "").unwrap();
        let floor = feat().floor_value();
        for (a, b) in base.frames.iter().zip(loud.frames.iter()) {
            if *a > floor {
                prop_assert!(b >= a);
            }
        }
        let again = lm.compute(&AudioBuffer::new(x, 16_000).unwrap(), "").unwrap();
        prop_assert_eq!(base, again);
    }

    #[test]
    fn apc_prediction_is_causal(seed in any::<u64>(), t in 3usize..20, k in 1usize..19) {
        prop_assume!(k < t);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let model = ApcModel::<f64>::init(4, 5, 2, 1, &mut r).unwrap();
        let x = Array2::from_shape_fn((t, 4), |_| rand::Rng::random_range(&mut r, -1.0..1.0));
        let mut y = x.clone();
        y.row_mut(k).mapv_inplace(|v| v + 1.0);
        let (px, py) = (model.predict(x.view()).unwrap(), model.predict(y.view()).unwrap());
        for i in 0..k {
            prop_assert_eq!(px.row(i), py.row(i));
        }
        prop_assert_ne!(px.row(k), py.row(k));
    }
}

struct Fixture {
    pool: Vec<Utterance>,
    bank: NoiseBank,
    rirs: RirPool,
    mtr: MtrConfig,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let seeds = SeedStreams::new(3);
        let synth = SynthConfig {
            min_utterance_s: 1.0,
            max_utterance_s: 2.0,
            ..SynthConfig::default()
        };
        let pool = synth_corpus(4, 3, &synth, &feat(), &seeds).unwrap();
        let speech: Vec<&[f32]> = pool.iter().map(|u| u.audio.samples.as_slice()).collect();
        let psd = average_power_spectrum(&speech, 512);
        let mtr = MtrConfig {
            rir_pool_size: 3,
            ..MtrConfig::default()
        };
        let types: Vec<&str> = mtr.noise_types.iter().map(String::as_str).collect();
        let bank = NoiseBank::synthetic(&types, 1, 2.0, 16_000, &psd, &seeds.child("noise", 0)).unwrap();
        let rirs = RirPool::synthetic(&mtr, 16_000, &seeds.child("rir", 0));
        Fixture { pool, bank, rirs, mtr }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mixtures_tile_and_augmentation_keeps_labels(seed in any::<u64>()) {
        let f = fixture();
        let mut r = SeedStreams::new(seed).rng("mix", 0);
        let u = make_multispeaker(&f.pool, "m".into(), &feat(), &mut r).unwrap();
        prop_assert!(u.validate(&feat()).is_ok());
        // tss only inside the target's segment, and only on its speech frames
        let target = u.segments.iter().find(|s| s.speaker_id == u.target_speaker_id).unwrap();
        let source = f.pool.iter().find(|p| p.id == target.source_id).unwrap();
        for (t, &l) in u.labels.iter().enumerate() {
            if l == PvadClass::Tss {
                prop_assert!(t >= target.start_frame && t < target.end_frame);
                prop_assert!(source.speech[t - target.start_frame]);
            }
        }
        let (aug, _) = mtr_augment(&u, &f.mtr, &f.bank, &f.rirs, &mut r).unwrap();
        prop_assert_eq!(&aug.labels, &u.labels);
        prop_assert_eq!(&aug.segments, &u.segments);
        prop_assert_eq!(aug.audio.len(), u.audio.len());
        let mut r2 = SeedStreams::new(seed).rng("mix", 0);
        let again = make_multispeaker(&f.pool, "m".into(), &feat(), &mut r2).unwrap();
        let (aug2, _) = mtr_augment(&again, &f.mtr, &f.bank, &f.rirs, &mut r2).unwrap();
        prop_assert_eq!(aug, aug2);
    }
}
