use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surpsel_core::acoustics::{pool_functionals, pool_functionals_all, AcousticsConfig, LldExtractor};
use surpsel_core::embeddings::{pool_all, pool_mean_std, FrameEmbeddings};
use surpsel_core::selection::{select_full_utterance, Mode, SpanSelection};
use surpsel_core::sfv::SfvMatrix;

fn random_audio(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = rng.gen_range(400..24_000);
    let f0 = rng.gen_range(80.0..400.0);
    let gain = rng.gen_range(0.0..0.5);
    (0..n)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            (gain * (2.0 * std::f64::consts::PI * f0 * t).sin() + rng.gen_range(-0.01..0.01)) as f32
        })
        .collect()
}

fn random_embeddings(rng: &mut ChaCha8Rng, duration: f64) -> FrameEmbeddings {
    let hop = 0.02;
    let offset = 0.01;
    let n_frames = ((duration - offset) / hop).floor().max(0.0) as usize + 1;
    let dim = rng.gen_range(1..20);
    FrameEmbeddings {
        utterance_id: "u".into(),
        matrix: SfvMatrix {
            n_frames,
            dim,
            hop_s: hop,
            offset_s: offset,
            data: (0..n_frames * dim).map(|_| rng.gen_range(-3.0f32..3.0)).collect(),
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn full_span_equals_unselected(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio = random_audio(&mut rng);
        let duration = audio.len() as f64 / 16_000.0;
        let lld = LldExtractor::new(&AcousticsConfig::default(), 16_000).extract("u", &audio).quantized();
        let full = select_full_utterance("u", duration, 6);
        let a = pool_functionals(&lld, &full).unwrap();
        let b = pool_functionals_all(&lld).unwrap();
        prop_assert_eq!(a.vector.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.vector.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.vector.0.len(), 35);

        let emb = random_embeddings(&mut rng, duration);
        let a = pool_mean_std(&emb, &full).unwrap();
        let b = pool_all(&emb).unwrap();
        prop_assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.0.len(), 2 * emb.dim());
    }

    #[test]
    fn pooled_mean_lies_within_selected_frames(seed in any::<u64>(), s in 0.0f64..0.5, len in 0.03f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = random_embeddings(&mut rng, 1.0);
        let sel = SpanSelection {
            utterance_id: "u".into(),
            criterion: None,
            mode: Mode::TopN,
            n: 1,
            spans: vec![(s, s + len)],
            clamped: false,
        };
        let pooled = pool_mean_std(&emb, &sel).unwrap();
        let inside: Vec<usize> = (0..emb.n_frames()).filter(|&i| {
            let c = emb.frame_center(i);
            s <= c && c <= s + len
        }).collect();
        for d in 0..emb.dim() {
            let col: Vec<f64> = inside.iter().map(|&i| f64::from(emb.matrix.row(i)[d])).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pooled.0[d] >= lo - 1e-9 && pooled.0[d] <= hi + 1e-9);
            prop_assert!(pooled.0[emb.dim() + d] >= 0.0);
            prop_assert!(pooled.0[emb.dim() + d] <= (hi - lo) / 2.0 + 1e-9);
        }
    }
}
