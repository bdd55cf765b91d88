use proptest::prelude::*;
use surpsel_core::acoustics::{estimate_f0, frame_signal, hann, AcousticsConfig, LldExtractor, SpectralAnalyzer, COL_F0_LOG};

const SR: u32 = 16_000;

fn sawtooth(f0: f64, seconds: f64) -> Vec<f32> {
    (0..(seconds * SR as f64) as usize)
        .map(|i| {
            let phase = (i as f64 * f0 / SR as f64).fract();
            (0.5 * (2.0 * phase - 1.0)) as f32
        })
        .collect()
}

fn tone(hz: f64, n: usize, gain: f64) -> Vec<f64> {
    (0..n).map(|i| gain * (2.0 * std::f64::consts::PI * hz * i as f64 / SR as f64).sin()).collect()
}

#[test]
fn sawtooth_sweep_within_three_percent() {
    let cfg = AcousticsConfig::default();
    for f0 in [80.0, 120.0, 165.0, 220.0, 310.0, 440.0] {
        let frames = frame_signal(&sawtooth(f0, 0.5), SR);
        let mut voiced = 0;
        for fr in &frames {
            let est = estimate_f0(&fr.raw, SR, &cfg).f0_hz.expect("voiced");
            assert!((est - f0).abs() / f0 < 0.03, "{f0} Hz estimated as {est}");
            voiced += 1;
        }
        assert_eq!(voiced, frames.len());
    }
}

#[test]
fn extracted_f0_column_is_log_pitch() {
    let series = LldExtractor::new(&AcousticsConfig::default(), SR).extract("u", &sawtooth(120.0, 0.3));
    for i in 0..series.n_frames() {
        assert!(series.voiced[i]);
        let hz = 27.5 * series.row(i)[COL_F0_LOG].exp2();
        assert!((hz - 120.0).abs() < 3.6);
    }
}

#[test]
fn tone_centroid_sweep() {
    let an = SpectralAnalyzer::new(&AcousticsConfig::default(), SR);
    let w = hann(400);
    for hz in [300.0, 1000.0, 2500.0, 5000.0] {
        let frame: Vec<f64> = tone(hz, 400, 0.3).iter().zip(&w).map(|(s, w)| s * w).collect();
        let c = an.centroid(&an.magnitude(&frame));
        assert!((c - hz).abs() / hz < 0.05, "{hz} Hz centroid {c}");
    }
}

#[test]
fn flat_and_constant_spectra() {
    let cfg = AcousticsConfig::default();
    let an = SpectralAnalyzer::new(&cfg, SR);
    for level in [1e-3, 1.0, 250.0] {
        assert!(an.tilt(&vec![level; cfg.fft_size / 2 + 1]).abs() < 1e-6);
        let mfcc = an.mfcc_from_log_mel(&vec![level.ln(); cfg.n_mel]);
        assert_eq!(mfcc.len(), 13);
        assert!(mfcc.iter().all(|c| c.abs() < 1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gain_only_moves_c0(hz in 100.0f64..6000.0, gain in 0.01f64..20.0, noise_seed in 0u64..1000) {
        let cfg = AcousticsConfig::default();
        let an = SpectralAnalyzer::new(&cfg, SR);
        let w = hann(400);
        let base: Vec<f64> = tone(hz, 400, 0.1)
            .iter()
            .enumerate()
            .map(|(i, s)| s + 1e-3 * (((i as u64 * 2654435761 + noise_seed) % 1000) as f64 / 1000.0 - 0.5))
            .zip(&w)
            .map(|(s, w)| s * w)
            .collect();
        let scaled: Vec<f64> = base.iter().map(|s| s * gain).collect();
        let a = an.describe(&base).mfcc;
        let b = an.describe(&scaled).mfcc;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }
}
