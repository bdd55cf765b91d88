//! Synthetic smoke corpus: RAVDESS-named WAVs with emotion-dependent voiced
//! words, alignments, a counts file, token scores and frame embeddings.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{self, AlignmentRecord, RavdessName, WordAlignment};
use crate::informativeness::{TokenScore, TokenScoreRecord};
use crate::sfv::{SfvError, SfvMatrix};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("speaker count must be even and between 2 and 24, got {0}")]
    Speakers(u32),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Sfv(#[from] SfvError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokeSpec {
    pub speakers: u32,
    /// Emotion codes 1..=8 are all written; this many repetitions each.
    pub repetitions: u8,
    pub seed: u64,
    pub sample_rate: u32,
    pub embedding_dim: usize,
    pub embedding_hop_s: f64,
    pub embedding_offset_s: f64,
    pub token_scores: bool,
    pub embeddings: bool,
}

impl Default for SmokeSpec {
    fn default() -> Self {
        Self {
            speakers: 24,
            repetitions: 1,
            seed: 7,
            sample_rate: 16_000,
            embedding_dim: 16,
            embedding_hop_s: 0.02,
            embedding_offset_s: 0.01,
            token_scores: true,
            embeddings: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmokePaths {
    pub audio_dir: PathBuf,
    pub alignments: PathBuf,
    pub counts_file: PathBuf,
    pub token_scores: Option<PathBuf>,
    pub embeddings_dir: Option<PathBuf>,
    pub utterances: usize,
}

pub const VOCAB_SIZE: u64 = 50_257;

const COUNTS: &str = "the\t61847\nby\t5096\nare\t4394\ndoor\t312\ntalking\t180\nsitting\t154\ndogs\t96\nkids\t88\n";

const LEAD_S: f64 = 0.12;
const GAP_S: f64 = 0.04;

fn word_duration(word: &str) -> f64 {
    0.14 + 0.025 * word.len() as f64
}

/// Word boundaries for a transcript laid out with fixed pauses.
pub fn layout(transcript: &str) -> (Vec<WordAlignment>, f64) {
    let mut t = LEAD_S;
    let words = transcript
        .split_whitespace()
        .map(|w| {
            let start = t;
            let end = start + word_duration(w);
            t = end + GAP_S;
            WordAlignment {
                text: w.to_string(),
                start_s: (start * 1000.0).round() / 1000.0,
                end_s: (end * 1000.0).round() / 1000.0,
            }
        })
        .collect();
    (words, t - GAP_S + LEAD_S)
}

fn render(words: &[WordAlignment], duration_s: f64, sr: u32, label: usize, male: bool, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = (duration_s * sr as f64).round() as usize;
    let mut out: Vec<f32> = (0..n).map(|_| rng.gen_range(-2e-5..2e-5)).collect();
    let base = (95.0 + 22.0 * label as f64) * if male { 1.0 } else { 1.55 } * rng.gen_range(0.97..1.03);
    let amp = 0.08 + 0.035 * label as f64;
    // Brighter spectra for higher labels.
    let rolloff = 0.35 + 0.08 * label as f64;
    for (wi, w) in words.iter().enumerate() {
        let s = (w.start_s * sr as f64) as usize;
        let e = ((w.end_s * sr as f64) as usize).min(n);
        let glide = 1.0 + 0.04 * ((wi % 3) as f64 - 1.0);
        let mut phase = 0.0f64;
        for i in s..e {
            let t = (i - s) as f64 / (e - s) as f64;
            let env = (std::f64::consts::PI * t).sin().powf(0.5);
            let f0 = base * glide * (1.0 + 0.05 * (1.0 - t));
            phase += 2.0 * std::f64::consts::PI * f0 / sr as f64;
            let mut v = 0.0;
            let mut h = 1.0;
            let mut k = 1.0;
            while k * f0 < 0.45 * sr as f64 && k <= 12.0 {
                v += h * (k * phase).sin();
                h *= rolloff;
                k += 1.0;
            }
            out[i] += (amp * env * v + rng.gen_range(-0.004..0.004)) as f32;
        }
    }
    out
}

/// Tokens that mimic a byte-pair tokenizer: leading-space tokens, with long
/// words split in two. Scores depend only on the text.
pub fn tokenize(transcript: &str) -> Vec<TokenScore> {
    let mut tokens = Vec::new();
    let mut offset = 0;
    for (i, word) in transcript.split(' ').enumerate() {
        let start = if i == 0 { offset } else { offset - 1 };
        let end = offset + word.chars().count();
        let mut pieces = vec![(start, end)];
        if word.len() > 5 {
            let cut = end - 3;
            pieces = vec![(start, cut), (cut, end)];
        }
        for (cs, ce) in pieces {
            let text: String = transcript.chars().skip(cs).take(ce - cs).collect();
            let h = text.bytes().fold(cs as u64 * 31 + 17, |a, b| a.wrapping_mul(131).wrapping_add(b as u64));
            let bits = 1.0 + (h % 997) as f64 / 997.0 * 12.0;
            let lp = -bits * std::f64::consts::LN_2;
            let rank = ((bits.exp2() / 4.0).round() as u64).clamp(1, VOCAB_SIZE);
            tokens.push(TokenScore {
                text,
                char_start: cs,
                char_end: ce,
                logprob_e: lp,
                rank,
                vocab_size: VOCAB_SIZE,
            });
        }
        offset = end + 1;
    }
    tokens
}

fn embedding_frames(
    words: &[WordAlignment],
    duration_s: f64,
    spec: &SmokeSpec,
    label: usize,
    rng: &mut ChaCha8Rng,
) -> SfvMatrix {
    let n_frames = ((duration_s - spec.embedding_offset_s) / spec.embedding_hop_s).floor() as usize + 1;
    let dim = spec.embedding_dim;
    let mut data = Vec::with_capacity(n_frames * dim);
    for i in 0..n_frames {
        let t = spec.embedding_offset_s + i as f64 * spec.embedding_hop_s;
        let in_word = words.iter().any(|w| w.start_s <= t && t <= w.end_s);
        for d in 0..dim {
            let proto = if in_word && d % 7 == label { 1.0 } else { 0.0 };
            data.push((proto + rng.gen_range(-0.6..0.6)) as f32);
        }
    }
    SfvMatrix {
        n_frames,
        dim,
        hop_s: spec.embedding_hop_s,
        offset_s: spec.embedding_offset_s,
        data,
    }
}

/// Writes the corpus under `dir` and returns where each artifact went.
pub fn write_smoke_corpus(dir: &Path, spec: &SmokeSpec) -> Result<SmokePaths, SynthError> {
    if spec.speakers < 2 || spec.speakers > 24 || spec.speakers % 2 == 1 {
        return Err(SynthError::Speakers(spec.speakers));
    }
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir)?;
    let embeddings_dir = dir.join("embeddings");
    if spec.embeddings {
        fs::create_dir_all(&embeddings_dir)?;
    }
    let mut alignments = BufWriter::new(fs::File::create(dir.join("alignments.jsonl"))?);
    let mut scores = if spec.token_scores {
        Some(BufWriter::new(fs::File::create(dir.join("token_scores.jsonl"))?))
    } else {
        None
    };
    let mut count = 0;
    for actor in 1..=spec.speakers as u8 {
        for emotion_code in 1..=8u8 {
            for repetition in 1..=spec.repetitions.clamp(1, 2) {
                let name = RavdessName {
                    modality: 3,
                    vocal_channel: 1,
                    emotion_code,
                    intensity: 1,
                    statement: 1 + (emotion_code + actor) % 2,
                    repetition,
                    actor,
                };
                let id = name.stem();
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (count as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let transcript = name.transcript();
                let (words, duration) = layout(transcript);
                let label = name.label().index();
                let samples = render(&words, duration, spec.sample_rate, label, actor % 2 == 1, &mut rng);
                corpus::write_wav_mono(&audio_dir.join(name.to_string()), &samples, spec.sample_rate)?;
                serde_json::to_writer(
                    &mut alignments,
                    &AlignmentRecord {
                        id: id.clone(),
                        words: words.clone(),
                    },
                )?;
                alignments.write_all(b"\n")?;
                if let Some(out) = scores.as_mut() {
                    serde_json::to_writer(
                        &mut *out,
                        &TokenScoreRecord {
                            id: id.clone(),
                            text: transcript.to_string(),
                            tokens: tokenize(transcript),
                        },
                    )?;
                    out.write_all(b"\n")?;
                }
                if spec.embeddings {
                    embedding_frames(&words, duration, spec, label, &mut rng).write(&embeddings_dir.join(format!("{id}.sfv")))?;
                }
                count += 1;
            }
        }
    }
    alignments.flush()?;
    if let Some(mut out) = scores {
        out.flush()?;
    }
    let counts_file = dir.join("counts.tsv");
    fs::write(&counts_file, COUNTS)?;
    Ok(SmokePaths {
        audio_dir,
        alignments: dir.join("alignments.jsonl"),
        counts_file,
        token_scores: spec.token_scores.then(|| dir.join("token_scores.jsonl")),
        embeddings_dir: spec.embeddings.then_some(embeddings_dir),
        utterances: count,
    })
}
