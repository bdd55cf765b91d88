//! Corpus loading: RAVDESS filename metadata, WAV decoding, word alignments.
//!
//! Audio is always normalized to mono 16 kHz on load so that every
//! downstream frame computation shares one time base.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sample rate every loaded utterance is resampled to.
pub const TARGET_SAMPLE_RATE: u32 = 16_000;

/// Alignment ends may overshoot the decoded audio by rounding; anything
/// beyond this is rejected.
const SPAN_TOLERANCE_S: f64 = 1e-3;

const STATEMENTS: [&str; 2] = ["Kids are talking by the door", "Dogs are sitting by the door"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed RAVDESS name {name:?}: field {field}: {reason}")]
    MalformedName {
        name: String,
        field: usize,
        reason: &'static str,
    },
    #[error("cannot read audio file {path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}:{line}: invalid alignment record: {message}")]
    AlignmentRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate alignment for utterance {0}")]
    DuplicateAlignment(String),
    #[error("utterance {id}: {message}")]
    InvalidUtterance { id: String, message: String },
    #[error("utterance {id}: transcript words {transcript:?} do not match aligned words {aligned:?}")]
    TranscriptMismatch {
        id: String,
        transcript: Vec<String>,
        aligned: Vec<String>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The seven target classes. Neutral and calm recordings share one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionLabel {
    NeutralCalm,
    Happy,
    Sad,
    Angry,
    Fearful,
    Surprise,
    Disgust,
}

impl EmotionLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::NeutralCalm,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Angry,
        EmotionLabel::Fearful,
        EmotionLabel::Surprise,
        EmotionLabel::Disgust,
    ];

    /// Class index used by the classifier.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::NeutralCalm => "neutral_calm",
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Fearful => "fearful",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Disgust => "disgust",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Normal,
    Strong,
}

/// The eight elicited emotions encoded in the third filename field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RavdessEmotion {
    Neutral,
    Calm,
    Happy,
    Sad,
    Angry,
    Fearful,
    Disgust,
    Surprised,
}

impl RavdessEmotion {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Self::Neutral,
            2 => Self::Calm,
            3 => Self::Happy,
            4 => Self::Sad,
            5 => Self::Angry,
            6 => Self::Fearful,
            7 => Self::Disgust,
            8 => Self::Surprised,
            _ => return None,
        })
    }

    pub fn label(self) -> EmotionLabel {
        match self {
            Self::Neutral | Self::Calm => EmotionLabel::NeutralCalm,
            Self::Happy => EmotionLabel::Happy,
            Self::Sad => EmotionLabel::Sad,
            Self::Angry => EmotionLabel::Angry,
            Self::Fearful => EmotionLabel::Fearful,
            Self::Disgust => EmotionLabel::Disgust,
            Self::Surprised => EmotionLabel::Surprise,
        }
    }
}

/// The seven two-digit fields of a RAVDESS filename, kept as raw codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RavdessName {
    pub modality: u8,
    pub vocal_channel: u8,
    pub emotion_code: u8,
    pub intensity: u8,
    pub statement: u8,
    pub repetition: u8,
    pub actor: u8,
}

const FIELD_RANGES: [(u8, u8); 7] = [(1, 3), (1, 2), (1, 8), (1, 2), (1, 2), (1, 2), (1, 24)];

impl RavdessName {
    /// Parses `MM-VV-EE-II-SS-RR-AA.wav`. Errors carry the 1-based field index.
    pub fn parse(name: &str) -> Result<Self, CorpusError> {
        let err = |field, reason| CorpusError::MalformedName {
            name: name.to_string(),
            field,
            reason,
        };
        let stem = name.strip_suffix(".wav").ok_or_else(|| err(7, "missing .wav extension"))?;
        let parts: Vec<&str> = stem.split('-').collect();
        if parts.len() != 7 {
            return Err(err(parts.len().min(7) + usize::from(parts.len() < 7), "expected 7 hyphen-separated fields"));
        }
        let mut codes = [0u8; 7];
        for (i, part) in parts.iter().enumerate() {
            if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(i + 1, "not a two-digit code"));
            }
            let code: u8 = part.parse().map_err(|_| err(i + 1, "not a two-digit code"))?;
            let (lo, hi) = FIELD_RANGES[i];
            if code < lo || code > hi {
                return Err(err(i + 1, "code out of range"));
            }
            codes[i] = code;
        }
        Ok(Self {
            modality: codes[0],
            vocal_channel: codes[1],
            emotion_code: codes[2],
            intensity: codes[3],
            statement: codes[4],
            repetition: codes[5],
            actor: codes[6],
        })
    }

    pub fn is_speech(&self) -> bool {
        self.vocal_channel == 1
    }

    pub fn emotion(&self) -> RavdessEmotion {
        RavdessEmotion::from_code(self.emotion_code).expect("validated on parse")
    }

    pub fn label(&self) -> EmotionLabel {
        self.emotion().label()
    }

    pub fn sex(&self) -> Sex {
        if self.actor % 2 == 1 {
            Sex::Male
        } else {
            Sex::Female
        }
    }

    pub fn intensity(&self) -> Intensity {
        if self.intensity == 1 {
            Intensity::Normal
        } else {
            Intensity::Strong
        }
    }

    pub fn transcript(&self) -> &'static str {
        STATEMENTS[usize::from(self.statement) - 1]
    }

    /// Filename without the `.wav` extension; doubles as the utterance id.
    pub fn stem(&self) -> String {
        format!(
            "{:02}-{:02}-{:02}-{:02}-{:02}-{:02}-{:02}",
            self.modality,
            self.vocal_channel,
            self.emotion_code,
            self.intensity,
            self.statement,
            self.repetition,
            self.actor
        )
    }
}

impl fmt::Display for RavdessName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.wav", self.stem())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordAlignment {
    #[serde(rename = "w")]
    pub text: String,
    #[serde(rename = "s")]
    pub start_s: f64,
    #[serde(rename = "e")]
    pub end_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: String,
    pub words: Vec<WordAlignment>,
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: u32,
    pub speaker_sex: Sex,
    pub emotion: EmotionLabel,
    pub intensity: Intensity,
    pub transcript: String,
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
    pub words: Vec<WordAlignment>,
}

impl Utterance {
    /// Builds an utterance from a parsed name, mono samples at
    /// [`TARGET_SAMPLE_RATE`], and its alignment, enforcing every invariant.
    pub fn new(
        name: &RavdessName,
        samples: Vec<f32>,
        mut words: Vec<WordAlignment>,
    ) -> Result<Self, CorpusError> {
        let id = name.stem();
        let duration = samples.len() as f64 / f64::from(TARGET_SAMPLE_RATE);
        let invalid = |message: String| CorpusError::InvalidUtterance {
            id: id.clone(),
            message,
        };
        let mut prev_end = 0.0f64;
        for (i, w) in words.iter_mut().enumerate() {
            if !(w.start_s.is_finite() && w.end_s.is_finite()) || w.start_s < 0.0 {
                return Err(invalid(format!("word {i} ({:?}) has an invalid span", w.text)));
            }
            if w.end_s <= w.start_s {
                return Err(invalid(format!("word {i} ({:?}) has non-positive length", w.text)));
            }
            if w.start_s < prev_end {
                return Err(invalid(format!("word {i} ({:?}) overlaps its predecessor", w.text)));
            }
            if w.end_s > duration + SPAN_TOLERANCE_S {
                return Err(invalid(format!(
                    "word {i} ({:?}) ends at {} s beyond duration {duration} s",
                    w.text, w.end_s
                )));
            }
            w.end_s = w.end_s.min(duration);
            if w.end_s <= w.start_s {
                return Err(invalid(format!("word {i} ({:?}) starts at the end of the audio", w.text)));
            }
            prev_end = w.end_s;
        }
        let transcript = name.transcript().to_string();
        check_transcript(&id, &transcript, &words)?;
        Ok(Self {
            id,
            speaker_id: u32::from(name.actor),
            speaker_sex: name.sex(),
            emotion: name.label(),
            intensity: name.intensity(),
            transcript,
            samples,
            sample_rate_hz: TARGET_SAMPLE_RATE,
            words,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }
}

/// Lowercase and drop everything that is not alphanumeric.
pub fn normalize_word(word: &str) -> String {
    word.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Normalized transcript words; chunks with no alphanumerics are dropped.
pub fn transcript_words(transcript: &str) -> Vec<String> {
    transcript
        .split_whitespace()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .collect()
}

fn check_transcript(id: &str, transcript: &str, words: &[WordAlignment]) -> Result<(), CorpusError> {
    let expected = transcript_words(transcript);
    let aligned: Vec<String> = words.iter().map(|w| normalize_word(&w.text)).collect();
    if expected != aligned {
        return Err(CorpusError::TranscriptMismatch {
            id: id.to_string(),
            transcript: expected,
            aligned,
        });
    }
    Ok(())
}

/// Reads a line-per-record alignment file into a map keyed by utterance id.
pub fn read_alignments(path: &Path) -> Result<HashMap<String, Vec<WordAlignment>>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AlignmentRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::AlignmentRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if out.insert(record.id.clone(), record.words).is_some() {
            return Err(CorpusError::DuplicateAlignment(record.id));
        }
    }
    Ok(out)
}

/// Decodes a WAV file into mono samples in [-1, 1] plus its native rate.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f32>, u32), CorpusError> {
    let audio_err = |source| CorpusError::Audio {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(audio_err)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(audio_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(audio_err)?
        }
    };
    let channels = usize::from(spec.channels.max(1));
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| c.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Ok((mono, spec.sample_rate))
}

/// Writes mono 16-bit PCM.
pub fn write_wav_mono(path: &Path, samples: &[f32], sample_rate: u32) -> Result<(), CorpusError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let audio_err = |source| CorpusError::Audio {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(audio_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(audio_err)?;
    }
    writer.finalize().map_err(audio_err)
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    if from_hz == to_hz || samples.is_empty() {
        return samples.to_vec();
    }
    let ratio = f64::from(from_hz) / f64::from(to_hz);
    let out_len = ((samples.len() as f64) / ratio).round() as usize;
    let last = samples.len() - 1;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let idx = (pos.floor() as usize).min(last);
            let frac = (pos - idx as f64) as f32;
            let next = (idx + 1).min(last);
            samples[idx] + (samples[next] - samples[idx]) * frac
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct CorpusLoad {
    pub utterances: Vec<Utterance>,
    /// Audio ids with no alignment record.
    pub excluded: Vec<String>,
    /// Song-channel files skipped by the speech-only filter.
    pub non_speech: usize,
}

/// Loads every speech-channel `.wav` in `audio_dir` (sorted by name) and
/// attaches its alignment.
pub fn load_corpus(audio_dir: &Path, alignments: &Path) -> Result<CorpusLoad, CorpusError> {
    let aligned = read_alignments(alignments)?;
    let mut names = Vec::new();
    for entry in fs::read_dir(audio_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("wav") {
            continue;
        }
        let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        names.push((RavdessName::parse(&file_name)?, path));
    }
    names.sort_by(|a, b| a.1.cmp(&b.1));

    let mut load = CorpusLoad::default();
    let mut todo = Vec::new();
    for (name, path) in names {
        if !name.is_speech() {
            load.non_speech += 1;
            continue;
        }
        match aligned.get(&name.stem()) {
            Some(words) => todo.push((name, path, words.clone())),
            None => load.excluded.push(name.stem()),
        }
    }
    load.utterances = todo
        .into_par_iter()
        .map(|(name, path, words)| {
            let (samples, rate) = read_wav_mono(&path)?;
            let samples = resample_linear(&samples, rate, TARGET_SAMPLE_RATE);
            Utterance::new(&name, samples, words)
        })
        .collect::<Result<_, _>>()?;

    if load.utterances.is_empty() {
        log::warn!("no utterances loaded from {}", audio_dir.display());
    }
    if !load.excluded.is_empty() {
        log::warn!("{} audio files have no alignment and were excluded", load.excluded.len());
    }
    log::info!("loaded {} utterances", load.utterances.len());
    Ok(load)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fearful_female() {
        let n = RavdessName::parse("03-01-06-01-02-01-12.wav").unwrap();
        assert_eq!(n.emotion_code, 6);
        assert_eq!(n.emotion(), RavdessEmotion::Fearful);
        assert_eq!(n.actor, 12);
        assert_eq!(n.sex(), Sex::Female);
        assert_eq!(n.transcript(), "Dogs are sitting by the door");
    }

    #[test]
    fn neutral_and_calm_merge() {
        let neutral = RavdessName::parse("03-01-01-01-01-01-01.wav").unwrap();
        assert_eq!(neutral.label(), EmotionLabel::NeutralCalm);
        assert_eq!(neutral.sex(), Sex::Male);
        assert_eq!(neutral.actor, 1);
        let calm = RavdessName::parse("03-01-02-01-01-01-02.wav").unwrap();
        assert_eq!(calm.label(), EmotionLabel::NeutralCalm);
    }

    #[test]
    fn rejects_with_field_index() {
        let field = |name: &str| match RavdessName::parse(name) {
            Err(CorpusError::MalformedName { field, .. }) => field,
            other => panic!("expected rejection, got {other:?}"),
        };
        assert_eq!(field("03-01-09-01-02-01-12.wav"), 3);
        assert_eq!(field("03-01-06-01-02-01-25.wav"), 7);
        assert_eq!(field("03-01-06-01-02-01-12.mp3"), 7);
        assert_eq!(field("3-01-06-01-02-01-12.wav"), 1);
        assert_eq!(field("03-01-06-01-02-01.wav"), 7);
        assert_eq!(field("03-01-06-0x-02-01-12.wav"), 4);
    }

    #[test]
    fn naming_table_has_seven_labels() {
        let labels: std::collections::BTreeSet<_> =
            (1..=8).map(|c| RavdessEmotion::from_code(c).unwrap().label()).collect();
        assert_eq!(labels.len(), EmotionLabel::COUNT);
        assert!(RavdessEmotion::from_code(0).is_none());
        assert!(RavdessEmotion::from_code(9).is_none());
    }

    #[test]
    fn resample_preserves_duration_and_ramp() {
        let ramp: Vec<f32> = (0..48_000).map(|i| i as f32 / 48_000.0).collect();
        let out = resample_linear(&ramp, 48_000, 16_000);
        assert_eq!(out.len(), 16_000);
        for (i, v) in out.iter().enumerate().take(15_999) {
            assert!((v - (3 * i) as f32 / 48_000.0).abs() < 1e-5);
        }
    }

    fn words(spec: &[(&str, f64, f64)]) -> Vec<WordAlignment> {
        spec.iter()
            .map(|&(w, s, e)| WordAlignment {
                text: w.into(),
                start_s: s,
                end_s: e,
            })
            .collect()
    }

    #[test]
    fn utterance_invariants() {
        let name = RavdessName::parse("03-01-03-01-01-01-05.wav").unwrap();
        let ok = words(&[
            ("Kids", 0.1, 0.3),
            ("are", 0.3, 0.4),
            ("talking", 0.45, 0.8),
            ("by", 0.8, 0.9),
            ("the", 0.9, 1.0),
            ("door.", 1.0, 1.4),
        ]);
        let utt = Utterance::new(&name, vec![0.0; 24_000], ok.clone()).unwrap();
        assert_eq!(utt.emotion, EmotionLabel::Happy);
        assert_eq!(utt.speaker_sex, Sex::Male);

        let mut overlap = ok.clone();
        overlap[2].start_s = 0.35;
        assert!(Utterance::new(&name, vec![0.0; 24_000], overlap).is_err());

        let mut late = ok.clone();
        late[5].end_s = 1.6;
        assert!(Utterance::new(&name, vec![0.0; 24_000], late).is_err());

        let mut wrong = ok.clone();
        wrong[0].text = "Dogs".into();
        assert!(matches!(
            Utterance::new(&name, vec![0.0; 24_000], wrong),
            Err(CorpusError::TranscriptMismatch { .. })
        ));

        let short = ok[..5].to_vec();
        assert!(Utterance::new(&name, vec![0.0; 24_000], short).is_err());
    }

    #[test]
    fn normalization_ignores_case_and_punctuation() {
        assert_eq!(transcript_words("Kids are talking by the door."), ["kids", "are", "talking", "by", "the", "door"]);
        assert_eq!(normalize_word("DOOR!"), "door");
    }
}
