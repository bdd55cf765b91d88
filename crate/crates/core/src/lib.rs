//! Word-informativeness segment selection for speech emotion recognition.
//!
//! The pipeline scores every word of an utterance by how unpredictable it is
//! (unigram surprisal, language-model surprisal, or normalized token rank),
//! selects the time spans of the most informative words, pools acoustic
//! functionals and frame embeddings over just those spans, and evaluates an
//! emotion classifier under speaker-disjoint cross-validation.
//!
//! Module map:
//!
//! - [`corpus`]: RAVDESS file naming, WAV loading, word alignments.
//! - [`informativeness`]: unigram model, token-to-word surprisal and rank.
//! - [`selection`]: top-n / independent-n / full-utterance span selection.
//! - [`acoustics`]: frame-level descriptors and masked functional pooling.
//! - [`embeddings`]: SFV1 frame-embedding files and mean/std pooling.
//! - [`model`]: the feed-forward classifier, Adam, checkpoints.
//! - [`eval`]: folds, metrics, the experiment grid and report files.
//! - [`pipeline`]: run configuration and cached end-to-end stages.

pub mod acoustics;
pub mod corpus;
pub mod embeddings;
pub mod eval;
pub mod informativeness;
pub mod model;
pub mod pipeline;
pub mod pooling;
pub mod selection;
pub mod sfv;
pub mod synth;

pub use corpus::{EmotionLabel, Sex, Utterance, WordAlignment};
pub use informativeness::{TokenScore, UnigramModel, WordInfo};
pub use selection::{Criterion, Mode, SpanSelection};
