//! Word ordering by informativeness and span selection.
//!
//! `top_n` keeps the spans of the `n` most informative words and emits them
//! in temporal order. `independent_n` keeps only the word at ordered
//! position `n`. `full_utterance` is the baseline single span `[0, duration]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::informativeness::WordInfo;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("utterance has no words")]
    NoWords,
    #[error("word {index} has no {criterion} score")]
    Unscored { index: usize, criterion: Criterion },
    #[error("position unavailable: n = {n} but only {words} words")]
    PositionUnavailable { n: usize, words: usize },
    #[error("n must be at least 1")]
    ZeroN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    UnigramSr,
    LlmSr,
    Rank,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::UnigramSr, Criterion::LlmSr, Criterion::Rank];

    /// Larger is more informative for every criterion.
    pub fn value(self, word: &WordInfo) -> Option<f64> {
        match self {
            Criterion::UnigramSr => Some(word.unigram_surprisal_bits),
            Criterion::LlmSr => word.llm.map(|l| l.surprisal_bits),
            Criterion::Rank => word.llm.map(|l| l.norm_rank),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::UnigramSr => "unigram_sr",
            Criterion::LlmSr => "llm_sr",
            Criterion::Rank => "rank",
        }
    }

    pub fn needs_language_model(self) -> bool {
        !matches!(self, Criterion::UnigramSr)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown criterion {s:?} (expected unigram_sr, llm_sr or rank)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TopN,
    IndependentN,
    #[serde(alias = "baseline")]
    FullUtterance,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TopN => "top_n",
            Mode::IndependentN => "independent_n",
            Mode::FullUtterance => "full_utterance",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top_n" | "top" => Ok(Mode::TopN),
            "independent_n" | "ind" => Ok(Mode::IndependentN),
            "full_utterance" | "baseline" => Ok(Mode::FullUtterance),
            _ => Err(format!(
                "unknown mode {s:?} (expected top_n, independent_n or baseline)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanSelection {
    #[serde(rename = "id")]
    pub utterance_id: String,
    /// `None` for the full-utterance baseline.
    pub criterion: Option<Criterion>,
    pub mode: Mode,
    pub n: usize,
    pub spans: Vec<(f64, f64)>,
    /// Set when top-n asked for more words than the utterance has.
    #[serde(default)]
    pub clamped: bool,
}

/// Word indices from most to least informative; ties keep temporal order.
pub fn rank_words(words: &[WordInfo], criterion: Criterion) -> Result<Vec<usize>, SelectionError> {
    if words.is_empty() {
        return Err(SelectionError::NoWords);
    }
    let values = words
        .iter()
        .enumerate()
        .map(|(index, w)| criterion.value(w).ok_or(SelectionError::Unscored { index, criterion }))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(order)
}

pub fn select_top_n(
    utterance_id: &str,
    words: &[WordInfo],
    criterion: Criterion,
    n: usize,
) -> Result<SpanSelection, SelectionError> {
    if n == 0 {
        return Err(SelectionError::ZeroN);
    }
    let order = rank_words(words, criterion)?;
    let take = n.min(words.len());
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    Ok(SpanSelection {
        utterance_id: utterance_id.to_string(),
        criterion: Some(criterion),
        mode: Mode::TopN,
        n,
        spans: chosen.iter().map(|&i| (words[i].start_s, words[i].end_s)).collect(),
        clamped: take < n,
    })
}

pub fn select_independent_n(
    utterance_id: &str,
    words: &[WordInfo],
    criterion: Criterion,
    n: usize,
) -> Result<SpanSelection, SelectionError> {
    if n == 0 {
        return Err(SelectionError::ZeroN);
    }
    let order = rank_words(words, criterion)?;
    let &index = order.get(n - 1).ok_or(SelectionError::PositionUnavailable {
        n,
        words: words.len(),
    })?;
    Ok(SpanSelection {
        utterance_id: utterance_id.to_string(),
        criterion: Some(criterion),
        mode: Mode::IndependentN,
        n,
        spans: vec![(words[index].start_s, words[index].end_s)],
        clamped: false,
    })
}

pub fn select_full_utterance(utterance_id: &str, duration_s: f64, word_count: usize) -> SpanSelection {
    SpanSelection {
        utterance_id: utterance_id.to_string(),
        criterion: None,
        mode: Mode::FullUtterance,
        n: word_count,
        spans: vec![(0.0, duration_s)],
        clamped: false,
    }
}

/// Dispatches on `mode`; `criterion` and `n` are ignored for the baseline.
pub fn select(
    utterance_id: &str,
    words: &[WordInfo],
    duration_s: f64,
    criterion: Criterion,
    mode: Mode,
    n: usize,
) -> Result<SpanSelection, SelectionError> {
    match mode {
        Mode::TopN => select_top_n(utterance_id, words, criterion, n),
        Mode::IndependentN => select_independent_n(utterance_id, words, criterion, n),
        Mode::FullUtterance => Ok(select_full_utterance(utterance_id, duration_s, words.len())),
    }
}
