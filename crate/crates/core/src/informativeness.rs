//! Word informativeness: unigram surprisal, language-model surprisal
//! aggregated from subword tokens, and normalized rank.
//!
//! Token scores arrive as natural-log probabilities from an external
//! provider; they are converted to bits here and nowhere else.

use std::collections::HashMap;
use std::f64::consts::LN_2;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_word, WordAlignment};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("line {line}: {message}")]
    MalformedCounts { line: usize, message: String },
    #[error("line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },
    #[error("empty model")]
    EmptyModel,
    #[error("{path}:{line}: invalid token-score record: {message}")]
    TokenRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("token {index} ({text:?}): {message}")]
    InvalidToken {
        index: usize,
        text: String,
        message: String,
    },
    #[error("token {index} ({text:?}) span {start}..{end} lies outside the transcript of {len} characters")]
    TokenOutOfRange {
        index: usize,
        text: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("word {index} ({word:?}) received no tokens")]
    UntokenizedWord { index: usize, word: String },
    #[error("transcript {transcript:?} does not contain the aligned words {aligned:?}")]
    TranscriptMismatch {
        transcript: String,
        aligned: Vec<String>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word counts from a `word<TAB>count` file. Lookups are lowercased.
#[derive(Debug, Clone)]
pub struct UnigramModel {
    counts: HashMap<String, u64>,
    total: u64,
}

impl UnigramModel {
    pub fn from_counts_file(path: &Path) -> Result<Self, ScoreError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ScoreError> {
        let mut counts = HashMap::new();
        let mut total: u64 = 0;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: &str| ScoreError::MalformedCounts {
                line: line_no,
                message: message.to_string(),
            };
            let (word, count) = line.split_once('\t').ok_or_else(|| malformed("expected word<TAB>count"))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(malformed("empty word"));
            }
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| malformed("count is not a positive integer"))?;
            if count == 0 {
                return Err(malformed("count is not a positive integer"));
            }
            total = total.checked_add(count).ok_or_else(|| malformed("total count overflows"))?;
            if counts.insert(word.clone(), count).is_some() {
                return Err(ScoreError::DuplicateWord { line: line_no, word });
            }
        }
        if counts.is_empty() {
            return Err(ScoreError::EmptyModel);
        }
        Ok(Self { counts, total })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocab(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, word: &str) -> Option<u64> {
        self.counts.get(&word.to_lowercase()).copied()
    }

    /// `-log2(count/total)`; unseen words get `-log2(1/(total+1))`.
    pub fn surprisal_bits(&self, word: &str) -> f64 {
        match self.count(word) {
            Some(c) => -(c as f64 / self.total as f64).log2(),
            None => -(1.0 / (self.total as f64 + 1.0)).log2(),
        }
    }
}

/// One provider token. Character offsets index Unicode scalar values of the
/// transcript, half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    #[serde(rename = "t")]
    pub text: String,
    #[serde(rename = "cs")]
    pub char_start: usize,
    #[serde(rename = "ce")]
    pub char_end: usize,
    /// Natural-log probability of the token given its left context.
    #[serde(rename = "lp")]
    pub logprob_e: f64,
    pub rank: u64,
    #[serde(rename = "V")]
    pub vocab_size: u64,
}

impl TokenScore {
    pub fn surprisal_bits(&self) -> f64 {
        -self.logprob_e / LN_2
    }

    pub fn norm_rank(&self) -> f64 {
        self.rank as f64 / self.vocab_size as f64
    }

    fn validate(&self, index: usize) -> Result<(), ScoreError> {
        let invalid = |message: &str| ScoreError::InvalidToken {
            index,
            text: self.text.clone(),
            message: message.to_string(),
        };
        if self.char_start >= self.char_end {
            return Err(invalid("empty character span"));
        }
        if !(self.logprob_e.is_finite() && self.logprob_e <= 0.0) {
            return Err(invalid("log-probability must be finite and <= 0"));
        }
        if self.rank == 0 || self.rank > self.vocab_size {
            return Err(invalid("rank must lie in 1..=vocab_size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenScoreRecord {
    pub id: String,
    pub text: String,
    pub tokens: Vec<TokenScore>,
}

pub fn read_token_scores(path: &Path) -> Result<HashMap<String, TokenScoreRecord>, ScoreError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ScoreError::TokenRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: TokenScoreRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if out.contains_key(&record.id) {
            return Err(bad(format!("duplicate id {}", record.id)));
        }
        out.insert(record.id.clone(), record);
    }
    Ok(out)
}

/// Language-model score of one word.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmScore {
    /// Sum of the word's token surprisals, in bits.
    pub surprisal_bits: f64,
    /// Mean of the word's token `rank / vocab_size`.
    pub norm_rank: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordInfo {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub unigram_surprisal_bits: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmScore>,
}

/// Character spans (half-open, in chars) of each aligned word inside the
/// transcript. Surrounding punctuation is excluded from a word's span.
pub fn locate_words(transcript: &str, words: &[WordAlignment]) -> Result<Vec<(usize, usize)>, ScoreError> {
    let chars: Vec<char> = transcript.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let chunk_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let chunk = &chars[chunk_start..i];
        let (Some(first), Some(last)) = (
            chunk.iter().position(|c| c.is_alphanumeric()),
            chunk.iter().rposition(|c| c.is_alphanumeric()),
        ) else {
            continue;
        };
        spans.push((chunk_start + first, chunk_start + last + 1));
    }
    let aligned: Vec<String> = words.iter().map(|w| normalize_word(&w.text)).collect();
    let found: Vec<String> = spans
        .iter()
        .map(|&(s, e)| normalize_word(&chars[s..e].iter().collect::<String>()))
        .collect();
    if found != aligned {
        return Err(ScoreError::TranscriptMismatch {
            transcript: transcript.to_string(),
            aligned,
        });
    }
    Ok(spans)
}

/// Assigns every token to the word whose character span it overlaps most
/// (leftmost on ties; tokens overlapping no word are dropped) and aggregates
/// surprisal by summation and normalized rank by averaging.
pub fn aggregate_word_scores(
    transcript: &str,
    tokens: &[TokenScore],
    words: &[WordAlignment],
) -> Result<Vec<LlmScore>, ScoreError> {
    let len = transcript.chars().count();
    let spans = locate_words(transcript, words)?;
    let mut assigned: Vec<Vec<&TokenScore>> = vec![Vec::new(); words.len()];
    for (index, token) in tokens.iter().enumerate() {
        token.validate(index)?;
        if token.char_end > len {
            return Err(ScoreError::TokenOutOfRange {
                index,
                text: token.text.clone(),
                start: token.char_start,
                end: token.char_end,
                len,
            });
        }
        let mut best: Option<(usize, usize)> = None;
        for (w, &(ws, we)) in spans.iter().enumerate() {
            let overlap = token.char_end.min(we).saturating_sub(token.char_start.max(ws));
            if overlap > 0 && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((w, overlap));
            }
        }
        if let Some((w, _)) = best {
            assigned[w].push(token);
        }
    }
    assigned
        .iter()
        .enumerate()
        .map(|(index, toks)| {
            if toks.is_empty() {
                return Err(ScoreError::UntokenizedWord {
                    index,
                    word: words[index].text.clone(),
                });
            }
            let surprisal_bits = toks.iter().map(|t| t.surprisal_bits()).sum();
            let norm_rank = toks.iter().map(|t| t.norm_rank()).sum::<f64>() / toks.len() as f64;
            Ok(LlmScore {
                surprisal_bits,
                norm_rank,
                token_count: toks.len(),
            })
        })
        .collect()
}

/// Full per-word scores for one utterance. Language-model fields are only
/// filled when token scores are supplied.
pub fn score_words(
    words: &[WordAlignment],
    unigram: &UnigramModel,
    tokens: Option<(&str, &[TokenScore])>,
) -> Result<Vec<WordInfo>, ScoreError> {
    let llm = match tokens {
        Some((text, toks)) => Some(aggregate_word_scores(text, toks, words)?),
        None => None,
    };
    Ok(words
        .iter()
        .enumerate()
        .map(|(i, w)| WordInfo {
            text: w.text.clone(),
            start_s: w.start_s,
            end_s: w.end_s,
            unigram_surprisal_bits: unigram.surprisal_bits(&normalize_word(&w.text)),
            llm: llm.as_ref().map(|l| l[i]),
        })
        .collect())
}
