//! Externally computed frame embeddings and their mean/std pooling.

use std::path::Path;

use thiserror::Error;

use crate::pooling::{frames_in_spans, mean_std};
use crate::selection::SpanSelection;
use crate::sfv::{SfvError, SfvMatrix};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Format(#[from] SfvError),
    #[error("selection is for {selection:?}, embeddings for {embeddings:?}")]
    UtteranceMismatch { selection: String, embeddings: String },
    #[error("empty segment: no embedding frames inside spans {0:?}")]
    EmptySegment(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    pub utterance_id: String,
    pub matrix: SfvMatrix,
}

impl FrameEmbeddings {
    /// Reads `<dir>/<utterance_id>.sfv`-style files; the id is the file stem.
    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let utterance_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(Self {
            utterance_id,
            matrix: SfvMatrix::read(path)?,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.matrix.n_frames
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn frame_center(&self, i: usize) -> f64 {
        self.matrix.offset_s + i as f64 * self.matrix.hop_s
    }
}

/// Per-dimension mean followed by per-dimension population std.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding(pub Vec<f64>);

fn pool_rows(emb: &FrameEmbeddings, rows: &[usize]) -> PooledEmbedding {
    let (mut mean, std) = mean_std(emb.dim(), rows, |i| emb.matrix.row(i));
    mean.extend(std);
    PooledEmbedding(mean)
}

pub fn pool_mean_std(emb: &FrameEmbeddings, selection: &SpanSelection) -> Result<PooledEmbedding, EmbeddingError> {
    if selection.utterance_id != emb.utterance_id {
        return Err(EmbeddingError::UtteranceMismatch {
            selection: selection.utterance_id.clone(),
            embeddings: emb.utterance_id.clone(),
        });
    }
    let rows = frames_in_spans(emb.n_frames(), |i| emb.frame_center(i), &selection.spans);
    if rows.is_empty() {
        return Err(EmbeddingError::EmptySegment(selection.spans.clone()));
    }
    Ok(pool_rows(emb, &rows))
}

/// Unselected baseline: every frame.
pub fn pool_all(emb: &FrameEmbeddings) -> Result<PooledEmbedding, EmbeddingError> {
    if emb.n_frames() == 0 {
        return Err(EmbeddingError::EmptySegment(Vec::new()));
    }
    let rows: Vec<usize> = (0..emb.n_frames()).collect();
    Ok(pool_rows(emb, &rows))
}
