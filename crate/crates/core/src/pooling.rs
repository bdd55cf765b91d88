//! Frame masking and per-column mean / population standard deviation.
//!
//! Acoustic descriptors and frame embeddings share these helpers, so the
//! selected and unselected paths go through identical arithmetic.

/// Indices of frames whose center lies inside any of the closed spans.
pub fn frames_in_spans(n_frames: usize, center: impl Fn(usize) -> f64, spans: &[(f64, f64)]) -> Vec<usize> {
    (0..n_frames)
        .filter(|&i| {
            let c = center(i);
            spans.iter().any(|&(s, e)| s <= c && c <= e)
        })
        .collect()
}

/// Mean and population std of each column over the chosen rows.
/// `row(i)` must return a slice of length `dim`. Panics on empty `rows`.
pub fn mean_std<'a, T>(dim: usize, rows: &[usize], row: impl Fn(usize) -> &'a [T]) -> (Vec<f64>, Vec<f64>)
where
    T: Copy + Into<f64> + 'a,
{
    assert!(!rows.is_empty(), "mean_std over zero rows");
    let n = rows.len() as f64;
    let mut mean = vec![0.0f64; dim];
    for &r in rows {
        for (m, &v) in mean.iter_mut().zip(row(r)) {
            *m += v.into();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; dim];
    for &r in rows {
        for ((s, &v), m) in var.iter_mut().zip(row(r)).zip(&mean) {
            let d = v.into() - m;
            *s += d * d;
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, std)
}

/// Scalar version of [`mean_std`].
pub fn mean_std_scalar(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    assert!(n > 0, "mean_std_scalar over zero values");
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}
