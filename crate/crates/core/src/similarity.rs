//! Cosine similarity and deterministic top-k ranking over small vector stores.

use std::cmp::Ordering;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero vectors have similarity 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Ranks `candidates` by descending cosine similarity to `query` and returns the
/// first `k` positions. Equal similarities keep candidate order, so callers
/// control tie-breaking by the order they pass candidates in.
pub fn top_k<'a, I>(query: &[f64], candidates: I, k: usize) -> Vec<(usize, f64)>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut scored: Vec<(usize, f64)> = candidates
        .into_iter()
        .enumerate()
        .map(|(i, v)| (i, cosine(query, v)))
        .collect();
    // stable sort keeps insertion order for ties
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
    scored.truncate(k);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_and_orthogonal() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn ties_keep_insertion_order() {
        let store = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let got = top_k(&[1.0, 0.0], store.iter().map(Vec::as_slice), 3);
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), vec![0, 2, 1]);
    }
}
