//! Appearance distances, score-weighted tracklet embeddings and gated cost
//! matrices.

use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{CostMatrix, FORBIDDEN};
use crate::model::{Detection, Embedding, Tracklet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssociationError {
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding history is empty")]
    EmptyHistory,
    #[error("detection scores in the history sum to zero")]
    ZeroScoreSum,
}

/// Cost matrices with at least this many entries are filled in parallel.
const PARALLEL_ENTRIES: usize = 4096;

/// `1 - cos(a, b)`, clamped to `[0, 2]`.
pub fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64, AssociationError> {
    if a.dim() != b.dim() {
        return Err(AssociationError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(AssociationError::ZeroVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((1.0 - dot / (na * nb)).clamp(0.0, 2.0))
}

/// Score-weighted mean of the history embeddings, L2-normalised.
pub fn aggregate_embedding<'a, I>(history: I) -> Result<Embedding, AssociationError>
where
    I: IntoIterator<Item = (&'a Embedding, f64)>,
{
    let mut iter = history.into_iter();
    let (first, s0) = iter.next().ok_or(AssociationError::EmptyHistory)?;
    let dim = first.dim();
    let mut acc: Vec<f64> = first.values().iter().map(|v| v * s0).collect();
    let mut score_sum = s0;
    for (e, s) in iter {
        if e.dim() != dim {
            return Err(AssociationError::DimensionMismatch(dim, e.dim()));
        }
        for (a, v) in acc.iter_mut().zip(e.values()) {
            *a += v * s;
        }
        score_sum += s;
    }
    if score_sum <= 0.0 {
        return Err(AssociationError::ZeroScoreSum);
    }
    for a in &mut acc {
        *a /= score_sum;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(AssociationError::ZeroVector);
    }
    for a in &mut acc {
        *a /= norm;
    }
    Ok(Embedding::new(acc))
}

/// Gated appearance cost between `tracklets[rows[r]]` and
/// `detections[cols[c]]`.
///
/// An entry is the cosine distance between the tracklet aggregate and the
/// detection embedding when both share a category and the distance is within
/// `gate`; every other entry is [`FORBIDDEN`].
pub fn build_cost_matrix(
    tracklets: &[Tracklet],
    rows: &[usize],
    detections: &[Detection],
    cols: &[usize],
    gate: f64,
) -> Result<CostMatrix, AssociationError> {
    let entry = |r: usize, c: usize| -> Result<f64, AssociationError> {
        let (t, d) = (&tracklets[r], &detections[c]);
        if t.category != d.category {
            return Ok(FORBIDDEN);
        }
        let dist = cosine_distance(t.aggregate(), &d.embedding)?;
        Ok(if dist <= gate { dist } else { FORBIDDEN })
    };
    let fill_row = |&r: &usize| -> Result<Vec<f64>, AssociationError> {
        cols.iter().map(|&c| entry(r, c)).collect()
    };
    let cost_rows: Vec<Vec<f64>> = if rows.len() * cols.len() >= PARALLEL_ENTRIES {
        rows.par_iter().map(fill_row).collect::<Result<_, _>>()?
    } else {
        rows.iter().map(fill_row).collect::<Result<_, _>>()?
    };
    Ok(CostMatrix::new(rows.to_vec(), cols.to_vec(), cost_rows.concat()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&e(&[0.3, 0.4]), &e(&[0.3, 0.4])).unwrap(), 0.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(cosine_distance(&e(&[1.0, 0.0]), &e(&[-1.0, 0.0])).unwrap(), 2.0);
        assert_eq!(
            cosine_distance(&e(&[0.0, 0.0]), &e(&[1.0, 0.0])),
            Err(AssociationError::ZeroVector)
        );
        assert_eq!(
            cosine_distance(&e(&[1.0]), &e(&[1.0, 0.0])),
            Err(AssociationError::DimensionMismatch(1, 2))
        );
    }

    #[test]
    fn aggregate_single_entry_is_normalised() {
        let x = e(&[3.0, 4.0]);
        let agg = aggregate_embedding([(&x, 0.9)]).unwrap();
        assert_eq!(agg.values(), &[0.6, 0.8]);
    }

    #[test]
    fn aggregate_weighted_by_score() {
        // (0.8 * (1,0) + 0.4 * (0,1)) / 1.2 = (2/3, 1/3) -> (2, 1) / sqrt(5)
        let (a, b) = (e(&[1.0, 0.0]), e(&[0.0, 1.0]));
        let agg = aggregate_embedding([(&a, 0.8), (&b, 0.4)]).unwrap();
        let expect = [2.0 / 5f64.sqrt(), 1.0 / 5f64.sqrt()];
        assert!((agg.values()[0] - expect[0]).abs() < 1e-12);
        assert!((agg.values()[1] - expect[1]).abs() < 1e-12);
        assert!((agg.values()[0] - 0.8944).abs() < 1e-4);
        assert!((agg.values()[1] - 0.4472).abs() < 1e-4);
        let scaled = aggregate_embedding([(&a, 4.0), (&b, 2.0)]).unwrap();
        assert!(agg
            .values()
            .iter()
            .zip(scaled.values())
            .all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn aggregate_errors() {
        let none: [(&Embedding, f64); 0] = [];
        assert_eq!(aggregate_embedding(none), Err(AssociationError::EmptyHistory));
        let a = e(&[1.0, 0.0]);
        assert_eq!(
            aggregate_embedding([(&a, 0.0), (&a, 0.0)]),
            Err(AssociationError::ZeroScoreSum)
        );
        let b = e(&[-1.0, 0.0]);
        assert_eq!(
            aggregate_embedding([(&a, 0.5), (&b, 0.5)]),
            Err(AssociationError::ZeroVector)
        );
    }
}
