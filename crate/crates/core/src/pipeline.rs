//! Whole-dataset orchestration: suppression, per-sequence tracking and
//! evaluation.
//!
//! Sequences run concurrently; results are assembled in sequence order so the
//! output never depends on scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{multiclass_nms, GeometryError};
use crate::io::DetectionSet;
use crate::model::{Category, TrackRecord, TrackerConfig};
use crate::tracker::{run_sequence, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sequence {sequence:?}: {source}")]
    Tracker {
        sequence: String,
        #[source]
        source: TrackerError,
    },
}

/// Applies per-category NMS to every frame of every sequence.
pub fn apply_nms(
    set: &DetectionSet,
    thresholds: &BTreeMap<Category, f64>,
) -> Result<DetectionSet, GeometryError> {
    let sequences: Vec<(&String, &BTreeMap<u64, Vec<_>>)> = set.iter().collect();
    sequences
        .into_par_iter()
        .map(|(seq, frames)| {
            let kept = frames
                .iter()
                .map(|(&f, dets)| Ok((f, multiclass_nms(dets, thresholds)?)))
                .collect::<Result<BTreeMap<_, _>, GeometryError>>()?;
            Ok((seq.clone(), kept))
        })
        .collect()
}

/// Tracks every sequence independently, optionally after NMS with the
/// configured thresholds. Records are sorted by `(sequence, frame, id)`.
pub fn track_all(
    set: &DetectionSet,
    config: &TrackerConfig,
    nms_first: bool,
) -> Result<Vec<TrackRecord>, PipelineError> {
    let suppressed;
    let input = if nms_first {
        suppressed = apply_nms(set, &config.nms_thresholds)?;
        &suppressed
    } else {
        set
    };
    let sequences: Vec<(&String, &BTreeMap<u64, Vec<_>>)> = input.iter().collect();
    let per_sequence: Vec<Vec<TrackRecord>> = sequences
        .into_par_iter()
        .map(|(seq, frames)| {
            run_sequence(
                config.clone(),
                frames.iter().map(|(&f, d)| (f, d.as_slice())),
            )
            .map_err(|source| PipelineError::Tracker {
                sequence: seq.clone(),
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(per_sequence.into_iter().flatten().collect())
}
