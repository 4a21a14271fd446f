//! Appearance-only multi-object tracking.
//!
//! Detections carry a precomputed appearance embedding; tracklets are linked
//! frame to frame purely by cosine distance between a score-weighted tracklet
//! embedding and each detection, with no motion model and no box-overlap term.
//! The crate also contains the evaluation metrics (CLEAR MOTA, IDF1, HOTA), a
//! seeded synthetic sequence generator and the line-delimited file formats
//! used by the command-line tool.

pub mod assignment;
pub mod association;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tracker;

pub use assignment::{hungarian_solve, Assignment, CostMatrix, FORBIDDEN};
pub use association::{aggregate_embedding, build_cost_matrix, cosine_distance, AssociationError};
pub use geometry::{box_iou, mask_iou, multiclass_nms, GeometryError};
pub use model::{
    BBox, Category, ConfigError, ConfigErrors, Detection, Embedding, RleMask, TrackId,
    TrackRecord, TrackState, Tracklet, TrackerConfig,
};
pub use tracker::{run_sequence, FrameResult, LifecycleEvent, Tracker, TrackerError};
pub use metrics::{
    compute_hota, compute_idf1, compute_mota, evaluate, frame_matching, summarize, GroundTruth,
    GtRecord, IouKind, MetricsError, MetricsReport,
};
pub use synth::{generate, sample_identities, Occlusion, SynthConfig, SynthError, SynthOutput};
pub use pipeline::{apply_nms, track_all, PipelineError};
pub use io::{DetectionSet, IoError};
