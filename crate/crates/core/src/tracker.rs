//! Motion-free online tracker.
//!
//! Each frame runs a three-stage appearance cascade:
//!
//! 1. high-score detections against confirmed and lost tracklets,
//! 2. low-score detections against the tracklets still unmatched,
//! 3. remaining high-score detections against tentative tracklets.
//!
//! Unmatched high-score detections seed new tentative tracklets; a tentative
//! tracklet is confirmed once it has been matched on `min_hits` consecutive
//! frames and removed as soon as it misses one. Confirmed tracklets that go
//! unmatched become lost and are removed after `max_lost` missed frames.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::assignment::{hungarian_solve, CostMatrix};
use crate::association::{aggregate_embedding, build_cost_matrix, AssociationError};
use crate::model::{
    ConfigErrors, Detection, TrackId, TrackRecord, TrackState, Tracklet, TrackerConfig,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error("frame {frame} is not after the previous frame {previous}")]
    NonMonotonicFrame { frame: u64, previous: u64 },
    #[error(transparent)]
    Association(#[from] AssociationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LifecycleEvent {
    Created(TrackId),
    Confirmed(TrackId),
    Lost(TrackId),
    Recovered(TrackId),
    Removed(TrackId),
}

impl LifecycleEvent {
    pub fn track_id(&self) -> TrackId {
        match *self {
            LifecycleEvent::Created(id)
            | LifecycleEvent::Confirmed(id)
            | LifecycleEvent::Lost(id)
            | LifecycleEvent::Recovered(id)
            | LifecycleEvent::Removed(id) => id,
        }
    }
}

/// Output of one [`Tracker::step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameResult {
    pub frame: u64,
    pub records: Vec<TrackRecord>,
    pub events: Vec<LifecycleEvent>,
}

impl Tracklet {
    fn seed(id: TrackId, det: &Detection) -> Self {
        let mut history = VecDeque::new();
        history.push_back((det.embedding.clone(), det.score));
        let aggregate = normalized(&det.embedding);
        Tracklet {
            id,
            category: det.category.clone(),
            state: TrackState::Tentative,
            hits: 1,
            frames_lost: 0,
            history,
            aggregate,
            last_box: det.bbox,
            last_frame: det.frame,
        }
    }

    fn absorb(&mut self, det: &Detection, tau: usize) -> Result<(), AssociationError> {
        self.history.push_back((det.embedding.clone(), det.score));
        while self.history.len() > tau {
            self.history.pop_front();
        }
        self.aggregate = aggregate_embedding(self.history.iter().map(|(e, s)| (e, *s)))?;
        self.last_box = det.bbox;
        self.last_frame = det.frame;
        Ok(())
    }
}

fn normalized(e: &crate::model::Embedding) -> crate::model::Embedding {
    let n = e.norm();
    if n > 0.0 {
        crate::model::Embedding::new(e.values().iter().map(|v| v / n).collect())
    } else {
        e.clone()
    }
}

fn record(id: TrackId, det: &Detection) -> TrackRecord {
    TrackRecord {
        sequence: det.sequence.clone(),
        frame: det.frame,
        track_id: id,
        category: det.category.clone(),
        bbox: det.bbox,
        score: det.score,
        mask: det.mask.clone(),
    }
}

/// Tracker for a single sequence.
#[derive(Debug)]
pub struct Tracker {
    config: TrackerConfig,
    tracklets: Vec<Tracklet>,
    /// Records buffered while a tracklet is tentative (backfill mode only).
    pending: BTreeMap<TrackId, Vec<TrackRecord>>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        Ok(Self {
            config: config.validate()?,
            tracklets: Vec::new(),
            pending: BTreeMap::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (non-removed) tracklets in creation order.
    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    /// Processes one frame. Frames skipped since the previous call count as
    /// empty frames.
    pub fn step(
        &mut self,
        frame: u64,
        detections: &[Detection],
    ) -> Result<FrameResult, TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(TrackerError::NonMonotonicFrame { frame, previous });
            }
        }
        let mut out = FrameResult {
            frame,
            ..Default::default()
        };
        if let Some(previous) = self.last_frame {
            for _ in previous + 1..frame {
                self.age_unmatched(&[], &mut out.events);
            }
        }
        self.last_frame = Some(frame);

        let cfg = &self.config;
        let mut high = Vec::new();
        let mut low = Vec::new();
        for (i, d) in detections.iter().enumerate() {
            if d.score >= cfg.high_thresh {
                high.push(i);
            } else if d.score >= cfg.low_thresh {
                low.push(i);
            }
        }
        let mut matched = vec![false; self.tracklets.len()];

        // Stage 1: high-score detections vs confirmed and lost tracklets.
        let active: Vec<usize> = self.indices_in(&[TrackState::Confirmed, TrackState::Lost]);
        let gate1 = cfg.gate_stage1;
        let pairs = self.associate(&active, detections, &high, gate1)?;
        let high_left = self.apply_matches(&pairs, detections, &high, &mut matched, &mut out)?;

        // Stage 2: low-score detections vs the remaining active tracklets.
        let remaining: Vec<usize> = active.into_iter().filter(|&t| !matched[t]).collect();
        let gate2 = self.config.gate_stage2;
        let pairs = self.associate(&remaining, detections, &low, gate2)?;
        self.apply_matches(&pairs, detections, &low, &mut matched, &mut out)?;

        // Stage 3: remaining high-score detections vs tentative tracklets.
        let tentative = self.indices_in(&[TrackState::Tentative]);
        let gate3 = self.config.gate_tentative;
        let pairs = self.associate(&tentative, detections, &high_left, gate3)?;
        let mut seeds = vec![true; high_left.len()];
        for &(t, d) in &pairs {
            let det = &detections[d];
            seeds[high_left.iter().position(|&x| x == d).unwrap()] = false;
            matched[t] = true;
            let tau = self.config.tau;
            let min_hits = self.config.min_hits;
            let backfill = self.config.backfill_on_confirm;
            let tr = &mut self.tracklets[t];
            tr.absorb(det, tau)?;
            tr.hits += 1;
            if tr.hits >= min_hits {
                tr.state = TrackState::Confirmed;
                out.events.push(LifecycleEvent::Confirmed(tr.id));
                if let Some(buffered) = self.pending.remove(&tr.id) {
                    if backfill {
                        out.records.extend(buffered);
                    }
                }
                out.records.push(record(tr.id, det));
            } else if backfill {
                self.pending.entry(tr.id).or_default().push(record(tr.id, det));
            }
        }

        // Unmatched tentative tracklets and aging of active ones.
        self.age_unmatched(&matched, &mut out.events);

        // New tentative tracklets from the unclaimed high-score detections.
        for (&d, _) in high_left.iter().zip(&seeds).filter(|(_, &s)| s) {
            let det = &detections[d];
            let id = TrackId(self.next_id);
            self.next_id += 1;
            let mut tr = Tracklet::seed(id, det);
            out.events.push(LifecycleEvent::Created(id));
            if tr.hits >= self.config.min_hits {
                tr.state = TrackState::Confirmed;
                out.events.push(LifecycleEvent::Confirmed(id));
                out.records.push(record(id, det));
            } else if self.config.backfill_on_confirm {
                self.pending.entry(id).or_default().push(record(id, det));
            }
            self.tracklets.push(tr);
        }

        out.records.sort_by_key(|r| (r.frame, r.track_id));
        Ok(out)
    }

    fn indices_in(&self, states: &[TrackState]) -> Vec<usize> {
        self.tracklets
            .iter()
            .enumerate()
            .filter(|(_, t)| states.contains(&t.state))
            .map(|(i, _)| i)
            .collect()
    }

    fn associate(
        &self,
        rows: &[usize],
        detections: &[Detection],
        cols: &[usize],
        gate: f64,
    ) -> Result<Vec<(usize, usize)>, TrackerError> {
        if rows.is_empty() || cols.is_empty() {
            return Ok(Vec::new());
        }
        let m: CostMatrix = build_cost_matrix(&self.tracklets, rows, detections, cols, gate)?;
        Ok(hungarian_solve(&m).labelled(&m))
    }

    /// Updates confirmed/lost tracklets matched in stage 1 or 2 and returns
    /// the candidate detections left unmatched.
    fn apply_matches(
        &mut self,
        pairs: &[(usize, usize)],
        detections: &[Detection],
        candidates: &[usize],
        matched: &mut [bool],
        out: &mut FrameResult,
    ) -> Result<Vec<usize>, TrackerError> {
        let tau = self.config.tau;
        let mut used = vec![false; detections.len()];
        for &(t, d) in pairs {
            let det = &detections[d];
            let tr = &mut self.tracklets[t];
            tr.absorb(det, tau)?;
            if tr.state == TrackState::Lost {
                out.events.push(LifecycleEvent::Recovered(tr.id));
            }
            tr.state = TrackState::Confirmed;
            tr.frames_lost = 0;
            matched[t] = true;
            used[d] = true;
            out.records.push(record(tr.id, det));
        }
        Ok(candidates.iter().copied().filter(|&d| !used[d]).collect())
    }

    /// Lifecycle update for every tracklet not flagged in `matched`
    /// (tracklets beyond the slice count as unmatched).
    fn age_unmatched(&mut self, matched: &[bool], events: &mut Vec<LifecycleEvent>) {
        let max_lost = self.config.max_lost;
        for (i, tr) in self.tracklets.iter_mut().enumerate() {
            if matched.get(i).copied().unwrap_or(false) {
                continue;
            }
            match tr.state {
                TrackState::Tentative => {
                    tr.state = TrackState::Removed;
                    events.push(LifecycleEvent::Removed(tr.id));
                }
                TrackState::Confirmed | TrackState::Lost => {
                    if tr.state == TrackState::Confirmed {
                        tr.state = TrackState::Lost;
                        events.push(LifecycleEvent::Lost(tr.id));
                    }
                    tr.frames_lost += 1;
                    if tr.frames_lost > max_lost {
                        tr.state = TrackState::Removed;
                        events.push(LifecycleEvent::Removed(tr.id));
                    }
                }
                TrackState::Removed => {}
            }
        }
        let pending = &mut self.pending;
        self.tracklets.retain(|t| {
            if t.state == TrackState::Removed {
                pending.remove(&t.id);
                false
            } else {
                true
            }
        });
    }
}

/// Tracks one sequence given its frames in increasing order.
///
/// Returns every emitted record sorted by `(frame, track id)`.
pub fn run_sequence<'a, I>(config: TrackerConfig, frames: I) -> Result<Vec<TrackRecord>, TrackerError>
where
    I: IntoIterator<Item = (u64, &'a [Detection])>,
{
    let mut tracker = Tracker::new(config)?;
    let mut records = Vec::new();
    for (frame, dets) in frames {
        records.extend(tracker.step(frame, dets)?.records);
    }
    records.sort_by_key(|r| (r.frame, r.track_id));
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, Category, Embedding};

    fn det(frame: u64, emb: &[f64], score: f64) -> Detection {
        det_cat(frame, emb, score, Category::Car)
    }

    fn det_cat(frame: u64, emb: &[f64], score: f64, category: Category) -> Detection {
        Detection {
            sequence: "seq".into(),
            frame,
            category,
            bbox: BBox::new(frame as f64, 0.0, 10.0, 10.0),
            mask: None,
            score,
            embedding: Embedding::new(emb.to_vec()),
        }
    }

    #[test]
    fn new_tracker_is_empty_and_ids_are_independent() {
        let mut a = Tracker::new(TrackerConfig::default()).unwrap();
        let mut b = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(a.tracklets().is_empty());
        a.step(0, &[det(0, &[1.0, 0.0], 0.9)]).unwrap();
        b.step(0, &[det(0, &[1.0, 0.0], 0.9)]).unwrap();
        assert_eq!(a.tracklets()[0].id, TrackId(1));
        assert_eq!(b.tracklets()[0].id, TrackId(1));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrackerConfig {
            low_thresh: 0.9,
            ..Default::default()
        };
        assert!(matches!(Tracker::new(cfg), Err(TrackerError::Config(_))));
    }

    #[test]
    fn single_detection_creates_tentative_without_output() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        let r = t.step(1, &[det(1, &[1.0, 0.0], 0.9)]).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.events, vec![LifecycleEvent::Created(TrackId(1))]);
        assert_eq!(t.tracklets()[0].state, TrackState::Tentative);
    }

    #[test]
    fn confirmation_on_second_frame() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(1, &[det(1, &[1.0, 0.0], 0.9)]).unwrap();
        let r = t.step(2, &[det(2, &[1.0, 0.0], 0.9)]).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].frame, 2);
        assert!(r.events.contains(&LifecycleEvent::Confirmed(TrackId(1))));
    }

    #[test]
    fn backfill_emits_tentative_frames() {
        let cfg = TrackerConfig {
            backfill_on_confirm: true,
            ..Default::default()
        };
        let mut t = Tracker::new(cfg).unwrap();
        assert!(t.step(1, &[det(1, &[1.0, 0.0], 0.9)]).unwrap().records.is_empty());
        let r = t.step(2, &[det(2, &[1.0, 0.0], 0.9)]).unwrap();
        let frames: Vec<u64> = r.records.iter().map(|r| r.frame).collect();
        assert_eq!(frames, vec![1, 2]);
    }

    #[test]
    fn tentative_gap_removes() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(1, &[det(1, &[1.0, 0.0], 0.9)]).unwrap();
        let r = t.step(3, &[det(3, &[1.0, 0.0], 0.9)]).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(
            r.events,
            vec![
                LifecycleEvent::Removed(TrackId(1)),
                LifecycleEvent::Created(TrackId(2))
            ]
        );
    }

    #[test]
    fn low_score_detection_does_not_seed_or_confirm() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(1, &[det(1, &[1.0, 0.0], 0.5)]).unwrap();
        assert!(t.tracklets().is_empty());
        t.step(2, &[det(2, &[1.0, 0.0], 0.9)]).unwrap();
        let r = t.step(3, &[det(3, &[1.0, 0.0], 0.5)]).unwrap();
        // Tentatives only match high-score boxes.
        assert!(r.records.is_empty());
        assert!(t.tracklets().is_empty());
    }

    #[test]
    fn low_score_keeps_confirmed_track_alive() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(1, &[det(1, &[1.0, 0.0], 0.9)]).unwrap();
        t.step(2, &[det(2, &[1.0, 0.0], 0.9)]).unwrap();
        let r = t.step(3, &[det(3, &[1.0, 0.05], 0.4)]).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].track_id, TrackId(1));
        let r = t.step(4, &[det(4, &[1.0, 0.0], 0.1)]).unwrap();
        assert!(r.records.is_empty());
        assert!(r.events.contains(&LifecycleEvent::Lost(TrackId(1))));
    }

    #[test]
    fn categories_never_mix() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(1, &[det(1, &[1.0, 0.0], 0.9)]).unwrap();
        t.step(2, &[det(2, &[1.0, 0.0], 0.9)]).unwrap();
        let r = t
            .step(3, &[det_cat(3, &[1.0, 0.0], 0.9, Category::Pedestrian)])
            .unwrap();
        assert!(r.records.is_empty());
        assert!(r.events.contains(&LifecycleEvent::Created(TrackId(2))));
    }

    fn confirmed_then_gap(gap: u64) -> Vec<TrackRecord> {
        let e = [0.6, 0.8];
        let mut frames: Vec<(u64, Vec<Detection>)> =
            (0..3).map(|f| (f, vec![det(f, &e, 0.9)])).collect();
        for f in 3..3 + gap {
            frames.push((f, vec![]));
        }
        let back = 3 + gap;
        frames.push((back, vec![det(back, &e, 0.9)]));
        frames.push((back + 1, vec![det(back + 1, &e, 0.9)]));
        run_sequence(
            TrackerConfig::default(),
            frames.iter().map(|(f, d)| (*f, d.as_slice())),
        )
        .unwrap()
    }

    #[test]
    fn lost_boundary() {
        let ids = |recs: &[TrackRecord]| -> Vec<u64> { recs.iter().map(|r| r.track_id.0).collect() };
        assert_eq!(ids(&confirmed_then_gap(10)), vec![1, 1, 1, 1]);
        // 11 missed frames: the old id is gone, the new one needs confirmation.
        assert_eq!(ids(&confirmed_then_gap(11)), vec![1, 1, 2]);
    }

    #[test]
    fn frame_gap_counts_as_missed_frames() {
        let e = [0.6, 0.8];
        let frames = [
            (0u64, vec![det(0, &e, 0.9)]),
            (1, vec![det(1, &e, 0.9)]),
            (12, vec![det(12, &e, 0.9)]),
        ];
        let recs = run_sequence(
            TrackerConfig::default(),
            frames.iter().map(|(f, d)| (*f, d.as_slice())),
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.track_id == TrackId(1)));
        let frames = [
            (0u64, vec![det(0, &e, 0.9)]),
            (1, vec![det(1, &e, 0.9)]),
            (13, vec![det(13, &e, 0.9)]),
        ];
        let recs = run_sequence(
            TrackerConfig::default(),
            frames.iter().map(|(f, d)| (*f, d.as_slice())),
        )
        .unwrap();
        assert_eq!(recs.len(), 1, "re-detection after 11 missed frames is a new tentative");
    }

    #[test]
    fn non_monotonic_frame() {
        let mut t = Tracker::new(TrackerConfig::default()).unwrap();
        t.step(5, &[]).unwrap();
        assert_eq!(
            t.step(5, &[]),
            Err(TrackerError::NonMonotonicFrame {
                frame: 5,
                previous: 5
            })
        );
    }

    #[test]
    fn history_window_is_bounded() {
        let cfg = TrackerConfig {
            tau: 3,
            ..Default::default()
        };
        let mut t = Tracker::new(cfg).unwrap();
        for f in 0..10 {
            t.step(f, &[det(f, &[1.0, 0.01 * f as f64], 0.9)]).unwrap();
        }
        let tr = &t.tracklets()[0];
        assert_eq!(tr.history().len(), 3);
        let expect = aggregate_embedding(tr.history()).unwrap();
        assert_eq!(tr.aggregate(), &expect);
    }

    #[test]
    fn empty_and_constant_sequences() {
        let empty: Vec<(u64, &[Detection])> = vec![];
        assert!(run_sequence(TrackerConfig::default(), empty).unwrap().is_empty());
        let frames: Vec<(u64, Vec<Detection>)> =
            (0..100).map(|f| (f, vec![det(f, &[0.2, 0.9, 0.1], 0.95)])).collect();
        let recs = run_sequence(
            TrackerConfig::default(),
            frames.iter().map(|(f, d)| (*f, d.as_slice())),
        )
        .unwrap();
        assert_eq!(recs.len(), 99);
        assert!(recs.iter().all(|r| r.track_id == TrackId(1)));
    }
}
