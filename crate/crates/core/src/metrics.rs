//! Tracking evaluation: CLEAR MOTA, identity F1 and HOTA, per category and
//! averaged across categories.
//!
//! Identities are scoped to their sequence. Every measure works on the same
//! per-frame similarity matrices, built from box IoU or mask IoU.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{hungarian_solve, CostMatrix, FORBIDDEN};
use crate::geometry::{box_iou, mask_iou, GeometryError};
use crate::model::{BBox, Category, RleMask, TrackRecord};

/// Localisation thresholds averaged by HOTA: 0.05, 0.10, ..., 0.95.
pub fn hota_alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{sequence} frame {frame}: mask IoU requested but object {id} has no mask")]
    MissingMask { sequence: String, frame: u64, id: u64 },
    #[error("duplicate ground truth object {id} in {sequence} frame {frame}")]
    DuplicateGroundTruth { sequence: String, frame: u64, id: u64 },
    #[error("no category has ground truth")]
    NoCategories,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum IouKind {
    #[default]
    Box,
    Mask,
}

impl std::str::FromStr for IouKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "box" => Ok(IouKind::Box),
            "mask" => Ok(IouKind::Mask),
            other => Err(format!("unknown IoU kind `{other}` (expected box or mask)")),
        }
    }
}

/// One annotated object.
#[derive(Clone, Debug, PartialEq)]
pub struct GtRecord {
    pub sequence: String,
    pub frame: u64,
    pub gt_id: u64,
    pub category: Category,
    pub bbox: BBox,
    pub mask: Option<RleMask>,
}

/// Ground-truth annotations with unique `(sequence, frame, id)` keys.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    records: Vec<GtRecord>,
}

impl GroundTruth {
    pub fn new(records: Vec<GtRecord>) -> Result<Self, MetricsError> {
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert((r.sequence.as_str(), r.frame, r.gt_id)) {
                return Err(MetricsError::DuplicateGroundTruth {
                    sequence: r.sequence.clone(),
                    frame: r.frame,
                    id: r.gt_id,
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[GtRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<GtRecord> {
        self.records
    }

    /// Prediction that reproduces the annotations exactly (score 1).
    pub fn as_perfect_prediction(&self) -> Vec<TrackRecord> {
        self.records
            .iter()
            .map(|g| TrackRecord {
                sequence: g.sequence.clone(),
                frame: g.frame,
                track_id: crate::model::TrackId(g.gt_id),
                category: g.category.clone(),
                bbox: g.bbox,
                score: 1.0,
                mask: g.mask.clone(),
            })
            .collect()
    }
}

/// A region to be compared within a single frame.
#[derive(Clone, Copy, Debug)]
pub struct Region<'a> {
    pub id: u64,
    pub bbox: &'a BBox,
    pub mask: Option<&'a RleMask>,
}

impl<'a> From<&'a GtRecord> for Region<'a> {
    fn from(r: &'a GtRecord) -> Self {
        Region {
            id: r.gt_id,
            bbox: &r.bbox,
            mask: r.mask.as_ref(),
        }
    }
}

impl<'a> From<&'a TrackRecord> for Region<'a> {
    fn from(r: &'a TrackRecord) -> Self {
        Region {
            id: r.track_id.0,
            bbox: &r.bbox,
            mask: r.mask.as_ref(),
        }
    }
}

/// Matching of one frame: `(gt index, pred index, iou)` plus leftovers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMatch {
    pub pairs: Vec<(usize, usize, f64)>,
    pub false_negatives: Vec<usize>,
    pub false_positives: Vec<usize>,
}

fn similarity(
    gt: &[Region<'_>],
    pred: &[Region<'_>],
    kind: IouKind,
    context: (&str, u64),
) -> Result<Vec<f64>, MetricsError> {
    let mut sim = Vec::with_capacity(gt.len() * pred.len());
    for g in gt {
        for p in pred {
            let v = match kind {
                IouKind::Box => box_iou(g.bbox, p.bbox),
                IouKind::Mask => {
                    let missing = |id| MetricsError::MissingMask {
                        sequence: context.0.to_string(),
                        frame: context.1,
                        id,
                    };
                    let gm = g.mask.ok_or_else(|| missing(g.id))?;
                    let pm = p.mask.ok_or_else(|| missing(p.id))?;
                    mask_iou(gm, pm)?
                }
            };
            sim.push(v);
        }
    }
    Ok(sim)
}

/// Maximum-cardinality, then maximum-total-similarity matching restricted to
/// pairs with similarity `>= alpha`. `locked` pairs are kept as given and
/// excluded from the optimisation.
fn match_similarity(
    sim: &[f64],
    n_gt: usize,
    n_pred: usize,
    alpha: f64,
    locked: &[(usize, usize)],
) -> FrameMatch {
    let mut gt_used = vec![false; n_gt];
    let mut pred_used = vec![false; n_pred];
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for &(g, p) in locked {
        gt_used[g] = true;
        pred_used[p] = true;
        pairs.push((g, p, sim[g * n_pred + p]));
    }
    let rows: Vec<usize> = (0..n_gt).filter(|&g| !gt_used[g]).collect();
    let cols: Vec<usize> = (0..n_pred).filter(|&p| !pred_used[p]).collect();
    if !rows.is_empty() && !cols.is_empty() {
        let mut cost = Vec::with_capacity(rows.len() * cols.len());
        for &g in &rows {
            for &p in &cols {
                let s = sim[g * n_pred + p];
                cost.push(if s >= alpha { -s } else { FORBIDDEN });
            }
        }
        let m = CostMatrix::new(rows, cols, cost);
        for (g, p) in hungarian_solve(&m).labelled(&m) {
            gt_used[g] = true;
            pred_used[p] = true;
            pairs.push((g, p, sim[g * n_pred + p]));
        }
    }
    pairs.sort_by_key(|&(g, p, _)| (g, p));
    FrameMatch {
        pairs,
        false_negatives: (0..n_gt).filter(|&g| !gt_used[g]).collect(),
        false_positives: (0..n_pred).filter(|&p| !pred_used[p]).collect(),
    }
}

/// Matches the regions of one frame and one category at threshold `alpha`.
pub fn frame_matching(
    gt: &[Region<'_>],
    pred: &[Region<'_>],
    kind: IouKind,
    alpha: f64,
) -> Result<FrameMatch, MetricsError> {
    let sim = similarity(gt, pred, kind, ("", 0))?;
    Ok(match_similarity(&sim, gt.len(), pred.len(), alpha, &[]))
}

/// One frame of one category, with identities mapped to dense per-sequence
/// indices.
struct FrameData {
    frame: u64,
    gt: Vec<usize>,
    pred: Vec<usize>,
    sim: Vec<f64>,
}

struct SequenceData {
    frames: Vec<FrameData>,
    n_gt_ids: usize,
    n_pred_ids: usize,
}

struct CategoryData {
    sequences: Vec<SequenceData>,
    gt_dets: usize,
    pred_dets: usize,
}

/// Dense index assignment in order of first appearance.
#[derive(Default)]
struct IdMap(HashMap<u64, usize>);

impl IdMap {
    fn index(&mut self, id: u64) -> usize {
        let next = self.0.len();
        *self.0.entry(id).or_insert(next)
    }
}

type Grouped<'a> = BTreeMap<
    &'a Category,
    BTreeMap<&'a str, BTreeMap<u64, (Vec<&'a GtRecord>, Vec<&'a TrackRecord>)>>,
>;

fn prepare(
    gt: &GroundTruth,
    pred: &[TrackRecord],
    kind: IouKind,
) -> Result<BTreeMap<Category, CategoryData>, MetricsError> {
    let mut grouped: Grouped<'_> = BTreeMap::new();
    for g in gt.records() {
        grouped
            .entry(&g.category)
            .or_default()
            .entry(g.sequence.as_str())
            .or_default()
            .entry(g.frame)
            .or_default()
            .0
            .push(g);
    }
    for p in pred {
        grouped
            .entry(&p.category)
            .or_default()
            .entry(p.sequence.as_str())
            .or_default()
            .entry(p.frame)
            .or_default()
            .1
            .push(p);
    }
    let grouped: Vec<_> = grouped.into_iter().collect();
    grouped
        .into_par_iter()
        .map(|(category, seqs)| {
            let mut data = CategoryData {
                sequences: Vec::with_capacity(seqs.len()),
                gt_dets: 0,
                pred_dets: 0,
            };
            for (seq, frames) in seqs {
                let (mut gt_ids, mut pred_ids) = (IdMap::default(), IdMap::default());
                let mut out = Vec::with_capacity(frames.len());
                for (frame, (gs, ps)) in frames {
                    let gr: Vec<Region<'_>> = gs.iter().map(|g| Region::from(*g)).collect();
                    let pr: Vec<Region<'_>> = ps.iter().map(|p| Region::from(*p)).collect();
                    let sim = similarity(&gr, &pr, kind, (seq, frame))?;
                    data.gt_dets += gs.len();
                    data.pred_dets += ps.len();
                    out.push(FrameData {
                        frame,
                        gt: gs.iter().map(|g| gt_ids.index(g.gt_id)).collect(),
                        pred: ps.iter().map(|p| pred_ids.index(p.track_id.0)).collect(),
                        sim,
                    });
                }
                data.sequences.push(SequenceData {
                    frames: out,
                    n_gt_ids: gt_ids.0.len(),
                    n_pred_ids: pred_ids.0.len(),
                });
            }
            Ok((category.clone(), data))
        })
        .collect()
}

/// CLEAR counts for one category.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClearMetrics {
    pub mota: f64,
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub idsw: usize,
    pub gt_count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IdentityMetrics {
    pub idf1: f64,
    pub idtp: usize,
    pub idfn: usize,
    pub idfp: usize,
}

/// HOTA and its components, averaged over [`hota_alphas`], together with the
/// per-threshold curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HotaMetrics {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub hota_curve: Vec<f64>,
    pub det_a_curve: Vec<f64>,
    pub ass_a_curve: Vec<f64>,
}

fn clear(data: &CategoryData, alpha: f64) -> ClearMetrics {
    let mut m = ClearMetrics {
        gt_count: data.gt_dets,
        ..Default::default()
    };
    for seq in &data.sequences {
        // gt id -> (frame, pred id) of its match in the previous frame
        let mut previous: Vec<Option<(u64, usize)>> = vec![None; seq.n_gt_ids];
        let mut last_matched: Vec<Option<usize>> = vec![None; seq.n_gt_ids];
        for f in &seq.frames {
            let n_pred = f.pred.len();
            let mut locked = Vec::new();
            for (gi, &g) in f.gt.iter().enumerate() {
                if let Some((pf, p)) = previous[g] {
                    if pf + 1 == f.frame {
                        if let Some(pi) = f.pred.iter().position(|&x| x == p) {
                            if f.sim[gi * n_pred + pi] >= alpha
                                && !locked.iter().any(|&(_, q)| q == pi)
                            {
                                locked.push((gi, pi));
                            }
                        }
                    }
                }
            }
            let fm = match_similarity(&f.sim, f.gt.len(), n_pred, alpha, &locked);
            m.tp += fm.pairs.len();
            m.fn_ += fm.false_negatives.len();
            m.fp += fm.false_positives.len();
            for &(gi, pi, _) in &fm.pairs {
                let (g, p) = (f.gt[gi], f.pred[pi]);
                if last_matched[g].is_some_and(|q| q != p) {
                    m.idsw += 1;
                }
                last_matched[g] = Some(p);
                previous[g] = Some((f.frame, p));
            }
        }
    }
    m.mota = if m.gt_count == 0 {
        0.0
    } else {
        1.0 - (m.fn_ + m.fp + m.idsw) as f64 / m.gt_count as f64
    };
    m
}

fn identity(data: &CategoryData, alpha: f64) -> IdentityMetrics {
    let mut idtp = 0usize;
    for seq in &data.sequences {
        let (ng, np) = (seq.n_gt_ids, seq.n_pred_ids);
        if ng == 0 || np == 0 {
            continue;
        }
        let mut overlap = vec![0usize; ng * np];
        for f in &seq.frames {
            let n_pred = f.pred.len();
            for (gi, &g) in f.gt.iter().enumerate() {
                for (pi, &p) in f.pred.iter().enumerate() {
                    if f.sim[gi * n_pred + pi] >= alpha {
                        overlap[g * np + p] += 1;
                    }
                }
            }
        }
        let cost: Vec<f64> = overlap.iter().map(|&c| -(c as f64)).collect();
        let m = CostMatrix::new((0..ng).collect(), (0..np).collect(), cost);
        idtp += hungarian_solve(&m)
            .pairs
            .iter()
            .map(|&(g, p)| overlap[g * np + p])
            .sum::<usize>();
    }
    let idfn = data.gt_dets - idtp;
    let idfp = data.pred_dets - idtp;
    let denom = 2 * idtp + idfn + idfp;
    IdentityMetrics {
        idf1: if denom == 0 {
            0.0
        } else {
            2.0 * idtp as f64 / denom as f64
        },
        idtp,
        idfn,
        idfp,
    }
}

fn hota(data: &CategoryData) -> HotaMetrics {
    let alphas = hota_alphas();
    let mut out = HotaMetrics::default();
    for &alpha in &alphas {
        let (mut tp, mut fn_, mut fp) = (0usize, 0usize, 0usize);
        let mut ass_sum = 0.0;
        for seq in &data.sequences {
            let np = seq.n_pred_ids;
            let mut gt_count = vec![0usize; seq.n_gt_ids];
            let mut pred_count = vec![0usize; np];
            let mut pair_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            for f in &seq.frames {
                for &g in &f.gt {
                    gt_count[g] += 1;
                }
                for &p in &f.pred {
                    pred_count[p] += 1;
                }
                let fm = match_similarity(&f.sim, f.gt.len(), f.pred.len(), alpha, &[]);
                tp += fm.pairs.len();
                fn_ += fm.false_negatives.len();
                fp += fm.false_positives.len();
                for &(gi, pi, _) in &fm.pairs {
                    *pair_count.entry((f.gt[gi], f.pred[pi])).or_default() += 1;
                }
            }
            for (&(g, p), &c) in &pair_count {
                let denom = gt_count[g] + pred_count[p] - c;
                ass_sum += c as f64 * c as f64 / denom as f64;
            }
        }
        let det_a = if tp + fn_ + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_ + fp) as f64
        };
        let ass_a = if tp == 0 { 0.0 } else { ass_sum / tp as f64 };
        out.det_a_curve.push(det_a);
        out.ass_a_curve.push(ass_a);
        out.hota_curve.push((det_a * ass_a).sqrt());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    out.hota = mean(&out.hota_curve);
    out.det_a = mean(&out.det_a_curve);
    out.ass_a = mean(&out.ass_a_curve);
    out
}

fn with_gt(data: BTreeMap<Category, CategoryData>) -> BTreeMap<Category, CategoryData> {
    data.into_iter().filter(|(_, d)| d.gt_dets > 0).collect()
}

fn per_category<T: Send>(
    data: &BTreeMap<Category, CategoryData>,
    f: impl Fn(&CategoryData) -> T + Sync,
) -> BTreeMap<Category, T> {
    let entries: Vec<(&Category, &CategoryData)> = data.iter().collect();
    entries
        .into_par_iter()
        .map(|(c, d)| (c.clone(), f(d)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// CLEAR MOTA per category. Categories without ground truth are absent.
pub fn compute_mota(
    gt: &GroundTruth,
    pred: &[TrackRecord],
    kind: IouKind,
    alpha: f64,
) -> Result<BTreeMap<Category, ClearMetrics>, MetricsError> {
    let data = with_gt(prepare(gt, pred, kind)?);
    Ok(per_category(&data, |d| clear(d, alpha)))
}

/// Identity F1 per category.
pub fn compute_idf1(
    gt: &GroundTruth,
    pred: &[TrackRecord],
    kind: IouKind,
    alpha: f64,
) -> Result<BTreeMap<Category, IdentityMetrics>, MetricsError> {
    let data = with_gt(prepare(gt, pred, kind)?);
    Ok(per_category(&data, |d| identity(d, alpha)))
}

/// HOTA, DetA and AssA per category.
pub fn compute_hota(
    gt: &GroundTruth,
    pred: &[TrackRecord],
    kind: IouKind,
) -> Result<BTreeMap<Category, HotaMetrics>, MetricsError> {
    let data = with_gt(prepare(gt, pred, kind)?);
    Ok(per_category(&data, hota))
}

/// Every measure for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMetrics {
    pub category: Category,
    pub clear: ClearMetrics,
    pub identity: IdentityMetrics,
    pub hota: HotaMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub categories: Vec<CategoryMetrics>,
    pub m_hota: f64,
    pub m_mota: f64,
    pub m_idf1: f64,
    pub m_det_a: f64,
    pub m_ass_a: f64,
}

/// Unweighted means over the categories that have ground truth.
pub fn summarize(categories: Vec<CategoryMetrics>) -> Result<MetricsReport, MetricsError> {
    let present: Vec<CategoryMetrics> = categories
        .into_iter()
        .filter(|c| c.clear.gt_count > 0)
        .collect();
    if present.is_empty() {
        return Err(MetricsError::NoCategories);
    }
    let mean = |f: fn(&CategoryMetrics) -> f64| {
        present.iter().map(f).sum::<f64>() / present.len() as f64
    };
    Ok(MetricsReport {
        m_hota: mean(|c| c.hota.hota),
        m_mota: mean(|c| c.clear.mota),
        m_idf1: mean(|c| c.identity.idf1),
        m_det_a: mean(|c| c.hota.det_a),
        m_ass_a: mean(|c| c.hota.ass_a),
        categories: present,
    })
}

/// Computes every measure and summarises them. `alpha` applies to MOTA and
/// IDF1; HOTA always sweeps [`hota_alphas`].
pub fn evaluate(
    gt: &GroundTruth,
    pred: &[TrackRecord],
    kind: IouKind,
    alpha: f64,
) -> Result<MetricsReport, MetricsError> {
    let data = with_gt(prepare(gt, pred, kind)?);
    let rows = per_category(&data, |d| (clear(d, alpha), identity(d, alpha), hota(d)));
    summarize(
        rows.into_iter()
            .map(|(category, (clear, identity, hota))| CategoryMetrics {
                category,
                clear,
                identity,
                hota,
            })
            .collect(),
    )
}
