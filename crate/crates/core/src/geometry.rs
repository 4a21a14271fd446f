//! Overlap measures and per-category non-maximum suppression.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{BBox, Category, Detection, RleMask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("mask canvases differ: {a_h}x{a_w} vs {b_h}x{b_w}")]
    CanvasMismatch { a_h: u32, a_w: u32, b_h: u32, b_w: u32 },
    #[error("no NMS threshold configured for category `{0}`")]
    MissingThreshold(Category),
}

/// Intersection over union of two boxes; 0 when the union is empty and
/// exactly 1 for identical non-empty boxes.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    let iw = (a.x2().min(b.x2()) - a.x.max(b.x)).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Intersection and union pixel counts of two masks, computed run by run.
pub fn mask_overlap(a: &RleMask, b: &RleMask) -> Result<(u64, u64), GeometryError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(GeometryError::CanvasMismatch {
            a_h: a.height(),
            a_w: a.width(),
            b_h: b.height(),
            b_w: b.width(),
        });
    }
    let (ca, cb) = (a.counts(), b.counts());
    let (mut ia, mut ib) = (0usize, 0usize);
    // Pixels remaining in the current run of each mask.
    let (mut ra, mut rb) = (u64::from(ca[0]), u64::from(cb[0]));
    let (mut inter, mut union) = (0u64, 0u64);
    loop {
        while ra == 0 {
            ia += 1;
            match ca.get(ia) {
                Some(&c) => ra = u64::from(c),
                None => return Ok((inter, union)),
            }
        }
        while rb == 0 {
            ib += 1;
            match cb.get(ib) {
                Some(&c) => rb = u64::from(c),
                None => return Ok((inter, union)),
            }
        }
        let step = ra.min(rb);
        let (fa, fb) = (ia % 2 == 1, ib % 2 == 1);
        if fa && fb {
            inter += step;
        }
        if fa || fb {
            union += step;
        }
        ra -= step;
        rb -= step;
    }
}

/// Intersection over union of two masks on the same canvas; 0 when both are
/// empty.
pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64, GeometryError> {
    let (inter, union) = mask_overlap(a, b)?;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Indices of the detections that survive per-category greedy NMS, in input
/// order.
///
/// Within a category, candidates are visited by descending score (earlier
/// index first on ties); a candidate is suppressed when its IoU with an
/// already kept box is strictly greater than the category threshold.
pub fn nms_keep_indices(
    detections: &[Detection],
    thresholds: &BTreeMap<Category, f64>,
) -> Result<Vec<usize>, GeometryError> {
    let mut by_category: BTreeMap<&Category, Vec<usize>> = BTreeMap::new();
    for (i, det) in detections.iter().enumerate() {
        by_category.entry(&det.category).or_default().push(i);
    }
    let mut keep = Vec::with_capacity(detections.len());
    for (category, mut members) in by_category {
        let thresh = *thresholds
            .get(category)
            .ok_or_else(|| GeometryError::MissingThreshold(category.clone()))?;
        // Stable sort keeps input order among equal scores.
        members.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
        let mut kept: Vec<usize> = Vec::new();
        for idx in members {
            let bbox = &detections[idx].bbox;
            if kept
                .iter()
                .all(|&k| box_iou(&detections[k].bbox, bbox) <= thresh)
            {
                kept.push(idx);
            }
        }
        keep.extend(kept);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Applies [`nms_keep_indices`] and returns the surviving detections.
pub fn multiclass_nms(
    detections: &[Detection],
    thresholds: &BTreeMap<Category, f64>,
) -> Result<Vec<Detection>, GeometryError> {
    Ok(nms_keep_indices(detections, thresholds)?
        .into_iter()
        .map(|i| detections[i].clone())
        .collect())
}
