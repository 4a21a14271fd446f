//! Slow, obviously-correct reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use apptrack_core::{BBox, Category, Detection};

/// Pair count, total cost and pairs of the best matching found so far.
type Best = Option<(usize, f64, Vec<(usize, usize)>)>;

/// Best assignment by exhaustive search: maximum number of pairs over finite
/// entries, then minimum total cost (summed in row order), then the
/// lexicographically smallest pair list.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let n_cols = cost.first().map_or(0, Vec::len);
    let mut best: Best = None;
    let mut current = Vec::new();
    let mut used = vec![false; n_cols];
    fn recurse(
        row: usize,
        cost: &[Vec<f64>],
        used: &mut [bool],
        current: &mut Vec<(usize, usize)>,
        best: &mut Best,
    ) {
        if row == cost.len() {
            let total: f64 = current.iter().map(|&(r, c)| cost[r][c]).sum();
            let better = match best {
                None => true,
                Some((n, t, pairs)) => {
                    current.len() > *n
                        || (current.len() == *n
                            && (total < *t || (total == *t && current.as_slice() < pairs.as_slice())))
                }
            };
            if better {
                *best = Some((current.len(), total, current.clone()));
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] && cost[row][c].is_finite() {
                used[c] = true;
                current.push((row, c));
                recurse(row + 1, cost, used, current, best);
                current.pop();
                used[c] = false;
            }
        }
        recurse(row + 1, cost, used, current, best);
    }
    recurse(0, cost, &mut used, &mut current, &mut best);
    let (_, total, pairs) = best.expect("the empty matching always exists");
    (pairs, total)
}

fn corner_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    let inter = iw.max(0.0) * ih.max(0.0);
    let union = a.w * a.h + b.w * b.h - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Quadratic greedy NMS: repeatedly take the highest-scoring remaining box
/// (lowest index on ties), keep it and discard every remaining box of its
/// category that overlaps it by more than the threshold.
pub fn reference_nms(dets: &[Detection], thresholds: &BTreeMap<Category, f64>) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; dets.len()];
    let mut keep = Vec::new();
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && pick.is_none_or(|p| dets[i].score > dets[p].score) {
                pick = Some(i);
            }
        }
        let Some(p) = pick else { break };
        alive[p] = false;
        keep.push(p);
        let t = thresholds[&dets[p].category];
        for i in 0..dets.len() {
            if alive[i]
                && dets[i].category == dets[p].category
                && corner_iou(&dets[i].bbox, &dets[p].bbox) > t
            {
                alive[i] = false;
            }
        }
    }
    keep.sort_unstable();
    keep
}

/// IoU of two equally sized bitmaps; zero when both are empty.
pub fn bitmap_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Best matching of a small similarity matrix by enumeration: pairs need
/// similarity `>= alpha`; maximise the pair count, then the total similarity.
/// Returns `(pair count, total similarity)`.
pub fn brute_force_similarity_matching(sim: &[Vec<f64>], alpha: f64) -> (usize, f64) {
    let cost: Vec<Vec<f64>> = sim
        .iter()
        .map(|row| {
            row.iter()
                .map(|&s| if s >= alpha { -s } else { f64::INFINITY })
                .collect()
        })
        .collect();
    let (pairs, total) = brute_force_assignment(&cost);
    (pairs.len(), -total)
}
