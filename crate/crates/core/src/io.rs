//! Line-delimited file formats.
//!
//! Every format is one JSON object per line. Detection files keep numbers at
//! full round-trip precision so embeddings survive unchanged; track, ground
//! truth, MOT and report files print every real number with exactly six
//! decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{GroundTruth, GtRecord, MetricsReport};
use crate::model::{BBox, Category, Detection, Embedding, RleMask, TrackId, TrackRecord};

/// Detections grouped by sequence, then frame.
pub type DetectionSet = BTreeMap<String, BTreeMap<u64, Vec<Detection>>>;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(
        "{path}:{line}: sequence {sequence:?} has embedding dimension {expected}, found {found}"
    )]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        sequence: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: negative frame index {frame}")]
    NegativeFrame {
        path: PathBuf,
        line: usize,
        frame: i64,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct MaskLine {
    size: [u32; 2],
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    sequence: String,
    frame: i64,
    category: String,
    bbox: [f64; 4],
    score: f64,
    embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskLine>,
}

#[derive(Deserialize)]
struct RecordLine {
    sequence: String,
    frame: i64,
    id: u64,
    category: String,
    bbox: [f64; 4],
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    mask: Option<MaskLine>,
}

fn mask_to_line(m: &RleMask) -> MaskLine {
    MaskLine {
        size: [m.height(), m.width()],
        counts: m.counts().to_vec(),
    }
}

fn bbox_of(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

/// Iterates the non-blank lines of `path` with 1-based line numbers.
fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), IoError>,
) -> Result<(), IoError> {
    let reader = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            f(i + 1, &line)?;
        }
    }
    Ok(())
}

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn parse_err(&self, message: impl ToString) -> IoError {
        IoError::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.to_string(),
        }
    }

    fn frame(&self, frame: i64) -> Result<u64, IoError> {
        u64::try_from(frame).map_err(|_| IoError::NegativeFrame {
            path: self.path.to_path_buf(),
            line: self.line,
            frame,
        })
    }

    fn category(&self, name: &str) -> Result<Category, IoError> {
        name.parse().map_err(|e| self.parse_err(e))
    }

    fn mask(&self, m: Option<MaskLine>) -> Result<Option<RleMask>, IoError> {
        m.map(|m| RleMask::new(m.size[0], m.size[1], m.counts))
            .transpose()
            .map_err(|e| self.parse_err(e))
    }
}

pub fn parse_detections(path: &Path) -> Result<DetectionSet, IoError> {
    let mut out = DetectionSet::new();
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for_each_line(path, |line, text| {
        let ctx = LineCtx { path, line };
        let raw: DetectionLine = serde_json::from_str(text).map_err(|e| ctx.parse_err(e))?;
        let frame = ctx.frame(raw.frame)?;
        let expected = *dims
            .entry(raw.sequence.clone())
            .or_insert(raw.embedding.len());
        if expected != raw.embedding.len() {
            return Err(IoError::DimensionMismatch {
                path: path.to_path_buf(),
                line,
                sequence: raw.sequence,
                expected,
                found: raw.embedding.len(),
            });
        }
        let det = Detection {
            category: ctx.category(&raw.category)?,
            bbox: bbox_of(raw.bbox),
            mask: ctx.mask(raw.mask)?,
            score: raw.score,
            embedding: Embedding::new(raw.embedding),
            frame,
            sequence: raw.sequence,
        };
        det.validate().map_err(|e| ctx.parse_err(e))?;
        out.entry(det.sequence.clone())
            .or_default()
            .entry(frame)
            .or_default()
            .push(det);
        Ok(())
    })?;
    Ok(out)
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes detections ordered by sequence and frame, keeping the input order
/// within a frame.
pub fn write_detections<'a>(
    path: &Path,
    detections: impl IntoIterator<Item = &'a Detection>,
) -> Result<(), IoError> {
    let mut sorted: Vec<&Detection> = detections.into_iter().collect();
    sorted.sort_by(|a, b| (&a.sequence, a.frame).cmp(&(&b.sequence, b.frame)));
    write_lines(
        path,
        sorted.into_iter().map(|d| {
            let line = DetectionLine {
                sequence: d.sequence.clone(),
                frame: d.frame as i64,
                category: d.category.name().to_string(),
                bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                score: d.score,
                embedding: d.embedding.values().to_vec(),
                mask: d.mask.as_ref().map(mask_to_line),
            };
            serde_json::to_string(&line).expect("detection lines always serialise")
        }),
    )
}

/// Six-decimal rendering without a negative zero.
pub fn fixed(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialise")
}

fn bbox_json(b: &BBox) -> String {
    format!("[{},{},{},{}]", fixed(b.x), fixed(b.y), fixed(b.w), fixed(b.h))
}

fn mask_json(m: &RleMask) -> String {
    let counts: Vec<String> = m.counts().iter().map(u32::to_string).collect();
    format!(
        "{{\"size\":[{},{}],\"counts\":[{}]}}",
        m.height(),
        m.width(),
        counts.join(",")
    )
}

fn record_line(
    sequence: &str,
    frame: u64,
    id: u64,
    category: &Category,
    bbox: &BBox,
    score: Option<f64>,
    mask: Option<&RleMask>,
) -> String {
    let mut s = format!(
        "{{\"sequence\":{},\"frame\":{frame},\"id\":{id},\"category\":{},\"bbox\":{}",
        json_str(sequence),
        json_str(category.name()),
        bbox_json(bbox)
    );
    if let Some(score) = score {
        let _ = write!(s, ",\"score\":{}", fixed(score));
    }
    if let Some(m) = mask {
        let _ = write!(s, ",\"mask\":{}", mask_json(m));
    }
    s.push('}');
    s
}

/// Writes track records sorted by `(sequence, frame, track id)`.
pub fn write_tracks(path: &Path, records: &[TrackRecord]) -> Result<(), IoError> {
    let mut sorted: Vec<&TrackRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.sequence, a.frame, a.track_id).cmp(&(&b.sequence, b.frame, b.track_id)));
    write_lines(
        path,
        sorted.into_iter().map(|r| {
            record_line(
                &r.sequence,
                r.frame,
                r.track_id.0,
                &r.category,
                &r.bbox,
                Some(r.score),
                r.mask.as_ref(),
            )
        }),
    )
}

pub fn parse_tracks(path: &Path) -> Result<Vec<TrackRecord>, IoError> {
    let mut out = Vec::new();
    for_each_line(path, |line, text| {
        let ctx = LineCtx { path, line };
        let raw: RecordLine = serde_json::from_str(text).map_err(|e| ctx.parse_err(e))?;
        out.push(TrackRecord {
            frame: ctx.frame(raw.frame)?,
            track_id: TrackId(raw.id),
            category: ctx.category(&raw.category)?,
            bbox: bbox_of(raw.bbox),
            score: raw.score.ok_or_else(|| ctx.parse_err("missing field `score`"))?,
            mask: ctx.mask(raw.mask)?,
            sequence: raw.sequence,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Writes ground truth sorted by `(sequence, frame, id)`.
pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<(), IoError> {
    let mut sorted: Vec<&GtRecord> = gt.records().iter().collect();
    sorted.sort_by(|a, b| (&a.sequence, a.frame, a.gt_id).cmp(&(&b.sequence, b.frame, b.gt_id)));
    write_lines(
        path,
        sorted.into_iter().map(|g| {
            record_line(&g.sequence, g.frame, g.gt_id, &g.category, &g.bbox, None, g.mask.as_ref())
        }),
    )
}

pub fn parse_ground_truth(path: &Path) -> Result<GroundTruth, IoError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for_each_line(path, |line, text| {
        let ctx = LineCtx { path, line };
        let raw: RecordLine = serde_json::from_str(text).map_err(|e| ctx.parse_err(e))?;
        let frame = ctx.frame(raw.frame)?;
        if !seen.insert((raw.sequence.clone(), frame, raw.id)) {
            return Err(ctx.parse_err(format!(
                "duplicate ground truth id {} in sequence {:?} frame {frame}",
                raw.id, raw.sequence
            )));
        }
        out.push(GtRecord {
            frame,
            gt_id: raw.id,
            category: ctx.category(&raw.category)?,
            bbox: bbox_of(raw.bbox),
            mask: ctx.mask(raw.mask)?,
            sequence: raw.sequence,
        });
        Ok(())
    })?;
    Ok(GroundTruth::new(out).expect("uniqueness checked while parsing"))
}

/// 1-based category indices for MOT export: the eight standard classes in
/// their usual order, then any other category in sorted order.
pub fn category_index_table<'a>(
    categories: impl IntoIterator<Item = &'a Category>,
) -> Vec<(u32, Category)> {
    let extra: BTreeSet<&Category> = categories
        .into_iter()
        .filter(|c| matches!(c, Category::Custom(_)))
        .collect();
    Category::DEFAULTS
        .iter()
        .chain(extra)
        .enumerate()
        .map(|(i, c)| (i as u32 + 1, c.clone()))
        .collect()
}

fn file_stem(sequence: &str) -> String {
    sequence
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes one `<sequence>.txt` per sequence in the 10-column MOT layout plus
/// `categories.txt` mapping indices to names. Returns the written paths.
pub fn write_mot(dir: &Path, records: &[TrackRecord]) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let table = category_index_table(records.iter().map(|r| &r.category));
    let index: BTreeMap<&Category, u32> = table.iter().map(|(i, c)| (c, *i)).collect();
    let mut by_seq: BTreeMap<&str, Vec<&TrackRecord>> = BTreeMap::new();
    for r in records {
        by_seq.entry(&r.sequence).or_default().push(r);
    }
    let mut written = Vec::new();
    let mut stems = BTreeSet::new();
    for (seq, mut rows) in by_seq {
        let stem = file_stem(seq);
        if !stems.insert(stem.clone()) {
            return Err(IoError::Io {
                path: dir.join(format!("{stem}.txt")),
                source: io::Error::new(
                    io::ErrorKind::AlreadyExists,
                    "two sequence names map to the same file name",
                ),
            });
        }
        rows.sort_by_key(|r| (r.frame, r.track_id));
        let path = dir.join(format!("{stem}.txt"));
        write_lines(
            &path,
            rows.into_iter().map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},-1,-1",
                    r.frame,
                    r.track_id,
                    fixed(r.bbox.x),
                    fixed(r.bbox.y),
                    fixed(r.bbox.w),
                    fixed(r.bbox.h),
                    fixed(r.score),
                    index[&r.category]
                )
            }),
        )?;
        written.push(path);
    }
    let path = dir.join("categories.txt");
    write_lines(&path, table.iter().map(|(i, c)| format!("{i} {c}")))?;
    written.push(path);
    Ok(written)
}

fn category_fields(c: &crate::metrics::CategoryMetrics) -> Vec<(&'static str, String)> {
    vec![
        ("HOTA", fixed(c.hota.hota)),
        ("DetA", fixed(c.hota.det_a)),
        ("AssA", fixed(c.hota.ass_a)),
        ("MOTA", fixed(c.clear.mota)),
        ("IDF1", fixed(c.identity.idf1)),
        ("IDSW", c.clear.idsw.to_string()),
        ("TP", c.clear.tp.to_string()),
        ("FN", c.clear.fn_.to_string()),
        ("FP", c.clear.fp.to_string()),
        ("GT", c.clear.gt_count.to_string()),
        ("IDTP", c.identity.idtp.to_string()),
        ("IDFN", c.identity.idfn.to_string()),
        ("IDFP", c.identity.idfp.to_string()),
    ]
}

fn summary_fields(r: &MetricsReport) -> [(&'static str, f64); 5] {
    [
        ("mHOTA", r.m_hota),
        ("mMOTA", r.m_mota),
        ("mIDF1", r.m_idf1),
        ("mDetA", r.m_det_a),
        ("mAssA", r.m_ass_a),
    ]
}

/// Flat `key value` table: the five means, then `<category>/<measure>` rows.
pub fn format_report_text(report: &MetricsReport) -> String {
    let mut rows: Vec<(String, String)> = summary_fields(report)
        .iter()
        .map(|(k, v)| (k.to_string(), fixed(*v)))
        .collect();
    for c in &report.categories {
        for (k, v) in category_fields(c) {
            rows.push((format!("{}/{k}", c.category), v));
        }
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

/// Structured report: the five means at the top level and one object per
/// category under `categories`.
pub fn format_report_json(report: &MetricsReport) -> String {
    let mut out = String::from("{\n");
    for (k, v) in summary_fields(report) {
        let _ = writeln!(out, "  \"{k}\": {},", fixed(v));
    }
    out.push_str("  \"categories\": {");
    for (i, c) in report.categories.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let fields: Vec<String> = category_fields(c)
            .into_iter()
            .map(|(k, v)| format!("\"{k}\": {v}"))
            .collect();
        let _ = write!(out, "    {}: {{{}}}", json_str(c.category.name()), fields.join(", "));
    }
    if !report.categories.is_empty() {
        out.push_str("\n  ");
    }
    out.push_str("}\n}\n");
    out
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<(), IoError> {
    fs::write(path, format_report_json(report)).map_err(io_err(path))
}
