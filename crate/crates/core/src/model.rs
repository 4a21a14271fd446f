//! Domain types shared by every stage of the engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Object category.
///
/// The eight built-in categories cover the driving-scene label set; any other
/// non-empty name is carried as [`Category::Custom`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Category {
    Pedestrian,
    Rider,
    Car,
    Truck,
    Bus,
    Train,
    Motorcycle,
    Bicycle,
    Custom(String),
}

impl Category {
    pub const DEFAULTS: [Category; 8] = [
        Category::Pedestrian,
        Category::Rider,
        Category::Car,
        Category::Truck,
        Category::Bus,
        Category::Train,
        Category::Motorcycle,
        Category::Bicycle,
    ];

    pub fn name(&self) -> &str {
        match self {
            Category::Pedestrian => "pedestrian",
            Category::Rider => "rider",
            Category::Car => "car",
            Category::Truck => "truck",
            Category::Bus => "bus",
            Category::Train => "train",
            Category::Motorcycle => "motorcycle",
            Category::Bicycle => "bicycle",
            Category::Custom(name) => name,
        }
    }

    /// Suppression threshold used by the detector stage for the built-in
    /// categories.
    pub fn default_nms_threshold(&self) -> Option<f64> {
        match self {
            Category::Pedestrian => Some(0.6),
            Category::Rider => Some(0.1),
            Category::Car => Some(0.5),
            Category::Truck => Some(0.4),
            Category::Bus => Some(0.01),
            Category::Train => Some(0.01),
            Category::Motorcycle => Some(0.01),
            Category::Bicycle => Some(0.4),
            Category::Custom(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("category name must not be empty")]
pub struct EmptyCategoryName;

impl FromStr for Category {
    type Err = EmptyCategoryName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(EmptyCategoryName);
        }
        Ok(Category::DEFAULTS
            .iter()
            .find(|c| c.name() == s)
            .cloned()
            .unwrap_or_else(|| Category::Custom(s.to_string())))
    }
}

impl TryFrom<String> for Category {
    type Error = EmptyCategoryName;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Category> for String {
    fn from(value: Category) -> Self {
        value.name().to_string()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Axis-aligned box in pixels: top-left corner plus width and height.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Builds a box from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
            && self.w >= 0.0
            && self.h >= 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("mask canvas must be non-empty, got {height}x{width}")]
    EmptyCanvas { height: u32, width: u32 },
    #[error("run lengths sum to {sum}, canvas holds {expected} pixels")]
    CountSum { sum: u64, expected: u64 },
    #[error("run {index} is zero; only the leading background run may be empty")]
    ZeroRun { index: usize },
    #[error("bitmap has {len} pixels, canvas holds {expected}")]
    BitmapSize { len: usize, expected: usize },
}

/// Binary mask stored as column-major run lengths, starting with background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RleMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl RleMask {
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, MaskError> {
        if height == 0 || width == 0 {
            return Err(MaskError::EmptyCanvas { height, width });
        }
        let expected = u64::from(height) * u64::from(width);
        let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if sum != expected {
            return Err(MaskError::CountSum { sum, expected });
        }
        if let Some(index) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::ZeroRun { index: index + 1 });
        }
        Ok(Self {
            height,
            width,
            counts,
        })
    }

    /// Encodes a column-major bitmap (`pixel (x, y)` at `y + height * x`).
    pub fn from_bitmap(height: u32, width: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let expected = height as usize * width as usize;
        if bits.len() != expected {
            return Err(MaskError::BitmapSize {
                len: bits.len(),
                expected,
            });
        }
        let mut runs = RunBuilder::default();
        for &b in bits {
            runs.push(b, 1);
        }
        Self::new(height, width, runs.finish())
    }

    /// Filled rectangle covering the pixels whose centres fall inside `bbox`,
    /// clipped to the canvas.
    pub fn from_box(height: u32, width: u32, bbox: &BBox) -> Result<Self, MaskError> {
        let clamp = |v: f64, hi: u32| -> u32 { v.round().clamp(0.0, f64::from(hi)) as u32 };
        let (x0, x1) = (clamp(bbox.x, width), clamp(bbox.x2(), width));
        let (y0, y1) = (clamp(bbox.y, height), clamp(bbox.y2(), height));
        let mut runs = RunBuilder::default();
        for col in 0..width {
            if (x0..x1).contains(&col) && y0 < y1 {
                runs.push(false, y0);
                runs.push(true, y1 - y0);
                runs.push(false, height - y1);
            } else {
                runs.push(false, height);
            }
        }
        Self::new(height, width, runs.finish())
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel count.
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| u64::from(c))
            .sum()
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.height as usize * self.width as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        out
    }

    /// Bounding box of the foreground, or `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BBox> {
        let h = u64::from(self.height);
        let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = u64::from(c);
            if i % 2 == 1 && c > 0 {
                let end = pos + c - 1;
                let (cs, ce) = (pos / h, end / h);
                x0 = x0.min(cs);
                x1 = x1.max(ce + 1);
                if cs != ce {
                    y0 = 0;
                    y1 = h;
                } else {
                    y0 = y0.min(pos % h);
                    y1 = y1.max(end % h + 1);
                }
            }
            pos += c;
        }
        (x0 != u64::MAX).then(|| BBox::from_corners(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
    }

    /// True when `bbox` lies inside the mask canvas.
    pub fn canvas_contains(&self, bbox: &BBox) -> bool {
        bbox.x >= 0.0
            && bbox.y >= 0.0
            && bbox.x2() <= f64::from(self.width)
            && bbox.y2() <= f64::from(self.height)
    }
}

/// Accumulates alternating runs, merging adjacent runs of equal value.
#[derive(Default)]
struct RunBuilder {
    counts: Vec<u32>,
    current: bool,
    run: u32,
}

impl RunBuilder {
    fn push(&mut self, value: bool, len: u32) {
        if len == 0 {
            return;
        }
        if value != self.current {
            self.counts.push(self.run);
            self.run = 0;
            self.current = value;
        }
        self.run += len;
    }

    fn finish(mut self) -> Vec<u32> {
        self.counts.push(self.run);
        self.counts
    }
}

/// Appearance embedding vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// One detected object in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub sequence: String,
    pub frame: u64,
    pub category: Category,
    pub bbox: BBox,
    pub mask: Option<RleMask>,
    pub score: f64,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("box {0:?} has a non-finite coordinate or negative extent")]
    Box(BBox),
    #[error("embedding is empty or has non-finite entries")]
    Embedding,
}

impl Detection {
    /// Checks the hard invariants. A box that leaves the mask canvas is only
    /// logged.
    pub fn validate(&self) -> Result<(), DetectionError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DetectionError::Score(self.score));
        }
        if !self.bbox.is_valid() {
            return Err(DetectionError::Box(self.bbox));
        }
        if self.embedding.dim() == 0 || !self.embedding.is_finite() {
            return Err(DetectionError::Embedding);
        }
        if let Some(mask) = &self.mask {
            if !mask.canvas_contains(&self.bbox) {
                log::warn!(
                    "{} frame {}: box {:?} extends past the {}x{} mask canvas",
                    self.sequence,
                    self.frame,
                    self.bbox,
                    mask.width(),
                    mask.height()
                );
            }
        }
        Ok(())
    }
}

/// Lifecycle state of a tracklet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Lost,
    Removed,
}

/// Identifier issued by the tracker, unique within one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One output row of the tracker.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackRecord {
    pub sequence: String,
    pub frame: u64,
    pub track_id: TrackId,
    pub category: Category,
    pub bbox: BBox,
    pub score: f64,
    pub mask: Option<RleMask>,
}

/// A tracked identity.
#[derive(Clone, Debug)]
pub struct Tracklet {
    pub id: TrackId,
    pub category: Category,
    pub state: TrackState,
    pub hits: u32,
    pub frames_lost: u32,
    pub(crate) history: std::collections::VecDeque<(Embedding, f64)>,
    pub(crate) aggregate: Embedding,
    pub last_box: BBox,
    pub last_frame: u64,
}

impl Tracklet {
    pub fn history(&self) -> impl ExactSizeIterator<Item = (&Embedding, f64)> {
        self.history.iter().map(|(e, s)| (e, *s))
    }

    pub fn aggregate(&self) -> &Embedding {
        &self.aggregate
    }
}

/// Every tunable of the tracker and the detection post-processing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub high_thresh: f64,
    pub low_thresh: f64,
    pub tau: usize,
    pub gate_stage1: f64,
    pub gate_stage2: f64,
    pub gate_tentative: f64,
    pub min_hits: u32,
    pub max_lost: u32,
    pub categories: Vec<Category>,
    pub nms_thresholds: BTreeMap<Category, f64>,
    pub backfill_on_confirm: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            high_thresh: 0.84,
            low_thresh: 0.3,
            tau: 30,
            gate_stage1: 0.45,
            gate_stage2: 0.45,
            gate_tentative: 0.35,
            min_hits: 2,
            max_lost: 10,
            categories: Category::DEFAULTS.to_vec(),
            nms_thresholds: default_nms_thresholds(),
            backfill_on_confirm: false,
        }
    }
}

pub fn default_nms_thresholds() -> BTreeMap<Category, f64> {
    Category::DEFAULTS
        .iter()
        .map(|c| (c.clone(), c.default_nms_threshold().unwrap()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("low_thresh ({low}) must be strictly below high_thresh ({high})")]
    ThresholdOrder { low: f64, high: f64 },
    #[error("{field} = {value} is outside {domain}")]
    OutOfRange {
        field: String,
        value: f64,
        domain: &'static str,
    },
    #[error("NMS threshold given for undeclared category `{0}`")]
    UnknownCategory(Category),
    #[error("category `{0}` declared more than once")]
    DuplicateCategory(Category),
}

/// All violations found in a configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "invalid tracker configuration: {}", parts.join("; "))
    }
}

impl TrackerConfig {
    /// Returns the configuration unchanged when valid, otherwise every
    /// violated constraint.
    pub fn validate(self) -> Result<Self, ConfigErrors> {
        let mut errors = Vec::new();
        let mut range = |field: &str, value: f64, lo: f64, hi: f64, domain: &'static str| {
            if !(lo..=hi).contains(&value) {
                errors.push(ConfigError::OutOfRange {
                    field: field.to_string(),
                    value,
                    domain,
                });
            }
        };
        range("high_thresh", self.high_thresh, 0.0, 1.0, "[0, 1]");
        range("low_thresh", self.low_thresh, 0.0, 1.0, "[0, 1]");
        range("gate_stage1", self.gate_stage1, 0.0, 2.0, "[0, 2]");
        range("gate_stage2", self.gate_stage2, 0.0, 2.0, "[0, 2]");
        range("gate_tentative", self.gate_tentative, 0.0, 2.0, "[0, 2]");
        range("tau", self.tau as f64, 1.0, f64::INFINITY, "[1, inf)");
        range("min_hits", f64::from(self.min_hits), 1.0, f64::INFINITY, "[1, inf)");
        for (cat, &t) in &self.nms_thresholds {
            range(&format!("nms_thresholds[{cat}]"), t, 0.0, 1.0, "[0, 1]");
        }
        if self.low_thresh >= self.high_thresh {
            errors.push(ConfigError::ThresholdOrder {
                low: self.low_thresh,
                high: self.high_thresh,
            });
        }
        let mut declared = BTreeSet::new();
        for cat in &self.categories {
            if !declared.insert(cat) {
                errors.push(ConfigError::DuplicateCategory(cat.clone()));
            }
        }
        for cat in self.nms_thresholds.keys() {
            if !declared.contains(cat) {
                errors.push(ConfigError::UnknownCategory(cat.clone()));
            }
        }
        if errors.is_empty() {
            Ok(self)
        } else {
            Err(ConfigErrors(errors))
        }
    }

    /// Declares `category` (if new) and sets its NMS threshold.
    pub fn set_nms_threshold(&mut self, category: Category, threshold: f64) {
        if !self.categories.contains(&category) {
            self.categories.push(category.clone());
        }
        self.nms_thresholds.insert(category, threshold);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = TrackerConfig::default().validate().unwrap();
        assert_eq!(cfg.high_thresh, 0.84);
        assert_eq!(cfg.low_thresh, 0.3);
        assert_eq!(cfg.min_hits, 2);
        assert_eq!(cfg.max_lost, 10);
        assert_eq!(cfg.categories.len(), 8);
        let nms: Vec<f64> = Category::DEFAULTS
            .iter()
            .map(|c| cfg.nms_thresholds[c])
            .collect();
        assert_eq!(nms, vec![0.6, 0.1, 0.5, 0.4, 0.01, 0.01, 0.01, 0.4]);
    }

    #[test]
    fn equal_thresholds_are_rejected() {
        let cfg = TrackerConfig {
            high_thresh: 0.3,
            low_thresh: 0.3,
            ..Default::default()
        };
        let errs = cfg.validate().unwrap_err().0;
        assert!(errs
            .iter()
            .any(|e| matches!(e, ConfigError::ThresholdOrder { .. })));
    }

    #[test]
    fn zero_tau_is_out_of_range() {
        let cfg = TrackerConfig {
            tau: 0,
            ..Default::default()
        };
        let errs = cfg.validate().unwrap_err().0;
        assert_eq!(errs.len(), 1);
        assert!(matches!(&errs[0], ConfigError::OutOfRange { field, .. } if field == "tau"));
    }

    #[test]
    fn every_violation_is_reported() {
        let mut cfg = TrackerConfig {
            high_thresh: 0.2,
            low_thresh: 0.5,
            gate_stage1: 2.5,
            min_hits: 0,
            ..Default::default()
        };
        cfg.nms_thresholds
            .insert(Category::Custom("forklift".into()), 0.5);
        let errs = cfg.validate().unwrap_err().0;
        assert_eq!(errs.len(), 4, "{errs:?}");
        assert!(errs
            .iter()
            .any(|e| matches!(e, ConfigError::UnknownCategory(c) if c.name() == "forklift")));
    }

    #[test]
    fn category_parsing() {
        assert_eq!("car".parse::<Category>().unwrap(), Category::Car);
        assert_eq!(
            "forklift".parse::<Category>().unwrap(),
            Category::Custom("forklift".into())
        );
        assert!("  ".parse::<Category>().is_err());
        let json = serde_json::to_string(&Category::Motorcycle).unwrap();
        assert_eq!(json, "\"motorcycle\"");
    }

    #[test]
    fn rle_validation() {
        assert!(RleMask::new(2, 2, vec![0, 4]).is_ok());
        assert!(matches!(
            RleMask::new(2, 2, vec![1, 2]),
            Err(MaskError::CountSum { .. })
        ));
        assert!(matches!(
            RleMask::new(2, 2, vec![1, 0, 3]),
            Err(MaskError::ZeroRun { index: 1 })
        ));
    }

    #[test]
    fn rle_from_box_matches_bitmap() {
        let (h, w) = (7u32, 9u32);
        for bbox in [
            BBox::new(2.0, 1.0, 3.0, 4.0),
            BBox::new(0.0, 0.0, 9.0, 7.0),
            BBox::new(0.0, 0.0, 3.0, 7.0),
            BBox::new(4.0, 0.0, 5.0, 7.0),
            BBox::new(-3.0, 5.0, 5.0, 10.0),
            BBox::new(20.0, 20.0, 5.0, 5.0),
        ] {
            let rle = RleMask::from_box(h, w, &bbox).unwrap();
            let mut bits = vec![false; (h * w) as usize];
            for x in 0..w {
                for y in 0..h {
                    let (cx, cy) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
                    if cx > bbox.x && cx < bbox.x2() && cy > bbox.y && cy < bbox.y2() {
                        bits[(y + h * x) as usize] = true;
                    }
                }
            }
            assert_eq!(rle, RleMask::from_bitmap(h, w, &bits).unwrap(), "{bbox:?}");
        }
    }

    #[test]
    fn rle_bitmap_round_trip_and_bbox() {
        let bits = [false, true, true, false, false, true];
        let rle = RleMask::from_bitmap(3, 2, &bits).unwrap();
        assert_eq!(rle.counts(), &[1, 2, 2, 1]);
        assert_eq!(rle.to_bitmap(), bits);
        assert_eq!(rle.area(), 3);
        assert_eq!(rle.bounding_box(), Some(BBox::new(0.0, 1.0, 2.0, 2.0)));
        let empty = RleMask::new(3, 2, vec![6]).unwrap();
        assert_eq!(empty.bounding_box(), None);
    }

    #[test]
    fn detection_validation() {
        let mut det = Detection {
            sequence: "s".into(),
            frame: 0,
            category: Category::Car,
            bbox: BBox::new(0.0, 0.0, 1.0, 1.0),
            mask: None,
            score: 0.5,
            embedding: Embedding::new(vec![1.0]),
        };
        assert!(det.validate().is_ok());
        det.score = 1.5;
        assert!(matches!(det.validate(), Err(DetectionError::Score(_))));
        det.score = 0.5;
        det.bbox.w = -1.0;
        assert!(matches!(det.validate(), Err(DetectionError::Box(_))));
        det.bbox.w = 1.0;
        det.embedding = Embedding::new(vec![f64::NAN]);
        assert!(det.validate().is_err());
        // A box past the mask canvas is a warning only.
        det.embedding = Embedding::new(vec![1.0]);
        det.bbox = BBox::new(5.0, 5.0, 10.0, 10.0);
        det.mask = Some(RleMask::new(4, 4, vec![16]).unwrap());
        assert!(det.validate().is_ok());
    }
}
