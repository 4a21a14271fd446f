//! Seeded synthetic sequences with known identities.
//!
//! Every identity owns a unit-norm latent appearance vector; each observation
//! embeds as `normalize(latent + N(0, sigma^2 I))`. Boxes follow a bounded
//! Gaussian random walk. Randomness comes from `ChaCha8Rng` seeded with
//! `seed_from_u64`, so a configuration always reproduces the same sequence on
//! every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::cosine_distance;
use crate::metrics::{GroundTruth, GtRecord};
use crate::model::{BBox, Category, Detection, Embedding, RleMask};

/// Candidate draws per identity before separation is declared infeasible.
const SEPARATION_ATTEMPTS: usize = 10_000;
/// Re-draws allowed when an observation lands nearer a foreign latent.
const MAX_REGENERATIONS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "could not place identity {placed} of {requested} at cosine separation {separation} in {dim} dimensions"
    )]
    SeparationInfeasible {
        requested: usize,
        placed: usize,
        separation: f64,
        dim: usize,
    },
    #[error("observations stayed ambiguous after {0} regenerations")]
    Inseparable(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    /// Ground-truth id of the occluded identity (1-based).
    pub identity: u64,
    pub start: u64,
    pub duration: u64,
}

impl Occlusion {
    fn covers(&self, identity: u64, frame: u64) -> bool {
        self.identity == identity && frame >= self.start && frame < self.start + self.duration
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub sequence: String,
    pub num_identities: usize,
    pub num_frames: u64,
    pub embed_dim: usize,
    pub min_identity_separation: f64,
    pub embed_noise_sigma: f64,
    /// `(width, height)` in pixels.
    pub canvas: (u32, u32),
    /// Standard deviation of the per-frame displacement, in pixels.
    pub motion: f64,
    /// Range of box side lengths, in pixels.
    pub box_size: (f64, f64),
    /// Standard deviation of detection box jitter, in pixels.
    pub box_noise: f64,
    pub miss_prob: f64,
    pub low_score_prob: f64,
    pub fp_rate: f64,
    pub occlusions: Vec<Occlusion>,
    pub categories: Vec<Category>,
    pub with_masks: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sequence: "synth".into(),
            num_identities: 10,
            num_frames: 100,
            embed_dim: 128,
            min_identity_separation: 0.5,
            embed_noise_sigma: 0.05,
            canvas: (1280, 720),
            motion: 4.0,
            box_size: (30.0, 100.0),
            box_noise: 1.0,
            miss_prob: 0.0,
            low_score_prob: 0.0,
            fp_rate: 0.0,
            occlusions: Vec::new(),
            categories: vec![Category::Pedestrian, Category::Car],
            with_masks: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        for (name, p) in [
            ("miss_prob", self.miss_prob),
            ("low_score_prob", self.low_score_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        let sep = self.min_identity_separation;
        if !(sep > 0.0 && sep < 2.0) {
            return bad(format!("min_identity_separation = {sep} outside (0, 2)"));
        }
        if self.num_identities == 0 || self.num_frames == 0 || self.embed_dim == 0 {
            return bad("num_identities, num_frames and embed_dim must be positive".into());
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return bad(format!("fp_rate = {} must be finite and >= 0", self.fp_rate));
        }
        if !(self.embed_noise_sigma >= 0.0 && self.motion >= 0.0 && self.box_noise >= 0.0) {
            return bad("noise and motion scales must be >= 0".into());
        }
        let (lo, hi) = self.box_size;
        let (w, h) = self.canvas;
        if !(lo > 0.0 && lo <= hi && hi < f64::from(w.min(h))) {
            return bad(format!("box_size {:?} does not fit the canvas {w}x{h}", self.box_size));
        }
        if self.categories.is_empty() {
            return bad("at least one category is required".into());
        }
        if let Some(o) = self
            .occlusions
            .iter()
            .find(|o| o.identity == 0 || o.identity > self.num_identities as u64)
        {
            return bad(format!("occlusion names unknown identity {}", o.identity));
        }
        Ok(())
    }
}

/// A generated sequence together with its hidden truth.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    /// Every frame in order, including frames without detections.
    pub frames: Vec<(u64, Vec<Detection>)>,
    pub ground_truth: GroundTruth,
    pub latents: Vec<Embedding>,
    /// Per frame and detection: the ground-truth id, or `None` for a false
    /// positive.
    pub sources: Vec<Vec<Option<u64>>>,
    pub identity_categories: Vec<Category>,
    /// How many times the sequence was re-drawn to keep every observation
    /// nearest to its own latent.
    pub regenerations: u32,
}

impl SynthOutput {
    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.iter().flat_map(|(_, d)| d.iter())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return Embedding::new(v.into_iter().map(|x| x / n).collect());
        }
    }
}

fn draw_identities(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Embedding>, SynthError> {
    let mut latents: Vec<Embedding> = Vec::with_capacity(config.num_identities);
    while latents.len() < config.num_identities {
        let mut placed = false;
        for _ in 0..SEPARATION_ATTEMPTS {
            let cand = random_unit(rng, config.embed_dim);
            let separated = latents.iter().all(|l| {
                cosine_distance(l, &cand).expect("unit vectors of equal dimension")
                    >= config.min_identity_separation
            });
            if separated {
                latents.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::SeparationInfeasible {
                requested: config.num_identities,
                placed: latents.len(),
                separation: config.min_identity_separation,
                dim: config.embed_dim,
            });
        }
    }
    Ok(latents)
}

/// Unit-norm identity latents with pairwise cosine distance at least
/// `min_identity_separation`.
pub fn sample_identities(config: &SynthConfig) -> Result<Vec<Embedding>, SynthError> {
    config.validate()?;
    draw_identities(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

struct Walker {
    bbox: BBox,
}

impl Walker {
    fn step(&mut self, rng: &mut ChaCha8Rng, step: &Normal<f64>, canvas: (u32, u32)) {
        let (cw, ch) = (f64::from(canvas.0), f64::from(canvas.1));
        let reflect = |v: f64, hi: f64| -> f64 {
            let mut v = v;
            // Bounce off the canvas edges until inside.
            for _ in 0..8 {
                if v < 0.0 {
                    v = -v;
                } else if v > hi {
                    v = 2.0 * hi - v;
                } else {
                    break;
                }
            }
            v.clamp(0.0, hi)
        };
        let dx: f64 = step.sample(rng);
        let dy: f64 = step.sample(rng);
        self.bbox.x = reflect(self.bbox.x + dx, cw - self.bbox.w);
        self.bbox.y = reflect(self.bbox.y + dy, ch - self.bbox.h);
    }
}

/// Generates detections and ground truth for `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    config.validate()?;
    for attempt in 0..=MAX_REGENERATIONS {
        let seed = if attempt == 0 {
            config.seed
        } else {
            config
                .seed
                .wrapping_add(u64::from(attempt).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        };
        let mut out = generate_once(config, seed)?;
        if observations_separable(&out) {
            out.regenerations = attempt;
            if attempt > 0 {
                log::info!(
                    "synthetic sequence {} regenerated {attempt} time(s) to keep observations separable",
                    config.sequence
                );
            }
            return Ok(out);
        }
    }
    Err(SynthError::Inseparable(MAX_REGENERATIONS))
}

/// True when every true-positive embedding is nearest to its own latent.
pub fn observations_separable(out: &SynthOutput) -> bool {
    out.frames.iter().zip(&out.sources).all(|((_, dets), srcs)| {
        dets.iter().zip(srcs).all(|(d, src)| match src {
            None => true,
            Some(id) => nearest_latent(&out.latents, &d.embedding) == Some(*id),
        })
    })
}

/// Ground-truth id (1-based) of the latent closest to `e`.
pub fn nearest_latent(latents: &[Embedding], e: &Embedding) -> Option<u64> {
    latents
        .iter()
        .enumerate()
        .filter_map(|(i, l)| cosine_distance(l, e).ok().map(|d| (i, d)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i as u64 + 1)
}

fn generate_once(config: &SynthConfig, seed: u64) -> Result<SynthOutput, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents = draw_identities(config, &mut rng)?;
    let (cw, ch) = config.canvas;
    let (lo, hi) = config.box_size;
    let identity_categories: Vec<Category> = (0..config.num_identities)
        .map(|_| config.categories[rng.random_range(0..config.categories.len())].clone())
        .collect();
    let mut walkers: Vec<Walker> = (0..config.num_identities)
        .map(|_| {
            let w = rng.random_range(lo..=hi);
            let h = rng.random_range(lo..=hi);
            let x = rng.random_range(0.0..=f64::from(cw) - w);
            let y = rng.random_range(0.0..=f64::from(ch) - h);
            Walker {
                bbox: BBox::new(x, y, w, h),
            }
        })
        .collect();
    let step = Normal::new(0.0, config.motion).expect("motion validated");
    let embed_noise = Normal::new(0.0, config.embed_noise_sigma).expect("sigma validated");
    let box_noise = Normal::new(0.0, config.box_noise).expect("box noise validated");
    let fp_count = (config.fp_rate > 0.0)
        .then(|| Poisson::new(config.fp_rate).expect("fp_rate validated"));
    let mask_for = |b: &BBox| -> Option<RleMask> {
        config
            .with_masks
            .then(|| RleMask::from_box(ch, cw, b).expect("canvas is non-empty"))
    };

    let mut frames = Vec::with_capacity(config.num_frames as usize);
    let mut sources = Vec::with_capacity(config.num_frames as usize);
    let mut gt = Vec::new();
    for frame in 0..config.num_frames {
        if frame > 0 {
            for w in &mut walkers {
                w.step(&mut rng, &step, config.canvas);
            }
        }
        let mut dets = Vec::new();
        let mut srcs = Vec::new();
        for (idx, walker) in walkers.iter().enumerate() {
            let id = idx as u64 + 1;
            if config.occlusions.iter().any(|o| o.covers(id, frame)) {
                continue;
            }
            let category = identity_categories[idx].clone();
            gt.push(GtRecord {
                sequence: config.sequence.clone(),
                frame,
                gt_id: id,
                category: category.clone(),
                bbox: walker.bbox,
                mask: mask_for(&walker.bbox),
            });
            // Same draws whether or not the object is missed.
            let missed = rng.random::<f64>() < config.miss_prob;
            let low = rng.random::<f64>() < config.low_score_prob;
            let score = if low {
                rng.random_range(0.3..0.84)
            } else {
                rng.random_range(0.84..=1.0)
            };
            let jitter: [f64; 4] = std::array::from_fn(|_| box_noise.sample(&mut rng));
            let noisy: Vec<f64> = latents[idx]
                .values()
                .iter()
                .map(|v| v + embed_noise.sample(&mut rng))
                .collect();
            if missed {
                continue;
            }
            let b = walker.bbox;
            let bbox = BBox::new(
                b.x + jitter[0],
                b.y + jitter[1],
                (b.w + jitter[2]).max(1.0),
                (b.h + jitter[3]).max(1.0),
            );
            let norm = noisy.iter().map(|v| v * v).sum::<f64>().sqrt();
            dets.push(Detection {
                sequence: config.sequence.clone(),
                frame,
                category,
                bbox,
                mask: mask_for(&bbox),
                score,
                embedding: Embedding::new(noisy.into_iter().map(|v| v / norm).collect()),
            });
            srcs.push(Some(id));
        }
        let n_fp = fp_count.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..n_fp {
            let w = rng.random_range(lo..=hi);
            let h = rng.random_range(lo..=hi);
            let bbox = BBox::new(
                rng.random_range(0.0..=f64::from(cw) - w),
                rng.random_range(0.0..=f64::from(ch) - h),
                w,
                h,
            );
            let category = config.categories[rng.random_range(0..config.categories.len())].clone();
            dets.push(Detection {
                sequence: config.sequence.clone(),
                frame,
                category,
                bbox,
                mask: mask_for(&bbox),
                score: rng.random_range(0.84..=1.0),
                embedding: random_unit(&mut rng, config.embed_dim),
            });
            srcs.push(None);
        }
        frames.push((frame, dets));
        sources.push(srcs);
    }
    Ok(SynthOutput {
        frames,
        ground_truth: GroundTruth::new(gt).expect("ids are unique per frame by construction"),
        latents,
        sources,
        identity_categories,
        regenerations: 0,
    })
}
