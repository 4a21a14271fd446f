use apptrack_core::synth::{generate, nearest_latent, observations_separable, SynthConfig};
use apptrack_core::{cosine_distance, Category, Occlusion};

fn long_config(fp_rate: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        num_identities: 2,
        num_frames: 2000,
        embed_dim: 8,
        fp_rate,
        ..SynthConfig::default()
    }
}

#[test]
fn false_positive_counts_follow_the_rate() {
    for (rate, seed) in [(0.5, 1), (1.0, 2), (3.0, 3)] {
        let out = generate(&long_config(rate, seed)).unwrap();
        let counts: Vec<f64> = out
            .sources
            .iter()
            .map(|s| s.iter().filter(|x| x.is_none()).count() as f64)
            .collect();
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        assert!((mean - rate).abs() < 5.0 * (rate / n).sqrt(), "rate {rate}: mean {mean}");
        // Poisson dispersion statistic is chi-square with n degrees of freedom.
        let chi2: f64 = counts.iter().map(|c| (c - rate).powi(2) / rate).sum();
        assert!((chi2 - n).abs() < 5.0 * (2.0 * n).sqrt(), "rate {rate}: chi2 {chi2}");
    }
}

#[test]
fn observations_stay_near_their_identity() {
    let cfg = SynthConfig {
        seed: 5,
        num_identities: 20,
        num_frames: 200,
        fp_rate: 1.0,
        miss_prob: 0.05,
        low_score_prob: 0.2,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    assert!(observations_separable(&out));
    for (i, a) in out.latents.iter().enumerate() {
        assert!((a.norm() - 1.0).abs() < 1e-12);
        for b in &out.latents[i + 1..] {
            assert!(cosine_distance(a, b).unwrap() >= cfg.min_identity_separation);
        }
    }
    let (w, h) = cfg.canvas;
    for ((_, dets), srcs) in out.frames.iter().zip(&out.sources) {
        for (d, src) in dets.iter().zip(srcs) {
            assert!((0.3..=1.0).contains(&d.score));
            assert!((d.embedding.norm() - 1.0).abs() < 1e-12);
            match src {
                Some(id) => assert_eq!(nearest_latent(&out.latents, &d.embedding), Some(*id)),
                None => assert!(d.score >= 0.84),
            }
        }
    }
    for g in out.ground_truth.records() {
        assert!(g.bbox.x >= 0.0 && g.bbox.y >= 0.0);
        assert!(g.bbox.x2() <= f64::from(w) && g.bbox.y2() <= f64::from(h));
        assert_eq!(g.category, out.identity_categories[g.gt_id as usize - 1]);
    }
}

#[test]
fn score_bands_follow_the_probability() {
    let cfg = SynthConfig {
        num_identities: 5,
        num_frames: 1000,
        embed_dim: 16,
        low_score_prob: 0.3,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let scores: Vec<f64> = out.detections().map(|d| d.score).collect();
    let low = scores.iter().filter(|&&s| s < 0.84).count() as f64 / scores.len() as f64;
    assert!((low - 0.3).abs() < 0.03, "{low}");
}

#[test]
fn masks_cover_the_boxes() {
    let cfg = SynthConfig {
        num_identities: 3,
        num_frames: 5,
        with_masks: true,
        categories: vec![Category::Custom("blob".into())],
        occlusions: vec![Occlusion { identity: 1, start: 0, duration: 5 }],
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    assert!(out.ground_truth.records().iter().all(|g| g.gt_id != 1));
    for d in out.detections() {
        let m = d.mask.as_ref().unwrap();
        assert_eq!((m.width(), m.height()), cfg.canvas);
        assert!(m.area() > 0);
    }
}

#[test]
fn config_file_round_trip() {
    let cfg = SynthConfig {
        occlusions: vec![Occlusion { identity: 2, start: 4, duration: 3 }],
        ..SynthConfig::default()
    };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<SynthConfig>(&text).unwrap(), cfg);
    let partial: SynthConfig = serde_json::from_str(r#"{"seed": 9, "num_frames": 7}"#).unwrap();
    assert_eq!((partial.seed, partial.num_frames, partial.embed_dim), (9, 7, 128));
}
