//! Synthetic grounding benchmark with a known target proposal per query.
//!
//! Every image holds one target proposal whose feature is its class
//! prototype plus noise and whose box jitters around a class-typical
//! location, plus distractors of other classes at mostly uninformative
//! locations. Queries name the target's class, so a ground-truth oracle
//! exists and weak supervision can be validated at desk scale.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{EmbeddingTable, Proposal, ProposalSet, Query};
use crate::error::{Error, Result};
use crate::geom::Box2D;

const IMAGE_W: f64 = 640.0;
const IMAGE_H: f64 = 480.0;

const CLASS_WORDS: &[&str] = &[
    "dog", "cat", "car", "chair", "tree", "boat", "bird", "horse", "cup", "phone", "lamp",
    "table", "bike", "train", "plane", "sheep", "sofa", "clock", "book", "bottle", "bus",
    "cow", "bear", "bench", "plant", "pizza", "kite", "bowl", "truck", "vase",
];

const FILLER_WORDS: &[&str] = &[
    "near", "by", "the", "left", "right", "side", "corner", "standing", "on", "with", "small",
    "large", "field", "area", "middle", "behind",
];

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub proposals_per_image: usize,
    pub feature_dim: usize,
    pub images: usize,
    /// Scale of feature and box jitter; 0 makes the corpus exactly separable.
    pub noise: f64,
    /// Probability that a distractor box overlaps the target box.
    pub overlap_prob: f64,
    /// Probability that a proposal's class distribution argmax is forced to
    /// a wrong class.
    pub corrupt_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            proposals_per_image: 8,
            feature_dim: 32,
            images: 100,
            noise: 0.3,
            overlap_prob: 0.3,
            corrupt_prob: 0.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "synthetic corpus needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.proposals_per_image < 2 {
            return Err(Error::Config(format!(
                "synthetic corpus needs at least 2 proposals per image, got {}",
                self.proposals_per_image
            )));
        }
        if self.feature_dim == 0 || self.images == 0 {
            return Err(Error::Config(
                "synthetic feature_dim and images must be positive".into(),
            ));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("overlap_prob", self.overlap_prob),
            ("corrupt_prob", self.corrupt_prob),
        ] {
            if !(0.0..=1.0).contains(&v) && name != "noise" {
                return Err(Error::Config(format!("{} must lie in [0, 1], got {}", name, v)));
            }
            if v < 0.0 {
                return Err(Error::Config(format!("{} must be non-negative, got {}", name, v)));
            }
        }
        Ok(())
    }
}

pub struct SyntheticCorpus {
    pub images: Vec<ProposalSet>,
    pub queries: Vec<Query>,
    pub class_names: Vec<String>,
    pub embeddings: EmbeddingTable,
    pub lexicon: BTreeSet<String>,
}

struct ClassSpec {
    prototype: Vec<f64>,
    center: (f64, f64),
    size: (f64, f64),
}

/// Deterministic under the spec's seed: one query per image, the query's
/// noun word is the target class name, and `gt_box` equals the target
/// proposal's box.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let class_names: Vec<String> = (0..spec.classes)
        .map(|c| {
            CLASS_WORDS
                .get(c)
                .map(|w| w.to_string())
                .unwrap_or_else(|| format!("obj{}", c))
        })
        .collect();

    // One-hot class-word embeddings: same-class similarity 1, cross-class 0.
    let embeddings = EmbeddingTable::from_vectors(
        spec.classes,
        class_names.iter().enumerate().map(|(c, name)| {
            let mut v = vec![0.0; spec.classes];
            v[c] = 1.0;
            (name.clone(), v)
        }),
    )?;
    let lexicon: BTreeSet<String> = class_names.iter().cloned().collect();

    let classes: Vec<ClassSpec> = (0..spec.classes)
        .map(|_| ClassSpec {
            prototype: (0..spec.feature_dim).map(|_| normal.sample(&mut rng)).collect(),
            center: (
                rng.random_range(0.2..0.8) * IMAGE_W,
                rng.random_range(0.2..0.8) * IMAGE_H,
            ),
            size: (
                rng.random_range(0.12..0.30) * IMAGE_W,
                rng.random_range(0.12..0.30) * IMAGE_H,
            ),
        })
        .collect();

    let mut images = Vec::with_capacity(spec.images);
    let mut queries = Vec::with_capacity(spec.images);
    for img_idx in 0..spec.images {
        let target_class = rng.random_range(0..spec.classes);
        let target_slot = rng.random_range(0..spec.proposals_per_image);
        let target_box = jittered_class_box(&classes[target_class], spec.noise, &mut rng);

        let mut proposals = Vec::with_capacity(spec.proposals_per_image);
        for slot in 0..spec.proposals_per_image {
            let (class, bbox) = if slot == target_slot {
                (target_class, target_box)
            } else {
                let mut c = rng.random_range(0..spec.classes - 1);
                if c >= target_class {
                    c += 1;
                }
                let bbox = if rng.random_bool(spec.overlap_prob.min(1.0)) {
                    near_box(&target_box, &mut rng)
                } else {
                    uniform_box(&mut rng)
                };
                (c, bbox)
            };
            let feature: Vec<f64> = classes[class]
                .prototype
                .iter()
                .map(|&p| p + spec.noise * normal.sample(&mut rng))
                .collect();
            let class_probs =
                class_distribution(&feature, &classes, spec.corrupt_prob, &mut rng);
            proposals.push(Proposal {
                bbox: [bbox.x1, bbox.y1, bbox.x2, bbox.y2],
                feature,
                class_probs,
            });
        }

        let dim = spec.feature_dim;
        let mut global = vec![0.0; dim];
        for p in &proposals {
            for (g, x) in global.iter_mut().zip(&p.feature) {
                *g += x / spec.proposals_per_image as f64;
            }
        }

        let image_id = format!("img{}", img_idx);
        let filler_count = rng.random_range(1..=3);
        let mut words = vec!["a".to_string(), class_names[target_class].clone()];
        for _ in 0..filler_count {
            words.push(FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())].to_string());
        }
        queries.push(Query {
            query_id: format!("q{}", img_idx),
            image_id: image_id.clone(),
            words,
            noun_positions: Some(vec![1]),
            gt_box: Some([target_box.x1, target_box.y1, target_box.x2, target_box.y2]),
        });
        images.push(ProposalSet {
            image_id,
            width: IMAGE_W,
            height: IMAGE_H,
            global_feature: global,
            proposals,
        });
    }

    Ok(SyntheticCorpus {
        images,
        queries,
        class_names,
        embeddings,
        lexicon,
    })
}

fn jittered_class_box(class: &ClassSpec, noise: f64, rng: &mut ChaCha8Rng) -> Box2D {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let cx = class.center.0 + noise * 0.05 * IMAGE_W * normal.sample(rng);
    let cy = class.center.1 + noise * 0.05 * IMAGE_H * normal.sample(rng);
    let w = class.size.0 * (1.0 + noise * 0.2 * normal.sample(rng)).max(0.3);
    let h = class.size.1 * (1.0 + noise * 0.2 * normal.sample(rng)).max(0.3);
    clamp_box(cx, cy, w, h)
}

fn near_box(target: &Box2D, rng: &mut ChaCha8Rng) -> Box2D {
    let (tw, th) = (target.width(), target.height());
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let dist = rng.random_range(0.35..0.75);
    let cx = (target.x1 + target.x2) / 2.0 + angle.cos() * dist * tw;
    let cy = (target.y1 + target.y2) / 2.0 + angle.sin() * dist * th;
    let w = tw * rng.random_range(0.85..1.15);
    let h = th * rng.random_range(0.85..1.15);
    clamp_box(cx, cy, w, h)
}

fn uniform_box(rng: &mut ChaCha8Rng) -> Box2D {
    let w = rng.random_range(0.10..0.35) * IMAGE_W;
    let h = rng.random_range(0.10..0.35) * IMAGE_H;
    let cx = rng.random_range(0.0..IMAGE_W);
    let cy = rng.random_range(0.0..IMAGE_H);
    clamp_box(cx, cy, w, h)
}

fn clamp_box(cx: f64, cy: f64, w: f64, h: f64) -> Box2D {
    let w = w.clamp(4.0, IMAGE_W - 2.0);
    let h = h.clamp(4.0, IMAGE_H - 2.0);
    let x1 = (cx - w / 2.0).clamp(0.0, IMAGE_W - w - 1.0);
    let y1 = (cy - h / 2.0).clamp(0.0, IMAGE_H - h - 1.0);
    Box2D::new(x1, y1, x1 + w, y1 + h)
}

/// Distribution over classes from prototype affinities, optionally corrupted
/// so the argmax points at a wrong class.
fn class_distribution(
    feature: &[f64],
    classes: &[ClassSpec],
    corrupt_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let scale = (feature.len() as f64).sqrt();
    let mut logits: Vec<f64> = classes
        .iter()
        .map(|c| {
            c.prototype
                .iter()
                .zip(feature)
                .map(|(p, f)| p * f)
                .sum::<f64>()
                / scale
        })
        .collect();
    if corrupt_prob > 0.0 && rng.random_bool(corrupt_prob.min(1.0)) {
        let best = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .expect("non-empty logits");
        let mut wrong = rng.random_range(0..classes.len() - 1);
        if wrong >= best {
            wrong += 1;
        }
        logits[wrong] = logits[best] + 2.0;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}
