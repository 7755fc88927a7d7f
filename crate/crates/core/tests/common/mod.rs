#![allow(dead_code)]

use std::sync::Arc;

use trackscan::corpus::{generate, generate_corpus, Image, SceneKind, SceneParams};
use trackscan::training::{build_pairs, share, LabeledPair};
use trackscan::Rng;

pub const STANDARD_SEED: u64 = 42;
pub const POSITIVE_SEED_OFFSET: u64 = 10_000;
pub const NEGATIVE_SEED_OFFSET: u64 = 20_000;

pub struct Corpus {
    pub benchmarks: Vec<Arc<Image>>,
    pub positives: Vec<Arc<Image>>,
    pub negatives: Vec<Arc<Image>>,
}

impl Corpus {
    pub fn pairs(&self) -> Vec<LabeledPair> {
        build_pairs(&self.benchmarks, &self.positives, &self.negatives).unwrap()
    }
}

/// Benchmarks at `seed`, positives and negatives at fixed offsets from it,
/// all drawn with the scene defaults of `base`.
pub fn corpus(base: &SceneParams, seed: u64, benchmarks: usize, positives: usize, negatives: usize) -> Corpus {
    let make = |kind, seed, count| {
        let params = SceneParams { kind, seed, ..base.clone() };
        share(generate_corpus(&params, count).unwrap())
    };
    Corpus {
        benchmarks: make(SceneKind::Track, seed, benchmarks),
        positives: make(SceneKind::Track, seed + POSITIVE_SEED_OFFSET, positives),
        negatives: make(SceneKind::Negative, seed + NEGATIVE_SEED_OFFSET, negatives),
    }
}

/// 8 benchmarks, 200 positives, 200 negatives at seed 42.
pub fn standard_corpus() -> Corpus {
    corpus(&SceneParams::new(SceneKind::Track, STANDARD_SEED), STANDARD_SEED, 8, 200, 200)
}

pub fn small_corpus(seed: u64) -> Corpus {
    corpus(&SceneParams::new(SceneKind::Track, seed), seed, 2, 6, 6)
}

pub fn scene(kind: SceneKind, seed: u64) -> Image {
    generate(&SceneParams::new(kind, seed)).unwrap()
}

pub fn noise_image(rng: &mut Rng) -> Image {
    let px = (0..64 * 64).map(|_| rng.next_f64()).collect();
    Image::new(64, 64, px).unwrap()
}
