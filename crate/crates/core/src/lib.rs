//! trackscan: one-shot railway track anomaly detection.
//!
//! A small shared-weight ("Siamese") convolutional network embeds 64x64
//! grayscale track images. Frames whose embedding lies far from every image
//! in a gallery of good-track benchmarks are flagged as anomalies: switches,
//! crossings, debris, anything that does not look like plain track.
//!
//! Module map:
//!
//! * [`numerics`]: tensors, the splitmix64 generator, and the four layer kinds
//!   with hand-written backward passes.
//! * [`siamese`]: the embedding network, Euclidean distance, contrastive loss
//!   and the `[0, 1]` dissimilarity score.
//! * [`corpus`]: deterministic synthetic track imagery, binary PGM IO and
//!   region-of-interest cropping.
//! * [`training`]: pair construction, momentum SGD, evaluation and gradient
//!   checking.
//! * [`pipeline`]: frame subsampling, gallery scoring, event merging and the
//!   JSONL report.
//! * [`persistence`]: the fixed little-endian model file.

pub mod corpus;
pub mod error;
pub mod numerics;
pub mod persistence;
pub mod pipeline;
pub mod siamese;
pub mod training;

pub use corpus::{Image, Roi, SceneKind, SceneParams};
pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
pub use pipeline::{AnomalyEvent, AnomalyRecord, BenchmarkGallery, SamplerConfig};
pub use siamese::{Embedding, Gradients, SiameseModel};
pub use training::{EvalReport, Label, LabeledPair, TrainConfig};
