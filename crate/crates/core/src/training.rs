//! Pair construction, momentum SGD, evaluation and gradient checking.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::corpus::{Image, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::persistence::load_model;
use crate::siamese::{
    accumulate_pair_grad, distance, embed_unique, pair_grad, pair_loss, score, Gradients,
    SiameseModel, DEFAULT_MARGIN,
};

/// Score at or above which a pair counts as "dissimilar".
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// 0: the sample looks like the benchmark.
    Similar,
    /// 1: the sample is as far from the benchmark as it gets.
    Dissimilar,
}

impl Label {
    pub fn value(self) -> u8 {
        match self {
            Label::Similar => 0,
            Label::Dissimilar => 1,
        }
    }

    pub fn from_value(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Similar),
            1 => Ok(Label::Dissimilar),
            other => Err(Error::invalid(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Similar => Label::Dissimilar,
            Label::Dissimilar => Label::Similar,
        }
    }
}

/// A benchmark image `a`, a sample `b`, and whether they should match.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub a: Arc<Image>,
    pub b: Arc<Image>,
    pub label: Label,
}

impl LabeledPair {
    pub fn new(a: Arc<Image>, b: Arc<Image>, label: Label) -> Self {
        LabeledPair { a, b, label }
    }
}

pub fn share(images: Vec<Image>) -> Vec<Arc<Image>> {
    images.into_iter().map(Arc::new).collect()
}

/// For each benchmark in turn, alternates positive (label 0) and negative
/// (label 1) samples; once the shorter list runs out the rest of the longer
/// one follows with its own label.
pub fn build_pairs(
    benchmarks: &[Arc<Image>],
    positives: &[Arc<Image>],
    negatives: &[Arc<Image>],
) -> Result<Vec<LabeledPair>> {
    if benchmarks.is_empty() || positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(
            "benchmarks, positives and negatives must all be non-empty",
        ));
    }
    let per_bench = positives.len() + negatives.len();
    let mut pairs = Vec::with_capacity(benchmarks.len() * per_bench);
    for bench in benchmarks {
        for i in 0..positives.len().max(negatives.len()) {
            if let Some(p) = positives.get(i) {
                pairs.push(LabeledPair::new(bench.clone(), p.clone(), Label::Similar));
            }
            if let Some(n) = negatives.get(i) {
                pairs.push(LabeledPair::new(bench.clone(), n.clone(), Label::Dissimilar));
            }
        }
    }
    Ok(pairs)
}

/// Shuffles with `rng` and holds out the last `ceil(n * val_fraction)` pairs
/// (at most `n - 1`) for validation.
pub fn split_train_val(
    mut pairs: Vec<LabeledPair>,
    val_fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<LabeledPair>, Vec<LabeledPair>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least 2 pairs to split"));
    }
    let n = pairs.len();
    let n_val = ((n as f64 * val_fraction).ceil() as usize).clamp(1, n - 1);
    rng.shuffle(&mut pairs);
    let val = pairs.split_off(n - n_val);
    Ok((pairs, val))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_accuracy: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub margin: f64,
    /// Start from this saved model instead of a fresh initialization.
    pub warm_start: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 100,
            target_accuracy: 0.95,
            val_fraction: 0.2,
            seed: 0,
            margin: DEFAULT_MARGIN,
            warm_start: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::invalid("target_accuracy must be in (0, 1]"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("val_fraction must be in (0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin must be positive"));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v <- momentum * v - lr * g; theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Gradients,
}

impl MomentumSgd {
    pub fn new(model: &SiameseModel, learning_rate: f64, momentum: f64) -> Self {
        MomentumSgd {
            learning_rate,
            momentum,
            velocity: Gradients::zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut SiameseModel, grads: &Gradients) {
        let params = model.params_mut().flat_map(|(w, b)| [w, b]);
        for ((theta, v), g) in params.zip(self.velocity.tensors_mut()).zip(grads.tensors()) {
            for ((t, v), g) in theta.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = self.momentum * *v - self.learning_rate * g;
                *t += *v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.val_accuracy));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    pub history: History,
    /// Validation accuracy after the last epoch; `None` when no epoch ran.
    pub final_val_accuracy: Option<f64>,
    pub reached_target: bool,
}

/// Trains from `config` on `pairs`, holding out `val_fraction` of them.
pub fn train(config: &TrainConfig, pairs: &[LabeledPair]) -> Result<TrainOutcome> {
    train_with_progress(config, pairs, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch.
pub fn train_with_progress(
    config: &TrainConfig,
    pairs: &[LabeledPair],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, pairs)?;
    let mut history = History::default();
    let mut final_val_accuracy = None;
    let mut reached_target = false;
    for _ in 0..config.max_epochs {
        let stats = trainer.run_epoch()?;
        history.epochs.push(stats);
        on_epoch(&stats);
        final_val_accuracy = Some(stats.val_accuracy);
        if stats.val_accuracy >= config.target_accuracy {
            reached_target = true;
            break;
        }
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        history,
        final_val_accuracy,
        reached_target,
    })
}

/// Epoch-at-a-time training state. Applies no stopping rule; `max_epochs`
/// and `target_accuracy` are only read by [`train_with_progress`].
#[derive(Debug, Clone)]
pub struct Trainer {
    model: SiameseModel,
    opt: MomentumSgd,
    rng: Rng,
    train_set: Vec<LabeledPair>,
    val_set: Vec<LabeledPair>,
    batch_size: usize,
    epoch: usize,
}

impl Trainer {
    /// Initializes (or loads) the model and splits `pairs`. The run generator
    /// is consumed by initialization, then the split, then the per-epoch
    /// shuffles.
    pub fn new(config: &TrainConfig, pairs: &[LabeledPair]) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let model = match &config.warm_start {
            Some(path) => load_model(path)?,
            None => SiameseModel::he_initialized(&mut rng, config.margin)?,
        };
        let (train_set, val_set) = split_train_val(pairs.to_vec(), config.val_fraction, &mut rng)?;
        let has = |l: Label| train_set.iter().any(|p| p.label == l);
        if !has(Label::Similar) || !has(Label::Dissimilar) {
            return Err(Error::invalid(
                "training split must contain both similar and dissimilar pairs",
            ));
        }
        let opt = MomentumSgd::new(&model, config.learning_rate, config.momentum);
        Ok(Trainer {
            model,
            opt,
            rng,
            train_set,
            val_set,
            batch_size: config.batch_size,
            epoch: 0,
        })
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.rng.shuffle(&mut self.train_set);
        let mut loss_sum = 0.0;
        for batch in self.train_set.chunks(self.batch_size) {
            let mut grads = Gradients::zeros_like(&self.model);
            for pair in batch {
                loss_sum += accumulate_pair_grad(&self.model, pair, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            self.opt.step(&mut self.model, &grads);
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss: loss_sum / self.train_set.len() as f64,
            val_accuracy: evaluate(&self.model, &self.val_set)?.accuracy,
        })
    }

    pub fn model(&self) -> &SiameseModel {
        &self.model
    }

    pub fn validation_pairs(&self) -> &[LabeledPair] {
        &self.val_set
    }

    pub fn into_model(self) -> SiameseModel {
        self.model
    }
}

/// Confusion counts with "dissimilar" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Mean distance over label-0 pairs (0 when there are none).
    pub mean_distance_similar: f64,
    /// Mean distance over label-1 pairs (0 when there are none).
    pub mean_distance_dissimilar: f64,
    pub confusion: Confusion,
}

/// Predicts "dissimilar" iff the score reaches [`DECISION_THRESHOLD`].
pub fn evaluate(model: &SiameseModel, pairs: &[LabeledPair]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty pair list"));
    }
    let cache = embed_unique(model, pairs.iter().flat_map(|p| [&p.a, &p.b]))?;
    let mut confusion = Confusion { tp: 0, tn: 0, fp: 0, fn_: 0 };
    let (mut sum_sim, mut n_sim, mut sum_dis, mut n_dis) = (0.0, 0usize, 0.0, 0usize);
    for pair in pairs {
        let d = distance(&cache[&Arc::as_ptr(&pair.a)], &cache[&Arc::as_ptr(&pair.b)])?;
        let predicted_dissimilar = score(d, model.margin()) >= DECISION_THRESHOLD;
        match (pair.label, predicted_dissimilar) {
            (Label::Dissimilar, true) => confusion.tp += 1,
            (Label::Similar, false) => confusion.tn += 1,
            (Label::Similar, true) => confusion.fp += 1,
            (Label::Dissimilar, false) => confusion.fn_ += 1,
        }
        match pair.label {
            Label::Similar => {
                sum_sim += d;
                n_sim += 1;
            }
            Label::Dissimilar => {
                sum_dis += d;
                n_dis += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(EvalReport {
        accuracy: (confusion.tp + confusion.tn) as f64 / pairs.len() as f64,
        mean_distance_similar: mean(sum_sim, n_sim),
        mean_distance_dissimilar: mean(sum_dis, n_dis),
        confusion,
    })
}

/// Step used for central finite differences.
pub const GRADCHECK_EPSILON: f64 = 1e-6;

/// `|a - n| / max(1e-12, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// Number of parameters compared.
    pub checked: usize,
    /// `(tensor index, element index)` of the worst parameter; tensor indices
    /// follow [`Gradients::tensors`].
    pub worst: Option<(usize, usize)>,
    /// Largest `|analytic - numeric|` over the compared parameters.
    pub max_absolute_error: f64,
    pub entries: Vec<GradcheckEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckEntry {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradcheckEntry {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

/// Compares [`pair_grad`] with central differences of the pair loss on
/// `sample_size` weights (drawn round-robin over the conv/dense layers) plus
/// every bias.
pub fn gradcheck(
    model: &SiameseModel,
    pair: &LabeledPair,
    sample_size: usize,
    rng: &mut Rng,
) -> Result<GradcheckReport> {
    gradcheck_with(model, pair, sample_size, rng, pair_grad)
}

/// [`gradcheck`] against an arbitrary analytic gradient source.
pub fn gradcheck_with(
    model: &SiameseModel,
    pair: &LabeledPair,
    sample_size: usize,
    rng: &mut Rng,
    analytic: impl Fn(&SiameseModel, &LabeledPair) -> Result<(f64, Gradients)>,
) -> Result<GradcheckReport> {
    if sample_size < 1 {
        return Err(Error::invalid("gradcheck sample_size must be at least 1"));
    }
    let (_, grads) = analytic(model, pair)?;
    let n_layers = grads.layers.len();

    // (tensor index into Gradients::tensors order, element)
    let mut targets = Vec::with_capacity(sample_size + 128);
    for k in 0..sample_size {
        let layer = k % n_layers;
        let len = grads.layers[layer].weights.len();
        targets.push((2 * layer, rng.below(len as u64) as usize));
    }
    for (layer, g) in grads.layers.iter().enumerate() {
        targets.extend((0..g.bias.len()).map(|i| (2 * layer + 1, i)));
    }

    let analytic_values: Vec<&[f64]> = grads.tensors().map(|t| t.data()).collect();
    let mut probe = model.clone();
    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
        max_absolute_error: 0.0,
        entries: Vec::with_capacity(targets.len()),
    };
    for (tensor, elem) in targets {
        let original = param_slot(&mut probe, tensor)[elem];
        param_slot(&mut probe, tensor)[elem] = original + GRADCHECK_EPSILON;
        let plus = pair_loss(&probe, pair)?;
        param_slot(&mut probe, tensor)[elem] = original - GRADCHECK_EPSILON;
        let minus = pair_loss(&probe, pair)?;
        param_slot(&mut probe, tensor)[elem] = original;

        let numeric = (plus - minus) / (2.0 * GRADCHECK_EPSILON);
        let analytic = analytic_values[tensor][elem];
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_absolute_error = report.max_absolute_error.max((analytic - numeric).abs());
        report.entries.push(GradcheckEntry {
            tensor,
            index: elem,
            analytic,
            numeric,
        });
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((tensor, elem));
        }
    }
    Ok(report)
}

/// Gradient check on a freshly initialized model and a similar-labelled pair
/// of uniform noise images. One generator seeded with `seed` drives the
/// initialization, both images and the weight sample, in that order.
pub fn gradcheck_seeded(seed: u64, sample_size: usize) -> Result<GradcheckReport> {
    let mut rng = Rng::new(seed);
    let model = SiameseModel::he_initialized(&mut rng, DEFAULT_MARGIN)?;
    let mut noise = || {
        let px = (0..IMAGE_SIZE * IMAGE_SIZE).map(|_| rng.next_f64()).collect();
        Image::new(IMAGE_SIZE, IMAGE_SIZE, px).map(Arc::new)
    };
    let (a, b) = (noise()?, noise()?);
    let pair = LabeledPair::new(a, b, Label::Similar);
    gradcheck(&model, &pair, sample_size, &mut rng)
}

fn param_slot(model: &mut SiameseModel, tensor: usize) -> &mut [f64] {
    let (w, b) = model.params_mut().nth(tensor / 2).expect("tensor index in range");
    if tensor % 2 == 0 {
        w.data_mut()
    } else {
        b.data_mut()
    }
}
