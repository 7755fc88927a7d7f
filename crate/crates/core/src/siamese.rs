//! The twin-branch embedding network.
//!
//! Both "branches" are the same [`SiameseModel`] value evaluated twice, so
//! the weights are shared by construction rather than kept in sync.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::sync::Arc;

use crate::corpus::{Image, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::numerics::{he_init, Conv2d, Dense, Layer, LayerCache, LayerGrads, Rng, Tensor};
use crate::training::{Label, LabeledPair};

pub const EMBEDDING_DIM: usize = 64;
pub const DEFAULT_MARGIN: f64 = 1.0;

/// `(channels, height, width)` of the network input.
pub const INPUT_SHAPE: [usize; 3] = [1, IMAGE_SIZE, IMAGE_SIZE];

/// Conv channel progression; each conv is followed by ReLU and a 2x2 pool.
const CHANNELS: [usize; 4] = [1, 8, 16, 32];

/// Flattened feature length entering the embedding head.
pub const FEATURE_DIM: usize = 32 * 8 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Gradient buffers, one entry per conv/dense layer in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(model: &SiameseModel) -> Self {
        Gradients {
            layers: model.layers.iter().filter_map(Layer::zero_grads).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }

    /// Weights then bias for each parametric layer.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|g| [&g.weights, &g.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|g| [&mut g.weights, &mut g.bias])
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

/// Fixed architecture: three conv(3x3) -> ReLU -> maxpool(2) stages taking
/// 1x64x64 to 32x8x8, then flatten and a linear 2048 -> 64 embedding head.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    layers: Vec<Layer>,
    margin: f64,
}

impl SiameseModel {
    /// The architecture with every parameter zero.
    pub fn zeros(margin: f64) -> Result<Self> {
        let mut layers = Vec::with_capacity(11);
        for pair in CHANNELS.windows(2) {
            layers.push(Layer::Conv(Conv2d::zeros(pair[0], pair[1])));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool);
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(Dense::zeros(FEATURE_DIM, EMBEDDING_DIM)));
        SiameseModel::from_layers(layers, margin)
    }

    /// He-uniform initialization, layers drawn in network order from `rng`.
    pub fn he_initialized(rng: &mut Rng, margin: f64) -> Result<Self> {
        let mut model = SiameseModel::zeros(margin)?;
        for layer in &mut model.layers {
            he_init(layer, rng);
        }
        Ok(model)
    }

    /// Wraps an explicit layer list, checking it is exactly the fixed
    /// architecture with finite parameters.
    pub fn from_layers(layers: Vec<Layer>, margin: f64) -> Result<Self> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::invalid(format!("margin must be positive, got {margin}")));
        }
        check_architecture(&layers).map_err(|(i, msg)| Error::shape(format!("layer {i}: {msg}")))?;
        for layer in &layers {
            if let Some((w, b)) = layer.params() {
                if !w.is_finite() || !b.is_finite() {
                    return Err(Error::invalid("model parameters must be finite"));
                }
            }
        }
        Ok(SiameseModel { layers, margin })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// `(weights, bias)` of each conv/dense layer in network order, aligned
    /// with [`Gradients::layers`].
    pub fn params_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &mut Tensor)> {
        self.layers.iter_mut().filter_map(Layer::params_mut)
    }

    pub fn params(&self) -> impl Iterator<Item = (&Tensor, &Tensor)> {
        self.layers.iter().filter_map(Layer::params)
    }

    pub fn embed(&self, image: &Image) -> Result<Embedding> {
        let mut x = image.to_tensor()?;
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(Embedding(x.into_data()))
    }

    pub(crate) fn forward_cached(&self, image: &Image) -> Result<(Embedding, Vec<LayerCache>)> {
        let mut x = image.to_tensor()?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, cache) = layer.forward_cached(x)?;
            caches.push(cache);
            x = out;
        }
        Ok((Embedding(x.into_data()), caches))
    }

    /// Backpropagates `grad_embedding` through one branch, accumulating into
    /// `grads`.
    pub(crate) fn backward(
        &self,
        caches: &[LayerCache],
        grad_embedding: Vec<f64>,
        grads: &mut Gradients,
    ) -> Result<()> {
        let mut g = Tensor::from_vec(grad_embedding)?;
        let mut slot = grads.layers.len();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let buf = if layer.params().is_some() {
                slot -= 1;
                Some(&mut grads.layers[slot])
            } else {
                None
            };
            // The image itself needs no gradient.
            match layer.backward(cache, &g, buf, i > 0)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }
}

fn check_architecture(layers: &[Layer]) -> std::result::Result<(), (usize, String)> {
    let template = SiameseTemplate::layers();
    if layers.len() != template.len() {
        return Err((layers.len().min(template.len()), format!(
            "expected {} layers, found {}",
            template.len(),
            layers.len()
        )));
    }
    for (i, (layer, want)) in layers.iter().zip(template).enumerate() {
        let ok = match (layer, want) {
            (Layer::Conv(c), LayerShape::Conv(i_ch, o_ch)) => {
                c.in_channels() == i_ch && c.out_channels() == o_ch
            }
            (Layer::Dense(d), LayerShape::Dense(i_dim, o_dim)) => {
                d.in_dim() == i_dim && d.out_dim() == o_dim
            }
            (Layer::Relu, LayerShape::Relu)
            | (Layer::MaxPool, LayerShape::MaxPool)
            | (Layer::Flatten, LayerShape::Flatten) => true,
            _ => false,
        };
        if !ok {
            return Err((i, format!("expected {want:?}, found {:?}", layer.kind())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
enum LayerShape {
    Conv(usize, usize),
    Relu,
    MaxPool,
    Flatten,
    Dense(usize, usize),
}

struct SiameseTemplate;

impl SiameseTemplate {
    fn layers() -> Vec<LayerShape> {
        let mut v = Vec::new();
        for pair in CHANNELS.windows(2) {
            v.extend([LayerShape::Conv(pair[0], pair[1]), LayerShape::Relu, LayerShape::MaxPool]);
        }
        v.extend([LayerShape::Flatten, LayerShape::Dense(FEATURE_DIM, EMBEDDING_DIM)]);
        v
    }
}

/// Euclidean distance between two embeddings.
pub fn distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Margin contrastive loss and its derivative with respect to `d`:
/// `L = (1-y) d^2 / 2 + y max(0, m-d)^2 / 2`.
pub fn contrastive_loss(d: f64, label: Label, margin: f64) -> Result<(f64, f64)> {
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("distance must be non-negative, got {d}")));
    }
    if !(margin > 0.0) {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    Ok(match label {
        Label::Similar => (0.5 * d * d, d),
        Label::Dissimilar => {
            let gap = (margin - d).max(0.0);
            (0.5 * gap * gap, -gap)
        }
    })
}

/// Dissimilarity score `min(d, m) / m`, in `[0, 1]`.
pub fn score(d: f64, margin: f64) -> f64 {
    (d.min(margin) / margin).clamp(0.0, 1.0)
}

/// Loss of one pair, forward only.
pub fn pair_loss(model: &SiameseModel, pair: &LabeledPair) -> Result<f64> {
    let d = distance(&model.embed(&pair.a)?, &model.embed(&pair.b)?)?;
    Ok(contrastive_loss(d, pair.label, model.margin)?.0)
}

/// Loss of one pair and the gradient of every shared parameter, summed over
/// both branches.
pub fn pair_grad(model: &SiameseModel, pair: &LabeledPair) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let loss = accumulate_pair_grad(model, pair, &mut grads)?;
    Ok((loss, grads))
}

/// Adds one pair's gradient into `grads` and returns its loss.
pub(crate) fn accumulate_pair_grad(
    model: &SiameseModel,
    pair: &LabeledPair,
    grads: &mut Gradients,
) -> Result<f64> {
    let (ea, cache_a) = model.forward_cached(&pair.a)?;
    let (eb, cache_b) = model.forward_cached(&pair.b)?;
    let d = distance(&ea, &eb)?;
    let (loss, dl_dd) = contrastive_loss(d, pair.label, model.margin)?;
    if dl_dd == 0.0 || d == 0.0 {
        return Ok(loss);
    }
    let k = dl_dd / d;
    let grad_a: Vec<f64> = ea.0.iter().zip(&eb.0).map(|(x, y)| k * (x - y)).collect();
    let grad_b: Vec<f64> = grad_a.iter().map(|g| -g).collect();
    model.backward(&cache_a, grad_a, grads)?;
    model.backward(&cache_b, grad_b, grads)?;
    Ok(loss)
}

/// Embeds every distinct image behind the pairs once, keyed by allocation.
pub(crate) fn embed_unique<'a>(
    model: &SiameseModel,
    images: impl IntoIterator<Item = &'a Arc<Image>>,
) -> Result<HashMap<*const Image, Embedding>> {
    let mut out = HashMap::new();
    for img in images {
        if let Entry::Vacant(slot) = out.entry(Arc::as_ptr(img)) {
            slot.insert(model.embed(img)?);
        }
    }
    Ok(out)
}
