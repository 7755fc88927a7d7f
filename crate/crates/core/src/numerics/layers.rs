use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Kernel side length for every convolution.
pub const KERNEL: usize = 3;

/// Stride-1, zero-padded ("same") 3x3 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_ch, in_ch, 3, 3)`
    pub(crate) weights: Tensor,
    /// `(out_ch,)`
    pub(crate) bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv2d {
            weights: Tensor::zeros(&[out_ch, in_ch, KERNEL, KERNEL]),
            bias: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let [out_ch, _, kh, kw] = *weights.shape() else {
            return Err(Error::shape(format!(
                "conv weights must be 4-d, got {:?}",
                weights.shape()
            )));
        };
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::shape(format!("conv kernels must be 3x3, got {kh}x{kw}")));
        }
        if bias.shape() != [out_ch] {
            return Err(Error::shape(format!(
                "conv bias must have shape [{out_ch}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Conv2d { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        let (c, h, w) = input.chw()?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        Ok((c, h, w))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (in_ch, h, w) = self.check_input(input)?;
        let out_ch = self.out_channels();
        let plane = h * w;
        let mut out = vec![0.0; out_ch * plane];
        let x_in = input.data();
        let wts = self.weights.data();

        for o in 0..out_ch {
            let out_plane = &mut out[o * plane..(o + 1) * plane];
            out_plane.fill(self.bias.data()[o]);
            for c in 0..in_ch {
                let in_plane = &x_in[c * plane..(c + 1) * plane];
                let k = &wts[(o * in_ch + c) * 9..(o * in_ch + c + 1) * 9];
                for dy in 0..KERNEL {
                    for dx in 0..KERNEL {
                        let wv = k[dy * KERNEL + dx];
                        let (x0, x1) = tap_range(dx, w);
                        for y in tap_range(dy, h).0..tap_range(dy, h).1 {
                            let sy = y + dy - 1;
                            let src = &in_plane[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                            let dst = &mut out_plane[y * w + x0..y * w + x1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![out_ch, h, w], out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        let mut gw = Tensor::zeros(self.weights.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        let mut gi = Tensor::zeros(input.shape());
        self.backward_into(
            input,
            grad_out,
            gw.data_mut(),
            gb.data_mut(),
            Some(gi.data_mut()),
        )?;
        Ok(ConvGrads {
            input: gi,
            weights: gw,
            bias: gb,
        })
    }

    /// Accumulates (`+=`) parameter gradients into `gw`/`gb` and, when given,
    /// the input gradient into `gi`.
    pub(crate) fn backward_into(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        gw: &mut [f64],
        gb: &mut [f64],
        mut gi: Option<&mut [f64]>,
    ) -> Result<()> {
        let (in_ch, h, w) = self.check_input(input)?;
        let out_ch = self.out_channels();
        if grad_out.shape() != [out_ch, h, w] {
            return Err(Error::shape(format!(
                "conv grad_out shape {:?} does not match output [{out_ch}, {h}, {w}]",
                grad_out.shape()
            )));
        }
        let plane = h * w;
        let x_in = input.data();
        let g = grad_out.data();
        let wts = self.weights.data();

        for o in 0..out_ch {
            let g_plane = &g[o * plane..(o + 1) * plane];
            gb[o] += g_plane.iter().sum::<f64>();
            for c in 0..in_ch {
                let in_plane = &x_in[c * plane..(c + 1) * plane];
                let kidx = (o * in_ch + c) * 9;
                for dy in 0..KERNEL {
                    let (y0, y1) = tap_range(dy, h);
                    for dx in 0..KERNEL {
                        let (x0, x1) = tap_range(dx, w);
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = y + dy - 1;
                            let src = &in_plane[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                            let gr = &g_plane[y * w + x0..y * w + x1];
                            acc += gr.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[kidx + dy * KERNEL + dx] += acc;

                        if let Some(gi) = gi.as_deref_mut() {
                            let wv = wts[kidx + dy * KERNEL + dx];
                            let gi_plane = &mut gi[c * plane..(c + 1) * plane];
                            for y in y0..y1 {
                                let sy = y + dy - 1;
                                let dst =
                                    &mut gi_plane[sy * w + x0 + dx - 1..sy * w + x1 + dx - 1];
                                let gr = &g_plane[y * w + x0..y * w + x1];
                                for (d, s) in dst.iter_mut().zip(gr) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Output coordinates `[lo, hi)` for which tap offset `d` (0..3, centred on 1)
/// reads an in-bounds source pixel along an axis of length `n`.
fn tap_range(d: usize, n: usize) -> (usize, usize) {
    let lo = if d == 0 { 1 } else { 0 };
    let hi = if d == 2 { n.saturating_sub(1) } else { n };
    (lo.min(hi), hi)
}

/// Fully connected layer: `out = W * in + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out_dim, in_dim)`
    pub(crate) weights: Tensor,
    /// `(out_dim,)`
    pub(crate) bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weights: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let [out_dim, _] = *weights.shape() else {
            return Err(Error::shape(format!(
                "dense weights must be 2-d, got {:?}",
                weights.shape()
            )));
        };
        if bias.shape() != [out_dim] {
            return Err(Error::shape(format!(
                "dense bias must have shape [{out_dim}], got {:?}",
                bias.shape()
            )));
        }
        Ok(Dense { weights, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != [self.in_dim()] {
            return Err(Error::shape(format!(
                "dense expects input of shape [{}], got {:?}",
                self.in_dim(),
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let n = self.in_dim();
        let x = input.data();
        let out = self
            .weights
            .data()
            .chunks_exact(n)
            .zip(self.bias.data())
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        Tensor::new(vec![self.out_dim()], out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let mut gw = Tensor::zeros(self.weights.shape());
        let mut gb = Tensor::zeros(self.bias.shape());
        let mut gi = Tensor::zeros(input.shape());
        self.backward_into(
            input,
            grad_out,
            gw.data_mut(),
            gb.data_mut(),
            Some(gi.data_mut()),
        )?;
        Ok(DenseGrads {
            input: gi,
            weights: gw,
            bias: gb,
        })
    }

    pub(crate) fn backward_into(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        gw: &mut [f64],
        gb: &mut [f64],
        gi: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_input(input)?;
        if grad_out.shape() != [self.out_dim()] {
            return Err(Error::shape(format!(
                "dense grad_out must have shape [{}], got {:?}",
                self.out_dim(),
                grad_out.shape()
            )));
        }
        let n = self.in_dim();
        let x = input.data();
        for (j, &g) in grad_out.data().iter().enumerate() {
            gb[j] += g;
            for (d, v) in gw[j * n..(j + 1) * n].iter_mut().zip(x) {
                *d += g * v;
            }
        }
        if let Some(gi) = gi {
            for (row, &g) in self.weights.data().chunks_exact(n).zip(grad_out.data()) {
                for (d, w) in gi.iter_mut().zip(row) {
                    *d += w * g;
                }
            }
        }
        Ok(())
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "relu grad_out shape {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Flat input index of the winning element for each pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices(pub Vec<usize>);

/// 2x2, stride-2 max pooling. Ties go to the first maximum in row-major
/// window order.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let (c, h, w) = input.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool needs even height and width, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let top = base + 2 * y * w + 2 * xo;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, PoolIndices(idx)))
}

pub fn maxpool2_backward(
    input_shape: &[usize],
    indices: &PoolIndices,
    grad_out: &Tensor,
) -> Result<Tensor> {
    if grad_out.len() != indices.0.len() {
        return Err(Error::shape(format!(
            "maxpool grad_out has {} elements, expected {}",
            grad_out.len(),
            indices.0.len()
        )));
    }
    let mut gi = Tensor::new(input_shape.to_vec(), vec![0.0; input_shape.iter().product()])?;
    let data = gi.data_mut();
    for (&i, &g) in indices.0.iter().zip(grad_out.data()) {
        data[i] += g;
    }
    Ok(gi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Relu,
    MaxPool,
    Flatten,
    Dense,
}

impl LayerKind {
    /// Tag byte used by the model file format.
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 1,
            LayerKind::Relu => 2,
            LayerKind::MaxPool => 3,
            LayerKind::Flatten => 4,
            LayerKind::Dense => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => LayerKind::Conv,
            2 => LayerKind::Relu,
            3 => LayerKind::MaxPool,
            4 => LayerKind::Flatten,
            5 => LayerKind::Dense,
            _ => return None,
        })
    }
}

/// One stage of the embedding network together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Relu,
    MaxPool,
    Flatten,
    Dense(Dense),
}

/// What a layer keeps from its forward pass to run backward.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Input(Tensor),
    Pool {
        input_shape: Vec<usize>,
        indices: PoolIndices,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
}

/// Gradient buffers for one parametric layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool => LayerKind::MaxPool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    /// `(weights, bias)` for conv and dense layers.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Conv(c) => Some((&c.weights, &c.bias)),
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            _ => None,
        }
    }

    pub fn zero_grads(&self) -> Option<LayerGrads> {
        self.params().map(|(w, b)| LayerGrads {
            weights: Tensor::zeros(w.shape()),
            bias: Tensor::zeros(b.shape()),
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(c) => c.forward(input),
            Layer::Relu => Ok(relu(input)),
            Layer::MaxPool => maxpool2(input).map(|(t, _)| t),
            Layer::Flatten => {
                let n = input.len();
                input.clone().reshape(vec![n])
            }
            Layer::Dense(d) => d.forward(input),
        }
    }

    /// Forward pass that also returns what backward needs. Takes the input by
    /// value so layers that keep it avoid a copy.
    pub fn forward_cached(&self, input: Tensor) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::Conv(c) => {
                let out = c.forward(&input)?;
                Ok((out, LayerCache::Input(input)))
            }
            Layer::Relu => Ok((relu(&input), LayerCache::Input(input))),
            Layer::MaxPool => {
                let (out, indices) = maxpool2(&input)?;
                Ok((
                    out,
                    LayerCache::Pool {
                        input_shape: input.shape().to_vec(),
                        indices,
                    },
                ))
            }
            Layer::Flatten => {
                let input_shape = input.shape().to_vec();
                let n = input.len();
                Ok((input.reshape(vec![n])?, LayerCache::Flatten { input_shape }))
            }
            Layer::Dense(d) => {
                let out = d.forward(&input)?;
                Ok((out, LayerCache::Input(input)))
            }
        }
    }

    /// Accumulates parameter gradients into `grads` (required for conv and
    /// dense) and returns the input gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &LayerCache,
        grad_out: &Tensor,
        grads: Option<&mut LayerGrads>,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let mismatch = || Error::shape(format!("cache does not match {:?} layer", self.kind()));
        match (self, cache) {
            (Layer::Conv(c), LayerCache::Input(input)) => {
                let g = grads.ok_or_else(|| Error::invalid("conv backward needs gradient buffers"))?;
                let mut gi = want_input_grad.then(|| Tensor::zeros(input.shape()));
                c.backward_into(
                    input,
                    grad_out,
                    g.weights.data_mut(),
                    g.bias.data_mut(),
                    gi.as_mut().map(|t| t.data_mut()),
                )?;
                Ok(gi)
            }
            (Layer::Dense(d), LayerCache::Input(input)) => {
                let g = grads.ok_or_else(|| Error::invalid("dense backward needs gradient buffers"))?;
                let mut gi = want_input_grad.then(|| Tensor::zeros(input.shape()));
                d.backward_into(
                    input,
                    grad_out,
                    g.weights.data_mut(),
                    g.bias.data_mut(),
                    gi.as_mut().map(|t| t.data_mut()),
                )?;
                Ok(gi)
            }
            (Layer::Relu, LayerCache::Input(input)) => relu_backward(input, grad_out).map(Some),
            (Layer::MaxPool, LayerCache::Pool { input_shape, indices }) => {
                maxpool2_backward(input_shape, indices, grad_out).map(Some)
            }
            (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                grad_out.clone().reshape(input_shape.clone()).map(Some)
            }
            _ => Err(mismatch()),
        }
    }
}

/// He-uniform initialization: weights drawn from `U(-L, L)` with
/// `L = sqrt(6 / fan_in)` in storage order, biases zeroed. Layers without
/// parameters are left as they are and draw nothing.
pub fn he_init(layer: &mut Layer, rng: &mut Rng) {
    let fan_in = match layer {
        Layer::Conv(c) => c.in_channels() * KERNEL * KERNEL,
        Layer::Dense(d) => d.in_dim(),
        _ => return,
    };
    let limit = (6.0 / fan_in as f64).sqrt();
    let (w, b) = layer.params_mut().expect("parametric layer");
    for v in w.data_mut() {
        *v = rng.uniform(-limit, limit).expect("limit is positive");
    }
    b.data_mut().fill(0.0);
}
