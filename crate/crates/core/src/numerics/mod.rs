//! Dense tensors, a seeded generator, and the hand-differentiated layers the
//! embedding network is built from.

mod layers;
mod rng;
mod tensor;

pub use layers::{
    he_init, maxpool2, maxpool2_backward, relu, relu_backward, Conv2d, ConvGrads, Dense,
    DenseGrads, Layer, LayerCache, LayerGrads, LayerKind, PoolIndices,
};
pub use rng::Rng;
pub use tensor::Tensor;
