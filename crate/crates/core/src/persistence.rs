//! Fixed little-endian model file (`.stw`).
//!
//! ```text
//! "STW1" | version u32 = 1 | input h, w, c u32 | embedding_dim u32 | margin f64
//! layer_count u32
//! per layer: kind u8 (1 conv, 2 relu, 3 maxpool, 4 flatten, 5 dense)
//!   conv:  out_ch, in_ch, kh, kw u32, weights f64 (out, in, kh, kw), biases f64
//!   dense: out, in u32, weights f64 (out, in), biases f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, ModelFileError, Result};
use crate::numerics::{Conv2d, Dense, Layer, LayerKind, Tensor};
use crate::siamese::{SiameseModel, EMBEDDING_DIM, INPUT_SHAPE};

pub const MAGIC: [u8; 4] = *b"STW1";
pub const VERSION: u32 = 1;

pub fn encode_model(model: &SiameseModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.param_count() * 8 + 256);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    let [c, h, w] = INPUT_SHAPE;
    for v in [h, w, c, EMBEDDING_DIM] {
        put_u32(&mut out, v as u32);
    }
    out.extend_from_slice(&model.margin().to_le_bytes());
    put_u32(&mut out, model.layers().len() as u32);
    for layer in model.layers() {
        out.push(layer.kind().tag());
        match layer {
            Layer::Conv(conv) => {
                for d in conv.weights().shape() {
                    put_u32(&mut out, *d as u32);
                }
                put_f64s(&mut out, conv.weights().data());
                put_f64s(&mut out, conv.bias().data());
            }
            Layer::Dense(dense) => {
                put_u32(&mut out, dense.out_dim() as u32);
                put_u32(&mut out, dense.in_dim() as u32);
                put_f64s(&mut out, dense.weights().data());
                put_f64s(&mut out, dense.bias().data());
            }
            Layer::Relu | Layer::MaxPool | Layer::Flatten => {}
        }
    }
    out
}

pub fn save_model(model: &SiameseModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<SiameseModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        DecodeError::File(source) => Error::ModelFile {
            path: path.to_path_buf(),
            source,
        },
        DecodeError::Other(e) => e,
    })
}

#[derive(Debug)]
pub enum DecodeError {
    File(ModelFileError),
    /// Structurally valid file whose contents the model rejects (for example
    /// non-finite parameters).
    Other(Error),
}

impl From<ModelFileError> for DecodeError {
    fn from(e: ModelFileError) -> Self {
        DecodeError::File(e)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> std::result::Result<&'a [u8], ModelFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ModelFileError::Truncated {
                context: context.to_string(),
            }),
        }
    }

    fn u8(&mut self, context: &str) -> std::result::Result<u8, ModelFileError> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &str) -> std::result::Result<u32, ModelFileError> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, context: &str) -> std::result::Result<f64, ModelFileError> {
        let b = self.take(8, context)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, context: &str) -> std::result::Result<Vec<f64>, ModelFileError> {
        let bytes = self.take(n.saturating_mul(8), context)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn chain(layer: usize, detail: impl Into<String>) -> ModelFileError {
    ModelFileError::ShapeChain {
        layer,
        detail: detail.into(),
    }
}

/// Tracks the activation shape flowing through the declared layers.
#[derive(Debug, Clone, PartialEq)]
enum Flow {
    Spatial(usize, usize, usize),
    Flat(usize),
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<SiameseModel, DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ModelFileError::BadMagic(magic).into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ModelFileError::UnsupportedVersion(version).into());
    }
    let h = r.u32("input height")? as usize;
    let w = r.u32("input width")? as usize;
    let c = r.u32("input channels")? as usize;
    let embedding_dim = r.u32("embedding dimension")? as usize;
    let margin = r.f64("margin")?;
    if [c, h, w] != INPUT_SHAPE {
        return Err(chain(0, format!("input shape {c}x{h}x{w} is not 1x64x64")).into());
    }
    if embedding_dim != EMBEDDING_DIM {
        return Err(chain(0, format!("embedding dimension {embedding_dim} is not {EMBEDDING_DIM}")).into());
    }
    let count = r.u32("layer count")? as usize;

    let mut flow = Flow::Spatial(c, h, w);
    let mut layers = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let tag = r.u8(&format!("kind tag of layer {i}"))?;
        let kind = LayerKind::from_tag(tag).ok_or(ModelFileError::BadKindTag { layer: i, tag })?;
        let layer = match kind {
            LayerKind::Conv => {
                let ctx = format!("header of layer {i} (conv)");
                let out_ch = r.u32(&ctx)? as usize;
                let in_ch = r.u32(&ctx)? as usize;
                let kh = r.u32(&ctx)? as usize;
                let kw = r.u32(&ctx)? as usize;
                let Flow::Spatial(fc, fh, fw) = flow else {
                    return Err(chain(i, "conv after flatten").into());
                };
                if in_ch != fc {
                    return Err(chain(i, format!("conv expects {in_ch} channels, receives {fc}")).into());
                }
                if (kh, kw) != (3, 3) || out_ch == 0 {
                    return Err(chain(i, format!("conv kernel {out_ch}x{in_ch}x{kh}x{kw} invalid")).into());
                }
                let weights = r.f64s(out_ch * in_ch * 9, &format!("weights of layer {i} (conv)"))?;
                let bias = r.f64s(out_ch, &format!("biases of layer {i} (conv)"))?;
                flow = Flow::Spatial(out_ch, fh, fw);
                let conv = Conv2d::new(
                    Tensor::new(vec![out_ch, in_ch, 3, 3], weights).map_err(DecodeError::Other)?,
                    Tensor::new(vec![out_ch], bias).map_err(DecodeError::Other)?,
                )
                .map_err(DecodeError::Other)?;
                Layer::Conv(conv)
            }
            LayerKind::Dense => {
                let ctx = format!("header of layer {i} (dense)");
                let out_dim = r.u32(&ctx)? as usize;
                let in_dim = r.u32(&ctx)? as usize;
                let Flow::Flat(n) = flow else {
                    return Err(chain(i, "dense before flatten").into());
                };
                if in_dim != n || out_dim == 0 {
                    return Err(chain(i, format!("dense {in_dim}->{out_dim} receives {n} features")).into());
                }
                let weights = r.f64s(out_dim * in_dim, &format!("weights of layer {i} (dense)"))?;
                let bias = r.f64s(out_dim, &format!("biases of layer {i} (dense)"))?;
                flow = Flow::Flat(out_dim);
                let dense = Dense::new(
                    Tensor::new(vec![out_dim, in_dim], weights).map_err(DecodeError::Other)?,
                    Tensor::new(vec![out_dim], bias).map_err(DecodeError::Other)?,
                )
                .map_err(DecodeError::Other)?;
                Layer::Dense(dense)
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::MaxPool => {
                match flow {
                    Flow::Spatial(fc, fh, fw) if fh % 2 == 0 && fw % 2 == 0 => {
                        flow = Flow::Spatial(fc, fh / 2, fw / 2)
                    }
                    _ => return Err(chain(i, format!("cannot pool {flow:?}")).into()),
                }
                Layer::MaxPool
            }
            LayerKind::Flatten => {
                match flow {
                    Flow::Spatial(fc, fh, fw) => flow = Flow::Flat(fc * fh * fw),
                    Flow::Flat(_) => return Err(chain(i, "flatten of a flat tensor").into()),
                }
                Layer::Flatten
            }
        };
        layers.push(layer);
    }
    if flow != Flow::Flat(embedding_dim) {
        return Err(chain(count, format!("network ends in {flow:?}, not a {embedding_dim}-d embedding")).into());
    }
    if r.pos != bytes.len() {
        return Err(ModelFileError::LengthMismatch {
            expected: r.pos,
            actual: bytes.len(),
        }
        .into());
    }
    SiameseModel::from_layers(layers, margin).map_err(|e| match e {
        Error::Shape(detail) => DecodeError::File(chain(count, detail)),
        other => DecodeError::Other(other),
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Image;
    use crate::numerics::Rng;

    fn model() -> SiameseModel {
        SiameseModel::he_initialized(&mut Rng::new(31), 1.25).unwrap()
    }

    fn file_err(bytes: &[u8]) -> ModelFileError {
        match decode_model(bytes) {
            Err(DecodeError::File(e)) => e,
            other => panic!("expected a file error, got {other:?}"),
        }
    }

    /// magic, version, h, w, c, embedding_dim, margin. The layer count
    /// follows, then the first kind tag at byte 36.
    const HEADER_LEN: usize = 32;

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.margin().to_bits(), 1.25f64.to_bits());
        let img = Image::from_fn(64, 64, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        assert_eq!(m.embed(&img).unwrap(), back.embed(&img).unwrap());
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn file_length_is_computable() {
        let m = model();
        let bytes = encode_model(&m);
        let n_layers = m.layers().len();
        let param_headers = 3 * 16 + 8;
        assert_eq!(bytes.len(), HEADER_LEN + 4 + n_layers + param_headers + 8 * m.param_count());
        assert_eq!(&bytes[..4], b"STW1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[64, 0, 0, 0]);
        assert_eq!(bytes[36], 1);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_model(&model());
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(file_err(&bytes), ModelFileError::BadMagic(*b"XXXX"));
    }

    #[test]
    fn bad_version() {
        let mut bytes = encode_model(&model());
        bytes[4] = 2;
        assert_eq!(file_err(&bytes), ModelFileError::UnsupportedVersion(2));
    }

    #[test]
    fn bad_kind_tag() {
        let mut bytes = encode_model(&model());
        bytes[36] = 9;
        assert_eq!(file_err(&bytes), ModelFileError::BadKindTag { layer: 0, tag: 9 });
    }

    #[test]
    fn truncation_names_the_layer() {
        let bytes = encode_model(&model());
        // Middle of conv2's weights: header, count, conv1 (tag + 16 + 80 f64),
        // relu, pool, conv2 tag + 16, then 100 weights in.
        let conv1 = 1 + 16 + 8 * (72 + 8);
        let cut = HEADER_LEN + 4 + conv1 + 2 + 1 + 16 + 8 * 100;
        match file_err(&bytes[..cut]) {
            ModelFileError::Truncated { context } => assert_eq!(context, "weights of layer 3 (conv)"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(file_err(&bytes[..2]), ModelFileError::Truncated { .. }));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_model(&model());
        let expected = bytes.len();
        bytes.push(0);
        assert_eq!(
            file_err(&bytes),
            ModelFileError::LengthMismatch { expected, actual: expected + 1 }
        );
    }

    #[test]
    fn shape_chain_violation() {
        let mut bytes = encode_model(&model());
        // conv1 in_ch 1 -> 2
        bytes[HEADER_LEN + 4 + 1 + 4] = 2;
        assert!(matches!(file_err(&bytes), ModelFileError::ShapeChain { layer: 0, .. }));

        // Drop a maxpool by retagging it as relu: the dense head no longer fits.
        let mut bytes = encode_model(&model());
        let conv1 = 1 + 16 + 8 * (72 + 8);
        bytes[HEADER_LEN + 4 + conv1 + 1] = 2;
        assert!(matches!(file_err(&bytes), ModelFileError::ShapeChain { .. }));
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.stw");
        std::fs::write(&path, b"XXXXjunk").unwrap();
        match load_model(&path) {
            Err(Error::ModelFile { path: p, source: ModelFileError::BadMagic(_) }) => assert_eq!(p, path),
            other => panic!("{other:?}"),
        }
        save_model(&model(), &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), model());
    }
}
