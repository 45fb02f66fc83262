//! Binary model container. The byte layout is described in `docs/format.md`.

use std::io::{Read, Write};
use std::path::Path;

use super::formats::{CompressedLayer, Format};
use super::CodecError;
use crate::codes::NUM_BASES;
use crate::datapath::{BasisWeights, HalfSelect, SignMode};

pub const MAGIC: [u8; 4] = *b"F4MC";
pub const VERSION: u16 = 1;

const FLAG_RELU: u8 = 1;
const FLAG_HIGH_HALF: u8 = 2;
const FLAG_SUBTRACT: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model container (bad magic)")]
    BadMagic,
    #[error("container version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("container truncated")]
    Truncated,
    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },
    #[error("layer {layer}: {source}")]
    Codec { layer: usize, source: CodecError },
}

/// One compiled layer: weight codes plus everything the float stage needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ContainerLayer {
    pub weights: CompressedLayer,
    pub omega: BasisWeights,
    /// Real value of one unit of this layer's int8 input.
    pub act_scale: f32,
    /// Per-output scale applied to the converted accumulator.
    pub alpha1: Vec<f32>,
    pub bias: Vec<f32>,
    /// Output requantization scale.
    pub alpha2: f32,
    pub relu: bool,
    pub half_select: HalfSelect,
    pub sign_mode: SignMode,
}

impl ContainerLayer {
    pub fn rows(&self) -> usize {
        self.weights.rows
    }

    pub fn cols(&self) -> usize {
        self.weights.cols
    }

    /// Bits of side data stored next to the weight payload.
    pub fn param_bits(&self) -> u64 {
        (NUM_BASES as u64 * 16 + 8) + 32 + 32 * (self.alpha1.len() + self.bias.len()) as u64 + 32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelContainer {
    pub input_dim: usize,
    /// Real value of one unit of the int8 network input.
    pub input_scale: f32,
    pub layers: Vec<ContainerLayer>,
}

impl ModelContainer {
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, ContainerLayer::rows)
    }

    /// Checks that layer widths chain, per-row vectors have `rows` entries and
    /// every scale is finite.
    pub fn validate(&self) -> Result<(), ContainerError> {
        if !self.input_scale.is_finite() || self.input_scale <= 0.0 {
            return Err(ContainerError::Layer {
                layer: 0,
                message: format!("input scale {} is not a positive finite number", self.input_scale),
            });
        }
        let mut width = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            let err = |message: String| ContainerError::Layer { layer: i, message };
            let scalars = [l.act_scale, l.alpha2];
            if let Some(v) = scalars.iter().chain(&l.alpha1).chain(&l.bias).find(|v| !v.is_finite()) {
                return Err(err(format!("non-finite scale or bias {v}")));
            }
            if l.cols() != width {
                return Err(err(format!("expects {} inputs, previous width is {width}", l.cols())));
            }
            if l.alpha1.len() != l.rows() || l.bias.len() != l.rows() {
                return Err(err(format!(
                    "{} rows but {} scales and {} biases",
                    l.rows(),
                    l.alpha1.len(),
                    l.bias.len()
                )));
            }
            width = l.rows();
        }
        Ok(())
    }
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct In<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(ContainerError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ContainerError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32, ContainerError> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn len(&mut self) -> Result<usize, ContainerError> {
        usize::try_from(self.u32()?).map_err(|_| ContainerError::Truncated)
    }
}

/// Encodes the container to bytes, checksum included.
pub fn serialize_model(model: &ModelContainer) -> Vec<u8> {
    let mut o = Out(Vec::new());
    o.0.extend_from_slice(&MAGIC);
    o.u16(VERSION);
    o.u32(model.input_dim as u32);
    o.f32(model.input_scale);
    o.u32(model.layers.len() as u32);
    for l in &model.layers {
        o.u32(l.rows() as u32);
        o.u32(l.cols() as u32);
        o.u8(l.weights.format.tag());
        let mut flags = 0;
        if l.relu {
            flags |= FLAG_RELU;
        }
        if l.half_select == HalfSelect::High {
            flags |= FLAG_HIGH_HALF;
        }
        if l.sign_mode == SignMode::Subtract {
            flags |= FLAG_SUBTRACT;
        }
        o.u8(flags);
        o.u64(l.weights.bit_len);
        o.0.extend_from_slice(&l.weights.bytes);
        for v in l.omega.values {
            o.u16(v as u16);
        }
        o.u8(l.omega.shift as u8);
        o.f32(l.act_scale);
        for &a in &l.alpha1 {
            o.f32(a);
        }
        for &b in &l.bias {
            o.f32(b);
        }
        o.f32(l.alpha2);
    }
    let crc = crc32fast::hash(&o.0);
    o.u32(crc);
    o.0
}

/// Parses and validates a container, including every weight payload.
pub fn deserialize_model(bytes: &[u8]) -> Result<ModelContainer, ContainerError> {
    if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < 4 + 2 + 4 {
        return Err(ContainerError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ContainerError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ContainerError::Checksum { stored, computed });
    }
    let mut r = In { bytes: body, pos: 6 };
    let input_dim = r.len()?;
    let input_scale = r.f32()?;
    let n_layers = r.len()?;
    let mut layers = Vec::new();
    for layer in 0..n_layers {
        let bad = |message: String| ContainerError::Layer { layer, message };
        let rows = r.len()?;
        let cols = r.len()?;
        let format = Format::from_tag(r.u8()?).map_err(|source| ContainerError::Codec { layer, source })?;
        let flags = r.u8()?;
        if flags & !(FLAG_RELU | FLAG_HIGH_HALF | FLAG_SUBTRACT) != 0 {
            return Err(bad(format!("unknown flag bits {flags:#04x}")));
        }
        let bit_len = r.u64()?;
        let n_bytes = usize::try_from(bit_len.div_ceil(8)).map_err(|_| ContainerError::Truncated)?;
        let weights = CompressedLayer {
            format,
            rows,
            cols,
            bit_len,
            bytes: r.take(n_bytes)?.to_vec(),
        };
        weights.payload().map_err(|source| ContainerError::Codec { layer, source })?;
        let mut values = [0i16; NUM_BASES];
        for v in &mut values {
            *v = r.u16()? as i16;
        }
        let omega = BasisWeights {
            values,
            shift: r.u8()? as i8,
        };
        let act_scale = r.f32()?;
        let mut alpha1 = Vec::with_capacity(rows.min(body.len()));
        for _ in 0..rows {
            alpha1.push(r.f32()?);
        }
        let mut bias = Vec::with_capacity(rows.min(body.len()));
        for _ in 0..rows {
            bias.push(r.f32()?);
        }
        let alpha2 = r.f32()?;
        layers.push(ContainerLayer {
            weights,
            omega,
            act_scale,
            alpha1,
            bias,
            alpha2,
            relu: flags & FLAG_RELU != 0,
            half_select: if flags & FLAG_HIGH_HALF != 0 { HalfSelect::High } else { HalfSelect::Low },
            sign_mode: if flags & FLAG_SUBTRACT != 0 { SignMode::Subtract } else { SignMode::Add },
        });
    }
    if r.pos != body.len() {
        return Err(ContainerError::Layer {
            layer: n_layers,
            message: format!("{} trailing bytes", body.len() - r.pos),
        });
    }
    let model = ModelContainer {
        input_dim,
        input_scale,
        layers,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_model(model: &ModelContainer, path: &Path) -> Result<(), ContainerError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&serialize_model(model))?;
    f.sync_all()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelContainer, ContainerError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    deserialize_model(&bytes)
}
