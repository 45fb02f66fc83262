//! The three on-chip weight formats.
//!
//! Rows are cut into tiles of [`TILE_WIDTH`] columns; the last tile of a row is
//! zero-padded. Payloads are LSB-first bit streams (see [`super::bits`]):
//!
//! | format  | layout                                                          | bits                   |
//! |---------|-----------------------------------------------------------------|------------------------|
//! | Dense4  | every code, 4 bits, row-major                                   | `4·R·C`                |
//! | Bitmask | one 256-bit mask per row tile, then the non-zero codes (4 bits)| `256·R·T + 4·nnz`      |
//! | Csr     | per row tile an 8-bit count and that many 8-bit column indices, then the non-zero codes | `8·R·T + 12·nnz` |
//!
//! Non-zero codes are always streamed in row-major order.

use serde::{Deserialize, Serialize};

use super::bits::{BitReader, BitWriter};
use super::CodecError;
use crate::codes::CodeMatrix;

pub const TILE_WIDTH: usize = 256;
/// Position chunks per row tile in the CSR decoder.
pub const CSR_MAX_PER_TILE: usize = 32;

pub fn tiles_per_row(cols: usize) -> usize {
    cols.div_ceil(TILE_WIDTH)
}

/// Width of tile `tile` in a row of `cols` columns.
pub fn tile_width(cols: usize, tile: usize) -> usize {
    (cols - tile * TILE_WIDTH).min(TILE_WIDTH)
}

pub fn dense4_bits(rows: usize, cols: usize) -> u64 {
    4 * (rows * cols) as u64
}

pub fn bitmask_bits(rows: usize, cols: usize, nnz: usize) -> u64 {
    (TILE_WIDTH * rows * tiles_per_row(cols)) as u64 + 4 * nnz as u64
}

pub fn csr_bits(rows: usize, cols: usize, nnz: usize) -> u64 {
    8 * (rows * tiles_per_row(cols)) as u64 + 12 * nnz as u64
}

/// 256-bit occupancy mask of one row tile; bit `j` is column `tile·256 + j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileMask(pub [u64; 4]);

impl TileMask {
    pub const ZERO: TileMask = TileMask([0; 4]);

    pub fn full(width: usize) -> Self {
        let mut m = Self::ZERO;
        for j in 0..width {
            m.set(j);
        }
        m
    }

    pub fn set(&mut self, j: usize) {
        self.0[j / 64] |= 1 << (j % 64);
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    /// Set positions in increasing order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    None
                } else {
                    let b = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some(w * 64 + b)
                }
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Dense4,
    Bitmask,
    Csr,
}

impl Format {
    pub fn tag(self) -> u8 {
        match self {
            Format::Dense4 => 0,
            Format::Bitmask => 1,
            Format::Csr => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, CodecError> {
        match tag {
            0 => Ok(Format::Dense4),
            1 => Ok(Format::Bitmask),
            2 => Ok(Format::Csr),
            t => Err(CodecError::UnknownFormat(t)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Format::Dense4 => "dense4",
            Format::Bitmask => "bitmask",
            Format::Csr => "csr",
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dense4Layer {
    pub codes: CodeMatrix,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitmaskLayer {
    pub rows: usize,
    pub cols: usize,
    /// `rows · tiles_per_row(cols)` masks, row-major.
    pub masks: Vec<TileMask>,
    /// Non-zero codes in row-major order.
    pub values: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrLayer {
    pub rows: usize,
    pub cols: usize,
    /// Non-zeros per row tile, row-major.
    pub counts: Vec<u8>,
    /// Column index within the tile of each non-zero, tile after tile.
    pub positions: Vec<u8>,
    /// Non-zero codes in row-major order.
    pub values: Vec<u8>,
}

pub fn encode_dense4(codes: &CodeMatrix) -> Dense4Layer {
    Dense4Layer { codes: codes.clone() }
}

pub fn encode_bitmask(codes: &CodeMatrix) -> BitmaskLayer {
    let (rows, cols) = (codes.rows(), codes.cols());
    let tiles = tiles_per_row(cols);
    let mut masks = Vec::with_capacity(rows * tiles);
    let mut values = Vec::new();
    for r in 0..rows {
        let row = codes.row(r);
        for t in 0..tiles {
            let mut mask = TileMask::ZERO;
            for j in 0..tile_width(cols, t) {
                let c = row[t * TILE_WIDTH + j];
                if c != 0 {
                    mask.set(j);
                    values.push(c);
                }
            }
            masks.push(mask);
        }
    }
    BitmaskLayer { rows, cols, masks, values }
}

/// Fails with [`CodecError::NotRepresentable`] when any row tile holds more
/// than [`CSR_MAX_PER_TILE`] non-zeros.
pub fn encode_csr(codes: &CodeMatrix) -> Result<CsrLayer, CodecError> {
    let (rows, cols) = (codes.rows(), codes.cols());
    let tiles = tiles_per_row(cols);
    let mut counts = Vec::with_capacity(rows * tiles);
    let mut positions = Vec::new();
    let mut values = Vec::new();
    for r in 0..rows {
        let row = codes.row(r);
        for t in 0..tiles {
            let start = positions.len();
            for j in 0..tile_width(cols, t) {
                let c = row[t * TILE_WIDTH + j];
                if c != 0 {
                    positions.push(j as u8);
                    values.push(c);
                }
            }
            let nnz = positions.len() - start;
            if nnz > CSR_MAX_PER_TILE {
                return Err(CodecError::NotRepresentable { row: r, tile: t, nnz });
            }
            counts.push(nnz as u8);
        }
    }
    Ok(CsrLayer {
        rows,
        cols,
        counts,
        positions,
        values,
    })
}

/// True when every row tile has at most [`CSR_MAX_PER_TILE`] non-zeros.
pub fn csr_representable(codes: &CodeMatrix) -> bool {
    let tiles = tiles_per_row(codes.cols());
    (0..codes.rows()).all(|r| {
        let row = codes.row(r);
        (0..tiles).all(|t| {
            let start = t * TILE_WIDTH;
            row[start..start + tile_width(codes.cols(), t)]
                .iter()
                .filter(|&&c| c != 0)
                .count()
                <= CSR_MAX_PER_TILE
        })
    })
}

impl Dense4Layer {
    pub fn bit_size(&self) -> u64 {
        dense4_bits(self.codes.rows(), self.codes.cols())
    }

    pub fn to_compressed(&self) -> CompressedLayer {
        let mut w = BitWriter::new();
        for &c in self.codes.as_slice() {
            w.write(c as u64, 4);
        }
        CompressedLayer::from_writer(Format::Dense4, self.codes.rows(), self.codes.cols(), w)
    }
}

impl BitmaskLayer {
    pub fn bit_size(&self) -> u64 {
        bitmask_bits(self.rows, self.cols, self.values.len())
    }

    pub fn to_compressed(&self) -> CompressedLayer {
        let mut w = BitWriter::new();
        for m in &self.masks {
            for word in m.0 {
                w.write(word, 64);
            }
        }
        for &v in &self.values {
            w.write(v as u64, 4);
        }
        CompressedLayer::from_writer(Format::Bitmask, self.rows, self.cols, w)
    }

    /// Expands back to a code matrix, validating popcounts and padding.
    pub fn to_codes(&self) -> Result<CodeMatrix, CodecError> {
        let tiles = tiles_per_row(self.cols);
        if self.masks.len() != self.rows * tiles {
            return Err(CodecError::Malformed(format!(
                "{} masks for {} row tiles",
                self.masks.len(),
                self.rows * tiles
            )));
        }
        let ones: usize = self.masks.iter().map(|m| m.count_ones() as usize).sum();
        if ones != self.values.len() {
            return Err(CodecError::CountMismatch {
                expected: ones,
                found: self.values.len(),
            });
        }
        let mut codes = vec![0u8; self.rows * self.cols];
        let mut next = self.values.iter().enumerate();
        for r in 0..self.rows {
            for t in 0..tiles {
                let m = &self.masks[r * tiles + t];
                let width = tile_width(self.cols, t);
                for j in m.ones() {
                    if j >= width {
                        return Err(CodecError::Malformed(format!("row {r} tile {t}: padding bit {j} set")));
                    }
                    let (index, &v) = next.next().expect("popcount checked");
                    check_value(index, v)?;
                    codes[r * self.cols + t * TILE_WIDTH + j] = v;
                }
            }
        }
        Ok(CodeMatrix::new(self.rows, self.cols, codes).expect("validated codes"))
    }
}

impl CsrLayer {
    pub fn bit_size(&self) -> u64 {
        csr_bits(self.rows, self.cols, self.values.len())
    }

    /// Position chunks of row tile `index` (row-major numbering).
    pub fn tile_positions(&self, index: usize) -> &[u8] {
        let start: usize = self.counts[..index].iter().map(|&c| c as usize).sum();
        &self.positions[start..start + self.counts[index] as usize]
    }

    pub fn to_compressed(&self) -> CompressedLayer {
        let mut w = BitWriter::new();
        let mut pos = self.positions.iter();
        for &count in &self.counts {
            w.write(count as u64, 8);
            for _ in 0..count {
                w.write(*pos.next().expect("counts match positions") as u64, 8);
            }
        }
        for &v in &self.values {
            w.write(v as u64, 4);
        }
        CompressedLayer::from_writer(Format::Csr, self.rows, self.cols, w)
    }

    pub fn to_codes(&self) -> Result<CodeMatrix, CodecError> {
        let tiles = tiles_per_row(self.cols);
        if self.counts.len() != self.rows * tiles {
            return Err(CodecError::Malformed(format!(
                "{} counts for {} row tiles",
                self.counts.len(),
                self.rows * tiles
            )));
        }
        let total: usize = self.counts.iter().map(|&c| c as usize).sum();
        if total != self.positions.len() || total != self.values.len() {
            return Err(CodecError::CountMismatch {
                expected: total,
                found: self.values.len().min(self.positions.len()),
            });
        }
        let mut codes = vec![0u8; self.rows * self.cols];
        let mut k = 0;
        for r in 0..self.rows {
            for t in 0..tiles {
                let count = self.counts[r * tiles + t] as usize;
                if count > CSR_MAX_PER_TILE {
                    return Err(CodecError::CountOverflow { row: r, tile: t, count });
                }
                let width = tile_width(self.cols, t);
                let mut prev: Option<u8> = None;
                for _ in 0..count {
                    let p = self.positions[k];
                    if prev.is_some_and(|q| p <= q) {
                        return Err(CodecError::Malformed(format!("row {r} tile {t}: positions not increasing")));
                    }
                    if p as usize >= width {
                        return Err(CodecError::Malformed(format!(
                            "row {r} tile {t}: position {p} beyond width {width}"
                        )));
                    }
                    check_value(k, self.values[k])?;
                    codes[r * self.cols + t * TILE_WIDTH + p as usize] = self.values[k];
                    prev = Some(p);
                    k += 1;
                }
            }
        }
        Ok(CodeMatrix::new(self.rows, self.cols, codes).expect("validated codes"))
    }
}

fn check_value(index: usize, v: u8) -> Result<(), CodecError> {
    if v == 0 || v > 0x0f {
        return Err(CodecError::BadValue { index, value: v });
    }
    Ok(())
}

/// A structured payload parsed from a [`CompressedLayer`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerPayload {
    Dense4(Dense4Layer),
    Bitmask(BitmaskLayer),
    Csr(CsrLayer),
}

impl LayerPayload {
    pub fn to_codes(&self) -> Result<CodeMatrix, CodecError> {
        match self {
            LayerPayload::Dense4(d) => Ok(d.codes.clone()),
            LayerPayload::Bitmask(b) => b.to_codes(),
            LayerPayload::Csr(c) => c.to_codes(),
        }
    }
}

/// A serialized layer: format tag, dimensions and the exact payload bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedLayer {
    pub format: Format,
    pub rows: usize,
    pub cols: usize,
    /// Exact payload length in bits; `bytes` holds `ceil(bit_len / 8)` bytes.
    pub bit_len: u64,
    pub bytes: Vec<u8>,
}

impl CompressedLayer {
    fn from_writer(format: Format, rows: usize, cols: usize, w: BitWriter) -> Self {
        let (bytes, bit_len) = w.finish();
        Self {
            format,
            rows,
            cols,
            bit_len,
            bytes,
        }
    }

    pub fn tiles_per_row(&self) -> usize {
        tiles_per_row(self.cols)
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    /// Parses the payload bits back into the structured form. Any length,
    /// count or ordering inconsistency is an error.
    pub fn payload(&self) -> Result<LayerPayload, CodecError> {
        if self.bytes.len() as u64 != self.bit_len.div_ceil(8) {
            return Err(CodecError::Truncated {
                needed: self.bit_len,
                available: self.bytes.len() as u64 * 8,
            });
        }
        let mut r = BitReader::new(&self.bytes, self.bit_len);
        let tiles = self.tiles_per_row();
        let n_tiles = self.rows * tiles;
        let truncated = |r: &BitReader| CodecError::Truncated {
            needed: r.position() + 1,
            available: self.bit_len,
        };
        let payload = match self.format {
            Format::Dense4 => {
                let mut codes = Vec::with_capacity(self.rows * self.cols);
                for _ in 0..self.rows * self.cols {
                    codes.push(r.read(4).ok_or_else(|| truncated(&r))? as u8);
                }
                LayerPayload::Dense4(Dense4Layer {
                    codes: CodeMatrix::new(self.rows, self.cols, codes).expect("4-bit reads"),
                })
            }
            Format::Bitmask => {
                let mut masks = Vec::with_capacity(n_tiles);
                for _ in 0..n_tiles {
                    let mut m = TileMask::ZERO;
                    for word in m.0.iter_mut() {
                        *word = r.read(64).ok_or_else(|| truncated(&r))?;
                    }
                    masks.push(m);
                }
                let nnz: usize = masks.iter().map(|m| m.count_ones() as usize).sum();
                let mut values = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    values.push(r.read(4).ok_or_else(|| truncated(&r))? as u8);
                }
                let layer = BitmaskLayer {
                    rows: self.rows,
                    cols: self.cols,
                    masks,
                    values,
                };
                layer.to_codes()?;
                LayerPayload::Bitmask(layer)
            }
            Format::Csr => {
                let mut counts = Vec::with_capacity(n_tiles);
                let mut positions = Vec::new();
                for t in 0..n_tiles {
                    let count = r.read(8).ok_or_else(|| truncated(&r))? as usize;
                    if count > CSR_MAX_PER_TILE {
                        return Err(CodecError::CountOverflow {
                            row: t / tiles.max(1),
                            tile: t % tiles.max(1),
                            count,
                        });
                    }
                    counts.push(count as u8);
                    for _ in 0..count {
                        positions.push(r.read(8).ok_or_else(|| truncated(&r))? as u8);
                    }
                }
                let mut values = Vec::with_capacity(positions.len());
                for _ in 0..positions.len() {
                    values.push(r.read(4).ok_or_else(|| truncated(&r))? as u8);
                }
                let layer = CsrLayer {
                    rows: self.rows,
                    cols: self.cols,
                    counts,
                    positions,
                    values,
                };
                layer.to_codes()?;
                LayerPayload::Csr(layer)
            }
        };
        if r.remaining() != 0 {
            return Err(CodecError::TrailingBits(r.remaining()));
        }
        Ok(payload)
    }
}

/// Recovers the exact code matrix from any format.
pub fn decode(layer: &CompressedLayer) -> Result<CodeMatrix, CodecError> {
    layer.payload()?.to_codes()
}
