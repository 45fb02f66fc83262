//! Weight formats, per-layer format selection, size accounting and the model
//! container.

pub mod bits;
mod container;
mod formats;
mod select;

pub use container::{deserialize_model, read_model, serialize_model, write_model, ContainerError, ContainerLayer, ModelContainer};
pub use formats::{
    bitmask_bits, csr_bits, csr_representable, decode, dense4_bits, encode_bitmask, encode_csr, encode_dense4, tile_width,
    tiles_per_row, BitmaskLayer, CompressedLayer, CsrLayer, Dense4Layer, Format, LayerPayload, TileMask, CSR_MAX_PER_TILE,
    TILE_WIDTH,
};
pub use select::{
    compression_ratio, encode_with_mode, format_sizes, layer_size_row, select_format, write_size_report, CompressionMode,
    FormatSizes, SizeReportRow,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("row {row} tile {tile} holds {nnz} non-zeros; CSR allows at most 32")]
    NotRepresentable { row: usize, tile: usize, nnz: usize },
    #[error("payload truncated: needed {needed} bits, {available} available")]
    Truncated { needed: u64, available: u64 },
    #[error("{0} unread bits after the payload")]
    TrailingBits(u64),
    #[error("row {row} tile {tile}: count {count} exceeds 32")]
    CountOverflow { row: usize, tile: usize, count: usize },
    #[error("expected {expected} non-zero values, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("value {index} is {value:#x}; sparse streams hold codes 1..=15")]
    BadValue { index: usize, value: u8 },
    #[error("unknown format tag {0}")]
    UnknownFormat(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
}
