//! Bit-exact model of the accumulate-then-multiply inference datapath.
//!
//! Per output row and 256-wide input tile, the occupancy mask selects which
//! column FIFOs to pop, the popped 4-bit ids gate a 256-input adder tree into
//! four 16-bit sums (one per basis bit), and four multipliers combine them with
//! the fixed-point basis into a 32-bit accumulator. After the last tile the
//! accumulator is converted to single precision and scaled, biased, rectified
//! and rounded back to a 16-bit integer.

mod basis;
mod engine;
mod fifo;
pub mod float;
mod tile;
pub mod trace;

pub use basis::{BasisWeights, MAX_TILE_SUM};
pub use engine::{
    clamp_to_i8, postprocess, quantize_input, simulate_layer, simulate_model, LayerRun, LoadedLayer, ModelRun, SimOptions,
    ROW_BLOCK,
};
pub use fifo::{csr_row_to_bitmask, generate_weight_ids, WeightIdFifo, FIFO_DEPTH};
pub use float::{fixed_to_float, float_add, float_multiply, FloatRounding};
pub use tile::{adder_tree, mac_array, ActivationTile, AdderSums, HalfSelect, SignMode};
pub use trace::{write_trace_csv, write_trace_jsonl, DatapathTrace, TraceEvent};

use crate::codec::{CodecError, ContainerError};

#[derive(Debug, thiserror::Error)]
pub enum DatapathError {
    #[error("FIFO underrun on column {column}")]
    FifoUnderrun { column: usize },
    #[error("FIFO overflow on column {column}")]
    FifoOverflow { column: usize },
    #[error("FIFO not drained after row block {block}, tile {tile}")]
    FifoResidue { block: usize, tile: usize },
    #[error("CSR count {count} exceeds the {available} chunks available")]
    CsrCount { count: usize, available: usize },
    #[error("CSR position {position} repeated")]
    CsrDuplicate { position: u8 },
    #[error("32-bit accumulator overflow on row {row}")]
    AccumulatorOverflow { row: usize },
    #[error("{what}: expected {expected}, found {found}")]
    Dim { what: &'static str, expected: usize, found: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}
