use serde::{Deserialize, Serialize};

use super::formats::{
    bitmask_bits, csr_bits, csr_representable, dense4_bits, encode_bitmask, encode_csr, encode_dense4, CompressedLayer, Format,
};
use crate::codes::{histogram, CodeMatrix};
use crate::quant::entropy_of_histogram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CompressionMode {
    /// Smallest of the three formats per layer.
    #[default]
    Hybrid,
    /// CSR everywhere; layers CSR cannot hold fall back to Dense4.
    CsrOnly,
}

impl std::str::FromStr for CompressionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(Self::Hybrid),
            "csr-only" | "csr_only" => Ok(Self::CsrOnly),
            other => Err(format!("unknown compression mode {other:?} (expected hybrid or csr-only)")),
        }
    }
}

/// Payload bits of one layer in each format; `csr` is `None` when some tile
/// exceeds the CSR chunk limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FormatSizes {
    pub dense4: u64,
    pub bitmask: u64,
    pub csr: Option<u64>,
}

impl FormatSizes {
    /// Smallest representable format, ties resolved Dense4, Bitmask, Csr.
    pub fn best(&self) -> (Format, u64) {
        let mut best = (Format::Dense4, self.dense4);
        if self.bitmask < best.1 {
            best = (Format::Bitmask, self.bitmask);
        }
        if let Some(c) = self.csr {
            if c < best.1 {
                best = (Format::Csr, c);
            }
        }
        best
    }

    pub fn for_mode(&self, mode: CompressionMode) -> (Format, u64) {
        match mode {
            CompressionMode::Hybrid => self.best(),
            CompressionMode::CsrOnly => match self.csr {
                Some(c) => (Format::Csr, c),
                None => (Format::Dense4, self.dense4),
            },
        }
    }
}

pub fn format_sizes(codes: &CodeMatrix) -> FormatSizes {
    let (r, c, nnz) = (codes.rows(), codes.cols(), codes.nnz());
    FormatSizes {
        dense4: dense4_bits(r, c),
        bitmask: bitmask_bits(r, c, nnz),
        csr: csr_representable(codes).then(|| csr_bits(r, c, nnz)),
    }
}

/// Encodes `codes` in its smallest format.
pub fn select_format(codes: &CodeMatrix) -> CompressedLayer {
    encode_with_mode(codes, CompressionMode::Hybrid)
}

pub fn encode_with_mode(codes: &CodeMatrix, mode: CompressionMode) -> CompressedLayer {
    let (format, _) = format_sizes(codes).for_mode(mode);
    if mode == CompressionMode::CsrOnly && format == Format::Dense4 {
        log::warn!(
            "{}x{} layer exceeds 32 non-zeros in some tile; stored as dense4 in csr-only mode",
            codes.rows(),
            codes.cols()
        );
    }
    match format {
        Format::Dense4 => encode_dense4(codes).to_compressed(),
        Format::Bitmask => encode_bitmask(codes).to_compressed(),
        Format::Csr => encode_csr(codes).expect("representability checked").to_compressed(),
    }
}

/// Full-precision size (32 bits per weight) over the chosen-format size,
/// counting weight payloads only. A model without weights has ratio 1.
pub fn compression_ratio<'a>(layers: impl IntoIterator<Item = &'a CodeMatrix>, mode: CompressionMode) -> f64 {
    let mut full = 0u64;
    let mut packed = 0u64;
    for codes in layers {
        full += 32 * codes.len() as u64;
        let sizes = format_sizes(codes);
        let (format, bits) = sizes.for_mode(mode);
        if mode == CompressionMode::CsrOnly && format == Format::Dense4 {
            log::warn!(
                "{}x{} layer is not CSR-representable; counted as dense4",
                codes.rows(),
                codes.cols()
            );
        }
        packed += bits;
    }
    if packed == 0 {
        1.0
    } else {
        full as f64 / packed as f64
    }
}

/// One line of the per-layer size report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReportRow {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    pub format: Format,
    pub bits: u64,
    pub dense4_bits: u64,
    pub bitmask_bits: u64,
    pub csr_bits: Option<u64>,
    pub csr_only_bits: u64,
    pub nnz: usize,
    pub sparsity: f64,
    pub entropy: f64,
    /// Bits of the per-layer float side data (α1, bias, α2, ω, scales).
    pub param_bits: u64,
}

pub fn layer_size_row(layer: usize, codes: &CodeMatrix, param_bits: u64) -> SizeReportRow {
    let sizes = format_sizes(codes);
    let (format, bits) = sizes.best();
    SizeReportRow {
        layer,
        rows: codes.rows(),
        cols: codes.cols(),
        format,
        bits,
        dense4_bits: sizes.dense4,
        bitmask_bits: sizes.bitmask,
        csr_bits: sizes.csr,
        csr_only_bits: sizes.for_mode(CompressionMode::CsrOnly).1,
        nnz: codes.nnz(),
        sparsity: codes.sparsity(),
        entropy: entropy_of_histogram(&histogram(codes.as_slice())),
        param_bits,
    }
}

pub fn write_size_report<W: std::io::Write>(out: W, rows: &[SizeReportRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
