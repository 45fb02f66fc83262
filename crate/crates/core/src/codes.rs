use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of basis coefficients per layer.
pub const NUM_BASES: usize = 4;
/// Number of distinct 4-bit codes.
pub const NUM_CODES: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeMatrixError {
    #[error("expected {expected} codes for a {rows}x{cols} matrix, got {actual}")]
    Length {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("code {code:#x} at index {index} does not fit in 4 bits")]
    Width { index: usize, code: u8 },
}

/// Row-major matrix of 4-bit weight codes. Bit `i` of a code marks membership
/// in the binary mask `B_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMatrix {
    rows: usize,
    cols: usize,
    codes: Vec<u8>,
}

impl CodeMatrix {
    pub fn new(rows: usize, cols: usize, codes: Vec<u8>) -> Result<Self, CodeMatrixError> {
        if codes.len() != rows * cols {
            return Err(CodeMatrixError::Length {
                rows,
                cols,
                expected: rows * cols,
                actual: codes.len(),
            });
        }
        if let Some((index, &code)) = codes.iter().enumerate().find(|(_, &c)| c > 0x0f) {
            return Err(CodeMatrixError::Width { index, code });
        }
        Ok(Self { rows, cols, codes })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            codes: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.codes
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.codes
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.codes[row * self.cols..(row + 1) * self.cols]
    }

    pub fn nnz(&self) -> usize {
        self.codes.iter().filter(|&&c| c != 0).count()
    }

    /// Fraction of exact-zero codes; 0 for an empty matrix.
    pub fn sparsity(&self) -> f64 {
        if self.codes.is_empty() {
            return 0.0;
        }
        1.0 - self.nnz() as f64 / self.codes.len() as f64
    }

    /// The binary mask `B_i` as a 0/1 vector.
    pub fn bit_plane(&self, basis: usize) -> Vec<u8> {
        assert!(basis < NUM_BASES);
        self.codes.iter().map(|&c| (c >> basis) & 1).collect()
    }

    pub fn histogram(&self) -> [u64; NUM_CODES] {
        histogram(&self.codes)
    }
}

pub fn histogram(codes: &[u8]) -> [u64; NUM_CODES] {
    let mut h = [0u64; NUM_CODES];
    for &c in codes {
        h[(c & 0x0f) as usize] += 1;
    }
    h
}
