use std::collections::VecDeque;

use super::DatapathError;
use crate::codec::{TileMask, CSR_MAX_PER_TILE, TILE_WIDTH};

/// Queue depth of each column FIFO.
pub const FIFO_DEPTH: usize = 256;

/// Expands the position chunks of one CSR row tile into its occupancy mask.
///
/// The first `count` chunks are used. Chunk order is not checked; repeated
/// positions are.
pub fn csr_row_to_bitmask(chunks: &[u8], count: usize) -> Result<TileMask, DatapathError> {
    if count > CSR_MAX_PER_TILE || count > chunks.len() {
        return Err(DatapathError::CsrCount {
            count,
            available: chunks.len().min(CSR_MAX_PER_TILE),
        });
    }
    let mut mask = TileMask::ZERO;
    for &p in &chunks[..count] {
        if mask.get(p as usize) {
            return Err(DatapathError::CsrDuplicate { position: p });
        }
        mask.set(p as usize);
    }
    Ok(mask)
}

/// 256 column queues of 4-bit weight codes.
#[derive(Clone, Debug)]
pub struct WeightIdFifo {
    queues: Vec<VecDeque<u8>>,
    last: [Option<u8>; TILE_WIDTH],
    pops: u64,
    repeat_pops: u64,
}

impl Default for WeightIdFifo {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightIdFifo {
    pub fn new() -> Self {
        Self {
            queues: (0..TILE_WIDTH).map(|_| VecDeque::with_capacity(FIFO_DEPTH)).collect(),
            last: [None; TILE_WIDTH],
            pops: 0,
            repeat_pops: 0,
        }
    }

    pub fn push(&mut self, column: usize, code: u8) -> Result<(), DatapathError> {
        let q = &mut self.queues[column];
        if q.len() == FIFO_DEPTH {
            return Err(DatapathError::FifoOverflow { column });
        }
        q.push_back(code);
        Ok(())
    }

    /// Replaces the queue contents; `columns[j]` lists column `j`'s codes in
    /// row order.
    pub fn load(&mut self, columns: &[Vec<u8>]) -> Result<(), DatapathError> {
        for q in &mut self.queues {
            q.clear();
        }
        for (j, codes) in columns.iter().enumerate() {
            for &c in codes {
                self.push(j, c)?;
            }
        }
        Ok(())
    }

    pub fn pop(&mut self, column: usize) -> Result<u8, DatapathError> {
        let code = self.queues[column]
            .pop_front()
            .ok_or(DatapathError::FifoUnderrun { column })?;
        self.pops += 1;
        if self.last[column] == Some(code) {
            self.repeat_pops += 1;
        }
        self.last[column] = Some(code);
        Ok(code)
    }

    pub fn len(&self, column: usize) -> usize {
        self.queues[column].len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }

    pub fn pops(&self) -> u64 {
        self.pops
    }

    /// Pops that returned the same code as the previous pop of that queue.
    pub fn repeat_pops(&self) -> u64 {
        self.repeat_pops
    }
}

/// Emits one id per position: the next code of column `j` where the mask is
/// set, zero elsewhere.
pub fn generate_weight_ids(mask: &TileMask, fifo: &mut WeightIdFifo) -> Result<[u8; TILE_WIDTH], DatapathError> {
    let mut ids = [0u8; TILE_WIDTH];
    for j in mask.ones() {
        ids[j] = fifo.pop(j)?;
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_bitmask, encode_csr, tiles_per_row};
    use crate::codes::CodeMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chunk_example_sets_both_positions() {
        let mut chunks = [0u8; 32];
        chunks[0] = 241;
        chunks[31] = 51;
        for (k, c) in chunks.iter_mut().enumerate().take(31).skip(1) {
            *c = (k * 7) as u8;
        }
        let mask = csr_row_to_bitmask(&chunks, 32).unwrap();
        assert!(mask.get(241) && mask.get(51));
        assert_eq!(mask.count_ones(), 32);
    }

    #[test]
    fn count_zero_and_bad_inputs() {
        assert_eq!(csr_row_to_bitmask(&[], 0).unwrap(), TileMask::ZERO);
        assert!(matches!(csr_row_to_bitmask(&[0; 40], 33), Err(DatapathError::CsrCount { .. })));
        assert!(matches!(csr_row_to_bitmask(&[4, 9, 4], 3), Err(DatapathError::CsrDuplicate { position: 4 })));
        assert!(matches!(csr_row_to_bitmask(&[1], 2), Err(DatapathError::CsrCount { .. })));
    }

    #[test]
    fn csr_and_bitmask_masks_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let cols = rng.random_range(1..700);
            let codes: Vec<u8> = (0..3 * cols)
                .map(|_| if rng.random_bool(0.06) { rng.random_range(1..16) } else { 0 })
                .collect();
            let m = CodeMatrix::new(3, cols, codes).unwrap();
            let Ok(csr) = encode_csr(&m) else { continue };
            let bm = encode_bitmask(&m);
            for t in 0..3 * tiles_per_row(cols) {
                let chunks = csr.tile_positions(t);
                assert_eq!(csr_row_to_bitmask(chunks, chunks.len()).unwrap(), bm.masks[t]);
            }
        }
    }

    #[test]
    fn ids_follow_the_mask() {
        let mut fifo = WeightIdFifo::new();
        fifo.push(3, 0b0101).unwrap();
        fifo.push(7, 0b1100).unwrap();
        let mut mask = TileMask::ZERO;
        mask.set(3);
        mask.set(7);
        let ids = generate_weight_ids(&mask, &mut fifo).unwrap();
        assert_eq!(ids[3], 0b0101);
        assert_eq!(ids[7], 0b1100);
        assert_eq!(ids.iter().filter(|&&c| c != 0).count(), 2);
        assert!(fifo.is_empty());
        assert_eq!(fifo.pops(), 2);
        assert_eq!(generate_weight_ids(&TileMask::ZERO, &mut fifo).unwrap(), [0; 256]);
        assert_eq!(fifo.pops(), 2);
    }

    #[test]
    fn underrun_overflow_and_repeats() {
        let mut fifo = WeightIdFifo::new();
        let mut mask = TileMask::ZERO;
        mask.set(9);
        assert!(matches!(generate_weight_ids(&mask, &mut fifo), Err(DatapathError::FifoUnderrun { column: 9 })));
        for _ in 0..FIFO_DEPTH {
            fifo.push(0, 6).unwrap();
        }
        assert!(matches!(fifo.push(0, 6), Err(DatapathError::FifoOverflow { column: 0 })));
        for _ in 0..3 {
            fifo.pop(0).unwrap();
        }
        assert_eq!(fifo.repeat_pops(), 2);
    }
}
