//! LSB-first bit streams: bit `k` of the stream is bit `k % 8` of byte `k / 8`.

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`, least significant first.
    pub fn write(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(width == 64 || value >> width == 0, "value wider than field");
        for b in 0..width {
            let bit = (value >> b) & 1;
            let byte = (self.len / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            self.bytes[byte] |= (bit as u8) << (self.len % 8);
            self.len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.len)
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    limit: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    /// Reader over the first `limit` bits of `bytes`.
    pub fn new(bytes: &'a [u8], limit: u64) -> Self {
        Self {
            bytes,
            limit: limit.min(bytes.len() as u64 * 8),
            pos: 0,
        }
    }

    /// `None` when fewer than `width` bits remain.
    pub fn read(&mut self, width: u32) -> Option<u64> {
        if self.pos + width as u64 > self.limit {
            return None;
        }
        let mut v = 0u64;
        for b in 0..width {
            let at = self.pos + b as u64;
            let bit = (self.bytes[(at / 8) as usize] >> (at % 8)) & 1;
            v |= (bit as u64) << b;
        }
        self.pos += width as u64;
        Some(v)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.pos
    }
}
