//! MSB-first bit writer and reader.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of bits written so far.
    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn write_bit(&mut self, bit: bool) {
        let off = (self.len % 8) as u32;
        if off == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().expect("byte pushed above") |= 0x80 >> off;
        }
        self.len += 1;
    }

    /// Writes the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        for i in (0..width).rev() {
            self.write_bit((value >> i) & 1 == 1);
        }
    }

    /// Bytes with the final partial byte zero-padded.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.data.len() as u64 * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        let byte = self
            .data
            .get((self.pos / 8) as usize)
            .ok_or_else(|| Error::Bitstream("unexpected end of payload".into()))?;
        let bit = byte & (0x80 >> (self.pos % 8)) != 0;
        self.pos += 1;
        Ok(bit)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }

    /// Checks that only zero padding (fewer than 8 bits) is left.
    pub fn finish(mut self) -> Result<()> {
        let rest = self.remaining();
        if rest >= 8 {
            return Err(Error::Bitstream(format!("{rest} unread trailing bits")));
        }
        for _ in 0..rest {
            if self.read_bit()? {
                return Err(Error::Bitstream("non-zero padding".into()));
            }
        }
        Ok(())
    }
}
