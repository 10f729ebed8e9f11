//! Golomb codes for rejection indices and signed exponential-Golomb codes for
//! plain integer coordinates.

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

/// Golomb parameter for `Geom(p)`: `max(1, round(−1/log₂(1−p)))`, or `None`
/// when `p = 1` and the index carries no information.
pub fn golomb_parameter(p: f64) -> Result<Option<u64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!("success probability must be in (0, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(None);
    }
    let m = (-1.0 / (1.0 - p).log2()).round();
    Ok(Some(if m < 1.0 { 1 } else { m as u64 }))
}

fn ceil_log2(m: u64) -> u32 {
    if m <= 1 {
        0
    } else {
        64 - (m - 1).leading_zeros()
    }
}

/// Writes `h − 1` in Golomb code: unary quotient, truncated-binary remainder.
pub fn golomb_encode(h: u64, p: f64, w: &mut BitWriter) -> Result<()> {
    if h == 0 {
        return Err(Error::InvalidInput("rejection index must be at least 1".into()));
    }
    let Some(m) = golomb_parameter(p)? else {
        if h != 1 {
            return Err(Error::InvalidInput(format!("index {h} impossible when p = 1")));
        }
        return Ok(());
    };
    let v = h - 1;
    for _ in 0..v / m {
        w.write_bit(true);
    }
    w.write_bit(false);
    let r = v % m;
    let b = ceil_log2(m);
    let cutoff = (1u64 << b) - m;
    if r < cutoff {
        w.write_bits(r, b - 1);
    } else {
        w.write_bits(r + cutoff, b);
    }
    Ok(())
}

pub fn golomb_decode(p: f64, r: &mut BitReader<'_>) -> Result<u64> {
    let Some(m) = golomb_parameter(p)? else {
        return Ok(1);
    };
    let mut q = 0u64;
    while r.read_bit()? {
        q += 1;
        if q > crate::quantizers::REJECTION_CAP {
            return Err(Error::Bitstream("unary run exceeds the rejection cap".into()));
        }
    }
    let b = ceil_log2(m);
    if b == 0 {
        return Ok(q + 1);
    }
    let cutoff = (1u64 << b) - m;
    let mut rem = r.read_bits(b - 1)?;
    if rem >= cutoff {
        rem = ((rem << 1) | r.read_bit()? as u64) - cutoff;
    }
    Ok(q * m + rem + 1)
}

/// Code length in bits of `h` under [`golomb_encode`].
pub fn golomb_len(h: u64, p: f64) -> Result<u64> {
    let mut w = BitWriter::new();
    golomb_encode(h, p, &mut w)?;
    Ok(w.len())
}

const SIGNED_LIMIT: i64 = 1 << 62;

/// Zigzag-mapped order-0 exponential-Golomb code of a signed integer.
pub fn signed_exp_golomb_encode(v: i64, w: &mut BitWriter) -> Result<()> {
    if v.abs() >= SIGNED_LIMIT {
        return Err(Error::InvalidInput(format!("integer {v} too large for exp-Golomb")));
    }
    let z = ((v << 1) ^ (v >> 63)) as u64 + 1;
    let len = 64 - z.leading_zeros();
    w.write_bits(0, len - 1);
    w.write_bits(z, len);
    Ok(())
}

pub fn signed_exp_golomb_decode(r: &mut BitReader<'_>) -> Result<i64> {
    let mut zeros = 0u32;
    while !r.read_bit()? {
        zeros += 1;
        if zeros > 63 {
            return Err(Error::Bitstream("exp-Golomb prefix too long".into()));
        }
    }
    let z = (1u64 << zeros) | r.read_bits(zeros)?;
    let z = z - 1;
    Ok(((z >> 1) as i64) ^ -((z & 1) as i64))
}

pub fn signed_exp_golomb_len(v: i64) -> u64 {
    let z = ((v << 1) ^ (v >> 63)) as u64 + 1;
    2 * (64 - z.leading_zeros() as u64) - 1
}
