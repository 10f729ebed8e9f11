//! Bit-exact wire format for LRSUQ outputs.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CEPM"
//!      4     1  version (1)
//!      5     1  subvector dimension n
//!      6     1  family tag (0 = Gaussian ball, 1 = Laplace interval)
//!      7     8  noise scale σ or b, f64 big-endian
//!     15     8  lattice scale α, f64 big-endian
//!     23     8  clip radius γ, f64 big-endian
//!     31     4  record count N, u32 big-endian
//!     35     …  payload, MSB-first, zero-padded to a byte
//! ```
//!
//! Each record is the Golomb code of `H` (absent when `p = 1`) followed by the
//! row-major rank of `M` inside the box from [`MessageDomain::bounds`], in
//! `⌈log₂ |box|⌉` bits. The box depends on the latent `u`, which the decoder
//! regenerates from its own tape before reading the record. The seed is not
//! part of the stream.

pub mod bits;
pub mod golomb;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, LatticeSpec};
use crate::noise::{NoiseFamily, NoiseKind};
use crate::quantizers::{lrsuq_encode, lrsuq_reconstruct, EncodedSubvector, LrsuqEncoding};
use crate::randomness::RandomTape;
use bits::{BitReader, BitWriter};
use golomb::{golomb_decode, golomb_encode};

pub const MAGIC: &[u8; 4] = b"CEPM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 35;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub family: NoiseFamily,
    pub lattice: LatticeSpec,
    pub gamma: f64,
    pub count: u32,
}

impl Header {
    pub fn new(family: NoiseFamily, lattice: LatticeSpec, gamma: f64, count: u32) -> Result<Self> {
        if family.dim() != lattice.dim() {
            return Err(Error::InvalidInput("noise and lattice dimensions differ".into()));
        }
        if family.dim() > u8::MAX as usize {
            return Err(Error::Unsupported(format!("dimension {} does not fit the header", family.dim())));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::Parameter(format!("clip radius must be finite and non-negative, got {gamma}")));
        }
        Ok(Self {
            family,
            lattice,
            gamma,
            count,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.family.dim() as u8);
        out.push(match self.family.kind() {
            NoiseKind::GaussianBall => 0,
            NoiseKind::LaplaceInterval => 1,
        });
        out.extend_from_slice(&self.family.scale().to_be_bytes());
        out.extend_from_slice(&self.lattice.scale().to_be_bytes());
        out.extend_from_slice(&self.gamma.to_be_bytes());
        out.extend_from_slice(&self.count.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Bitstream("truncated header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Bitstream("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Bitstream(format!("unsupported version {}", bytes[4])));
        }
        let n = bytes[5] as usize;
        let kind = match bytes[6] {
            0 => NoiseKind::GaussianBall,
            1 => NoiseKind::LaplaceInterval,
            t => return Err(Error::Bitstream(format!("unknown family tag {t}"))),
        };
        let f = |at: usize| f64::from_be_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"));
        let family = NoiseFamily::new(kind, n, f(7)).map_err(|e| Error::Bitstream(e.to_string()))?;
        let lattice = LatticeSpec::scaled_integer(n, f(15)).map_err(|e| Error::Bitstream(e.to_string()))?;
        let count = u32::from_be_bytes(bytes[31..35].try_into().expect("4-byte slice"));
        Self::new(family, lattice, f(23), count).map_err(|e| Error::Bitstream(e.to_string()))
    }
}

/// The admissible message box for one latent value.
#[derive(Debug, Clone, Copy)]
pub struct MessageDomain<'a> {
    pub u: f64,
    pub gamma: f64,
    pub spec: &'a LatticeSpec,
    pub family: &'a NoiseFamily,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    /// Number of lattice points in the box.
    pub size: u64,
    /// Index width `⌈log₂ size⌉`.
    pub width: u32,
}

const BOX_LIMIT: u128 = 1 << 63;

impl MessageDomain<'_> {
    /// Per-axis integer bounds of a box containing every feasible message.
    pub fn bounds(&self) -> Result<MessageBox> {
        if !(self.u > 0.0 && self.u.is_finite()) {
            return Err(Error::Parameter(format!("latent must be positive, got {}", self.u)));
        }
        let r = self.family.superlevel_radius(self.u);
        let step = self.family.beta_scale(self.u, self.spec) * self.spec.scale();
        let lo_f = ((-self.gamma - r) / step - 0.5).floor();
        let hi_f = ((self.gamma + r) / step + 0.5).ceil();
        let side = hi_f - lo_f + 1.0;
        if !side.is_finite() || side > BOX_LIMIT as f64 {
            return Err(Error::DomainTooLarge(if side.is_finite() { side as u128 } else { u128::MAX }));
        }
        let (lo, hi) = (lo_f as i64, hi_f as i64);
        let side = (hi - lo + 1) as u128;
        let mut size: u128 = 1;
        for _ in 0..self.spec.dim() {
            size = size.saturating_mul(side);
            if size > BOX_LIMIT {
                return Err(Error::DomainTooLarge(size));
            }
        }
        let size = size as u64;
        Ok(MessageBox {
            lo: vec![lo; self.spec.dim()],
            hi: vec![hi; self.spec.dim()],
            size,
            width: index_width(size),
        })
    }
}

fn index_width(size: u64) -> u32 {
    if size <= 1 {
        0
    } else {
        64 - (size - 1).leading_zeros()
    }
}

impl MessageBox {
    /// Row-major rank, first coordinate most significant.
    pub fn rank(&self, m: &LatticePoint) -> Result<u64> {
        let outside = || Error::MessageOutOfDomain {
            coords: m.coords.clone(),
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        };
        if m.dim() != self.lo.len() {
            return Err(outside());
        }
        let mut idx = 0u64;
        for i in 0..m.dim() {
            let c = m.coords[i];
            if c < self.lo[i] || c > self.hi[i] {
                return Err(outside());
            }
            let side = (self.hi[i] - self.lo[i] + 1) as u64;
            idx = idx * side + (c - self.lo[i]) as u64;
        }
        Ok(idx)
    }

    pub fn unrank(&self, mut idx: u64) -> Result<LatticePoint> {
        if idx >= self.size {
            return Err(Error::Bitstream(format!("message index {idx} beyond box of {}", self.size)));
        }
        let n = self.lo.len();
        let mut coords = vec![0i64; n];
        for i in (0..n).rev() {
            let side = (self.hi[i] - self.lo[i] + 1) as u64;
            coords[i] = self.lo[i] + (idx % side) as i64;
            idx /= side;
        }
        Ok(LatticePoint::new(coords))
    }
}

pub fn encode_record(enc: &EncodedSubvector, dom: &MessageDomain<'_>, w: &mut BitWriter) -> Result<()> {
    let b = dom.bounds()?;
    let idx = b.rank(&enc.message)?;
    golomb_encode(enc.h, dom.family.acceptance_prob(dom.u, dom.spec), w)?;
    w.write_bits(idx, b.width);
    Ok(())
}

pub fn decode_record(dom: &MessageDomain<'_>, r: &mut BitReader<'_>) -> Result<EncodedSubvector> {
    let b = dom.bounds()?;
    let h = golomb_decode(dom.family.acceptance_prob(dom.u, dom.spec), r)?;
    let idx = r.read_bits(b.width)?;
    Ok(EncodedSubvector {
        h,
        message: b.unrank(idx)?,
    })
}

/// Record length in bits without writing it.
pub fn record_len(enc: &EncodedSubvector, dom: &MessageDomain<'_>) -> Result<u64> {
    let b = dom.bounds()?;
    b.rank(&enc.message)?;
    Ok(golomb::golomb_len(enc.h, dom.family.acceptance_prob(dom.u, dom.spec))? + b.width as u64)
}

/// Writes a header followed by records; each record needs its latent.
#[derive(Debug)]
pub struct StreamEncoder {
    header: Header,
    writer: BitWriter,
    written: u32,
}

impl StreamEncoder {
    pub fn new(header: Header) -> Self {
        Self {
            header,
            writer: BitWriter::new(),
            written: 0,
        }
    }

    pub fn push(&mut self, enc: &EncodedSubvector, u: f64) -> Result<()> {
        if self.written >= self.header.count {
            return Err(Error::InvalidInput("more records than the header announces".into()));
        }
        let dom = MessageDomain {
            u,
            gamma: self.header.gamma,
            spec: &self.header.lattice,
            family: &self.header.family,
        };
        encode_record(enc, &dom, &mut self.writer)?;
        self.written += 1;
        Ok(())
    }

    /// Payload bits written so far.
    pub fn payload_bits(&self) -> u64 {
        self.writer.len()
    }

    pub fn finish(self) -> Result<Vec<u8>> {
        if self.written != self.header.count {
            return Err(Error::InvalidInput(format!(
                "header announces {} records, {} written",
                self.header.count, self.written
            )));
        }
        let mut out = self.header.to_bytes();
        out.extend(self.writer.into_bytes());
        Ok(out)
    }
}

#[derive(Debug)]
pub struct StreamDecoder<'a> {
    header: Header,
    reader: BitReader<'a>,
    read: u32,
}

impl<'a> StreamDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let header = Header::from_bytes(bytes)?;
        Ok(Self {
            header,
            reader: BitReader::new(&bytes[HEADER_LEN..]),
            read: 0,
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn next_record(&mut self, u: f64) -> Result<EncodedSubvector> {
        if self.read >= self.header.count {
            return Err(Error::Bitstream("read past the announced record count".into()));
        }
        let dom = MessageDomain {
            u,
            gamma: self.header.gamma,
            spec: &self.header.lattice,
            family: &self.header.family,
        };
        let rec = decode_record(&dom, &mut self.reader)?;
        self.read += 1;
        Ok(rec)
    }

    pub fn finish(self) -> Result<()> {
        if self.read != self.header.count {
            return Err(Error::Bitstream(format!(
                "{} of {} records read",
                self.read, self.header.count
            )));
        }
        self.reader.finish()
    }
}

/// Splits `x` into `⌈len/n⌉` subvectors of length `n`, zero-padding the last.
pub fn partition(x: &[f64], n: usize) -> Vec<Vec<f64>> {
    x.chunks(n)
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(n, 0.0);
            v
        })
        .collect()
}

/// Shared-randomness coordinates of one client upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UploadContext {
    pub seed: u64,
    pub client: u64,
    pub round: u64,
}

impl UploadContext {
    pub fn tape(&self, subvector: u64) -> RandomTape {
        RandomTape::derive(self.seed, self.client, self.round, subvector)
    }
}

#[derive(Debug, Clone)]
pub struct EncodedUpload {
    pub bytes: Vec<u8>,
    pub encodings: Vec<LrsuqEncoding>,
    /// Payload length of each record.
    pub record_bits: Vec<u64>,
}

/// Quantizes and serializes a whole (already clipped) vector.
pub fn encode_upload(
    x: &[f64],
    family: &NoiseFamily,
    spec: &LatticeSpec,
    gamma: f64,
    ctx: UploadContext,
) -> Result<EncodedUpload> {
    let parts = partition(x, spec.dim());
    let count = u32::try_from(parts.len()).map_err(|_| Error::Unsupported("too many subvectors".into()))?;
    let mut enc = StreamEncoder::new(Header::new(*family, *spec, gamma, count)?);
    let mut encodings = Vec::with_capacity(parts.len());
    let mut record_bits = Vec::with_capacity(parts.len());
    for (j, part) in parts.iter().enumerate() {
        let mut tape = ctx.tape(j as u64);
        let e = lrsuq_encode(part, family, spec, &mut tape)?;
        let before = enc.payload_bits();
        enc.push(&e.encoded, e.latent)?;
        record_bits.push(enc.payload_bits() - before);
        encodings.push(e);
    }
    Ok(EncodedUpload {
        bytes: enc.finish()?,
        encodings,
        record_bits,
    })
}

/// Server side: parses the stream and rebuilds the padded reconstruction.
pub fn decode_upload(bytes: &[u8], ctx: UploadContext) -> Result<Vec<f64>> {
    let mut dec = StreamDecoder::new(bytes)?;
    let h = *dec.header();
    let mut out = Vec::with_capacity(h.count as usize * h.lattice.dim());
    for j in 0..h.count as u64 {
        let mut tape = ctx.tape(j);
        let u = h.family.sample_latent(&mut tape);
        let rec = dec.next_record(u)?;
        out.extend(lrsuq_reconstruct(&rec, u, &h.family, &h.lattice, &mut tape)?);
    }
    dec.finish()?;
    Ok(out)
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Monte-Carlo communication budget for one upload of `subvectors` records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BitBudget {
    pub samples: u64,
    /// `H(Geom(p))` per subvector.
    pub index_entropy_bits: f64,
    /// `E⌈log₂ |box(U)|⌉` per subvector.
    pub message_bits: f64,
    /// Entropy estimate per round: `N·(index_entropy_bits + message_bits)`.
    pub entropy_bits_per_round: f64,
    /// Mean actual record length per subvector.
    pub empirical_bits_per_record: f64,
    /// `N ·` the empirical record mean.
    pub empirical_bits_per_round: f64,
}

/// Estimates the per-round bit cost by encoding `samples` random inputs from
/// the `γ`-ball. The entropy terms and the empirical lengths use the same `U`.
pub fn expected_bits_per_round(
    family: &NoiseFamily,
    spec: &LatticeSpec,
    gamma: f64,
    subvectors: u64,
    samples: u64,
    seed: u64,
) -> Result<BitBudget> {
    use crate::randomness::Stream;
    if samples < 1000 {
        return Err(Error::Parameter("at least 1000 samples are required".into()));
    }
    let p = family.acceptance_prob(1.0, spec);
    let index_entropy = if p == 1.0 { 0.0 } else { binary_entropy(p) / p };
    let n = spec.dim();
    let (mut msg_bits, mut rec_bits) = (0.0f64, 0.0f64);
    for s in 0..samples {
        let mut data = RandomTape::derive_stream(Stream::Data, seed, 0, s, 0);
        let x = sample_ball(n, gamma, &mut data);
        let mut tape = RandomTape::derive(seed, 0, s, 0);
        let e = lrsuq_encode(&x, family, spec, &mut tape)?;
        let dom = MessageDomain {
            u: e.latent,
            gamma,
            spec,
            family,
        };
        msg_bits += dom.bounds()?.width as f64;
        rec_bits += record_len(&e.encoded, &dom)? as f64;
    }
    let ns = samples as f64;
    let per_sub = index_entropy + msg_bits / ns;
    Ok(BitBudget {
        samples,
        index_entropy_bits: index_entropy,
        message_bits: msg_bits / ns,
        entropy_bits_per_round: subvectors as f64 * per_sub,
        empirical_bits_per_record: rec_bits / ns,
        empirical_bits_per_round: subvectors as f64 * rec_bits / ns,
    })
}

/// Uniform point in the radius-`gamma` ball by rejection from the cube.
fn sample_ball(n: usize, gamma: f64, tape: &mut RandomTape) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..n).map(|_| 2.0 * tape.next_uniform() - 1.0).collect();
        if z.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return z.into_iter().map(|v| v * gamma).collect();
        }
    }
}
