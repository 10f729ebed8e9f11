//! Keyed, counter-based random tapes shared between a client and the server.
//!
//! A tape is fully determined by `(seed, client, round, subvector, stream)`.
//! Both ends derive the same tape and read it in the same order, so the
//! decoder regenerates every latent and dither draw the encoder consumed.
//!
//! # Construction
//!
//! All arithmetic is wrapping on `u64`.
//!
//! ```text
//! GOLDEN    = 0x9E3779B97F4A7C15
//! fmix(z)   = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!             z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)
//! absorb(h, v) = fmix(h ^ fmix(v + GOLDEN))
//!
//! key = fmix(seed + GOLDEN)
//! key = absorb(key, client); key = absorb(key, round);
//! key = absorb(key, subvector); key = absorb(key, stream)
//! k0  = key
//! k1  = fmix(key ^ 0x6A09E667F3BCC909)
//!
//! draw(c)  = fmix(fmix(k0 + c * GOLDEN) ^ k1)      c = 0, 1, 2, ...
//! uniform  = (draw >> 11) * 2^-53                  in [0, 1)
//! open     = ((draw >> 11) + 0.5) * 2^-53          in (0, 1)
//! ```
//!
//! For a fixed key `draw` is a bijection of the counter. Every call to
//! [`RandomTape::next_u64`], [`RandomTape::next_uniform`] or
//! [`RandomTape::next_open_uniform`] consumes exactly one counter value.
//!
//! The `stream` tag separates independent uses of the same context:
//! quantizer (0), client-side noise (1), SGD sampling (2) and task data (3).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const KEY_SPLIT: u64 = 0x6A09_E667_F3BC_C909;
const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn fmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, v: u64) -> u64 {
    fmix(h ^ fmix(v.wrapping_add(GOLDEN)))
}

/// Independent uses of one `(seed, client, round, subvector)` context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    /// Latent and dither draws of the randomized quantizer (shared with the server).
    Quantizer = 0,
    /// Client-side additive noise for the noise-then-quantize baseline.
    Noise = 1,
    /// Sample indices for local SGD.
    Sampling = 2,
    /// Synthetic task generation.
    Data = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TapeContext {
    pub seed: u64,
    pub client: u64,
    pub round: u64,
    pub subvector: u64,
    pub stream: Stream,
}

/// Single-owner deterministic draw sequence.
#[derive(Debug, Clone)]
pub struct RandomTape {
    k0: u64,
    k1: u64,
    cursor: u64,
    context: TapeContext,
}

impl RandomTape {
    /// Quantizer tape for client `client`, round `round`, subvector `subvector`.
    pub fn derive(seed: u64, client: u64, round: u64, subvector: u64) -> Self {
        Self::from_context(TapeContext {
            seed,
            client,
            round,
            subvector,
            stream: Stream::Quantizer,
        })
    }

    pub fn derive_stream(stream: Stream, seed: u64, client: u64, round: u64, subvector: u64) -> Self {
        Self::from_context(TapeContext {
            seed,
            client,
            round,
            subvector,
            stream,
        })
    }

    pub fn from_context(context: TapeContext) -> Self {
        let mut key = fmix(context.seed.wrapping_add(GOLDEN));
        key = absorb(key, context.client);
        key = absorb(key, context.round);
        key = absorb(key, context.subvector);
        key = absorb(key, context.stream as u64);
        Self {
            k0: key,
            k1: fmix(key ^ KEY_SPLIT),
            cursor: 0,
            context,
        }
    }

    pub fn context(&self) -> TapeContext {
        self.context
    }

    /// Number of draws consumed so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    /// Raw draw at an absolute position, without moving the cursor.
    pub fn peek_at(&self, position: u64) -> u64 {
        fmix(fmix(self.k0.wrapping_add(position.wrapping_mul(GOLDEN))) ^ self.k1)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = self.peek_at(self.cursor);
        self.cursor += 1;
        out
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_MINUS_53
    }

    /// Uniform on the open interval `(0, 1)`; safe to pass to `ln`.
    #[inline]
    pub fn next_open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
    }

    /// Uniform index in `0..n`.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        let i = (self.next_uniform() * n as f64) as usize;
        i.min(n - 1)
    }

    /// Standard normal draw by Box–Muller; consumes two draws.
    pub fn next_normal(&mut self) -> f64 {
        let r = (-2.0 * self.next_open_uniform().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.next_uniform();
        r * theta.cos()
    }
}

/// Per-client shared seed `s_k` derived from a run-level master seed.
pub fn client_seed(master: u64, client: u64) -> u64 {
    absorb(fmix(master ^ KEY_SPLIT), client)
}
