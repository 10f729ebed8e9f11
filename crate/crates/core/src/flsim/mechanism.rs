//! Client upload paths: the randomized quantizer and the baselines.

use serde::{Deserialize, Serialize};

use crate::codec::bits::{BitReader, BitWriter};
use crate::codec::golomb::{signed_exp_golomb_decode, signed_exp_golomb_encode};
use crate::codec::{decode_upload, encode_upload, partition, UploadContext};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::noise::{NoiseFamily, NoiseKind};
use crate::quantizers::{sdq_decode, sdq_encode};
use crate::randomness::{RandomTape, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismConfig {
    CepamGaussian { n: usize, sigma: f64, alpha: f64 },
    CepamLaplace { b: f64, alpha: f64 },
    /// Unquantized `f64` uploads.
    PlainFl,
    SdqOnly { n: usize, alpha: f64 },
    /// Additive noise from `family`, then a subtractive dithered quantizer.
    NoiseThenSdq {
        family: NoiseKind,
        n: usize,
        scale: f64,
        alpha: f64,
    },
}

/// Validated mechanism with its lattice and noise family.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism {
    config: MechanismConfig,
    spec: Option<LatticeSpec>,
    family: Option<NoiseFamily>,
}

/// What the server ends up with for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    /// `X̂_k`, padding stripped.
    pub reconstruction: Vec<f64>,
    /// Encoded payload length.
    pub bits: u64,
    /// `‖X̂ − X̃‖²` over all `N·n` coordinates, padding included.
    pub padded_error_sq: f64,
}

/// One accounted record of an upload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RecordAudit {
    /// Subvector index for quantizer records; `None` for whole-vector uploads.
    pub subvector: Option<u64>,
    /// Rejection index `H`.
    pub h: Option<u64>,
    pub bits: u64,
}

impl Mechanism {
    pub fn new(config: MechanismConfig) -> Result<Self> {
        let (spec, family) = match config {
            MechanismConfig::CepamGaussian { n, sigma, alpha } => (
                Some(LatticeSpec::scaled_integer(n, alpha)?),
                Some(NoiseFamily::gaussian(n, sigma)?),
            ),
            MechanismConfig::CepamLaplace { b, alpha } => {
                (Some(LatticeSpec::scaled_integer(1, alpha)?), Some(NoiseFamily::laplace(b)?))
            }
            MechanismConfig::PlainFl => (None, None),
            MechanismConfig::SdqOnly { n, alpha } => (Some(LatticeSpec::scaled_integer(n, alpha)?), None),
            MechanismConfig::NoiseThenSdq {
                family,
                n,
                scale,
                alpha,
            } => {
                if family == NoiseKind::LaplaceInterval && n != 1 {
                    return Err(Error::Config("laplace noise is one-dimensional; set n = 1".into()));
                }
                (
                    Some(LatticeSpec::scaled_integer(n, alpha)?),
                    Some(NoiseFamily::new(family, n, scale)?),
                )
            }
        };
        Ok(Self { config, spec, family })
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    /// Subvector length `n` (1 for plain uploads).
    pub fn block_dim(&self) -> usize {
        self.spec.map_or(1, |s| s.dim())
    }

    /// `N = ⌈m/n⌉`.
    pub fn subvectors(&self, m: usize) -> u64 {
        m.div_ceil(self.block_dim()) as u64
    }

    /// `Var(f)` of the simulated privacy noise per subvector; zero without one.
    pub fn noise_variance(&self) -> f64 {
        match self.config {
            MechanismConfig::CepamGaussian { .. } | MechanismConfig::CepamLaplace { .. } => {
                self.family.map_or(0.0, |f| f.variance())
            }
            _ => 0.0,
        }
    }

    /// Expected `‖X̂ − X̃‖²` per subvector, quantization included.
    pub fn error_variance_per_subvector(&self) -> f64 {
        let n = self.block_dim() as f64;
        let uniform = |s: &LatticeSpec| n * s.scale() * s.scale() / 12.0;
        match self.config {
            MechanismConfig::CepamGaussian { .. } | MechanismConfig::CepamLaplace { .. } => self.noise_variance(),
            MechanismConfig::PlainFl => 0.0,
            MechanismConfig::SdqOnly { .. } => self.spec.as_ref().map_or(0.0, uniform),
            MechanismConfig::NoiseThenSdq { .. } => {
                self.family.map_or(0.0, |f| f.variance()) + self.spec.as_ref().map_or(0.0, uniform)
            }
        }
    }

    /// Encodes `clipped` on the client, decodes on the server, and checks the
    /// two sides agree.
    pub fn upload(&self, clipped: &[f64], gamma: f64, ctx: UploadContext) -> Result<Upload> {
        match self.config {
            MechanismConfig::PlainFl => Ok(Upload {
                reconstruction: clipped.to_vec(),
                bits: 64 * clipped.len() as u64,
                padded_error_sq: 0.0,
            }),
            MechanismConfig::CepamGaussian { .. } | MechanismConfig::CepamLaplace { .. } => {
                let (spec, fam) = (self.spec.unwrap(), self.family.unwrap());
                let up = encode_upload(clipped, &fam, &spec, gamma, ctx)?;
                let decoded = decode_upload(&up.bytes, ctx)?;
                let expected: Vec<f64> = up.encodings.iter().flat_map(|e| e.reconstruction.iter().copied()).collect();
                if decoded.len() != expected.len() || decoded.iter().zip(&expected).any(|(a, b)| a.to_bits() != b.to_bits()) {
                    return Err(Error::Lockstep(format!(
                        "client {} round {}: server reconstruction differs from encoder",
                        ctx.client, ctx.round
                    )));
                }
                Ok(finish(clipped, decoded, up.record_bits.iter().sum()))
            }
            MechanismConfig::SdqOnly { .. } => self.dithered(clipped, clipped, ctx),
            MechanismConfig::NoiseThenSdq { .. } => {
                let fam = self.family.unwrap();
                let n = fam.dim();
                let mut noisy = clipped.to_vec();
                noisy.resize(self.subvectors(clipped.len()) as usize * n, 0.0);
                for (j, chunk) in noisy.chunks_mut(n).enumerate() {
                    let mut t = RandomTape::derive_stream(Stream::Noise, ctx.seed, ctx.client, ctx.round, j as u64);
                    for (c, z) in chunk.iter_mut().zip(fam.sample(&mut t)) {
                        *c += z;
                    }
                }
                self.dithered(&noisy, clipped, ctx)
            }
        }
    }

    /// Re-encodes an upload record by record. The lengths sum to
    /// [`Upload::bits`] for the same input and context.
    pub fn audit(&self, clipped: &[f64], gamma: f64, ctx: UploadContext) -> Result<Vec<RecordAudit>> {
        match self.config {
            MechanismConfig::CepamGaussian { .. } | MechanismConfig::CepamLaplace { .. } => {
                let up = encode_upload(clipped, &self.family.unwrap(), &self.spec.unwrap(), gamma, ctx)?;
                Ok(up
                    .encodings
                    .iter()
                    .zip(&up.record_bits)
                    .enumerate()
                    .map(|(j, (e, &bits))| RecordAudit {
                        subvector: Some(j as u64),
                        h: Some(e.encoded.h),
                        bits,
                    })
                    .collect())
            }
            _ => Ok(vec![RecordAudit {
                subvector: None,
                h: None,
                bits: self.upload(clipped, gamma, ctx)?.bits,
            }]),
        }
    }

    /// Subtractive dithered quantization of `input` with signed Exp-Golomb
    /// coordinates; the error is measured against `clipped`.
    fn dithered(&self, input: &[f64], clipped: &[f64], ctx: UploadContext) -> Result<Upload> {
        let spec = self.spec.unwrap();
        let parts = partition(input, spec.dim());
        let mut w = BitWriter::new();
        for (j, part) in parts.iter().enumerate() {
            let v = spec.sample_cell_uniform(&mut ctx.tape(j as u64));
            for &c in &sdq_encode(part, &v, &spec)?.coords {
                signed_exp_golomb_encode(c, &mut w)?;
            }
        }
        let bits = w.len();
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        let mut decoded = Vec::with_capacity(parts.len() * spec.dim());
        for j in 0..parts.len() {
            let v = spec.sample_cell_uniform(&mut ctx.tape(j as u64));
            let coords = (0..spec.dim())
                .map(|_| signed_exp_golomb_decode(&mut r))
                .collect::<Result<Vec<_>>>()?;
            decoded.extend(sdq_decode(&crate::lattice::LatticePoint::new(coords), &v, &spec));
        }
        r.finish()?;
        Ok(finish(clipped, decoded, bits))
    }
}

fn finish(clipped: &[f64], mut padded: Vec<f64>, bits: u64) -> Upload {
    let padded_error_sq = padded
        .iter()
        .enumerate()
        .map(|(i, y)| (y - clipped.get(i).copied().unwrap_or(0.0)).powi(2))
        .sum();
    padded.truncate(clipped.len());
    Upload {
        reconstruction: padded,
        bits,
        padded_error_sq,
    }
}
