//! Subtractive dithered, rejection-sampled and layered rejection-sampled
//! universal quantizers.
//!
//! Tape layout for one LRSUQ subvector: the latent `u` first
//! ([`NoiseFamily::latent_draws`] draws), then the dithers `V₁, V₂, …` with
//! `n` draws each. The decoder reads the same positions in the same order.

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, LatticeSpec};
use crate::noise::NoiseFamily;
use crate::randomness::RandomTape;

/// Upper bound on dither attempts before giving up.
pub const REJECTION_CAP: u64 = 1_000_000;

/// The `(H, M)` pair sent for one subvector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSubvector {
    /// Index of the accepted dither, starting at 1.
    pub h: u64,
    pub message: LatticePoint,
}

pub fn sdq_encode(x: &[f64], v: &[f64], spec: &LatticeSpec) -> Result<LatticePoint> {
    if !spec.cell_contains(v) {
        return Err(Error::InvalidDither(v.to_vec()));
    }
    let shifted: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - b).collect();
    spec.nearest_point(&shifted)
}

pub fn sdq_decode(m: &LatticePoint, v: &[f64], spec: &LatticeSpec) -> Vec<f64> {
    m.coords
        .iter()
        .zip(v)
        .map(|(&c, vi)| spec.scale() * c as f64 + vi)
        .collect()
}

/// Acceptance set `A ⊆ P` given as a membership test plus `μ(A)/μ(P)`.
pub struct AcceptRegion<'a> {
    pub contains: &'a dyn Fn(&[f64]) -> bool,
    pub measure_fraction: f64,
}

pub fn rsuq_encode(
    x: &[f64],
    region: &AcceptRegion<'_>,
    spec: &LatticeSpec,
    tape: &mut RandomTape,
) -> Result<EncodedSubvector> {
    if !(region.measure_fraction > 0.0 && region.measure_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "acceptance region measure fraction must be in (0, 1], got {}",
            region.measure_fraction
        )));
    }
    for h in 1..=REJECTION_CAP {
        let v = spec.sample_cell_uniform(tape);
        let m = sdq_encode(x, &v, spec)?;
        let y = sdq_decode(&m, &v, spec);
        let err: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        if (region.contains)(&err) {
            return Ok(EncodedSubvector { h, message: m });
        }
    }
    Err(Error::RejectionOverflow { cap: REJECTION_CAP })
}

pub fn rsuq_decode(enc: &EncodedSubvector, spec: &LatticeSpec, tape: &mut RandomTape) -> Result<Vec<f64>> {
    let v = nth_dither(enc.h, spec, tape)?;
    Ok(sdq_decode(&enc.message, &v, spec))
}

/// Skips `h − 1` dithers and returns the `h`-th.
fn nth_dither(h: u64, spec: &LatticeSpec, tape: &mut RandomTape) -> Result<Vec<f64>> {
    if h == 0 || h > REJECTION_CAP {
        return Err(Error::InvalidInput(format!("dither index {h} out of range")));
    }
    for _ in 1..h {
        spec.sample_cell_uniform(tape);
    }
    Ok(spec.sample_cell_uniform(tape))
}

/// Encoder output plus the values it consumed, for lockstep checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LrsuqEncoding {
    pub encoded: EncodedSubvector,
    pub latent: f64,
    pub reconstruction: Vec<f64>,
}

fn layered_point(beta: f64, m: &LatticePoint, v: &[f64], spec: &LatticeSpec) -> Vec<f64> {
    m.coords
        .iter()
        .zip(v)
        .map(|(&c, vi)| beta * (spec.scale() * c as f64 + vi))
        .collect()
}

fn check_dims(x_len: usize, fam: &NoiseFamily, spec: &LatticeSpec) -> Result<()> {
    if fam.dim() != spec.dim() || x_len != spec.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: input {x_len}, noise {}, lattice {}",
            fam.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

pub fn lrsuq_encode(
    x: &[f64],
    fam: &NoiseFamily,
    spec: &LatticeSpec,
    tape: &mut RandomTape,
) -> Result<LrsuqEncoding> {
    lrsuq_encode_capped(x, fam, spec, tape, REJECTION_CAP)
}

pub(crate) fn lrsuq_encode_capped(
    x: &[f64],
    fam: &NoiseFamily,
    spec: &LatticeSpec,
    tape: &mut RandomTape,
    cap: u64,
) -> Result<LrsuqEncoding> {
    check_dims(x.len(), fam, spec)?;
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite input {bad}")));
    }
    let u = fam.sample_latent(tape);
    let beta = fam.beta_scale(u, spec);
    let scaled: Vec<f64> = x.iter().map(|xi| xi / beta).collect();
    let mut err = vec![0.0; x.len()];
    for h in 1..=cap {
        let v = spec.sample_cell_uniform(tape);
        let shifted: Vec<f64> = scaled.iter().zip(&v).map(|(a, b)| a - b).collect();
        let m = spec.nearest_point(&shifted)?;
        let y = layered_point(beta, &m, &v, spec);
        for ((e, yi), xi) in err.iter_mut().zip(&y).zip(x) {
            *e = yi - xi;
        }
        if fam.superlevel_contains(u, &err) {
            return Ok(LrsuqEncoding {
                encoded: EncodedSubvector { h, message: m },
                latent: u,
                reconstruction: y,
            });
        }
    }
    Err(Error::RejectionOverflow { cap })
}

/// Rebuilds `Y` once the latent `u` has been read; `tape` must sit right after
/// the latent draws.
pub fn lrsuq_reconstruct(
    enc: &EncodedSubvector,
    u: f64,
    fam: &NoiseFamily,
    spec: &LatticeSpec,
    tape: &mut RandomTape,
) -> Result<Vec<f64>> {
    if enc.message.dim() != spec.dim() || fam.dim() != spec.dim() {
        return Err(Error::InvalidInput("message dimension mismatch".into()));
    }
    let v = nth_dither(enc.h, spec, tape)?;
    Ok(layered_point(fam.beta_scale(u, spec), &enc.message, &v, spec))
}

pub fn lrsuq_decode(
    enc: &EncodedSubvector,
    fam: &NoiseFamily,
    spec: &LatticeSpec,
    tape: &mut RandomTape,
) -> Result<Vec<f64>> {
    let u = fam.sample_latent(tape);
    lrsuq_reconstruct(enc, u, fam, spec, tape)
}
