//! Target noise families in layered form.
//!
//! Each family is a mixture of uniforms over superlevel sets: draw a latent
//! level `u ~ g`, then a point uniform on `L_u⁺`. For the Gaussian ball the
//! latent law is `χ²` with `n + 2` degrees of freedom and the set is the ball
//! of radius `σ√u`; for the Laplace interval it is `Gamma(2, 1)` and the set
//! is `(−bu, bu)`.
//!
//! Latent draws use exact transforms of a fixed number of open uniforms, so a
//! decoder replaying the same tape lands on the same positions:
//!
//! | family            | latent law      | tape draws                         |
//! |-------------------|-----------------|------------------------------------|
//! | Gaussian, `n`     | `χ²_{n+2}`      | `⌊(n+2)/2⌋ + 2·[(n+2) odd]`        |
//! | Laplace (`n = 1`) | `Gamma(2, 1)`   | 2                                  |
//!
//! `χ²_{2k} = −2 Σ ln Uᵢ` over `k` uniforms; an odd degree adds one squared
//! Box–Muller normal `−2 ln U · cos²(2πU′)`. `Gamma(2,1) = −ln U₁ − ln U₂`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::randomness::RandomTape;
use crate::stats::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    GaussianBall,
    LaplaceInterval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFamily {
    kind: NoiseKind,
    /// `σ` for the Gaussian ball, `b` for the Laplace interval.
    scale: f64,
    dim: usize,
}

impl NoiseFamily {
    pub fn gaussian(dim: usize, sigma: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("noise dimension must be at least 1".into()));
        }
        check_scale(sigma)?;
        Ok(Self {
            kind: NoiseKind::GaussianBall,
            scale: sigma,
            dim,
        })
    }

    pub fn laplace(b: f64) -> Result<Self> {
        check_scale(b)?;
        Ok(Self {
            kind: NoiseKind::LaplaceInterval,
            scale: b,
            dim: 1,
        })
    }

    pub fn new(kind: NoiseKind, dim: usize, scale: f64) -> Result<Self> {
        match kind {
            NoiseKind::GaussianBall => Self::gaussian(dim, scale),
            NoiseKind::LaplaceInterval if dim == 1 => Self::laplace(scale),
            NoiseKind::LaplaceInterval => Err(Error::Parameter(format!(
                "the Laplace interval channel is one-dimensional, got n = {dim}"
            ))),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total variance `E‖Z‖²`: `nσ²` or `2b²`.
    pub fn variance(&self) -> f64 {
        match self.kind {
            NoiseKind::GaussianBall => self.dim as f64 * self.scale * self.scale,
            NoiseKind::LaplaceInterval => 2.0 * self.scale * self.scale,
        }
    }

    /// Fixed number of tape draws consumed by [`Self::sample_latent`].
    pub fn latent_draws(&self) -> u64 {
        match self.kind {
            NoiseKind::GaussianBall => {
                let df = self.dim as u64 + 2;
                df / 2 + if df % 2 == 1 { 2 } else { 0 }
            }
            NoiseKind::LaplaceInterval => 2,
        }
    }

    pub fn sample_latent(&self, tape: &mut RandomTape) -> f64 {
        match self.kind {
            NoiseKind::GaussianBall => {
                let df = self.dim + 2;
                let mut u = 0.0;
                for _ in 0..df / 2 {
                    u -= 2.0 * tape.next_open_uniform().ln();
                }
                if df % 2 == 1 {
                    let r2 = -2.0 * tape.next_open_uniform().ln();
                    let c = (std::f64::consts::TAU * tape.next_uniform()).cos();
                    u += r2 * c * c;
                }
                u
            }
            NoiseKind::LaplaceInterval => {
                -tape.next_open_uniform().ln() - tape.next_open_uniform().ln()
            }
        }
    }

    /// Radius of `L_u⁺`: `σ√u` for the ball, `bu` for the interval.
    pub fn superlevel_radius(&self, u: f64) -> f64 {
        match self.kind {
            NoiseKind::GaussianBall => self.scale * u.sqrt(),
            NoiseKind::LaplaceInterval => self.scale * u,
        }
    }

    /// Membership in `L_u⁺`. The ball is closed, the interval open.
    pub fn superlevel_contains(&self, u: f64, z: &[f64]) -> bool {
        let r = self.superlevel_radius(u);
        match self.kind {
            NoiseKind::GaussianBall => z.iter().map(|v| v * v).sum::<f64>() <= r * r,
            NoiseKind::LaplaceInterval => z[0].abs() < r,
        }
    }

    /// Smallest `β` with `L_u⁺ ⊆ β·P`, where `P = α(−½, ½]ⁿ`.
    pub fn beta_scale(&self, u: f64, spec: &LatticeSpec) -> f64 {
        2.0 * self.superlevel_radius(u) / spec.scale()
    }

    /// `μ(L_u⁺) / μ(β(u)P)`. Constant in `u` because `β` is tight.
    pub fn acceptance_prob(&self, _u: f64, _spec: &LatticeSpec) -> f64 {
        match self.kind {
            NoiseKind::GaussianBall => unit_ball_volume(self.dim) / 2f64.powi(self.dim as i32),
            NoiseKind::LaplaceInterval => 1.0,
        }
    }

    /// Uniform draw on `L_u⁺` by rejection from its bounding cube.
    /// The number of draws consumed is random.
    pub fn sample_superlevel_uniform(&self, u: f64, tape: &mut RandomTape) -> Vec<f64> {
        let r = self.superlevel_radius(u);
        loop {
            let z: Vec<f64> = (0..self.dim).map(|_| r * (2.0 * tape.next_uniform() - 1.0)).collect();
            if self.superlevel_contains(u, &z) {
                return z;
            }
        }
    }

    /// A direct draw from `f` through the layered representation.
    pub fn sample(&self, tape: &mut RandomTape) -> Vec<f64> {
        let u = self.sample_latent(tape);
        self.sample_superlevel_uniform(u, tape)
    }

    /// Marginal CDF of one coordinate of `f`.
    pub fn marginal_cdf(&self, z: f64) -> f64 {
        match self.kind {
            NoiseKind::GaussianBall => normal_cdf(z / self.scale),
            NoiseKind::LaplaceInterval => {
                let t = z / self.scale;
                if t < 0.0 {
                    0.5 * t.exp()
                } else {
                    1.0 - 0.5 * (-t).exp()
                }
            }
        }
    }

    /// Marginal per-coordinate variance (`σ²` or `2b²`).
    pub fn marginal_variance(&self) -> f64 {
        self.variance() / self.dim as f64
    }
}

fn check_scale(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("noise scale must be positive, got {s}")))
    }
}

/// Volume of the unit Euclidean ball in `n` dimensions.
pub fn unit_ball_volume(n: usize) -> f64 {
    // V₀ = 1, V₁ = 2, Vₙ = Vₙ₋₂ · 2π/n
    let (mut even, mut odd) = (1.0f64, 2.0f64);
    let mut k = if n % 2 == 0 { 0 } else { 1 };
    while k < n {
        k += 2;
        if k % 2 == 0 {
            even *= std::f64::consts::TAU / k as f64;
        } else {
            odd *= std::f64::consts::TAU / k as f64;
        }
    }
    if n % 2 == 0 {
        even
    } else {
        odd
    }
}
