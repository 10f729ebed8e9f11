//! Per-round differential-privacy accounting for the Gaussian and Laplace
//! mechanisms, with subsampling amplification.
//!
//! Budgets are per communication round; composition across rounds is not
//! tracked.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::NoiseKind;
use crate::stats::ln_normal_cdf;

/// `1 − (1 − 1/D)^τ′`.
pub fn subsampling_prob(dataset_size: u64, tau_prime: u64) -> Result<f64> {
    if dataset_size == 0 || tau_prime == 0 {
        return Err(Error::Parameter("dataset size and local steps must be positive".into()));
    }
    let q = 1.0 / dataset_size as f64;
    Ok(-(tau_prime as f64 * (-q).ln_1p()).exp_m1())
}

// Above this the closed forms switch to their overflow-free asymptotic versions.
const LARGE: f64 = 30.0;

/// `ln(1 + p(e^ε̃ − 1))`.
pub fn amplified_epsilon(eps_tilde: f64, p: f64) -> f64 {
    if eps_tilde > LARGE {
        eps_tilde + p.ln() + ((1.0 - p) / p * (-eps_tilde).exp()).ln_1p()
    } else {
        (p * eps_tilde.exp_m1()).ln_1p()
    }
}

/// Inverse of [`amplified_epsilon`] in `ε̃`.
pub fn deamplified_epsilon(eps: f64, p: f64) -> f64 {
    if eps > LARGE {
        eps - p.ln() + (-(1.0 - p) * (-eps).exp()).ln_1p()
    } else {
        (eps.exp_m1() / p).ln_1p()
    }
}

fn ln_expm1(x: f64) -> f64 {
    if x > LARGE {
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Inputs of the Gaussian `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianParams {
    pub eps_tilde: f64,
    pub tau_prime: u64,
    pub gamma: f64,
    pub clients: u64,
    pub sigma: f64,
    pub dataset_size: u64,
}

/// The binomially weighted sum of shifted normal-CDF differences, evaluated
/// term by term in log space. Negative terms clamp to 0 and the sum to `[0, 1]`.
pub fn gaussian_delta(gp: &GaussianParams) -> Result<f64> {
    let GaussianParams {
        eps_tilde,
        tau_prime,
        gamma,
        clients,
        sigma,
        dataset_size,
    } = *gp;
    if !(eps_tilde >= 0.0 && gamma >= 0.0 && sigma > 0.0) || tau_prime == 0 || clients == 0 || dataset_size == 0 {
        return Err(Error::Parameter(format!("invalid Gaussian accounting inputs {gp:?}")));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let q = 1.0 / dataset_size as f64;
    let tp = tau_prime as f64;
    let sk = (clients as f64).sqrt();
    let a = tp * gamma / (sk * sigma);
    let mut total = 0.0;
    for j in 1..=tau_prime {
        let jf = j as f64;
        let e_j = eps_tilde / jf;
        let b = sk * eps_tilde * sigma / (2.0 * jf * tp * gamma);
        let ln_weight = ln_binomial(tau_prime, j)
            + jf * q.ln()
            + if j == tau_prime { 0.0 } else { (tp - jf) * (-q).ln_1p() }
            + if eps_tilde == 0.0 { jf.ln() } else { ln_expm1(eps_tilde) - ln_expm1(e_j) };
        let ln_pos = ln_normal_cdf(a - b);
        let ln_neg = e_j + ln_normal_cdf(-a - b);
        if ln_neg >= ln_pos {
            continue;
        }
        let ln_diff = ln_pos + (-(ln_neg - ln_pos).exp()).ln_1p();
        total += (ln_weight + ln_diff).exp();
    }
    Ok(total.clamp(0.0, 1.0))
}

/// `2τ′γ/b`: the smallest `ε̃` the Laplace guarantee covers.
pub fn laplace_min_budget(tau_prime: u64, gamma: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Parameter(format!("Laplace scale must be positive, got {b}")));
    }
    Ok(2.0 * tau_prime as f64 * gamma / b)
}

/// Per-round guarantee of one mechanism configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma_or_b: f64,
    pub epsilon_tilde: f64,
    pub p: f64,
}

pub fn gaussian_report(gp: &GaussianParams) -> Result<PrivacyReport> {
    let p = subsampling_prob(gp.dataset_size, gp.tau_prime)?;
    Ok(PrivacyReport {
        epsilon: amplified_epsilon(gp.eps_tilde, p),
        delta: gaussian_delta(gp)?,
        sigma_or_b: gp.sigma,
        epsilon_tilde: gp.eps_tilde,
        p,
    })
}

/// Laplace guarantee; fails if `ε̃` is below [`laplace_min_budget`].
pub fn laplace_report(eps_tilde: f64, tau_prime: u64, gamma: f64, b: f64, dataset_size: u64) -> Result<PrivacyReport> {
    let min = laplace_min_budget(tau_prime, gamma, b)?;
    if eps_tilde < min {
        return Err(Error::Parameter(format!(
            "pre-amplification budget {eps_tilde} is below the Laplace minimum {min}"
        )));
    }
    let p = subsampling_prob(dataset_size, tau_prime)?;
    Ok(PrivacyReport {
        epsilon: amplified_epsilon(eps_tilde, p),
        delta: 0.0,
        sigma_or_b: b,
        epsilon_tilde: eps_tilde,
        p,
    })
}

/// Target of a noise calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub epsilon: f64,
    /// Ignored for the Laplace mechanism.
    pub delta: f64,
    pub tau_prime: u64,
    pub gamma: f64,
    pub clients: u64,
    pub dataset_size: u64,
    pub kind: NoiseKind,
}

const SIGMA_MIN: f64 = 1e-12;
const SIGMA_MAX: f64 = 1e12;

/// Noise scale meeting the target: the smallest `σ` with `δ(σ) ≤ δ*`, or
/// `b = 2τ′γ/ε̃`. Fails when no `σ` reaches `δ*` or when every `σ` does
/// (the `δ` constraint does not bind, so no finite calibration exists).
pub fn calibrate(t: &CalibrationTarget) -> Result<PrivacyReport> {
    if !(t.epsilon > 0.0 && t.epsilon.is_finite()) {
        return Err(Error::Parameter(format!("target epsilon must be positive, got {}", t.epsilon)));
    }
    let p = subsampling_prob(t.dataset_size, t.tau_prime)?;
    let eps_tilde = deamplified_epsilon(t.epsilon, p);
    match t.kind {
        NoiseKind::LaplaceInterval => {
            let b = 2.0 * t.tau_prime as f64 * t.gamma / eps_tilde;
            if !(b > 0.0) {
                return Err(Error::Calibration("clip radius must be positive".into()));
            }
            laplace_report(eps_tilde, t.tau_prime, t.gamma, b, t.dataset_size)
        }
        NoiseKind::GaussianBall => {
            if !(t.delta > 0.0 && t.delta < 1.0) {
                return Err(Error::Parameter(format!("target delta must be in (0, 1), got {}", t.delta)));
            }
            let delta_at = |sigma: f64| {
                gaussian_delta(&GaussianParams {
                    eps_tilde,
                    tau_prime: t.tau_prime,
                    gamma: t.gamma,
                    clients: t.clients,
                    sigma,
                    dataset_size: t.dataset_size,
                })
            };
            if delta_at(SIGMA_MIN)? <= t.delta {
                return Err(Error::Calibration(format!(
                    "delta {} is met at every noise level (delta stays at or below {:.6e} as sigma -> 0)",
                    t.delta,
                    delta_at(SIGMA_MIN)?
                )));
            }
            if delta_at(SIGMA_MAX)? > t.delta {
                return Err(Error::Calibration(format!("delta {} is unreachable", t.delta)));
            }
            let (mut lo, mut hi) = (SIGMA_MIN.ln(), SIGMA_MAX.ln());
            while hi - lo > 1e-7 {
                let mid = 0.5 * (lo + hi);
                if delta_at(mid.exp())? <= t.delta {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let sigma = hi.exp();
            Ok(PrivacyReport {
                epsilon: amplified_epsilon(eps_tilde, p),
                delta: delta_at(sigma)?,
                sigma_or_b: sigma,
                epsilon_tilde: eps_tilde,
                p,
            })
        }
    }
}
