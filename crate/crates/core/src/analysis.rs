//! Closed-form distortion and convergence bounds.

use serde::Serialize;

use crate::error::{Error, Result};

/// Problem constants entering the convergence bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConstants {
    /// Smoothness.
    pub l: f64,
    /// Strong convexity.
    pub c: f64,
    /// Per-client stochastic-gradient second-moment bounds `θ_k`.
    pub theta: Vec<f64>,
    pub psi: f64,
    /// Gradient-norm bound `M ≥ max θ_k`.
    pub m: f64,
    /// Subvector count `N`.
    pub subvectors: u64,
    /// Noise variance `Var(f)`.
    pub variance: f64,
    pub tau: u64,
    pub weights: Vec<f64>,
}

impl ConvergenceConstants {
    fn validate(&self) -> Result<()> {
        if self.tau < 2 {
            return Err(Error::Unsupported(format!("the bound needs tau >= 2, got {}", self.tau)));
        }
        if !(self.l > 0.0 && self.c > 0.0 && self.c <= self.l * (1.0 + 1e-12)) {
            return Err(Error::Parameter(format!("need 0 < C <= L, got C = {}, L = {}", self.c, self.l)));
        }
        if self.theta.len() != self.weights.len() {
            return Err(Error::Parameter("theta and weights differ in length".into()));
        }
        if self.psi < 0.0 || self.variance < 0.0 || self.m < 0.0 {
            return Err(Error::Parameter("psi, variance and M must be non-negative".into()));
        }
        Ok(())
    }
}

/// `τ · max(4L/C, 1)`.
pub fn alpha(l: f64, c: f64, tau: u64) -> f64 {
    tau as f64 * (4.0 * l / c).max(1.0)
}

/// `η_t = τ / (C (t + α))`.
pub fn diminishing_lr(t: u64, l: f64, c: f64, tau: u64) -> f64 {
    tau as f64 / (c * (t as f64 + alpha(l, c, tau)))
}

/// `6Lψ + N(Var + M²)Σp² + Σp²θ² + 8(τ−1)²Σpθ²`.
pub fn constant_b(k: &ConvergenceConstants) -> Result<f64> {
    k.validate()?;
    let sum_p2: f64 = k.weights.iter().map(|p| p * p).sum();
    let sum_p2_theta2: f64 = k.weights.iter().zip(&k.theta).map(|(p, t)| p * p * t * t).sum();
    let sum_p_theta2: f64 = k.weights.iter().zip(&k.theta).map(|(p, t)| p * t * t).sum();
    let tm1 = (k.tau - 1) as f64;
    Ok(6.0 * k.l * k.psi
        + k.subvectors as f64 * (k.variance + k.m * k.m) * sum_p2
        + sum_p2_theta2
        + 8.0 * tm1 * tm1 * sum_p_theta2)
}

/// `L/(2(T+α)) · max{4Bτ²(τ+α)/(C²α(τ−1)), α‖W₀ − w*‖}`. The distance enters
/// unsquared, as in the statement of the bound.
pub fn convergence_bound(t: u64, k: &ConvergenceConstants, init_dist: f64) -> Result<f64> {
    let b = constant_b(k)?;
    let tau = k.tau as f64;
    let a = alpha(k.l, k.c, k.tau);
    let first = 4.0 * b * tau * tau * (tau + a) / (k.c * k.c * a * (tau - 1.0));
    let second = a * init_dist;
    Ok(k.l / (2.0 * (t as f64 + a)) * first.max(second))
}

/// `η² N (Var + M²) Σp²`, the bound on `E‖Ŵ − W‖²` after one round.
pub fn weight_error_bound(eta: f64, subvectors: u64, variance: f64, m: f64, weights: &[f64]) -> f64 {
    let sum_p2: f64 = weights.iter().map(|p| p * p).sum();
    eta * eta * subvectors as f64 * (variance + m * m) * sum_p2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiVariant {
    /// `F(w*) − Σ_k min F_k`.
    #[default]
    Unweighted,
    /// `F(w*) − Σ_k p_k min F_k`.
    Weighted,
}

/// Heterogeneity from the global optimum value and the per-client minima.
pub fn heterogeneity_psi(global_opt: f64, client_minima: &[f64], weights: &[f64], variant: PsiVariant) -> f64 {
    let sub: f64 = match variant {
        PsiVariant::Unweighted => client_minima.iter().sum(),
        PsiVariant::Weighted => client_minima.iter().zip(weights).map(|(f, p)| p * f).sum(),
    };
    global_opt - sub
}
