//! Deterministic multi-client simulator: local SGD, clipping, randomized
//! uploads, and the server update anchored at the broadcast model.
//!
//! Every random choice comes from a tape keyed by the per-client seed
//! `s_k = client_seed(run_seed, k)`: SGD sample indices use the sampling
//! stream at `(s_k, k, round, 0)`, quantizer draws the quantizer stream at
//! `(s_k, k, round, j)` for subvector `j`. Runs are therefore bitwise
//! reproducible regardless of thread count.

pub mod experiment;
pub mod mechanism;
pub mod task;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{diminishing_lr, PsiVariant};
use crate::codec::UploadContext;
use crate::error::{Error, Result};
use crate::randomness::{client_seed, RandomTape, Stream};

pub use experiment::{run_experiment, ExperimentResult, Summary};
pub use mechanism::{Mechanism, MechanismConfig, RecordAudit, Upload};
pub use task::{Task, TaskConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Fixed { eta: f64 },
    /// `η_t = τ/(C(t + α))` with the task's `L` and `C`.
    Diminishing,
}

fn default_reps() -> u64 {
    1
}

fn default_safety() -> f64 {
    1.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub clients: usize,
    pub tau: u64,
    /// `T`, a multiple of `tau`.
    pub total_iters: u64,
    pub gamma: f64,
    /// `p_k`; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: u64,
    pub mechanism: MechanismConfig,
    pub lr: LrSchedule,
    pub task: TaskConfig,
    #[serde(default)]
    pub psi_variant: PsiVariant,
    /// Inflation applied to the certified `θ_k²`.
    #[serde(default = "default_safety")]
    pub theta_safety: f64,
    /// Fill `elapsed_ms`; off by default so outputs stay byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return bad("clients: must be at least 1".into());
        }
        if self.tau == 0 {
            return bad("tau: must be at least 1".into());
        }
        if self.total_iters == 0 || self.total_iters % self.tau != 0 {
            return bad(format!(
                "total_iters: must be a positive multiple of tau = {}, got {}",
                self.tau, self.total_iters
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma: must be positive, got {}", self.gamma));
        }
        if self.reps == 0 {
            return bad("reps: must be at least 1".into());
        }
        if !(self.theta_safety >= 1.0) {
            return bad("theta_safety: must be at least 1".into());
        }
        if let LrSchedule::Fixed { eta } = self.lr {
            if !(eta.is_finite() && eta > 0.0) {
                return bad(format!("lr.eta: must be positive, got {eta}"));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.clients {
                return bad(format!("weights: expected {} entries, got {}", self.clients, w.len()));
            }
            if w.iter().any(|p| !(*p >= 0.0)) {
                return bad("weights: entries must be non-negative".into());
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("weights: must sum to 1, got {s}"));
            }
        }
        Mechanism::new(self.mechanism.clone()).map_err(|e| Error::Config(format!("mechanism: {e}")))?;
        Ok(())
    }

    pub fn client_weights(&self) -> Vec<f64> {
        self.weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.clients as f64; self.clients])
    }
}

/// `x / max{1, ‖x‖/γ}`.
pub fn clip_gradient(x: &[f64], gamma: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let f = (norm / gamma).max(1.0);
    x.iter().map(|v| v / f).collect()
}

/// `τ − 1` SGD steps from `w` starting at iteration `t`, then one fresh
/// stochastic gradient at the final iterate. `visit` sees every iterate.
pub fn local_steps(
    w: &[f64],
    t: u64,
    tau: u64,
    lr: impl Fn(u64) -> f64,
    mut stochastic_grad: impl FnMut(&[f64]) -> Vec<f64>,
    mut visit: impl FnMut(&[f64]),
) -> (Vec<f64>, Vec<f64>) {
    let mut w = w.to_vec();
    for s in 1..tau {
        let g = stochastic_grad(&w);
        let eta = lr(t + s - 1);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= eta * gi;
        }
        visit(&w);
    }
    let x = stochastic_grad(&w);
    (w, x)
}

/// `10·log₁₀(signal/error)`; `+∞` for zero error.
pub fn snr_db(signal_power: f64, error_power: f64) -> Result<f64> {
    if !(signal_power > 0.0) {
        return Err(Error::UndefinedSnr);
    }
    if error_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal_power / error_power).log10())
}

/// SNR over matched input/reconstruction pairs.
pub fn snr_db_vectors(inputs: &[Vec<f64>], reconstructions: &[Vec<f64>]) -> Result<f64> {
    if inputs.len() != reconstructions.len() || inputs.iter().zip(reconstructions).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::InvalidInput("inputs and reconstructions differ in shape".into()));
    }
    let (mut s, mut e) = (0.0, 0.0);
    for (x, y) in inputs.iter().zip(reconstructions) {
        for (a, b) in x.iter().zip(y) {
            s += a * a;
            e += (b - a) * (b - a);
        }
    }
    snr_db(s, e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    /// Synchronization index `T′` (iterations completed).
    pub t: u64,
    pub objective_gap: f64,
    pub accuracy: Option<f64>,
    /// `Σ_k ‖X̃_k‖²`.
    pub signal_power: f64,
    /// `Σ_k ‖X̂_k − X̃_k‖²` over real coordinates.
    pub error_power: f64,
    /// Same, including zero-padded coordinates.
    pub padded_error_power: f64,
    /// `None` when the signal vanishes.
    pub snr_db: Option<f64>,
    pub bits: u64,
    /// `η_{t+τ−1}` used by the server.
    pub eta: f64,
    /// `‖Ŵ_{t+τ} − W_{t+τ}‖²`, with `W` built from the raw gradients.
    pub weight_error_sq: f64,
    /// Largest `‖w − w*‖` over every iterate so far.
    pub max_dist: f64,
    pub elapsed_ms: u64,
}

/// Per-round extras that are too bulky for the report.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDetail {
    pub report: RoundReport,
    /// `(1/K) Σ_k (X̂_k − X̃_k)`, per coordinate.
    pub aggregate_error: Vec<f64>,
    /// Clipped gradients `X̃_k`.
    pub clipped: Vec<Vec<f64>>,
    pub reconstructions: Vec<Vec<f64>>,
}

pub struct Simulation<'a> {
    cfg: &'a FlConfig,
    task: &'a Task,
    mech: Mechanism,
    weights: Vec<f64>,
    seed: u64,
    w: Vec<f64>,
    t: u64,
    max_dist: f64,
}

struct ClientResult {
    raw: Vec<f64>,
    clipped: Vec<f64>,
    upload: Upload,
    max_dist: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a FlConfig, task: &'a Task, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if task.clients() != cfg.clients {
            return Err(Error::Config(format!(
                "task has {} clients, config {}",
                task.clients(),
                cfg.clients
            )));
        }
        let w = task.initial_point();
        let max_dist = dist(&w, task.w_star());
        Ok(Self {
            cfg,
            task,
            mech: Mechanism::new(cfg.mechanism.clone())?,
            weights: cfg.client_weights(),
            seed,
            w,
            t: 0,
            max_dist,
        })
    }

    pub fn model(&self) -> &[f64] {
        &self.w
    }

    pub fn iteration(&self) -> u64 {
        self.t
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mech
    }

    pub fn learning_rate(&self, t: u64) -> f64 {
        match self.cfg.lr {
            LrSchedule::Fixed { eta } => eta,
            LrSchedule::Diminishing => diminishing_lr(t, self.task.smoothness(), self.task.strong_convexity(), self.cfg.tau),
        }
    }

    /// Shared-randomness context of client `k` in synchronization round `round`.
    pub fn upload_context(&self, k: usize, round: u64) -> UploadContext {
        UploadContext {
            seed: client_seed(self.seed, k as u64),
            client: k as u64,
            round,
        }
    }

    fn client(&self, k: usize, round: u64) -> Result<ClientResult> {
        let ctx = self.upload_context(k, round);
        let sk = ctx.seed;
        let mut sampling = RandomTape::derive_stream(Stream::Sampling, sk, k as u64, round, 0);
        let n_k = self.task.samples(k);
        let m = self.task.dim();
        let w_star = self.task.w_star();
        let mut max_dist = 0.0f64;
        let (_, raw) = local_steps(
            &self.w,
            self.t,
            self.cfg.tau,
            |t| self.learning_rate(t),
            |w| {
                let j = sampling.next_index(n_k);
                let mut g = vec![0.0; m];
                self.task.sample_gradient(k, j, w, &mut g);
                g
            },
            |w| max_dist = max_dist.max(dist(w, w_star)),
        );
        let clipped = clip_gradient(&raw, self.cfg.gamma);
        let upload = self.mech.upload(&clipped, self.cfg.gamma, ctx)?;
        Ok(ClientResult {
            raw,
            clipped,
            upload,
            max_dist,
        })
    }

    /// One synchronization interval: `τ` iterations and a server update.
    pub fn step(&mut self) -> Result<RoundDetail> {
        let start = self.cfg.timing.then(std::time::Instant::now);
        let round = self.t / self.cfg.tau;
        let results = (0..self.cfg.clients)
            .into_par_iter()
            .map(|k| self.client(k, round))
            .collect::<Result<Vec<_>>>()?;
        let m = self.task.dim();
        let eta = self.learning_rate(self.t + self.cfg.tau - 1);
        let mut w_hat = self.w.clone();
        let mut w_raw = self.w.clone();
        let mut aggregate_error = vec![0.0; m];
        let (mut signal, mut error, mut padded, mut bits) = (0.0, 0.0, 0.0, 0u64);
        let k_inv = 1.0 / self.cfg.clients as f64;
        for (r, p) in results.iter().zip(&self.weights) {
            for i in 0..m {
                let xh = r.upload.reconstruction[i];
                let xt = r.clipped[i];
                w_hat[i] -= eta * p * xh;
                w_raw[i] -= eta * p * r.raw[i];
                aggregate_error[i] += k_inv * (xh - xt);
                signal += xt * xt;
                error += (xh - xt) * (xh - xt);
            }
            padded += r.upload.padded_error_sq;
            bits += r.upload.bits;
            self.max_dist = self.max_dist.max(r.max_dist);
        }
        let weight_error_sq = w_hat.iter().zip(&w_raw).map(|(a, b)| (a - b) * (a - b)).sum();
        self.w = w_hat;
        self.t += self.cfg.tau;
        self.max_dist = self.max_dist.max(dist(&self.w, self.task.w_star()));
        let snr = match snr_db(signal, error) {
            Ok(v) => Some(v),
            Err(Error::UndefinedSnr) => None,
            Err(e) => return Err(e),
        };
        let report = RoundReport {
            t: self.t,
            objective_gap: self.task.objective_gap(&self.w),
            accuracy: self.task.accuracy(&self.w),
            signal_power: signal,
            error_power: error,
            padded_error_power: padded,
            snr_db: snr,
            bits,
            eta,
            weight_error_sq,
            max_dist: self.max_dist,
            elapsed_ms: start.map_or(0, |s| s.elapsed().as_millis() as u64),
        };
        let (clipped, reconstructions) = results.into_iter().map(|r| (r.clipped, r.upload.reconstruction)).unzip();
        Ok(RoundDetail {
            report,
            aggregate_error,
            clipped,
            reconstructions,
        })
    }

    /// Runs to `T` and returns one report per synchronization index.
    pub fn run(mut self) -> Result<Vec<RoundReport>> {
        let rounds = self.cfg.total_iters / self.cfg.tau;
        (0..rounds).map(|_| self.step().map(|d| d.report)).collect()
    }
}
