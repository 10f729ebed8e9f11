//! Desk-scale federated objectives with known constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{heterogeneity_psi, PsiVariant};
use crate::error::{Error, Result};
use crate::randomness::{RandomTape, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// `F_k(w) = ‖A_k w − y_k‖²/(2n_k)` with `y_k = A_k w_k⋆` exactly.
    LeastSquares {
        dim: usize,
        samples_per_client: usize,
        /// Ratio of the largest to smallest feature variance.
        condition: f64,
        /// Spread of the client optima `w_k⋆` around a common centre.
        heterogeneity: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Two-class 8×8 glyph classification (a ring versus a bar) with
    /// L2-regularized logistic loss and a bias feature.
    Logistic {
        samples_per_client: usize,
        test_samples: usize,
        /// Standard deviation of the per-pixel noise.
        pixel_noise: f64,
        regularization: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone)]
struct ClientData {
    /// Row-major `n_k × m` features.
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl ClientData {
    fn row(&self, j: usize, m: usize) -> &[f64] {
        &self.features[j * m..(j + 1) * m]
    }

    fn len(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Loss {
    Squared,
    Logistic { reg_bits: u64 },
}

/// Gradient second moment `E_j‖∇ℓ(w; ξ_j)‖²` as the quadratic
/// `wᵀGw − 2gᵀw + d` (least squares only).
#[derive(Debug, Clone)]
struct SecondMoment {
    g_mat: DMatrix<f64>,
    g_vec: DVector<f64>,
    d: f64,
    g_max_eig: f64,
}

#[derive(Debug, Clone)]
pub struct Task {
    dim: usize,
    loss: Loss,
    weights: Vec<f64>,
    clients: Vec<ClientData>,
    test: Option<ClientData>,
    w_star: Vec<f64>,
    opt_value: f64,
    client_minima: Vec<f64>,
    l: f64,
    c: f64,
    moments: Vec<SecondMoment>,
    feature_norm_max: f64,
}

fn sym_eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigen().eigenvalues;
    let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn gram(data: &ClientData, m: usize) -> DMatrix<f64> {
    let n = data.len();
    let a = DMatrix::from_row_slice(n, m, &data.features);
    a.transpose() * &a / n as f64
}

impl Task {
    pub fn build(cfg: &TaskConfig, clients: usize, weights: &[f64]) -> Result<Self> {
        if clients == 0 || weights.len() != clients {
            return Err(Error::Config("weights must have one entry per client".into()));
        }
        match *cfg {
            TaskConfig::LeastSquares {
                dim,
                samples_per_client,
                condition,
                heterogeneity,
                seed,
            } => Self::least_squares(dim, samples_per_client, condition, heterogeneity, seed, weights),
            TaskConfig::Logistic {
                samples_per_client,
                test_samples,
                pixel_noise,
                regularization,
                seed,
            } => Self::logistic(samples_per_client, test_samples, pixel_noise, regularization, seed, weights),
        }
    }

    fn least_squares(
        dim: usize,
        samples: usize,
        condition: f64,
        heterogeneity: f64,
        seed: u64,
        weights: &[f64],
    ) -> Result<Self> {
        if dim == 0 || samples == 0 || !(condition >= 1.0) || !(heterogeneity >= 0.0) {
            return Err(Error::Config("least-squares task needs dim, samples > 0, condition >= 1, heterogeneity >= 0".into()));
        }
        let k_count = weights.len();
        let scales: Vec<f64> = (0..dim)
            .map(|i| {
                let frac = if dim == 1 { 0.0 } else { i as f64 / (dim - 1) as f64 };
                (1.0 + (condition - 1.0) * frac).sqrt()
            })
            .collect();
        let mut center_tape = RandomTape::derive_stream(Stream::Data, seed, u64::MAX, 0, 0);
        let center: Vec<f64> = (0..dim).map(|_| center_tape.next_normal() / (dim as f64).sqrt()).collect();
        let mut clients = Vec::with_capacity(k_count);
        let mut optima = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let mut t = RandomTape::derive_stream(Stream::Data, seed, k as u64, 0, 0);
            let w_k: Vec<f64> = center
                .iter()
                .map(|c| c + heterogeneity * t.next_normal() / (dim as f64).sqrt())
                .collect();
            let mut features = Vec::with_capacity(samples * dim);
            let mut targets = Vec::with_capacity(samples);
            for _ in 0..samples {
                let row: Vec<f64> = scales
                    .iter()
                    .map(|s| if t.next_u64() >> 63 == 1 { *s } else { -*s })
                    .collect();
                targets.push(row.iter().zip(&w_k).map(|(a, w)| a * w).sum());
                features.extend(row);
            }
            clients.push(ClientData { features, targets });
            optima.push(w_k);
        }
        let grams: Vec<DMatrix<f64>> = clients.iter().map(|c| gram(c, dim)).collect();
        let (mut l, mut c) = (0.0f64, f64::INFINITY);
        for g in &grams {
            let (lo, hi) = sym_eigen_extremes(g);
            if lo <= 1e-10 {
                return Err(Error::DegenerateTask(format!(
                    "client covariance is singular (smallest eigenvalue {lo:.3e}); use more samples per client"
                )));
            }
            l = l.max(hi);
            c = c.min(lo);
        }
        let mut q = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for ((g, w_k), p) in grams.iter().zip(&optima).zip(weights) {
            q += g * *p;
            rhs += g * DVector::from_column_slice(w_k) * *p;
        }
        let w_star = q
            .cholesky()
            .ok_or_else(|| Error::DegenerateTask("global covariance is not positive definite".into()))?
            .solve(&rhs);
        let moments = clients
            .iter()
            .map(|cd| {
                let n = cd.len() as f64;
                let mut g_mat = DMatrix::zeros(dim, dim);
                let mut g_vec = DVector::zeros(dim);
                let mut d = 0.0;
                for j in 0..cd.len() {
                    let a = DVector::from_column_slice(cd.row(j, dim));
                    let na = a.norm_squared();
                    let y = cd.targets[j];
                    g_mat += &a * a.transpose() * (na / n);
                    g_vec += &a * (na * y / n);
                    d += na * y * y / n;
                }
                let (_, g_max_eig) = sym_eigen_extremes(&g_mat);
                SecondMoment {
                    g_mat,
                    g_vec,
                    d,
                    g_max_eig,
                }
            })
            .collect();
        let feature_norm_max = scales.iter().map(|s| s * s).sum::<f64>().sqrt();
        let mut task = Self {
            dim,
            loss: Loss::Squared,
            weights: weights.to_vec(),
            clients,
            test: None,
            w_star: w_star.as_slice().to_vec(),
            opt_value: 0.0,
            client_minima: vec![0.0; k_count],
            l,
            c,
            moments,
            feature_norm_max,
        };
        task.opt_value = task.objective(&task.w_star.clone());
        Ok(task)
    }

    fn logistic(
        samples: usize,
        test_samples: usize,
        pixel_noise: f64,
        reg: f64,
        seed: u64,
        weights: &[f64],
    ) -> Result<Self> {
        if samples == 0 || test_samples == 0 || !(pixel_noise >= 0.0) || !(reg > 0.0) {
            return Err(Error::Config("logistic task needs samples > 0 and regularization > 0".into()));
        }
        let k_count = weights.len();
        let dim = 65;
        let protos = glyph_prototypes();
        let draw = |t: &mut RandomTape, label: usize| -> Vec<f64> {
            let mut x: Vec<f64> = protos[label]
                .iter()
                .map(|v| (v + pixel_noise * t.next_normal()).clamp(0.0, 1.0))
                .collect();
            x.push(1.0);
            x
        };
        let mut clients = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let share = if k_count == 1 { 0.5 } else { 0.2 + 0.6 * k as f64 / (k_count - 1) as f64 };
            let mut t = RandomTape::derive_stream(Stream::Data, seed, k as u64, 0, 0);
            let mut features = Vec::with_capacity(samples * dim);
            let mut targets = Vec::with_capacity(samples);
            for j in 0..samples {
                // Deterministic label split keeps each client's class share exact.
                let label = usize::from((j as f64 + 0.5) / samples as f64 >= 1.0 - share);
                features.extend(draw(&mut t, label));
                targets.push(label as f64);
            }
            clients.push(ClientData { features, targets });
        }
        let mut t = RandomTape::derive_stream(Stream::Data, seed, u64::MAX, 0, 0);
        let mut features = Vec::with_capacity(test_samples * dim);
        let mut targets = Vec::with_capacity(test_samples);
        for j in 0..test_samples {
            let label = j % 2;
            features.extend(draw(&mut t, label));
            targets.push(label as f64);
        }
        let test = ClientData { features, targets };
        let (mut l, c) = (0.0f64, reg);
        for cd in &clients {
            let (_, hi) = sym_eigen_extremes(&gram(cd, dim));
            l = l.max(0.25 * hi + reg);
        }
        let feature_norm_max = clients
            .iter()
            .flat_map(|cd| (0..cd.len()).map(move |j| cd.row(j, dim).iter().map(|v| v * v).sum::<f64>().sqrt()))
            .fold(0.0, f64::max);
        let mut task = Self {
            dim,
            loss: Loss::Logistic { reg_bits: reg.to_bits() },
            weights: weights.to_vec(),
            clients,
            test: Some(test),
            w_star: vec![0.0; dim],
            opt_value: 0.0,
            client_minima: vec![0.0; k_count],
            l,
            c,
            moments: Vec::new(),
            feature_norm_max,
        };
        let all: Vec<usize> = (0..k_count).collect();
        let w_star = task.newton(&all, &task.weights.clone())?;
        task.opt_value = task.objective(&w_star);
        task.w_star = w_star;
        for k in 0..k_count {
            let wk = task.newton(&[k], &[1.0])?;
            task.client_minima[k] = task.client_objective(k, &wk);
        }
        Ok(task)
    }

    fn reg(&self) -> f64 {
        match self.loss {
            Loss::Squared => 0.0,
            Loss::Logistic { reg_bits } => f64::from_bits(reg_bits),
        }
    }

    /// Newton's method on `Σ wts_i F_{ks_i}` (logistic loss).
    fn newton(&self, ks: &[usize], wts: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim;
        let reg = self.reg();
        let mut w = DVector::zeros(m);
        for _ in 0..100 {
            let mut grad = &w * reg;
            let mut hess = DMatrix::identity(m, m) * reg;
            for (&k, &p) in ks.iter().zip(wts) {
                let cd = &self.clients[k];
                let n = cd.len() as f64;
                for j in 0..cd.len() {
                    let x = DVector::from_column_slice(cd.row(j, m));
                    let s = sigmoid(x.dot(&w));
                    grad += &x * (p * (s - cd.targets[j]) / n);
                    hess += &x * x.transpose() * (p * s * (1.0 - s) / n);
                }
            }
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::DegenerateTask("logistic Hessian not positive definite".into()))?
                .solve(&grad);
            w -= &step;
            if step.norm() < 1e-13 * (1.0 + w.norm()) {
                break;
            }
        }
        Ok(w.as_slice().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clients(&self) -> usize {
        self.clients.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn samples(&self, k: usize) -> usize {
        self.clients[k].len()
    }

    pub fn smoothness(&self) -> f64 {
        self.l
    }

    pub fn strong_convexity(&self) -> f64 {
        self.c
    }

    pub fn w_star(&self) -> &[f64] {
        &self.w_star
    }

    pub fn optimum_value(&self) -> f64 {
        self.opt_value
    }

    pub fn psi(&self, variant: PsiVariant) -> f64 {
        heterogeneity_psi(self.opt_value, &self.client_minima, &self.weights, variant)
    }

    pub fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    /// Per-sample gradient `∇ℓ(w; ξ_{k,j})` written into `out`.
    pub fn sample_gradient(&self, k: usize, j: usize, w: &[f64], out: &mut [f64]) {
        let cd = &self.clients[k];
        let x = cd.row(j, self.dim);
        let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
        match self.loss {
            Loss::Squared => {
                let r = z - cd.targets[j];
                for (o, a) in out.iter_mut().zip(x) {
                    *o = a * r;
                }
            }
            Loss::Logistic { .. } => {
                let r = sigmoid(z) - cd.targets[j];
                let reg = self.reg();
                for ((o, a), wi) in out.iter_mut().zip(x).zip(w) {
                    *o = a * r + reg * wi;
                }
            }
        }
    }

    /// Full local gradient `∇F_k(w)`.
    pub fn client_gradient(&self, k: usize, w: &[f64]) -> Vec<f64> {
        let n = self.samples(k);
        let mut acc = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for j in 0..n {
            self.sample_gradient(k, j, w, &mut g);
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b / n as f64;
            }
        }
        acc
    }

    pub fn client_objective(&self, k: usize, w: &[f64]) -> f64 {
        let cd = &self.clients[k];
        let n = cd.len() as f64;
        let mut total = 0.0;
        for j in 0..cd.len() {
            let z: f64 = cd.row(j, self.dim).iter().zip(w).map(|(a, b)| a * b).sum();
            total += match self.loss {
                Loss::Squared => 0.5 * (z - cd.targets[j]).powi(2),
                Loss::Logistic { .. } => log1p_exp(z) - cd.targets[j] * z,
            } / n;
        }
        total + 0.5 * self.reg() * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        (0..self.clients())
            .map(|k| self.weights[k] * self.client_objective(k, w))
            .sum()
    }

    pub fn objective_gap(&self, w: &[f64]) -> f64 {
        self.objective(w) - self.opt_value
    }

    /// Test accuracy for classification tasks.
    pub fn accuracy(&self, w: &[f64]) -> Option<f64> {
        let test = self.test.as_ref()?;
        let correct = (0..test.len())
            .filter(|&j| {
                let z: f64 = test.row(j, self.dim).iter().zip(w).map(|(a, b)| a * b).sum();
                (z > 0.0) == (test.targets[j] > 0.5)
            })
            .count();
        Some(correct as f64 / test.len() as f64)
    }

    /// Certified upper bound on `sup E_j‖∇ℓ(w; ξ_{k,j})‖²` over the ball
    /// `‖w − center‖ ≤ radius`, inflated by `safety`.
    pub fn theta_sq(&self, k: usize, center: &[f64], radius: f64, safety: f64) -> f64 {
        match self.loss {
            Loss::Squared => {
                let sm = &self.moments[k];
                let c = DVector::from_column_slice(center);
                let q_c = c.dot(&(&sm.g_mat * &c)) - 2.0 * sm.g_vec.dot(&c) + sm.d;
                let lin = (&sm.g_mat * &c - &sm.g_vec).norm();
                safety * (q_c + 2.0 * lin * radius + sm.g_max_eig * radius * radius)
            }
            Loss::Logistic { .. } => {
                let c_norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
                let bound = self.feature_norm_max + self.reg() * (c_norm + radius);
                safety * bound * bound
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Ring ("0") and bar ("1") glyphs on an 8×8 grid, intensities in `[0, 1]`.
fn glyph_prototypes() -> [Vec<f64>; 2] {
    let mut ring = vec![0.0; 64];
    let mut bar = vec![0.0; 64];
    for r in 0..8 {
        for c in 0..8 {
            let on_ring = (1..=6).contains(&r) && (2..=5).contains(&c) && (r == 1 || r == 6 || c == 2 || c == 5);
            ring[r * 8 + c] = if on_ring { 1.0 } else { 0.0 };
            bar[r * 8 + c] = if (1..=6).contains(&r) && (3..=4).contains(&c) { 1.0 } else { 0.0 };
        }
    }
    [ring, bar]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(h: f64) -> Task {
        let cfg = TaskConfig::LeastSquares {
            dim: 6,
            samples_per_client: 40,
            condition: 2.0,
            heterogeneity: h,
            seed: 1,
        };
        Task::build(&cfg, 4, &[0.25; 4]).unwrap()
    }

    #[test]
    fn least_squares_optimum_is_stationary() {
        let t = ls(0.5);
        let w = t.w_star().to_vec();
        let mut g = vec![0.0; t.dim()];
        for k in 0..t.clients() {
            for (a, b) in g.iter_mut().zip(t.client_gradient(k, &w)) {
                *a += 0.25 * b;
            }
        }
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert!(t.objective_gap(&w).abs() < 1e-15);
        assert!(t.strong_convexity() <= t.smoothness());
    }

    #[test]
    fn psi_zero_for_identical_clients_and_grows_with_heterogeneity() {
        assert!(ls(0.0).psi(PsiVariant::Unweighted).abs() < 1e-15);
        let mut last = -1.0;
        for h in [0.1, 0.3, 1.0, 3.0] {
            let p = ls(h).psi(PsiVariant::Unweighted);
            assert!(p > last);
            last = p;
        }
    }

    #[test]
    fn singular_task_is_rejected() {
        let cfg = TaskConfig::LeastSquares {
            dim: 8,
            samples_per_client: 3,
            condition: 1.0,
            heterogeneity: 0.0,
            seed: 1,
        };
        assert!(matches!(Task::build(&cfg, 2, &[0.5, 0.5]), Err(Error::DegenerateTask(_))));
    }

    #[test]
    fn theta_bounds_second_moment_on_ball() {
        let t = ls(1.0);
        let c = t.w_star().to_vec();
        let radius = 0.7;
        let mut tape = RandomTape::derive(3, 0, 0, 0);
        let mut g = vec![0.0; t.dim()];
        for k in 0..t.clients() {
            let bound = t.theta_sq(k, &c, radius, 1.0);
            for _ in 0..200 {
                let dir: Vec<f64> = (0..t.dim()).map(|_| tape.next_normal()).collect();
                let nrm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let w: Vec<f64> = c.iter().zip(&dir).map(|(a, d)| a + radius * d / nrm).collect();
                let mut second = 0.0;
                for j in 0..t.samples(k) {
                    t.sample_gradient(k, j, &w, &mut g);
                    second += g.iter().map(|v| v * v).sum::<f64>() / t.samples(k) as f64;
                }
                assert!(second <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn logistic_task_is_learnable() {
        let cfg = TaskConfig::Logistic {
            samples_per_client: 60,
            test_samples: 400,
            pixel_noise: 0.5,
            regularization: 1e-2,
            seed: 2,
        };
        let t = Task::build(&cfg, 5, &[0.2; 5]).unwrap();
        assert_eq!(t.dim(), 65);
        let acc = t.accuracy(t.w_star()).unwrap();
        assert!(acc > 0.8, "accuracy at optimum {acc}");
        assert!(t.psi(PsiVariant::Weighted) >= 0.0);
        assert!((t.accuracy(&t.initial_point()).unwrap() - 0.5).abs() < 1e-12);
    }
}
