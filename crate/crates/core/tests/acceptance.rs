//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any fails. Pass criterion numbers as arguments
//! to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cepam::codec::bits::{BitReader, BitWriter};
use cepam::codec::golomb::{golomb_decode, golomb_encode};
use cepam::codec::{
    decode_upload, encode_upload, expected_bits_per_round, Header, MessageDomain, StreamDecoder, StreamEncoder,
    UploadContext,
};
use cepam::flsim::experiment::convergence_check;
use cepam::flsim::{run_experiment, FlConfig, LrSchedule, MechanismConfig, Simulation, Task, TaskConfig};
use cepam::lattice::LatticeSpec;
use cepam::noise::{NoiseFamily, NoiseKind};
use cepam::privacy::{amplified_epsilon, gaussian_delta, laplace_report, subsampling_prob, GaussianParams};
use cepam::quantizers::{lrsuq_encode, EncodedSubvector};
use cepam::randomness::{RandomTape, Stream};
use cepam::stats::{chi_square_gof, ks_one_sample, ks_two_sample, mean, pearson, variance};

type Outcome = Result<String, String>;

fn families() -> Vec<(String, NoiseFamily)> {
    let mut v: Vec<(String, NoiseFamily)> = (1..=3)
        .map(|n| (format!("gaussian n={n}"), NoiseFamily::gaussian(n, 0.01).unwrap()))
        .collect();
    v.push(("laplace".into(), NoiseFamily::laplace(0.01).unwrap()));
    v
}

fn uniform_box(seed: u64, s: u64, n: usize, half: f64) -> Vec<f64> {
    let mut t = RandomTape::derive_stream(Stream::Data, seed, 0, s, 0);
    (0..n).map(|_| half * (2.0 * t.next_uniform() - 1.0)).collect()
}

/// Round-trip errors `Y − x` for inputs `x_of(s)`.
fn channel_errors(fam: &NoiseFamily, count: u64, seed: u64, x_of: impl Fn(u64) -> Vec<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<u64>) {
    let spec = LatticeSpec::scaled_integer(fam.dim(), 1.0).unwrap();
    let (mut xs, mut zs, mut hs) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..count {
        let x = x_of(s);
        let e = lrsuq_encode(&x, fam, &spec, &mut RandomTape::derive(seed, 0, s, 0)).unwrap();
        zs.push(e.reconstruction.iter().zip(&x).map(|(y, xi)| y - xi).collect());
        xs.push(x);
        hs.push(e.encoded.h);
    }
    (xs, zs, hs)
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn check(cond: bool, what: String, fails: &mut Vec<String>) {
    if !cond {
        fails.push(what);
    }
}

fn verdict(fails: Vec<String>, ok: String) -> Outcome {
    if fails.is_empty() {
        Ok(ok)
    } else {
        Err(fails.join("; "))
    }
}

fn c1_channel() -> Outcome {
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    for (name, fam) in families() {
        let start = Instant::now();
        let n = fam.dim();
        let (_, zs, _) = channel_errors(&fam, 100_000, 1, |s| uniform_box(1, s, n, 1.0));
        let mut min_p = 1.0f64;
        for i in 0..n {
            let p = ks_one_sample(&column(&zs, i), |z| fam.marginal_cdf(z)).p_value;
            min_p = min_p.min(p);
            check(p > 0.01, format!("{name} coord {i} KS p = {p:.4}"), &mut fails);
        }
        let total: f64 = zs.iter().map(|z| z.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / zs.len() as f64;
        let ratio = total / fam.variance();
        check((ratio - 1.0).abs() < 0.02, format!("{name} variance ratio {ratio:.4}"), &mut fails);
        let secs = start.elapsed().as_secs_f64();
        check(secs < 30.0, format!("{name} took {secs:.1}s"), &mut fails);
        notes.push(format!("{name}: min KS p {min_p:.3}, var ratio {ratio:.4}"));
    }
    verdict(fails, notes.join(", "))
}

fn c2_independence() -> Outcome {
    let mut fails = Vec::new();
    let mut worst = 0.0f64;
    let mut min_p = 1.0f64;
    for (name, fam) in families() {
        let n = fam.dim();
        let (xs, zs, _) = channel_errors(&fam, 100_000, 2, |s| uniform_box(2, s, n, 1.0));
        for i in 0..n {
            for j in 0..n {
                let r = pearson(&column(&xs, i), &column(&zs, j));
                worst = worst.max(r.abs());
                check(r.abs() < 0.02, format!("{name} corr(x{i}, z{j}) = {r:.4}"), &mut fails);
            }
        }
        // Opposite corners of the input box.
        let lo = vec![-1.0; n];
        let hi = vec![1.0; n];
        let (_, za, _) = channel_errors(&fam, 20_000, 3, |_| lo.clone());
        let (_, zb, _) = channel_errors(&fam, 20_000, 4, |_| hi.clone());
        for i in 0..n {
            let p = ks_two_sample(&column(&za, i), &column(&zb, i)).p_value;
            min_p = min_p.min(p);
            check(p > 0.01, format!("{name} two-sample KS coord {i} p = {p:.4}"), &mut fails);
        }
    }
    verdict(fails, format!("max |corr| {worst:.4}, min two-sample KS p {min_p:.3}"))
}

fn geometric_chi_square(hs: &[u64], p: f64) -> (f64, f64) {
    let total = hs.len() as f64;
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let mut h = 1u64;
    let mut tail = 1.0;
    loop {
        let ph = p * (1.0 - p).powi(h as i32 - 1);
        if total * (tail - ph) < 20.0 {
            obs.push(hs.iter().filter(|&&x| x >= h).count() as f64);
            exp.push(total * tail);
            break;
        }
        obs.push(hs.iter().filter(|&&x| x == h).count() as f64);
        exp.push(total * ph);
        tail -= ph;
        h += 1;
    }
    chi_square_gof(&obs, &exp, 0).unwrap()
}

fn c3_rejection() -> Outcome {
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    let start = Instant::now();
    for (n, want) in [(1usize, 1.0), (2, std::f64::consts::PI / 4.0), (3, std::f64::consts::PI / 6.0)] {
        let fam = NoiseFamily::gaussian(n, 0.01).unwrap();
        let mut hs = Vec::new();
        let mut trials = 0u64;
        let mut s = 0u64;
        while trials < 1_000_000 {
            let spec = LatticeSpec::scaled_integer(n, 1.0).unwrap();
            let x = uniform_box(5, s, n, 1.0);
            let e = lrsuq_encode(&x, &fam, &spec, &mut RandomTape::derive(5, n as u64, s, 0)).unwrap();
            trials += e.encoded.h;
            hs.push(e.encoded.h);
            s += 1;
        }
        let rate = hs.len() as f64 / trials as f64;
        check((rate / want - 1.0).abs() < 0.01, format!("n={n} acceptance {rate:.5} vs {want:.5}"), &mut fails);
        let p_value = if n == 1 {
            check(hs.iter().all(|&h| h == 1), "n=1 needed a rejection".into(), &mut fails);
            1.0
        } else {
            let (_, p) = geometric_chi_square(&hs, want);
            check(p > 0.01, format!("n={n} geometric chi-square p = {p:.4}"), &mut fails);
            p
        };
        notes.push(format!("n={n}: rate {rate:.5} (chi2 p {p_value:.3})"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, notes.join(", "))
}

fn c4_codec() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let gamma = 1.0;
    // Random (H, M) records through the full stream format.
    for (name, fam) in families() {
        let spec = LatticeSpec::scaled_integer(fam.dim(), 1.0).unwrap();
        let p = fam.acceptance_prob(1.0, &spec);
        let count = 10_000u32;
        let mut rng = RandomTape::derive_stream(Stream::Data, 6, 0, 0, 0);
        let mut recs = Vec::new();
        let mut enc = StreamEncoder::new(Header::new(fam, spec, gamma, count).unwrap());
        for _ in 0..count {
            let u = fam.sample_latent(&mut rng);
            let bx = MessageDomain { u, gamma, spec: &spec, family: &fam }.bounds().unwrap();
            let message = bx.unrank(rng.next_u64() % bx.size).unwrap();
            let h = if p == 1.0 { 1 } else { 1 + (rng.next_open_uniform().ln() / (1.0 - p).ln()).floor() as u64 };
            let rec = EncodedSubvector { h, message };
            enc.push(&rec, u).unwrap();
            recs.push((u, rec));
        }
        let bytes = enc.finish().unwrap();
        let mut dec = StreamDecoder::new(&bytes).unwrap();
        let ok = recs.iter().all(|(u, rec)| dec.next_record(*u).map(|r| &r == rec).unwrap_or(false));
        check(ok && dec.finish().is_ok(), format!("{name}: stream round trip mismatch"), &mut fails);
    }
    // Prefix-freeness of the index code, exhaustively for h ≤ 1000.
    for p in [std::f64::consts::PI / 4.0, std::f64::consts::PI / 6.0, 0.3, 0.05] {
        let mut words: Vec<String> = (1..=1000u64)
            .map(|h| {
                let mut w = BitWriter::new();
                golomb_encode(h, p, &mut w).unwrap();
                let len = w.len();
                let bytes = w.into_bytes();
                let mut r = BitReader::new(&bytes);
                (0..len).map(|_| if r.read_bit().unwrap() { '1' } else { '0' }).collect()
            })
            .collect();
        for h in 1..=1000u64 {
            let mut w = BitWriter::new();
            golomb_encode(h, p, &mut w).unwrap();
            let bytes = w.into_bytes();
            if golomb_decode(p, &mut BitReader::new(&bytes)).unwrap() != h {
                fails.push(format!("p={p:.4}: h={h} does not decode"));
            }
        }
        words.sort();
        let clash = words.windows(2).any(|w| w[1].starts_with(&w[0]));
        check(!clash, format!("p={p:.4}: code is not prefix-free"), &mut fails);
    }
    // Mean record length against the entropy accounting.
    let mut notes = Vec::new();
    for (name, fam) in families() {
        let spec = LatticeSpec::scaled_integer(fam.dim(), 1.0).unwrap();
        let samples = if fam.dim() == 3 { 1_000_000 } else { 200_000 };
        let b = expected_bits_per_round(&fam, &spec, gamma, 1, samples, 7).unwrap();
        let est = b.index_entropy_bits + b.message_bits;
        let got = b.empirical_bits_per_record;
        check(
            got >= est && got <= est + 2.0,
            format!("{name}: mean record {got:.4} bits outside [{est:.4}, {:.4}]", est + 2.0),
            &mut fails,
        );
        notes.push(format!("{name}: {got:.3} vs est {est:.3}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, format!("round trips and prefix-freeness ok; {}", notes.join(", ")))
}

fn c5_lockstep() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let mut total = 0usize;
    for (name, fam) in families() {
        let spec = LatticeSpec::scaled_integer(fam.dim(), 1.0).unwrap();
        let n = fam.dim();
        // 10 uploads of 1000 subvectors each.
        for upload in 0..10u64 {
            let x = uniform_box(8, upload, n * 1000, 1.0 / (n as f64).sqrt());
            let ctx = UploadContext { seed: 8, client: upload, round: 3 };
            let up = encode_upload(&x, &fam, &spec, 1.0, ctx).unwrap();
            let got = decode_upload(&up.bytes, ctx).unwrap();
            let want: Vec<f64> = up.encodings.iter().flat_map(|e| e.reconstruction.clone()).collect();
            let exact = got.len() == want.len() && got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
            check(exact, format!("{name} upload {upload}: reconstruction differs"), &mut fails);
            total += up.encodings.len();
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, format!("{total} subvectors bit-exact"))
}

fn ls_config(mechanism: MechanismConfig, clients: usize, tau: u64, total_iters: u64, dim: usize, reps: u64) -> FlConfig {
    FlConfig {
        clients,
        tau,
        total_iters,
        gamma: 1000.0,
        weights: None,
        seed: 100,
        reps,
        mechanism,
        lr: LrSchedule::Diminishing,
        task: TaskConfig::LeastSquares {
            dim,
            samples_per_client: 50,
            condition: 2.0,
            heterogeneity: 1.0,
            seed: 7,
        },
        psi_variant: Default::default(),
        theta_safety: 1.1,
        timing: false,
    }
}

fn c6_distortion() -> Outcome {
    let mut fails = Vec::new();
    let mut notes = Vec::new();
    let start = Instant::now();
    for mech in [
        MechanismConfig::CepamGaussian { n: 3, sigma: 0.01, alpha: 1.0 },
        MechanismConfig::CepamLaplace { b: 0.01, alpha: 1.0 },
    ] {
        let cfg = ls_config(mech.clone(), 10, 2, 200, 20, 10);
        let task = Task::build(&cfg.task, cfg.clients, &cfg.client_weights()).unwrap();
        let m = task.dim();
        let mut err_sum = 0.0;
        let mut uploads = 0u64;
        let mut coord_sum = vec![0.0; m];
        let mut coord_sq = vec![0.0; m];
        let mut coord_n = 0.0;
        let mut per_round = Vec::new();
        let mut radius = 0.0f64;
        let mut n_sub = 0;
        let mut var_f = 0.0;
        for r in 0..cfg.reps {
            let mut sim = Simulation::new(&cfg, &task, cfg.seed + r).unwrap();
            n_sub = sim.mechanism().subvectors(m);
            var_f = sim.mechanism().noise_variance();
            for _ in 0..cfg.total_iters / cfg.tau {
                let d = sim.step().unwrap();
                err_sum += d.report.padded_error_power;
                uploads += cfg.clients as u64;
                for (x, y) in d.clipped.iter().zip(&d.reconstructions) {
                    for i in 0..m {
                        let z = y[i] - x[i];
                        coord_sum[i] += z;
                        coord_sq[i] += z * z;
                    }
                    coord_n += 1.0;
                }
                radius = radius.max(d.report.max_dist);
                per_round.push((d.report.eta, d.report.weight_error_sq));
            }
        }
        let name = match mech {
            MechanismConfig::CepamGaussian { .. } => "gaussian n=3",
            _ => "laplace",
        };
        let ratio = err_sum / uploads as f64 / (n_sub as f64 * var_f);
        check((ratio - 1.0).abs() < 0.02, format!("{name}: E||Z||^2 / (N Var) = {ratio:.4}"), &mut fails);
        for i in 0..m {
            let mu = coord_sum[i] / coord_n;
            let sd = ((coord_sq[i] / coord_n - mu * mu) / coord_n).sqrt();
            check(mu.abs() <= 3.0 * sd, format!("{name}: coord {i} mean {mu:.3e} beyond 3 sd {sd:.3e}"), &mut fails);
        }
        let big_m = (0..task.clients())
            .map(|k| task.theta_sq(k, task.w_star(), radius, cfg.theta_safety).sqrt())
            .fold(0.0, f64::max);
        let sum_p2: f64 = cfg.client_weights().iter().map(|p| p * p).sum();
        let mut worst = 0.0f64;
        for (eta, err) in &per_round {
            let bound = eta * eta * n_sub as f64 * (var_f + big_m * big_m) * sum_p2;
            worst = worst.max(err / bound);
        }
        check(worst <= 1.0, format!("{name}: weight error exceeds bound (ratio {worst:.3})"), &mut fails);
        notes.push(format!("{name}: ratio {ratio:.4}, max weight-error/bound {worst:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, notes.join(", "))
}

fn c7_noisy_average() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let sigma = 0.01;
    let cfg = ls_config(MechanismConfig::CepamGaussian { n: 2, sigma, alpha: 1.0 }, 30, 2, 4000, 50, 1);
    let task = Task::build(&cfg.task, cfg.clients, &cfg.client_weights()).unwrap();
    let mut sim = Simulation::new(&cfg, &task, 42).unwrap();
    let mut agg = Vec::new();
    for _ in 0..cfg.total_iters / cfg.tau {
        agg.extend(sim.step().unwrap().aggregate_error);
    }
    let v = variance(&agg);
    let want = sigma * sigma / 30.0;
    let ratio = v / want;
    check((ratio - 1.0).abs() < 0.03, format!("variance ratio {ratio:.4}"), &mut fails);
    check(agg.len() >= 100_000, format!("only {} coordinates", agg.len()), &mut fails);
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, format!("{} coords, var / (sigma^2/30) = {ratio:.4}", agg.len()))
}

/// `(ε̃, τ′, γ, K, σ, |D|) → δ` from a 60-digit evaluation (`tests/oracles/gaussian_delta.py`).
const DELTA_ORACLE: [((f64, u64, f64, u64, f64, u64), f64); 22] = [
    ((0.5, 1, 1.0, 1, 1.0, 10), 0.059918561853393326),
    ((1.0, 1, 1.0, 1, 2.0, 10), 0.012693673750664395),
    ((2.0, 4, 1.0, 4, 1.0, 20), 0.20185741410157916),
    ((1.0, 4, 0.5, 10, 0.5, 50), 0.055519678706789428),
    ((5.9, 14, 1.0, 30, 0.01, 2000), 0.0074119963994234973),
    ((5.9, 14, 1.0, 30, 1.0, 2000), 0.0065709828766191915),
    ((5.9, 14, 1.0, 30, 2.0, 2000), 0.00081352541637601015),
    ((3.0, 14, 1.0, 30, 3.0, 100), 0.026132042726152812),
    ((0.8, 14, 1.0, 30, 4.0, 50), 0.090163917402843022),
    ((10.0, 14, 1.0, 30, 1.5, 2000), 0.0021407249312651911),
    ((2.0, 5, 0.2, 5, 0.3, 30), 0.13024755692897039),
    ((1.5, 2, 1.0, 1, 1.2, 5), 0.36725750666869461),
    ((4.0, 9, 1.0, 16, 2.0, 100), 0.025918720379346357),
    ((0.3, 3, 1.0, 2, 3.0, 8), 0.17482316214259209),
    ((7.0, 14, 1.0, 10, 2.5, 200), 0.075352407280037113),
    ((1.0, 1, 1.0, 100, 0.05, 1), 0.92671128125548038),
    ((2.5, 6, 2.0, 25, 1.0, 40), 0.16478224787370725),
    ((6.0, 20, 1.0, 30, 5.0, 60), 0.071911069840583262),
    ((0.1, 1, 1.0, 1, 10.0, 2), 0.020740844230359161),
    ((12.0, 14, 1.0, 30, 2.0, 5000), 0.00012643651088397094),
    ((3.0, 1, 1.0, 1, 3.0, 1), 1.9703043955558824e-6),
    ((1.0, 14, 1.0, 30, 6.0, 20), 0.11848041768073727),
];

fn gp(eps_tilde: f64, tau_prime: u64, gamma: f64, clients: u64, sigma: f64, dataset_size: u64) -> GaussianParams {
    GaussianParams { eps_tilde, tau_prime, gamma, clients, sigma, dataset_size }
}

fn c8_privacy() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let p = subsampling_prob(2000, 14).unwrap();
    let eps = amplified_epsilon(3000.0, p);
    check((eps - 2995.0).abs() <= 0.5, format!("laplace epsilon {eps:.3}"), &mut fails);
    let report = laplace_report(3000.0, 14, 1.0, 0.01, 2000).unwrap();
    check((report.epsilon - eps).abs() < 1e-9, "laplace report disagrees".into(), &mut fails);
    let mut worst = 0.0f64;
    for ((et, tp, g, k, s, d), want) in DELTA_ORACLE {
        let got = gaussian_delta(&gp(et, tp, g, k, s, d)).unwrap();
        let rel = ((got - want) / want).abs();
        worst = worst.max(rel);
        check(rel < 5e-7, format!("delta{:?}: {got:e} vs {want:e}", (et, tp, g, k, s, d)), &mut fails);
    }
    // δ non-increasing in σ and in K; ε non-decreasing in ε̃ and p.
    for (et, tp, d) in [(5.9, 14, 2000), (1.0, 4, 50), (3.0, 9, 100), (0.5, 1, 10)] {
        for k in [1u64, 10, 30] {
            let mut last = f64::INFINITY;
            for i in 0..60 {
                let s = 0.05 * 1.15f64.powi(i);
                let v = gaussian_delta(&gp(et, tp, 1.0, k, s, d)).unwrap();
                check(v <= last * (1.0 + 1e-12), format!("delta rises in sigma at {s}"), &mut fails);
                last = v;
            }
        }
        for s in [0.3, 1.0, 3.0] {
            let mut last = f64::INFINITY;
            for k in 1..=40 {
                let v = gaussian_delta(&gp(et, tp, 1.0, k, s, d)).unwrap();
                check(v <= last * (1.0 + 1e-12), format!("delta rises in K at {k}"), &mut fails);
                last = v;
            }
        }
    }
    for q in [0.001, 0.1, 0.5, 1.0] {
        let mut last = -1.0;
        for i in 0..100 {
            let e = amplified_epsilon(0.1 * 1.1f64.powi(i), q);
            check(e >= last, format!("epsilon falls in eps_tilde at p={q}"), &mut fails);
            last = e;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, format!("epsilon(3000) = {eps:.3}, max delta rel err {worst:.1e}"))
}

fn c9_convergence() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let cfg = ls_config(MechanismConfig::CepamGaussian { n: 2, sigma: 0.01, alpha: 1.0 }, 10, 5, 500, 10, 10);
    let task = Task::build(&cfg.task, cfg.clients, &cfg.client_weights()).unwrap();
    let res = run_experiment(&cfg, &task).unwrap();
    let chk = convergence_check(&cfg, &task, &res).unwrap();
    for c in chk.checks.iter().filter(|c| !c.satisfied) {
        fails.push(format!("T={}: gap {:.3e} > bound {:.3e}", c.t, c.measured_gap, c.bound));
    }
    check(chk.slope <= -0.8, format!("log-log slope {:.3}", chk.slope), &mut fails);
    check(chk.constants.psi > 0.0, "task is homogeneous".into(), &mut fails);
    let secs = start.elapsed().as_secs_f64();
    check(secs < 300.0, format!("took {secs:.1}s"), &mut fails);
    let tightest = chk.checks.iter().map(|c| c.measured_gap / c.bound).fold(0.0, f64::max);
    verdict(
        fails,
        format!(
            "{} indices within bound (max gap/bound {tightest:.2e}), slope {:.3}, final gap {:.3e}",
            chk.checks.len(),
            chk.slope,
            chk.measured_gap
        ),
    )
}

fn logistic_config(mechanism: MechanismConfig) -> FlConfig {
    FlConfig {
        clients: 10,
        tau: 5,
        total_iters: 300,
        gamma: 1.0,
        weights: None,
        seed: 1,
        reps: 10,
        mechanism,
        lr: LrSchedule::Fixed { eta: 0.3 },
        task: TaskConfig::Logistic {
            samples_per_client: 100,
            test_samples: 1000,
            pixel_noise: 0.8,
            regularization: 0.01,
            seed: 3,
        },
        psi_variant: Default::default(),
        theta_safety: 1.1,
        timing: false,
    }
}

fn c10_small_task() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let sigma = 0.3;
    let cepam = logistic_config(MechanismConfig::CepamGaussian { n: 5, sigma, alpha: 1.0 });
    let baseline = logistic_config(MechanismConfig::NoiseThenSdq {
        family: NoiseKind::GaussianBall,
        n: 5,
        scale: sigma,
        alpha: 0.5,
    });
    let task = Task::build(&cepam.task, cepam.clients, &cepam.client_weights()).unwrap();
    let a = run_experiment(&cepam, &task).unwrap();
    let b = run_experiment(&baseline, &task).unwrap();
    let acc_a = a.summary.final_round.accuracy.as_ref().unwrap().mean;
    let acc_b = b.summary.final_round.accuracy.as_ref().unwrap().mean;
    check(acc_a >= acc_b, format!("accuracy {acc_a:.4} < baseline {acc_b:.4}"), &mut fails);
    // Average SNR against its closed form from the measured signal power.
    let coords = (cepam.clients * task.dim()) as f64;
    let (mut measured, mut predicted) = (Vec::new(), Vec::new());
    for run in &a.runs {
        for r in run {
            measured.push(r.snr_db.unwrap());
            predicted.push(10.0 * (r.signal_power / (coords * sigma * sigma)).log10());
        }
    }
    let (ms, ps) = (mean(&measured), mean(&predicted));
    check((ms - ps).abs() < 0.5, format!("SNR {ms:.3} dB vs closed form {ps:.3} dB"), &mut fails);
    let secs = start.elapsed().as_secs_f64();
    check(secs < 600.0, format!("took {secs:.1}s"), &mut fails);
    verdict(
        fails,
        format!("accuracy {acc_a:.4} vs noise-then-SDQ {acc_b:.4}; SNR {ms:.2} dB vs {ps:.2} dB"),
    )
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn c11_determinism() -> Outcome {
    let mut fails = Vec::new();
    let start = Instant::now();
    let exe = env!("CARGO_BIN_EXE_cepam");
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("config.json");
    let mut cfg = ls_config(MechanismConfig::CepamGaussian { n: 3, sigma: 0.01, alpha: 1.0 }, 5, 3, 60, 8, 3);
    cfg.gamma = 2.0;
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let cfg_s = cfg_path.to_str().unwrap().to_string();
    let out_s = out.to_str().unwrap().to_string();
    let runs: Vec<(&str, Vec<String>)> = vec![
        ("fl-run", vec!["fl-run".into(), "--config".into(), cfg_s.clone(), "--out".into(), out_s.clone()]),
        ("bit-audit", vec!["bit-audit".into(), "--config".into(), cfg_s.clone(), "--out".into(), out_s.clone()]),
        ("bound-check", vec!["bound-check".into(), "--config".into(), cfg_s.clone(), "--out".into(), out_s.clone()]),
        (
            "channel-audit",
            ["channel-audit", "--family", "gaussian", "--n", "2", "--scale", "0.01", "--samples", "20000", "--seed", "3", "--out", &out_s]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
        (
            "privacy-budget",
            ["privacy-budget", "--family", "laplace", "--eps-tilde", "3000", "--noise", "0.01", "--tau-prime", "14", "--gamma", "1", "--dataset-size", "2000", "--out", &out_s]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        ),
    ];
    for (name, args) in runs {
        let mut shots = Vec::new();
        for threads in ["1", "4"] {
            let _ = std::fs::remove_dir_all(&out);
            let st = Command::new(exe).args(&args).env("CEPAM_THREADS", threads).output().unwrap();
            if !st.status.success() {
                fails.push(format!("{name} exited with {:?}: {}", st.status.code(), String::from_utf8_lossy(&st.stderr)));
                break;
            }
            shots.push((snapshot(&out), st.stdout));
        }
        if shots.len() == 2 {
            check(shots[0] == shots[1], format!("{name}: outputs differ between runs"), &mut fails);
            check(
                shots[0].0.iter().any(|(f, _)| f == "manifest.json"),
                format!("{name}: no manifest"),
                &mut fails,
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("took {secs:.1}s"), &mut fails);
    verdict(fails, "5 subcommands byte-identical across repeats (1 and 4 threads)".into())
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "exact channel simulation", c1_channel),
        (2, "input independence", c2_independence),
        (3, "rejection statistics", c3_rejection),
        (4, "codec", c4_codec),
        (5, "shared-randomness lockstep", c5_lockstep),
        (6, "distortion", c6_distortion),
        (7, "noisy-average law", c7_noisy_average),
        (8, "privacy accountant", c8_privacy),
        (9, "convergence", c9_convergence),
        (10, "small-task accuracy and SNR", c10_small_task),
        (11, "determinism", c11_determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = fmt_secs(start.elapsed());
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}) [{took}]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{took}]: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
