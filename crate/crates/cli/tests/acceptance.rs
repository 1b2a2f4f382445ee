//! Acceptance run: each criterion prints one PASS/FAIL line with its
//! measured numbers and runtime. Set `ACCEPTANCE_ONLY=1,4,7` to run a
//! subset. The process exits non-zero when any selected criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fferm::data::{split, synth_biased, write_csv};
use fferm::divergence::{divergence_direct, divergence_variational, PROB_FLOOR};
use fferm::estimators::{batch_probs, group_priors, regularizer_terms};
use fferm::experiment::{default_lambda_grid, flip_experiment, spearman, ShiftConfig, ShiftMethod};
use fferm::robust::{robust_objective_linf, shift_penalty, PNorm};
use fferm::trainer::train;
use fferm::{Architecture, Dataset, DivergenceSpec, DualMatrix, ModelParams, ProbVector, RobustConfig, TrainerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ALL_KINDS: [DivergenceSpec; 10] = [
    DivergenceSpec::ChiSquared,
    DivergenceSpec::Kl,
    DivergenceSpec::ReverseKl,
    DivergenceSpec::TotalVariation,
    DivergenceSpec::JensenShannon,
    DivergenceSpec::SquaredHellinger,
    DivergenceSpec::Alpha(2.0),
    DivergenceSpec::Alpha(0.5),
    DivergenceSpec::Alpha(-1.0),
    DivergenceSpec::Alpha(3.5),
];

const SWEEP_KINDS: [DivergenceSpec; 5] = [
    DivergenceSpec::Kl,
    DivergenceSpec::ChiSquared,
    DivergenceSpec::ReverseKl,
    DivergenceSpec::JensenShannon,
    DivergenceSpec::SquaredHellinger,
];

const SEEDS: u64 = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn prob_vector(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn dataset(rng: &mut impl Rng, n: usize, d: usize, m: usize, k: usize) -> Dataset {
    let features = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let labels = (0..n).map(|i| if i < m { i } else { rng.gen_range(0..m) }).collect();
    let groups = (0..n).map(|i| if i < k { (i + 1) % k } else { rng.gen_range(0..k) }).collect();
    Dataset::new(features, d, labels, groups, m, k).unwrap()
}

fn model(rng: &mut impl Rng, arch: Architecture, d: usize, m: usize) -> ModelParams {
    let weights = (0..arch.num_params(d, m)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ModelParams::from_flat(arch, d, m, weights).unwrap()
}

fn with_weights(params: &ModelParams, w: &[f64]) -> ModelParams {
    ModelParams::from_flat(params.architecture(), params.num_features(), params.num_classes(), w.to_vec()).unwrap()
}

fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let dn = f(&probe);
            probe[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(1e-3))
        .fold(0.0, f64::max)
}

fn dual_point(rng: &mut impl Rng, spec: &DivergenceSpec) -> f64 {
    let dom = spec.dual_domain().unwrap();
    match (dom.lower.is_finite(), dom.upper.is_finite()) {
        (true, true) => rng.gen_range(dom.lower + 0.05..dom.upper - 0.05),
        (true, false) => rng.gen_range(dom.lower + 0.05..dom.lower + 5.0),
        (false, true) => rng.gen_range(dom.upper - 5.0..dom.upper - 0.05),
        (false, false) => rng.gen_range(-3.0..3.0),
    }
}

fn concave_sup(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 4000;
    let h = (hi - lo) / n as f64;
    let best = (0..=n)
        .map(|i| lo + i as f64 * h)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            a = m1;
        } else {
            b = m2;
        }
    }
    f(0.5 * (a + b))
}

fn conjugate_suite() -> Outcome {
    let mut r = rng(1);
    let (mut gap, mut tight, mut fd, mut bic) = (f64::NEG_INFINITY, 0.0f64, 0.0f64, 0.0f64);
    let h = 1e-5;
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
    for spec in ALL_KINDS {
        let dom = spec.dual_domain().unwrap();
        let lo = dom.lower.max(-40.0) + 1e-9;
        let hi = dom.upper.min(40.0) - 1e-9;
        for _ in 0..1000 {
            let t: f64 = r.gen_range(0.01..8.0);
            let a = dual_point(&mut r, &spec);
            gap = gap.max(a * t - spec.f_value(t).unwrap() - spec.conjugate(a).unwrap());

            let tb: f64 = r.gen_range(0.2..5.0);
            let sup = concave_sup(lo, hi, |a| a * tb - spec.conjugate(a).unwrap());
            bic = bic.max((sup - spec.f_value(tb).unwrap()).abs());

            if !spec.is_differentiable() {
                continue;
            }
            let ta = spec.conjugate_grad(a).unwrap();
            if ta > 0.0 {
                tight = tight.max((a * ta - spec.f_value(ta).unwrap() - spec.conjugate(a).unwrap()).abs());
            }
            let tf: f64 = r.gen_range(0.1..5.0);
            let d1 = (spec.f_value(tf + h).unwrap() - spec.f_value(tf - h).unwrap()) / (2.0 * h);
            let d2 = (spec.conjugate(a + h).unwrap() - spec.conjugate(a - h).unwrap()) / (2.0 * h);
            let d3 = (spec.conjugate_grad(a + h).unwrap() - spec.conjugate_grad(a - h).unwrap()) / (2.0 * h);
            fd = fd
                .max(rel(spec.f_prime(tf).unwrap(), d1))
                .max(rel(spec.conjugate_grad(a).unwrap(), d2))
                .max(rel(spec.conjugate_hess(a).unwrap(), d3));
        }
    }
    let pass = gap <= 1e-12 && tight <= 1e-8 && fd <= 1e-5 && bic <= 1e-6;
    outcome(
        pass,
        format!("max FY gap {gap:.1e}, tight gap {tight:.1e}, derivative rel err {fd:.1e}, biconjugate err {bic:.1e}"),
    )
}

fn variational_equals_direct() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let pv = |v: &[f64]| ProbVector::new(v.to_vec()).unwrap();
    for spec in ALL_KINDS {
        for i in 0..100 {
            let len = 2 + i % 7;
            let (p, q) = (prob_vector(&mut r, len), prob_vector(&mut r, len));
            let direct = divergence_direct(&spec, &pv(&p), &pv(&q)).unwrap();
            let var = divergence_variational(&spec, &pv(&p), &pv(&q)).unwrap();
            worst = worst.max((direct - var).abs());
        }
    }
    let mut ermi_err = 0.0f64;
    for _ in 0..100 {
        let (m, k) = (3, 2);
        let joint = prob_vector(&mut r, m * k);
        let marg: Vec<f64> = (0..m).map(|j| joint[j * k..(j + 1) * k].iter().sum()).collect();
        let prior = prob_vector(&mut r, k);
        let product: Vec<f64> = marg.iter().flat_map(|mj| prior.iter().map(move |pk| mj * pk)).collect();
        let mut ermi = -1.0;
        for j in 0..m {
            for s in 0..k {
                ermi += joint[j * k + s].powi(2) / (marg[j] * prior[s]);
            }
        }
        let got = divergence_direct(&DivergenceSpec::ChiSquared, &pv(&joint), &pv(&product)).unwrap();
        ermi_err = ermi_err.max((got - ermi).abs());
    }
    outcome(
        worst <= 1e-8 && ermi_err <= 1e-9,
        format!("max |variational - direct| {worst:.1e}, ERMI err {ermi_err:.1e}"),
    )
}

fn subsets(n: usize, b: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == b)
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

fn unbiasedness() -> Outcome {
    let lambda = 1.3;
    let mut worst = 0.0f64;
    for spec in ALL_KINDS {
        for seed in 0..5 {
            let mut r = rng(300 + seed);
            let data = dataset(&mut r, 6, 2, 2, 2);
            let params = model(&mut r, Architecture::Linear, 2, 2);
            let priors = group_priors(&data).unwrap();
            let duals = DualMatrix::from_vec(2, 2, (0..4).map(|_| dual_point(&mut r, &spec)).collect()).unwrap();
            let grad = |rows: Option<&[usize]>| {
                let batch = rows.map_or(data.full(), |rows| data.batch(rows));
                let terms = regularizer_terms(&spec, &params, &duals, batch, &priors).unwrap();
                let mut g = params.grad_loss(batch).unwrap();
                g.iter_mut().zip(&terms.grad_theta).for_each(|(a, b)| *a += lambda * b);
                g.extend(terms.grad_a);
                g
            };
            let full = grad(None);
            for b in 1..=3 {
                let batches = subsets(6, b);
                let mut mean = vec![0.0; full.len()];
                for rows in &batches {
                    for (m, g) in mean.iter_mut().zip(grad(Some(rows))) {
                        *m += g / batches.len() as f64;
                    }
                }
                for (m, f) in mean.iter().zip(&full) {
                    worst = worst.max((m - f).abs());
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("max |batch mean - full| {worst:.1e}"))
}

fn gradient_checks() -> Outcome {
    let h = 1e-5;
    let (mut loss, mut prob, mut reg_t, mut reg_a, mut pen) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..10 {
        for arch in [Architecture::Linear, Architecture::OneHidden { width: 4 }] {
            let mut r = rng(400 + seed);
            let data = dataset(&mut r, 10, 3, 3, 2);
            let params = model(&mut r, arch, 3, 3);
            let fd = numeric_grad(params.weights(), h, |w| with_weights(&params, w).loss(data.full()).unwrap());
            loss = loss.max(max_rel_err(&params.grad_loss(data.full()).unwrap(), &fd));
            let x = data.row(2);
            for j in 0..3 {
                let fd = numeric_grad(params.weights(), h, |w| with_weights(&params, w).forward(x).unwrap().probs[j]);
                prob = prob.max(max_rel_err(&params.grad_prob(x, j).unwrap(), &fd));
            }
        }
        for spec in DivergenceSpec::DIFFERENTIABLE {
            let mut r = rng(500 + seed);
            let data = dataset(&mut r, 12, 3, 2, 2);
            let params = model(&mut r, Architecture::Linear, 3, 2);
            let priors = group_priors(&data).unwrap();
            let a: Vec<f64> = (0..4).map(|_| dual_point(&mut r, &spec)).collect();
            let duals = DualMatrix::from_vec(2, 2, a.clone()).unwrap();
            let terms = regularizer_terms(&spec, &params, &duals, data.full(), &priors).unwrap();
            let fd = numeric_grad(params.weights(), h, |w| {
                regularizer_terms(&spec, &with_weights(&params, w), &duals, data.full(), &priors)
                    .unwrap()
                    .value
            });
            reg_t = reg_t.max(max_rel_err(&terms.grad_theta, &fd));
            let fd = numeric_grad(&a, h, |a| {
                let duals = DualMatrix::from_vec(2, 2, a.to_vec()).unwrap();
                regularizer_terms(&spec, &params, &duals, data.full(), &priors).unwrap().value
            });
            reg_a = reg_a.max(max_rel_err(&terms.grad_a, &fd));

            for (p_norm, squared) in [(PNorm::Two, false), (PNorm::Inf, false), (PNorm::Two, true)] {
                let cfg = RobustConfig {
                    delta: 0.1,
                    p_norm,
                    squared_penalty: squared,
                    epsilon_penalty: 0.3,
                    trainer: TrainerConfig {
                        divergence: spec,
                        lambda: 2.0,
                        ..TrainerConfig::default()
                    },
                    ..RobustConfig::default()
                };
                let got = shift_penalty(&spec, &params, &data, &priors, &cfg).unwrap().grad_theta;
                let fd = numeric_grad(params.weights(), h, |w| {
                    shift_penalty(&spec, &with_weights(&params, w), &data, &priors, &cfg)
                        .unwrap()
                        .value
                });
                pen = pen.max(max_rel_err(&got, &fd));
            }
        }
    }
    let pass = loss <= 1e-5 && prob <= 1e-5 && reg_t <= 1e-5 && reg_a <= 1e-6 && pen <= 1e-4;
    outcome(
        pass,
        format!("rel err: loss {loss:.1e}, prob {prob:.1e}, reg θ {reg_t:.1e}, reg A {reg_a:.1e}, shift penalty {pen:.1e}"),
    )
}

fn base_trainer(spec: DivergenceSpec, seed: u64, batch: Option<usize>) -> TrainerConfig {
    TrainerConfig {
        divergence: spec,
        batch_size: batch,
        seed,
        ..TrainerConfig::default()
    }
}

fn final_dpv(data: &Dataset, cfg: &TrainerConfig) -> f64 {
    train(data, None, cfg).unwrap().last().dpv_train
}

fn tradeoff() -> Outcome {
    let data: Vec<Dataset> = (0..SEEDS).map(|s| synth_biased(s, 2000, 5, 0.4).unwrap()).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for spec in SWEEP_KINDS {
        let grid = default_lambda_grid(&spec, 10);
        let mean: Vec<f64> = grid
            .iter()
            .map(|&lambda| {
                (0..SEEDS)
                    .map(|s| {
                        let cfg = TrainerConfig {
                            lambda,
                            ..base_trainer(spec, s, Some(8))
                        };
                        final_dpv(&data[s as usize], &cfg)
                    })
                    .sum::<f64>()
                    / SEEDS as f64
            })
            .collect();
        let rho = spearman(&grid, &mean);
        let (first, last) = (mean[0], mean[mean.len() - 1]);
        pass &= rho <= -0.9 && last <= 0.05 && first >= 0.25;
        parts.push(format!("{spec}: ρ={rho:.3} DPV {first:.3}->{last:.3}"));
    }
    outcome(pass, parts.join("; "))
}

fn batch_robustness() -> Outcome {
    let data: Vec<Dataset> = (0..SEEDS).map(|s| synth_biased(s, 2000, 5, 0.4).unwrap()).collect();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for lambda in [0.0, 15.0, 150.0] {
        let means: Vec<f64> = [Some(1), Some(8), None]
            .iter()
            .map(|&batch| {
                (0..SEEDS)
                    .map(|s| {
                        let cfg = TrainerConfig {
                            lambda,
                            ..base_trainer(DivergenceSpec::Kl, s, batch)
                        };
                        final_dpv(&data[s as usize], &cfg)
                    })
                    .sum::<f64>()
                    / SEEDS as f64
            })
            .collect();
        let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - means.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.max(spread);
        parts.push(format!("λ={lambda}: {:.3}/{:.3}/{:.3}", means[0], means[1], means[2]));
    }
    outcome(worst <= 0.05, format!("KL DPV at b=1/8/full, {}; max spread {worst:.3}", parts.join(", ")))
}

fn corner_oracle(spec: &DivergenceSpec, p: &[f64], q: &[f64], delta: f64) -> f64 {
    let n = p.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << (2 * n)) {
        let mut total = 0.0;
        for j in 0..n {
            let pc = if mask >> j & 1 == 0 { (p[j] + delta).min(1.0) } else { (p[j] - delta).max(0.0) };
            let qc = if mask >> (n + j) & 1 == 0 { (q[j] - delta).max(0.0) } else { (q[j] + delta).min(1.0) };
            let qc = qc.max(PROB_FLOOR);
            total += if pc == 0.0 { qc * spec.f_value(0.0).unwrap_or(0.0) } else { qc * spec.f_value(pc / qc).unwrap() };
        }
        best = best.max(total);
    }
    best
}

fn dro_corners() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..1000 {
        let data = dataset(&mut r, 20, 2, 2, 2);
        let params = model(&mut r, Architecture::Linear, 2, 2);
        let priors = group_priors(&data).unwrap();
        let probs = batch_probs(&params, data.full(), 2).unwrap();
        let q = probs.product(&priors);
        for spec in [DivergenceSpec::Kl, DivergenceSpec::ChiSquared] {
            for delta in [0.01, 0.05, 0.1] {
                let got = robust_objective_linf(&spec, &params, &data, &priors, delta).unwrap();
                let want = corner_oracle(&spec, &probs.joint, &q, delta);
                worst = worst.max((got - want).abs() / want.abs().max(1.0));
                checked += 1;
            }
        }
    }
    outcome(worst <= 1e-10, format!("{checked} instances, max rel err {worst:.1e}"))
}

fn direct(spec: &DivergenceSpec, p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(p, q)| q * spec.f_value(p / q).unwrap()).sum()
}

fn project_ball(v: &mut [f64], r: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > r {
        v.iter_mut().for_each(|x| *x *= r / norm);
    }
}

/// Worst sampled shift over 10⁴ draws on the ℓ2 spheres, then projected
/// ascent with numeric gradients from the five best draws.
fn sampled_worst_shift(spec: &DivergenceSpec, p: &[f64], q: &[f64], delta: f64, rng: &mut impl Rng) -> f64 {
    let n = p.len();
    let base = direct(spec, p, q);
    let gain = |w: &[f64]| {
        let pp: Vec<f64> = (0..n).map(|i| p[i] + w[i]).collect();
        let qq: Vec<f64> = (0..n).map(|i| q[i] + w[n + i]).collect();
        direct(spec, &pp, &qq) - base
    };
    let mut draws: Vec<(f64, Vec<f64>)> = (0..10_000)
        .map(|_| {
            let mut w: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
            for half in w.chunks_mut(n) {
                let norm = half.iter().map(|x| x * x).sum::<f64>().sqrt();
                half.iter_mut().for_each(|x| *x *= delta / norm);
            }
            (gain(&w), w)
        })
        .collect();
    draws.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = draws[0].0;
    for (_, mut w) in draws.into_iter().take(5) {
        for _ in 0..300 {
            let g = numeric_grad(&w, 1e-4 * delta, |v| gain(v));
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().zip(&g).for_each(|(x, g)| *x += 0.5 * delta * g / gn);
            let (u, v) = w.split_at_mut(n);
            project_ball(u, delta);
            project_ball(v, delta);
        }
        best = best.max(gain(&w));
    }
    best
}

fn taylor_fidelity() -> Outcome {
    let mut r = rng(8);
    let mut pass = true;
    let mut parts = Vec::new();
    for spec in [DivergenceSpec::Kl, DivergenceSpec::ChiSquared, DivergenceSpec::SquaredHellinger] {
        let data = dataset(&mut r, 30, 3, 2, 2);
        let params = model(&mut r, Architecture::Linear, 3, 2);
        let priors = group_priors(&data).unwrap();
        let probs = batch_probs(&params, data.full(), 2).unwrap();
        let q = probs.product(&priors);
        let mut err = |delta: f64| {
            let cfg = RobustConfig {
                delta,
                trainer: TrainerConfig {
                    divergence: spec,
                    lambda: 1.0,
                    ..TrainerConfig::default()
                },
                ..RobustConfig::default()
            };
            let linear = shift_penalty(&spec, &params, &data, &priors, &cfg).unwrap().value;
            (linear - sampled_worst_shift(&spec, &probs.joint, &q, delta, &mut r)).abs()
        };
        let (coarse, fine) = (err(1e-2), err(1e-3));
        let ratio = coarse / fine;
        pass &= ratio >= 50.0;
        parts.push(format!("{spec}: errors {coarse:.2e}/{fine:.2e} ratio {ratio:.0}"));
    }
    outcome(pass, parts.join("; "))
}

fn shift_direction() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..SEEDS {
        let data = synth_biased(seed, 2000, 5, 0.4).unwrap();
        let (train_data, test) = split(&data, 0.2, seed).unwrap();
        let mut cfg = ShiftConfig::new(base_trainer(DivergenceSpec::Kl, seed, Some(8)));
        cfg.methods = vec![ShiftMethod::Ferm, ShiftMethod::DroGradNorm, ShiftMethod::DroLinf];
        match flip_experiment(&cfg, &train_data, &test, &[0.2]) {
            Ok(rows) => {
                let dpv = |m: ShiftMethod| rows.iter().find(|r| r.method == m).unwrap().dpv;
                let (ferm, gn, linf) = (dpv(ShiftMethod::Ferm), dpv(ShiftMethod::DroGradNorm), dpv(ShiftMethod::DroLinf));
                let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
                let matched = accs.iter().all(|a| (a - 0.8).abs() <= 0.02);
                let win = matched && gn <= ferm && linf <= ferm;
                wins += win as usize;
                parts.push(format!("seed {seed}: ferm {ferm:.3} gradnorm {gn:.3} linf {linf:.3}{}", if matched { "" } else { " (unmatched)" }));
            }
            Err(e) => parts.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(wins >= 4, format!("{wins}/{SEEDS} seeds robust ≤ f-FERM; {}", parts.join("; ")))
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_fferm"))
        .args(args)
        .env("RUST_LOG", "error")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("synth.csv");
    write_csv(&synth_biased(11, 400, 3, 0.4).unwrap(), fs::File::create(&data_path).unwrap()).unwrap();
    let data = data_path.to_str().unwrap();
    let common = ["--features", "x0,x1,x2", "--label", "label", "--groups", "group", "--seed", "5", "--batch-size", "8"];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("train", vec!["--lambda", "20", "--epochs", "60", "--warmup", "10"]),
        ("train", vec!["--lambda", "5", "--epochs", "30", "--warmup", "5", "--robust", "gradnorm", "--delta", "0.1"]),
        ("train", vec!["--lambda", "5", "--epochs", "30", "--warmup", "5", "--robust", "linf", "--delta", "0.05"]),
        ("sweep", vec!["--div", "kl,chi2", "--lambdas", "0,10", "--epochs", "20", "--warmup", "2"]),
        (
            "shift",
            vec![
                "--flip-fractions",
                "0,0.2",
                "--epochs",
                "20",
                "--warmup",
                "2",
                "--eta-theta",
                "1e-3",
                "--target-acc",
                "0.8",
                "--tolerance",
                "0.1",
                "--delta",
                "0.05",
            ],
        ),
    ];
    let mut compared = 0;
    for (i, (cmd, extra)) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("run{i}_{rep}"));
            let mut args = vec![*cmd, "--data", data, "--out-dir", out.to_str().unwrap()];
            args.extend_from_slice(&common);
            args.extend(extra.iter().copied());
            if !run_cli(&args) {
                return outcome(false, format!("{cmd} {extra:?} failed"));
            }
            outputs.push(csv_files(&out));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return outcome(false, format!("{cmd} {extra:?}: CSVs differ between reruns"));
        }
        compared += outputs[0].len();
    }
    outcome(true, format!("{} CLI runs repeated, {compared} CSV files byte-identical", runs.len()))
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let secs = Duration::from_secs;
    let criteria: [Criterion; 10] = [
        (1, "conjugate oracle suite", secs(5), conjugate_suite),
        (2, "variational = direct", secs(5), variational_equals_direct),
        (3, "unbiasedness by enumeration", secs(10), unbiasedness),
        (4, "gradient checks", secs(30), gradient_checks),
        (5, "tradeoff reproduction", secs(15 * 60), tradeoff),
        (6, "batch-size robustness", secs(15 * 60), batch_robustness),
        (7, "DRO corner oracle", secs(5), dro_corners),
        (8, "Taylor fidelity", secs(60), taylor_fidelity),
        (9, "shift experiment direction", secs(20 * 60), shift_direction),
        (10, "determinism", secs(10 * 60), determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= budget;
        failed += !pass as usize;
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{:.1}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
