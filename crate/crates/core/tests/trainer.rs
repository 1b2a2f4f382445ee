mod common;

use fferm::data::synth_biased;
use fferm::trainer::{sgda_step, train, FairObjective, Reduction, SgdaState};
use fferm::{Architecture, Dataset, DivergenceSpec, DualMatrix, FairnessNotion, ModelParams, TrainerConfig};

fn four_points() -> Dataset {
    Dataset::new(vec![-1.0, 0.5, 1.5, 2.0], 1, vec![0, 1, 0, 1], vec![0, 0, 1, 1], 2, 2).unwrap()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[test]
fn full_batch_step_matches_hand_computation() {
    let data = four_points();
    // weights [w0, w1, b0, b1]
    let w = vec![0.3, -0.4, 0.1, -0.2];
    let params = ModelParams::from_flat(Architecture::Linear, 1, 2, w.clone()).unwrap();
    let a0 = vec![1.2, 0.8, 0.9, 1.1];
    let (lambda, eta_t, eta_a) = (2.5, 0.01, 0.02);
    let cfg = TrainerConfig {
        eta_theta: eta_t,
        eta_alpha: eta_a,
        reduction: Reduction::Sum,
        ..TrainerConfig::default()
    };
    let objective = FairObjective::new(&data, DivergenceSpec::Kl, FairnessNotion::DemographicParity).unwrap();
    let mut state = SgdaState {
        params,
        duals: vec![DualMatrix::from_vec(2, 2, a0.clone()).unwrap()],
        steps: 0,
    };
    sgda_step(&objective, &mut state, data.full(), lambda, &cfg.step_sizes()).unwrap();

    // by hand: KL conjugate exp(a - 1), priors (1/2, 1/2)
    let n = 4.0;
    let pi = [0.5, 0.5];
    let fstar = |a: f64| (a - 1.0).exp();
    let xs = [-1.0, 0.5, 1.5, 2.0];
    let ys = [0, 1, 0, 1];
    let ss = [0, 0, 1, 1];
    let mut grad = [0.0; 4];
    let mut joint = [0.0; 4];
    let mut marg = [0.0; 2];
    for i in 0..4 {
        let f = softmax(&[w[0] * xs[i] + w[2], w[1] * xs[i] + w[3]]);
        let mut dz = [0.0; 2];
        for c in 0..2 {
            dz[c] += (f[c] - if c == ys[i] { 1.0 } else { 0.0 }) / n;
        }
        for j in 0..2 {
            let c_j: f64 = (0..2).map(|k| fstar(a0[j * 2 + k]) * pi[k]).sum();
            let up = lambda * (a0[j * 2 + ss[i]] - c_j) / n;
            for c in 0..2 {
                let jac = f[j] * (if j == c { 1.0 } else { 0.0 } - f[c]);
                dz[c] += up * jac;
            }
            joint[j * 2 + ss[i]] += f[j] / n;
            marg[j] += f[j] / n;
        }
        for c in 0..2 {
            grad[c] += dz[c] * xs[i];
            grad[2 + c] += dz[c];
        }
    }
    for i in 0..4 {
        let want = w[i] - eta_t * n * grad[i];
        assert!((state.params.weights()[i] - want).abs() <= 1e-12, "weight {i}");
    }
    for j in 0..2 {
        for k in 0..2 {
            let g = joint[j * 2 + k] - fstar(a0[j * 2 + k]) * pi[k] * marg[j];
            let want = a0[j * 2 + k] + eta_a * n * lambda * g;
            assert!((state.duals[0].get(j, k) - want).abs() <= 1e-12, "dual {j},{k}");
        }
    }
}

#[test]
fn zero_lambda_leaves_duals_alone() {
    let data = four_points();
    let objective = FairObjective::new(&data, DivergenceSpec::ChiSquared, FairnessNotion::DemographicParity).unwrap();
    let mut state = SgdaState {
        params: ModelParams::init(Architecture::Linear, 1, 2, 3),
        duals: vec![DualMatrix::from_vec(2, 2, vec![0.3, -0.2, 0.1, 0.0]).unwrap()],
        steps: 0,
    };
    let before = state.duals.clone();
    let steps = TrainerConfig::default().step_sizes();
    for _ in 0..5 {
        sgda_step(&objective, &mut state, data.full(), 0.0, &steps).unwrap();
    }
    assert_eq!(state.duals, before);
}

#[test]
fn full_batch_descent_is_monotone_without_regularizer() {
    let data = synth_biased(4, 200, 3, 0.3).unwrap();
    let cfg = TrainerConfig {
        eta_theta: 1e-4,
        epochs: 200,
        warmup_epochs: 0,
        ..TrainerConfig::default()
    };
    let report = train(&data, None, &cfg).unwrap();
    for pair in report.records.windows(2) {
        assert!(pair[1].loss <= pair[0].loss + 1e-9, "epoch {}", pair[1].epoch);
    }
}

#[test]
fn training_is_deterministic_under_seed() {
    let data = synth_biased(5, 300, 3, 0.4).unwrap();
    let cfg = TrainerConfig {
        lambda: 20.0,
        epochs: 30,
        warmup_epochs: 5,
        batch_size: Some(16),
        seed: 9,
        ..TrainerConfig::default()
    };
    let csv = |r: &fferm::TrainReport| {
        let mut out = Vec::new();
        r.write_csv(&mut out, None).unwrap();
        out
    };
    let a = train(&data, None, &cfg).unwrap();
    let b = train(&data, None, &cfg).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.params, b.params);
    let c = train(&data, None, &TrainerConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn stationarity_proxy_decreases() {
    let data = synth_biased(0, 2000, 5, 0.4).unwrap();
    for spec in [DivergenceSpec::Kl, DivergenceSpec::ChiSquared] {
        let cfg = TrainerConfig {
            divergence: spec,
            lambda: 15.0,
            batch_size: Some(8),
            epochs: 400,
            warmup_epochs: 60,
            ..TrainerConfig::default()
        };
        let report = train(&data, None, &cfg).unwrap();
        let w = report.records.len() / 10;
        let mean = |r: &[fferm::trainer::EpochRecord]| r.iter().map(|e| e.grad_norm).sum::<f64>() / r.len() as f64;
        let (first, last) = (mean(&report.records[..w]), mean(&report.records[report.records.len() - w..]));
        assert!(last < first, "{spec}: {first} -> {last}");
    }
}

#[test]
fn conditioned_notions_train() {
    let data = synth_biased(6, 400, 3, 0.4).unwrap();
    for notion in [FairnessNotion::EqualOpportunity, FairnessNotion::EqualizedOdds] {
        let cfg = TrainerConfig {
            notion,
            lambda: 30.0,
            epochs: 60,
            warmup_epochs: 10,
            batch_size: Some(32),
            ..TrainerConfig::default()
        };
        let report = train(&data, None, &cfg).unwrap();
        let last = report.last();
        assert!(last.eov_train.is_finite() && last.eoddsv_train.is_finite());
        assert!(last.reg >= 0.0);
    }
}
