#![allow(dead_code)]

use fferm::{Architecture, Dataset, DivergenceSpec, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALL_KINDS: [DivergenceSpec; 10] = [
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

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Probability vector with entries bounded away from zero.
pub fn prob_vector(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Random dataset in which every class and group occurs.
pub fn dataset(rng: &mut impl Rng, n: usize, d: usize, m: usize, k: usize) -> Dataset {
    assert!(n >= m.max(k));
    let features = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let labels = (0..n).map(|i| if i < m { i } else { rng.gen_range(0..m) }).collect();
    let groups = (0..n).map(|i| if i < k { (i + 1) % k } else { rng.gen_range(0..k) }).collect();
    Dataset::new(features, d, labels, groups, m, k).unwrap()
}

/// Model with weights of moderate size so that predictions depend on the input.
pub fn model(rng: &mut impl Rng, arch: Architecture, d: usize, m: usize) -> ModelParams {
    let len = arch.num_params(d, m);
    let weights = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ModelParams::from_flat(arch, d, m, weights).unwrap()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
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

/// Largest relative error, measured against `max(|reference|, floor)`.
pub fn max_rel_err(got: &[f64], reference: &[f64], floor: f64) -> f64 {
    assert_eq!(got.len(), reference.len());
    got.iter()
        .zip(reference)
        .map(|(g, r)| (g - r).abs() / r.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Random point inside the dual domain, away from its boundary.
pub fn dual_point(rng: &mut impl Rng, spec: &DivergenceSpec) -> f64 {
    let dom = spec.dual_domain().unwrap();
    let lo = if dom.lower.is_finite() { dom.lower + 0.05 } else { -3.0 };
    let hi = if dom.upper.is_finite() { dom.upper - 0.05 } else { 3.0 };
    let (lo, hi) = match (dom.lower.is_finite(), dom.upper.is_finite()) {
        (true, false) => (lo, lo + 5.0),
        (false, true) => (hi - 5.0, hi),
        _ => (lo, hi),
    };
    rng.gen_range(lo..hi)
}
