//! Minibatch estimators of the prediction/group distributions and the
//! separable regularizer built on them.
//!
//! For a batch `B` the estimators are
//!
//! ```text
//! marginal_j = (1/|B|) Σ_{i∈B} w_i F_j(x_i)
//! joint_jk   = (1/|B|) Σ_{i∈B} w_i F_j(x_i) 1(s_i = k)
//! ```
//!
//! with `w_i = 1` for demographic parity. Conditioning on a label `c` uses
//! `w_i = 1(y_i = c) n / n_c`, which keeps both estimators unbiased for the
//! conditional distributions. The regularizer is
//!
//! ```text
//! R(θ, A) = Σ_jk A_jk joint_jk - f*(A_jk) π_k marginal_j
//! ```
//!
//! which is linear in the samples and concave in `A`.

use crate::classifier::{softmax_backward, Activations, ModelParams};
use crate::data::{Batch, Dataset};
use crate::divergence::{perspective_sum, DivergenceSpec};
use crate::error::{FermError, Result};

/// Full-dataset group frequencies `π_k`, all strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPriors {
    pi: Vec<f64>,
}

impl GroupPriors {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if let Some(k) = pi.iter().position(|&p| !(p > 0.0)) {
            return Err(FermError::EmptyGroup(k));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FermError::InvalidProbVector(format!("priors sum to {sum}")));
        }
        Ok(GroupPriors { pi })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

pub fn group_priors(data: &Dataset) -> Result<GroupPriors> {
    let n = data.len() as f64;
    let counts = data.group_counts();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(FermError::EmptyGroup(k));
    }
    GroupPriors::new(counts.iter().map(|&c| c as f64 / n).collect())
}

/// Which samples contribute to the estimators, and with what weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub label: Option<usize>,
    pub weight: f64,
}

impl Condition {
    pub const ALL: Condition = Condition {
        label: None,
        weight: 1.0,
    };

    /// Condition on `y = label`; errors when some group has no such sample.
    pub fn on_label(data: &Dataset, label: usize) -> Result<(Condition, GroupPriors)> {
        let mut counts = vec![0usize; data.num_groups()];
        for i in 0..data.len() {
            if data.label(i) == label {
                counts[data.group(i)] += 1;
            }
        }
        if let Some(group) = counts.iter().position(|&c| c == 0) {
            return Err(FermError::EmptyConditionedSubset { group, label });
        }
        let total: usize = counts.iter().sum();
        let priors = GroupPriors::new(counts.iter().map(|&c| c as f64 / total as f64).collect())?;
        let cond = Condition {
            label: Some(label),
            weight: data.len() as f64 / total as f64,
        };
        Ok((cond, priors))
    }

    #[inline]
    pub fn weight_of(&self, y: usize) -> f64 {
        match self.label {
            Some(c) if c != y => 0.0,
            _ => self.weight,
        }
    }
}

/// Batch estimates of `P(ŷ = j)` and `P(ŷ = j, s = k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchProbs {
    pub marginal: Vec<f64>,
    /// Row-major `m x k`.
    pub joint: Vec<f64>,
    pub k: usize,
}

impl BatchProbs {
    pub fn joint_at(&self, j: usize, k: usize) -> f64 {
        self.joint[j * self.k + k]
    }

    /// `marginal_j π_k`, row-major, matching `joint`.
    pub fn product(&self, priors: &GroupPriors) -> Vec<f64> {
        self.marginal
            .iter()
            .flat_map(|mj| priors.as_slice().iter().map(move |pk| mj * pk))
            .collect()
    }
}

pub fn batch_probs(params: &ModelParams, batch: Batch<'_>, k: usize) -> Result<BatchProbs> {
    batch_probs_conditioned(params, batch, k, Condition::ALL)
}

pub fn batch_probs_conditioned(
    params: &ModelParams,
    batch: Batch<'_>,
    k: usize,
    cond: Condition,
) -> Result<BatchProbs> {
    if batch.is_empty() {
        return Err(FermError::EmptyBatch);
    }
    let m = params.num_classes();
    let data = batch.data();
    let mut probs = BatchProbs {
        marginal: vec![0.0; m],
        joint: vec![0.0; m * k],
        k,
    };
    let mut act = Activations::default();
    for i in batch.indices() {
        let w = cond.weight_of(data.label(i));
        if w == 0.0 {
            continue;
        }
        params.forward_into(data.row(i), &mut act);
        probs.accumulate(act.probs(), data.group(i), w);
    }
    probs.scale(1.0 / batch.len() as f64);
    Ok(probs)
}

impl BatchProbs {
    pub(crate) fn zeros(m: usize, k: usize) -> Self {
        BatchProbs {
            marginal: vec![0.0; m],
            joint: vec![0.0; m * k],
            k,
        }
    }

    #[inline]
    pub(crate) fn accumulate(&mut self, probs: &[f64], group: usize, weight: f64) {
        for (j, p) in probs.iter().enumerate() {
            self.marginal[j] += weight * p;
            self.joint[j * self.k + group] += weight * p;
        }
    }

    pub(crate) fn scale(&mut self, s: f64) {
        self.marginal.iter_mut().for_each(|v| *v *= s);
        self.joint.iter_mut().for_each(|v| *v *= s);
    }
}

/// The `m x k` dual variables, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMatrix {
    m: usize,
    k: usize,
    a: Vec<f64>,
}

impl DualMatrix {
    pub fn filled(m: usize, k: usize, value: f64) -> Self {
        DualMatrix {
            m,
            k,
            a: vec![value; m * k],
        }
    }

    pub fn from_vec(m: usize, k: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != m * k {
            return Err(FermError::DimensionMismatch {
                expected: m * k,
                got: a.len(),
            });
        }
        Ok(DualMatrix { m, k, a })
    }

    /// Every entry at `f'(1)`, the optimum when predictions and groups are
    /// independent, projected into the dual domain.
    pub fn independence(spec: &DivergenceSpec, m: usize, k: usize) -> Result<Self> {
        let a0 = spec.dual_domain()?.project(spec.independence_dual()?);
        Ok(Self::filled(m, k, a0))
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.k
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.a[j * self.k + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.a
    }

    pub fn check_domain(&self, spec: &DivergenceSpec) -> Result<()> {
        for &a in &self.a {
            spec.conjugate(a)?;
        }
        Ok(())
    }
}

/// Regularizer value with its gradients in `θ` and in `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerTerms {
    pub value: f64,
    pub grad_theta: Vec<f64>,
    /// Row-major `m x k`.
    pub grad_a: Vec<f64>,
}

/// Per-slot coefficients: the upstream gradient on `F_j(x_i)` for a sample
/// in group `s` is `A_js - c_j` where `c_j = Σ_k f*(A_jk) π_k`.
#[derive(Debug, Clone)]
pub(crate) struct RegularizerCoefs {
    k: usize,
    a: Vec<f64>,
    c: Vec<f64>,
}

impl RegularizerCoefs {
    pub(crate) fn new(spec: &DivergenceSpec, a: &DualMatrix, priors: &GroupPriors) -> Result<Self> {
        if priors.len() != a.cols() {
            return Err(FermError::DimensionMismatch {
                expected: a.cols(),
                got: priors.len(),
            });
        }
        a.check_domain(spec)?;
        let c = (0..a.rows())
            .map(|j| {
                (0..a.cols())
                    .map(|k| spec.conjugate_unchecked(a.get(j, k)) * priors.as_slice()[k])
                    .sum()
            })
            .collect();
        Ok(RegularizerCoefs {
            k: a.cols(),
            a: a.as_slice().to_vec(),
            c,
        })
    }

    /// `upstream[j] += scale * (A_{j,group} - c_j)`.
    #[inline]
    pub(crate) fn add_upstream(&self, group: usize, scale: f64, upstream: &mut [f64]) {
        for (j, u) in upstream.iter_mut().enumerate() {
            *u += scale * (self.a[j * self.k + group] - self.c[j]);
        }
    }
}

/// Value of the regularizer and its `A`-gradient from batch estimates.
pub(crate) fn value_and_grad_a(
    spec: &DivergenceSpec,
    a: &DualMatrix,
    probs: &BatchProbs,
    priors: &GroupPriors,
) -> (f64, Vec<f64>) {
    let (m, k) = (a.rows(), a.cols());
    let mut value = 0.0;
    let mut grad = vec![0.0; m * k];
    for j in 0..m {
        for kk in 0..k {
            let ajk = a.get(j, kk);
            let q = priors.as_slice()[kk] * probs.marginal[j];
            let p = probs.joint_at(j, kk);
            value += ajk * p - spec.conjugate_unchecked(ajk) * q;
            grad[j * k + kk] = p - spec.conjugate_slope(ajk) * q;
        }
    }
    (value, grad)
}

/// Regularizer value, `θ`-gradient and `A`-gradient on a batch.
pub fn regularizer_terms(
    spec: &DivergenceSpec,
    params: &ModelParams,
    a: &DualMatrix,
    batch: Batch<'_>,
    priors: &GroupPriors,
) -> Result<RegularizerTerms> {
    regularizer_terms_conditioned(spec, params, a, batch, priors, Condition::ALL)
}

pub fn regularizer_terms_conditioned(
    spec: &DivergenceSpec,
    params: &ModelParams,
    a: &DualMatrix,
    batch: Batch<'_>,
    priors: &GroupPriors,
    cond: Condition,
) -> Result<RegularizerTerms> {
    if batch.is_empty() {
        return Err(FermError::EmptyBatch);
    }
    let coefs = RegularizerCoefs::new(spec, a, priors)?;
    let m = params.num_classes();
    let data = batch.data();
    let inv_b = 1.0 / batch.len() as f64;
    let mut probs = BatchProbs::zeros(m, a.cols());
    let mut grad_theta = vec![0.0; params.len()];
    let mut act = Activations::default();
    let mut upstream = vec![0.0; m];
    for i in batch.indices() {
        let w = cond.weight_of(data.label(i));
        if w == 0.0 {
            continue;
        }
        let x = data.row(i);
        params.forward_into(x, &mut act);
        probs.accumulate(act.probs(), data.group(i), w);
        upstream.iter_mut().for_each(|u| *u = 0.0);
        coefs.add_upstream(data.group(i), w * inv_b, &mut upstream);
        let dlogits = softmax_backward(act.probs(), &upstream);
        params.backward_into(x, &act, &dlogits, 1.0, &mut grad_theta);
    }
    probs.scale(inv_b);
    let (value, grad_a) = value_and_grad_a(spec, a, &probs, priors);
    Ok(RegularizerTerms {
        value,
        grad_theta,
        grad_a,
    })
}

/// `max_A R(θ, A)` in closed form: `D_f(joint || marginal ⊗ π)`.
pub fn max_regularizer_value(
    spec: &DivergenceSpec,
    probs: &BatchProbs,
    priors: &GroupPriors,
) -> Result<f64> {
    perspective_sum(spec, &probs.joint, &probs.product(priors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Architecture;

    fn data_with_counts(counts: &[usize]) -> Dataset {
        let mut groups = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            groups.extend(std::iter::repeat(k).take(c));
        }
        let n = groups.len();
        let labels = (0..n).map(|i| i % 2).collect();
        let features = (0..n).map(|i| i as f64 / n as f64).collect();
        Dataset::new(features, 1, labels, groups, 2, counts.len()).unwrap()
    }

    #[test]
    fn priors_by_counting() {
        assert_eq!(
            group_priors(&data_with_counts(&[5, 5])).unwrap().as_slice(),
            &[0.5, 0.5]
        );
        assert_eq!(
            group_priors(&data_with_counts(&[30, 10])).unwrap().as_slice(),
            &[0.75, 0.25]
        );
        assert_eq!(
            group_priors(&data_with_counts(&[4, 0])).unwrap_err(),
            FermError::EmptyGroup(1)
        );
    }

    #[test]
    fn uniform_model_batch_probs() {
        let data = data_with_counts(&[3, 5]);
        let zero = ModelParams::zeros(Architecture::Linear, 1, 2);
        let rows = [0, 1, 3, 4, 5, 6];
        let probs = batch_probs(&zero, data.batch(&rows), 2).unwrap();
        // two of group 0 and four of group 1 in the batch
        for j in 0..2 {
            assert!((probs.joint_at(j, 0) - 0.5 * 2.0 / 6.0).abs() < 1e-15);
            assert!((probs.joint_at(j, 1) - 0.5 * 4.0 / 6.0).abs() < 1e-15);
            assert!((probs.marginal[j] - 0.5).abs() < 1e-15);
        }
        let empty: [usize; 0] = [];
        assert_eq!(
            batch_probs(&zero, data.batch(&empty), 2).unwrap_err(),
            FermError::EmptyBatch
        );
    }

    #[test]
    fn marginal_is_row_sum_of_joint() {
        let data = crate::data::synth_biased(1, 120, 3, 0.3).unwrap();
        let p = ModelParams::init(Architecture::Linear, 3, 2, 4);
        let probs = batch_probs(&p, data.full(), 2).unwrap();
        for j in 0..2 {
            let row: f64 = (0..2).map(|k| probs.joint_at(j, k)).sum();
            assert!((row - probs.marginal[j]).abs() < 1e-12);
        }
        assert!((probs.marginal.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independence_dual_zeroes_grad_a() {
        // zero model: F uniform, so joint = marginal ⊗ π exactly on the full data
        let data = data_with_counts(&[2, 6]);
        let priors = group_priors(&data).unwrap();
        let zero = ModelParams::zeros(Architecture::Linear, 1, 2);
        for spec in DivergenceSpec::DIFFERENTIABLE {
            let a = DualMatrix::independence(&spec, 2, 2).unwrap();
            let terms = regularizer_terms(&spec, &zero, &a, data.full(), &priors).unwrap();
            assert!(terms.grad_a.iter().all(|g| g.abs() < 1e-15), "{spec}");
            assert!(terms.value.abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_domain_dual_is_rejected() {
        let data = data_with_counts(&[2, 2]);
        let priors = group_priors(&data).unwrap();
        let zero = ModelParams::zeros(Architecture::Linear, 1, 2);
        let a = DualMatrix::filled(2, 2, 0.5);
        assert!(matches!(
            regularizer_terms(&DivergenceSpec::ReverseKl, &zero, &a, data.full(), &priors),
            Err(FermError::OutOfDualDomain { .. })
        ));
    }

    #[test]
    fn conditioned_priors() {
        let data = Dataset::new(
            vec![0.0; 6],
            1,
            vec![1, 1, 0, 1, 0, 0],
            vec![0, 1, 1, 1, 0, 0],
            2,
            2,
        )
        .unwrap();
        let (cond, priors) = Condition::on_label(&data, 1).unwrap();
        assert_eq!(priors.as_slice(), &[1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(cond.weight, 2.0);
        assert_eq!(cond.weight_of(0), 0.0);
        let skewed = Dataset::new(vec![0.0; 3], 1, vec![1, 0, 0], vec![0, 1, 1], 2, 2).unwrap();
        assert_eq!(
            Condition::on_label(&skewed, 1).unwrap_err(),
            FermError::EmptyConditionedSubset { group: 1, label: 1 }
        );
    }
}
