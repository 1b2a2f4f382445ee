//! Accuracy and group-fairness violations on hard (argmax) predictions.

use crate::classifier::ModelParams;
use crate::data::Dataset;
use crate::divergence::DivergenceSpec;
use crate::error::{FermError, Result};
use crate::estimators::{batch_probs, group_priors, max_regularizer_value};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub dpv: f64,
    /// NaN when some group has no positive sample.
    pub eov: f64,
    /// NaN when some (group, label) cell is empty.
    pub eoddsv: f64,
    pub divergence_value: f64,
    /// `P(ŷ = 1 | s = k)` per group.
    pub group_positive_rates: Vec<f64>,
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / preds.len() as f64
}

fn num_groups(groups: &[usize]) -> usize {
    groups.iter().max().map_or(0, |g| g + 1)
}

fn num_classes(preds: &[usize]) -> usize {
    preds.iter().max().map_or(0, |c| c + 1).max(2)
}

/// `P(ŷ = class | s = k)` for each group `k < num_groups`.
pub fn group_rates(
    preds: &[usize],
    groups: &[usize],
    num_groups: usize,
    class: usize,
) -> Result<Vec<f64>> {
    let mut hits = vec![0usize; num_groups];
    let mut counts = vec![0usize; num_groups];
    for (&p, &s) in preds.iter().zip(groups) {
        counts[s] += 1;
        hits[s] += usize::from(p == class);
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(FermError::EmptyGroup(k));
    }
    Ok(hits.iter().zip(&counts).map(|(&h, &c)| h as f64 / c as f64).collect())
}

fn max_gap(rates: &[f64]) -> f64 {
    let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    if rates.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Largest pairwise gap in positive-prediction rates across groups. With
/// more than two classes the maximum over classes of the one-vs-rest gap.
pub fn dp_violation(preds: &[usize], groups: &[usize]) -> Result<f64> {
    dp_violation_with(preds, groups, num_groups(groups), num_classes(preds))
}

pub fn dp_violation_with(
    preds: &[usize],
    groups: &[usize],
    num_groups: usize,
    num_classes: usize,
) -> Result<f64> {
    if preds.len() != groups.len() {
        return Err(FermError::LengthMismatch {
            left: preds.len(),
            right: groups.len(),
        });
    }
    let mut worst: f64 = 0.0;
    for class in 0..num_classes {
        worst = worst.max(max_gap(&group_rates(preds, groups, num_groups, class)?));
    }
    Ok(worst)
}

fn conditioned_dpv(
    preds: &[usize],
    groups: &[usize],
    labels: &[usize],
    label: usize,
    num_groups: usize,
    num_classes: usize,
) -> Result<f64> {
    let (p, g): (Vec<usize>, Vec<usize>) = preds
        .iter()
        .zip(groups)
        .zip(labels)
        .filter(|(_, &y)| y == label)
        .map(|((&p, &s), _)| (p, s))
        .unzip();
    dp_violation_with(&p, &g, num_groups, num_classes).map_err(|e| match e {
        FermError::EmptyGroup(group) => FermError::EmptyConditionedSubset { group, label },
        other => other,
    })
}

/// DPV restricted to samples with `y = 1`.
pub fn eo_violation(preds: &[usize], groups: &[usize], labels: &[usize]) -> Result<f64> {
    let m = num_classes(preds).max(num_classes(labels));
    conditioned_dpv(preds, groups, labels, 1, num_groups(groups), m)
}

/// Maximum over label classes `c` of the DPV restricted to `y = c`.
pub fn eodds_violation(preds: &[usize], groups: &[usize], labels: &[usize]) -> Result<f64> {
    let m = num_classes(preds).max(num_classes(labels));
    let k = num_groups(groups);
    let mut worst: f64 = 0.0;
    for label in 0..m {
        worst = worst.max(conditioned_dpv(preds, groups, labels, label, k, m)?);
    }
    Ok(worst)
}

/// Expected (accuracy, DPV) when each prediction is replaced by 0 with
/// probability `p`, in closed form.
pub fn naive_baseline_curve(
    preds: &[usize],
    groups: &[usize],
    labels: &[usize],
    p_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if let Some(p) = p_grid.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(FermError::Config(format!("probability {p} outside [0, 1]")));
    }
    let acc = accuracy(preds, labels);
    let dpv = dp_violation(preds, groups)?;
    let zeros = labels.iter().filter(|&&y| y == 0).count() as f64 / labels.len().max(1) as f64;
    Ok(p_grid
        .iter()
        .map(|&p| ((1.0 - p) * acc + p * zeros, (1.0 - p) * dpv))
        .collect())
}

/// Metrics of a model on a dataset. The divergence value is the
/// regularizer `D_f(P(ŷ, s) || P(ŷ) ⊗ P(s))` on soft predictions.
pub fn evaluate(params: &ModelParams, data: &Dataset, spec: &DivergenceSpec) -> Result<MetricsReport> {
    let preds = params.predict_labels(data.full());
    let k = data.num_groups();
    let m = data.num_classes();
    let dpv = dp_violation_with(&preds, data.groups(), k, m)?;
    let eov = conditioned_dpv(&preds, data.groups(), data.labels(), 1, k, m).unwrap_or(f64::NAN);
    let eoddsv = (0..m)
        .map(|c| conditioned_dpv(&preds, data.groups(), data.labels(), c, k, m))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
        .unwrap_or(f64::NAN);
    let priors = group_priors(data)?;
    let probs = batch_probs(params, data.full(), k)?;
    Ok(MetricsReport {
        accuracy: accuracy(&preds, data.labels()),
        dpv,
        eov,
        eoddsv,
        divergence_value: max_regularizer_value(spec, &probs, &priors)?,
        group_positive_rates: group_rates(&preds, data.groups(), k, 1)?,
    })
}
