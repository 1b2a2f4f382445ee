//! Stochastic gradient descent-ascent on the separable min-max objective
//!
//! ```text
//! min_θ max_A  L(θ) + λ Σ_slots R_slot(θ, A_slot)
//! ```
//!
//! Each step evaluates both gradients at the current iterate and then moves
//! `θ` down and every `A` up simultaneously, projecting `A` back into the
//! dual domain. Minibatches are consecutive chunks of a seeded per-epoch
//! permutation, so a run is a pure function of its configuration.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifier::{argmax, softmax_backward, Activations, Architecture, ModelParams};
use crate::data::{Batch, Dataset};
use crate::divergence::{optimal_dual_slices, DivergenceSpec};
use crate::error::{FermError, Result};
use crate::estimators::{
    batch_probs_conditioned, group_priors, max_regularizer_value, regularizer_terms_conditioned,
    value_and_grad_a, BatchProbs, Condition, DualMatrix, GroupPriors, RegularizerCoefs,
};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FairnessNotion {
    DemographicParity,
    EqualOpportunity,
    EqualizedOdds,
}

impl fmt::Display for FairnessNotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FairnessNotion::DemographicParity => "dp",
            FairnessNotion::EqualOpportunity => "eo",
            FairnessNotion::EqualizedOdds => "eodds",
        })
    }
}

impl std::str::FromStr for FairnessNotion {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dp" => Ok(FairnessNotion::DemographicParity),
            "eo" => Ok(FairnessNotion::EqualOpportunity),
            "eodds" => Ok(FairnessNotion::EqualizedOdds),
            other => Err(FermError::Config(format!("unknown fairness notion {other:?}"))),
        }
    }
}

/// How per-sample gradients in a minibatch are combined before the step.
///
/// `Mean` divides by the batch size; `Sum` does not, so every sample moves
/// the parameters by the step size regardless of how samples are grouped
/// into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        })
    }
}

impl std::str::FromStr for Reduction {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(FermError::Config(format!("unknown reduction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub divergence: DivergenceSpec,
    pub lambda: f64,
    pub eta_theta: f64,
    pub eta_alpha: f64,
    pub epochs: usize,
    /// Epochs at the start run with `λ = 0`.
    pub warmup_epochs: usize,
    /// `None` means full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub notion: FairnessNotion,
    pub architecture: Architecture,
    pub reduction: Reduction,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            divergence: DivergenceSpec::Kl,
            lambda: 0.0,
            eta_theta: 1e-5,
            eta_alpha: 1e-6,
            epochs: 2000,
            warmup_epochs: 300,
            batch_size: None,
            seed: 0,
            notion: FairnessNotion::DemographicParity,
            architecture: Architecture::Linear,
            reduction: Reduction::Sum,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.divergence.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FermError::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.eta_theta > 0.0 && self.eta_alpha > 0.0) {
            return Err(FermError::Config("step sizes must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(FermError::Config("epochs must be positive".into()));
        }
        match self.batch_size {
            Some(0) => Err(FermError::Config("batch size must be positive".into())),
            Some(b) if b > n => Err(FermError::Config(format!(
                "batch size {b} exceeds dataset size {n}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn batch_len(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(n).min(n)
    }

    pub fn step_sizes(&self) -> StepSizes {
        StepSizes {
            eta_theta: self.eta_theta,
            eta_alpha: self.eta_alpha,
            reduction: self.reduction,
        }
    }

    /// λ in force during `epoch`.
    pub fn lambda_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            0.0
        } else {
            self.lambda
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    pub eta_theta: f64,
    pub eta_alpha: f64,
    pub reduction: Reduction,
}

impl StepSizes {
    /// Multiplier turning a batch-mean gradient into the step direction.
    pub fn batch_scale(&self, batch_len: usize) -> f64 {
        match self.reduction {
            Reduction::Mean => 1.0,
            Reduction::Sum => batch_len as f64,
        }
    }
}

/// One regularizer: which samples it sees and the group priors among them.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub cond: Condition,
    pub priors: GroupPriors,
}

/// The fairness part of the objective for a dataset and notion.
#[derive(Debug, Clone, PartialEq)]
pub struct FairObjective {
    pub spec: DivergenceSpec,
    pub slots: Vec<Slot>,
    pub num_classes: usize,
    pub num_groups: usize,
}

impl FairObjective {
    pub fn new(data: &Dataset, spec: DivergenceSpec, notion: FairnessNotion) -> Result<Self> {
        spec.validate()?;
        let slots = match notion {
            FairnessNotion::DemographicParity => vec![Slot {
                cond: Condition::ALL,
                priors: group_priors(data)?,
            }],
            FairnessNotion::EqualOpportunity => {
                let (cond, priors) = Condition::on_label(data, 1)?;
                vec![Slot { cond, priors }]
            }
            FairnessNotion::EqualizedOdds => (0..data.num_classes())
                .map(|c| Condition::on_label(data, c).map(|(cond, priors)| Slot { cond, priors }))
                .collect::<Result<_>>()?,
        };
        Ok(FairObjective {
            spec,
            slots,
            num_classes: data.num_classes(),
            num_groups: data.num_groups(),
        })
    }

    pub fn initial_duals(&self) -> Result<Vec<DualMatrix>> {
        let a = DualMatrix::independence(&self.spec, self.num_classes, self.num_groups)?;
        Ok(vec![a; self.slots.len()])
    }

    /// Closed-form dual maximizers on a batch. Total variation uses the
    /// boundary dual `sign(p - q) / 2`.
    pub fn optimal_duals(&self, params: &ModelParams, batch: Batch<'_>) -> Result<Vec<DualMatrix>> {
        self.slots
            .iter()
            .map(|slot| {
                let probs = batch_probs_conditioned(params, batch, self.num_groups, slot.cond)?;
                self.dual_from_probs(&probs, &slot.priors)
            })
            .collect()
    }

    fn dual_from_probs(&self, probs: &BatchProbs, priors: &GroupPriors) -> Result<DualMatrix> {
        let q = probs.product(priors);
        let a = match self.spec {
            DivergenceSpec::TotalVariation => probs
                .joint
                .iter()
                .zip(&q)
                .map(|(p, q)| if p == q { 0.0 } else { 0.5 * (p - q).signum() })
                .collect(),
            _ => {
                let dom = self.spec.dual_domain()?;
                optimal_dual_slices(&self.spec, &probs.joint, &q)?
                    .into_iter()
                    .map(|a| dom.project(a))
                    .collect()
            }
        };
        DualMatrix::from_vec(self.num_classes, self.num_groups, a)
    }

    /// `Σ_slots D_f(joint || marginal ⊗ π)` on a batch.
    pub fn divergence(&self, params: &ModelParams, batch: Batch<'_>) -> Result<f64> {
        let mut total = 0.0;
        for slot in &self.slots {
            let probs = batch_probs_conditioned(params, batch, self.num_groups, slot.cond)?;
            total += max_regularizer_value(&self.spec, &probs, &slot.priors)?;
        }
        Ok(total)
    }

    /// Value and gradients of `Σ_slots R_slot` at the given duals.
    pub fn regularizer(
        &self,
        params: &ModelParams,
        duals: &[DualMatrix],
        batch: Batch<'_>,
    ) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let mut value = 0.0;
        let mut grad = vec![0.0; params.len()];
        let mut grad_a = Vec::with_capacity(self.slots.len());
        for (slot, a) in self.slots.iter().zip(duals) {
            let t = regularizer_terms_conditioned(&self.spec, params, a, batch, &slot.priors, slot.cond)?;
            value += t.value;
            grad.iter_mut().zip(&t.grad_theta).for_each(|(g, t)| *g += t);
            grad_a.push(t.grad_a);
        }
        Ok((value, grad, grad_a))
    }
}

/// Iterate of the descent-ascent scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdaState {
    pub params: ModelParams,
    pub duals: Vec<DualMatrix>,
    pub steps: usize,
}

/// Project every entry into the dual domain of `spec`.
pub fn project_dual(spec: &DivergenceSpec, a: &DualMatrix) -> DualMatrix {
    let mut out = a.clone();
    project_in_place(spec, &mut out);
    out
}

fn project_in_place(spec: &DivergenceSpec, a: &mut DualMatrix) {
    if let Ok(dom) = spec.dual_domain() {
        a.as_mut_slice().iter_mut().for_each(|v| *v = dom.project(*v));
    }
}

/// One simultaneous descent step on `θ` and ascent step on the duals.
///
/// With `λ = 0` this is exactly a gradient step on the cross-entropy and
/// the duals are left untouched. Otherwise the duals ascend the full
/// objective, whose `A`-gradient carries the factor `λ`.
pub fn sgda_step(
    objective: &FairObjective,
    state: &mut SgdaState,
    batch: Batch<'_>,
    lambda: f64,
    steps: &StepSizes,
) -> Result<()> {
    if batch.is_empty() {
        return Err(FermError::EmptyBatch);
    }
    let params = &state.params;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;
    let scale = steps.batch_scale(b);
    let mut grad = vec![0.0; params.len()];
    let mut slot_probs = Vec::new();

    if lambda == 0.0 {
        params.add_loss_grad(batch, inv_b, &mut grad);
    } else {
        let coefs = objective
            .slots
            .iter()
            .zip(&state.duals)
            .map(|(slot, a)| RegularizerCoefs::new(&objective.spec, a, &slot.priors))
            .collect::<Result<Vec<_>>>()?;
        slot_probs = vec![BatchProbs::zeros(objective.num_classes, objective.num_groups); coefs.len()];
        let data = batch.data();
        let m = params.num_classes();
        let mut act = Activations::default();
        let mut upstream = vec![0.0; m];
        for i in batch.indices() {
            let x = data.row(i);
            let (y, s) = (data.label(i), data.group(i));
            params.forward_into(x, &mut act);
            upstream.iter_mut().for_each(|u| *u = 0.0);
            for ((slot, c), probs) in objective.slots.iter().zip(&coefs).zip(&mut slot_probs) {
                let w = slot.cond.weight_of(y);
                if w != 0.0 {
                    probs.accumulate(act.probs(), s, w);
                    c.add_upstream(s, lambda * w, &mut upstream);
                }
            }
            let mut dlogits = softmax_backward(act.probs(), &upstream);
            for (dz, p) in dlogits.iter_mut().zip(act.probs()) {
                *dz += p;
            }
            dlogits[y] -= 1.0;
            params.backward_into(x, &act, &dlogits, inv_b, &mut grad);
        }
    }

    let step_theta = steps.eta_theta * scale;
    for (w, g) in state.params.weights_mut().iter_mut().zip(&grad) {
        *w -= step_theta * g;
    }
    if lambda != 0.0 {
        let step_a = steps.eta_alpha * scale * lambda;
        for ((slot, a), mut probs) in objective.slots.iter().zip(&mut state.duals).zip(slot_probs) {
            probs.scale(inv_b);
            let (_, grad_a) = value_and_grad_a(&objective.spec, a, &probs, &slot.priors);
            for (v, g) in a.as_mut_slice().iter_mut().zip(&grad_a) {
                *v += step_a * g;
            }
            project_in_place(&objective.spec, a);
        }
    }
    state.steps += 1;
    let finite = state.params.weights().iter().all(|w| w.is_finite())
        && state.duals.iter().all(|a| a.as_slice().iter().all(|v| v.is_finite()));
    if !finite {
        return Err(FermError::NonFiniteUpdate { step: state.steps });
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub reg: f64,
    pub acc_train: f64,
    pub acc_test: f64,
    pub dpv_train: f64,
    pub dpv_test: f64,
    pub eov_train: f64,
    pub eov_test: f64,
    pub eoddsv_train: f64,
    pub eoddsv_test: f64,
    pub grad_norm: f64,
    /// Robust runs only: shift penalty and radius.
    pub robust: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub params: ModelParams,
    pub duals: Vec<DualMatrix>,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "epoch",
    "loss",
    "reg",
    "acc_train",
    "acc_test",
    "dpv_train",
    "dpv_test",
    "eov_train",
    "eov_test",
    "eoddsv_train",
    "eoddsv_test",
    "grad_norm",
];

impl TrainReport {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("report has at least one epoch")
    }

    /// CSV with one row per epoch. Robust runs append `penalty,delta`; a
    /// manifest hash, when given, is appended as a final column.
    pub fn write_csv(&self, mut out: impl Write, manifest: Option<&str>) -> Result<()> {
        let robust = self.records.iter().any(|r| r.robust.is_some());
        let mut header: Vec<&str> = REPORT_COLUMNS.to_vec();
        if robust {
            header.extend(["penalty", "delta"]);
        }
        if manifest.is_some() {
            header.push("manifest");
        }
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                fmt_num(r.loss),
                fmt_num(r.reg),
                fmt_num(r.acc_train),
                fmt_num(r.acc_test),
                fmt_num(r.dpv_train),
                fmt_num(r.dpv_test),
                fmt_num(r.eov_train),
                fmt_num(r.eov_test),
                fmt_num(r.eoddsv_train),
                fmt_num(r.eoddsv_test),
                fmt_num(r.grad_norm),
            ];
            if robust {
                let (p, d) = r.robust.unwrap_or((f64::NAN, f64::NAN));
                row.push(fmt_num(p));
                row.push(fmt_num(d));
            }
            if let Some(h) = manifest {
                row.push(h.to_string());
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest round-trip representation; deterministic across runs.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Hard-label fairness metrics of one dataset: (acc, dpv, eov, eoddsv).
pub(crate) fn hard_metrics(params: &ModelParams, data: &Dataset) -> (f64, f64, f64, f64) {
    metrics_of(&params.predict_labels(data.full()), data)
}

fn metrics_of(preds: &[usize], data: &Dataset) -> (f64, f64, f64, f64) {
    let (k, m) = (data.num_groups(), data.num_classes());
    let acc = metrics::accuracy(preds, data.labels());
    let dpv = metrics::dp_violation_with(preds, data.groups(), k, m).unwrap_or(f64::NAN);
    let eov = metrics::eo_violation(preds, data.groups(), data.labels()).unwrap_or(f64::NAN);
    let eodds = metrics::eodds_violation(preds, data.groups(), data.labels()).unwrap_or(f64::NAN);
    (acc, dpv, eov, eodds)
}

/// `‖∇_θ (L + λ Σ R(θ, A*(θ)))‖₂` on the full training data, where `A*` is
/// the closed-form dual maximizer, i.e. the gradient of the primal
/// objective.
pub fn stationarity(
    objective: &FairObjective,
    params: &ModelParams,
    data: &Dataset,
    lambda: f64,
) -> Result<f64> {
    let mut grad = params.grad_loss(data.full())?;
    if lambda != 0.0 {
        let duals = objective.optimal_duals(params, data.full())?;
        let (_, g, _) = objective.regularizer(params, &duals, data.full())?;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += lambda * b);
    }
    Ok(grad.iter().map(|v| v * v).sum::<f64>().sqrt())
}

struct TrainStats {
    preds: Vec<usize>,
    loss: f64,
    reg: f64,
    grad_norm: f64,
}

/// Everything logged about the training data, from one forward and one
/// backward sweep. Agrees with `loss`, `divergence` and [`stationarity`].
fn train_stats(
    objective: &FairObjective,
    params: &ModelParams,
    data: &Dataset,
    lambda: f64,
) -> Result<TrainStats> {
    let n = data.len();
    if n == 0 {
        return Err(FermError::EmptyBatch);
    }
    let mut acts = vec![Activations::default(); n];
    let mut probs = vec![BatchProbs::zeros(objective.num_classes, objective.num_groups); objective.slots.len()];
    let mut preds = Vec::with_capacity(n);
    let mut loss = 0.0;
    for (i, act) in acts.iter_mut().enumerate() {
        params.forward_into(data.row(i), act);
        loss -= act.log_prob(data.label(i));
        preds.push(argmax(act.probs()));
        for (slot, p) in objective.slots.iter().zip(&mut probs) {
            let w = slot.cond.weight_of(data.label(i));
            if w != 0.0 {
                p.accumulate(act.probs(), data.group(i), w);
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let mut reg = 0.0;
    for (slot, p) in objective.slots.iter().zip(&mut probs) {
        p.scale(inv_n);
        reg += max_regularizer_value(&objective.spec, p, &slot.priors)?;
    }
    let coefs = if lambda != 0.0 {
        objective
            .slots
            .iter()
            .zip(&probs)
            .map(|(slot, p)| {
                let a = objective.dual_from_probs(p, &slot.priors)?;
                RegularizerCoefs::new(&objective.spec, &a, &slot.priors)
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut grad = vec![0.0; params.len()];
    let mut upstream = vec![0.0; objective.num_classes];
    for (i, act) in acts.iter().enumerate() {
        let y = data.label(i);
        upstream.iter_mut().for_each(|u| *u = 0.0);
        for (slot, c) in objective.slots.iter().zip(&coefs) {
            let w = slot.cond.weight_of(y);
            if w != 0.0 {
                c.add_upstream(data.group(i), lambda * w, &mut upstream);
            }
        }
        let mut dlogits = softmax_backward(act.probs(), &upstream);
        dlogits.iter_mut().zip(act.probs()).for_each(|(dz, p)| *dz += p);
        dlogits[y] -= 1.0;
        params.backward_into(data.row(i), act, &dlogits, inv_n, &mut grad);
    }
    Ok(TrainStats {
        preds,
        loss: loss * inv_n,
        reg,
        grad_norm: grad.iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

pub(crate) fn epoch_record(
    epoch: usize,
    objective: &FairObjective,
    params: &ModelParams,
    train: &Dataset,
    test: Option<&Dataset>,
    lambda: f64,
) -> Result<EpochRecord> {
    let stats = train_stats(objective, params, train, lambda)?;
    let (acc_train, dpv_train, eov_train, eoddsv_train) = metrics_of(&stats.preds, train);
    let (acc_test, dpv_test, eov_test, eoddsv_test) = match test {
        Some(t) => hard_metrics(params, t),
        None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(EpochRecord {
        epoch,
        loss: stats.loss,
        reg: stats.reg,
        acc_train,
        acc_test,
        dpv_train,
        dpv_test,
        eov_train,
        eov_test,
        eoddsv_train,
        eoddsv_test,
        grad_norm: stats.grad_norm,
        robust: None,
    })
}

/// Seeded stream of per-epoch permutations.
pub(crate) struct EpochOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl EpochOrder {
    pub(crate) fn new(n: usize, seed: u64) -> Self {
        EpochOrder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
        }
    }

    pub(crate) fn next_epoch(&mut self) -> &[usize] {
        self.order.shuffle(&mut self.rng);
        &self.order
    }
}

/// Seed for parameter initialization, decorrelated from the batch order.
pub(crate) fn init_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Algorithm driver: warmup with `λ = 0`, then the full objective.
pub fn train(train: &Dataset, test: Option<&Dataset>, cfg: &TrainerConfig) -> Result<TrainReport> {
    cfg.validate(train.len())?;
    let objective = FairObjective::new(train, cfg.divergence, cfg.notion)?;
    let mut state = SgdaState {
        params: ModelParams::init(
            cfg.architecture,
            train.num_features(),
            train.num_classes(),
            init_seed(cfg.seed),
        ),
        duals: objective.initial_duals()?,
        steps: 0,
    };
    let steps = cfg.step_sizes();
    let b = cfg.batch_len(train.len());
    let mut order = EpochOrder::new(train.len(), cfg.seed);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lambda = cfg.lambda_at(epoch);
        for chunk in order.next_epoch().chunks(b) {
            sgda_step(&objective, &mut state, train.batch(chunk), lambda, &steps)?;
        }
        records.push(epoch_record(epoch, &objective, &state.params, train, test, lambda)?);
    }
    Ok(TrainReport {
        records,
        params: state.params,
        duals: state.duals,
    })
}
