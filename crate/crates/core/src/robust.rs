//! Distributionally robust variants of the fairness regularizer.
//!
//! Both modes replace the dual ascent of [`crate::trainer`] by closed-form
//! quantities computed from full-data estimates `p̂ = P(ŷ, s)` and
//! `q̂ = P(ŷ) ⊗ P(s)`, refreshed by one forward pass over the data. The
//! model gradient is then backpropagated over minibatches only.
//!
//! * `GradNorm` linearizes the worst case over an `ℓp` ball of radius `δ`
//!   and adds `λδ(‖α*‖_q + ‖f*(α*)‖_q)` where `α* = f'(p̂/q̂)` is the
//!   gradient of `D_f` in its first argument. The `θ`-gradient of `α*`
//!   comes from the implicit function theorem.
//! * `LinfClamp` maximizes `D_f` over an `ℓ∞` box around `(p̂, q̂)` with the
//!   simplex constraint relaxed. The problem separates over entries and each
//!   term `q f(p/q)` is jointly convex, so the maximum sits on one of four
//!   corners per entry. When `p̂/q̂` is large the corner is
//!   `(min(p̂+δ, 1), max(q̂-δ, 0))`; otherwise another corner can win.

use std::fmt;

use crate::classifier::{softmax_backward, Activations, ModelParams};
use crate::data::{Batch, Dataset};
use crate::divergence::{DivergenceSpec, PROB_FLOOR};
use crate::error::{FermError, Result};
use crate::estimators::{batch_probs_conditioned, BatchProbs, Condition, GroupPriors};
use crate::trainer::{epoch_record, init_seed, EpochOrder, FairObjective, TrainReport, TrainerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustMode {
    GradNorm,
    LinfClamp,
}

impl fmt::Display for RobustMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RobustMode::GradNorm => "gradnorm",
            RobustMode::LinfClamp => "linf",
        })
    }
}

impl std::str::FromStr for RobustMode {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradnorm" => Ok(RobustMode::GradNorm),
            "linf" => Ok(RobustMode::LinfClamp),
            other => Err(FermError::Config(format!("unknown robust mode {other:?}"))),
        }
    }
}

/// Norm of the shift ball. The penalty uses the dual norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PNorm {
    Two,
    Inf,
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PNorm::Two => "2",
            PNorm::Inf => "inf",
        })
    }
}

impl std::str::FromStr for PNorm {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" => Ok(PNorm::Two),
            "inf" => Ok(PNorm::Inf),
            other => Err(FermError::Config(format!("unknown p-norm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig {
    pub mode: RobustMode,
    pub delta: f64,
    pub p_norm: PNorm,
    /// Replace the dual-norm penalty by `λε(‖α*‖₂² + ‖f*(α*)‖₂²)`.
    pub squared_penalty: bool,
    pub epsilon_penalty: f64,
    /// Steps between full-data refreshes of `p̂, q̂`. `None` means once
    /// per epoch.
    pub refresh_every_steps: Option<usize>,
    pub trainer: TrainerConfig,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            mode: RobustMode::GradNorm,
            delta: 0.0,
            p_norm: PNorm::Two,
            squared_penalty: false,
            epsilon_penalty: 0.0,
            refresh_every_steps: None,
            trainer: TrainerConfig::default(),
        }
    }
}

impl RobustConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        self.trainer.validate(n)?;
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(FermError::Config(format!("delta {} must be >= 0", self.delta)));
        }
        if !(self.epsilon_penalty >= 0.0 && self.epsilon_penalty.is_finite()) {
            return Err(FermError::Config(format!(
                "epsilon {} must be >= 0",
                self.epsilon_penalty
            )));
        }
        if self.refresh_every_steps == Some(0) {
            return Err(FermError::Config("refresh interval must be positive".into()));
        }
        let spec = self.trainer.divergence;
        match self.mode {
            RobustMode::GradNorm if !spec.is_differentiable() => Err(FermError::NonDifferentiable {
                kind: spec.name(),
            }),
            RobustMode::LinfClamp => check_linf(&spec),
            _ => Ok(()),
        }
    }
}

fn check_linf(spec: &DivergenceSpec) -> Result<()> {
    match spec {
        DivergenceSpec::Kl | DivergenceSpec::ChiSquared => Ok(()),
        other => Err(FermError::UnsupportedDivergenceForLinf(other.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPenalty {
    pub value: f64,
    pub grad_theta: Vec<f64>,
}

/// Coefficients of a function of `(p̂, q̂)` linearized in both arguments:
/// `gp = ∂/∂p̂`, `gq = ∂/∂q̂`, row-major `m x k`.
#[derive(Debug, Clone, PartialEq)]
struct Linearization {
    k: usize,
    gp: Vec<f64>,
    /// `Σ_k gq_jk π_k`, the per-class pull through the marginal.
    cq: Vec<f64>,
}

impl Linearization {
    fn new(k: usize, gp: Vec<f64>, gq: &[f64], priors: &GroupPriors) -> Self {
        let pi = priors.as_slice();
        let cq = gq.chunks(k).map(|row| row.iter().zip(pi).map(|(g, p)| g * p).sum()).collect();
        Linearization { k, gp, cq }
    }

    #[inline]
    fn add_upstream(&self, group: usize, scale: f64, upstream: &mut [f64]) {
        for (j, u) in upstream.iter_mut().enumerate() {
            *u += scale * (self.gp[j * self.k + group] + self.cq[j]);
        }
    }
}

/// `(t, α*, f*(α*))` per entry, with `t = p/q` and `p` floored.
fn dual_fields(spec: &DivergenceSpec, p: &[f64], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !spec.is_differentiable() {
        return Err(FermError::NonDifferentiable { kind: spec.name() });
    }
    if p.len() != q.len() {
        return Err(FermError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut t = Vec::with_capacity(p.len());
    let mut alpha = Vec::with_capacity(p.len());
    let mut fstar = Vec::with_capacity(p.len());
    for (index, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if qj <= 0.0 {
            return Err(FermError::AbsoluteContinuityViolation { index, p: pj });
        }
        let tj = pj.max(PROB_FLOOR) / qj;
        let a = spec.f_prime(tj)?;
        t.push(tj);
        alpha.push(a);
        fstar.push(tj * a - spec.f_value(tj)?);
    }
    Ok((t, alpha, fstar))
}

/// `α*_jk = f'(p̂_jk / q̂_jk)` and `f*(α*_jk)` from full-data estimates,
/// row-major `m x k`.
pub fn dro_grad_fields(
    spec: &DivergenceSpec,
    params: &ModelParams,
    data: &Dataset,
    priors: &GroupPriors,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let probs = batch_probs_conditioned(params, data.full(), priors.len(), Condition::ALL)?;
    let (_, alpha, fstar) = dual_fields(spec, &probs.joint, &probs.product(priors))?;
    Ok((alpha, fstar))
}

/// Penalty settings detached from the training configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PenaltyShape {
    delta: f64,
    p_norm: PNorm,
    squared: bool,
    epsilon: f64,
}

impl From<&RobustConfig> for PenaltyShape {
    fn from(cfg: &RobustConfig) -> Self {
        PenaltyShape {
            delta: cfg.delta,
            p_norm: cfg.p_norm,
            squared: cfg.squared_penalty,
            epsilon: cfg.epsilon_penalty,
        }
    }
}

/// Dual norm of `v` and a (sub)gradient of it. For the `ℓ1` dual the
/// subgradient at a zero entry is taken as 0.
fn dual_norm(v: &[f64], p: PNorm) -> (f64, Vec<f64>) {
    match p {
        PNorm::Two => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let grad = if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                vec![0.0; v.len()]
            };
            (norm, grad)
        }
        PNorm::Inf => {
            let norm = v.iter().map(|x| x.abs()).sum();
            let grad = v
                .iter()
                .map(|&x| if x == 0.0 { 0.0 } else { x.signum() })
                .collect();
            (norm, grad)
        }
    }
}

/// Penalty value (without λ) and its linearization in `(p̂, q̂)`.
fn penalty_linearization(
    spec: &DivergenceSpec,
    probs: &BatchProbs,
    priors: &GroupPriors,
    shape: PenaltyShape,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let p = &probs.joint;
    let q = probs.product(priors);
    let (t, alpha, fstar) = dual_fields(spec, p, &q)?;
    // weight on dα*_jk in the penalty's total derivative
    let (value, w) = if shape.squared {
        let value = shape.epsilon * (alpha.iter().chain(&fstar).map(|v| v * v).sum::<f64>());
        let w = (0..p.len())
            .map(|i| shape.epsilon * 2.0 * (alpha[i] + fstar[i] * t[i]))
            .collect::<Vec<_>>();
        (value, w)
    } else {
        let (na, ua) = dual_norm(&alpha, shape.p_norm);
        let (nf, uf) = dual_norm(&fstar, shape.p_norm);
        let w = (0..p.len())
            .map(|i| shape.delta * (ua[i] + uf[i] * t[i]))
            .collect::<Vec<_>>();
        (shape.delta * (na + nf), w)
    };
    let mut gp = vec![0.0; p.len()];
    let mut gq = vec![0.0; p.len()];
    for i in 0..p.len() {
        if w[i] == 0.0 {
            continue;
        }
        // dα* = (q dp - p dq) / (q² (f*)''(α*))
        let h = spec.conjugate_curvature(alpha[i]);
        gp[i] = w[i] / (q[i] * h);
        gq[i] = -w[i] * t[i] / (q[i] * h);
    }
    Ok((value, gp, gq))
}

/// `∂D_f/∂p̂ = α*` and `∂D_f/∂q̂ = -f*(α*)`.
fn divergence_linearization(
    spec: &DivergenceSpec,
    probs: &BatchProbs,
    priors: &GroupPriors,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, alpha, fstar) = dual_fields(spec, &probs.joint, &probs.product(priors))?;
    Ok((alpha, fstar.into_iter().map(|v| -v).collect()))
}

/// Accumulate `scale * Σ_i w_i ∇θ[Σ_j upstream_j(i) F_j(x_i)]` over a batch.
fn backprop_linearizations(
    params: &ModelParams,
    batch: Batch<'_>,
    parts: &[(Condition, Linearization)],
    scale: f64,
    grad: &mut [f64],
) {
    let data = batch.data();
    let mut act = Activations::default();
    let mut upstream = vec![0.0; params.num_classes()];
    for i in batch.indices() {
        let (y, s) = (data.label(i), data.group(i));
        upstream.iter_mut().for_each(|u| *u = 0.0);
        let mut any = false;
        for (cond, lin) in parts {
            let w = cond.weight_of(y);
            if w != 0.0 {
                lin.add_upstream(s, w, &mut upstream);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let x = data.row(i);
        params.forward_into(x, &mut act);
        let dlogits = softmax_backward(act.probs(), &upstream);
        params.backward_into(x, &act, &dlogits, scale, grad);
    }
}

/// Small-shift penalty `λδ(‖α*‖_q + ‖f*(α*)‖_q)` on the full data and its
/// exact `θ`-gradient.
pub fn shift_penalty(
    spec: &DivergenceSpec,
    params: &ModelParams,
    data: &Dataset,
    priors: &GroupPriors,
    cfg: &RobustConfig,
) -> Result<ShiftPenalty> {
    shift_penalty_conditioned(spec, params, data, priors, Condition::ALL, cfg)
}

pub fn shift_penalty_conditioned(
    spec: &DivergenceSpec,
    params: &ModelParams,
    data: &Dataset,
    priors: &GroupPriors,
    cond: Condition,
    cfg: &RobustConfig,
) -> Result<ShiftPenalty> {
    let lambda = cfg.trainer.lambda;
    let probs = batch_probs_conditioned(params, data.full(), priors.len(), cond)?;
    let (value, gp, gq) = penalty_linearization(spec, &probs, priors, cfg.into())?;
    let mut grad_theta = vec![0.0; params.len()];
    let lin = Linearization::new(priors.len(), gp, &gq, priors);
    let scale = lambda / data.len() as f64;
    if scale != 0.0 {
        backprop_linearizations(params, data.full(), &[(cond, lin)], scale, &mut grad_theta);
    }
    Ok(ShiftPenalty {
        value: lambda * value,
        grad_theta,
    })
}

/// One entry's worst corner: (value, ∂/∂p̂, ∂/∂q̂, q floored).
fn linf_entry(spec: &DivergenceSpec, p: f64, q: f64, delta: f64) -> Result<(f64, f64, f64, bool)> {
    let p_up = (p + delta).min(1.0);
    let p_dn = (p - delta).max(0.0);
    let q_dn = (q - delta).max(0.0);
    let q_up = (q + delta).min(1.0);
    let corners = [(p_up, q_dn), (p_up, q_up), (p_dn, q_dn), (p_dn, q_up)];
    let mut best: Option<(f64, f64, f64)> = None;
    for (pc, qc) in corners {
        let v = linf_term(spec, pc, qc.max(PROB_FLOOR))?;
        if best.map_or(true, |(b, _, _)| v > b) {
            best = Some((v, pc, qc));
        }
    }
    let (value, pc, qc) = best.expect("four corners");
    let floored = qc < PROB_FLOOR;
    let qe = qc.max(PROB_FLOOR);
    let t = pc / qe;
    let p_free = pc > 0.0 && pc < 1.0;
    let q_free = qc > 0.0 && qc < 1.0 && !floored;
    let (gp, gq) = if t > 0.0 {
        let fp = spec.f_prime(t)?;
        (
            if p_free { fp } else { 0.0 },
            if q_free { spec.f_value(t)? - t * fp } else { 0.0 },
        )
    } else {
        (0.0, if q_free { spec.f_at_zero().unwrap_or(0.0) } else { 0.0 })
    };
    Ok((value, gp, gq, floored))
}

fn linf_term(spec: &DivergenceSpec, p: f64, q: f64) -> Result<f64> {
    if p == 0.0 {
        return Ok(q * spec.f_at_zero().unwrap_or(f64::INFINITY));
    }
    Ok(q * spec.f_value(p / q)?)
}

/// `max D_f(P || Q)` over the `ℓ∞` box of radius `δ` around `(p̂, q̂)` with
/// entries clipped to `[0, 1]` and no renormalization. Clipped `q` entries
/// below the probability floor are raised to it.
pub fn linf_worst_case(spec: &DivergenceSpec, p: &[f64], q: &[f64], delta: f64) -> Result<f64> {
    Ok(linf_parts(spec, p, q, delta)?.0)
}

fn linf_parts(
    spec: &DivergenceSpec,
    p: &[f64],
    q: &[f64],
    delta: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>, bool)> {
    check_linf(spec)?;
    if !(delta >= 0.0) {
        return Err(FermError::Config(format!("delta {delta} must be >= 0")));
    }
    if p.len() != q.len() {
        return Err(FermError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut total = 0.0;
    let mut gp = Vec::with_capacity(p.len());
    let mut gq = Vec::with_capacity(p.len());
    let mut any_floor = false;
    for (&pj, &qj) in p.iter().zip(q) {
        let (v, a, b, floored) = linf_entry(spec, pj, qj, delta)?;
        total += v;
        gp.push(a);
        gq.push(b);
        any_floor |= floored;
    }
    Ok((total, gp, gq, any_floor))
}

/// Worst-case `D_f(P(ŷ, s) || P(ŷ) ⊗ P(s))` over an `ℓ∞` box on the full
/// data. Only KL and χ² are supported.
pub fn robust_objective_linf(
    spec: &DivergenceSpec,
    params: &ModelParams,
    data: &Dataset,
    priors: &GroupPriors,
    delta: f64,
) -> Result<f64> {
    check_linf(spec)?;
    let probs = batch_probs_conditioned(params, data.full(), priors.len(), Condition::ALL)?;
    let (value, _, _, floored) = linf_parts(spec, &probs.joint, &probs.product(priors), delta)?;
    if floored {
        log::warn!("clamped product entries raised to the probability floor");
    }
    Ok(value)
}

/// Value of the fairness term and its linearization for one slot.
fn slot_linearization(
    cfg: &RobustConfig,
    probs: &BatchProbs,
    priors: &GroupPriors,
    lambda: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let spec = &cfg.trainer.divergence;
    match cfg.mode {
        RobustMode::GradNorm => {
            let (pen, mut gp, mut gq) = penalty_linearization(spec, probs, priors, cfg.into())?;
            let (dp, dq) = divergence_linearization(spec, probs, priors)?;
            gp.iter_mut().zip(&dp).for_each(|(a, b)| *a = lambda * (*a + b));
            gq.iter_mut().zip(&dq).for_each(|(a, b)| *a = lambda * (*a + b));
            Ok((lambda * pen, gp, gq))
        }
        RobustMode::LinfClamp => {
            let (value, mut gp, mut gq, _) =
                linf_parts(spec, &probs.joint, &probs.product(priors), cfg.delta)?;
            gp.iter_mut().for_each(|v| *v *= lambda);
            gq.iter_mut().for_each(|v| *v *= lambda);
            Ok((lambda * value, gp, gq))
        }
    }
}

/// Full-data refresh: the robust term's value per unit λ and the frozen
/// linearizations used by the following minibatch steps.
fn refresh(
    objective: &FairObjective,
    params: &ModelParams,
    data: &Dataset,
    cfg: &RobustConfig,
    lambda: f64,
) -> Result<(f64, Vec<(Condition, Linearization)>)> {
    let mut value = 0.0;
    let mut parts = Vec::with_capacity(objective.slots.len());
    for slot in &objective.slots {
        let probs = batch_probs_conditioned(params, data.full(), objective.num_groups, slot.cond)?;
        let (v, gp, gq) = slot_linearization(cfg, &probs, &slot.priors, lambda)?;
        value += v;
        parts.push((slot.cond, Linearization::new(objective.num_groups, gp, &gq, &slot.priors)));
    }
    Ok((value, parts))
}

/// Reported robust term: the shift penalty in `GradNorm` mode, the excess
/// of the worst case over the nominal divergence in `LinfClamp` mode.
fn robust_term(
    objective: &FairObjective,
    params: &ModelParams,
    data: &Dataset,
    cfg: &RobustConfig,
) -> Result<f64> {
    let unit = RobustConfig {
        trainer: TrainerConfig {
            lambda: 1.0,
            ..cfg.trainer.clone()
        },
        ..cfg.clone()
    };
    let (value, _) = refresh(objective, params, data, &unit, 1.0)?;
    Ok(match cfg.mode {
        RobustMode::GradNorm => value,
        RobustMode::LinfClamp => value - objective.divergence(params, data.full())?,
    })
}

/// `‖∇θ(L + robust fairness term)‖₂` on the full data.
fn robust_stationarity(
    objective: &FairObjective,
    params: &ModelParams,
    data: &Dataset,
    cfg: &RobustConfig,
    lambda: f64,
) -> Result<f64> {
    let mut grad = params.grad_loss(data.full())?;
    if lambda != 0.0 {
        let (_, parts) = refresh(objective, params, data, cfg, lambda)?;
        backprop_linearizations(params, data.full(), &parts, 1.0 / data.len() as f64, &mut grad);
    }
    Ok(grad.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Full objective `L + λ·(robust fairness term)` on the full data.
pub fn robust_objective_value(params: &ModelParams, data: &Dataset, cfg: &RobustConfig) -> Result<f64> {
    let objective = FairObjective::new(data, cfg.trainer.divergence, cfg.trainer.notion)?;
    let lambda = cfg.trainer.lambda;
    let mut value = params.loss(data.full())?;
    if lambda != 0.0 {
        let (v, _) = refresh(&objective, params, data, cfg, lambda)?;
        if cfg.mode == RobustMode::GradNorm {
            value += lambda * objective.divergence(params, data.full())?;
        }
        value += v;
    }
    Ok(value)
}

fn robust_train(train: &Dataset, test: Option<&Dataset>, cfg: &RobustConfig) -> Result<TrainReport> {
    cfg.validate(train.len())?;
    let tc = &cfg.trainer;
    let objective = FairObjective::new(train, tc.divergence, tc.notion)?;
    let mut params = ModelParams::init(
        tc.architecture,
        train.num_features(),
        train.num_classes(),
        init_seed(tc.seed),
    );
    let steps = tc.step_sizes();
    let n = train.len();
    let b = tc.batch_len(n);
    let refresh_every = cfg.refresh_every_steps.unwrap_or_else(|| n.div_ceil(b));
    let mut order = EpochOrder::new(n, tc.seed);
    let mut records = Vec::with_capacity(tc.epochs);
    let mut step = 0usize;
    let mut parts = Vec::new();
    let mut parts_lambda = f64::NAN;
    let mut grad = vec![0.0; params.len()];
    for epoch in 0..tc.epochs {
        let lambda = tc.lambda_at(epoch);
        for chunk in order.next_epoch().chunks(b) {
            if lambda != 0.0 && (step % refresh_every == 0 || parts_lambda != lambda) {
                parts = refresh(&objective, &params, train, cfg, lambda)?.1;
                parts_lambda = lambda;
            }
            let batch = train.batch(chunk);
            let inv_b = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g = 0.0);
            params.add_loss_grad(batch, inv_b, &mut grad);
            if lambda != 0.0 {
                backprop_linearizations(&params, batch, &parts, inv_b, &mut grad);
            }
            let eta = steps.eta_theta * steps.batch_scale(chunk.len());
            params.weights_mut().iter_mut().zip(&grad).for_each(|(w, g)| *w -= eta * g);
            step += 1;
            if !params.weights().iter().all(|w| w.is_finite()) {
                return Err(FermError::NonFiniteUpdate { step });
            }
        }
        let mut record = epoch_record(epoch, &objective, &params, train, test, lambda)?;
        record.grad_norm = robust_stationarity(&objective, &params, train, cfg, lambda)?;
        record.robust = Some((robust_term(&objective, &params, train, cfg)?, cfg.delta));
        records.push(record);
    }
    let duals = objective.optimal_duals(&params, train.full())?;
    Ok(TrainReport {
        records,
        params,
        duals,
    })
}

/// Gradient descent on `L + λ D_f(p̂ || q̂) + shift penalty`. `p̂, q̂` and
/// the dual fields come from a full forward pass every
/// `refresh_every_steps` steps; backpropagation runs on minibatches only.
pub fn robust_train_smallshift(
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &RobustConfig,
) -> Result<TrainReport> {
    if cfg.mode != RobustMode::GradNorm {
        return Err(FermError::Config("small-shift training needs gradnorm mode".into()));
    }
    robust_train(train, test, cfg)
}

/// Gradient descent on `L + λ · worst-case D_f` over an `ℓ∞` box. Clipped
/// coordinates contribute no gradient.
pub fn robust_train_linf(train: &Dataset, test: Option<&Dataset>, cfg: &RobustConfig) -> Result<TrainReport> {
    if cfg.mode != RobustMode::LinfClamp {
        return Err(FermError::Config("linf training needs linf mode".into()));
    }
    robust_train(train, test, cfg)
}
