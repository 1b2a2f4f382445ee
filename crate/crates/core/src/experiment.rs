//! Desk-scale experiment protocols: λ sweeps for tradeoff curves and the
//! distribution-shift comparison at matched accuracy.

use std::fmt;
use std::io::Write;

use statrs::statistics::{Data, OrderStatistics, RankTieBreaker};

use crate::data::{flip_sensitive, Dataset};
use crate::divergence::DivergenceSpec;
use crate::error::{FermError, Result};
use crate::robust::{robust_train_linf, robust_train_smallshift, PNorm, RobustConfig, RobustMode};
use crate::trainer::{fmt_num, hard_metrics, train, TrainReport, TrainerConfig};

/// Upper end of the default λ range for each divergence.
pub fn default_lambda_max(spec: &DivergenceSpec) -> f64 {
    match spec {
        DivergenceSpec::Kl => 150.0,
        DivergenceSpec::ChiSquared => 300.0,
        DivergenceSpec::ReverseKl => 50.0,
        DivergenceSpec::JensenShannon => 110.0,
        DivergenceSpec::SquaredHellinger => 250.0,
        DivergenceSpec::TotalVariation | DivergenceSpec::Alpha(_) => 100.0,
    }
}

/// Default robust-sweep grids.
pub const DRO_LAMBDA_GRID: [f64; 8] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];
pub const DRO_DELTA_GRID: [f64; 10] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

/// `0` followed by `points` log-spaced values ending at `max`, spanning two
/// decades.
pub fn log_grid(max: f64, points: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if points == 1 {
        grid.push(max);
    } else if points > 1 {
        let lo = (max / 100.0).ln();
        let hi = max.ln();
        let step = (hi - lo) / (points - 1) as f64;
        grid.extend((0..points).map(|i| (lo + step * i as f64).exp()));
        *grid.last_mut().unwrap() = max;
    }
    grid
}

pub fn default_lambda_grid(spec: &DivergenceSpec, points: usize) -> Vec<f64> {
    log_grid(default_lambda_max(spec), points)
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let rx = Data::new(x.to_vec()).ranks(RankTieBreaker::Average);
    let ry = Data::new(y.to_vec()).ranks(RankTieBreaker::Average);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub accuracy: f64,
    pub dpv: f64,
    pub eov: f64,
    pub eoddsv: f64,
}

/// Train one model per λ and measure it on `eval` (the training data when
/// `None`). Rows come back sorted by λ.
pub fn sweep(
    train_data: &Dataset,
    eval: Option<&Dataset>,
    base: &TrainerConfig,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    let mut lambdas = grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    lambdas
        .into_iter()
        .map(|lambda| {
            let cfg = TrainerConfig {
                lambda,
                ..base.clone()
            };
            let report = train(train_data, None, &cfg)?;
            let (accuracy, dpv, eov, eoddsv) = hard_metrics(&report.params, eval.unwrap_or(train_data));
            Ok(SweepPoint {
                lambda,
                accuracy,
                dpv,
                eov,
                eoddsv,
            })
        })
        .collect()
}

pub fn write_sweep_csv(points: &[SweepPoint], mut out: impl Write, manifest: Option<&str>) -> Result<()> {
    let mut header = String::from("lambda,accuracy,dpv,eov,eoddsv");
    if manifest.is_some() {
        header.push_str(",manifest");
    }
    writeln!(out, "{header}")?;
    for p in points {
        let mut row = [p.lambda, p.accuracy, p.dpv, p.eov, p.eoddsv]
            .iter()
            .map(|v| fmt_num(*v))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(h) = manifest {
            row.push(',');
            row.push_str(h);
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// One robust run per `(λ, δ)` pair. Rows come back sorted by `(δ, λ)`.
pub fn robust_sweep(
    train_data: &Dataset,
    eval: Option<&Dataset>,
    base: &RobustConfig,
    lambdas: &[f64],
    deltas: &[f64],
) -> Result<Vec<(f64, SweepPoint)>> {
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let mut deltas = deltas.to_vec();
    deltas.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(lambdas.len() * deltas.len());
    for &delta in &deltas {
        for &lambda in &lambdas {
            let cfg = RobustConfig {
                delta,
                trainer: TrainerConfig {
                    lambda,
                    ..base.trainer.clone()
                },
                ..base.clone()
            };
            let report = match cfg.mode {
                RobustMode::GradNorm => robust_train_smallshift(train_data, None, &cfg)?,
                RobustMode::LinfClamp => robust_train_linf(train_data, None, &cfg)?,
            };
            let (accuracy, dpv, eov, eoddsv) = hard_metrics(&report.params, eval.unwrap_or(train_data));
            rows.push((
                delta,
                SweepPoint {
                    lambda,
                    accuracy,
                    dpv,
                    eov,
                    eoddsv,
                },
            ));
        }
    }
    Ok(rows)
}

pub fn write_robust_sweep_csv(
    rows: &[(f64, SweepPoint)],
    mut out: impl Write,
    manifest: Option<&str>,
) -> Result<()> {
    let mut header = String::from("lambda,delta,accuracy,dpv,eov,eoddsv");
    if manifest.is_some() {
        header.push_str(",manifest");
    }
    writeln!(out, "{header}")?;
    for (delta, p) in rows {
        let mut row = [p.lambda, *delta, p.accuracy, p.dpv, p.eov, p.eoddsv]
            .iter()
            .map(|v| fmt_num(*v))
            .collect::<Vec<_>>()
            .join(",");
        if let Some(h) = manifest {
            row.push(',');
            row.push_str(h);
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub const BISECTION_ITERS: usize = 20;

/// Find `λ ∈ [lo, hi]` whose run has accuracy within `tol` of `target`,
/// assuming accuracy falls as λ grows. `run` returns the accuracy and an
/// arbitrary payload. The search stops early once a run lands within
/// `tol / 4`; otherwise the closest run is returned if it is within `tol`.
/// At most [`BISECTION_ITERS`] runs are made after the two endpoints.
pub fn bisect_lambda<T>(
    target: f64,
    tol: f64,
    lo: f64,
    hi: f64,
    mut run: impl FnMut(f64) -> Result<(f64, T)>,
) -> Result<(f64, f64, T)> {
    let aim = 0.25 * tol;
    let mut best: Option<(f64, f64, T)> = None;
    let consider = |lambda: f64, acc: f64, payload: T, best: &mut Option<(f64, f64, T)>| {
        let better = best.as_ref().map_or(true, |(_, a, _)| (acc - target).abs() < (a - target).abs());
        if better {
            *best = Some((lambda, acc, payload));
        }
    };
    let (acc_lo, payload) = run(lo)?;
    if (acc_lo - target).abs() <= aim {
        return Ok((lo, acc_lo, payload));
    }
    consider(lo, acc_lo, payload, &mut best);
    if acc_lo > target {
        let (acc_hi, payload) = run(hi)?;
        if (acc_hi - target).abs() <= aim {
            return Ok((hi, acc_hi, payload));
        }
        consider(hi, acc_hi, payload, &mut best);
        if acc_hi < target {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..BISECTION_ITERS {
                let mid = 0.5 * (a + b);
                let (acc, payload) = run(mid)?;
                if (acc - target).abs() <= aim {
                    return Ok((mid, acc, payload));
                }
                consider(mid, acc, payload, &mut best);
                if acc > target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
    }
    match best {
        Some(found) if (found.1 - target).abs() <= tol => Ok(found),
        _ => Err(FermError::TargetUnreachable {
            target,
            best: best.map_or(f64::NAN, |(_, a, _)| a),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMethod {
    Erm,
    Ferm,
    DroGradNorm,
    DroLinf,
}

impl ShiftMethod {
    pub const ALL: [ShiftMethod; 4] = [
        ShiftMethod::Erm,
        ShiftMethod::Ferm,
        ShiftMethod::DroGradNorm,
        ShiftMethod::DroLinf,
    ];
}

impl fmt::Display for ShiftMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftMethod::Erm => "erm",
            ShiftMethod::Ferm => "ferm",
            ShiftMethod::DroGradNorm => "dro-gradnorm",
            ShiftMethod::DroLinf => "dro-linf",
        })
    }
}

impl std::str::FromStr for ShiftMethod {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        ShiftMethod::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| FermError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConfig {
    pub trainer: TrainerConfig,
    pub delta: f64,
    pub p_norm: PNorm,
    /// Divergence of the `ℓ∞` mode; must be KL or χ².
    pub linf_divergence: DivergenceSpec,
    pub target_accuracy: f64,
    pub tolerance: f64,
    /// Upper end of the λ bisection for f-FERM; robust modes use
    /// the largest value of [`DRO_LAMBDA_GRID`].
    pub lambda_max: f64,
    pub methods: Vec<ShiftMethod>,
}

impl ShiftConfig {
    pub fn new(trainer: TrainerConfig) -> Self {
        let lambda_max = default_lambda_max(&trainer.divergence);
        let linf_divergence = match trainer.divergence {
            DivergenceSpec::ChiSquared => DivergenceSpec::ChiSquared,
            _ => DivergenceSpec::Kl,
        };
        ShiftConfig {
            trainer,
            delta: 0.05,
            p_norm: PNorm::Two,
            linf_divergence,
            target_accuracy: 0.8,
            tolerance: 0.02,
            lambda_max,
            methods: ShiftMethod::ALL.to_vec(),
        }
    }

    fn robust(&self, mode: RobustMode, lambda: f64) -> RobustConfig {
        let divergence = match mode {
            RobustMode::LinfClamp => self.linf_divergence,
            RobustMode::GradNorm => self.trainer.divergence,
        };
        RobustConfig {
            mode,
            delta: self.delta,
            p_norm: self.p_norm,
            trainer: TrainerConfig {
                divergence,
                lambda,
                ..self.trainer.clone()
            },
            ..RobustConfig::default()
        }
    }

    /// Train one model of `method` with fairness weight `lambda`.
    pub fn run(&self, method: ShiftMethod, train_data: &Dataset, lambda: f64) -> Result<TrainReport> {
        match method {
            ShiftMethod::Erm => train(
                train_data,
                None,
                &TrainerConfig {
                    lambda: 0.0,
                    ..self.trainer.clone()
                },
            ),
            ShiftMethod::Ferm => train(
                train_data,
                None,
                &TrainerConfig {
                    lambda,
                    ..self.trainer.clone()
                },
            ),
            ShiftMethod::DroGradNorm => {
                robust_train_smallshift(train_data, None, &self.robust(RobustMode::GradNorm, lambda))
            }
            ShiftMethod::DroLinf => {
                robust_train_linf(train_data, None, &self.robust(RobustMode::LinfClamp, lambda))
            }
        }
    }

    /// Robust methods search at least as far as f-FERM so that both can
    /// reach the same accuracy.
    fn lambda_upper(&self, method: ShiftMethod) -> f64 {
        match method {
            ShiftMethod::Ferm => self.lambda_max,
            _ => self.lambda_max.max(DRO_LAMBDA_GRID[DRO_LAMBDA_GRID.len() - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub method: ShiftMethod,
    pub setting: String,
    pub lambda: f64,
    pub train_accuracy: f64,
    pub accuracy: f64,
    pub dpv: f64,
}

/// Train `method` at the λ whose accuracy on `match_on` (the training data
/// when `None`) is within tolerance of the target. ERM is trained once at
/// `λ = 0`. Returns `(λ, matched accuracy, report)`.
pub fn matched_run(
    cfg: &ShiftConfig,
    method: ShiftMethod,
    train_data: &Dataset,
    match_on: Option<&Dataset>,
) -> Result<(f64, f64, TrainReport)> {
    let run = |lambda: f64| {
        let report = cfg.run(method, train_data, lambda)?;
        let acc = match match_on {
            Some(data) => hard_metrics(&report.params, data).0,
            None => report.last().acc_train,
        };
        Ok((acc, report))
    };
    if method == ShiftMethod::Erm {
        let (acc, report) = run(0.0)?;
        return Ok((0.0, acc, report));
    }
    bisect_lambda(cfg.target_accuracy, cfg.tolerance, 0.0, cfg.lambda_upper(method), run)
}

/// Flip experiment: for each fraction the training groups are flipped at
/// that rate and every method is evaluated on the untouched `test`. Models
/// are compared at matched accuracy on `test`.
pub fn flip_experiment(
    cfg: &ShiftConfig,
    train_data: &Dataset,
    test: &Dataset,
    fractions: &[f64],
) -> Result<Vec<ShiftRow>> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        let shifted = flip_sensitive(train_data, fraction, cfg.trainer.seed)?;
        for &method in &cfg.methods {
            let (lambda, _, report) = matched_run(cfg, method, &shifted, Some(test))?;
            let (accuracy, dpv, _, _) = hard_metrics(&report.params, test);
            let train_accuracy = report.last().acc_train;
            rows.push(ShiftRow {
                method,
                setting: format!("flip={}", fmt_num(fraction)),
                lambda,
                train_accuracy,
                accuracy,
                dpv,
            });
        }
    }
    Ok(rows)
}

/// Cross-domain experiment: train on `train_data`, evaluate on every named
/// dataset in `evals`. The target domains are unseen, so accuracy is
/// matched on the training data.
pub fn domain_experiment(
    cfg: &ShiftConfig,
    train_data: &Dataset,
    evals: &[(String, Dataset)],
) -> Result<Vec<ShiftRow>> {
    if evals.is_empty() {
        return Err(FermError::Config("cross-domain mode needs at least one eval dataset".into()));
    }
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let (lambda, train_accuracy, report) = matched_run(cfg, method, train_data, None)?;
        for (name, data) in evals {
            let (accuracy, dpv, _, _) = hard_metrics(&report.params, data);
            rows.push(ShiftRow {
                method,
                setting: name.clone(),
                lambda,
                train_accuracy,
                accuracy,
                dpv,
            });
        }
    }
    Ok(rows)
}

pub fn write_shift_csv(rows: &[ShiftRow], mut out: impl Write, manifest: Option<&str>) -> Result<()> {
    let mut header = String::from("method,setting,lambda,train_accuracy,accuracy,dpv");
    if manifest.is_some() {
        header.push_str(",manifest");
    }
    writeln!(out, "{header}")?;
    for r in rows {
        let mut row = format!(
            "{},{},{},{},{},{}",
            r.method,
            r.setting,
            fmt_num(r.lambda),
            fmt_num(r.train_accuracy),
            fmt_num(r.accuracy),
            fmt_num(r.dpv)
        );
        if let Some(h) = manifest {
            row.push(',');
            row.push_str(h);
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
