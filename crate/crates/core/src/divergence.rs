//! Closed forms for the supported f-divergences.
//!
//! Every divergence is `D_f(P || Q) = Σ_j q_j f(p_j / q_j)` for a convex `f`
//! with `f(1) = 0`. Besides `f` itself each kind carries its derivative, its
//! Legendre-Fenchel conjugate `f*(a) = sup_t { a t - f(t) }` and the first
//! two derivatives of the conjugate, together with the domain on which the
//! conjugate is finite.
//!
//! | token       | f(t)                              | f*(a)                                   | dual domain        |
//! |-------------|-----------------------------------|-----------------------------------------|--------------------|
//! | `chi2`      | (t - 1)^2                         | a + a^2 / 4                             | R                  |
//! | `kl`        | t ln t                            | exp(a - 1)                              | R                  |
//! | `reverse-kl`| -ln t                             | -1 - ln(-a)                             | a < 0              |
//! | `tv`        | \|t - 1\| / 2                     | a                                       | \|a\| <= 1/2       |
//! | `js`        | -(t + 1) ln((t + 1) / 2) + t ln t | -ln(2 - exp a)                          | a < ln 2           |
//! | `hellinger` | 2 (1 - sqrt t)                    | -1/a - 2                                | a < 0              |
//! | `alpha:<c>` | (t^c - c t - (1 - c)) / (c (c-1)) | (((c - 1) a + 1)^(c / (c-1)) - 1) / c   | (c - 1) a + 1 > 0  |
//!
//! Squared Hellinger is written as `2 (1 - sqrt t)`, which differs from
//! `(sqrt t - 1)^2` by the affine term `t - 1` and therefore gives the same
//! divergence between probability vectors while matching its conjugate.

use std::fmt;
use std::f64::consts::LN_2;
use std::str::FromStr;

use crate::error::{FermError, Result};

/// Denominators below this are replaced by it when forming ratios `p / q`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Distance kept from open bounds of a dual domain when projecting.
pub const DOMAIN_MARGIN: f64 = 1e-9;

const PROB_SUM_TOL: f64 = 1e-9;

/// One of the supported f-divergences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceSpec {
    ChiSquared,
    Kl,
    ReverseKl,
    TotalVariation,
    JensenShannon,
    SquaredHellinger,
    /// The alpha family with parameter `c`, `c ∉ {0, 1}`.
    Alpha(f64),
}

/// Interval on which the conjugate is finite. Infinite bounds are open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualDomain {
    pub lower: f64,
    pub upper: f64,
    pub open_lower: bool,
    pub open_upper: bool,
}

impl DualDomain {
    const REALS: DualDomain = DualDomain {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
        open_lower: true,
        open_upper: true,
    };

    fn below(upper: f64) -> Self {
        DualDomain {
            upper,
            open_upper: true,
            ..Self::REALS
        }
    }

    fn above(lower: f64) -> Self {
        DualDomain {
            lower,
            open_lower: true,
            ..Self::REALS
        }
    }

    pub fn contains(&self, a: f64) -> bool {
        if !a.is_finite() {
            return false;
        }
        let lo = if self.open_lower { a > self.lower } else { a >= self.lower };
        let hi = if self.open_upper { a < self.upper } else { a <= self.upper };
        lo && hi
    }

    pub fn contains_interior(&self, a: f64) -> bool {
        a.is_finite() && a > self.lower && a < self.upper
    }

    /// Clamp into the domain, staying `DOMAIN_MARGIN` away from open bounds.
    /// Values already inside are returned unchanged; NaN maps to the lower
    /// admissible point.
    pub fn project(&self, a: f64) -> f64 {
        if self.contains(a) {
            return a;
        }
        let lo = if self.open_lower {
            self.lower + DOMAIN_MARGIN
        } else {
            self.lower
        };
        let hi = if self.open_upper {
            self.upper - DOMAIN_MARGIN
        } else {
            self.upper
        };
        if a.is_nan() {
            return if lo.is_finite() { lo } else { hi.min(0.0) };
        }
        a.clamp(lo, hi)
    }

    fn check(&self, a: f64) -> Result<()> {
        if self.contains(a) {
            return Ok(());
        }
        let bound = if a.is_nan() {
            "finiteness".to_string()
        } else if a <= self.lower || (a == f64::NEG_INFINITY) {
            format!("lower ({}{})", if self.open_lower { ">" } else { ">=" }, self.lower)
        } else if a >= self.upper {
            format!("upper ({}{})", if self.open_upper { "<" } else { "<=" }, self.upper)
        } else {
            "finiteness".to_string()
        };
        Err(FermError::OutOfDualDomain { value: a, bound })
    }
}

/// Validated probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(FermError::InvalidProbVector(format!("entry {bad}")));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(FermError::InvalidProbVector(format!("sum {sum}")));
        }
        Ok(ProbVector(entries))
    }

    pub fn uniform(len: usize) -> Self {
        ProbVector(vec![1.0 / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl DivergenceSpec {
    pub const DIFFERENTIABLE: [DivergenceSpec; 5] = [
        DivergenceSpec::ChiSquared,
        DivergenceSpec::Kl,
        DivergenceSpec::ReverseKl,
        DivergenceSpec::JensenShannon,
        DivergenceSpec::SquaredHellinger,
    ];

    /// Validating constructor for the alpha family.
    pub fn alpha(c: f64) -> Result<Self> {
        let spec = DivergenceSpec::Alpha(c);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceSpec::Alpha(c) if !c.is_finite() || c == 0.0 || c == 1.0 => {
                Err(FermError::InvalidAlphaParam(c))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceSpec::ChiSquared => "chi2",
            DivergenceSpec::Kl => "kl",
            DivergenceSpec::ReverseKl => "reverse-kl",
            DivergenceSpec::TotalVariation => "tv",
            DivergenceSpec::JensenShannon => "js",
            DivergenceSpec::SquaredHellinger => "hellinger",
            DivergenceSpec::Alpha(_) => "alpha",
        }
    }

    pub fn is_differentiable(&self) -> bool {
        !matches!(self, DivergenceSpec::TotalVariation)
    }

    pub fn dual_domain(&self) -> Result<DualDomain> {
        self.validate()?;
        Ok(match *self {
            DivergenceSpec::ChiSquared | DivergenceSpec::Kl => DualDomain::REALS,
            DivergenceSpec::ReverseKl | DivergenceSpec::SquaredHellinger => DualDomain::below(0.0),
            DivergenceSpec::TotalVariation => DualDomain {
                lower: -0.5,
                upper: 0.5,
                open_lower: false,
                open_upper: false,
            },
            DivergenceSpec::JensenShannon => DualDomain::below(LN_2),
            // (c - 1) a + 1 > 0
            DivergenceSpec::Alpha(c) if c > 1.0 => DualDomain::above(-1.0 / (c - 1.0)),
            DivergenceSpec::Alpha(c) => DualDomain::below(1.0 / (1.0 - c)),
        })
    }

    /// Whether `f(0)` is finite, in which case `f_value(0)` is accepted.
    fn finite_at_zero(&self) -> bool {
        match *self {
            DivergenceSpec::ChiSquared
            | DivergenceSpec::TotalVariation
            | DivergenceSpec::SquaredHellinger => true,
            DivergenceSpec::Alpha(c) => c > 0.0,
            _ => false,
        }
    }

    fn check_argument(&self, t: f64, zero_ok: bool) -> Result<()> {
        self.validate()?;
        if !t.is_finite() || t < 0.0 || (t == 0.0 && !zero_ok) {
            return Err(FermError::NonPositiveArgument(t));
        }
        Ok(())
    }

    fn not_differentiable(&self) -> FermError {
        FermError::NonDifferentiable { kind: self.name() }
    }

    pub fn f_value(&self, t: f64) -> Result<f64> {
        self.check_argument(t, self.finite_at_zero())?;
        Ok(self.f_unchecked(t))
    }

    fn f_unchecked(&self, t: f64) -> f64 {
        match *self {
            DivergenceSpec::ChiSquared => (t - 1.0) * (t - 1.0),
            DivergenceSpec::Kl => t * t.ln(),
            DivergenceSpec::ReverseKl => -t.ln(),
            DivergenceSpec::TotalVariation => 0.5 * (t - 1.0).abs(),
            DivergenceSpec::JensenShannon => -(t + 1.0) * ((t + 1.0) / 2.0).ln() + t * t.ln(),
            DivergenceSpec::SquaredHellinger => 2.0 * (1.0 - t.sqrt()),
            DivergenceSpec::Alpha(c) => (t.powf(c) - c * t - (1.0 - c)) / (c * (c - 1.0)),
        }
    }

    /// `lim_{t -> 0+} f(t)`, `None` when it diverges.
    pub(crate) fn f_at_zero(&self) -> Option<f64> {
        match *self {
            DivergenceSpec::Kl => Some(0.0),
            DivergenceSpec::JensenShannon => Some(LN_2),
            DivergenceSpec::ReverseKl => None,
            DivergenceSpec::Alpha(c) if c < 0.0 => None,
            _ => Some(self.f_unchecked(0.0)),
        }
    }

    /// `lim_{t -> inf} f(t) / t`, the slope governing `q f(p/q)` as `q -> 0`.
    /// `None` when it diverges.
    pub(crate) fn f_recession(&self) -> Option<f64> {
        match *self {
            DivergenceSpec::ChiSquared | DivergenceSpec::Kl => None,
            DivergenceSpec::ReverseKl | DivergenceSpec::SquaredHellinger => Some(0.0),
            DivergenceSpec::TotalVariation => Some(0.5),
            DivergenceSpec::JensenShannon => Some(LN_2),
            DivergenceSpec::Alpha(c) if c > 1.0 => None,
            DivergenceSpec::Alpha(c) => Some(1.0 / (1.0 - c)),
        }
    }

    pub fn f_prime(&self, t: f64) -> Result<f64> {
        if !self.is_differentiable() {
            return Err(self.not_differentiable());
        }
        let zero_ok = match *self {
            DivergenceSpec::ChiSquared => true,
            DivergenceSpec::Alpha(c) => c > 1.0,
            _ => false,
        };
        self.check_argument(t, zero_ok)?;
        Ok(match *self {
            DivergenceSpec::ChiSquared => 2.0 * (t - 1.0),
            DivergenceSpec::Kl => t.ln() + 1.0,
            DivergenceSpec::ReverseKl => -1.0 / t,
            DivergenceSpec::JensenShannon => (2.0 * t / (t + 1.0)).ln(),
            DivergenceSpec::SquaredHellinger => -1.0 / t.sqrt(),
            DivergenceSpec::Alpha(c) => (t.powf(c - 1.0) - 1.0) / (c - 1.0),
            DivergenceSpec::TotalVariation => unreachable!(),
        })
    }

    /// The dual value that is optimal when `P = Q`, i.e. `f'(1)`. For total
    /// variation every value in `[-1/2, 1/2]` is optimal and 0 is used.
    pub fn independence_dual(&self) -> Result<f64> {
        match self {
            DivergenceSpec::TotalVariation => Ok(0.0),
            _ => self.f_prime(1.0),
        }
    }

    pub fn conjugate(&self, a: f64) -> Result<f64> {
        self.dual_domain()?.check(a)?;
        Ok(self.conjugate_unchecked(a))
    }

    pub(crate) fn conjugate_unchecked(&self, a: f64) -> f64 {
        match *self {
            DivergenceSpec::ChiSquared => a + a * a / 4.0,
            DivergenceSpec::Kl => (a - 1.0).exp(),
            DivergenceSpec::ReverseKl => -1.0 - (-a).ln(),
            DivergenceSpec::TotalVariation => a,
            DivergenceSpec::JensenShannon => -(2.0 - a.exp()).ln(),
            DivergenceSpec::SquaredHellinger => -1.0 / a - 2.0,
            DivergenceSpec::Alpha(c) => (((c - 1.0) * a + 1.0).powf(c / (c - 1.0)) - 1.0) / c,
        }
    }

    fn check_interior(&self, a: f64) -> Result<()> {
        if !self.is_differentiable() {
            return Err(self.not_differentiable());
        }
        let dom = self.dual_domain()?;
        if dom.contains_interior(a) {
            Ok(())
        } else {
            dom.check(a).and(Err(FermError::OutOfDualDomain {
                value: a,
                bound: "interior".into(),
            }))
        }
    }

    /// `(f*)'(a)`: the ratio `t` attaining the supremum in `f*(a)`.
    pub fn conjugate_grad(&self, a: f64) -> Result<f64> {
        self.check_interior(a)?;
        Ok(self.conjugate_slope(a))
    }

    /// Derivative of the conjugate without domain checks. Total variation's
    /// conjugate is the identity on its domain, so its slope is 1.
    pub(crate) fn conjugate_slope(&self, a: f64) -> f64 {
        match *self {
            DivergenceSpec::ChiSquared => 1.0 + a / 2.0,
            DivergenceSpec::Kl => (a - 1.0).exp(),
            DivergenceSpec::ReverseKl => -1.0 / a,
            DivergenceSpec::TotalVariation => 1.0,
            DivergenceSpec::JensenShannon => {
                let e = a.exp();
                e / (2.0 - e)
            }
            DivergenceSpec::SquaredHellinger => 1.0 / (a * a),
            DivergenceSpec::Alpha(c) => ((c - 1.0) * a + 1.0).powf(1.0 / (c - 1.0)),
        }
    }

    pub fn conjugate_hess(&self, a: f64) -> Result<f64> {
        self.check_interior(a)?;
        Ok(self.conjugate_curvature(a))
    }

    pub(crate) fn conjugate_curvature(&self, a: f64) -> f64 {
        match *self {
            DivergenceSpec::ChiSquared => 0.5,
            DivergenceSpec::Kl => (a - 1.0).exp(),
            DivergenceSpec::ReverseKl => 1.0 / (a * a),
            DivergenceSpec::TotalVariation => 0.0,
            DivergenceSpec::JensenShannon => {
                let e = a.exp();
                2.0 * e / ((2.0 - e) * (2.0 - e))
            }
            DivergenceSpec::SquaredHellinger => -2.0 / (a * a * a),
            DivergenceSpec::Alpha(c) => ((c - 1.0) * a + 1.0).powf((2.0 - c) / (c - 1.0)),
        }
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceSpec::Alpha(c) => write!(f, "alpha:{c}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for DivergenceSpec {
    type Err = FermError;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.trim() {
            "chi2" => DivergenceSpec::ChiSquared,
            "kl" => DivergenceSpec::Kl,
            "reverse-kl" => DivergenceSpec::ReverseKl,
            "tv" => DivergenceSpec::TotalVariation,
            "js" => DivergenceSpec::JensenShannon,
            "hellinger" => DivergenceSpec::SquaredHellinger,
            other => match other.strip_prefix("alpha:") {
                Some(param) => {
                    let c: f64 = param
                        .parse()
                        .map_err(|_| FermError::Config(format!("bad alpha parameter {param:?}")))?;
                    DivergenceSpec::alpha(c)?
                }
                None => return Err(FermError::Config(format!("unknown divergence {other:?}"))),
            },
        };
        Ok(spec)
    }
}

/// `Σ_j q_j f(p_j / q_j)` over non-negative, not necessarily normalized
/// measures. Denominators in `(0, PROB_FLOOR)` are floored; exact zeros use
/// the perspective limits of `f`.
pub(crate) fn perspective_sum(spec: &DivergenceSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    spec.validate()?;
    if p.len() != q.len() {
        return Err(FermError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut floored = false;
    let mut total = 0.0;
    for (index, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if qj == 0.0 {
            if pj == 0.0 {
                continue;
            }
            match spec.f_recession() {
                Some(slope) => total += pj * slope,
                None => return Err(FermError::AbsoluteContinuityViolation { index, p: pj }),
            }
            continue;
        }
        let qj = if qj < PROB_FLOOR {
            floored = true;
            PROB_FLOOR
        } else {
            qj
        };
        if pj == 0.0 {
            match spec.f_at_zero() {
                Some(v) => total += qj * v,
                None => return Ok(f64::INFINITY),
            }
        } else {
            total += qj * spec.f_unchecked(pj / qj);
        }
    }
    if floored {
        log::warn!("denominator below {PROB_FLOOR:e} floored while evaluating {spec}");
    }
    Ok(total)
}

fn check_pair(p: &ProbVector, q: &ProbVector) -> Result<()> {
    if p.len() != q.len() {
        return Err(FermError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// `D_f(P || Q)` from its defining sum.
pub fn divergence_direct(spec: &DivergenceSpec, p: &ProbVector, q: &ProbVector) -> Result<f64> {
    check_pair(p, q)?;
    Ok(perspective_sum(spec, p.as_slice(), q.as_slice())?.max(0.0))
}

/// Entrywise maximizer of `Σ_j a_j p_j - q_j f*(a_j)`, namely `f'(p_j / q_j)`.
pub fn optimal_dual(spec: &DivergenceSpec, p: &ProbVector, q: &ProbVector) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    optimal_dual_slices(spec, p.as_slice(), q.as_slice())
}

pub(crate) fn optimal_dual_slices(spec: &DivergenceSpec, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if !spec.is_differentiable() {
        return Err(FermError::NonDifferentiable { kind: spec.name() });
    }
    p.iter()
        .zip(q)
        .enumerate()
        .map(|(index, (&pj, &qj))| {
            if qj == 0.0 && pj > 0.0 {
                return Err(FermError::AbsoluteContinuityViolation { index, p: pj });
            }
            spec.f_prime(pj / qj.max(PROB_FLOOR))
        })
        .collect()
}

/// `D_f(P || Q)` through its variational form evaluated at the optimal dual.
pub fn divergence_variational(
    spec: &DivergenceSpec,
    p: &ProbVector,
    q: &ProbVector,
) -> Result<f64> {
    check_pair(p, q)?;
    spec.validate()?;
    let mut total = 0.0;
    for (index, (&pj, &qj)) in p.as_slice().iter().zip(q.as_slice()).enumerate() {
        if qj == 0.0 {
            if pj == 0.0 {
                continue;
            }
            // sup_a a p_j is finite only for a bounded dual domain
            match spec.f_recession() {
                Some(slope) => total += pj * slope,
                None => return Err(FermError::AbsoluteContinuityViolation { index, p: pj }),
            }
            continue;
        }
        let qj = qj.max(PROB_FLOOR);
        let dual = match spec {
            DivergenceSpec::TotalVariation => 0.5 * sign(pj - qj),
            _ if pj == 0.0 => {
                // sup_a { -q f*(a) } = q f(0)
                match spec.f_at_zero() {
                    Some(v) => {
                        total += qj * v;
                        continue;
                    }
                    None => return Ok(f64::INFINITY),
                }
            }
            _ => spec.f_prime(pj / qj)?,
        };
        total += dual * pj - qj * spec.conjugate(dual)?;
    }
    Ok(total.max(0.0))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
