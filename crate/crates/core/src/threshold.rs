//! Thresholding rules, their generalized inverses and fixed-point residuals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, DepthError, Result};
use crate::influence::Loss;
use crate::linalg::{spectral_norm, SortedSvd};

pub const SCAD_A: f64 = 3.7;
pub const MCP_GAMMA: f64 = 3.0;

/// Arguments closer than this to a discontinuity of Θ are flagged.
pub const DISCONTINUITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    Soft,
    Hard,
    Scad { a: f64 },
    Mcp { gamma: f64 },
}

/// A thresholding rule Θ(·; λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub kind: RuleKind,
    pub lambda: f64,
}

impl ThresholdRule {
    pub fn new(kind: RuleKind, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(DepthError::InvalidParameter {
                name: "lambda",
                reason: format!("must be finite and nonnegative, got {lambda}"),
            });
        }
        match kind {
            RuleKind::Scad { a } if !(a > 2.0) => Err(DepthError::InvalidParameter {
                name: "scad a",
                reason: format!("must exceed 2, got {a}"),
            }),
            RuleKind::Mcp { gamma } if !(gamma > 1.0) => Err(DepthError::InvalidParameter {
                name: "mcp gamma",
                reason: format!("must exceed 1, got {gamma}"),
            }),
            _ => Ok(ThresholdRule { kind, lambda }),
        }
    }

    pub fn soft(lambda: f64) -> Result<Self> {
        Self::new(RuleKind::Soft, lambda)
    }

    pub fn hard(lambda: f64) -> Result<Self> {
        Self::new(RuleKind::Hard, lambda)
    }

    pub fn scad(lambda: f64) -> Result<Self> {
        Self::new(RuleKind::Scad { a: SCAD_A }, lambda)
    }

    pub fn mcp(lambda: f64) -> Result<Self> {
        Self::new(RuleKind::Mcp { gamma: MCP_GAMMA }, lambda)
    }

    /// Parses `soft|hard|scad|mcp` with default auxiliary parameters.
    pub fn parse(name: &str, lambda: f64) -> Result<Self> {
        let kind = name.parse::<RuleKind>()?;
        Self::new(kind, lambda)
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(self.kind, lambda)
    }

    pub fn apply(&self, t: f64) -> f64 {
        threshold(self, t)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        threshold_inverse(self, u)
    }

    /// Penalty `P(t; λ)` whose unit-step proximal map is Θ.
    ///
    /// Hard thresholding pairs with `λ²/2 · 1{t ≠ 0}`.
    pub fn penalty(&self, t: f64) -> f64 {
        let l = self.lambda;
        let x = t.abs();
        match self.kind {
            RuleKind::Soft => l * x,
            RuleKind::Hard => {
                if x == 0.0 {
                    0.0
                } else {
                    0.5 * l * l
                }
            }
            RuleKind::Scad { a } => {
                if x <= l {
                    l * x
                } else if x <= a * l {
                    (2.0 * a * l * x - x * x - l * l) / (2.0 * (a - 1.0))
                } else {
                    0.5 * l * l * (a + 1.0)
                }
            }
            RuleKind::Mcp { gamma } => {
                if x <= gamma * l {
                    l * x - x * x / (2.0 * gamma)
                } else {
                    0.5 * gamma * l * l
                }
            }
        }
    }

    /// Whether Θ jumps at `|t| = λ`.
    pub fn is_discontinuous(&self) -> bool {
        matches!(self.kind, RuleKind::Hard) && self.lambda > 0.0
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Soft => "soft",
            RuleKind::Hard => "hard",
            RuleKind::Scad { .. } => "scad",
            RuleKind::Mcp { .. } => "mcp",
        })
    }
}

impl FromStr for RuleKind {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(RuleKind::Soft),
            "hard" => Ok(RuleKind::Hard),
            "scad" => Ok(RuleKind::Scad { a: SCAD_A }),
            "mcp" => Ok(RuleKind::Mcp { gamma: MCP_GAMMA }),
            other => Err(DepthError::InvalidParameter {
                name: "rule",
                reason: format!("unknown rule `{other}` (expected soft|hard|scad|mcp)"),
            }),
        }
    }
}

fn sgn(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Θ(t; λ).
pub fn threshold(rule: &ThresholdRule, t: f64) -> f64 {
    let l = rule.lambda;
    let x = t.abs();
    match rule.kind {
        RuleKind::Soft => sgn(t) * (x - l).max(0.0),
        RuleKind::Hard => {
            if x > l {
                t
            } else {
                0.0
            }
        }
        RuleKind::Scad { a } => {
            if x <= 2.0 * l {
                sgn(t) * (x - l).max(0.0)
            } else if x <= a * l {
                ((a - 1.0) * t - sgn(t) * a * l) / (a - 2.0)
            } else {
                t
            }
        }
        RuleKind::Mcp { gamma } => {
            if x <= l {
                0.0
            } else if x <= gamma * l {
                sgn(t) * (x - l) * gamma / (gamma - 1.0)
            } else {
                t
            }
        }
    }
}

/// `Θ⁻¹(u; λ) = sup{t : Θ(t; λ) ≤ u}` for `u ≥ 0`, extended oddly to `u < 0`.
pub fn threshold_inverse(rule: &ThresholdRule, u: f64) -> f64 {
    if u < 0.0 {
        return -threshold_inverse(rule, -u);
    }
    let l = rule.lambda;
    match rule.kind {
        RuleKind::Soft => u + l,
        RuleKind::Hard => u.max(l),
        RuleKind::Scad { a } => {
            if u <= l {
                u + l
            } else if u <= a * l {
                ((a - 2.0) * u + a * l) / (a - 1.0)
            } else {
                u
            }
        }
        RuleKind::Mcp { gamma } => {
            if u <= gamma * l {
                l + u * (gamma - 1.0) / gamma
            } else {
                u
            }
        }
    }
}

/// Bisection on the sup definition; valid for any nondecreasing rule.
pub fn threshold_inverse_bisect(rule: &ThresholdRule, u: f64) -> f64 {
    if u < 0.0 {
        return -threshold_inverse_bisect(rule, -u);
    }
    let aux = match rule.kind {
        RuleKind::Scad { a } => a,
        RuleKind::Mcp { gamma } => gamma,
        _ => 1.0,
    };
    let (mut lo, mut hi) = (0.0_f64, u + (aux + 1.0) * rule.lambda + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if threshold(rule, mid) <= u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `γ(β)` restricted to the support together with the support itself.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaVector {
    pub values: DVector<f64>,
    pub support: Vec<usize>,
}

/// `γ_j = Θ⁻¹(|β_j|; λ) sgn(β_j) − β_j` on the support, zero elsewhere; zero for hard thresholding.
pub fn gamma_vector(rule: &ThresholdRule, beta0: &DVector<f64>) -> GammaVector {
    let support: Vec<usize> = (0..beta0.len()).filter(|&j| beta0[j] != 0.0).collect();
    let mut values = DVector::zeros(beta0.len());
    if !matches!(rule.kind, RuleKind::Hard) {
        for &j in &support {
            let b = beta0[j];
            values[j] = threshold_inverse(rule, b.abs()) * sgn(b) - b;
        }
    }
    GammaVector { values, support }
}

/// Keeps the `q` largest-magnitude entries; at equal magnitudes the smaller index wins.
pub fn quantile_threshold(alpha: &DVector<f64>, q: usize) -> Result<DVector<f64>> {
    let p = alpha.len();
    if q > p {
        return Err(DepthError::InvalidParameter {
            name: "q",
            reason: format!("must be at most {p}, got {q}"),
        });
    }
    let mut out = DVector::zeros(p);
    for j in top_indices(alpha, q) {
        out[j] = alpha[j];
    }
    Ok(out)
}

/// Indices of the `q` largest magnitudes, ties broken toward smaller indices.
pub fn top_indices(alpha: &DVector<f64>, q: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&i, &j| {
        alpha[j]
            .abs()
            .total_cmp(&alpha[i].abs())
            .then(i.cmp(&j))
    });
    order.truncate(q);
    order.sort_unstable();
    order
}

/// True when the q-th and (q+1)-th largest magnitudes coincide.
pub fn quantile_tie(alpha: &DVector<f64>, q: usize) -> bool {
    if q == 0 || q >= alpha.len() {
        return false;
    }
    let mut mags: Vec<f64> = alpha.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags[q - 1] == mags[q]
}

/// Best rank-≤r approximation `U diag(Θ#(σ; r)) Vᵀ`.
pub fn matrix_quantile_threshold(b: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let k = b.nrows().min(b.ncols());
    if r == 0 || r > k {
        return Err(DepthError::InvalidParameter {
            name: "rank",
            reason: format!("must lie in 1..={k}, got {r}"),
        });
    }
    Ok(SortedSvd::new(b)?.reconstruct(r))
}

/// Residual of the thresholding equation with a flag for arguments near a jump of Θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointCheck {
    pub residual: f64,
    pub near_discontinuity: bool,
}

/// `‖β − Θ(β − Xᵀ∇l̄(Xβ); λ)‖₂`; the caller scales `X` so that `‖X‖₂ ≤ 1/√L`.
pub fn check_theta_fixed_point(
    beta: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: Loss,
    rule: &ThresholdRule,
) -> Result<FixedPointCheck> {
    check_dim("fixed point coefficients", x.ncols(), beta.len())?;
    check_dim("fixed point response", x.nrows(), y.len())?;
    let grad = loss.gradient(&(x * beta), y)?;
    let arg = beta - x.tr_mul(&grad);
    let near = rule.is_discontinuous()
        && arg
            .iter()
            .any(|&t| (t.abs() - rule.lambda).abs() <= DISCONTINUITY_TOL);
    let residual = (beta - arg.map(|t| threshold(rule, t))).norm();
    Ok(FixedPointCheck {
        residual,
        near_discontinuity: near,
    })
}

/// `‖β − Θ#(β − Xᵀ∇l̄(Xβ)/ρ; q)‖₂`.
pub fn check_quantile_fixed_point(
    beta: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: Loss,
    q: usize,
    rho: f64,
) -> Result<f64> {
    check_dim("fixed point coefficients", x.ncols(), beta.len())?;
    check_dim("fixed point response", x.nrows(), y.len())?;
    let grad = loss.gradient(&(x * beta), y)?;
    let arg = beta - x.tr_mul(&grad) / rho;
    Ok((beta - quantile_threshold(&arg, q)?).norm())
}

/// `‖B − Θ^{σ#}(B − Xᵀ(XB − Y)/ρ; r)‖_F`, requiring `ρ > ‖X‖₂²`.
pub fn check_rrr_fixed_point(
    b: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    r: usize,
    rho: f64,
) -> Result<f64> {
    check_dim("rrr fixed point predictors", x.ncols(), b.nrows())?;
    check_dim("rrr fixed point responses", y.ncols(), b.ncols())?;
    check_dim("rrr fixed point samples", x.nrows(), y.nrows())?;
    let xn = spectral_norm(x);
    if !(rho > xn * xn) {
        return Err(DepthError::InvalidParameter {
            name: "rho",
            reason: format!("must exceed ‖X‖₂² = {}, got {rho}", xn * xn),
        });
    }
    let arg = b - x.tr_mul(&(x * b - y)) / rho;
    Ok((b - matrix_quantile_threshold(&arg, r)?).norm())
}
