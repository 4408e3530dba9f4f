//! Slacked depths for sign-constrained, penalized, sparsity-constrained and
//! rank-constrained estimators.
//!
//! Each family is assembled as a [`DepthProblem`] (influences, admissible
//! directions, slack channel) and handed to [`solve_depth`]. The `*_problem`
//! builders are public so that callers can evaluate fixed directions or run
//! their own oracles on exactly the same problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, DepthError, Result};
use crate::geometry::{StiefelPoint, TangentBasis};
use crate::influence::{glm_influence, regression_influence, rrr_influence, sparse_rrr_influence, InfluenceSet, Loss};
use crate::linalg::{complement_basis, pinv, spectral_norm, vec_col_major, SortedSvd};
use crate::solver::{solve_depth, DepthProblem, DepthResult, SlackChannel, SolverConfig};
use crate::threshold::{gamma_vector, ThresholdRule};

/// Relative singular-value cutoff used to certify the rank of a candidate.
pub const RANK_TOL: f64 = 1e-8;

/// MAD consistency factor for Gaussian noise.
const MAD_SCALE: f64 = 1.4826;

fn support_mask(beta: &[f64]) -> Vec<bool> {
    beta.iter().map(|&b| b != 0.0).collect()
}

fn zero_set(beta: &[f64]) -> Vec<usize> {
    (0..beta.len()).filter(|&j| beta[j] == 0.0).collect()
}

/// Numerical rank of `b` under [`RANK_TOL`].
pub fn numerical_rank(b: &DMatrix<f64>) -> Result<usize> {
    let svd = SortedSvd::new(b)?;
    Ok(rank_of(&svd.singular_values))
}

fn rank_of(s: &DVector<f64>) -> usize {
    let top = s.iter().copied().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x / top >= RANK_TOL).count()
}

/// Orthonormal bases `(P⊥, Q⊥)` of the complements of the row and column spaces of `b`,
/// which must have rank exactly `r`.
pub fn rank_complements(b: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let svd = SortedSvd::new(b)?;
    let found = rank_of(&svd.singular_values);
    if found != r {
        return Err(DepthError::RankMismatch { expected: r, found });
    }
    let p_perp = complement_basis(&svd.u.columns(0, r).clone_owned());
    let q_perp = complement_basis(&svd.v.columns(0, r).clone_owned());
    Ok((p_perp, q_perp))
}

/// `‖P⊥ᵀ Xᵀ(XB° − Y) Q⊥‖₂` with the complements taken at the numerical rank of `B°`;
/// zero when either complement is empty.
pub fn rrr_slack_bound(x: &DMatrix<f64>, y: &DMatrix<f64>, b0: &DMatrix<f64>) -> Result<f64> {
    check_rrr_shapes(x, y, b0)?;
    let r = numerical_rank(b0)?;
    let (p_perp, q_perp) = rank_complements(b0, r)?;
    Ok(projected_gradient_norm(x, y, b0, &p_perp, &q_perp))
}

fn projected_gradient_norm(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    p_perp: &DMatrix<f64>,
    q_perp: &DMatrix<f64>,
) -> f64 {
    if p_perp.ncols() == 0 || q_perp.ncols() == 0 {
        return 0.0;
    }
    let grad = x.tr_mul(&(x * b0 - y));
    spectral_norm(&(p_perp.tr_mul(&grad) * q_perp))
}

fn check_rrr_shapes(x: &DMatrix<f64>, y: &DMatrix<f64>, b0: &DMatrix<f64>) -> Result<()> {
    check_dim("rrr predictors", x.ncols(), b0.nrows())?;
    check_dim("rrr responses", y.ncols(), b0.ncols())?;
    check_dim("rrr sample count", x.nrows(), y.nrows())
}

/// `σ̂ √(2 n log p)` with `σ̂` the normalized median absolute deviation of the
/// least-squares residuals.
pub fn default_lambda(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_dim("response length", x.nrows(), y.len())?;
    let (n, p) = x.shape();
    if n == 0 {
        return Err(DepthError::EmptyInfluenceSet);
    }
    let beta = pinv(x)? * y;
    let resid: Vec<f64> = (y - x * beta).iter().copied().collect();
    let sigma = MAD_SCALE * mad(&resid);
    Ok(sigma * (2.0 * n as f64 * (p.max(1) as f64).ln()).sqrt())
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn mad(values: &[f64]) -> f64 {
    let med = median_of(values.to_vec());
    median_of(values.iter().map(|x| (x - med).abs()).collect())
}

/// Regression influences with a one-sided slack on the zero set of `β° ⪰ 0`.
pub fn nonnegative_problem(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<DepthProblem> {
    if let Some(j) = beta0.iter().position(|&b| b < 0.0) {
        return Err(DepthError::InvalidParameter {
            name: "beta0",
            reason: format!("entry {j} is negative ({})", beta0[j]),
        });
    }
    let influences = regression_influence(x, y, beta0)?;
    let p = beta0.len();
    let channel = SlackChannel::OneSided {
        free: zero_set(beta0.as_slice()),
    };
    DepthProblem::new(influences, TangentBasis::identity(p), Some(channel))
}

pub fn nonnegative_regression_depth(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&nonnegative_problem(x, y, beta0)?, config)
}

/// Gradient influences shifted by `γ°/n` with a box slack of half-width `λ` on the zero set of `β°`.
pub fn theta_problem(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    rule: &ThresholdRule,
    loss: Loss,
) -> Result<DepthProblem> {
    let mut influences = glm_influence(x, y, beta0, loss)?;
    let n = influences.len().max(1) as f64;
    let gamma = gamma_vector(rule, beta0);
    let offset = if gamma.values.iter().all(|&g| g == 0.0) {
        None
    } else {
        Some(gamma.values / n)
    };
    influences.set_offset(offset)?;
    let channel = SlackChannel::box_from_mask(&support_mask(beta0.as_slice()), 0, rule.lambda);
    DepthProblem::new(influences, TangentBasis::identity(beta0.len()), Some(channel))
}

pub fn theta_depth(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    rule: &ThresholdRule,
    loss: Loss,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&theta_problem(x, y, beta0, rule, loss)?, config)
}

/// Largest gradient magnitude `|X_jᵀ∇l̄(Xβ°)|` over the zero set of `β°`.
pub fn theta_sharp_bound(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    loss: Loss,
) -> Result<f64> {
    check_dim("coefficient vector", x.ncols(), beta0.len())?;
    let grad = x.tr_mul(&loss.gradient(&(x * beta0), y)?);
    Ok(zero_set(beta0.as_slice())
        .into_iter()
        .map(|j| grad[j].abs())
        .fold(0.0, f64::max))
}

/// Gradient influences with a box slack on the zero set of a `q`-sparse `β°`.
pub fn theta_sharp_problem(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    q: usize,
    loss: Loss,
) -> Result<DepthProblem> {
    let support = beta0.iter().filter(|&&b| b != 0.0).count();
    if support != q {
        return Err(DepthError::SupportMismatch {
            expected: q,
            found: support,
        });
    }
    let influences = glm_influence(x, y, beta0, loss)?;
    let bound = theta_sharp_bound(x, y, beta0, loss)?;
    let channel = SlackChannel::box_from_mask(&support_mask(beta0.as_slice()), 0, bound);
    DepthProblem::new(influences, TangentBasis::identity(beta0.len()), Some(channel))
}

pub fn theta_sharp_depth(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    q: usize,
    loss: Loss,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&theta_sharp_problem(x, y, beta0, q, loss)?, config)
}

/// Multivariate regression influences with the spectral slack `P⊥ L Q⊥ᵀ` of a rank-`r` `B°`.
pub fn rrr_problem(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    r: usize,
) -> Result<DepthProblem> {
    check_rrr_shapes(x, y, b0)?;
    let (p_perp, q_perp) = rank_complements(b0, r)?;
    let bound = projected_gradient_norm(x, y, b0, &p_perp, &q_perp);
    let influences = rrr_influence(x, y, b0)?;
    let d = influences.ambient_dim();
    let channel = SlackChannel::Spectral {
        start: 0,
        p_perp,
        q_perp,
        bound,
    };
    DepthProblem::new(influences, TangentBasis::identity(d), Some(channel))
}

pub fn rrr_depth(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    r: usize,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&rrr_problem(x, y, b0, r)?, config)
}

/// Multivariate regression depth of `B°` without any slack.
pub fn multivariate_regression_depth(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    config: &SolverConfig,
) -> Result<DepthResult> {
    check_rrr_shapes(x, y, b0)?;
    solve_depth(&DepthProblem::unconstrained(rrr_influence(x, y, b0)?)?, config)
}

/// `max |vec(Xᵀ(XA° − YU°))_j|` over the zero set of `vec(A°)`.
pub fn sparse_rrr_bound(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    a0: &DMatrix<f64>,
    u0: &StiefelPoint,
) -> Result<f64> {
    check_dim("sparse rrr predictors", x.ncols(), a0.nrows())?;
    check_dim("sparse rrr responses", y.ncols(), u0.shape().0)?;
    check_dim("sparse rrr rank", a0.ncols(), u0.shape().1)?;
    check_dim("sparse rrr sample count", x.nrows(), y.nrows())?;
    let grad = vec_col_major(&x.tr_mul(&(x * a0 - y * u0.as_matrix())));
    let a = vec_col_major(a0);
    Ok(zero_set(a.as_slice())
        .into_iter()
        .map(|j| grad[j].abs())
        .fold(0.0, f64::max))
}

/// Sparse reduced-rank influences over `R^{m×r}`-tangent ⊕ `R^{p×r}` with a box slack
/// on the zero set of `vec(A°)`.
pub fn sparse_rrr_problem(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    a0: &DMatrix<f64>,
    u0: &StiefelPoint,
    q: usize,
) -> Result<DepthProblem> {
    let a = vec_col_major(a0);
    let support = a.iter().filter(|&&b| b != 0.0).count();
    if support != q {
        return Err(DepthError::SupportMismatch {
            expected: q,
            found: support,
        });
    }
    let constrained = sparse_rrr_influence(x, y, a0, u0)?;
    let bound = sparse_rrr_bound(x, y, a0, u0)?;
    let (m, r) = u0.shape();
    let channel = SlackChannel::box_from_mask(&support_mask(a.as_slice()), m * r, bound);
    DepthProblem::new(constrained.influences, constrained.space, Some(channel))
}

pub fn sparse_rrr_depth(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    a0: &DMatrix<f64>,
    u0: &StiefelPoint,
    q: usize,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&sparse_rrr_problem(x, y, a0, u0, q)?, config)
}

/// Plain depth of gradient influences over all of `Rᵖ`.
pub fn gradient_depth(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    loss: Loss,
    config: &SolverConfig,
) -> Result<DepthResult> {
    let influences: InfluenceSet = glm_influence(x, y, beta0, loss)?;
    solve_depth(&DepthProblem::unconstrained(influences)?, config)
}
