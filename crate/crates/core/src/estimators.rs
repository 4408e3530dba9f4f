//! Reference estimators and a sampling search for deep estimates.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, DepthError, Result};
use crate::influence::Loss;
use crate::linalg::{pinv, sorted_symmetric_eigen, spectral_norm};
use crate::solver::DepthResult;
use crate::threshold::{
    check_quantile_fixed_point, check_rrr_fixed_point, check_theta_fixed_point,
    matrix_quantile_threshold, quantile_threshold, quantile_tie, threshold, RuleKind,
    ThresholdRule,
};

/// Residual below which a fit counts as a fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-8;
/// Relative step size that ends the thresholding iterations.
pub const STEP_TOL: f64 = 1e-10;
pub const MAX_ITERS: usize = 10_000;
/// Relative eigengap below which the reduced-rank fit is flagged as non-unique.
pub const EIGENGAP_TOL: f64 = 1e-8;
/// Longest iterate cycle recognized by the quantile-thresholding iterations.
const MAX_CYCLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<P> {
    pub parameter: P,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub fixed_point_residual: f64,
    /// Eigengap too small, quantile tie, or an argument at a jump of Θ.
    pub degenerate: bool,
}

fn validate_rho(x: &DMatrix<f64>, loss: Loss, rho: f64) -> Result<f64> {
    let xn = spectral_norm(x);
    let needed = loss.lipschitz() * xn * xn;
    if !(rho.is_finite() && rho > 0.0 && rho >= needed * (1.0 - 1e-12)) {
        return Err(DepthError::InvalidParameter {
            name: "rho",
            reason: format!("must be positive and at least L‖X‖₂² = {needed}, got {rho}"),
        });
    }
    Ok(xn)
}

/// Smallest admissible `ρ = L‖X‖₂²`, floored at a tiny positive value for a null design.
pub fn minimal_rho(x: &DMatrix<f64>, loss: Loss) -> f64 {
    let xn = spectral_norm(x);
    (loss.lipschitz() * xn * xn).max(f64::MIN_POSITIVE)
}

/// Closed-form reduced-rank regression `B̂ = B_ls V_r V_rᵀ`.
pub fn fit_rrr(x: &DMatrix<f64>, y: &DMatrix<f64>, r: usize) -> Result<FitResult<DMatrix<f64>>> {
    check_dim("rrr samples", x.nrows(), y.nrows())?;
    let (p, m) = (x.ncols(), y.ncols());
    let xrank = crate::slacked::numerical_rank(x)?;
    let limit = p.min(m).min(xrank);
    if r == 0 || r > limit {
        return Err(DepthError::InvalidParameter {
            name: "rank",
            reason: format!("must lie in 1..={limit} (min of p, m and rank X), got {r}"),
        });
    }
    let b_ls = pinv(x)? * y;
    let fitted = x * &b_ls;
    let (values, vectors) = sorted_symmetric_eigen(&fitted.tr_mul(&fitted));
    let vr = vectors.columns(0, r);
    let b = &b_ls * (vr * vr.transpose());
    let top = values[0].abs().max(f64::MIN_POSITIVE);
    let degenerate = r < m && (values[r - 1] - values[r]) / top < EIGENGAP_TOL;
    let xn = spectral_norm(x);
    let rho = if xn > 0.0 { 1.01 * xn * xn } else { 1.0 };
    let residual = check_rrr_fixed_point(&b, x, y, r, rho)?;
    let objective = 0.5 * (y - x * &b).norm_squared();
    Ok(FitResult {
        parameter: b,
        iterations: 1,
        converged: residual < FIXED_POINT_TOL,
        objective,
        fixed_point_residual: residual,
        degenerate,
    })
}

/// A thresholding fit together with the internal design scale.
///
/// The iterations run on `X̃ = X/√ρ` and `β̃ = √ρ β`, so `λ` is measured on
/// the scaled problem; `scaled` holds `β̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct TispFit {
    pub fit: FitResult<DVector<f64>>,
    pub scaled: DVector<f64>,
    pub design_scale: f64,
}

fn penalized_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    loss: Loss,
    rule: &ThresholdRule,
) -> f64 {
    loss.total(&(x * beta), y) + beta.iter().map(|&b| rule.penalty(b)).sum::<f64>()
}

/// Thresholding-based iterative selection `β̃ ← Θ(β̃ − X̃ᵀ∇l̄(X̃β̃); λ)` from zero.
pub fn fit_tisp(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rule: &ThresholdRule,
    loss: Loss,
    rho: f64,
) -> Result<TispFit> {
    check_dim("tisp response", x.nrows(), y.len())?;
    validate_rho(x, loss, rho)?;
    let scale = 1.0 / rho.sqrt();
    let xs = x * scale;
    let mut beta = DVector::zeros(x.ncols());
    let mut objective = penalized_objective(&xs, y, &beta, loss, rule);
    let mut iterations = 0;
    let mut stopped = false;
    while iterations < MAX_ITERS {
        iterations += 1;
        let grad = xs.tr_mul(&loss.gradient(&(&xs * &beta), y)?);
        let next = (&beta - grad).map(|t| threshold(rule, t));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DepthError::Numeric("thresholding iterate is not finite".into()));
        }
        let value = penalized_objective(&xs, y, &next, loss, rule);
        if value > objective + 1e-10 * (1.0 + objective.abs()) {
            return Err(DepthError::Numeric(format!(
                "surrogate descent failed: objective rose from {objective} to {value} at iteration {iterations}"
            )));
        }
        let step = (&next - &beta).norm();
        beta = next;
        objective = value;
        if step <= STEP_TOL * beta.norm().max(1.0) {
            stopped = true;
            break;
        }
    }
    let check = check_theta_fixed_point(&beta, &xs, y, loss, rule)?;
    Ok(TispFit {
        fit: FitResult {
            parameter: &beta * scale,
            iterations,
            converged: stopped && check.residual < FIXED_POINT_TOL,
            objective,
            fixed_point_residual: check.residual,
            degenerate: check.near_discontinuity,
        },
        scaled: beta,
        design_scale: scale,
    })
}

/// Searches `λ` by bisection for a thresholding fit with exactly `q` nonzeros.
pub fn fit_tisp_with_support(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    kind: RuleKind,
    loss: Loss,
    rho: f64,
    q: usize,
) -> Result<TispFit> {
    let p = x.ncols();
    if q == 0 || q > p {
        return Err(DepthError::InvalidParameter {
            name: "q",
            reason: format!("must lie in 1..={p}, got {q}"),
        });
    }
    let scale = 1.0 / rho.sqrt();
    let g0 = (x * scale).tr_mul(&loss.gradient(&DVector::zeros(x.nrows()), y)?);
    let mut hi = g0.amax() * 1.01 + f64::MIN_POSITIVE;
    let mut lo = 0.0;
    let support = |f: &TispFit| f.scaled.iter().filter(|&&b| b != 0.0).count();
    let mut closest: Option<(usize, TispFit)> = None;
    for _ in 0..60 {
        let lambda = 0.5 * (lo + hi);
        let fit = fit_tisp(x, y, &ThresholdRule::new(kind, lambda)?, loss, rho)?;
        let s = support(&fit);
        if s == q {
            return Ok(fit);
        }
        let gap = s.abs_diff(q);
        if closest.as_ref().is_none_or(|(g, _)| gap < *g) {
            closest = Some((gap, fit));
        }
        if s > q {
            lo = lambda;
        } else {
            hi = lambda;
        }
    }
    let found = closest.map(|(_, f)| support(&f)).unwrap_or(0);
    Err(DepthError::SupportMismatch { expected: q, found })
}

/// Iterative quantile thresholding `β ← Θ#(β − Xᵀ∇l̄(Xβ)/ρ; q)` from zero.
pub fn fit_piq(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    q: usize,
    loss: Loss,
    rho: f64,
) -> Result<FitResult<DVector<f64>>> {
    check_dim("piq response", x.nrows(), y.len())?;
    let p = x.ncols();
    if q == 0 || q > p {
        return Err(DepthError::InvalidParameter {
            name: "q",
            reason: format!("must lie in 1..={p}, got {q}"),
        });
    }
    validate_rho(x, loss, rho)?;
    let step_arg = |beta: &DVector<f64>| -> Result<DVector<f64>> {
        let grad = x.tr_mul(&loss.gradient(&(x * beta), y)?);
        Ok(beta - grad / rho)
    };
    let mut beta = DVector::zeros(p);
    let mut history: Vec<DVector<f64>> = Vec::with_capacity(MAX_CYCLE + 1);
    let mut best = (f64::INFINITY, beta.clone());
    let mut iterations = 0;
    let mut stopped = false;
    let mut cycled = false;
    while iterations < MAX_ITERS {
        iterations += 1;
        let next = quantile_threshold(&step_arg(&beta)?, q)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DepthError::Numeric("quantile iterate is not finite".into()));
        }
        let value = loss.total(&(x * &next), y);
        if value < best.0 {
            best = (value, next.clone());
        }
        let step = (&next - &beta).norm();
        let tol = STEP_TOL * next.norm().max(1.0);
        if step <= tol {
            beta = next;
            stopped = true;
            break;
        }
        if history.iter().any(|h| (h - &next).norm() <= tol) {
            cycled = true;
            beta = best.1.clone();
            break;
        }
        history.push(beta);
        if history.len() > MAX_CYCLE {
            history.remove(0);
        }
        beta = next;
    }
    let arg = step_arg(&beta)?;
    let residual = check_quantile_fixed_point(&beta, x, y, loss, q, rho)?;
    Ok(FitResult {
        objective: loss.total(&(x * &beta), y),
        parameter: beta,
        iterations,
        converged: stopped && !cycled && residual < FIXED_POINT_TOL,
        fixed_point_residual: residual,
        degenerate: quantile_tie(&arg, q),
    })
}

/// Produces perturbed, feasibility-projected candidates around a base fit.
pub trait CandidateSampler: Sync {
    type Param: Clone + Send + Sync;
    fn base(&self) -> Self::Param;
    /// Candidate `index ≥ 1`; an error marks the draw infeasible.
    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<Self::Param>;
}

/// Relative perturbation size for candidate `index`: small, medium, large in turn.
pub fn perturbation_scale(index: usize) -> f64 {
    [0.01, 0.1, 0.5][index % 3]
}

/// Whether candidate `index` perturbs a half-sample refit instead of the base fit.
fn uses_refit(index: usize) -> bool {
    (index / 3) % 2 == 1
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Noise of Frobenius norm `size`.
fn noise(rows: usize, cols: usize, size: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let e = gaussian_matrix(rows, cols, rng);
    let n = e.norm();
    if n > 0.0 {
        e * (size / n)
    } else {
        e
    }
}

fn half_sample(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut rows = sample_indices(rng, n, n.div_ceil(2)).into_vec();
    rows.sort_unstable();
    rows
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows.iter())
}

/// Rank-`r` candidates around a reduced-rank fit.
pub struct RrrSampler<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DMatrix<f64>,
    pub r: usize,
    pub base: DMatrix<f64>,
}

impl CandidateSampler for RrrSampler<'_> {
    type Param = DMatrix<f64>;

    fn base(&self) -> DMatrix<f64> {
        self.base.clone()
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let center = if uses_refit(index) {
            let rows = half_sample(self.x.nrows(), rng);
            fit_rrr(&select_rows(self.x, &rows), &select_rows(self.y, &rows), self.r)?.parameter
        } else {
            self.base.clone()
        };
        let (p, m) = center.shape();
        let size = perturbation_scale(index) * self.base.norm();
        matrix_quantile_threshold(&(center + noise(p, m, size, rng)), self.r)
    }
}

/// `q`-sparse candidates around a sparse coefficient vector.
pub struct SparseSampler<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub q: usize,
    pub loss: Loss,
    pub base: DVector<f64>,
}

impl CandidateSampler for SparseSampler<'_> {
    type Param = DVector<f64>;

    fn base(&self) -> DVector<f64> {
        self.base.clone()
    }

    fn sample(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        let center = if uses_refit(index) {
            let rows = half_sample(self.x.nrows(), rng);
            let xs = select_rows(self.x, &rows);
            let ys = self.y.select_rows(rows.iter());
            let rho = minimal_rho(&xs, self.loss);
            fit_piq(&xs, &ys, self.q, self.loss, rho)?.parameter
        } else {
            self.base.clone()
        };
        let size = perturbation_scale(index) * self.base.norm();
        let e = noise(center.len(), 1, size, rng).column(0).clone_owned();
        let candidate = quantile_threshold(&(center + e), self.q)?;
        let support = candidate.iter().filter(|&&b| b != 0.0).count();
        if support != self.q {
            return Err(DepthError::SupportMismatch {
                expected: self.q,
                found: support,
            });
        }
        Ok(candidate)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<P> {
    pub best: P,
    pub depth: DepthResult,
    /// Index of the winning candidate; 0 is the base fit.
    pub best_index: usize,
    pub base_depth: DepthResult,
    pub evaluated: usize,
    /// Candidates that were infeasible or whose depth could not be evaluated.
    pub skipped: usize,
}

/// RNG for candidate `index`; the stream depends only on `(seed, index)`.
pub fn candidate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Evaluates the base fit and `budget − 1` sampled candidates and returns the deepest.
///
/// Ties go to the lowest candidate index, so results are prefix-stable in `budget`.
pub fn deepest_search<S, F>(
    depth_fn: F,
    sampler: &S,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome<S::Param>>
where
    S: CandidateSampler,
    F: Fn(&S::Param) -> Result<DepthResult> + Sync,
{
    if budget == 0 {
        return Err(DepthError::InvalidParameter {
            name: "budget",
            reason: "must be at least 1".into(),
        });
    }
    let base = sampler.base();
    let base_depth = depth_fn(&base)?;
    let scored: Vec<Option<(S::Param, DepthResult)>> = (1..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = candidate_rng(seed, i);
            let cand = sampler.sample(i, &mut rng).ok()?;
            let depth = depth_fn(&cand).ok()?;
            Some((cand, depth))
        })
        .collect();
    let skipped = scored.iter().filter(|s| s.is_none()).count();
    let mut best = (0usize, base.clone(), base_depth.clone());
    for (k, entry) in scored.into_iter().enumerate() {
        if let Some((cand, depth)) = entry {
            if depth.count > best.2.count {
                best = (k + 1, cand, depth);
            }
        }
    }
    Ok(SearchOutcome {
        best: best.1,
        depth: best.2,
        best_index: best.0,
        base_depth,
        evaluated: budget - skipped,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.2, -0.3, 0.4, 1.0, 0.1, -0.5, 0.3, 1.0, 0.9, -0.6, 0.2, 0.1, 0.8, -0.7, -1.0,
                0.4, 0.5,
            ],
        );
        let y = DVector::from_vec(vec![2.1, 0.7, -0.9, 1.9, 0.1, -2.2]);
        (x, y)
    }

    #[test]
    fn zero_lambda_soft_fit_is_least_squares() {
        let (x, y) = design();
        let rho = minimal_rho(&x, Loss::Squared);
        let fit = fit_tisp(&x, &y, &ThresholdRule::soft(0.0).unwrap(), Loss::Squared, rho).unwrap();
        let ls = pinv(&x).unwrap() * &y;
        assert!(fit.fit.converged);
        assert!((fit.fit.parameter - ls).norm() < 1e-7);
    }

    #[test]
    fn orthogonal_design_soft_fit_is_one_step() {
        let x = DMatrix::<f64>::identity(3, 3);
        let y = DVector::from_vec(vec![3.0, -0.2, 1.5]);
        let fit = fit_tisp(&x, &y, &ThresholdRule::soft(0.5).unwrap(), Loss::Squared, 1.0).unwrap();
        assert_eq!(fit.fit.parameter, DVector::from_vec(vec![2.5, 0.0, 1.0]));
    }

    #[test]
    fn small_rho_is_rejected() {
        let (x, y) = design();
        let rho = 0.5 * minimal_rho(&x, Loss::Squared);
        assert!(fit_tisp(&x, &y, &ThresholdRule::soft(0.1).unwrap(), Loss::Squared, rho).is_err());
        assert!(fit_piq(&x, &y, 2, Loss::Squared, rho).is_err());
    }

    #[test]
    fn piq_on_orthogonal_design_selects_top_entries() {
        let x = DMatrix::<f64>::identity(4, 4);
        let y = DVector::from_vec(vec![0.5, -3.0, 2.0, 0.1]);
        let fit = fit_piq(&x, &y, 2, Loss::Squared, 1.0).unwrap();
        assert_eq!(fit.parameter, DVector::from_vec(vec![0.0, -3.0, 2.0, 0.0]));
        assert!(fit.converged);
    }

    #[test]
    fn rrr_on_identity_design_truncates() {
        let x = DMatrix::<f64>::identity(3, 3);
        let y = DMatrix::from_row_slice(3, 3, &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0]);
        let fit = fit_rrr(&x, &y, 1).unwrap();
        let expected = matrix_quantile_threshold(&y, 1).unwrap();
        assert!((fit.parameter - expected).norm() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn rank_above_limit_is_rejected() {
        let x = DMatrix::<f64>::identity(3, 3);
        let y = DMatrix::zeros(3, 2);
        assert!(fit_rrr(&x, &y, 3).is_err());
    }

    #[test]
    fn candidate_streams_are_independent_of_budget() {
        use rand::Rng;
        let a: f64 = candidate_rng(7, 3).random();
        let b: f64 = candidate_rng(7, 3).random();
        let c: f64 = candidate_rng(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
