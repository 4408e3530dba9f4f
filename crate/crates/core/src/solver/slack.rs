//! Slack steps for a fixed direction.
//!
//! With `v` fixed the slack contributes the same scalar `c = ⟨v, embed(s)⟩/n`
//! to every sample and the count `Σ 1_{≥0}(a_i + c)` is non-increasing in `c`.
//! The optimal `c` is therefore the lower end of its feasible range:
//! `−λ Σ_{free} |v_j| / n` for the box, `−bound ‖P⊥ᵀ V Q⊥‖_* / n` for the
//! spectral ball, and `−∞` for the one-sided channel as soon as some free
//! `v_j > 0`.

use nalgebra::{DMatrix, DVector};

use super::surrogate::{signum0, spectral_extreme};
use super::{DepthProblem, Slack, SlackChannel, SolverConfig, Surrogate};
use crate::error::{check_dim, DepthError, Result};
use crate::linalg::{vec_col_major, SortedSvd};

/// Stationarity tolerance of the projected-gradient slack step.
const SMOOTH_SLACK_TOL: f64 = 1e-8;
const SMOOTH_SLACK_MAX_ITERS: usize = 1000;

fn no_channel() -> DepthError {
    DepthError::InvalidParameter {
        name: "slack channel",
        reason: "problem has no active slack channel".into(),
    }
}

/// Optimal slack for the 0-1 criterion at fixed ambient direction `v`, with the shift it realizes.
pub fn slack_step_01(problem: &DepthProblem, v: &DVector<f64>) -> Result<(Slack, f64)> {
    let channel = problem.slack().ok_or_else(no_channel)?;
    check_dim("slack step direction", problem.ambient_dim(), v.len())?;
    let d = problem.ambient_dim();
    let n = problem.len() as f64;
    match channel {
        SlackChannel::Box { free, bound } => {
            let mut s = DVector::zeros(d);
            for &j in free {
                s[j] = -bound * signum0(v[j]);
            }
            let shift = free.iter().map(|&j| v[j] * s[j]).sum::<f64>() / n;
            Ok((Slack::Vector(s), shift))
        }
        SlackChannel::OneSided { free } => {
            let best = free
                .iter()
                .copied()
                .filter(|&j| v[j] > 0.0)
                .fold(None::<usize>, |acc, j| match acc {
                    Some(k) if v[k] >= v[j] => Some(k),
                    _ => Some(j),
                });
            match best {
                Some(j) => {
                    let mut ray = DVector::zeros(d);
                    ray[j] = 1.0;
                    Ok((Slack::Ray(ray), f64::NEG_INFINITY))
                }
                None => Ok((Slack::Vector(DVector::zeros(d)), 0.0)),
            }
        }
        SlackChannel::Spectral {
            p_perp,
            q_perp,
            bound,
            ..
        } => {
            let y = channel.project(v);
            let m = DMatrix::from_column_slice(p_perp.ncols(), q_perp.ncols(), y.as_slice());
            let l = spectral_extreme(&m, *bound);
            let shift = y.dot(&vec_col_major(&l)) / n;
            Ok((Slack::Matrix(l), shift))
        }
    }
}

/// Result of the projected-gradient slack step.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSlack {
    pub slack: Slack,
    pub shift: f64,
    pub iterations: usize,
    /// `‖s − proj(s − ∇F(s))‖` at exit.
    pub stationarity: f64,
}

/// Minimizes the smoothed criterion over the slack alone by projected gradient descent.
///
/// The box is handled by clipping and the spectral ball by clipping singular
/// values. The one-sided channel has an unbounded optimum whenever it is
/// active, so it is delegated to [`slack_step_01`].
pub fn slack_step_smooth(
    problem: &DepthProblem,
    v: &DVector<f64>,
    bandwidth: f64,
    config: &SolverConfig,
) -> Result<SmoothSlack> {
    let channel = problem.slack().ok_or_else(no_channel)?;
    if let SlackChannel::OneSided { .. } = channel {
        let (slack, shift) = slack_step_01(problem, v)?;
        return Ok(SmoothSlack {
            slack,
            shift,
            iterations: 0,
            stationarity: 0.0,
        });
    }
    check_dim("slack step direction", problem.ambient_dim(), v.len())?;
    let reduced = problem.reduce()?;
    let w = problem.space().coordinates(v);
    let kind: Surrogate = config.surrogate;

    let project = |s: &DVector<f64>| -> DVector<f64> {
        match channel {
            SlackChannel::Box { bound, .. } => s.map(|x| x.clamp(-bound, *bound)),
            SlackChannel::Spectral {
                p_perp,
                q_perp,
                bound,
                ..
            } => {
                let m = DMatrix::from_column_slice(p_perp.ncols(), q_perp.ncols(), s.as_slice());
                DVector::from_column_slice(clip_singular_values(&m, *bound).as_slice())
            }
            SlackChannel::OneSided { .. } => unreachable!(),
        }
    };
    let radius = match channel {
        SlackChannel::Box { bound, .. } | SlackChannel::Spectral { bound, .. } => *bound,
        SlackChannel::OneSided { .. } => unreachable!(),
    };

    let mut s = DVector::zeros(reduced.slack_dim());
    let mut f = reduced.surrogate_value(&w, &s, bandwidth, kind);
    let mut iterations = 0;
    let mut stationarity = f64::INFINITY;
    while iterations < SMOOTH_SLACK_MAX_ITERS {
        let g = reduced.surrogate_gradient(&w, &s, bandwidth, kind).slack;
        stationarity = (&s - project(&(&s - &g))).norm();
        if stationarity <= SMOOTH_SLACK_TOL {
            break;
        }
        let gmax = g.amax();
        let mut step = if gmax > 0.0 { 2.0 * radius / gmax } else { 1.0 };
        let mut accepted = false;
        for _ in 0..60 {
            let trial = project(&(&s - &g * step));
            let ft = reduced.surrogate_value(&w, &trial, bandwidth, kind);
            let decrease = g.dot(&(&s - &trial));
            if ft <= f - 1e-4 * decrease {
                let moved = (&trial - &s).norm();
                s = trial;
                f = ft;
                accepted = moved > 0.0;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    let slack = param_to_slack(problem, channel, &s);
    let shift = problem.slack_shift(v, Some(&slack))?;
    Ok(SmoothSlack {
        slack,
        shift,
        iterations,
        stationarity,
    })
}

/// Projects onto `{L : ‖L‖₂ ≤ bound}` by clipping singular values.
pub(crate) fn clip_singular_values(m: &DMatrix<f64>, bound: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    match SortedSvd::new(m) {
        Ok(svd) => {
            if svd.singular_values.iter().all(|&s| s <= bound) {
                return m.clone();
            }
            let clipped = svd.singular_values.map(|s| s.min(bound));
            &svd.u * DMatrix::from_diagonal(&clipped) * svd.v.transpose()
        }
        Err(_) => m.clone(),
    }
}

/// Converts a slack parameter over the channel coordinates into a [`Slack`].
pub(crate) fn param_to_slack(problem: &DepthProblem, channel: &SlackChannel, s: &DVector<f64>) -> Slack {
    match channel {
        SlackChannel::Box { free, .. } | SlackChannel::OneSided { free } => {
            let mut full = DVector::zeros(problem.ambient_dim());
            for (k, &j) in free.iter().enumerate() {
                full[j] = s[k];
            }
            Slack::Vector(full)
        }
        SlackChannel::Spectral { p_perp, q_perp, .. } => Slack::Matrix(DMatrix::from_column_slice(
            p_perp.ncols(),
            q_perp.ncols(),
            s.as_slice(),
        )),
    }
}
