//! Minimization of halfspace-type counts over unit directions in a subspace.
//!
//! A [`DepthProblem`] couples influences, the subspace of admissible
//! directions and an optional slack channel. For a fixed direction the slack
//! only enters through one scalar shift shared by every sample, so the inner
//! slack problem is solved in closed form (see [`slack_step_01`]) and the
//! outer search runs over the unit sphere in reduced coordinates.

mod order2;
mod search;
mod slack;
mod surrogate;
mod sweep;

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, DepthError, Result};
use crate::geometry::TangentBasis;
use crate::influence::InfluenceSet;
use crate::linalg::{nuclear_norm, orthonormality_defect, unvec, vec_col_major};

pub use order2::{
    half_indicator_depth, order2_depth, HessianModel, Order2Criterion, Order2Result,
};
pub use slack::{slack_step_01, slack_step_smooth, SmoothSlack};
pub use surrogate::{Surrogate, SurrogateGradient};
pub use sweep::exact_depth_2d;

/// Admissible directions may leave their subspace by at most this much.
pub const DIRECTION_TOL: f64 = 1e-8;

/// How slack variables enter the depth criterion.
///
/// Indices refer to ambient influence coordinates. Coordinates not listed
/// are forced to zero (the equality constraints).
#[derive(Debug, Clone, PartialEq)]
pub enum SlackChannel {
    /// Adds `⟨v, s⟩/n` with `|s_j| ≤ bound` on the free coordinates.
    Box { free: Vec<usize>, bound: f64 },
    /// Adds `−⟨v, s⟩/n` with `s_j ≥ 0` (unbounded) on the free coordinates.
    OneSided { free: Vec<usize> },
    /// Adds `⟨V, P⊥ L Q⊥ᵀ⟩/n` with `‖L‖₂ ≤ bound`, where `V` is the p×m block
    /// of the direction starting at ambient index `start`.
    Spectral {
        start: usize,
        p_perp: DMatrix<f64>,
        q_perp: DMatrix<f64>,
        bound: f64,
    },
}

impl SlackChannel {
    /// Box channel whose free coordinates are `start + j` for every `j` with `mask[j] == false`.
    pub fn box_from_mask(mask: &[bool], start: usize, bound: f64) -> Self {
        let free = mask
            .iter()
            .enumerate()
            .filter(|(_, &fixed)| !fixed)
            .map(|(j, _)| start + j)
            .collect();
        SlackChannel::Box { free, bound }
    }

    fn validate(&self, d: usize) -> Result<()> {
        let check_free = |free: &[usize]| -> Result<()> {
            if free.iter().any(|&j| j >= d) {
                return Err(DepthError::InvalidParameter {
                    name: "slack channel",
                    reason: format!("free coordinate out of range for ambient dimension {d}"),
                });
            }
            Ok(())
        };
        let check_bound = |bound: f64| -> Result<()> {
            if !(bound.is_finite() && bound >= 0.0) {
                return Err(DepthError::InvalidParameter {
                    name: "slack bound",
                    reason: format!("must be finite and nonnegative, got {bound}"),
                });
            }
            Ok(())
        };
        match self {
            SlackChannel::Box { free, bound } => {
                check_free(free)?;
                check_bound(*bound)
            }
            SlackChannel::OneSided { free } => check_free(free),
            SlackChannel::Spectral {
                start,
                p_perp,
                q_perp,
                bound,
            } => {
                check_bound(*bound)?;
                let (p, m) = (p_perp.nrows(), q_perp.nrows());
                if start + p * m > d {
                    return Err(DepthError::DimensionMismatch {
                        context: "spectral slack block",
                        expected: d,
                        found: start + p * m,
                    });
                }
                for (name, f) in [("P-complement", p_perp), ("Q-complement", q_perp)] {
                    if f.ncols() > 0 {
                        let deviation = orthonormality_defect(f);
                        if deviation > 1e-10 {
                            return Err(DepthError::NotStiefel {
                                context: if name == "P-complement" {
                                    "spectral slack P-complement"
                                } else {
                                    "spectral slack Q-complement"
                                },
                                deviation,
                            });
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Channels that cannot move the shift are dropped so that they share the
    /// unslacked code path exactly.
    fn is_inert(&self) -> bool {
        match self {
            SlackChannel::Box { free, bound } => free.is_empty() || *bound == 0.0,
            SlackChannel::OneSided { free } => free.is_empty(),
            SlackChannel::Spectral {
                p_perp,
                q_perp,
                bound,
                ..
            } => p_perp.ncols() == 0 || q_perp.ncols() == 0 || *bound == 0.0,
        }
    }

    /// The part of an ambient direction the slack can act on.
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            SlackChannel::Box { free, .. } | SlackChannel::OneSided { free } => {
                DVector::from_iterator(free.len(), free.iter().map(|&j| v[j]))
            }
            SlackChannel::Spectral {
                start,
                p_perp,
                q_perp,
                ..
            } => {
                let (p, m) = (p_perp.nrows(), q_perp.nrows());
                let block = unvec(&v.as_slice()[*start..start + p * m], p, m);
                vec_col_major(&(p_perp.tr_mul(&block) * q_perp))
            }
        }
    }

    fn rule(&self, n: usize) -> ShiftRule {
        match self {
            SlackChannel::Box { bound, .. } => ShiftRule::Box {
                scale: bound / n as f64,
            },
            SlackChannel::OneSided { .. } => ShiftRule::OneSided,
            SlackChannel::Spectral {
                p_perp,
                q_perp,
                bound,
                ..
            } => ShiftRule::Spectral {
                scale: bound / n as f64,
                rows: p_perp.ncols(),
                cols: q_perp.ncols(),
            },
        }
    }
}

/// Most favourable shift as a function of the projected direction `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ShiftRule {
    Box { scale: f64 },
    OneSided,
    Spectral { scale: f64, rows: usize, cols: usize },
}

impl ShiftRule {
    pub(crate) fn shift(&self, y: &[f64]) -> f64 {
        match *self {
            ShiftRule::Box { scale } => y.iter().map(|&yj| -(scale * yj.abs())).sum(),
            ShiftRule::OneSided => {
                if y.iter().any(|&yj| yj > 0.0) {
                    f64::NEG_INFINITY
                } else {
                    0.0
                }
            }
            ShiftRule::Spectral { scale, rows, cols } => {
                -scale * nuclear_norm(&DMatrix::from_column_slice(rows, cols, y))
            }
        }
    }

    /// True when the shift is piecewise linear in the direction.
    pub(crate) fn is_polyhedral(&self) -> bool {
        !matches!(self, ShiftRule::Spectral { .. })
    }
}

/// A concrete slack assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Slack {
    /// Box or one-sided slack as an ambient-length vector (zero off the free set).
    Vector(DVector<f64>),
    /// One-sided slack `t·ray` in the limit `t → ∞`.
    Ray(DVector<f64>),
    /// Spectral slack `L`, of shape `(p−r)×(m−r)`.
    Matrix(DMatrix<f64>),
}

/// Influences, admissible directions and slack.
#[derive(Debug, Clone)]
pub struct DepthProblem {
    influences: InfluenceSet,
    space: TangentBasis,
    slack: Option<SlackChannel>,
    /// `T_i + offset`, one row per sample.
    shifted: DMatrix<f64>,
    scale: f64,
}

impl DepthProblem {
    pub fn new(
        influences: InfluenceSet,
        space: TangentBasis,
        slack: Option<SlackChannel>,
    ) -> Result<Self> {
        if influences.is_empty() {
            return Err(DepthError::EmptyInfluenceSet);
        }
        let d = influences.ambient_dim();
        check_dim("direction space", d, space.ambient_dim())?;
        if let Some(ch) = &slack {
            ch.validate(d)?;
        }
        let slack = slack.filter(|ch| !ch.is_inert());
        let mut shifted = influences.rows().clone();
        if let Some(o) = influences.offset() {
            for mut row in shifted.row_iter_mut() {
                row += o.transpose();
            }
        }
        let scale = shifted
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0_f64, f64::max);
        Ok(DepthProblem {
            influences,
            space,
            slack,
            shifted,
            scale,
        })
    }

    pub fn unconstrained(influences: InfluenceSet) -> Result<Self> {
        let d = influences.ambient_dim();
        Self::new(influences, TangentBasis::identity(d), None)
    }

    pub fn influences(&self) -> &InfluenceSet {
        &self.influences
    }

    pub fn space(&self) -> &TangentBasis {
        &self.space
    }

    /// The slack channel, or `None` when absent or inert.
    pub fn slack(&self) -> Option<&SlackChannel> {
        self.slack.as_ref()
    }

    pub fn len(&self) -> usize {
        self.shifted.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.shifted.nrows() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.shifted.ncols()
    }

    pub fn reduced_dim(&self) -> usize {
        self.space.dim()
    }

    /// Absolute tolerance below zero that still counts as `≥ 0`.
    pub fn count_tolerance(&self, zero_tol: f64) -> f64 {
        zero_tol * self.scale
    }

    /// Inner products `⟨v, T_i + offset⟩`.
    pub fn projections(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.shifted * v
    }

    fn check_direction(&self, v: &DVector<f64>) -> Result<()> {
        check_dim("direction", self.ambient_dim(), v.len())?;
        let norm = v.norm();
        if (norm - 1.0).abs() > DIRECTION_TOL {
            return Err(DepthError::NotUnit {
                context: "direction",
                norm,
            });
        }
        let residual = self.space.residual(v);
        if residual > DIRECTION_TOL {
            return Err(DepthError::InadmissibleDirection {
                context: "direction outside the admissible subspace",
                residual,
            });
        }
        Ok(())
    }

    /// Shift contributed by a concrete slack at direction `v`.
    fn slack_shift(&self, v: &DVector<f64>, slack: Option<&Slack>) -> Result<f64> {
        let n = self.len() as f64;
        match (&self.slack, slack) {
            (None, None) => Ok(0.0),
            (None, Some(Slack::Vector(s))) if s.iter().all(|&x| x == 0.0) => Ok(0.0),
            (None, Some(_)) => Err(DepthError::InfeasibleSlack(
                "problem has no active slack channel".into(),
            )),
            (Some(_), None) => Ok(0.0),
            (Some(SlackChannel::Box { free, bound }), Some(Slack::Vector(s))) => {
                check_dim("slack vector", self.ambient_dim(), s.len())?;
                let mut in_free = vec![false; s.len()];
                for &j in free {
                    in_free[j] = true;
                }
                for (j, &sj) in s.iter().enumerate() {
                    if !in_free[j] && sj != 0.0 {
                        return Err(DepthError::InfeasibleSlack(format!(
                            "slack coordinate {j} must be zero"
                        )));
                    }
                    if sj.abs() > bound + 1e-12 {
                        return Err(DepthError::InfeasibleSlack(format!(
                            "|s[{j}]| = {} exceeds bound {bound}",
                            sj.abs()
                        )));
                    }
                }
                Ok(free.iter().map(|&j| v[j] * s[j]).sum::<f64>() / n)
            }
            (Some(SlackChannel::OneSided { free }), Some(Slack::Vector(s)))
            | (Some(SlackChannel::OneSided { free }), Some(Slack::Ray(s))) => {
                check_dim("slack vector", self.ambient_dim(), s.len())?;
                let mut in_free = vec![false; s.len()];
                for &j in free {
                    in_free[j] = true;
                }
                for (j, &sj) in s.iter().enumerate() {
                    if (!in_free[j] && sj != 0.0) || sj < 0.0 {
                        return Err(DepthError::InfeasibleSlack(format!(
                            "slack coordinate {j} violates s ≥ 0 or the equality mask"
                        )));
                    }
                }
                let inner: f64 = free.iter().map(|&j| v[j] * s[j]).sum();
                if matches!(slack, Some(Slack::Ray(_))) {
                    Ok(if inner > 0.0 {
                        f64::NEG_INFINITY
                    } else if inner < 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    })
                } else {
                    Ok(-inner / n)
                }
            }
            (Some(ch @ SlackChannel::Spectral { bound, .. }), Some(Slack::Matrix(l))) => {
                let y = ch.project(v);
                let (rows, cols) = match ch.rule(1) {
                    ShiftRule::Spectral { rows, cols, .. } => (rows, cols),
                    _ => unreachable!(),
                };
                if l.shape() != (rows, cols) {
                    return Err(DepthError::InfeasibleSlack(format!(
                        "spectral slack must be {rows}×{cols}"
                    )));
                }
                let norm = crate::linalg::spectral_norm(l);
                if norm > bound + 1e-10 {
                    return Err(DepthError::InfeasibleSlack(format!(
                        "spectral norm {norm} exceeds bound {bound}"
                    )));
                }
                Ok(y.dot(&vec_col_major(l)) / n)
            }
            (Some(_), Some(_)) => Err(DepthError::InfeasibleSlack(
                "slack kind does not match the channel".into(),
            )),
        }
    }

    /// Expresses the problem in the coordinates of its direction space.
    pub fn reduce(&self) -> Result<ReducedProblem> {
        let k = self.reduced_dim();
        if k == 0 {
            return Err(DepthError::EmptyDirectionSpace);
        }
        let basis = self.space.matrix();
        let c = &self.shifted * basis;
        let (rule, slack_map) = match &self.slack {
            None => (None, None),
            Some(ch) => {
                let mut map = DMatrix::zeros(ch.project(&DVector::zeros(self.ambient_dim())).len(), k);
                for j in 0..k {
                    map.set_column(j, &ch.project(&basis.column(j).clone_owned()));
                }
                (Some(ch.rule(self.len())), Some(map))
            }
        };
        let norms: Vec<f64> = c.row_iter().map(|r| r.norm()).filter(|&x| x > 0.0).collect();
        let typical = median(&norms).unwrap_or(1.0);
        Ok(ReducedProblem {
            c,
            rule,
            slack_map,
            n: self.len(),
            scale: self.scale,
            typical,
        })
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// A [`DepthProblem`] in reduced coordinates `w ∈ Rᵏ`, `v = basis·w`.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    /// Reduced influences, one row per sample.
    c: DMatrix<f64>,
    rule: Option<ShiftRule>,
    /// Linear map from `w` to the slack-visible part of the direction.
    slack_map: Option<DMatrix<f64>>,
    n: usize,
    scale: f64,
    /// Median nonzero reduced influence norm; sets the surrogate bandwidth unit.
    typical: f64,
}

impl ReducedProblem {
    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn influences(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Dimension of the slack parameter used by the surrogate, 0 without slack.
    pub fn slack_dim(&self) -> usize {
        self.slack_map.as_ref().map_or(0, |m| m.nrows())
    }

    pub(crate) fn rule(&self) -> Option<ShiftRule> {
        self.rule
    }

    pub(crate) fn slack_map(&self) -> Option<&DMatrix<f64>> {
        self.slack_map.as_ref()
    }

    /// Most favourable shift at reduced direction `w`.
    pub fn optimal_shift(&self, w: &DVector<f64>) -> f64 {
        match (&self.rule, &self.slack_map) {
            (Some(rule), Some(map)) => rule.shift((map * w).as_slice()),
            _ => 0.0,
        }
    }

    /// Exact count at `w` under the most favourable slack.
    pub fn count(&self, w: &DVector<f64>, zero_tol: f64) -> usize {
        let shift = self.optimal_shift(w);
        if shift == f64::NEG_INFINITY {
            return 0;
        }
        let tol = zero_tol * self.scale;
        (&self.c * w).iter().filter(|&&a| a + shift >= -tol).count()
    }
}

/// Whether a reported count is provably minimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certificate {
    ExactOracle,
    HeuristicUpperBound,
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Certificate::ExactOracle => "exact_oracle",
            Certificate::HeuristicUpperBound => "heuristic_upper_bound",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub restarts: usize,
    pub surrogate: Surrogate,
    pub bandwidth_start: f64,
    pub bandwidth_end: f64,
    pub stages: usize,
    pub max_iters: usize,
    pub step_init: f64,
    pub step_shrink: f64,
    pub seed: u64,
    pub zero_tol: f64,
    /// Cap on pairwise-difference seeds.
    pub pair_cap: usize,
    /// Number of random seed directions.
    pub random_seeds: usize,
    /// Rounds of great-circle polishing after each refinement.
    pub polish_rounds: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            restarts: 64,
            surrogate: Surrogate::Sigmoid,
            bandwidth_start: 1.0,
            bandwidth_end: 1e-3,
            stages: 8,
            max_iters: 200,
            step_init: 1.0,
            step_shrink: 0.5,
            seed: 0,
            zero_tol: 1e-12,
            pair_cap: 256,
            random_seeds: 64,
            polish_rounds: 4,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(DepthError::InvalidParameter {
                name,
                reason: reason.into(),
            })
        };
        if self.restarts == 0 {
            return bad("solver.restarts", "must be at least 1");
        }
        if self.stages == 0 {
            return bad("solver.stages", "must be at least 1");
        }
        if !(self.bandwidth_end > 0.0 && self.bandwidth_start >= self.bandwidth_end) {
            return bad(
                "solver.bandwidth",
                "bandwidths must be positive and non-increasing",
            );
        }
        if !(self.step_init > 0.0 && self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return bad("solver.step", "need step_init > 0 and 0 < step_shrink < 1");
        }
        if !(self.zero_tol >= 0.0 && self.zero_tol.is_finite()) {
            return bad("solver.zero_tol", "must be finite and nonnegative");
        }
        Ok(())
    }

    /// Bandwidth of continuation stage `stage`, geometric from start to end.
    pub fn bandwidth(&self, stage: usize) -> f64 {
        if self.stages == 1 {
            return self.bandwidth_end;
        }
        let t = stage as f64 / (self.stages - 1) as f64;
        self.bandwidth_start * (self.bandwidth_end / self.bandwidth_start).powf(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub restarts_used: usize,
    pub final_bandwidth: Option<f64>,
    pub candidates_scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthResult {
    pub count: usize,
    pub n: usize,
    pub normalized: f64,
    /// Minimizing direction in ambient coordinates.
    pub direction: DVector<f64>,
    pub slack: Option<Slack>,
    /// Shift `⟨v, embed(s)⟩/n` realized by the slack.
    pub shift: f64,
    pub certificate: Certificate,
    pub diagnostics: Diagnostics,
}

/// Number of samples with `⟨v, T_i⟩ + shift(v, s) ≥ 0`, with `1_{≥0}(0) = 1`.
pub fn evaluate_01(
    problem: &DepthProblem,
    v: &DVector<f64>,
    slack: Option<&Slack>,
    zero_tol: f64,
) -> Result<usize> {
    problem.check_direction(v)?;
    let shift = problem.slack_shift(v, slack)?;
    Ok(count_with_shift(problem, v, shift, zero_tol))
}

fn count_with_shift(problem: &DepthProblem, v: &DVector<f64>, shift: f64, zero_tol: f64) -> usize {
    if shift == f64::NEG_INFINITY {
        return 0;
    }
    let tol = problem.count_tolerance(zero_tol);
    problem
        .projections(v)
        .iter()
        .filter(|&&a| a + shift >= -tol)
        .count()
}

/// Lexicographic order on directions, used to break ties deterministically.
pub(crate) fn lex_cmp(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Minimum count over unit admissible directions and feasible slack.
pub fn solve_depth(problem: &DepthProblem, config: &SolverConfig) -> Result<DepthResult> {
    config.validate()?;
    let reduced = problem.reduce()?;
    let found = search::minimize(&reduced, config);
    finish(problem, &found.w, found.certificate, found.diagnostics, config)
}

/// Re-scores a reduced direction in ambient coordinates and packages the result.
fn finish(
    problem: &DepthProblem,
    w: &DVector<f64>,
    certificate: Certificate,
    diagnostics: Diagnostics,
    config: &SolverConfig,
) -> Result<DepthResult> {
    let mut direction = problem.space.embed(w);
    let norm = direction.norm();
    if norm > 0.0 {
        direction /= norm;
    }
    let (slack, shift) = match problem.slack {
        Some(_) => {
            let (s, _) = slack_step_01(problem, &direction)?;
            let shift = problem.slack_shift(&direction, Some(&s))?;
            (Some(s), shift)
        }
        None => (None, 0.0),
    };
    let count = count_with_shift(problem, &direction, shift, config.zero_tol);
    let n = problem.len();
    Ok(DepthResult {
        count,
        n,
        normalized: count as f64 / n as f64,
        direction,
        slack,
        shift,
        certificate,
        diagnostics,
    })
}
