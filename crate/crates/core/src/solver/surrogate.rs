//! Smooth stand-ins for the 0-1 indicator and their gradients.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use super::{ReducedProblem, ShiftRule};
use crate::error::DepthError;
use crate::linalg::SortedSvd;

/// Increasing smooth approximation of `1_{≥0}` applied to `t / bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surrogate {
    /// `1 / (1 + e^{−t})`.
    Sigmoid,
    /// Cubic smoothstep from 0 at `t = −1` to 1 at `t = 1`.
    SmoothRamp,
}

impl Surrogate {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Surrogate::Sigmoid => {
                if t >= 0.0 {
                    1.0 / (1.0 + (-t).exp())
                } else {
                    let e = t.exp();
                    e / (1.0 + e)
                }
            }
            Surrogate::SmoothRamp => {
                let u = ((t + 1.0) * 0.5).clamp(0.0, 1.0);
                u * u * (3.0 - 2.0 * u)
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Surrogate::Sigmoid => {
                let s = self.value(t);
                s * (1.0 - s)
            }
            Surrogate::SmoothRamp => {
                let u = (t + 1.0) * 0.5;
                if u <= 0.0 || u >= 1.0 {
                    0.0
                } else {
                    3.0 * u * (1.0 - u)
                }
            }
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Surrogate::Sigmoid => "sigmoid",
            Surrogate::SmoothRamp => "smooth_ramp",
        })
    }
}

impl FromStr for Surrogate {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self, DepthError> {
        match s {
            "sigmoid" => Ok(Surrogate::Sigmoid),
            "smooth_ramp" => Ok(Surrogate::SmoothRamp),
            other => Err(DepthError::InvalidParameter {
                name: "solver.surrogate",
                reason: format!("unknown surrogate `{other}` (expected sigmoid|smooth_ramp)"),
            }),
        }
    }
}

/// Surrogate value with gradients in reduced direction coordinates and in the slack parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateGradient {
    pub value: f64,
    pub direction: DVector<f64>,
    pub slack: DVector<f64>,
}

impl ReducedProblem {
    /// Sign with which the slack parameter enters the shift.
    fn slack_sign(&self) -> f64 {
        match self.rule {
            Some(ShiftRule::OneSided) => -1.0,
            _ => 1.0,
        }
    }

    fn shift_from_param(&self, w: &DVector<f64>, s: &DVector<f64>) -> f64 {
        match &self.slack_map {
            Some(map) if s.len() > 0 => self.slack_sign() * (map * w).dot(s) / self.n as f64,
            _ => 0.0,
        }
    }

    /// `Σ φ((⟨w, c_i⟩ + shift(w, s)) / (h·unit))`, `unit` the median influence norm.
    pub fn surrogate_value(
        &self,
        w: &DVector<f64>,
        s: &DVector<f64>,
        bandwidth: f64,
        kind: Surrogate,
    ) -> f64 {
        let shift = self.shift_from_param(w, s);
        let denom = bandwidth * self.typical;
        (&self.c * w)
            .iter()
            .map(|&a| kind.value((a + shift) / denom))
            .sum()
    }

    /// Euclidean gradients of [`Self::surrogate_value`] with respect to `w` and `s`.
    pub fn surrogate_gradient(
        &self,
        w: &DVector<f64>,
        s: &DVector<f64>,
        bandwidth: f64,
        kind: Surrogate,
    ) -> SurrogateGradient {
        let shift = self.shift_from_param(w, s);
        let denom = bandwidth * self.typical;
        let a = &self.c * w;
        let mut value = 0.0;
        let mut weights = DVector::zeros(self.n);
        for i in 0..self.n {
            let t = (a[i] + shift) / denom;
            value += kind.value(t);
            weights[i] = kind.derivative(t) / denom;
        }
        let total: f64 = weights.sum();
        let mut direction = self.c.tr_mul(&weights);
        let mut slack = DVector::zeros(s.len());
        if let Some(map) = &self.slack_map {
            if s.len() > 0 {
                let factor = self.slack_sign() * total / self.n as f64;
                direction += map.tr_mul(s) * factor;
                slack = (map * w) * factor;
            }
        }
        SurrogateGradient {
            value,
            direction,
            slack,
        }
    }

    /// Slack parameter realizing the most favourable shift at `w`.
    ///
    /// For the one-sided channel the optimum is unbounded; the zero vector is
    /// returned and the exact count (which sends the shift to −∞ when
    /// admissible) is left to the 0-1 evaluation.
    pub fn exact_slack_param(&self, w: &DVector<f64>) -> DVector<f64> {
        let (rule, map) = match (&self.rule, &self.slack_map) {
            (Some(r), Some(m)) => (*r, m),
            _ => return DVector::zeros(0),
        };
        let y = map * w;
        let n = self.n as f64;
        match rule {
            ShiftRule::Box { scale } => y.map(|yj| -scale * n * signum0(yj)),
            ShiftRule::OneSided => DVector::zeros(y.len()),
            ShiftRule::Spectral { scale, rows, cols } => {
                let l = spectral_extreme(&DMatrix::from_column_slice(rows, cols, y.as_slice()), scale * n);
                DVector::from_column_slice(l.as_slice())
            }
        }
    }
}

pub(crate) fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `argmin_{‖L‖₂ ≤ bound} ⟨M, L⟩ = −bound · U Wᵀ` over the nonzero singular pairs of `M`.
pub(crate) fn spectral_extreme(m: &DMatrix<f64>, bound: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    if m.is_empty() || m.amax() == 0.0 {
        return out;
    }
    let svd = match SortedSvd::new(m) {
        Ok(s) => s,
        Err(_) => return out,
    };
    let smax = svd.singular_values[0];
    for k in 0..svd.singular_values.len() {
        if svd.singular_values[k] > 1e-14 * smax {
            out -= svd.u.column(k) * svd.v.column(k).transpose() * bound;
        }
    }
    out
}
