//! Order-2 criteria combining first and second geodesic derivatives.
//!
//! The first factor counts `1_{≳0}(g_i) = 0.5·1{g_i = 0} + 1{g_i > 0}` with
//! `g_i = ⟨v, T_i⟩`; the second counts `1_{≥0}(h_i(v))`.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::search::{orthonormal_frame, polish_directions, restart_seed, seed_directions};
use super::sweep::{arc_midpoints, sweep_min, unit_at, zero_angles};
use super::{lex_cmp, Certificate, DepthProblem, ReducedProblem, SolverConfig};
use crate::error::{check_dim, Result};
use crate::geometry::TangentBasis;
use crate::influence::InfluenceSet;

/// Grid for Hessians given only as a closure.
const CUSTOM_GRID: usize = 3600;

type HessianFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// Second geodesic derivatives as a function of the ambient direction.
pub enum HessianModel {
    /// Direction-free values.
    Fixed(DVector<f64>),
    /// `h_i(v) = sign · (a_i² − ⟨v, z_i⟩²)`, rows of `z` in ambient coordinates.
    Quadratic {
        z: DMatrix<f64>,
        a: DVector<f64>,
        sign: f64,
    },
    /// Arbitrary per-direction evaluation.
    Custom(Box<HessianFn>),
}

impl fmt::Debug for HessianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HessianModel::Fixed(h) => f.debug_tuple("Fixed").field(h).finish(),
            HessianModel::Quadratic { z, a, sign } => f
                .debug_struct("Quadratic")
                .field("z", z)
                .field("a", a)
                .field("sign", sign)
                .finish(),
            HessianModel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order2Criterion {
    /// `Σ 1_{≳0}(g_i) · Σ 1_{≥0}(h_i)`.
    Product,
    /// `Σ 1_{≳0}(g_i) · 1_{≥0}(h_i)`.
    Aggressive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Product,
    Aggressive,
    FirstFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Order2Result {
    pub value: f64,
    /// `Σ 1_{≳0}(g_i)` at the minimizer.
    pub first_factor: f64,
    /// `Σ 1_{≥0}(h_i)` at the minimizer.
    pub second_factor: usize,
    pub n: usize,
    /// `value / n²` for the product criteria, `value / n` for the first factor alone.
    pub normalized: f64,
    pub direction: DVector<f64>,
    pub certificate: Certificate,
}

/// Hessian model expressed in reduced coordinates.
enum ReducedHessian<'a> {
    Fixed(&'a DVector<f64>, f64),
    Quadratic {
        zr: DMatrix<f64>,
        a: &'a DVector<f64>,
        sign: f64,
        tol: f64,
    },
    Custom(&'a HessianFn, &'a TangentBasis),
}

impl ReducedHessian<'_> {
    fn nonneg(&self, w: &DVector<f64>, zero_tol: f64) -> Vec<bool> {
        match self {
            ReducedHessian::Fixed(h, tol) => h.iter().map(|&x| x >= -tol).collect(),
            ReducedHessian::Quadratic { zr, a, sign, tol } => {
                let p = zr * w;
                p.iter()
                    .zip(a.iter())
                    .map(|(&pi, &ai)| sign * (ai * ai - pi * pi) >= -tol)
                    .collect()
            }
            ReducedHessian::Custom(f, basis) => {
                let h = f(&basis.embed(w));
                let tol = zero_tol * h.amax();
                h.iter().map(|&x| x >= -tol).collect()
            }
        }
    }

    /// Angles on the circle `frame·u(θ)` where some `h_i` changes sign.
    fn events(&self, frame: &DMatrix<f64>, out: &mut Vec<f64>) -> bool {
        match self {
            ReducedHessian::Fixed(..) => true,
            ReducedHessian::Quadratic { zr, a, .. } => {
                let zp = zr * frame;
                for (i, row) in zp.row_iter().enumerate() {
                    let r = row[0].hypot(row[1]);
                    let ai = a[i].abs();
                    if r == 0.0 || ai > r {
                        continue;
                    }
                    let phi = row[1].atan2(row[0]);
                    let delta = (ai / r).acos();
                    for base in [phi, phi + PI] {
                        out.push((base + delta).rem_euclid(TAU));
                        out.push((base - delta).rem_euclid(TAU));
                    }
                }
                true
            }
            ReducedHessian::Custom(..) => {
                out.extend((0..CUSTOM_GRID).map(|i| TAU * i as f64 / CUSTOM_GRID as f64));
                false
            }
        }
    }
}

struct Order2Problem<'a> {
    rp: ReducedProblem,
    hessian: ReducedHessian<'a>,
    objective: Objective,
    zero_tol: f64,
}

impl Order2Problem<'_> {
    fn evaluate(&self, w: &DVector<f64>) -> (f64, f64, usize) {
        let tol = self.zero_tol * self.rp.scale;
        let g = self.rp.influences() * w;
        let halves: Vec<f64> = g
            .iter()
            .map(|&x| {
                if x.abs() <= tol {
                    0.5
                } else if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let first: f64 = halves.iter().sum();
        if self.objective == Objective::FirstFactor {
            return (first, first, self.rp.len());
        }
        let nonneg = self.hessian.nonneg(w, self.zero_tol);
        let second = nonneg.iter().filter(|&&b| b).count();
        let value = match self.objective {
            Objective::Product => first * second as f64,
            Objective::Aggressive => halves
                .iter()
                .zip(&nonneg)
                .map(|(&x, &b)| if b { x } else { 0.0 })
                .sum(),
            Objective::FirstFactor => unreachable!(),
        };
        (value, first, second)
    }

    /// Minimizes over the circle spanned by `frame`; the flag reports exactness.
    fn sweep(&self, frame: &DMatrix<f64>) -> (DVector<f64>, f64, bool) {
        let z = self.rp.influences() * frame;
        let mut events = Vec::new();
        for row in z.row_iter() {
            zero_angles([row[0], row[1]], &mut events);
        }
        let exact = self.objective == Objective::FirstFactor || self.hessian.events(frame, &mut events);
        let candidates = arc_midpoints(&mut events);
        let to_w = |t: f64| {
            let u = unit_at(t);
            frame.column(0) * u[0] + frame.column(1) * u[1]
        };
        let (theta, _) = sweep_min(&candidates, |t| self.evaluate(&to_w(t)).0);
        let w = to_w(theta);
        let value = self.evaluate(&w).0;
        (w, value, exact)
    }
}

/// Minimizes an order-2 criterion over unit directions in `space`.
pub fn order2_depth(
    g_set: &InfluenceSet,
    hessian: &HessianModel,
    space: &TangentBasis,
    criterion: Order2Criterion,
    config: &SolverConfig,
) -> Result<Order2Result> {
    let objective = match criterion {
        Order2Criterion::Product => Objective::Product,
        Order2Criterion::Aggressive => Objective::Aggressive,
    };
    run(g_set, Some(hessian), space, objective, config)
}

/// `min_v Σ 1_{≳0}(⟨v, T_i⟩)`, the order-1 depth with the half indicator.
pub fn half_indicator_depth(
    set: &InfluenceSet,
    space: &TangentBasis,
    config: &SolverConfig,
) -> Result<Order2Result> {
    run(set, None, space, Objective::FirstFactor, config)
}

fn run(
    g_set: &InfluenceSet,
    hessian: Option<&HessianModel>,
    space: &TangentBasis,
    objective: Objective,
    config: &SolverConfig,
) -> Result<Order2Result> {
    config.validate()?;
    let n = g_set.len();
    let problem = DepthProblem::new(g_set.clone(), space.clone(), None)?;
    let rp = problem.reduce()?;
    let placeholder = DVector::from_element(n, 1.0);
    let reduced_hessian = match hessian {
        None => ReducedHessian::Fixed(&placeholder, 0.0),
        Some(HessianModel::Fixed(h)) => {
            check_dim("order-2 hessian values", n, h.len())?;
            ReducedHessian::Fixed(h, config.zero_tol * h.amax())
        }
        Some(HessianModel::Quadratic { z, a, sign }) => {
            check_dim("order-2 hessian samples", n, z.nrows())?;
            check_dim("order-2 hessian dimension", space.ambient_dim(), z.ncols())?;
            check_dim("order-2 hessian offsets", n, a.len())?;
            let zmax = z.row_iter().map(|r| r.norm()).fold(0.0_f64, f64::max);
            let amax = a.amax();
            ReducedHessian::Quadratic {
                zr: z * space.matrix(),
                a,
                sign: *sign,
                tol: config.zero_tol * (zmax * zmax + amax * amax),
            }
        }
        Some(HessianModel::Custom(f)) => ReducedHessian::Custom(f.as_ref(), space),
    };
    let op = Order2Problem {
        rp,
        hessian: reduced_hessian,
        objective,
        zero_tol: config.zero_tol,
    };
    let k = op.rp.dim();
    let (w, certificate) = if k == 1 {
        let plus = DVector::from_element(1, 1.0);
        let minus = DVector::from_element(1, -1.0);
        let w = if op.evaluate(&minus).0 < op.evaluate(&plus).0 {
            minus
        } else {
            plus
        };
        (w, Certificate::ExactOracle)
    } else if k == 2 {
        let (w, _, exact) = op.sweep(&DMatrix::identity(2, 2));
        let cert = if exact {
            Certificate::ExactOracle
        } else {
            Certificate::HeuristicUpperBound
        };
        (w, cert)
    } else {
        (heuristic(&op, config), Certificate::HeuristicUpperBound)
    };
    let (value, first, second) = op.evaluate(&w);
    let mut direction = space.embed(&w);
    let norm = direction.norm();
    if norm > 0.0 {
        direction /= norm;
    }
    let denom = if objective == Objective::FirstFactor {
        n as f64
    } else {
        (n * n) as f64
    };
    Ok(Order2Result {
        value,
        first_factor: first,
        second_factor: second,
        n,
        normalized: value / denom,
        direction,
        certificate,
    })
}

fn heuristic(op: &Order2Problem<'_>, config: &SolverConfig) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds = seed_directions(&op.rp, config, &mut rng);
    let mut scored: Vec<(f64, usize)> = seeds
        .par_iter()
        .map(|w| op.evaluate(w).0)
        .collect::<Vec<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(lex_cmp(&seeds[a.1], &seeds[b.1])));
    let top: Vec<usize> = scored.iter().take(config.restarts).map(|&(_, i)| i).collect();
    let polished: Vec<(f64, DVector<f64>)> = top
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(config.seed, slot));
            let mut w = seeds[i].clone();
            let mut value = op.evaluate(&w).0;
            for _ in 0..config.polish_rounds {
                let mut improved = false;
                for u in polish_directions(op.rp.dim(), &mut rng) {
                    let Some(frame) = orthonormal_frame(&w, &u) else {
                        continue;
                    };
                    let (w2, v2, _) = op.sweep(&frame);
                    if v2 < value {
                        w = w2;
                        value = v2;
                        improved = true;
                    }
                }
                if !improved || value == 0.0 {
                    break;
                }
            }
            (value, w)
        })
        .collect();
    polished
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(lex_cmp(&a.1, &b.1)))
        .map(|(_, w)| w)
        .expect("at least one restart")
}
