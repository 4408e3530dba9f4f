//! Exact angular sweeps over a circle of directions.
//!
//! On a circle `u(θ) = (cos θ, sin θ)` each sample's signed value changes sign
//! only at finitely many event angles. The count at an event is never below
//! the counts on the two neighbouring arcs (the indicator is closed), so the
//! minimum is attained at the midpoint of some arc between consecutive events.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, DVector};

use super::{ReducedProblem, ShiftRule};
use crate::error::{check_dim, DepthError, Result};

/// Grid used for shifts that are not piecewise linear on the circle.
const NONPOLYHEDRAL_GRID: usize = 720;

pub(crate) fn unit_at(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// The two angles at which `⟨e, u(θ)⟩ = 0`; none for `e = 0`.
pub(crate) fn zero_angles(e: [f64; 2], out: &mut Vec<f64>) {
    if e[0] == 0.0 && e[1] == 0.0 {
        return;
    }
    let psi = e[1].atan2(e[0]);
    out.push(wrap(psi + FRAC_PI_2));
    out.push(wrap(psi - FRAC_PI_2));
}

/// Candidate angles: midpoints of the arcs cut out by `events`.
pub(crate) fn arc_midpoints(events: &mut Vec<f64>) -> Vec<f64> {
    events.sort_by(|a, b| a.total_cmp(b));
    events.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    match events.len() {
        0 => vec![0.0],
        1 => vec![wrap(events[0] + std::f64::consts::PI)],
        len => (0..len)
            .map(|i| {
                let a = events[i];
                let b = if i + 1 < len { events[i + 1] } else { events[0] + TAU };
                wrap(0.5 * (a + b))
            })
            .collect(),
    }
}

/// Returns the first minimizing candidate angle and its value.
pub(crate) fn sweep_min<T, F>(candidates: &[f64], eval: F) -> (f64, T)
where
    T: PartialOrd + Copy,
    F: Fn(f64) -> T,
{
    let mut best: Option<(f64, T)> = None;
    for &theta in candidates {
        let value = eval(theta);
        match best {
            Some((_, b)) if !(value < b) => {}
            _ => best = Some((theta, value)),
        }
    }
    best.expect("at least one candidate angle")
}

/// A 2-D section of a reduced problem: directions `frame · u(θ)`.
pub(crate) struct PlaneSection {
    zeta: Vec<[f64; 2]>,
    slack_rows: Vec<[f64; 2]>,
    rule: Option<ShiftRule>,
    tol: f64,
}

impl PlaneSection {
    pub(crate) fn new(rp: &ReducedProblem, frame: &DMatrix<f64>, zero_tol: f64) -> Self {
        let z = rp.influences() * frame;
        let zeta = z.row_iter().map(|r| [r[0], r[1]]).collect();
        let (rule, slack_rows) = match (rp.rule(), rp.slack_map()) {
            (Some(rule), Some(map)) => {
                let rows = map * frame;
                (Some(rule), rows.row_iter().map(|r| [r[0], r[1]]).collect())
            }
            _ => (None, Vec::new()),
        };
        PlaneSection {
            zeta,
            slack_rows,
            rule,
            tol: zero_tol * rp.scale,
        }
    }

    fn from_points(points: &DMatrix<f64>, zero_tol: f64) -> Self {
        let zeta: Vec<[f64; 2]> = points.row_iter().map(|r| [r[0], r[1]]).collect();
        let scale = zeta
            .iter()
            .map(|z| z[0].hypot(z[1]))
            .fold(0.0_f64, f64::max);
        PlaneSection {
            zeta,
            slack_rows: Vec::new(),
            rule: None,
            tol: zero_tol * scale,
        }
    }

    fn shift(&self, u: [f64; 2]) -> f64 {
        match self.rule {
            None => 0.0,
            Some(rule) => {
                let y: Vec<f64> = self
                    .slack_rows
                    .iter()
                    .map(|r| r[0] * u[0] + r[1] * u[1])
                    .collect();
                rule.shift(&y)
            }
        }
    }

    pub(crate) fn count(&self, theta: f64) -> usize {
        let u = unit_at(theta);
        let shift = self.shift(u);
        if shift == f64::NEG_INFINITY {
            return 0;
        }
        self.zeta
            .iter()
            .filter(|z| z[0] * u[0] + z[1] * u[1] + shift >= -self.tol)
            .count()
    }

    pub(crate) fn events(&self) -> Vec<f64> {
        let mut events = Vec::with_capacity(2 * self.zeta.len() + 2 * self.slack_rows.len());
        match self.rule {
            None | Some(ShiftRule::OneSided) => {
                for r in &self.slack_rows {
                    zero_angles(*r, &mut events);
                }
                for z in &self.zeta {
                    zero_angles(*z, &mut events);
                }
            }
            Some(ShiftRule::Box { scale }) => {
                let mut breaks = Vec::new();
                for r in &self.slack_rows {
                    zero_angles(*r, &mut breaks);
                }
                let arcs = arc_midpoints(&mut breaks.clone());
                breaks.sort_by(|a, b| a.total_cmp(b));
                breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
                events.extend_from_slice(&breaks);
                for (idx, &mid) in arcs.iter().enumerate() {
                    let u = unit_at(mid);
                    let mut g = [0.0, 0.0];
                    for r in &self.slack_rows {
                        let s = (r[0] * u[0] + r[1] * u[1]).signum();
                        g[0] += s * r[0];
                        g[1] += s * r[1];
                    }
                    let (start, width) = if breaks.len() < 2 {
                        (0.0, TAU)
                    } else {
                        let a = breaks[idx];
                        let b = if idx + 1 < breaks.len() {
                            breaks[idx + 1]
                        } else {
                            breaks[0] + TAU
                        };
                        (a, b - a)
                    };
                    let mut zeros = Vec::new();
                    for z in &self.zeta {
                        zero_angles([z[0] - scale * g[0], z[1] - scale * g[1]], &mut zeros);
                    }
                    for t in zeros {
                        let offset = (t - start).rem_euclid(TAU);
                        if breaks.len() < 2 || (offset > 0.0 && offset < width) {
                            events.push(t);
                        }
                    }
                }
            }
            Some(ShiftRule::Spectral { .. }) => {
                for z in &self.zeta {
                    zero_angles(*z, &mut events);
                }
                events.extend((0..NONPOLYHEDRAL_GRID).map(|i| TAU * i as f64 / NONPOLYHEDRAL_GRID as f64));
            }
        }
        events
    }

    /// Minimizing angle and count; exact unless the shift is spectral.
    pub(crate) fn minimize(&self) -> (f64, usize) {
        let mut events = self.events();
        let candidates = arc_midpoints(&mut events);
        sweep_min(&candidates, |t| self.count(t))
    }
}

/// Minimizes a reduced problem over the great circle spanned by the orthonormal columns of `frame`.
pub(crate) fn plane_sweep(
    rp: &ReducedProblem,
    frame: &DMatrix<f64>,
    zero_tol: f64,
) -> (DVector<f64>, usize) {
    let section = PlaneSection::new(rp, frame, zero_tol);
    let (theta, _) = section.minimize();
    let u = unit_at(theta);
    let w = frame.column(0) * u[0] + frame.column(1) * u[1];
    let count = rp.count(&w, zero_tol);
    (w, count)
}

/// Exact planar halfspace depth of `points` (n×2): the minimum over unit `v`
/// of `#{i : ⟨v, p_i⟩ ≥ 0}`, returned with a minimizing direction.
pub fn exact_depth_2d(points: &DMatrix<f64>) -> Result<(usize, DVector<f64>)> {
    check_dim("planar sweep", 2, points.ncols())?;
    if points.nrows() == 0 {
        return Err(DepthError::EmptyInfluenceSet);
    }
    crate::error::check_finite("planar sweep", points.iter())?;
    let section = PlaneSection::from_points(points, 1e-12);
    let (theta, count) = section.minimize();
    let u = unit_at(theta);
    Ok((count, DVector::from_vec(vec![u[0], u[1]])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(points: &DMatrix<f64>) -> usize {
        (0..3600)
            .map(|i| {
                let u = unit_at(TAU * i as f64 / 3600.0);
                points
                    .row_iter()
                    .filter(|p| p[0] * u[0] + p[1] * u[1] >= -1e-12)
                    .count()
            })
            .min()
            .unwrap()
    }

    #[test]
    fn planar_examples() {
        let p = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, -1.0]);
        assert_eq!(exact_depth_2d(&p).unwrap().0, 1);
        assert_eq!(brute_force(&p), 1);

        let p = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(exact_depth_2d(&p).unwrap().0, 0);
        let p = DMatrix::zeros(4, 2);
        assert_eq!(exact_depth_2d(&p).unwrap().0, 4);

        let p = DMatrix::from_row_slice(6, 2, &[1.0, 0.0, -1.0, 0.0, 0.3, 2.0, -0.3, -2.0, -1.0, 1.5, 1.0, -1.5]);
        assert_eq!(exact_depth_2d(&p).unwrap().0, 3);
        assert_eq!(brute_force(&p), 3);
    }

    #[test]
    fn returned_direction_attains_the_count() {
        let p = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, -0.4, 1.0, 0.3, -0.9, -1.1, -0.2, 0.5, 0.5]);
        let (count, v) = exact_depth_2d(&p).unwrap();
        let attained = p.row_iter().filter(|r| r[0] * v[0] + r[1] * v[1] >= -1e-12).count();
        assert_eq!(count, attained);
        assert!(count <= brute_force(&p));
    }
}
