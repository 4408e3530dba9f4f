//! Direction search: exact in one and two reduced dimensions, multi-start otherwise.

use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::sweep::{plane_sweep, PlaneSection};
use super::{lex_cmp, Certificate, Diagnostics, ReducedProblem, ShiftRule, SolverConfig};
use crate::linalg::pinv;

/// Sample cap for the one-seed-per-influence family.
const MAX_INFLUENCE_SEEDS: usize = 4000;
/// Largest number of great circles for the vertex enumeration in three dimensions.
const MAX_ARRANGEMENT_NORMALS: usize = 200;
/// Box channels with more free coordinates skip the sign-pattern normals.
const MAX_PATTERN_COORDS: usize = 4;
const VERTEX_PERTURBATION: f64 = 1e-6;
const COORDINATE_PLANES: usize = 12;
const RANDOM_PLANES: usize = 8;

pub(crate) struct Found {
    pub w: DVector<f64>,
    pub certificate: Certificate,
    pub diagnostics: Diagnostics,
}

pub(crate) fn restart_seed(seed: u64, slot: usize) -> u64 {
    seed ^ (slot as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn normalized(v: DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        Some(v / n)
    } else {
        None
    }
}

fn random_unit(k: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(u) = normalized(v) {
            return u;
        }
    }
}

/// `[w, u⊥]` with `u⊥` the normalized part of `u` orthogonal to `w`.
pub(crate) fn orthonormal_frame(w: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
    let perp = u - w * w.dot(u);
    if perp.norm() < 1e-8 {
        return None;
    }
    let perp = perp.normalize();
    let mut frame = DMatrix::zeros(w.len(), 2);
    frame.set_column(0, w);
    frame.set_column(1, &perp);
    Some(frame)
}

/// Coordinate axes followed by random directions, used to pick polishing planes.
pub(crate) fn polish_directions(k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut dirs: Vec<DVector<f64>> = (0..k.min(COORDINATE_PLANES))
        .map(|j| {
            let mut e = DVector::zeros(k);
            e[j] = 1.0;
            e
        })
        .collect();
    if k > COORDINATE_PLANES {
        for j in sample(rng, k, COORDINATE_PLANES.min(k)).into_iter() {
            let mut e = DVector::zeros(k);
            e[j] = 1.0;
            dirs.push(e);
        }
    }
    for _ in 0..RANDOM_PLANES {
        dirs.push(random_unit(k, rng));
    }
    dirs
}

/// Data-determined and random starting directions in reduced coordinates.
pub(crate) fn seed_directions(
    rp: &ReducedProblem,
    config: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let k = rp.dim();
    let c = rp.influences();
    let n = c.nrows();
    let mut seeds = Vec::new();

    let units: Vec<DVector<f64>> = c
        .row_iter()
        .filter_map(|r| normalized(r.transpose()))
        .collect();
    let picked: Vec<usize> = if units.len() <= MAX_INFLUENCE_SEEDS {
        (0..units.len()).collect()
    } else {
        let mut idx = sample(rng, units.len(), MAX_INFLUENCE_SEEDS).into_vec();
        idx.sort_unstable();
        idx
    };
    for &i in &picked {
        seeds.push(-&units[i]);
    }

    let mean = c.row_sum().transpose() / n as f64;
    if let Some(m) = normalized(-mean) {
        seeds.push(m);
    }
    // Least-squares direction pushing every sample to −1; exact zero when n ≤ k
    // and the influences are linearly independent.
    if let Ok(p) = pinv(c) {
        if let Some(v) = normalized(-(p * DVector::from_element(n, 1.0))) {
            seeds.push(v);
        }
    }

    if units.len() >= 2 {
        let total = units.len() * (units.len() - 1) / 2;
        let pairs: Vec<(usize, usize)> = if total <= config.pair_cap {
            (0..units.len())
                .flat_map(|i| ((i + 1)..units.len()).map(move |j| (i, j)))
                .collect()
        } else {
            (0..config.pair_cap)
                .map(|_| {
                    let i = rng.random_range(0..units.len());
                    let mut j = rng.random_range(0..units.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    (i.min(j), i.max(j))
                })
                .collect()
        };
        for (i, j) in pairs {
            let (a, b) = (&units[i], &units[j]);
            for v in [-(a + b), a - b, b - a] {
                if let Some(v) = normalized(v) {
                    seeds.push(v);
                }
            }
        }
    }

    if let Some(map) = rp.slack_map() {
        for row in map.row_iter() {
            if let Some(v) = normalized(row.transpose()) {
                seeds.push(-&v);
                seeds.push(v);
            }
        }
    }

    for _ in 0..config.random_seeds {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Some(v) = normalized(c.tr_mul(&g)) {
            seeds.push(-&v);
            seeds.push(v);
        }
        seeds.push(random_unit(k, rng));
    }

    if k == 3 {
        seeds.extend(arrangement_candidates(rp));
    }
    seeds
}

/// Great-circle normals whose arrangement contains every cell boundary in three dimensions.
fn arrangement_normals(rp: &ReducedProblem) -> Option<Vec<DVector<f64>>> {
    let c = rp.influences();
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let rows: Vec<DVector<f64>> = rp
        .slack_map()
        .map(|m| m.row_iter().map(|r| r.transpose()).collect())
        .unwrap_or_default();
    match rp.rule() {
        None | Some(ShiftRule::OneSided) => {
            normals.extend(c.row_iter().map(|r| r.transpose()));
            normals.extend(rows.iter().cloned());
        }
        Some(ShiftRule::Box { scale }) => {
            if rows.len() > MAX_PATTERN_COORDS {
                return None;
            }
            normals.extend(rows.iter().cloned());
            for pattern in 0..(1usize << rows.len()) {
                let mut g = DVector::zeros(rp.dim());
                for (j, r) in rows.iter().enumerate() {
                    let s = if pattern & (1 << j) != 0 { 1.0 } else { -1.0 };
                    g += r * s;
                }
                normals.extend(c.row_iter().map(|r| r.transpose() - &g * scale));
            }
        }
        Some(ShiftRule::Spectral { .. }) => return None,
    }
    normals.retain(|v| v.norm() > 0.0);
    if normals.len() > MAX_ARRANGEMENT_NORMALS {
        return None;
    }
    Some(normals)
}

/// Points just inside each cell around every pairwise intersection of great circles.
fn arrangement_candidates(rp: &ReducedProblem) -> Vec<DVector<f64>> {
    let Some(normals) = arrangement_normals(rp) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for i in 0..normals.len() {
        for j in (i + 1)..normals.len() {
            let (a, b) = (&normals[i], &normals[j]);
            let x = a.cross(b);
            let xn = x.norm();
            if xn <= 1e-12 * a.norm() * b.norm() {
                continue;
            }
            let x = x / xn;
            // Duals within span(a, b): ⟨a, d1⟩ = 1, ⟨b, d1⟩ = 0 and vice versa.
            let (aa, ab, bb) = (a.dot(a), a.dot(b), b.dot(b));
            let det = aa * bb - ab * ab;
            let d1 = (a * bb - b * ab) / det;
            let d2 = (b * aa - a * ab) / det;
            let (d1, d2) = (d1.normalize(), d2.normalize());
            for base in [x.clone(), -x] {
                for (s1, s2) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let p = &base + (&d1 * s1 + &d2 * s2) * VERTEX_PERTURBATION;
                    out.push(p.normalize());
                }
            }
        }
    }
    out
}

/// Minimizes the count of a reduced problem.
pub(crate) fn minimize(rp: &ReducedProblem, config: &SolverConfig) -> Found {
    let k = rp.dim();
    let tol = config.zero_tol;
    if k == 1 {
        let plus = DVector::from_element(1, 1.0);
        let minus = DVector::from_element(1, -1.0);
        let w = if rp.count(&minus, tol) < rp.count(&plus, tol) {
            minus
        } else {
            plus
        };
        return Found {
            w,
            certificate: Certificate::ExactOracle,
            diagnostics: Diagnostics {
                candidates_scored: 2,
                ..Diagnostics::default()
            },
        };
    }
    if k == 2 && rp.rule().is_none_or(|r| r.is_polyhedral()) {
        let section = PlaneSection::new(rp, &DMatrix::identity(2, 2), tol);
        let mut events = section.events();
        let scored = events.len();
        let (w, _) = plane_sweep(rp, &DMatrix::identity(2, 2), tol);
        events.clear();
        return Found {
            w,
            certificate: Certificate::ExactOracle,
            diagnostics: Diagnostics {
                candidates_scored: scored,
                ..Diagnostics::default()
            },
        };
    }
    heuristic(rp, config)
}

fn better(a: &(usize, DVector<f64>), b: &(usize, DVector<f64>)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && lex_cmp(&a.1, &b.1) == std::cmp::Ordering::Less)
}

fn heuristic(rp: &ReducedProblem, config: &SolverConfig) -> Found {
    let tol = config.zero_tol;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds = seed_directions(rp, config, &mut rng);
    let counts: Vec<usize> = seeds.par_iter().map(|w| rp.count(w, tol)).collect();
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by(|&a, &b| counts[a].cmp(&counts[b]).then(lex_cmp(&seeds[a], &seeds[b])));
    let best_seed = order[0];
    let mut diagnostics = Diagnostics {
        candidates_scored: seeds.len(),
        ..Diagnostics::default()
    };
    if counts[best_seed] == 0 {
        return Found {
            w: seeds[best_seed].clone(),
            certificate: Certificate::HeuristicUpperBound,
            diagnostics,
        };
    }
    let mut top: Vec<usize> = Vec::with_capacity(config.restarts);
    for &i in &order {
        if top.len() == config.restarts {
            break;
        }
        if top.iter().all(|&j| seeds[j] != seeds[i]) {
            top.push(i);
        }
    }
    let found_zero = AtomicBool::new(false);
    let results: Vec<(usize, DVector<f64>)> = top
        .par_iter()
        .enumerate()
        .map(|(slot, &i)| {
            if found_zero.load(AtomicOrdering::Relaxed) {
                return (counts[i], seeds[i].clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(config.seed, slot));
            let refined = refine(rp, &seeds[i], counts[i], config);
            let polished = polish(rp, refined, config, &mut rng);
            if polished.0 == 0 {
                found_zero.store(true, AtomicOrdering::Relaxed);
            }
            polished
        })
        .collect();
    let mut best = (counts[best_seed], seeds[best_seed].clone());
    for r in results {
        if better(&r, &best) {
            best = r;
        }
    }
    diagnostics.restarts_used = top.len();
    diagnostics.final_bandwidth = Some(config.bandwidth(config.stages - 1));
    Found {
        w: best.1,
        certificate: Certificate::HeuristicUpperBound,
        diagnostics,
    }
}

/// Riemannian gradient descent on the smoothed count with bandwidth continuation,
/// alternating with the exact slack step. Returns the best exact count seen.
pub(crate) fn refine(
    rp: &ReducedProblem,
    w0: &DVector<f64>,
    count0: usize,
    config: &SolverConfig,
) -> (usize, DVector<f64>) {
    let tol = config.zero_tol;
    let kind = config.surrogate;
    let mut w = w0.clone();
    let mut best = (count0, w0.clone());
    for stage in 0..config.stages {
        let h = config.bandwidth(stage);
        let mut s = rp.exact_slack_param(&w);
        let mut f = rp.surrogate_value(&w, &s, h, kind);
        let mut stalls = 0;
        for _ in 0..config.max_iters {
            let g = rp.surrogate_gradient(&w, &s, h, kind).direction;
            let rg = &g - &w * g.dot(&w);
            let gn = rg.norm();
            if !(gn > 1e-14) {
                break;
            }
            let dir = rg / gn;
            let mut eta = config.step_init;
            let mut next = None;
            while eta > 1e-10 {
                let trial = (&w * eta.cos() - &dir * eta.sin()).normalize();
                let ft = rp.surrogate_value(&trial, &s, h, kind);
                if ft <= f - 1e-4 * eta * gn {
                    next = Some(trial);
                    break;
                }
                eta *= config.step_shrink;
            }
            let Some(next) = next else {
                break;
            };
            w = next;
            s = rp.exact_slack_param(&w);
            let f_new = rp.surrogate_value(&w, &s, h, kind);
            let rel = (f - f_new) / f.abs().max(1e-300);
            f = f_new;
            let count = rp.count(&w, tol);
            let cand = (count, w.clone());
            if better(&cand, &best) {
                best = cand;
                if best.0 == 0 {
                    return best;
                }
            }
            if rel < 1e-10 {
                stalls += 1;
                if stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
    }
    best
}

/// Repeated exact sweeps over great circles through the current direction.
pub(crate) fn polish(
    rp: &ReducedProblem,
    start: (usize, DVector<f64>),
    config: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> (usize, DVector<f64>) {
    let mut best = start;
    for _ in 0..config.polish_rounds {
        if best.0 == 0 {
            break;
        }
        let mut improved = false;
        for u in polish_directions(rp.dim(), rng) {
            let Some(frame) = orthonormal_frame(&best.1, &u) else {
                continue;
            };
            let cand = plane_sweep(rp, &frame, config.zero_tol);
            if cand.1 < best.0 {
                best = (cand.1, cand.0);
                improved = true;
                if best.0 == 0 {
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}
