//! Independent oracles and data generators shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

pub const ZERO_TOL: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vec(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

pub fn student(len: usize, df: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let t = StudentT::new(df).unwrap();
    DVector::from_fn(len, |_, _| t.sample(rng))
}

pub fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

pub fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    unit(gaussian_vec(dim, rng))
}

/// Rows scattered around `±mu`; `spread` is the noise level before normalizing.
pub fn axial_sample(n: usize, mu: &DVector<f64>, spread: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = mu.len();
    let mut z = DMatrix::zeros(n, m);
    for i in 0..n {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let row = unit(mu * sign + gaussian_vec(m, rng) * spread);
        z.set_row(i, &row.transpose());
    }
    z
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_rotation(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian(m, m, rng).qr();
    let (q, r) = (qr.q(), qr.r());
    let mut q = q;
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    q
}

/// Orthonormal basis (columns) of the orthogonal complement of the columns of `u`,
/// by Gram-Schmidt against the standard basis.
pub fn complement(u: &DMatrix<f64>) -> DMatrix<f64> {
    let m = u.nrows();
    let mut cols: Vec<DVector<f64>> = u.column_iter().map(|c| c.clone_owned()).collect();
    let start = cols.len();
    for j in 0..m {
        let mut e = DVector::zeros(m);
        e[j] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&e);
                e -= c * d;
            }
        }
        if e.norm() > 1e-6 {
            cols.push(unit(e));
        }
    }
    DMatrix::from_columns(&cols[start..])
}

/// `#{⟨v, t_i⟩ + shift ≥ −tol}` with the solver's relative tolerance.
pub fn count(rows: &DMatrix<f64>, v: &DVector<f64>, shift: f64) -> usize {
    let tol = ZERO_TOL * max_row_norm(rows);
    (rows * v).iter().filter(|&&a| a + shift >= -tol).count()
}

pub fn max_row_norm(rows: &DMatrix<f64>) -> f64 {
    rows.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Candidate angles for a planar sweep: a uniform grid plus points just either
/// side of every angle where some `⟨u(θ), c_i⟩` changes sign.
pub fn sweep_angles(c: &DMatrix<f64>, grid: usize) -> Vec<f64> {
    let mut angles: Vec<f64> = (0..grid).map(|k| TAU * k as f64 / grid as f64).collect();
    for row in c.row_iter() {
        if row.norm() == 0.0 {
            continue;
        }
        let psi = row[1].atan2(row[0]);
        for half in [-1.0, 1.0] {
            for eps in [-1e-7, 1e-7] {
                angles.push(psi + half * std::f64::consts::FRAC_PI_2 + eps);
            }
        }
    }
    angles
}

/// Exhaustive angular oracle for ambient influences `t` over the plane spanned by
/// the two orthonormal columns of `basis`.
pub fn angular_oracle(t: &DMatrix<f64>, basis: &DMatrix<f64>) -> usize {
    assert_eq!(basis.ncols(), 2);
    let c = t * basis;
    sweep_angles(&c, 3600)
        .into_iter()
        .map(|a| {
            let w = DVector::from_vec(vec![a.cos(), a.sin()]);
            count(t, &(basis * w), 0.0)
        })
        .min()
        .unwrap()
}

/// Points on S² from the Fibonacci lattice.
pub fn fibonacci_sphere(count: usize) -> Vec<DVector<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            DVector::from_vec(vec![r * phi.cos(), z, r * phi.sin()])
        })
        .collect()
}

/// Directions in every cell around the pairwise intersections of the great
/// circles with the given normals (in R³).
pub fn arrangement_directions(normals: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let normals: Vec<DVector<f64>> = normals
        .iter()
        .filter(|a| a.norm() > 1e-12)
        .map(|a| unit(a.clone()))
        .collect();
    let mut out = Vec::new();
    for i in 0..normals.len() {
        for j in i + 1..normals.len() {
            let (a, b) = (&normals[i], &normals[j]);
            let w = a.cross(b);
            if w.norm() < 1e-9 {
                continue;
            }
            let w = unit(w);
            let g = a.dot(b);
            let det = 1.0 - g * g;
            for s1 in [-1.0, 1.0] {
                for s2 in [-1.0, 1.0] {
                    // d in span(a, b) with ⟨a, d⟩ = s1 and ⟨b, d⟩ = s2
                    let alpha = (s1 - g * s2) / det;
                    let beta = (s2 - g * s1) / det;
                    let d = unit(a * alpha + b * beta);
                    for sign in [-1.0, 1.0] {
                        out.push(unit(&w * sign + &d * 1e-7));
                    }
                }
            }
        }
    }
    out
}

/// Brute-force box-slack depth in R³: every direction is scored with the least
/// favourable point of a `grid`-point slack lattice per free coordinate.
pub fn slack_grid_oracle(
    t: &DMatrix<f64>,
    free: &[usize],
    bound: f64,
    directions: &[DVector<f64>],
    grid: usize,
) -> usize {
    let n = t.nrows() as f64;
    let levels: Vec<f64> = (0..grid)
        .map(|k| -bound + 2.0 * bound * k as f64 / (grid - 1) as f64)
        .collect();
    let mut best = usize::MAX;
    for v in directions {
        let mut shift = f64::INFINITY;
        let mut idx = vec![0usize; free.len()];
        loop {
            let s: f64 = free.iter().zip(&idx).map(|(&j, &k)| v[j] * levels[k]).sum();
            shift = shift.min(s / n);
            let mut pos = 0;
            while pos < idx.len() {
                idx[pos] += 1;
                if idx[pos] < grid {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
        }
        best = best.min(count(t, v, shift));
    }
    best
}

/// Normals of the cells on which the box-slack count is constant.
pub fn box_slack_normals(t: &DMatrix<f64>, free: &[usize], bound: f64) -> Vec<DVector<f64>> {
    let n = t.nrows() as f64;
    let d = t.ncols();
    let mut normals = Vec::new();
    for pattern in 0..(1usize << free.len()) {
        let mut sigma = DVector::zeros(d);
        for (k, &j) in free.iter().enumerate() {
            sigma[j] = if pattern >> k & 1 == 1 { 1.0 } else { -1.0 };
        }
        for row in t.row_iter() {
            normals.push(row.transpose() - &sigma * (bound / n));
        }
    }
    for &j in free {
        let mut e = DVector::zeros(d);
        e[j] = 1.0;
        normals.push(e);
    }
    normals
}

/// Linear data `y = Xβ + noise` with an intercept column.
pub fn regression_data(
    n: usize,
    p: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let mut x = gaussian(n, p, rng);
    x.column_mut(0).fill(1.0);
    let beta = gaussian_vec(p, rng);
    let y = &x * &beta + gaussian_vec(n, rng) * noise;
    (x, y, beta)
}
