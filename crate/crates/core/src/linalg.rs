//! Small dense linear-algebra helpers shared by the depth families.
//!
//! Matrices are vectorized column-major everywhere, which is also nalgebra's
//! storage order, so `vec`/`unvec` are plain copies.

use nalgebra::{DMatrix, DVector};

use crate::error::{DepthError, Result};

/// Entries below this magnitude are treated as zero when fixing signs.
const SIGN_EPS: f64 = 1e-12;

pub fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), rows * cols);
    DMatrix::from_column_slice(rows, cols, v)
}

/// Flips each column so that its first entry of non-negligible magnitude is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if let Some(first) = col.iter().copied().find(|x| x.abs() > SIGN_EPS) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Full m×m orthogonal factor of a Householder QR of `a`.
///
/// The first `min(m, a.ncols())` columns span the column space of `a` when it
/// has full column rank; the remaining columns span its orthogonal complement.
pub fn householder_q(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.nrows();
    let steps = a.ncols().min(m);
    let mut r = a.clone();
    let mut q = DMatrix::<f64>::identity(m, m);
    for k in 0..steps {
        let x = r.view((k, k), (m - k, 1)).clone_owned();
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm <= f64::MIN_POSITIVE {
            continue;
        }
        v /= vnorm;
        // R[k.., k..] -= 2 v (v^T R[k.., k..])
        let cols = r.ncols() - k;
        let mut block = r.view_mut((k, k), (m - k, cols));
        let proj = v.transpose() * &block;
        block -= 2.0 * &v * proj;
        // Q[:, k..] -= 2 (Q[:, k..] v) v^T
        let mut qblock = q.view_mut((0, k), (m, m - k));
        let qv = &qblock * &v;
        qblock -= 2.0 * qv * v.transpose();
    }
    q
}

/// Orthonormal basis of the complement of the column space of a column-orthonormal `u`.
pub fn complement_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, r) = u.shape();
    if r >= m {
        return DMatrix::zeros(m, 0);
    }
    let q = householder_q(u);
    let mut w = q.columns(r, m - r).clone_owned();
    fix_column_signs(&mut w);
    w
}

/// Thin singular value decomposition with singular values in descending order and
/// the first non-negligible entry of every left singular vector positive.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(b: &DMatrix<f64>) -> Result<Self> {
        if b.iter().any(|x| !x.is_finite()) {
            return Err(DepthError::NonFinite {
                context: "singular value decomposition",
            });
        }
        let (p, m) = b.shape();
        let k = p.min(m);
        if k == 0 {
            return Ok(SortedSvd {
                u: DMatrix::zeros(p, 0),
                singular_values: DVector::zeros(0),
                v: DMatrix::zeros(m, 0),
            });
        }
        let svd = b.clone().svd(true, true);
        let u_raw = svd
            .u
            .ok_or_else(|| DepthError::Numeric("SVD did not return U".into()))?;
        let vt_raw = svd
            .v_t
            .ok_or_else(|| DepthError::Numeric("SVD did not return V".into()))?;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut u = DMatrix::zeros(p, k);
        let mut v = DMatrix::zeros(m, k);
        let mut s = DVector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            let mut ucol = u_raw.column(src).clone_owned();
            let mut vcol = vt_raw.row(src).transpose();
            if let Some(first) = ucol.iter().copied().find(|x| x.abs() > SIGN_EPS) {
                if first < 0.0 {
                    ucol.neg_mut();
                    vcol.neg_mut();
                }
            }
            u.set_column(dst, &ucol);
            v.set_column(dst, &vcol);
            s[dst] = svd.singular_values[src];
        }
        Ok(SortedSvd {
            u,
            singular_values: s,
            v,
        })
    }

    pub fn reconstruct(&self, keep: usize) -> DMatrix<f64> {
        let keep = keep.min(self.singular_values.len());
        let (p, m) = (self.u.nrows(), self.v.nrows());
        if keep == 0 {
            return DMatrix::zeros(p, m);
        }
        let u = self.u.columns(0, keep);
        let v = self.v.columns(0, keep);
        let s = DMatrix::from_diagonal(&self.singular_values.rows(0, keep).clone_owned());
        u * s * v.transpose()
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().sum()
}

/// Moore-Penrose inverse with the usual relative cutoff `max(n, p) * eps * sigma_max`.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok(DMatrix::zeros(c, r));
    }
    let svd = SortedSvd::new(m)?;
    let smax = svd.singular_values.max();
    let tol = (r.max(c) as f64) * f64::EPSILON * smax;
    let mut out = DMatrix::zeros(c, r);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > tol {
            out += (svd.v.column(k) * svd.u.column(k).transpose()) / s;
        }
    }
    Ok(out)
}

/// Largest absolute entry of `a^T a - I`.
pub fn orthonormality_defect(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn householder_q_is_orthogonal_and_spans_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 6, 3);
        let q = householder_q(&a);
        assert!(orthonormality_defect(&q) < 1e-12);
        let comp = q.columns(3, 3);
        assert!((a.transpose() * comp).amax() < 1e-12);
    }

    #[test]
    fn sorted_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_matrix(&mut rng, 4, 3);
        let svd = SortedSvd::new(&b).unwrap();
        assert!((svd.reconstruct(3) - &b).amax() < 1e-12);
        for k in 1..3 {
            assert!(svd.singular_values[k - 1] >= svd.singular_values[k]);
        }
        for col in svd.u.column_iter() {
            let first = col.iter().find(|x| x.abs() > SIGN_EPS).unwrap();
            assert!(*first > 0.0);
        }
    }

    #[test]
    fn pinv_of_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = pinv(&a).unwrap();
        assert!((&a * &p * &a - &a).amax() < 1e-12);
        assert!((&p * &a * &p - &p).amax() < 1e-12);
    }
}
