//! Tangent spaces of the unit sphere and the Stiefel manifold.
//!
//! Every depth in this crate is computed over a linear space of admissible
//! directions. Those spaces are materialized as explicit orthonormal bases
//! ([`TangentBasis`]) so that the solver only ever sees an unconstrained unit
//! sphere in reduced coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, DepthError, Result};
use crate::influence::InfluenceSet;
use crate::linalg::{complement_basis, orthonormality_defect, vec_col_major};

/// Tolerance on `‖x‖₂ = 1` and `UᵀU = I` for validated manifold points.
pub const MANIFOLD_TOL: f64 = 1e-10;

/// Step of the central finite differences used when no closed form is registered.
pub const FD_STEP: f64 = 1e-5;

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    pub fn new(data: DVector<f64>) -> Result<Self> {
        let norm = data.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > MANIFOLD_TOL {
            return Err(DepthError::NotUnit {
                context: "unit vector",
                norm,
            });
        }
        Ok(UnitVector(data))
    }

    /// Normalizes `data`; fails on the zero vector.
    pub fn normalized(data: DVector<f64>) -> Result<Self> {
        let norm = data.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(DepthError::NotUnit {
                context: "unit vector",
                norm,
            });
        }
        Ok(UnitVector(data / norm))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A column-orthonormal m×r matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < data.ncols() {
            return Err(DepthError::InvalidParameter {
                name: "stiefel point",
                reason: format!("{}x{} has more columns than rows", data.nrows(), data.ncols()),
            });
        }
        let deviation = orthonormality_defect(&data);
        if !(deviation <= MANIFOLD_TOL) {
            return Err(DepthError::NotStiefel {
                context: "stiefel point",
                deviation,
            });
        }
        Ok(StiefelPoint(data))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

impl From<UnitVector> for StiefelPoint {
    fn from(u: UnitVector) -> Self {
        let m = u.dim();
        StiefelPoint(DMatrix::from_column_slice(m, 1, u.0.as_slice()))
    }
}

/// Orthonormal basis (d×k) of a linear subspace of the ambient influence space.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentBasis {
    basis: DMatrix<f64>,
}

impl TangentBasis {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if basis.ncols() > basis.nrows() {
            return Err(DepthError::InvalidParameter {
                name: "tangent basis",
                reason: "more basis vectors than ambient dimensions".into(),
            });
        }
        let deviation = orthonormality_defect(&basis);
        if !(deviation <= MANIFOLD_TOL) {
            return Err(DepthError::NotStiefel {
                context: "tangent basis",
                deviation,
            });
        }
        Ok(TangentBasis { basis })
    }

    pub fn identity(d: usize) -> Self {
        TangentBasis {
            basis: DMatrix::identity(d, d),
        }
    }

    /// Block-diagonal basis of the direct sum of the given spaces, in order.
    pub fn direct_sum(parts: &[TangentBasis]) -> Self {
        let d: usize = parts.iter().map(|p| p.ambient_dim()).sum();
        let k: usize = parts.iter().map(|p| p.dim()).sum();
        let mut basis = DMatrix::zeros(d, k);
        let (mut row, mut col) = (0, 0);
        for p in parts {
            basis
                .view_mut((row, col), (p.ambient_dim(), p.dim()))
                .copy_from(&p.basis);
            row += p.ambient_dim();
            col += p.dim();
        }
        TangentBasis { basis }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Ambient vector `basis · w`.
    pub fn embed(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.basis * w
    }

    /// Reduced coordinates `basisᵀ · v`.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(v)
    }

    /// Norm of the part of `v` outside the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        (v - self.embed(&self.coordinates(v))).norm()
    }
}

/// Removes the normal component: `w − ⟨w, μ⟩ μ`.
pub fn sphere_tangent_project(mu: &UnitVector, w: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim("sphere tangent projection", mu.dim(), w.len())?;
    let mu = mu.as_vector();
    Ok(w - mu * mu.dot(w))
}

/// Orthonormal basis of `{u : uᵀμ = 0}`.
pub fn sphere_tangent_basis(mu: &UnitVector) -> TangentBasis {
    let u = DMatrix::from_column_slice(mu.dim(), 1, mu.as_vector().as_slice());
    TangentBasis {
        basis: complement_basis(&u),
    }
}

/// Orthonormal basis of `{V : UᵀV + VᵀU = 0}`, vectorized column-major.
///
/// Columns are `U·(E_ab − E_ba)/√2` for `a < b` followed by `U⊥·E_cb`; the
/// dimension is `mr − r(r+1)/2`.
pub fn stiefel_tangent_basis(u: &StiefelPoint) -> TangentBasis {
    let (m, r) = u.shape();
    let u = u.as_matrix();
    let u_perp = complement_basis(u);
    let k = m * r - r * (r + 1) / 2;
    let mut basis = DMatrix::zeros(m * r, k);
    let mut col = 0;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for a in 0..r {
        for b in (a + 1)..r {
            let mut gen = DMatrix::zeros(r, r);
            gen[(a, b)] = inv_sqrt2;
            gen[(b, a)] = -inv_sqrt2;
            basis.set_column(col, &vec_col_major(&(u * gen)));
            col += 1;
        }
    }
    for c in 0..(m - r) {
        for b in 0..r {
            let mut e = DMatrix::zeros(m, r);
            e.set_column(b, &u_perp.column(c));
            basis.set_column(col, &vec_col_major(&e));
            col += 1;
        }
    }
    debug_assert_eq!(col, k);
    TangentBasis { basis }
}

/// Column-orthonormal `W` (m×(m−r)) with `UᵀW = 0`; zero columns when `m = r`.
pub fn orthonormal_complement(u: &StiefelPoint) -> StiefelPoint {
    StiefelPoint(complement_basis(u.as_matrix()))
}

/// Per-sample loss on the sphere, restricted along geodesics for order-2 depths.
pub trait SphereLoss: Sync {
    /// Loss of one sample `z` at the point `x` on the sphere.
    fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64;

    /// Closed-form first and second derivatives along `γ(t) = μ cos t + v sin t` at `t = 0`.
    fn geodesic_derivatives(
        &self,
        _mu: &DVector<f64>,
        _v: &DVector<f64>,
        _z: &DVector<f64>,
    ) -> Option<(f64, f64)> {
        None
    }
}

/// Watson log-likelihood term `−κ⟨x, z⟩²`.
#[derive(Debug, Clone, Copy)]
pub struct WatsonLoss {
    pub kappa: f64,
}

impl SphereLoss for WatsonLoss {
    fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let c = x.dot(z);
        -self.kappa * c * c
    }

    fn geodesic_derivatives(
        &self,
        mu: &DVector<f64>,
        v: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Option<(f64, f64)> {
        let a = mu.dot(z);
        let b = v.dot(z);
        Some((-2.0 * self.kappa * a * b, -2.0 * self.kappa * (b * b - a * a)))
    }
}

/// von Mises-Fisher log-likelihood term `−κ⟨x, z⟩`.
#[derive(Debug, Clone, Copy)]
pub struct VmfLoss {
    pub kappa: f64,
}

impl SphereLoss for VmfLoss {
    fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        -self.kappa * x.dot(z)
    }

    fn geodesic_derivatives(
        &self,
        mu: &DVector<f64>,
        v: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Option<(f64, f64)> {
        Some((-self.kappa * v.dot(z), self.kappa * mu.dot(z)))
    }
}

/// Geodesic derivatives of each sample's loss at `μ` in the tangent direction `v`.
///
/// Uses the loss's closed form when available and central differences with
/// step [`FD_STEP`] otherwise. `samples` holds one observation per row.
pub fn sphere_geodesic_derivatives(
    mu: &UnitVector,
    v: &UnitVector,
    samples: &DMatrix<f64>,
    loss: &dyn SphereLoss,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = mu.dim();
    check_dim("geodesic direction", m, v.dim())?;
    check_dim("geodesic samples", m, samples.ncols())?;
    let (mu, v) = (mu.as_vector(), v.as_vector());
    let inner = mu.dot(v);
    if inner.abs() > 1e-8 {
        return Err(DepthError::InadmissibleDirection {
            context: "geodesic direction must be tangent at mu",
            residual: inner.abs(),
        });
    }
    let n = samples.nrows();
    let mut g = DVector::zeros(n);
    let mut h = DVector::zeros(n);
    let along = |t: f64| mu * t.cos() + v * t.sin();
    let (plus, minus) = (along(FD_STEP), along(-FD_STEP));
    for i in 0..n {
        let z = samples.row(i).transpose();
        let (gi, hi) = match loss.geodesic_derivatives(mu, v, &z) {
            Some(d) => d,
            None => {
                let fp = loss.value(&plus, &z);
                let f0 = loss.value(mu, &z);
                let fm = loss.value(&minus, &z);
                (
                    (fp - fm) / (2.0 * FD_STEP),
                    (fp - 2.0 * f0 + fm) / (FD_STEP * FD_STEP),
                )
            }
        };
        g[i] = gi;
        h[i] = hi;
    }
    Ok((g, h))
}

/// Expresses every influence (and the shared offset) in the coordinates of `basis`.
pub fn subspace_reparametrize(set: &InfluenceSet, basis: &TangentBasis) -> Result<InfluenceSet> {
    check_dim(
        "subspace reparametrization",
        basis.ambient_dim(),
        set.ambient_dim(),
    )?;
    let rows = set.rows() * basis.matrix();
    let offset = set.offset().map(|o| basis.coordinates(o));
    InfluenceSet::with_offset(rows, offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_stiefel(rng: &mut ChaCha8Rng, m: usize, r: usize) -> StiefelPoint {
        let a = DMatrix::from_fn(m, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = crate::linalg::householder_q(&a);
        StiefelPoint::new(q.columns(0, r).clone_owned()).unwrap()
    }

    fn unit(values: &[f64]) -> UnitVector {
        UnitVector::normalized(DVector::from_column_slice(values)).unwrap()
    }

    #[test]
    fn tangent_projection_examples() {
        let e1 = unit(&[1.0, 0.0]);
        let p = sphere_tangent_project(&e1, &DVector::from_vec(vec![0.0, 3.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 3.0]);
        let p = sphere_tangent_project(&e1, &DVector::from_vec(vec![5.0, 0.0])).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0]);
        let diag = unit(&[1.0, 1.0]);
        let p = sphere_tangent_project(&diag, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] + 0.5).abs() < 1e-15);
        assert!(p.dot(diag.as_vector()).abs() < 1e-12);
        assert!(sphere_tangent_project(&diag, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn stiefel_basis_dimensions() {
        let square = StiefelPoint::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(stiefel_tangent_basis(&square).dim(), 1);

        let e1 = StiefelPoint::from(unit(&[1.0, 0.0, 0.0]));
        let b = stiefel_tangent_basis(&e1);
        assert_eq!(b.dim(), 2);
        // spans {e2, e3}
        assert!(b.matrix().row(0).amax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_stiefel(&mut rng, 4, 2);
        let b = stiefel_tangent_basis(&u);
        assert_eq!(b.dim(), 5);
        assert!(orthonormality_defect(b.matrix()) < 1e-10);
        for col in b.matrix().column_iter() {
            let v = DMatrix::from_column_slice(4, 2, col.as_slice());
            let skew = u.as_matrix().transpose() * &v + v.transpose() * u.as_matrix();
            assert!(skew.amax() < 1e-10);
        }
    }

    #[test]
    fn complement_examples() {
        let e1 = StiefelPoint::from(unit(&[1.0, 0.0, 0.0]));
        let w = orthonormal_complement(&e1);
        assert_eq!(w.shape(), (3, 2));
        assert!(w.as_matrix().row(0).amax() < 1e-15);

        let square = StiefelPoint::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(orthonormal_complement(&square).shape(), (3, 0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_stiefel(&mut rng, 5, 2);
        let w = orthonormal_complement(&u);
        assert_eq!(w.shape(), (5, 3));
        assert!((u.as_matrix().transpose() * w.as_matrix()).amax() < 1e-10);
        assert!(orthonormality_defect(w.as_matrix()) < 1e-10);
    }

    #[test]
    fn rejects_invalid_points() {
        assert!(UnitVector::from_slice(&[1.0, 1.0]).is_err());
        assert!(StiefelPoint::new(DMatrix::from_element(2, 1, 1.0)).is_err());
        assert!(StiefelPoint::new(DMatrix::identity(2, 3)).is_err());
    }

    struct NoClosedForm<L: SphereLoss>(L);

    impl<L: SphereLoss> SphereLoss for NoClosedForm<L> {
        fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
            self.0.value(x, z)
        }
    }

    #[test]
    fn watson_derivative_examples() {
        let kappa = 1.7;
        let mu = unit(&[0.0, 0.0, 1.0]);
        let v = unit(&[1.0, 0.0, 0.0]);
        let samples = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let (g, h) =
            sphere_geodesic_derivatives(&mu, &v, &samples, &WatsonLoss { kappa }).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((h[0] - 2.0 * kappa).abs() < 1e-14);
        assert_eq!(g[1], 0.0);
        assert!((h[1] + 2.0 * kappa).abs() < 1e-14);

        let (gf, hf) = sphere_geodesic_derivatives(
            &mu,
            &v,
            &samples,
            &NoClosedForm(WatsonLoss { kappa }),
        )
        .unwrap();
        assert!((gf - g).amax() < 1e-8);
        assert!((hf - h).amax() < 1e-4);
    }

    #[test]
    fn vmf_second_derivative_is_inner_product_with_mu() {
        let kappa = 2.5;
        let mu = unit(&[0.0, 1.0]);
        let v = unit(&[1.0, 0.0]);
        let samples = DMatrix::from_row_slice(1, 2, &[0.6, 0.8]);
        let (_, h) = sphere_geodesic_derivatives(&mu, &v, &samples, &VmfLoss { kappa }).unwrap();
        assert!((h[0] - kappa * 0.8).abs() < 1e-14);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let m = rng.random_range(2..6);
            let mu = UnitVector::normalized(DVector::from_fn(m, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            }))
            .unwrap();
            let raw = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = UnitVector::normalized(sphere_tangent_project(&mu, &raw).unwrap()).unwrap();
            let samples = DMatrix::from_fn(8, m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let kappa = rng.random_range(-3.0..3.0);
            for loss in [
                &WatsonLoss { kappa } as &dyn SphereLoss,
                &VmfLoss { kappa } as &dyn SphereLoss,
            ] {
                let (g, h) = sphere_geodesic_derivatives(&mu, &v, &samples, loss).unwrap();
                let (gf, hf) =
                    sphere_geodesic_derivatives(&mu, &v, &samples, &FdOnly(loss)).unwrap();
                let scale = samples.amax().powi(2) * kappa.abs() + 1e-300;
                assert!((&g - &gf).amax() / scale < 1e-5);
                assert!((&h - &hf).amax() / scale < 1e-5);
            }
        }
    }

    struct FdOnly<'a>(&'a dyn SphereLoss);

    impl SphereLoss for FdOnly<'_> {
        fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
            self.0.value(x, z)
        }
    }

    #[test]
    fn reparametrization_preserves_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows = DMatrix::from_fn(6, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let set = InfluenceSet::new(rows.clone()).unwrap();
        let same = subspace_reparametrize(&set, &TangentBasis::identity(3)).unwrap();
        assert_eq!(same.rows(), &rows);

        let e2 = TangentBasis::new(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        let reduced = subspace_reparametrize(&set, &e2).unwrap();
        assert_eq!(reduced.rows().column(0), rows.column(1));

        let mu = unit(&[1.0, 2.0, -1.0]);
        let basis = sphere_tangent_basis(&mu);
        let reduced = subspace_reparametrize(&set, &basis).unwrap();
        let w = DVector::from_vec(vec![0.3, -0.7]);
        let v = basis.embed(&w);
        for i in 0..6 {
            let lhs = v.dot(&rows.row(i).transpose());
            let rhs = w.dot(&reduced.rows().row(i).transpose());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
