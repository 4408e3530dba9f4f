//! Per-sample influence vectors for each depth family.
//!
//! Matrix-valued influences are vectorized column-major. Families whose
//! admissible directions form a proper subspace return that subspace
//! alongside the influences.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, check_finite, DepthError, Result};
use crate::geometry::{
    sphere_tangent_basis, stiefel_tangent_basis, StiefelPoint, TangentBasis, UnitVector,
};
use crate::linalg::vec_col_major;

/// Tolerance on the unit norm of spherical observations.
pub const SPHERE_ROW_TOL: f64 = 1e-8;

/// Default Huber constant.
pub const HUBER_DELTA: f64 = 1.345;

/// Unit rows within this distance of `±μ°` get a zero Watson influence.
const AXIS_SNAP: f64 = 1e-12;

/// `n` influence vectors in a `d`-dimensional ambient space plus an optional
/// shared offset added to every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSet {
    rows: DMatrix<f64>,
    offset: Option<DVector<f64>>,
}

impl InfluenceSet {
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        Self::with_offset(rows, None)
    }

    pub fn with_offset(rows: DMatrix<f64>, offset: Option<DVector<f64>>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(DepthError::InvalidParameter {
                name: "influence set",
                reason: "ambient dimension must be at least 1".into(),
            });
        }
        check_finite("influence rows", rows.iter())?;
        if let Some(o) = &offset {
            check_dim("influence offset", rows.ncols(), o.len())?;
            check_finite("influence offset", o.iter())?;
        }
        Ok(InfluenceSet { rows, offset })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn offset(&self) -> Option<&DVector<f64>> {
        self.offset.as_ref()
    }

    pub fn set_offset(&mut self, offset: Option<DVector<f64>>) -> Result<()> {
        if let Some(o) = &offset {
            check_dim("influence offset", self.ambient_dim(), o.len())?;
        }
        self.offset = offset;
        Ok(())
    }

    /// Multiplies every influence and the offset by `factor`.
    pub fn scaled(&self, factor: f64) -> InfluenceSet {
        InfluenceSet {
            rows: &self.rows * factor,
            offset: self.offset.as_ref().map(|o| o * factor),
        }
    }

    pub fn negated(&self) -> InfluenceSet {
        self.scaled(-1.0)
    }
}

/// Influences together with the subspace of admissible directions.
#[derive(Debug, Clone)]
pub struct ConstrainedInfluences {
    pub influences: InfluenceSet,
    pub space: TangentBasis,
}

/// Pointwise loss `l₀(u; y)` on the systematic component `u = xᵀβ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Squared,
    /// Labels coded {0, 1}.
    Logistic,
    Huber { delta: f64 },
}

impl Loss {
    pub fn huber() -> Self {
        Loss::Huber { delta: HUBER_DELTA }
    }

    pub fn value(&self, u: f64, y: f64) -> f64 {
        match *self {
            Loss::Squared => 0.5 * (u - y) * (u - y),
            Loss::Logistic => {
                // log(1 + e^u) computed without overflow
                let softplus = if u > 0.0 {
                    u + (-u).exp().ln_1p()
                } else {
                    u.exp().ln_1p()
                };
                softplus - y * u
            }
            Loss::Huber { delta } => {
                let r = (u - y).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * r - 0.5 * delta * delta
                }
            }
        }
    }

    pub fn derivative(&self, u: f64, y: f64) -> f64 {
        match *self {
            Loss::Squared => u - y,
            Loss::Logistic => {
                let p = if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                };
                p - y
            }
            Loss::Huber { delta } => (u - y).clamp(-delta, delta),
        }
    }

    /// Lipschitz constant of `u ↦ l₀′(u; y)`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Loss::Squared | Loss::Huber { .. } => 1.0,
            Loss::Logistic => 0.25,
        }
    }

    /// `∇l̄(Xβ)`: the vector of derivatives at every fitted value.
    pub fn gradient(&self, fitted: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("loss gradient", fitted.len(), y.len())?;
        let g = fitted.zip_map(y, |u, yi| self.derivative(u, yi));
        check_finite("loss derivative", g.iter())?;
        Ok(g)
    }

    /// `l̄(Xβ) = Σ l₀(xᵢᵀβ; yᵢ)`.
    pub fn total(&self, fitted: &DVector<f64>, y: &DVector<f64>) -> f64 {
        fitted
            .iter()
            .zip(y.iter())
            .map(|(&u, &yi)| self.value(u, yi))
            .sum()
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Loss::Squared => write!(f, "squared"),
            Loss::Logistic => write!(f, "logistic"),
            Loss::Huber { .. } => write!(f, "huber"),
        }
    }
}

impl FromStr for Loss {
    type Err = DepthError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" => Ok(Loss::Squared),
            "logistic" => Ok(Loss::Logistic),
            "huber" => Ok(Loss::huber()),
            other => Err(DepthError::InvalidParameter {
                name: "loss",
                reason: format!("unknown loss `{other}` (expected squared|logistic|huber)"),
            }),
        }
    }
}

fn check_unit_rows(z: &DMatrix<f64>) -> Result<()> {
    for i in 0..z.nrows() {
        let norm = z.row(i).norm();
        if (norm - 1.0).abs() > SPHERE_ROW_TOL {
            return Err(DepthError::NotUnit {
                context: "spherical observation",
                norm,
            });
        }
    }
    Ok(())
}

/// `Tᵢ = zᵢ − μ°`.
pub fn location_influence(z: &DMatrix<f64>, mu0: &DVector<f64>) -> Result<InfluenceSet> {
    check_dim("location center", z.ncols(), mu0.len())?;
    let mut rows = z.clone();
    for mut row in rows.row_iter_mut() {
        row -= mu0.transpose();
    }
    InfluenceSet::new(rows)
}

/// `Tᵢ = xᵢ (xᵢᵀβ° − yᵢ)`.
pub fn regression_influence(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<InfluenceSet> {
    glm_influence(x, y, beta0, Loss::Squared)
}

/// `Tᵢ = xᵢ l₀′(xᵢᵀβ°; yᵢ)`; the offset is left empty.
pub fn glm_influence(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta0: &DVector<f64>,
    loss: Loss,
) -> Result<InfluenceSet> {
    check_dim("coefficient vector", x.ncols(), beta0.len())?;
    check_dim("response length", x.nrows(), y.len())?;
    let fitted = x * beta0;
    let deriv = loss.gradient(&fitted, y)?;
    let mut rows = x.clone();
    for (i, mut row) in rows.row_iter_mut().enumerate() {
        row *= deriv[i];
    }
    InfluenceSet::new(rows)
}

/// Riemannian Watson influence `⟨zᵢ, μ°⟩ (zᵢ − ⟨zᵢ, μ°⟩ μ°)`, κ dropped.
pub fn watson_influence(z: &DMatrix<f64>, mu0: &UnitVector) -> Result<InfluenceSet> {
    check_dim("watson mean direction", z.ncols(), mu0.dim())?;
    check_unit_rows(z)?;
    let mu = mu0.as_vector();
    let mut rows = DMatrix::zeros(z.nrows(), z.ncols());
    for i in 0..z.nrows() {
        let zi = z.row(i).transpose();
        let c = zi.dot(mu);
        let tangential = &zi - mu * c;
        // Rows on the axis leave only roundoff, which must not set the count scale.
        if tangential.norm() > AXIS_SNAP {
            rows.set_row(i, &(tangential * c).transpose());
        }
    }
    InfluenceSet::new(rows)
}

/// von Mises-Fisher influences `Tᵢ = zᵢ` over the tangent space at μ°.
pub fn vmf_influence(z: &DMatrix<f64>, mu0: &UnitVector) -> Result<ConstrainedInfluences> {
    check_dim("vmf mean direction", z.ncols(), mu0.dim())?;
    check_unit_rows(z)?;
    Ok(ConstrainedInfluences {
        influences: InfluenceSet::new(z.clone())?,
        space: sphere_tangent_basis(mu0),
    })
}

/// Principal-component influences.
///
/// With a center `μ°` every sample contributes `[(I − UUᵀ)(μ° − zᵢ); −vec((μ° − zᵢ)(μ° − zᵢ)ᵀU)]`
/// over `Rᵐ ⊕ T_U`. Without a center the vector channel is dropped and `μ° = 0`.
pub fn pc_influence(
    z: &DMatrix<f64>,
    mu0: Option<&DVector<f64>>,
    u0: &StiefelPoint,
) -> Result<ConstrainedInfluences> {
    let (m, r) = u0.shape();
    check_dim("pc loadings rows", z.ncols(), m)?;
    if let Some(mu) = mu0 {
        check_dim("pc center", m, mu.len())?;
    }
    let u = u0.as_matrix();
    let projector = DMatrix::<f64>::identity(m, m) - u * u.transpose();
    let vec_dim = if mu0.is_some() { m } else { 0 };
    let d = vec_dim + m * r;
    let mut rows = DMatrix::zeros(z.nrows(), d);
    let zero = DVector::zeros(m);
    let mu = mu0.unwrap_or(&zero);
    for i in 0..z.nrows() {
        let diff = mu - z.row(i).transpose();
        if mu0.is_some() {
            let vpart = &projector * &diff;
            rows.view_mut((i, 0), (1, m)).copy_from(&vpart.transpose());
        }
        let mpart = -(&diff * (diff.transpose() * u));
        rows.view_mut((i, vec_dim), (1, m * r))
            .copy_from(&vec_col_major(&mpart).transpose());
    }
    let tangent = stiefel_tangent_basis(u0);
    let space = if mu0.is_some() {
        TangentBasis::direct_sum(&[TangentBasis::identity(m), tangent])
    } else {
        tangent
    };
    Ok(ConstrainedInfluences {
        influences: InfluenceSet::new(rows)?,
        space,
    })
}

/// Orthogonal-complement influences.
///
/// With a center `μ̄°` every sample contributes `[μ̄° − Ūᵀzᵢ; vec(zᵢzᵢᵀŪ − zᵢμ̄°ᵀ)]`
/// over `R^r̄ ⊕ T_Ū`. Without a center the vector channel is dropped and `μ̄° = 0`.
pub fn oc_influence(
    z: &DMatrix<f64>,
    mubar0: Option<&DVector<f64>>,
    ubar0: &StiefelPoint,
) -> Result<ConstrainedInfluences> {
    let (m, rbar) = ubar0.shape();
    check_dim("oc loadings rows", z.ncols(), m)?;
    if let Some(mu) = mubar0 {
        check_dim("oc center", rbar, mu.len())?;
    }
    let u = ubar0.as_matrix();
    let vec_dim = if mubar0.is_some() { rbar } else { 0 };
    let d = vec_dim + m * rbar;
    let mut rows = DMatrix::zeros(z.nrows(), d);
    let zero = DVector::zeros(rbar);
    let mu = mubar0.unwrap_or(&zero);
    for i in 0..z.nrows() {
        let zi = z.row(i).transpose();
        let proj = u.tr_mul(&zi);
        if mubar0.is_some() {
            let vpart = mu - &proj;
            rows.view_mut((i, 0), (1, rbar)).copy_from(&vpart.transpose());
        }
        let mpart = &zi * (proj - mu).transpose();
        rows.view_mut((i, vec_dim), (1, m * rbar))
            .copy_from(&vec_col_major(&mpart).transpose());
    }
    let tangent = stiefel_tangent_basis(ubar0);
    let space = if mubar0.is_some() {
        TangentBasis::direct_sum(&[TangentBasis::identity(rbar), tangent])
    } else {
        tangent
    };
    Ok(ConstrainedInfluences {
        influences: InfluenceSet::new(rows)?,
        space,
    })
}

/// `Tᵢ = vec(xᵢ(xᵢᵀB° − yᵢᵀ))`.
pub fn rrr_influence(x: &DMatrix<f64>, y: &DMatrix<f64>, b0: &DMatrix<f64>) -> Result<InfluenceSet> {
    let (p, m) = b0.shape();
    check_dim("rrr predictors", x.ncols(), p)?;
    check_dim("rrr responses", y.ncols(), m)?;
    check_dim("rrr sample count", x.nrows(), y.nrows())?;
    let resid = x * b0 - y;
    let mut rows = DMatrix::zeros(x.nrows(), p * m);
    for i in 0..x.nrows() {
        let t = x.row(i).transpose() * resid.row(i);
        rows.set_row(i, &vec_col_major(&t).transpose());
    }
    InfluenceSet::new(rows)
}

/// Sparse reduced-rank influences for `B = A Uᵀ`.
///
/// Ambient layout is `[vec(W-part) (m×r); vec(V-part) (p×r)]` with
/// W-part `−yᵢxᵢᵀA°` tied to the Stiefel tangent at `U°` and V-part
/// `xᵢ(xᵢᵀA° − yᵢᵀU°)` unconstrained.
pub fn sparse_rrr_influence(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    a0: &DMatrix<f64>,
    u0: &StiefelPoint,
) -> Result<ConstrainedInfluences> {
    let (p, r) = a0.shape();
    let (m, r_u) = u0.shape();
    check_dim("sparse rrr rank", r, r_u)?;
    check_dim("sparse rrr predictors", x.ncols(), p)?;
    check_dim("sparse rrr responses", y.ncols(), m)?;
    check_dim("sparse rrr sample count", x.nrows(), y.nrows())?;
    let u = u0.as_matrix();
    let xa = x * a0;
    let yu = y * u;
    let mut rows = DMatrix::zeros(x.nrows(), m * r + p * r);
    for i in 0..x.nrows() {
        let yi = y.row(i).transpose();
        let xi = x.row(i).transpose();
        let wpart = -(&yi * xa.row(i));
        let vpart = &xi * (xa.row(i) - yu.row(i));
        rows.view_mut((i, 0), (1, m * r))
            .copy_from(&vec_col_major(&wpart).transpose());
        rows.view_mut((i, m * r), (1, p * r))
            .copy_from(&vec_col_major(&vpart).transpose());
    }
    let space = TangentBasis::direct_sum(&[stiefel_tangent_basis(u0), TangentBasis::identity(p * r)]);
    Ok(ConstrainedInfluences {
        influences: InfluenceSet::new(rows)?,
        space,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn location_examples() {
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let t = location_influence(&z, &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(t.rows().as_slice(), &[-1.0, 0.0, 1.0]);
        let t = location_influence(&z, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(t.rows()[(0, 0)], 0.0);
        assert!(location_influence(&z, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn regression_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 5, 3);
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = &x * &beta;
        let t = regression_influence(&x, &y, &beta).unwrap();
        assert!(t.rows().amax() < 1e-12);

        // intercept-only design reduces to the location influence of y at beta
        let ones = DMatrix::from_element(4, 1, 1.0);
        let y = DVector::from_vec(vec![0.5, 1.0, 3.0, -1.0]);
        let t = regression_influence(&ones, &y, &DVector::from_vec(vec![1.0])).unwrap();
        let loc = location_influence(&DMatrix::from_column_slice(4, 1, y.as_slice()), &DVector::from_vec(vec![1.0]))
            .unwrap();
        assert_eq!(t.rows(), &(-loc.rows()));
    }

    #[test]
    fn glm_squared_equals_regression_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut rng, 7, 2);
        let y = DVector::from_fn(7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_vec(vec![0.3, 0.1]);
        assert_eq!(
            glm_influence(&x, &y, &beta, Loss::Squared).unwrap(),
            regression_influence(&x, &y, &beta).unwrap()
        );
    }

    #[test]
    fn logistic_at_zero_and_huber_quadratic_region() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        let t = glm_influence(&x, &y, &DVector::zeros(2), Loss::Logistic).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((t.rows()[(i, j)] - x[(i, j)] * (0.5 - y[i])).abs() < 1e-15);
            }
        }
        let y = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let beta = DVector::from_vec(vec![0.05, 0.02]);
        assert_eq!(
            glm_influence(&x, &y, &beta, Loss::huber()).unwrap(),
            glm_influence(&x, &y, &beta, Loss::Squared).unwrap()
        );
    }

    #[test]
    fn watson_examples() {
        let mu = UnitVector::from_slice(&[1.0, 0.0]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, s, s]);
        let t = watson_influence(&z, &mu).unwrap();
        for i in 0..3 {
            assert_eq!(t.rows().row(i).norm(), 0.0);
        }
        assert!((t.rows().row(3).norm() - 0.5).abs() < 1e-15);
        assert!(t.rows().row(3).transpose().dot(mu.as_vector()).abs() < 1e-15);

        let bad = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        assert!(watson_influence(&bad, &mu).is_err());
    }

    #[test]
    fn pc_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = gaussian(&mut rng, 5, 3);
        let mu = z.row(2).transpose();
        let u = StiefelPoint::new(DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])).unwrap();
        let pc = pc_influence(&z, Some(&mu), &u).unwrap();
        assert_eq!(pc.influences.ambient_dim(), 3 + 3);
        assert_eq!(pc.space.dim(), 3 + 2);
        assert_eq!(pc.influences.rows().row(2).norm(), 0.0);

        let full = StiefelPoint::new(DMatrix::identity(3, 3)).unwrap();
        let pc = pc_influence(&z, Some(&DVector::zeros(3)), &full).unwrap();
        assert!(pc.influences.rows().columns(0, 3).amax() < 1e-15);
    }

    #[test]
    fn oc_examples() {
        let u = StiefelPoint::new(DMatrix::from_column_slice(2, 1, &[0.6, 0.8])).unwrap();
        let mubar = DVector::from_vec(vec![1.5]);
        // every row satisfies z^T u = 1.5
        let z = DMatrix::from_row_slice(2, 2, &[2.5, 0.0, 0.0, 1.875]);
        let oc = oc_influence(&z, Some(&mubar), &u).unwrap();
        assert!(oc.influences.rows().column(0).amax() < 1e-12);

        let z0 = DMatrix::zeros(1, 2);
        let oc = oc_influence(&z0, Some(&mubar), &u).unwrap();
        assert_eq!(oc.influences.rows()[(0, 0)], 1.5);
        assert_eq!(oc.influences.rows().columns(1, 2).amax(), 0.0);
    }

    #[test]
    fn oc_without_center_is_negated_pc() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = gaussian(&mut rng, 6, 4);
        let q = crate::linalg::householder_q(&gaussian(&mut rng, 4, 2));
        let u = StiefelPoint::new(q.columns(0, 2).clone_owned()).unwrap();
        let pc = pc_influence(&z, None, &u).unwrap();
        let oc = oc_influence(&z, None, &u).unwrap();
        assert!((pc.influences.rows() + oc.influences.rows()).amax() < 1e-12);
        assert_eq!(pc.space, oc.space);
    }

    #[test]
    fn rrr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian(&mut rng, 6, 3);
        let b = gaussian(&mut rng, 3, 2);
        let t = rrr_influence(&x, &(&x * &b), &b).unwrap();
        assert!(t.rows().amax() < 1e-12);

        let y = gaussian(&mut rng, 6, 1);
        let beta = gaussian(&mut rng, 3, 1);
        let t = rrr_influence(&x, &y, &beta).unwrap();
        let r = regression_influence(&x, &y.column(0).clone_owned(), &beta.column(0).clone_owned())
            .unwrap();
        assert!((t.rows() - r.rows()).amax() < 1e-12);
    }

    #[test]
    fn sparse_rrr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = gaussian(&mut rng, 5, 3);
        let a = gaussian(&mut rng, 3, 2);
        let q = crate::linalg::householder_q(&gaussian(&mut rng, 4, 2));
        let u = StiefelPoint::new(q.columns(0, 2).clone_owned()).unwrap();
        let y = &x * &a * u.as_matrix().transpose();
        let s = sparse_rrr_influence(&x, &y, &a, &u).unwrap();
        assert!(s.influences.rows().columns(8, 6).amax() < 1e-12);

        let y = gaussian(&mut rng, 5, 4);
        let s = sparse_rrr_influence(&x, &y, &DMatrix::zeros(3, 2), &u).unwrap();
        assert_eq!(s.influences.rows().columns(0, 8).amax(), 0.0);
        for i in 0..5 {
            let expected = -(x.row(i).transpose() * (y.row(i) * u.as_matrix()));
            let got = crate::linalg::unvec(
                &s.influences.rows().view((i, 8), (1, 6)).iter().copied().collect::<Vec<_>>(),
                3,
                2,
            );
            assert!((got - expected).amax() < 1e-12);
        }
    }
}
