//! Depths on the sphere and the Stiefel manifold.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::geometry::{sphere_tangent_basis, StiefelPoint, TangentBasis, UnitVector};
use crate::influence::{oc_influence, pc_influence, vmf_influence, watson_influence, InfluenceSet};
use crate::solver::{
    half_indicator_depth, order2_depth, solve_depth, DepthProblem, DepthResult,
    HessianModel, Order2Criterion, Order2Result, SolverConfig,
};

/// Halfspace depth of user-supplied influences over the span of `tangent`.
pub fn riemannian_depth_generic(
    influences: InfluenceSet,
    tangent: TangentBasis,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&DepthProblem::new(influences, tangent, None)?, config)
}

pub fn watson_problem(z: &DMatrix<f64>, mu0: &UnitVector) -> Result<DepthProblem> {
    DepthProblem::new(watson_influence(z, mu0)?, sphere_tangent_basis(mu0), None)
}

/// Watson depth at the axis `±μ°`.
pub fn watson_depth(z: &DMatrix<f64>, mu0: &UnitVector, config: &SolverConfig) -> Result<DepthResult> {
    solve_depth(&watson_problem(z, mu0)?, config)
}

pub fn vmf_problem(z: &DMatrix<f64>, mu0: &UnitVector) -> Result<DepthProblem> {
    let c = vmf_influence(z, mu0)?;
    DepthProblem::new(c.influences, c.space, None)
}

/// von Mises-Fisher depth: `min Σ 1_{≥0}(⟨v, zᵢ⟩)` over unit `v ⟂ μ°`.
pub fn vmf_depth(z: &DMatrix<f64>, mu0: &UnitVector, config: &SolverConfig) -> Result<DepthResult> {
    solve_depth(&vmf_problem(z, mu0)?, config)
}

fn vmf_parts(z: &DMatrix<f64>, mu0: &UnitVector) -> Result<(InfluenceSet, TangentBasis, DVector<f64>)> {
    let c = vmf_influence(z, mu0)?;
    let h = z * mu0.as_vector();
    Ok((c.influences, c.space, h))
}

/// Order-2 vMF depth with the direction-free second derivatives `hᵢ = ⟨μ°, zᵢ⟩`,
/// minimized jointly over the tangent directions.
pub fn vmf_order2_depth(
    z: &DMatrix<f64>,
    mu0: &UnitVector,
    config: &SolverConfig,
) -> Result<Order2Result> {
    let (set, space, h) = vmf_parts(z, mu0)?;
    order2_depth(&set, &HessianModel::Fixed(h), &space, Order2Criterion::Product, config)
}

/// The same criterion computed as `#{hᵢ ≥ 0} · min_v Σ 1_{≳0}(⟨v, zᵢ⟩)`.
pub fn vmf_order2_factorized(
    z: &DMatrix<f64>,
    mu0: &UnitVector,
    config: &SolverConfig,
) -> Result<Order2Result> {
    let (set, space, h) = vmf_parts(z, mu0)?;
    let tol = config.zero_tol * h.amax();
    let second = h.iter().filter(|&&x| x >= -tol).count();
    let first = half_indicator_depth(&set, &space, config)?;
    let n = set.len();
    let value = first.value * second as f64;
    Ok(Order2Result {
        value,
        first_factor: first.value,
        second_factor: second,
        n,
        normalized: value / (n * n) as f64,
        direction: first.direction,
        certificate: first.certificate,
    })
}

/// Order-2 Watson depth; only the sign of the concentration enters.
///
/// With `aᵢ = ⟨μ°, zᵢ⟩` and `bᵢ = ⟨v, zᵢ⟩` the derivatives along the geodesic
/// are `gᵢ ∝ −sign·aᵢbᵢ` and `hᵢ ∝ sign·(aᵢ² − bᵢ²)`.
pub fn watson_order2_depth(
    z: &DMatrix<f64>,
    mu0: &UnitVector,
    kappa_sign: f64,
    config: &SolverConfig,
) -> Result<Order2Result> {
    let sign = if kappa_sign < 0.0 { -1.0 } else { 1.0 };
    let g = watson_influence(z, mu0)?.scaled(-sign);
    let a = z * mu0.as_vector();
    let hessian = HessianModel::Quadratic {
        z: z.clone(),
        a,
        sign,
    };
    order2_depth(&g, &hessian, &sphere_tangent_basis(mu0), Order2Criterion::Product, config)
}

pub fn pc_problem(
    z: &DMatrix<f64>,
    mu0: Option<&DVector<f64>>,
    u0: &StiefelPoint,
) -> Result<DepthProblem> {
    let c = pc_influence(z, mu0, u0)?;
    DepthProblem::new(c.influences, c.space, None)
}

/// Principal-component depth at `(μ°, U°)`; pass `None` to drop the center.
pub fn pc_depth(
    z: &DMatrix<f64>,
    mu0: Option<&DVector<f64>>,
    u0: &StiefelPoint,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&pc_problem(z, mu0, u0)?, config)
}

pub fn oc_problem(
    z: &DMatrix<f64>,
    mubar0: Option<&DVector<f64>>,
    ubar0: &StiefelPoint,
) -> Result<DepthProblem> {
    let c = oc_influence(z, mubar0, ubar0)?;
    DepthProblem::new(c.influences, c.space, None)
}

/// Orthogonal-complement (orthogonal regression) depth at `(μ̄°, Ū°)`.
pub fn oc_depth(
    z: &DMatrix<f64>,
    mubar0: Option<&DVector<f64>>,
    ubar0: &StiefelPoint,
    config: &SolverConfig,
) -> Result<DepthResult> {
    solve_depth(&oc_problem(z, mubar0, ubar0)?, config)
}

/// Dominant eigenvector of `Σ zᵢzᵢᵀ`, a convenient Watson axis estimate.
pub fn principal_axis(z: &DMatrix<f64>) -> Result<UnitVector> {
    let (_, vectors) = crate::linalg::sorted_symmetric_eigen(&z.tr_mul(z));
    UnitVector::normalized(vectors.column(0).clone_owned())
}
