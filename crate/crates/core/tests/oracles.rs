mod common;

use common::*;
use depthforge::estimators::fit_rrr;
use depthforge::geometry::{StiefelPoint, UnitVector};
use depthforge::influence::{location_influence, regression_influence, watson_influence, Loss};
use depthforge::riemannian::{oc_depth, pc_depth, vmf_depth, watson_depth};
use depthforge::slacked::{
    multivariate_regression_depth, rrr_depth, rrr_slack_bound, sparse_rrr_bound,
    sparse_rrr_depth, theta_sharp_bound, theta_sharp_depth, theta_sharp_problem,
};
use depthforge::solver::{exact_depth_2d, solve_depth, Certificate, DepthProblem, SolverConfig};
use nalgebra::{DMatrix, DVector};

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

#[test]
fn location_matches_angular_sweep() {
    let mut r = rng(11);
    let basis = DMatrix::identity(2, 2);
    for k in 0..20 {
        let z = gaussian(9 + k % 5, 2, &mut r);
        let mu = if k % 4 == 0 {
            z.row(0).transpose()
        } else {
            gaussian_vec(2, &mut r) * 0.5
        };
        let set = location_influence(&z, &mu).unwrap();
        let res = solve_depth(&DepthProblem::unconstrained(set.clone()).unwrap(), &cfg()).unwrap();
        assert_eq!(res.certificate, Certificate::ExactOracle);
        assert_eq!(res.count, angular_oracle(set.rows(), &basis), "instance {k}");
        assert_eq!(exact_depth_2d(set.rows()).unwrap().0, res.count);
    }
}

#[test]
fn regression_matches_angular_sweep() {
    let mut r = rng(12);
    let basis = DMatrix::identity(2, 2);
    for k in 0..20 {
        let (x, y, beta) = regression_data(10 + k % 4, 2, 1.0, &mut r);
        let b0 = beta + gaussian_vec(2, &mut r) * 0.3;
        let set = regression_influence(&x, &y, &b0).unwrap();
        let res = solve_depth(&DepthProblem::unconstrained(set.clone()).unwrap(), &cfg()).unwrap();
        assert_eq!(res.count, angular_oracle(set.rows(), &basis), "instance {k}");
    }
}

#[test]
fn sphere_depths_match_angular_sweep() {
    let mut r = rng(13);
    for k in 0..20 {
        let mu = random_unit(3, &mut r);
        let z = axial_sample(11, &mu, 1.0, &mut r);
        let mu0 = UnitVector::normalized(&mu + gaussian_vec(3, &mut r) * 0.2).unwrap();
        let basis = complement(&DMatrix::from_column_slice(3, 1, mu0.as_vector().as_slice()));

        let vmf = vmf_depth(&z, &mu0, &cfg()).unwrap();
        assert_eq!(vmf.certificate, Certificate::ExactOracle);
        assert_eq!(vmf.count, angular_oracle(&z, &basis), "vmf instance {k}");

        let watson = watson_depth(&z, &mu0, &cfg()).unwrap();
        let rows = watson_influence(&z, &mu0).unwrap().rows().clone();
        assert_eq!(watson.count, angular_oracle(&rows, &basis), "watson instance {k}");
    }
}

#[test]
fn theta_sharp_matches_slack_grid() {
    let mut r = rng(14);
    let fib = fibonacci_sphere(1200);
    for k in 0..8 {
        let n = 8 + k % 4;
        let (x, y, _) = regression_data(n, 3, 1.0, &mut r);
        let mut beta = DVector::zeros(3);
        beta[k % 3] = gaussian_vec(1, &mut r)[0];
        let res = theta_sharp_depth(&x, &y, &beta, 1, Loss::Squared, &cfg()).unwrap();
        let problem = theta_sharp_problem(&x, &y, &beta, 1, Loss::Squared).unwrap();
        let t = problem.influences().rows().clone();
        let free: Vec<usize> = (0..3).filter(|&j| j != k % 3).collect();
        let bound = theta_sharp_bound(&x, &y, &beta, Loss::Squared).unwrap();
        let mut dirs = fib.clone();
        dirs.extend(arrangement_directions(&box_slack_normals(&t, &free, bound)));
        let oracle = slack_grid_oracle(&t, &free, bound, &dirs, 41);
        assert_eq!(res.count, oracle, "instance {k}");
    }
}

/// Power iteration on `AᵀA`.
fn power_norm(a: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_element(a.ncols(), 1.0);
    for _ in 0..2000 {
        let next = a.tr_mul(&(a * &v));
        let nn = next.norm();
        if nn == 0.0 {
            return 0.0;
        }
        v = next / nn;
    }
    (a * v).norm()
}

#[test]
fn rrr_bound_matches_power_iteration() {
    let mut r = rng(15);
    for _ in 0..10 {
        let x = gaussian(20, 4, &mut r);
        let y = gaussian(20, 3, &mut r);
        let b = fit_rrr(&x, &y, 1).unwrap().parameter;
        // complements from an independent eigen-decomposition
        let left = (&b * b.transpose()).symmetric_eigen();
        let right = (b.transpose() * &b).symmetric_eigen();
        let pick = |e: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>| {
            let cols: Vec<DVector<f64>> = (0..e.eigenvalues.len())
                .filter(|&j| e.eigenvalues[j] < 1e-10 * e.eigenvalues.amax())
                .map(|j| e.eigenvectors.column(j).clone_owned())
                .collect();
            DMatrix::from_columns(&cols)
        };
        let (pp, qp) = (pick(&left), pick(&right));
        let g = x.transpose() * (&x * &b - &y);
        let expected = power_norm(&(pp.transpose() * g * qp));
        let got = rrr_slack_bound(&x, &y, &b).unwrap();
        assert!((got - expected).abs() <= 1e-8 * expected.max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn sparse_rrr_bound_matches_explicit_gradient() {
    let mut r = rng(16);
    for _ in 0..10 {
        let (n, p, m, rank) = (25, 4, 3, 2);
        let x = gaussian(n, p, &mut r);
        let y = gaussian(n, m, &mut r);
        let u = StiefelPoint::new(gaussian(m, rank, &mut r).qr().q()).unwrap();
        let a = DMatrix::from_fn(p, rank, |i, j| if (i + j) % 2 == 0 { 1.0 + i as f64 } else { 0.0 });
        // ∂/∂A of ½‖Y − XAUᵀ‖² is Xᵀ(XAUᵀ − Y)U = Xᵀ(XA − YU) for orthonormal U
        let grad = x.transpose() * (&x * &a * u.as_matrix().transpose() - &y) * u.as_matrix();
        let expected = (0..p * rank)
            .filter(|&k| a[k] == 0.0)
            .map(|k| grad[k].abs())
            .fold(0.0, f64::max);
        let got = sparse_rrr_bound(&x, &y, &a, &u).unwrap();
        assert!((got - expected).abs() <= 1e-9 * expected.max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn full_rank_rrr_is_multivariate_regression() {
    let mut r = rng(17);
    for _ in 0..10 {
        let x = gaussian(15, 2, &mut r);
        let y = gaussian(15, 2, &mut r);
        let b = gaussian(2, 2, &mut r);
        let a = rrr_depth(&x, &y, &b, 2, &cfg()).unwrap();
        let b2 = multivariate_regression_depth(&x, &y, &b, &cfg()).unwrap();
        assert_eq!(a.count, b2.count);
    }
}

#[test]
fn single_response_rrr_is_regression_depth() {
    let mut r = rng(18);
    for _ in 0..10 {
        let (x, y, beta) = regression_data(12, 2, 1.0, &mut r);
        let b0 = &beta + gaussian_vec(2, &mut r) * 0.4;
        let ym = DMatrix::from_column_slice(12, 1, y.as_slice());
        let bm = DMatrix::from_column_slice(2, 1, b0.as_slice());
        let a = rrr_depth(&x, &ym, &bm, 1, &cfg()).unwrap();
        let set = regression_influence(&x, &y, &b0).unwrap();
        let b = solve_depth(&DepthProblem::unconstrained(set).unwrap(), &cfg()).unwrap();
        assert_eq!(a.count, b.count);
    }
}

#[test]
fn scalar_sparse_rrr_is_theta_sharp() {
    // r = m = 1 with U = [1]: the Stiefel channel is empty and only the sparse block remains.
    let mut r = rng(19);
    for _ in 0..10 {
        let (x, y, _) = regression_data(12, 2, 1.0, &mut r);
        let beta = DVector::from_vec(vec![gaussian_vec(1, &mut r)[0], 0.0]);
        let u = StiefelPoint::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let ym = DMatrix::from_column_slice(12, 1, y.as_slice());
        let am = DMatrix::from_column_slice(2, 1, beta.as_slice());
        let a = sparse_rrr_depth(&x, &ym, &am, &u, 1, &cfg()).unwrap();
        let b = theta_sharp_depth(&x, &y, &beta, 1, Loss::Squared, &cfg()).unwrap();
        assert_eq!(a.count, b.count);
    }
}

#[test]
fn rrr_fit_beats_random_rank_r_matrices() {
    let mut r = rng(20);
    for _ in 0..5 {
        let x = gaussian(30, 4, &mut r);
        let y = gaussian(30, 3, &mut r);
        let fit = fit_rrr(&x, &y, 2).unwrap();
        let loss = |b: &DMatrix<f64>| (&x * b - &y).norm_squared();
        let best = loss(&fit.parameter);
        for _ in 0..100 {
            let cand = gaussian(4, 2, &mut r) * gaussian(2, 3, &mut r);
            assert!(best <= loss(&cand) + 1e-9);
        }
        // alternating least squares from a random start reaches the same minimum
        let mut left = gaussian(4, 2, &mut r);
        for _ in 0..500 {
            let right = (&x * &left).pseudo_inverse(1e-12).unwrap() * &y;
            let xtx = x.transpose() * &x;
            let rhs = x.transpose() * &y * right.transpose();
            let gram = &right * right.transpose();
            left = xtx.try_inverse().unwrap() * rhs * gram.try_inverse().unwrap();
        }
        let right = (&x * &left).pseudo_inverse(1e-12).unwrap() * &y;
        let als = loss(&(left * right));
        assert!(best <= als + 1e-9 * best);
        assert!(als - best <= 1e-6 * best, "alternating fit {als} vs closed form {best}");
    }
}

#[test]
fn pc_and_oc_agree_for_complementary_frames() {
    // With m = 2 the first principal axis and its orthogonal complement describe the same fit.
    let mut r = rng(21);
    for _ in 0..10 {
        let z = gaussian(14, 2, &mut r) * DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 0.4]);
        let u = StiefelPoint::new(DMatrix::from_column_slice(2, 1, random_unit(2, &mut r).as_slice())).unwrap();
        let ubar = StiefelPoint::new(complement(u.as_matrix())).unwrap();
        let pc = pc_depth(&z, None, &u, &cfg()).unwrap();
        let oc = oc_depth(&z, None, &ubar, &cfg()).unwrap();
        assert_eq!(pc.count, oc.count);
    }
}
