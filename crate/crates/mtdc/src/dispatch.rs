//! Optimal current dispatch: minimize Σ ½ f_i u_i² subject to feasibility of
//! the DC power flow, which for a connected grid reduces to 1ᵀ(I_inj + u) = 0.
//! The closed form follows from the KKT condition F u = λ·1; `qp_oracle`
//! solves the same program by constraint elimination as an independent check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{GraphKind, NetworkModel};
use crate::linalg::laplacian_pseudo_solve;

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub u_star: DVector<f64>,
    /// KKT multiplier of the balance constraint.
    pub lambda: f64,
    /// Objective value Σ ½ f_i u_i².
    pub cost: f64,
}

fn validate(i_inj: &DVector<f64>, f: &DVector<f64>) -> Result<()> {
    if f.len() != i_inj.len() {
        return Err(Error::DimensionMismatch {
            expected: i_inj.len(),
            got: f.len(),
        });
    }
    if f.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidParameter(
            "cost weights must be strictly positive".into(),
        ));
    }
    Ok(())
}

fn cost_of(u: &DVector<f64>, f: &DVector<f64>) -> f64 {
    u.iter().zip(f.iter()).map(|(u, f)| 0.5 * f * u * u).sum()
}

/// KKT closed form: u_i = λ/f_i with λ = −(Σ I_inj) / (Σ 1/f_i).
pub fn solve_dispatch_closed_form(
    i_inj: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<DispatchSolution> {
    validate(i_inj, f)?;
    let inv_sum: f64 = f.iter().map(|x| 1.0 / x).sum();
    let lambda = -i_inj.sum() / inv_sum;
    let u_star = f.map(|x| lambda / x);
    let cost = cost_of(&u_star, f);
    Ok(DispatchSolution {
        u_star,
        lambda,
        cost,
    })
}

/// Independent reference solver: eliminates the balance constraint by
/// substituting u_n = −Σ I − Σ_{j<n} u_j and solving the reduced strongly
/// convex program as a dense linear system. Shares no code path with the
/// closed form; intended for verification.
pub fn qp_oracle(i_inj: &DVector<f64>, f: &DVector<f64>) -> Result<DispatchSolution> {
    validate(i_inj, f)?;
    let n = i_inj.len();
    let s = -i_inj.sum();
    if n == 1 {
        let u = DVector::from_element(1, s);
        let cost = cost_of(&u, f);
        return Ok(DispatchSolution {
            u_star: u,
            lambda: f[0] * s,
            cost,
        });
    }
    // Reduced Hessian diag(f_1..f_{n-1}) + f_n 11ᵀ, gradient rhs f_n·s·1.
    let m = n - 1;
    let mut h = DMatrix::from_element(m, m, f[n - 1]);
    for i in 0..m {
        h[(i, i)] += f[i];
    }
    let rhs = DVector::from_element(m, f[n - 1] * s);
    let w = h
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("reduced QP Hessian is singular".into()))?;
    let mut u = DVector::zeros(n);
    let mut tail = s;
    for i in 0..m {
        u[i] = w[i];
        tail -= w[i];
    }
    u[n - 1] = tail;
    let lambda = f[n - 1] * u[n - 1];
    let cost = cost_of(&u, f);
    Ok(DispatchSolution {
        u_star: u,
        lambda,
        cost,
    })
}

/// A representative voltage profile solving ℒ_R V = I_inj + u*, with the free
/// constant pinned so that Σ K_i^V (V_i − V_i^nom) = 0.
pub fn representative_voltage(
    model: &NetworkModel,
    k_v: &DVector<f64>,
    v_nom: &DVector<f64>,
    i_inj: &DVector<f64>,
    u_star: &DVector<f64>,
) -> Result<DVector<f64>> {
    let rhs = i_inj + u_star;
    let particular = laplacian_pseudo_solve(model.laplacian(GraphKind::Physical), &rhs)?;
    let shift = k_v
        .iter()
        .zip(v_nom.iter().zip(particular.iter()))
        .map(|(kv, (vn, vp))| kv * (vn - vp))
        .sum::<f64>()
        / k_v.sum();
    Ok(particular.add_scalar(shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn balanced_injections_need_no_control() {
        let sol = solve_dispatch_closed_form(&dvector![2.0, -1.5, -0.5], &dvector![1.0, 2.0, 3.0])
            .unwrap();
        assert_relative_eq!(sol.u_star.norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(sol.cost, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn four_bus_uniform_weights() {
        let sol = solve_dispatch_closed_form(
            &dvector![300.0, 200.0, -300.0, -400.0],
            &dvector![1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        for u in sol.u_star.iter() {
            assert_relative_eq!(u, &50.0, epsilon = 1e-12);
        }
        assert_relative_eq!(sol.lambda, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn four_bus_nonuniform_weights() {
        let sol = solve_dispatch_closed_form(
            &dvector![300.0, 200.0, -300.0, -400.0],
            &dvector![1.0, 2.0, 2.0, 2.0],
        )
        .unwrap();
        assert_relative_eq!(sol.lambda, 80.0, epsilon = 1e-12);
        let expected = [80.0, 40.0, 40.0, 40.0];
        for (u, e) in sol.u_star.iter().zip(expected) {
            assert_relative_eq!(u, &e, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_matches_closed_form() {
        let i = dvector![300.0, 200.0, -300.0, -400.0];
        let f = dvector![1.0, 2.0, 2.0, 2.0];
        let a = solve_dispatch_closed_form(&i, &f).unwrap();
        let b = qp_oracle(&i, &f).unwrap();
        assert_relative_eq!(a.u_star, b.u_star, max_relative = 1e-12);
        assert_relative_eq!(a.lambda, b.lambda, max_relative = 1e-12);
    }

    #[test]
    fn oracle_uniform_weights_give_uniform_control() {
        let sol = qp_oracle(&dvector![5.0, 1.0, -2.0], &dvector![3.0, 3.0, 3.0]).unwrap();
        assert_relative_eq!(sol.u_star[0], sol.u_star[1], epsilon = 1e-12);
        assert_relative_eq!(sol.u_star[1], sol.u_star[2], epsilon = 1e-12);
    }

    #[test]
    fn feasible_perturbation_increases_cost() {
        let i = dvector![4.0, -1.0, -7.0];
        let f = dvector![0.5, 1.5, 2.5];
        let sol = solve_dispatch_closed_form(&i, &f).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                if j == k {
                    continue;
                }
                let mut u = sol.u_star.clone();
                u[k] += 0.1;
                u[j] -= 0.1; // repair feasibility
                assert!(cost_of(&u, &f) > sol.cost);
            }
        }
    }

    #[test]
    fn kkt_condition_holds() {
        let i = dvector![10.0, -3.0, 4.0, -2.0, 1.0];
        let f = dvector![0.7, 1.1, 2.3, 0.4, 5.0];
        let sol = solve_dispatch_closed_form(&i, &f).unwrap();
        for (fu, u) in f.iter().zip(sol.u_star.iter()) {
            assert_relative_eq!(fu * u, sol.lambda, max_relative = 1e-12);
        }
        assert_relative_eq!(sol.u_star.sum() + i.sum(), 0.0, epsilon = 1e-12);
    }
}
