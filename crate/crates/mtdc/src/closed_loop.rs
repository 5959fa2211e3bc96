//! Closed-loop assembly ẋ = A x + b with state blocks (V̄, V̂, V), exact
//! eigenvalue stability testing, and the analytic stationary solution.

use nalgebra::{Complex, DMatrix, DVector};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::graph::{inverse_capacitance_diag, GraphKind, NetworkModel};
use crate::linalg::laplacian_pseudo_solve;

/// The assembled 3n-dimensional linear closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    n: usize,
}

impl ClosedLoopSystem {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn bus_count(&self) -> usize {
        self.n
    }

    /// Frobenius norm of A, the scale used for default tolerances.
    pub fn a_norm(&self) -> f64 {
        self.a.norm()
    }

    /// Structural null vector [1ₙ; −1ₙ; 0ₙ] / √(2n).
    pub fn null_vector(&self) -> DVector<f64> {
        let n = self.n;
        let s = 1.0 / ((2 * n) as f64).sqrt();
        DVector::from_fn(3 * n, |i, _| {
            if i < n {
                s
            } else if i < 2 * n {
                -s
            } else {
                0.0
            }
        })
    }
}

/// Outcome of the eigenvalue stability test.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// All 3n eigenvalues of A.
    pub eigenvalues: Vec<Complex<f64>>,
    /// Number of eigenvalues with |λ| ≤ tol_zero (informational; very slow
    /// stable modes can fall inside the cluster).
    pub zero_multiplicity: usize,
    /// True iff every eigenvalue other than the structural zero (the single
    /// eigenvalue of smallest magnitude) has Re(λ) < −tol_margin.
    pub stable: bool,
    /// Largest real part over all eigenvalues except the structural zero.
    pub spectral_abscissa_excluding_null: f64,
    pub tol_zero: f64,
    pub tol_margin: f64,
}

/// Default zero-cluster tolerance, scaled by ‖A‖ since the blocks span many
/// orders of magnitude.
pub fn default_tol_zero(sys: &ClosedLoopSystem) -> f64 {
    1e-7 * sys.a_norm()
}

/// Default strict-stability margin, scaled by ‖A‖.
pub fn default_tol_margin(sys: &ClosedLoopSystem) -> f64 {
    1e-9 * sys.a_norm()
}

/// Builds A and b per the closed-loop block structure:
/// A = [[−δℒ_C, 0, −K^V], [−γℒ_C, −γℒ_C, γℒ_C], [CK^P, CK^P, −C(ℒ_R+K^P)]],
/// b = [K^V V^nom; 0; C I^inj], with C = diag(1/C_i).
pub fn assemble(
    model: &NetworkModel,
    params: &ControllerParams,
    i_inj: &DVector<f64>,
) -> Result<ClosedLoopSystem> {
    let n = model.bus_count();
    if params.bus_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.bus_count(),
        });
    }
    if i_inj.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: i_inj.len(),
        });
    }
    let lr = model.laplacian(GraphKind::Physical);
    let lc = model.laplacian(GraphKind::Communication);
    let c_inv = inverse_capacitance_diag(model); // 1/C_i

    let mut a = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = -params.delta * lc[(i, j)];
            a[(n + i, j)] = -params.gamma * lc[(i, j)];
            a[(n + i, n + j)] = -params.gamma * lc[(i, j)];
            a[(n + i, 2 * n + j)] = params.gamma * lc[(i, j)];
            a[(2 * n + i, 2 * n + j)] = -c_inv[i] * lr[(i, j)];
        }
        a[(i, 2 * n + i)] = -params.k_v[i];
        a[(2 * n + i, i)] = c_inv[i] * params.k_p[i];
        a[(2 * n + i, n + i)] = c_inv[i] * params.k_p[i];
        a[(2 * n + i, 2 * n + i)] -= c_inv[i] * params.k_p[i];
    }

    let mut b = DVector::zeros(3 * n);
    for i in 0..n {
        b[i] = params.k_v[i] * params.v_nom[i];
        b[2 * n + i] = c_inv[i] * i_inj[i];
    }

    let sys = ClosedLoopSystem { a, b, n };

    // Structural identity A v₁ = 0; failure means an assembly bug.
    let residual = (&sys.a * sys.null_vector()).norm();
    if residual > 1e-9 * sys.a_norm().max(1.0) {
        return Err(Error::Internal(format!(
            "assembled A does not annihilate [1;-1;0] (residual {residual:.3e})"
        )));
    }
    Ok(sys)
}

/// Full eigen-decomposition of A with zero-cluster classification.
pub fn stability_test(
    sys: &ClosedLoopSystem,
    tol_zero: f64,
    tol_margin: f64,
) -> Result<StabilityReport> {
    if !(tol_zero > 0.0) || !(tol_margin > 0.0) {
        return Err(Error::InvalidParameter(
            "stability tolerances must be positive".into(),
        ));
    }
    let eig = sys.a.clone().complex_eigenvalues();
    let mut eigenvalues: Vec<Complex<f64>> = eig.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));

    let zero_multiplicity = eigenvalues.iter().filter(|l| l.norm() <= tol_zero).count();
    if zero_multiplicity == 0 {
        return Err(Error::Numerical(format!(
            "no eigenvalue in the zero cluster (tol {tol_zero:.3e}); A always has one"
        )));
    }
    // The structural zero is the single eigenvalue of smallest magnitude;
    // everything else must sit strictly in the left half plane. Judging by
    // the cluster alone would misclassify very slow stable modes.
    let null_idx = eigenvalues
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.norm().total_cmp(&b.norm()))
        .map(|(i, _)| i)
        .unwrap();
    let abscissa = eigenvalues
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != null_idx)
        .map(|(_, l)| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let stable = abscissa.is_finite() && abscissa < -tol_margin;
    Ok(StabilityReport {
        eigenvalues,
        zero_multiplicity,
        stable,
        spectral_abscissa_excluding_null: abscissa,
        tol_zero,
        tol_margin,
    })
}

/// Stability test with the default ‖A‖-scaled tolerances.
pub fn stability_test_default(sys: &ClosedLoopSystem) -> Result<StabilityReport> {
    stability_test(sys, default_tol_zero(sys), default_tol_margin(sys))
}

/// The stationary solution the stable closed loop converges to.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub v: DVector<f64>,
    pub v_hat: DVector<f64>,
    pub v_bar: DVector<f64>,
    pub u: DVector<f64>,
    /// Common consensus value of V̂ + V̄ − V.
    pub k1: f64,
}

/// Solves the stationary conditions analytically:
/// u∞ = k₁K^P·1 with k₁ = −ΣI / ΣK^P; ℒ_R V∞ = I + u∞ with the constant mode
/// pinned by Σ K^V (V∞ − V^nom) = 0; the auxiliary split fixed by the
/// conserved quantity 1ᵀV̂ = `vhat_sum` (an invariant of the dynamics).
/// Refuses when the eigenvalue test fails.
pub fn predict_steady_state(
    model: &NetworkModel,
    params: &ControllerParams,
    i_inj: &DVector<f64>,
    vhat_sum: f64,
) -> Result<SteadyState> {
    let sys = assemble(model, params, i_inj)?;
    let report = stability_test_default(&sys)?;
    if !report.stable {
        return Err(Error::Numerical(format!(
            "system is not stable (zero multiplicity {}, abscissa {:.3e}); no steady state",
            report.zero_multiplicity, report.spectral_abscissa_excluding_null
        )));
    }
    steady_state_unchecked(model, params, i_inj, vhat_sum)
}

/// The stationary-condition solve without the stability gate. Used internally
/// and by analyses that report the would-be equilibrium of an unstable loop.
pub fn steady_state_unchecked(
    model: &NetworkModel,
    params: &ControllerParams,
    i_inj: &DVector<f64>,
    vhat_sum: f64,
) -> Result<SteadyState> {
    let n = model.bus_count();
    if i_inj.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: i_inj.len(),
        });
    }
    let k1 = -i_inj.sum() / params.k_p.sum();
    let u = &params.k_p * k1;

    // ℒ_R V = I + u on range(ℒ_R), then pin the constant mode.
    let rhs = i_inj + &u;
    let v_particular = laplacian_pseudo_solve(model.laplacian(GraphKind::Physical), &rhs)?;
    let kv_sum = params.k_v.sum();
    let shift = params
        .k_v
        .iter()
        .zip(params.v_nom.iter().zip(v_particular.iter()))
        .map(|(kv, (vn, vp))| kv * (vn - vp))
        .sum::<f64>()
        / kv_sum;
    let v = v_particular.add_scalar(shift);

    // δ ℒ_C V̄ = K^V (V^nom − V); solvable because the pin above zeroes the
    // null-space component of the right-hand side.
    let rhs_bar = DVector::from_fn(n, |i, _| {
        params.k_v[i] * (params.v_nom[i] - v[i]) / params.delta
    });
    let v_bar_particular = laplacian_pseudo_solve(model.laplacian(GraphKind::Communication), &rhs_bar)?;
    let mut v_hat = &v + DVector::from_element(n, k1) - &v_bar_particular;
    let s = (vhat_sum - v_hat.sum()) / n as f64;
    v_hat.add_scalar_mut(s);
    let v_bar = v_bar_particular.add_scalar(-s);

    Ok(SteadyState {
        v,
        v_hat,
        v_bar,
        u,
        k1,
    })
}

/// Theorem-style bound on asymptotic pairwise voltage differences:
/// 2 · max_i |I_inj,i + u∞,i| · Σ_{i≥2} 1/λ_i(ℒ_R).
pub fn voltage_spread_bound(
    model: &NetworkModel,
    i_inj: &DVector<f64>,
    u_inf: &DVector<f64>,
) -> Result<f64> {
    let n = model.bus_count();
    for len in [i_inj.len(), u_inf.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let i_max = i_inj
        .iter()
        .zip(u_inf.iter())
        .map(|(a, b)| (a + b).abs())
        .fold(0.0f64, f64::max);
    let spectrum = crate::graph::laplacian_spectrum(model.laplacian(GraphKind::Physical))?;
    let inv_sum: f64 = spectrum.iter().skip(1).map(|l| 1.0 / l).sum();
    Ok(2.0 * i_max * inv_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn simple_params(n: usize) -> ControllerParams {
        ControllerParams::new(
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 1.0),
            1.0,
            1.0,
            DVector::zeros(n),
            0.0,
            DVector::from_element(n, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn two_bus_matrix_by_hand() {
        // n = 2, all parameters 1, R = 1 Ω, C = 1 F.
        let m = NetworkModel::new(2, &[(1, 2, 1.0)], vec![1.0, 1.0], None).unwrap();
        let p = simple_params(2);
        let sys = assemble(&m, &p, &DVector::zeros(2)).unwrap();
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(6, 6, &[
            -1.0,  1.0,  0.0,  0.0, -1.0,  0.0,
             1.0, -1.0,  0.0,  0.0,  0.0, -1.0,
            -1.0,  1.0, -1.0,  1.0,  1.0, -1.0,
             1.0, -1.0,  1.0, -1.0, -1.0,  1.0,
             1.0,  0.0,  1.0,  0.0, -2.0,  1.0,
             0.0,  1.0,  0.0,  1.0,  1.0, -2.0,
        ]);
        assert_relative_eq!(sys.a(), &expected, epsilon = 1e-14);
    }

    #[test]
    fn null_vector_annihilated() {
        let m = NetworkModel::new(
            3,
            &[(1, 2, 0.4), (2, 3, 1.7)],
            vec![0.3, 1.0, 2.5],
            None,
        )
        .unwrap();
        let p = ControllerParams::new(
            dvector![0.5, 1.0, 2.0],
            dvector![1.5, 0.7, 0.2],
            0.3,
            0.8,
            dvector![10.0, 11.0, 12.0],
            0.0,
            dvector![2.0, 1.0, 0.5],
        )
        .unwrap();
        let sys = assemble(&m, &p, &dvector![1.0, -3.0, 5.0]).unwrap();
        let res = (sys.a() * sys.null_vector()).norm();
        assert!(res <= 1e-9 * sys.a_norm());
    }

    #[test]
    fn b_not_parallel_to_null_vector() {
        let m = NetworkModel::new(2, &[(1, 2, 1.0)], vec![1.0, 1.0], None).unwrap();
        let mut p = simple_params(2);
        p.v_nom = dvector![100.0, 100.0];
        let sys = assemble(&m, &p, &dvector![5.0, -5.0]).unwrap();
        let v1 = sys.null_vector();
        let b = sys.b();
        let cosine = b.dot(&v1) / (b.norm() * v1.norm());
        assert!(cosine.abs() < 0.999, "b must not be parallel to v1");
    }

    #[test]
    fn frozen_consensus_states_are_not_stable() {
        // K^V = 0 is outside the valid parameter range, so emulate the
        // degenerate case by editing the assembled matrix: zero the V̄ and V̂
        // rows. The zero cluster then has size > 1 and the verdict is false.
        let m = NetworkModel::new(2, &[(1, 2, 1.0)], vec![1.0, 1.0], None).unwrap();
        let p = simple_params(2);
        let mut sys = assemble(&m, &p, &DVector::zeros(2)).unwrap();
        for r in 0..4 {
            for c in 0..6 {
                sys.a[(r, c)] = 0.0;
            }
        }
        let report = stability_test(&sys, 1e-9, 1e-12).unwrap();
        assert!(report.zero_multiplicity > 1);
        assert!(!report.stable);
    }

    #[test]
    fn spectrum_scaling_preserves_verdict() {
        let m = NetworkModel::new(3, &[(1, 2, 1.0), (2, 3, 1.0)], vec![1.0; 3], None).unwrap();
        let p = simple_params(3);
        let sys = assemble(&m, &p, &DVector::zeros(3)).unwrap();
        let r1 = stability_test_default(&sys).unwrap();
        let scaled = ClosedLoopSystem {
            a: sys.a.clone() * 7.5,
            b: sys.b.clone(),
            n: sys.n,
        };
        let r2 = stability_test_default(&scaled).unwrap();
        assert_eq!(r1.stable, r2.stable);
        assert_eq!(r1.zero_multiplicity, r2.zero_multiplicity);
        assert_relative_eq!(
            r2.spectral_abscissa_excluding_null,
            7.5 * r1.spectral_abscissa_excluding_null,
            max_relative = 1e-6
        );
    }

    #[test]
    fn zero_sum_injections_give_zero_control() {
        let m = NetworkModel::new(3, &[(1, 2, 1.0), (2, 3, 1.0)], vec![1.0; 3], None).unwrap();
        let mut p = simple_params(3);
        p.v_nom = dvector![10.0, 10.0, 10.0];
        let ss = predict_steady_state(&m, &p, &dvector![2.0, -0.5, -1.5], 0.0).unwrap();
        assert_relative_eq!(ss.u.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn steady_state_is_fixed_point_and_weighted_error_zero() {
        let m = NetworkModel::new(
            4,
            &[(1, 2, 0.2), (1, 3, 0.5), (2, 4, 0.8), (3, 4, 0.4)],
            vec![0.9, 1.4, 0.6, 1.1],
            None,
        )
        .unwrap();
        let p = ControllerParams::new(
            dvector![1.0, 2.0, 0.5, 1.5],
            dvector![0.8, 1.2, 2.0, 0.4],
            0.15,
            0.2,
            dvector![10.0, 10.5, 9.5, 10.0],
            0.0,
            dvector![1.0, 0.5, 2.0, 1.0 / 1.5],
        )
        .unwrap();
        let i_inj = dvector![3.0, 2.0, -3.0, -4.0];
        let sys = assemble(&m, &p, &i_inj).unwrap();
        assert!(stability_test_default(&sys).unwrap().stable);

        let ss = predict_steady_state(&m, &p, &i_inj, 0.3).unwrap();
        let x = DVector::from_iterator(
            12,
            ss.v_bar.iter().chain(ss.v_hat.iter()).chain(ss.v.iter()).copied(),
        );
        let residual = (sys.a() * &x + sys.b()).norm();
        assert!(
            residual <= 1e-9 * (sys.a_norm() * x.norm() + sys.b().norm()),
            "fixed-point residual {residual:.3e}"
        );
        let weighted: f64 = p
            .k_v
            .iter()
            .zip(ss.v.iter().zip(p.v_nom.iter()))
            .map(|(kv, (v, vn))| kv * (v - vn))
            .sum();
        assert!(weighted.abs() <= 1e-9 * p.k_v.sum());
        assert_relative_eq!(ss.v_hat.sum(), 0.3, epsilon = 1e-9);
    }

    #[test]
    fn spread_bound_zero_when_currents_balance_pointwise() {
        let m = NetworkModel::new(2, &[(1, 2, 1.0)], vec![1.0, 1.0], None).unwrap();
        let b = voltage_spread_bound(&m, &dvector![3.0, -3.0], &dvector![-3.0, 3.0]).unwrap();
        assert_relative_eq!(b, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn four_bus_spread_bound_value() {
        let edges = [(1, 2, 0.0065), (1, 3, 0.0065), (2, 4, 0.0065), (3, 4, 0.0065)];
        let m = NetworkModel::new(4, &edges, vec![123.79e-6; 4], None).unwrap();
        let i_inj = dvector![300.0, 200.0, -300.0, -400.0];
        let u = dvector![50.0, 50.0, 50.0, 50.0];
        let b = voltage_spread_bound(&m, &i_inj, &u).unwrap();
        assert_relative_eq!(b, 5.6875, max_relative = 1e-9);
    }
}
