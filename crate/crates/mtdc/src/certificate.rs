//! Sufficient stability certificate for the special case ℒ_C = ℒ_R and
//! K^P = k^P·I: three scalar inequalities on extremal eigenvalues of
//! symmetrized products of ℒ_R and diag(C_i), plus the cubic quadratic-form
//! coefficients used in the underlying Routh–Hurwitz argument.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::graph::{GraphKind, NetworkModel};
use crate::linalg::symmetric_extremal_eigenvalues;

/// Evaluation of the three certificate inequalities. The first two are
/// strict lower bounds against zero; the third compares against the product
/// of the first two left-hand sides. `certified` requires the hypotheses
/// (`applicable`) and all three conditions.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateResult {
    pub applicable: bool,
    /// (γ+δ)/(2k^P)·λ_min(ℒ_R C⁻¹ + C⁻¹ ℒ_R) + 1, required > 0.
    pub lhs_1: f64,
    /// γδ/(2k^P)·λ_min(ℒ_R² C⁻¹ + C⁻¹ ℒ_R²) + min_i K^V_i, required > 0.
    pub lhs_2: f64,
    /// λ_max(ℒ_R³)·γδ/k^P², required ≤ lhs_1 · lhs_2.
    pub lhs_3: f64,
    /// lhs_1 · lhs_2, right-hand side of the third inequality.
    pub rhs_3: f64,
    /// lhs_3 scaled by max_i C_i, the tighter bound appearing in the
    /// underlying a₀a₃ < a₁a₂ estimate.
    pub lhs_3_proof_variant: f64,
    pub condition_1: bool,
    pub condition_2: bool,
    pub condition_3: bool,
    /// Third condition evaluated with the max_i C_i factor.
    pub condition_3_proof_variant: bool,
    pub certified: bool,
    pub certified_proof_variant: bool,
}

fn hypotheses_hold(model: &NetworkModel, params: &ControllerParams) -> bool {
    model.comm_equals_physical(1e-12) && params.uniform_k_p()
}

/// Evaluates the certificate. Inapplicability (hypotheses violated) is a
/// result, not an error.
pub fn check_certificate(model: &NetworkModel, params: &ControllerParams) -> CertificateResult {
    let applicable = hypotheses_hold(model, params);

    let lr = model.laplacian(GraphKind::Physical);
    let n = model.bus_count();
    // The quadratic-form C⁻¹ is diag(C_i): the closed-loop matrix uses
    // C = diag(1/C_i), so its inverse restores the capacitances.
    let c_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        model.capacitances().iter().copied(),
    ));
    let k_p = params.k_p[0];
    let gamma = params.gamma;
    let delta = params.delta;
    let min_kv = params.k_v.iter().copied().fold(f64::INFINITY, f64::min);

    let lr2 = lr * lr;
    let lr3 = &lr2 * lr;

    let (min_1, _) = symmetric_extremal_eigenvalues(&(lr * &c_inv + &c_inv * lr));
    let (min_2, _) = symmetric_extremal_eigenvalues(&(&lr2 * &c_inv + &c_inv * &lr2));
    let (_, max_3) = symmetric_extremal_eigenvalues(&lr3);

    let lhs_1 = (gamma + delta) / (2.0 * k_p) * min_1 + 1.0;
    let lhs_2 = gamma * delta / (2.0 * k_p) * min_2 + min_kv;
    let lhs_3 = max_3 * gamma * delta / (k_p * k_p);
    let rhs_3 = lhs_1 * lhs_2;
    let max_c = model
        .capacitances()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let lhs_3_proof_variant = lhs_3 * max_c;

    // Strict inequalities get a small relative margin; float equality is
    // meaningless.
    let margin_1 = 1e-12 * (1.0 + lhs_1.abs());
    let margin_2 = 1e-12 * (1.0 + lhs_2.abs());
    let margin_3 = 1e-12 * (1.0 + rhs_3.abs());
    let condition_1 = lhs_1 > margin_1;
    let condition_2 = lhs_2 > margin_2;
    let condition_3 = lhs_3 <= rhs_3 + margin_3;
    let condition_3_proof_variant = lhs_3_proof_variant <= rhs_3 + margin_3;

    CertificateResult {
        applicable,
        lhs_1,
        lhs_2,
        lhs_3,
        rhs_3,
        lhs_3_proof_variant,
        condition_1,
        condition_2,
        condition_3,
        condition_3_proof_variant,
        certified: applicable && condition_1 && condition_2 && condition_3,
        certified_proof_variant: applicable
            && condition_1
            && condition_2
            && condition_3_proof_variant,
    }
}

/// Coefficients (a₀, a₁, a₂, a₃) of the scalar cubic xᵀQ(s)x for a unit
/// vector x under the certificate hypotheses.
pub fn quadratic_form_coefficients(
    model: &NetworkModel,
    params: &ControllerParams,
    x: &DVector<f64>,
) -> Result<(f64, f64, f64, f64)> {
    if !hypotheses_hold(model, params) {
        return Err(Error::InvalidParameter(
            "quadratic-form coefficients require identical topologies and uniform K^P".into(),
        ));
    }
    let n = model.bus_count();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    if (x.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "x must be a unit vector, got norm {}",
            x.norm()
        )));
    }
    let lr = model.laplacian(GraphKind::Physical);
    let c_inv = DVector::from_iterator(n, model.capacitances().iter().copied());
    let k_p = params.k_p[0];
    let gamma = params.gamma;
    let delta = params.delta;

    let lx = lr * x;
    let l2x = lr * &lx;
    let l3x = lr * &l2x;
    let cx = x.component_mul(&c_inv);
    let c_l2x = l2x.component_mul(&c_inv); // C⁻¹ℒ²x
    let c_lx = lx.component_mul(&c_inv); // C⁻¹ℒx
    let kvx = x.component_mul(&params.k_v);

    let a0 = gamma * delta / k_p * x.dot(&l3x);
    let a1 = (delta + gamma) / k_p * x.dot(&l2x)
        + delta * x.dot(&lx)
        + gamma * delta / k_p * x.dot(&c_l2x)
        + x.dot(&kvx);
    let a2 = x.dot(&lx) / k_p + 1.0 + (gamma + delta) / k_p * x.dot(&c_lx);
    let a3 = x.dot(&cx) / k_p;
    Ok((a0, a1, a2, a3))
}
