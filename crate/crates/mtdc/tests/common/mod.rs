//! Shared helpers for the integration suites: seeded random instances and
//! independent oracles (scalar-sum dynamics, matrix-exponential propagation)
//! that share no code with the library implementations.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mtdc::closed_loop::{assemble, stability_test_default, ClosedLoopSystem, StabilityReport};
use mtdc::controller::{ControllerParams, ControllerState};
use mtdc::graph::NetworkModel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected network on 3..=6 buses: a random spanning tree plus a few
/// chords. Capacitances and resistances are drawn in non-stiff ranges so the
/// closed loop can be integrated cheaply.
pub fn random_model(rng: &mut ChaCha8Rng) -> NetworkModel {
    let n = rng.random_range(3..=6);
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    // spanning tree: attach bus k to a random earlier bus
    for k in 2..=n {
        let j = rng.random_range(1..k);
        edges.push((j, k, rng.random_range(0.2..2.0)));
    }
    // extra chords
    for i in 1..=n {
        for j in (i + 1)..=n {
            if edges.iter().any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i)) {
                continue;
            }
            if rng.random_bool(0.25) {
                edges.push((i, j, rng.random_range(0.2..2.0)));
            }
        }
    }
    let caps: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.5)).collect();
    NetworkModel::new(n, &edges, caps, None).unwrap()
}

/// Random controller parameters with K^P = F⁻¹; `uniform_kp` restricts to the
/// certificate hypotheses.
pub fn random_params(rng: &mut ChaCha8Rng, n: usize, uniform_kp: bool) -> ControllerParams {
    let k_p = if uniform_kp {
        DVector::from_element(n, rng.random_range(0.5..2.0))
    } else {
        DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0))
    };
    let f = k_p.map(|k| 1.0 / k);
    let k_v = DVector::from_fn(n, |_, _| rng.random_range(0.5..3.0));
    let v_nom = DVector::from_fn(n, |_, _| rng.random_range(50.0..150.0));
    ControllerParams::new(
        k_p,
        k_v,
        rng.random_range(0.05..0.5),
        rng.random_range(0.05..0.5),
        v_nom,
        0.0,
        f,
    )
    .unwrap()
}

pub fn random_injection(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0))
}

pub struct StableInstance {
    pub model: NetworkModel,
    pub params: ControllerParams,
    pub i_inj: DVector<f64>,
    pub sys: ClosedLoopSystem,
    pub report: StabilityReport,
}

/// Draws (model, params, injections) until the delay-free loop is stable and
/// slow enough to integrate within a sane step budget.
pub fn random_stable_instance(rng: &mut ChaCha8Rng, uniform_kp: bool) -> StableInstance {
    loop {
        let model = random_model(rng);
        let params = random_params(rng, model.bus_count(), uniform_kp);
        let i_inj = random_injection(rng, model.bus_count());
        let sys = assemble(&model, &params, &i_inj).unwrap();
        let report = stability_test_default(&sys).unwrap();
        if !report.stable {
            continue;
        }
        // skip instances whose slowest mode would need very long horizons
        if report.spectral_abscissa_excluding_null > -0.02 {
            continue;
        }
        return StableInstance {
            model,
            params,
            i_inj,
            sys,
            report,
        };
    }
}

/// Scalar-sum plant dynamics: C_i·dV_i = Σ_j (V_j−V_i)/R_ij + I_i + u_i,
/// written directly from the line list.
pub fn plant_derivative_scalar(
    model: &NetworkModel,
    v: &DVector<f64>,
    i_inj: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    let n = model.bus_count();
    let mut dv = DVector::zeros(n);
    for e in model.lines() {
        let flow = (v[e.j] - v[e.i]) / e.value; // e.value = R_ij
        dv[e.i] += flow;
        dv[e.j] -= flow;
    }
    for k in 0..n {
        dv[k] = (dv[k] + i_inj[k] + u[k]) / model.capacitances()[k];
    }
    dv
}

/// Scalar-sum controller dynamics and output, written per bus from the edge
/// lists: u_i = −K^P_i(V_i−V̂_i−V̄_i), dV̂_i = −γ Σ_j c_ij (e_i−e_j) with
/// e = V̂+V̄−V, dV̄_i = −K^V_i(V_i−V^nom_i) − δ Σ_j c_ij (V̄_i−V̄_j).
pub fn controller_scalar(
    model: &NetworkModel,
    params: &ControllerParams,
    v: &DVector<f64>,
    state: &ControllerState,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = model.bus_count();
    let mut u = DVector::zeros(n);
    for i in 0..n {
        u[i] = -params.k_p[i] * (v[i] - state.v_hat[i] - state.v_bar[i]);
    }
    let e = DVector::from_fn(n, |i, _| state.v_hat[i] + state.v_bar[i] - v[i]);
    let mut d_hat = DVector::zeros(n);
    let mut d_bar = DVector::zeros(n);
    for edge in model.comm_edges() {
        let (i, j, c) = (edge.i, edge.j, edge.value);
        d_hat[i] -= params.gamma * c * (e[i] - e[j]);
        d_hat[j] -= params.gamma * c * (e[j] - e[i]);
        d_bar[i] -= params.delta * c * (state.v_bar[i] - state.v_bar[j]);
        d_bar[j] -= params.delta * c * (state.v_bar[j] - state.v_bar[i]);
    }
    for i in 0..n {
        d_bar[i] -= params.k_v[i] * (v[i] - params.v_nom[i]);
    }
    (u, d_hat, d_bar)
}

/// Exact propagation of ẋ = Ax + b via the augmented matrix exponential
/// exp([[A, b], [0, 0]]·t); valid for singular A.
pub fn exact_state(sys: &ClosedLoopSystem, x0: &DVector<f64>, t: f64) -> DVector<f64> {
    let m = sys.a().nrows();
    let mut aug = DMatrix::zeros(m + 1, m + 1);
    aug.view_mut((0, 0), (m, m)).copy_from(sys.a());
    aug.view_mut((0, m), (m, 1)).copy_from(sys.b());
    let phi = (aug * t).exp();
    let mut x_aug = DVector::zeros(m + 1);
    x_aug.rows_mut(0, m).copy_from(x0);
    x_aug[m] = 1.0;
    let y = phi * x_aug;
    y.rows(0, m).into_owned()
}
