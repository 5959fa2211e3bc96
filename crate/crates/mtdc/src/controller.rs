//! The distributed averaging voltage controller: a per-bus proportional term
//! whose reference is driven by two consensus-filtered auxiliary states, with
//! an optional communication delay on the consensus sums.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::{GraphKind, NetworkModel};

/// Gains and references of the controller. All gains are strictly positive;
/// `f` holds the dispatch cost weights. Optimal dispatch (Theorem-style
/// steady-state claims) additionally requires `k_p = 1/f` element-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    /// Per-bus proportional gains K^P_i in Ω⁻¹.
    pub k_p: DVector<f64>,
    /// Per-bus secondary voltage gains K^V_i.
    pub k_v: DVector<f64>,
    /// Consensus gain γ scaling ℒ_C in the V̂ dynamics.
    pub gamma: f64,
    /// Consensus gain δ scaling ℒ_C in the V̄ dynamics.
    pub delta: f64,
    /// Per-bus nominal voltages in V.
    pub v_nom: DVector<f64>,
    /// Communication delay τ in s.
    pub tau: f64,
    /// Per-bus dispatch cost weights f_i.
    pub f: DVector<f64>,
}

impl ControllerParams {
    /// Validates gain positivity and consistent lengths.
    pub fn new(
        k_p: DVector<f64>,
        k_v: DVector<f64>,
        gamma: f64,
        delta: f64,
        v_nom: DVector<f64>,
        tau: f64,
        f: DVector<f64>,
    ) -> Result<Self> {
        let n = k_p.len();
        for (name, v) in [("k_v", &k_v), ("v_nom", &v_nom), ("f", &f)] {
            if v.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
        }
        for (name, v) in [("k_p", &k_p), ("k_v", &k_v), ("f", &f)] {
            if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} entries must be strictly positive and finite"
                )));
            }
        }
        if !(gamma > 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidParameter(
                "gamma and delta must be strictly positive".into(),
            ));
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite and >= 0".into()));
        }
        if v_nom.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("v_nom entries must be finite".into()));
        }
        Ok(Self {
            k_p,
            k_v,
            gamma,
            delta,
            v_nom,
            tau,
            f,
        })
    }

    /// Derives K^P = F⁻¹ from cost weights, the optimal-dispatch pairing.
    pub fn from_cost_weights(
        f: DVector<f64>,
        k_v: DVector<f64>,
        gamma: f64,
        delta: f64,
        v_nom: DVector<f64>,
        tau: f64,
    ) -> Result<Self> {
        let k_p = f.map(|x| 1.0 / x);
        Self::new(k_p, k_v, gamma, delta, v_nom, tau, f)
    }

    pub fn bus_count(&self) -> usize {
        self.k_p.len()
    }

    /// True when K^P = F⁻¹ holds element-wise (relative tolerance 1e-12).
    pub fn dispatch_optimal(&self) -> bool {
        self.k_p
            .iter()
            .zip(self.f.iter())
            .all(|(kp, f)| (kp * f - 1.0).abs() <= 1e-12)
    }

    /// True when all proportional gains are equal (relative tolerance 1e-12).
    pub fn uniform_k_p(&self) -> bool {
        let k0 = self.k_p[0];
        self.k_p.iter().all(|&k| (k - k0).abs() <= 1e-12 * k0.abs())
    }
}

/// Auxiliary controller states V̂ and V̄.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub v_hat: DVector<f64>,
    pub v_bar: DVector<f64>,
}

impl ControllerState {
    pub fn zeros(n: usize) -> Self {
        Self {
            v_hat: DVector::zeros(n),
            v_bar: DVector::zeros(n),
        }
    }
}

/// The bus states seen over the communication network at time t − τ.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedSnapshot<'a> {
    pub v: &'a DVector<f64>,
    pub v_hat: &'a DVector<f64>,
    pub v_bar: &'a DVector<f64>,
}

/// Controlled injection u = −K^P (V − V̂ − V̄).
pub fn control_output(
    params: &ControllerParams,
    v: &DVector<f64>,
    state: &ControllerState,
) -> Result<DVector<f64>> {
    let n = params.bus_count();
    for len in [v.len(), state.v_hat.len(), state.v_bar.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    Ok(DVector::from_fn(n, |i, _| {
        -params.k_p[i] * (v[i] - state.v_hat[i] - state.v_bar[i])
    }))
}

/// Delay-free auxiliary-state derivatives:
/// dV̂/dt = −γ ℒ_C (V̂ + V̄ − V),  dV̄/dt = −K^V (V − V^nom) − δ ℒ_C V̄.
pub fn controller_derivative(
    model: &NetworkModel,
    params: &ControllerParams,
    v: &DVector<f64>,
    state: &ControllerState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let snapshot = DelayedSnapshot {
        v,
        v_hat: &state.v_hat,
        v_bar: &state.v_bar,
    };
    controller_derivative_delayed(model, params, v, state, &snapshot)
}

/// Delayed variant: every consensus sum over the communication graph is
/// evaluated on the snapshot at t − τ, while the local secondary term
/// −K^V (V(t) − V^nom) uses the current voltage. With the snapshot equal to
/// the current state this reduces bit-exactly to [`controller_derivative`].
pub fn controller_derivative_delayed(
    model: &NetworkModel,
    params: &ControllerParams,
    v_now: &DVector<f64>,
    _state_now: &ControllerState,
    delayed: &DelayedSnapshot<'_>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = model.bus_count();
    if params.bus_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.bus_count(),
        });
    }
    for len in [v_now.len(), delayed.v.len(), delayed.v_hat.len(), delayed.v_bar.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let lc = model.laplacian(GraphKind::Communication);

    let err_delayed = delayed.v_hat + delayed.v_bar - delayed.v;
    let d_v_hat = -(lc * err_delayed) * params.gamma;

    let mut d_v_bar = -(lc * delayed.v_bar) * params.delta;
    for i in 0..n {
        d_v_bar[i] -= params.k_v[i] * (v_now[i] - params.v_nom[i]);
    }
    Ok((d_v_hat, d_v_bar))
}
