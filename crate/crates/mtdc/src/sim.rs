//! Fixed-step closed-loop integration with a grid-aligned delay history
//! buffer and event-aligned injection switching.
//!
//! The integrator is the classical 4-stage explicit Runge–Kutta scheme. For
//! τ > 0 the consensus terms read the history at exactly t − τ; the delayed
//! snapshot is held constant across the four stages of a step. Pre-history
//! (before the simulation start) is the initial state held constant.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::closed_loop::{ClosedLoopSystem, SteadyState};
use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::graph::{GraphKind, NetworkModel};
use crate::plant::InjectionProfile;

/// Real-axis extent of the classical RK4 stability region.
pub const RK4_REAL_AXIS_BOUND: f64 = 2.785293563405282;

/// Relative tolerance for "τ is an integer multiple of h" checks.
const GRID_ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Simulation horizon in s (integration runs over [0, t_end]).
    pub t_end: f64,
    /// Fixed step h in s.
    pub h: f64,
    /// Record every k-th step (the initial and final states are always kept).
    pub record_every: usize,
    /// Communication delay τ in s; must be an integer multiple of h.
    pub tau: f64,
    /// Divergence threshold on max |V_i|; `None` selects the default
    /// 100·(max |V^nom| + 1).
    pub blow_up_threshold: Option<f64>,
}

impl SimConfig {
    /// Validates the configuration and returns the delay in whole steps.
    pub fn validate(&self) -> Result<usize> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidParameter("step h must be positive".into()));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParameter("t_end must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite and >= 0".into()));
        }
        let steps = (self.tau / self.h).round();
        if (self.tau - steps * self.h).abs() > GRID_ALIGN_TOL * self.h.max(self.tau) {
            return Err(Error::InvalidParameter(format!(
                "tau = {} is not an integer multiple of h = {}",
                self.tau, self.h
            )));
        }
        Ok(steps as usize)
    }
}

/// Full closed-loop state (V̄, V̂, V).
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub v_bar: DVector<f64>,
    pub v_hat: DVector<f64>,
    pub v: DVector<f64>,
}

impl FullState {
    pub fn zeros_with_voltage(v: DVector<f64>) -> Self {
        let n = v.len();
        Self {
            v_bar: DVector::zeros(n),
            v_hat: DVector::zeros(n),
            v,
        }
    }

    pub fn from_steady_state(ss: &SteadyState) -> Self {
        Self {
            v_bar: ss.v_bar.clone(),
            v_hat: ss.v_hat.clone(),
            v: ss.v.clone(),
        }
    }

    /// Stacked vector in the closed-loop block order.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.v.len();
        DVector::from_iterator(
            3 * n,
            self.v_bar
                .iter()
                .chain(self.v_hat.iter())
                .chain(self.v.iter())
                .copied(),
        )
    }
}

/// Time-indexed simulation record.
#[derive(Debug, Clone)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub v: Vec<DVector<f64>>,
    pub v_hat: Vec<DVector<f64>>,
    pub v_bar: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
}

impl SimTrace {
    pub fn final_state(&self) -> FullState {
        let last = self.times.len() - 1;
        FullState {
            v_bar: self.v_bar[last].clone(),
            v_hat: self.v_hat[last].clone(),
            v: self.v[last].clone(),
        }
    }
}

/// Which recorded signal a settling query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    Voltage,
    Control,
}

struct Deriv<'a> {
    lr: &'a nalgebra::DMatrix<f64>,
    lc: &'a nalgebra::DMatrix<f64>,
    params: &'a ControllerParams,
    inv_c: DVector<f64>,
    n: usize,
}

impl<'a> Deriv<'a> {
    fn new(model: &'a NetworkModel, params: &'a ControllerParams) -> Self {
        Self {
            lr: model.laplacian(GraphKind::Physical),
            lc: model.laplacian(GraphKind::Communication),
            params,
            inv_c: DVector::from_iterator(
                model.bus_count(),
                model.capacitances().iter().map(|c| 1.0 / c),
            ),
            n: model.bus_count(),
        }
    }

    /// Writes the derivative of (v_bar, v_hat, v) into `out`, reading the
    /// consensus inputs from `e_del` (= V̂+V̄−V at t−τ) and `vbar_del`.
    #[allow(clippy::too_many_arguments)]
    fn eval(
        &self,
        v_bar: &DVector<f64>,
        v_hat: &DVector<f64>,
        v: &DVector<f64>,
        e_del: &DVector<f64>,
        vbar_del: &DVector<f64>,
        i_inj: &DVector<f64>,
        out_bar: &mut DVector<f64>,
        out_hat: &mut DVector<f64>,
        out_v: &mut DVector<f64>,
    ) {
        let p = self.params;
        // dV̂ = −γ ℒ_C e(t−τ)
        out_hat.gemv(-p.gamma, self.lc, e_del, 0.0);
        // dV̄ = −K^V (V − V^nom) − δ ℒ_C V̄(t−τ)
        out_bar.gemv(-p.delta, self.lc, vbar_del, 0.0);
        for i in 0..self.n {
            out_bar[i] -= p.k_v[i] * (v[i] - p.v_nom[i]);
        }
        // dV = (−ℒ_R V + I + u) / C_i with local, undelayed u.
        out_v.gemv(-1.0, self.lr, v, 0.0);
        for i in 0..self.n {
            let u = -p.k_p[i] * (v[i] - v_hat[i] - v_bar[i]);
            out_v[i] = (out_v[i] + i_inj[i] + u) * self.inv_c[i];
        }
    }
}

/// Integrates the closed loop from `x0` over [0, t_end]. Injection switch
/// times must be non-negative integer multiples of h so that steps never
/// straddle a switch. Divergence (blow-up or non-finite values) ends the run
/// early with the flag set; it is not an error.
pub fn simulate(
    model: &NetworkModel,
    params: &ControllerParams,
    profile: &InjectionProfile,
    x0: &FullState,
    cfg: &SimConfig,
) -> Result<SimTrace> {
    let n = model.bus_count();
    let delay_steps = cfg.validate()?;
    if params.bus_count() != n || profile.bus_count() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: params.bus_count().max(profile.bus_count()),
        });
    }
    for s in [&x0.v_bar, &x0.v_hat, &x0.v] {
        if s.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: s.len(),
            });
        }
    }
    for (t, _) in profile.switches() {
        if *t < 0.0 {
            return Err(Error::InvalidParameter(
                "injection switch times must be >= 0".into(),
            ));
        }
        let k = (t / cfg.h).round();
        if (t - k * cfg.h).abs() > GRID_ALIGN_TOL * cfg.h.max(*t) {
            return Err(Error::InvalidParameter(format!(
                "injection switch at t = {t} is not aligned to the step grid h = {}",
                cfg.h
            )));
        }
    }

    let threshold = cfg.blow_up_threshold.unwrap_or_else(|| {
        100.0 * (params.v_nom.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0)
    });

    let deriv = Deriv::new(model, params);
    let steps_f = cfg.t_end / cfg.h;
    let steps = if (steps_f - steps_f.round()).abs() <= 1e-9 * steps_f.max(1.0) {
        steps_f.round() as usize
    } else {
        steps_f.ceil() as usize
    };

    // Ring buffers of the two delayed consensus inputs, one slot per grid
    // point over the last τ seconds.
    let ring_len = delay_steps + 1;
    let mut ring_e = vec![0.0f64; if delay_steps > 0 { ring_len * n } else { 0 }];
    let mut ring_bar = vec![0.0f64; if delay_steps > 0 { ring_len * n } else { 0 }];
    let e0 = &x0.v_hat + &x0.v_bar - &x0.v;
    if delay_steps > 0 {
        // Pre-history: initial state held constant.
        for slot in 0..ring_len {
            for i in 0..n {
                ring_e[slot * n + i] = e0[i];
                ring_bar[slot * n + i] = x0.v_bar[i];
            }
        }
    }

    let mut v_bar = x0.v_bar.clone();
    let mut v_hat = x0.v_hat.clone();
    let mut v = x0.v.clone();

    // Stage buffers.
    let mut k_bar = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
    let mut k_hat = k_bar.clone();
    let mut k_v = k_bar.clone();
    let mut s_bar = DVector::zeros(n);
    let mut s_hat = DVector::zeros(n);
    let mut s_v = DVector::zeros(n);
    let mut e_stage = DVector::zeros(n);
    let mut e_del = DVector::zeros(n);
    let mut bar_del = DVector::zeros(n);

    let mut trace = SimTrace {
        times: Vec::new(),
        v: Vec::new(),
        v_hat: Vec::new(),
        v_bar: Vec::new(),
        u: Vec::new(),
        diverged: false,
        divergence_time: None,
    };
    let record = |trace: &mut SimTrace,
                  t: f64,
                  v_bar: &DVector<f64>,
                  v_hat: &DVector<f64>,
                  v: &DVector<f64>| {
        trace.times.push(t);
        trace.v.push(v.clone());
        trace.v_hat.push(v_hat.clone());
        trace.v_bar.push(v_bar.clone());
        trace.u.push(DVector::from_fn(n, |i, _| {
            -params.k_p[i] * (v[i] - v_hat[i] - v_bar[i])
        }));
    };
    record(&mut trace, 0.0, &v_bar, &v_hat, &v);

    let h = cfg.h;
    for k in 0..steps {
        let t = k as f64 * h;
        let i_inj = profile.at(t);

        if delay_steps > 0 {
            // Record the current grid point, then read the one d steps back.
            let slot = (k % ring_len) * n;
            for i in 0..n {
                ring_e[slot + i] = v_hat[i] + v_bar[i] - v[i];
                ring_bar[slot + i] = v_bar[i];
            }
            let read = if k >= delay_steps {
                ((k - delay_steps) % ring_len) * n
            } else {
                // Pre-history slots still hold the initial state; any slot
                // not yet overwritten works, pick the one after the write
                // head to stay deterministic.
                ((k + 1) % ring_len) * n
            };
            for i in 0..n {
                e_del[i] = ring_e[read + i];
                bar_del[i] = ring_bar[read + i];
            }
        }

        for stage in 0..4 {
            let (sb, sh, sv): (&DVector<f64>, &DVector<f64>, &DVector<f64>) = if stage == 0 {
                (&v_bar, &v_hat, &v)
            } else {
                let scale = if stage == 3 { h } else { 0.5 * h };
                s_bar.copy_from(&v_bar);
                s_bar.axpy(scale, &k_bar[stage - 1], 1.0);
                s_hat.copy_from(&v_hat);
                s_hat.axpy(scale, &k_hat[stage - 1], 1.0);
                s_v.copy_from(&v);
                s_v.axpy(scale, &k_v[stage - 1], 1.0);
                (&s_bar, &s_hat, &s_v)
            };
            if delay_steps > 0 {
                deriv.eval(
                    sb,
                    sh,
                    sv,
                    &e_del,
                    &bar_del,
                    i_inj,
                    &mut k_bar[stage],
                    &mut k_hat[stage],
                    &mut k_v[stage],
                );
            } else {
                for i in 0..n {
                    e_stage[i] = sh[i] + sb[i] - sv[i];
                }
                deriv.eval(
                    sb,
                    sh,
                    sv,
                    &e_stage,
                    sb,
                    i_inj,
                    &mut k_bar[stage],
                    &mut k_hat[stage],
                    &mut k_v[stage],
                );
            }
        }

        let w = h / 6.0;
        for i in 0..n {
            v_bar[i] += w * (k_bar[0][i] + 2.0 * k_bar[1][i] + 2.0 * k_bar[2][i] + k_bar[3][i]);
            v_hat[i] += w * (k_hat[0][i] + 2.0 * k_hat[1][i] + 2.0 * k_hat[2][i] + k_hat[3][i]);
            v[i] += w * (k_v[0][i] + 2.0 * k_v[1][i] + 2.0 * k_v[2][i] + k_v[3][i]);
        }

        let t_next = (k + 1) as f64 * h;
        let blown = v.iter().any(|x| !x.is_finite() || x.abs() > threshold)
            || v_hat.iter().any(|x| !x.is_finite())
            || v_bar.iter().any(|x| !x.is_finite());
        if blown {
            trace.diverged = true;
            trace.divergence_time = Some(t_next);
            record(&mut trace, t_next, &v_bar, &v_hat, &v);
            return Ok(trace);
        }
        if (k + 1) % cfg.record_every == 0 || k + 1 == steps {
            record(&mut trace, t_next, &v_bar, &v_hat, &v);
        }
    }
    Ok(trace)
}

/// Per-bus settling times: the last instant the signal leaves the ±band
/// envelope around its reference, with the envelope width measured relative
/// to the largest per-bus step magnitude of that signal. `None` marks a bus
/// still outside the envelope at the end of the trace.
pub fn settling_time(
    trace: &SimTrace,
    signal: Signal,
    band: f64,
    reference: &DVector<f64>,
) -> Result<Vec<Option<f64>>> {
    if trace.diverged {
        return Err(Error::InvalidParameter(
            "settling time is undefined for a diverged trace".into(),
        ));
    }
    let samples = match signal {
        Signal::Voltage => &trace.v,
        Signal::Control => &trace.u,
    };
    let n = reference.len();
    if samples.is_empty() || samples[0].len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: samples.first().map_or(0, |s| s.len()),
        });
    }
    let step = (0..n)
        .map(|i| (samples[0][i] - reference[i]).abs())
        .fold(0.0f64, f64::max);
    let width = band * step;

    let mut out = vec![Some(0.0); n];
    for i in 0..n {
        let mut last_exit: Option<f64> = None;
        for (t, s) in trace.times.iter().zip(samples.iter()) {
            if (s[i] - reference[i]).abs() > width {
                last_exit = Some(*t);
            }
        }
        out[i] = match last_exit {
            None => Some(0.0),
            Some(t) if t >= *trace.times.last().unwrap() => None, // never settled
            Some(t) => Some(t),
        };
    }
    Ok(out)
}

/// One row of a delay sweep.
#[derive(Debug, Clone)]
pub struct DelayPoint {
    pub tau: f64,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    /// Worst-bus settling of V at the 5% band, when measurable.
    pub v_settling: Option<f64>,
    /// Worst-bus settling of u at the 5% band, when measurable.
    pub u_settling: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<DelayPoint>,
    pub smallest_unstable_tau: Option<f64>,
    /// False when some stable τ exceeds the smallest diverging τ. Reported,
    /// not asserted: delay systems need not be monotone.
    pub monotone: bool,
}

/// Runs `simulate` once per τ and summarizes divergence and settling.
/// `reference` supplies the steady state used for settling measurements;
/// pass `None` when the delay-free loop has no stable equilibrium.
pub fn sweep_delay(
    model: &NetworkModel,
    params: &ControllerParams,
    profile: &InjectionProfile,
    x0: &FullState,
    cfg: &SimConfig,
    taus: &[f64],
    reference: Option<&SteadyState>,
) -> Result<SweepResult> {
    let points: Result<Vec<DelayPoint>> = taus
        .par_iter()
        .map(|&tau| {
            let mut c = cfg.clone();
            c.tau = tau;
            let trace = simulate(model, params, profile, x0, &c)?;
            let (v_settling, u_settling) = match (&trace.diverged, reference) {
                (false, Some(ss)) => {
                    let vs = settling_time(&trace, Signal::Voltage, 0.05, &ss.v)?;
                    let us = settling_time(&trace, Signal::Control, 0.05, &ss.u)?;
                    (worst(&vs), worst(&us))
                }
                _ => (None, None),
            };
            Ok(DelayPoint {
                tau,
                diverged: trace.diverged,
                divergence_time: trace.divergence_time,
                v_settling,
                u_settling,
            })
        })
        .collect();
    let points = points?;
    let smallest_unstable_tau = points
        .iter()
        .filter(|p| p.diverged)
        .map(|p| p.tau)
        .fold(None, |acc: Option<f64>, t| {
            Some(acc.map_or(t, |a| a.min(t)))
        });
    let monotone = match smallest_unstable_tau {
        Some(t0) => points.iter().all(|p| p.diverged || p.tau < t0),
        None => true,
    };
    Ok(SweepResult {
        points,
        smallest_unstable_tau,
        monotone,
    })
}

fn worst(per_bus: &[Option<f64>]) -> Option<f64> {
    per_bus
        .iter()
        .try_fold(0.0f64, |m, s| s.map(|v| m.max(v)))
}

/// Ratio between the RK4 real-axis stability bound and h·ρ(A); values below
/// one mean the fixed step cannot damp the fastest closed-loop mode.
pub fn step_stability_margin(sys: &ClosedLoopSystem, h: f64) -> f64 {
    let rho = sys
        .a()
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0f64, f64::max);
    if rho == 0.0 {
        return f64::INFINITY;
    }
    RK4_REAL_AXIS_BOUND / (h * rho)
}
