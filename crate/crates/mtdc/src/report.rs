//! Analysis and simulation summaries: serde-serializable structs for the
//! machine-readable output format plus plain-text rendering for terminals.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::certificate::{check_certificate, CertificateResult};
use crate::closed_loop::{
    assemble, predict_steady_state, stability_test_default, voltage_spread_bound, StabilityReport,
    SteadyState,
};
use crate::controller::ControllerParams;
use crate::dispatch::{representative_voltage, solve_dispatch_closed_form};
use crate::error::Result;
use crate::graph::NetworkModel;
use crate::plant::InjectionProfile;
use crate::scenario::Scenario;
use crate::sim::{settling_time, step_stability_margin, Signal, SimTrace, SweepResult};

/// Settling band used in all reported settling times.
pub const SETTLING_BAND: f64 = 0.05;

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Stationary control u∞ = k₁·K^P·1 with k₁ = −ΣI / ΣK^P; exists whether or
/// not the loop is stable.
fn u_infinity(params: &ControllerParams, i_inj: &DVector<f64>) -> DVector<f64> {
    let k1 = -i_inj.sum() / params.k_p.sum();
    params.k_p.map(|k| k1 * k)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join("  ")
}

fn fmt_settling(v: &[Option<f64>]) -> String {
    v.iter()
        .map(|x| match x {
            Some(t) => format!("{t:.4}"),
            None => "unsettled".into(),
        })
        .collect::<Vec<_>>()
        .join("  ")
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySection {
    /// (re, im) pairs sorted by real part, descending.
    pub eigenvalues: Vec<[f64; 2]>,
    pub zero_multiplicity: usize,
    pub stable: bool,
    pub spectral_abscissa_excluding_null: f64,
    pub tol_zero: f64,
}

impl From<&StabilityReport> for StabilitySection {
    fn from(r: &StabilityReport) -> Self {
        Self {
            eigenvalues: r.eigenvalues.iter().map(|e| [e.re, e.im]).collect(),
            zero_multiplicity: r.zero_multiplicity,
            stable: r.stable,
            spectral_abscissa_excluding_null: r.spectral_abscissa_excluding_null,
            tol_zero: r.tol_zero,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyStateSection {
    pub v: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub v_bar: Vec<f64>,
    pub u: Vec<f64>,
    pub k1: f64,
}

impl From<&SteadyState> for SteadyStateSection {
    fn from(ss: &SteadyState) -> Self {
        Self {
            v: vec_of(&ss.v),
            v_hat: vec_of(&ss.v_hat),
            v_bar: vec_of(&ss.v_bar),
            u: vec_of(&ss.u),
            k1: ss.k1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub stability: StabilitySection,
    pub certificate: CertificateResult,
    /// Present only when the delay-free loop is stable.
    pub steady_state: Option<SteadyStateSection>,
    pub spread_bound: f64,
    /// RK4 stability margin of the scenario's step size; < 1 means the
    /// integrator cannot be trusted at that h.
    pub step_stability_margin: f64,
}

pub fn analyze(scenario: &Scenario) -> Result<AnalyzeReport> {
    let sys = assemble(
        &scenario.model,
        &scenario.params,
        scenario.profile.at(scenario.sim.t_end),
    )?;
    let report = stability_test_default(&sys)?;
    let steady_state = if report.stable {
        Some(SteadyStateSection::from(&predict_steady_state(
            &scenario.model,
            &scenario.params,
            scenario.profile.at(scenario.sim.t_end),
            0.0,
        )?))
    } else {
        None
    };
    Ok(AnalyzeReport {
        stability: StabilitySection::from(&report),
        certificate: check_certificate(&scenario.model, &scenario.params),
        steady_state,
        spread_bound: {
            let i = scenario.profile.at(scenario.sim.t_end);
            voltage_spread_bound(&scenario.model, i, &u_infinity(&scenario.params, i))?
        },
        step_stability_margin: step_stability_margin(&sys, scenario.sim.h),
    })
}

impl AnalyzeReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("== stability ==\n");
        for e in &self.stability.eigenvalues {
            let _ = writeln!(s, "  {:+.6e} {:+.6e}i", e[0], e[1]);
        }
        let _ = writeln!(
            s,
            "zero multiplicity: {} (tolerance {:.3e})",
            self.stability.zero_multiplicity, self.stability.tol_zero
        );
        let _ = writeln!(
            s,
            "spectral abscissa (excluding structural zero): {:+.6e}",
            self.stability.spectral_abscissa_excluding_null
        );
        let _ = writeln!(s, "stable: {}", self.stability.stable);
        let _ = writeln!(
            s,
            "rk4 step stability margin: {:.3}",
            self.step_stability_margin
        );
        s.push_str("\n== certificate ==\n");
        let c = &self.certificate;
        let _ = writeln!(s, "applicable: {}", c.applicable);
        let _ = writeln!(s, "condition 1: {} > 0: {}", c.lhs_1, c.condition_1);
        let _ = writeln!(s, "condition 2: {} > 0: {}", c.lhs_2, c.condition_2);
        let _ = writeln!(
            s,
            "condition 3: {} <= {}: {}",
            c.lhs_3, c.rhs_3, c.condition_3
        );
        let _ = writeln!(
            s,
            "condition 3 (proof variant): {} <= {}: {}",
            c.lhs_3_proof_variant, c.rhs_3, c.condition_3_proof_variant
        );
        let _ = writeln!(s, "certified: {}", c.certified);
        let _ = writeln!(s, "certified (proof variant): {}", c.certified_proof_variant);
        s.push_str("\n== steady state ==\n");
        match &self.steady_state {
            Some(ss) => {
                let _ = writeln!(s, "V:     {}", fmt_vec(&ss.v));
                let _ = writeln!(s, "Vhat:  {}", fmt_vec(&ss.v_hat));
                let _ = writeln!(s, "Vbar:  {}", fmt_vec(&ss.v_bar));
                let _ = writeln!(s, "u:     {}", fmt_vec(&ss.u));
                let _ = writeln!(s, "k1:    {:.6}", ss.k1);
            }
            None => s.push_str("not defined (delay-free loop unstable)\n"),
        }
        let _ = writeln!(s, "\nvoltage spread bound: {:.6} V", self.spread_bound);
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub tau: f64,
    pub t_end: f64,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub delay_free_stable: bool,
    pub predicted: Option<SteadyStateSection>,
    pub final_v: Vec<f64>,
    pub final_u: Vec<f64>,
    pub final_v_hat: Vec<f64>,
    pub final_v_bar: Vec<f64>,
    /// Per-bus settling of V at the 5% band against the predicted steady
    /// state; empty when no settling reference exists.
    pub v_settling: Vec<Option<f64>>,
    pub u_settling: Vec<Option<f64>>,
    pub spread_bound: f64,
    /// max_{i,j} |V_i − V_j| at the end of the trace.
    pub observed_spread: f64,
}

pub fn summarize_simulation(
    model: &NetworkModel,
    params: &ControllerParams,
    profile: &InjectionProfile,
    trace: &SimTrace,
    tau: f64,
    t_end: f64,
) -> Result<SimulationSummary> {
    let i_final = profile.at(t_end);
    let sys = assemble(model, params, i_final)?;
    let stab = stability_test_default(&sys)?;
    let predicted = if stab.stable {
        // The simulated trajectory conserves 1ᵀV̂; pin the prediction to the
        // same member of the equilibrium family.
        let vhat_sum = trace.v_hat.first().map_or(0.0, |v| v.sum());
        Some(predict_steady_state(model, params, i_final, vhat_sum)?)
    } else {
        None
    };
    let fin = trace.final_state();
    let final_u = {
        let mut u = DVector::zeros(model.bus_count());
        for i in 0..model.bus_count() {
            u[i] = -params.k_p[i] * (fin.v[i] - fin.v_hat[i] - fin.v_bar[i]);
        }
        u
    };
    let (v_settling, u_settling) = match (&predicted, trace.diverged) {
        (Some(ss), false) => (
            settling_time(trace, Signal::Voltage, SETTLING_BAND, &ss.v)?,
            settling_time(trace, Signal::Control, SETTLING_BAND, &ss.u)?,
        ),
        _ => (Vec::new(), Vec::new()),
    };
    let observed_spread = {
        let mut worst = 0.0f64;
        for i in 0..fin.v.len() {
            for j in i + 1..fin.v.len() {
                worst = worst.max((fin.v[i] - fin.v[j]).abs());
            }
        }
        worst
    };
    Ok(SimulationSummary {
        tau,
        t_end,
        diverged: trace.diverged,
        divergence_time: trace.divergence_time,
        delay_free_stable: stab.stable,
        predicted: predicted.as_ref().map(SteadyStateSection::from),
        final_v: vec_of(&fin.v),
        final_u: vec_of(&final_u),
        final_v_hat: vec_of(&fin.v_hat),
        final_v_bar: vec_of(&fin.v_bar),
        v_settling,
        u_settling,
        spread_bound: voltage_spread_bound(model, i_final, &u_infinity(params, i_final))?,
        observed_spread,
    })
}

impl SimulationSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tau: {} s   t_end: {} s", self.tau, self.t_end);
        let _ = writeln!(s, "diverged: {}", self.diverged);
        if let Some(t) = self.divergence_time {
            let _ = writeln!(s, "divergence time: {t:.4} s");
        }
        let _ = writeln!(s, "delay-free loop stable: {}", self.delay_free_stable);
        let _ = writeln!(s, "final V:    {}", fmt_vec(&self.final_v));
        let _ = writeln!(s, "final u:    {}", fmt_vec(&self.final_u));
        let _ = writeln!(s, "final Vhat: {}", fmt_vec(&self.final_v_hat));
        let _ = writeln!(s, "final Vbar: {}", fmt_vec(&self.final_v_bar));
        if let Some(ss) = &self.predicted {
            let _ = writeln!(s, "predicted V: {}", fmt_vec(&ss.v));
            let _ = writeln!(s, "predicted u: {}", fmt_vec(&ss.u));
        }
        if !self.v_settling.is_empty() {
            let _ = writeln!(s, "V settling (5% band): {}", fmt_settling(&self.v_settling));
            let _ = writeln!(s, "u settling (5% band): {}", fmt_settling(&self.u_settling));
        }
        let _ = writeln!(
            s,
            "voltage spread: {:.6} V (bound {:.6} V)",
            self.observed_spread, self.spread_bound
        );
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchReport {
    pub u_star: Vec<f64>,
    pub lambda: f64,
    pub cost: f64,
    pub representative_v: Vec<f64>,
}

pub fn dispatch(scenario: &Scenario) -> Result<DispatchReport> {
    let i_final = scenario.profile.at(scenario.sim.t_end);
    let sol = solve_dispatch_closed_form(i_final, &scenario.params.f)?;
    let v = representative_voltage(
        &scenario.model,
        &scenario.params.k_v,
        &scenario.params.v_nom,
        i_final,
        &sol.u_star,
    )?;
    Ok(DispatchReport {
        u_star: vec_of(&sol.u_star),
        lambda: sol.lambda,
        cost: sol.cost,
        representative_v: vec_of(&v),
    })
}

impl DispatchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "u*:     {}", fmt_vec(&self.u_star));
        let _ = writeln!(s, "lambda: {:.6}", self.lambda);
        let _ = writeln!(s, "cost:   {:.6}", self.cost);
        let _ = writeln!(s, "V:      {}", fmt_vec(&self.representative_v));
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub diverged: bool,
    pub divergence_time: Option<f64>,
    pub v_settling: Option<f64>,
    pub u_settling: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub largest_stable_tau: Option<f64>,
    pub smallest_unstable_tau: Option<f64>,
    pub monotone: bool,
}

impl From<&SweepResult> for SweepReport {
    fn from(r: &SweepResult) -> Self {
        let rows: Vec<SweepRow> = r
            .points
            .iter()
            .map(|p| SweepRow {
                tau: p.tau,
                diverged: p.diverged,
                divergence_time: p.divergence_time,
                v_settling: p.v_settling,
                u_settling: p.u_settling,
            })
            .collect();
        let largest_stable_tau = rows
            .iter()
            .filter(|p| !p.diverged)
            .map(|p| p.tau)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        Self {
            rows,
            largest_stable_tau,
            smallest_unstable_tau: r.smallest_unstable_tau,
            monotone: r.monotone,
        }
    }
}

impl SweepReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("tau_s  diverged  divergence_t  v_settling  u_settling\n");
        for p in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<9} {:<13} {:<11} {}",
                p.tau,
                p.diverged,
                p.divergence_time
                    .map_or("-".into(), |t| format!("{t:.3}")),
                p.v_settling.map_or("-".into(), |t| format!("{t:.3}")),
                p.u_settling.map_or("-".into(), |t| format!("{t:.3}")),
            );
        }
        match (self.largest_stable_tau, self.smallest_unstable_tau) {
            (Some(a), Some(b)) => {
                let _ = writeln!(s, "empirical threshold interval: ({a}, {b}] s");
            }
            (_, None) => s.push_str("no diverging tau in the sweep\n"),
            (None, Some(b)) => {
                let _ = writeln!(s, "all swept delays diverge (first: {b} s)");
            }
        }
        let _ = writeln!(s, "monotone in tau: {}", self.monotone);
        s
    }
}

/// Writes the trace as a delimited text table, one row per recorded sample,
/// full shortest-round-trip precision.
pub fn write_trace_csv<W: std::io::Write>(trace: &SimTrace, mut w: W) -> std::io::Result<()> {
    let n = trace.v.first().map_or(0, |v| v.len());
    let mut header = String::from("t");
    for tag in ["V", "u", "Vhat", "Vbar"] {
        for i in 1..=n {
            let _ = write!(header, ",{tag}_{i}");
        }
    }
    writeln!(w, "{header}")?;
    for (k, t) in trace.times.iter().enumerate() {
        let mut row = format!("{t}");
        for block in [&trace.v, &trace.u, &trace.v_hat, &trace.v_bar] {
            for x in block[k].iter() {
                let _ = write!(row, ",{x}");
            }
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}
