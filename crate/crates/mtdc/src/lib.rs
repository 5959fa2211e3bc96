//! Simulation and analysis of multi-terminal HVDC grids under a distributed
//! averaging voltage controller: closed-loop assembly, eigenvalue stability
//! tests, a sufficient stability certificate, steady-state prediction,
//! optimal current dispatch, and fixed-step (delayed) time integration.

pub mod certificate;
pub mod closed_loop;
pub mod controller;
pub mod dispatch;
pub mod error;
pub mod graph;
mod linalg;
pub mod plant;
pub mod report;
pub mod scenario;
pub mod sim;

pub use certificate::{check_certificate, quadratic_form_coefficients, CertificateResult};
pub use closed_loop::{
    predict_steady_state, stability_test, stability_test_default, voltage_spread_bound,
    ClosedLoopSystem, StabilityReport, SteadyState,
};
pub use controller::{ControllerParams, ControllerState};
pub use dispatch::{qp_oracle, representative_voltage, solve_dispatch_closed_form, DispatchSolution};
pub use error::{Error, Result};
pub use graph::{laplacian_spectrum, Edge, GraphKind, NetworkModel};
pub use plant::InjectionProfile;
pub use scenario::{OutputPaths, Scenario, StartCondition};
pub use sim::{
    settling_time, simulate, step_stability_margin, sweep_delay, DelayPoint, FullState, Signal,
    SimConfig, SimTrace, SweepResult,
};
