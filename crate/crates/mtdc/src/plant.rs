//! Open-loop MTDC bus voltage dynamics: C_i V̇_i is the net line current plus
//! the nominal and controlled injections.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::{GraphKind, NetworkModel};

/// Nominal injected currents, piecewise constant in time. Intervals are
/// left-closed: at a switch time the new vector already applies.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionProfile {
    initial: DVector<f64>,
    switches: Vec<(f64, DVector<f64>)>,
}

impl InjectionProfile {
    pub fn constant(initial: DVector<f64>) -> Self {
        Self {
            initial,
            switches: Vec::new(),
        }
    }

    pub fn with_switches(initial: DVector<f64>, switches: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        let n = initial.len();
        let mut last = f64::NEG_INFINITY;
        for (t, v) in &switches {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            if !(*t > last) {
                return Err(Error::InvalidParameter(
                    "injection switch times must be strictly increasing".into(),
                ));
            }
            last = *t;
        }
        Ok(Self { initial, switches })
    }

    pub fn bus_count(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn switches(&self) -> &[(f64, DVector<f64>)] {
        &self.switches
    }

    /// The injection vector in force at time `t`.
    pub fn at(&self, t: f64) -> &DVector<f64> {
        let mut current = &self.initial;
        for (ts, v) in &self.switches {
            if t >= *ts {
                current = v;
            } else {
                break;
            }
        }
        current
    }
}

/// dV/dt for bus voltages `v` under nominal injection `i_inj` and control `u`:
/// element-wise (−ℒ_R v + i_inj + u) / C_i.
pub fn plant_derivative(
    model: &NetworkModel,
    v: &DVector<f64>,
    i_inj: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.bus_count();
    for len in [v.len(), i_inj.len(), u.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let mut dv = -(model.laplacian(GraphKind::Physical) * v) + i_inj + u;
    for (i, c) in model.capacitances().iter().enumerate() {
        dv[i] /= c;
    }
    Ok(dv)
}
