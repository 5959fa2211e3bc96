//! Sectioned key-value scenario files: network, controller, injection
//! schedule, simulation settings, output paths. Text based and diffable;
//! `#` starts a comment, buses are 1-indexed. See docs/scenario-format.md
//! for the grammar.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::graph::NetworkModel;
use crate::plant::InjectionProfile;
use crate::sim::{FullState, SimConfig};

/// How the initial closed-loop state is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum StartCondition {
    /// Predicted steady state under the initial injection vector.
    SteadyState,
    /// V at nominal, auxiliary states at zero.
    Nominal,
    /// Explicit (V̄₀, V̂₀, V₀).
    Explicit(FullState),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputPaths {
    pub trace: Option<String>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: NetworkModel,
    pub params: ControllerParams,
    pub profile: InjectionProfile,
    pub sim: SimConfig,
    pub start: StartCondition,
    pub output: OutputPaths,
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Scenario {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(line: usize, s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| err(line, format!("cannot parse {what} from '{s}'")))
}

fn parse_usize(line: usize, s: &str, what: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| err(line, format!("cannot parse {what} from '{s}'")))
}

/// Parses a whitespace-separated vector; a single value broadcasts to n.
fn parse_vector(line: usize, s: &str, n: usize, what: &str) -> Result<DVector<f64>> {
    let vals: Result<Vec<f64>> = s
        .split_whitespace()
        .map(|t| parse_f64(line, t, what))
        .collect();
    let vals = vals?;
    match vals.len() {
        1 => Ok(DVector::from_element(n, vals[0])),
        len if len == n => Ok(DVector::from_vec(vals)),
        len => Err(err(
            line,
            format!("{what} needs 1 or {n} values, got {len}"),
        )),
    }
}

pub fn parse_str(text: &str) -> Result<Scenario> {
    let mut sections: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            match name.as_str() {
                "network" | "comm" | "controller" | "injection" | "sim" | "output" => {}
                other => return Err(err(line_no, format!("unknown section [{other}]"))),
            }
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected 'key = value'"))?;
        let section = current
            .clone()
            .ok_or_else(|| err(line_no, "entry before any [section] header"))?;
        sections.get_mut(&section).unwrap().push(Entry {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }

    let network = sections
        .get("network")
        .ok_or_else(|| err(0, "missing [network] section"))?;

    // -- network ----------------------------------------------------------
    let mut n: Option<usize> = None;
    let mut buses: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new(); // id -> (line, C, Vnom)
    let mut lines_spec: Vec<(usize, usize, usize, f64)> = Vec::new(); // (line, i, j, R)
    for e in network {
        match e.key.as_str() {
            "buses" => n = Some(parse_usize(e.line, &e.value, "bus count")?),
            "bus" => {
                let t: Vec<&str> = e.value.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(err(e.line, "bus needs: <id> <capacitance_F> <v_nom_V>"));
                }
                let id = parse_usize(e.line, t[0], "bus id")?;
                let c = parse_f64(e.line, t[1], "capacitance")?;
                let vn = parse_f64(e.line, t[2], "nominal voltage")?;
                if buses.insert(id, (e.line, c, vn)).is_some() {
                    return Err(err(e.line, format!("bus {id} defined twice")));
                }
            }
            "line" => {
                let t: Vec<&str> = e.value.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(err(e.line, "line needs: <i> <j> <resistance_ohm>"));
                }
                lines_spec.push((
                    e.line,
                    parse_usize(e.line, t[0], "bus id")?,
                    parse_usize(e.line, t[1], "bus id")?,
                    parse_f64(e.line, t[2], "resistance")?,
                ));
            }
            other => return Err(err(e.line, format!("unknown network key '{other}'"))),
        }
    }
    let n = n.ok_or_else(|| err(0, "missing 'buses =' in [network]"))?;
    if buses.len() != n {
        return Err(Error::InvalidScenario(format!(
            "expected {n} 'bus =' entries, found {}",
            buses.len()
        )));
    }
    for (&id, &(line, _, _)) in &buses {
        if id < 1 || id > n {
            return Err(err(line, format!("bus id {id} outside 1..={n}")));
        }
    }
    let capacitances: Vec<f64> = buses.values().map(|&(_, c, _)| c).collect();
    let v_nom = DVector::from_iterator(n, buses.values().map(|&(_, _, vn)| vn));
    let line_edges: Vec<(usize, usize, f64)> =
        lines_spec.iter().map(|&(_, i, j, r)| (i, j, r)).collect();

    // -- comm (optional) ---------------------------------------------------
    let comm_edges: Option<Vec<(usize, usize, f64)>> = match sections.get("comm") {
        None => None,
        Some(entries) => {
            let mut edges = Vec::new();
            for e in entries {
                if e.key != "edge" {
                    return Err(err(e.line, format!("unknown comm key '{}'", e.key)));
                }
                let t: Vec<&str> = e.value.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(err(e.line, "edge needs: <i> <j> <weight>"));
                }
                edges.push((
                    parse_usize(e.line, t[0], "bus id")?,
                    parse_usize(e.line, t[1], "bus id")?,
                    parse_f64(e.line, t[2], "weight")?,
                ));
            }
            Some(edges)
        }
    };

    let model = NetworkModel::new(n, &line_edges, capacitances, comm_edges.as_deref())?;

    // -- controller ---------------------------------------------------------
    let ctrl = sections
        .get("controller")
        .ok_or_else(|| err(0, "missing [controller] section"))?;
    let mut k_p: Option<DVector<f64>> = None;
    let mut f: Option<DVector<f64>> = None;
    let mut k_v: Option<DVector<f64>> = None;
    let mut gamma: Option<f64> = None;
    let mut delta: Option<f64> = None;
    let mut tau = 0.0;
    for e in ctrl {
        match e.key.as_str() {
            "kp" => k_p = Some(parse_vector(e.line, &e.value, n, "kp")?),
            "f" => f = Some(parse_vector(e.line, &e.value, n, "f")?),
            "kv" => k_v = Some(parse_vector(e.line, &e.value, n, "kv")?),
            "gamma" => gamma = Some(parse_f64(e.line, &e.value, "gamma")?),
            "delta" => delta = Some(parse_f64(e.line, &e.value, "delta")?),
            "tau" => tau = parse_f64(e.line, &e.value, "tau")?,
            other => return Err(err(e.line, format!("unknown controller key '{other}'"))),
        }
    }
    let (k_p, f) = match (k_p, f) {
        (Some(kp), Some(f)) => (kp, f),
        (Some(kp), None) => {
            let f = kp.map(|x| 1.0 / x);
            (kp, f)
        }
        (None, Some(f)) => (f.map(|x| 1.0 / x), f),
        (None, None) => {
            return Err(Error::InvalidScenario(
                "controller needs 'kp =' or 'f ='".into(),
            ))
        }
    };
    let params = ControllerParams::new(
        k_p,
        k_v.ok_or_else(|| Error::InvalidScenario("controller needs 'kv ='".into()))?,
        gamma.ok_or_else(|| Error::InvalidScenario("controller needs 'gamma ='".into()))?,
        delta.ok_or_else(|| Error::InvalidScenario("controller needs 'delta ='".into()))?,
        v_nom,
        tau,
        f,
    )?;

    // -- injection -----------------------------------------------------------
    let inj = sections
        .get("injection")
        .ok_or_else(|| err(0, "missing [injection] section"))?;
    let mut initial: Option<DVector<f64>> = None;
    let mut switches: Vec<(f64, DVector<f64>)> = Vec::new();
    for e in inj {
        match e.key.as_str() {
            "initial" => initial = Some(parse_vector(e.line, &e.value, n, "initial injection")?),
            "switch" => {
                let mut parts = e.value.split_whitespace();
                let t = parse_f64(
                    e.line,
                    parts.next().ok_or_else(|| err(e.line, "switch needs a time"))?,
                    "switch time",
                )?;
                let rest: Vec<&str> = parts.collect();
                let v = parse_vector(e.line, &rest.join(" "), n, "switch injection")?;
                switches.push((t, v));
            }
            other => return Err(err(e.line, format!("unknown injection key '{other}'"))),
        }
    }
    let profile = InjectionProfile::with_switches(
        initial.ok_or_else(|| Error::InvalidScenario("injection needs 'initial ='".into()))?,
        switches,
    )?;

    // -- sim -----------------------------------------------------------------
    let sim_entries = sections
        .get("sim")
        .ok_or_else(|| err(0, "missing [sim] section"))?;
    let mut t_end: Option<f64> = None;
    let mut h: Option<f64> = None;
    let mut record_every = 1usize;
    let mut blow_up: Option<f64> = None;
    let mut start_kw: Option<(usize, String)> = None;
    let mut v0: Option<DVector<f64>> = None;
    let mut vhat0: Option<DVector<f64>> = None;
    let mut vbar0: Option<DVector<f64>> = None;
    for e in sim_entries {
        match e.key.as_str() {
            "t_end" => t_end = Some(parse_f64(e.line, &e.value, "t_end")?),
            "step" => h = Some(parse_f64(e.line, &e.value, "step")?),
            "record_every" => record_every = parse_usize(e.line, &e.value, "record_every")?,
            "blow_up" => blow_up = Some(parse_f64(e.line, &e.value, "blow_up")?),
            "start" => start_kw = Some((e.line, e.value.clone())),
            "v0" => v0 = Some(parse_vector(e.line, &e.value, n, "v0")?),
            "vhat0" => vhat0 = Some(parse_vector(e.line, &e.value, n, "vhat0")?),
            "vbar0" => vbar0 = Some(parse_vector(e.line, &e.value, n, "vbar0")?),
            other => return Err(err(e.line, format!("unknown sim key '{other}'"))),
        }
    }
    let sim = SimConfig {
        t_end: t_end.ok_or_else(|| Error::InvalidScenario("sim needs 't_end ='".into()))?,
        h: h.ok_or_else(|| Error::InvalidScenario("sim needs 'step ='".into()))?,
        record_every,
        tau,
        blow_up_threshold: blow_up,
    };
    sim.validate()?;
    let start = match start_kw {
        None => StartCondition::SteadyState,
        Some((_, ref s)) if s == "steady_state" => StartCondition::SteadyState,
        Some((_, ref s)) if s == "nominal" => StartCondition::Nominal,
        Some((line, ref s)) if s == "explicit" => {
            let state = FullState {
                v_bar: vbar0.ok_or_else(|| err(line, "start = explicit needs 'vbar0 ='"))?,
                v_hat: vhat0.ok_or_else(|| err(line, "start = explicit needs 'vhat0 ='"))?,
                v: v0.ok_or_else(|| err(line, "start = explicit needs 'v0 ='"))?,
            };
            StartCondition::Explicit(state)
        }
        Some((line, s)) => {
            return Err(err(
                line,
                format!("start must be steady_state, nominal or explicit, got '{s}'"),
            ))
        }
    };

    // -- output --------------------------------------------------------------
    let mut output = OutputPaths::default();
    if let Some(entries) = sections.get("output") {
        for e in entries {
            match e.key.as_str() {
                "trace" => output.trace = Some(e.value.clone()),
                "summary" => output.summary = Some(e.value.clone()),
                other => return Err(err(e.line, format!("unknown output key '{other}'"))),
            }
        }
    }

    Ok(Scenario {
        model,
        params,
        profile,
        sim,
        start,
        output,
    })
}

pub fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_str(&text)
}

fn fmt_vec(v: &DVector<f64>) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical serialization; comments are not preserved, values round-trip
/// exactly through the shortest f64 representation.
pub fn to_string(s: &Scenario) -> String {
    let mut out = String::new();
    let n = s.model.bus_count();
    out.push_str("[network]\n");
    let _ = writeln!(out, "buses = {n}");
    for i in 0..n {
        let _ = writeln!(
            out,
            "bus = {} {} {}",
            i + 1,
            s.model.capacitances()[i],
            s.params.v_nom[i]
        );
    }
    for e in s.model.lines() {
        let _ = writeln!(out, "line = {} {} {}", e.i + 1, e.j + 1, e.value);
    }
    out.push_str("\n[comm]\n");
    for e in s.model.comm_edges() {
        let _ = writeln!(out, "edge = {} {} {}", e.i + 1, e.j + 1, e.value);
    }
    out.push_str("\n[controller]\n");
    let _ = writeln!(out, "kp = {}", fmt_vec(&s.params.k_p));
    let _ = writeln!(out, "f = {}", fmt_vec(&s.params.f));
    let _ = writeln!(out, "kv = {}", fmt_vec(&s.params.k_v));
    let _ = writeln!(out, "gamma = {}", s.params.gamma);
    let _ = writeln!(out, "delta = {}", s.params.delta);
    let _ = writeln!(out, "tau = {}", s.params.tau);
    out.push_str("\n[injection]\n");
    let _ = writeln!(out, "initial = {}", fmt_vec(s.profile.initial()));
    for (t, v) in s.profile.switches() {
        let _ = writeln!(out, "switch = {t} {}", fmt_vec(v));
    }
    out.push_str("\n[sim]\n");
    let _ = writeln!(out, "t_end = {}", s.sim.t_end);
    let _ = writeln!(out, "step = {}", s.sim.h);
    let _ = writeln!(out, "record_every = {}", s.sim.record_every);
    if let Some(b) = s.sim.blow_up_threshold {
        let _ = writeln!(out, "blow_up = {b}");
    }
    match &s.start {
        StartCondition::SteadyState => out.push_str("start = steady_state\n"),
        StartCondition::Nominal => out.push_str("start = nominal\n"),
        StartCondition::Explicit(state) => {
            out.push_str("start = explicit\n");
            let _ = writeln!(out, "v0 = {}", fmt_vec(&state.v));
            let _ = writeln!(out, "vhat0 = {}", fmt_vec(&state.v_hat));
            let _ = writeln!(out, "vbar0 = {}", fmt_vec(&state.v_bar));
        }
    }
    if s.output.trace.is_some() || s.output.summary.is_some() {
        out.push_str("\n[output]\n");
        if let Some(p) = &s.output.trace {
            let _ = writeln!(out, "trace = {p}");
        }
        if let Some(p) = &s.output.summary {
            let _ = writeln!(out, "summary = {p}");
        }
    }
    out
}

impl Scenario {
    /// Resolves the configured start condition to a concrete state.
    pub fn initial_state(&self) -> Result<FullState> {
        match &self.start {
            StartCondition::Explicit(state) => Ok(state.clone()),
            StartCondition::Nominal => Ok(FullState::zeros_with_voltage(
                self.params.v_nom.clone(),
            )),
            StartCondition::SteadyState => {
                let ss = crate::closed_loop::predict_steady_state(
                    &self.model,
                    &self.params,
                    self.profile.initial(),
                    0.0,
                )
                .map_err(|e| {
                    Error::InvalidScenario(format!(
                        "start = steady_state needs a stable delay-free loop: {e}"
                    ))
                })?;
                Ok(FullState::from_steady_state(&ss))
            }
        }
    }
}
