//! Command-line front end: scenario-driven simulation, analysis, dispatch
//! and delay sweeps for MTDC grids. Exit codes: 0 success (a diverged run is
//! a finding, not a failure), 2 configuration/scenario error, 3 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mtdc::error::Error;
use mtdc::report;
use mtdc::scenario::{self, Scenario};
use mtdc::sim::{simulate, sweep_delay};

#[derive(Parser)]
#[command(
    name = "mtdc",
    about = "Simulation and analysis of multi-terminal HVDC grids under a distributed averaging voltage controller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Machine,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file to load.
    #[arg(long)]
    scenario: PathBuf,
    /// Directory for output files; overrides paths from the scenario's
    /// [output] section. Created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format on stdout.
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the closed loop and write a trace plus a summary.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Override the scenario's communication delay (seconds).
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Eigenvalue stability test, certificate, predicted steady state.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-form optimal dispatch for the scenario's final injections.
    Dispatch {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate across a list or range of delays and tabulate divergence.
    SweepDelay {
        #[command(flatten)]
        common: Common,
        /// Delays in seconds: comma-separated list "0,0.1,0.4" or range
        /// "start:step:end" (inclusive).
        #[arg(long)]
        tau: String,
        /// Seed for auxiliary randomized utilities; accepted for interface
        /// stability, the sweep itself is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code_for(e: &Error) -> ExitCode {
    match e {
        Error::Numerical(_) => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    scenario::load(path)
}

fn parse_tau_spec(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = |msg: String| Error::InvalidParameter(msg);
    if let Some((a, rest)) = spec.split_once(':') {
        let (s, e) = rest
            .split_once(':')
            .ok_or_else(|| bad(format!("range must be start:step:end, got '{spec}'")))?;
        let start: f64 = a.parse().map_err(|_| bad(format!("bad range start '{a}'")))?;
        let step: f64 = s.parse().map_err(|_| bad(format!("bad range step '{s}'")))?;
        let end: f64 = e.parse().map_err(|_| bad(format!("bad range end '{e}'")))?;
        if !(step > 0.0) || end < start {
            return Err(bad("range needs step > 0 and end >= start".into()));
        }
        let count = ((end - start) / step + 0.5).floor() as usize;
        let mut taus: Vec<f64> = (0..=count).map(|k| start + k as f64 * step).collect();
        taus.retain(|t| *t <= end + 1e-12 * end.abs().max(1.0));
        Ok(taus)
    } else {
        spec.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad tau value '{t}'")))
            })
            .collect()
    }
}

/// Resolves an output path: --out redirects everything into that directory,
/// keeping only the file name from the scenario.
fn resolve_out(
    out_dir: &Option<PathBuf>,
    scenario_path: Option<&str>,
    default_name: &str,
) -> Option<PathBuf> {
    match (out_dir, scenario_path) {
        (Some(dir), Some(p)) => {
            let name = Path::new(p).file_name().map(PathBuf::from);
            Some(dir.join(name.unwrap_or_else(|| default_name.into())))
        }
        (Some(dir), None) => Some(dir.join(default_name)),
        (None, Some(p)) => Some(PathBuf::from(p)),
        (None, None) => None,
    }
}

fn emit<T: serde::Serialize>(format: Format, machine: &T, text: String) -> Result<String, Error> {
    match format {
        Format::Text => Ok(text),
        Format::Machine => serde_json::to_string_pretty(machine)
            .map_err(|e| Error::Internal(format!("serialization failed: {e}"))),
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { common, tau } => {
            let mut sc = load_scenario(&common.scenario)?;
            if let Some(t) = tau {
                sc.params.tau = t;
                sc.sim.tau = t;
                sc.sim.validate()?;
            }
            let x0 = sc.initial_state()?;
            let trace = simulate(&sc.model, &sc.params, &sc.profile, &x0, &sc.sim)?;
            let summary = report::summarize_simulation(
                &sc.model,
                &sc.params,
                &sc.profile,
                &trace,
                sc.sim.tau,
                sc.sim.t_end,
            )?;

            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
            }
            let trace_path = resolve_out(&common.out, sc.output.trace.as_deref(), "trace.csv");
            if let Some(p) = trace_path {
                let file = fs::File::create(&p)?;
                report::write_trace_csv(&trace, std::io::BufWriter::new(file))?;
                eprintln!("trace written to {}", p.display());
            }
            let summary_path =
                resolve_out(&common.out, sc.output.summary.as_deref(), "summary.json");
            if let Some(p) = summary_path {
                fs::write(&p, serde_json::to_string_pretty(&summary).unwrap())?;
                eprintln!("summary written to {}", p.display());
            }
            print!("{}", emit(common.format, &summary, summary.to_text())?);
            Ok(())
        }
        Command::Analyze { common } => {
            let sc = load_scenario(&common.scenario)?;
            let r = report::analyze(&sc)?;
            print!("{}", emit(common.format, &r, r.to_text())?);
            Ok(())
        }
        Command::Dispatch { common } => {
            let sc = load_scenario(&common.scenario)?;
            let r = report::dispatch(&sc)?;
            print!("{}", emit(common.format, &r, r.to_text())?);
            Ok(())
        }
        Command::SweepDelay { common, tau, seed } => {
            let _ = seed; // reserved for randomized utilities
            let sc = load_scenario(&common.scenario)?;
            let taus = parse_tau_spec(&tau)?;
            let x0 = sc.initial_state()?;
            let i_final = sc.profile.at(sc.sim.t_end);
            let reference = mtdc::predict_steady_state(
                &sc.model,
                &sc.params,
                i_final,
                x0.v_hat.sum(),
            )
            .ok();
            let result = sweep_delay(
                &sc.model,
                &sc.params,
                &sc.profile,
                &x0,
                &sc.sim,
                &taus,
                reference.as_ref(),
            )?;
            let r = report::SweepReport::from(&result);
            if let Some(dir) = &common.out {
                fs::create_dir_all(dir)?;
                let p = dir.join("sweep.json");
                fs::write(&p, serde_json::to_string_pretty(&r).unwrap())?;
                eprintln!("sweep written to {}", p.display());
            }
            print!("{}", emit(common.format, &r, r.to_text())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
