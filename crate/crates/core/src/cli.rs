//! Command-line entry point.
//!
//! Every configuration key is also a flag (`n_theta` ↔ `--n-theta`); flags
//! override values read from `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;

use crate::config::{parse_with_overrides, RunConfig, KEYS, WORKERS_ENV};
use crate::counter::count_connections;
use crate::error::{Error, Result};
use crate::estimators::{entropy_report, fit_growth, lemma_check, with_workers, Verdict};
use crate::flow::{energy, flow_with, FlowOptions};
use crate::variational::{alpha_determinant_along, DET_FLOOR};

/// Result of a successful run, mapped to the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Pass,
    Fail,
    Incomplete,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Done | Outcome::Pass => 0,
            Outcome::Fail => 1,
            Outcome::Incomplete => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Trajectory,
    DetGrowth,
    Count,
    LemmaCheck,
    EntropyRate,
}

impl Subcommand {
    const ALL: [(Subcommand, &'static str, &'static str); 5] = [
        (
            Subcommand::Trajectory,
            "trajectory",
            "Integrate one trajectory from (u0, v0) at `angle` up to T; writes trajectory.csv",
        ),
        (
            Subcommand::DetGrowth,
            "det-growth",
            "Jacobi determinant along one trajectory and its growth rate; writes det_growth.csv and det_growth.json",
        ),
        (
            Subcommand::Count,
            "count",
            "Count trajectories from x to y of length at most T; prints the count, writes roots.csv and count.json",
        ),
        (
            Subcommand::LemmaCheck,
            "lemma-check",
            "Compare the counting and determinant integrals at each horizon in T_list; writes lemma_check.json",
        ),
        (
            Subcommand::EntropyRate,
            "entropy-rate",
            "Growth rate of the determinant series up to T, compared with `reference`; writes entropy_rate.json",
        ),
    ];
}

fn flag_name(key: &str) -> String {
    key.to_ascii_lowercase().replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("magflow")
        .about("Magnetic geodesic flows: trajectories, connection counts and entropy growth")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("key = value configuration file"),
        );
    for (key, help) in KEYS {
        let mut arg = Arg::new(*key)
            .long(flag_name(key))
            .value_name("VALUE")
            .global(true)
            .action(ArgAction::Set)
            .help(*help);
        if *key == "workers" {
            arg = arg.env(WORKERS_ENV);
        }
        cmd = cmd.arg(arg);
    }
    for (_, name, about) in Subcommand::ALL {
        cmd = cmd.subcommand(Command::new(name).about(about));
    }
    cmd
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

fn dispatch(matches: &ArgMatches) -> Result<Outcome> {
    let (name, sub_matches) = matches
        .subcommand()
        .ok_or_else(|| Error::Config("no subcommand".into()))?;
    let sub = Subcommand::ALL
        .iter()
        .find(|(_, n, _)| *n == name)
        .map(|(s, _, _)| *s)
        .ok_or_else(|| Error::Config(format!("unknown subcommand {name}")))?;

    let text = match sub_matches.get_one::<String>("config") {
        Some(path) => std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut overrides = Vec::new();
    for (key, _) in KEYS {
        // the worker count only comes from the environment if the file leaves it unset
        let explicit = sub_matches.value_source(key) == Some(clap::parser::ValueSource::CommandLine);
        if let Some(v) = sub_matches.get_one::<String>(key) {
            if explicit || *key != "workers" {
                overrides.push((key.to_string(), v.clone()));
            }
        }
    }
    let cfg = parse_with_overrides(&text, &overrides)?;
    run(&cfg, sub)
}

/// Executes one subcommand, writing its outputs under `cfg.out`.
pub fn run(cfg: &RunConfig, sub: Subcommand) -> Result<Outcome> {
    let started = Instant::now();
    let outcome = with_workers(cfg.workers, || match sub {
        Subcommand::Trajectory => trajectory(cfg),
        Subcommand::DetGrowth => det_growth(cfg),
        Subcommand::Count => count(cfg),
        Subcommand::LemmaCheck => lemma(cfg),
        Subcommand::EntropyRate => entropy(cfg),
    })??;
    let name = Subcommand::ALL.iter().find(|s| s.0 == sub).map(|s| s.1).unwrap_or("");
    write_file(
        &cfg.out.join("run.log"),
        &format!("{name} finished in {:.3} s\n", started.elapsed().as_secs_f64()),
    )?;
    Ok(outcome)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(io)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("json: {e}")))?;
    s.push('\n');
    write_file(path, &s)
}

fn output(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn trajectory(cfg: &RunConfig) -> Result<Outcome> {
    let surface = cfg.surface()?;
    let t = cfg.require_t()?;
    let theta = surface.unit_state(cfg.start, cfg.angle);
    let opts = FlowOptions {
        renormalize: cfg.renormalize,
    };
    let tr = flow_with(&surface, &theta, t, cfg.h, opts)?;
    let mut csv = String::from("t,u,v,du,dv,energy\n");
    for (t, st) in tr.times.iter().zip(&tr.states) {
        let e = energy(&surface, st);
        let p = st.point;
        let w = st.velocity;
        writeln!(csv, "{t:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{e:.16e}", p.u, p.v, w.du, w.dv).unwrap();
    }
    write_file(&output(cfg, "trajectory.csv"), &csv)?;
    println!("{} samples, energy drift {:e}", tr.times.len(), tr.energy_drift);
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct GrowthSummary {
    system: String,
    rate: f64,
    ci_low: f64,
    ci_high: f64,
    window: (f64, f64),
    n_excluded: usize,
}

fn det_growth(cfg: &RunConfig) -> Result<Outcome> {
    let surface = cfg.surface()?;
    let t = cfg.require_t()?;
    let theta = surface.unit_state(cfg.start, cfg.angle);
    let trace = alpha_determinant_along(&surface, &theta, t, cfg.h)?;
    let mut csv = String::from("t,det\n");
    for (t, d) in trace.times.iter().zip(&trace.det_values) {
        writeln!(csv, "{t:.16e},{d:.16e}").unwrap();
    }
    write_file(&output(cfg, "det_growth.csv"), &csv)?;
    let abs: Vec<f64> = trace.det_values.iter().map(|d| d.abs()).collect();
    let fit = fit_growth(&trace.times, &abs, cfg.window_fraction, Some(DET_FLOOR))?;
    let summary = GrowthSummary {
        system: surface.describe(),
        rate: fit.rate,
        ci_low: fit.rate - fit.ci_half_width,
        ci_high: fit.rate + fit.ci_half_width,
        window: fit.window,
        n_excluded: fit.n_excluded,
    };
    write_json(&output(cfg, "det_growth.json"), &summary)?;
    println!("rate {:.6} ± {:.6}", fit.rate, fit.ci_half_width);
    Ok(Outcome::Done)
}

fn count(cfg: &RunConfig) -> Result<Outcome> {
    let surface = cfg.surface()?;
    let t = cfg.require_t()?;
    let x = cfg.x.ok_or_else(|| Error::Config("x: missing required field".into()))?;
    let y = cfg.y.ok_or_else(|| Error::Config("y: missing required field".into()))?;
    let result = count_connections(&surface, x, y, t, &cfg.count)?;
    let mut csv = String::from("angle,t,residual,jacobian_det\n");
    for r in &result.roots {
        writeln!(
            csv,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            r.launch_angle, r.arrival_time, r.residual, r.jacobian_det
        )
        .unwrap();
    }
    write_file(&output(cfg, "roots.csv"), &csv)?;
    write_json(&output(cfg, "count.json"), &result)?;
    println!("{}", result.count);
    if result.flags.continuum_degenerate {
        eprintln!("warning: continuum-degenerate target, the count is not reliable");
        return Ok(Outcome::Incomplete);
    }
    if result.flags.suspected_multiplicity {
        eprintln!("warning: a root is close to a conjugate point");
    }
    Ok(Outcome::Done)
}

fn lemma(cfg: &RunConfig) -> Result<Outcome> {
    let surface = cfg.surface()?;
    let horizons = cfg.horizons()?;
    let report = lemma_check(
        &surface,
        &horizons,
        cfg.n_theta,
        cfg.n_pairs,
        &cfg.count,
        cfg.h,
        cfg.seed,
    )?;
    write_json(&output(cfg, "lemma_check.json"), &report)?;
    for r in &report.rows {
        println!(
            "T = {:<6} lhs = {:.4} ± {:.4}  rhs = {:.4} ± {:.4}  {}",
            r.t,
            r.lhs,
            r.lhs_se,
            r.rhs,
            r.rhs_se,
            if r.pass { "ok" } else { "MISMATCH" }
        );
    }
    if let Some(cause) = &report.cause {
        eprintln!("incomplete: {cause}");
    }
    println!("{}", report.status);
    Ok(match report.status {
        Verdict::Pass => Outcome::Pass,
        Verdict::Fail => Outcome::Fail,
        Verdict::Incomplete => Outcome::Incomplete,
    })
}

fn entropy(cfg: &RunConfig) -> Result<Outcome> {
    let surface = cfg.surface()?;
    let t = cfg.require_t()?;
    let report = entropy_report(&surface, t, cfg.n_theta, cfg.h, cfg.seed, cfg.reference)?;
    let mut csv = String::from("T,value\n");
    for (t, v) in &report.series {
        writeln!(csv, "{t:.16e},{v:.16e}").unwrap();
    }
    write_file(&output(cfg, "entropy_series.csv"), &csv)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        system: &'a str,
        rate: f64,
        ci: f64,
        window: (f64, f64),
        reference: Option<f64>,
        pass: Option<bool>,
    }
    write_json(
        &output(cfg, "entropy_rate.json"),
        &Summary {
            system: &report.system,
            rate: report.rate,
            ci: report.ci,
            window: report.window,
            reference: report.reference,
            pass: report.pass,
        },
    )?;
    println!("rate {:.6} ± {:.6} over T in [{}, {}]", report.rate, report.ci, report.window.0, report.window.1);
    Ok(match report.pass {
        None => Outcome::Done,
        Some(true) => Outcome::Pass,
        Some(false) => Outcome::Fail,
    })
}
