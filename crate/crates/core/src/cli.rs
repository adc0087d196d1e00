//! `spncs verify | design | mati | simulate`.
//!
//! Every command reads one TOML config (see [`crate::config`]), writes a JSON
//! report into the output directory and prints a short summary. Exit codes:
//! 0 pass, 1 analytic failure, 2 usage or configuration error. The only
//! environment variable read is `SPNCS_THREADS`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bounds::{ConstantsLedger, LedgerEntry};
use crate::config::{DesignObjective, ExperimentConfig};
use crate::design::{maximize_mati_objective, synthesize, DesignResult, VerifyReport};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, set_thread_count};
use crate::hybridsim::{check_diss, simulate, DissReport};
use crate::model::SystemModel;

pub const THREADS_ENV: &str = "SPNCS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spncs", version, about = "Networked observer design, MATI bounds and hybrid simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Replace every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check both LMIs, the Hurwitz property and the protocol certificates.
    Verify(CommonArgs),
    /// Synthesize gains and certificates from the gain template.
    Design(CommonArgs),
    /// Compute the MATI bounds, ε* and the DISS gains.
    Mati(CommonArgs),
    /// Simulate every scenario and check the DISS bound.
    Simulate(CommonArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Verify(_) => "verify",
            Self::Design(_) => "design",
            Self::Mati(_) => "mati",
            Self::Simulate(_) => "simulate",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Self::Verify(a) | Self::Design(a) | Self::Mati(a) | Self::Simulate(a) => a,
        }
    }
}

/// Outcome of a command: the report body and whether the analysis passed.
pub struct Outcome {
    pub body: Value,
    pub pass: bool,
    pub summary: Vec<String>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasibleAtUpperBound { .. } | Error::DesignInfeasible(_) | Error::InfeasibleSchedule(_) | Error::NumericalBlowup(_) => 1,
        _ => 2,
    }
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.resolve()
}

fn apply_thread_env() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer")))?;
        if n == 0 {
            return Err(Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer")));
        }
        set_thread_count(n);
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidConfig(format!("{}: {e}", dir.display())))
}

fn verify_lines(r: &VerifyReport) -> Vec<String> {
    vec![
        format!("boundary-layer LMI  lambda_max = {:+.6e}  {}", r.bl_lambda_max, if r.bl_ok { "ok" } else { "VIOLATED" }),
        format!("reduced LMI         lambda_max = {:+.6e}  {}", r.reduced_lambda_max, if r.reduced_ok { "ok" } else { "VIOLATED" }),
        format!("lambda_min(Pf) = {:.6e}, lambda_min(Ps) = {:.6e}", r.pf_lambda_min, r.ps_lambda_min),
        format!("Af11 Hurwitz: {}", r.af11_hurwitz),
    ]
}

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<Outcome> {
    let design = cfg.require_design()?;
    let channels = cfg.channels();
    let report = design.verify(&cfg.plant, &channels)?;
    let certs = json!({
        "slow": to_value(&channels.slow.certificate()),
        "fast": to_value(&channels.fast.certificate()),
    });
    let mut summary = verify_lines(&report);
    summary.push("protocol certificates: ok".into());
    Ok(Outcome { pass: report.pass, body: json!({ "verify": to_value(&report), "certificates": certs }), summary })
}

fn ledger_lines(l: &ConstantsLedger) -> Vec<String> {
    let p = &l.preconditions;
    vec![
        format!("T(L_s, gamma_s, lambda_s) = {:.6}", l.t_slow),
        format!("T* = T(L_f, gamma_f, lambda_f*) = {:.6}", l.t_star),
        format!("epsilon* = {:.6e} (epsilon = {})", l.epsilon_star, p.epsilon),
        format!("tau_mati_f = epsilon* T* = {:.6e} s", l.tau_mati_f),
        format!("(gamma_v1, gamma_v2, gamma_dus) = ({:.6e}, {:.6e}, {:.6e})", l.gamma_v1, l.gamma_v2, l.gamma_dus),
        format!("k = {:.6e}, rate = {:.6e}", l.k, l.rate),
        format!(
            "slow timing certificate: {}, lambda_f < lambda_f*: {}, epsilon <= epsilon*: {}",
            p.slow_timing.holds(),
            p.fast_lambda_ok,
            p.epsilon_ok
        ),
    ]
}

fn ledger_value(l: &ConstantsLedger) -> Value {
    let entries: Vec<LedgerEntry> = l.entries();
    json!({ "ledger": to_value(l), "entries": to_value(&entries) })
}

pub fn cmd_mati(cfg: &ExperimentConfig) -> Result<Outcome> {
    let design = cfg.require_design()?;
    let ledger = ConstantsLedger::compute(&cfg.plant, design, &cfg.channels(), &cfg.timing, &cfg.pipeline())?;
    Ok(Outcome { pass: ledger.preconditions.hold(), summary: ledger_lines(&ledger), body: ledger_value(&ledger) })
}

pub fn cmd_design(cfg: &ExperimentConfig) -> Result<Outcome> {
    let template = cfg.template.as_ref().ok_or_else(|| Error::InvalidConfig("missing [template] section".into()))?;
    let channels = cfg.channels();
    let search = cfg.search();
    let (design, ledger): (DesignResult, Option<ConstantsLedger>) = match cfg.objective.unwrap_or_default() {
        DesignObjective::MaxMati => {
            let (d, l) = maximize_mati_objective(&cfg.plant, template, &channels, &cfg.timing, &cfg.pipeline(), &search)?;
            (d, Some(l))
        }
        DesignObjective::MinGamma => {
            let d = synthesize(&cfg.plant, template, &channels, &search)?;
            let l = ConstantsLedger::compute(&cfg.plant, &d, &channels, &cfg.timing, &cfg.pipeline()).ok();
            (d, l)
        }
    };
    let verify = design.verify(&cfg.plant, &channels)?;
    let mut summary = vec![
        format!("template values = {:?}", design.template_values),
        format!("gamma_f = {:.6}, a_rho_f = {:.6}", design.gamma_f, design.a_rho_f),
        format!("gamma_s = {:.6}, a_rho_s = {:.6}, eta1 = {:.6e}", design.gamma_s, design.a_rho_s, design.eta1),
    ];
    if let Some(l) = &ledger {
        summary.push(format!("epsilon* T* = {:.6e}", l.objective));
    }
    summary.extend(verify_lines(&verify));
    Ok(Outcome {
        pass: verify.pass,
        body: json!({
            "design": to_value(&design),
            "verify": to_value(&verify),
            "constants": ledger.as_ref().map(ledger_value),
        }),
        summary,
    })
}

#[derive(Serialize)]
struct ScenarioReport {
    name: String,
    csv: String,
    events_csv: String,
    samples: usize,
    jumps: usize,
    initial_distance: f64,
    final_distance: f64,
    empirical_ultimate_bound: f64,
    diss: DissReport,
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    let design = cfg.require_design()?;
    let sim = cfg.simulation.as_ref().ok_or_else(|| Error::InvalidConfig("missing [simulation] section".into()))?;
    let channels = cfg.channels();
    let model = SystemModel::new(cfg.plant.clone(), design.gains.clone())?;
    let ledger = ConstantsLedger::compute_with_model(&model, design, &channels, &cfg.timing, &cfg.pipeline())?;
    let exec = cfg.pipeline().exec;
    let runs = map_indexed(exec, sim.scenarios.len(), |i| {
        let sc = &sim.scenarios[i];
        let signals = sc.signals();
        let traj = simulate(&model, &channels, &sim.policy, &signals, &sim.initial, sim.horizon, &sim.options)?;
        let diss = check_diss(&traj, &model, &ledger, &signals, &sim.policy);
        Ok::<_, Error>((traj, diss))
    });
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    let mut pass = true;
    for (sc, run) in sim.scenarios.iter().zip(runs) {
        let (traj, diss) = run?;
        let csv = format!("{}.csv", sc.name);
        let events_csv = format!("{}_events.csv", sc.name);
        traj.write_csv(&out_dir.join(&csv))?;
        traj.write_events_csv(&out_dir.join(&events_csv))?;
        let ub = traj.empirical_ultimate_bound();
        summary.push(format!(
            "{:<16} |xi|_E: {:.4e} -> {:.4e}, ultimate bound {:.4e}, DISS margin {:+.4e}{}",
            sc.name,
            traj.samples[0].dist,
            traj.last().dist,
            ub,
            diss.min_margin,
            if diss.preconditions_hold { "" } else { " (preconditions violated)" }
        ));
        pass &= diss.holds && diss.preconditions_hold;
        reports.push(ScenarioReport {
            name: sc.name.clone(),
            csv,
            events_csv,
            samples: traj.samples.len(),
            jumps: traj.events.len(),
            initial_distance: traj.samples[0].dist,
            final_distance: traj.last().dist,
            empirical_ultimate_bound: ub,
            diss,
        });
    }
    Ok(Outcome { pass, body: json!({ "scenarios": to_value(&reports), "constants": ledger_value(&ledger) }), summary })
}

/// Run one parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let name = cli.command.name();
    let args = cli.command.args().clone();
    let result = apply_thread_env().and_then(|_| load(&args)).and_then(|cfg| {
        let out_dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        ensure_dir(&out_dir)?;
        let outcome = match &cli.command {
            Command::Verify(_) => cmd_verify(&cfg),
            Command::Design(_) => cmd_design(&cfg),
            Command::Mati(_) => cmd_mati(&cfg),
            Command::Simulate(_) => cmd_simulate(&cfg, &out_dir),
        }?;
        let report = json!({
            "tool": "spncs",
            "version": env!("CARGO_PKG_VERSION"),
            "command": name,
            "config_sha256": cfg.hash(),
            "config": to_value(&cfg),
            "pass": outcome.pass,
            "result": outcome.body,
        });
        let path = out_dir.join(format!("{name}.json"));
        write_json(&path, &report)?;
        Ok((outcome, path))
    });
    match result {
        Ok((outcome, path)) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("{}: {} (report: {})", name, if outcome.pass { "PASS" } else { "FAIL" }, path.display());
            if outcome.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("spncs {name}: {e}");
            exit_code(&e)
        }
    }
}

/// Parse `std::env::args`; usage errors exit with 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
