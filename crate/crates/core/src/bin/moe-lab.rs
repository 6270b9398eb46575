use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use moe_lab::diagnostics::{distinguishability_audit, grad_audit, heat_audit, loss_audit, AuditReport};
use moe_lab::estimation::fit_em;
use moe_lab::losses::{theorem_errors, ParamPoint, TheoremId};
use moe_lab::model::{sample_dataset, ContaminatedModel, Dataset};
use moe_lab::ratelab::{
    emit_csv, make_scenario, run_scenario, supported_cases, write_outputs, Case, ExperimentConfig, Profile, RateReport, RunOptions,
    ScenarioSpec, HELLINGER_METRIC,
};
use moe_lab::Error;

const SEED_ENV: &str = "MOE_LAB_SEED";

#[derive(Parser)]
#[command(name = "moe-lab", version, about = "Contaminated mixture-of-experts estimation lab")]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a scenario truth.
    Generate(GenerateArgs),
    /// Fit a dataset by EM and score it against a truth file.
    Fit(FitArgs),
    /// Run one scenario over a sample-size grid.
    RunScenario(ScenarioArgs),
    /// Run every scenario preset.
    RatesAll(RatesAllArgs),
    /// Monte-Carlo Hellinger distance between fitted and true models.
    Hellinger(HellingerArgs),
    /// Run numeric self-checks.
    Check(CheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    scenario: TheoremId,
    #[arg(long)]
    case: Case,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset CSV path; the truth is written next to it as truth.json.
    #[arg(long)]
    out: PathBuf,
    /// Truth sidecar path.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long)]
    scenario: Option<TheoremId>,
    #[arg(long)]
    case: Option<Case>,
    /// Comma-separated ascending sample sizes.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Grid and replicate defaults.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    outdir: PathBuf,
    /// Rerun exactly from the provenance block of an earlier report.json.
    #[arg(long, conflicts_with_all = ["scenario", "case", "grid", "reps", "profile", "seed", "config"])]
    replay: Option<PathBuf>,
    /// Also estimate the Hellinger distance with this many Monte-Carlo draws.
    #[arg(long)]
    mc: Option<usize>,
}

#[derive(Args)]
struct RatesAllArgs {
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct HellingerArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Monte-Carlo draws per estimate.
    #[arg(long, default_value_t = 10_000)]
    mc: usize,
    /// JSON output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    /// Random configurations per audit.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Ci,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Ci => Profile::Ci,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Gradients,
    Heat,
    Distinguishability,
    Losses,
    All,
}

/// CLI failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) | Error::Shape { .. } | Error::Param(_) => 2,
            Error::Io(_) | Error::Parse(_) => 3,
            Error::Init(_) | Error::Fit(_) | Error::Diagnostic(_) => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

/// `MOE_LAB_SEED` beats the flag, which beats the config.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(flag.or(config).unwrap_or(0)),
    }
}

fn read_config(path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => Ok(ExperimentConfig::from_json(&fs::read_to_string(p)?)?),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn provenance(command: &str, extra: Value) -> Value {
    json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "inputs": extra,
    })
}

/// Truth sidecar: the model document plus where it came from.
#[derive(Serialize, Deserialize)]
struct TruthDoc {
    #[serde(flatten)]
    model: ContaminatedModel,
    #[serde(default)]
    scenario: Option<TheoremId>,
    #[serde(default)]
    case: Option<Case>,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default)]
    provenance: Option<Value>,
}

fn build_spec(id: Option<TheoremId>, case: Option<Case>, cfg: &ExperimentConfig) -> Result<ScenarioSpec, Failure> {
    let id = id.or(cfg.scenario).ok_or_else(|| usage("--scenario is required"))?;
    let case = case.or(cfg.case).ok_or_else(|| usage("--case is required"))?;
    let spec = make_scenario(id, case)?;
    Ok(match cfg.nu0 {
        Some(nu0) => spec.with_nu0(nu0)?,
        None => spec,
    })
}

struct Plan {
    spec: ScenarioSpec,
    grid: Vec<usize>,
    reps: usize,
    seed: u64,
    opts: RunOptions,
}

fn plan(g: &GridArgs, jobs: Option<usize>) -> Result<Plan, Failure> {
    let cfg = read_config(g.config.as_deref())?;
    let spec = build_spec(g.scenario, g.case, &cfg)?;
    let profile: Profile = g.profile.map(Into::into).unwrap_or(Profile::Full);
    let grid = g.grid.clone().or(cfg.grid.clone()).unwrap_or_else(|| profile.grid());
    let reps = g.reps.or(cfg.reps).unwrap_or_else(|| profile.reps());
    let seed = resolve_seed(g.seed, cfg.seed)?;
    Ok(Plan { spec, grid, reps, seed, opts: RunOptions { fit: cfg.fit, hellinger: cfg.hellinger, jobs } })
}

fn cmd_generate(a: GenerateArgs) -> Result<Value, Failure> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let seed = resolve_seed(Some(a.seed), None)?;
    let spec = make_scenario(a.scenario, a.case)?;
    let model = spec.truth_model(a.n)?;
    let data = sample_dataset(&model, a.n, &mut ChaCha8Rng::seed_from_u64(seed))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    data.save_csv(&a.out)?;
    let truth_path = a.truth.unwrap_or_else(|| a.out.with_file_name("truth.json"));
    let prov = provenance("generate", json!({"scenario": a.scenario, "case": a.case, "n": a.n, "seed": seed}));
    let doc = TruthDoc { model, scenario: Some(a.scenario), case: Some(a.case), n: Some(a.n), provenance: Some(prov.clone()) };
    write_json(&truth_path, &doc)?;
    Ok(json!({"data": a.out, "truth": truth_path, "provenance": prov}))
}

fn cmd_fit(a: FitArgs) -> Result<Value, Failure> {
    let cfg = read_config(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let data = Dataset::load_csv(&a.data)?;
    let truth: TruthDoc = serde_json::from_str(&fs::read_to_string(&a.truth)?).map_err(Error::from)?;
    let m = &truth.model;
    let fit = fit_em(m.base, &m.g0, m.sigma, &data, Some((m.lambda, &m.prompt)), &cfg.fit, &mut ChaCha8Rng::seed_from_u64(seed))?;
    if !fit.final_loglik.is_finite() {
        return Err(Error::Fit(format!("final log-likelihood is {}", fit.final_loglik)).into());
    }
    let id = truth.scenario.unwrap_or(TheoremId::T2);
    let errors = theorem_errors(id, &ParamPoint::new(m.lambda, m.prompt.clone()), &ParamPoint::new(fit.lambda_hat, fit.g_hat.clone()), &m.g0)?;
    let out = json!({
        "result": fit,
        "errors": errors,
        "error_scaling": id,
        "provenance": provenance("fit", json!({
            "data": a.data, "truth": a.truth, "seed": seed, "fit_options": cfg.fit, "n": data.len(),
        })),
    });
    write_json(&a.out, &out)?;
    Ok(json!({"out": a.out, "lambda_hat": fit.lambda_hat, "converged": fit.converged, "iters": fit.iters}))
}

fn slopes_summary(r: &RateReport) -> Value {
    let slopes: serde_json::Map<String, Value> = r.slopes.iter().map(|(k, s)| (k.clone(), json!(s.slope))).collect();
    json!({"scenario": r.scenario, "case": r.case, "slopes": slopes, "unreliable_cells": r.per_n.iter().filter(|c| c.unreliable).count()})
}

fn cmd_run_scenario(a: ScenarioArgs, jobs: Option<usize>) -> Result<Value, Failure> {
    let p = if let Some(path) = &a.replay {
        let old = RateReport::from_json(&fs::read_to_string(path)?)?;
        let pv = old.provenance;
        Plan { spec: pv.scenario, grid: pv.grid, reps: pv.reps, seed: pv.seed, opts: RunOptions { fit: pv.fit_options, hellinger: pv.hellinger, jobs } }
    } else {
        let mut p = plan(&a.grid, jobs)?;
        if let Some(mc) = a.mc {
            p.opts.hellinger.enabled = true;
            p.opts.hellinger.mc_n = mc;
        }
        p
    };
    let report = run_scenario(&p.spec, &p.grid, p.reps, p.seed, &p.opts)?;
    write_outputs(&report, &a.outdir)?;
    Ok(slopes_summary(&report))
}

fn cmd_rates_all(a: RatesAllArgs, jobs: Option<usize>) -> Result<Value, Failure> {
    let cfg = read_config(a.config.as_deref())?;
    let profile: Profile = a.profile.map(Into::into).unwrap_or(Profile::Full);
    let grid = a.grid.or(cfg.grid.clone()).unwrap_or_else(|| profile.grid());
    let reps = a.reps.or(cfg.reps).unwrap_or_else(|| profile.reps());
    let seed = resolve_seed(a.seed, cfg.seed)?;
    let opts = RunOptions { fit: cfg.fit.clone(), hellinger: cfg.hellinger, jobs };
    let mut reports = Vec::new();
    for id in TheoremId::ALL {
        for &case in supported_cases(id) {
            let spec = build_spec(Some(id), Some(case), &cfg)?;
            let r = run_scenario(&spec, &grid, reps, seed, &opts)?;
            write_outputs(&r, a.outdir.join(format!("{id}_{case}")))?;
            reports.push(r);
        }
    }
    emit_csv(&reports, a.outdir.join("long.csv"), a.outdir.join("summary.csv"))?;
    let summary = json!({
        "scenarios": reports.iter().map(slopes_summary).collect::<Vec<_>>(),
        "provenance": provenance("rates-all", json!({"grid": grid, "reps": reps, "seed": seed, "fit_options": cfg.fit, "hellinger": cfg.hellinger})),
    });
    write_json(&a.outdir.join("rates_all.json"), &summary)?;
    Ok(summary)
}

fn cmd_hellinger(a: HellingerArgs, jobs: Option<usize>) -> Result<Value, Failure> {
    let mut p = plan(&a.grid, jobs)?;
    p.opts.hellinger.enabled = true;
    p.opts.hellinger.mc_n = a.mc;
    let report = run_scenario(&p.spec, &p.grid, p.reps, p.seed, &p.opts)?;
    let per_n: Vec<Value> = report
        .per_n
        .iter()
        .map(|c| {
            let s = c.metrics.get(HELLINGER_METRIC);
            json!({"n": c.n, "mean": s.map(|s| s.mean), "stderr": s.and_then(|s| s.stderr), "reps": c.reps, "unreliable": c.unreliable})
        })
        .collect();
    let out = json!({
        "scenario": report.scenario,
        "case": report.case,
        "per_n": per_n,
        "slope": report.slopes.get(HELLINGER_METRIC),
        "provenance": report.provenance,
    });
    if let Some(path) = &a.out {
        write_json(path, &out)?;
    }
    Ok(out)
}

fn cmd_check(a: CheckArgs) -> Result<(Value, bool), Failure> {
    let seed = resolve_seed(Some(a.seed), None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = AuditReport::default();
    let want = |s: Suite| a.suite == s || a.suite == Suite::All;
    if want(Suite::Gradients) {
        rep.merge(grad_audit(a.samples, &mut rng));
    }
    if want(Suite::Heat) {
        rep.merge(heat_audit(a.samples, &mut rng));
    }
    if want(Suite::Losses) {
        rep.merge(loss_audit(a.samples, &mut rng));
    }
    if want(Suite::Distinguishability) {
        rep.merge(distinguishability_audit(2000, &mut rng)?);
    }
    let passed = rep.passed();
    let out = json!({
        "passed": passed,
        "failures": rep.failures(),
        "checks": rep.checks,
        "provenance": provenance("check", json!({"samples": a.samples, "seed": seed})),
    });
    Ok((out, passed))
}

fn run(cli: Cli) -> Result<(Value, bool), Failure> {
    if cli.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let ok = |v: Value| (v, true);
    match cli.command {
        Command::Generate(a) => cmd_generate(a).map(ok),
        Command::Fit(a) => cmd_fit(a).map(ok),
        Command::RunScenario(a) => cmd_run_scenario(a, cli.jobs).map(ok),
        Command::RatesAll(a) => cmd_rates_all(a, cli.jobs).map(ok),
        Command::Hellinger(a) => cmd_hellinger(a, cli.jobs).map(ok),
        Command::Check(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((v, passed)) => {
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(f) => {
            eprintln!("moe-lab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
