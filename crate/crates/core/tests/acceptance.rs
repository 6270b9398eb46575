//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `MOE_LAB_ACCEPTANCE_PROFILE=ci` switches to the short grid. The default is
//! the full grid. Slope criteria are reported as measured; only the property
//! suites (criterion 8) decide the exit status.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use moe_lab::diagnostics::{grad_audit, heat_audit, loss_audit};
use moe_lab::losses::TheoremId;
use moe_lab::ratelab::{make_scenario, run_scenario, Case, Profile, RateReport, RunOptions, HELLINGER_METRIC};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20240601;
const METRICS: [&str; 4] = ["err_lambda", "err_a", "err_b", "err_nu"];
const PARAMS: [&str; 3] = ["err_a", "err_b", "err_nu"];

const FIXED_BAND: (f64, f64) = (-0.65, -0.35);
const FIXED_BAND_CI: (f64, f64) = (-0.70, -0.30);
const VANISH_LAMBDA_BAND: (f64, f64) = (-0.65, -0.35);
const VANISH_PARAM_BAND: (f64, f64) = (-0.40, -0.10);
const T4_I_TARGET: [f64; 4] = [-0.22, -0.35, -0.15, -0.38];
const T4_I_TOL: f64 = 0.15;
const T4_II_TARGET: [f64; 3] = [-0.24, -0.12, -0.25];
const T4_II_TOL: f64 = 0.12;
const LAMBDA_FLOOR: f64 = -0.15;
const T9_VANISH_LAMBDA: f64 = -0.52;
const T9_VANISH_LAMBDA_TOL: f64 = 0.15;
const T9_VANISH_PARAM: f64 = -0.25;
const T9_PARAM_TOL: f64 = 0.12;
const T9_DRIFT_TARGET: [f64; 3] = [-0.22, -0.26, -0.22];
const HELLINGER_BAND: (f64, f64) = (-0.70, -0.30);
const EM_DROP_PER_N: f64 = 1e-9;
const AUDIT_SAMPLES: usize = 300;

struct Line {
    pass: bool,
    detail: String,
}

impl Line {
    fn new() -> Self {
        Line { pass: true, detail: String::new() }
    }

    fn check(&mut self, label: &str, slope: Option<f64>, ok: impl Fn(f64) -> bool) {
        let s = slope.unwrap_or(f64::NAN);
        let good = s.is_finite() && ok(s);
        self.pass &= good;
        if !self.detail.is_empty() {
            self.detail.push_str(", ");
        }
        self.detail.push_str(&format!("{label}={s:.3}{}", if good { "" } else { "(x)" }));
    }

    fn within(&mut self, label: &str, slope: Option<f64>, band: (f64, f64)) {
        self.check(label, slope, |s| s >= band.0 && s <= band.1);
    }

    fn near(&mut self, label: &str, slope: Option<f64>, target: f64, tol: f64) {
        self.check(label, slope, |s| (s - target).abs() <= tol);
    }

    fn print(&self, n: usize, title: &str) {
        println!("criterion {n} {}: {title}: {}", if self.pass { "PASS" } else { "FAIL" }, self.detail);
    }
}

fn short(m: &str) -> &str {
    m.trim_start_matches("err_")
}

fn main() -> ExitCode {
    let profile: Profile = std::env::var("MOE_LAB_ACCEPTANCE_PROFILE")
        .ok()
        .map(|s| s.parse().expect("MOE_LAB_ACCEPTANCE_PROFILE must be full or ci"))
        .unwrap_or(Profile::Full);
    let grid = profile.grid();
    let reps = profile.reps();
    println!("acceptance profile={profile:?} grid={grid:?} reps={reps} seed={SEED}");

    let mut reports: BTreeMap<(TheoremId, Case), RateReport> = BTreeMap::new();
    let runs = [
        (TheoremId::T2, Case::FixedLambda),
        (TheoremId::T2, Case::VanishingLambda),
        (TheoremId::T6, Case::FixedLambda),
        (TheoremId::T6, Case::VanishingLambda),
        (TheoremId::T7, Case::FixedLambda),
        (TheoremId::T7, Case::VanishingLambda),
        (TheoremId::T8, Case::FixedLambda),
        (TheoremId::T8, Case::VanishingLambda),
        (TheoremId::T4, Case::DriftI),
        (TheoremId::T4, Case::DriftIi),
        (TheoremId::T9, Case::VanishingLambda),
        (TheoremId::T9, Case::DriftIi),
    ];
    for (id, case) in runs {
        let spec = make_scenario(id, case).expect("preset");
        let mut opts = RunOptions::default();
        opts.hellinger.enabled = id == TheoremId::T2 && case == Case::FixedLambda;
        let t = Instant::now();
        let report = run_scenario(&spec, &grid, reps, SEED, &opts).expect("scenario run");
        let slopes: Vec<String> = report.slopes.iter().map(|(m, s)| format!("{}={:.3}", short(m), s.slope)).collect();
        println!("  ran {} in {:.0}s: {}", spec.label(), t.elapsed().as_secs_f64(), slopes.join(" "));
        reports.insert((id, case), report);
    }
    let slope = |id, case, m: &str| reports[&(id, case)].slope(m);

    let fixed_band = if profile == Profile::Ci { FIXED_BAND_CI } else { FIXED_BAND };
    let mut c1 = Line::new();
    for m in METRICS {
        c1.within(short(m), slope(TheoremId::T2, Case::FixedLambda, m), fixed_band);
    }
    c1.print(1, &format!("T2 fixed slopes in [{}, {}]", fixed_band.0, fixed_band.1));

    let vanishing = |line: &mut Line, id: TheoremId, prefix: &str| {
        line.within(&format!("{prefix}lambda"), slope(id, Case::VanishingLambda, "err_lambda"), VANISH_LAMBDA_BAND);
        for m in PARAMS {
            line.within(&format!("{prefix}{}", short(m)), slope(id, Case::VanishingLambda, m), VANISH_PARAM_BAND);
        }
    };
    let mut c2 = Line::new();
    vanishing(&mut c2, TheoremId::T2, "");
    c2.print(2, "T2 vanishing slopes (lambda in [-0.65, -0.35], params in [-0.40, -0.10])");

    let mut c3 = Line::new();
    for id in [TheoremId::T6, TheoremId::T7, TheoremId::T8] {
        for m in METRICS {
            c3.within(&format!("{id}.fixed.{}", short(m)), slope(id, Case::FixedLambda, m), fixed_band);
        }
        vanishing(&mut c3, id, &format!("{id}.vanishing."));
    }
    c3.print(3, "T6/T7/T8 fixed and vanishing slopes in the criterion 1-2 bands");

    let mut c4 = Line::new();
    for (m, t) in METRICS.iter().zip(T4_I_TARGET) {
        c4.near(short(m), slope(TheoremId::T4, Case::DriftI, m), t, T4_I_TOL);
    }
    c4.print(4, &format!("T4 drift (i) slopes within {T4_I_TOL} of {T4_I_TARGET:?}"));

    let mut c5 = Line::new();
    c5.check("lambda", slope(TheoremId::T4, Case::DriftIi, "err_lambda"), |s| s > LAMBDA_FLOOR);
    for (m, t) in PARAMS.iter().zip(T4_II_TARGET) {
        c5.near(short(m), slope(TheoremId::T4, Case::DriftIi, m), t, T4_II_TOL);
    }
    c5.print(5, &format!("T4 drift (ii) lambda > {LAMBDA_FLOOR}, params within {T4_II_TOL} of {T4_II_TARGET:?}"));

    let mut c6 = Line::new();
    c6.near("vanishing.lambda", slope(TheoremId::T9, Case::VanishingLambda, "err_lambda"), T9_VANISH_LAMBDA, T9_VANISH_LAMBDA_TOL);
    for m in PARAMS {
        c6.near(&format!("vanishing.{}", short(m)), slope(TheoremId::T9, Case::VanishingLambda, m), T9_VANISH_PARAM, T9_PARAM_TOL);
    }
    c6.check("drift.lambda", slope(TheoremId::T9, Case::DriftIi, "err_lambda"), |s| s > LAMBDA_FLOOR);
    for (m, t) in PARAMS.iter().zip(T9_DRIFT_TARGET) {
        c6.near(&format!("drift.{}", short(m)), slope(TheoremId::T9, Case::DriftIi, m), t, T9_PARAM_TOL);
    }
    c6.print(6, "T9 vanishing and drift slopes");

    let mut c7 = Line::new();
    c7.within("hellinger", slope(TheoremId::T2, Case::FixedLambda, HELLINGER_METRIC), HELLINGER_BAND);
    c7.print(7, "T2 fixed Hellinger slope in [-0.70, -0.30]");

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut c8 = Line::new();
    let audits = [
        ("gradients", grad_audit(AUDIT_SAMPLES, &mut rng)),
        ("heat", heat_audit(AUDIT_SAMPLES, &mut rng)),
        ("losses", loss_audit(AUDIT_SAMPLES, &mut rng)),
    ];
    for (name, report) in &audits {
        let ok = report.passed() && !report.is_empty();
        c8.pass &= ok;
        c8.detail.push_str(&format!("{name}={} ", if ok { "ok" } else { "failed" }));
        for f in report.failures() {
            c8.detail.push_str(&format!("[{f}] "));
        }
    }
    let drop = reports.values().map(RateReport::max_loglik_drop_per_n).fold(0.0, f64::max);
    let drop_ok = drop <= EM_DROP_PER_N;
    c8.pass &= drop_ok;
    c8.detail.push_str(&format!("em_drop_per_n={drop:.2e}{} ", if drop_ok { "" } else { "(x)" }));

    let spec = make_scenario(TheoremId::T2, Case::FixedLambda).expect("preset");
    let small = [300, 600, 1200];
    let run_jobs = |jobs| {
        let opts = RunOptions { jobs: Some(jobs), ..RunOptions::default() };
        run_scenario(&spec, &small, 4, SEED, &opts).and_then(|r| r.to_json()).expect("determinism run")
    };
    let same = run_jobs(1) == run_jobs(4);
    c8.pass &= same;
    c8.detail.push_str(&format!("jobs_determinism={}", if same { "ok" } else { "differs" }));
    c8.print(8, "property suites");

    if c8.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
