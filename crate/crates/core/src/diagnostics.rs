//! Numeric checks: finite-difference gradient audits, the heat-equation
//! identity of the Gaussian prompt, and a Gram-matrix rank probe for
//! distinguishability.
//!
//! The rank probe is a numeric heuristic, not a proof. It ignores the sign
//! constraints on the coefficients, so it can report a system as degenerate
//! when the formal condition would still hold.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{base_logpdf, prompt_logpdf, prompt_score, BaseFamily, BaseKind, ComponentParams};
use crate::error::{Error, Result};
use crate::experts::ExpertFn;
use crate::losses::{d1, d2, d2_bar, d4, d4_bar, ParamPoint};

/// Labeled function values on a shared point cloud and their Gram matrix.
#[derive(Clone, Debug)]
pub struct RankProbe {
    pub labels: Vec<String>,
    /// Column per function, L²-normalized over the points.
    pub columns: Vec<Vec<f64>>,
    pub gram: DMatrix<f64>,
}

impl RankProbe {
    pub fn new(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() || columns.is_empty() {
            return Err(Error::Diagnostic("need one label per function and at least one function".into()));
        }
        let m = columns[0].len();
        if m == 0 || columns.iter().any(|c| c.len() != m) {
            return Err(Error::Diagnostic("function columns must share a non-empty point cloud".into()));
        }
        let mut normed = Vec::with_capacity(columns.len());
        for (label, c) in labels.iter().zip(&columns) {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(Error::Diagnostic(format!("function {label} vanishes or is not finite on the sample")));
            }
            normed.push(c.iter().map(|v| v / norm).collect::<Vec<f64>>());
        }
        let k = normed.len();
        let mut gram = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let v: f64 = normed[i].iter().zip(&normed[j]).map(|(a, b)| a * b).sum();
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        Ok(Self { labels, columns: normed, gram })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.gram.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

fn base_sd(base: &BaseFamily, g0: &ComponentParams) -> f64 {
    match base.kind {
        BaseKind::Gaussian => g0.nu.sqrt(),
        BaseKind::StudentT if g0.nu > 2.0 => (g0.nu / (g0.nu - 2.0)).sqrt(),
        BaseKind::StudentT => 3.0,
    }
}

/// Builds the function system `{f₀, f(G₁), f(G₂), ∂f/∂μ(G₁), ∂²f/∂μ²(G₁)}` at `points`.
pub fn distinguishability_probe(
    base: &BaseFamily,
    g0: &ComponentParams,
    sigma: ExpertFn,
    pair: (&ComponentParams, &ComponentParams),
    points: &[(Vec<f64>, f64)],
) -> Result<RankProbe> {
    let (g1, g2) = pair;
    base.validate_params(g0)?;
    g1.validate()?;
    g2.validate()?;
    if points.len() < 2 || points.iter().all(|p| p == &points[0]) {
        return Err(Error::Diagnostic("degenerate sample: all points identical".into()));
    }
    let mut cols = vec![Vec::with_capacity(points.len()); 5];
    for (x, y) in points {
        let mu1 = sigma.eval(g1.index(x));
        let f1 = prompt_logpdf(x, *y, g1, sigma)?.exp();
        let r = (y - mu1) / g1.nu;
        cols[0].push(base_logpdf(x, *y, base, g0)?.exp());
        cols[1].push(f1);
        cols[2].push(prompt_logpdf(x, *y, g2, sigma)?.exp());
        cols[3].push(f1 * r);
        cols[4].push(f1 * (r * r - 1.0 / g1.nu));
    }
    let labels = ["f0", "f_g1", "f_g2", "df_dmu_g1", "d2f_dmu2_g1"].iter().map(|s| s.to_string()).collect();
    RankProbe::new(labels, cols)
}

/// Draws `m` points: `x` uniform on `[−1, 1]^d`, `y` stratified over a window
/// of ±6 of the largest component standard deviation around all means.
pub fn sample_probe_points<R: Rng + ?Sized>(
    base: &BaseFamily,
    g0: &ComponentParams,
    sigma: ExpertFn,
    pair: (&ComponentParams, &ComponentParams),
    m: usize,
    rng: &mut R,
) -> Vec<(Vec<f64>, f64)> {
    let d = g0.dim();
    let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
    let sd = base_sd(base, g0).max(pair.0.nu.sqrt()).max(pair.1.nu.sqrt());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in &xs {
        for mu in [base.expert.eval(g0.index(x)), sigma.eval(pair.0.index(x)), sigma.eval(pair.1.index(x))] {
            lo = lo.min(mu);
            hi = hi.max(mu);
        }
    }
    let (lo, hi) = (lo - 6.0 * sd, hi + 6.0 * sd);
    xs.into_iter()
        .enumerate()
        .map(|(k, x)| {
            let u: f64 = rng.random();
            (x, lo + (k as f64 + u) / m as f64 * (hi - lo))
        })
        .collect()
}

/// Smallest eigenvalue of the normalized Gram matrix; near zero flags a
/// non-distinguishable pair.
pub fn distinguishability_score<R: Rng + ?Sized>(
    base: &BaseFamily,
    g0: &ComponentParams,
    sigma: ExpertFn,
    pair: (&ComponentParams, &ComponentParams),
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if m < 100 {
        return Err(Error::Diagnostic(format!("need at least 100 sample points, got {m}")));
    }
    if pair.0 == pair.1 {
        return Err(Error::Diagnostic("the two prompt components must differ".into()));
    }
    if pair.0.dim() != g0.dim() || pair.1.dim() != g0.dim() {
        return Err(Error::Shape { expected: g0.dim(), got: pair.0.dim().max(pair.1.dim()) });
    }
    let pts = sample_probe_points(base, g0, sigma, pair, m, rng);
    Ok(distinguishability_probe(base, g0, sigma, pair, &pts)?.smallest_eigenvalue())
}

/// Second `b`-derivative and `ν`-derivative of the prompt density and the
/// residual `∂²f/∂b² − 2∂f/∂ν`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatTerms {
    pub f_bb: f64,
    pub f_nu: f64,
    pub residual: f64,
}

/// Closed-form heat terms for any expert: `f_bb = f_μμ σ'² + f_μ σ''`.
pub fn heat_terms(x: &[f64], y: f64, g: &ComponentParams, sigma: ExpertFn) -> Result<HeatTerms> {
    let f = prompt_logpdf(x, y, g, sigma)?.exp();
    let z = g.index(x);
    let (mu, s1) = sigma.eval_d1(z);
    let s2 = sigma.deriv2(z);
    let r = y - mu;
    let nu = g.nu;
    let f_mu = f * r / nu;
    let f_mumu = f * (r * r / (nu * nu) - 1.0 / nu);
    let f_nu = f * (r * r / (2.0 * nu * nu) - 1.0 / (2.0 * nu));
    let f_bb = f_mumu * s1 * s1 + f_mu * s2;
    Ok(HeatTerms { f_bb, f_nu, residual: f_bb - 2.0 * f_nu })
}

/// `∂²f/∂b² − 2∂f/∂ν` for the identity-expert prompt, which vanishes identically.
pub fn heat_residual(x: &[f64], y: f64, g: &ComponentParams) -> Result<f64> {
    Ok(heat_terms(x, y, g, ExpertFn::Identity)?.residual)
}

/// One audited quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub max_error: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: BTreeMap<String, AuditCheck>,
}

impl AuditReport {
    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.checks.values().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|(_, c)| !c.passed).map(|(k, _)| k.clone()).collect()
    }

    /// Records one error sample; `error` must already be relative.
    pub fn record(&mut self, name: &str, error: f64, tolerance: f64) {
        let c = self.checks.entry(name.to_string()).or_insert(AuditCheck { max_error: 0.0, tolerance, samples: 0, passed: true });
        c.samples += 1;
        if error.is_nan() || error > c.max_error {
            c.max_error = error;
        }
        c.passed = c.max_error <= c.tolerance;
    }

    pub fn merge(&mut self, other: AuditReport) {
        self.checks.extend(other.checks);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Relative tolerance of the finite-difference audit.
pub const GRAD_TOL: f64 = 1e-5;
/// Relative tolerance of the analytic heat residual.
pub const HEAT_TOL: f64 = 1e-12;

fn rel(fd: f64, exact: f64) -> f64 {
    (fd - exact).abs() / (1.0 + exact.abs())
}

fn central(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t + h) - f(t - h)) / (2.0 * h)
}

const AUDIT_EXPERTS: [ExpertFn; 5] =
    [ExpertFn::Identity, ExpertFn::Sigmoid, ExpertFn::Tanh, ExpertFn::ReLU, ExpertFn::Affine { slope: -1.5, offset: 0.25 }];

fn random_prompt<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComponentParams {
    ComponentParams {
        a: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        b: rng.random_range(-1.0..1.0),
        nu: rng.random_range(0.1..2.0),
    }
}

/// Central-difference checks of expert derivatives and the prompt score.
pub fn grad_audit<R: Rng + ?Sized>(sample_count: usize, rng: &mut R) -> AuditReport {
    let mut rep = AuditReport::default();
    let h = 1e-5;
    for _ in 0..sample_count {
        for e in AUDIT_EXPERTS {
            let mut z: f64 = rng.random_range(-4.0..4.0);
            if matches!(e, ExpertFn::ReLU) && z.abs() < 1e-3 {
                z += 0.5;
            }
            let name = e.name();
            rep.record(&format!("expert_d1/{name}"), rel(central(|t| e.eval(t), z, h), e.deriv1(z)), GRAD_TOL);
            rep.record(&format!("expert_d2/{name}"), rel(central(|t| e.deriv1(t), z, h), e.deriv2(z)), GRAD_TOL);
        }
        let d = 3;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for sigma in [ExpertFn::Identity, ExpertFn::Sigmoid, ExpertFn::Tanh] {
            let g = random_prompt(d, rng);
            let eps: f64 = rng.sample(StandardNormal);
            let y = sigma.eval(g.index(&x)) + eps * g.nu.sqrt();
            let Ok(score) = prompt_score(&x, y, &g, sigma) else { continue };
            let lp = |g: &ComponentParams| prompt_logpdf(&x, y, g, sigma).unwrap_or(f64::NAN);
            let name = sigma.name();
            let mut worst: f64 = 0.0;
            for j in 0..d {
                let fd = central(
                    |t| {
                        let mut q = g.clone();
                        q.a[j] = t;
                        lp(&q)
                    },
                    g.a[j],
                    h,
                );
                worst = worst.max(rel(fd, score.grad_a[j]));
            }
            rep.record(&format!("score_a/{name}"), worst, GRAD_TOL);
            let fd_b = central(|t| lp(&ComponentParams { b: t, ..g.clone() }), g.b, h);
            rep.record(&format!("score_b/{name}"), rel(fd_b, score.grad_b), GRAD_TOL);
            let fd_nu = central(|t| lp(&ComponentParams { nu: t, ..g.clone() }), g.nu, h);
            rep.record(&format!("score_nu/{name}"), rel(fd_nu, score.grad_nu), GRAD_TOL);
        }
    }
    rep
}

/// Analytic heat residual at random points, relative to `|∂²f/∂b²|`.
pub fn heat_audit<R: Rng + ?Sized>(sample_count: usize, rng: &mut R) -> AuditReport {
    let mut rep = AuditReport::default();
    for _ in 0..sample_count {
        let d = 3;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = random_prompt(d, rng);
        let eps: f64 = rng.sample(StandardNormal);
        let y = g.index(&x) + 2.0 * eps * g.nu.sqrt();
        if let Ok(t) = heat_terms(&x, y, &g, ExpertFn::Identity) {
            let scale = t.f_bb.abs().max(2.0 * t.f_nu.abs());
            let err = if scale > 0.0 { t.residual.abs() / scale } else { t.residual.abs() };
            rep.record("heat_identity", err, HEAT_TOL);
        }
    }
    rep
}

/// Symmetry, nonnegativity, zero characterization and equivalence bands of the D-losses.
pub fn loss_audit<R: Rng + ?Sized>(sample_count: usize, rng: &mut R) -> AuditReport {
    let mut rep = AuditReport::default();
    let d = 3;
    let g0 = ComponentParams { a: vec![1.0, 0.0, 0.0], b: 0.0, nu: 1.0 };
    let point = |rng: &mut R| {
        let scale = 10f64.powf(rng.random_range(-3.0..1.0));
        ParamPoint::new(
            rng.random_range(0.0..1.0),
            ComponentParams {
                a: (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
                b: scale * rng.random_range(-1.0..1.0),
                nu: 1.0 + scale * rng.random_range(-0.9..1.0),
            },
        )
    };
    type Metric = fn(&ParamPoint, &ParamPoint, &ComponentParams) -> Result<f64>;
    let metrics: [(&str, Metric); 5] = [("d1", |p, q, _| d1(p, q)), ("d2", d2), ("d2_bar", d2_bar), ("d4", d4), ("d4_bar", d4_bar)];
    for _ in 0..sample_count {
        let p = point(rng);
        let q = point(rng);
        let mut vals = BTreeMap::new();
        for (name, f) in metrics {
            let (Ok(pq), Ok(qp), Ok(pp)) = (f(&p, &q, &g0), f(&q, &p, &g0), f(&p, &p, &g0)) else {
                rep.record(&format!("{name}/evaluates"), f64::INFINITY, 0.0);
                continue;
            };
            rep.record(&format!("{name}/symmetry"), (pq - qp).abs() / pq.abs().max(1e-300), 1e-12);
            rep.record(&format!("{name}/nonnegative"), (-pq).max(0.0), 0.0);
            rep.record(&format!("{name}/zero_at_equal"), pp.abs(), 0.0);
            vals.insert(name, pq);
        }
        let band = |r: f64, k: f64| if r.is_finite() && r > 0.0 { (r.ln().abs() - k.ln()).max(0.0) } else { 0.0 };
        if let (Some(a), Some(b)) = (vals.get("d2"), vals.get("d2_bar")) {
            rep.record("d2_over_d2_bar/band", band(a / b, 3.0), 0.0);
        }
        if let (Some(a), Some(b)) = (vals.get("d4"), vals.get("d4_bar")) {
            rep.record("d4_over_d4_bar/band", band(a / b, 8.0), 0.0);
        }
    }
    rep
}

/// Rank-probe outcomes on three reference systems.
pub fn distinguishability_audit<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<AuditReport> {
    let mut rep = AuditReport::default();
    let e1 = vec![1.0, 0.0];
    let g1 = ComponentParams { a: vec![0.6, -0.4], b: 0.3, nu: 0.5 };
    let g2 = ComponentParams { a: vec![-0.5, 0.8], b: -0.2, nu: 0.8 };

    let t_base = BaseFamily::student_t(ExpertFn::Identity);
    let t_g0 = ComponentParams { a: e1.clone(), b: 0.0, nu: 4.0 };
    let s = distinguishability_score(&t_base, &t_g0, ExpertFn::Identity, (&g1, &g2), m, rng)?;
    rep.record("student_t_base/score_above_1e-3", (1e-3 - s).max(0.0), 0.0);

    let g_base = BaseFamily::gaussian(ExpertFn::Identity);
    let g_g0 = ComponentParams { a: e1, b: 0.0, nu: 1.0 };
    let near = ComponentParams { a: vec![1.0 + 1e-4, 0.0], b: 0.0, nu: 1.0 };
    let s = distinguishability_score(&g_base, &g_g0, ExpertFn::Identity, (&near, &g2), m, rng)?;
    rep.record("merging/score_below_1e-6", s.max(0.0), 1e-6);

    let pts = sample_probe_points(&g_base, &g_g0, ExpertFn::Identity, (&g1, &g2), m, rng);
    let probe = distinguishability_probe(&g_base, &g_g0, ExpertFn::Identity, (&g1, &g2), &pts)?;
    let mut cols = probe.columns.clone();
    cols.push(cols[1].clone());
    let mut labels = probe.labels.clone();
    labels.push("f_g1_copy".into());
    let dup = RankProbe::new(labels, cols)?;
    rep.record("duplicate/score_below_1e-10", dup.smallest_eigenvalue().abs(), 1e-10);
    let psd = probe.eigenvalues()[0];
    rep.record("gram/psd", (-psd).max(0.0), 1e-10);
    Ok(rep)
}
