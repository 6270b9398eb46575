//! Maximum-likelihood fitting by generalized EM.
//!
//! E-step: posterior prompt responsibilities. M-step: closed-form `λ`, then
//! backtracked ascent steps on the responsibility-weighted prompt
//! log-likelihood in `(a, b)`, then the closed-form weighted-variance `ν`.
//! Every parameter is projected into the box `Θ` after each update.
//!
//! All reductions over rows go through [`ExactSum`], so a fit is a function of
//! the multiset of rows: permuting the dataset reproduces it bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::densities::{BaseFamily, ComponentParams};
use crate::error::{param, Error, Result};
use crate::experts::ExpertFn;
use crate::model::{ContaminatedModel, Dataset};
use crate::sum::ExactSum;

/// Box bounds of the compact parameter space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaBounds {
    pub a_max: f64,
    pub b_max: f64,
    pub nu_min: f64,
    pub nu_max: f64,
}

impl Default for ThetaBounds {
    fn default() -> Self {
        Self { a_max: 10.0, b_max: 10.0, nu_min: 1e-4, nu_max: 10.0 }
    }
}

impl ThetaBounds {
    pub fn contains(&self, g: &ComponentParams) -> bool {
        g.a.iter().all(|v| v.abs() <= self.a_max) && g.b.abs() <= self.b_max && (self.nu_min..=self.nu_max).contains(&g.nu)
    }

    /// Clamps `g` into the box, returning how many coordinates moved.
    pub fn project(&self, g: &mut ComponentParams) -> usize {
        let mut moved = 0;
        for v in g.a.iter_mut() {
            moved += clamp_count(v, -self.a_max, self.a_max);
        }
        moved += clamp_count(&mut g.b, -self.b_max, self.b_max);
        moved += clamp_count(&mut g.nu, self.nu_min, self.nu_max);
        moved
    }
}

fn clamp_count(v: &mut f64, lo: f64, hi: f64) -> usize {
    let c = v.clamp(lo, hi);
    if c != *v {
        *v = c;
        1
    } else {
        0
    }
}

/// How the starting point of EM is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitSpec {
    /// Truth plus i.i.d. `N(0, noise_scale²)` perturbations, projected into `Θ`.
    NearTruth { noise_scale: f64 },
    Explicit { lambda: f64, prompt: ComponentParams },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::NearTruth { noise_scale: 0.1 }
    }
}

/// Search direction of the `(a, b)` ascent steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ascent {
    /// Gradient preconditioned by the weighted Fisher information (scoring).
    #[default]
    Natural,
    /// Plain gradient, scaled by `ν / Σr` so the step size is unit-free.
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_em_iters: usize,
    /// Stop when the per-sample log-likelihood changes by less than this.
    pub em_tol: f64,
    pub mstep_iters: usize,
    pub mstep_lr: f64,
    pub max_halvings: usize,
    pub ascent: Ascent,
    pub theta_bounds: ThetaBounds,
    pub lambda_clip: f64,
    pub init: InitSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_em_iters: 500,
            em_tol: 1e-8,
            mstep_iters: 50,
            mstep_lr: 1.0,
            max_halvings: 30,
            ascent: Ascent::Natural,
            theta_bounds: ThetaBounds::default(),
            lambda_clip: 1e-6,
            init: InitSpec::default(),
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        let b = &self.theta_bounds;
        if !(b.nu_min > 0.0) || !(b.nu_max >= b.nu_min) || !(b.a_max > 0.0) || !(b.b_max >= 0.0) {
            return Err(param("theta_bounds must satisfy 0 < nu_min <= nu_max, a_max > 0, b_max >= 0"));
        }
        if !(self.lambda_clip > 0.0 && self.lambda_clip < 0.5) {
            return Err(param("lambda_clip must lie in (0, 0.5)"));
        }
        if self.mstep_iters == 0 {
            return Err(param("mstep_iters must be at least 1"));
        }
        if !(self.mstep_lr > 0.0) {
            return Err(param("mstep_lr must be positive"));
        }
        if !(self.em_tol >= 0.0) {
            return Err(param("em_tol must be non-negative"));
        }
        if let InitSpec::NearTruth { noise_scale } = self.init {
            if !(noise_scale >= 0.0) {
                return Err(param("noise_scale must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Rows where both component densities underflowed to zero.
    pub underflow_events: usize,
    /// Coordinates clamped back into `Θ` (λ clipping included).
    pub projection_events: usize,
    /// M-step ascent loops where no halving produced a non-decreasing `Q`.
    pub q_decrease_events: usize,
    /// M-steps skipped because all responsibilities were zero.
    pub empty_weight_events: usize,
    /// Largest drop of the observed-data log-likelihood between iterations.
    pub max_loglik_drop: f64,
}

impl FitDiagnostics {
    fn absorb(&mut self, other: &FitDiagnostics) {
        self.underflow_events += other.underflow_events;
        self.projection_events += other.projection_events;
        self.q_decrease_events += other.q_decrease_events;
        self.empty_weight_events += other.empty_weight_events;
        self.max_loglik_drop = self.max_loglik_drop.max(other.max_loglik_drop);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub lambda_hat: f64,
    pub g_hat: ComponentParams,
    pub final_loglik: f64,
    pub iters: usize,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

/// Per-row base log-densities; `G₀` is frozen so these never change.
struct Prepared<'a> {
    data: &'a Dataset,
    base_lp: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(m: &ContaminatedModel, data: &'a Dataset) -> Result<Self> {
        if data.dim() != m.dim() {
            return Err(Error::Shape { expected: m.dim(), got: data.dim() });
        }
        let ev = m.evaluator();
        let base_lp = data.rows().map(|(x, y)| ev.base_lp(x, y)).collect();
        Ok(Self { data, base_lp })
    }

    /// Fills `r` with responsibilities; returns (log-likelihood, underflows).
    fn e_step(&self, m: &ContaminatedModel, r: &mut Vec<f64>) -> (f64, usize) {
        let ev = m.evaluator();
        r.clear();
        let mut ll = ExactSum::new();
        let mut underflows = 0;
        for ((x, y), &lp0) in self.data.rows().zip(&self.base_lp) {
            let lp1 = ev.prompt_lp(x, y);
            let (ri, flagged) = ev.resp(lp0, lp1);
            underflows += flagged as usize;
            r.push(ri);
            ll.add(ev.mix(lp0, lp1));
        }
        (ll.value(), underflows)
    }
}

pub fn e_step(m: &ContaminatedModel, data: &Dataset) -> Result<Vec<f64>> {
    m.validate()?;
    let prep = Prepared::new(m, data)?;
    let mut r = Vec::with_capacity(data.len());
    prep.e_step(m, &mut r);
    Ok(r)
}

/// Weighted prompt fit quantities at one `(a, b)`.
struct PromptEval {
    /// `Σ rᵢ (yᵢ − mᵢ)²`
    sse: f64,
    /// `Σ rᵢ σ′(zᵢ)(yᵢ − mᵢ) x̃ᵢ` with `x̃ = (x, 1)`; equals `ν ∇_{a,b} Q`.
    grad: Vec<f64>,
    /// Packed upper triangle of `Σ rᵢ σ′(zᵢ)² x̃ᵢ x̃ᵢᵀ`.
    fisher: Option<Vec<f64>>,
}

fn eval_prompt(data: &Dataset, r: &[f64], a: &[f64], b: f64, sigma: ExpertFn, with_fisher: bool) -> PromptEval {
    let d = data.dim();
    let p = d + 1;
    let mut sse = ExactSum::new();
    let mut grad = vec![ExactSum::new(); p];
    let mut fisher = if with_fisher { vec![ExactSum::new(); p * (p + 1) / 2] } else { Vec::new() };
    let mut xt = vec![1.0; p];
    for ((x, y), &w) in data.rows().zip(r) {
        if w == 0.0 {
            continue;
        }
        let z = crate::densities::linear_index(a, b, x);
        let (m, dm) = sigma.eval_d1(z);
        let res = y - m;
        sse.add(w * res * res);
        xt[..d].copy_from_slice(x);
        let gw = w * dm * res;
        for (acc, &xj) in grad.iter_mut().zip(&xt) {
            acc.add(gw * xj);
        }
        if with_fisher {
            let fw = w * dm * dm;
            let mut k = 0;
            for i in 0..p {
                let fi = fw * xt[i];
                for &xj in &xt[i..] {
                    fisher[k].add(fi * xj);
                    k += 1;
                }
            }
        }
    }
    PromptEval {
        sse: sse.value(),
        grad: grad.iter().map(ExactSum::value).collect(),
        fisher: with_fisher.then(|| fisher.iter().map(ExactSum::value).collect()),
    }
}

fn unpack_symmetric(packed: &[f64], p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in i..p {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    m
}

/// Ascent direction in `(a, b)` for the current evaluation.
fn direction(ev: &PromptEval, fisher: Option<&[f64]>, weight: f64, ascent: Ascent) -> Vec<f64> {
    let p = ev.grad.len();
    if ascent == Ascent::Natural {
        if let Some(packed) = fisher {
            let f = unpack_symmetric(packed, p);
            if let Some(ch) = f.cholesky() {
                let sol = ch.solve(&DVector::from_column_slice(&ev.grad));
                if sol.iter().all(|v| v.is_finite()) {
                    return sol.iter().copied().collect();
                }
            }
        }
    }
    ev.grad.iter().map(|g| g / weight).collect()
}

#[derive(Default)]
struct MStepStats {
    projection_events: usize,
    q_decrease_events: usize,
    empty_weight_events: usize,
}

fn m_step_inner(m: &ContaminatedModel, data: &Dataset, r: &[f64], opts: &FitOptions) -> (ContaminatedModel, MStepStats) {
    let mut stats = MStepStats::default();
    let n = data.len().max(1) as f64;
    let weight = crate::sum::exact_sum(r);
    let raw_lambda = weight / n;
    let lambda = raw_lambda.clamp(opts.lambda_clip, 1.0 - opts.lambda_clip);
    if lambda != raw_lambda {
        stats.projection_events += 1;
    }
    if !(weight > 0.0) {
        stats.empty_weight_events += 1;
        return (m.with_prompt(lambda, m.prompt.clone()), stats);
    }

    let bounds = &opts.theta_bounds;
    let sigma = m.sigma;
    let d = data.dim();
    let mut g = m.prompt.clone();
    // the metric is evaluated once per M-step and reused by every ascent step
    let want_fisher = opts.ascent == Ascent::Natural;
    let mut cur = eval_prompt(data, r, &g.a, g.b, sigma, want_fisher);
    let fisher = cur.fisher.take();

    for _ in 0..opts.mstep_iters {
        let dir = direction(&cur, fisher.as_deref(), weight, opts.ascent);
        let mut step = opts.mstep_lr;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = g.clone();
            for (aj, dj) in trial.a.iter_mut().zip(&dir) {
                *aj += step * dj;
            }
            trial.b += step * dir[d];
            let moved = bounds.project(&mut trial);
            let ev = eval_prompt(data, r, &trial.a, trial.b, sigma, false);
            if ev.sse <= cur.sse {
                accepted = Some((trial, ev, moved));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, ev, moved)) => {
                stats.projection_events += moved;
                let gain = cur.sse - ev.sse;
                let unchanged = trial.a == g.a && trial.b == g.b;
                g = trial;
                cur = ev;
                if unchanged || gain <= 1e-15 * cur.sse {
                    break;
                }
            }
            None => {
                stats.q_decrease_events += 1;
                break;
            }
        }
    }

    g.nu = cur.sse / weight;
    let nu_raw = g.nu;
    g.nu = g.nu.clamp(bounds.nu_min, bounds.nu_max);
    if g.nu != nu_raw {
        stats.projection_events += 1;
    }
    (m.with_prompt(lambda, g), stats)
}

/// One M-step given responsibilities `r` computed on `(m, data)`.
pub fn m_step(m: &ContaminatedModel, data: &Dataset, r: &[f64], opts: &FitOptions) -> Result<ContaminatedModel> {
    opts.validate()?;
    if data.dim() != m.dim() {
        return Err(Error::Shape { expected: m.dim(), got: data.dim() });
    }
    if r.len() != data.len() {
        return Err(Error::Shape { expected: data.len(), got: r.len() });
    }
    Ok(m_step_inner(m, data, r, opts).0)
}

fn initial_point<R: Rng + ?Sized>(
    truth: Option<(f64, &ComponentParams)>,
    opts: &FitOptions,
    d: usize,
    rng: &mut R,
) -> Result<(f64, ComponentParams, usize)> {
    let (lambda, mut g) = match &opts.init {
        InitSpec::Explicit { lambda, prompt } => (*lambda, prompt.clone()),
        InitSpec::NearTruth { noise_scale } => {
            let (lt, gt) = truth.ok_or_else(|| Error::Init("near-truth initialization requires the true parameters".into()))?;
            let mut noise = || -> f64 { noise_scale * rng.sample::<f64, _>(StandardNormal) };
            let lambda = lt + noise();
            let a = gt.a.iter().map(|v| v + noise()).collect();
            let b = gt.b + noise();
            let nu = gt.nu + noise();
            (lambda, ComponentParams { a, b, nu })
        }
    };
    if g.dim() != d {
        return Err(Error::Shape { expected: d, got: g.dim() });
    }
    let mut moved = opts.theta_bounds.project(&mut g);
    let clipped = lambda.clamp(opts.lambda_clip, 1.0 - opts.lambda_clip);
    if clipped != lambda || !lambda.is_finite() {
        moved += 1;
    }
    if !clipped.is_finite() || g.validate().is_err() {
        return Err(Error::Init("initial parameters are not finite".into()));
    }
    Ok((clipped, g, moved))
}

/// Fits `(λ, G)` by generalized EM, returning the best iterate seen.
pub fn fit_em<R: Rng + ?Sized>(
    base: BaseFamily,
    g0: &ComponentParams,
    sigma: ExpertFn,
    data: &Dataset,
    truth_for_init: Option<(f64, &ComponentParams)>,
    opts: &FitOptions,
    rng: &mut R,
) -> Result<MleResult> {
    opts.validate()?;
    if data.is_empty() {
        return Err(param("cannot fit an empty dataset"));
    }
    if data.dim() != g0.dim() {
        return Err(Error::Shape { expected: g0.dim(), got: data.dim() });
    }
    let (lambda0, prompt0, init_moves) = initial_point(truth_for_init, opts, data.dim(), rng)?;
    let mut model = ContaminatedModel::new(lambda0, base, g0.clone(), sigma, prompt0)?;
    let prep = Prepared::new(&model, data)?;
    let n = data.len() as f64;

    let mut diag = FitDiagnostics { projection_events: init_moves, ..Default::default() };
    let mut r = Vec::with_capacity(data.len());
    let (mut ll, uf) = prep.e_step(&model, &mut r);
    diag.underflow_events += uf;
    if !ll.is_finite() {
        return Err(Error::Init(format!("log-likelihood at the initial point is {ll}")));
    }
    let mut best = (ll, model.clone());
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_em_iters {
        iters += 1;
        let (next, stats) = m_step_inner(&model, data, &r, opts);
        diag.absorb(&FitDiagnostics {
            projection_events: stats.projection_events,
            q_decrease_events: stats.q_decrease_events,
            empty_weight_events: stats.empty_weight_events,
            ..Default::default()
        });
        model = next;
        let (ll_new, uf) = prep.e_step(&model, &mut r);
        diag.underflow_events += uf;
        if ll_new < ll {
            diag.max_loglik_drop = diag.max_loglik_drop.max(ll - ll_new);
        }
        if ll_new > best.0 {
            best = (ll_new, model.clone());
        }
        let delta = (ll_new - ll).abs() / n;
        ll = ll_new;
        if !ll.is_finite() {
            break;
        }
        if delta < opts.em_tol {
            converged = true;
            break;
        }
    }

    let (final_loglik, bm) = best;
    Ok(MleResult {
        lambda_hat: bm.lambda,
        g_hat: bm.prompt,
        final_loglik,
        iters,
        converged,
        diagnostics: diag,
    })
}
