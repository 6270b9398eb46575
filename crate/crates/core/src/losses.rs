//! Parameter-loss metrics and the theorem-specific scaled errors.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densities::ComponentParams;
use crate::error::{param, Error, Result};

/// A point `(λ, G)` of `[0, 1] × Θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub lambda: f64,
    pub g: ComponentParams,
}

impl ParamPoint {
    pub fn new(lambda: f64, g: ComponentParams) -> Self {
        Self { lambda, g }
    }
}

/// Offsets `(a − a₀, b − b₀, ν − ν₀)` from the frozen component.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaG {
    pub da: Vec<f64>,
    pub db: f64,
    pub dnu: f64,
}

impl DeltaG {
    pub fn between(g: &ComponentParams, g0: &ComponentParams) -> Result<Self> {
        if g.dim() != g0.dim() {
            return Err(Error::Shape { expected: g0.dim(), got: g.dim() });
        }
        Ok(Self {
            da: g.a.iter().zip(&g0.a).map(|(a, b)| a - b).collect(),
            db: g.b - g0.b,
            dnu: g.nu - g0.nu,
        })
    }

    pub fn minus(&self, other: &DeltaG) -> DeltaG {
        DeltaG {
            da: self.da.iter().zip(&other.da).map(|(a, b)| a - b).collect(),
            db: self.db - other.db,
            dnu: self.dnu - other.dnu,
        }
    }

    pub fn norm_a(&self) -> f64 {
        self.da.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean norm of the concatenated offsets.
    pub fn norm(&self) -> f64 {
        (self.da.iter().map(|v| v * v).sum::<f64>() + self.db * self.db + self.dnu * self.dnu).sqrt()
    }

    /// `‖Δa‖^α + |Δb|^β + |Δν|^γ`
    pub fn mixed(&self, alpha: i32, beta: i32, gamma: i32) -> f64 {
        self.norm_a().powi(alpha) + self.db.abs().powi(beta) + self.dnu.abs().powi(gamma)
    }

    fn s(&self) -> f64 {
        self.mixed(2, 4, 2)
    }

    fn rho(&self) -> f64 {
        self.mixed(1, 2, 1)
    }
}

fn check_dims(p: &ParamPoint, q: &ParamPoint) -> Result<()> {
    if p.g.dim() != q.g.dim() {
        return Err(Error::Shape { expected: p.g.dim(), got: q.g.dim() });
    }
    Ok(())
}

fn flat_distance(p: &ComponentParams, q: &ComponentParams) -> f64 {
    p.flat().iter().zip(q.flat()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `|λ − λ*| + (λ + λ*)‖(a, b, ν) − (a*, b*, ν*)‖`
pub fn d1(p: &ParamPoint, q: &ParamPoint) -> Result<f64> {
    check_dims(p, q)?;
    Ok((p.lambda - q.lambda).abs() + (p.lambda + q.lambda) * flat_distance(&p.g, &q.g))
}

fn deltas(p: &ParamPoint, q: &ParamPoint, g0: &ComponentParams) -> Result<(DeltaG, DeltaG)> {
    check_dims(p, q)?;
    Ok((DeltaG::between(&p.g, g0)?, DeltaG::between(&q.g, g0)?))
}

pub fn d2(p: &ParamPoint, q: &ParamPoint, g0: &ComponentParams) -> Result<f64> {
    let (dp, dq) = deltas(p, q, g0)?;
    let (np, nq) = (dp.norm(), dq.norm());
    let (l, ls) = (p.lambda, q.lambda);
    let m = l.min(ls);
    let head = (l - m) * np * np + (ls - m) * nq * nq;
    Ok(head + (l * np + ls * nq) * dp.minus(&dq).norm())
}

pub fn d2_bar(p: &ParamPoint, q: &ParamPoint, g0: &ComponentParams) -> Result<f64> {
    let (dp, dq) = deltas(p, q, g0)?;
    let (np, nq) = (dp.norm(), dq.norm());
    let (l, ls) = (p.lambda, q.lambda);
    Ok((l - ls).abs() * np * nq + dp.minus(&dq).norm() * (l * np + ls * nq))
}

pub fn d4(p: &ParamPoint, q: &ParamPoint, g0: &ComponentParams) -> Result<f64> {
    let (dp, dq) = deltas(p, q, g0)?;
    let (l, ls) = (p.lambda, q.lambda);
    let (sp, sq) = (dp.s(), dq.s());
    let m = l.min(ls);
    let head = (l - m) * sp + (ls - m) * sq;
    Ok(head + (l * dp.rho() + ls * dq.rho()) * dp.minus(&dq).rho())
}

pub fn d4_bar(p: &ParamPoint, q: &ParamPoint, g0: &ComponentParams) -> Result<f64> {
    let (dp, dq) = deltas(p, q, g0)?;
    let (l, ls) = (p.lambda, q.lambda);
    let (rp, rq) = (dp.rho(), dq.rho());
    Ok((l - ls).abs() * rp * rq + (l * rp + ls * rq) * dp.minus(&dq).rho())
}

/// Outcome of a `Ξ₁` / `Ξ₂` membership test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    /// Some offset coordinate is exactly zero, so no `λ` qualifies.
    pub degenerate: bool,
}

fn xi_member(p: &ParamPoint, g0: &ComponentParams, l_n: f64, n: usize, b_power: i32) -> Result<Membership> {
    if !(l_n > 0.0) {
        return Err(param("l_n must be positive"));
    }
    if n == 0 {
        return Err(param("n must be at least 1"));
    }
    let dg = DeltaG::between(&p.g, g0)?;
    let floor = dg
        .da
        .iter()
        .map(|v| v * v)
        .chain([dg.db.abs().powi(b_power), dg.dnu * dg.dnu])
        .fold(f64::INFINITY, f64::min);
    if floor == 0.0 {
        return Ok(Membership { member: false, degenerate: true });
    }
    Ok(Membership { member: p.lambda >= l_n / (floor * (n as f64).sqrt()), degenerate: false })
}

/// `λ ≥ l_n / (min{|Δaᵢ|², |Δb|⁴, |Δν|²} √n)`
pub fn xi1_member(p: &ParamPoint, g0: &ComponentParams, l_n: f64, n: usize) -> Result<Membership> {
    xi_member(p, g0, l_n, n, 4)
}

/// `λ ≥ l_n / (min{|Δaᵢ|², |Δb|², |Δν|²} √n)`
pub fn xi2_member(p: &ParamPoint, g0: &ComponentParams, l_n: f64, n: usize) -> Result<Membership> {
    xi_member(p, g0, l_n, n, 2)
}

/// The six theorem settings with distinct rate statements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TheoremId {
    T2,
    T4,
    T6,
    T7,
    T8,
    T9,
}

impl TheoremId {
    pub const ALL: [TheoremId; 6] = [TheoremId::T2, TheoremId::T4, TheoremId::T6, TheoremId::T7, TheoremId::T8, TheoremId::T9];
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for TheoremId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T2" => Ok(TheoremId::T2),
            "T4" => Ok(TheoremId::T4),
            "T6" => Ok(TheoremId::T6),
            "T7" => Ok(TheoremId::T7),
            "T8" => Ok(TheoremId::T8),
            "T9" => Ok(TheoremId::T9),
            other => Err(param(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Raw errors, D-losses, and the rate-normalized quantities for one estimate.
///
/// Scaled entries multiply each raw error by the truth-dependent factor that
/// makes its expected rate `n^{-1/2}` up to log factors, e.g. `λ*·‖â − a*‖`
/// when the prompt rate degrades as `1/λ*`.
pub fn theorem_errors(id: TheoremId, truth: &ParamPoint, est: &ParamPoint, g0: &ComponentParams) -> Result<BTreeMap<String, f64>> {
    check_dims(truth, est)?;
    let err_lambda = (est.lambda - truth.lambda).abs();
    let err_a = est.g.a.iter().zip(&truth.g.a).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let err_b = (est.g.b - truth.g.b).abs();
    let err_nu = (est.g.nu - truth.g.nu).abs();
    let err_prompt = flat_distance(&est.g, &truth.g);
    let ls = truth.lambda;
    let dstar = DeltaG::between(&truth.g, g0)?;

    let mut out = BTreeMap::new();
    out.insert("err_lambda".to_string(), err_lambda);
    out.insert("err_a".to_string(), err_a);
    out.insert("err_b".to_string(), err_b);
    out.insert("err_nu".to_string(), err_nu);
    out.insert("d1".to_string(), d1(est, truth)?);
    out.insert("d2".to_string(), d2(est, truth, g0)?);
    out.insert("d2_bar".to_string(), d2_bar(est, truth, g0)?);
    out.insert("d4".to_string(), d4(est, truth, g0)?);
    out.insert("d4_bar".to_string(), d4_bar(est, truth, g0)?);

    let (lam_factor, prm_factor, scaled_b, scaled_prompt) = match id {
        TheoremId::T2 | TheoremId::T6 | TheoremId::T7 | TheoremId::T8 => (1.0, ls, ls * err_b, ls * err_prompt),
        TheoremId::T4 => {
            let f = ls * dstar.mixed(2, 4, 2).sqrt();
            let mixed_err = (err_a * err_a + err_b.powi(4) + err_nu * err_nu).sqrt();
            (dstar.mixed(4, 8, 4).sqrt(), f, f * err_b * err_b, f * mixed_err)
        }
        TheoremId::T9 => {
            let nrm = dstar.norm();
            let f = ls * nrm;
            (nrm * nrm, f, f * err_b, f * err_prompt)
        }
    };
    out.insert("scaled_lambda".to_string(), lam_factor * err_lambda);
    out.insert("scaled_a".to_string(), prm_factor * err_a);
    out.insert("scaled_b".to_string(), scaled_b);
    out.insert("scaled_nu".to_string(), prm_factor * err_nu);
    out.insert("scaled_prompt".to_string(), scaled_prompt);
    Ok(out)
}
