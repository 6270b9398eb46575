//! Component densities: the Gaussian prompt `f` and the frozen base `f₀`.
//!
//! Everything is evaluated in log space. Means are `expert(aᵀx + b)`; the
//! third component parameter `nu` is a variance for Gaussians and the degrees
//! of freedom for the unit-scale Student-t base.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::experts::ExpertFn;

const LN_2PI: f64 = 1.8378770664093453;

/// One expert component `(a, b, ν)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    pub a: Vec<f64>,
    pub b: f64,
    pub nu: f64,
}

impl ComponentParams {
    pub fn new(a: Vec<f64>, b: f64, nu: f64) -> Result<Self> {
        let g = Self { a, b, nu };
        g.validate()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(domain(format!("nu must be positive and finite, got {}", self.nu)));
        }
        if !self.b.is_finite() || self.a.iter().any(|v| !v.is_finite()) {
            return Err(domain("component parameters must be finite"));
        }
        Ok(())
    }

    /// Truth components must depend on the covariates.
    pub fn validate_truth(&self) -> Result<()> {
        self.validate()?;
        if self.a.iter().all(|&v| v == 0.0) {
            return Err(domain("slope vector must be non-zero for a model truth"));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, x: &[f64]) -> f64 {
        linear_index(&self.a, self.b, x)
    }

    /// Concatenated `(a, b, ν)` vector.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.push(self.b);
        v.push(self.nu);
        v
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.a.len() {
            return Err(Error::Shape { expected: self.a.len(), got: x.len() });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn linear_index(a: &[f64], b: f64, x: &[f64]) -> f64 {
    let mut z = b;
    for (ai, xi) in a.iter().zip(x) {
        z += ai * xi;
    }
    z
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Gaussian,
    StudentT,
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::Gaussian => "gaussian",
            BaseKind::StudentT => "student_t",
        })
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(BaseKind::Gaussian),
            "student_t" | "studentt" | "t" => Ok(BaseKind::StudentT),
            other => Err(param(format!("unknown base family {other:?}"))),
        }
    }
}

/// Family of the frozen base density plus its expert `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseFamily {
    pub kind: BaseKind,
    pub expert: ExpertFn,
}

impl BaseFamily {
    pub fn gaussian(expert: ExpertFn) -> Self {
        Self { kind: BaseKind::Gaussian, expert }
    }

    pub fn student_t(expert: ExpertFn) -> Self {
        Self { kind: BaseKind::StudentT, expert }
    }

    pub fn validate_params(&self, g0: &ComponentParams) -> Result<()> {
        g0.validate()?;
        if self.kind == BaseKind::StudentT && g0.nu < 1.0 {
            return Err(domain(format!("Student-t base needs df >= 1, got {}", g0.nu)));
        }
        Ok(())
    }

    /// Log-density with parameters already validated.
    #[inline]
    pub(crate) fn logpdf_at(&self, y: f64, mean: f64, nu: f64, t_norm: f64) -> f64 {
        match self.kind {
            BaseKind::Gaussian => gaussian_logpdf_unchecked(y, mean, nu),
            BaseKind::StudentT => {
                let r = y - mean;
                t_norm - 0.5 * (nu + 1.0) * (r * r / nu).ln_1p()
            }
        }
    }

    /// Normalizing constant of the unit-scale t density (unused for Gaussians).
    pub(crate) fn t_log_norm(&self, nu: f64) -> f64 {
        match self.kind {
            BaseKind::Gaussian => 0.0,
            BaseKind::StudentT => student_t_log_norm(nu),
        }
    }
}

/// `ln Γ(x)` for `x > 0` via the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * LN_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

fn student_t_log_norm(df: f64) -> f64 {
    ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln()
}

#[inline]
pub(crate) fn gaussian_logpdf_unchecked(y: f64, mean: f64, nu: f64) -> f64 {
    let r = y - mean;
    -0.5 * (LN_2PI + nu.ln()) - r * r / (2.0 * nu)
}

pub fn gaussian_logpdf(y: f64, mean: f64, nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(domain(format!("variance must be positive, got {nu}")));
    }
    Ok(gaussian_logpdf_unchecked(y, mean, nu))
}

/// Unit-scale Student-t log-density with `df` degrees of freedom.
pub fn student_t_logpdf(y: f64, mean: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) {
        return Err(domain(format!("degrees of freedom must be positive, got {df}")));
    }
    let r = y - mean;
    Ok(student_t_log_norm(df) - 0.5 * (df + 1.0) * (r * r / df).ln_1p())
}

pub fn prompt_logpdf(x: &[f64], y: f64, g: &ComponentParams, sigma: ExpertFn) -> Result<f64> {
    g.check_dim(x)?;
    let mean = sigma.eval(g.index(x));
    gaussian_logpdf(y, mean, g.nu)
}

/// Gradient of `log f(y | σ(aᵀx+b), ν)` with respect to `(a, b, ν)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptScore {
    pub grad_a: Vec<f64>,
    pub grad_b: f64,
    pub grad_nu: f64,
}

pub fn prompt_score(x: &[f64], y: f64, g: &ComponentParams, sigma: ExpertFn) -> Result<PromptScore> {
    g.check_dim(x)?;
    if !(g.nu > 0.0) {
        return Err(domain(format!("variance must be positive, got {}", g.nu)));
    }
    let z = g.index(x);
    let (m, dm) = sigma.eval_d1(z);
    let r = y - m;
    let grad_b = dm * r / g.nu;
    Ok(PromptScore {
        grad_a: x.iter().map(|xi| grad_b * xi).collect(),
        grad_b,
        grad_nu: (r * r - g.nu) / (2.0 * g.nu * g.nu),
    })
}

pub fn base_logpdf(x: &[f64], y: f64, base: &BaseFamily, g0: &ComponentParams) -> Result<f64> {
    g0.check_dim(x)?;
    base.validate_params(g0)?;
    let mean = base.expert.eval(g0.index(x));
    Ok(base.logpdf_at(y, mean, g0.nu, base.t_log_norm(g0.nu)))
}

pub fn sample_prompt<R: Rng + ?Sized>(x: &[f64], g: &ComponentParams, sigma: ExpertFn, rng: &mut R) -> Result<f64> {
    g.check_dim(x)?;
    g.validate()?;
    let z: f64 = rng.sample(StandardNormal);
    Ok(sigma.eval(g.index(x)) + g.nu.sqrt() * z)
}

pub fn sample_base<R: Rng + ?Sized>(x: &[f64], base: &BaseFamily, g0: &ComponentParams, rng: &mut R) -> Result<f64> {
    g0.check_dim(x)?;
    base.validate_params(g0)?;
    let mean = base.expert.eval(g0.index(x));
    let z: f64 = rng.sample(StandardNormal);
    match base.kind {
        BaseKind::Gaussian => Ok(mean + g0.nu.sqrt() * z),
        BaseKind::StudentT => {
            let chi = ChiSquared::new(g0.nu).map_err(|e| domain(e.to_string()))?;
            let v: f64 = chi.sample(rng);
            Ok(mean + z / (v / g0.nu).sqrt())
        }
    }
}
