//! The contaminated mixture `(1−λ)·f₀(y|φ(a₀ᵀx+b₀), ν₀) + λ·f(y|σ(aᵀx+b), ν)`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::densities::{self, BaseFamily, BaseKind, ComponentParams};
use crate::error::{domain, param, Error, Result};
use crate::experts::ExpertFn;
use crate::sum::ExactSum;

#[derive(Clone, Debug, PartialEq)]
pub struct ContaminatedModel {
    pub lambda: f64,
    pub base: BaseFamily,
    pub g0: ComponentParams,
    pub sigma: ExpertFn,
    pub prompt: ComponentParams,
}

impl ContaminatedModel {
    pub fn new(lambda: f64, base: BaseFamily, g0: ComponentParams, sigma: ExpertFn, prompt: ComponentParams) -> Result<Self> {
        let m = Self { lambda, base, g0, sigma, prompt };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(domain(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        self.base.validate_params(&self.g0)?;
        self.base.expert.validate()?;
        self.sigma.validate()?;
        self.prompt.validate()?;
        if self.prompt.dim() != self.g0.dim() {
            return Err(Error::Shape { expected: self.g0.dim(), got: self.prompt.dim() });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.g0.dim()
    }

    pub fn with_prompt(&self, lambda: f64, prompt: ComponentParams) -> Self {
        Self { lambda, prompt, ..self.clone() }
    }

    /// Precomputed constants for repeated evaluation.
    pub(crate) fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            m: self,
            t_norm: self.base.t_log_norm(self.g0.nu),
            ln_lambda: self.lambda.ln(),
            ln_one_minus: (-self.lambda).ln_1p(),
        }
    }

    pub fn base_logpdf(&self, x: &[f64], y: f64) -> Result<f64> {
        densities::base_logpdf(x, y, &self.base, &self.g0)
    }

    pub fn prompt_logpdf(&self, x: &[f64], y: f64) -> Result<f64> {
        densities::prompt_logpdf(x, y, &self.prompt, self.sigma)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

pub(crate) struct Evaluator<'a> {
    m: &'a ContaminatedModel,
    t_norm: f64,
    ln_lambda: f64,
    ln_one_minus: f64,
}

impl Evaluator<'_> {
    #[inline]
    pub(crate) fn base_lp(&self, x: &[f64], y: f64) -> f64 {
        let m = self.m;
        let mean = m.base.expert.eval(m.g0.index(x));
        m.base.logpdf_at(y, mean, m.g0.nu, self.t_norm)
    }

    #[inline]
    pub(crate) fn prompt_lp(&self, x: &[f64], y: f64) -> f64 {
        let m = self.m;
        let mean = m.sigma.eval(m.prompt.index(x));
        densities::gaussian_logpdf_unchecked(y, mean, m.prompt.nu)
    }

    #[inline]
    pub(crate) fn mix(&self, base_lp: f64, prompt_lp: f64) -> f64 {
        let lambda = self.m.lambda;
        if lambda == 0.0 {
            base_lp
        } else if lambda == 1.0 {
            prompt_lp
        } else {
            log_add_exp(self.ln_one_minus + base_lp, self.ln_lambda + prompt_lp)
        }
    }

    /// Posterior probability of the prompt; `None` flags joint underflow.
    #[inline]
    pub(crate) fn resp(&self, base_lp: f64, prompt_lp: f64) -> (f64, bool) {
        let lambda = self.m.lambda;
        if lambda == 0.0 {
            return (0.0, false);
        }
        if lambda == 1.0 {
            return (1.0, false);
        }
        let l0 = self.ln_one_minus + base_lp;
        let l1 = self.ln_lambda + prompt_lp;
        if l0 == f64::NEG_INFINITY && l1 == f64::NEG_INFINITY {
            return (lambda, true);
        }
        // 1 / (1 + exp(l0 - l1)), stable either side
        let d = l0 - l1;
        let r = if d > 0.0 {
            let e = (-d).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + d.exp())
        };
        (r, false)
    }
}

#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// Covariates (row-major `n × d`) and responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(param("covariate dimension must be at least 1"));
        }
        if x.len() != d * y.len() {
            return Err(Error::Shape { expected: d * y.len(), got: x.len() });
        }
        Ok(Self { d, x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(1);
        let mut x = Vec::with_capacity(d * rows.len());
        for r in rows {
            if r.len() != d {
                return Err(Error::Shape { expected: d, got: r.len() });
            }
            x.extend_from_slice(r);
        }
        if rows.len() != y.len() {
            return Err(Error::Shape { expected: rows.len(), got: y.len() });
        }
        Self::new(d, x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.x.chunks_exact(self.d).zip(self.y.iter().copied())
    }

    /// Rows reordered by `perm` (a permutation of `0..n`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::Shape { expected: self.len(), got: perm.len() });
        }
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.y.len());
        for &i in perm {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self::new(self.d, x, y)
    }

    /// Concatenation of two datasets with the same dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.d != self.d {
            return Err(Error::Shape { expected: self.d, got: other.d });
        }
        let mut x = self.x.clone();
        x.extend_from_slice(&other.x);
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Self::new(self.d, x, y)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        wr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.d + 1);
        for (x, y) in self.rows() {
            rec.clear();
            rec.extend(x.iter().map(|v| v.to_string()));
            rec.push(y.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        let d = cols.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| Error::Parse("dataset needs x columns and y".into()))?;
        for (j, c) in cols.iter().enumerate() {
            let want = if j < d { format!("x{}", j + 1) } else { "y".to_string() };
            if *c != want {
                return Err(Error::Parse(format!("column {} should be {want:?}, found {c:?}", j + 1)));
            }
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", line + 1, rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse(format!("row {}: bad number {field:?}", line + 1)))?;
                if j < d {
                    x.push(v);
                } else {
                    y.push(v);
                }
            }
        }
        Self::new(d, x, y)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}

pub fn mixture_logpdf(m: &ContaminatedModel, x: &[f64], y: f64) -> Result<f64> {
    m.g0.check_dim(x)?;
    m.validate()?;
    let ev = m.evaluator();
    Ok(ev.mix(ev.base_lp(x, y), ev.prompt_lp(x, y)))
}

/// Observed-data log-likelihood. `n == 0` flags the empty-dataset case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub n: usize,
}

impl LogLikelihood {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn per_sample(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.value / self.n as f64
        }
    }
}

pub fn log_likelihood(m: &ContaminatedModel, data: &Dataset) -> Result<LogLikelihood> {
    if data.dim() != m.dim() {
        return Err(Error::Shape { expected: m.dim(), got: data.dim() });
    }
    m.validate()?;
    let ev = m.evaluator();
    let mut acc = ExactSum::new();
    for (x, y) in data.rows() {
        acc.add(ev.mix(ev.base_lp(x, y), ev.prompt_lp(x, y)));
    }
    Ok(LogLikelihood { value: acc.value(), n: data.len() })
}

pub fn responsibility(m: &ContaminatedModel, x: &[f64], y: f64) -> Result<f64> {
    m.g0.check_dim(x)?;
    m.validate()?;
    let ev = m.evaluator();
    Ok(ev.resp(ev.base_lp(x, y), ev.prompt_lp(x, y)).0)
}

#[inline]
fn sample_row<R: Rng + ?Sized>(m: &ContaminatedModel, rng: &mut R, x: &mut Vec<f64>) -> Result<(f64, bool)> {
    let start = x.len();
    for _ in 0..m.dim() {
        x.push(rng.random_range(-1.0..=1.0));
    }
    let row = &x[start..];
    let from_prompt = rng.random::<f64>() < m.lambda;
    let y = if from_prompt {
        densities::sample_prompt(row, &m.prompt, m.sigma, rng)?
    } else {
        densities::sample_base(row, &m.base, &m.g0, rng)?
    };
    Ok((y, from_prompt))
}

/// Draws `n` rows with `x ~ U[−1, 1]^d`; the component labels are discarded.
pub fn sample_dataset<R: Rng + ?Sized>(m: &ContaminatedModel, n: usize, rng: &mut R) -> Result<Dataset> {
    sample_dataset_labeled(m, n, rng).map(|(d, _)| d)
}

/// As [`sample_dataset`], also returning which rows the prompt generated.
pub fn sample_dataset_labeled<R: Rng + ?Sized>(m: &ContaminatedModel, n: usize, rng: &mut R) -> Result<(Dataset, Vec<bool>)> {
    if n == 0 {
        return Err(param("sample size must be at least 1"));
    }
    m.validate()?;
    let mut x = Vec::with_capacity(n * m.dim());
    let mut y = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (yi, from_prompt) = sample_row(m, rng, &mut x)?;
        y.push(yi);
        labels.push(from_prompt);
    }
    Ok((Dataset::new(m.dim(), x, y)?, labels))
}

/// Monte-Carlo Hellinger estimate between two conditional models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HellingerEstimate {
    /// Hellinger distance.
    pub h: f64,
    /// Squared distance `½∫(√p − √q)²`, clamped into `[0, 1]`.
    pub h2: f64,
    /// Standard error of the `h2` estimate.
    pub se: f64,
}

impl HellingerEstimate {
    /// Delta-method standard error of `h`.
    pub fn h_se(&self) -> f64 {
        if self.h > 0.0 {
            self.se / (2.0 * self.h)
        } else {
            self.se.sqrt()
        }
    }
}

pub const HELLINGER_MIN_SAMPLES: usize = 1000;

/// Draws `(x, y) ~ p` and averages `½(1 − √(q/p))²`, whose expectation is the
/// squared Hellinger distance. Unlike `1 − E√(q/p)` the summand vanishes
/// quadratically as `q → p`, so the relative error stays bounded for nearby
/// models.
pub fn hellinger_mc<R: Rng + ?Sized>(p: &ContaminatedModel, q: &ContaminatedModel, mc_n: usize, rng: &mut R) -> Result<HellingerEstimate> {
    if mc_n < HELLINGER_MIN_SAMPLES {
        return Err(param(format!("hellinger_mc needs at least {HELLINGER_MIN_SAMPLES} samples, got {mc_n}")));
    }
    if p.dim() != q.dim() {
        return Err(Error::Shape { expected: p.dim(), got: q.dim() });
    }
    p.validate()?;
    q.validate()?;
    let ep = p.evaluator();
    let eq = q.evaluator();
    let mut x = Vec::with_capacity(p.dim());
    let mut s1 = ExactSum::new();
    let mut s2 = ExactSum::new();
    for _ in 0..mc_n {
        x.clear();
        let (y, _) = sample_row(p, rng, &mut x)?;
        let lp = ep.mix(ep.base_lp(&x, y), ep.prompt_lp(&x, y));
        let lq = eq.mix(eq.base_lp(&x, y), eq.prompt_lp(&x, y));
        let w = if lp == lq { 1.0 } else { (0.5 * (lq - lp)).exp() };
        let t = 0.5 * (1.0 - w) * (1.0 - w);
        s1.add(t);
        s2.add(t * t);
    }
    let n = mc_n as f64;
    let mean = s1.value() / n;
    let var = ((s2.value() / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let h2 = mean.clamp(0.0, 1.0);
    Ok(HellingerEstimate { h: h2.sqrt(), h2, se: (var / n).sqrt() })
}

#[derive(Debug, Serialize, Deserialize)]
struct BaseDoc {
    kind: BaseKind,
    expert: ExpertFn,
    a0: Vec<f64>,
    b0: f64,
    nu0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PromptDoc {
    expert: ExpertFn,
    a: Vec<f64>,
    b: f64,
    nu: f64,
}

/// JSON document `{lambda, base:{kind, expert, a0, b0, nu0}, prompt:{expert, a, b, nu}}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelDoc {
    lambda: f64,
    base: BaseDoc,
    prompt: PromptDoc,
}

impl From<&ContaminatedModel> for ModelDoc {
    fn from(m: &ContaminatedModel) -> Self {
        ModelDoc {
            lambda: m.lambda,
            base: BaseDoc { kind: m.base.kind, expert: m.base.expert, a0: m.g0.a.clone(), b0: m.g0.b, nu0: m.g0.nu },
            prompt: PromptDoc { expert: m.sigma, a: m.prompt.a.clone(), b: m.prompt.b, nu: m.prompt.nu },
        }
    }
}

impl TryFrom<ModelDoc> for ContaminatedModel {
    type Error = Error;

    fn try_from(d: ModelDoc) -> Result<Self> {
        ContaminatedModel::new(
            d.lambda,
            BaseFamily { kind: d.base.kind, expert: d.base.expert },
            ComponentParams { a: d.base.a0, b: d.base.b0, nu: d.base.nu0 },
            d.prompt.expert,
            ComponentParams { a: d.prompt.a, b: d.prompt.b, nu: d.prompt.nu },
        )
    }
}

impl Serialize for ContaminatedModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ContaminatedModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = ModelDoc::deserialize(d)?;
        ContaminatedModel::try_from(doc).map_err(serde::de::Error::custom)
    }
}
