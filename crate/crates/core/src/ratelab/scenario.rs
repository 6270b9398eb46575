//! Theorem presets and their sample-size dependent truth schedules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densities::{BaseFamily, ComponentParams};
use crate::error::{param, Error, Result};
use crate::estimation::ThetaBounds;
use crate::experts::ExpertFn;
use crate::losses::{ParamPoint, TheoremId};
use crate::model::ContaminatedModel;

/// Dimension used by every preset.
pub const DEFAULT_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    FixedLambda,
    VanishingLambda,
    DriftI,
    DriftIi,
}

impl Case {
    pub fn as_str(&self) -> &'static str {
        match self {
            Case::FixedLambda => "fixed_lambda",
            Case::VanishingLambda => "vanishing_lambda",
            Case::DriftI => "drift_i",
            Case::DriftIi => "drift_ii",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed_lambda" | "fixed" => Ok(Case::FixedLambda),
            "vanishing_lambda" | "vanishing" => Ok(Case::VanishingLambda),
            "drift_i" => Ok(Case::DriftI),
            "drift_ii" => Ok(Case::DriftIi),
            other => Err(param(format!("unknown case {other:?}"))),
        }
    }
}

/// Cases offered by each preset.
pub fn supported_cases(id: TheoremId) -> &'static [Case] {
    match id {
        TheoremId::T2 | TheoremId::T6 | TheoremId::T7 | TheoremId::T8 => &[Case::FixedLambda, Case::VanishingLambda],
        TheoremId::T4 => &[Case::DriftI, Case::DriftIi],
        TheoremId::T9 => &[Case::FixedLambda, Case::VanishingLambda, Case::DriftIi],
    }
}

/// One theorem setting: base family, experts, frozen `G₀`, and the case
/// selecting the truth schedule `n ↦ (λ*(n), G*(n))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: TheoremId,
    pub case: Case,
    pub base: BaseFamily,
    pub sigma: ExpertFn,
    pub d: usize,
    pub g0: ComponentParams,
}

fn unit(d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    e
}

/// Builds a preset in dimension [`DEFAULT_DIM`].
pub fn make_scenario(id: TheoremId, case: Case) -> Result<ScenarioSpec> {
    make_scenario_dim(id, case, DEFAULT_DIM)
}

pub fn make_scenario_dim(id: TheoremId, case: Case, d: usize) -> Result<ScenarioSpec> {
    if !supported_cases(id).contains(&case) {
        return Err(param(format!("scenario {id} does not offer case {case}")));
    }
    if d == 0 {
        return Err(param("dimension must be at least 1"));
    }
    let (base, sigma) = match id {
        TheoremId::T2 => (BaseFamily::student_t(ExpertFn::Identity), ExpertFn::Identity),
        TheoremId::T4 => (BaseFamily::gaussian(ExpertFn::Identity), ExpertFn::Identity),
        TheoremId::T6 => (BaseFamily::gaussian(ExpertFn::Sigmoid), ExpertFn::Identity),
        TheoremId::T7 => (BaseFamily::student_t(ExpertFn::Identity), ExpertFn::Sigmoid),
        TheoremId::T8 => (BaseFamily::gaussian(ExpertFn::Identity), ExpertFn::Sigmoid),
        TheoremId::T9 => (BaseFamily::gaussian(ExpertFn::Sigmoid), ExpertFn::Sigmoid),
    };
    let nu0 = match (base.kind, case) {
        (crate::densities::BaseKind::StudentT, _) => 4.0,
        // merging schedules drive ν* = 0.01 + n^{-r} onto ν₀
        (_, Case::DriftI | Case::DriftIi) => 0.01,
        _ => 1.0,
    };
    Ok(ScenarioSpec { id, case, base, sigma, d, g0: ComponentParams { a: unit(d), b: 0.0, nu: nu0 } })
}

impl ScenarioSpec {
    pub fn label(&self) -> String {
        format!("{}/{}", self.id, self.case)
    }

    /// Ground truth at sample size `n`.
    pub fn truth(&self, n: usize) -> ParamPoint {
        let n = n.max(1) as f64;
        let d = self.d;
        let (lambda, a, b, nu) = match (self.id, self.case) {
            (TheoremId::T9, Case::FixedLambda) => (0.5, unit(d), 0.0, 0.01),
            (TheoremId::T9, Case::VanishingLambda) => (0.5 * n.powf(-0.25), unit(d), 0.0, 0.01),
            (TheoremId::T9, _) => {
                let s = n.powf(-0.25);
                let mut a = unit(d);
                a[0] += s;
                (0.5, a, s, 0.01 + s)
            }
            (TheoremId::T4, Case::DriftI) => {
                let s = n.powf(-0.125);
                let mut a = unit(d);
                a[0] += s;
                (0.5, a, 0.0, 0.01 + s)
            }
            (TheoremId::T4, _) => (0.5, unit(d), n.powf(-0.125), 0.01),
            (_, Case::VanishingLambda) => (0.5 * n.powf(-0.25), vec![1.0; d], 1.0, 0.01),
            _ => (0.5, vec![1.0; d], 1.0, 0.01),
        };
        ParamPoint { lambda, g: ComponentParams { a, b, nu } }
    }

    pub fn truth_model(&self, n: usize) -> Result<ContaminatedModel> {
        let t = self.truth(n);
        t.g.validate_truth()?;
        ContaminatedModel::new(t.lambda, self.base, self.g0.clone(), self.sigma, t.g)
    }

    /// Every truth on the grid must lie in `[0, 1] × Θ`.
    pub fn check_grid(&self, grid: &[usize], bounds: &ThetaBounds) -> Result<()> {
        for &n in grid {
            let t = self.truth(n);
            if !(0.0..=1.0).contains(&t.lambda) || !bounds.contains(&t.g) {
                return Err(param(format!("truth of {} at n={n} leaves the parameter box", self.label())));
            }
        }
        Ok(())
    }

    /// Stable 64-bit identifier used in seed derivation.
    pub fn hash64(&self) -> u64 {
        // FNV-1a over the label
        self.label().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
    }
}
