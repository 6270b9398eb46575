//! Expert (mean-link) functions and their first two derivatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Scalar link applied to the linear index `aᵀx + b`.
///
/// Serialized as its config string (`"sigmoid"`, `"affine:2:0.5"`, ...).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ExpertFn {
    Identity,
    Affine { slope: f64, offset: f64 },
    Sigmoid,
    ReLU,
    Tanh,
}

impl ExpertFn {
    /// Affine expert; a zero slope would make the expert constant.
    pub fn affine(slope: f64, offset: f64) -> Result<Self> {
        if slope == 0.0 || !slope.is_finite() || !offset.is_finite() {
            return Err(param("affine expert requires a finite non-zero slope"));
        }
        Ok(ExpertFn::Affine { slope, offset })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ExpertFn::Affine { slope, offset } => Self::affine(slope, offset).map(|_| ()),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            ExpertFn::Identity => z,
            ExpertFn::Affine { slope, offset } => slope * z + offset,
            ExpertFn::Sigmoid => sigmoid(z),
            ExpertFn::ReLU => z.max(0.0),
            ExpertFn::Tanh => z.tanh(),
        }
    }

    #[inline]
    pub fn deriv1(&self, z: f64) -> f64 {
        match *self {
            ExpertFn::Identity => 1.0,
            ExpertFn::Affine { slope, .. } => slope,
            ExpertFn::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            // subgradient 0 at the kink
            ExpertFn::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ExpertFn::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    #[inline]
    pub fn deriv2(&self, z: f64) -> f64 {
        match *self {
            ExpertFn::Identity | ExpertFn::Affine { .. } | ExpertFn::ReLU => 0.0,
            ExpertFn::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            ExpertFn::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Value together with the first derivative, sharing the transcendental call.
    #[inline]
    pub fn eval_d1(&self, z: f64) -> (f64, f64) {
        match *self {
            ExpertFn::Sigmoid => {
                let s = sigmoid(z);
                (s, s * (1.0 - s))
            }
            ExpertFn::Tanh => {
                let t = z.tanh();
                (t, 1.0 - t * t)
            }
            _ => (self.eval(z), self.deriv1(z)),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ExpertFn::Identity | ExpertFn::Affine { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExpertFn::Identity => "identity",
            ExpertFn::Affine { .. } => "affine",
            ExpertFn::Sigmoid => "sigmoid",
            ExpertFn::ReLU => "relu",
            ExpertFn::Tanh => "tanh",
        }
    }
}

/// Logistic function, branch-stable for large |z|.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for ExpertFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpertFn::Affine { slope, offset } => write!(f, "affine:{slope}:{offset}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Parses `identity`, `sigmoid`, `relu`, `tanh`, or `affine:<slope>:<offset>`.
impl FromStr for ExpertFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let head = parts.next().unwrap_or_default();
        let expert = match head {
            "identity" => ExpertFn::Identity,
            "sigmoid" => ExpertFn::Sigmoid,
            "relu" => ExpertFn::ReLU,
            "tanh" => ExpertFn::Tanh,
            "affine" => {
                let nums: Vec<f64> = parts
                    .by_ref()
                    .map(|p| p.parse::<f64>().map_err(|_| param(format!("bad affine parameter {p:?}"))))
                    .collect::<Result<_>>()?;
                if nums.len() != 2 {
                    return Err(param("affine expert takes exactly two parameters"));
                }
                return ExpertFn::affine(nums[0], nums[1]);
            }
            other => return Err(param(format!("unknown expert {other:?}"))),
        };
        if parts.next().is_some() {
            return Err(param(format!("expert {head:?} takes no parameters")));
        }
        Ok(expert)
    }
}

impl TryFrom<String> for ExpertFn {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ExpertFn> for String {
    fn from(f: ExpertFn) -> String {
        f.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [ExpertFn; 5] = [
        ExpertFn::Identity,
        ExpertFn::Affine { slope: -1.3, offset: 0.4 },
        ExpertFn::Sigmoid,
        ExpertFn::ReLU,
        ExpertFn::Tanh,
    ];

    #[test]
    fn point_values() {
        assert_eq!(ExpertFn::Sigmoid.eval(0.0), 0.5);
        assert_eq!(ExpertFn::Identity.eval(1.7), 1.7);
        assert_eq!(ExpertFn::ReLU.eval(-3.0), 0.0);
        assert_eq!(ExpertFn::Sigmoid.deriv1(0.0), 0.25);
        assert_eq!(ExpertFn::Affine { slope: 2.0, offset: 3.0 }.deriv1(10.0), 2.0);
        assert_eq!(ExpertFn::Tanh.deriv1(0.0), 1.0);
        assert_eq!(ExpertFn::Identity.deriv2(5.0), 0.0);
        assert_eq!(ExpertFn::Sigmoid.deriv2(0.0), 0.0);
        assert_eq!(ExpertFn::Tanh.deriv2(0.0), 0.0);
        assert_eq!(ExpertFn::ReLU.deriv1(0.0), 0.0);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!(sigmoid(-745.0) > 0.0);
        assert!(ExpertFn::Sigmoid.deriv1(800.0).is_finite());
    }

    #[test]
    fn identity_matches_unit_affine() {
        let unit = ExpertFn::affine(1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let z: f64 = rng.random_range(-10.0..10.0);
            assert_eq!(ExpertFn::Identity.eval(z), unit.eval(z));
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for f in ALL {
            for _ in 0..1000 {
                let z: f64 = rng.random_range(-10.0..10.0);
                if matches!(f, ExpertFn::ReLU) && z.abs() <= h {
                    continue;
                }
                let fd1 = (f.eval(z + h) - f.eval(z - h)) / (2.0 * h);
                let d1 = f.deriv1(z);
                assert!((d1 - fd1).abs() <= 1e-5 * (1.0 + d1.abs()), "{f} d1 at {z}: {d1} vs {fd1}");
                let fd2 = (f.deriv1(z + h) - f.deriv1(z - h)) / (2.0 * h);
                let d2 = f.deriv2(z);
                assert!((d2 - fd2).abs() <= 1e-5 * (1.0 + d2.abs()), "{f} d2 at {z}: {d2} vs {fd2}");
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for f in ALL {
            assert_eq!(f.to_string().parse::<ExpertFn>().unwrap(), f);
        }
        assert!("affine:0:1".parse::<ExpertFn>().is_err());
        assert!("affine:1".parse::<ExpertFn>().is_err());
        assert!("softplus".parse::<ExpertFn>().is_err());
        assert!("relu:2".parse::<ExpertFn>().is_err());
    }

    #[test]
    fn json_shape() {
        let s = serde_json::to_string(&ExpertFn::Affine { slope: 2.0, offset: 0.5 }).unwrap();
        assert_eq!(s, r#""affine:2:0.5""#);
        let r: ExpertFn = serde_json::from_str(r#""relu""#).unwrap();
        assert_eq!(r, ExpertFn::ReLU);
    }
}
