//! Conditional risk measures of a state path given the observations.
//!
//! All risks are per-position averages in nats (or plain loss units for the
//! pointwise risk). Infinite values arise legitimately, e.g. the log-joint
//! risk of a path that uses a forbidden transition; they are carried as an
//! explicit [`RiskValue::Infinite`] flag, never as a sentinel number.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::alignment::StatePath;
use crate::error::{Error, Result};
use crate::inference::Posteriors;
use crate::model::{HmmModel, LossMatrix};

/// A nonnegative risk that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskValue {
    Finite(f64),
    Infinite,
}

impl RiskValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, Self::Finite(_))
    }

    /// The finite value, or `None` when the risk is infinite.
    pub fn finite(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            Self::Infinite => None,
        }
    }

    pub fn expect_finite(&self, what: &str) -> f64 {
        self.finite().unwrap_or_else(|| panic!("{what} is infinite"))
    }
}

impl std::fmt::Display for RiskValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v}"),
            Self::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for RiskValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => serializer.serialize_f64(*v),
            Self::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for RiskValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Ok(Self::Finite(v)),
            Raw::Text(s) if s == "inf" => Ok(Self::Infinite),
            Raw::Text(s) => Err(D::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

/// Risks of one path given one observation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// Expected pointwise loss under the smoothing marginals.
    pub r1: f64,
    /// Mean negative log marginal along the path.
    pub rbar1: RiskValue,
    /// Negative log posterior path probability divided by n.
    pub rbar_inf: RiskValue,
    /// `rbar1 + c * rbar_inf` per requested penalty `c`.
    #[serde(serialize_with = "ser_c_map", deserialize_with = "de_c_map")]
    pub rbar_c: Vec<(f64, RiskValue)>,
    /// Realized mean loss against a truth path, when one was supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub empirical_r1: Option<f64>,
}

fn ser_c_map<S: Serializer>(
    entries: &[(f64, RiskValue)],
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = serializer.serialize_map(Some(entries.len()))?;
    for (c, v) in entries {
        map.serialize_entry(&format!("{c}"), v)?;
    }
    map.end()
}

fn de_c_map<'de, D: Deserializer<'de>>(
    deserializer: D,
) -> std::result::Result<Vec<(f64, RiskValue)>, D::Error> {
    let raw: BTreeMap<String, RiskValue> = BTreeMap::deserialize(deserializer)?;
    let mut out = Vec::with_capacity(raw.len());
    for (k, v) in raw {
        let c: f64 = k.parse().map_err(|_| D::Error::custom(format!("bad penalty key {k:?}")))?;
        out.push((c, v));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

impl RiskReport {
    /// The `rbar_c` entry for penalty `c`, if it was requested.
    pub fn rbar_c_at(&self, c: f64) -> Option<RiskValue> {
        self.rbar_c.iter().find(|(k, _)| *k == c).map(|(_, v)| *v)
    }
}

/// Evaluate every risk of `path` under the smoothing `posteriors`.
///
/// `c_grid` lists the penalties for the combined risk; each must be finite
/// and nonnegative. At `c = 0` the combined risk equals `rbar1` exactly, with
/// no `0 * inf` product even for paths of zero joint probability.
pub fn evaluate_risks(
    model: &HmmModel,
    posteriors: &Posteriors,
    path: &StatePath,
    loss: &LossMatrix,
    c_grid: &[f64],
) -> Result<RiskReport> {
    let n = posteriors.n();
    let states = model.num_states();
    if path.len() != n {
        return Err(Error::LengthMismatch { what: "state path", expected: n, got: path.len() });
    }
    if posteriors.states() != states {
        return Err(Error::LengthMismatch { what: "posterior states", expected: states, got: posteriors.states() });
    }
    if loss.dim() != states {
        return Err(Error::LengthMismatch { what: "loss matrix", expected: states, got: loss.dim() });
    }
    for &c in c_grid {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::BadPenalty { c });
        }
    }
    for (t, &s) in path.states.iter().enumerate() {
        if s >= states {
            return Err(Error::StateOutOfRange { position: t, state: s, states });
        }
    }

    let nf = n as f64;
    let mut r1_sum = 0.0;
    let mut log_marg_sum = 0.0;
    let mut hit_zero_marginal = false;
    for (t, &s) in path.states.iter().enumerate() {
        let row = posteriors.smoothing_row(t);
        for (a, &pa) in row.iter().enumerate() {
            r1_sum += loss.get(a, s) * pa;
        }
        let m = row[s];
        if m == 0.0 {
            hit_zero_marginal = true;
        } else {
            log_marg_sum += m.ln();
        }
    }
    let r1 = r1_sum / nf;
    let rbar1 = if hit_zero_marginal {
        RiskValue::Infinite
    } else {
        RiskValue::Finite(-log_marg_sum / nf)
    };
    let rbar_inf = if path.log_joint == f64::NEG_INFINITY {
        RiskValue::Infinite
    } else {
        RiskValue::Finite((posteriors.log_likelihood() - path.log_joint) / nf)
    };

    let rbar_c = c_grid
        .iter()
        .map(|&c| {
            let combined = if c == 0.0 {
                rbar1
            } else {
                match (rbar1, rbar_inf) {
                    (RiskValue::Finite(a), RiskValue::Finite(b)) => RiskValue::Finite(a + c * b),
                    _ => RiskValue::Infinite,
                }
            };
            (c, combined)
        })
        .collect();

    Ok(RiskReport { r1, rbar1, rbar_inf, rbar_c, empirical_r1: None })
}

/// Realized mean loss of `path` against the truth `y`.
pub fn empirical_r1(y: &[usize], path: &StatePath, loss: &LossMatrix) -> Result<f64> {
    if y.len() != path.len() {
        return Err(Error::LengthMismatch { what: "truth path", expected: path.len(), got: y.len() });
    }
    let dim = loss.dim();
    let mut sum = 0.0;
    for (t, (&a, &b)) in y.iter().zip(&path.states).enumerate() {
        if a >= dim {
            return Err(Error::StateOutOfRange { position: t, state: a, states: dim });
        }
        if b >= dim {
            return Err(Error::StateOutOfRange { position: t, state: b, states: dim });
        }
        sum += loss.get(a, b);
    }
    Ok(sum / y.len() as f64)
}
