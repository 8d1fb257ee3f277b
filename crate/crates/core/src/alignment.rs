//! Decoders: Viterbi, pointwise posterior argmax, and penalized hybrids that
//! interpolate between the two.
//!
//! Every dynamic program breaks ties toward the smallest state index, both at
//! interior backtrack decisions and at the final state, so decoded paths are
//! deterministic functions of their inputs.

use crate::error::{Error, Result};
use crate::inference::Posteriors;
use crate::model::{HmmModel, LogEmissions, ObsSeq};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathKind {
    Viterbi,
    Pmap,
    HybridLogR1 { c: f64 },
    HybridR1 { c: f64 },
    Truth,
    External,
}

impl std::fmt::Display for PathKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Viterbi => write!(f, "viterbi"),
            Self::Pmap => write!(f, "pmap"),
            Self::HybridLogR1 { c } => write!(f, "hybrid_logr1(c={c})"),
            Self::HybridR1 { c } => write!(f, "hybrid_r1(c={c})"),
            Self::Truth => write!(f, "truth"),
            Self::External => write!(f, "external"),
        }
    }
}

/// A decoded (or supplied) state sequence with its log joint density
/// `ln p(x_1..x_n, s_1..s_n)`. The log joint is `-inf` when the path uses a
/// forbidden transition or an emission of density zero, which pointwise
/// decoders are allowed to do.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub states: Vec<usize>,
    pub kind: PathKind,
    pub log_joint: f64,
}

impl StatePath {
    /// Wrap an externally produced path, computing its log joint under the
    /// model. Validates length against `x` and the state range.
    pub fn new(model: &HmmModel, x: &ObsSeq, states: Vec<usize>, kind: PathKind) -> Result<Self> {
        if states.len() != x.len() {
            return Err(Error::LengthMismatch { what: "state path", expected: x.len(), got: states.len() });
        }
        let le = model.log_emission_matrix(x)?;
        for (t, &s) in states.iter().enumerate() {
            if s >= model.num_states() {
                return Err(Error::StateOutOfRange { position: t, state: s, states: model.num_states() });
            }
        }
        let log_joint = compute_log_joint(model, &le, &states);
        Ok(Self { states, kind, log_joint })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Log joint of a concrete path, accumulated in the same order as the
/// forward recursion (initial, then transition and emission per step).
pub(crate) fn compute_log_joint(model: &HmmModel, le: &LogEmissions, states: &[usize]) -> f64 {
    let mut acc = model.log_initial(states[0]) + le.row(0)[states[0]];
    for t in 1..states.len() {
        acc += model.log_transition(states[t - 1], states[t]);
        acc += le.row(t)[states[t]];
    }
    acc
}

/// Index of the maximum, smallest index on exact ties.
#[inline]
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Maximum a posteriori path: maximizes `ln p(x_1..x_n, s_1..s_n)`.
pub fn viterbi(model: &HmmModel, x: &ObsSeq) -> Result<StatePath> {
    let le = model.log_emission_matrix(x)?;
    Ok(viterbi_from(model, &le))
}

pub(crate) fn viterbi_from(model: &HmmModel, le: &LogEmissions) -> StatePath {
    let path = viterbi_states_len(model, le, le.n());
    let log_joint = compute_log_joint(model, le, &path);
    StatePath { states: path, kind: PathKind::Viterbi, log_joint }
}

/// Viterbi states over the first `n` positions of a (possibly longer)
/// emission matrix; used to decode many prefixes of one sequence cheaply.
pub(crate) fn viterbi_states_len(model: &HmmModel, le: &LogEmissions, n: usize) -> Vec<usize> {
    debug_assert!(n >= 1 && n <= le.n());
    let states = le.states();
    let mut delta: Vec<f64> = (0..states).map(|s| model.log_initial(s) + le.row(0)[s]).collect();
    let mut back: Vec<usize> = Vec::with_capacity(n.saturating_sub(1) * states);
    let mut next = vec![0.0; states];
    for t in 1..n {
        let row = le.row(t);
        for j in 0..states {
            let mut best_i = 0;
            let mut best = delta[0] + model.log_transition(0, j);
            for i in 1..states {
                let v = delta[i] + model.log_transition(i, j);
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            next[j] = best + row[j];
            back.push(best_i);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut path = vec![0usize; n];
    path[n - 1] = argmax_first(&delta);
    for t in (1..n).rev() {
        path[t - 1] = back[(t - 1) * states + path[t]];
    }
    path
}

/// Pointwise posterior argmax: maximizes each smoothing marginal separately.
/// The result may traverse forbidden transitions; its log joint is then `-inf`.
pub fn pmap(model: &HmmModel, x: &ObsSeq, posteriors: &Posteriors) -> Result<StatePath> {
    check_posterior_shape(model, x, posteriors)?;
    let le = model.log_emission_matrix(x)?;
    let path: Vec<usize> = (0..posteriors.n())
        .map(|t| argmax_first(posteriors.smoothing_row(t)))
        .collect();
    let log_joint = compute_log_joint(model, &le, &path);
    Ok(StatePath { states: path, kind: PathKind::Pmap, log_joint })
}

/// Penalized decoder maximizing
/// `sum_t ln p_t(s_t | x) + c * ln p(x, s)` for `c >= 0`.
///
/// At `c = 0` the transition and emission terms are dropped entirely (no
/// `0 * (-inf)` products arise) and the result is exactly the pointwise
/// argmax path; as `c` grows the decoder deforms into Viterbi.
pub fn hybrid_log_r1(
    model: &HmmModel,
    x: &ObsSeq,
    posteriors: &Posteriors,
    c: f64,
) -> Result<StatePath> {
    hybrid_impl(model, x, posteriors, c, true)
}

/// Same recursion with the raw marginal `p_t(s_t | x)` as the pointwise
/// reward instead of its logarithm; minimizes symmetric-loss pointwise risk
/// plus `c` times the log-joint penalty.
pub fn hybrid_r1(
    model: &HmmModel,
    x: &ObsSeq,
    posteriors: &Posteriors,
    c: f64,
) -> Result<StatePath> {
    hybrid_impl(model, x, posteriors, c, false)
}

fn hybrid_impl(
    model: &HmmModel,
    x: &ObsSeq,
    posteriors: &Posteriors,
    c: f64,
    log_pointwise: bool,
) -> Result<StatePath> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::BadPenalty { c });
    }
    check_posterior_shape(model, x, posteriors)?;
    let le = model.log_emission_matrix(x)?;
    let n = posteriors.n();
    let states = posteriors.states();
    // scale(v) = c * v with the convention that c = 0 kills the term even
    // when v = -inf.
    let scale = |v: f64| if c == 0.0 { 0.0 } else { c * v };
    let reward = |t: usize, s: usize| {
        let m = posteriors.marginal(t, s);
        if log_pointwise {
            m.ln()
        } else {
            m
        }
    };

    let mut delta: Vec<f64> = (0..states)
        .map(|s| reward(0, s) + scale(model.log_initial(s) + le.row(0)[s]))
        .collect();
    let mut back: Vec<usize> = Vec::with_capacity(n.saturating_sub(1) * states);
    let mut next = vec![0.0; states];
    for t in 1..n {
        for j in 0..states {
            let mut best_i = 0;
            let mut best = delta[0] + scale(model.log_transition(0, j));
            for i in 1..states {
                let v = delta[i] + scale(model.log_transition(i, j));
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            next[j] = reward(t, j) + scale(le.row(t)[j]) + best;
            back.push(best_i);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut path = vec![0usize; n];
    path[n - 1] = argmax_first(&delta);
    for t in (1..n).rev() {
        path[t - 1] = back[(t - 1) * states + path[t]];
    }
    let log_joint = compute_log_joint(model, &le, &path);
    let kind = if log_pointwise {
        PathKind::HybridLogR1 { c }
    } else {
        PathKind::HybridR1 { c }
    };
    Ok(StatePath { states: path, kind, log_joint })
}

fn check_posterior_shape(model: &HmmModel, x: &ObsSeq, posteriors: &Posteriors) -> Result<()> {
    if posteriors.n() != x.len() {
        return Err(Error::LengthMismatch { what: "posteriors", expected: x.len(), got: posteriors.n() });
    }
    if posteriors.states() != model.num_states() {
        return Err(Error::LengthMismatch {
            what: "posterior states",
            expected: model.num_states(),
            got: posteriors.states(),
        });
    }
    Ok(())
}
