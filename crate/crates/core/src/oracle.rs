//! Brute-force enumeration over all state paths.
//!
//! Everything here recomputes joints and marginals from the raw model tables
//! by direct products and sums, deliberately sharing no code with the
//! forward-backward or Viterbi recursions it is used to cross-check. Costs
//! are exponential; a hard guard refuses instances beyond 1e7 paths.

use crate::alignment::{PathKind, StatePath};
use crate::error::{Error, Result};
use crate::inference::logsumexp;
use crate::model::{EmissionFamily, HmmModel, LossMatrix, ObsSeq};

/// Maximum number of paths the oracle will enumerate.
pub const PATH_GUARD: f64 = 1e7;

/// The full posterior of a short sequence, path by path.
///
/// Paths are indexed lexicographically: index 0 is all-zeros, and the state
/// at position 0 is the most significant digit.
#[derive(Debug, Clone)]
pub struct EnumeratedPosterior {
    log_joints: Vec<f64>,
    log_evidence: f64,
    marginals: Vec<f64>,
    n: usize,
    states: usize,
}

impl EnumeratedPosterior {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn num_paths(&self) -> usize {
        self.log_joints.len()
    }

    /// `ln p(x, s)` of the path with the given lexicographic index.
    pub fn log_joint(&self, index: usize) -> f64 {
        self.log_joints[index]
    }

    /// `ln p(x)`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// Decode a lexicographic path index into its state sequence.
    pub fn path(&self, index: usize) -> Vec<usize> {
        let mut digits = vec![0usize; self.n];
        let mut rest = index;
        for t in (0..self.n).rev() {
            digits[t] = rest % self.states;
            rest /= self.states;
        }
        digits
    }

    /// `P(Y_t = s | x)` obtained by summing path posteriors.
    pub fn marginal(&self, t: usize, s: usize) -> f64 {
        self.marginals[t * self.states + s]
    }

    pub fn marginal_row(&self, t: usize) -> &[f64] {
        &self.marginals[t * self.states..(t + 1) * self.states]
    }
}

/// Objectives [`brute_best`] can optimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleObjective {
    /// Maximize `ln p(x, s)`.
    Viterbi,
    /// Maximize `sum_t P(Y_t = s_t | x)`.
    Pmap,
    /// Minimize mean negative log marginal plus `c` times the log-joint risk.
    HybridLogR1(f64),
    /// Minimize expected pointwise loss plus `c` times the log-joint risk.
    HybridR1(f64),
}

fn oracle_log_density(emission: &EmissionFamily, s: usize, x: &ObsSeq, t: usize) -> f64 {
    match (emission, x) {
        (EmissionFamily::Categorical { probs }, ObsSeq::Symbols(xs)) => probs[s][xs[t]].ln(),
        (EmissionFamily::Gaussian { means, stds }, ObsSeq::Reals(xs)) => {
            let z = (xs[t] - means[s]) / stds[s];
            -0.5 * z * z - stds[s].ln() - 0.5 * std::f64::consts::TAU.ln()
        }
        (EmissionFamily::Categorical { .. }, ObsSeq::Reals(_)) => f64::NEG_INFINITY,
        (EmissionFamily::Gaussian { .. }, ObsSeq::Symbols(_)) => f64::NEG_INFINITY,
    }
}

/// Enumerate all `|S|^n` paths of `x` with their log joints and the exact
/// posterior marginals implied by them.
pub fn enumerate_paths(model: &HmmModel, x: &ObsSeq) -> Result<EnumeratedPosterior> {
    if x.is_empty() {
        return Err(Error::EmptySequence);
    }
    match (model.emission(), x) {
        (EmissionFamily::Categorical { .. }, ObsSeq::Reals(_)) => {
            return Err(Error::ObservationType { expected: "symbols" });
        }
        (EmissionFamily::Gaussian { .. }, ObsSeq::Symbols(_)) => {
            return Err(Error::ObservationType { expected: "reals" });
        }
        _ => {}
    }
    if let ObsSeq::Symbols(xs) = x {
        if let Some(alphabet) = model.emission().alphabet_size() {
            for (t, &sym) in xs.iter().enumerate() {
                if sym >= alphabet {
                    return Err(Error::SymbolOutOfRange { position: t, symbol: sym, alphabet });
                }
            }
        }
    }
    let n = x.len();
    let states = model.num_states();
    let path_count = (states as f64).powi(n as i32);
    if path_count > PATH_GUARD {
        return Err(Error::InstanceTooLarge { paths: path_count, limit: PATH_GUARD });
    }

    let emission = model.emission();
    let mut log_joints = Vec::with_capacity(path_count as usize);
    // Depth-first in state order = lexicographic order of emitted paths.
    let mut stack_states = vec![0usize; n];
    fn dfs(
        model: &HmmModel,
        emission: &EmissionFamily,
        x: &ObsSeq,
        t: usize,
        n: usize,
        acc: f64,
        path: &mut [usize],
        out: &mut Vec<f64>,
    ) {
        if t == n {
            out.push(acc);
            return;
        }
        for s in 0..model.num_states() {
            path[t] = s;
            let step = if t == 0 {
                model.initial()[s].ln()
            } else {
                model.transition_prob(path[t - 1], s).ln()
            };
            let acc2 = acc + step + oracle_log_density(emission, s, x, t);
            dfs(model, emission, x, t + 1, n, acc2, path, out);
        }
    }
    dfs(model, emission, x, 0, n, 0.0, &mut stack_states, &mut log_joints);

    let log_evidence = logsumexp(&log_joints);
    if log_evidence == f64::NEG_INFINITY {
        // Every path has probability zero: some observation is impossible.
        let position = first_impossible(model, x).unwrap_or(0);
        return Err(Error::ImpossibleObservation { position });
    }

    let mut marginals = vec![0.0; n * states];
    let mut path = vec![0usize; n];
    for (idx, &lj) in log_joints.iter().enumerate() {
        if lj == f64::NEG_INFINITY {
            continue;
        }
        let w = (lj - log_evidence).exp();
        let mut rest = idx;
        for t in (0..n).rev() {
            path[t] = rest % states;
            rest /= states;
        }
        for (t, &s) in path.iter().enumerate() {
            marginals[t * states + s] += w;
        }
    }
    for t in 0..n {
        let total: f64 = marginals[t * states..(t + 1) * states].iter().sum();
        for s in 0..states {
            marginals[t * states + s] /= total;
        }
    }

    Ok(EnumeratedPosterior { log_joints, log_evidence, marginals, n, states })
}

fn first_impossible(model: &HmmModel, x: &ObsSeq) -> Option<usize> {
    let emission = model.emission();
    (0..x.len()).find(|&t| {
        (0..model.num_states()).all(|s| oracle_log_density(emission, s, x, t) == f64::NEG_INFINITY)
    })
}

/// Exact optimizer of `objective` by scanning every path.
///
/// Ties are resolved to the lexicographically smallest path; a decoder that
/// breaks ties differently may return another path, but only with exactly
/// the same objective value. Returns the winning path and its value.
pub fn brute_best(
    model: &HmmModel,
    x: &ObsSeq,
    objective: OracleObjective,
    loss: &LossMatrix,
) -> Result<(StatePath, f64)> {
    match objective {
        OracleObjective::HybridLogR1(c) | OracleObjective::HybridR1(c) => {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::BadPenalty { c });
            }
        }
        _ => {}
    }
    if loss.dim() != model.num_states() {
        return Err(Error::LengthMismatch {
            what: "loss matrix",
            expected: model.num_states(),
            got: loss.dim(),
        });
    }
    let enumerated = enumerate_paths(model, x)?;
    let n = enumerated.n();
    let nf = n as f64;
    let maximize = matches!(objective, OracleObjective::Viterbi | OracleObjective::Pmap);

    let value_of = |idx: usize, path: &[usize]| -> f64 {
        match objective {
            OracleObjective::Viterbi => enumerated.log_joint(idx),
            OracleObjective::Pmap => {
                path.iter().enumerate().map(|(t, &s)| enumerated.marginal(t, s)).sum()
            }
            OracleObjective::HybridLogR1(c) => {
                let mut neg_log = 0.0;
                for (t, &s) in path.iter().enumerate() {
                    let m = enumerated.marginal(t, s);
                    if m == 0.0 {
                        return f64::INFINITY;
                    }
                    neg_log -= m.ln();
                }
                let rbar1 = neg_log / nf;
                if c == 0.0 {
                    rbar1
                } else {
                    let lj = enumerated.log_joint(idx);
                    if lj == f64::NEG_INFINITY {
                        f64::INFINITY
                    } else {
                        rbar1 + c * (enumerated.log_evidence() - lj) / nf
                    }
                }
            }
            OracleObjective::HybridR1(c) => {
                let mut point = 0.0;
                for (t, &s) in path.iter().enumerate() {
                    for a in 0..enumerated.states() {
                        point += loss.get(a, s) * enumerated.marginal(t, a);
                    }
                }
                let r1 = point / nf;
                if c == 0.0 {
                    r1
                } else {
                    let lj = enumerated.log_joint(idx);
                    if lj == f64::NEG_INFINITY {
                        f64::INFINITY
                    } else {
                        r1 + c * (enumerated.log_evidence() - lj) / nf
                    }
                }
            }
        }
    };

    let mut best_idx = 0;
    let mut best_value = value_of(0, &enumerated.path(0));
    for idx in 1..enumerated.num_paths() {
        let path = enumerated.path(idx);
        let v = value_of(idx, &path);
        let better = if maximize { v > best_value } else { v < best_value };
        if better {
            best_value = v;
            best_idx = idx;
        }
    }

    let kind = match objective {
        OracleObjective::Viterbi => PathKind::Viterbi,
        OracleObjective::Pmap => PathKind::Pmap,
        OracleObjective::HybridLogR1(c) => PathKind::HybridLogR1 { c },
        OracleObjective::HybridR1(c) => PathKind::HybridR1 { c },
    };
    let states = enumerated.path(best_idx);
    let log_joint = enumerated.log_joint(best_idx);
    Ok((StatePath { states, kind, log_joint }, best_value))
}
