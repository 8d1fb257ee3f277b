//! Log-space forward-backward smoothing and posterior forgetting profiles.

use crate::error::{Error, Result};
use crate::model::{HmmModel, LogEmissions, ObsSeq};

/// `ln sum_i exp(v_i)` without overflow; `-inf` for an all-`-inf` input.
pub(crate) fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Smoothing posteriors of a sequence under a model.
///
/// `smoothing` holds `P(Y_t = s | x_1..x_n)` row by row; each row is
/// renormalized so it sums to one exactly up to division error. `log_alpha`
/// and `log_beta` are the unnormalized forward and backward log messages:
/// `alpha_t(s) = ln p(x_1..x_t, Y_t = s)`, `beta_t(s) = ln p(x_{t+1}..x_n | Y_t = s)`.
#[derive(Debug, Clone)]
pub struct Posteriors {
    log_likelihood: f64,
    smoothing: Vec<f64>,
    log_alpha: Vec<f64>,
    log_beta: Vec<f64>,
    n: usize,
    states: usize,
}

impl Posteriors {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// `ln p(x_1..x_n)`.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// `ln p(x_1..x_m)` for `1 <= m <= n`, read off the forward messages.
    pub fn prefix_log_likelihood(&self, m: usize) -> f64 {
        assert!(m >= 1 && m <= self.n, "prefix length {m} outside 1..={}", self.n);
        logsumexp(&self.log_alpha[(m - 1) * self.states..m * self.states])
    }

    pub fn smoothing_row(&self, t: usize) -> &[f64] {
        &self.smoothing[t * self.states..(t + 1) * self.states]
    }

    #[inline]
    pub fn marginal(&self, t: usize, s: usize) -> f64 {
        self.smoothing[t * self.states + s]
    }

    pub fn log_alpha_row(&self, t: usize) -> &[f64] {
        &self.log_alpha[t * self.states..(t + 1) * self.states]
    }

    pub fn log_beta_row(&self, t: usize) -> &[f64] {
        &self.log_beta[t * self.states..(t + 1) * self.states]
    }
}

/// Exact smoothing by the forward-backward recursions, entirely in log space.
///
/// Errors when some observation has zero likelihood under every state that
/// can be reached (the sequence then has zero probability; there is no
/// posterior to report).
pub fn forward_backward(model: &HmmModel, x: &ObsSeq) -> Result<Posteriors> {
    let le = model.log_emission_matrix(x)?;
    forward_backward_from(model, &le)
}

pub(crate) fn forward_backward_from(model: &HmmModel, le: &LogEmissions) -> Result<Posteriors> {
    forward_backward_len(model, le, le.n())
}

/// Forward-backward over the first `n` positions of a (possibly longer)
/// emission matrix; lets callers smooth many prefixes of one sequence
/// without recomputing densities.
pub(crate) fn forward_backward_len(
    model: &HmmModel,
    le: &LogEmissions,
    n: usize,
) -> Result<Posteriors> {
    debug_assert!(n >= 1 && n <= le.n());
    let states = le.states();
    let mut log_alpha = vec![f64::NEG_INFINITY; n * states];
    let mut scratch = vec![0.0; states];

    for s in 0..states {
        log_alpha[s] = model.log_initial(s) + le.row(0)[s];
    }
    if log_alpha[..states].iter().all(|&v| v == f64::NEG_INFINITY) {
        return Err(Error::ImpossibleObservation { position: 0 });
    }
    for t in 1..n {
        let (prev, cur) = log_alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        let row = le.row(t);
        let mut all_impossible = true;
        for j in 0..states {
            for (i, slot) in scratch.iter_mut().enumerate() {
                *slot = prev[i] + model.log_transition(i, j);
            }
            let v = logsumexp(&scratch) + row[j];
            cur[j] = v;
            if v != f64::NEG_INFINITY {
                all_impossible = false;
            }
        }
        if all_impossible {
            return Err(Error::ImpossibleObservation { position: t });
        }
    }

    let mut log_beta = vec![0.0; n * states];
    for t in (0..n - 1).rev() {
        let row_next = le.row(t + 1);
        for s in 0..states {
            for (j, slot) in scratch.iter_mut().enumerate() {
                *slot = model.log_transition(s, j) + row_next[j] + log_beta[(t + 1) * states + j];
            }
            log_beta[t * states + s] = logsumexp(&scratch);
        }
    }

    let log_likelihood = logsumexp(&log_alpha[(n - 1) * states..]);
    let mut smoothing = vec![0.0; n * states];
    for t in 0..n {
        let mut total = 0.0;
        for s in 0..states {
            let w = (log_alpha[t * states + s] + log_beta[t * states + s] - log_likelihood).exp();
            smoothing[t * states + s] = w;
            total += w;
        }
        // total is 1 up to round-off; dividing pins each row to an exact
        // probability vector.
        for s in 0..states {
            smoothing[t * states + s] /= total;
        }
    }

    Ok(Posteriors { log_likelihood, smoothing, log_alpha, log_beta, n, states })
}

/// Total variation distance `0.5 * sum_s |p_s - q_s|` between two
/// distributions on the same finite set.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { what: "tv_distance", expected: p.len(), got: q.len() });
    }
    for (label, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if v.iter().any(|&e| e < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig {
                reason: format!("tv_distance argument {label} is not a distribution (sum {sum})"),
            });
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// How quickly the smoothing marginal at a fixed position forgets the end of
/// its observation window.
///
/// `tv[k]` compares `P(Y_t | x_1..x_{t+gaps[k]})` against the marginal under
/// the longest window in `gaps`. Decay of `tv` in the gap is the finite-n
/// face of exponential posterior forgetting.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingProfile {
    /// Anchor position (0-based).
    pub t: usize,
    pub gaps: Vec<usize>,
    pub tv: Vec<f64>,
    /// Least-squares slope of `ln(tv + 1e-300)` against the gap, fitted over
    /// entries with `tv > 1e-14`; `None` when fewer than two entries qualify.
    pub fitted_log_slope: Option<f64>,
}

/// Profile of windowed marginals at anchor `t` (0-based): for each gap `g`
/// the marginal uses observations `x_1..x_{t+g}` only.
///
/// Preconditions: `gaps` strictly increasing, and `t + max(gaps) <= n - 1`.
pub fn forgetting_profile(
    model: &HmmModel,
    x: &ObsSeq,
    t: usize,
    gaps: &[usize],
) -> Result<ForgettingProfile> {
    if gaps.is_empty() || gaps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadConfig { reason: "gaps must be nonempty and strictly increasing".into() });
    }
    let max_gap = *gaps.last().unwrap();
    let n = x.len();
    if t + max_gap > n.saturating_sub(1) {
        return Err(Error::BadConfig {
            reason: format!("anchor {t} plus max gap {max_gap} exceeds the last index {}", n - 1),
        });
    }
    let le = model.log_emission_matrix(x)?;
    let states = le.states();

    // Rolling forward pass through t + max_gap; keep the alpha row at t.
    let mut alpha = vec![f64::NEG_INFINITY; states];
    let mut alpha_at_t = vec![f64::NEG_INFINITY; states];
    let mut scratch = vec![0.0; states];
    for s in 0..states {
        alpha[s] = model.log_initial(s) + le.row(0)[s];
    }
    if alpha.iter().all(|&v| v == f64::NEG_INFINITY) {
        return Err(Error::ImpossibleObservation { position: 0 });
    }
    if t == 0 {
        alpha_at_t.copy_from_slice(&alpha);
    }
    for u in 1..=t + max_gap {
        let row = le.row(u);
        let prev = alpha.clone();
        for j in 0..states {
            for (i, slot) in scratch.iter_mut().enumerate() {
                *slot = prev[i] + model.log_transition(i, j);
            }
            alpha[j] = logsumexp(&scratch) + row[j];
        }
        if alpha.iter().all(|&v| v == f64::NEG_INFINITY) {
            return Err(Error::ImpossibleObservation { position: u });
        }
        if u == t {
            alpha_at_t.copy_from_slice(&alpha);
        }
    }

    let marginals: Vec<Vec<f64>> = gaps
        .iter()
        .map(|&g| windowed_marginal(model, &le, &alpha_at_t, t, t + g))
        .collect();
    let reference = marginals.last().unwrap();
    let tv: Vec<f64> = marginals
        .iter()
        .map(|m| tv_distance(m, reference).expect("same support"))
        .collect();

    let points: Vec<(f64, f64)> = gaps
        .iter()
        .zip(&tv)
        .filter(|&(_, &d)| d > 1e-14)
        .map(|(&g, &d)| (g as f64, (d + 1e-300).ln()))
        .collect();
    let fitted_log_slope = least_squares_slope(&points);

    Ok(ForgettingProfile { t, gaps: gaps.to_vec(), tv, fitted_log_slope })
}

/// `P(Y_t | x_1..x_{end})` (`end` is a 0-based index, `end >= t`) from the
/// stored forward row at `t` and a fresh backward pass over the suffix.
fn windowed_marginal(
    model: &HmmModel,
    le: &LogEmissions,
    alpha_at_t: &[f64],
    t: usize,
    end: usize,
) -> Vec<f64> {
    let states = le.states();
    let mut beta = vec![0.0; states];
    let mut scratch = vec![0.0; states];
    for u in (t..end).rev() {
        let row_next = le.row(u + 1);
        let prev = beta.clone();
        for s in 0..states {
            for (j, slot) in scratch.iter_mut().enumerate() {
                *slot = model.log_transition(s, j) + row_next[j] + prev[j];
            }
            beta[s] = logsumexp(&scratch);
        }
    }
    let joint: Vec<f64> = (0..states).map(|s| alpha_at_t[s] + beta[s]).collect();
    let norm = logsumexp(&joint);
    let mut out: Vec<f64> = joint.iter().map(|&v| (v - norm).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
