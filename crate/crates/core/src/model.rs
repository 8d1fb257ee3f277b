//! Hidden Markov model definition, validation, and sampling.
//!
//! A model is a finite hidden chain `Y` with transition matrix `P` and initial
//! law `pi`, plus per-state emission densities `f_s`. Observations are either
//! symbols in a finite alphabet (categorical emissions) or reals (Gaussian).
//! All log quantities are natural logarithms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelViolation, Result};

/// Tolerance for rows and vectors that must sum to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// On-disk model schema.
///
/// ```json
/// {"states": 2,
///  "transition": [[0.9, 0.1], [0.2, 0.8]],
///  "initial": "stationary",
///  "emission": {"type": "categorical", "probs": [[0.8, 0.2], [0.3, 0.7]]}}
/// ```
///
/// `initial` is either an explicit probability vector or the string
/// `"stationary"`, in which case the stationary law of `transition` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub states: usize,
    pub transition: Vec<Vec<f64>>,
    pub initial: InitialSpec,
    pub emission: EmissionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Tag(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EmissionSpec {
    Categorical { probs: Vec<Vec<f64>> },
    Gaussian { means: Vec<f64>, stds: Vec<f64> },
}

/// Emission family of a validated model.
#[derive(Debug, Clone, PartialEq)]
pub enum EmissionFamily {
    /// `probs[s][x]` is the probability of symbol `x` in state `s`.
    Categorical { probs: Vec<Vec<f64>> },
    /// Univariate normals with per-state mean and standard deviation.
    Gaussian { means: Vec<f64>, stds: Vec<f64> },
}

impl EmissionFamily {
    /// Alphabet size for categorical models, `None` for Gaussian ones.
    pub fn alphabet_size(&self) -> Option<usize> {
        match self {
            Self::Categorical { probs } => Some(probs[0].len()),
            Self::Gaussian { .. } => None,
        }
    }
}

/// An observation sequence; the variant must match the emission family.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsSeq {
    Symbols(Vec<usize>),
    Reals(Vec<f64>),
}

impl ObsSeq {
    pub fn len(&self) -> usize {
        match self {
            Self::Symbols(v) => v.len(),
            Self::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The prefix of the first `n` observations.
    pub fn prefix(&self, n: usize) -> ObsSeq {
        match self {
            Self::Symbols(v) => Self::Symbols(v[..n].to_vec()),
            Self::Reals(v) => Self::Reals(v[..n].to_vec()),
        }
    }
}

/// A sampled observation sequence together with the hidden truth path.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: ObsSeq,
    pub y: Vec<usize>,
    pub seed: u64,
}

/// Per-position log emission densities, row-major `n x |S|`.
///
/// Computed once per (model, sequence) pair so the dynamic programs never
/// touch the emission family directly.
#[derive(Debug, Clone)]
pub struct LogEmissions {
    data: Vec<f64>,
    n: usize,
    states: usize,
}

#[cfg(test)]
impl LogEmissions {
    /// Test hook: add a constant to every entry, i.e. rescale all densities
    /// by the same positive factor.
    pub(crate) fn shift_all(&mut self, delta: f64) {
        for v in &mut self.data {
            *v += delta;
        }
    }
}

impl LogEmissions {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.states..(t + 1) * self.states]
    }
}

/// A pointwise loss `l(a, b)`: nonnegative, zero exactly on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    entries: Vec<Vec<f64>>,
}

impl LossMatrix {
    /// The symmetric (0/1) loss on `states` states.
    pub fn symmetric(states: usize) -> Self {
        let entries = (0..states)
            .map(|a| (0..states).map(|b| if a == b { 0.0 } else { 1.0 }).collect())
            .collect();
        Self { entries }
    }

    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        let n = entries.len();
        for (a, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(Error::BadLoss { reason: format!("row {a} has length {}, want {n}", row.len()) });
            }
            for (b, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::BadLoss { reason: format!("entry ({a},{b}) = {v}") });
                }
                if a == b && v != 0.0 {
                    return Err(Error::BadLoss { reason: format!("diagonal entry ({a},{a}) = {v} must be 0") });
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a][b]
    }
}

/// A validated hidden Markov model.
///
/// Construction goes through [`HmmModel::from_spec`], which enforces:
/// row-stochastic transition and emission tables, a normalized initial law,
/// irreducibility and aperiodicity of the transition matrix, and strictly
/// positive Gaussian standard deviations. Instances are immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    states: usize,
    transition: Vec<Vec<f64>>,
    initial: Vec<f64>,
    stationary_initial: bool,
    emission: EmissionFamily,
    log_transition: Vec<f64>,
    log_initial: Vec<f64>,
}

impl HmmModel {
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let violations = validate_spec(&spec);
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        let (initial, stationary_initial) = match &spec.initial {
            InitialSpec::Tag(_) => {
                // Irreducibility was just checked, so the solve cannot fail.
                let pi = stationary_distribution(&spec.transition)
                    .expect("validated chain has a stationary law");
                (pi, true)
            }
            InitialSpec::Explicit(v) => (v.clone(), false),
        };
        let emission = match spec.emission {
            EmissionSpec::Categorical { probs } => EmissionFamily::Categorical { probs },
            EmissionSpec::Gaussian { means, stds } => EmissionFamily::Gaussian { means, stds },
        };
        let states = spec.states;
        let log_transition = spec
            .transition
            .iter()
            .flat_map(|row| row.iter().map(|&p| p.ln()))
            .collect();
        let log_initial = initial.iter().map(|&p| p.ln()).collect();
        Ok(Self {
            states,
            transition: spec.transition,
            initial,
            stationary_initial,
            emission,
            log_transition,
            log_initial,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(json).map_err(|e| Error::BadConfig {
            reason: format!("model JSON does not parse: {e}"),
        })?;
        Self::from_spec(spec)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            states: self.states,
            transition: self.transition.clone(),
            initial: if self.stationary_initial {
                InitialSpec::Tag("stationary".into())
            } else {
                InitialSpec::Explicit(self.initial.clone())
            },
            emission: match &self.emission {
                EmissionFamily::Categorical { probs } => {
                    EmissionSpec::Categorical { probs: probs.clone() }
                }
                EmissionFamily::Gaussian { means, stds } => {
                    EmissionSpec::Gaussian { means: means.clone(), stds: stds.clone() }
                }
            },
        }
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    #[inline]
    pub fn transition_prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    #[inline]
    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.log_transition[from * self.states + to]
    }

    /// The resolved initial law (the stationary law when requested as such).
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    #[inline]
    pub fn log_initial(&self, s: usize) -> f64 {
        self.log_initial[s]
    }

    pub fn emission(&self) -> &EmissionFamily {
        &self.emission
    }

    /// Stationary law of the transition matrix (independent of `initial`).
    pub fn stationary_distribution(&self) -> Vec<f64> {
        stationary_distribution(&self.transition).expect("validated chain has a stationary law")
    }

    /// Entropy rate of the hidden chain under its stationary law,
    /// `-sum_i pi_i sum_j P(i,j) ln P(i,j)`, in nats.
    pub fn markov_entropy_rate(&self) -> f64 {
        entropy_rate(&self.transition, &self.stationary_distribution())
    }

    /// `E[ln f_s(X) | Y = s]`: expectation of the log density under its own
    /// state. Closed form; for Gaussians it is `-ln(sigma * sqrt(2 pi)) - 1/2`.
    pub fn expected_log_emission(&self, s: usize) -> f64 {
        match &self.emission {
            EmissionFamily::Categorical { probs } => probs[s]
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum(),
            EmissionFamily::Gaussian { stds, .. } => {
                -0.5 * (std::f64::consts::TAU.ln() + 2.0 * stds[s].ln()) - 0.5
            }
        }
    }

    /// Log density of a single observation under state `s`.
    pub fn log_density(&self, s: usize, x_symbol: Option<usize>, x_real: Option<f64>) -> f64 {
        match (&self.emission, x_symbol, x_real) {
            (EmissionFamily::Categorical { probs }, Some(x), _) => probs[s][x].ln(),
            (EmissionFamily::Gaussian { means, stds }, _, Some(x)) => {
                gaussian_log_density(x, means[s], stds[s])
            }
            _ => f64::NEG_INFINITY,
        }
    }

    /// Per-position log emission densities for a whole sequence.
    ///
    /// Errors on an empty sequence, on a type mismatch with the emission
    /// family, and on categorical symbols outside the alphabet.
    pub fn log_emission_matrix(&self, x: &ObsSeq) -> Result<LogEmissions> {
        if x.is_empty() {
            return Err(Error::EmptySequence);
        }
        let n = x.len();
        let states = self.states;
        let mut data = vec![0.0; n * states];
        match (&self.emission, x) {
            (EmissionFamily::Categorical { probs }, ObsSeq::Symbols(xs)) => {
                let alphabet = probs[0].len();
                let log_probs: Vec<Vec<f64>> = probs
                    .iter()
                    .map(|row| row.iter().map(|&p| p.ln()).collect())
                    .collect();
                for (t, &sym) in xs.iter().enumerate() {
                    if sym >= alphabet {
                        return Err(Error::SymbolOutOfRange { position: t, symbol: sym, alphabet });
                    }
                    for s in 0..states {
                        data[t * states + s] = log_probs[s][sym];
                    }
                }
            }
            (EmissionFamily::Gaussian { means, stds }, ObsSeq::Reals(xs)) => {
                for (t, &v) in xs.iter().enumerate() {
                    for s in 0..states {
                        data[t * states + s] = gaussian_log_density(v, means[s], stds[s]);
                    }
                }
            }
            (EmissionFamily::Categorical { .. }, ObsSeq::Reals(_)) => {
                return Err(Error::ObservationType { expected: "symbols" });
            }
            (EmissionFamily::Gaussian { .. }, ObsSeq::Symbols(_)) => {
                return Err(Error::ObservationType { expected: "reals" });
            }
        }
        Ok(LogEmissions { data, n, states })
    }

    /// Draw `(x, y)` of length `n`.
    ///
    /// Bit-reproducible: the generator is ChaCha8 seeded with `seed`
    /// (stream 0), consuming one uniform draw per hidden step and one draw
    /// (categorical) or one normal variate (Gaussian) per observation, in
    /// that order.
    pub fn sample(&self, n: usize, seed: u64) -> Result<LabeledSample> {
        self.sample_stream(n, seed, 0)
    }

    /// Like [`HmmModel::sample`] but on an independent ChaCha8 stream, so
    /// replicates `(seed, 0), (seed, 1), ...` never overlap.
    pub fn sample_stream(&self, n: usize, seed: u64, stream: u64) -> Result<LabeledSample> {
        if n == 0 {
            return Err(Error::BadConfig { reason: "sample length n must be >= 1".into() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut y = Vec::with_capacity(n);
        let mut state = draw_categorical(&mut rng, &self.initial);
        match &self.emission {
            EmissionFamily::Categorical { probs } => {
                let mut xs = Vec::with_capacity(n);
                xs.push(draw_categorical(&mut rng, &probs[state]));
                y.push(state);
                for _ in 1..n {
                    state = draw_categorical(&mut rng, &self.transition[state]);
                    xs.push(draw_categorical(&mut rng, &probs[state]));
                    y.push(state);
                }
                Ok(LabeledSample { x: ObsSeq::Symbols(xs), y, seed })
            }
            EmissionFamily::Gaussian { means, stds } => {
                let normals: Vec<Normal<f64>> = means
                    .iter()
                    .zip(stds)
                    .map(|(&m, &s)| Normal::new(m, s).expect("validated std > 0"))
                    .collect();
                let mut xs = Vec::with_capacity(n);
                xs.push(normals[state].sample(&mut rng));
                y.push(state);
                for _ in 1..n {
                    state = draw_categorical(&mut rng, &self.transition[state]);
                    xs.push(normals[state].sample(&mut rng));
                    y.push(state);
                }
                Ok(LabeledSample { x: ObsSeq::Reals(xs), y, seed })
            }
        }
    }
}

#[inline]
fn gaussian_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * std::f64::consts::TAU.ln()
}

/// Inverse-CDF draw from a finite distribution; never yields a zero-mass
/// index. `probs` must sum to one.
fn draw_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
        }
        cum += p;
        if u < cum {
            return j;
        }
    }
    // Round-off pushed the cumulative sum below 1; fall back to the last
    // positive-mass index.
    last_positive
}

/// Stationary law of a row-stochastic matrix via a direct linear solve of
/// `pi P = pi`, `sum pi = 1`. `None` when the system is singular (reducible
/// chains may have no unique stationary law).
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = transition.len();
    // Rows: (P^T - I) pi = 0 with the last row replaced by the normalization.
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = transition[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let solution = a.lu().solve(&b)?;
    let mut pi: Vec<f64> = solution.iter().copied().collect();
    let total: f64 = pi.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return None;
    }
    for p in &mut pi {
        *p /= total;
    }
    Some(pi)
}

/// `-sum_i pi_i sum_j P(i,j) ln P(i,j)` with the `0 ln 0 = 0` convention.
pub fn entropy_rate(transition: &[Vec<f64>], pi: &[f64]) -> f64 {
    let mut h = 0.0;
    for (i, row) in transition.iter().enumerate() {
        for &p in row {
            if p > 0.0 {
                h -= pi[i] * p * p.ln();
            }
        }
    }
    h
}

fn validate_spec(spec: &ModelSpec) -> Vec<ModelViolation> {
    let mut v = Vec::new();
    let n = spec.states;
    if n < 2 {
        v.push(ModelViolation::TooFewStates { states: n });
    }

    let mut transition_shape_ok = spec.transition.len() == n;
    if spec.transition.len() != n {
        v.push(ModelViolation::Dimension {
            what: "transition",
            expected: n,
            got: spec.transition.len(),
        });
    }
    for (i, row) in spec.transition.iter().enumerate() {
        if row.len() != n {
            transition_shape_ok = false;
            v.push(ModelViolation::Dimension { what: "transition row", expected: n, got: row.len() });
            continue;
        }
        check_prob_row("transition", i, row, &mut v);
    }

    match &spec.initial {
        InitialSpec::Tag(tag) => {
            if tag != "stationary" {
                v.push(ModelViolation::UnknownInitialTag { tag: tag.clone() });
            }
        }
        InitialSpec::Explicit(pi) => {
            if pi.len() != n {
                v.push(ModelViolation::Dimension { what: "initial", expected: n, got: pi.len() });
            } else {
                check_prob_row("initial", 0, pi, &mut v);
            }
        }
    }

    match &spec.emission {
        EmissionSpec::Categorical { probs } => {
            if probs.len() != n {
                v.push(ModelViolation::Dimension { what: "emission probs", expected: n, got: probs.len() });
            } else {
                let alphabet = probs[0].len();
                for (s, row) in probs.iter().enumerate() {
                    if row.is_empty() {
                        v.push(ModelViolation::EmptyAlphabet { state: s });
                        continue;
                    }
                    if row.len() != alphabet {
                        v.push(ModelViolation::Dimension { what: "emission row", expected: alphabet, got: row.len() });
                        continue;
                    }
                    check_prob_row("emission", s, row, &mut v);
                }
            }
        }
        EmissionSpec::Gaussian { means, stds } => {
            if means.len() != n {
                v.push(ModelViolation::Dimension { what: "means", expected: n, got: means.len() });
            }
            if stds.len() != n {
                v.push(ModelViolation::Dimension { what: "stds", expected: n, got: stds.len() });
            }
            for (s, &m) in means.iter().enumerate() {
                if !m.is_finite() {
                    v.push(ModelViolation::Negative { what: "means", row: s, col: 0, value: m });
                }
            }
            for (s, &sd) in stds.iter().enumerate() {
                if !sd.is_finite() || sd <= 0.0 {
                    v.push(ModelViolation::NonPositiveStd { state: s, value: sd });
                }
            }
        }
    }

    // Connectivity checks need a well-formed matrix.
    if transition_shape_ok && n >= 2 {
        let adjacency: Vec<Vec<bool>> = spec
            .transition
            .iter()
            .map(|row| row.iter().map(|&p| p > 0.0).collect())
            .collect();
        if !is_strongly_connected(&adjacency) {
            v.push(ModelViolation::Reducible);
        } else {
            let p = chain_period(&adjacency);
            if p != 1 {
                v.push(ModelViolation::Periodic { period: p });
            }
        }
    }
    v
}

fn check_prob_row(what: &'static str, row_idx: usize, row: &[f64], v: &mut Vec<ModelViolation>) {
    let mut sum = 0.0;
    let mut entry_bad = false;
    for (j, &p) in row.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            v.push(ModelViolation::Negative { what, row: row_idx, col: j, value: p });
            entry_bad = true;
        }
        sum += p;
    }
    if !entry_bad && (sum - 1.0).abs() > ROW_SUM_TOL {
        v.push(ModelViolation::RowSum { what, row: row_idx, sum });
    }
}

fn is_strongly_connected(adjacency: &[Vec<bool>]) -> bool {
    let n = adjacency.len();
    let forward = reachable(adjacency, 0, false);
    let backward = reachable(adjacency, 0, true);
    (0..n).all(|i| forward[i] && backward[i])
}

fn reachable(adjacency: &[Vec<bool>], start: usize, transpose: bool) -> Vec<bool> {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(u) = stack.pop() {
        for w in 0..n {
            let edge = if transpose { adjacency[w][u] } else { adjacency[u][w] };
            if edge && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// Period of an irreducible chain: gcd of `level(u) + 1 - level(v)` over all
/// edges `(u, v)`, with levels from a breadth-first search.
fn chain_period(adjacency: &[Vec<bool>]) -> usize {
    let n = adjacency.len();
    let mut level = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    level[0] = 0;
    queue.push_back(0);
    let mut g: i64 = 0;
    while let Some(u) = queue.pop_front() {
        for w in 0..n {
            if !adjacency[u][w] {
                continue;
            }
            if level[w] == usize::MAX {
                level[w] = level[u] + 1;
                queue.push_back(w);
            } else {
                let d = level[u] as i64 + 1 - level[w] as i64;
                g = gcd(g, d.abs());
            }
        }
    }
    // Some edges were discovered before their endpoint had a level; one more
    // sweep over all edges closes the gcd.
    for u in 0..n {
        for w in 0..n {
            if adjacency[u][w] {
                let d = level[u] as i64 + 1 - level[w] as i64;
                g = gcd(g, d.abs());
            }
        }
    }
    g.max(1) as usize
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest `r` with `M^r` entrywise positive, or `None` if no such power
/// exists below the primitivity bound `(k-1)^2 + 1`.
pub(crate) fn primitive_index(matrix: &[Vec<f64>]) -> Option<usize> {
    let k = matrix.len();
    let base: Vec<Vec<bool>> = matrix
        .iter()
        .map(|row| row.iter().map(|&p| p > 0.0).collect())
        .collect();
    let bound = (k - 1) * (k - 1) + 1;
    let mut power = base.clone();
    for r in 1..=bound {
        if power.iter().all(|row| row.iter().all(|&b| b)) {
            return Some(r);
        }
        power = bool_matmul(&power, &base);
    }
    None
}

fn bool_matmul(a: &[Vec<bool>], b: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let k = a.len();
    let mut out = vec![vec![false; k]; k];
    for i in 0..k {
        for l in 0..k {
            if a[i][l] {
                for j in 0..k {
                    if b[l][j] {
                        out[i][j] = true;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    #[test]
    fn two_state_demo_resolves_stationary_initial() {
        let model = presets::sticky_two_state();
        let pi = model.initial();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-12);
        // Residual of the defining equations.
        for j in 0..2 {
            let lhs: f64 = (0..2).map(|i| pi[i] * model.transition_prob(i, j)).sum();
            assert!((lhs - pi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_transition_is_rejected_as_reducible() {
        let spec = ModelSpec {
            states: 2,
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            initial: InitialSpec::Explicit(vec![0.5, 0.5]),
            emission: EmissionSpec::Categorical { probs: vec![vec![0.8, 0.2], vec![0.3, 0.7]] },
        };
        let err = HmmModel::from_spec(spec).unwrap_err();
        match err {
            Error::InvalidModel(v) => assert!(v.contains(&ModelViolation::Reducible)),
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_cycle_is_rejected_as_periodic() {
        let spec = ModelSpec {
            states: 2,
            transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            initial: InitialSpec::Explicit(vec![0.5, 0.5]),
            emission: EmissionSpec::Categorical { probs: vec![vec![0.8, 0.2], vec![0.3, 0.7]] },
        };
        let err = HmmModel::from_spec(spec).unwrap_err();
        match err {
            Error::InvalidModel(v) => assert!(v.contains(&ModelViolation::Periodic { period: 2 })),
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn bad_rows_are_reported_with_indices() {
        let spec = ModelSpec {
            states: 2,
            transition: vec![vec![0.9, 0.2], vec![0.2, 0.8]],
            initial: InitialSpec::Explicit(vec![0.7, 0.4]),
            emission: EmissionSpec::Categorical { probs: vec![vec![0.8, 0.2], vec![-0.3, 1.3]] },
        };
        let err = HmmModel::from_spec(spec).unwrap_err();
        let Error::InvalidModel(v) = err else { panic!() };
        assert!(v.iter().any(|x| matches!(x, ModelViolation::RowSum { what: "transition", row: 0, .. })));
        assert!(v.iter().any(|x| matches!(x, ModelViolation::RowSum { what: "initial", .. })));
        assert!(v.iter().any(|x| matches!(x, ModelViolation::Negative { what: "emission", row: 1, col: 0, .. })));
    }

    #[test]
    fn gaussian_needs_positive_std() {
        let spec = ModelSpec {
            states: 2,
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            initial: InitialSpec::Tag("stationary".into()),
            emission: EmissionSpec::Gaussian { means: vec![0.0, 1.0], stds: vec![1.0, 0.0] },
        };
        let err = HmmModel::from_spec(spec).unwrap_err();
        let Error::InvalidModel(v) = err else { panic!() };
        assert!(v.contains(&ModelViolation::NonPositiveStd { state: 1, value: 0.0 }));
    }

    #[test]
    fn unknown_initial_tag_is_rejected() {
        let json = r#"{"states":2,"transition":[[0.9,0.1],[0.2,0.8]],
            "initial":"uniform",
            "emission":{"type":"categorical","probs":[[0.8,0.2],[0.3,0.7]]}}"#;
        let err = HmmModel::from_json(json).unwrap_err();
        let Error::InvalidModel(v) = err else { panic!() };
        assert!(v.contains(&ModelViolation::UnknownInitialTag { tag: "uniform".into() }));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let model = presets::sticky_two_state();
        let json = serde_json::to_string(&model.to_spec()).unwrap();
        let back = HmmModel::from_json(&json).unwrap();
        assert_eq!(back.to_spec(), model.to_spec());
        assert_eq!(back.initial(), model.initial());
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let model = presets::sticky_two_state();
        let a = model.sample(1000, 42).unwrap();
        let b = model.sample(1000, 42).unwrap();
        assert_eq!(a, b);
        let c = model.sample(1000, 43).unwrap();
        assert_ne!(a, c);
        // Stream separation: same seed, different stream, different draws.
        let d = model.sample_stream(1000, 42, 1).unwrap();
        assert_ne!(a, d);
        // Prefix consistency: a longer run starts with the shorter one.
        let long = model.sample(2000, 42).unwrap();
        let ObsSeq::Symbols(xa) = &a.x else { panic!() };
        let ObsSeq::Symbols(xl) = &long.x else { panic!() };
        assert_eq!(&xl[..1000], &xa[..]);
        assert_eq!(&long.y[..1000], &a.y[..]);
    }

    #[test]
    fn identity_emissions_reproduce_the_hidden_path() {
        let model = presets::identity_two_state();
        let sample = model.sample(5000, 7).unwrap();
        let ObsSeq::Symbols(xs) = &sample.x else { panic!() };
        assert_eq!(xs, &sample.y);
    }

    #[test]
    fn long_run_state_frequencies_match_the_stationary_law() {
        let model = presets::sticky_two_state();
        let sample = model.sample(1_000_000, 1).unwrap();
        let freq0 = sample.y.iter().filter(|&&s| s == 0).count() as f64 / 1e6;
        assert!((freq0 - 2.0 / 3.0).abs() < 0.01, "freq0 = {freq0}");
    }

    #[test]
    fn emission_frequencies_match_the_tables() {
        let model = presets::sticky_two_state();
        let sample = model.sample(100_000, 3).unwrap();
        let ObsSeq::Symbols(xs) = &sample.x else { panic!() };
        for s in 0..2 {
            let total = sample.y.iter().filter(|&&y| y == s).count();
            for sym in 0..2 {
                let hits = sample
                    .y
                    .iter()
                    .zip(xs)
                    .filter(|&(&y, &x)| y == s && x == sym)
                    .count();
                let expected = match model.emission() {
                    EmissionFamily::Categorical { probs } => probs[s][sym],
                    _ => unreachable!(),
                };
                let freq = hits as f64 / total as f64;
                assert!((freq - expected).abs() < 0.02, "state {s} symbol {sym}: {freq} vs {expected}");
            }
        }
    }

    #[test]
    fn entropy_rate_values() {
        let model = presets::sticky_two_state();
        assert!((model.markov_entropy_rate() - 0.38352).abs() < 1e-4);
        // Deterministic cycle: zero entropy (evaluated on the raw matrix;
        // the matrix itself is rejected as a model).
        let cycle = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(entropy_rate(&cycle, &[0.5, 0.5]), 0.0);
        let uniform = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let h = entropy_rate(&uniform, &stationary_distribution(&uniform).unwrap());
        assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn entropy_rate_bounds_hold() {
        let model = presets::sticky_two_state();
        let h = model.markov_entropy_rate();
        assert!(h >= 0.0 && h <= (model.num_states() as f64).ln());
    }

    #[test]
    fn expected_log_emission_values() {
        let model = presets::sticky_two_state();
        assert!((model.expected_log_emission(0) - (-0.5004)).abs() < 1e-4);
        assert!((model.expected_log_emission(1) - (-0.6109)).abs() < 1e-4);
        let spec = ModelSpec {
            states: 2,
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            initial: InitialSpec::Tag("stationary".into()),
            emission: EmissionSpec::Gaussian { means: vec![0.0, 1.0], stds: vec![1.0, 1.0] },
        };
        let g = HmmModel::from_spec(spec).unwrap();
        assert!((g.expected_log_emission(0) - (-1.4189)).abs() < 1e-4);
    }

    #[test]
    fn identity_model_stationary_is_exact() {
        let uniform = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let pi = stationary_distribution(&uniform).unwrap();
        assert_eq!(pi, vec![0.5, 0.5]);
    }

    #[test]
    fn log_emission_matrix_rejects_mismatches() {
        let model = presets::sticky_two_state();
        assert!(matches!(
            model.log_emission_matrix(&ObsSeq::Reals(vec![0.5])),
            Err(Error::ObservationType { .. })
        ));
        assert!(matches!(
            model.log_emission_matrix(&ObsSeq::Symbols(vec![0, 5])),
            Err(Error::SymbolOutOfRange { position: 1, symbol: 5, .. })
        ));
        assert!(matches!(
            model.log_emission_matrix(&ObsSeq::Symbols(vec![])),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn loss_matrix_validates() {
        let sym = LossMatrix::symmetric(3);
        assert_eq!(sym.get(0, 0), 0.0);
        assert_eq!(sym.get(0, 2), 1.0);
        assert!(LossMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.5]]).is_err());
        assert!(LossMatrix::new(vec![vec![0.0, -1.0], vec![1.0, 0.0]]).is_err());
        assert!(LossMatrix::new(vec![vec![0.0, 2.0], vec![1.0, 0.0]]).is_ok());
    }

    fn arbitrary_chain(states: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(
            proptest::collection::vec(0.05f64..1.0, states),
            states,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .map(|row| {
                    let total: f64 = row.iter().sum();
                    row.into_iter().map(|v| v / total).collect()
                })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn stationary_solves_the_balance_equations(transition in (2usize..=5).prop_flat_map(arbitrary_chain)) {
            let pi = stationary_distribution(&transition).unwrap();
            let n = transition.len();
            prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..n {
                let lhs: f64 = (0..n).map(|i| pi[i] * transition[i][j]).sum();
                prop_assert!((lhs - pi[j]).abs() < 1e-12);
            }
        }
    }
}
