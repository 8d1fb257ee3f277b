//! Monte Carlo estimation of the long-run risk constants.
//!
//! One simulation pass per replicate: sample a labeled sequence, decode and
//! smooth every checkpoint prefix, and reduce to per-checkpoint trace rows
//! plus replicate-level estimates. Everything is a deterministic function of
//! (model, config): replicate `j` draws from RNG stream `(seed, j)` and
//! aggregation is ordered by replicate index, so results are independent of
//! thread scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{compute_log_joint, viterbi_states_len};
use crate::error::{Error, Result};
use crate::inference::{forward_backward, forward_backward_len};
use crate::model::{EmissionFamily, HmmModel, LossMatrix, ObsSeq};
use crate::regeneration::{detect_cluster, fixation_from, stopping_times, ClusterOutcome};

/// Parameters of one simulation study.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model_id: String,
    /// Full sequence length; the last checkpoint.
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Prefix lengths at which risks are recorded; strictly increasing,
    /// ending at `n`.
    pub checkpoints: Vec<usize>,
    /// Suffix pad for prefix-fixation probing.
    pub m_pad: usize,
    /// Spacing of the fixation probe grid.
    pub probe_step: usize,
    pub loss: LossMatrix,
    /// Override for the stationarity burn-in; `None` derives it from the
    /// fixation structure as `max(100, 2 * mean cycle)`.
    pub burn_in: Option<usize>,
}

impl SimConfig {
    /// Defaults: five roughly geometric checkpoints, probe grid of about 64
    /// probes, pad 50.
    pub fn new(
        model_id: impl Into<String>,
        n: usize,
        reps: usize,
        seed: u64,
        loss: LossMatrix,
    ) -> Result<Self> {
        let cfg = Self {
            model_id: model_id.into(),
            n,
            reps,
            seed,
            checkpoints: default_checkpoints(n),
            m_pad: 50,
            probe_step: (n / 64).max(1),
            loss,
            burn_in: None,
        };
        cfg.check_shape()?;
        Ok(cfg)
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<usize>) -> Result<Self> {
        self.checkpoints = checkpoints;
        self.check_shape()?;
        Ok(self)
    }

    pub fn with_probing(mut self, m_pad: usize, probe_step: usize) -> Result<Self> {
        self.m_pad = m_pad;
        self.probe_step = probe_step;
        self.check_shape()?;
        Ok(self)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = Some(burn_in);
        self
    }

    pub(crate) fn probe_grid(&self) -> Vec<usize> {
        let mut grid: Vec<usize> = (1..)
            .map(|i| i * self.probe_step)
            .take_while(|&len| len <= self.n)
            .collect();
        if grid.last() != Some(&self.n) {
            grid.push(self.n);
        }
        grid
    }

    fn check_shape(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::BadConfig { reason });
        if self.n < 200 {
            return fail(format!("n = {} is too short; need n >= 200", self.n));
        }
        if self.reps == 0 {
            return fail("reps must be >= 1".into());
        }
        if self.checkpoints.is_empty()
            || self.checkpoints.windows(2).any(|w| w[0] >= w[1])
            || *self.checkpoints.last().unwrap() != self.n
            || self.checkpoints[0] < 2
        {
            return fail(format!(
                "checkpoints {:?} must be strictly increasing, start at >= 2, and end at n = {}",
                self.checkpoints, self.n
            ));
        }
        if self.probe_step == 0 {
            return fail("probe_step must be >= 1".into());
        }
        let grid = self.probe_grid();
        if grid.len() < 3 || grid[grid.len() - 3] < self.m_pad + 1 {
            return Err(Error::GridTooSparse { probes: grid.len(), m_pad: self.m_pad });
        }
        if let Some(b) = self.burn_in {
            if b < 1 || b > self.n / 2 {
                return fail(format!("burn_in = {b} must lie in [1, n/2]"));
            }
        }
        Ok(())
    }
}

fn default_checkpoints(n: usize) -> Vec<usize> {
    let mut cp: Vec<usize> = [n / 100, n / 10, n / 4, n / 2, n]
        .into_iter()
        .filter(|&m| m >= 10)
        .collect();
    cp.sort_unstable();
    cp.dedup();
    cp
}

/// One checkpoint of one replicate. Risk fields may be `+inf` (never NaN);
/// an infinite entry marks the replicate for exclusion from the report
/// aggregates. `burn_in` is the resolved exclusion window for this prefix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub replicate: usize,
    pub empirical_r1: f64,
    pub conditional_r1: f64,
    pub rbar1_viterbi: f64,
    pub rbar1_pmap: f64,
    pub rbar_inf_direct: f64,
    pub rbar_inf_decomposed: f64,
    pub emission_term: f64,
    pub transition_term: f64,
    /// Windowed conditional entropy estimate of the observation process
    /// (nonnegative).
    pub hx_term: f64,
    pub burn_in: usize,
}

/// All trace rows of a study, sorted by (checkpoint, replicate).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTrace {
    pub model_id: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

/// Mean and replicate-level standard error of one estimate.
///
/// Standard errors come from the variance across replicates, not across
/// positions within a sequence (within-sequence terms are dependent). When
/// `replicates_used == 0` both fields are zero and only the exclusion count
/// in the report tells the story.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub mean: f64,
    pub std_error: f64,
    pub replicates_used: usize,
}

fn summarize(values: &[f64]) -> EstimateSummary {
    let k = values.len();
    if k == 0 {
        return EstimateSummary { mean: 0.0, std_error: 0.0, replicates_used: 0 };
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let std_error = if k >= 2 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    EstimateSummary { mean, std_error, replicates_used: k }
}

/// Empirical law of the observations aligned to one decoded state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QsTable {
    /// Per-symbol frequencies; sums to one unless the state was never
    /// visited (then all zero).
    Symbols(Vec<f64>),
    /// Moment summary for real observations.
    Moments { count: u64, mean: f64, std: f64 },
}

/// Long-run risk estimates of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRiskReport {
    pub model_id: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Pointwise risk of the decoded path: long-run average of the
    /// conditional risk at the final checkpoint.
    pub r1_longrun: EstimateSummary,
    /// The same constant through the renewal-reward ratio over fixation
    /// cycles (truth-referenced loss per cycle step).
    pub r1_renewal: EstimateSummary,
    /// Mean negative log posterior along the decoded path.
    pub rbar1: EstimateSummary,
    /// The same along the pointwise-argmax path (its per-sequence minimum).
    pub rbar1_star: EstimateSummary,
    /// Log-joint risk, directly and through the windowed decomposition.
    pub rbar_inf_direct: EstimateSummary,
    pub rbar_inf_decomposed: EstimateSummary,
    /// Conditional entropy rate of the hidden chain given the observations;
    /// an upper bound for the log-joint risk.
    pub rbar_y_inf: EstimateSummary,
    /// Decoded-state occupancy over the stationarity window; sums to one.
    pub m_s: Vec<f64>,
    pub q_s_tables: Vec<QsTable>,
    /// Mean gap between fixation points, averaged over replicates that had
    /// at least two.
    pub mean_cycle: Option<f64>,
    /// Average resolved burn-in at full length.
    pub burn_in_mean: f64,
    /// Replicates dropped from the aggregates because some risk was `+inf`.
    pub excluded_replicates: usize,
    /// Checkpoint rows where the pointwise-argmax path failed to minimize
    /// the mean negative log posterior (expected 0; recorded, not asserted).
    pub order_violations: usize,
}

enum QsCounts {
    Sym(Vec<Vec<u64>>),
    Real(Vec<(u64, f64, f64)>),
}

struct Replicate {
    rows: Vec<TraceRow>,
    r1_renewal: Option<f64>,
    rbar_y_inf: f64,
    mean_cycle: Option<f64>,
    burn_in_full: usize,
    state_counts: Vec<u64>,
    qs: QsCounts,
    any_infinite: bool,
    order_violations: usize,
}

fn resolve_burn_in(cfg: &SimConfig, mean_cycle: Option<f64>, len: usize) -> usize {
    let base = match cfg.burn_in {
        Some(b) => b,
        None => {
            let from_cycles = mean_cycle.map_or(0, |c| (2.0 * c).ceil() as usize);
            from_cycles.max(100)
        }
    };
    base.min(len / 2).max(1)
}

fn run_replicate(model: &HmmModel, cfg: &SimConfig, rep: usize) -> Result<Replicate> {
    let states = model.num_states();
    let sample = model.sample_stream(cfg.n, cfg.seed, rep as u64)?;
    let le = model.log_emission_matrix(&sample.x)?;

    let fixation = fixation_from(model, &le, cfg.m_pad, &cfg.probe_grid())?;
    let burn_in_full = resolve_burn_in(cfg, fixation.mean_cycle, cfg.n);

    let v_full = viterbi_states_len(model, &le, cfg.n);

    // Renewal-reward over the span between the first and last fixation
    // point: truth loss per step.
    let r1_renewal = match (fixation.fixation_points.first(), fixation.fixation_points.last()) {
        (Some(&t1), Some(&tk)) if tk > t1 => {
            let reward: f64 =
                (t1 + 1..=tk).map(|t| cfg.loss.get(sample.y[t], v_full[t])).sum();
            Some(reward / (tk - t1) as f64)
        }
        _ => None,
    };

    let mut rows = Vec::with_capacity(cfg.checkpoints.len());
    let mut any_infinite = false;
    let mut order_violations = 0;
    let mut full_log_likelihood = 0.0;
    for &m in &cfg.checkpoints {
        let post = forward_backward_len(model, &le, m)?;
        let v_m = if m == cfg.n { v_full.clone() } else { viterbi_states_len(model, &le, m) };

        let mut emp = 0.0;
        let mut cond = 0.0;
        let mut neg_log_v = 0.0;
        let mut neg_log_p = 0.0;
        for t in 0..m {
            let s = v_m[t];
            emp += cfg.loss.get(sample.y[t], s);
            let row = post.smoothing_row(t);
            for a in 0..states {
                cond += cfg.loss.get(a, s) * row[a];
            }
            neg_log_v -= row[s].ln();
            let best = row.iter().copied().fold(0.0f64, f64::max);
            neg_log_p -= best.ln();
        }
        let mf = m as f64;
        let empirical_r1 = emp / mf;
        let conditional_r1 = cond / mf;
        let rbar1_viterbi = neg_log_v / mf;
        let rbar1_pmap = neg_log_p / mf;
        if rbar1_pmap > rbar1_viterbi {
            order_violations += 1;
        }
        if !rbar1_viterbi.is_finite() || !rbar1_pmap.is_finite() {
            any_infinite = true;
        }

        let log_joint = compute_log_joint(model, &le, &v_m);
        assert!(
            log_joint > f64::NEG_INFINITY,
            "decoded path of positive posterior probability has zero joint density"
        );
        let log_likelihood = post.log_likelihood();
        let rbar_inf_direct = (log_likelihood - log_joint) / mf;

        let b = burn_in_full.min(m / 2).max(1);
        let window = (m - b) as f64;
        let mut em_sum = 0.0;
        let mut tr_sum = 0.0;
        for t in b..m {
            em_sum += le.row(t)[v_m[t]];
            tr_sum += model.log_transition(v_m[t - 1], v_m[t]);
        }
        let emission_term = em_sum / window;
        let transition_term = tr_sum / window;
        let hx_term = -(log_likelihood - post.prefix_log_likelihood(b)) / window;
        let rbar_inf_decomposed = -(emission_term + transition_term + hx_term);

        if m == cfg.n {
            full_log_likelihood = log_likelihood;
        }
        rows.push(TraceRow {
            n: m,
            replicate: rep,
            empirical_r1,
            conditional_r1,
            rbar1_viterbi,
            rbar1_pmap,
            rbar_inf_direct,
            rbar_inf_decomposed,
            emission_term,
            transition_term,
            hx_term,
            burn_in: b,
        });
    }

    // Conditional entropy rate of the chain given the observations, from the
    // closed-form chain terms and the likelihood of this sequence.
    let pi = model.stationary_distribution();
    let mean_log_emission: f64 =
        (0..states).map(|s| pi[s] * model.expected_log_emission(s)).sum();
    let hx_full = -full_log_likelihood / cfg.n as f64;
    let rbar_y_inf = -(mean_log_emission - model.markov_entropy_rate() + hx_full);

    // Occupancy and aligned-observation law over the stationarity window.
    let mut state_counts = vec![0u64; states];
    for &s in &v_full[burn_in_full..] {
        state_counts[s] += 1;
    }
    let qs = match (model.emission(), &sample.x) {
        (EmissionFamily::Categorical { probs }, ObsSeq::Symbols(xs)) => {
            let mut tables = vec![vec![0u64; probs[0].len()]; states];
            for t in burn_in_full..cfg.n {
                tables[v_full[t]][xs[t]] += 1;
            }
            QsCounts::Sym(tables)
        }
        (EmissionFamily::Gaussian { .. }, ObsSeq::Reals(xs)) => {
            let mut acc = vec![(0u64, 0.0, 0.0); states];
            for t in burn_in_full..cfg.n {
                let slot = &mut acc[v_full[t]];
                slot.0 += 1;
                slot.1 += xs[t];
                slot.2 += xs[t] * xs[t];
            }
            QsCounts::Real(acc)
        }
        _ => unreachable!("sequence type was validated against the emission family"),
    };

    Ok(Replicate {
        rows,
        r1_renewal,
        rbar_y_inf,
        mean_cycle: fixation.mean_cycle,
        burn_in_full,
        state_counts,
        qs,
        any_infinite,
        order_violations,
    })
}

/// Run the whole study: `reps` independent replicates of length `n`, traced
/// at every checkpoint, reduced to an [`AsymptoticRiskReport`].
pub fn simulate(
    model: &HmmModel,
    cfg: &SimConfig,
) -> Result<(SimulationTrace, AsymptoticRiskReport)> {
    cfg.check_shape()?;
    if cfg.loss.dim() != model.num_states() {
        return Err(Error::LengthMismatch {
            what: "loss matrix",
            expected: model.num_states(),
            got: cfg.loss.dim(),
        });
    }

    let outcomes: Vec<Result<Replicate>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(model, cfg, rep))
        .collect();
    let mut replicates = Vec::with_capacity(cfg.reps);
    for outcome in outcomes {
        replicates.push(outcome?);
    }

    let mut rows: Vec<TraceRow> =
        replicates.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    rows.sort_by(|a, b| (a.n, a.replicate).cmp(&(b.n, b.replicate)));
    let trace = SimulationTrace { model_id: cfg.model_id.clone(), seed: cfg.seed, rows };

    let kept: Vec<&Replicate> = replicates.iter().filter(|r| !r.any_infinite).collect();
    let excluded_replicates = cfg.reps - kept.len();
    let final_row =
        |r: &Replicate| r.rows.last().expect("at least one checkpoint").clone();

    let r1_longrun = summarize(&kept.iter().map(|r| final_row(r).conditional_r1).collect::<Vec<_>>());
    let r1_renewal =
        summarize(&kept.iter().filter_map(|r| r.r1_renewal).collect::<Vec<_>>());
    let rbar1 = summarize(&kept.iter().map(|r| final_row(r).rbar1_viterbi).collect::<Vec<_>>());
    let rbar1_star = summarize(&kept.iter().map(|r| final_row(r).rbar1_pmap).collect::<Vec<_>>());
    let rbar_inf_direct =
        summarize(&kept.iter().map(|r| final_row(r).rbar_inf_direct).collect::<Vec<_>>());
    let rbar_inf_decomposed =
        summarize(&kept.iter().map(|r| final_row(r).rbar_inf_decomposed).collect::<Vec<_>>());
    let rbar_y_inf = summarize(&kept.iter().map(|r| r.rbar_y_inf).collect::<Vec<_>>());

    let states = model.num_states();
    let mut pooled_counts = vec![0u64; states];
    for r in &kept {
        for s in 0..states {
            pooled_counts[s] += r.state_counts[s];
        }
    }
    let total: u64 = pooled_counts.iter().sum();
    let m_s: Vec<f64> = pooled_counts
        .iter()
        .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
        .collect();

    let q_s_tables: Vec<QsTable> = match model.emission() {
        EmissionFamily::Categorical { probs } => {
            let alphabet = probs[0].len();
            let mut pooled = vec![vec![0u64; alphabet]; states];
            for r in &kept {
                if let QsCounts::Sym(tables) = &r.qs {
                    for s in 0..states {
                        for x in 0..alphabet {
                            pooled[s][x] += tables[s][x];
                        }
                    }
                }
            }
            pooled
                .into_iter()
                .map(|row| {
                    let sum: u64 = row.iter().sum();
                    QsTable::Symbols(
                        row.iter()
                            .map(|&c| if sum > 0 { c as f64 / sum as f64 } else { 0.0 })
                            .collect(),
                    )
                })
                .collect()
        }
        EmissionFamily::Gaussian { .. } => {
            let mut pooled = vec![(0u64, 0.0, 0.0); states];
            for r in &kept {
                if let QsCounts::Real(acc) = &r.qs {
                    for s in 0..states {
                        pooled[s].0 += acc[s].0;
                        pooled[s].1 += acc[s].1;
                        pooled[s].2 += acc[s].2;
                    }
                }
            }
            pooled
                .into_iter()
                .map(|(count, sum, sumsq)| {
                    if count == 0 {
                        QsTable::Moments { count: 0, mean: 0.0, std: 0.0 }
                    } else {
                        let mean = sum / count as f64;
                        let var = (sumsq / count as f64 - mean * mean).max(0.0);
                        QsTable::Moments { count, mean, std: var.sqrt() }
                    }
                })
                .collect()
        }
    };

    let cycles: Vec<f64> = kept.iter().filter_map(|r| r.mean_cycle).collect();
    let mean_cycle =
        if cycles.is_empty() { None } else { Some(cycles.iter().sum::<f64>() / cycles.len() as f64) };
    let burn_in_mean = if kept.is_empty() {
        0.0
    } else {
        kept.iter().map(|r| r.burn_in_full as f64).sum::<f64>() / kept.len() as f64
    };
    let order_violations = replicates.iter().map(|r| r.order_violations).sum();

    let report = AsymptoticRiskReport {
        model_id: cfg.model_id.clone(),
        n: cfg.n,
        reps: cfg.reps,
        seed: cfg.seed,
        r1_longrun,
        r1_renewal,
        rbar1,
        rbar1_star,
        rbar_inf_direct,
        rbar_inf_decomposed,
        rbar_y_inf,
        m_s,
        q_s_tables,
        mean_cycle,
        burn_in_mean,
        excluded_replicates,
        order_violations,
    };
    Ok((trace, report))
}

fn require_long(n: usize) -> Result<()> {
    if n < 1000 {
        return Err(Error::BadConfig {
            reason: format!("asymptotic estimation needs n >= 1000, got {n}"),
        });
    }
    Ok(())
}

/// Pointwise-risk study: long-run and renewal-reward estimates with the full
/// trace. See [`AsymptoticRiskReport::r1_longrun`] / `r1_renewal`.
pub fn estimate_r1(
    model: &HmmModel,
    n: usize,
    reps: usize,
    seed: u64,
    loss: LossMatrix,
) -> Result<(SimulationTrace, AsymptoticRiskReport)> {
    require_long(n)?;
    let cfg = SimConfig::new("model", n, reps, seed, loss)?;
    simulate(model, &cfg)
}

/// Log-posterior risk study; certifies `rbar1` and `rbar1_star` and their
/// per-sequence order.
pub fn estimate_rbar1(
    model: &HmmModel,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<(SimulationTrace, AsymptoticRiskReport)> {
    require_long(n)?;
    let loss = LossMatrix::symmetric(model.num_states());
    let cfg = SimConfig::new("model", n, reps, seed, loss)?;
    simulate(model, &cfg)
}

/// Log-joint risk study; certifies the direct estimate and its windowed
/// decomposition (`rbar_inf_direct` / `rbar_inf_decomposed`).
pub fn estimate_rbar_inf(
    model: &HmmModel,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<(SimulationTrace, AsymptoticRiskReport)> {
    require_long(n)?;
    let loss = LossMatrix::symmetric(model.num_states());
    let cfg = SimConfig::new("model", n, reps, seed, loss)?;
    simulate(model, &cfg)
}

/// Conditional entropy rate of the hidden chain given the observations, from
/// one sampled sequence: chain entropy rate and expected log emissions in
/// closed form, observation entropy rate from the sequence likelihood.
pub fn estimate_rbar_y_inf(model: &HmmModel, n: usize, seed: u64) -> Result<f64> {
    require_long(n)?;
    let sample = model.sample(n, seed)?;
    let post = forward_backward(model, &sample.x)?;
    let pi = model.stationary_distribution();
    let mean_log_emission: f64 = (0..model.num_states())
        .map(|s| pi[s] * model.expected_log_emission(s))
        .sum();
    let hx = -post.log_likelihood() / n as f64;
    Ok(-(mean_log_emission - model.markov_entropy_rate() + hx))
}

/// Worst observed ratio of `-ln p_t(v_t | x)` to the barrier window width
/// `W_t - U_t` around `t`, over interior positions where both stopping times
/// exist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorStats {
    pub n: usize,
    /// Positions contributing a ratio.
    pub pairs: usize,
    /// `None` when no position had both stopping times.
    pub rho_hat: Option<f64>,
    pub max_neg_log_marginal: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Sample one sequence and relate the posterior floor along the decoded path
/// to the barrier structure around each position.
pub fn posterior_floor_stats(model: &HmmModel, n: usize, seed: u64) -> Result<FloorStats> {
    if n < 10 {
        return Err(Error::BadConfig { reason: format!("n = {n} is too short") });
    }
    let info = match detect_cluster(model, None)? {
        ClusterOutcome::Found(info) => info,
        ClusterOutcome::Failed(failure) => {
            return Err(Error::BadConfig { reason: format!("no cluster: {failure}") });
        }
    };
    let sample = model.sample(n, seed)?;
    let le = model.log_emission_matrix(&sample.x)?;
    let post = forward_backward_len(model, &le, n)?;
    let v = viterbi_states_len(model, &le, n);
    let times = stopping_times(&sample.x, &info);

    let mut pairs = 0usize;
    let mut rho = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for t in 0..n {
        if let (Some(u), Some(w)) = (times.stopping_u[t], times.stopping_w[t]) {
            // 0.0 - ... keeps a certain position at +0.0 rather than -0.0.
            let neg_log = 0.0 - post.marginal(t, v[t]).ln();
            let ratio = neg_log / (w - u) as f64;
            pairs += 1;
            rho = rho.max(ratio);
            worst = worst.max(neg_log);
        }
    }
    Ok(FloorStats {
        n,
        pairs,
        rho_hat: (pairs > 0).then_some(rho),
        max_neg_log_marginal: worst,
        diagnostic: (pairs == 0)
            .then(|| "no interior position has barrier runs on both sides".to_string()),
    })
}
